//! Provenance-mapped retrieval metrics, answer judging, and evaluation
//! reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::extraction::QueryEntityCache;
use crate::kb::KnowledgeBase;
use crate::llm::LlmClient;
use crate::pipeline::{Pipeline, PipelineConfig, RetrievalResult};
use crate::prompts;
use crate::tokens::{TokenLedger, TokenUsage};

pub use crate::corpus::QAItem;

/// Documents reached by a retrieval: the documents of the final chunks plus
/// the source documents of every entity on a final or bridge path.
pub fn provenance_docs(kb: &KnowledgeBase, result: &RetrievalResult) -> Result<BTreeSet<String>> {
    let mut docs = BTreeSet::new();
    for sc in &result.chunks_final {
        let chunk = kb
            .chunk(&sc.chunk_id)
            .ok_or_else(|| Error::UnknownChunk(sc.chunk_id.to_string()))?;
        docs.insert(chunk.doc_id.to_string());
    }
    let entities: BTreeSet<_> = result
        .paths_final
        .iter()
        .map(|sp| &sp.path)
        .chain(&result.bridge_paths)
        .flat_map(|p| p.entity_ids.iter())
        .collect();
    for e in entities {
        docs.extend(kb.source_documents(e)?.into_iter().map(|d| d.to_string()));
    }
    Ok(docs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub hit: bool,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

pub fn retrieval_metrics(d_ret: &BTreeSet<String>, gold: &BTreeSet<String>) -> Result<RetrievalMetrics> {
    if gold.is_empty() {
        return Err(Error::Invalid("gold supporting documents must not be empty".into()));
    }
    let overlap = d_ret.intersection(gold).count() as f64;
    let recall = overlap / gold.len() as f64;
    let precision = if d_ret.is_empty() { 0.0 } else { overlap / d_ret.len() as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(RetrievalMetrics { hit: gold.is_subset(d_ret), recall, precision, f1 })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub is_correct: bool,
    #[serde(default)]
    pub reason: String,
}

/// Reads the JSON object in a judge response. `None` when there is no
/// object or it lacks a boolean `is_correct`.
pub fn parse_verdict(response: &str) -> Option<JudgeVerdict> {
    let start = response.find('{')?;
    let end = response.rfind('}')?;
    if end < start {
        return None;
    }
    let v: serde_json::Value = serde_json::from_str(&response[start..=end]).ok()?;
    let is_correct = v.get("is_correct")?.as_bool()?;
    let reason = v.get("reason").and_then(|r| r.as_str()).unwrap_or("").to_string();
    Some(JudgeVerdict { is_correct, reason })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum JudgeOutcome {
    Verdict(JudgeVerdict),
    /// The judge could not be asked or its output could not be read.
    Abstain { reason: String },
}

pub fn judge_answer(
    judge: &dyn LlmClient,
    ledger: &TokenLedger,
    question: &str,
    generated: &str,
    gold: &str,
    aliases: &[String],
) -> JudgeOutcome {
    let req = prompts::judge_request(question, generated, gold, aliases);
    match judge.complete(&req, ledger) {
        Ok(text) => match parse_verdict(&text) {
            Some(v) => JudgeOutcome::Verdict(v),
            None => JudgeOutcome::Abstain { reason: "unparseable verdict".into() },
        },
        Err(e) => JudgeOutcome::Abstain { reason: format!("judge call failed: {e}") },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub question: String,
    pub d_ret: BTreeSet<String>,
    pub gold_support_docs: BTreeSet<String>,
    pub hit: bool,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judged_correct: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub queries: usize,
    pub hits: usize,
    pub strict_hit_rate: f64,
    pub recall: f64,
    pub precision: f64,
    pub support_f1: f64,
    /// Present when answers were judged.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge_accuracy: Option<f64>,
    pub judged: usize,
    pub judged_correct: usize,
    pub abstentions: usize,
    pub generation_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub config: PipelineConfig,
    pub records: Vec<QueryRecord>,
    pub aggregates: Aggregates,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub pipeline: PipelineConfig,
    pub generate: bool,
    pub exec: Exec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { pipeline: PipelineConfig::default(), generate: false, exec: Exec::default() }
    }
}

/// Providers shared by every query of an evaluation.
pub struct EvalProviders<'a> {
    pub embedder: &'a dyn Embedder,
    pub llm: &'a dyn LlmClient,
    /// Judges generated answers when present.
    pub judge: Option<&'a dyn LlmClient>,
    pub cache: &'a QueryEntityCache,
}

fn eval_item(
    pipeline: &Pipeline,
    judge: Option<&dyn LlmClient>,
    generate: bool,
    item: &QAItem,
) -> Result<QueryRecord> {
    let mut rec = QueryRecord {
        id: item.id.clone(),
        question: item.question.clone(),
        d_ret: BTreeSet::new(),
        gold_support_docs: item.gold_support_docs.clone(),
        hit: false,
        recall: 0.0,
        precision: 0.0,
        f1: 0.0,
        answer: None,
        judged_correct: None,
        judge: None,
        error: None,
    };
    let result = match pipeline.retrieve(&item.question) {
        Ok(r) => r,
        Err(e) => {
            rec.error = Some(format!("retrieval failed: {e}"));
            return Ok(rec);
        }
    };
    rec.d_ret = provenance_docs(pipeline.kb, &result)?;
    let m = retrieval_metrics(&rec.d_ret, &item.gold_support_docs)?;
    rec.hit = m.hit;
    rec.recall = m.recall;
    rec.precision = m.precision;
    rec.f1 = m.f1;
    if !generate {
        return Ok(rec);
    }
    let answer = pipeline
        .consolidate(&result)
        .and_then(|ctx| pipeline.generate(&ctx).map_err(Error::from));
    match answer {
        Ok(a) => {
            if let Some(judge) = judge {
                let outcome =
                    judge_answer(judge, pipeline.ledger, &item.question, &a, &item.answer, &item.aliases);
                if let JudgeOutcome::Verdict(v) = &outcome {
                    rec.judged_correct = Some(v.is_correct);
                }
                rec.judge = Some(outcome);
            }
            rec.answer = Some(a);
        }
        Err(e) => rec.error = Some(format!("generation failed: {e}")),
    }
    Ok(rec)
}

pub fn aggregate(records: &[QueryRecord]) -> Aggregates {
    let n = records.len();
    let mean = |f: &dyn Fn(&QueryRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let hits = records.iter().filter(|r| r.hit).count();
    let judged = records.iter().filter(|r| r.judged_correct.is_some()).count();
    let judged_correct = records.iter().filter(|r| r.judged_correct == Some(true)).count();
    let abstentions = records
        .iter()
        .filter(|r| matches!(r.judge, Some(JudgeOutcome::Abstain { .. })))
        .count();
    let generation_failures = records
        .iter()
        .filter(|r| r.error.as_deref().is_some_and(|e| e.starts_with("generation failed")))
        .count();
    let any_judging = records.iter().any(|r| r.judge.is_some());
    Aggregates {
        queries: n,
        hits,
        strict_hit_rate: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
        recall: mean(&|r| r.recall),
        precision: mean(&|r| r.precision),
        support_f1: mean(&|r| r.f1),
        judge_accuracy: (any_judging && judged > 0).then(|| judged_correct as f64 / judged as f64),
        judged,
        judged_correct,
        abstentions,
        generation_failures,
    }
}

/// Retrieves (and optionally answers and judges) every item. Items run in
/// parallel under `Exec::Parallel`; records keep input order.
pub fn run_eval(
    kb: &KnowledgeBase,
    providers: &EvalProviders,
    items: &[QAItem],
    config: &EvalConfig,
    label: &str,
) -> Result<EvalReport> {
    config.pipeline.validate()?;
    if let Some(bad) = items.iter().find(|i| i.gold_support_docs.is_empty()) {
        return Err(Error::Invalid(format!("item `{}` has no gold supporting documents", bad.id)));
    }
    let ledger = TokenLedger::new();
    let pipeline = Pipeline {
        kb,
        embedder: providers.embedder,
        llm: providers.llm,
        cache: providers.cache,
        ledger: &ledger,
        config: config.pipeline,
    };
    let records = config
        .exec
        .map(items, |item| eval_item(&pipeline, providers.judge, config.generate, item))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        label: label.to_string(),
        config: config.pipeline,
        aggregates: aggregate(&records),
        records,
        usage: ledger.snapshot(),
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Fixed-width results table, one row per report.
pub fn results_table(reports: &[&EvalReport]) -> String {
    let headers = [
        "Method",
        "Strict Hit Rate (%)",
        "Recall (%)",
        "Precision (%)",
        "Support F1 (%)",
        "LLM Judge Acc (%)",
    ];
    let rows: Vec<[String; 6]> = reports
        .iter()
        .map(|r| {
            let a = &r.aggregates;
            [
                r.label.clone(),
                pct(a.strict_hit_rate),
                pct(a.recall),
                pct(a.precision),
                pct(a.support_f1),
                a.judge_accuracy.map(pct).unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    render_table(&headers, &rows)
}

/// Token consumption per report.
pub fn usage_table(reports: &[&EvalReport]) -> String {
    let headers = ["Method", "Embedding", "LLM Prompt", "LLM Completion", "Total"];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            let u = &r.usage;
            [
                r.label.clone(),
                u.embedding_tokens.to_string(),
                u.llm_prompt_tokens.to_string(),
                u.llm_completion_tokens.to_string(),
                u.total.to_string(),
            ]
        })
        .collect();
    render_table(&headers, &rows)
}

fn render_table<const N: usize>(headers: &[&str; N], rows: &[[String; N]]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{:<w$}", c, w = widths[i])
                } else {
                    format!("{:>w$}", c, w = widths[i])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join(" | ").trim_end());
    };
    line(headers.to_vec(), &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("-+-"));
    for row in rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

/// Runs one evaluation per value of `param` and labels each with
/// `param=value`.
pub fn sweep(
    kb: &KnowledgeBase,
    providers: &EvalProviders,
    items: &[QAItem],
    base: &EvalConfig,
    param: &str,
    values: &[f64],
) -> Result<Vec<EvalReport>> {
    values
        .iter()
        .map(|v| {
            let mut cfg = *base;
            cfg.pipeline.set_param(param, *v)?;
            run_eval(kb, providers, items, &cfg, &format!("{param}={v}"))
        })
        .collect()
}

impl PipelineConfig {
    /// Names accepted by [`PipelineConfig::set_param`].
    pub const PARAMS: &'static [&'static str] = &[
        "alpha",
        "epsilon",
        "gamma",
        "lambda_e",
        "lambda_r",
        "k_r",
        "k_o",
        "beam_width",
        "depth",
        "max_neighbors",
        "chunk_top_k",
        "path_top_k",
    ];

    /// Overrides one hyperparameter by name. Counts must be whole numbers.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        let count = || -> Result<usize> {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Invalid(format!("{name} takes a whole number, got {value}")))
            }
        };
        match name.replace('-', "_").as_str() {
            "alpha" => self.synergy.alpha = value,
            "epsilon" => self.synergy.epsilon = value,
            "gamma" => self.synergy.gamma = value,
            "lambda_e" => self.synergy.lambda_e = value,
            "lambda_r" => self.synergy.lambda_r = value,
            "k_r" => self.synergy.k_r = count()?,
            "k_o" => self.synergy.k_o = count()?,
            "beam_width" => self.beam.beam_width = count()?,
            "depth" => self.beam.max_depth = count()?,
            "max_neighbors" => self.beam.max_neighbors = count()?,
            "chunk_top_k" => self.chunk_top_k = count()?,
            "path_top_k" => self.path_top_k = count()?,
            other => {
                return Err(Error::Invalid(format!(
                    "unknown parameter `{other}`; expected one of {}",
                    Self::PARAMS.join(", ")
                )))
            }
        }
        self.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn metric_examples() {
        let m = retrieval_metrics(&set(&["a", "b"]), &set(&["a", "b"])).unwrap();
        assert!(m.hit && m.recall == 1.0 && m.precision == 1.0 && m.f1 == 1.0);
        let m = retrieval_metrics(&set(&["a", "b", "c", "d"]), &set(&["a", "b"])).unwrap();
        assert!(m.hit);
        assert_eq!((m.recall, m.precision), (1.0, 0.5));
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        let m = retrieval_metrics(&set(&["c"]), &set(&["a", "b"])).unwrap();
        assert!(!m.hit && m.recall == 0.0 && m.precision == 0.0 && m.f1 == 0.0);
        assert_eq!(retrieval_metrics(&set(&[]), &set(&["a"])).unwrap().precision, 0.0);
        assert!(retrieval_metrics(&set(&["a"]), &set(&[])).is_err());
    }

    #[test]
    fn verdict_parsing() {
        let v = parse_verdict(r#"{"is_correct": true, "reason": "exact match"}"#).unwrap();
        assert_eq!(v, JudgeVerdict { is_correct: true, reason: "exact match".into() });
        let fenced = "```json\n{\"is_correct\": false, \"reason\": \"wrong\"}\n```";
        assert!(!parse_verdict(fenced).unwrap().is_correct);
        assert!(parse_verdict(r#"{"reason": "no flag"}"#).is_none());
        assert!(parse_verdict(r#"{"is_correct": "yes"}"#).is_none());
        assert!(parse_verdict("nothing").is_none());
    }

    #[test]
    fn set_param_round_trip() {
        let mut c = PipelineConfig::default();
        c.set_param("alpha", 0.7).unwrap();
        c.set_param("beam-width", 3.0).unwrap();
        assert_eq!(c.synergy.alpha, 0.7);
        assert_eq!(c.beam.beam_width, 3);
        assert!(c.set_param("k_o", 1.5).is_err());
        assert!(c.set_param("alpha", 2.0).is_err());
        assert!(c.set_param("nope", 1.0).is_err());
    }

    #[test]
    fn table_has_fixed_columns() {
        let report = EvalReport {
            label: "full".into(),
            config: PipelineConfig::default(),
            records: Vec::new(),
            aggregates: Aggregates { strict_hit_rate: 0.5, judge_accuracy: None, ..Default::default() },
            usage: TokenUsage::default(),
        };
        let t = results_table(&[&report]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Method | Strict Hit Rate (%)"));
        assert!(lines[2].contains("50.00"));
        assert!(lines[2].ends_with('-'));
    }
}
