use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 1200;
pub const DEFAULT_OVERLAP: usize = 100;

/// A window of a document, in character offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkSpan {
    pub ordinal: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// Splits `text` into windows of at most `window` characters that end just
/// after a whitespace character where possible. Consecutive windows overlap
/// by up to `overlap` characters, and every window after the first starts at
/// a word boundary.
pub fn chunk_document(text: &str, window: usize, overlap: usize) -> Result<Vec<ChunkSpan>> {
    if window == 0 || overlap >= window {
        return Err(Error::Invalid(format!(
            "chunk window ({window}) must exceed overlap ({overlap})"
        )));
    }
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut spans = Vec::new();
    if n == 0 {
        return Ok(spans);
    }
    let mut start = 0;
    loop {
        let hard_end = (start + window).min(n);
        let end = if hard_end == n {
            n
        } else {
            (start + 1..=hard_end)
                .rev()
                .find(|&e| chars[e - 1].is_whitespace())
                .unwrap_or(hard_end)
        };
        spans.push(ChunkSpan {
            ordinal: spans.len(),
            start,
            end,
            text: chars[start..end].iter().collect(),
        });
        if end == n {
            break;
        }
        let lo = end.saturating_sub(overlap).max(start + 1);
        start = (lo..=end)
            .find(|&s| chars[s - 1].is_whitespace())
            .unwrap_or(end);
    }
    Ok(spans)
}

/// Rebuilds the source text from overlapping spans.
pub fn reassemble(spans: &[ChunkSpan]) -> String {
    let mut out = String::new();
    let mut covered: usize = 0;
    for s in spans {
        let skip = covered.saturating_sub(s.start);
        out.extend(s.text.chars().skip(skip));
        covered = s.end;
    }
    out
}
