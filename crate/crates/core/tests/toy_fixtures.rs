//! The committed toy fixture directory must match what the section files
//! describe. Run with `TEXTGRAPH_REGEN=1` to rewrite it.

mod common;

use std::fs;

use textgraph::kb::store::snapshot_dir;

#[test]
fn committed_fixtures_are_current() {
    let llm = common::toy_full_llm();
    let dir = common::toy_fixture_dir();
    if std::env::var_os("TEXTGRAPH_REGEN").is_some() {
        let _ = fs::remove_dir_all(&dir);
        llm.save_dir(&dir).unwrap();
    }
    let tmp = tempfile::tempdir().unwrap();
    llm.save_dir(tmp.path()).unwrap();
    let want = snapshot_dir(tmp.path()).unwrap();
    let have = snapshot_dir(&dir).unwrap();
    assert_eq!(
        have.keys().collect::<Vec<_>>(),
        want.keys().collect::<Vec<_>>(),
        "fixture set differs; rerun with TEXTGRAPH_REGEN=1"
    );
    assert!(have == want, "fixture contents differ; rerun with TEXTGRAPH_REGEN=1");
}

#[test]
fn golden_retrieval_is_current() {
    use textgraph::pipeline::{render_result, Pipeline};
    use textgraph::tokens::TokenLedger;

    let kb = common::toy_kb();
    let llm = common::toy_retrieval_llm();
    let emb = common::toy_embedder();
    let cache = common::fresh_cache();
    let ledger = TokenLedger::new();
    let p = Pipeline {
        kb: &kb,
        embedder: &emb,
        llm: &llm,
        cache: &cache,
        ledger: &ledger,
        config: common::toy_pipeline_config(),
    };
    let item = &common::toy_qa()[0];
    let text = render_result(&p.retrieve(&item.question).unwrap());
    let path = common::toy_dir().join("golden_toy1.txt");
    if std::env::var_os("TEXTGRAPH_REGEN").is_some() {
        fs::write(&path, &text).unwrap();
    }
    assert_eq!(fs::read_to_string(&path).unwrap(), text);
}
