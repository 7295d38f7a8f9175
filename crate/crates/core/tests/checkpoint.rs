mod common;

use xlr_core::pipeline::{self, checkpoint_load, checkpoint_save, IterPhase};
use xlr_core::Error;

#[test]
fn save_load_save_is_byte_identical() {
    let config = common::tiny_config();
    let corpus = pipeline::load_corpus(&config).unwrap();
    let mut state = pipeline::warmup(&config, &corpus).unwrap();
    state.advance(&corpus, 3).unwrap();
    assert!(state.cursor.is_some());

    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    checkpoint_save(&state, &a).unwrap();
    let loaded = checkpoint_load(&a).unwrap();
    assert_eq!(loaded, state);
    checkpoint_save(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn resume_matches_uninterrupted_run_in_both_phases() {
    let config = common::tiny_config();
    let corpus = pipeline::load_corpus(&config).unwrap();
    let start = pipeline::warmup(&config, &corpus).unwrap();

    let retriever_steps = config.iter_retriever.steps;
    let dir = tempfile::tempdir().unwrap();
    // stop once inside the retriever phase and once inside the teacher phase
    for stop in [2, retriever_steps + 1] {
        let mut state = start.clone();
        state.advance(&corpus, stop).unwrap();
        let expected = if stop < retriever_steps { IterPhase::Retriever } else { IterPhase::Teacher };
        assert_eq!(state.cursor.as_ref().unwrap().phase, expected);
        let path = dir.path().join(format!("stop{stop}.ckpt"));
        checkpoint_save(&state, &path).unwrap();
        let mut finished = checkpoint_load(&path).unwrap();
        assert!(finished.advance(&corpus, u64::MAX).unwrap());
        let mut plain = start.clone();
        assert!(plain.advance(&corpus, u64::MAX).unwrap());
        assert_eq!(finished, plain);
        assert_eq!(finished.iteration, 1);
    }
}

#[test]
fn bad_magic_is_incompatible() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    std::fs::write(&path, b"NOTACKPT\x01\x00\x00\x00").unwrap();
    assert!(matches!(checkpoint_load(&path), Err(Error::Incompatible { .. })));
}

#[test]
fn truncated_file_is_corrupt() {
    let config = common::tiny_config();
    let corpus = pipeline::load_corpus(&config).unwrap();
    let state = xlr_core::pipeline::TrainState::new(config, &corpus).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ckpt");
    checkpoint_save(&state, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    for cut in [12, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(matches!(checkpoint_load(&path), Err(Error::Corrupt { .. })), "cut at {cut}");
    }
    let mut longer = bytes.clone();
    longer.push(0);
    std::fs::write(&path, &longer).unwrap();
    assert!(matches!(checkpoint_load(&path), Err(Error::Corrupt { .. })));
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(checkpoint_load(&dir.path().join("none")), Err(Error::Io { .. })));
}
