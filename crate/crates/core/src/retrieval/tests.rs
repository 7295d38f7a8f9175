use proptest::prelude::*;

use super::*;
use crate::corpus::{generate_corpus, CorpusConfig, Language};
use crate::encoder::EncoderConfig;

fn corpus_of(passages: Vec<Vec<TokenId>>) -> Corpus {
    Corpus {
        seed: 0,
        languages: vec![Language {
            id: 0,
            name: "p".into(),
            vocab_offset: 0,
            vocab_size: 100,
        }],
        passages: passages
            .into_iter()
            .enumerate()
            .map(|(i, tokens)| Passage {
                id: i as u32,
                tokens,
                answer_span: None,
            })
            .collect(),
        pretrain: Vec::new(),
        train: Vec::new(),
        dev: Vec::new(),
        max_query_len: 32,
        max_passage_len: 128,
        word_maps: None,
    }
}

fn flat(rows: &[[f64; 2]]) -> FlatIndex {
    FlatIndex {
        ids: (0..rows.len() as u32).collect(),
        dim: 2,
        embeddings: rows.concat(),
        version: 3,
    }
}

fn result(ids: Vec<PassageId>) -> RetrievalResult {
    RetrievalResult {
        query_id: 0,
        scores: (0..ids.len()).map(|i| -(i as f64)).collect(),
        ids,
        version: 0,
        truncated: false,
    }
}

#[test]
fn hand_ranked_three_passages() {
    let idx = flat(&[[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]);
    // q = (0.2, 1.0): scores 0.2, 1.0, 0.6
    let r = idx.search_vector(7, &[0.2, 1.0], 3).unwrap();
    assert_eq!(r.ids, vec![1, 2, 0]);
    assert_eq!(r.query_id, 7);
    assert_eq!(r.version, 3);
    assert!(!r.truncated);
    let r = idx.search_vector(7, &[0.2, 1.0], 2).unwrap();
    assert_eq!(r.ids, vec![1, 2]);
}

#[test]
fn zero_query_ranks_by_id_and_k_overflow_truncates() {
    let idx = flat(&[[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]);
    let r = idx.search_vector(0, &[0.0, 0.0], 10).unwrap();
    assert_eq!(r.ids, vec![0, 1, 2]);
    assert!(r.scores.iter().all(|&s| s == 0.0));
    assert!(r.truncated);
    assert!(idx.search_vector(0, &[0.0, 0.0], 0).is_err());
}

#[test]
fn mining_hand_trace() {
    let c = corpus_of(vec![vec![1, 2, 3], vec![4, 5], vec![6, 7], vec![8, 9]]);
    let r = result(vec![0, 1, 2, 3]);
    assert_eq!(mine_negatives(&r, &c, &[2, 3], 2).unwrap(), vec![1, 2]);
    assert!(mine_negatives(&r, &c, &[2, 3], 0).unwrap().is_empty());
    let all = corpus_of(vec![vec![1, 2], vec![2, 1]]);
    assert!(mine_negatives(&result(vec![0, 1]), &all, &[1], 5).unwrap().is_empty());
}

#[test]
fn budget_hand_traces() {
    let c = corpus_of(vec![vec![1, 1, 1, 1], vec![9, 2, 2, 2]]);
    let rs = vec![result(vec![0, 1])];
    let ans: Vec<&[TokenId]> = vec![&[9]];
    assert_eq!(recall_at_k_tokens(&rs, &c, &ans, 10).unwrap(), 1.0);
    assert_eq!(recall_at_k_tokens(&rs, &c, &ans, 4).unwrap(), 0.0);
    assert_eq!(recall_at_k_tokens(&rs, &c, &ans, 7).unwrap(), 0.0);
    assert_eq!(recall_at_k_tokens(&rs, &c, &ans, 8).unwrap(), 1.0);
    assert_eq!(recall_at_k_tokens(&rs, &c, &ans, 0).unwrap(), 0.0);
    assert!(matches!(recall_at_k_tokens(&[], &c, &[], 10), Err(Error::Metric(_))));
}

fn small_setup(seed: u64) -> (Corpus, DualEncoder) {
    let cfg = CorpusConfig {
        passages: 300,
        concepts: 20,
        pretrain_samples: 50,
        train_samples: 50,
        dev_samples: 20,
        ..CorpusConfig::default()
    };
    let corpus = generate_corpus(&cfg, seed).unwrap();
    let enc = DualEncoder::new(corpus.vocab_size(), &EncoderConfig::default(), seed).unwrap();
    (corpus, enc)
}

#[test]
fn flat_rows_equal_passage_encodings() {
    let (corpus, enc) = small_setup(1);
    let idx = build_index(&enc, &corpus, IndexKind::Flat, 0, 0).unwrap();
    for (i, p) in corpus.passages.iter().enumerate().step_by(37) {
        assert_eq!(idx.flat().row(i), enc.encode_passage(p).unwrap().0.as_slice());
    }
}

#[test]
fn ivf_partitions_and_full_probe_is_exact() {
    let (corpus, enc) = small_setup(2);
    let kind = IndexKind::Ivf {
        n_clusters: 8,
        nprobe: 8,
    };
    let Index::Ivf(ivf) = build_index(&enc, &corpus, kind, 5, 1).unwrap() else {
        unreachable!()
    };
    let mut seen: Vec<PassageId> = (0..8).flat_map(|c| ivf.posting_ids(c)).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..corpus.passages.len() as u32).collect::<Vec<_>>());
    for s in corpus.train.iter().chain(&corpus.dev) {
        let a = search_ann(&ivf, &enc, &s.query, 100).unwrap();
        let e = search_exact(&ivf.flat, &enc, &s.query, 100).unwrap();
        assert_eq!(a, e);
    }
    let narrow = ivf.clone().with_nprobe(2).unwrap();
    let q = &corpus.train[0].query;
    assert_eq!(search_ann(&narrow, &enc, q, 50).unwrap(), search_ann(&narrow, &enc, q, 50).unwrap());
}

#[test]
fn bad_cluster_counts_are_config_errors() {
    let (corpus, enc) = small_setup(3);
    let too_many = IndexKind::Ivf {
        n_clusters: 301,
        nprobe: 1,
    };
    assert!(matches!(build_index(&enc, &corpus, too_many, 0, 0), Err(Error::Config(_))));
    let bad_probe = IndexKind::Ivf {
        n_clusters: 4,
        nprobe: 5,
    };
    assert!(matches!(build_index(&enc, &corpus, bad_probe, 0, 0), Err(Error::Config(_))));
}

#[test]
fn refresh_and_file_round_trip() {
    let (corpus, mut enc) = small_setup(4);
    let kind = IndexKind::Ivf {
        n_clusters: 4,
        nprobe: 2,
    };
    let idx = build_index(&enc, &corpus, kind, 9, 0).unwrap();
    let same = refresh_index(&idx, &enc, &corpus, 9).unwrap();
    assert_eq!(same.version(), 1);
    let mut relabelled = same.clone();
    if let Index::Ivf(i) = &mut relabelled {
        i.flat.version = 0;
    }
    assert_eq!(relabelled, idx);

    for x in enc.params.iter_mut().step_by(5) {
        *x += 0.05;
    }
    let fresh = refresh_index(&same, &enc, &corpus, 9).unwrap();
    assert_eq!(fresh.version(), 2);
    assert_eq!(fresh.flat().row(3), enc.encode_passage(&corpus.passages[3]).unwrap().0.as_slice());

    let dir = tempfile::tempdir().unwrap();
    for (name, index) in [("ivf.bin", fresh.clone()), ("flat.bin", Index::Flat(fresh.flat().clone()))] {
        let p = dir.path().join(name);
        write_index(&index, &p).unwrap();
        assert_eq!(read_index(&p).unwrap(), index);
        let bytes = std::fs::read(&p).unwrap();
        let rebuilt = dir.path().join("again.bin");
        write_index(&read_index(&p).unwrap(), &rebuilt).unwrap();
        assert_eq!(std::fs::read(&rebuilt).unwrap(), bytes);

        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_index(&p), Err(Error::Corrupt { .. })));
        let mut wrong = bytes.clone();
        wrong[0] = b'Y';
        std::fs::write(&p, &wrong).unwrap();
        assert!(matches!(read_index(&p), Err(Error::Incompatible { .. })));
        let mut newer = bytes.clone();
        newer[8] = 2;
        std::fs::write(&p, &newer).unwrap();
        assert!(matches!(read_index(&p), Err(Error::Incompatible { .. })));
    }
}

#[test]
fn tsv_export() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.tsv");
    let r = RetrievalResult {
        query_id: 4,
        ids: vec![2, 0],
        scores: vec![1.5, -0.25],
        version: 1,
        truncated: false,
    };
    write_results_tsv(&[r], &p).unwrap();
    assert_eq!(
        std::fs::read_to_string(&p).unwrap(),
        "query_id\trank\tpassage_id\tscore\n4\t1\t2\t1.5\n4\t2\t0\t-0.25\n"
    );
}

#[test]
fn stale_version_is_detected() {
    let r = result(vec![0]);
    assert!(r.check_version(0).is_ok());
    assert!(matches!(r.check_version(1), Err(Error::StaleVersion { expected: 1, found: 0 })));
}

proptest! {
    #[test]
    fn recall_is_monotone_in_budget(
        lens in proptest::collection::vec(1usize..20, 6),
        orders in proptest::collection::vec(Just((0u32..6).collect::<Vec<_>>()).prop_shuffle(), 1..5),
        budgets in proptest::collection::vec(0usize..150, 2..6),
    ) {
        let passages: Vec<Vec<TokenId>> = lens.iter().enumerate().map(|(i, &l)| {
            let mut t = vec![50; l];
            if i % 3 == 0 { t[0] = 7; }
            t
        }).collect();
        let c = corpus_of(passages);
        let rs: Vec<_> = orders.into_iter().map(result).collect();
        let ans: Vec<&[TokenId]> = vec![&[7]; rs.len()];
        let mut budgets = budgets;
        budgets.sort_unstable();
        let vals: Vec<f64> = budgets.iter().map(|&b| recall_at_k_tokens(&rs, &c, &ans, b).unwrap()).collect();
        prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn mined_negatives_never_hold_the_answer(order in Just((0u32..8).collect::<Vec<_>>()).prop_shuffle(), n in 0usize..9) {
        let c = corpus_of((0..8).map(|i| vec![i % 3, 10 + i]).collect());
        let got = mine_negatives(&result(order), &c, &[1], n).unwrap();
        prop_assert!(got.len() <= n);
        for id in got {
            prop_assert!(!contains_answer(c.passage(id), &[1]).unwrap());
        }
    }
}
