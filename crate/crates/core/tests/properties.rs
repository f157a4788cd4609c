//! Property tests for the structural invariants: deduplication round
//! trips, split partitioning, normalization scale invariance, simplex
//! preservation, and coherence bounds.

use proptest::prelude::*;

use heron_core::corpus::{Corpus, SplitSpec};
use heron_core::eval::{coherence, CoherenceConfig, CoherenceMetric};
use heron_core::gibbs::RngState;
use heron_core::heron::{heron_update_tuple, init_responsibilities};
use heron_core::posterior::{normalize, ModelConfig};
use heron_core::stats::compute_soft_stats;

/// Documents over a small vocabulary; every doc nonempty.
fn docs_strategy() -> impl Strategy<Value = Vec<Vec<u32>>> {
    prop::collection::vec(prop::collection::vec(0u32..8, 1..12), 1..8)
}

fn corpus_from(docs: Vec<Vec<u32>>) -> Corpus {
    let vocab = (0..8).map(|w| format!("w{w}")).collect();
    Corpus::from_documents(docs, vocab).unwrap()
}

proptest! {
    /// Expanding tuples by multiplicity and re-aggregating reproduces the
    /// corpus exactly.
    #[test]
    fn dedup_round_trip(docs in docs_strategy()) {
        let corpus = corpus_from(docs);
        let tokens = corpus.expand_tokens();
        let rebuilt: Vec<Vec<u32>> = (0..corpus.num_docs())
            .map(|d| {
                tokens
                    .iter()
                    .filter(|&&(doc, _)| doc as usize == d)
                    .map(|&(_, w)| w)
                    .collect()
            })
            .collect();
        let rebuilt = corpus_from(rebuilt);
        prop_assert_eq!(rebuilt.tuples(), corpus.tuples());
        prop_assert!(corpus.dedup_ratio() >= 0.0 && corpus.dedup_ratio() < 1.0);
    }

    /// Train and test token counts partition every document.
    #[test]
    fn split_partitions_tokens(docs in docs_strategy(), seed in 0u64..1000, fraction in 0.05f64..0.95) {
        let corpus = corpus_from(docs);
        let (train, test) = corpus
            .train_test_split(&SplitSpec { train_fraction: fraction, rng_seed: seed })
            .unwrap();
        for d in 0..corpus.num_docs() {
            prop_assert_eq!(train.doc_len(d) + test.doc_len(d), corpus.doc_len(d));
            prop_assert!(train.doc_len(d) >= 1);
        }
    }

    /// normalize() is invariant to positive rescaling and lands on the
    /// simplex.
    #[test]
    fn normalize_scale_invariance(
        v in prop::collection::vec(1e-6f64..10.0, 1..8),
        scale in prop::sample::select(vec![1e-6f64, 1e-3, 1.0, 1e3, 1e6]),
    ) {
        let mut a = v.clone();
        let mut b: Vec<f64> = v.iter().map(|x| x * scale).collect();
        normalize(&mut a).unwrap();
        normalize(&mut b).unwrap();
        let sum: f64 = a.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    /// One fixed-point update maps simplex rows to simplex rows with
    /// strictly positive entries.
    #[test]
    fn update_preserves_simplex(docs in docs_strategy(), seed in 0u64..500, k in 1usize..5) {
        let corpus = corpus_from(docs);
        let cfg = ModelConfig::lda(k, 0.3, 0.2);
        let resp = init_responsibilities(&corpus, k, &mut RngState::new(seed));
        let soft = compute_soft_stats(&resp, &corpus).unwrap();
        let mut out = vec![0.0; k];
        for (i, t) in corpus.tuples().iter().enumerate() {
            heron_update_tuple(
                t.doc as usize,
                t.word as usize,
                resp.row(i),
                &soft,
                &corpus,
                &cfg,
                None,
                &mut out,
            )
            .unwrap();
            let sum: f64 = out.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(out.iter().all(|&x| x > 0.0));
        }
    }

    /// NPMI stays within [-1, 1] for arbitrary topic word sets, including
    /// words absent from the corpus.
    #[test]
    fn npmi_bounds(docs in docs_strategy(), words in prop::collection::vec(0usize..12, 2..6)) {
        let corpus = corpus_from(docs);
        let cfg = CoherenceConfig::new(words.len(), CoherenceMetric::Npmi);
        let report = coherence(&corpus, &[words], &cfg).unwrap();
        for &s in &report.per_topic {
            prop_assert!((-1.0..=1.0).contains(&s), "score {s}");
        }
    }
}
