//! Seeded synthetic corpora drawn from the topic-model generative process,
//! used by benchmarks and end-to-end tests.

use std::ops::Range;

use rand::distributions::Distribution;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;

use crate::corpus::Corpus;
use crate::error::Result;

/// Parameters of the generative draw.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub num_docs: usize,
    pub vocab_size: usize,
    /// Number of planted topics.
    pub num_topics: usize,
    /// Document length range (uniform).
    pub doc_len: Range<u32>,
    /// Dirichlet concentration for document-topic draws.
    pub alpha: f64,
    /// Dirichlet concentration for topic-word draws.
    pub beta: f64,
    pub seed: u64,
    /// Attach a label per document (the dominant-topic weight mapped to
    /// [1, 5]), for supervised-model runs.
    pub labels: bool,
}

fn dirichlet_row(rng: &mut ChaCha8Rng, dim: usize, concentration: f64) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("valid gamma");
    let mut row: Vec<f64> = (0..dim).map(|_| gamma.sample(rng).max(1e-300)).collect();
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= sum);
    row
}

fn sample_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

/// Draw a corpus from the standard generative process: per-topic word
/// distributions, per-document topic mixtures, then tokens.
pub fn lda_corpus(spec: &SyntheticSpec) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phi: Vec<Vec<f64>> = (0..spec.num_topics)
        .map(|_| dirichlet_row(&mut rng, spec.vocab_size, spec.beta))
        .collect();
    let mut docs = Vec::with_capacity(spec.num_docs);
    let mut labels = Vec::with_capacity(spec.num_docs);
    for _ in 0..spec.num_docs {
        let theta = dirichlet_row(&mut rng, spec.num_topics, spec.alpha);
        let len = if spec.doc_len.len() <= 1 {
            spec.doc_len.start
        } else {
            rng.gen_range(spec.doc_len.clone())
        };
        let mut words = Vec::with_capacity(len as usize);
        for _ in 0..len {
            let k = sample_index(&mut rng, &theta);
            words.push(sample_index(&mut rng, &phi[k]) as u32);
        }
        docs.push(words);
        let dominant = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        labels.push(1.0 + 4.0 * dominant);
    }
    let vocab = (0..spec.vocab_size).map(|w| format!("w{w}")).collect();
    let corpus = Corpus::from_documents(docs, vocab)?;
    if spec.labels {
        corpus.with_labels(labels)
    } else {
        Ok(corpus)
    }
}
