//! Held-out evaluation: predictive perplexity and document co-occurrence
//! topic coherence (LCP, PMI, NPMI) over the top-N words per topic.

use serde::Serialize;
use std::collections::HashMap;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::stats::ThetaPhi;

/// exp of the negative mean held-out log likelihood per token:
/// `exp(-sum_tuples rho * ln(sum_k theta[d][k] phi[k][w]) / total)`.
pub fn predictive_perplexity(test: &Corpus, tp: &ThetaPhi) -> Result<f64> {
    let mut log_sum = 0.0;
    let mut tokens = 0u64;
    for t in test.tuples() {
        let d = t.doc as usize;
        let w = t.word as usize;
        if d >= tp.num_docs() {
            return Err(Error::Eval(format!(
                "test document {d} not covered by the trained theta"
            )));
        }
        if w >= tp.vocab_size() {
            return Err(Error::Eval(format!(
                "test word {w} not covered by the trained phi"
            )));
        }
        let theta = tp.theta_row(d);
        let mut p = 0.0;
        for (k, &t) in theta.iter().enumerate() {
            p += t * tp.phi_row(k)[w];
        }
        if p.is_nan() || p <= 0.0 {
            return Err(Error::Eval(format!(
                "zero predictive probability for tuple (doc {d}, word {w})"
            )));
        }
        log_sum += t.count as f64 * p.ln();
        tokens += t.count as u64;
    }
    if tokens == 0 {
        return Err(Error::Eval("test corpus has no tokens".into()));
    }
    Ok((-log_sum / tokens as f64).exp())
}

/// The `n` most likely words of topic `k`, ties broken by ascending word id.
pub fn top_n_words(tp: &ThetaPhi, topic: usize, n: usize) -> Vec<usize> {
    let row = tp.phi_row(topic);
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(n.min(row.len()));
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoherenceMetric {
    /// Pairwise log-conditional probability on raw document counts.
    Lcp,
    /// Pointwise mutual information on document-frequency proportions.
    Pmi,
    /// PMI normalized by -log of the joint, in [-1, 1].
    Npmi,
}

impl std::fmt::Display for CoherenceMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CoherenceMetric::Lcp => "lcp",
            CoherenceMetric::Pmi => "pmi",
            CoherenceMetric::Npmi => "npmi",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CoherenceConfig {
    /// Number of top words per topic (the paper reports 20 and 50).
    pub top_n: usize,
    pub metric: CoherenceMetric,
    /// Additive smoothing applied to joint counts/proportions; also guards
    /// denominators for words absent from the reference corpus.
    pub smoothing: f64,
}

impl CoherenceConfig {
    pub fn new(top_n: usize, metric: CoherenceMetric) -> Self {
        CoherenceConfig {
            top_n,
            metric,
            smoothing: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_n < 2 {
            return Err(Error::InvalidConfig("coherence needs top_n >= 2".into()));
        }
        if self.smoothing.is_nan() || self.smoothing <= 0.0 {
            return Err(Error::InvalidConfig("smoothing must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-topic scores plus their mean and (population) standard deviation
/// across topics. Each topic's score is the mean over its N(N-1)/2 word
/// pairs, making the scale invariant to N.
#[derive(Debug, Clone)]
pub struct CoherenceReport {
    pub per_topic: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Document-level presence counts for the words that appear in topics.
struct DocFrequencies {
    num_docs: f64,
    /// word -> sorted list of documents containing it
    docs: HashMap<usize, Vec<u32>>,
}

impl DocFrequencies {
    fn build(corpus: &Corpus, words: impl Iterator<Item = usize>) -> Self {
        let wanted: std::collections::HashSet<usize> = words.collect();
        let mut docs: HashMap<usize, Vec<u32>> = HashMap::new();
        for w in &wanted {
            docs.insert(*w, Vec::new());
        }
        for t in corpus.tuples() {
            if let Some(list) = docs.get_mut(&(t.word as usize)) {
                list.push(t.doc);
            }
        }
        // Tuples are (doc, word)-sorted, so each list is already sorted
        // and duplicate-free; assert the invariant cheaply in debug.
        for list in docs.values() {
            debug_assert!(list.windows(2).all(|p| p[0] < p[1]));
        }
        DocFrequencies {
            num_docs: corpus.num_docs() as f64,
            docs,
        }
    }

    fn df(&self, w: usize) -> f64 {
        self.docs.get(&w).map_or(0.0, |l| l.len() as f64)
    }

    fn co_df(&self, a: usize, b: usize) -> f64 {
        let (Some(la), Some(lb)) = (self.docs.get(&a), self.docs.get(&b)) else {
            return 0.0;
        };
        let mut i = 0;
        let mut j = 0;
        let mut count = 0.0;
        while i < la.len() && j < lb.len() {
            match la[i].cmp(&lb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    count += 1.0;
                    i += 1;
                    j += 1;
                }
            }
        }
        count
    }
}

fn pair_score(df: &DocFrequencies, cfg: &CoherenceConfig, wi: usize, wj: usize) -> f64 {
    let eps = cfg.smoothing;
    let d = df.num_docs;
    match cfg.metric {
        CoherenceMetric::Lcp => {
            let joint = df.co_df(wi, wj);
            ((joint + eps) / (df.df(wj) + eps)).ln()
        }
        CoherenceMetric::Pmi => pmi(df, eps, d, wi, wj),
        CoherenceMetric::Npmi => {
            let p_joint = df.co_df(wi, wj) / d + eps;
            let denom = -p_joint.ln();
            if denom <= 0.0 {
                // Joint probability at (or above) one: perfect association.
                1.0
            } else {
                (pmi(df, eps, d, wi, wj) / denom).clamp(-1.0, 1.0)
            }
        }
    }
}

fn pmi(df: &DocFrequencies, eps: f64, d: f64, wi: usize, wj: usize) -> f64 {
    let p_joint = df.co_df(wi, wj) / d + eps;
    let p_i = (df.df(wi) / d).max(eps);
    let p_j = (df.df(wj) / d).max(eps);
    (p_joint / (p_i * p_j)).ln()
}

/// Scores each topic's top words by average pairwise co-occurrence in
/// `corpus`, then summarizes across topics.
pub fn coherence(
    corpus: &Corpus,
    topics: &[Vec<usize>],
    cfg: &CoherenceConfig,
) -> Result<CoherenceReport> {
    cfg.validate()?;
    if topics.is_empty() {
        return Err(Error::Eval("no topics given".into()));
    }
    let df = DocFrequencies::build(corpus, topics.iter().flatten().copied());
    let mut per_topic = Vec::with_capacity(topics.len());
    for words in topics {
        let n = words.len().min(cfg.top_n);
        if n < 2 {
            return Err(Error::Eval("topic has fewer than 2 top words".into()));
        }
        let mut total = 0.0;
        let mut pairs = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                total += pair_score(&df, cfg, words[i], words[j]);
                pairs += 1.0;
            }
        }
        per_topic.push(total / pairs);
    }
    let mean = per_topic.iter().sum::<f64>() / per_topic.len() as f64;
    let var = per_topic
        .iter()
        .map(|x| (x - mean) * (x - mean))
        .sum::<f64>()
        / per_topic.len() as f64;
    Ok(CoherenceReport {
        per_topic,
        mean,
        std: var.sqrt(),
    })
}

/// One coherence summary line of an [`EvalReport`].
#[derive(Debug, Clone, Serialize)]
pub struct CoherenceSummary {
    pub metric: String,
    pub top_n: usize,
    pub mean: f64,
    pub std: f64,
}

/// Evaluation results, serializable as JSON and as one flat CSV row.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub perplexity: f64,
    pub coherence: Vec<CoherenceSummary>,
    pub runtime_per_iteration_ms: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Column order: `perplexity`, then `<metric><n>_mean,<metric><n>_std`
    /// for each coherence entry in report order, then `runtime_ms`.
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["perplexity".to_string()];
        for c in &self.coherence {
            cols.push(format!("{}{}_mean", c.metric, c.top_n));
            cols.push(format!("{}{}_std", c.metric, c.top_n));
        }
        cols.push("runtime_ms".into());
        cols.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        let mut cols = vec![format!("{}", self.perplexity)];
        for c in &self.coherence {
            cols.push(format!("{}", c.mean));
            cols.push(format!("{}", c.std));
        }
        cols.push(
            self.runtime_per_iteration_ms
                .map_or(String::new(), |ms| format!("{ms}")),
        );
        cols.join(",")
    }
}
