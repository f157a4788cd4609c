//! Sufficient statistics shared by all backends: integer counts for the
//! collapsed Gibbs sampler and real-valued soft counts for the replicated
//! and fixed-point backends, plus posterior-mean theta/phi estimation.
//!
//! Layout note: the topic-document matrix is stored doc-major and the
//! topic-word matrix word-major, so the per-token topic loop in every
//! backend reads contiguous length-K slices.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::heron::Responsibility;

/// Direction of an incremental count update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateDir {
    Add,
    Subtract,
}

/// Integer co-occurrence counts maintained by the collapsed Gibbs sampler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HardStats {
    num_topics: usize,
    num_docs: usize,
    vocab_size: usize,
    /// `c[d * K + k]` = count of topic k in document d.
    c: Vec<u32>,
    /// `d[w * K + k]` = count of topic k on word w.
    d: Vec<u32>,
    /// `drow[k]` = total count of topic k.
    drow: Vec<u32>,
}

impl HardStats {
    pub fn zeros(num_topics: usize, num_docs: usize, vocab_size: usize) -> Self {
        HardStats {
            num_topics,
            num_docs,
            vocab_size,
            c: vec![0; num_docs * num_topics],
            d: vec![0; vocab_size * num_topics],
            drow: vec![0; num_topics],
        }
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn c(&self, k: usize, doc: usize) -> u32 {
        self.c[doc * self.num_topics + k]
    }

    pub fn d(&self, k: usize, word: usize) -> u32 {
        self.d[word * self.num_topics + k]
    }

    pub fn drow(&self, k: usize) -> u32 {
        self.drow[k]
    }

    /// Topic counts of one document, indexed by topic.
    pub fn doc_counts(&self, doc: usize) -> &[u32] {
        &self.c[doc * self.num_topics..(doc + 1) * self.num_topics]
    }

    /// Topic counts of one word, indexed by topic.
    pub fn word_counts(&self, word: usize) -> &[u32] {
        &self.d[word * self.num_topics..(word + 1) * self.num_topics]
    }

    pub fn topic_totals(&self) -> &[u32] {
        &self.drow
    }

    /// Apply a ±1 update for one token assigned to topic `k`.
    pub fn update(&mut self, doc: usize, word: usize, k: usize, dir: UpdateDir) -> Result<()> {
        let ci = doc * self.num_topics + k;
        let di = word * self.num_topics + k;
        match dir {
            UpdateDir::Add => {
                self.c[ci] += 1;
                self.d[di] += 1;
                self.drow[k] += 1;
            }
            UpdateDir::Subtract => {
                if self.c[ci] == 0 || self.d[di] == 0 || self.drow[k] == 0 {
                    return Err(Error::CountUnderflow(format!(
                        "(doc={doc}, word={word}, topic={k})"
                    )));
                }
                self.c[ci] -= 1;
                self.d[di] -= 1;
                self.drow[k] -= 1;
            }
        }
        Ok(())
    }

    pub fn total_tokens(&self) -> u64 {
        self.drow.iter().map(|&x| x as u64).sum()
    }

    /// Serialize to the documented CSV layout (see [`write_stats_csv`]).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_stats_csv(
            path.as_ref(),
            "hard",
            self.num_topics,
            self.num_docs,
            self.vocab_size,
            self.c.iter().map(|&x| x as f64),
            self.d.iter().map(|&x| x as f64),
        )
    }

    /// Read back a snapshot produced by [`HardStats::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>) -> Result<HardStats> {
        let raw = read_stats_csv(path.as_ref(), "hard")?;
        let to_u32 = |xs: Vec<f64>| -> Result<Vec<u32>> {
            xs.into_iter()
                .map(|x| {
                    if x.fract() == 0.0 && x >= 0.0 && x <= u32::MAX as f64 {
                        Ok(x as u32)
                    } else {
                        Err(Error::Checkpoint(format!(
                            "non-count value {x} in hard stats"
                        )))
                    }
                })
                .collect()
        };
        let c = to_u32(raw.c)?;
        let d = to_u32(raw.d)?;
        let mut drow = vec![0u32; raw.num_topics];
        for word_row in d.chunks(raw.num_topics) {
            for (dr, &v) in drow.iter_mut().zip(word_row) {
                *dr += v;
            }
        }
        Ok(HardStats {
            num_topics: raw.num_topics,
            num_docs: raw.num_docs,
            vocab_size: raw.vocab_size,
            c,
            d,
            drow,
        })
    }
}

/// Real-valued co-occurrence statistics used by the replicated sampler
/// (per-replication averages) and the fixed-point backend (probability
/// sums over distinct tuples).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftStats {
    num_topics: usize,
    num_docs: usize,
    vocab_size: usize,
    c: Vec<f64>,
    d: Vec<f64>,
    drow: Vec<f64>,
}

impl SoftStats {
    pub fn zeros(num_topics: usize, num_docs: usize, vocab_size: usize) -> Self {
        SoftStats {
            num_topics,
            num_docs,
            vocab_size,
            c: vec![0.0; num_docs * num_topics],
            d: vec![0.0; vocab_size * num_topics],
            drow: vec![0.0; num_topics],
        }
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn c(&self, k: usize, doc: usize) -> f64 {
        self.c[doc * self.num_topics + k]
    }

    pub fn d(&self, k: usize, word: usize) -> f64 {
        self.d[word * self.num_topics + k]
    }

    pub fn drow(&self, k: usize) -> f64 {
        self.drow[k]
    }

    pub fn doc_counts(&self, doc: usize) -> &[f64] {
        &self.c[doc * self.num_topics..(doc + 1) * self.num_topics]
    }

    pub fn word_counts(&self, word: usize) -> &[f64] {
        &self.d[word * self.num_topics..(word + 1) * self.num_topics]
    }

    pub fn topic_totals(&self) -> &[f64] {
        &self.drow
    }

    /// Add `weight * row[k]` to the doc, word, and total statistics.
    pub fn add_scaled(&mut self, doc: usize, word: usize, weight: f64, row: &[f64]) {
        let k = self.num_topics;
        let c = &mut self.c[doc * k..(doc + 1) * k];
        let d = &mut self.d[word * k..(word + 1) * k];
        for i in 0..k {
            let v = weight * row[i];
            c[i] += v;
            d[i] += v;
            self.drow[i] += v;
        }
    }

    /// Subtract `weight * row[k]`; counterpart of [`SoftStats::add_scaled`].
    pub fn sub_scaled(&mut self, doc: usize, word: usize, weight: f64, row: &[f64]) {
        let k = self.num_topics;
        let c = &mut self.c[doc * k..(doc + 1) * k];
        let d = &mut self.d[word * k..(word + 1) * k];
        for i in 0..k {
            let v = weight * row[i];
            c[i] -= v;
            d[i] -= v;
            self.drow[i] -= v;
        }
    }

    /// Elementwise accumulate another partial-sum instance (used for the
    /// deterministic reduction at iteration barriers).
    pub fn merge(&mut self, other: &SoftStats) {
        debug_assert_eq!(self.c.len(), other.c.len());
        for (a, b) in self.c.iter_mut().zip(&other.c) {
            *a += b;
        }
        for (a, b) in self.d.iter_mut().zip(&other.d) {
            *a += b;
        }
        for (a, b) in self.drow.iter_mut().zip(&other.drow) {
            *a += b;
        }
    }

    /// Total soft mass; equals the training token count when every
    /// responsibility row sums to one.
    pub fn total_mass(&self) -> f64 {
        self.drow.iter().sum()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_stats_csv(
            path.as_ref(),
            "soft",
            self.num_topics,
            self.num_docs,
            self.vocab_size,
            self.c.iter().copied(),
            self.d.iter().copied(),
        )
    }

    /// Read back a snapshot produced by [`SoftStats::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>) -> Result<SoftStats> {
        let raw = read_stats_csv(path.as_ref(), "soft")?;
        let mut drow = vec![0.0; raw.num_topics];
        for word_row in raw.d.chunks(raw.num_topics) {
            for (dr, &v) in drow.iter_mut().zip(word_row) {
                *dr += v;
            }
        }
        Ok(SoftStats {
            num_topics: raw.num_topics,
            num_docs: raw.num_docs,
            vocab_size: raw.vocab_size,
            c: raw.c,
            d: raw.d,
            drow,
        })
    }
}

struct RawStats {
    num_topics: usize,
    num_docs: usize,
    vocab_size: usize,
    c: Vec<f64>,
    d: Vec<f64>,
}

fn read_stats_csv(path: &Path, kind: &str) -> Result<RawStats> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Checkpoint("empty stats file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let fields: Vec<&str> = header.trim().split(',').collect();
    if fields.len() != 4 || fields[0] != kind {
        return Err(Error::Checkpoint(format!("bad stats header `{header}`")));
    }
    let parse_dim = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|e| Error::Checkpoint(format!("bad stats dimension `{s}`: {e}")))
    };
    let num_topics = parse_dim(fields[1])?;
    let num_docs = parse_dim(fields[2])?;
    let vocab_size = parse_dim(fields[3])?;
    let mut read_block = |rows: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(rows * num_topics);
        for _ in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| Error::Checkpoint("truncated stats file".into()))?
                .map_err(|e| Error::io(path, e))?;
            for v in line.trim().split(',') {
                out.push(
                    v.parse::<f64>()
                        .map_err(|e| Error::Checkpoint(format!("bad stats value `{v}`: {e}")))?,
                );
            }
        }
        if out.len() != rows * num_topics {
            return Err(Error::Checkpoint("stats row width mismatch".into()));
        }
        Ok(out)
    };
    let c = read_block(num_docs)?;
    let d = read_block(vocab_size)?;
    Ok(RawStats {
        num_topics,
        num_docs,
        vocab_size,
        c,
        d,
    })
}

/// CSV snapshot layout: a `kind,K,docs,vocab` header, then the topic-doc
/// matrix (one row per document, K columns), then the topic-word matrix
/// (one row per word, K columns). Topic totals are recomputed on load.
fn write_stats_csv(
    path: &Path,
    kind: &str,
    num_topics: usize,
    num_docs: usize,
    vocab_size: usize,
    c: impl Iterator<Item = f64>,
    d: impl Iterator<Item = f64>,
) -> Result<()> {
    fn emit(
        w: &mut impl Write,
        it: &mut dyn Iterator<Item = f64>,
        rows: usize,
        cols: usize,
    ) -> std::io::Result<()> {
        for _ in 0..rows {
            for k in 0..cols {
                if k > 0 {
                    write!(w, ",")?;
                }
                write!(w, "{}", it.next().expect("stats length"))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut c = c;
    let mut d = d;
    writeln!(w, "{kind},{num_topics},{num_docs},{vocab_size}")
        .and_then(|_| emit(&mut w, &mut c, num_docs, num_topics))
        .and_then(|_| emit(&mut w, &mut d, vocab_size, num_topics))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Tally hard counts from one topic assignment per token instance, in the
/// corpus's canonical token order.
pub fn compute_hard_stats(
    assignments: &[u32],
    corpus: &Corpus,
    num_topics: usize,
) -> Result<HardStats> {
    let tokens = corpus.expand_tokens();
    if assignments.is_empty() {
        return Err(Error::ShapeMismatch("no assignments given".into()));
    }
    if assignments.len() != tokens.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} assignments for {} token instances",
            assignments.len(),
            tokens.len()
        )));
    }
    let mut stats = HardStats::zeros(num_topics, corpus.num_docs(), corpus.vocab_size());
    for (&z, &(doc, word)) in assignments.iter().zip(&tokens) {
        if z as usize >= num_topics {
            return Err(Error::IdOutOfRange(format!(
                "topic {z} >= num_topics {num_topics}"
            )));
        }
        stats.update(doc as usize, word as usize, z as usize, UpdateDir::Add)?;
    }
    Ok(stats)
}

/// Accumulate soft counts from per-tuple responsibilities: each distinct
/// tuple contributes its multiplicity times its probability row.
pub fn compute_soft_stats(resp: &Responsibility, corpus: &Corpus) -> Result<SoftStats> {
    let k = resp.num_topics();
    let mut stats = SoftStats::zeros(k, corpus.num_docs(), corpus.vocab_size());
    for (i, t) in corpus.tuples().iter().enumerate() {
        let row = resp.row(i);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::CorruptedResponsibilities { row: i, sum });
        }
        stats.add_scaled(t.doc as usize, t.word as usize, t.count as f64, row);
    }
    Ok(stats)
}

/// Row-stochastic document-topic and topic-word distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPhi {
    num_docs: usize,
    num_topics: usize,
    vocab_size: usize,
    /// `theta[d * K + k]`, rows sum to 1.
    theta: Vec<f64>,
    /// `phi[k * V + w]`, rows sum to 1.
    phi: Vec<f64>,
}

impl ThetaPhi {
    pub fn from_parts(
        num_docs: usize,
        num_topics: usize,
        vocab_size: usize,
        theta: Vec<f64>,
        phi: Vec<f64>,
    ) -> Result<Self> {
        if theta.len() != num_docs * num_topics || phi.len() != num_topics * vocab_size {
            return Err(Error::ShapeMismatch("theta/phi dimensions".into()));
        }
        Ok(ThetaPhi {
            num_docs,
            num_topics,
            vocab_size,
            theta,
            phi,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn theta_row(&self, doc: usize) -> &[f64] {
        &self.theta[doc * self.num_topics..(doc + 1) * self.num_topics]
    }

    pub fn phi_row(&self, k: usize) -> &[f64] {
        &self.phi[k * self.vocab_size..(k + 1) * self.vocab_size]
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Write theta as CSV, one row per document.
    pub fn write_theta_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_matrix_csv(path.as_ref(), &self.theta, self.num_topics)
    }

    /// Write phi as CSV, one row per topic.
    pub fn write_phi_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_matrix_csv(path.as_ref(), &self.phi, self.vocab_size)
    }

    pub fn read_csv(theta_path: impl AsRef<Path>, phi_path: impl AsRef<Path>) -> Result<ThetaPhi> {
        let theta_rows = read_matrix_csv(theta_path.as_ref())?;
        let phi_rows = read_matrix_csv(phi_path.as_ref())?;
        let num_docs = theta_rows.len();
        let num_topics = theta_rows.first().map_or(0, Vec::len);
        let vocab_size = phi_rows.first().map_or(0, Vec::len);
        if phi_rows.len() != num_topics {
            return Err(Error::ShapeMismatch(format!(
                "theta has {num_topics} topics but phi has {} rows",
                phi_rows.len()
            )));
        }
        ThetaPhi::from_parts(
            num_docs,
            num_topics,
            vocab_size,
            theta_rows.into_iter().flatten().collect(),
            phi_rows.into_iter().flatten().collect(),
        )
    }
}

fn write_matrix_csv(path: &Path, data: &[f64], cols: usize) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        for row in data.chunks(cols) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    write!(w, ",")?;
                }
                write!(w, "{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.trim().split(',').map(str::parse::<f64>).collect();
        rows.push(row.map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Read access shared by hard and soft statistics, for estimation code
/// that does not care which backend produced the counts.
pub trait StatsView {
    fn num_topics(&self) -> usize;
    fn num_docs(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn c_at(&self, k: usize, doc: usize) -> f64;
    fn d_at(&self, k: usize, word: usize) -> f64;
    fn drow_at(&self, k: usize) -> f64;
}

impl StatsView for HardStats {
    fn num_topics(&self) -> usize {
        self.num_topics
    }
    fn num_docs(&self) -> usize {
        self.num_docs
    }
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
    fn c_at(&self, k: usize, doc: usize) -> f64 {
        self.c(k, doc) as f64
    }
    fn d_at(&self, k: usize, word: usize) -> f64 {
        self.d(k, word) as f64
    }
    fn drow_at(&self, k: usize) -> f64 {
        self.drow(k) as f64
    }
}

impl StatsView for SoftStats {
    fn num_topics(&self) -> usize {
        self.num_topics
    }
    fn num_docs(&self) -> usize {
        self.num_docs
    }
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
    fn c_at(&self, k: usize, doc: usize) -> f64 {
        self.c(k, doc)
    }
    fn d_at(&self, k: usize, word: usize) -> f64 {
        self.d(k, word)
    }
    fn drow_at(&self, k: usize) -> f64 {
        self.drow(k)
    }
}

/// Dirichlet posterior-mean estimates:
/// `theta[d][k] = (C[k][d] + alpha) / (N_d + K*alpha)` and
/// `phi[k][w] = (D[k][w] + beta) / (D[k][.] + V*beta)`.
pub fn estimate_theta_phi<S: StatsView>(stats: &S, alpha: f64, beta: f64) -> ThetaPhi {
    let k_n = stats.num_topics();
    let docs = stats.num_docs();
    let vocab = stats.vocab_size();
    let mut theta = vec![0.0; docs * k_n];
    for d in 0..docs {
        let total: f64 = (0..k_n).map(|k| stats.c_at(k, d)).sum();
        let denom = total + k_n as f64 * alpha;
        for k in 0..k_n {
            theta[d * k_n + k] = (stats.c_at(k, d) + alpha) / denom;
        }
    }
    let mut phi = vec![0.0; k_n * vocab];
    for k in 0..k_n {
        let denom = stats.drow_at(k) + vocab as f64 * beta;
        for w in 0..vocab {
            phi[k * vocab + w] = (stats.d_at(k, w) + beta) / denom;
        }
    }
    ThetaPhi {
        num_docs: docs,
        num_topics: k_n,
        vocab_size: vocab,
        theta,
        phi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::heron::Responsibility;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Corpus {
        Corpus::from_documents(
            vec![vec![0, 0, 1], vec![1, 2]],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap()
    }

    #[test]
    fn hard_stats_single_doc_example() {
        // 3 tokens all topic 0, one doc, K=2.
        let c = Corpus::from_documents(
            vec![vec![0, 1, 2]],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let stats = compute_hard_stats(&[0, 0, 0], &c, 2).unwrap();
        assert_eq!(stats.doc_counts(0), &[3, 0]);
        assert_eq!(stats.topic_totals(), &[3, 0]);
    }

    #[test]
    fn hard_stats_empty_assignments_error() {
        assert!(compute_hard_stats(&[], &toy(), 2).is_err());
    }

    #[test]
    fn hard_stats_matches_brute_force_tally() {
        // Independent oracle: per-cell counting over the token list.
        let corpus = toy();
        let tokens = corpus.expand_tokens();
        let k_n = 3usize;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let assignments: Vec<u32> = (0..tokens.len())
            .map(|_| rng.gen_range(0..k_n as u32))
            .collect();
        let stats = compute_hard_stats(&assignments, &corpus, k_n).unwrap();
        for k in 0..k_n {
            for d in 0..corpus.num_docs() {
                let expect = tokens
                    .iter()
                    .zip(&assignments)
                    .filter(|(&(doc, _), &z)| doc as usize == d && z as usize == k)
                    .count() as u32;
                assert_eq!(stats.c(k, d), expect);
            }
            for w in 0..corpus.vocab_size() {
                let expect = tokens
                    .iter()
                    .zip(&assignments)
                    .filter(|(&(_, word), &z)| word as usize == w && z as usize == k)
                    .count() as u32;
                assert_eq!(stats.d(k, w), expect);
            }
            let expect = assignments.iter().filter(|&&z| z as usize == k).count() as u32;
            assert_eq!(stats.drow(k), expect);
        }
    }

    #[test]
    fn update_add_then_subtract_is_identity() {
        let corpus = toy();
        let mut stats = compute_hard_stats(&[0, 1, 0, 1, 0], &corpus, 2).unwrap();
        let before = stats.clone();
        stats.update(0, 1, 1, UpdateDir::Add).unwrap();
        stats.update(0, 1, 1, UpdateDir::Subtract).unwrap();
        assert_eq!(stats, before);
    }

    #[test]
    fn update_subtract_on_zero_errors() {
        let mut stats = HardStats::zeros(2, 1, 1);
        assert!(stats.update(0, 0, 0, UpdateDir::Subtract).is_err());
    }

    #[test]
    fn update_sequence_equals_recomputation() {
        // Oracle: recompute from scratch after a random walk of updates.
        let corpus = toy();
        let tokens = corpus.expand_tokens();
        let k_n = 2usize;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut assignments: Vec<u32> = (0..tokens.len())
            .map(|_| rng.gen_range(0..k_n as u32))
            .collect();
        let mut stats = compute_hard_stats(&assignments, &corpus, k_n).unwrap();
        for _ in 0..40 {
            let j = rng.gen_range(0..tokens.len());
            let (doc, word) = tokens[j];
            let new_k = rng.gen_range(0..k_n as u32);
            stats
                .update(
                    doc as usize,
                    word as usize,
                    assignments[j] as usize,
                    UpdateDir::Subtract,
                )
                .unwrap();
            stats
                .update(doc as usize, word as usize, new_k as usize, UpdateDir::Add)
                .unwrap();
            assignments[j] = new_k;
        }
        let recomputed = compute_hard_stats(&assignments, &corpus, k_n).unwrap();
        assert_eq!(stats, recomputed);
    }

    #[test]
    fn soft_stats_single_tuple_example() {
        // One tuple with count 2 and row [0.25, 0.75] -> column [0.5, 1.5].
        let corpus = Corpus::from_tuples(1, vec!["a".into()], vec![(0, 0, 2)]).unwrap();
        let resp = Responsibility::from_rows(vec![vec![0.25, 0.75]]).unwrap();
        let stats = compute_soft_stats(&resp, &corpus).unwrap();
        assert_eq!(stats.doc_counts(0), &[0.5, 1.5]);
        assert_eq!(stats.word_counts(0), &[0.5, 1.5]);
    }

    #[test]
    fn soft_stats_uniform_rows_give_nd_over_k() {
        let corpus = toy();
        let k_n = 4usize;
        let rows = vec![vec![1.0 / k_n as f64; k_n]; corpus.num_tuples()];
        let resp = Responsibility::from_rows(rows).unwrap();
        let stats = compute_soft_stats(&resp, &corpus).unwrap();
        for d in 0..corpus.num_docs() {
            for k in 0..k_n {
                let expect = corpus.doc_len(d) as f64 / k_n as f64;
                assert!((stats.c(k, d) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn soft_stats_matches_dense_oracle() {
        // Oracle: dense weighted tally with explicit loops over tuples.
        let corpus = toy();
        let k_n = 3usize;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows: Vec<Vec<f64>> = (0..corpus.num_tuples())
            .map(|_| {
                let mut r: Vec<f64> = (0..k_n).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let s: f64 = r.iter().sum();
                r.iter_mut().for_each(|x| *x /= s);
                r
            })
            .collect();
        let resp = Responsibility::from_rows(rows.clone()).unwrap();
        let stats = compute_soft_stats(&resp, &corpus).unwrap();
        for k in 0..k_n {
            for d in 0..corpus.num_docs() {
                let mut expect = 0.0;
                for (i, t) in corpus.tuples().iter().enumerate() {
                    if t.doc as usize == d {
                        expect += t.count as f64 * rows[i][k];
                    }
                }
                assert!((stats.c(k, d) - expect).abs() < 1e-12);
            }
            for w in 0..corpus.vocab_size() {
                let mut expect = 0.0;
                for (i, t) in corpus.tuples().iter().enumerate() {
                    if t.word as usize == w {
                        expect += t.count as f64 * rows[i][k];
                    }
                }
                assert!((stats.d(k, w) - expect).abs() < 1e-12);
            }
        }
        // Mass conservation.
        assert!((stats.total_mass() - corpus.total_tokens() as f64).abs() < 1e-9);
    }

    #[test]
    fn soft_stats_rejects_bad_rows() {
        let corpus = toy();
        let mut rows = vec![vec![0.5, 0.5]; corpus.num_tuples()];
        rows[1] = vec![0.9, 0.3];
        let resp = Responsibility::from_rows_unchecked(rows);
        assert!(matches!(
            compute_soft_stats(&resp, &corpus),
            Err(Error::CorruptedResponsibilities { row: 1, .. })
        ));
    }

    #[test]
    fn one_hot_soft_equals_hard() {
        // Hard/soft consistency on the multiplicity-expanded corpus.
        let corpus = toy();
        let k_n = 2usize;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let picks: Vec<usize> = (0..corpus.num_tuples())
            .map(|_| rng.gen_range(0..k_n))
            .collect();
        let rows: Vec<Vec<f64>> = picks
            .iter()
            .map(|&k| {
                let mut r = vec![0.0; k_n];
                r[k] = 1.0;
                r
            })
            .collect();
        let resp = Responsibility::from_rows(rows).unwrap();
        let soft = compute_soft_stats(&resp, &corpus).unwrap();
        // Expand: every instance of tuple i gets topic picks[i].
        let mut assignments = Vec::new();
        for (i, t) in corpus.tuples().iter().enumerate() {
            for _ in 0..t.count {
                assignments.push(picks[i] as u32);
            }
        }
        let hard = compute_hard_stats(&assignments, &corpus, k_n).unwrap();
        for k in 0..k_n {
            for d in 0..corpus.num_docs() {
                assert_eq!(soft.c(k, d), hard.c(k, d) as f64);
            }
            for w in 0..corpus.vocab_size() {
                assert_eq!(soft.d(k, w), hard.d(k, w) as f64);
            }
        }
    }

    #[test]
    fn theta_symmetric_when_counts_zero() {
        let stats = HardStats::zeros(2, 1, 3);
        let tp = estimate_theta_phi(&stats, 0.5, 0.5);
        assert_eq!(tp.theta_row(0), &[0.5, 0.5]);
    }

    #[test]
    fn theta_hand_example() {
        // C column [3,0], N_d=3, alpha=0.5 -> [3.5/4, 0.5/4].
        let corpus = Corpus::from_documents(
            vec![vec![0, 1, 2]],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let stats = compute_hard_stats(&[0, 0, 0], &corpus, 2).unwrap();
        let tp = estimate_theta_phi(&stats, 0.5, 0.5);
        assert!((tp.theta_row(0)[0] - 3.5 / 4.0).abs() < 1e-15);
        assert!((tp.theta_row(0)[1] - 0.5 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn estimates_are_row_stochastic() {
        let corpus = toy();
        let k_n = 3usize;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let assignments: Vec<u32> = (0..corpus.total_tokens())
            .map(|_| rng.gen_range(0..k_n as u32))
            .collect();
        let stats = compute_hard_stats(&assignments, &corpus, k_n).unwrap();
        let tp = estimate_theta_phi(&stats, 0.3, 0.2);
        for d in 0..corpus.num_docs() {
            let s: f64 = tp.theta_row(d).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(tp.theta_row(d).iter().all(|&x| x > 0.0));
        }
        for k in 0..k_n {
            let s: f64 = tp.phi_row(k).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn soft_stats_csv_roundtrip() {
        let corpus = toy();
        let rows = vec![vec![0.25, 0.75]; corpus.num_tuples()];
        let resp = Responsibility::from_rows(rows).unwrap();
        let stats = compute_soft_stats(&resp, &corpus).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("soft.csv");
        stats.write_csv(&path).unwrap();
        let back = SoftStats::read_csv(&path).unwrap();
        assert_eq!(back, stats);
    }

    #[test]
    fn hard_stats_csv_roundtrip() {
        let corpus = toy();
        let stats = compute_hard_stats(&[0, 1, 0, 1, 0], &corpus, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hard.csv");
        stats.write_csv(&path).unwrap();
        let back = HardStats::read_csv(&path).unwrap();
        assert_eq!(back, stats);
    }
}
