//! Sampling backends: the sequential collapsed Gibbs sampler and the
//! Poisson-replicated state-augmentation sampler, plus the portable
//! deterministic Poisson sampler they share.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::posterior::{evaluate_posterior, normalize, Model, ModelConfig, TupleContext};
use crate::stats::{compute_hard_stats, HardStats, SoftStats, UpdateDir};

/// Seeded counter-based RNG: the same seed and call sequence always produce
/// identical draws, independent of platform.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        self.rng.gen()
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

// ---------------------------------------------------------------------------
// Poisson sampling
// ---------------------------------------------------------------------------

/// Draw from Poisson(lambda). Knuth's multiplication method below
/// `PTRS_CUTOFF`, transformed rejection (PTRS) above it.
pub fn poisson_draw<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    debug_assert!(lambda >= 0.0 && lambda.is_finite());
    if lambda == 0.0 {
        0
    } else if lambda < PTRS_CUTOFF {
        poisson_knuth(lambda, rng)
    } else {
        poisson_ptrs(lambda, rng)
    }
}

const PTRS_CUTOFF: f64 = 30.0;

fn poisson_knuth<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    let threshold = (-lambda).exp();
    let mut k = 0u64;
    let mut prod = 1.0f64;
    loop {
        prod *= rng.gen::<f64>();
        if prod <= threshold {
            return k;
        }
        k += 1;
    }
}

/// Hörmann's transformed rejection with squeeze (PTRS), valid for
/// lambda >= ~10; used here from `PTRS_CUTOFF` upward.
fn poisson_ptrs<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    let log_lambda = lambda.ln();
    let b = 0.931 + 2.53 * lambda.sqrt();
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.gen::<f64>() - 0.5;
        let v = rng.gen::<f64>();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= k * log_lambda - lambda - ln_gamma(k + 1.0)
        {
            return k as u64;
        }
    }
}

/// Lanczos approximation (g = 7, n = 9) of ln Gamma(x) for x > 0.
#[allow(clippy::excessive_precision)]
pub(crate) fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        pi.ln() - (pi * x).sin().abs().ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let t = x + 7.5;
        let mut acc = COEF[0];
        for (i, &c) in COEF.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

// ---------------------------------------------------------------------------
// Collapsed Gibbs sampling
// ---------------------------------------------------------------------------

/// State of a collapsed Gibbs run: one topic per token instance plus the
/// incrementally maintained counts.
#[derive(Debug, Clone)]
pub struct CgsState {
    pub stats: HardStats,
    pub assignments: Vec<u32>,
    tokens: Vec<(u32, u32)>,
}

impl CgsState {
    pub fn tokens(&self) -> &[(u32, u32)] {
        &self.tokens
    }
}

/// Assign every token a uniformly random topic and tally the counts.
pub fn cgs_init(corpus: &Corpus, cfg: &ModelConfig, rng: &mut RngState) -> Result<CgsState> {
    cfg.validate()?;
    require_labels(corpus, cfg)?;
    let tokens = corpus.expand_tokens();
    let assignments: Vec<u32> = (0..tokens.len())
        .map(|_| rng.gen_range(0..cfg.num_topics as u32))
        .collect();
    let stats = compute_hard_stats(&assignments, corpus, cfg.num_topics)?;
    Ok(CgsState {
        stats,
        assignments,
        tokens,
    })
}

fn require_labels(corpus: &Corpus, cfg: &ModelConfig) -> Result<()> {
    if cfg.model == Model::Slda && corpus.labels().is_none() {
        return Err(Error::InvalidConfig(
            "slda requires a corpus with labels".into(),
        ));
    }
    Ok(())
}

/// One full sequential sweep: for each token, remove its contribution,
/// evaluate the model posterior on the leave-one-out counts, resample by
/// inverse CDF with a single uniform, and add the new assignment back.
pub fn cgs_sweep(
    state: &mut CgsState,
    corpus: &Corpus,
    cfg: &ModelConfig,
    rng: &mut RngState,
) -> Result<()> {
    let k_n = cfg.num_topics;
    let mut g = vec![0.0; k_n];
    let mut doc_f = vec![0.0; k_n];
    let mut word_f = vec![0.0; k_n];
    let mut totals_f = vec![0.0; k_n];
    let mut neighbor_sum = vec![0.0; k_n];
    let mut cached_doc = usize::MAX;
    let labels = corpus.labels();

    for j in 0..state.tokens.len() {
        let (doc, word) = state.tokens[j];
        let (d, w) = (doc as usize, word as usize);
        let old = state.assignments[j] as usize;
        state.stats.update(d, w, old, UpdateDir::Subtract)?;

        for k in 0..k_n {
            doc_f[k] = state.stats.c(k, d) as f64;
            word_f[k] = state.stats.d(k, w) as f64;
            totals_f[k] = state.stats.drow(k) as f64;
        }
        // Neighbor proportions only involve other documents' counts, so the
        // cache stays exact for the whole run of tokens in document d.
        if cfg.model == Model::Rtm && d != cached_doc {
            fill_neighbor_sums_hard(&state.stats, corpus, d, &mut neighbor_sum);
            cached_doc = d;
        }
        let ctx = TupleContext {
            doc_counts: &doc_f,
            word_counts: &word_f,
            topic_totals: &totals_f,
            vocab_size: corpus.vocab_size(),
            doc_len: corpus.doc_len(d) as f64,
            neighbor_sum: (cfg.model == Model::Rtm).then_some(neighbor_sum.as_slice()),
            label: labels.map(|l| l[d]),
        };
        evaluate_posterior(&ctx, cfg, &mut g);

        let total: f64 = g.iter().sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::DegeneratePosterior(format!(
                "token {j} (doc {d}, word {w}) has posterior mass {total}"
            )));
        }
        let threshold = rng.next_f64() * total;
        let mut cum = 0.0;
        let mut new_k = k_n - 1;
        for (k, &gk) in g.iter().enumerate() {
            cum += gk;
            if threshold < cum {
                new_k = k;
                break;
            }
        }
        state.assignments[j] = new_k as u32;
        state.stats.update(d, w, new_k, UpdateDir::Add)?;
    }
    Ok(())
}

fn fill_neighbor_sums_hard(stats: &HardStats, corpus: &Corpus, d: usize, out: &mut [f64]) {
    out.fill(0.0);
    for &nb in corpus.neighbors(d) {
        let nd = corpus.doc_len(nb as usize) as f64;
        if nd == 0.0 {
            continue;
        }
        let counts = stats.doc_counts(nb as usize);
        for (o, &c) in out.iter_mut().zip(counts) {
            *o += c as f64 / nd;
        }
    }
}

fn fill_neighbor_sums_soft(stats: &SoftStats, corpus: &Corpus, d: usize, out: &mut [f64]) {
    out.fill(0.0);
    for &nb in corpus.neighbors(d) {
        let nd = corpus.doc_len(nb as usize) as f64;
        if nd == 0.0 {
            continue;
        }
        let counts = stats.doc_counts(nb as usize);
        for (o, &c) in out.iter_mut().zip(counts) {
            *o += c / nd;
        }
    }
}

// ---------------------------------------------------------------------------
// State augmentation (SAME)
// ---------------------------------------------------------------------------

/// Replication settings for the state-augmentation sampler.
#[derive(Debug, Clone, Copy)]
pub struct SameConfig {
    /// Number of replications m of the latent state.
    pub replications: u32,
    /// Update all tokens against statistics frozen at the sweep start,
    /// enabling parallelism. This is an approximation of the sequential
    /// sweep and is flagged in run metadata.
    pub frozen_parallel: bool,
}

impl Default for SameConfig {
    fn default() -> Self {
        SameConfig {
            replications: 100,
            frozen_parallel: false,
        }
    }
}

/// State of a replicated-sampling run: soft counts plus each token's
/// current update vector z'_j(.)/m.
#[derive(Debug, Clone)]
pub struct SameState {
    pub soft: SoftStats,
    updates: Vec<f64>,
    tokens: Vec<(u32, u32)>,
    num_topics: usize,
}

impl SameState {
    pub fn tokens(&self) -> &[(u32, u32)] {
        &self.tokens
    }

    /// Current update vector of one token.
    pub fn update_row(&self, j: usize) -> &[f64] {
        &self.updates[j * self.num_topics..(j + 1) * self.num_topics]
    }
}

/// Initialize every token on a uniformly random topic (a one-hot update
/// vector) and tally the soft counts.
pub fn same_init(corpus: &Corpus, cfg: &ModelConfig, rng: &mut RngState) -> Result<SameState> {
    cfg.validate()?;
    require_labels(corpus, cfg)?;
    let k_n = cfg.num_topics;
    let tokens = corpus.expand_tokens();
    let mut updates = vec![0.0; tokens.len() * k_n];
    let mut soft = SoftStats::zeros(k_n, corpus.num_docs(), corpus.vocab_size());
    for (j, &(doc, word)) in tokens.iter().enumerate() {
        let k = rng.gen_range(0..k_n);
        updates[j * k_n + k] = 1.0;
        soft.add_scaled(
            doc as usize,
            word as usize,
            1.0,
            &updates[j * k_n..(j + 1) * k_n],
        );
    }
    Ok(SameState {
        soft,
        updates,
        tokens,
        num_topics: k_n,
    })
}

/// One sweep of the replicated sampler: per token, remove its previous
/// update vector, evaluate the posterior p on the leave-one-out counts,
/// draw z'(k) ~ Poisson(m p_k) per topic, and deposit z'(k)/m.
pub fn same_sweep(
    state: &mut SameState,
    corpus: &Corpus,
    cfg: &ModelConfig,
    same: &SameConfig,
    rng: &mut RngState,
) -> Result<()> {
    if same.replications == 0 {
        return Err(Error::InvalidConfig("replications must be >= 1".into()));
    }
    if same.frozen_parallel {
        same_sweep_frozen(state, corpus, cfg, same, rng)
    } else {
        same_sweep_sequential(state, corpus, cfg, same, rng)
    }
}

fn same_sweep_sequential(
    state: &mut SameState,
    corpus: &Corpus,
    cfg: &ModelConfig,
    same: &SameConfig,
    rng: &mut RngState,
) -> Result<()> {
    let k_n = cfg.num_topics;
    let m = same.replications as f64;
    let mut g = vec![0.0; k_n];
    let mut doc_f = vec![0.0; k_n];
    let mut word_f = vec![0.0; k_n];
    let mut totals_f = vec![0.0; k_n];
    let mut neighbor_sum = vec![0.0; k_n];
    let mut cached_doc = usize::MAX;
    let labels = corpus.labels();

    for j in 0..state.tokens.len() {
        let (doc, word) = state.tokens[j];
        let (d, w) = (doc as usize, word as usize);
        let row_range = j * k_n..(j + 1) * k_n;
        // Remove this token's previous contribution (leave-one-out).
        {
            let row = &state.updates[row_range.clone()];
            state.soft.sub_scaled(d, w, 1.0, row);
        }
        for k in 0..k_n {
            doc_f[k] = state.soft.c(k, d).max(0.0);
            word_f[k] = state.soft.d(k, w).max(0.0);
            totals_f[k] = state.soft.drow(k).max(0.0);
        }
        if cfg.model == Model::Rtm && d != cached_doc {
            fill_neighbor_sums_soft(&state.soft, corpus, d, &mut neighbor_sum);
            cached_doc = d;
        }
        let ctx = TupleContext {
            doc_counts: &doc_f,
            word_counts: &word_f,
            topic_totals: &totals_f,
            vocab_size: corpus.vocab_size(),
            doc_len: corpus.doc_len(d) as f64,
            neighbor_sum: (cfg.model == Model::Rtm).then_some(neighbor_sum.as_slice()),
            label: labels.map(|l| l[d]),
        };
        evaluate_posterior(&ctx, cfg, &mut g);
        normalize(&mut g)
            .map_err(|_| Error::DegeneratePosterior(format!("token {j} (doc {d}, word {w})")))?;
        {
            let row = &mut state.updates[row_range];
            for k in 0..k_n {
                row[k] = poisson_draw(m * g[k], rng) as f64 / m;
            }
        }
        let row = &state.updates[j * k_n..(j + 1) * k_n];
        state.soft.add_scaled(d, w, 1.0, row);
    }
    Ok(())
}

/// Base chunk size for the frozen-snapshot parallel sweep. The effective
/// size grows with the token count (capping the number of partial-stat
/// matrices) but never depends on the thread pool, so results are
/// identical for any pool.
const PAR_CHUNK: usize = 4096;

fn frozen_chunk_size(num_tokens: usize) -> usize {
    PAR_CHUNK.max(num_tokens.div_ceil(16))
}

fn same_sweep_frozen(
    state: &mut SameState,
    corpus: &Corpus,
    cfg: &ModelConfig,
    same: &SameConfig,
    rng: &mut RngState,
) -> Result<()> {
    let k_n = cfg.num_topics;
    let m = same.replications as f64;
    let snapshot = state.soft.clone();
    let labels = corpus.labels();
    // Per-topic word-total reciprocals are constant under a frozen snapshot.
    let vbeta = corpus.vocab_size() as f64 * cfg.beta;
    let inv_totals: Vec<f64> = (0..k_n)
        .map(|k| 1.0 / (snapshot.drow(k).max(0.0) + vbeta))
        .collect();
    let neighbor_sums: Option<Vec<f64>> = (cfg.model == Model::Rtm).then(|| {
        let mut all = vec![0.0; corpus.num_docs() * k_n];
        for d in 0..corpus.num_docs() {
            let mut buf = vec![0.0; k_n];
            fill_neighbor_sums_soft(&snapshot, corpus, d, &mut buf);
            all[d * k_n..(d + 1) * k_n].copy_from_slice(&buf);
        }
        all
    });

    // One fresh stream per token, all derived from a single per-sweep seed,
    // so draws do not depend on chunking or thread schedule.
    let sweep_seed = rng.next_u64();
    let template = ChaCha8Rng::seed_from_u64(sweep_seed);

    let tokens = &state.tokens;
    let chunk = frozen_chunk_size(tokens.len());
    let results: Result<Vec<SoftStats>> = state
        .updates
        .par_chunks_mut(chunk * k_n)
        .enumerate()
        .map(|(chunk_idx, rows)| {
            let mut partial = SoftStats::zeros(k_n, corpus.num_docs(), corpus.vocab_size());
            let mut g = vec![0.0; k_n];
            let mut doc_f = vec![0.0; k_n];
            let mut word_f = vec![0.0; k_n];
            let mut totals_f = vec![0.0; k_n];
            let mut rng_j = template.clone();
            for (local, row) in rows.chunks_mut(k_n).enumerate() {
                let j = chunk_idx * chunk + local;
                let (doc, word) = tokens[j];
                let (d, w) = (doc as usize, word as usize);
                for k in 0..k_n {
                    doc_f[k] = (snapshot.c(k, d) - row[k]).max(0.0);
                    word_f[k] = (snapshot.d(k, w) - row[k]).max(0.0);
                    totals_f[k] = (snapshot.drow(k) - row[k]).max(0.0);
                }
                let ctx = TupleContext {
                    doc_counts: &doc_f,
                    word_counts: &word_f,
                    topic_totals: &totals_f,
                    vocab_size: corpus.vocab_size(),
                    doc_len: corpus.doc_len(d) as f64,
                    neighbor_sum: neighbor_sums.as_ref().map(|s| &s[d * k_n..(d + 1) * k_n]),
                    label: labels.map(|l| l[d]),
                };
                // Inline LDA fast path with precomputed reciprocals; the
                // other models go through the shared kernel.
                if cfg.model == Model::Lda {
                    for k in 0..k_n {
                        g[k] = (doc_f[k] + cfg.alpha) * (word_f[k] + cfg.beta) * inv_totals[k];
                    }
                } else {
                    evaluate_posterior(&ctx, cfg, &mut g);
                }
                normalize(&mut g).map_err(|_| {
                    Error::DegeneratePosterior(format!("token {j} (doc {d}, word {w})"))
                })?;
                rng_j.set_stream(j as u64);
                rng_j.set_word_pos(0);
                for k in 0..k_n {
                    row[k] = poisson_draw(m * g[k], &mut rng_j) as f64 / m;
                }
                partial.add_scaled(d, w, 1.0, row);
            }
            Ok(partial)
        })
        .collect();

    let mut fresh = SoftStats::zeros(k_n, corpus.num_docs(), corpus.vocab_size());
    for partial in results? {
        fresh.merge(&partial);
    }
    state.soft = fresh;
    Ok(())
}
