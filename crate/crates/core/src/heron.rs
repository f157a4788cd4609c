//! Deterministic fixed-point inference over distinct document-word tuples.
//!
//! Driving the replication count of the state-augmentation sampler to
//! infinity turns the per-token update into its expectation: each tuple is
//! assigned its full conditional probability vector instead of a sample.
//! At convergence those vectors solve a fixed-point system, and because
//! repeated tuples share an equation, each distinct tuple is solved once,
//! weighted by its multiplicity. Updates within an iteration read a frozen
//! snapshot of the statistics, so they can run on any number of workers
//! and reduce deterministically at the iteration barrier.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::gibbs::RngState;
use crate::posterior::{evaluate_posterior, normalize, Model, ModelConfig, TupleContext};
use crate::stats::{estimate_theta_phi, SoftStats, ThetaPhi};

/// Per-distinct-tuple topic probability rows: the unknowns of the
/// fixed-point system. Row `i` corresponds to the corpus's `i`-th tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibility {
    rows: Vec<f64>,
    num_topics: usize,
}

impl Responsibility {
    /// Build from explicit rows, validating that each lies on the simplex.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let resp = Self::from_rows_unchecked(rows);
        for i in 0..resp.num_rows() {
            let row = resp.row(i);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&x| x < 0.0) {
                return Err(Error::CorruptedResponsibilities { row: i, sum });
            }
        }
        Ok(resp)
    }

    pub fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Self {
        let num_topics = rows.first().map_or(0, Vec::len);
        Responsibility {
            rows: rows.into_iter().flatten().collect(),
            num_topics,
        }
    }

    pub(crate) fn from_flat(rows: Vec<f64>, num_topics: usize) -> Self {
        Responsibility { rows, num_topics }
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len().checked_div(self.num_topics).unwrap_or(0)
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.num_topics..(i + 1) * self.num_topics]
    }

    pub fn rows_flat(&self) -> &[f64] {
        &self.rows
    }
}

/// Draw one uniform-simplex row per distinct tuple (symmetric Dirichlet
/// with unit concentration), deterministically from the seed.
pub fn init_responsibilities(
    corpus: &Corpus,
    num_topics: usize,
    rng: &mut RngState,
) -> Responsibility {
    let mut rows = vec![0.0; corpus.num_tuples() * num_topics];
    for row in rows.chunks_mut(num_topics) {
        let mut sum = 0.0;
        for x in row.iter_mut() {
            // Exponential(1) draws normalized to the simplex.
            let u: f64 = rng.next_f64();
            *x = -(1.0 - u).ln();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    Responsibility { rows, num_topics }
}

/// How batches interact with the statistics snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// Statistics frozen for the whole iteration; batch boundaries affect
    /// nothing but work partitioning.
    Jacobi,
    /// Statistics refreshed after each batch.
    Minibatch,
}

impl std::str::FromStr for BatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jacobi" => Ok(BatchMode::Jacobi),
            "minibatch" => Ok(BatchMode::Minibatch),
            other => Err(Error::InvalidConfig(format!(
                "unknown batch mode `{other}` (expected jacobi or minibatch)"
            ))),
        }
    }
}

/// Decay schedule rho_t = (t + tau)^(-kappa) for the running theta average.
#[derive(Debug, Clone, Copy)]
pub struct MovingAverageSchedule {
    pub tau: f64,
    pub kappa: f64,
}

impl Default for MovingAverageSchedule {
    fn default() -> Self {
        MovingAverageSchedule {
            tau: 1.0,
            kappa: 0.6,
        }
    }
}

impl MovingAverageSchedule {
    pub fn rho(&self, t: u64) -> f64 {
        (t as f64 + self.tau).powf(-self.kappa)
    }
}

/// Fixed-point solver settings.
#[derive(Debug, Clone)]
pub struct HeronConfig {
    pub max_iters: usize,
    /// Convergence threshold on the mean KL divergence between successive
    /// theta estimates.
    pub tolerance: f64,
    pub batches: usize,
    pub batch_mode: BatchMode,
    pub moving_average: Option<MovingAverageSchedule>,
    /// Damping factor in [0,1): new = (1-d)*update + d*old.
    pub damping: f64,
    /// Seed for responsibility initialization.
    pub seed: u64,
    /// Worker threads (0 = rayon default).
    pub threads: usize,
    /// Solve one row per token instance instead of one per distinct tuple.
    /// Only useful for validating and benchmarking the deduplicated path.
    pub expand_duplicates: bool,
}

impl Default for HeronConfig {
    fn default() -> Self {
        HeronConfig {
            max_iters: 1000,
            tolerance: 1e-5,
            batches: 1,
            batch_mode: BatchMode::Jacobi,
            moving_average: None,
            damping: 0.0,
            seed: 0,
            threads: 0,
            expand_duplicates: false,
        }
    }
}

impl HeronConfig {
    pub fn validate(&self, num_rows: usize) -> Result<()> {
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidConfig("tolerance must be > 0".into()));
        }
        if self.batches == 0 || self.batches > num_rows {
            return Err(Error::InvalidConfig(format!(
                "batches must be in 1..={num_rows} (distinct tuple count), got {}",
                self.batches
            )));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidConfig(format!(
                "damping must be in [0,1), got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

/// One iteration's convergence record.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Mean KL divergence between this iteration's theta and the previous.
    pub dkl: f64,
    /// Max over tuples of the L1 change of the responsibility row.
    pub residual: f64,
    pub millis: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
}

impl ConvergenceTrace {
    /// Render as CSV. Timing is optional so traces can be compared
    /// byte-for-byte across runs; wall-clock lives in the run manifest.
    pub fn to_csv(&self, include_millis: bool) -> String {
        let mut out = String::new();
        if include_millis {
            out.push_str("iteration,dkl,residual,millis\n");
        } else {
            out.push_str("iteration,dkl,residual\n");
        }
        for r in &self.rows {
            if include_millis {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    r.iteration, r.dkl, r.residual, r.millis
                ));
            } else {
                out.push_str(&format!("{},{},{}\n", r.iteration, r.dkl, r.residual));
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, include_millis: bool) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv(include_millis)).map_err(|e| Error::io(path, e))
    }
}

/// Mean-over-documents KL divergence between successive theta estimates.
/// Returns `(converged, dkl)`.
pub fn check_convergence(
    theta_prev: &[f64],
    theta_cur: &[f64],
    num_topics: usize,
    tolerance: f64,
) -> Result<(bool, f64)> {
    if theta_prev.len() != theta_cur.len()
        || num_topics == 0
        || !theta_cur.len().is_multiple_of(num_topics)
    {
        return Err(Error::ShapeMismatch(format!(
            "theta shapes {} vs {} (K={num_topics})",
            theta_prev.len(),
            theta_cur.len()
        )));
    }
    let num_docs = theta_cur.len() / num_topics;
    let mut total = 0.0;
    for d in 0..num_docs {
        let cur = &theta_cur[d * num_topics..(d + 1) * num_topics];
        let prev = &theta_prev[d * num_topics..(d + 1) * num_topics];
        for k in 0..num_topics {
            if cur[k] > 0.0 {
                total += cur[k] * (cur[k] / prev[k]).ln();
            }
        }
    }
    // Gibbs' inequality guarantees nonnegativity; clamp float residue.
    let dkl = (total / num_docs as f64).max(0.0);
    Ok((dkl < tolerance, dkl))
}

/// Blend a batch theta estimate into the running average with weight
/// rho_t, renormalizing each document row.
pub fn moving_average_theta(
    running: &mut [f64],
    batch: &[f64],
    num_topics: usize,
    step: u64,
    schedule: &MovingAverageSchedule,
) {
    let rho = schedule.rho(step).min(1.0);
    for (r, b) in running.iter_mut().zip(batch) {
        *r = (1.0 - rho) * *r + rho * b;
    }
    for row in running.chunks_mut(num_topics) {
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|x| *x /= sum);
        }
    }
}

/// Evaluate the model posterior for one tuple on leave-one-out soft counts
/// (one soft copy of `x_old` subtracted, negatives clamped to zero) and
/// normalize into `out`.
#[allow(clippy::too_many_arguments)]
pub fn heron_update_tuple(
    doc: usize,
    word: usize,
    x_old: &[f64],
    snapshot: &SoftStats,
    corpus: &Corpus,
    cfg: &ModelConfig,
    neighbor_sum: Option<&[f64]>,
    out: &mut [f64],
) -> Result<()> {
    let k_n = cfg.num_topics;
    let mut doc_f = vec![0.0; k_n];
    let mut word_f = vec![0.0; k_n];
    let mut totals_f = vec![0.0; k_n];
    for k in 0..k_n {
        doc_f[k] = (snapshot.c(k, doc) - x_old[k]).max(0.0);
        word_f[k] = (snapshot.d(k, word) - x_old[k]).max(0.0);
        totals_f[k] = (snapshot.drow(k) - x_old[k]).max(0.0);
    }
    let ctx = TupleContext {
        doc_counts: &doc_f,
        word_counts: &word_f,
        topic_totals: &totals_f,
        vocab_size: corpus.vocab_size(),
        doc_len: corpus.doc_len(doc) as f64,
        neighbor_sum,
        label: corpus.labels().map(|l| l[doc]),
    };
    evaluate_posterior(&ctx, cfg, out);
    normalize(out).map_err(|_| {
        Error::DegeneratePosterior(format!("tuple (doc {doc}, word {word}) after clamping"))
    })
}

/// Work item: one fixed-point row. Weight is the tuple multiplicity in the
/// deduplicated mode and 1 in the expanded mode.
#[derive(Debug, Clone, Copy)]
struct WorkRow {
    doc: u32,
    word: u32,
    weight: f64,
}

/// Outcome of [`HeronEngine::run`].
#[derive(Debug, Clone, Copy)]
pub struct RunSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_dkl: f64,
    pub final_residual: f64,
}

/// Fixed chunk size for parallel sweeps; independent of the thread count
/// so reductions group identically on any pool.
const PAR_CHUNK: usize = 2048;

/// Cap on the number of partial statistics built during a reduction.
/// Each partial is a full K x (docs + vocab) matrix, so the barrier cost
/// is proportional to this count, not to the row count.
const MAX_REDUCE_CHUNKS: usize = 16;

/// Deterministic reduction chunk size: depends only on the row count,
/// never on the thread pool or the batch partition.
fn reduce_chunk_size(num_rows: usize) -> usize {
    PAR_CHUNK.max(num_rows.div_ceil(MAX_REDUCE_CHUNKS))
}

pub struct HeronEngine {
    cfg: ModelConfig,
    hcfg: HeronConfig,
    rows: Vec<WorkRow>,
    /// Flattened responsibility rows, aligned with `rows`.
    x: Vec<f64>,
    scratch: Vec<f64>,
    soft: SoftStats,
    theta_prev: Vec<f64>,
    theta_running: Option<Vec<f64>>,
    ma_step: u64,
    iteration: usize,
    trace: ConvergenceTrace,
    pool: rayon::ThreadPool,
    num_docs: usize,
    vocab_size: usize,
}

impl HeronEngine {
    pub fn new(corpus: &Corpus, cfg: ModelConfig, hcfg: HeronConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.model == Model::Slda && corpus.labels().is_none() {
            return Err(Error::InvalidConfig(
                "slda requires a corpus with labels".into(),
            ));
        }
        let mut rng = RngState::new(hcfg.seed);
        let init = init_responsibilities(corpus, cfg.num_topics, &mut rng);
        Self::with_responsibilities(corpus, cfg, hcfg, init)
    }

    /// Build with explicit initial responsibilities (one row per distinct
    /// tuple; in expanded mode every instance copies its tuple's row).
    pub fn with_responsibilities(
        corpus: &Corpus,
        cfg: ModelConfig,
        hcfg: HeronConfig,
        init: Responsibility,
    ) -> Result<Self> {
        let k_n = cfg.num_topics;
        if init.num_rows() != corpus.num_tuples() || init.num_topics() != k_n {
            return Err(Error::ShapeMismatch(format!(
                "{} responsibility rows (K={}) for {} tuples (K={k_n})",
                init.num_rows(),
                init.num_topics(),
                corpus.num_tuples()
            )));
        }
        let mut rows = Vec::new();
        let mut x = Vec::new();
        for (i, t) in corpus.tuples().iter().enumerate() {
            if hcfg.expand_duplicates {
                for _ in 0..t.count {
                    rows.push(WorkRow {
                        doc: t.doc,
                        word: t.word,
                        weight: 1.0,
                    });
                    x.extend_from_slice(init.row(i));
                }
            } else {
                rows.push(WorkRow {
                    doc: t.doc,
                    word: t.word,
                    weight: t.count as f64,
                });
                x.extend_from_slice(init.row(i));
            }
        }
        hcfg.validate(rows.len())?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(hcfg.threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        let soft = recompute_soft(
            &rows,
            &x,
            k_n,
            corpus.num_docs(),
            corpus.vocab_size(),
            &pool,
        );
        let theta_prev = estimate_theta(&soft, cfg.alpha);
        let scratch = x.clone();
        Ok(HeronEngine {
            cfg,
            hcfg,
            rows,
            x,
            scratch,
            soft,
            theta_prev,
            theta_running: None,
            ma_step: 0,
            iteration: 0,
            trace: ConvergenceTrace::default(),
            pool,
            num_docs: corpus.num_docs(),
            vocab_size: corpus.vocab_size(),
        })
    }

    pub fn trace(&self) -> &ConvergenceTrace {
        &self.trace
    }

    pub fn soft_stats(&self) -> &SoftStats {
        &self.soft
    }

    pub fn responsibilities(&self) -> Responsibility {
        Responsibility::from_flat(self.x.clone(), self.cfg.num_topics)
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Run one full iteration over all rows and append a trace row.
    pub fn iterate(&mut self, corpus: &Corpus) -> Result<TraceRow> {
        let started = Instant::now();
        let k_n = self.cfg.num_topics;
        let num_rows = self.rows.len();
        let batch_bounds = batch_bounds(num_rows, self.hcfg.batches);

        let mut residual = 0.0f64;
        for (batch_idx, &(lo, hi)) in batch_bounds.iter().enumerate() {
            let neighbor_sums = self.neighbor_sums(corpus);
            let batch_residual = {
                let rows = &self.rows[lo..hi];
                let x_old = &self.x[lo * k_n..hi * k_n];
                let x_new = &mut self.scratch[lo * k_n..hi * k_n];
                let soft = &self.soft;
                let cfg = &self.cfg;
                let labels = corpus.labels();
                let doc_lens = corpus.doc_lengths();
                let vocab_size = self.vocab_size;
                self.pool.install(|| {
                    rows.par_chunks(PAR_CHUNK)
                        .zip(x_old.par_chunks(PAR_CHUNK * k_n))
                        .zip(x_new.par_chunks_mut(PAR_CHUNK * k_n))
                        .map(|((rows, olds), news)| {
                            update_chunk(
                                rows,
                                olds,
                                news,
                                soft,
                                cfg,
                                labels,
                                doc_lens,
                                vocab_size,
                                neighbor_sums.as_deref(),
                            )
                        })
                        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
                })?
            };
            residual = residual.max(batch_residual);

            // Fold the raw update into the kept state, with damping. The
            // whole-iteration undamped case swaps buffers instead of
            // copying 2 x rows x K floats.
            let gamma = self.hcfg.damping;
            if gamma == 0.0 && batch_bounds.len() == 1 {
                std::mem::swap(&mut self.x, &mut self.scratch);
            } else {
                let x_old = &mut self.x[lo * k_n..hi * k_n];
                let x_new = &self.scratch[lo * k_n..hi * k_n];
                if gamma == 0.0 {
                    x_old.copy_from_slice(x_new);
                } else {
                    for (o, &n) in x_old.iter_mut().zip(x_new) {
                        *o = (1.0 - gamma) * n + gamma * *o;
                    }
                }
            }

            if self.hcfg.batch_mode == BatchMode::Minibatch {
                // Refresh statistics with this batch's delta before the
                // next batch reads them.
                self.soft = recompute_soft(
                    &self.rows,
                    &self.x,
                    k_n,
                    self.num_docs,
                    self.vocab_size,
                    &self.pool,
                );
                if self.hcfg.moving_average.is_some() {
                    let theta_batch = estimate_theta(&self.soft, self.cfg.alpha);
                    self.fold_moving_average(&theta_batch);
                }
            }
            let _ = batch_idx;
        }

        // Iteration barrier: rebuild statistics from scratch in a fixed
        // order, independent of the batch partition.
        self.soft = recompute_soft(
            &self.rows,
            &self.x,
            k_n,
            self.num_docs,
            self.vocab_size,
            &self.pool,
        );

        let theta_cur = estimate_theta(&self.soft, self.cfg.alpha);
        if self.hcfg.batch_mode == BatchMode::Jacobi && self.hcfg.moving_average.is_some() {
            self.fold_moving_average(&theta_cur);
        }
        let (_, dkl) = check_convergence(&self.theta_prev, &theta_cur, k_n, self.hcfg.tolerance)?;
        self.theta_prev = theta_cur;
        self.iteration += 1;
        let row = TraceRow {
            iteration: self.iteration,
            dkl,
            residual,
            millis: started.elapsed().as_secs_f64() * 1e3,
        };
        self.trace.rows.push(row);
        Ok(row)
    }

    fn fold_moving_average(&mut self, theta_batch: &[f64]) {
        let schedule = self.hcfg.moving_average.unwrap_or_default();
        match &mut self.theta_running {
            None => self.theta_running = Some(theta_batch.to_vec()),
            Some(running) => {
                moving_average_theta(
                    running,
                    theta_batch,
                    self.cfg.num_topics,
                    self.ma_step,
                    &schedule,
                );
            }
        }
        self.ma_step += 1;
    }

    /// Iterate until the KL criterion drops below tolerance or the
    /// iteration budget is exhausted.
    pub fn run(&mut self, corpus: &Corpus) -> Result<RunSummary> {
        let mut last = TraceRow {
            iteration: 0,
            dkl: f64::INFINITY,
            residual: f64::INFINITY,
            millis: 0.0,
        };
        let mut converged = false;
        for _ in 0..self.hcfg.max_iters {
            last = self.iterate(corpus)?;
            if last.dkl < self.hcfg.tolerance {
                converged = true;
                break;
            }
        }
        Ok(RunSummary {
            iterations: self.iteration,
            converged,
            final_dkl: last.dkl,
            final_residual: last.residual,
        })
    }

    /// Current theta/phi estimates. Theta is the moving average when that
    /// mode is on, otherwise the posterior mean from the soft counts.
    pub fn theta_phi(&self) -> ThetaPhi {
        let mut tp = estimate_theta_phi(&self.soft, self.cfg.alpha, self.cfg.beta);
        if let Some(running) = &self.theta_running {
            tp.theta_mut().copy_from_slice(running);
        }
        tp
    }

    fn neighbor_sums(&self, corpus: &Corpus) -> Option<Vec<f64>> {
        (self.cfg.model == Model::Rtm).then(|| {
            let k_n = self.cfg.num_topics;
            let mut all = vec![0.0; self.num_docs * k_n];
            for d in 0..self.num_docs {
                let out = &mut all[d * k_n..(d + 1) * k_n];
                for &nb in corpus.neighbors(d) {
                    let nd = corpus.doc_len(nb as usize) as f64;
                    if nd == 0.0 {
                        continue;
                    }
                    let counts = self.soft.doc_counts(nb as usize);
                    for (o, &c) in out.iter_mut().zip(counts) {
                        *o += c / nd;
                    }
                }
            }
            all
        })
    }

    /// Write responsibilities and statistics for resume.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.soft.write_csv(dir.join("checkpoint_stats.csv"))?;
        let path = dir.join("checkpoint_resp.csv");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        (|| -> std::io::Result<()> {
            writeln!(
                w,
                "resp,{},{},{}",
                self.cfg.num_topics,
                self.rows.len(),
                self.iteration
            )?;
            for (i, r) in self.rows.iter().enumerate() {
                write!(w, "{},{},{}", r.doc, r.word, r.weight)?;
                for &v in &self.x[i * self.cfg.num_topics..(i + 1) * self.cfg.num_topics] {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
            w.flush()
        })()
        .map_err(|e| Error::io(&path, e))
    }

    /// Rebuild an engine from a checkpoint directory.
    pub fn resume(
        corpus: &Corpus,
        cfg: ModelConfig,
        hcfg: HeronConfig,
        dir: impl AsRef<Path>,
    ) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("checkpoint_resp.csv");
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("empty responsibility checkpoint".into()))?
            .map_err(|e| Error::io(&path, e))?;
        let fields: Vec<&str> = header.trim().split(',').collect();
        if fields.len() != 4 || fields[0] != "resp" {
            return Err(Error::Checkpoint(format!(
                "bad checkpoint header `{header}`"
            )));
        }
        let k_n: usize = fields[1]
            .parse()
            .map_err(|_| Error::Checkpoint("bad checkpoint K".into()))?;
        let num_rows: usize = fields[2]
            .parse()
            .map_err(|_| Error::Checkpoint("bad checkpoint row count".into()))?;
        let iteration: usize = fields[3]
            .parse()
            .map_err(|_| Error::Checkpoint("bad checkpoint iteration".into()))?;
        if k_n != cfg.num_topics {
            return Err(Error::Checkpoint(format!(
                "checkpoint has K={k_n} but config has K={}",
                cfg.num_topics
            )));
        }
        let mut x = Vec::with_capacity(num_rows * k_n);
        let mut rows = Vec::with_capacity(num_rows);
        for line in lines {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.trim().split(',').collect();
            if parts.len() != 3 + k_n {
                return Err(Error::Checkpoint("checkpoint row width mismatch".into()));
            }
            let parse_f = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|e| Error::Checkpoint(format!("bad checkpoint value `{s}`: {e}")))
            };
            rows.push(WorkRow {
                doc: parts[0]
                    .parse()
                    .map_err(|_| Error::Checkpoint("bad doc id".into()))?,
                word: parts[1]
                    .parse()
                    .map_err(|_| Error::Checkpoint("bad word id".into()))?,
                weight: parse_f(parts[2])?,
            });
            for p in &parts[3..] {
                x.push(parse_f(p)?);
            }
        }
        if rows.len() != num_rows {
            return Err(Error::Checkpoint(format!(
                "checkpoint declares {num_rows} rows but has {}",
                rows.len()
            )));
        }
        hcfg.validate(rows.len())?;
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(hcfg.threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        let soft = recompute_soft(
            &rows,
            &x,
            k_n,
            corpus.num_docs(),
            corpus.vocab_size(),
            &pool,
        );
        let theta_prev = estimate_theta(&soft, cfg.alpha);
        let scratch = x.clone();
        Ok(HeronEngine {
            cfg,
            hcfg,
            rows,
            x,
            scratch,
            soft,
            theta_prev,
            theta_running: None,
            ma_step: 0,
            iteration,
            trace: ConvergenceTrace::default(),
            pool,
            num_docs: corpus.num_docs(),
            vocab_size: corpus.vocab_size(),
        })
    }
}

fn batch_bounds(num_rows: usize, batches: usize) -> Vec<(usize, usize)> {
    let base = num_rows / batches;
    let extra = num_rows % batches;
    let mut bounds = Vec::with_capacity(batches);
    let mut lo = 0;
    for b in 0..batches {
        let len = base + usize::from(b < extra);
        bounds.push((lo, lo + len));
        lo += len;
    }
    bounds
}

/// Update one chunk of rows against the frozen snapshot; returns the
/// chunk's max L1 row change.
#[allow(clippy::too_many_arguments)]
fn update_chunk(
    rows: &[WorkRow],
    x_old: &[f64],
    x_new: &mut [f64],
    soft: &SoftStats,
    cfg: &ModelConfig,
    labels: Option<&[f64]>,
    doc_lens: &[u32],
    vocab_size: usize,
    neighbor_sums: Option<&[f64]>,
) -> Result<f64> {
    let k_n = cfg.num_topics;
    let vbeta = vocab_size as f64 * cfg.beta;
    let mut doc_f = vec![0.0; k_n];
    let mut word_f = vec![0.0; k_n];
    let mut totals_f = vec![0.0; k_n];
    let mut max_delta = 0.0f64;
    for ((row, old), new) in rows
        .iter()
        .zip(x_old.chunks(k_n))
        .zip(x_new.chunks_mut(k_n))
    {
        let (d, w) = (row.doc as usize, row.word as usize);
        if cfg.model == Model::Lda {
            // Fast path: fold the leave-one-out clamp straight into the
            // density evaluation.
            let c_doc = soft.doc_counts(d);
            let c_word = soft.word_counts(w);
            let totals = soft.topic_totals();
            for k in 0..k_n {
                let cd = (c_doc[k] - old[k]).max(0.0);
                let cw = (c_word[k] - old[k]).max(0.0);
                let ct = (totals[k] - old[k]).max(0.0);
                new[k] = (cd + cfg.alpha) * (cw + cfg.beta) / (ct + vbeta);
            }
        } else {
            for k in 0..k_n {
                doc_f[k] = (soft.c(k, d) - old[k]).max(0.0);
                word_f[k] = (soft.d(k, w) - old[k]).max(0.0);
                totals_f[k] = (soft.drow(k) - old[k]).max(0.0);
            }
            let ctx = TupleContext {
                doc_counts: &doc_f,
                word_counts: &word_f,
                topic_totals: &totals_f,
                vocab_size,
                doc_len: doc_lens[d] as f64,
                neighbor_sum: neighbor_sums.map(|s| &s[d * k_n..(d + 1) * k_n]),
                label: labels.map(|l| l[d]),
            };
            evaluate_posterior(&ctx, cfg, new);
        }
        let sum: f64 = new.iter().sum();
        if !sum.is_finite() || sum <= 0.0 {
            return Err(Error::DegeneratePosterior(format!(
                "tuple (doc {d}, word {w}) has posterior mass {sum}"
            )));
        }
        let inv = 1.0 / sum;
        let mut delta = 0.0;
        for (n, &o) in new.iter_mut().zip(old) {
            *n *= inv;
            delta += (*n - o).abs();
        }
        max_delta = max_delta.max(delta);
    }
    Ok(max_delta)
}

/// Rebuild soft statistics from all rows, reducing fixed-size chunk
/// partials in index order (deterministic for any thread count).
fn recompute_soft(
    rows: &[WorkRow],
    x: &[f64],
    num_topics: usize,
    num_docs: usize,
    vocab_size: usize,
    pool: &rayon::ThreadPool,
) -> SoftStats {
    let chunk = reduce_chunk_size(rows.len());
    let partials: Vec<SoftStats> = pool.install(|| {
        rows.par_chunks(chunk)
            .zip(x.par_chunks(chunk * num_topics))
            .map(|(rows, xs)| {
                let mut partial = SoftStats::zeros(num_topics, num_docs, vocab_size);
                for (row, xr) in rows.iter().zip(xs.chunks(num_topics)) {
                    partial.add_scaled(row.doc as usize, row.word as usize, row.weight, xr);
                }
                partial
            })
            .collect()
    });
    merge_partials(partials, pool)
        .unwrap_or_else(|| SoftStats::zeros(num_topics, num_docs, vocab_size))
}

/// Pairwise tree reduction of partial statistics. The pairing is a fixed
/// function of the partial count, so the float summation grouping never
/// depends on the thread pool.
pub(crate) fn merge_partials(
    mut partials: Vec<SoftStats>,
    pool: &rayon::ThreadPool,
) -> Option<SoftStats> {
    while partials.len() > 1 {
        partials = pool.install(|| {
            partials
                .into_par_iter()
                .chunks(2)
                .map(|mut pair| {
                    let mut acc = pair.swap_remove(0);
                    if let Some(b) = pair.pop() {
                        acc.merge(&b);
                    }
                    acc
                })
                .collect()
        });
    }
    partials.pop()
}

/// Posterior-mean document-topic estimate from soft counts.
pub(crate) fn estimate_theta(soft: &SoftStats, alpha: f64) -> Vec<f64> {
    let k_n = soft.num_topics();
    let mut theta = vec![0.0; soft.num_docs() * k_n];
    for d in 0..soft.num_docs() {
        let counts = soft.doc_counts(d);
        let total: f64 = counts.iter().sum();
        let denom = total + k_n as f64 * alpha;
        let row = &mut theta[d * k_n..(d + 1) * k_n];
        for k in 0..k_n {
            row[k] = (counts[k] + alpha) / denom;
        }
    }
    theta
}
