//! Backend-agnostic training loops with per-iteration timing and a unified
//! convergence trace, used by the CLI and the benchmark harness.

use std::time::Instant;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::gibbs::{cgs_init, cgs_sweep, same_init, same_sweep, RngState, SameConfig};
use crate::heron::{check_convergence, HeronConfig, HeronEngine};
use crate::posterior::ModelConfig;
use crate::stats::{estimate_theta_phi, ThetaPhi};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Cgs,
    Same,
    Heron,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cgs" => Ok(Backend::Cgs),
            "same" => Ok(Backend::Same),
            "heron" => Ok(Backend::Heron),
            other => Err(Error::InvalidConfig(format!(
                "unknown backend `{other}` (expected cgs, same, or heron)"
            ))),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Cgs => "cgs",
            Backend::Same => "same",
            Backend::Heron => "heron",
        })
    }
}

/// One trace line shared by all backends. The fixed-point residual only
/// exists for the deterministic backend.
#[derive(Debug, Clone, Copy)]
pub struct TrainTraceRow {
    pub iteration: usize,
    pub dkl: f64,
    pub residual: Option<f64>,
    pub millis: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub rows: Vec<TrainTraceRow>,
}

impl TrainTrace {
    /// CSV rendering. Wall-clock is optional so same-seed runs compare
    /// byte-for-byte; timings belong to the manifest.
    pub fn to_csv(&self, include_millis: bool) -> String {
        let mut out = String::from(if include_millis {
            "iteration,dkl,residual,millis\n"
        } else {
            "iteration,dkl,residual\n"
        });
        for r in &self.rows {
            let residual = r.residual.map_or(String::new(), |x| format!("{x}"));
            if include_millis {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    r.iteration, r.dkl, residual, r.millis
                ));
            } else {
                out.push_str(&format!("{},{},{}\n", r.iteration, r.dkl, residual));
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>, include_millis: bool) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv(include_millis)).map_err(|e| Error::io(path, e))
    }
}

/// Settings for one training run.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub backend: Backend,
    /// Sweeps for the samplers; iteration budget for the fixed-point
    /// backend (mirrored into [`HeronConfig::max_iters`]).
    pub iters: usize,
    pub seed: u64,
    pub same: SameConfig,
    pub heron: HeronConfig,
    /// Worker threads for the parallel sampler sweep (0 = rayon default).
    pub threads: usize,
    /// Where to drop a resumable checkpoint if a fixed-point run fails
    /// mid-flight.
    pub checkpoint_dir: Option<std::path::PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            backend: Backend::Heron,
            iters: 1000,
            seed: 0,
            same: SameConfig::default(),
            heron: HeronConfig::default(),
            threads: 0,
            checkpoint_dir: None,
        }
    }
}

/// Trained model plus run diagnostics.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub theta_phi: ThetaPhi,
    pub trace: TrainTrace,
    pub iterations: usize,
    /// Whether the KL criterion dropped below tolerance (fixed-point
    /// backend only; the samplers always run their full budget).
    pub converged: bool,
    /// Approximations taken during the run, recorded for the manifest.
    pub flags: Vec<String>,
}

impl TrainResult {
    pub fn median_iter_millis(&self) -> f64 {
        let mut times: Vec<f64> = self.trace.rows.iter().map(|r| r.millis).collect();
        if times.is_empty() {
            return 0.0;
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times[times.len() / 2]
    }
}

/// Train `cfg` on `corpus` with the selected backend.
pub fn train(corpus: &Corpus, cfg: &ModelConfig, opts: &TrainOptions) -> Result<TrainResult> {
    cfg.validate()?;
    match opts.backend {
        Backend::Cgs => train_cgs(corpus, cfg, opts),
        Backend::Same => train_same(corpus, cfg, opts),
        Backend::Heron => train_heron(corpus, cfg, opts),
    }
}

fn train_cgs(corpus: &Corpus, cfg: &ModelConfig, opts: &TrainOptions) -> Result<TrainResult> {
    let mut rng = RngState::new(opts.seed);
    let mut state = cgs_init(corpus, cfg, &mut rng)?;
    let mut trace = TrainTrace::default();
    let mut theta_prev = estimate_theta_phi(&state.stats, cfg.alpha, cfg.beta)
        .theta()
        .to_vec();
    for i in 0..opts.iters {
        let started = Instant::now();
        cgs_sweep(&mut state, corpus, cfg, &mut rng)?;
        let millis = started.elapsed().as_secs_f64() * 1e3;
        let theta_cur = estimate_theta_phi(&state.stats, cfg.alpha, cfg.beta)
            .theta()
            .to_vec();
        let (_, dkl) = check_convergence(&theta_prev, &theta_cur, cfg.num_topics, f64::INFINITY)?;
        theta_prev = theta_cur;
        trace.rows.push(TrainTraceRow {
            iteration: i + 1,
            dkl,
            residual: None,
            millis,
        });
    }
    Ok(TrainResult {
        theta_phi: estimate_theta_phi(&state.stats, cfg.alpha, cfg.beta),
        trace,
        iterations: opts.iters,
        converged: false,
        flags: Vec::new(),
    })
}

fn train_same(corpus: &Corpus, cfg: &ModelConfig, opts: &TrainOptions) -> Result<TrainResult> {
    let mut rng = RngState::new(opts.seed);
    let mut state = same_init(corpus, cfg, &mut rng)?;
    let mut trace = TrainTrace::default();
    let mut theta_prev = estimate_theta_phi(&state.soft, cfg.alpha, cfg.beta)
        .theta()
        .to_vec();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    for i in 0..opts.iters {
        let started = Instant::now();
        pool.install(|| same_sweep(&mut state, corpus, cfg, &opts.same, &mut rng))?;
        let millis = started.elapsed().as_secs_f64() * 1e3;
        let theta_cur = estimate_theta_phi(&state.soft, cfg.alpha, cfg.beta)
            .theta()
            .to_vec();
        let (_, dkl) = check_convergence(&theta_prev, &theta_cur, cfg.num_topics, f64::INFINITY)?;
        theta_prev = theta_cur;
        trace.rows.push(TrainTraceRow {
            iteration: i + 1,
            dkl,
            residual: None,
            millis,
        });
    }
    let mut flags = Vec::new();
    if opts.same.frozen_parallel {
        flags.push("same_frozen_parallel_approximation".to_string());
    }
    Ok(TrainResult {
        theta_phi: estimate_theta_phi(&state.soft, cfg.alpha, cfg.beta),
        trace,
        iterations: opts.iters,
        converged: false,
        flags,
    })
}

fn train_heron(corpus: &Corpus, cfg: &ModelConfig, opts: &TrainOptions) -> Result<TrainResult> {
    let mut hcfg = opts.heron.clone();
    hcfg.max_iters = opts.iters;
    hcfg.seed = opts.seed;
    let mut engine = HeronEngine::new(corpus, cfg.clone(), hcfg)?;
    let summary = match engine.run(corpus) {
        Ok(summary) => summary,
        Err(e) => {
            if let Some(dir) = &opts.checkpoint_dir {
                if let Err(ce) = engine.save_checkpoint(dir) {
                    log::warn!("failed to write failure checkpoint: {ce}");
                } else {
                    log::warn!(
                        "run failed; resumable checkpoint written to {}",
                        dir.display()
                    );
                }
            }
            return Err(e);
        }
    };
    let trace = TrainTrace {
        rows: engine
            .trace()
            .rows
            .iter()
            .map(|r| TrainTraceRow {
                iteration: r.iteration,
                dkl: r.dkl,
                residual: Some(r.residual),
                millis: r.millis,
            })
            .collect(),
    };
    let mut flags = Vec::new();
    if opts.heron.expand_duplicates {
        flags.push("heron_expanded_duplicates".to_string());
    }
    Ok(TrainResult {
        theta_phi: engine.theta_phi(),
        trace,
        iterations: summary.iterations,
        converged: summary.converged,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{lda_corpus, SyntheticSpec};

    fn small_corpus() -> Corpus {
        lda_corpus(&SyntheticSpec {
            num_docs: 12,
            vocab_size: 15,
            num_topics: 2,
            doc_len: 8..14,
            alpha: 0.3,
            beta: 0.2,
            seed: 7,
            labels: false,
        })
        .unwrap()
    }

    #[test]
    fn all_backends_produce_stochastic_estimates() {
        let corpus = small_corpus();
        let cfg = ModelConfig::lda(2, 0.5, 0.5);
        for backend in [Backend::Cgs, Backend::Same, Backend::Heron] {
            let opts = TrainOptions {
                backend,
                iters: 5,
                seed: 3,
                ..TrainOptions::default()
            };
            let result = train(&corpus, &cfg, &opts).unwrap();
            assert_eq!(result.trace.rows.len(), result.iterations.min(5));
            for d in 0..corpus.num_docs() {
                let sum: f64 = result.theta_phi.theta_row(d).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9, "{backend}: theta row {d}");
            }
        }
    }

    #[test]
    fn every_backend_runs_every_model() {
        let base = small_corpus();
        let links: Vec<(u32, u32)> = (0..6u32).map(|i| (i, (i + 3) % 12)).collect();
        let labels: Vec<f64> = (0..12).map(|i| 1.0 + (i % 5) as f64).collect();
        let corpus = base.with_links(links).unwrap().with_labels(labels).unwrap();
        for backend in [Backend::Cgs, Backend::Same, Backend::Heron] {
            for cfg in [
                ModelConfig::lda(2, 0.5, 0.5),
                ModelConfig::rtm(2, 0.5, 0.5, vec![0.75, 0.75]),
                ModelConfig::slda(2, 0.5, 0.5, vec![0.5, 0.5], 0.25),
            ] {
                let opts = TrainOptions {
                    backend,
                    iters: 3,
                    seed: 1,
                    ..TrainOptions::default()
                };
                let result = train(&corpus, &cfg, &opts)
                    .unwrap_or_else(|e| panic!("{backend} x {:?}: {e}", cfg.model));
                let sum: f64 = result.theta_phi.theta_row(0).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn heron_stops_when_converged() {
        let corpus = small_corpus();
        let cfg = ModelConfig::lda(2, 0.5, 0.5);
        let opts = TrainOptions {
            backend: Backend::Heron,
            iters: 500,
            seed: 3,
            heron: HeronConfig {
                tolerance: 1e-7,
                ..HeronConfig::default()
            },
            ..TrainOptions::default()
        };
        let result = train(&corpus, &cfg, &opts).unwrap();
        assert!(result.converged);
        assert!(result.iterations < 500);
        let last = result.trace.rows.last().unwrap();
        assert!(last.dkl < 1e-7);
        // The KL trace trends down from start to finish.
        assert!(last.dkl < result.trace.rows[0].dkl);
    }

    #[test]
    fn minibatch_with_moving_average_runs() {
        let corpus = small_corpus();
        let cfg = ModelConfig::lda(3, 0.5, 0.5);
        let opts = TrainOptions {
            backend: Backend::Heron,
            iters: 20,
            seed: 4,
            heron: HeronConfig {
                batches: 4,
                batch_mode: crate::heron::BatchMode::Minibatch,
                moving_average: Some(crate::heron::MovingAverageSchedule::default()),
                seed: 4,
                ..HeronConfig::default()
            },
            ..TrainOptions::default()
        };
        let result = train(&corpus, &cfg, &opts).unwrap();
        for d in 0..corpus.num_docs() {
            let row = result.theta_phi.theta_row(d);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn trace_csv_has_empty_residual_for_samplers() {
        let corpus = small_corpus();
        let cfg = ModelConfig::lda(2, 0.5, 0.5);
        let opts = TrainOptions {
            backend: Backend::Cgs,
            iters: 2,
            seed: 1,
            ..TrainOptions::default()
        };
        let result = train(&corpus, &cfg, &opts).unwrap();
        let csv = result.trace.to_csv(false);
        let line = csv.lines().nth(1).unwrap();
        assert!(line.ends_with(','), "line `{line}`");
    }
}
