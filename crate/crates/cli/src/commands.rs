use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use heron_core::corpus::{load_corpus, Corpus, CorpusFormat, SplitSpec};
use heron_core::engine::{train, Backend, TrainOptions, TrainResult};
use heron_core::eval::{
    coherence, predictive_perplexity, top_n_words, CoherenceConfig, CoherenceMetric,
    CoherenceSummary, EvalReport,
};
use heron_core::gibbs::SameConfig;
use heron_core::heron::{BatchMode, HeronConfig, MovingAverageSchedule};
use heron_core::posterior::{Model, ModelConfig};
use heron_core::stats::ThetaPhi;
use heron_core::synthetic::{lda_corpus, SyntheticSpec};

use crate::config::RunConfig;
use crate::manifest::{ManifestTiming, RunManifest};
use crate::{BenchArgs, CmdError, EvalArgs, SynthArgs, TrainArgs};

fn config_err(e: impl std::fmt::Display) -> CmdError {
    CmdError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CmdError {
    CmdError::Runtime(e.to_string())
}

fn build_model_config(cfg: &RunConfig) -> Result<ModelConfig, CmdError> {
    let model: Model = cfg.model.parse().map_err(config_err)?;
    let eta = cfg.eta.map(|v| ModelConfig::uniform_eta(cfg.k, v));
    let mc = ModelConfig {
        model,
        num_topics: cfg.k,
        alpha: cfg.alpha,
        beta: cfg.beta,
        eta,
        intercept: cfg.a,
    };
    mc.validate().map_err(config_err)?;
    Ok(mc)
}

fn build_train_options(cfg: &RunConfig, out: &Path) -> Result<TrainOptions, CmdError> {
    let backend: Backend = cfg.backend.parse().map_err(config_err)?;
    let batch_mode: BatchMode = cfg.batch_mode.parse().map_err(config_err)?;
    Ok(TrainOptions {
        backend,
        iters: cfg.iters,
        seed: cfg.seed,
        same: SameConfig {
            replications: cfg.m,
            frozen_parallel: cfg.same_parallel,
        },
        heron: HeronConfig {
            max_iters: cfg.iters,
            tolerance: cfg.tol,
            batches: cfg.batches,
            batch_mode,
            moving_average: cfg.moving_average.then(MovingAverageSchedule::default),
            damping: cfg.damping,
            seed: cfg.seed,
            threads: cfg.threads,
            expand_duplicates: false,
        },
        threads: cfg.threads,
        checkpoint_dir: Some(out.to_path_buf()),
    })
}

fn load(path: &Path, format: &str) -> Result<Corpus, CmdError> {
    let format: CorpusFormat = format.parse().map_err(config_err)?;
    load_corpus(path, format).map_err(config_err)
}

pub fn run_train(args: &TrainArgs) -> Result<(), CmdError> {
    let cfg = RunConfig::resolve(args).map_err(config_err)?;
    let corpus = load(&cfg.corpus, &cfg.format)?;
    let model_cfg = build_model_config(&cfg)?;
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| config_err(format!("cannot create {}: {e}", cfg.out.display())))?;
    let opts = build_train_options(&cfg, &cfg.out)?;

    let train_corpus = match cfg.split {
        None => corpus,
        Some(fraction) => {
            let spec = SplitSpec {
                train_fraction: fraction,
                rng_seed: cfg.seed,
            };
            let (train_side, test_side) = corpus.train_test_split(&spec).map_err(config_err)?;
            train_side
                .write_tuple_csv(cfg.out.join("train.tuples"))
                .map_err(runtime_err)?;
            test_side
                .write_tuple_csv(cfg.out.join("test.tuples"))
                .map_err(runtime_err)?;
            train_side
        }
    };

    let started = Instant::now();
    let started_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let result = train(&train_corpus, &model_cfg, &opts).map_err(runtime_err)?;
    let total_seconds = started.elapsed().as_secs_f64();

    write_artifacts(&cfg, &result, started_unix_ms, total_seconds)?;
    println!(
        "trained {} with {} on {} docs: {} iterations, median {:.3} ms/iter -> {}",
        cfg.model,
        cfg.backend,
        train_corpus.num_docs(),
        result.iterations,
        result.median_iter_millis(),
        cfg.out.display()
    );
    Ok(())
}

fn write_artifacts(
    cfg: &RunConfig,
    result: &TrainResult,
    started_unix_ms: u128,
    total_seconds: f64,
) -> Result<(), CmdError> {
    result
        .theta_phi
        .write_theta_csv(cfg.out.join("theta.csv"))
        .map_err(runtime_err)?;
    result
        .theta_phi
        .write_phi_csv(cfg.out.join("phi.csv"))
        .map_err(runtime_err)?;
    // Wall-clock stays out of the trace so identical seeds give identical
    // bytes; per-iteration timings live in the manifest.
    result
        .trace
        .write_csv(cfg.out.join("trace.csv"), false)
        .map_err(runtime_err)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: "train".into(),
        config: cfg.clone(),
        iterations: result.iterations,
        converged: result.converged,
        final_dkl: result.trace.rows.last().map(|r| r.dkl),
        final_residual: result.trace.rows.last().and_then(|r| r.residual),
        flags: result.flags.clone(),
        timing: ManifestTiming {
            started_unix_ms,
            total_seconds,
            median_iter_millis: result.median_iter_millis(),
            iter_millis: result.trace.rows.iter().map(|r| r.millis).collect(),
        },
    };
    manifest
        .write(&cfg.out.join("manifest.json"))
        .map_err(runtime_err)?;
    Ok(())
}

pub fn run_eval(args: &EvalArgs) -> Result<(), CmdError> {
    let tp = ThetaPhi::read_csv(
        args.artifacts.join("theta.csv"),
        args.artifacts.join("phi.csv"),
    )
    .map_err(config_err)?;
    let corpus = load(&args.corpus, &args.format)?;
    if corpus.vocab_size() > tp.vocab_size() {
        return Err(config_err(format!(
            "vocabulary mismatch: corpus has {} words but phi covers {}",
            corpus.vocab_size(),
            tp.vocab_size()
        )));
    }
    let perplexity = predictive_perplexity(&corpus, &tp).map_err(runtime_err)?;

    let mut summaries = Vec::new();
    for &n in &args.top_n {
        let topics: Vec<Vec<usize>> = (0..tp.num_topics())
            .map(|k| top_n_words(&tp, k, n))
            .collect();
        for metric in [
            CoherenceMetric::Lcp,
            CoherenceMetric::Npmi,
            CoherenceMetric::Pmi,
        ] {
            let ccfg = CoherenceConfig {
                top_n: n,
                metric,
                smoothing: args.smoothing,
            };
            let report = coherence(&corpus, &topics, &ccfg).map_err(runtime_err)?;
            summaries.push(CoherenceSummary {
                metric: metric.to_string(),
                top_n: n,
                mean: report.mean,
                std: report.std,
            });
        }
    }

    // Pick up the training run's timing when evaluating in place.
    let runtime_ms = std::fs::read_to_string(args.artifacts.join("manifest.json"))
        .ok()
        .and_then(|text| serde_json::from_str::<serde_json::Value>(&text).ok())
        .and_then(|v| v["timing"]["median_iter_millis"].as_f64());

    let report = EvalReport {
        perplexity,
        coherence: summaries,
        runtime_per_iteration_ms: runtime_ms,
    };
    let out_dir = args.out.clone().unwrap_or_else(|| args.artifacts.clone());
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| config_err(format!("cannot create {}: {e}", out_dir.display())))?;
    std::fs::write(out_dir.join("eval.json"), report.to_json()).map_err(runtime_err)?;
    std::fs::write(
        out_dir.join("eval.csv"),
        format!("{}\n{}\n", report.csv_header(), report.to_csv_row()),
    )
    .map_err(runtime_err)?;
    println!("perplexity {perplexity:.4} -> {}", out_dir.display());
    Ok(())
}

pub fn run_bench(args: &BenchArgs) -> Result<(), CmdError> {
    if args.backends.is_empty() || args.k.is_empty() || args.batches.is_empty() {
        return Err(config_err("bench grid is empty"));
    }
    if !(args.split > 0.0 && args.split < 1.0) {
        return Err(config_err("split must lie in (0,1)"));
    }
    let corpus = load(&args.corpus, &args.format)?;
    let (train_side, test_side) = corpus
        .train_test_split(&SplitSpec {
            train_fraction: args.split,
            rng_seed: args.seed,
        })
        .map_err(config_err)?;

    let mut csv = String::from("backend,k,batches,perplexity,median_iter_ms,iters,status\n");
    for backend_name in &args.backends {
        for &k in &args.k {
            for &batches in &args.batches {
                let cell = bench_cell(args, &train_side, &test_side, backend_name, k, batches);
                let line = match cell {
                    Ok((perplexity, median_ms, iters)) => format!(
                        "{backend_name},{k},{batches},{perplexity},{median_ms},{iters},ok\n"
                    ),
                    Err(e) => {
                        let msg = e.message().replace(',', ";");
                        format!("{backend_name},{k},{batches},,,,error:{msg}\n")
                    }
                };
                print!("{line}");
                csv.push_str(&line);
            }
        }
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| config_err(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(&args.out, csv).map_err(runtime_err)?;
    Ok(())
}

fn bench_cell(
    args: &BenchArgs,
    train_side: &Corpus,
    test_side: &Corpus,
    backend_name: &str,
    k: usize,
    batches: usize,
) -> Result<(f64, f64, usize), CmdError> {
    let backend: Backend = backend_name.parse().map_err(config_err)?;
    let model_cfg = ModelConfig::lda(k, args.alpha, args.beta);
    let opts = TrainOptions {
        backend,
        iters: args.iters,
        seed: args.seed,
        same: SameConfig {
            replications: args.m,
            frozen_parallel: args.same_parallel,
        },
        heron: HeronConfig {
            max_iters: args.iters,
            // Benchmark cells run their full iteration budget.
            tolerance: 1e-300,
            batches,
            seed: args.seed,
            threads: args.threads,
            ..HeronConfig::default()
        },
        threads: args.threads,
        checkpoint_dir: None,
    };
    let result = train(train_side, &model_cfg, &opts).map_err(runtime_err)?;
    let perplexity = predictive_perplexity(test_side, &result.theta_phi).map_err(runtime_err)?;
    Ok((perplexity, result.median_iter_millis(), result.iterations))
}

pub fn run_synth(args: &SynthArgs) -> Result<(), CmdError> {
    if args.len_min == 0 || args.len_max < args.len_min {
        return Err(config_err("need 0 < len-min <= len-max"));
    }
    let spec = SyntheticSpec {
        num_docs: args.docs,
        vocab_size: args.vocab,
        num_topics: args.topics,
        doc_len: args.len_min..args.len_max + 1,
        alpha: args.alpha,
        beta: args.beta,
        seed: args.seed,
        labels: args.labels,
    };
    let corpus = lda_corpus(&spec).map_err(config_err)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| config_err(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    corpus.write_tuple_csv(&args.out).map_err(runtime_err)?;
    println!(
        "wrote {} docs, {} distinct tuples ({} tokens, dedup ratio {:.4}) -> {}",
        corpus.num_docs(),
        corpus.num_tuples(),
        corpus.total_tokens(),
        corpus.dedup_ratio(),
        args.out.display()
    );
    Ok(())
}
