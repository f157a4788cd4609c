//! Unnormalized conditional posteriors g(Omega) for the three supported
//! models, evaluated on leave-one-out statistics. These are pure functions
//! of their inputs and are shared verbatim by every backend: the samplers
//! feed integer counts, the fixed-point backend feeds soft counts.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Lda,
    Rtm,
    Slda,
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lda" => Ok(Model::Lda),
            "rtm" => Ok(Model::Rtm),
            "slda" => Ok(Model::Slda),
            other => Err(Error::InvalidConfig(format!(
                "unknown model `{other}` (expected lda, rtm, or slda)"
            ))),
        }
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Model::Lda => "lda",
            Model::Rtm => "rtm",
            Model::Slda => "slda",
        })
    }
}

/// Model selection plus fixed hyperparameters. `eta` carries the link
/// weights for the relational model and the regression weights for the
/// supervised model; `intercept` is the supervised model's offset.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub model: Model,
    pub num_topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub eta: Option<Vec<f64>>,
    pub intercept: Option<f64>,
}

impl ModelConfig {
    pub fn lda(num_topics: usize, alpha: f64, beta: f64) -> Self {
        ModelConfig {
            model: Model::Lda,
            num_topics,
            alpha,
            beta,
            eta: None,
            intercept: None,
        }
    }

    pub fn rtm(num_topics: usize, alpha: f64, beta: f64, eta: Vec<f64>) -> Self {
        ModelConfig {
            model: Model::Rtm,
            num_topics,
            alpha,
            beta,
            eta: Some(eta),
            intercept: None,
        }
    }

    pub fn slda(num_topics: usize, alpha: f64, beta: f64, eta: Vec<f64>, intercept: f64) -> Self {
        ModelConfig {
            model: Model::Slda,
            num_topics,
            alpha,
            beta,
            eta: Some(eta),
            intercept: Some(intercept),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_topics == 0 {
            return Err(Error::InvalidConfig("num_topics must be >= 1".into()));
        }
        if self.alpha.is_nan() || self.beta.is_nan() || self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "alpha and beta must be > 0 (got alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        match self.model {
            Model::Lda => {}
            Model::Rtm => {
                let eta = self
                    .eta
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("rtm requires eta".into()))?;
                if eta.len() != self.num_topics {
                    return Err(Error::InvalidConfig(format!(
                        "eta has {} entries for {} topics",
                        eta.len(),
                        self.num_topics
                    )));
                }
            }
            Model::Slda => {
                let eta = self
                    .eta
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("slda requires eta".into()))?;
                if eta.len() != self.num_topics {
                    return Err(Error::InvalidConfig(format!(
                        "eta has {} entries for {} topics",
                        eta.len(),
                        self.num_topics
                    )));
                }
                if self.intercept.is_none() {
                    return Err(Error::InvalidConfig("slda requires an intercept".into()));
                }
            }
        }
        Ok(())
    }

    /// Expand a scalar weight into the per-topic vector the posteriors use.
    pub fn uniform_eta(num_topics: usize, value: f64) -> Vec<f64> {
        vec![value; num_topics]
    }
}

/// Leave-one-out view of the statistics for one document-word tuple, plus
/// the model-specific side information. All slices have length K.
#[derive(Debug, Clone, Copy)]
pub struct TupleContext<'a> {
    /// C^{-j}[., d]: topic counts of the tuple's document.
    pub doc_counts: &'a [f64],
    /// D^{-j}[., w]: topic counts of the tuple's word.
    pub word_counts: &'a [f64],
    /// D^{-j}[., .]: per-topic totals.
    pub topic_totals: &'a [f64],
    pub vocab_size: usize,
    /// N_d of the tuple's document.
    pub doc_len: f64,
    /// Relational models: sum over linked documents d' of n_{d',k}/N_{d'}.
    pub neighbor_sum: Option<&'a [f64]>,
    /// Supervised models: the document's label y_d.
    pub label: Option<f64>,
}

/// Table-row kernel shared by all three models:
/// `(C + alpha) * (D + beta) / (Drow + V*beta)` per topic.
#[inline]
fn dirichlet_factor(ctx: &TupleContext<'_>, cfg: &ModelConfig, out: &mut [f64]) {
    let vbeta = ctx.vocab_size as f64 * cfg.beta;
    let counts = ctx
        .doc_counts
        .iter()
        .zip(ctx.word_counts)
        .zip(ctx.topic_totals);
    for (o, ((&doc, &word), &total)) in out.iter_mut().zip(counts) {
        *o = (doc + cfg.alpha) * (word + cfg.beta) / (total + vbeta);
    }
}

/// Multiply `out` by exp(exponents - max(exponents)). Shifting by the max
/// keeps exp in range and leaves the normalized posterior unchanged.
#[inline]
fn apply_exp_factors(out: &mut [f64], exponents: &[f64]) {
    let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for (o, &e) in out.iter_mut().zip(exponents) {
        *o *= (e - max).exp();
    }
}

/// LDA posterior density per topic.
pub fn lda_posterior(ctx: &TupleContext<'_>, cfg: &ModelConfig, out: &mut [f64]) {
    dirichlet_factor(ctx, cfg, out);
}

/// Relational posterior: LDA times the link factor
/// exp(eta_k / N_d * sum_{d'} n_{d',k} / N_{d'}).
///
/// Documents without links reduce exactly to [`lda_posterior`].
pub fn rtm_posterior(ctx: &TupleContext<'_>, cfg: &ModelConfig, out: &mut [f64]) {
    dirichlet_factor(ctx, cfg, out);
    let eta = cfg.eta.as_deref().expect("rtm requires eta");
    match ctx.neighbor_sum {
        None => {}
        Some(sums) => {
            let mut stack = [0.0; MAX_STACK_TOPICS];
            let mut heap;
            let exponents: &mut [f64] = if cfg.num_topics <= MAX_STACK_TOPICS {
                &mut stack[..cfg.num_topics]
            } else {
                heap = vec![0.0; cfg.num_topics];
                &mut heap
            };
            for k in 0..cfg.num_topics {
                exponents[k] = eta[k] / ctx.doc_len * sums[k];
            }
            apply_exp_factors(out, exponents);
        }
    }
}

/// Supervised posterior: LDA times exp(-(y - eta^T zbar(k) - a)^2), where
/// zbar(k) is the leave-one-out topic proportion vector with the current
/// token placed on topic k.
pub fn slda_posterior(ctx: &TupleContext<'_>, cfg: &ModelConfig, out: &mut [f64]) {
    dirichlet_factor(ctx, cfg, out);
    let eta = cfg.eta.as_deref().expect("slda requires eta");
    let a = cfg.intercept.expect("slda requires an intercept");
    let y = ctx.label.expect("slda requires a document label");
    let dot: f64 = eta.iter().zip(ctx.doc_counts).map(|(b, c)| b * c).sum();
    let mut stack = [0.0; MAX_STACK_TOPICS];
    let mut heap;
    let exponents: &mut [f64] = if cfg.num_topics <= MAX_STACK_TOPICS {
        &mut stack[..cfg.num_topics]
    } else {
        heap = vec![0.0; cfg.num_topics];
        &mut heap
    };
    for k in 0..cfg.num_topics {
        let residual = y - (dot + eta[k]) / ctx.doc_len - a;
        exponents[k] = -(residual * residual);
    }
    apply_exp_factors(out, exponents);
}

/// Evaluate the configured model's posterior into `out`.
pub fn evaluate_posterior(ctx: &TupleContext<'_>, cfg: &ModelConfig, out: &mut [f64]) {
    match cfg.model {
        Model::Lda => lda_posterior(ctx, cfg, out),
        Model::Rtm => rtm_posterior(ctx, cfg, out),
        Model::Slda => slda_posterior(ctx, cfg, out),
    }
}

/// Topic-count ceiling for the stack-allocated exponent scratch; larger K
/// falls back to a per-call heap buffer.
const MAX_STACK_TOPICS: usize = 128;

/// Normalize a nonnegative vector in place so it sums to 1.
pub fn normalize(v: &mut [f64]) -> Result<()> {
    let sum: f64 = v.iter().sum();
    if !sum.is_finite() || sum <= 0.0 {
        return Err(Error::DegeneratePosterior(format!(
            "posterior mass {sum} is not positive and finite"
        )));
    }
    let inv = 1.0 / sum;
    for x in v.iter_mut() {
        *x *= inv;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx_from<'a>(
        doc_counts: &'a [f64],
        word_counts: &'a [f64],
        topic_totals: &'a [f64],
        vocab_size: usize,
        doc_len: f64,
    ) -> TupleContext<'a> {
        TupleContext {
            doc_counts,
            word_counts,
            topic_totals,
            vocab_size,
            doc_len,
            neighbor_sum: None,
            label: None,
        }
    }

    #[test]
    fn lda_zero_counts_is_symmetric() {
        let cfg = ModelConfig::lda(3, 0.5, 0.5);
        let zeros = [0.0; 3];
        let ctx = ctx_from(&zeros, &zeros, &zeros, 4, 1.0);
        let mut out = [0.0; 3];
        lda_posterior(&ctx, &cfg, &mut out);
        assert!(out.iter().all(|&x| (x - out[0]).abs() < 1e-15 && x > 0.0));
        normalize(&mut out).unwrap();
        assert!(out.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn lda_single_topic_normalizes_to_one() {
        let cfg = ModelConfig::lda(1, 0.5, 0.5);
        let ctx = ctx_from(&[2.0], &[1.0], &[3.0], 3, 3.0);
        let mut out = [0.0];
        lda_posterior(&ctx, &cfg, &mut out);
        assert!(out[0] > 0.0);
        normalize(&mut out).unwrap();
        assert_eq!(out[0], 1.0);
    }

    #[test]
    fn lda_matches_hand_arithmetic() {
        // C=[2,0], D_w=[1,0], Drow=[3,1], V=3, alpha=beta=0.5.
        let cfg = ModelConfig::lda(2, 0.5, 0.5);
        let ctx = ctx_from(&[2.0, 0.0], &[1.0, 0.0], &[3.0, 1.0], 3, 3.0);
        let mut out = [0.0; 2];
        lda_posterior(&ctx, &cfg, &mut out);
        let expect0 = (2.0 + 0.5) * (1.0 + 0.5) / (3.0 + 1.5);
        let expect1 = (0.0 + 0.5) * (0.0 + 0.5) / (1.0 + 1.5);
        assert!((out[0] - expect0).abs() < 1e-15);
        assert!((out[1] - expect1).abs() < 1e-15);
    }

    #[test]
    fn rtm_without_links_equals_lda() {
        let cfg = ModelConfig::rtm(2, 0.4, 0.3, vec![0.75, 0.75]);
        let ctx = ctx_from(&[2.0, 1.0], &[1.0, 0.0], &[3.0, 1.0], 3, 3.0);
        let mut lda_out = [0.0; 2];
        lda_posterior(&ctx, &ModelConfig::lda(2, 0.4, 0.3), &mut lda_out);
        let mut rtm_out = [0.0; 2];
        rtm_posterior(&ctx, &cfg, &mut rtm_out);
        assert_eq!(rtm_out, lda_out);
    }

    #[test]
    fn rtm_zero_weights_equals_lda() {
        let cfg = ModelConfig::rtm(2, 0.4, 0.3, vec![0.0, 0.0]);
        let sums = [0.7, 0.3];
        let mut ctx = ctx_from(&[2.0, 1.0], &[1.0, 0.0], &[3.0, 1.0], 3, 3.0);
        ctx.neighbor_sum = Some(&sums);
        let mut lda_out = [0.0; 2];
        lda_posterior(&ctx, &ModelConfig::lda(2, 0.4, 0.3), &mut lda_out);
        let mut rtm_out = [0.0; 2];
        rtm_posterior(&ctx, &cfg, &mut rtm_out);
        for k in 0..2 {
            assert!((rtm_out[k] - lda_out[k]).abs() <= 1e-12 * lda_out[k]);
        }
    }

    #[test]
    fn rtm_single_neighbor_scales_by_exp_half() {
        // One neighbor with proportions [1,0], eta=[1,1], N_d=2: the
        // normalized posterior matches the LDA term scaled by [e^0.5, 1].
        let cfg = ModelConfig::rtm(2, 0.5, 0.5, vec![1.0, 1.0]);
        let sums = [1.0, 0.0];
        let mut ctx = ctx_from(&[1.0, 1.0], &[1.0, 0.0], &[2.0, 2.0], 3, 2.0);
        ctx.neighbor_sum = Some(&sums);
        let mut lda_out = [0.0; 2];
        lda_posterior(&ctx, &ModelConfig::lda(2, 0.5, 0.5), &mut lda_out);
        let mut expect = [lda_out[0] * (0.5f64).exp(), lda_out[1]];
        normalize(&mut expect).unwrap();
        let mut rtm_out = [0.0; 2];
        rtm_posterior(&ctx, &cfg, &mut rtm_out);
        normalize(&mut rtm_out).unwrap();
        for k in 0..2 {
            assert!((rtm_out[k] - expect[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn slda_zero_weights_equals_lda() {
        let cfg = ModelConfig::slda(2, 0.6, 0.5, vec![0.0, 0.0], 0.0);
        let mut ctx = ctx_from(&[2.0, 1.0], &[1.0, 0.0], &[3.0, 1.0], 3, 4.0);
        ctx.label = Some(3.0);
        let mut lda_out = [0.0; 2];
        lda_posterior(&ctx, &ModelConfig::lda(2, 0.6, 0.5), &mut lda_out);
        let mut slda_out = [0.0; 2];
        slda_posterior(&ctx, &cfg, &mut slda_out);
        // Exponents are a constant -(y-a)^2; the max shift cancels it.
        for k in 0..2 {
            assert!((slda_out[k] - lda_out[k]).abs() <= 1e-12 * lda_out[k]);
        }
    }

    #[test]
    fn slda_exact_fit_gets_unit_factor() {
        // y equals eta^T zbar(0) + a, so topic 0 keeps the full LDA mass
        // while topic 1 is damped.
        let cfg = ModelConfig::slda(2, 0.5, 0.5, vec![1.0, 0.0], 0.0);
        // doc_counts=[1,0], N_d=2: zbar(0)=[1,0], zbar(1)=[0.5,0.5].
        let mut ctx = ctx_from(&[1.0, 0.0], &[1.0, 1.0], &[2.0, 2.0], 3, 2.0);
        ctx.label = Some(1.0);
        let mut lda_out = [0.0; 2];
        lda_posterior(&ctx, &ModelConfig::lda(2, 0.5, 0.5), &mut lda_out);
        let mut out = [0.0; 2];
        slda_posterior(&ctx, &cfg, &mut out);
        // residual(0) = 1 - (0*1+1)/2*... : dot = 1*1 + 0*0 = 1; k=0 ->
        // (dot+eta_0)/N_d = (1+1)/2 = 1 -> residual 0 -> factor 1.
        assert!((out[0] - lda_out[0]).abs() < 1e-15);
        // k=1 -> (1+0)/2 = 0.5 -> residual 0.5 -> factor e^{-0.25}.
        let expect1 = lda_out[1] * (-0.25f64).exp();
        assert!((out[1] - expect1).abs() < 1e-15);
    }

    #[test]
    fn slda_hand_example() {
        // K=2, N_d=2, y=1, eta=[1,0], a=0; factors exp(-(1 - zbar_1(k))^2).
        let cfg = ModelConfig::slda(2, 0.5, 0.5, vec![1.0, 0.0], 0.0);
        let doc_counts = [0.0, 1.0];
        let mut ctx = ctx_from(&doc_counts, &[1.0, 1.0], &[2.0, 2.0], 3, 2.0);
        ctx.label = Some(1.0);
        let mut lda_out = [0.0; 2];
        lda_posterior(&ctx, &ModelConfig::lda(2, 0.5, 0.5), &mut lda_out);
        let mut out = [0.0; 2];
        slda_posterior(&ctx, &cfg, &mut out);
        // dot = 0; zbar_1(0) = (0+1)/2 = 0.5, zbar_1(1) = 0/2 = 0.
        let f = [
            (-(1.0f64 - 0.5).powi(2)).exp(),
            (-(1.0f64 - 0.0).powi(2)).exp(),
        ];
        let max = f[0].max(f[1]);
        for k in 0..2 {
            let expect = lda_out[k] * f[k] / max;
            assert!((out[k] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_uniform() {
        let mut v = [1.0, 1.0, 1.0, 1.0];
        normalize(&mut v).unwrap();
        assert_eq!(v, [0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn normalize_all_zero_errors() {
        let mut v = [0.0, 0.0];
        assert!(normalize(&mut v).is_err());
    }

    #[test]
    fn normalize_sums_to_one() {
        let mut v = [0.3, 1.9, 0.004, 7.2];
        normalize(&mut v).unwrap();
        let s: f64 = v.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_is_scale_invariant() {
        for scale in [1e-6, 1e6] {
            let base = [0.4, 1.2, 0.9];
            let mut a = base;
            let mut b = base.map(|x| x * scale);
            normalize(&mut a).unwrap();
            normalize(&mut b).unwrap();
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn posteriors_are_positive() {
        let cfg = ModelConfig::lda(4, 0.1, 0.1);
        let zeros = [0.0; 4];
        let ctx = ctx_from(&zeros, &zeros, &zeros, 9, 2.0);
        let mut out = [0.0; 4];
        lda_posterior(&ctx, &cfg, &mut out);
        assert!(out.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn config_validation_catches_missing_fields() {
        assert!(ModelConfig::lda(0, 0.5, 0.5).validate().is_err());
        assert!(ModelConfig::lda(2, 0.0, 0.5).validate().is_err());
        let mut cfg = ModelConfig::rtm(2, 0.5, 0.5, vec![0.1]);
        assert!(cfg.validate().is_err());
        cfg.eta = Some(vec![0.1, 0.2]);
        assert!(cfg.validate().is_ok());
        let mut s = ModelConfig::slda(2, 0.5, 0.5, vec![0.1, 0.2], 0.0);
        assert!(s.validate().is_ok());
        s.intercept = None;
        assert!(s.validate().is_err());
    }
}
