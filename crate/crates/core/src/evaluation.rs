//! Spectral efficiency bounds by Monte Carlo over coherence blocks.
//!
//! Expectations are taken over channel and noise realizations with the LoS
//! phases held fixed, which corresponds to coding across many blocks that
//! share the same phases.

use std::f64::consts::LN_2;

use rayon::prelude::*;

use crate::beamforming::{combiners_for_block, design, local_matrices, BeamformerSet, Scheme};
use crate::channel::ChannelDraw;
use crate::error::{Error, Result};
use crate::estimation::{EstimateSet, Estimator};
use crate::linalg::C64;
use crate::rng::{substream, Purpose};
use crate::setup::Setup;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

pub const MIN_EVAL_DRAWS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budgets {
    /// Draws used to estimate LSFD moments and Π.
    pub statistics: usize,
    /// Draws used to evaluate the bounds.
    pub evaluation: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self { statistics: 500, evaluation: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bound {
    Uatf,
    Cd,
}

impl Bound {
    pub fn name(self) -> &'static str {
        match self {
            Bound::Uatf => "uatf",
            Bound::Cd => "cd",
        }
    }
}

/// Per-block quantities of one UE under one combiner.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UeBlockTerms {
    /// gₖₖ = vₖᴴDₖhₖ with true channels.
    pub g_own: C64,
    /// Σᵢ pᵢ|gₖᵢ|².
    pub weighted_power: f64,
    /// ‖Dₖvₖ‖².
    pub norm_squared: f64,
    /// log₂(1 + SINRᶜᵈ) with estimated channels.
    pub cd_rate: f64,
}

/// Per-UE terms of one block. UatF terms use the true channels; the
/// coherent-decoding SINR uses the estimates plus the `vᴴDZDv` error term.
pub fn block_terms(
    bf: &BeamformerSet,
    draw: &ChannelDraw,
    est: &EstimateSet,
    estimator: &Estimator,
    powers: &[f64],
    sigma2: f64,
) -> Vec<UeBlockTerms> {
    bf.combiners
        .iter()
        .map(|v| {
            let k = v.ue;
            let norm_squared = v.norm_squared();
            let mut weighted_power = 0.0;
            let mut g_own = C64::new(0.0, 0.0);
            let mut cd_interference = 0.0;
            let mut cd_signal = 0.0;
            for (i, &p) in powers.iter().enumerate() {
                let g = v.response(&draw.true_channels, i);
                weighted_power += p * g.norm_sqr();
                let gh = v.response(&est.estimates, i).norm_sqr() * p;
                if i == k {
                    g_own = g;
                    cd_signal = gh;
                } else {
                    cd_interference += gh;
                }
            }
            let denom = cd_interference + v.error_form(estimator) + sigma2 * norm_squared;
            let sinr = if cd_signal == 0.0 { 0.0 } else { cd_signal / denom };
            UeBlockTerms { g_own, weighted_power, norm_squared, cd_rate: (1.0 + sinr).log2() }
        })
        .collect()
}

/// The three parts of the UatF SINR of one UE.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UatfTerms {
    /// pₖ|E{gₖₖ}|².
    pub signal: f64,
    /// Σᵢ pᵢE{|gₖᵢ|²} − pₖ|E{gₖₖ}|², after clamping at zero.
    pub interference: f64,
    /// σ²E{‖Dₖvₖ‖²}.
    pub noise: f64,
}

impl UatfTerms {
    pub fn sinr(&self) -> f64 {
        if self.signal == 0.0 {
            0.0
        } else {
            self.signal / (self.interference + self.noise)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UatfEstimate {
    pub se: f64,
    /// 95% half-width (delta method over the sample means).
    pub ci: f64,
    pub terms: UatfTerms,
    /// `E|s − ŝ|²` implied by the same sample means.
    pub mse: f64,
    pub clamped: bool,
}

/// UatF spectral efficiency of UE `k` from its per-block terms.
pub fn uatf_se(blocks: &[UeBlockTerms], power: f64, sigma2: f64, prelog: f64) -> Result<UatfEstimate> {
    if blocks.len() < MIN_EVAL_DRAWS {
        return Err(Error::Budget { what: "UatF evaluation draws", got: blocks.len(), min: MIN_EVAL_DRAWS });
    }
    let n = blocks.len() as f64;
    let sample = |b: &UeBlockTerms| [b.g_own.re, b.g_own.im, b.weighted_power, b.norm_squared];
    let mut mean = [0.0; 4];
    for b in blocks {
        for (m, x) in mean.iter_mut().zip(sample(b)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = [[0.0; 4]; 4];
    for b in blocks {
        let x = sample(b);
        for i in 0..4 {
            for j in 0..4 {
                cov[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    // Covariance of the sample means.
    for row in cov.iter_mut() {
        for c in row.iter_mut() {
            *c /= (n - 1.0) * n;
        }
    }
    let [m_re, m_im, s, w] = mean;
    let signal = power * (m_re * m_re + m_im * m_im);
    let raw_interference = s - signal;
    // Round-off below the sample scale is not worth a flag.
    let clamped = raw_interference < -1e-9 * s;
    let interference = raw_interference.max(0.0);
    let noise = sigma2 * w;
    let terms = UatfTerms { signal, interference, noise };
    let mse = 1.0 - 2.0 * power.sqrt() * m_re + s + noise;
    if signal == 0.0 {
        return Ok(UatfEstimate { se: 0.0, ci: 0.0, terms, mse, clamped });
    }
    let se = prelog * (1.0 + terms.sinr()).log2();
    let total = s + noise;
    let denom = interference + noise;
    let k = prelog / LN_2;
    let grad = [
        k * 2.0 * power * m_re / denom,
        k * 2.0 * power * m_im / denom,
        k * (1.0 / total - 1.0 / denom),
        k * sigma2 * (1.0 / total - 1.0 / denom),
    ];
    let mut var = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            var += grad[i] * cov[i][j] * grad[j];
        }
    }
    Ok(UatfEstimate { se, ci: Z95 * var.max(0.0).sqrt(), terms, mse, clamped })
}

/// Coherent-decoding spectral efficiency and its 95% half-width.
pub fn cd_se(blocks: &[UeBlockTerms], prelog: f64) -> Result<(f64, f64)> {
    if blocks.len() < MIN_EVAL_DRAWS {
        return Err(Error::Budget { what: "CD evaluation draws", got: blocks.len(), min: MIN_EVAL_DRAWS });
    }
    let n = blocks.len() as f64;
    let mean = blocks.iter().map(|b| b.cd_rate).sum::<f64>() / n;
    let var = blocks.iter().map(|b| (b.cd_rate - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((prelog * mean, Z95 * prelog * (var / n).sqrt()))
}

/// Spectral efficiencies of every UE for one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SeReport {
    pub scheme: Scheme,
    pub uatf_se: Vec<f64>,
    pub uatf_ci: Vec<f64>,
    pub cd_se: Vec<f64>,
    pub cd_ci: Vec<f64>,
    pub uatf_terms: Vec<UatfTerms>,
    pub mse: Vec<f64>,
    pub draw_count: usize,
    pub stat_draws: usize,
    pub prelog: f64,
    /// Conditions worth knowing about (clamped denominators, regularized
    /// LSFD systems, least-squares stage 2).
    pub flags: Vec<String>,
}

/// Minimum and sum of per-UE values with 95% half-widths.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregates {
    pub min: f64,
    pub min_ci: f64,
    pub sum: f64,
    pub sum_ci: f64,
    /// Per-UE values in ascending order (empirical CDF support).
    pub sorted: Vec<f64>,
}

pub fn aggregate(values: &[f64], cis: &[f64]) -> Aggregates {
    let mut arg = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[arg] {
            arg = i;
        }
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Aggregates {
        min: values[arg],
        min_ci: cis[arg],
        sum: values.iter().sum(),
        sum_ci: cis.iter().map(|c| c * c).sum::<f64>().sqrt(),
        sorted,
    }
}

impl SeReport {
    pub fn values(&self, bound: Bound) -> (&[f64], &[f64]) {
        match bound {
            Bound::Uatf => (&self.uatf_se, &self.uatf_ci),
            Bound::Cd => (&self.cd_se, &self.cd_ci),
        }
    }

    pub fn aggregates(&self, bound: Bound) -> Aggregates {
        let (v, c) = self.values(bound);
        aggregate(v, c)
    }
}

/// Designs and evaluates every scheme in `schemes` on one setup.
///
/// Statistics draws use streams `(seed, statistics, setup_index, i)` and
/// evaluation draws `(seed, evaluation, setup_index, i)`, so all schemes see
/// the same blocks and results do not depend on the worker count.
pub fn run_monte_carlo(setup: &Setup, schemes: &[Scheme], budgets: Budgets, seed: u64, setup_index: u32) -> Result<Vec<SeReport>> {
    if budgets.evaluation < MIN_EVAL_DRAWS {
        return Err(Error::Budget { what: "evaluation draws", got: budgets.evaluation, min: MIN_EVAL_DRAWS });
    }
    let design = design(setup, schemes, budgets.statistics, seed, setup_index)?;
    let need_local = schemes.iter().any(|s| s.is_distributed());
    let powers = &setup.plan.powers_w;
    let sigma2 = setup.noise_w();

    let per_draw: Result<Vec<Vec<Vec<UeBlockTerms>>>> = (0..budgets.evaluation)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, Purpose::EvaluationDraw, setup_index, i as u32);
            let (draw, est) = setup.sample_block(&mut rng);
            let local = if need_local { Some(local_matrices(&est, &setup.estimator, powers, sigma2)?) } else { None };
            schemes
                .iter()
                .map(|&scheme| {
                    let bf = combiners_for_block(setup, &design, scheme, &est, local.as_deref())?;
                    Ok(block_terms(&bf, &draw, &est, &setup.estimator, powers, sigma2))
                })
                .collect()
        })
        .collect();
    let per_draw = per_draw?;

    let prelog = setup.cfg.prelog();
    let k_count = setup.ue_count();
    schemes
        .iter()
        .enumerate()
        .map(|(s_idx, &scheme)| {
            let mut report = SeReport {
                scheme,
                uatf_se: Vec::with_capacity(k_count),
                uatf_ci: Vec::with_capacity(k_count),
                cd_se: Vec::with_capacity(k_count),
                cd_ci: Vec::with_capacity(k_count),
                uatf_terms: Vec::with_capacity(k_count),
                mse: Vec::with_capacity(k_count),
                draw_count: budgets.evaluation,
                stat_draws: if scheme.is_distributed() && scheme != Scheme::Lmmse { design.stat_draws } else { 0 },
                prelog,
                flags: Vec::new(),
            };
            for k in 0..k_count {
                let blocks: Vec<UeBlockTerms> = per_draw.iter().map(|d| d[s_idx][k]).collect();
                let u = uatf_se(&blocks, powers[k], sigma2, prelog)?;
                let (cd, cd_ci) = cd_se(&blocks, prelog)?;
                if u.clamped {
                    report.flags.push(format!("ue {k}: UatF interference term clamped at zero"));
                }
                report.uatf_se.push(u.se);
                report.uatf_ci.push(u.ci);
                report.uatf_terms.push(u.terms);
                report.mse.push(u.mse);
                report.cd_se.push(cd);
                report.cd_ci.push(cd_ci);
            }
            if scheme == Scheme::LmmseLsfd {
                if let Some(w) = &design.lsfd {
                    report.flags.extend(w.regularized.iter().map(|k| format!("ue {k}: LSFD system regularized")));
                }
            }
            if scheme == Scheme::Ltmmse {
                if let Some(s2) = &design.stage2 {
                    report.flags.extend(s2.fallback.iter().map(|k| format!("ue {k}: stage-2 least-squares fallback")));
                }
            }
            Ok(report)
        })
        .collect()
}
