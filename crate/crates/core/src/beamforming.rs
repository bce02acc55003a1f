//! Uplink combining schemes.
//!
//! - Centralized MMSE: every serving AP shares its instantaneous estimates
//!   and UE `k` is detected with
//!   `vₖ = (DₖĤPĤᴴDₖ + DₖZDₖ + σ²I)⁻¹ DₖĤP^{1/2}eₖ`.
//! - Local MMSE with LSFD: AP `l` applies the `k`th column of
//!   `Vₗ = (ĤₗPĤₗᴴ + Zₗ + σ²I)⁻¹ĤₗP^{1/2}` and the decoder weights the local
//!   estimates with statistically optimal LSFD coefficients.
//! - Local team MMSE: AP `l` applies `Vₗ cₖₗ`, where the second-stage vectors
//!   solve `cₖₗ + Σ_{j∈ℒₖ∖l} Πⱼ cₖⱼ = eₖ` with `Πⱼ = E{P^{1/2}ĤⱼᴴVⱼ}`.
//!
//! Statistical quantities (LSFD moments and Π) are estimated on a dedicated
//! draw budget that is never reused for evaluation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelDraw;
use crate::error::{Error, Result};
use crate::estimation::{EstimateSet, Estimator};
use crate::linalg::{hermitian_factor, hermitian_solve, trace_re, CMatrix, CVector, C64, ONE};
use crate::rng::{substream, Purpose};
use crate::scenario::ServicePlan;
use crate::setup::Setup;

/// Draws per reduction chunk. Fixed so results do not depend on the thread
/// count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "MMSE")]
    Mmse,
    #[serde(rename = "LMMSE_LSFD")]
    LmmseLsfd,
    #[serde(rename = "LTMMSE")]
    Ltmmse,
    /// Local MMSE with unit weights; a reference point below LSFD.
    #[serde(rename = "LMMSE")]
    Lmmse,
}

impl Scheme {
    pub const DEFAULT_SET: [Scheme; 3] = [Scheme::Mmse, Scheme::LmmseLsfd, Scheme::Ltmmse];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Mmse => "MMSE",
            Scheme::LmmseLsfd => "LMMSE_LSFD",
            Scheme::Ltmmse => "LTMMSE",
            Scheme::Lmmse => "LMMSE",
        }
    }

    pub fn is_distributed(self) -> bool {
        !matches!(self, Scheme::Mmse)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MMSE" => Ok(Scheme::Mmse),
            "LMMSE_LSFD" => Ok(Scheme::LmmseLsfd),
            "LTMMSE" => Ok(Scheme::Ltmmse),
            "LMMSE" => Ok(Scheme::Lmmse),
            other => Err(Error::invalid(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Combiner of one UE, stored as N-blocks for the APs of its cluster.
/// Blocks outside the cluster are zero and not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    pub ue: usize,
    pub aps: Vec<usize>,
    pub blocks: Vec<CVector>,
}

impl Combiner {
    /// `vₖᴴ Dₖ hᵢ` for the channels of UE `i` in `grid`.
    pub fn response(&self, grid: &crate::linalg::PairGrid<CVector>, i: usize) -> C64 {
        self.aps
            .iter()
            .zip(&self.blocks)
            .map(|(&l, v)| v.dotc(grid.get(i, l)))
            .sum()
    }

    /// `‖Dₖvₖ‖²`.
    pub fn norm_squared(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum()
    }

    /// `vₖᴴ DₖZDₖ vₖ` with `Z = blockdiag(Zₗ)`.
    pub fn error_form(&self, estimator: &Estimator) -> f64 {
        self.aps
            .iter()
            .zip(&self.blocks)
            .map(|(&l, v)| v.dotc(&(estimator.z_matrix(l) * v)).re)
            .sum()
    }

    /// Network-wide LN vector with zeros outside the cluster.
    pub fn stacked(&self, ap_count: usize, antennas: usize) -> CVector {
        let mut out = CVector::zeros(ap_count * antennas);
        for (&l, b) in self.aps.iter().zip(&self.blocks) {
            out.rows_mut(l * antennas, antennas).copy_from(b);
        }
        out
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self { ue: self.ue, aps: self.aps.clone(), blocks: self.blocks.iter().map(|b| b * s).collect() }
    }
}

/// Per-block combiners of every UE for one scheme.
#[derive(Debug, Clone)]
pub struct BeamformerSet {
    pub scheme: Scheme,
    pub combiners: Vec<Combiner>,
    /// Local matrices Vₗ (distributed schemes only).
    pub local: Option<Vec<CMatrix>>,
}

/// `Vₗ = (ĤₗPĤₗᴴ + Zₗ + σ²I)⁻¹ĤₗP^{1/2}` (N×K).
pub fn lmmse_local_matrix(est_l: &CMatrix, z_l: &CMatrix, powers: &[f64], sigma2: f64) -> Result<CMatrix> {
    let n = est_l.nrows();
    let scaled = CMatrix::from_fn(n, est_l.ncols(), |r, c| est_l[(r, c)] * powers[c].sqrt());
    let a = &scaled * scaled.adjoint() + z_l + CMatrix::identity(n, n) * C64::new(sigma2, 0.0);
    hermitian_solve(&a, &scaled)
}

/// Vₗ for every AP.
pub fn local_matrices(est: &EstimateSet, estimator: &Estimator, powers: &[f64], sigma2: f64) -> Result<Vec<CMatrix>> {
    (0..est.estimates.aps())
        .map(|l| lmmse_local_matrix(&est.ap_matrix(l), estimator.z_matrix(l), powers, sigma2))
        .collect()
}

/// Centralized MMSE combiner of UE `k`, solved on its cluster only.
pub fn mmse_combiner_for(
    k: usize,
    est: &EstimateSet,
    estimator: &Estimator,
    plan: &ServicePlan,
    sigma2: f64,
) -> Result<Combiner> {
    let aps = &plan.cluster_of_ue[k];
    let k_count = plan.ue_count();
    let n = est.estimates.get(0, 0).len();
    let dim = aps.len() * n;
    let mut g = CMatrix::zeros(dim, k_count);
    let mut a = CMatrix::identity(dim, dim) * C64::new(sigma2, 0.0);
    for (m, &l) in aps.iter().enumerate() {
        for i in 0..k_count {
            let col = est.estimates.get(i, l) * C64::new(plan.powers_w[i].sqrt(), 0.0);
            g.view_mut((m * n, i), (n, 1)).copy_from(&col);
        }
        let mut block = a.view_mut((m * n, m * n), (n, n));
        block += estimator.z_matrix(l);
    }
    a += &g * g.adjoint();
    let b = g.column(k).into_owned();
    let v = hermitian_factor(&a)?.solve(&b);
    let blocks = (0..aps.len()).map(|m| v.rows(m * n, n).into_owned()).collect();
    Ok(Combiner { ue: k, aps: aps.clone(), blocks })
}

pub fn mmse_combiner(est: &EstimateSet, estimator: &Estimator, plan: &ServicePlan, sigma2: f64) -> Result<BeamformerSet> {
    let combiners = (0..plan.ue_count())
        .map(|k| mmse_combiner_for(k, est, estimator, plan, sigma2))
        .collect::<Result<_>>()?;
    Ok(BeamformerSet { scheme: Scheme::Mmse, combiners, local: None })
}

/// Local MMSE combiners weighted per AP: `vₖₗ = Vₗeₖ·wₖ[m]` for the `m`th AP
/// of the cluster. `None` weights means unit weights.
pub fn assemble_lmmse(local: Vec<CMatrix>, weights: Option<&LsfdWeights>, plan: &ServicePlan) -> BeamformerSet {
    let combiners = (0..plan.ue_count())
        .map(|k| {
            let aps = plan.cluster_of_ue[k].clone();
            let blocks = aps
                .iter()
                .enumerate()
                .map(|(m, &l)| {
                    let w = weights.map_or(ONE, |w| w.weights[k][m]);
                    local[l].column(k) * w
                })
                .collect();
            Combiner { ue: k, aps, blocks }
        })
        .collect();
    let scheme = if weights.is_some() { Scheme::LmmseLsfd } else { Scheme::Lmmse };
    BeamformerSet { scheme, combiners, local: Some(local) }
}

/// `vₖₗ = Vₗcₖₗ`.
pub fn assemble_ltmmse(local: Vec<CMatrix>, stage2: &Stage2, plan: &ServicePlan) -> BeamformerSet {
    let combiners = (0..plan.ue_count())
        .map(|k| {
            let aps = plan.cluster_of_ue[k].clone();
            let blocks = aps.iter().enumerate().map(|(m, &l)| &local[l] * &stage2.vectors[k][m]).collect();
            Combiner { ue: k, aps, blocks }
        })
        .collect();
    BeamformerSet { scheme: Scheme::Ltmmse, combiners, local: Some(local) }
}

/// Moments of the local-estimate responses of one UE over its cluster.
///
/// With `[g̃ₖᵢ]ₘ = (V_{lₘ}eₖ)ᴴ h_{i,lₘ}` for the `m`th cluster AP `lₘ`:
/// `mean = E{g̃ₖₖ}`, `second = Σᵢ pᵢ E{g̃ₖᵢg̃ₖᵢᴴ}` and
/// `noise = σ² E{‖V_{lₘ}eₖ‖²}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LsfdMoments {
    pub ue: usize,
    pub aps: Vec<usize>,
    pub power: f64,
    pub mean: CVector,
    pub second: CMatrix,
    pub noise: DVector<f64>,
    pub draws: usize,
}

impl LsfdMoments {
    /// UatF SINR of the weighted combination `aᴴ g̃`.
    pub fn uatf_sinr(&self, a: &CVector) -> f64 {
        let signal = self.power * a.dotc(&self.mean).norm_sqr();
        let total = a.dotc(&(&self.second * a)).re + self.noise.iter().zip(a.iter()).map(|(s, w)| s * w.norm_sqr()).sum::<f64>();
        if signal == 0.0 {
            return 0.0;
        }
        signal / (total - signal).max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsfdWeights {
    /// Per UE, one weight per cluster AP.
    pub weights: Vec<CVector>,
    /// UEs whose system needed a ridge.
    pub regularized: Vec<usize>,
}

/// Optimal LSFD weights of one UE, returned in the MSE-minimizing scale
/// `√pₖ (Σᵢ pᵢGₖᵢ + Sₖ)⁻¹ fₖ`, which is proportional to the UatF
/// Rayleigh-quotient maximizer `(Σᵢ pᵢGₖᵢ + Sₖ − pₖfₖfₖᴴ)⁻¹ fₖ`.
/// The flag reports whether a `10⁻¹² tr` ridge was needed.
pub fn lsfd_weights(m: &LsfdMoments) -> (CVector, bool) {
    let dim = m.mean.len();
    let mut b = m.second.clone();
    for i in 0..dim {
        b[(i, i)] += C64::new(m.noise[i], 0.0);
    }
    let rhs = &m.mean * C64::new(m.power.sqrt(), 0.0);
    if let Ok(f) = hermitian_factor(&b) {
        let a = f.solve(&rhs);
        if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return (a, false);
        }
    }
    let ridge = 1e-12 * trace_re(&b).max(f64::MIN_POSITIVE);
    let reg = b + CMatrix::identity(dim, dim) * C64::new(ridge, 0.0);
    match hermitian_factor(&reg) {
        Ok(f) => (f.solve(&rhs), true),
        Err(_) => (CVector::zeros(dim), true),
    }
}

/// Sample mean of `P^{1/2}ĤₗᴴVₗ` for every AP.
#[derive(Debug, Clone)]
pub struct PiSet {
    pub pi: Vec<CMatrix>,
    /// Standard error of each entry of the sample mean.
    pub std_err: Vec<DMatrix<f64>>,
    pub sample_count: usize,
}

impl PiSet {
    /// Largest off-diagonal `|[Πₗ]ᵢⱼ|` measured in standard errors.
    pub fn max_off_diagonal_z(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (p, se) in self.pi.iter().zip(&self.std_err) {
            for i in 0..p.nrows() {
                for j in 0..p.ncols() {
                    if i != j {
                        let z = if se[(i, j)] > 0.0 { p[(i, j)].norm() / se[(i, j)] } else if p[(i, j)].norm() > 0.0 { f64::INFINITY } else { 0.0 };
                        worst = worst.max(z);
                    }
                }
            }
        }
        worst
    }
}

/// Second-stage vectors of every UE, aligned with its cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2 {
    pub vectors: Vec<Vec<CVector>>,
    /// UEs whose block system was solved by least squares.
    pub fallback: Vec<usize>,
}

/// Solves `cₖₗ + Σ_{j∈ℒₖ∖l} Πⱼcₖⱼ = eₖ` for all `l ∈ ℒₖ`. Returns the vectors
/// in cluster order and whether the least-squares fallback was used.
pub fn ltmmse_stage2(pi: &[CMatrix], cluster: &[usize], k: usize) -> (Vec<CVector>, bool) {
    let m = cluster.len();
    let k_count = pi[0].nrows();
    let mut e = CVector::zeros(k_count);
    e[k] = ONE;
    if m == 1 {
        return (vec![e], false);
    }
    let dim = m * k_count;
    let mut a = CMatrix::identity(dim, dim);
    for row in 0..m {
        for (col, &j) in cluster.iter().enumerate() {
            if row != col {
                a.view_mut((row * k_count, col * k_count), (k_count, k_count)).copy_from(&pi[j]);
            }
        }
    }
    let mut rhs = CVector::zeros(dim);
    for row in 0..m {
        rhs[row * k_count + k] = ONE;
    }
    let split = |x: &CVector| (0..m).map(|r| x.rows(r * k_count, k_count).into_owned()).collect::<Vec<_>>();
    let finite = |x: &CVector| x.iter().all(|z| z.re.is_finite() && z.im.is_finite());
    if let Some(x) = a.clone().lu().solve(&rhs) {
        let resid = (&a * &x - &rhs).norm();
        if finite(&x) && resid <= 1e-8 * rhs.norm() {
            return (split(&x), false);
        }
    }
    let svd = a.svd(true, true);
    let x = svd.solve(&rhs, 1e-12).unwrap_or_else(|_| CVector::zeros(dim));
    (split(&x), true)
}

pub fn stage2_from_pi(pi: &PiSet, plan: &ServicePlan) -> Stage2 {
    let mut fallback = Vec::new();
    let vectors = (0..plan.ue_count())
        .map(|k| {
            let (c, fb) = ltmmse_stage2(&pi.pi, &plan.cluster_of_ue[k], k);
            if fb {
                fallback.push(k);
            }
            c
        })
        .collect();
    Stage2 { vectors, fallback }
}

/// Accumulated statistics over a chunk of draws.
#[derive(Debug, Clone)]
struct StatAccumulator {
    draws: usize,
    pi_sum: Vec<CMatrix>,
    pi_sq: Vec<DMatrix<f64>>,
    lsfd_mean: Vec<CVector>,
    lsfd_second: Vec<CMatrix>,
    lsfd_noise: Vec<DVector<f64>>,
}

impl StatAccumulator {
    fn new(setup: &Setup, need_pi: bool, need_lsfd: bool) -> Self {
        let k = setup.ue_count();
        let l = setup.ap_count();
        let plan = &setup.plan;
        let pl = if need_pi { l } else { 0 };
        let kl = if need_lsfd { k } else { 0 };
        Self {
            draws: 0,
            pi_sum: vec![CMatrix::zeros(k, k); pl],
            pi_sq: vec![DMatrix::zeros(k, k); pl],
            lsfd_mean: (0..kl).map(|u| CVector::zeros(plan.cluster_of_ue[u].len())).collect(),
            lsfd_second: (0..kl).map(|u| CMatrix::zeros(plan.cluster_of_ue[u].len(), plan.cluster_of_ue[u].len())).collect(),
            lsfd_noise: (0..kl).map(|u| DVector::zeros(plan.cluster_of_ue[u].len())).collect(),
        }
    }

    fn add_draw(&mut self, setup: &Setup, draw: &ChannelDraw, est: &EstimateSet, local: &[CMatrix]) {
        self.draws += 1;
        let plan = &setup.plan;
        let k_count = plan.ue_count();
        let sqrt_p: Vec<f64> = plan.powers_w.iter().map(|p| p.sqrt()).collect();
        for (l, (sum, sq)) in self.pi_sum.iter_mut().zip(self.pi_sq.iter_mut()).enumerate() {
            let h = est.ap_matrix(l);
            let mut x = h.adjoint() * &local[l];
            for i in 0..k_count {
                x.row_mut(i).scale_mut(sqrt_p[i]);
            }
            *sum += &x;
            *sq += x.map(|z| z.norm_sqr());
        }
        if self.lsfd_mean.is_empty() {
            return;
        }
        // Responses (Vₗeₖ)ᴴ hᵢₗ for every AP, as K×K matrices.
        let responses: Vec<CMatrix> = (0..setup.ap_count()).map(|l| local[l].adjoint() * draw.ap_matrix(l)).collect();
        let sigma2 = setup.noise_w();
        for k in 0..k_count {
            let aps = &plan.cluster_of_ue[k];
            let m = aps.len();
            let mut own = CVector::zeros(m);
            for (idx, &l) in aps.iter().enumerate() {
                own[idx] = responses[l][(k, k)];
                self.lsfd_noise[k][idx] += sigma2 * local[l].column(k).norm_squared();
            }
            self.lsfd_mean[k] += &own;
            let second = &mut self.lsfd_second[k];
            for i in 0..k_count {
                let g = CVector::from_fn(m, |idx, _| responses[aps[idx]][(k, i)]);
                second.gerc(C64::new(plan.powers_w[i], 0.0), &g, &g, ONE);
            }
        }
    }

    fn merge(&mut self, other: &Self) {
        self.draws += other.draws;
        for (a, b) in self.pi_sum.iter_mut().zip(&other.pi_sum) {
            *a += b;
        }
        for (a, b) in self.pi_sq.iter_mut().zip(&other.pi_sq) {
            *a += b;
        }
        for (a, b) in self.lsfd_mean.iter_mut().zip(&other.lsfd_mean) {
            *a += b;
        }
        for (a, b) in self.lsfd_second.iter_mut().zip(&other.lsfd_second) {
            *a += b;
        }
        for (a, b) in self.lsfd_noise.iter_mut().zip(&other.lsfd_noise) {
            *a += b;
        }
    }
}

/// Statistics estimated from the dedicated statistics draws of one setup.
#[derive(Debug, Clone)]
pub struct Statistics {
    pub pi: Option<PiSet>,
    pub lsfd: Option<Vec<LsfdMoments>>,
}

/// Minimum number of statistics draws.
pub const MIN_STAT_DRAWS: usize = 1;

/// Runs `draws` statistics blocks (streams `(seed, statistics, setup_index,
/// i)`) and estimates Π and/or the LSFD moments.
pub fn estimate_statistics(
    setup: &Setup,
    draws: usize,
    seed: u64,
    setup_index: u32,
    need_pi: bool,
    need_lsfd: bool,
) -> Result<Statistics> {
    if draws < MIN_STAT_DRAWS {
        return Err(Error::Budget { what: "statistics draws", got: draws, min: MIN_STAT_DRAWS });
    }
    let chunks = draws.div_ceil(CHUNK);
    let partial: Result<Vec<StatAccumulator>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = StatAccumulator::new(setup, need_pi, need_lsfd);
            for i in (c * CHUNK)..((c + 1) * CHUNK).min(draws) {
                let mut rng = substream(seed, Purpose::StatisticsDraw, setup_index, i as u32);
                let (draw, est) = setup.sample_block(&mut rng);
                let local = local_matrices(&est, &setup.estimator, &setup.plan.powers_w, setup.noise_w())?;
                acc.add_draw(setup, &draw, &est, &local);
            }
            Ok(acc)
        })
        .collect();
    let partial = partial?;
    let mut total = StatAccumulator::new(setup, need_pi, need_lsfd);
    for p in &partial {
        total.merge(p);
    }
    let n = total.draws as f64;
    let inv = C64::new(1.0 / n, 0.0);
    let pi = need_pi.then(|| {
        let means: Vec<CMatrix> = total.pi_sum.iter().map(|s| s * inv).collect();
        let std_err = means
            .iter()
            .zip(&total.pi_sq)
            .map(|(m, sq)| {
                DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
                    let var = (sq[(i, j)] / n - m[(i, j)].norm_sqr()).max(0.0);
                    (var / n).sqrt()
                })
            })
            .collect();
        PiSet { pi: means, std_err, sample_count: total.draws }
    });
    let lsfd = need_lsfd.then(|| {
        (0..setup.ue_count())
            .map(|k| LsfdMoments {
                ue: k,
                aps: setup.plan.cluster_of_ue[k].clone(),
                power: setup.plan.powers_w[k],
                mean: &total.lsfd_mean[k] * inv,
                second: &total.lsfd_second[k] * inv,
                noise: &total.lsfd_noise[k] / n,
                draws: total.draws,
            })
            .collect()
    });
    Ok(Statistics { pi, lsfd })
}

pub fn estimate_pi(setup: &Setup, draws: usize, seed: u64, setup_index: u32) -> Result<PiSet> {
    Ok(estimate_statistics(setup, draws, seed, setup_index, true, false)?.pi.expect("requested"))
}

pub fn estimate_lsfd_moments(setup: &Setup, draws: usize, seed: u64, setup_index: u32) -> Result<Vec<LsfdMoments>> {
    Ok(estimate_statistics(setup, draws, seed, setup_index, false, true)?.lsfd.expect("requested"))
}

/// Everything the distributed schemes need besides per-block local CSI.
#[derive(Debug, Clone, Default)]
pub struct Design {
    pub lsfd: Option<LsfdWeights>,
    pub stage2: Option<Stage2>,
    pub pi: Option<PiSet>,
    pub stat_draws: usize,
}

/// Estimates the statistics required by `schemes` and derives the LSFD
/// weights and second-stage vectors.
pub fn design(setup: &Setup, schemes: &[Scheme], stat_draws: usize, seed: u64, setup_index: u32) -> Result<Design> {
    let need_lsfd = schemes.contains(&Scheme::LmmseLsfd);
    let need_pi = schemes.contains(&Scheme::Ltmmse);
    if !need_lsfd && !need_pi {
        return Ok(Design::default());
    }
    let stats = estimate_statistics(setup, stat_draws, seed, setup_index, need_pi, need_lsfd)?;
    let lsfd = stats.lsfd.map(|moments| {
        let mut regularized = Vec::new();
        let weights = moments
            .iter()
            .map(|m| {
                let (w, flag) = lsfd_weights(m);
                if flag {
                    regularized.push(m.ue);
                }
                w
            })
            .collect();
        LsfdWeights { weights, regularized }
    });
    let stage2 = stats.pi.as_ref().map(|pi| stage2_from_pi(pi, &setup.plan));
    Ok(Design { lsfd, stage2, pi: stats.pi, stat_draws })
}

/// Combiners of one scheme for one block. `local` may carry precomputed Vₗ.
pub fn combiners_for_block(
    setup: &Setup,
    design: &Design,
    scheme: Scheme,
    est: &EstimateSet,
    local: Option<&[CMatrix]>,
) -> Result<BeamformerSet> {
    let sigma2 = setup.noise_w();
    let local_owned = || -> Result<Vec<CMatrix>> {
        match local {
            Some(l) => Ok(l.to_vec()),
            None => local_matrices(est, &setup.estimator, &setup.plan.powers_w, sigma2),
        }
    };
    match scheme {
        Scheme::Mmse => mmse_combiner(est, &setup.estimator, &setup.plan, sigma2),
        Scheme::Lmmse => Ok(assemble_lmmse(local_owned()?, None, &setup.plan)),
        Scheme::LmmseLsfd => {
            let w = design.lsfd.as_ref().ok_or_else(|| Error::invalid("LSFD weights were not designed"))?;
            Ok(assemble_lmmse(local_owned()?, Some(w), &setup.plan))
        }
        Scheme::Ltmmse => {
            let s = design.stage2.as_ref().ok_or_else(|| Error::invalid("LTMMSE stage 2 was not designed"))?;
            Ok(assemble_ltmmse(local_owned()?, s, &setup.plan))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelStats;
    use crate::linalg::{complex_normal, PairGrid, ZERO};
    use crate::rng::SimRng;
    use crate::scenario::AreaConfig;

    fn rng(i: u32) -> SimRng {
        substream(77, Purpose::Diagnostic, i, 0)
    }

    fn random_matrix(r: usize, c: usize, seed: u32) -> CMatrix {
        let mut g = rng(seed);
        CMatrix::from_fn(r, c, |_, _| complex_normal(&mut g))
    }

    fn estimate_grid(k: usize, l: usize, n: usize, seed: u32) -> EstimateSet {
        let mut g = rng(seed);
        EstimateSet { estimates: PairGrid::from_fn(k, l, |_, _| crate::linalg::complex_normal_vector(&mut g, n)) }
    }

    /// Estimator stub with given Z matrices.
    fn estimator_with_z(z: Vec<CMatrix>, k: usize, sigma2: f64) -> Estimator {
        let l = z.len();
        let n = z[0].nrows();
        Estimator {
            psi: vec![],
            gain: PairGrid::from_fn(k, l, |_, _| CMatrix::zeros(n, n)),
            err_cov: PairGrid::from_fn(k, l, |_, _| CMatrix::zeros(n, n)),
            z_matrices: z,
            noise_w: sigma2,
        }
    }

    #[test]
    fn scalar_mmse_combiner() {
        let h = C64::new(0.7, -1.2);
        let est = EstimateSet { estimates: PairGrid::from_vec(1, 1, vec![CVector::from_element(1, h)]) };
        let plan = ServicePlan::new(1, vec![0], vec![vec![0]], vec![1.0], vec![1.0]).unwrap();
        let e = estimator_with_z(vec![CMatrix::zeros(1, 1)], 1, 0.3);
        let v = mmse_combiner_for(0, &est, &e, &plan, 0.3).unwrap();
        let want = h / (h.norm_sqr() + 0.3);
        assert!((v.blocks[0][0] - want).norm() < 1e-15);
    }

    #[test]
    fn scalar_local_matrix_and_zero_estimate() {
        let (h, p, c, s2) = (C64::new(0.4, 0.9), 0.6, 0.2, 0.1);
        let v = lmmse_local_matrix(&CMatrix::from_element(1, 1, h), &CMatrix::from_element(1, 1, C64::new(p * c, 0.0)), &[p], s2).unwrap();
        let want = h * p.sqrt() / (p * h.norm_sqr() + p * c + s2);
        assert!((v[(0, 0)] - want).norm() < 1e-15);
        let zero = lmmse_local_matrix(&CMatrix::zeros(3, 2), &CMatrix::zeros(3, 3), &[1.0, 2.0], 0.1).unwrap();
        assert_eq!(zero, CMatrix::zeros(3, 2));
    }

    #[test]
    fn single_ap_mmse_equals_local_matrix_column() {
        let est = estimate_grid(3, 1, 2, 4);
        let z = random_matrix(2, 2, 5);
        let z = &z * z.adjoint();
        let plan = ServicePlan::new(3, vec![0, 1, 2], vec![vec![0]; 3], vec![0.5, 1.0, 2.0], vec![1.0; 3]).unwrap();
        let e = estimator_with_z(vec![z.clone()], 3, 0.2);
        let local = lmmse_local_matrix(&est.ap_matrix(0), &z, &plan.powers_w, 0.2).unwrap();
        for k in 0..3 {
            let v = mmse_combiner_for(k, &est, &e, &plan, 0.2).unwrap();
            assert!((&v.blocks[0] - local.column(k)).norm() < 1e-12 * local.column(k).norm());
        }
    }

    /// Conditional MSE of combiner `v` given estimates, with errors of
    /// covariance Z and noise σ².
    fn conditional_mse(v: &Combiner, est: &EstimateSet, e: &Estimator, plan: &ServicePlan, s2: f64) -> f64 {
        let k = v.ue;
        let mut total = 1.0 - 2.0 * (plan.powers_w[k].sqrt() * v.response(&est.estimates, k)).re;
        for i in 0..plan.ue_count() {
            total += plan.powers_w[i] * v.response(&est.estimates, i).norm_sqr();
        }
        total + v.error_form(e) + s2 * v.norm_squared()
    }

    #[test]
    fn mmse_combiner_is_a_local_minimum_of_the_mse() {
        let (l, n, k) = (3, 2, 4);
        let est = estimate_grid(k, l, n, 8);
        let z: Vec<CMatrix> = (0..l).map(|i| { let a = random_matrix(n, n, 20 + i as u32) * C64::new(0.3, 0.0); &a * a.adjoint() }).collect();
        let plan = ServicePlan::new(2, vec![0, 1, 0, 1], vec![vec![0, 1], vec![1, 2], vec![0, 1, 2], vec![2]], vec![0.5, 1.0, 0.8, 0.3], vec![1.0; 4]).unwrap();
        let e = estimator_with_z(z, k, 0.4);
        let mut g = rng(99);
        for ue in 0..k {
            let v = mmse_combiner_for(ue, &est, &e, &plan, 0.4).unwrap();
            let base = conditional_mse(&v, &est, &e, &plan, 0.4);
            for _ in 0..100 {
                let mut p = v.clone();
                for b in &mut p.blocks {
                    for z in b.iter_mut() {
                        *z += complex_normal(&mut g) * 1e-3;
                    }
                }
                assert!(conditional_mse(&p, &est, &e, &plan, 0.4) >= base - 1e-15);
            }
        }
    }

    #[test]
    fn stage2_trivial_cases() {
        let pis = vec![random_matrix(3, 3, 1), random_matrix(3, 3, 2)];
        let (c, fb) = ltmmse_stage2(&pis, &[1], 2);
        assert!(!fb);
        assert_eq!(c, vec![CVector::from_vec(vec![ZERO, ZERO, ONE])]);
        let zeros = vec![CMatrix::zeros(3, 3); 3];
        let (c, _) = ltmmse_stage2(&zeros, &[0, 1, 2], 1);
        for v in c {
            assert_eq!(v, CVector::from_vec(vec![ZERO, ONE, ZERO]));
        }
    }

    #[test]
    fn stage2_matches_explicit_dense_solve() {
        // M = 2 APs, K = 2 UEs. Eliminating c₂ = e − Π₁c₁ gives
        // (I − Π₂Π₁) c₁ = e − Π₂e, solved here by Cramer's rule.
        let p1 = random_matrix(2, 2, 3) * C64::new(0.3, 0.0);
        let p2 = random_matrix(2, 2, 4) * C64::new(0.3, 0.0);
        let k = 0;
        let e = CVector::from_vec(vec![ONE, ZERO]);
        let m = CMatrix::identity(2, 2) - &p2 * &p1;
        let r = &e - &p2 * &e;
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let c1 = CVector::from_vec(vec![
            (r[0] * m[(1, 1)] - m[(0, 1)] * r[1]) / det,
            (m[(0, 0)] * r[1] - r[0] * m[(1, 0)]) / det,
        ]);
        let c2 = &e - &p1 * &c1;
        let (c, fb) = ltmmse_stage2(&[p1, p2], &[0, 1], k);
        assert!(!fb);
        assert!((&c[0] - c1).norm() < 1e-12);
        assert!((&c[1] - c2).norm() < 1e-12);
    }

    #[test]
    fn stage2_singular_system_falls_back() {
        // Π = I for both APs makes the block system singular.
        let id = CMatrix::identity(2, 2);
        let (c, fb) = ltmmse_stage2(&[id.clone(), id], &[0, 1], 0);
        assert!(fb);
        assert!(c.iter().all(|v| v.iter().all(|z| z.re.is_finite())));
    }

    fn moments(mean: CVector, second: CMatrix, noise: Vec<f64>) -> LsfdMoments {
        LsfdMoments { ue: 0, aps: (0..mean.len()).collect(), power: 0.7, noise: DVector::from_vec(noise), mean, second, draws: 1 }
    }

    #[test]
    fn lsfd_single_ap_is_scale_free() {
        let m = moments(CVector::from_element(1, C64::new(0.5, 0.2)), CMatrix::from_element(1, 1, C64::new(0.9, 0.0)), vec![0.1]);
        let (a, flag) = lsfd_weights(&m);
        assert!(!flag);
        let s = m.uatf_sinr(&a);
        for scale in [C64::new(3.0, 0.0), C64::new(-0.1, 2.0)] {
            assert!((m.uatf_sinr(&(&a * scale)) - s).abs() < 1e-12 * s);
        }
    }

    #[test]
    fn lsfd_ignores_a_silent_ap() {
        let mean = CVector::from_vec(vec![C64::new(0.5, 0.1), ZERO]);
        let mut second = CMatrix::zeros(2, 2);
        second[(0, 0)] = C64::new(0.6, 0.0);
        let (a, flag) = lsfd_weights(&moments(mean, second, vec![0.05, 0.0]));
        assert!(flag);
        assert!(a[1].norm() < 1e-12 && a[0].norm() > 0.0);
    }

    #[test]
    fn lsfd_maximizes_the_rayleigh_quotient_and_matches_textbook_form() {
        let dim = 4;
        let g = random_matrix(dim, 12, 31);
        let mean = random_matrix(dim, 1, 32).column(0) * C64::new(0.3, 0.0);
        let second = &g * g.adjoint() * C64::new(0.1, 0.0) + &mean * mean.adjoint();
        let m = moments(mean.clone(), second.clone(), vec![0.02, 0.05, 0.01, 0.03]);
        let (a, _) = lsfd_weights(&m);
        let best = m.uatf_sinr(&a);
        let mut gen = rng(33);
        for _ in 0..200 {
            let w = crate::linalg::complex_normal_vector(&mut gen, dim);
            assert!(m.uatf_sinr(&w) <= best * (1.0 + 1e-12));
        }
        let mut b = second - &mean * mean.adjoint() * C64::new(m.power, 0.0);
        for i in 0..dim {
            b[(i, i)] += C64::new(m.noise[i], 0.0);
        }
        let textbook = hermitian_solve(&b, &CMatrix::from_column_slice(dim, 1, mean.as_slice())).unwrap();
        let ratio = a[0] / textbook[(0, 0)];
        for i in 0..dim {
            assert!((a[i] - textbook[(i, 0)] * ratio).norm() < 1e-10 * a.norm());
        }
    }

    fn small_setup(kappa: Option<f64>, pure_los: bool) -> Setup {
        let cfg = AreaConfig { ap_count: 4, ue_count: 3, antennas_per_ap: 2, pilot_count: 3, side_length_m: 300.0, kappa_override: kappa, ..AreaConfig::default() };
        let s = Setup::generate(&cfg, -1.0, 5, 0).unwrap();
        if pure_los {
            let stats: ChannelStats = s.stats.clone().into_pure_los();
            s.with_stats(stats).unwrap()
        } else {
            s
        }
    }

    #[test]
    fn deterministic_channels_make_statistics_exact() {
        let s = small_setup(None, true);
        let one = estimate_statistics(&s, 1, 1, 0, true, true).unwrap();
        let many = estimate_statistics(&s, 5, 1, 0, true, true).unwrap();
        for (a, b) in one.pi.unwrap().pi.iter().zip(&many.pi.unwrap().pi) {
            assert!((a - b).norm() <= 1e-12 * a.norm());
        }
        for (a, b) in one.lsfd.unwrap().iter().zip(&many.lsfd.unwrap()) {
            assert!((&a.mean - &b.mean).norm() <= 1e-12 * a.mean.norm());
        }
    }

    #[test]
    fn lsfd_moments_match_explicit_single_draw() {
        let s = small_setup(Some(2.0), false);
        let m = estimate_lsfd_moments(&s, 1, 4, 0).unwrap();
        let (draw, est) = s.sample_block(&mut substream(4, Purpose::StatisticsDraw, 0, 0));
        let local = local_matrices(&est, &s.estimator, &s.plan.powers_w, s.noise_w()).unwrap();
        for mk in &m {
            let k = mk.ue;
            let n = mk.aps.len();
            let mut second = CMatrix::zeros(n, n);
            for (i, &p) in s.plan.powers_w.iter().enumerate() {
                let g = CVector::from_fn(n, |a, _| local[mk.aps[a]].column(k).dotc(draw.true_channels.get(i, mk.aps[a])));
                second += &g * g.adjoint() * C64::new(p, 0.0);
                if i == k {
                    assert!((&g - &mk.mean).norm() <= 1e-12 * g.norm());
                }
            }
            assert!((&second - &mk.second).norm() <= 1e-12 * second.norm());
            assert!((&mk.second - mk.second.adjoint()).norm() <= 1e-14 * second.norm());
        }
    }

    #[test]
    fn statistics_are_independent_of_thread_count() {
        let s = small_setup(Some(2.0), false);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| estimate_statistics(&s, 40, 3, 0, true, true).unwrap())
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a.pi.unwrap().pi, b.pi.unwrap().pi);
        assert_eq!(a.lsfd.unwrap(), b.lsfd.unwrap());
    }

    #[test]
    fn combiners_stay_on_their_clusters() {
        let s = small_setup(Some(1.0), false);
        let d = design(&s, &Scheme::DEFAULT_SET, 20, 1, 0).unwrap();
        let (_, est) = s.sample_block(&mut rng(5));
        for scheme in [Scheme::Mmse, Scheme::LmmseLsfd, Scheme::Ltmmse, Scheme::Lmmse] {
            let bf = combiners_for_block(&s, &d, scheme, &est, None).unwrap();
            for c in &bf.combiners {
                assert_eq!(c.aps, s.plan.cluster_of_ue[c.ue]);
                let stacked = c.stacked(s.ap_count(), s.antennas());
                for l in 0..s.ap_count() {
                    if !s.plan.serves(c.ue, l) {
                        assert!(stacked.rows(l * 2, 2).iter().all(|z| *z == ZERO));
                    }
                }
            }
        }
    }

    #[test]
    fn unit_stage2_reproduces_unweighted_lmmse() {
        let s = small_setup(Some(1.0), false);
        let (_, est) = s.sample_block(&mut rng(6));
        let local = local_matrices(&est, &s.estimator, &s.plan.powers_w, s.noise_w()).unwrap();
        let unit = Stage2 {
            vectors: (0..s.ue_count())
                .map(|k| {
                    let mut e = CVector::zeros(s.ue_count());
                    e[k] = ONE;
                    vec![e; s.plan.cluster_of_ue[k].len()]
                })
                .collect(),
            fallback: vec![],
        };
        let a = assemble_ltmmse(local.clone(), &unit, &s.plan);
        let b = assemble_lmmse(local, None, &s.plan);
        assert_eq!(a.combiners, b.combiners);
    }
}
