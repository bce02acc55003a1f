//! Spatially correlated Rician fading with fixed LoS phase shifts.
//!
//! Each (UE, AP) channel is `hₖₗ = h̄ₖₗ e^{jθₖₗ} + h̃ₖₗ` with
//! `h̃ₖₗ ~ CN(0, Rₖₗ)`. The LoS signature is a ULA steering vector scaled by
//! `√(β κ/(κ+1))` and the NLoS covariance is the Gaussian local scattering
//! matrix scaled by `β/(κ+1)`.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{clip_to_psd, complex_normal_vector, psd_factor, trace_re, CMatrix, CVector, PairGrid, C64};
use crate::quadrature::gauss_legendre_on;
use crate::scenario::{rician_factor, AreaConfig, Deployment};

/// Rician factors at or above this value are treated as pure LoS.
pub const PURE_LOS_KAPPA: f64 = 1e8;

/// Truncation of the angular PDF, in standard deviations.
const TRUNCATION_SIGMAS: f64 = 8.0;

/// ULA steering vector `[e^{j2π(n−1) s sin(az) cos(el)}]ₙ`.
pub fn los_signature(azimuth: f64, elevation: f64, n_antennas: usize, spacing: f64) -> CVector {
    let step = TAU * spacing * azimuth.sin() * elevation.cos();
    CVector::from_fn(n_antennas, |n, _| C64::from_polar(1.0, step * n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    pub start_nodes: usize,
    pub max_nodes: usize,
    /// Stop once successive refinements differ by less than this in
    /// Frobenius norm.
    pub tolerance: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { start_nodes: 16, max_nodes: 256, tolerance: 1e-8 }
    }
}

/// Gaussian local scattering correlation matrix R′ (unit diagonal).
///
/// Angles are Gaussian around `(azimuth, elevation)`, truncated at 8σ,
/// wrapped onto (−π, π] and [0, π] respectively, and renormalized. A zero
/// standard deviation collapses that axis to its mean.
pub fn local_scattering_covariance(
    azimuth: f64,
    elevation: f64,
    sigma_az: f64,
    sigma_el: f64,
    n_antennas: usize,
    spacing: f64,
) -> Result<CMatrix> {
    local_scattering_covariance_with(
        azimuth,
        elevation,
        sigma_az,
        sigma_el,
        n_antennas,
        spacing,
        &QuadratureOptions::default(),
    )
}

pub fn local_scattering_covariance_with(
    azimuth: f64,
    elevation: f64,
    sigma_az: f64,
    sigma_el: f64,
    n_antennas: usize,
    spacing: f64,
    opts: &QuadratureOptions,
) -> Result<CMatrix> {
    if sigma_az < 0.0 || sigma_el < 0.0 {
        return Err(Error::invalid("angular standard deviations must be nonnegative"));
    }
    let mut nodes = opts.start_nodes.max(1);
    let mut prev = toeplitz_column(azimuth, elevation, sigma_az, sigma_el, n_antennas, spacing, nodes);
    loop {
        if sigma_az == 0.0 && sigma_el == 0.0 {
            break;
        }
        if nodes >= opts.max_nodes {
            return Err(Error::numerical(format!(
                "local scattering quadrature did not converge within {} nodes per axis",
                opts.max_nodes
            )));
        }
        nodes = (nodes * 2).min(opts.max_nodes);
        let next = toeplitz_column(azimuth, elevation, sigma_az, sigma_el, n_antennas, spacing, nodes);
        // Each off-diagonal r_m appears 2(N − m) times in the full matrix.
        let diff: f64 = (0..n_antennas)
            .map(|m| {
                let mult = if m == 0 { n_antennas } else { 2 * (n_antennas - m) };
                mult as f64 * (next[m] - prev[m]).norm_sqr()
            })
            .sum::<f64>()
            .sqrt();
        prev = next;
        if diff < opts.tolerance {
            break;
        }
    }
    let r = CMatrix::from_fn(n_antennas, n_antennas, |x, y| {
        if x >= y {
            prev[x - y]
        } else {
            prev[y - x].conj()
        }
    });
    Ok(r)
}

/// Axis rule: GL nodes over the truncation window with Gaussian weights, or
/// a single node at the mean for a degenerate axis.
///
/// With `break_period` set, the window is split into panels at multiples of
/// the period. The wrapped integrand jumps there, and a single GL panel
/// across the jump converges only algebraically.
fn axis_rule(mean: f64, sigma: f64, nodes: usize, break_period: Option<f64>) -> Vec<(f64, f64)> {
    if sigma == 0.0 {
        return vec![(mean, 1.0)];
    }
    let half = TRUNCATION_SIGMAS * sigma;
    let (lo, hi) = (mean - half, mean + half);
    let mut edges = vec![lo];
    if let Some(p) = break_period {
        let mut b = (lo / p).floor() * p + p;
        while b < hi {
            if b > lo {
                edges.push(b);
            }
            b += p;
        }
    }
    edges.push(hi);
    let mut rule = Vec::with_capacity(nodes * (edges.len() - 1));
    for pair in edges.windows(2) {
        let (x, w) = gauss_legendre_on(nodes, pair[0], pair[1]);
        rule.extend(x.into_iter().zip(w).map(|(a, wi)| {
            let z = (a - mean) / sigma;
            (a, wi * (-0.5 * z * z).exp())
        }));
    }
    rule
}

fn wrap_azimuth(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

fn wrap_elevation(e: f64) -> f64 {
    e.rem_euclid(PI)
}

/// First column `r_m = [R′]_{m,0}` of the Toeplitz correlation matrix.
fn toeplitz_column(
    azimuth: f64,
    elevation: f64,
    sigma_az: f64,
    sigma_el: f64,
    n_antennas: usize,
    spacing: f64,
    nodes: usize,
) -> Vec<C64> {
    // sin is 2π-periodic, so azimuth wrapping leaves the integrand smooth.
    let az_rule = axis_rule(azimuth, sigma_az, nodes, None);
    let el_rule = axis_rule(elevation, sigma_el, nodes, Some(PI));
    let mut acc = vec![C64::new(0.0, 0.0); n_antennas];
    let mut mass = 0.0;
    for &(a, wa) in &az_rule {
        let sin_a = wrap_azimuth(a).sin();
        for &(e, we) in &el_rule {
            let w = wa * we;
            mass += w;
            let u = TAU * spacing * sin_a * wrap_elevation(e).cos();
            for (m, slot) in acc.iter_mut().enumerate() {
                *slot += C64::from_polar(w, u * m as f64);
            }
        }
    }
    acc.iter().map(|z| z / mass).collect()
}

/// Large-scale statistics of every (UE, AP) channel.
#[derive(Debug, Clone)]
pub struct ChannelStats {
    /// h̄ₖₗ without the phase shift.
    pub los_mean: PairGrid<CVector>,
    /// θₖₗ in [0, 2π).
    pub los_phase: DMatrix<f64>,
    /// Rₖₗ.
    pub nlos_cov: PairGrid<CMatrix>,
    /// Lₖₗ with Lₖₗ Lₖₗᴴ = Rₖₗ.
    pub nlos_factor: PairGrid<CMatrix>,
    pub kappa: DMatrix<f64>,
    pub beta_lin: DMatrix<f64>,
    pub antennas: usize,
}

impl ChannelStats {
    /// Assembles statistics from explicit components, factorizing each
    /// covariance.
    pub fn from_components(
        los_mean: PairGrid<CVector>,
        los_phase: DMatrix<f64>,
        nlos_cov: PairGrid<CMatrix>,
        kappa: DMatrix<f64>,
        beta_lin: DMatrix<f64>,
    ) -> Result<Self> {
        let antennas = los_mean.get(0, 0).len();
        let factors: Result<Vec<CMatrix>> = nlos_cov.iter().map(|(_, r)| psd_factor(r)).collect();
        let nlos_factor = PairGrid::from_vec(nlos_cov.ues(), nlos_cov.aps(), factors?);
        Ok(Self { los_mean, los_phase, nlos_cov, nlos_factor, kappa, beta_lin, antennas })
    }

    pub fn ue_count(&self) -> usize {
        self.los_mean.ues()
    }

    pub fn ap_count(&self) -> usize {
        self.los_mean.aps()
    }

    /// Phased channel mean h̄ₖₗ e^{jθₖₗ}.
    pub fn phased_mean(&self, ue: usize, ap: usize) -> CVector {
        self.los_mean.get(ue, ap) * C64::from_polar(1.0, self.los_phase[(ue, ap)])
    }

    /// Same statistics with all power moved to the LoS component
    /// (‖h̄ₖₗ‖² = Nβₖₗ, Rₖₗ = 0).
    pub fn into_pure_los(mut self) -> Self {
        let n = self.antennas;
        for k in 0..self.ue_count() {
            for l in 0..self.ap_count() {
                let m = self.los_mean.get(k, l).clone();
                let norm = m.norm();
                let target = (n as f64 * self.beta_lin[(k, l)]).sqrt();
                let scaled = if norm > 0.0 { m * C64::new(target / norm, 0.0) } else { m };
                *self.los_mean.get_mut(k, l) = scaled;
                *self.nlos_cov.get_mut(k, l) = CMatrix::zeros(n, n);
                *self.nlos_factor.get_mut(k, l) = CMatrix::zeros(n, n);
                self.kappa[(k, l)] = f64::INFINITY;
            }
        }
        self
    }
}

/// One coherence block of channel realizations.
#[derive(Debug, Clone)]
pub struct ChannelDraw {
    pub true_channels: PairGrid<CVector>,
    /// Per-block LoS phases, present only when phases are redrawn per block.
    pub phases: Option<DMatrix<f64>>,
}

impl ChannelDraw {
    /// Stacks the channels seen by AP `ap` into an N×K matrix.
    pub fn ap_matrix(&self, ap: usize) -> CMatrix {
        stack_columns(&self.true_channels, ap)
    }
}

pub(crate) fn stack_columns(grid: &PairGrid<CVector>, ap: usize) -> CMatrix {
    let n = grid.get(0, ap).len();
    CMatrix::from_fn(n, grid.ues(), |r, k| grid.get(k, ap)[r])
}

/// Splits `β` between LoS and NLoS according to `κ` and returns
/// `(LoS amplitude², NLoS power)`.
fn rician_split(beta: f64, kappa: f64) -> (f64, f64) {
    if kappa >= PURE_LOS_KAPPA || kappa.is_infinite() {
        (beta, 0.0)
    } else {
        (beta * kappa / (kappa + 1.0), beta / (kappa + 1.0))
    }
}

/// Builds per-pair statistics and draws the fixed LoS phases from `rng`
/// (row-major UE, AP order).
pub fn build_channel_stats<R: Rng + ?Sized>(
    dep: &Deployment,
    cfg: &AreaConfig,
    rng: &mut R,
) -> Result<ChannelStats> {
    let k_count = dep.ue_count();
    let l_count = dep.ap_count();
    let n = cfg.antennas_per_ap;
    let beta = dep.gains_lin();
    let kappa = match cfg.kappa_override {
        Some(kv) => DMatrix::from_element(k_count, l_count, kv),
        None => dep.distances_3d.map(rician_factor),
    };
    let phases = DMatrix::from_fn(k_count, l_count, |_, _| rng.random::<f64>() * TAU);
    let sigma_az = cfg.azimuth_std_deg.to_radians();
    let sigma_el = cfg.elevation_std_deg.to_radians();

    let pairs: Vec<(usize, usize)> = (0..k_count).flat_map(|k| (0..l_count).map(move |l| (k, l))).collect();
    let built: Result<Vec<(CVector, CMatrix, CMatrix)>> = pairs
        .par_iter()
        .map(|&(k, l)| {
            let (az, el) = (dep.azimuth[(k, l)], dep.elevation[(k, l)]);
            let (los_pow, nlos_pow) = rician_split(beta[(k, l)], kappa[(k, l)]);
            let g = los_signature(az, el, n, cfg.antenna_spacing);
            let mean = g * C64::new(los_pow.sqrt(), 0.0);
            let r = if nlos_pow > 0.0 {
                let r_unit = local_scattering_covariance(az, el, sigma_az, sigma_el, n, cfg.antenna_spacing)?;
                clip_to_psd(&r_unit) * C64::new(nlos_pow, 0.0)
            } else {
                CMatrix::zeros(n, n)
            };
            let f = psd_factor(&r)?;
            Ok((mean, r, f))
        })
        .collect();
    let built = built?;
    let mut means = Vec::with_capacity(built.len());
    let mut covs = Vec::with_capacity(built.len());
    let mut factors = Vec::with_capacity(built.len());
    for (m, r, f) in built {
        means.push(m);
        covs.push(r);
        factors.push(f);
    }
    Ok(ChannelStats {
        los_mean: PairGrid::from_vec(k_count, l_count, means),
        los_phase: phases,
        nlos_cov: PairGrid::from_vec(k_count, l_count, covs),
        nlos_factor: PairGrid::from_vec(k_count, l_count, factors),
        kappa,
        beta_lin: beta,
        antennas: n,
    })
}

/// Draws one block `hₖₗ = h̄ₖₗ e^{jθₖₗ} + Lₖₗ z`, z ~ CN(0, I), row-major.
pub fn sample_channels<R: Rng + ?Sized>(stats: &ChannelStats, rng: &mut R) -> ChannelDraw {
    let n = stats.antennas;
    let grid = PairGrid::from_fn(stats.ue_count(), stats.ap_count(), |k, l| {
        let z = complex_normal_vector(rng, n);
        stats.phased_mean(k, l) + stats.nlos_factor.get(k, l) * z
    });
    ChannelDraw { true_channels: grid, phases: None }
}

/// Like [`sample_channels`] but with LoS phases redrawn for this block.
/// Exploratory only; the estimator then uses the block's phases.
pub fn sample_channels_redrawn_phases<R: Rng + ?Sized>(stats: &ChannelStats, rng: &mut R) -> ChannelDraw {
    let phases = DMatrix::from_fn(stats.ue_count(), stats.ap_count(), |_, _| rng.random::<f64>() * TAU);
    let n = stats.antennas;
    let grid = PairGrid::from_fn(stats.ue_count(), stats.ap_count(), |k, l| {
        let z = complex_normal_vector(rng, n);
        stats.los_mean.get(k, l) * C64::from_polar(1.0, phases[(k, l)]) + stats.nlos_factor.get(k, l) * z
    });
    ChannelDraw { true_channels: grid, phases: Some(phases) }
}

/// `‖h̄ₖₗ‖² + tr(Rₖₗ)`, which equals `N βₖₗ`.
pub fn total_power(stats: &ChannelStats, ue: usize, ap: usize) -> f64 {
    stats.los_mean.get(ue, ap).norm_squared() + trace_re(stats.nlos_cov.get(ue, ap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{min_eigenvalue, relative_error};
    use crate::rng::{substream, Purpose};
    use crate::scenario::deploy;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn steering_vector_examples() {
        assert_eq!(los_signature(0.3, 0.2, 1, 0.5), CVector::from_element(1, C64::new(1.0, 0.0)));
        let ones = los_signature(0.0, 0.7, 5, 0.5);
        assert!(ones.iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
        let alt = los_signature(PI / 2.0, 0.0, 4, 0.5);
        for (n, want) in [1.0, -1.0, 1.0, -1.0].iter().enumerate() {
            assert!((alt[n] - C64::new(*want, 0.0)).norm() < 1e-12);
        }
        let g = los_signature(0.4, 0.1, 6, 0.5);
        let ratio = g[1] / g[0];
        for n in 1..6 {
            assert!((g[n] / g[n - 1] - ratio).norm() < 1e-12);
            assert!((g[n].norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn scattering_matrix_has_unit_diagonal_and_is_psd() {
        for &(az, el) in &[(0.3, 0.05), (-2.9, 1.2), (3.1, 0.01), (0.0, std::f64::consts::FRAC_PI_2)] {
            let r = local_scattering_covariance(az, el, 5f64.to_radians(), 5f64.to_radians(), 4, 0.5).unwrap();
            for n in 0..4 {
                assert!((r[(n, n)] - C64::new(1.0, 0.0)).norm() < 1e-6);
            }
            assert_eq!(r, r.adjoint());
            assert!(min_eigenvalue(&r) >= -1e-10 * 4.0);
        }
    }

    #[test]
    fn point_mass_limit_is_rank_one() {
        let (az, el) = (0.8, 0.3);
        let g = los_signature(az, el, 4, 0.5);
        let want = &g * g.adjoint();
        let exact = local_scattering_covariance(az, el, 0.0, 0.0, 4, 0.5).unwrap();
        assert!((exact - &want).norm() < 1e-12);
        let narrow = local_scattering_covariance(az, el, 1e-7, 1e-7, 4, 0.5).unwrap();
        assert!((narrow - &want).norm() < 1e-6);
    }

    #[test]
    fn quadrature_matches_monte_carlo_integration() {
        // N = 2, azimuth 0, elevation π/4, σ = 5°.
        let sigma = 5f64.to_radians();
        let (az, el) = (0.0, PI / 4.0);
        let r = local_scattering_covariance(az, el, sigma, sigma, 2, 0.5).unwrap();
        let mut rng = substream(9, Purpose::Diagnostic, 0, 0);
        let na = Normal::new(az, sigma).unwrap();
        let ne = Normal::new(el, sigma).unwrap();
        let samples = 1_000_000;
        let mut acc = C64::new(0.0, 0.0);
        let mut taken = 0usize;
        while taken < samples {
            let a: f64 = na.sample(&mut rng);
            let e: f64 = ne.sample(&mut rng);
            if (a - az).abs() > 8.0 * sigma || (e - el).abs() > 8.0 * sigma {
                continue;
            }
            let a_w = (a + PI).rem_euclid(TAU) - PI;
            let e_w = e.rem_euclid(PI);
            acc += C64::from_polar(1.0, TAU * 0.5 * a_w.sin() * e_w.cos());
            taken += 1;
        }
        let mc = acc / samples as f64;
        assert!((r[(1, 0)] - mc).norm() < 1e-3, "{} vs {}", r[(1, 0)], mc);
    }

    #[test]
    fn quadrature_reports_non_convergence() {
        let opts = QuadratureOptions { start_nodes: 2, max_nodes: 4, tolerance: 1e-14 };
        let err = local_scattering_covariance_with(0.5, 0.2, 0.3, 0.3, 8, 0.5, &opts);
        assert!(matches!(err, Err(Error::Numerical(_))));
    }

    fn stats_for(cfg: &AreaConfig) -> ChannelStats {
        let dep = deploy(cfg, &mut substream(3, Purpose::Deployment, 0, 0)).unwrap();
        build_channel_stats(&dep, cfg, &mut substream(3, Purpose::Phases, 0, 0)).unwrap()
    }

    #[test]
    fn power_split_is_conserved() {
        let cfg = AreaConfig { ap_count: 10, ue_count: 5, ..AreaConfig::default() };
        let stats = stats_for(&cfg);
        for k in 0..5 {
            for l in 0..10 {
                let want = 4.0 * stats.beta_lin[(k, l)];
                assert!(((total_power(&stats, k, l) - want) / want).abs() < 1e-6);
                let r = stats.nlos_cov.get(k, l);
                assert!(min_eigenvalue(r) >= -1e-10 * crate::linalg::trace_re(r));
                let th = stats.los_phase[(k, l)];
                assert!((0.0..TAU).contains(&th));
            }
        }
    }

    #[test]
    fn kappa_extremes() {
        let nlos = stats_for(&AreaConfig { ap_count: 3, ue_count: 2, kappa_override: Some(0.0), ..AreaConfig::desk_scale() });
        let los = stats_for(&AreaConfig { ap_count: 3, ue_count: 2, kappa_override: Some(1e8), ..AreaConfig::desk_scale() });
        for k in 0..2 {
            for l in 0..3 {
                assert_eq!(nlos.los_mean.get(k, l).norm(), 0.0);
                let beta = nlos.beta_lin[(k, l)];
                assert!((crate::linalg::trace_re(nlos.nlos_cov.get(k, l)) - 2.0 * beta).abs() < 1e-6 * beta);
                assert_eq!(los.nlos_cov.get(k, l).norm(), 0.0);
                assert!((los.los_mean.get(k, l).norm_squared() - 2.0 * beta).abs() < 1e-9 * beta);
            }
        }
    }

    #[test]
    fn deterministic_channel_when_covariance_vanishes() {
        let stats = stats_for(&AreaConfig { ap_count: 3, ue_count: 2, ..AreaConfig::desk_scale() }).into_pure_los();
        let draw = sample_channels(&stats, &mut substream(1, Purpose::EvaluationDraw, 0, 0));
        for k in 0..2 {
            for l in 0..3 {
                assert_eq!(draw.true_channels.get(k, l), &stats.phased_mean(k, l));
            }
        }
    }

    #[test]
    fn sample_moments_converge() {
        let cfg = AreaConfig { ap_count: 1, ue_count: 1, kappa_override: Some(1.0), ..AreaConfig::desk_scale() };
        let stats = stats_for(&cfg);
        let draws = 100_000;
        let mean = stats.phased_mean(0, 0);
        let r = stats.nlos_cov.get(0, 0).clone();
        let mut sum = CVector::zeros(2);
        let mut cov = CMatrix::zeros(2, 2);
        for i in 0..draws {
            let d = sample_channels(&stats, &mut substream(5, Purpose::EvaluationDraw, 0, i));
            let h = d.true_channels.get(0, 0);
            sum += h;
            let c = h - &mean;
            cov += &c * c.adjoint();
        }
        let emp_mean = sum / C64::new(draws as f64, 0.0);
        let emp_cov = cov / C64::new(draws as f64, 0.0);
        let tol = 4.0 / (draws as f64).sqrt() * crate::linalg::trace_re(&r).sqrt();
        for n in 0..2 {
            assert!((emp_mean[n] - mean[n]).norm() < tol);
        }
        assert!(relative_error(&emp_cov, &r) < 0.05);
    }
}
