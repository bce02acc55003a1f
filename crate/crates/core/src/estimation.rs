//! Uplink pilot transmission and phase-aware MMSE channel estimation.
//!
//! After decorrelation with pilot `t`, AP `l` observes
//! `y = Σ_{i: tᵢ = t} √ηᵢ τ_p hᵢₗ + n`, `n ~ CN(0, σ² τ_p I)`. The estimate is
//! `ĥₖₗ = h̄ₖₗe^{jθₖₗ} + √ηₖ Rₖₗ Ψ⁻¹ (y − ȳ)` with
//! `Ψ = Σ_{i: tᵢ = t} ηᵢ τ_p Rᵢₗ + σ² I` and error covariance
//! `Cₖₗ = Rₖₗ − ηₖ τ_p Rₖₗ Ψ⁻¹ Rₖₗ`.
//!
//! Everything that does not depend on the block (Ψ, the estimator gains,
//! Cₖₗ and Zₗ) is computed once in [`Estimator::new`].

use nalgebra::DMatrix;
use rand::Rng;

use crate::channel::{stack_columns, ChannelDraw, ChannelStats};
use crate::error::{Error, Result};
use crate::linalg::{complex_normal_vector, hermitian_factor, hermitian_part, CMatrix, CVector, PairGrid, C64};
use crate::scenario::ServicePlan;

/// `Ψ_{t,l} = Σ_{i: tᵢ = t} ηᵢ τ_p Rᵢₗ + σ² I`.
pub fn psi_matrix(stats: &ChannelStats, plan: &ServicePlan, ap: usize, pilot: usize, noise_w: f64) -> CMatrix {
    let n = stats.antennas;
    let tau = plan.pilot_count as f64;
    let mut psi = CMatrix::identity(n, n) * C64::new(noise_w, 0.0);
    for i in plan.ues_on_pilot(pilot) {
        psi += stats.nlos_cov.get(i, ap) * C64::new(plan.pilot_powers_w[i] * tau, 0.0);
    }
    psi
}

/// Block-independent part of the estimator.
#[derive(Debug, Clone)]
pub struct Estimator {
    /// Ψ_{t,l}, indexed `[pilot][ap]`.
    pub psi: Vec<Vec<CMatrix>>,
    /// `√ηₖ Rₖₗ Ψ⁻¹`.
    pub gain: PairGrid<CMatrix>,
    /// Cₖₗ.
    pub err_cov: PairGrid<CMatrix>,
    /// `Zₗ = Σᵢ pᵢ Cᵢₗ` over all UEs.
    pub z_matrices: Vec<CMatrix>,
    pub noise_w: f64,
}

impl Estimator {
    pub fn new(stats: &ChannelStats, plan: &ServicePlan, noise_w: f64) -> Result<Self> {
        if !(noise_w > 0.0) {
            return Err(Error::invalid("noise power must be positive"));
        }
        let k_count = stats.ue_count();
        let l_count = stats.ap_count();
        let n = stats.antennas;
        let tau = plan.pilot_count as f64;
        let mut psi = Vec::with_capacity(plan.pilot_count);
        let mut psi_inv = Vec::with_capacity(plan.pilot_count);
        for t in 0..plan.pilot_count {
            let mut row = Vec::with_capacity(l_count);
            let mut inv_row = Vec::with_capacity(l_count);
            for l in 0..l_count {
                let p = psi_matrix(stats, plan, l, t, noise_w);
                let chol = hermitian_factor(&p)?;
                inv_row.push(chol);
                row.push(p);
            }
            psi.push(row);
            psi_inv.push(inv_row);
        }
        let mut gain = Vec::with_capacity(k_count * l_count);
        let mut err = Vec::with_capacity(k_count * l_count);
        for k in 0..k_count {
            let t = plan.pilot_of_ue[k];
            let eta = plan.pilot_powers_w[k];
            for l in 0..l_count {
                let r = stats.nlos_cov.get(k, l);
                // Ψ⁻¹R, whose adjoint is RΨ⁻¹.
                let psi_inv_r = psi_inv[t][l].solve(r);
                let r_psi_inv = psi_inv_r.adjoint();
                let c = r - (r * &psi_inv_r) * C64::new(eta * tau, 0.0);
                gain.push(r_psi_inv * C64::new(eta.sqrt(), 0.0));
                err.push(hermitian_part(&c));
            }
        }
        let err_cov = PairGrid::from_vec(k_count, l_count, err);
        let z_matrices = (0..l_count)
            .map(|l| {
                let mut z = CMatrix::zeros(n, n);
                for i in 0..k_count {
                    z += err_cov.get(i, l) * C64::new(plan.powers_w[i], 0.0);
                }
                z
            })
            .collect();
        Ok(Self {
            psi,
            gain: PairGrid::from_vec(k_count, l_count, gain),
            err_cov,
            z_matrices,
            noise_w,
        })
    }

    pub fn z_matrix(&self, ap: usize) -> &CMatrix {
        &self.z_matrices[ap]
    }
}

/// Per-block channel estimates.
#[derive(Debug, Clone)]
pub struct EstimateSet {
    pub estimates: PairGrid<CVector>,
}

impl EstimateSet {
    /// Ĥₗ = [ĥ₁ₗ … ĥ_Kₗ] (N×K).
    pub fn ap_matrix(&self, ap: usize) -> CMatrix {
        stack_columns(&self.estimates, ap)
    }
}

/// Simulates the pilot phase for one block and returns phase-aware MMSE
/// estimates. Noise is drawn per (AP, pilot) in that order, for every pilot.
pub fn simulate_pilot_and_estimate<R: Rng + ?Sized>(
    estimator: &Estimator,
    stats: &ChannelStats,
    plan: &ServicePlan,
    draw: &ChannelDraw,
    rng: &mut R,
) -> EstimateSet {
    let k_count = stats.ue_count();
    let l_count = stats.ap_count();
    let n = stats.antennas;
    let tau = plan.pilot_count as f64;
    let noise_amp = (estimator.noise_w * tau).sqrt();
    let phase = |k: usize, l: usize| match &draw.phases {
        Some(p) => p[(k, l)],
        None => stats.los_phase[(k, l)],
    };
    let mean = |k: usize, l: usize| stats.los_mean.get(k, l) * C64::from_polar(1.0, phase(k, l));
    let users: Vec<Vec<usize>> = (0..plan.pilot_count).map(|t| plan.ues_on_pilot(t)).collect();

    // Innovation y − ȳ per (pilot, AP).
    let mut innovation: Vec<Vec<CVector>> = vec![Vec::with_capacity(l_count); plan.pilot_count];
    for l in 0..l_count {
        for (t, on_pilot) in users.iter().enumerate() {
            let mut y = complex_normal_vector(rng, n) * C64::new(noise_amp, 0.0);
            for &i in on_pilot {
                let amp = C64::new(plan.pilot_powers_w[i].sqrt() * tau, 0.0);
                y += (draw.true_channels.get(i, l) - mean(i, l)) * amp;
            }
            innovation[t].push(y);
        }
    }
    let estimates = PairGrid::from_fn(k_count, l_count, |k, l| {
        mean(k, l) + estimator.gain.get(k, l) * &innovation[plan.pilot_of_ue[k]][l]
    });
    EstimateSet { estimates }
}

/// Samples ĥₖₗ directly from `CN(h̄ₖₗe^{jθₖₗ}, Rₖₗ − Cₖₗ)`. Only valid for a
/// UE without pilot-sharing partners; used to cross-check the pilot path.
pub fn sample_estimate_directly<R: Rng + ?Sized>(
    stats: &ChannelStats,
    estimator: &Estimator,
    ue: usize,
    ap: usize,
    rng: &mut R,
) -> Result<CVector> {
    let cov = stats.nlos_cov.get(ue, ap) - estimator.err_cov.get(ue, ap);
    let f = crate::linalg::psd_factor(&crate::linalg::clip_to_psd(&cov))?;
    Ok(stats.phased_mean(ue, ap) + f * complex_normal_vector(rng, stats.antennas))
}

/// Outcome of one Monte Carlo consistency check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub ue: usize,
    pub ap: usize,
    /// Largest deviation divided by its standard error.
    pub worst_z: f64,
    pub passed: bool,
}

/// Monte Carlo verification of the estimator's error statistics.
#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub draws: usize,
    pub sigmas: f64,
    /// E{ĥ} = h̄e^{jθ}.
    pub mean: Vec<CheckResult>,
    /// E{ξξᴴ} = C.
    pub error_covariance: Vec<CheckResult>,
    /// E{(ĥ − E ĥ) ξᴴ} = 0.
    pub orthogonality: Vec<CheckResult>,
    /// Pilot-sharing pairs whose estimates are correlated through the shared
    /// observation: `((k, i, l), empirical/expected check)`.
    pub copilot_correlation: Vec<((usize, usize, usize), CheckResult)>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.mean
            .iter()
            .chain(&self.error_covariance)
            .chain(&self.orthogonality)
            .chain(self.copilot_correlation.iter().map(|(_, c)| c))
            .all(|c| c.passed)
    }
}

pub const MIN_CONSISTENCY_DRAWS: usize = 10_000;

/// Runs `draws` blocks and checks the mean, error covariance, orthogonality
/// and copilot cross-correlation of the estimates at `sigmas` standard
/// errors. `make_rng(i)` supplies the stream for block `i`.
pub fn error_statistics_check<R: Rng>(
    stats: &ChannelStats,
    plan: &ServicePlan,
    estimator: &Estimator,
    draws: usize,
    sigmas: f64,
    mut make_rng: impl FnMut(usize) -> R,
) -> Result<ConsistencyReport> {
    if draws < MIN_CONSISTENCY_DRAWS {
        return Err(Error::Budget { what: "estimator consistency check", got: draws, min: MIN_CONSISTENCY_DRAWS });
    }
    let k_count = stats.ue_count();
    let l_count = stats.ap_count();
    let n = stats.antennas;
    let nf = draws as f64;
    let zeros_v = || PairGrid::from_fn(k_count, l_count, |_, _| CVector::zeros(n));
    let zeros_m = || PairGrid::from_fn(k_count, l_count, |_, _| CMatrix::zeros(n, n));
    let mut sum_dev = zeros_v();
    let mut err_outer = zeros_m();
    let mut cross = zeros_m();
    let copilot_pairs: Vec<(usize, usize)> = (0..k_count)
        .flat_map(|k| plan.copilot_sets[k].iter().filter(move |&&i| i > k).map(move |&i| (k, i)))
        .collect();
    let mut copilot_acc: Vec<Vec<CMatrix>> = copilot_pairs.iter().map(|_| vec![CMatrix::zeros(n, n); l_count]).collect();

    for d in 0..draws {
        let mut rng = make_rng(d);
        let draw = crate::channel::sample_channels(stats, &mut rng);
        let est = simulate_pilot_and_estimate(estimator, stats, plan, &draw, &mut rng);
        for k in 0..k_count {
            for l in 0..l_count {
                let dev = est.estimates.get(k, l) - stats.phased_mean(k, l);
                let xi = draw.true_channels.get(k, l) - est.estimates.get(k, l);
                *err_outer.get_mut(k, l) += &xi * xi.adjoint();
                *cross.get_mut(k, l) += &dev * xi.adjoint();
                *sum_dev.get_mut(k, l) += dev;
            }
        }
        for (p, &(k, i)) in copilot_pairs.iter().enumerate() {
            for l in 0..l_count {
                let dk = est.estimates.get(k, l) - stats.phased_mean(k, l);
                let di = est.estimates.get(i, l) - stats.phased_mean(i, l);
                copilot_acc[p][l] += &dk * di.adjoint();
            }
        }
    }

    let inv_n = C64::new(1.0 / nf, 0.0);
    // E|x_a y_b*|² for jointly Gaussian zero-mean x, y: Var terms plus cross.
    let product_se = |xa: f64, yb: f64, cross: f64| ((xa * yb + cross) / nf).sqrt();
    let grade = |dev: f64, se: f64| {
        if se == 0.0 {
            if dev <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            dev / se
        }
    };
    let mut mean = Vec::new();
    let mut err_cov = Vec::new();
    let mut ortho = Vec::new();
    for k in 0..k_count {
        for l in 0..l_count {
            let c = estimator.err_cov.get(k, l);
            let signal = stats.nlos_cov.get(k, l) - c;
            let m = sum_dev.get(k, l) * inv_n;
            let z_mean = (0..n)
                .map(|a| grade(m[a].norm(), (signal[(a, a)].re.max(0.0) / nf).sqrt()))
                .fold(0.0, f64::max);
            let emp_c = err_outer.get(k, l) * inv_n;
            let emp_x = cross.get(k, l) * inv_n;
            let mut z_c: f64 = 0.0;
            let mut z_x: f64 = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let (caa, cbb) = (c[(a, a)].re.max(0.0), c[(b, b)].re.max(0.0));
                    z_c = z_c.max(grade((emp_c[(a, b)] - c[(a, b)]).norm(), product_se(caa, cbb, c[(a, b)].norm_sqr())));
                    let saa = signal[(a, a)].re.max(0.0);
                    z_x = z_x.max(grade(emp_x[(a, b)].norm(), product_se(saa, cbb, 0.0)));
                }
            }
            mean.push(CheckResult { ue: k, ap: l, worst_z: z_mean, passed: z_mean <= sigmas });
            err_cov.push(CheckResult { ue: k, ap: l, worst_z: z_c, passed: z_c <= sigmas });
            ortho.push(CheckResult { ue: k, ap: l, worst_z: z_x, passed: z_x <= sigmas });
        }
    }
    let tau = plan.pilot_count as f64;
    let mut copilot = Vec::new();
    for (p, &(k, i)) in copilot_pairs.iter().enumerate() {
        for l in 0..l_count {
            // E{(ĥₖ − mₖ)(ĥᵢ − mᵢ)ᴴ} = √(ηₖηᵢ) τ_p Rₖ Ψ⁻¹ Rᵢ.
            let gk = estimator.gain.get(k, l);
            let gi = estimator.gain.get(i, l);
            let psi = &estimator.psi[plan.pilot_of_ue[k]][l];
            let expected = gk * psi * gi.adjoint() * C64::new(tau, 0.0);
            let emp = &copilot_acc[p][l] * inv_n;
            let sk = stats.nlos_cov.get(k, l) - estimator.err_cov.get(k, l);
            let si = stats.nlos_cov.get(i, l) - estimator.err_cov.get(i, l);
            let mut z: f64 = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let se = product_se(sk[(a, a)].re.max(0.0), si[(b, b)].re.max(0.0), expected[(a, b)].norm_sqr());
                    z = z.max(grade((emp[(a, b)] - expected[(a, b)]).norm(), se));
                }
            }
            copilot.push(((k, i, l), CheckResult { ue: k, ap: l, worst_z: z, passed: z <= sigmas }));
        }
    }
    Ok(ConsistencyReport {
        draws,
        sigmas,
        mean,
        error_covariance: err_cov,
        orthogonality: ortho,
        copilot_correlation: copilot,
    })
}

/// Real K×L matrix of `tr(Cₖₗ)`.
pub fn error_traces(estimator: &Estimator) -> DMatrix<f64> {
    let g = &estimator.err_cov;
    DMatrix::from_fn(g.ues(), g.aps(), |k, l| crate::linalg::trace_re(g.get(k, l)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_channels;
    use crate::linalg::{min_eigenvalue, trace_re};
    use crate::rng::{substream, Purpose};

    /// K UEs, one AP, N antennas, explicit covariances, unit gains.
    fn custom_stats(covs: Vec<CMatrix>, means: Vec<CVector>) -> ChannelStats {
        let k = covs.len();
        ChannelStats::from_components(
            PairGrid::from_vec(k, 1, means),
            DMatrix::from_fn(k, 1, |i, _| 0.4 + i as f64),
            PairGrid::from_vec(k, 1, covs),
            DMatrix::from_element(k, 1, 1.0),
            DMatrix::from_element(k, 1, 1.0),
        )
        .unwrap()
    }

    fn plan(pilots: Vec<usize>, tau: usize, eta: f64) -> ServicePlan {
        let k = pilots.len();
        ServicePlan::new(tau, pilots, vec![vec![0]; k], vec![1.0; k], vec![eta; k]).unwrap()
    }

    fn random_psd(n: usize, seed: u32) -> CMatrix {
        let mut rng = substream(11, Purpose::Diagnostic, seed, 0);
        let a = CMatrix::from_fn(n, n, |_, _| crate::linalg::complex_normal(&mut rng));
        &a * a.adjoint() * C64::new(0.5, 0.0)
    }

    #[test]
    fn psi_examples() {
        let stats = custom_stats(vec![CMatrix::identity(2, 2)], vec![CVector::zeros(2)]);
        let p = plan(vec![0], 2, 0.5);
        assert_eq!(psi_matrix(&stats, &p, 0, 1, 0.3), CMatrix::identity(2, 2) * C64::new(0.3, 0.0));
        assert_eq!(psi_matrix(&stats, &p, 0, 0, 0.3), CMatrix::identity(2, 2) * C64::new(1.3, 0.0));

        let (r1, r2) = (random_psd(3, 1), random_psd(3, 2));
        let stats = custom_stats(vec![r1.clone(), r2.clone()], vec![CVector::zeros(3), CVector::zeros(3)]);
        let p = ServicePlan::new(3, vec![1, 1], vec![vec![0]; 2], vec![1.0; 2], vec![0.2, 0.7]).unwrap();
        let want = r1 * C64::new(0.2 * 3.0, 0.0) + r2 * C64::new(0.7 * 3.0, 0.0) + CMatrix::identity(3, 3) * C64::new(0.05, 0.0);
        assert!((psi_matrix(&stats, &p, 0, 1, 0.05) - want).norm() < 1e-14);
    }

    #[test]
    fn pure_los_estimate_is_the_phased_mean() {
        let mean = CVector::from_vec(vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.1)]);
        let stats = custom_stats(vec![CMatrix::zeros(2, 2)], vec![mean]);
        let p = plan(vec![0], 1, 1.0);
        let est = Estimator::new(&stats, &p, 10.0).unwrap();
        let draw = sample_channels(&stats, &mut substream(1, Purpose::EvaluationDraw, 0, 0));
        let e = simulate_pilot_and_estimate(&est, &stats, &p, &draw, &mut substream(1, Purpose::EvaluationDraw, 0, 1));
        assert_eq!(e.estimates.get(0, 0), &stats.phased_mean(0, 0));
        assert_eq!(est.err_cov.get(0, 0), &CMatrix::zeros(2, 2));
    }

    #[test]
    fn noiseless_uncontaminated_estimation_is_perfect() {
        let r = random_psd(3, 7) + CMatrix::identity(3, 3) * C64::new(0.1, 0.0);
        let stats = custom_stats(vec![r], vec![CVector::zeros(3)]);
        let p = plan(vec![0], 1, 1.0);
        let est = Estimator::new(&stats, &p, 1e-12).unwrap();
        assert!(est.err_cov.get(0, 0).norm() < 1e-9);
    }

    #[test]
    fn scalar_error_variance() {
        let (r, eta, tau, s2) = (2.0, 0.3, 4usize, 0.7);
        let stats = custom_stats(vec![CMatrix::from_element(1, 1, C64::new(r, 0.0))], vec![CVector::zeros(1)]);
        let p = plan(vec![0], tau, eta);
        let est = Estimator::new(&stats, &p, s2).unwrap();
        let et = eta * tau as f64;
        let want = r - et * r * r / (et * r + s2);
        assert!((est.err_cov.get(0, 0)[(0, 0)].re - want).abs() < 1e-14);
        assert!((want - r * s2 / (et * r + s2)).abs() < 1e-14);
    }

    #[test]
    fn error_covariance_is_bounded_by_prior_and_grows_with_contamination() {
        for seed in 0..20u32 {
            let rs: Vec<CMatrix> = (0..3).map(|i| random_psd(3, seed * 3 + i)).collect();
            let stats = custom_stats(rs.clone(), vec![CVector::zeros(3); 3]);
            let alone = Estimator::new(&stats, &plan(vec![0, 1, 2], 3, 0.5), 0.2).unwrap();
            let shared = Estimator::new(&stats, &plan(vec![0, 0, 2], 3, 0.5), 0.2).unwrap();
            for k in 0..3 {
                let c = alone.err_cov.get(k, 0);
                let tr = trace_re(&rs[k]);
                assert!(min_eigenvalue(c) >= -1e-10 * tr);
                assert!(min_eigenvalue(&(&rs[k] - c)) >= -1e-10 * tr);
            }
            assert!(trace_re(shared.err_cov.get(0, 0)) >= trace_re(alone.err_cov.get(0, 0)) - 1e-12);
        }
    }

    #[test]
    fn direct_sampling_matches_pilot_path_in_distribution() {
        let r = random_psd(2, 3);
        let stats = custom_stats(vec![r.clone()], vec![CVector::from_element(2, C64::new(0.3, 0.0))]);
        let p = plan(vec![0], 1, 1.0);
        let est = Estimator::new(&stats, &p, 0.5).unwrap();
        let draws = 20_000;
        let mut pilot_pow = 0.0;
        let mut direct_pow = 0.0;
        for i in 0..draws {
            let mut rng = substream(4, Purpose::EvaluationDraw, 0, i);
            let d = sample_channels(&stats, &mut rng);
            let e = simulate_pilot_and_estimate(&est, &stats, &p, &d, &mut rng);
            pilot_pow += (e.estimates.get(0, 0) - stats.phased_mean(0, 0)).norm_squared();
            let h = sample_estimate_directly(&stats, &est, 0, 0, &mut rng).unwrap();
            direct_pow += (h - stats.phased_mean(0, 0)).norm_squared();
        }
        let want = trace_re(&(r - est.err_cov.get(0, 0)));
        for got in [pilot_pow / draws as f64, direct_pow / draws as f64] {
            assert!((got - want).abs() < 0.05 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn consistency_check_needs_budget_and_passes_for_pure_los() {
        let stats = custom_stats(vec![CMatrix::zeros(2, 2)], vec![CVector::from_element(2, C64::new(1.0, 0.0))]);
        let p = plan(vec![0], 1, 1.0);
        let est = Estimator::new(&stats, &p, 1.0).unwrap();
        let small = error_statistics_check(&stats, &p, &est, 10, 5.0, |i| substream(0, Purpose::Diagnostic, 0, i as u32));
        assert!(matches!(small, Err(Error::Budget { .. })));
        let rep = error_statistics_check(&stats, &p, &est, 10_000, 5.0, |i| substream(0, Purpose::Diagnostic, 0, i as u32)).unwrap();
        assert!(rep.passed());
        assert!(rep.mean.iter().chain(&rep.error_covariance).chain(&rep.orthogonality).all(|c| c.worst_z == 0.0));
    }
}
