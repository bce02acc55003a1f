//! Network deployments and large-scale parameters.
//!
//! APs and UEs are dropped uniformly on a `d × d` square that is treated as a
//! torus (wrap-around), so every UE sees an interference environment that
//! looks like the interior of an infinite network.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise power in watts for a receiver with the given bandwidth and noise
/// figure, at −174 dBm/Hz thermal density.
pub fn noise_power_w(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    let dbm = -174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db;
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Physical and system parameters of one network.
///
/// [`AreaConfig::default`] is the 100-AP, 40-UE, 1 km² reference network;
/// [`AreaConfig::desk_scale`] is a smaller network that runs in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaConfig {
    pub side_length_m: f64,
    pub ap_count: usize,
    pub ue_count: usize,
    pub antennas_per_ap: usize,
    pub height_diff_m: f64,
    pub carrier_freq_mhz: f64,
    pub shadow_std_db: f64,
    pub pilot_count: usize,
    pub coherence_symbols: usize,
    pub p_max_w: f64,
    /// Pilot power ηₖ for every UE; `None` means `p_max_w`.
    pub pilot_power_w: Option<f64>,
    pub noise_power_w: f64,
    /// Antenna spacing in wavelengths.
    pub antenna_spacing: f64,
    pub azimuth_std_deg: f64,
    pub elevation_std_deg: f64,
    /// Common Rician factor replacing the distance-dependent one.
    pub kappa_override: Option<f64>,
}

impl Default for AreaConfig {
    fn default() -> Self {
        Self {
            side_length_m: 1000.0,
            ap_count: 100,
            ue_count: 40,
            antennas_per_ap: 4,
            height_diff_m: 11.0,
            carrier_freq_mhz: 5000.0,
            shadow_std_db: 8.0,
            pilot_count: 5,
            coherence_symbols: 200,
            p_max_w: 0.1,
            pilot_power_w: None,
            noise_power_w: noise_power_w(100e6, 7.0),
            antenna_spacing: 0.5,
            azimuth_std_deg: 5.0,
            elevation_std_deg: 5.0,
            kappa_override: None,
        }
    }
}

impl AreaConfig {
    pub fn desk_scale() -> Self {
        Self {
            ap_count: 25,
            ue_count: 8,
            antennas_per_ap: 2,
            pilot_count: 4,
            ..Self::default()
        }
    }

    pub fn pilot_power(&self) -> f64 {
        self.pilot_power_w.unwrap_or(self.p_max_w)
    }

    /// Fraction of each coherence block left for data.
    pub fn prelog(&self) -> f64 {
        (self.coherence_symbols - self.pilot_count) as f64 / self.coherence_symbols as f64
    }

    /// Lists every violated invariant; empty when the configuration is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                out.push(msg.to_string());
            }
        };
        need(self.ap_count >= 1, "ap_count must be at least 1");
        need(self.ue_count >= 1, "ue_count must be at least 1");
        need(self.antennas_per_ap >= 1, "antennas_per_ap must be at least 1");
        need(self.pilot_count >= 1, "pilot_count must be at least 1");
        need(self.coherence_symbols >= 1, "coherence_symbols must be at least 1");
        need(
            self.pilot_count <= self.coherence_symbols,
            "pilot_count must not exceed coherence_symbols",
        );
        need(self.side_length_m > 0.0, "side_length_m must be positive");
        need(self.height_diff_m >= 0.0, "height_diff_m must be nonnegative");
        need(self.carrier_freq_mhz > 0.0, "carrier_freq_mhz must be positive");
        need(self.shadow_std_db >= 0.0, "shadow_std_db must be nonnegative");
        need(self.p_max_w > 0.0, "p_max_w must be positive");
        need(self.pilot_power() > 0.0, "pilot_power_w must be positive");
        need(self.noise_power_w > 0.0, "noise_power_w must be positive");
        need(self.antenna_spacing > 0.0, "antenna_spacing must be positive");
        need(
            self.azimuth_std_deg >= 0.0 && self.elevation_std_deg >= 0.0,
            "angular standard deviations must be nonnegative",
        );
        need(
            self.kappa_override.is_none_or(|k| k >= 0.0),
            "kappa_override must be nonnegative",
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(v.join("; ")))
        }
    }
}

/// AP and UE positions with all pairwise large-scale geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub ap_xy: Vec<[f64; 2]>,
    pub ue_xy: Vec<[f64; 2]>,
    /// K×L wrap-around-minimal 3-D distances in meters.
    pub distances_3d: DMatrix<f64>,
    /// K×L azimuth of the UE seen from the AP, radians in (−π, π].
    pub azimuth: DMatrix<f64>,
    /// K×L elevation of the UE seen from the AP, radians in (0, π/2].
    pub elevation: DMatrix<f64>,
    /// K×L channel gains in dB, shadow fading included.
    pub gains_db: DMatrix<f64>,
}

impl Deployment {
    pub fn ue_count(&self) -> usize {
        self.ue_xy.len()
    }

    pub fn ap_count(&self) -> usize {
        self.ap_xy.len()
    }

    pub fn gains_lin(&self) -> DMatrix<f64> {
        self.gains_db.map(|g| 10f64.powf(g / 10.0))
    }

    /// Builds the geometry for given positions; shadow fading is drawn from
    /// `rng` in row-major (UE, AP) order.
    pub fn from_positions<R: Rng + ?Sized>(
        ap_xy: Vec<[f64; 2]>,
        ue_xy: Vec<[f64; 2]>,
        cfg: &AreaConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let k = ue_xy.len();
        let l = ap_xy.len();
        let mut distances = DMatrix::zeros(k, l);
        let mut azimuth = DMatrix::zeros(k, l);
        let mut elevation = DMatrix::zeros(k, l);
        let mut gains = DMatrix::zeros(k, l);
        let shadow = Normal::new(0.0, cfg.shadow_std_db)
            .map_err(|e| Error::invalid(format!("shadow fading: {e}")))?;
        for (ki, ue) in ue_xy.iter().enumerate() {
            for (li, ap) in ap_xy.iter().enumerate() {
                let [dx, dy] = wrapped_offset(*ap, *ue, cfg.side_length_m);
                let horizontal = dx.hypot(dy);
                let d = horizontal.hypot(cfg.height_diff_m);
                distances[(ki, li)] = d;
                azimuth[(ki, li)] = if horizontal == 0.0 { 0.0 } else { dy.atan2(dx) };
                elevation[(ki, li)] = cfg.height_diff_m.atan2(horizontal);
                let f = shadow.sample(rng);
                gains[(ki, li)] = path_gain_db(d, cfg.carrier_freq_mhz, f)?;
            }
        }
        Ok(Self {
            ap_xy,
            ue_xy,
            distances_3d: distances,
            azimuth,
            elevation,
            gains_db: gains,
        })
    }
}

/// Drops `L` APs and then `K` UEs uniformly on the square and fills in the
/// geometry.
pub fn deploy<R: Rng + ?Sized>(cfg: &AreaConfig, rng: &mut R) -> Result<Deployment> {
    cfg.validate()?;
    let side = cfg.side_length_m;
    let point = |rng: &mut R| [rng.random::<f64>() * side, rng.random::<f64>() * side];
    let aps: Vec<_> = (0..cfg.ap_count).map(|_| point(rng)).collect();
    let ues: Vec<_> = (0..cfg.ue_count).map(|_| point(rng)).collect();
    Deployment::from_positions(aps, ues, cfg, rng)
}

/// Horizontal offset from `a` to the nearest of the nine torus translates of
/// `b`. Ties keep the untranslated copy.
pub fn wrapped_offset(a: [f64; 2], b: [f64; 2], side: f64) -> [f64; 2] {
    // Bring b into the same period as a so the nine translates suffice.
    let b = [
        a[0] + (b[0] - a[0]).rem_euclid(side),
        a[1] + (b[1] - a[1]).rem_euclid(side),
    ];
    let mut best = [b[0] - a[0], b[1] - a[1]];
    let mut best_d2 = best[0] * best[0] + best[1] * best[1];
    for sx in [-1.0, 0.0, 1.0] {
        for sy in [-1.0, 0.0, 1.0] {
            let dx = b[0] + sx * side - a[0];
            let dy = b[1] + sy * side - a[1];
            let d2 = dx * dx + dy * dy;
            if d2 < best_d2 {
                best = [dx, dy];
                best_d2 = d2;
            }
        }
    }
    best
}

/// 3-D distance between `a` and the nearest torus translate of `b`, with the
/// two points separated vertically by `dh`.
pub fn wrapped_distance(a: [f64; 2], b: [f64; 2], side: f64, dh: f64) -> f64 {
    let [dx, dy] = wrapped_offset(a, b, side);
    (dx * dx + dy * dy + dh * dh).sqrt()
}

/// COST-231 Walfish–Ikegami urban micro gain in dB for distance `d_m` and
/// carrier frequency in MHz.
pub fn path_gain_db(d_m: f64, f_mhz: f64, shadow_db: f64) -> Result<f64> {
    if !(d_m > 0.0) {
        return Err(Error::invalid(format!("distance must be positive, got {d_m}")));
    }
    if !(f_mhz > 0.0) {
        return Err(Error::invalid(format!("carrier frequency must be positive, got {f_mhz}")));
    }
    Ok(35.4 - 20.0 * f_mhz.log10() - 26.0 * d_m.log10() + shadow_db)
}

/// Distance-dependent Rician factor `10^(1.3 − 0.003 d)`.
pub fn rician_factor(d_m: f64) -> f64 {
    10f64.powf(1.3 - 0.003 * d_m)
}

/// Pilot indices, pilot-sharing sets, serving clusters and transmit powers.
///
/// Indices are zero-based. Clusters are sorted by AP index.
#[derive(Debug, Clone, PartialEq)]
pub struct ServicePlan {
    pub pilot_count: usize,
    pub pilot_of_ue: Vec<usize>,
    pub copilot_sets: Vec<Vec<usize>>,
    pub cluster_of_ue: Vec<Vec<usize>>,
    pub master_ap: Vec<usize>,
    /// Data powers pₖ in watts.
    pub powers_w: Vec<f64>,
    /// Pilot powers ηₖ in watts.
    pub pilot_powers_w: Vec<f64>,
}

impl ServicePlan {
    /// Builds a plan from explicit pilots and clusters. The first AP of each
    /// cluster is recorded as the master.
    pub fn new(
        pilot_count: usize,
        pilot_of_ue: Vec<usize>,
        cluster_of_ue: Vec<Vec<usize>>,
        powers_w: Vec<f64>,
        pilot_powers_w: Vec<f64>,
    ) -> Result<Self> {
        let k = pilot_of_ue.len();
        if cluster_of_ue.len() != k || powers_w.len() != k || pilot_powers_w.len() != k {
            return Err(Error::invalid("service plan vectors must all have one entry per UE"));
        }
        if let Some(t) = pilot_of_ue.iter().find(|&&t| t >= pilot_count) {
            return Err(Error::invalid(format!("pilot index {t} out of range")));
        }
        let mut clusters = Vec::with_capacity(k);
        for (ue, c) in cluster_of_ue.into_iter().enumerate() {
            let set: BTreeSet<usize> = c.into_iter().collect();
            if set.is_empty() {
                return Err(Error::invalid(format!("UE {ue} has an empty serving cluster")));
            }
            clusters.push(set.into_iter().collect::<Vec<_>>());
        }
        let master_ap = clusters.iter().map(|c| c[0]).collect();
        Ok(Self {
            pilot_count,
            copilot_sets: copilot_sets(&pilot_of_ue),
            pilot_of_ue,
            cluster_of_ue: clusters,
            master_ap,
            powers_w,
            pilot_powers_w,
        })
    }

    pub fn ue_count(&self) -> usize {
        self.pilot_of_ue.len()
    }

    /// UEs transmitting pilot `t`, in index order.
    pub fn ues_on_pilot(&self, t: usize) -> Vec<usize> {
        (0..self.ue_count()).filter(|&k| self.pilot_of_ue[k] == t).collect()
    }

    pub fn serves(&self, ue: usize, ap: usize) -> bool {
        self.cluster_of_ue[ue].binary_search(&ap).is_ok()
    }
}

fn copilot_sets(pilots: &[usize]) -> Vec<Vec<usize>> {
    pilots
        .iter()
        .map(|&t| (0..pilots.len()).filter(|&i| pilots[i] == t).collect())
        .collect()
}

fn argmax_lowest(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Sequential dynamic cooperation clustering.
///
/// Each UE picks its strongest AP as master. The first `τ_p` UEs get
/// distinct pilots; later UEs get the pilot with the least accumulated gain
/// at their master AP. Then every AP serves, on each pilot, the UE with the
/// largest gain among those using it. A master AP always serves its own UE.
/// Powers are left at `p_max` (see [`power_control`]).
pub fn assign_pilots_and_clusters(dep: &Deployment, cfg: &AreaConfig) -> Result<ServicePlan> {
    if cfg.pilot_count == 0 {
        return Err(Error::invalid("pilot_count must be at least 1"));
    }
    let k_count = dep.ue_count();
    let l_count = dep.ap_count();
    let tau = cfg.pilot_count;
    let gains = dep.gains_lin();
    let mut pilots = vec![0usize; k_count];
    let mut masters = vec![0usize; k_count];
    for k in 0..k_count {
        let master = argmax_lowest((0..l_count).map(|l| dep.gains_db[(k, l)]));
        masters[k] = master;
        pilots[k] = if k < tau {
            k
        } else {
            let mut contamination = vec![0.0; tau];
            for i in 0..k {
                contamination[pilots[i]] += gains[(i, master)];
            }
            argmax_lowest(contamination.iter().map(|c| -c))
        };
    }
    let mut clusters: Vec<BTreeSet<usize>> = masters.iter().map(|&m| BTreeSet::from([m])).collect();
    for l in 0..l_count {
        for t in 0..tau {
            let users: Vec<usize> = (0..k_count).filter(|&k| pilots[k] == t).collect();
            if users.is_empty() {
                continue;
            }
            let pick = users[argmax_lowest(users.iter().map(|&k| dep.gains_db[(k, l)]))];
            clusters[pick].insert(l);
        }
    }
    let pilot_power = cfg.pilot_power();
    Ok(ServicePlan {
        pilot_count: tau,
        copilot_sets: copilot_sets(&pilots),
        pilot_of_ue: pilots,
        cluster_of_ue: clusters.into_iter().map(|c| c.into_iter().collect()).collect(),
        master_ap: masters,
        powers_w: vec![cfg.p_max_w; k_count],
        pilot_powers_w: vec![pilot_power; k_count],
    })
}

/// Fractional power control
/// `pₖ = p_max (Σ_{l∈ℒₖ} βₖₗ)^v / maxᵢ (Σ_{l∈ℒᵢ} βᵢₗ)^v` with linear gains.
pub fn power_control(
    gains_db: &DMatrix<f64>,
    clusters: &[Vec<usize>],
    v: f64,
    p_max: f64,
) -> Result<Vec<f64>> {
    if clusters.iter().any(|c| c.is_empty()) {
        return Err(Error::invalid("power control needs nonempty clusters"));
    }
    let sums: Vec<f64> = clusters
        .iter()
        .enumerate()
        .map(|(k, c)| c.iter().map(|&l| 10f64.powf(gains_db[(k, l)] / 10.0)).sum())
        .collect();
    if v == 0.0 {
        return Ok(vec![p_max; clusters.len()]);
    }
    if v < 0.0 && sums.iter().any(|&s| s <= 0.0) {
        return Err(Error::invalid("zero cluster gain with a negative power-control exponent"));
    }
    let scaled: Vec<f64> = sums.iter().map(|s| s.powf(v)).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::invalid("power control normalization is not finite and positive"));
    }
    Ok(scaled.iter().map(|s| p_max * (s / max).min(1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Purpose};
    use proptest::prelude::*;

    fn rng() -> crate::rng::SimRng {
        substream(42, Purpose::Deployment, 0, 0)
    }

    #[test]
    fn noise_default_is_minus_87_dbm() {
        let w = noise_power_w(100e6, 7.0);
        assert!((10.0 * (w * 1000.0).log10() + 87.0).abs() < 1e-9);
    }

    #[test]
    fn wrapped_distance_examples() {
        assert!((wrapped_distance([3.0, 4.0], [3.0, 4.0], 1000.0, 11.0) - 11.0).abs() < 1e-12);
        assert!((wrapped_distance([0.0, 0.0], [999.0, 0.0], 1000.0, 0.0) - 1.0).abs() < 1e-9);
        let expected = (500f64.powi(2) * 2.0 + 121.0).sqrt();
        assert!((wrapped_distance([0.0, 0.0], [500.0, 500.0], 1000.0, 11.0) - expected).abs() < 1e-9);
    }

    #[test]
    fn path_gain_examples() {
        assert!((path_gain_db(1.0, 5000.0, 0.0).unwrap() - (35.4 - 20.0 * 5000f64.log10())).abs() < 1e-12);
        assert!((path_gain_db(1.0, 5000.0, 0.0).unwrap() + 38.579).abs() < 1e-3);
        assert!((path_gain_db(100.0, 5000.0, 0.0).unwrap() + 90.579).abs() < 1e-3);
        let base = path_gain_db(37.0, 5000.0, 0.0).unwrap();
        assert!((path_gain_db(37.0, 5000.0, 3.0).unwrap() - base - 3.0).abs() < 1e-12);
        assert!(path_gain_db(0.0, 5000.0, 0.0).is_err());
        assert!(path_gain_db(-1.0, 5000.0, 0.0).is_err());
    }

    #[test]
    fn rician_factor_examples() {
        assert!((rician_factor(100.0) - 10.0).abs() < 1e-12);
        assert!((rician_factor(1300.0 / 3.0) - 1.0).abs() < 1e-12);
        assert!((rician_factor(0.0) - 10f64.powf(1.3)).abs() < 1e-12);
        assert!((rician_factor(0.0) - 19.95).abs() < 0.01);
    }

    #[test]
    fn coincident_positions_give_height_difference() {
        let cfg = AreaConfig { ap_count: 1, ue_count: 1, shadow_std_db: 0.0, ..AreaConfig::default() };
        let dep = Deployment::from_positions(vec![[10.0, 20.0]], vec![[10.0, 20.0]], &cfg, &mut rng()).unwrap();
        assert_eq!(dep.distances_3d[(0, 0)], 11.0);
        assert!((dep.elevation[(0, 0)] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn table_one_deployment_shapes() {
        let cfg = AreaConfig::default();
        let dep = deploy(&cfg, &mut rng()).unwrap();
        assert_eq!(dep.ap_xy.len(), 100);
        assert_eq!(dep.ue_xy.len(), 40);
        assert_eq!(dep.gains_db.shape(), (40, 100));
        for &d in dep.distances_3d.iter() {
            assert!(d >= 11.0);
        }
        for (&az, &el) in dep.azimuth.iter().zip(dep.elevation.iter()) {
            assert!(az > -std::f64::consts::PI - 1e-12 && az <= std::f64::consts::PI);
            assert!(el > 0.0 && el <= std::f64::consts::FRAC_PI_2);
        }
        for p in dep.ap_xy.iter().chain(&dep.ue_xy) {
            assert!((0.0..1000.0).contains(&p[0]) && (0.0..1000.0).contains(&p[1]));
        }
    }

    #[test]
    fn deployment_is_deterministic() {
        let cfg = AreaConfig::desk_scale();
        let a = deploy(&cfg, &mut rng()).unwrap();
        let b = deploy(&cfg, &mut rng()).unwrap();
        assert_eq!(a, b);
        let pa = assign_pilots_and_clusters(&a, &cfg).unwrap();
        let pb = assign_pilots_and_clusters(&b, &cfg).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn orthogonal_pilots_give_singleton_copilot_sets() {
        let cfg = AreaConfig { ue_count: 4, pilot_count: 5, ..AreaConfig::desk_scale() };
        let dep = deploy(&cfg, &mut rng()).unwrap();
        let plan = assign_pilots_and_clusters(&dep, &cfg).unwrap();
        for k in 0..4 {
            assert_eq!(plan.copilot_sets[k], vec![k]);
            // With a pilot to itself every UE wins every contest.
            assert_eq!(plan.cluster_of_ue[k], (0..cfg.ap_count).collect::<Vec<_>>());
        }
    }

    #[test]
    fn single_ap_two_ues_one_pilot_uses_master_fallback() {
        let cfg = AreaConfig {
            ap_count: 1,
            ue_count: 2,
            pilot_count: 1,
            shadow_std_db: 0.0,
            ..AreaConfig::default()
        };
        let dep = Deployment::from_positions(
            vec![[0.0, 0.0]],
            vec![[300.0, 0.0], [50.0, 0.0]],
            &cfg,
            &mut rng(),
        )
        .unwrap();
        let plan = assign_pilots_and_clusters(&dep, &cfg).unwrap();
        assert_eq!(plan.pilot_of_ue, vec![0, 0]);
        assert_eq!(plan.copilot_sets, vec![vec![0, 1], vec![0, 1]]);
        // UE 1 is stronger and wins the contest; UE 0 is kept by its master.
        assert_eq!(plan.cluster_of_ue, vec![vec![0], vec![0]]);
        assert_eq!(plan.master_ap, vec![0, 0]);
    }

    #[test]
    fn power_control_examples() {
        let gains_db = DMatrix::from_row_slice(2, 1, &[10.0 * 0.2f64.log10(), 10.0 * 0.1f64.log10()]);
        let clusters = vec![vec![0], vec![0]];
        let p = power_control(&gains_db, &clusters, -1.0, 0.1).unwrap();
        assert!((p[0] - 0.05).abs() < 1e-15 && (p[1] - 0.1).abs() < 1e-15);
        assert_eq!(power_control(&gains_db, &clusters, 0.0, 0.1).unwrap(), vec![0.1, 0.1]);
        let zero = DMatrix::from_row_slice(2, 1, &[f64::NEG_INFINITY, -30.0]);
        assert!(power_control(&zero, &clusters, -1.0, 0.1).is_err());
    }

    #[test]
    fn violations_are_listed() {
        let cfg = AreaConfig { ap_count: 0, pilot_count: 300, p_max_w: 0.0, ..AreaConfig::default() };
        let v = cfg.violations();
        // Pilot power defaults to p_max, so it is flagged as well.
        assert_eq!(v.len(), 4, "{v:?}");
        assert!(v.iter().any(|m| m.starts_with("pilot_count")));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn plans_are_consistent(seed in 0u64..1000, tau in 1usize..5, k in 1usize..12) {
            let cfg = AreaConfig { ap_count: 9, ue_count: k, pilot_count: tau, antennas_per_ap: 1, ..AreaConfig::desk_scale() };
            let dep = deploy(&cfg, &mut substream(seed, Purpose::Deployment, 0, 0)).unwrap();
            let plan = assign_pilots_and_clusters(&dep, &cfg).unwrap();
            for a in 0..k {
                prop_assert!(plan.copilot_sets[a].contains(&a));
                prop_assert!(plan.cluster_of_ue[a].contains(&plan.master_ap[a]));
                for b in 0..k {
                    let ab = plan.copilot_sets[a].contains(&b);
                    prop_assert_eq!(ab, plan.copilot_sets[b].contains(&a));
                    prop_assert_eq!(ab, plan.pilot_of_ue[a] == plan.pilot_of_ue[b]);
                }
            }
            // Contest winners are unique per (AP, pilot); masters may add one more.
            for l in 0..cfg.ap_count {
                for t in 0..tau {
                    let non_master = (0..k)
                        .filter(|&u| plan.pilot_of_ue[u] == t && plan.serves(u, l) && plan.master_ap[u] != l)
                        .count();
                    prop_assert!(non_master <= 1);
                }
            }
            for v in [-1.0, 0.0, -0.5] {
                let p = power_control(&dep.gains_db, &plan.cluster_of_ue, v, 0.1).unwrap();
                let max = p.iter().cloned().fold(0.0, f64::max);
                prop_assert!((max - 0.1).abs() < 1e-15);
                prop_assert!(p.iter().all(|&x| x > 0.0 && x <= 0.1), "{:?} v={}", p, v);
                if v == -1.0 {
                    let g = dep.gains_lin();
                    let prod: Vec<f64> = (0..k).map(|u| p[u] * plan.cluster_of_ue[u].iter().map(|&l| g[(u, l)]).sum::<f64>()).collect();
                    for x in &prod {
                        prop_assert!(((x - prod[0]) / prod[0]).abs() < 1e-12);
                    }
                }
            }
        }

        #[test]
        fn wrapped_distance_is_a_lifted_torus_metric(
            ax in 0.0f64..100.0, ay in 0.0f64..100.0, bx in 0.0f64..100.0, by in 0.0f64..100.0, dh in 0.0f64..20.0,
        ) {
            let d_ab = wrapped_distance([ax, ay], [bx, by], 100.0, dh);
            let d_ba = wrapped_distance([bx, by], [ax, ay], 100.0, dh);
            prop_assert!((d_ab - d_ba).abs() < 1e-9);
            prop_assert!(d_ab >= dh);
            let direct = ((ax - bx).powi(2) + (ay - by).powi(2) + dh * dh).sqrt();
            prop_assert!(d_ab <= direct + 1e-12);
            prop_assert!(d_ab <= (50f64.powi(2) * 2.0 + dh * dh).sqrt() + 1e-9);
            let shifted = wrapped_distance([ax, ay], [bx + 100.0, by - 100.0], 100.0, dh);
            prop_assert!((shifted - d_ab).abs() < 1e-9);
            prop_assert!((wrapped_distance([ax, ay], [ax + 100.0, ay], 100.0, dh) - dh).abs() < 1e-9);
        }

        #[test]
        fn rician_factor_is_decreasing(d in 0.0f64..2000.0, step in 0.001f64..100.0) {
            prop_assert!(rician_factor(d + step) < rician_factor(d));
        }
    }
}
