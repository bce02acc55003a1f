//! One random network realization with everything that stays fixed across
//! coherence blocks.

use rand::Rng;

use crate::channel::{build_channel_stats, sample_channels, sample_channels_redrawn_phases, ChannelDraw, ChannelStats};
use crate::error::Result;
use crate::estimation::{simulate_pilot_and_estimate, EstimateSet, Estimator};
use crate::rng::{substream, Purpose};
use crate::scenario::{assign_pilots_and_clusters, deploy, power_control, AreaConfig, Deployment, ServicePlan};

#[derive(Debug, Clone)]
pub struct Setup {
    pub cfg: AreaConfig,
    pub deployment: Option<Deployment>,
    pub plan: ServicePlan,
    pub stats: ChannelStats,
    pub estimator: Estimator,
    /// Redraw LoS phases in every block instead of holding them fixed.
    pub redraw_phases: bool,
}

impl Setup {
    /// Draws deployment, clusters, powers and channel statistics for setup
    /// number `index` under `seed`.
    pub fn generate(cfg: &AreaConfig, pc_exponent: f64, seed: u64, index: u32) -> Result<Self> {
        let dep = deploy(cfg, &mut substream(seed, Purpose::Deployment, index, 0))?;
        let mut plan = assign_pilots_and_clusters(&dep, cfg)?;
        plan.powers_w = power_control(&dep.gains_db, &plan.cluster_of_ue, pc_exponent, cfg.p_max_w)?;
        let stats = build_channel_stats(&dep, cfg, &mut substream(seed, Purpose::Phases, index, 0))?;
        let estimator = Estimator::new(&stats, &plan, cfg.noise_power_w)?;
        Ok(Self { cfg: cfg.clone(), deployment: Some(dep), plan, stats, estimator, redraw_phases: false })
    }

    /// Wraps externally built statistics and plan.
    pub fn from_parts(cfg: AreaConfig, plan: ServicePlan, stats: ChannelStats) -> Result<Self> {
        let estimator = Estimator::new(&stats, &plan, cfg.noise_power_w)?;
        Ok(Self { cfg, deployment: None, plan, stats, estimator, redraw_phases: false })
    }

    /// Replaces the statistics (e.g. with their pure-LoS version) and
    /// rebuilds the estimator.
    pub fn with_stats(mut self, stats: ChannelStats) -> Result<Self> {
        self.estimator = Estimator::new(&stats, &self.plan, self.cfg.noise_power_w)?;
        self.stats = stats;
        Ok(self)
    }

    pub fn noise_w(&self) -> f64 {
        self.cfg.noise_power_w
    }

    pub fn ue_count(&self) -> usize {
        self.plan.ue_count()
    }

    pub fn ap_count(&self) -> usize {
        self.stats.ap_count()
    }

    pub fn antennas(&self) -> usize {
        self.stats.antennas
    }

    /// One coherence block: channels followed by the pilot phase.
    pub fn sample_block<R: Rng + ?Sized>(&self, rng: &mut R) -> (ChannelDraw, EstimateSet) {
        let draw = if self.redraw_phases {
            sample_channels_redrawn_phases(&self.stats, rng)
        } else {
            sample_channels(&self.stats, rng)
        };
        let est = simulate_pilot_and_estimate(&self.estimator, &self.stats, &self.plan, &draw, rng);
        (draw, est)
    }
}
