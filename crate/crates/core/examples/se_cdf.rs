//! Distribution of per-UE SE in a dense 200 m network, pooled over setups.

use cellfree::evaluation::Bound;
use cellfree::experiment::{self, ExperimentConfig, ExperimentKind, Preset};

fn main() -> cellfree::Result<()> {
    let mut cfg = ExperimentConfig::with_preset(ExperimentKind::Cdf, Preset::Desk);
    cfg.setups = 5;
    cfg.stat_budget = 200;
    cfg.eval_budget = 200;
    let out = experiment::run(&cfg)?;
    let points = out.cdf.as_deref().unwrap_or_default();
    println!("{:>11} {:>8} {:>8} {:>8}", "scheme", "10%", "50%", "90%");
    for &scheme in &cfg.schemes {
        let curve: Vec<f64> = points.iter().filter(|p| p.scheme == scheme && p.bound == Bound::Uatf).map(|p| p.se).collect();
        let q = |f: f64| curve[((f * curve.len() as f64).ceil() as usize).clamp(1, curve.len()) - 1];
        println!("{:>11} {:>8.3} {:>8.3} {:>8.3}", scheme.name(), q(0.1), q(0.5), q(0.9));
    }
    Ok(())
}
