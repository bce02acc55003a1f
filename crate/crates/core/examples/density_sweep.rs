//! Minimum SE versus the side of the service area, with the maximum power
//! scaled linearly with the side and distance-dependent Rician factors.

use cellfree::evaluation::Bound;
use cellfree::experiment::{self, DensityPoint, ExperimentConfig, ExperimentKind, Preset, UeTag};
use cellfree::Scheme;

fn main() -> cellfree::Result<()> {
    let mut cfg = ExperimentConfig::with_preset(ExperimentKind::DensitySweep, Preset::Desk);
    cfg.d_grid = [200.0, 400.0, 700.0, 1000.0].into_iter().map(DensityPoint::scaled).collect();
    cfg.setups = 4;
    cfg.stat_budget = 200;
    cfg.eval_budget = 200;
    let out = experiment::run(&cfg)?;
    println!("{:>6} {:>8} {:>8} {:>8} {:>10}", "d [m]", "MMSE", "LTMMSE", "LSFD", "gap [%]");
    for p in &cfg.d_grid {
        let se = |s| out.mean_aggregate(p.side_length_m, s, Bound::Uatf, UeTag::Min).map_or(f64::NAN, |v| v.0);
        let (m, t, f) = (se(Scheme::Mmse), se(Scheme::Ltmmse), se(Scheme::LmmseLsfd));
        println!("{:>6} {m:>8.3} {t:>8.3} {f:>8.3} {:>10.1}", p.side_length_m, 100.0 * (m - t) / m);
    }
    Ok(())
}
