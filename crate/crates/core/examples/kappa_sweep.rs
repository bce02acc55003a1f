//! Minimum SE versus a common Rician factor at desk scale.
//!
//! cargo run --release --example kappa_sweep -- [out_dir]

use cellfree::evaluation::Bound;
use cellfree::experiment::{self, ExperimentConfig, ExperimentKind, Preset, UeTag};

fn main() -> cellfree::Result<()> {
    let mut cfg = ExperimentConfig::with_preset(ExperimentKind::KappaSweep, Preset::Desk);
    cfg.kappa_grid = vec![0.0, 1.0, 5.0, 20.0, 100.0];
    cfg.setups = 4;
    cfg.stat_budget = 200;
    cfg.eval_budget = 200;
    if let Some(dir) = std::env::args().nth(1) {
        cfg.out_dir = dir.into();
    }
    let out = experiment::run(&cfg)?;
    println!("{:>6} {:>12} {:>12} {:>12}", "kappa", "MMSE", "LTMMSE", "LMMSE_LSFD");
    for &k in &cfg.kappa_grid {
        let se = |s| out.mean_aggregate(k, s, Bound::Uatf, UeTag::Min).map_or(f64::NAN, |v| v.0);
        println!(
            "{k:>6} {:>12.3} {:>12.3} {:>12.3}",
            se(cellfree::Scheme::Mmse),
            se(cellfree::Scheme::Ltmmse),
            se(cellfree::Scheme::LmmseLsfd)
        );
    }
    for p in experiment::write_outputs(&out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
