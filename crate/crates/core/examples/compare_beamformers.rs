//! Per-UE spectral efficiency of every combining scheme on one setup.
//!
//! cargo run --release --example compare_beamformers -- [kappa]

use cellfree::evaluation::{run_monte_carlo, Bound, Budgets};
use cellfree::scenario::AreaConfig;
use cellfree::{Scheme, Setup};

fn main() -> cellfree::Result<()> {
    let kappa: Option<f64> = std::env::args().nth(1).and_then(|s| s.parse().ok());
    let cfg = AreaConfig { kappa_override: kappa, ..AreaConfig::desk_scale() };
    let setup = Setup::generate(&cfg, -1.0, 11, 0)?;
    let schemes = [Scheme::Mmse, Scheme::Ltmmse, Scheme::LmmseLsfd, Scheme::Lmmse];
    let reports = run_monte_carlo(&setup, &schemes, Budgets { statistics: 300, evaluation: 300 }, 11, 0)?;

    print!("{:>3}", "ue");
    for r in &reports {
        print!(" {:>18}", format!("{} uatf/cd", r.scheme));
    }
    println!();
    for k in 0..setup.ue_count() {
        print!("{k:>3}");
        for r in &reports {
            print!(" {:>18}", format!("{:.3}/{:.3}", r.uatf_se[k], r.cd_se[k]));
        }
        println!();
    }
    for r in &reports {
        let a = r.aggregates(Bound::Uatf);
        println!("{:>10}: min {:.3} +- {:.3}, sum {:.2} +- {:.2}", r.scheme.name(), a.min, a.min_ci, a.sum, a.sum_ci);
    }
    Ok(())
}
