//! Phase-aware MMSE estimation under pilot contamination.
//!
//! Two UEs share one pilot. A Monte Carlo check compares the sample mean,
//! error covariance and error orthogonality of the estimates with theory.

use cellfree::estimation::{error_statistics_check, error_traces};
use cellfree::rng::{substream, Purpose};
use cellfree::scenario::AreaConfig;
use cellfree::Setup;

fn main() -> cellfree::Result<()> {
    let cfg = AreaConfig {
        side_length_m: 100.0,
        ap_count: 3,
        ue_count: 2,
        antennas_per_ap: 2,
        pilot_count: 1,
        kappa_override: Some(1.0),
        ..AreaConfig::default()
    };
    let s = Setup::generate(&cfg, 0.0, 7, 0)?;
    let traces = error_traces(&s.estimator);
    for k in 0..cfg.ue_count {
        for l in 0..cfg.ap_count {
            let r = cellfree::linalg::trace_re(s.stats.nlos_cov.get(k, l));
            println!("UE {k}, AP {l}: tr(C)/tr(R) = {:.3}", traces[(k, l)] / r);
        }
    }
    let report = error_statistics_check(&s.stats, &s.plan, &s.estimator, 20_000, 5.0, |i| {
        substream(7, Purpose::Diagnostic, 0, i as u32)
    })?;
    let worst = |v: &[cellfree::estimation::CheckResult]| v.iter().map(|c| c.worst_z).fold(0.0, f64::max);
    println!(
        "worst deviations in standard errors: mean {:.2}, error covariance {:.2}, orthogonality {:.2}",
        worst(&report.mean),
        worst(&report.error_covariance),
        worst(&report.orthogonality)
    );
    println!("all checks within {} standard errors: {}", report.sigmas, report.passed());
    Ok(())
}
