//! Gaussian local scattering correlation and Rician channel draws.
//!
//! Prints the eigenvalues of R′ for a few angular spreads and checks the
//! sample covariance of channel draws against Rₖₗ.

use cellfree::channel::{build_channel_stats, local_scattering_covariance, sample_channels};
use cellfree::linalg::hermitian_eigenvalues;
use cellfree::rng::{substream, Purpose};
use cellfree::scenario::{deploy, AreaConfig};
use cellfree::CMatrix;

fn main() -> cellfree::Result<()> {
    let (az, el) = (30f64.to_radians(), 10f64.to_radians());
    for spread_deg in [0.0, 2.0, 5.0, 10.0, 20.0] {
        let s = f64::to_radians(spread_deg);
        let r = local_scattering_covariance(az, el, s, s, 8, 0.5)?;
        let mut eig: Vec<f64> = hermitian_eigenvalues(&r).iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        let shown: Vec<String> = eig.iter().map(|e| format!("{e:.3}")).collect();
        println!("sigma = {spread_deg:>4} deg: eigenvalues {}", shown.join(" "));
    }

    let cfg = AreaConfig { kappa_override: Some(2.0), ..AreaConfig::desk_scale() };
    let dep = deploy(&cfg, &mut substream(1, Purpose::Deployment, 0, 0))?;
    let stats = build_channel_stats(&dep, &cfg, &mut substream(1, Purpose::Phases, 0, 0))?;
    let (k, l) = (0, dep.gains_db.row(0).transpose().argmax().0);
    let draws = 20_000;
    let n = cfg.antennas_per_ap;
    let mut cov = CMatrix::zeros(n, n);
    let mean = stats.phased_mean(k, l);
    let mut rng = substream(1, Purpose::Diagnostic, 0, 0);
    for _ in 0..draws {
        let d = sample_channels(&stats, &mut rng);
        let x = d.true_channels.get(k, l) - &mean;
        cov += &x * x.adjoint();
    }
    cov /= cellfree::C64::new(draws as f64, 0.0);
    let r = stats.nlos_cov.get(k, l);
    println!(
        "UE {k}, AP {l}: kappa {:.1}, relative covariance error over {draws} draws {:.3}",
        stats.kappa[(k, l)],
        (&cov - r).norm() / r.norm()
    );
    Ok(())
}
