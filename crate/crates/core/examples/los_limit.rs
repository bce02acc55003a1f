//! Under pure LoS every estimate is a known constant, so the distributed
//! team solution loses nothing against centralized MMSE.

use cellfree::beamforming::{combiners_for_block, design, Scheme};
use cellfree::rng::{substream, Purpose};
use cellfree::scenario::AreaConfig;
use cellfree::Setup;

fn main() -> cellfree::Result<()> {
    let cfg = AreaConfig { side_length_m: 150.0, ap_count: 6, ue_count: 4, antennas_per_ap: 2, pilot_count: 2, ..AreaConfig::default() };
    let s = Setup::generate(&cfg, -1.0, 3, 0)?;
    let stats = s.stats.clone().into_pure_los();
    let s = s.with_stats(stats)?;
    let d = design(&s, &[Scheme::Ltmmse, Scheme::LmmseLsfd], 1, 3, 0)?;
    let (_, est) = s.sample_block(&mut substream(3, Purpose::Diagnostic, 0, 0));
    let (l, n) = (s.ap_count(), s.antennas());
    let mmse = combiners_for_block(&s, &d, Scheme::Mmse, &est, None)?;
    for scheme in [Scheme::Ltmmse, Scheme::LmmseLsfd] {
        let other = combiners_for_block(&s, &d, scheme, &est, None)?;
        let worst = other
            .combiners
            .iter()
            .zip(&mmse.combiners)
            .map(|(a, b)| (a.stacked(l, n) - b.stacked(l, n)).norm() / b.stacked(l, n).norm())
            .fold(0.0, f64::max);
        println!("{scheme}: max relative distance to MMSE {worst:.2e}");
    }
    Ok(())
}
