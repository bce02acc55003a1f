//! Draws one desk-scale network and prints its pilot plan, clusters and
//! power control.
//!
//! cargo run --example deploy_network -- [seed]

use cellfree::rng::{substream, Purpose, DEFAULT_SEED};
use cellfree::scenario::{assign_pilots_and_clusters, deploy, power_control, AreaConfig};

fn main() -> cellfree::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(DEFAULT_SEED);
    let cfg = AreaConfig::desk_scale();
    let dep = deploy(&cfg, &mut substream(seed, Purpose::Deployment, 0, 0))?;
    let plan = assign_pilots_and_clusters(&dep, &cfg)?;
    let max_min = power_control(&dep.gains_db, &plan.cluster_of_ue, -1.0, cfg.p_max_w)?;

    println!(
        "{} APs x {} antennas, {} UEs, {} pilots, {:.0} m square",
        cfg.ap_count, cfg.antennas_per_ap, cfg.ue_count, cfg.pilot_count, cfg.side_length_m
    );
    println!("{:>3} {:>5} {:>6} {:>9} {:>10} {:>8}  cluster", "ue", "pilot", "master", "d [m]", "beta [dB]", "p [mW]");
    for k in 0..cfg.ue_count {
        let m = plan.master_ap[k];
        println!(
            "{k:>3} {:>5} {:>6} {:>9.1} {:>10.1} {:>8.2}  {:?}",
            plan.pilot_of_ue[k],
            m,
            dep.distances_3d[(k, m)],
            dep.gains_db[(k, m)],
            1e3 * max_min[k],
            plan.cluster_of_ue[k]
        );
    }
    Ok(())
}
