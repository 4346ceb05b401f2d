//! Draws one network: access points placed with a hard minimum spacing,
//! users dropped uniformly, and the resulting large-scale statistics.

use cfdiff::geometry::{
    build_large_scale, noise_power_w, place_aps_hcpp, NetworkTopology, PropagationParams,
};
use cfdiff::math::{RandomStream, StreamId};

fn main() -> cfdiff::error::Result<()> {
    let (l, k, side) = (40, 8, 500.0);
    let mut rng = RandomStream::new(12, StreamId { setup: 0, block: 0, sub: 0 });
    let ap_xy = place_aps_hcpp(l, side, &mut rng)?;
    let ue_xy: Vec<(f64, f64)> = (0..k)
        .map(|_| (rng.uniform_range(0.0, side), rng.uniform_range(0.0, side)))
        .collect();

    let mut min_spacing = f64::INFINITY;
    for i in 0..l {
        for j in i + 1..l {
            let d = ((ap_xy[i].0 - ap_xy[j].0).powi(2) + (ap_xy[i].1 - ap_xy[j].1).powi(2)).sqrt();
            min_spacing = min_spacing.min(d);
        }
    }
    println!("{l} APs on a {side} m square, min pairwise spacing {min_spacing:.1} m");
    println!(
        "hard-core target: sqrt(A/L) = {:.1} m",
        (side * side / l as f64).sqrt()
    );

    let topo = NetworkTopology { side_m: side, ap_xy, ue_xy, h_ap_m: 11.65, h_ue_m: 1.65 };
    let params = PropagationParams {
        fc_ghz: 3.5,
        bandwidth_hz: 20e6,
        noise_figure_db: 8.0,
        sigma_sf_db: 4.0,
        asd_deg: 15.0,
        antennas: 4,
        spacing: 0.5,
    };
    let large = build_large_scale(&topo, &params, &mut rng)?;
    println!(
        "noise floor: {:.2} dBm over {} MHz",
        10.0 * (noise_power_w(params.bandwidth_hz, params.noise_figure_db) * 1000.0).log10(),
        params.bandwidth_hz / 1e6
    );

    println!("ue  best_ap  gain_db  range_db_across_aps");
    for kk in 0..k {
        let (mut best, mut hi, mut lo) = (0, f64::NEG_INFINITY, f64::INFINITY);
        for ll in 0..l {
            let db = 10.0 * large.beta[kk][ll].log10();
            if db > hi {
                hi = db;
                best = ll;
            }
            lo = lo.min(db);
        }
        println!("{kk:>2}  {best:>7}  {hi:>7.1}  {:>6.1}", hi - lo);
    }
    Ok(())
}
