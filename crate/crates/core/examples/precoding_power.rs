//! Precoding and power allocation, end to end on one small network: local
//! and cluster-wide MMSE precoders, the two power policies, and the batch
//! normalization that pins average per-stream transmit power to its target.

use cfdiff::access::assign_pilots_and_cluster;
use cfdiff::channel::{covariance_sqrts, draw_block, PhaseConfig, PhaseMode};
use cfdiff::access::LmmseEstimator;
use cfdiff::geometry::{build_large_scale, place_aps_hcpp, NetworkTopology, PropagationParams};
use cfdiff::math::{RandomStream, StreamId};
use cfdiff::precoding::{
    allocate_power_centralized, allocate_power_distributed, average_norms, lp_mmse,
    normalization_scales, p_mmse, scale_precoders,
};

fn rng(sub: u32, block: u32) -> RandomStream {
    RandomStream::new(33, StreamId { setup: 0, block, sub })
}

fn main() -> cfdiff::error::Result<()> {
    let (l, k, side, rho_d) = (12, 6, 350.0, 0.2);
    let mut r0 = rng(0, 0);
    let ap_xy = place_aps_hcpp(l, side, &mut r0)?;
    let ue_xy = (0..k)
        .map(|_| (r0.uniform_range(0.0, side), r0.uniform_range(0.0, side)))
        .collect();
    let topo = NetworkTopology { side_m: side, ap_xy, ue_xy, h_ap_m: 11.65, h_ue_m: 1.65 };
    let params = PropagationParams {
        fc_ghz: 3.5,
        bandwidth_hz: 20e6,
        noise_figure_db: 8.0,
        sigma_sf_db: 4.0,
        asd_deg: 15.0,
        antennas: 2,
        spacing: 0.5,
    };
    let large = build_large_scale(&topo, &params, &mut rng(1, 0))?;
    let map = assign_pilots_and_cluster(&large, 4, 3)?;
    let est = LmmseEstimator::new(&large, &map, 0.1)?;
    let sqrts = covariance_sqrts(&large)?;
    let pc = PhaseConfig { mode: PhaseMode::Static, increment_std: 0.0, sync: true };

    // precoder shapes from one fading draw
    let block = draw_block(&large, &sqrts, &pc, 1, 0, &mut rng(2, 0), &mut rng(3, 0));
    let hh = est.estimate(&block, &mut rng(4, 0));
    let local = lp_mmse(&hh, &est.c, &map, 0.1, large.noise_power_w)?;
    let cluster = p_mmse(&hh, &est.c, &map, 0.1, large.noise_power_w)?;
    let align: Vec<String> = (0..k)
        .map(|i| {
            let l0 = map.clusters[i][0];
            let a = &local[i][l0];
            let b = &cluster[i][l0];
            let dot: f64 = a.herm().matmul(b).frob_norm() / (a.frob_norm() * b.frob_norm());
            format!("{dot:.3}")
        })
        .collect();
    println!("local vs cluster precoder alignment at each UE's master AP: {align:?}");

    // power targets
    let rho_dist = allocate_power_distributed(&large.beta, &map, rho_d);
    let rho_cent = allocate_power_centralized(&large.beta, &map, rho_d, -0.5);
    for (tag, rho) in [("distributed", &rho_dist), ("centralized", &rho_cent)] {
        let per_ap: Vec<f64> = (0..l)
            .map(|a| (0..k).map(|i| rho[i][a]).sum::<f64>() * 1000.0)
            .collect();
        let busiest = per_ap.iter().cloned().fold(0.0, f64::max);
        println!(
            "{tag:>11}: busiest AP spends {busiest:.1} mW of the {:.0} mW budget",
            rho_d * 1000.0
        );
    }

    // normalization: average squared norm of each stream hits its target
    let draws: Vec<_> = (0..200)
        .map(|b| {
            let blk = draw_block(&large, &sqrts, &pc, 1, b, &mut rng(5, b), &mut rng(6, b));
            let hh = est.estimate(&blk, &mut rng(7, b));
            lp_mmse(&hh, &est.c, &map, 0.1, large.noise_power_w)
        })
        .collect::<cfdiff::error::Result<_>>()?;
    let scales = normalization_scales(&average_norms(&draws), &rho_dist)?;
    let mut scaled = draws.clone();
    for w in &mut scaled {
        scale_precoders(w, &scales);
    }
    let (ue, ap) = (0, map.clusters[0][0]);
    let mean: f64 = scaled.iter().map(|w| w[ue][ap].frob_norm().powi(2)).sum::<f64>()
        / scaled.len() as f64;
    println!(
        "UE {ue} at AP {ap}: mean scaled precoder power {:.4} mW, target {:.4} mW",
        mean * 1000.0,
        rho_dist[ue][ap] * 1000.0
    );
    Ok(())
}
