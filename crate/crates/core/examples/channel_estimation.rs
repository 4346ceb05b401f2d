//! Pilot-based channel estimation quality. The estimator publishes its own
//! error covariance; this draws many channel realizations and shows the
//! measured estimation error agreeing with that prediction, including the
//! penalty paid by two users sharing a pilot.

use cfdiff::access::{LmmseEstimator, ServingMap};
use cfdiff::channel::{covariance_sqrts, draw_block, PhaseConfig, PhaseMode};
use cfdiff::geometry::{build_large_scale, NetworkTopology, PropagationParams};
use cfdiff::math::{RandomStream, StreamId};

fn rng(sub: u32, block: u32) -> RandomStream {
    RandomStream::new(21, StreamId { setup: 0, block, sub })
}

fn main() -> cfdiff::error::Result<()> {
    let topo = NetworkTopology {
        side_m: 250.0,
        ap_xy: vec![(60.0, 60.0), (190.0, 60.0), (125.0, 190.0)],
        ue_xy: vec![(80.0, 80.0), (170.0, 80.0), (125.0, 160.0)],
        h_ap_m: 11.65,
        h_ue_m: 1.65,
    };
    let params = PropagationParams {
        fc_ghz: 3.5,
        bandwidth_hz: 20e6,
        noise_figure_db: 8.0,
        sigma_sf_db: 4.0,
        asd_deg: 15.0,
        antennas: 4,
        spacing: 0.5,
    };
    let large = build_large_scale(&topo, &params, &mut rng(0, 0))?;

    // two pilots for three users: UEs 0 and 2 collide
    let map = ServingMap::from_parts(
        vec![0, 1, 0],
        vec![vec![0, 1, 2], vec![0, 1, 2], vec![0, 1, 2]],
        3,
        2,
    );
    let est = LmmseEstimator::new(&large, &map, 0.1)?;
    let sqrts = covariance_sqrts(&large)?;
    let pc = PhaseConfig { mode: PhaseMode::Static, increment_std: 0.0, sync: true };

    let draws = 20_000;
    let mut err = vec![vec![0.0f64; 3]; 3];
    for b in 0..draws {
        let block = draw_block(&large, &sqrts, &pc, 1, b, &mut rng(1, b), &mut rng(2, b));
        let hh = est.estimate(&block, &mut rng(3, b));
        for k in 0..3 {
            for l in 0..3 {
                err[k][l] += block.h[k][l].sub(&hh[k][l]).frob_norm().powi(2);
            }
        }
    }

    println!("ue  ap  predicted_mse  measured_mse  shares_pilot");
    for k in 0..3 {
        for l in 0..3 {
            let predicted = est.c[k][l].trace().re;
            let measured = err[k][l] / draws as f64;
            println!(
                "{k:>2}  {l:>2}  {predicted:>12.4e}  {measured:>11.4e}  {}",
                if k != 1 { "yes" } else { "no" }
            );
        }
    }
    Ok(())
}
