//! Network layouts and large-scale propagation: AP placement with a minimum
//! spacing, 3GPP UMi NLOS path loss, distance-correlated shadowing, and the
//! Gaussian local scattering spatial correlation model.

use crate::error::{Error, Result};
use crate::math::{CMat, RandomStream, C64};

/// AP and UE positions on a square service area. Heights are uniform per
/// node class.
#[derive(Clone, Debug)]
pub struct NetworkTopology {
    pub side_m: f64,
    pub ap_xy: Vec<(f64, f64)>,
    pub ue_xy: Vec<(f64, f64)>,
    pub h_ap_m: f64,
    pub h_ue_m: f64,
}

impl NetworkTopology {
    pub fn num_aps(&self) -> usize {
        self.ap_xy.len()
    }

    pub fn num_ues(&self) -> usize {
        self.ue_xy.len()
    }

    /// 3D distance from AP l to UE k.
    pub fn d3d(&self, k: usize, l: usize) -> f64 {
        let (ax, ay) = self.ap_xy[l];
        let (ux, uy) = self.ue_xy[k];
        let dh = self.h_ap_m - self.h_ue_m;
        ((ax - ux).powi(2) + (ay - uy).powi(2) + dh * dh).sqrt()
    }

    /// Azimuth of UE k as seen from AP l, in radians.
    pub fn azimuth(&self, k: usize, l: usize) -> f64 {
        let (ax, ay) = self.ap_xy[l];
        let (ux, uy) = self.ue_xy[k];
        (uy - ay).atan2(ux - ax)
    }
}

/// Per-link gain and spatial covariance, plus the receiver noise floor.
#[derive(Clone, Debug)]
pub struct LargeScaleModel {
    /// linear channel gain beta[k][l]
    pub beta: Vec<Vec<f64>>,
    /// N x N spatial covariance per link, trace(R) = N * beta
    pub r: Vec<Vec<CMat>>,
    pub noise_power_w: f64,
}

/// Thermal noise power in watts: -174 dBm/Hz + 10*log10(BW) + NF.
pub fn noise_power_w(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    let dbm = -174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db;
    10f64.powf(dbm / 10.0) / 1000.0
}

const MAX_PLACEMENT_UPDATES: u64 = 1_000_000;

/// Drops L points uniformly on the square and then repeatedly pushes apart
/// any pair closer than d_min = sqrt(area / L), clamping to the area. A plain
/// resample-the-violators loop does not terminate at this packing density, so
/// the repair is collective; an occasional random re-draw of one point breaks
/// the rare oscillation. Gives up (PlacementInfeasible) after a fixed budget
/// of point updates.
pub fn place_aps_hcpp(l: usize, side_m: f64, rng: &mut RandomStream) -> Result<Vec<(f64, f64)>> {
    assert!(l >= 1, "need at least one AP");
    let d_min = (side_m * side_m / l as f64).sqrt();
    let mut pos: Vec<(f64, f64)> = (0..l)
        .map(|_| (rng.uniform_range(0.0, side_m), rng.uniform_range(0.0, side_m)))
        .collect();
    if l == 1 {
        return Ok(pos);
    }
    let slack = 1.02; // push slightly past d_min so pairs do not re-violate
    let clamp = |v: f64| v.max(0.0).min(side_m);
    let mut updates: u64 = 0;
    let mut sweep: u64 = 0;
    loop {
        let mut any = false;
        for i in 0..l {
            for j in (i + 1)..l {
                let dx = pos[j].0 - pos[i].0;
                let dy = pos[j].1 - pos[i].1;
                let d = (dx * dx + dy * dy).sqrt();
                if d >= d_min {
                    continue;
                }
                any = true;
                let (ux, uy) = if d > 1e-12 {
                    (dx / d, dy / d)
                } else {
                    let ang = rng.uniform_range(0.0, std::f64::consts::TAU);
                    (ang.cos(), ang.sin())
                };
                let need = (d_min * slack - d) / 2.0;
                pos[i] = (clamp(pos[i].0 - need * ux), clamp(pos[i].1 - need * uy));
                pos[j] = (clamp(pos[j].0 + need * ux), clamp(pos[j].1 + need * uy));
                updates += 2;
            }
        }
        if !any {
            return Ok(pos);
        }
        sweep += 1;
        if sweep % 200 == 0 {
            // teleport one point to escape limit cycles
            let i = rng.index(l);
            pos[i] = (rng.uniform_range(0.0, side_m), rng.uniform_range(0.0, side_m));
            updates += 1;
        }
        if updates > MAX_PLACEMENT_UPDATES {
            return Err(Error::PlacementInfeasible { aps: l, side_m });
        }
    }
}

/// 3GPP TR 38.901 UMi street canyon NLOS path loss in dB.
pub fn pathloss_umi_db(d3d_m: f64, fc_ghz: f64, h_ue_m: f64) -> Result<f64> {
    if d3d_m < 1.0 {
        return Err(Error::DistanceTooSmall(d3d_m));
    }
    Ok(35.3 * d3d_m.log10() + 22.4 + 21.3 * fc_ghz.log10() - 0.3 * (h_ue_m - 1.5))
}

/// Shadow fading in dB, K x L. Entries are marginally N(0, sigma_sf^2); for a
/// fixed AP, two UEs at distance d have correlation 2^(-d / 9 m). APs are
/// independent of each other.
pub fn correlated_shadowing(
    topology: &NetworkTopology,
    sigma_sf_db: f64,
    rng: &mut RandomStream,
) -> Result<Vec<Vec<f64>>> {
    let k = topology.num_ues();
    let l = topology.num_aps();
    if sigma_sf_db == 0.0 {
        return Ok(vec![vec![0.0; l]; k]);
    }
    let kernel = CMat::from_fn(k, k, |i, j| {
        let (xi, yi) = topology.ue_xy[i];
        let (xj, yj) = topology.ue_xy[j];
        let d = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
        C64::new(2f64.powf(-d / 9.0), 0.0)
    });
    let s = kernel.psd_sqrt()?;
    let mut f = vec![vec![0.0; l]; k];
    for col in 0..l {
        let z: Vec<f64> = (0..k).map(|_| rng.std_normal()).collect();
        for i in 0..k {
            let mut acc = 0.0;
            for j in 0..k {
                acc += s[(i, j)].re * z[j];
            }
            f[i][col] = sigma_sf_db * acc;
        }
    }
    Ok(f)
}

/// Gaussian local scattering correlation matrix for a half-wavelength-class
/// uniform linear array: [R]_{a,b} = beta * exp(j*2*pi*spacing*(a-b)*sin(phi))
/// * exp(-sigma^2/2 * (2*pi*spacing*(a-b)*cos(phi))^2), with phi the nominal
/// azimuth and sigma the angular standard deviation in radians.
pub fn spatial_correlation(
    phi_rad: f64,
    beta: f64,
    asd_deg: f64,
    n: usize,
    spacing: f64,
) -> CMat {
    let sigma = asd_deg.to_radians();
    CMat::from_fn(n, n, |a, b| {
        let diff = a as f64 - b as f64;
        let arg = std::f64::consts::TAU * spacing * diff;
        let mean_phase = arg * phi_rad.sin();
        let spread = arg * phi_rad.cos();
        let mag = beta * (-0.5 * sigma * sigma * spread * spread).exp();
        C64::from_polar(mag, mean_phase)
    })
}

/// Parameters needed to turn a topology into per-link gains and covariances.
#[derive(Clone, Copy, Debug)]
pub struct PropagationParams {
    pub fc_ghz: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub sigma_sf_db: f64,
    pub asd_deg: f64,
    pub antennas: usize,
    pub spacing: f64,
}

/// Path loss plus shadowing to linear beta, and the scattering covariance per
/// link. UL and DL share the same statistics (TDD reciprocity).
pub fn build_large_scale(
    topology: &NetworkTopology,
    params: &PropagationParams,
    rng: &mut RandomStream,
) -> Result<LargeScaleModel> {
    let kx = topology.num_ues();
    let lx = topology.num_aps();
    let shadow = correlated_shadowing(topology, params.sigma_sf_db, rng)?;
    let mut beta = vec![vec![0.0; lx]; kx];
    let mut r = Vec::with_capacity(kx);
    for k in 0..kx {
        let mut row = Vec::with_capacity(lx);
        for l in 0..lx {
            let pl = pathloss_umi_db(topology.d3d(k, l), params.fc_ghz, topology.h_ue_m)?;
            let beta_db = -pl + shadow[k][l];
            let b = 10f64.powf(beta_db / 10.0);
            beta[k][l] = b;
            row.push(spatial_correlation(
                topology.azimuth(k, l),
                b,
                params.asd_deg,
                params.antennas,
                params.spacing,
            ));
        }
        r.push(row);
    }
    Ok(LargeScaleModel {
        beta,
        r,
        noise_power_w: noise_power_w(params.bandwidth_hz, params.noise_figure_db),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::StreamId;
    use num_complex::Complex64 as C64;

    fn rng(sub: u32) -> RandomStream {
        RandomStream::new(2024, StreamId { setup: 0, block: 0, sub })
    }

    fn min_pair_distance(pos: &[(f64, f64)]) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..pos.len() {
            for j in (i + 1)..pos.len() {
                let d = ((pos[i].0 - pos[j].0).powi(2) + (pos[i].1 - pos[j].1).powi(2)).sqrt();
                best = best.min(d);
            }
        }
        best
    }

    #[test]
    fn single_ap_placement_is_trivial() {
        let pos = place_aps_hcpp(1, 100.0, &mut rng(0)).unwrap();
        assert_eq!(pos.len(), 1);
        assert!(pos[0].0 >= 0.0 && pos[0].0 <= 100.0);
    }

    #[test]
    fn forty_aps_on_quarter_km2_meet_spacing() {
        for seed_sub in 0..5 {
            let pos = place_aps_hcpp(40, 500.0, &mut rng(seed_sub)).unwrap();
            let d_min = (500.0f64 * 500.0 / 40.0).sqrt(); // 79.06 m
            assert!(min_pair_distance(&pos) >= d_min, "sub {seed_sub}");
            for &(x, y) in &pos {
                assert!(x >= 0.0 && x <= 500.0 && y >= 0.0 && y <= 500.0);
            }
        }
    }

    #[test]
    fn impossible_spacing_reports_infeasible() {
        // 5000 points need near-perfect hexagonal packing to honor sqrt(A/L)
        // spacing; the update budget is orders of magnitude too small for
        // that, so the placement must give up rather than spin forever
        match place_aps_hcpp(5000, 1.0, &mut rng(2)) {
            Err(Error::PlacementInfeasible { .. }) => {}
            Ok(_) => panic!("expected PlacementInfeasible, got a layout"),
            Err(e) => panic!("expected PlacementInfeasible, got {e:?}"),
        }
    }

    #[test]
    fn placement_is_reproducible() {
        let a = place_aps_hcpp(40, 500.0, &mut rng(7)).unwrap();
        let b = place_aps_hcpp(40, 500.0, &mut rng(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pathloss_reference_point() {
        // hand arithmetic: 35.3*2 + 22.4 + 21.3*log10(3.5) - 0.3*0.15
        let pl = pathloss_umi_db(100.0, 3.5, 1.65).unwrap();
        assert!((pl - 104.5437).abs() < 1e-3, "got {pl}");
    }

    #[test]
    fn pathloss_doubles_by_fixed_slope() {
        let a = pathloss_umi_db(100.0, 3.5, 1.65).unwrap();
        let b = pathloss_umi_db(200.0, 3.5, 1.65).unwrap();
        assert!((b - a - 35.3 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn pathloss_frequency_term_vanishes_at_1ghz() {
        let pl = pathloss_umi_db(50.0, 1.0, 1.5).unwrap();
        assert!((pl - (35.3 * 50f64.log10() + 22.4)).abs() < 1e-9);
    }

    #[test]
    fn pathloss_rejects_sub_meter() {
        assert!(matches!(pathloss_umi_db(0.5, 3.5, 1.65), Err(Error::DistanceTooSmall(_))));
    }

    #[test]
    fn noise_floor_matches_hand_value() {
        // -174 + 73.01 + 8 = -92.99 dBm
        let p = noise_power_w(20e6, 8.0);
        let dbm = 10.0 * (p * 1000.0).log10();
        assert!((dbm - (-92.99)).abs() < 0.01, "noise {dbm} dBm");
    }

    fn topo(ue_xy: Vec<(f64, f64)>, aps: usize) -> NetworkTopology {
        NetworkTopology {
            side_m: 500.0,
            ap_xy: (0..aps).map(|i| (10.0 * i as f64, 0.0)).collect(),
            ue_xy,
            h_ap_m: 11.65,
            h_ue_m: 1.65,
        }
    }

    #[test]
    fn zero_sigma_shadowing_is_all_zero() {
        let t = topo(vec![(0.0, 0.0), (5.0, 5.0)], 3);
        let f = correlated_shadowing(&t, 0.0, &mut rng(3)).unwrap();
        assert!(f.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn colocated_ues_share_shadowing() {
        let t = topo(vec![(3.0, 4.0), (3.0, 4.0)], 2);
        for trial in 0..10_000 {
            let f = correlated_shadowing(&t, 4.0, &mut rng(4000 + trial)).unwrap();
            for l in 0..2 {
                assert!((f[0][l] - f[1][l]).abs() < 1e-9);
            }
            if trial >= 20 {
                break; // identical-by-construction; a few draws suffice
            }
        }
    }

    #[test]
    fn nine_meter_separation_gives_half_correlation() {
        // Monte Carlo correlation estimate over 1e5 draws
        let t = topo(vec![(0.0, 0.0), (9.0, 0.0)], 1);
        let mut s00 = 0.0;
        let mut s11 = 0.0;
        let mut s01 = 0.0;
        let draws = 100_000;
        let mut r = rng(5);
        for _ in 0..draws {
            let f = correlated_shadowing(&t, 4.0, &mut r).unwrap();
            s00 += f[0][0] * f[0][0];
            s11 += f[1][0] * f[1][0];
            s01 += f[0][0] * f[1][0];
        }
        let corr = s01 / (s00.sqrt() * s11.sqrt());
        assert!((corr - 0.5).abs() < 0.05, "correlation {corr}");
        // marginal std close to 4 dB
        let std = (s00 / draws as f64).sqrt();
        assert!((std - 4.0).abs() < 0.1, "marginal std {std}");
    }

    #[test]
    fn shadowing_independent_across_aps() {
        let t = topo(vec![(0.0, 0.0)], 2);
        let mut cross = 0.0;
        let mut var = 0.0;
        let draws = 100_000;
        let mut r = rng(6);
        for _ in 0..draws {
            let f = correlated_shadowing(&t, 4.0, &mut r).unwrap();
            cross += f[0][0] * f[0][1];
            var += f[0][0] * f[0][0];
        }
        assert!((cross / var).abs() < 0.02);
    }

    #[test]
    fn single_antenna_correlation_is_beta() {
        let r = spatial_correlation(0.7, 3.2e-9, 15.0, 1, 0.5);
        assert_eq!(r.rows(), 1);
        assert!((r[(0, 0)].re - 3.2e-9).abs() < 1e-24);
        assert_eq!(r[(0, 0)].im, 0.0);
    }

    #[test]
    fn huge_angular_spread_decorrelates_antennas() {
        let r = spatial_correlation(0.3, 1.0, 1e4f64.to_degrees(), 4, 0.5);
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    assert!(r[(a, b)].norm() < 1e-12);
                }
            }
        }
    }

    /// Simpson quadrature of exp(j*arg(delta)) against the N(0, sigma^2)
    /// density. `arg` is the phase seen at angular deviation delta.
    fn gaussian_quadrature(arg: impl Fn(f64) -> f64, sigma: f64) -> C64 {
        let half_width = 8.0 * sigma;
        let steps = 4000; // even
        let h = 2.0 * half_width / steps as f64;
        let density =
            |d: f64| (-0.5 * d * d / (sigma * sigma)).exp() / (sigma * (std::f64::consts::TAU).sqrt());
        let f = |d: f64| C64::from_polar(density(d), arg(d));
        let mut acc = f(-half_width) + f(half_width);
        for i in 1..steps {
            let d = -half_width + i as f64 * h;
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += f(d) * w;
        }
        acc * (h / 3.0)
    }

    #[test]
    fn correlation_matches_quadrature_of_linearized_scatter_integral() {
        // oracle: the closed form equals the characteristic function of the
        // Gaussian deviation under the linearized phase arg = x*(sin(phi) +
        // delta*cos(phi)); integrate that numerically and compare entrywise
        let phi = 30f64.to_radians();
        let sigma = 15f64.to_radians();
        let n = 4;
        let spacing = 0.5;
        let r = spatial_correlation(phi, 1.0, 15.0, n, spacing);
        for a in 0..n {
            for b in 0..n {
                let x = std::f64::consts::TAU * spacing * (a as f64 - b as f64);
                let oracle = gaussian_quadrature(|d| x * (phi.sin() + d * phi.cos()), sigma);
                let err = (r[(a, b)] - oracle).norm();
                assert!(err <= 0.02, "entry ({a},{b}): err {err:.4}");
            }
        }
    }

    #[test]
    fn correlation_approximates_exact_scatter_integral() {
        // the closed form is first order in the angular deviation; against the
        // exact integrand exp(j*x*sin(phi + delta)) it is close but not equal,
        // so this only pins the approximation quality at a moderate angle
        let phi = 30f64.to_radians();
        let sigma = 15f64.to_radians();
        let n = 4;
        let spacing = 0.5;
        let r = spatial_correlation(phi, 1.0, 15.0, n, spacing);
        for a in 0..n {
            for b in 0..n {
                let x = std::f64::consts::TAU * spacing * (a as f64 - b as f64);
                let oracle = gaussian_quadrature(|d| x * (phi + d).sin(), sigma);
                let err = (r[(a, b)] - oracle).norm();
                assert!(err <= 0.10, "entry ({a},{b}): err {err:.4}");
            }
        }
    }

    #[test]
    fn built_model_has_consistent_covariances() {
        let mut r = rng(8);
        let ap = place_aps_hcpp(10, 300.0, &mut r).unwrap();
        let t = NetworkTopology {
            side_m: 300.0,
            ap_xy: ap,
            ue_xy: (0..5).map(|_| (r.uniform_range(0.0, 300.0), r.uniform_range(0.0, 300.0))).collect(),
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
        let model = build_large_scale(&t, &params, &mut r).unwrap();
        for k in 0..5 {
            for l in 0..10 {
                let rm = &model.r[k][l];
                assert!(model.beta[k][l] > 0.0);
                // trace(R) = N*beta by construction
                assert!((rm.trace().re - 4.0 * model.beta[k][l]).abs() <= 1e-12 * rm.trace().re);
                assert!(rm.herm_asymmetry() <= 1e-12 * (1.0 + rm.frob_norm()));
                // PSD: eigenvalues not meaningfully negative
                let (vals, _) = rm.hermitian_eigen().unwrap();
                let tr: f64 = vals.iter().sum();
                assert!(vals.iter().all(|&v| v >= -1e-10 * tr));
            }
        }
    }
}
