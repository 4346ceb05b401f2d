//! Downlink precoding: MMSE-style beam directions computed either locally at
//! each AP or jointly across a UE's serving cluster, the power policies that
//! divide AP budgets among served UEs, and the average-norm scaling that pins
//! every precoder's long-run transmit power to its allocation.

use crate::access::ServingMap;
use crate::error::{Error, Result};
use crate::math::{CMat, C64};

/// Local MMSE direction. Each AP regularises against the UEs it serves using
/// only its own channel estimates:
///
/// w[k][l] = p * (sum_{i in D_l} p * (h_i h_i^H + C_i) + sigma^2 I)^{-1} h_k
///
/// `est[k][l]` and `errcov[k][l]` are the N x 1 estimate and its N x N error
/// covariance. Pairs where AP l does not serve UE k come back as zero vectors.
pub fn lp_mmse(
    est: &[Vec<CMat>],
    errcov: &[Vec<CMat>],
    map: &ServingMap,
    ul_power: f64,
    noise_power: f64,
) -> Result<Vec<Vec<CMat>>> {
    let kx = map.num_ues();
    let lx = map.num_aps();
    let n = est[0][0].rows();
    let p = C64::new(ul_power, 0.0);
    let mut w = vec![vec![CMat::zeros(n, 1); lx]; kx];
    for l in 0..lx {
        if map.served[l].is_empty() {
            continue;
        }
        let mut a = CMat::identity(n).scale(C64::new(noise_power, 0.0));
        for &i in &map.served[l] {
            let h = &est[i][l];
            a = a.add(&h.matmul(&h.herm()).add(&errcov[i][l]).scale(p));
        }
        for &k in &map.served[l] {
            w[k][l] = a.hermitian_solve(&est[k][l])?.scale(p);
        }
    }
    Ok(w)
}

/// Cluster-wide MMSE direction. For UE k the estimates of all cluster APs are
/// stacked into one N*|M_k| vector and the regulariser counts every UE whose
/// cluster overlaps M_k, so beams are steered jointly across the cluster:
///
/// w_k = p * (sum_{i in S_k} p * (h_i h_i^H + C_i) + sigma^2 I)^{-1} h_k,
/// S_k = { i : M_i and M_k share an AP }.
///
/// The stacked solution is split back into per-AP N x 1 blocks; APs outside
/// M_k get zero vectors.
pub fn p_mmse(
    est: &[Vec<CMat>],
    errcov: &[Vec<CMat>],
    map: &ServingMap,
    ul_power: f64,
    noise_power: f64,
) -> Result<Vec<Vec<CMat>>> {
    let kx = map.num_ues();
    let lx = map.num_aps();
    let n = est[0][0].rows();
    let p = C64::new(ul_power, 0.0);
    let mut w = vec![vec![CMat::zeros(n, 1); lx]; kx];
    for k in 0..kx {
        let mk = &map.clusters[k];
        let dim = n * mk.len();
        let overlaps =
            |i: usize| map.clusters[i].iter().any(|li| mk.contains(li));
        let stack = |i: usize| {
            CMat::from_fn(dim, 1, |r, _| est[i][mk[r / n]][(r % n, 0)])
        };
        let mut a = CMat::identity(dim).scale(C64::new(noise_power, 0.0));
        for i in (0..kx).filter(|&i| overlaps(i)) {
            let hi = stack(i);
            a = a.add(&hi.matmul(&hi.herm()).scale(p));
            for (b, &l) in mk.iter().enumerate() {
                let ci = &errcov[i][l];
                for r in 0..n {
                    for c in 0..n {
                        a[(b * n + r, b * n + c)] += p * ci[(r, c)];
                    }
                }
            }
        }
        let wk = a.hermitian_solve(&stack(k))?.scale(p);
        for (b, &l) in mk.iter().enumerate() {
            w[k][l] = CMat::from_fn(n, 1, |r, _| wk[(b * n + r, 0)]);
        }
    }
    Ok(w)
}

/// Per-AP power split proportional to the root of the large-scale gain:
/// rho[k][l] = rho_d * sqrt(beta[k][l]) / sum_{k' in D_l} sqrt(beta[k'][l]).
/// Each serving AP spends its whole budget rho_d.
pub fn allocate_power_distributed(
    beta: &[Vec<f64>],
    map: &ServingMap,
    rho_d: f64,
) -> Vec<Vec<f64>> {
    let kx = map.num_ues();
    let lx = map.num_aps();
    let mut rho = vec![vec![0.0; lx]; kx];
    for l in 0..lx {
        let tot: f64 = map.served[l].iter().map(|&i| beta[i][l].sqrt()).sum();
        for &k in &map.served[l] {
            rho[k][l] = rho_d * beta[k][l].sqrt() / tot;
        }
    }
    rho
}

/// Network-wide fractional allocation. Every UE gets one weight
/// omega_k = (sum_{l in M_k} beta[k][l])^upsilon, spent equally at all its
/// serving APs and normalised by the busiest AP so no budget is exceeded:
/// rho[k][l] = rho_d * omega_k / max_l' sum_{k' in D_l'} omega_k'.
/// Negative upsilon favours weak UEs.
pub fn allocate_power_centralized(
    beta: &[Vec<f64>],
    map: &ServingMap,
    rho_d: f64,
    upsilon: f64,
) -> Vec<Vec<f64>> {
    let kx = map.num_ues();
    let lx = map.num_aps();
    let omega: Vec<f64> = (0..kx)
        .map(|k| {
            let s: f64 = map.clusters[k].iter().map(|&l| beta[k][l]).sum();
            s.powf(upsilon)
        })
        .collect();
    let kappa = (0..lx)
        .map(|l| map.served[l].iter().map(|&i| omega[i]).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let mut rho = vec![vec![0.0; lx]; kx];
    for k in 0..kx {
        for &l in &map.clusters[k] {
            rho[k][l] = rho_d * omega[k] / kappa;
        }
    }
    rho
}

/// Mean squared norm of each (UE, AP) precoder over a batch of independent
/// draws. The batch is the calibration set for [`normalization_scales`].
pub fn average_norms(batch: &[Vec<Vec<CMat>>]) -> Vec<Vec<f64>> {
    assert!(!batch.is_empty(), "empty normalization batch");
    let kx = batch[0].len();
    let lx = batch[0][0].len();
    let mut acc = vec![vec![0.0; lx]; kx];
    for draw in batch {
        for k in 0..kx {
            for l in 0..lx {
                let nrm = draw[k][l].frob_norm();
                acc[k][l] += nrm * nrm;
            }
        }
    }
    let nb = batch.len() as f64;
    for row in &mut acc {
        for v in row.iter_mut() {
            *v /= nb;
        }
    }
    acc
}

/// sqrt(rho / mean-square-norm) per (UE, AP); zero where no power is
/// allocated. A positive power target over a vanishing average norm would
/// blow the scale up, so that case is rejected instead of silently emitted.
pub fn normalization_scales(
    mean_sq: &[Vec<f64>],
    rho: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![vec![0.0; mean_sq[0].len()]; mean_sq.len()];
    for k in 0..mean_sq.len() {
        for l in 0..mean_sq[k].len() {
            if rho[k][l] > 0.0 {
                if mean_sq[k][l] < 1e-9 {
                    return Err(Error::ZeroNormPrecoder { ue: k, ap: l });
                }
                out[k][l] = (rho[k][l] / mean_sq[k][l]).sqrt();
            }
        }
    }
    Ok(out)
}

/// Applies per-(UE, AP) scales in place. Directions are untouched; only the
/// transmit power changes.
pub fn scale_precoders(w: &mut [Vec<CMat>], scales: &[Vec<f64>]) {
    for (k, row) in w.iter_mut().enumerate() {
        for (l, v) in row.iter_mut().enumerate() {
            *v = v.scale(C64::new(scales[k][l], 0.0));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{RandomStream, StreamId, ZERO};

    fn rng(sub: u32) -> RandomStream {
        RandomStream::new(47, StreamId { setup: 0, block: 0, sub })
    }

    // Independent solve route for the oracles: Gauss-Jordan with partial
    // pivoting, sharing nothing with the library's Cholesky path.
    fn gauss_solve(a: &CMat, b: &CMat) -> CMat {
        let n = a.rows();
        let m = b.cols();
        let mut aug: Vec<Vec<C64>> = (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| a[(r, c)])
                    .chain((0..m).map(|c| b[(r, c)]))
                    .collect()
            })
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| {
                    aug[i][col].norm().partial_cmp(&aug[j][col].norm()).unwrap()
                })
                .unwrap();
            aug.swap(col, piv);
            let d = aug[col][col];
            for x in aug[col].iter_mut() {
                *x /= d;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = aug[r][col];
                for c2 in col..n + m {
                    let t = aug[col][c2];
                    aug[r][c2] -= f * t;
                }
            }
        }
        CMat::from_fn(n, m, |r, c| aug[r][n + c])
    }

    fn random_vec(n: usize, r: &mut RandomStream) -> CMat {
        CMat::from_fn(n, 1, |_, _| r.complex_gaussian(1.0))
    }

    fn random_psd(n: usize, r: &mut RandomStream) -> CMat {
        let b = CMat::from_fn(n, n, |_, _| r.complex_gaussian(0.25));
        b.matmul(&b.herm())
    }

    struct Scenario {
        map: ServingMap,
        est: Vec<Vec<CMat>>,
        cov: Vec<Vec<CMat>>,
    }

    fn scenario(clusters: Vec<Vec<usize>>, lx: usize, n: usize, sub: u32) -> Scenario {
        let kx = clusters.len();
        let map = ServingMap::from_parts(vec![0; kx], clusters, lx, kx);
        let mut r = rng(sub);
        let est = (0..kx)
            .map(|_| (0..lx).map(|_| random_vec(n, &mut r)).collect())
            .collect();
        let cov = (0..kx)
            .map(|_| (0..lx).map(|_| random_psd(n, &mut r)).collect())
            .collect();
        Scenario { map, est, cov }
    }

    #[test]
    fn local_mmse_matches_dense_inverse_oracle() {
        let n = 3;
        let (p, s2) = (0.7, 0.3);
        let sc = scenario(
            vec![vec![0, 1], vec![1, 2], vec![0, 2], vec![1, 0]],
            3,
            n,
            1,
        );
        let w = lp_mmse(&sc.est, &sc.cov, &sc.map, p, s2).unwrap();
        for l in 0..3 {
            let mut a = CMat::identity(n).scale(C64::new(s2, 0.0));
            for &i in &sc.map.served[l] {
                let h = &sc.est[i][l];
                a = a.add(&h.matmul(&h.herm()).scale(C64::new(p, 0.0)));
                a = a.add(&sc.cov[i][l].scale(C64::new(p, 0.0)));
            }
            for k in 0..4 {
                if !sc.map.serves(k, l) {
                    assert_eq!(w[k][l].frob_norm(), 0.0);
                    continue;
                }
                let want = gauss_solve(&a, &sc.est[k][l]).scale(C64::new(p, 0.0));
                assert!(w[k][l].sub(&want).frob_norm() < 1e-10);
            }
        }
    }

    #[test]
    fn cluster_mmse_matches_dense_inverse_oracle() {
        let n = 2;
        let (p, s2) = (0.5, 0.2);
        let clusters = vec![vec![0, 1], vec![1, 2], vec![3, 4], vec![4, 5], vec![0, 5]];
        let sc = scenario(clusters.clone(), 6, n, 2);
        let w = p_mmse(&sc.est, &sc.cov, &sc.map, p, s2).unwrap();
        for k in 0..5 {
            let mk = &clusters[k];
            let dim = n * mk.len();
            // brute-force overlap set
            let sk: Vec<usize> = (0..5)
                .filter(|&i| clusters[i].iter().any(|l| mk.contains(l)))
                .collect();
            let stack = |i: usize| {
                let mut v = Vec::new();
                for &l in mk {
                    for row in 0..n {
                        v.push(sc.est[i][l][(row, 0)]);
                    }
                }
                CMat::col_vec(&v)
            };
            let mut a = CMat::identity(dim).scale(C64::new(s2, 0.0));
            for &i in &sk {
                let hi = stack(i);
                a = a.add(&hi.matmul(&hi.herm()).scale(C64::new(p, 0.0)));
                for (b, &l) in mk.iter().enumerate() {
                    for r in 0..n {
                        for c in 0..n {
                            a[(b * n + r, b * n + c)] +=
                                C64::new(p, 0.0) * sc.cov[i][l][(r, c)];
                        }
                    }
                }
            }
            let wk = gauss_solve(&a, &stack(k)).scale(C64::new(p, 0.0));
            for (b, &l) in mk.iter().enumerate() {
                for r in 0..n {
                    assert!((w[k][l][(r, 0)] - wk[(b * n + r, 0)]).norm() < 1e-9);
                }
            }
            for l in 0..6 {
                if !mk.contains(&l) {
                    assert_eq!(w[k][l].frob_norm(), 0.0);
                }
            }
        }
    }

    #[test]
    fn overlap_set_grows_the_regulariser() {
        // UE 0 and UE 1 share AP 1, UE 2 is disjoint. UE 0's direction must
        // depend on UE 1's estimate but not on UE 2's.
        let n = 2;
        let clusters = vec![vec![0, 1], vec![1, 2], vec![3]];
        let base = scenario(clusters.clone(), 4, n, 3);
        let w0 = p_mmse(&base.est, &base.cov, &base.map, 0.4, 0.1).unwrap();

        let mut bumped = base.est.clone();
        bumped[1][1] = bumped[1][1].scale(C64::new(3.0, 0.0));
        let w1 = p_mmse(&bumped, &base.cov, &base.map, 0.4, 0.1).unwrap();
        assert!(w0[0][0].sub(&w1[0][0]).frob_norm() > 1e-6);

        let mut distant = base.est.clone();
        distant[2][3] = distant[2][3].scale(C64::new(5.0, 0.0));
        let w2 = p_mmse(&distant, &base.cov, &base.map, 0.4, 0.1).unwrap();
        assert!(w0[0][0].sub(&w2[0][0]).frob_norm() < 1e-14);
        assert!(w0[0][1].sub(&w2[0][1]).frob_norm() < 1e-14);
    }

    #[test]
    fn noise_dominated_limit_is_a_matched_filter() {
        let n = 3;
        let sc = scenario(vec![vec![0], vec![0]], 1, n, 4);
        let w = lp_mmse(&sc.est, &sc.cov, &sc.map, 1.0, 1e9).unwrap();
        for k in 0..2 {
            let h = &sc.est[k][0];
            let scale = w[k][0].frob_norm() / h.frob_norm();
            assert!(w[k][0].sub(&h.scale(C64::new(scale, 0.0))).frob_norm() < 1e-6 * scale);
        }
    }

    #[test]
    fn distributed_power_splits_by_root_gain() {
        let beta = vec![vec![4e-10], vec![1e-10]];
        let map = ServingMap::from_parts(vec![0, 1], vec![vec![0], vec![0]], 1, 2);
        let rho = allocate_power_distributed(&beta, &map, 0.2);
        // sqrt ratio 2:1 -> 2/3 and 1/3 of the budget
        assert!((rho[0][0] - 0.2 * 2.0 / 3.0).abs() < 1e-15);
        assert!((rho[1][0] - 0.2 / 3.0).abs() < 1e-15);
    }

    fn random_layout(sub: u32, kx: usize, lx: usize, lk: usize) -> (Vec<Vec<f64>>, ServingMap) {
        let mut r = rng(sub);
        let beta: Vec<Vec<f64>> = (0..kx)
            .map(|_| (0..lx).map(|_| 1e-12 * (1.0 + 9.0 * r.uniform())).collect())
            .collect();
        let clusters = (0..kx)
            .map(|k| {
                let mut order: Vec<usize> = (0..lx).collect();
                order.sort_by(|&a, &b| beta[k][b].partial_cmp(&beta[k][a]).unwrap());
                order.truncate(lk);
                order
            })
            .collect();
        (beta, ServingMap::from_parts(vec![0; kx], clusters, lx, kx))
    }

    #[test]
    fn distributed_power_spends_each_budget_exactly() {
        for sub in 0..50 {
            let (beta, map) = random_layout(100 + sub, 6, 5, 2);
            let rho = allocate_power_distributed(&beta, &map, 0.2);
            for l in 0..5 {
                let spent: f64 = (0..6).map(|k| rho[k][l]).sum();
                if map.served[l].is_empty() {
                    assert_eq!(spent, 0.0);
                } else {
                    assert!((spent - 0.2).abs() < 1e-12);
                }
                for k in 0..6 {
                    assert_eq!(rho[k][l] > 0.0, map.serves(k, l));
                }
            }
        }
    }

    #[test]
    fn centralized_power_caps_at_the_busiest_ap() {
        for sub in 0..50 {
            let (beta, map) = random_layout(200 + sub, 6, 5, 2);
            let rho = allocate_power_centralized(&beta, &map, 0.2, -0.5);
            let mut max_spent = 0.0_f64;
            for l in 0..5 {
                let spent: f64 = (0..6).map(|k| rho[k][l]).sum();
                assert!(spent <= 0.2 * (1.0 + 1e-12));
                max_spent = max_spent.max(spent);
            }
            assert!((max_spent - 0.2).abs() < 1e-12);
            // one weight per UE, spent equally across its cluster
            for k in 0..6 {
                let vals: Vec<f64> =
                    map.clusters[k].iter().map(|&l| rho[k][l]).collect();
                for v in &vals {
                    assert!((v - vals[0]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn centralized_two_ue_hand_formula() {
        let beta = vec![vec![4e-10, 4e-10], vec![1e-10, 1e-10]];
        let map = ServingMap::from_parts(
            vec![0, 1],
            vec![vec![0, 1], vec![0, 1]],
            2,
            2,
        );
        let rho = allocate_power_centralized(&beta, &map, 0.2, -0.5);
        let om0 = (8e-10_f64).powf(-0.5);
        let om1 = (2e-10_f64).powf(-0.5);
        let kappa = om0 + om1;
        for l in 0..2 {
            assert!((rho[0][l] - 0.2 * om0 / kappa).abs() < 1e-15);
            assert!((rho[1][l] - 0.2 * om1 / kappa).abs() < 1e-15);
        }
        // upsilon = -0.5 favours the weak UE
        assert!(rho[1][0] > rho[0][0]);
    }

    #[test]
    fn scaling_pins_batch_power_to_the_allocation() {
        let n = 4;
        let (kx, lx) = (3, 2);
        let mut r = rng(5);
        let batch: Vec<Vec<Vec<CMat>>> = (0..120)
            .map(|_| {
                (0..kx)
                    .map(|_| (0..lx).map(|_| random_vec(n, &mut r)).collect())
                    .collect()
            })
            .collect();
        let rho = vec![vec![0.3, 0.05], vec![0.2, 0.0], vec![0.01, 0.7]];
        let mean_sq = average_norms(&batch);
        let scales = normalization_scales(&mean_sq, &rho).unwrap();

        let mut scaled = batch.clone();
        for draw in &mut scaled {
            scale_precoders(draw, &scales);
        }
        let after = average_norms(&scaled);
        for k in 0..kx {
            for l in 0..lx {
                if rho[k][l] > 0.0 {
                    assert!((after[k][l] - rho[k][l]).abs() < 1e-12 * rho[k][l]);
                } else {
                    assert_eq!(after[k][l], 0.0);
                }
            }
        }
        // scaling preserves every direction: scaled draw is a real non-negative
        // multiple of the original
        for (b, draw) in scaled.iter().enumerate() {
            for k in 0..kx {
                for l in 0..lx {
                    let orig = &batch[b][k][l];
                    let dot: C64 = (0..n)
                        .map(|i| draw[k][l][(i, 0)] * orig[(i, 0)].conj())
                        .sum();
                    assert!(dot.im.abs() <= 1e-12 * dot.re.abs().max(1e-30));
                    assert!(dot.re >= 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_direction_with_budget_is_rejected() {
        let mean_sq = vec![vec![1e-12, 2.0]];
        let rho = vec![vec![0.1, 0.1]];
        match normalization_scales(&mean_sq, &rho) {
            Err(Error::ZeroNormPrecoder { ue: 0, ap: 0 }) => {}
            other => panic!("expected ZeroNormPrecoder, got {other:?}"),
        }
        // same norms are fine when no power is routed there
        let rho2 = vec![vec![0.0, 0.1]];
        let s = normalization_scales(&mean_sq, &rho2).unwrap();
        assert_eq!(s[0][0], 0.0);
        assert!(s[0][1] > 0.0);
    }

    #[test]
    fn precoder_outputs_are_finite_on_physical_scales() {
        // watt-scale inputs: beta ~ 1e-10, noise ~ 5e-13, estimates ~ sqrt(beta)
        let n = 2;
        let mut r = rng(6);
        let kx = 3;
        let est: Vec<Vec<CMat>> = (0..kx)
            .map(|_| {
                (0..2)
                    .map(|_| {
                        CMat::from_fn(n, 1, |_, _| r.complex_gaussian(1e-10))
                    })
                    .collect()
            })
            .collect();
        let cov: Vec<Vec<CMat>> = (0..kx)
            .map(|_| {
                (0..2)
                    .map(|_| CMat::identity(n).scale(C64::new(1e-11, 0.0)))
                    .collect()
            })
            .collect();
        let map = ServingMap::from_parts(
            vec![0, 1, 0],
            vec![vec![0, 1], vec![0, 1], vec![1, 0]],
            2,
            2,
        );
        for w in [
            lp_mmse(&est, &cov, &map, 0.1, 5e-13).unwrap(),
            p_mmse(&est, &cov, &map, 0.1, 5e-13).unwrap(),
        ] {
            for k in 0..kx {
                for l in 0..2 {
                    for i in 0..n {
                        let v = w[k][l][(i, 0)];
                        assert!(v.re.is_finite() && v.im.is_finite());
                        assert_ne!(v, ZERO, "served pair collapsed to zero");
                    }
                }
            }
        }
    }
}
