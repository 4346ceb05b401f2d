//! Uplink training: joint pilot assignment and user-centric clustering, the
//! per-UE row mapping for space-time codewords, and LMMSE channel estimation.

use crate::channel::ChannelBlock;
use crate::error::{Error, Result};
use crate::geometry::LargeScaleModel;
use crate::math::{CMat, RandomStream, C64};

/// Who serves whom. `clusters[k]` lists UE k's serving APs in descending
/// channel gain; the position of an AP in that list is also the codeword row
/// it transmits, so the strongest AP carries row 0.
#[derive(Clone, Debug)]
pub struct ServingMap {
    pub pilot: Vec<usize>,
    pub master: Vec<usize>,
    /// M_k, ordered by descending beta, length exactly l_k
    pub clusters: Vec<Vec<usize>>,
    /// D_l: UEs served by AP l, ascending UE index
    pub served: Vec<Vec<usize>>,
    assoc: Vec<Vec<bool>>,
    pub tau_p: usize,
}

impl ServingMap {
    /// a_{k,l}: does AP l serve UE k.
    pub fn serves(&self, k: usize, l: usize) -> bool {
        self.assoc[k][l]
    }

    /// Codeword row transmitted by AP l for UE k (0-based). AP must serve k.
    pub fn row_of(&self, l: usize, k: usize) -> usize {
        self.clusters[k]
            .iter()
            .position(|&x| x == l)
            .expect("row_of called for a non-serving AP")
    }

    pub fn num_ues(&self) -> usize {
        self.pilot.len()
    }

    pub fn num_aps(&self) -> usize {
        self.served.len()
    }

    /// UEs sharing UE k's pilot, including k itself.
    pub fn copilots(&self, k: usize) -> Vec<usize> {
        let t = self.pilot[k];
        (0..self.num_ues()).filter(|&i| self.pilot[i] == t).collect()
    }

    /// Builds a map from explicit clusters (each ordered strongest-first) and
    /// pilot indices; serving sets and masters are derived. Handy for fixed
    /// scenarios where the greedy assignment is not wanted.
    pub fn from_parts(
        pilot: Vec<usize>,
        clusters: Vec<Vec<usize>>,
        num_aps: usize,
        tau_p: usize,
    ) -> ServingMap {
        let kx = clusters.len();
        let mut assoc = vec![vec![false; num_aps]; kx];
        for (k, cl) in clusters.iter().enumerate() {
            for &l in cl {
                assoc[k][l] = true;
            }
        }
        let served = (0..num_aps)
            .map(|l| (0..kx).filter(|&k| assoc[k][l]).collect())
            .collect();
        let master = clusters.iter().map(|c| c[0]).collect();
        ServingMap { pilot, master, clusters, served, assoc, tau_p }
    }
}

/// Joint pilot assignment and clustering:
/// 1. each UE's master AP is its strongest-gain AP;
/// 2. the first tau_p UEs take orthogonal pilots, every later UE takes the
///    pilot with the least received contamination at its master AP;
/// 3. an AP is a candidate server for UE k only where k is the strongest UE
///    on its pilot (so pilot mates never share an AP);
/// 4. the cluster is the l_k strongest candidates, skipping APs already
///    serving tau_p UEs.
///
/// Ties anywhere break toward the lowest index.
pub fn assign_pilots_and_cluster(
    large: &LargeScaleModel,
    tau_p: usize,
    l_k: usize,
) -> Result<ServingMap> {
    let kx = large.beta.len();
    let lx = large.beta[0].len();
    assert!(tau_p >= 1 && l_k >= 1 && l_k <= lx);
    let beta = &large.beta;

    let argmax = |vals: &dyn Fn(usize) -> f64, n: usize| -> usize {
        let mut best = 0;
        for i in 1..n {
            if vals(i) > vals(best) {
                best = i;
            }
        }
        best
    };

    let master: Vec<usize> = (0..kx).map(|k| argmax(&|l| beta[k][l], lx)).collect();

    let mut pilot = vec![0usize; kx];
    for k in 0..kx {
        if k < tau_p {
            pilot[k] = k;
        } else {
            // contamination of pilot t at this UE's master, from UEs already assigned
            let m = master[k];
            let mut best_t = 0;
            let mut best_c = f64::INFINITY;
            for t in 0..tau_p {
                let c: f64 =
                    (0..k).filter(|&i| pilot[i] == t).map(|i| beta[i][m]).sum();
                if c < best_c {
                    best_c = c;
                    best_t = t;
                }
            }
            pilot[k] = best_t;
        }
    }

    // strongest UE per (AP, pilot)
    let mut winner = vec![vec![usize::MAX; tau_p]; lx];
    for l in 0..lx {
        for t in 0..tau_p {
            let mut best = usize::MAX;
            for k in 0..kx {
                if pilot[k] == t && (best == usize::MAX || beta[k][l] > beta[best][l]) {
                    best = k;
                }
            }
            winner[l][t] = best;
        }
    }

    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); kx];
    let mut load = vec![0usize; lx];
    let mut assoc = vec![vec![false; lx]; kx];
    // UEs claim APs in index order; the winner rule is static, so the order
    // only matters for the tau_p load cap
    for k in 0..kx {
        let mut order: Vec<usize> = (0..lx).filter(|&l| winner[l][pilot[k]] == k).collect();
        order.sort_by(|&a, &b| beta[k][b].partial_cmp(&beta[k][a]).unwrap().then(a.cmp(&b)));
        for &l in &order {
            if clusters[k].len() == l_k {
                break;
            }
            if load[l] < tau_p {
                clusters[k].push(l);
                load[l] += 1;
                assoc[k][l] = true;
            }
        }
        if clusters[k].len() < l_k {
            return Err(Error::InfeasibleClustering { ue: k, got: clusters[k].len(), need: l_k });
        }
    }

    let mut served: Vec<Vec<usize>> = vec![Vec::new(); lx];
    for k in 0..kx {
        for &l in &clusters[k] {
            served[l].push(k);
        }
    }
    for d in &mut served {
        d.sort_unstable();
    }

    Ok(ServingMap { pilot, master, clusters, served, assoc, tau_p })
}

/// LMMSE estimator with everything that depends only on second-order
/// statistics precomputed: per-link estimation matrices W and error
/// covariances C.
#[derive(Clone, Debug)]
pub struct LmmseEstimator {
    /// W[k][l]: h_hat = W * y_pilot
    w: Vec<Vec<CMat>>,
    /// error covariance C[k][l] = R - tau_p*p*R*Psi^-1*R
    pub c: Vec<Vec<CMat>>,
    pub tau_p: usize,
    pub pilot_power: f64,
    noise_power: f64,
    pilot: Vec<usize>,
    antennas: usize,
}

impl LmmseEstimator {
    pub fn new(
        large: &LargeScaleModel,
        map: &ServingMap,
        pilot_power: f64,
    ) -> Result<LmmseEstimator> {
        assert!(pilot_power > 0.0);
        let kx = large.beta.len();
        let lx = large.beta[0].len();
        let n = large.r[0][0].rows();
        let tau_p = map.tau_p;
        let tp = tau_p as f64 * pilot_power;
        let sigma2 = large.noise_power_w;
        let mut w: Vec<Vec<(usize, CMat)>> = vec![Vec::new(); kx];
        let mut c: Vec<Vec<(usize, CMat)>> = vec![Vec::new(); kx];
        for l in 0..lx {
            for t in 0..tau_p {
                // Psi shared by every UE on pilot t at this AP
                let mut psi = CMat::identity(n).scale(C64::new(sigma2, 0.0));
                for i in 0..kx {
                    if map.pilot[i] == t {
                        psi = psi.add(&large.r[i][l].scale(C64::new(tp, 0.0)));
                    }
                }
                for k in 0..kx {
                    if map.pilot[k] != t {
                        continue;
                    }
                    let r = &large.r[k][l];
                    // W = sqrt(tp) * R * Psi^-1, computed as (Psi^-1 * R)^H
                    // since Psi and R are Hermitian
                    let pinv_r = psi.hermitian_solve(r)?;
                    let wk = pinv_r.herm().scale(C64::new(tp.sqrt(), 0.0));
                    let ck = r.sub(&r.matmul(&pinv_r).scale(C64::new(tp, 0.0)));
                    // order within l is by UE; collect then place
                    w[k].push((l, wk));
                    c[k].push((l, ck));
                }
            }
        }
        // entries were pushed per (l, t) scan; sort each UE's list by AP index
        let fix = |v: &mut Vec<(usize, CMat)>| v.sort_by_key(|e| e.0);
        let mut ws = Vec::with_capacity(kx);
        let mut cs = Vec::with_capacity(kx);
        for k in 0..kx {
            fix(&mut w[k]);
            fix(&mut c[k]);
            ws.push(w[k].drain(..).map(|e| e.1).collect::<Vec<_>>());
            cs.push(c[k].drain(..).map(|e| e.1).collect::<Vec<_>>());
        }
        Ok(LmmseEstimator {
            w: ws,
            c: cs,
            tau_p,
            pilot_power,
            noise_power: sigma2,
            pilot: map.pilot.clone(),
            antennas: n,
        })
    }

    /// Runs the pilot phase for one block: per AP and pilot, the despread
    /// observation is sqrt(tau_p*p) * sum of co-pilot channels plus white
    /// noise; the estimate is W applied to it.
    pub fn estimate(&self, block: &ChannelBlock, rng: &mut RandomStream) -> Vec<Vec<CMat>> {
        let kx = self.pilot.len();
        let lx = block.h[0].len();
        let n = self.antennas;
        let amp = (self.tau_p as f64 * self.pilot_power).sqrt();
        let mut out: Vec<Vec<(usize, CMat)>> = (0..kx).map(|_| Vec::with_capacity(lx)).collect();
        for l in 0..lx {
            for t in 0..self.tau_p {
                let mut y = CMat::zeros(n, 1);
                for i in 0..kx {
                    if self.pilot[i] == t {
                        y = y.add(&block.h[i][l].scale(C64::new(amp, 0.0)));
                    }
                }
                for r in 0..n {
                    y[(r, 0)] += rng.complex_gaussian(self.noise_power);
                }
                for k in 0..kx {
                    if self.pilot[k] == t {
                        out[k].push((l, self.w[k][l].matmul(&y)));
                    }
                }
            }
        }
        let mut res = Vec::with_capacity(kx);
        for k in 0..kx {
            out[k].sort_by_key(|e| e.0);
            res.push(out[k].drain(..).map(|e| e.1).collect::<Vec<_>>());
        }
        res
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_block, covariance_sqrts, PhaseConfig, PhaseMode};
    use crate::math::StreamId;

    fn rng(sub: u32) -> RandomStream {
        RandomStream::new(31, StreamId { setup: 0, block: 0, sub })
    }

    /// Synthetic large-scale model with given beta and white covariances.
    fn model_from_beta(beta: Vec<Vec<f64>>, n: usize) -> LargeScaleModel {
        let r = beta
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&b| CMat::identity(n).scale(C64::new(b, 0.0)))
                    .collect()
            })
            .collect();
        LargeScaleModel { beta, r, noise_power_w: 1e-3 }
    }

    fn random_beta(kx: usize, lx: usize, rng: &mut RandomStream) -> Vec<Vec<f64>> {
        (0..kx)
            .map(|_| (0..lx).map(|_| 10f64.powf(rng.uniform_range(-12.0, -6.0))).collect())
            .collect()
    }

    #[test]
    fn single_ue_takes_strongest_aps_in_order() {
        let beta = vec![vec![1e-9, 5e-9, 2e-9, 4e-9, 3e-9]];
        let large = model_from_beta(beta, 2);
        let map = assign_pilots_and_cluster(&large, 3, 3).unwrap();
        assert_eq!(map.pilot[0], 0);
        assert_eq!(map.master[0], 1);
        assert_eq!(map.clusters[0], vec![1, 3, 4]); // descending beta
        assert_eq!(map.row_of(1, 0), 0); // strongest AP carries row 0
        assert_eq!(map.row_of(4, 0), 2);
    }

    #[test]
    fn two_ues_two_pilots_no_contamination() {
        let mut r = rng(0);
        let large = model_from_beta(random_beta(2, 6, &mut r), 2);
        let map = assign_pilots_and_cluster(&large, 2, 2).unwrap();
        assert_ne!(map.pilot[0], map.pilot[1]);
    }

    #[test]
    fn greedy_steps_match_exhaustive_replay() {
        // oracle: recompute every argmax/argmin of the assignment
        // independently and compare the final map
        let mut r = rng(1);
        for trial in 0..50 {
            let (kx, lx, tau_p, l_k) = (20, 40, 10, 4);
            let beta = random_beta(kx, lx, &mut r);
            let large = model_from_beta(beta.clone(), 2);
            let map = match assign_pilots_and_cluster(&large, tau_p, l_k) {
                Ok(m) => m,
                Err(_) => continue,
            };

            // replay masters
            for k in 0..kx {
                let mut best = 0;
                for l in 0..lx {
                    if beta[k][l] > beta[k][best] {
                        best = l;
                    }
                }
                assert_eq!(map.master[k], best, "trial {trial} master of {k}");
            }
            // replay pilots
            let mut pilots = vec![0usize; kx];
            for k in 0..kx {
                if k < tau_p {
                    pilots[k] = k;
                } else {
                    let mut cont = vec![0.0f64; tau_p];
                    for i in 0..k {
                        cont[pilots[i]] += beta[i][map.master[k]];
                    }
                    let mut best = 0;
                    for t in 1..tau_p {
                        if cont[t] < cont[best] {
                            best = t;
                        }
                    }
                    pilots[k] = best;
                }
                assert_eq!(map.pilot[k], pilots[k], "trial {trial} pilot of {k}");
            }
            // replay winner-constrained greedy clusters
            let mut load = vec![0usize; lx];
            for k in 0..kx {
                let mates: Vec<usize> =
                    (0..kx).filter(|&i| pilots[i] == pilots[k]).collect();
                let mut cands: Vec<usize> = (0..lx)
                    .filter(|&l| {
                        // winner on this pilot at AP l, ties to lowest index
                        let mut win = mates[0];
                        for &i in &mates[1..] {
                            if beta[i][l] > beta[win][l] {
                                win = i;
                            }
                        }
                        win == k
                    })
                    .collect();
                cands.sort_by(|&a, &b| {
                    beta[k][b].partial_cmp(&beta[k][a]).unwrap().then(a.cmp(&b))
                });
                let mut want = Vec::new();
                for &l in &cands {
                    if want.len() == l_k {
                        break;
                    }
                    if load[l] < tau_p {
                        want.push(l);
                        load[l] += 1;
                    }
                }
                assert_eq!(map.clusters[k], want, "trial {trial} cluster of {k}");
            }
        }
    }

    #[test]
    fn serving_map_invariants_hold_on_random_layouts() {
        let mut r = rng(2);
        let mut checked = 0;
        for _ in 0..1000 {
            let (kx, lx, tau_p, l_k) = (12, 24, 6, 3);
            let large = model_from_beta(random_beta(kx, lx, &mut r), 2);
            let map = match assign_pilots_and_cluster(&large, tau_p, l_k) {
                Ok(m) => m,
                Err(Error::InfeasibleClustering { .. }) => continue,
                Err(e) => panic!("unexpected {e:?}"),
            };
            checked += 1;
            for k in 0..kx {
                assert_eq!(map.clusters[k].len(), l_k);
                // m(., k) is a bijection cluster -> rows
                let rows: std::collections::BTreeSet<usize> =
                    map.clusters[k].iter().map(|&l| map.row_of(l, k)).collect();
                assert_eq!(rows, (0..l_k).collect());
                for l in 0..lx {
                    assert_eq!(map.serves(k, l), map.clusters[k].contains(&l));
                }
            }
            for l in 0..lx {
                assert!(map.served[l].len() <= tau_p, "AP {l} over cap");
                // pilot mates never share an AP
                let pilots: Vec<usize> = map.served[l].iter().map(|&k| map.pilot[k]).collect();
                let uniq: std::collections::BTreeSet<usize> = pilots.iter().copied().collect();
                assert_eq!(pilots.len(), uniq.len(), "AP {l} serves pilot mates");
            }
        }
        assert!(checked > 900, "too many infeasible layouts: {checked}");
    }

    #[test]
    fn starved_ue_reports_infeasible() {
        // one pilot, two UEs, UE 1 weaker everywhere: it wins no AP
        let beta = vec![vec![2e-9, 3e-9, 4e-9], vec![1e-9, 1e-9, 1e-9]];
        let large = model_from_beta(beta, 2);
        match assign_pilots_and_cluster(&large, 1, 2) {
            Err(Error::InfeasibleClustering { ue, .. }) => assert_eq!(ue, 1),
            other => panic!("expected InfeasibleClustering, got {other:?}"),
        }
    }

    fn block_from(large: &LargeScaleModel, sub: u32) -> ChannelBlock {
        let sqrts = covariance_sqrts(large).unwrap();
        let cfg = PhaseConfig { mode: PhaseMode::Static, increment_std: 0.0, sync: true };
        draw_block(large, &sqrts, &cfg, 10, 0, &mut rng(sub), &mut rng(sub + 1))
    }

    #[test]
    fn estimate_approaches_truth_without_noise_or_sharing() {
        let mut large = model_from_beta(vec![vec![1e-8, 2e-8]], 4);
        large.noise_power_w = 1e-20; // ~1e-12 of the trace scale
        let map = assign_pilots_and_cluster(&large, 1, 2).unwrap();
        let est = LmmseEstimator::new(&large, &map, 0.1).unwrap();
        let block = block_from(&large, 10);
        let hh = est.estimate(&block, &mut rng(12));
        for l in 0..2 {
            let err = hh[0][l].sub(&block.h[0][l]).frob_norm() / block.h[0][l].frob_norm();
            assert!(err <= 1e-4, "AP {l}: relative error {err:.2e}");
        }
    }

    #[test]
    fn zero_covariance_estimates_to_zero() {
        let mut large = model_from_beta(vec![vec![1e-9], vec![1e-9]], 3);
        large.beta[0][0] = 1e-30;
        large.r[0][0] = CMat::zeros(3, 3);
        let map = assign_pilots_and_cluster(&large, 2, 1).unwrap();
        let est = LmmseEstimator::new(&large, &map, 0.1).unwrap();
        let mut block = block_from(&large, 20);
        block.h[0][0] = CMat::zeros(3, 1);
        let hh = est.estimate(&block, &mut rng(22));
        assert_eq!(hh[0][0].frob_norm(), 0.0);
        assert_eq!(est.c[0][0].frob_norm(), 0.0);
    }

    #[test]
    fn estimate_covariance_identity_with_pilot_sharing() {
        // Monte Carlo oracle: E{h_hat h_hat^H} + C = R on a contaminated
        // 3-UE instance, and the error is uncorrelated with the estimate
        let n = 3;
        let mk_r = |scale: f64, seed: u32| {
            let mut s = rng(seed);
            let m = CMat::from_fn(n, n, |_, _| s.complex_gaussian(1.0));
            let psd = m.matmul(&m.herm());
            let tr = psd.trace().re;
            psd.scale(C64::new(scale * n as f64 / tr, 0.0))
        };
        let large = LargeScaleModel {
            beta: vec![vec![1.0], vec![0.5], vec![0.25]],
            r: vec![vec![mk_r(1.0, 100)], vec![mk_r(0.5, 101)], vec![mk_r(0.25, 102)]],
            noise_power_w: 0.2,
        };
        // tau_p = 2: UEs 0 and 2 share pilot 0 (UE2 contaminates UE0)
        let map = ServingMap {
            pilot: vec![0, 1, 0],
            master: vec![0, 0, 0],
            clusters: vec![vec![0], vec![0], vec![0]],
            served: vec![vec![0, 1, 2]],
            assoc: vec![vec![true], vec![true], vec![true]],
            tau_p: 2,
        };
        let est = LmmseEstimator::new(&large, &map, 0.7).unwrap();
        let sqrts = covariance_sqrts(&large).unwrap();
        let cfg = PhaseConfig { mode: PhaseMode::Static, increment_std: 0.0, sync: true };
        let draws = 100_000;
        let mut acc = vec![CMat::zeros(n, n); 3];
        let mut cross = vec![CMat::zeros(n, n); 3];
        let mut rh = rng(4);
        let mut rt = rng(5);
        let mut rn = rng(6);
        for b in 0..draws {
            let block = draw_block(&large, &sqrts, &cfg, 4, b as u32, &mut rh, &mut rt);
            let hh = est.estimate(&block, &mut rn);
            for k in 0..3 {
                acc[k] = acc[k].add(&hh[k][0].matmul(&hh[k][0].herm()));
                let e = block.h[k][0].sub(&hh[k][0]);
                cross[k] = cross[k].add(&e.matmul(&hh[k][0].herm()));
            }
        }
        for k in 0..3 {
            let emp = acc[k].scale(C64::new(1.0 / draws as f64, 0.0)).add(&est.c[k][0]);
            let err = emp.sub(&large.r[k][0]).frob_norm() / large.r[k][0].frob_norm();
            assert!(err < 0.05, "UE {k}: covariance identity off by {err:.3}");
            let x = cross[k].scale(C64::new(1.0 / draws as f64, 0.0)).frob_norm();
            assert!(
                x < 0.05 * large.r[k][0].frob_norm(),
                "UE {k}: error correlated with estimate ({x:.3e})"
            );
        }
    }
}
