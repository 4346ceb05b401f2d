//! Monte Carlo campaigns. A setup draws a topology and its large-scale
//! statistics once, then plays coherence blocks through the whole chain:
//! channel and oscillator draws, pilot training, precoding, power scaling,
//! received-signal synthesis for the configured scheme, decoding and bit
//! accounting. Every random draw is keyed by (seed, setup, block, purpose),
//! so results never depend on scheduling or worker count.

use crate::access::{assign_pilots_and_cluster, LmmseEstimator, ServingMap};
use crate::channel::{covariance_sqrts, draw_block, effective_channel, ChannelBlock, PhaseProcess};
use crate::config::{Processing, Scheme, SimConfig};
use crate::diffcoding::{
    coherent_psk_detect, diff_encode_step, dpsk_encode_step, dpsk_ml_decode,
    dstbc_ml_decode_fast, stbc_map, PskConstellation,
};
use crate::error::{Error, Result};
use crate::geometry::{build_large_scale, place_aps_hcpp, NetworkTopology, PropagationParams};
use crate::math::{CMat, RandomStream, StreamId, C64, ZERO};
use crate::precoding::{
    allocate_power_centralized, allocate_power_distributed, lp_mmse, normalization_scales,
    p_mmse, scale_precoders,
};
use rayon::prelude::*;
use serde::Serialize;

/// Purpose tags for the deterministic random streams. Setup-level draws use
/// block 0; the normalization batch indexes its draws through the block slot.
pub mod streams {
    pub const PLACEMENT: u32 = 0;
    pub const SHADOWING: u32 = 1;
    pub const NORM_CHANNEL: u32 = 2;
    pub const NORM_PILOT: u32 = 3;
    pub const CHANNEL: u32 = 4;
    pub const PHASES: u32 = 5;
    pub const PILOT_NOISE: u32 = 6;
    pub const PAYLOAD: u32 = 7;
    pub const RX_NOISE: u32 = 8;
    pub const NORM_PHASES: u32 = 9;
}

/// Stream accessor used across the simulator and its tests.
pub fn stream(seed: u64, setup: u32, block: u32, sub: u32) -> RandomStream {
    RandomStream::new(seed, StreamId { setup, block, sub })
}

/// Fraction of the coherence block that carries fresh data. The first
/// codeword (or symbol) of each differential block is a reference.
pub fn pre_log_factor(cfg: &SimConfig) -> f64 {
    match cfg.scheme {
        Scheme::CoherentSync | Scheme::CoherentAsync => cfg.tau_d as f64 / cfg.tau_c as f64,
        Scheme::Dpsk => (cfg.tau_d as f64 - 1.0) / cfg.tau_c as f64,
        Scheme::Dstbc => {
            let d = cfg.design.build();
            let g = cfg.tau_d / d.p;
            ((g - 1) * d.ns) as f64 / cfg.tau_c as f64
        }
    }
}

/// Campaign output: integer bit counters per (setup, UE) plus the BER/SE
/// values derived from them. `se = pre_log * log2(M) * (1 - ber)` always
/// recomputes exactly from the stored counters.
#[derive(Clone, Debug, Serialize)]
pub struct SimResult {
    pub seed: u64,
    pub config_digest: String,
    pub version: String,
    pub pre_log: f64,
    /// bits sent, indexed [setup][ue]
    pub bits: Vec<Vec<u64>>,
    /// bit errors, indexed [setup][ue]
    pub errors: Vec<Vec<u64>>,
    pub ber: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
}

impl SimResult {
    pub fn flat_ber(&self) -> Vec<f64> {
        self.ber.iter().flatten().copied().collect()
    }

    pub fn flat_se(&self) -> Vec<f64> {
        self.se.iter().flatten().copied().collect()
    }

    /// Per-setup average over UEs, the statistic the BER/SE distributions
    /// are usually reported over.
    pub fn setup_mean_ber(&self) -> Vec<f64> {
        self.ber.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect()
    }

    pub fn setup_mean_se(&self) -> Vec<f64> {
        self.se.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect()
    }
}

/// Median with the even-length midpoint convention. NaNs are rejected.
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty());
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in median input"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// v[k][i][li] = h_{k,l}^H w_{i,l} at l = clusters[i][li]: what UE k hears
/// of the stream aimed at UE i from each of i's serving APs, before any
/// oscillator phase is applied.
pub fn effective_gains(
    block: &ChannelBlock,
    map: &ServingMap,
    w: &[Vec<CMat>],
) -> Result<Vec<Vec<Vec<C64>>>> {
    let kx = map.num_ues();
    let mut v = Vec::with_capacity(kx);
    for k in 0..kx {
        let mut per_i = Vec::with_capacity(kx);
        for i in 0..kx {
            let mut per_ap = Vec::with_capacity(map.clusters[i].len());
            for &l in &map.clusters[i] {
                per_ap.push(effective_channel(&block.h[k][l], &w[i][l])?);
            }
            per_i.push(per_ap);
        }
        v.push(per_i);
    }
    Ok(v)
}

fn rotations(phases: &PhaseProcess, aps: usize, start: usize, len: usize) -> Vec<Vec<C64>> {
    (0..aps)
        .map(|l| {
            (0..len)
                .map(|u| C64::from_polar(1.0, -phases.theta(l, start + u)))
                .collect()
        })
        .collect()
}

/// Received samples for scalar symbol streams (coherent PSK or DPSK):
///
/// y_k[p] = sum_i sum_{l in M_i} e^{-j theta_l(p)} v[k][i][l] x_i[p] + n_k[p],
///
/// with n ~ CN(0, noise_power) drawn in (k, p) order from `rng`. Phases are
/// whatever the block carries; a sync campaign has them pinned to zero.
pub fn synthesize_coherent(
    phases: &PhaseProcess,
    map: &ServingMap,
    gains: &[Vec<Vec<C64>>],
    x: &[Vec<C64>],
    noise_power: f64,
    rng: &mut RandomStream,
) -> Result<Vec<Vec<C64>>> {
    let kx = map.num_ues();
    if x.len() != kx || gains.len() != kx {
        return Err(Error::DimensionMismatch(
            "one symbol stream and one gain row per UE".into(),
        ));
    }
    let samples = x[0].len();
    if x.iter().any(|s| s.len() != samples) {
        return Err(Error::FrameMisalignment(
            "all UEs must transmit the same number of samples".into(),
        ));
    }
    let rot = rotations(phases, map.num_aps(), 0, samples);
    let mut y = vec![vec![ZERO; samples]; kx];
    for k in 0..kx {
        for p in 0..samples {
            let mut acc = ZERO;
            for i in 0..kx {
                let mut g = ZERO;
                for (li, &l) in map.clusters[i].iter().enumerate() {
                    g += gains[k][i][li] * rot[l][p];
                }
                acc += g * x[i][p];
            }
            y[k][p] = acc + rng.complex_gaussian(noise_power);
        }
    }
    Ok(y)
}

/// Received samples for one space-time codeword period. AP l, serving UE i
/// on cluster row li, transmits row li of UE i's accumulated codeword, so
///
/// y_k[u] = sum_i sum_{li} e^{-j theta_l(t P + u)} v[k][i][li] C_i[li][u] + n_k[u]
///
/// for u = 0..P, where `start_sample` = t*P positions the phase track.
pub fn synthesize_dstbc_block(
    phases: &PhaseProcess,
    map: &ServingMap,
    gains: &[Vec<Vec<C64>>],
    states: &[CMat],
    start_sample: usize,
    noise_power: f64,
    rng: &mut RandomStream,
) -> Result<Vec<Vec<C64>>> {
    let kx = map.num_ues();
    if states.len() != kx || gains.len() != kx {
        return Err(Error::DimensionMismatch("one codeword state per UE".into()));
    }
    let p = states[0].rows();
    for (i, st) in states.iter().enumerate() {
        if st.rows() != p || st.cols() != p {
            return Err(Error::FrameMisalignment(format!(
                "UE {i} uses a {}x{} codeword where {p}x{p} was expected",
                st.rows(),
                st.cols()
            )));
        }
        if map.clusters[i].len() != p {
            return Err(Error::FrameMisalignment(format!(
                "UE {i} has {} serving APs for a {p}-row codeword",
                map.clusters[i].len()
            )));
        }
    }
    let rot = rotations(phases, map.num_aps(), start_sample, p);
    let mut y = vec![vec![ZERO; p]; kx];
    for k in 0..kx {
        for u in 0..p {
            let mut acc = ZERO;
            for i in 0..kx {
                let mut g = ZERO;
                for (li, &l) in map.clusters[i].iter().enumerate() {
                    g += gains[k][i][li] * rot[l][u] * states[i][(li, u)];
                }
                acc += g;
            }
            y[k][u] = acc + rng.complex_gaussian(noise_power);
        }
    }
    Ok(y)
}

/// Everything a setup precomputes once: statistics, serving structure,
/// estimator matrices and the power scales.
struct SetupState {
    large: crate::geometry::LargeScaleModel,
    map: ServingMap,
    est: LmmseEstimator,
    sqrts: Vec<Vec<CMat>>,
    scales: Vec<Vec<f64>>,
    dl_noise_w: f64,
}

fn precode(
    cfg: &SimConfig,
    st: &SetupState,
    hh: &[Vec<CMat>],
) -> Result<Vec<Vec<CMat>>> {
    match cfg.processing {
        Processing::Distributed => {
            lp_mmse(hh, &st.est.c, &st.map, cfg.p_ul_w, st.large.noise_power_w)
        }
        Processing::Centralized => {
            p_mmse(hh, &st.est.c, &st.map, cfg.p_ul_w, st.large.noise_power_w)
        }
    }
}

fn build_setup(cfg: &SimConfig, setup: u32) -> Result<SetupState> {
    let mut rng_place = stream(cfg.seed, setup, 0, streams::PLACEMENT);
    let ap_xy = place_aps_hcpp(cfg.l, cfg.side_m, &mut rng_place)?;
    let ue_xy = (0..cfg.k)
        .map(|_| {
            (
                rng_place.uniform_range(0.0, cfg.side_m),
                rng_place.uniform_range(0.0, cfg.side_m),
            )
        })
        .collect();
    let topo = NetworkTopology {
        side_m: cfg.side_m,
        ap_xy,
        ue_xy,
        h_ap_m: cfg.h_ap_m,
        h_ue_m: cfg.h_ue_m,
    };
    let params = PropagationParams {
        fc_ghz: cfg.fc_ghz,
        bandwidth_hz: cfg.bw_hz,
        noise_figure_db: cfg.nf_db,
        sigma_sf_db: cfg.sigma_sf_db,
        asd_deg: cfg.asd_deg,
        antennas: cfg.n,
        spacing: cfg.spacing,
    };
    let mut rng_shadow = stream(cfg.seed, setup, 0, streams::SHADOWING);
    // the estimator and the MMSE regularizers always assume thermal noise;
    // noise_override_w only changes what the receivers actually experience
    let large = build_large_scale(&topo, &params, &mut rng_shadow)?;
    let map = assign_pilots_and_cluster(&large, cfg.tau_p, cfg.l_k)?;
    let est = LmmseEstimator::new(&large, &map, cfg.p_ul_w)?;
    let sqrts = covariance_sqrts(&large)?;
    let rho = match cfg.processing {
        Processing::Distributed => allocate_power_distributed(&large.beta, &map, cfg.rho_d_w),
        Processing::Centralized => {
            allocate_power_centralized(&large.beta, &map, cfg.rho_d_w, cfg.upsilon)
        }
    };
    let mut st = SetupState {
        large,
        map,
        est,
        sqrts,
        scales: Vec::new(),
        dl_noise_w: cfg.noise_power_w(),
    };

    // calibrate average precoder norms on an independent batch of draws
    let phase_cfg = cfg.phase_config();
    let norms: Vec<Vec<Vec<f64>>> = (0..cfg.norm_batch)
        .into_par_iter()
        .map(|b| -> Result<Vec<Vec<f64>>> {
            let mut rng_h = stream(cfg.seed, setup, b, streams::NORM_CHANNEL);
            let mut rng_th = stream(cfg.seed, setup, b, streams::NORM_PHASES);
            let block = draw_block(&st.large, &st.sqrts, &phase_cfg, 1, b, &mut rng_h, &mut rng_th);
            let mut rng_p = stream(cfg.seed, setup, b, streams::NORM_PILOT);
            let hh = st.est.estimate(&block, &mut rng_p);
            let w = precode(cfg, &st, &hh)?;
            Ok(w
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|v| {
                            let n = v.frob_norm();
                            n * n
                        })
                        .collect()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut mean_sq = vec![vec![0.0; cfg.l]; cfg.k];
    for draw in &norms {
        for k in 0..cfg.k {
            for l in 0..cfg.l {
                mean_sq[k][l] += draw[k][l];
            }
        }
    }
    for row in &mut mean_sq {
        for v in row.iter_mut() {
            *v /= cfg.norm_batch as f64;
        }
    }
    st.scales = normalization_scales(&mean_sq, &rho)?;
    Ok(st)
}

/// Plays one coherence block and returns (bits, errors) per UE.
fn run_block(cfg: &SimConfig, st: &SetupState, setup: u32, b: u32) -> Result<(Vec<u64>, Vec<u64>)> {
    let cons = PskConstellation::new(cfg.m_o);
    let bps = cons.bits_per_symbol() as u64;
    // payload bits pick the point whose Gray label matches them
    let mut inv = vec![0usize; cfg.m_o];
    for (i, &g) in cons.labels.iter().enumerate() {
        inv[g as usize] = i;
    }
    let phase_cfg = cfg.phase_config();
    let mut rng_h = stream(cfg.seed, setup, b, streams::CHANNEL);
    let mut rng_th = stream(cfg.seed, setup, b, streams::PHASES);
    let block = draw_block(&st.large, &st.sqrts, &phase_cfg, cfg.tau_d, b, &mut rng_h, &mut rng_th);
    let hh = st.est.estimate(&block, &mut stream(cfg.seed, setup, b, streams::PILOT_NOISE));
    let mut w = precode(cfg, st, &hh)?;
    scale_precoders(&mut w, &st.scales);
    let gains = effective_gains(&block, &st.map, &w)?;

    let mut rng_pay = stream(cfg.seed, setup, b, streams::PAYLOAD);
    let mut rng_noise = stream(cfg.seed, setup, b, streams::RX_NOISE);
    let mut bits = vec![0u64; cfg.k];
    let mut errs = vec![0u64; cfg.k];
    let draw_symbol = |r: &mut RandomStream| inv[r.index(cfg.m_o)];

    match cfg.scheme {
        Scheme::CoherentSync | Scheme::CoherentAsync => {
            let tx: Vec<Vec<usize>> = (0..cfg.k)
                .map(|_| (0..cfg.tau_d).map(|_| draw_symbol(&mut rng_pay)).collect())
                .collect();
            let x: Vec<Vec<C64>> = tx
                .iter()
                .map(|row| row.iter().map(|&m| cons.points[m]).collect())
                .collect();
            let y = synthesize_coherent(&block.phases, &st.map, &gains, &x, st.dl_noise_w, &mut rng_noise)?;
            for k in 0..cfg.k {
                for p in 0..cfg.tau_d {
                    let rx = coherent_psk_detect(y[k][p], cfg.m_o);
                    bits[k] += bps;
                    errs[k] += cons.bit_errors(tx[k][p], rx) as u64;
                }
            }
        }
        Scheme::Dpsk => {
            let tx: Vec<Vec<usize>> = (0..cfg.k)
                .map(|_| (1..cfg.tau_d).map(|_| draw_symbol(&mut rng_pay)).collect())
                .collect();
            let mut x = vec![vec![C64::new(1.0, 0.0); cfg.tau_d]; cfg.k];
            for k in 0..cfg.k {
                for p in 1..cfg.tau_d {
                    x[k][p] = dpsk_encode_step(x[k][p - 1], cons.points[tx[k][p - 1]]);
                }
            }
            let y = synthesize_coherent(&block.phases, &st.map, &gains, &x, st.dl_noise_w, &mut rng_noise)?;
            for k in 0..cfg.k {
                for p in 1..cfg.tau_d {
                    let rx = dpsk_ml_decode(y[k][p - 1], y[k][p], &cons)?;
                    bits[k] += bps;
                    errs[k] += cons.bit_errors(tx[k][p - 1], rx) as u64;
                }
            }
        }
        Scheme::Dstbc => {
            let design = cfg.design.build();
            let p = design.p;
            let g_count = cfg.tau_d / p;
            // reference codeword first, then g_count - 1 data codewords
            let mut states: Vec<CMat> = vec![CMat::identity(p); cfg.k];
            let mut tx: Vec<Vec<Vec<usize>>> = vec![Vec::with_capacity(g_count - 1); cfg.k];
            let mut y: Vec<Vec<C64>> = vec![Vec::with_capacity(g_count * p); cfg.k];
            let append = |y: &mut Vec<Vec<C64>>, chunk: Vec<Vec<C64>>| {
                for (k, samples) in chunk.into_iter().enumerate() {
                    y[k].extend(samples);
                }
            };
            let chunk = synthesize_dstbc_block(
                &block.phases, &st.map, &gains, &states, 0, st.dl_noise_w, &mut rng_noise,
            )?;
            append(&mut y, chunk);
            for t in 1..g_count {
                for k in 0..cfg.k {
                    let idx: Vec<usize> =
                        (0..design.ns).map(|_| draw_symbol(&mut rng_pay)).collect();
                    let syms: Vec<C64> = idx.iter().map(|&m| cons.points[m]).collect();
                    let x = stbc_map(&design, &syms)?;
                    states[k] = diff_encode_step(&states[k], &x)?;
                    tx[k].push(idx);
                }
                let chunk = synthesize_dstbc_block(
                    &block.phases, &st.map, &gains, &states, t * p, st.dl_noise_w, &mut rng_noise,
                )?;
                append(&mut y, chunk);
            }
            for k in 0..cfg.k {
                for t in 1..g_count {
                    let rx = dstbc_ml_decode_fast(
                        &y[k][(t - 1) * p..t * p],
                        &y[k][t * p..(t + 1) * p],
                        &design,
                        &cons,
                    )?;
                    for (j, &r) in rx.iter().enumerate() {
                        bits[k] += bps;
                        errs[k] += cons.bit_errors(tx[k][t - 1][j], r) as u64;
                    }
                }
            }
        }
    }
    Ok((bits, errs))
}

/// Runs one full setup and returns the integer counters per UE.
pub fn run_setup_counts(cfg: &SimConfig, setup: u32) -> Result<(Vec<u64>, Vec<u64>)> {
    let st = build_setup(cfg, setup)?;
    let per_block: Vec<(Vec<u64>, Vec<u64>)> = (0..cfg.blocks)
        .into_par_iter()
        .map(|b| run_block(cfg, &st, setup, b))
        .collect::<Result<_>>()?;
    let mut bits = vec![0u64; cfg.k];
    let mut errs = vec![0u64; cfg.k];
    for (bb, ee) in per_block {
        for k in 0..cfg.k {
            bits[k] += bb[k];
            errs[k] += ee[k];
        }
    }
    Ok((bits, errs))
}

/// Per-UE (BER, SE) for one setup.
pub fn run_setup(cfg: &SimConfig, setup: u32) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let (bits, errs) = run_setup_counts(cfg, setup)?;
    let pf = pre_log_factor(cfg);
    let bps = cfg.m_o.trailing_zeros() as f64;
    let ber: Vec<f64> = bits
        .iter()
        .zip(&errs)
        .map(|(&b, &e)| e as f64 / b as f64)
        .collect();
    let se = ber.iter().map(|&r| pf * bps * (1.0 - r)).collect();
    Ok((ber, se))
}

/// Runs all setups in parallel and assembles the result table.
pub fn run_campaign(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let counts: Vec<(Vec<u64>, Vec<u64>)> = (0..cfg.setups)
        .into_par_iter()
        .map(|s| run_setup_counts(cfg, s))
        .collect::<Result<_>>()?;
    let pf = pre_log_factor(cfg);
    let bps = cfg.m_o.trailing_zeros() as f64;
    let mut bits = Vec::with_capacity(counts.len());
    let mut errors = Vec::with_capacity(counts.len());
    let mut ber = Vec::with_capacity(counts.len());
    let mut se = Vec::with_capacity(counts.len());
    for (bb, ee) in counts {
        let r: Vec<f64> = bb.iter().zip(&ee).map(|(&b, &e)| e as f64 / b as f64).collect();
        se.push(r.iter().map(|&x| pf * bps * (1.0 - x)).collect());
        ber.push(r);
        bits.push(bb);
        errors.push(ee);
    }
    Ok(SimResult {
        seed: cfg.seed,
        config_digest: cfg.digest(),
        version: concat!("cfdiff-", env!("CARGO_PKG_VERSION")).to_string(),
        pre_log: pf,
        bits,
        errors,
        ber,
        se,
    })
}
