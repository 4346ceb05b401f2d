//! Per-coherence-block small-scale fading and oscillator phase processes.
//!
//! The true downlink channel from AP l to UE k is e^{j*theta_l} * h_{k,l}:
//! Rayleigh fading h drawn fresh each block from the link covariance, and a
//! per-AP phase theta_l the transmitter does not know. Uplink estimation sees
//! h without theta (the misalignment lives in the DL transmit chain).

use crate::error::{Error, Result};
use crate::geometry::LargeScaleModel;
use crate::math::{sample_with_sqrt, CMat, RandomStream, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseMode {
    /// One phase per AP per block, constant over the block.
    Static,
    /// Random walk across the samples of the block on top of the random
    /// initial phase.
    Wiener,
}

#[derive(Clone, Copy, Debug)]
pub struct PhaseConfig {
    pub mode: PhaseMode,
    /// standard deviation of the per-sample Wiener increment, radians
    pub increment_std: f64,
    /// force theta_l = 0 everywhere (perfectly synchronized APs)
    pub sync: bool,
}

/// Realized oscillator phases for one coherence block.
#[derive(Clone, Debug)]
pub struct PhaseProcess {
    init: Vec<f64>,
    /// cumulative trajectories, only materialized in Wiener mode
    walk: Option<Vec<Vec<f64>>>,
}

impl PhaseProcess {
    /// Phase of AP l at sample p of the block.
    pub fn theta(&self, l: usize, p: usize) -> f64 {
        match &self.walk {
            None => self.init[l],
            Some(w) => w[l][p],
        }
    }

    pub fn num_aps(&self) -> usize {
        self.init.len()
    }
}

/// One coherence block: fading realizations plus the phase slice.
#[derive(Clone, Debug)]
pub struct ChannelBlock {
    /// h[k][l], each an N x 1 vector
    pub h: Vec<Vec<CMat>>,
    pub phases: PhaseProcess,
    pub block_index: u32,
}

/// Draws phases for one block: initial theta_l uniform on [0, 2pi) per AP
/// (zero under the sync override), then a Gaussian random walk in Wiener
/// mode. The stream is consumed identically whether or not the sync override
/// is active, so sync/async runs stay sample-paired.
pub fn draw_phases(
    num_aps: usize,
    samples: usize,
    cfg: &PhaseConfig,
    rng: &mut RandomStream,
) -> PhaseProcess {
    let mut init: Vec<f64> = (0..num_aps)
        .map(|_| rng.uniform_range(0.0, std::f64::consts::TAU))
        .collect();
    let mut walk = None;
    if cfg.mode == PhaseMode::Wiener {
        let mut w = Vec::with_capacity(num_aps);
        for l in 0..num_aps {
            let mut traj = Vec::with_capacity(samples);
            let mut cur = init[l];
            traj.push(cur);
            for _ in 1..samples {
                cur += cfg.increment_std * rng.std_normal();
                traj.push(cur);
            }
            w.push(traj);
        }
        walk = Some(w);
    }
    if cfg.sync {
        init.iter_mut().for_each(|v| *v = 0.0);
        if let Some(w) = &mut walk {
            w.iter_mut().flatten().for_each(|v| *v = 0.0);
        }
    }
    PhaseProcess { init, walk }
}

/// Draws all small-scale channels and phases for one block. `sqrts` are the
/// per-link covariance square roots, precomputed once per setup.
pub fn draw_block(
    large: &LargeScaleModel,
    sqrts: &[Vec<CMat>],
    cfg: &PhaseConfig,
    samples: usize,
    block_index: u32,
    rng_h: &mut RandomStream,
    rng_theta: &mut RandomStream,
) -> ChannelBlock {
    let kx = large.beta.len();
    let lx = large.beta[0].len();
    let mut h = Vec::with_capacity(kx);
    for k in 0..kx {
        let mut row = Vec::with_capacity(lx);
        for l in 0..lx {
            row.push(sample_with_sqrt(&sqrts[k][l], rng_h));
        }
        h.push(row);
    }
    let phases = draw_phases(lx, samples, cfg, rng_theta);
    ChannelBlock { h, phases, block_index }
}

/// Precomputes covariance square roots for every link of a setup.
pub fn covariance_sqrts(large: &LargeScaleModel) -> Result<Vec<Vec<CMat>>> {
    large
        .r
        .iter()
        .map(|row| row.iter().map(|r| r.psd_sqrt()).collect())
        .collect()
}

/// Effective downlink scalar seen by a UE from one AP: g^H * w where g is the
/// phase-corrupted channel. The oscillator phase enters conjugated because of
/// the Hermitian transpose.
pub fn effective_channel(g: &CMat, w: &CMat) -> Result<C64> {
    if g.rows() != w.rows() || g.cols() != 1 || w.cols() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "effective_channel: g is {}x{}, w is {}x{}",
            g.rows(),
            g.cols(),
            w.rows(),
            w.cols()
        )));
    }
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..g.rows() {
        acc += g[(i, 0)].conj() * w[(i, 0)];
    }
    Ok(acc)
}

/// g = e^{j*theta} * h.
pub fn phase_corrupt(h: &CMat, theta: f64) -> CMat {
    h.scale(C64::from_polar(1.0, theta))
}
