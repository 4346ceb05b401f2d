//! Campaign configuration: one flat struct covering network layout, frame
//! structure, radio parameters, powers, scheme selection and run control.
//!
//! Two interchangeable file formats are accepted. The native one is flat
//! `key = value` text with `[section]` headers and `#` comments; JSON with
//! the same field names works anywhere a config file is expected. Unknown
//! keys are rejected in both. Every field has a default, so an empty config
//! is already a complete, valid campaign.

use crate::channel::{PhaseConfig, PhaseMode};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Coherent PSK with perfectly aligned AP oscillators.
    CoherentSync,
    /// Coherent PSK with free-running per-AP phases left uncorrected.
    CoherentAsync,
    /// Differential space-time block coding across the serving cluster.
    Dstbc,
    /// Scalar differential PSK.
    Dpsk,
}

impl Scheme {
    pub fn key(self) -> &'static str {
        match self {
            Scheme::CoherentSync => "coherent-sync",
            Scheme::CoherentAsync => "coherent-async",
            Scheme::Dstbc => "dstbc",
            Scheme::Dpsk => "dpsk",
        }
    }

    /// Oscillator phases are zeroed only for the synchronized baseline.
    pub fn phases_active(self) -> bool {
        !matches!(self, Scheme::CoherentSync)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Processing {
    /// Per-AP precoding from local estimates (LP-MMSE).
    Distributed,
    /// Cluster-wide precoding at the CPU (P-MMSE).
    Centralized,
}

impl Processing {
    /// Token used in result files and CLI flags.
    pub fn precoder_key(self) -> &'static str {
        match self {
            Processing::Distributed => "lpmmse",
            Processing::Centralized => "pmmse",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DesignChoice {
    /// 2x2 full-rate orthogonal design.
    Alamouti,
    /// 4x4 rate-3/4 orthogonal design.
    Rate34,
}

impl DesignChoice {
    pub fn key(self) -> &'static str {
        match self {
            DesignChoice::Alamouti => "alamouti",
            DesignChoice::Rate34 => "rate34",
        }
    }

    pub fn build(self) -> crate::diffcoding::StbcDesign {
        match self {
            DesignChoice::Alamouti => crate::diffcoding::StbcDesign::alamouti(),
            DesignChoice::Rate34 => crate::diffcoding::StbcDesign::rate34(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseModeChoice {
    /// One uniform phase per AP per coherence block.
    Static,
    /// Wiener walk within the block on top of the uniform start.
    Wiener,
}

impl PhaseModeChoice {
    pub fn key(self) -> &'static str {
        match self {
            PhaseModeChoice::Static => "static",
            PhaseModeChoice::Wiener => "wiener",
        }
    }
}

/// Everything a campaign needs. Field names double as config file keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    // network
    pub l: usize,
    pub k: usize,
    pub n: usize,
    pub l_k: usize,
    pub side_m: f64,
    // frame
    pub tau_c: usize,
    pub tau_p: usize,
    pub tau_d: usize,
    pub m_o: usize,
    // radio
    pub fc_ghz: f64,
    pub bw_hz: f64,
    pub nf_db: f64,
    pub sigma_sf_db: f64,
    pub h_ap_m: f64,
    pub h_ue_m: f64,
    pub asd_deg: f64,
    pub spacing: f64,
    // power
    pub rho_d_w: f64,
    pub p_ul_w: f64,
    pub upsilon: f64,
    // scheme
    pub scheme: Scheme,
    pub processing: Processing,
    pub design: DesignChoice,
    pub phase_mode: PhaseModeChoice,
    pub increment_std: f64,
    // run
    pub setups: u32,
    pub blocks: u32,
    pub seed: u64,
    pub norm_batch: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_override_w: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig {
            l: 40,
            k: 20,
            n: 4,
            l_k: 4,
            side_m: 500.0,
            tau_c: 200,
            tau_p: 10,
            tau_d: 190,
            m_o: 8,
            fc_ghz: 3.5,
            bw_hz: 20e6,
            nf_db: 8.0,
            sigma_sf_db: 4.0,
            h_ap_m: 11.65,
            h_ue_m: 1.65,
            asd_deg: 15.0,
            spacing: 0.5,
            rho_d_w: 0.2,
            p_ul_w: 0.1,
            upsilon: -0.5,
            scheme: Scheme::Dstbc,
            processing: Processing::Distributed,
            design: DesignChoice::Rate34,
            phase_mode: PhaseModeChoice::Static,
            increment_std: 0.0,
            setups: 20,
            blocks: 100,
            seed: 1,
            norm_batch: 100,
            noise_override_w: None,
        }
    }
}

const SECTIONS: [&str; 6] = ["network", "frame", "radio", "power", "scheme", "run"];

impl SimConfig {
    /// Checks every structural invariant and names the violated one.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ValidationError(m));
        for (name, v) in [
            ("l", self.l),
            ("k", self.k),
            ("n", self.n),
            ("l_k", self.l_k),
            ("tau_c", self.tau_c),
            ("tau_p", self.tau_p),
            ("tau_d", self.tau_d),
            ("setups", self.setups as usize),
            ("blocks", self.blocks as usize),
            ("norm_batch", self.norm_batch as usize),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.tau_p + self.tau_d > self.tau_c {
            return bad(format!(
                "tau_p + tau_d = {} exceeds tau_c = {}",
                self.tau_p + self.tau_d,
                self.tau_c
            ));
        }
        if self.l_k > self.l {
            return bad(format!("l_k = {} exceeds l = {}", self.l_k, self.l));
        }
        if self.m_o < 2 || !self.m_o.is_power_of_two() {
            return bad(format!("m_o = {} is not a power of two >= 2", self.m_o));
        }
        if self.scheme == Scheme::Dstbc {
            let p = self.design.build().p;
            if p != self.l_k {
                return bad(format!(
                    "scheme dstbc with l_k = {} has no matching design ({} spans {} rows)",
                    self.l_k,
                    self.design.key(),
                    p
                ));
            }
            if self.tau_d / p < 2 {
                return bad(format!(
                    "tau_d = {} fits fewer than two {}-row codewords, leaving no data",
                    self.tau_d, p
                ));
            }
        }
        if self.scheme == Scheme::Dpsk && self.tau_d < 2 {
            return bad("dpsk needs tau_d >= 2 (reference plus data)".into());
        }
        for (name, v) in [
            ("side_m", self.side_m),
            ("fc_ghz", self.fc_ghz),
            ("bw_hz", self.bw_hz),
            ("spacing", self.spacing),
            ("rho_d_w", self.rho_d_w),
            ("p_ul_w", self.p_ul_w),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.increment_std < 0.0 {
            return bad("increment_std must be nonnegative".into());
        }
        if let Some(w) = self.noise_override_w {
            if w < 0.0 {
                return bad("noise_override_w must be nonnegative".into());
            }
        }
        Ok(())
    }

    pub fn phase_config(&self) -> PhaseConfig {
        PhaseConfig {
            mode: match self.phase_mode {
                PhaseModeChoice::Static => PhaseMode::Static,
                PhaseModeChoice::Wiener => PhaseMode::Wiener,
            },
            increment_std: self.increment_std,
            sync: !self.scheme.phases_active(),
        }
    }

    /// Receiver noise power in watts, honouring the test override.
    pub fn noise_power_w(&self) -> f64 {
        self.noise_override_w
            .unwrap_or_else(|| crate::geometry::noise_power_w(self.bw_hz, self.nf_db))
    }

    /// SHA-256 over the canonical text form; identifies a campaign setup.
    pub fn digest(&self) -> String {
        use sha2::Digest;
        hex::encode(sha2::Sha256::digest(emit_config(self).as_bytes()))
    }

    /// Assigns one field from its text form, as the config grammar and the
    /// CLI `--set key=value` overrides do. The error is positionless; callers
    /// wrap it with whatever location context they have.
    pub fn set(&mut self, key: &str, val: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, val: &str) -> std::result::Result<T, String> {
            val.parse().map_err(|_| format!("bad value {val:?} for key {key}"))
        }
        match key {
            "l" => self.l = num(key, val)?,
            "k" => self.k = num(key, val)?,
            "n" => self.n = num(key, val)?,
            "l_k" => self.l_k = num(key, val)?,
            "side_m" => self.side_m = num(key, val)?,
            "tau_c" => self.tau_c = num(key, val)?,
            "tau_p" => self.tau_p = num(key, val)?,
            "tau_d" => self.tau_d = num(key, val)?,
            "m_o" => self.m_o = num(key, val)?,
            "fc_ghz" => self.fc_ghz = num(key, val)?,
            "bw_hz" => self.bw_hz = num(key, val)?,
            "nf_db" => self.nf_db = num(key, val)?,
            "sigma_sf_db" => self.sigma_sf_db = num(key, val)?,
            "h_ap_m" => self.h_ap_m = num(key, val)?,
            "h_ue_m" => self.h_ue_m = num(key, val)?,
            "asd_deg" => self.asd_deg = num(key, val)?,
            "spacing" => self.spacing = num(key, val)?,
            "rho_d_w" => self.rho_d_w = num(key, val)?,
            "p_ul_w" => self.p_ul_w = num(key, val)?,
            "upsilon" => self.upsilon = num(key, val)?,
            "scheme" => self.scheme = enum_val(key, val)?,
            "processing" => self.processing = enum_val(key, val)?,
            "design" => self.design = enum_val(key, val)?,
            "phase_mode" => self.phase_mode = enum_val(key, val)?,
            "increment_std" => self.increment_std = num(key, val)?,
            "setups" => self.setups = num(key, val)?,
            "blocks" => self.blocks = num(key, val)?,
            "seed" => self.seed = num(key, val)?,
            "norm_batch" => self.norm_batch = num(key, val)?,
            "noise_override_w" => self.noise_override_w = Some(num(key, val)?),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }
}

fn enum_val<T: serde::de::DeserializeOwned>(
    key: &str,
    val: &str,
) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(val.to_string()))
        .map_err(|_| format!("bad value {val:?} for key {key}"))
}

/// Parses either format: JSON if the text starts with `{`, otherwise the
/// sectioned key-value grammar. The result is validated.
pub fn parse_config_str(text: &str) -> Result<SimConfig> {
    if text.trim_start().starts_with('{') {
        let cfg: SimConfig = serde_json::from_str(text)
            .map_err(|e| Error::ParseError(format!("json: {e}")))?;
        cfg.validate()?;
        return Ok(cfg);
    }
    let mut cfg = SimConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            if !SECTIONS.contains(&name.trim()) {
                return Err(Error::ParseError(format!(
                    "line {}: unknown section [{}]",
                    i + 1,
                    name.trim()
                )));
            }
            continue;
        }
        let Some((key, val)) = line.split_once('=') else {
            return Err(Error::ParseError(format!(
                "line {}: expected key = value, got {line:?}",
                i + 1
            )));
        };
        cfg.set(key.trim(), val.trim())
            .map_err(|m| Error::ParseError(format!("line {}: {m}", i + 1)))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_file(path: &std::path::Path) -> Result<SimConfig> {
    parse_config_str(&std::fs::read_to_string(path)?)
}

/// Canonical sectioned text form; `parse_config_str` inverts it exactly.
pub fn emit_config(c: &SimConfig) -> String {
    let mut s = String::new();
    let kv = |out: &mut String, key: &str, val: String| {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(&val);
        out.push('\n');
    };
    s.push_str("[network]\n");
    kv(&mut s, "l", c.l.to_string());
    kv(&mut s, "k", c.k.to_string());
    kv(&mut s, "n", c.n.to_string());
    kv(&mut s, "l_k", c.l_k.to_string());
    kv(&mut s, "side_m", format!("{:?}", c.side_m));
    s.push_str("\n[frame]\n");
    kv(&mut s, "tau_c", c.tau_c.to_string());
    kv(&mut s, "tau_p", c.tau_p.to_string());
    kv(&mut s, "tau_d", c.tau_d.to_string());
    kv(&mut s, "m_o", c.m_o.to_string());
    s.push_str("\n[radio]\n");
    kv(&mut s, "fc_ghz", format!("{:?}", c.fc_ghz));
    kv(&mut s, "bw_hz", format!("{:?}", c.bw_hz));
    kv(&mut s, "nf_db", format!("{:?}", c.nf_db));
    kv(&mut s, "sigma_sf_db", format!("{:?}", c.sigma_sf_db));
    kv(&mut s, "h_ap_m", format!("{:?}", c.h_ap_m));
    kv(&mut s, "h_ue_m", format!("{:?}", c.h_ue_m));
    kv(&mut s, "asd_deg", format!("{:?}", c.asd_deg));
    kv(&mut s, "spacing", format!("{:?}", c.spacing));
    s.push_str("\n[power]\n");
    kv(&mut s, "rho_d_w", format!("{:?}", c.rho_d_w));
    kv(&mut s, "p_ul_w", format!("{:?}", c.p_ul_w));
    kv(&mut s, "upsilon", format!("{:?}", c.upsilon));
    s.push_str("\n[scheme]\n");
    kv(&mut s, "scheme", c.scheme.key().into());
    kv(&mut s, "processing", processing_key(c.processing).into());
    kv(&mut s, "design", c.design.key().into());
    kv(&mut s, "phase_mode", c.phase_mode.key().into());
    kv(&mut s, "increment_std", format!("{:?}", c.increment_std));
    s.push_str("\n[run]\n");
    kv(&mut s, "setups", c.setups.to_string());
    kv(&mut s, "blocks", c.blocks.to_string());
    kv(&mut s, "seed", c.seed.to_string());
    kv(&mut s, "norm_batch", c.norm_batch.to_string());
    if let Some(w) = c.noise_override_w {
        kv(&mut s, "noise_override_w", format!("{w:?}"));
    }
    s
}

fn processing_key(p: Processing) -> &'static str {
    match p {
        Processing::Distributed => "distributed",
        Processing::Centralized => "centralized",
    }
}
