//! Command-line front end: argument parsing, campaign execution, CSV and
//! manifest export, CDF plot data, and a fast self-check suite.
//!
//! Results are written as one CSV row per (setup, UE) with a mandatory
//! header. Every command that writes files also writes a manifest recording
//! the exact configs and SHA-256 digests of its outputs, so a result can be
//! regenerated bit-for-bit from the manifest alone.

use crate::config::{emit_config, parse_config_file, Processing, Scheme, SimConfig};
use crate::error::{Error, Result};
use crate::simulator::{self, median, run_campaign, SimResult};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "cfdiff", version, about = "Link-level simulator for cell-free MIMO downlink \
with differential space-time coding", long_about = None)]
pub struct Cli {
    /// Output directory (falls back to $CFDIFF_OUTDIR, then the current dir)
    #[arg(long, global = true, value_name = "DIR")]
    pub outdir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one campaign and write a results CSV plus its manifest
    Run(RunArgs),
    /// Run a scheme-by-precoder grid, one results CSV per cell
    Sweep(SweepArgs),
    /// Convert a results CSV into sorted CDF samples
    Plotdata(PlotdataArgs),
    /// Run the invariant suite and print one pass/fail line per check
    Selftest,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Config file, sectioned text or JSON; omitted fields use defaults
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Transmission scheme
    #[arg(long, value_enum)]
    pub scheme: Option<Scheme>,
    /// Precoder family: lpmmse is computed per AP, pmmse per cluster
    #[arg(long, value_enum)]
    pub precoder: Option<PrecoderArg>,
    /// Number of independent topology draws
    #[arg(long)]
    pub setups: Option<u32>,
    /// Coherence blocks per setup
    #[arg(long)]
    pub blocks: Option<u32>,
    /// Campaign seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = library default)
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Extra config override, repeatable: --set key=value
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Base name for the output files
    #[arg(long)]
    pub name: Option<String>,
    /// Also export the full result table as JSON
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Preset grid to run
    #[arg(long, value_enum, default_value_t = SweepProfile::Fig2)]
    pub profile: SweepProfile,
    /// Base config file applied before the profile preset
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub setups: Option<u32>,
    #[arg(long)]
    pub blocks: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = library default)
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Extra config override, repeatable: --set key=value
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// File name prefix; defaults to the profile name
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Args, Debug)]
pub struct PlotdataArgs {
    /// Results CSV produced by run or sweep
    pub input: PathBuf,
    /// Column to build the CDF over
    #[arg(long, value_enum, default_value_t = MetricArg::Se)]
    pub metric: MetricArg,
    /// Output file; default <input stem>-cdf-<metric>.csv in the output dir
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecoderArg {
    Lpmmse,
    Pmmse,
}

impl From<PrecoderArg> for Processing {
    fn from(p: PrecoderArg) -> Processing {
        match p {
            PrecoderArg::Lpmmse => Processing::Distributed,
            PrecoderArg::Pmmse => Processing::Centralized,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Ber,
    Se,
}

impl MetricArg {
    fn column(self) -> &'static str {
        match self {
            MetricArg::Ber => "ber",
            MetricArg::Se => "se",
        }
    }
}

/// Preset sweep grids. `fig2` runs the default network over every scheme
/// and both precoders; `fig3` does the same on the small-cluster variant
/// (two serving APs per UE, rate-1 design, ten antennas per AP).
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepProfile {
    Fig2,
    Fig3,
}

impl SweepProfile {
    fn key(self) -> &'static str {
        match self {
            SweepProfile::Fig2 => "fig2",
            SweepProfile::Fig3 => "fig3",
        }
    }

    fn apply(self, cfg: &mut SimConfig) {
        if let SweepProfile::Fig3 = self {
            cfg.l_k = 2;
            cfg.design = crate::config::DesignChoice::Alamouti;
            cfg.n = 10;
        }
    }
}

/// One emitted file: where it went, what its bytes hash to, and (for
/// campaign outputs) the exact config that regenerates it.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config: Option<SimConfig>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct ExperimentManifest {
    pub tool_version: String,
    pub command: String,
    pub started_utc: String,
    pub finished_utc: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub profile: Option<String>,
    /// Input consumed by a conversion command such as plotdata.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source: Option<OutputRecord>,
    pub outputs: Vec<OutputRecord>,
}

fn tool_version() -> String {
    concat!("cfdiff-", env!("CARGO_PKG_VERSION")).to_string()
}

fn now_utc() -> String {
    humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Output directory resolution: explicit flag, then the CFDIFF_OUTDIR
/// environment variable, then the current directory.
fn resolve_outdir(flag: Option<PathBuf>, env: Option<std::ffi::OsString>) -> PathBuf {
    flag.or_else(|| env.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write_artifact(path: &Path, text: &str, config: Option<SimConfig>) -> Result<OutputRecord> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, text.as_bytes())?;
    Ok(OutputRecord {
        path: path.display().to_string(),
        sha256: sha256_hex(text.as_bytes()),
        config,
    })
}

fn apply_overrides(
    cfg: &mut SimConfig,
    scheme: Option<Scheme>,
    precoder: Option<PrecoderArg>,
    setups: Option<u32>,
    blocks: Option<u32>,
    seed: Option<u64>,
    sets: &[String],
) -> Result<()> {
    if let Some(s) = scheme {
        cfg.scheme = s;
    }
    if let Some(p) = precoder {
        cfg.processing = p.into();
    }
    if let Some(v) = setups {
        cfg.setups = v;
    }
    if let Some(v) = blocks {
        cfg.blocks = v;
    }
    if let Some(v) = seed {
        cfg.seed = v;
    }
    for pair in sets {
        let (key, val) = pair
            .split_once('=')
            .ok_or_else(|| Error::ParseError(format!("--set expects key=value, got {pair:?}")))?;
        cfg.set(key.trim(), val.trim()).map_err(Error::ParseError)?;
    }
    Ok(())
}

fn base_config(path: &Option<PathBuf>) -> Result<SimConfig> {
    match path {
        Some(p) => parse_config_file(p),
        None => Ok(SimConfig::default()),
    }
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::ValidationError(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Renders the result table: one row per (setup, ue), header mandatory.
pub fn results_csv(cfg: &SimConfig, res: &SimResult) -> String {
    let mut out = String::from("setup,ue,scheme,precoder,ber,se,bits,errors\n");
    let scheme = cfg.scheme.key();
    let precoder = cfg.processing.precoder_key();
    for s in 0..res.ber.len() {
        for k in 0..res.ber[s].len() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s, k, scheme, precoder, res.ber[s][k], res.se[s][k], res.bits[s][k],
                res.errors[s][k]
            ));
        }
    }
    out
}

/// Extracts one numeric column from a results CSV, with line diagnostics.
pub fn parse_results_metric(text: &str, column: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::ParseError("empty results file".into()))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    let idx = cols
        .iter()
        .position(|c| *c == column)
        .ok_or_else(|| Error::ParseError(format!("no column {column:?} in header {header:?}")))?;
    let mut vals = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::ParseError(format!(
                "line {}: expected {} fields, found {}",
                ln + 1,
                cols.len(),
                fields.len()
            )));
        }
        let v: f64 = fields[idx].trim().parse().map_err(|_| {
            Error::ParseError(format!("line {}: bad number {:?}", ln + 1, fields[idx]))
        })?;
        if !v.is_finite() {
            return Err(Error::ParseError(format!("line {}: non-finite value", ln + 1)));
        }
        vals.push(v);
    }
    if vals.is_empty() {
        return Err(Error::ParseError("no data rows".into()));
    }
    Ok(vals)
}

/// Renders the empirical CDF: values ascending, probabilities k/n.
pub fn cdf_csv(values: &[f64]) -> String {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in CDF input"));
    let n = v.len() as f64;
    let mut out = String::from("value,cumulative_probability\n");
    for (i, x) in v.iter().enumerate() {
        out.push_str(&format!("{},{}\n", x, (i + 1) as f64 / n));
    }
    out
}

fn campaign_summary(res: &SimResult) {
    let ber = res.setup_mean_ber();
    let se = res.setup_mean_se();
    println!(
        "setups={} ues={} median setup BER={:.4e} median setup SE={:.4}",
        res.ber.len(),
        res.ber.first().map_or(0, |r| r.len()),
        median(&ber),
        median(&se)
    );
}

fn run_one(outdir: &Path, args: &RunArgs) -> Result<Vec<PathBuf>> {
    let mut cfg = base_config(&args.config)?;
    apply_overrides(
        &mut cfg,
        args.scheme,
        args.precoder,
        args.setups,
        args.blocks,
        args.seed,
        &args.sets,
    )?;
    cfg.validate()?;
    let started = now_utc();
    let res = with_workers(args.workers, || run_campaign(&cfg))??;
    let name = args.name.clone().unwrap_or_else(|| {
        format!("run-{}-{}", cfg.scheme.key(), cfg.processing.precoder_key())
    });
    let csv_path = outdir.join(format!("{name}.csv"));
    let mut outputs = vec![write_artifact(&csv_path, &results_csv(&cfg, &res), Some(cfg.clone()))?];
    let mut paths = vec![csv_path];
    if args.json {
        let json_path = outdir.join(format!("{name}.json"));
        let body = serde_json::to_string_pretty(&res)
            .map_err(|e| Error::ParseError(format!("serializing results: {e}")))?;
        outputs.push(write_artifact(&json_path, &(body + "\n"), Some(cfg.clone()))?);
        paths.push(json_path);
    }
    let manifest = ExperimentManifest {
        tool_version: tool_version(),
        command: "run".into(),
        started_utc: started,
        finished_utc: now_utc(),
        seed: Some(cfg.seed),
        profile: None,
        source: None,
        outputs,
    };
    paths.push(write_manifest(&outdir.join(format!("{name}.manifest.json")), &manifest)?);
    campaign_summary(&res);
    for p in &paths {
        println!("wrote {}", p.display());
    }
    Ok(paths)
}

fn sweep_grid() -> [(Scheme, Processing); 8] {
    [
        (Scheme::CoherentSync, Processing::Distributed),
        (Scheme::CoherentAsync, Processing::Distributed),
        (Scheme::Dpsk, Processing::Distributed),
        (Scheme::Dstbc, Processing::Distributed),
        (Scheme::CoherentSync, Processing::Centralized),
        (Scheme::CoherentAsync, Processing::Centralized),
        (Scheme::Dpsk, Processing::Centralized),
        (Scheme::Dstbc, Processing::Centralized),
    ]
}

fn run_sweep(outdir: &Path, args: &SweepArgs) -> Result<Vec<PathBuf>> {
    let mut base = base_config(&args.config)?;
    args.profile.apply(&mut base);
    apply_overrides(&mut base, None, None, args.setups, args.blocks, args.seed, &args.sets)?;
    let prefix = args.name.clone().unwrap_or_else(|| args.profile.key().to_string());
    let started = now_utc();
    let mut outputs = Vec::new();
    let mut paths = Vec::new();
    for (scheme, processing) in sweep_grid() {
        let mut cfg = base.clone();
        cfg.scheme = scheme;
        cfg.processing = processing;
        cfg.validate()?;
        let res = with_workers(args.workers, || run_campaign(&cfg))??;
        let path = outdir.join(format!(
            "{prefix}-{}-{}.csv",
            scheme.key(),
            processing.precoder_key()
        ));
        outputs.push(write_artifact(&path, &results_csv(&cfg, &res), Some(cfg))?);
        println!("wrote {}", path.display());
        paths.push(path);
    }
    let manifest = ExperimentManifest {
        tool_version: tool_version(),
        command: "sweep".into(),
        started_utc: started,
        finished_utc: now_utc(),
        seed: Some(base.seed),
        profile: Some(args.profile.key().into()),
        source: None,
        outputs,
    };
    let mp = write_manifest(&outdir.join(format!("{prefix}.manifest.json")), &manifest)?;
    println!("wrote {}", mp.display());
    paths.push(mp);
    Ok(paths)
}

fn run_plotdata(outdir: &Path, args: &PlotdataArgs) -> Result<Vec<PathBuf>> {
    let started = now_utc();
    let text = fs::read_to_string(&args.input)?;
    let values = parse_results_metric(&text, args.metric.column())?;
    let out_path = match &args.out {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => outdir.join(p),
        None => {
            let stem = args
                .input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "results".into());
            outdir.join(format!("{stem}-cdf-{}.csv", args.metric.column()))
        }
    };
    let record = write_artifact(&out_path, &cdf_csv(&values), None)?;
    let manifest = ExperimentManifest {
        tool_version: tool_version(),
        command: "plotdata".into(),
        started_utc: started,
        finished_utc: now_utc(),
        seed: None,
        profile: None,
        source: Some(OutputRecord {
            path: args.input.display().to_string(),
            sha256: sha256_hex(text.as_bytes()),
            config: None,
        }),
        outputs: vec![record],
    };
    let stem = out_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "plotdata".into());
    let mp = write_manifest(&outdir.join(format!("{stem}.manifest.json")), &manifest)?;
    println!("wrote {}", out_path.display());
    println!("wrote {}", mp.display());
    Ok(vec![out_path, mp])
}

fn write_manifest(path: &Path, manifest: &ExperimentManifest) -> Result<PathBuf> {
    let body = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::ParseError(format!("serializing manifest: {e}")))?;
    write_artifact(path, &(body + "\n"), None)?;
    Ok(path.to_path_buf())
}

/// Dispatches a parsed command line. Returns the paths of every file
/// written, manifest last.
pub fn execute(cli: Cli) -> Result<Vec<PathBuf>> {
    let outdir = resolve_outdir(cli.outdir, std::env::var_os("CFDIFF_OUTDIR"));
    match &cli.command {
        Command::Selftest => {
            if run_selftest() {
                Ok(Vec::new())
            } else {
                Err(Error::ValidationError("selftest reported failures".into()))
            }
        }
        Command::Run(args) => {
            fs::create_dir_all(&outdir)?;
            run_one(&outdir, args)
        }
        Command::Sweep(args) => {
            fs::create_dir_all(&outdir)?;
            run_sweep(&outdir, args)
        }
        Command::Plotdata(args) => {
            fs::create_dir_all(&outdir)?;
            run_plotdata(&outdir, args)
        }
    }
}

/// Binary entry point: parse, execute, and map failures to a JSON line on
/// stderr plus a nonzero exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!(
                "{}",
                serde_json::json!({"error": "UsageError", "message": e.to_string()})
            );
            return 2;
        }
    };
    match execute(cli) {
        Ok(_) => 0,
        Err(err) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": err.kind(), "message": err.to_string()})
            );
            1
        }
    }
}

// ---- selftest -------------------------------------------------------------

type Check = std::result::Result<(), String>;

fn se<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Runs every invariant check, printing one PASS/FAIL line each. Returns
/// true when all pass. The checks are scaled-down versions of the library's
/// heavier test suite so the whole run stays under a few seconds.
pub fn run_selftest() -> bool {
    let checks: [(&str, fn() -> Check); 10] = [
        ("differential chains stay unitary", check_unitary_chains),
        ("decoupled decoder matches exhaustive search", check_decoder_agreement),
        ("received-metric identity under random phases", check_receive_identity),
        ("noiseless differential links decode exactly", check_noiseless_links),
        ("coherent detector sector boundaries", check_detector_boundaries),
        ("config grammar round-trips", check_config_roundtrip),
        ("frame pre-log arithmetic", check_prelog),
        ("campaign reproducibility across workers", check_worker_determinism),
        ("zero-noise differential campaign is error-free", check_zero_noise_campaign),
        ("estimator error statistics consistent", check_estimator_moments),
    ];
    let mut ok = true;
    for (name, f) in checks {
        match f() {
            Ok(()) => println!("PASS {name}"),
            Err(msg) => {
                ok = false;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    ok
}

fn both_designs() -> [crate::diffcoding::StbcDesign; 2] {
    [
        crate::diffcoding::StbcDesign::alamouti(),
        crate::diffcoding::StbcDesign::rate34(),
    ]
}

fn check_unitary_chains() -> Check {
    use crate::diffcoding::{diff_encode_step, stbc_map, PskConstellation};
    use crate::math::CMat;
    let cons = PskConstellation::new(8);
    for design in both_designs() {
        let mut rng = simulator::stream(0xC0FFEE, 0, 0, 1001);
        for _ in 0..200 {
            let mut c = CMat::identity(design.p);
            for _ in 0..47 {
                let syms: Vec<_> = (0..design.ns).map(|_| cons.points[rng.index(8)]).collect();
                let x = stbc_map(&design, &syms).map_err(se)?;
                c = diff_encode_step(&c, &x).map_err(se)?;
            }
            let dev = c.herm().matmul(&c).sub(&CMat::identity(design.p)).frob_norm();
            if dev > 1e-10 {
                return Err(format!("unitarity deviation {dev:.3e} after 47 steps"));
            }
        }
    }
    Ok(())
}

fn check_decoder_agreement() -> Check {
    use crate::diffcoding::{dstbc_ml_decode_bruteforce, dstbc_ml_decode_fast, PskConstellation};
    let cons = PskConstellation::new(8);
    for design in both_designs() {
        let mut rng = simulator::stream(0xBEEF, 0, 0, 1002);
        for trial in 0..300 {
            let y_prev: Vec<_> = (0..design.p).map(|_| rng.complex_gaussian(1.0)).collect();
            let y_cur: Vec<_> = (0..design.p).map(|_| rng.complex_gaussian(1.0)).collect();
            let fast = dstbc_ml_decode_fast(&y_prev, &y_cur, &design, &cons).map_err(se)?;
            let brute = dstbc_ml_decode_bruteforce(&y_prev, &y_cur, &design, &cons).map_err(se)?;
            if fast != brute {
                return Err(format!("trial {trial}: fast {fast:?} vs brute {brute:?}"));
            }
        }
    }
    Ok(())
}

fn check_receive_identity() -> Check {
    use crate::diffcoding::{appendix_identity_check, diff_encode_step, stbc_map, PskConstellation};
    use crate::math::CMat;
    let cons = PskConstellation::new(8);
    for design in both_designs() {
        let mut rng = simulator::stream(0xACE, 0, 0, 1003);
        for _ in 0..300 {
            let mut c = CMat::identity(design.p);
            for _ in 0..3 {
                let syms: Vec<_> = (0..design.ns).map(|_| cons.points[rng.index(8)]).collect();
                c = diff_encode_step(&c, &stbc_map(&design, &syms).map_err(se)?).map_err(se)?;
            }
            let syms: Vec<_> = (0..design.ns).map(|_| cons.points[rng.index(8)]).collect();
            let x = stbc_map(&design, &syms).map_err(se)?;
            let v: Vec<_> = (0..design.p).map(|_| rng.complex_gaussian(1.0)).collect();
            let gap = appendix_identity_check(&v, &c, &x).map_err(se)?;
            if gap > 1e-9 {
                return Err(format!("identity gap {gap:.3e}"));
            }
        }
    }
    Ok(())
}

fn check_noiseless_links() -> Check {
    use crate::diffcoding::{
        diff_encode_step, dpsk_encode_step, dpsk_ml_decode, dstbc_ml_decode_fast, stbc_map,
        PskConstellation,
    };
    use crate::math::{CMat, C64};
    let cons = PskConstellation::new(8);
    let mut rng = simulator::stream(0xD1CE, 0, 0, 1004);

    let g = C64::from_polar(1.3, rng.uniform_range(0.0, std::f64::consts::TAU));
    let mut c = C64::new(1.0, 0.0);
    for _ in 0..500 {
        let idx = rng.index(8);
        let next = dpsk_encode_step(c, cons.points[idx]);
        let got = dpsk_ml_decode(g * c, g * next, &cons).map_err(se)?;
        if got != idx {
            return Err(format!("dpsk decoded {got}, sent {idx}"));
        }
        c = next;
    }

    for design in both_designs() {
        let v: Vec<C64> = (0..design.p).map(|_| rng.complex_gaussian(1.0)).collect();
        let receive = |c: &CMat| -> Vec<C64> {
            (0..design.p)
                .map(|col| (0..design.p).map(|r| v[r] * c[(r, col)]).sum())
                .collect()
        };
        let mut c = CMat::identity(design.p);
        for _ in 0..100 {
            let idx: Vec<usize> = (0..design.ns).map(|_| rng.index(8)).collect();
            let syms: Vec<C64> = idx.iter().map(|&i| cons.points[i]).collect();
            let next = diff_encode_step(&c, &stbc_map(&design, &syms).map_err(se)?).map_err(se)?;
            let got = dstbc_ml_decode_fast(&receive(&c), &receive(&next), &design, &cons)
                .map_err(se)?;
            if got != idx {
                return Err(format!("dstbc decoded {got:?}, sent {idx:?}"));
            }
            c = next;
        }
    }
    Ok(())
}

fn check_detector_boundaries() -> Check {
    use crate::diffcoding::coherent_psk_detect;
    use crate::math::C64;
    use std::f64::consts::PI;
    for m in [2usize, 4, 8, 16] {
        for j in 0..m {
            let y = C64::from_polar(1.0, 2.0 * PI * j as f64 / m as f64);
            let got = coherent_psk_detect(y, m);
            if got != j {
                return Err(format!("M={m}: sector center {j} decoded as {got}"));
            }
        }
        let up = coherent_psk_detect(C64::from_polar(1.0, PI / m as f64), m);
        let down = coherent_psk_detect(C64::from_polar(1.0, -PI / m as f64), m);
        if up != 1 || down != m - 1 {
            return Err(format!("M={m}: boundary rounding gave {up}/{down}"));
        }
    }
    Ok(())
}

fn check_config_roundtrip() -> Check {
    use crate::config::parse_config_str;
    let a = SimConfig::default();
    let b = parse_config_str(&emit_config(&a)).map_err(se)?;
    if b != a {
        return Err("default config changed across emit/parse".into());
    }
    let mut c = a.clone();
    c.scheme = Scheme::Dpsk;
    c.seed = 77;
    c.noise_override_w = Some(0.0);
    let d = parse_config_str(&emit_config(&c)).map_err(se)?;
    if d != c {
        return Err("modified config changed across emit/parse".into());
    }
    let j = serde_json::to_string(&c).map_err(se)?;
    let e = parse_config_str(&j).map_err(se)?;
    if e != c {
        return Err("config changed across JSON round-trip".into());
    }
    Ok(())
}

fn check_prelog() -> Check {
    use crate::config::DesignChoice;
    let mut c = SimConfig::default();
    let expect = |cfg: &SimConfig, want: f64| -> Check {
        let got = simulator::pre_log_factor(cfg);
        if (got - want).abs() > 1e-15 {
            return Err(format!("pre-log {got}, wanted {want}"));
        }
        Ok(())
    };
    expect(&c, 0.69)?;
    c.scheme = Scheme::Dpsk;
    expect(&c, 0.945)?;
    c.scheme = Scheme::CoherentSync;
    expect(&c, 0.95)?;
    c.scheme = Scheme::Dstbc;
    c.design = DesignChoice::Alamouti;
    c.l_k = 2;
    expect(&c, 0.94)
}

fn tiny_campaign_config() -> SimConfig {
    let mut c = SimConfig::default();
    c.l = 6;
    c.k = 3;
    c.n = 2;
    c.l_k = 2;
    c.design = crate::config::DesignChoice::Alamouti;
    c.tau_p = 4;
    c.side_m = 250.0;
    c.setups = 2;
    c.blocks = 2;
    c.norm_batch = 50;
    c.seed = 5;
    c
}

fn check_worker_determinism() -> Check {
    let cfg = tiny_campaign_config();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(se)?;
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().map_err(se)?;
    let a = one.install(|| run_campaign(&cfg)).map_err(se)?;
    let b = three.install(|| run_campaign(&cfg)).map_err(se)?;
    if a.bits != b.bits || a.errors != b.errors {
        return Err("bit counters differ across worker counts".into());
    }
    Ok(())
}

fn check_zero_noise_campaign() -> Check {
    let mut cfg = tiny_campaign_config();
    cfg.l = 4;
    cfg.k = 1;
    cfg.tau_p = 1;
    cfg.setups = 1;
    cfg.norm_batch = 30;
    cfg.noise_override_w = Some(0.0);
    for scheme in [Scheme::Dstbc, Scheme::Dpsk] {
        cfg.scheme = scheme;
        let res = run_campaign(&cfg).map_err(se)?;
        if res.errors[0][0] != 0 {
            return Err(format!("{} made errors without noise", scheme.key()));
        }
    }
    cfg.scheme = Scheme::CoherentAsync;
    let res = run_campaign(&cfg).map_err(se)?;
    if res.errors[0][0] == 0 {
        return Err("coherent-async unaffected by phase misalignment".into());
    }
    Ok(())
}

fn check_estimator_moments() -> Check {
    use crate::access::{LmmseEstimator, ServingMap};
    use crate::channel::{covariance_sqrts, draw_block, PhaseConfig, PhaseMode};
    use crate::geometry::{build_large_scale, NetworkTopology, PropagationParams};
    use crate::math::CMat;
    let topo = NetworkTopology {
        side_m: 200.0,
        ap_xy: vec![(50.0, 50.0), (150.0, 150.0)],
        ue_xy: vec![(60.0, 60.0), (140.0, 140.0), (100.0, 100.0)],
        h_ap_m: 11.65,
        h_ue_m: 1.65,
    };
    let params = PropagationParams {
        fc_ghz: 3.5,
        bandwidth_hz: 20e6,
        noise_figure_db: 8.0,
        sigma_sf_db: 4.0,
        asd_deg: 15.0,
        antennas: 2,
        spacing: 0.5,
    };
    let mut rng = simulator::stream(0xFEED, 0, 0, 1005);
    let large = build_large_scale(&topo, &params, &mut rng).map_err(se)?;
    // UEs 0 and 2 share a pilot, so their estimates are contaminated
    let map = ServingMap::from_parts(
        vec![0, 1, 0],
        vec![vec![0, 1], vec![0, 1], vec![0, 1]],
        2,
        2,
    );
    let est = LmmseEstimator::new(&large, &map, 0.1).map_err(se)?;
    let sqrts = covariance_sqrts(&large).map_err(se)?;
    let phase_cfg = PhaseConfig { mode: PhaseMode::Static, increment_std: 0.0, sync: true };
    let draws = 2500;
    let mut acc = vec![vec![CMat::zeros(2, 2); 2]; 3];
    for b in 0..draws {
        let mut rng_h = simulator::stream(0xFEED, 0, b, 1006);
        let mut rng_t = simulator::stream(0xFEED, 0, b, 1007);
        let block = draw_block(&large, &sqrts, &phase_cfg, 1, b, &mut rng_h, &mut rng_t);
        let mut rng_p = simulator::stream(0xFEED, 0, b, 1008);
        let hh = est.estimate(&block, &mut rng_p);
        for k in 0..3 {
            for l in 0..2 {
                acc[k][l] = acc[k][l].add(&hh[k][l].matmul(&hh[k][l].herm()));
            }
        }
    }
    for k in 0..3 {
        for l in 0..2 {
            let mean = acc[k][l].scale(crate::math::C64::new(1.0 / draws as f64, 0.0));
            let recon = mean.add(&est.c[k][l]);
            let rel = recon.sub(&large.r[k][l]).frob_norm() / large.r[k][l].frob_norm();
            if rel > 0.12 {
                return Err(format!("UE {k} AP {l}: moment mismatch {rel:.3}"));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).unwrap()
    }

    fn tiny_run_args(dir: &str, name: &str, extra: &[&str]) -> Vec<String> {
        let mut v: Vec<String> = [
            "cfdiff", "run", "--outdir", dir, "--name", name, "--setups", "1", "--blocks", "2",
            "--seed", "3",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for kv in [
            "l=6", "k=3", "n=2", "l_k=2", "design=alamouti", "tau_p=4", "side_m=250",
            "norm_batch=40",
        ] {
            v.push("--set".into());
            v.push(kv.into());
        }
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    }

    #[test]
    fn run_writes_csv_and_matching_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let args = tiny_run_args(dir.path().to_str().unwrap(), "smoke", &[]);
        let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        let paths = execute(parse(&refs)).unwrap();
        assert_eq!(paths.len(), 2);
        let csv = fs::read_to_string(&paths[0]).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "setup,ue,scheme,precoder,ber,se,bits,errors");
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 3); // 1 setup x 3 UEs
        for row in &rows {
            let f: Vec<&str> = row.split(',').collect();
            assert_eq!(f[2], "dstbc");
            assert_eq!(f[3], "lpmmse");
        }

        let manifest: ExperimentManifest =
            serde_json::from_str(&fs::read_to_string(&paths[1]).unwrap()).unwrap();
        assert_eq!(manifest.command, "run");
        assert_eq!(manifest.outputs.len(), 1);
        assert_eq!(manifest.outputs[0].sha256, sha256_hex(csv.as_bytes()));

        // the manifest alone regenerates the result bit for bit
        let cfg = manifest.outputs[0].config.clone().unwrap();
        let res = run_campaign(&cfg).unwrap();
        assert_eq!(sha256_hex(results_csv(&cfg, &res).as_bytes()), manifest.outputs[0].sha256);
    }

    #[test]
    fn plotdata_emits_monotone_cdf() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let args = tiny_run_args(d, "forplot", &[]);
        let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        let paths = execute(parse(&refs)).unwrap();
        let csv_path = paths[0].to_str().unwrap().to_string();

        let out = execute(parse(&["cfdiff", "plotdata", &csv_path, "--metric", "se", "--outdir", d]))
            .unwrap();
        let text = fs::read_to_string(&out[0]).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "value,cumulative_probability");
        let mut prev_v = f64::NEG_INFINITY;
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            let (v, p) = line.split_once(',').unwrap();
            let v: f64 = v.parse().unwrap();
            let p: f64 = p.parse().unwrap();
            assert!(v >= prev_v);
            prev_v = v;
            assert!((p - (i + 1) as f64 / 3.0).abs() < 1e-12);
            rows += 1;
        }
        assert_eq!(rows, 3);

        let manifest: ExperimentManifest =
            serde_json::from_str(&fs::read_to_string(&out[1]).unwrap()).unwrap();
        assert_eq!(manifest.command, "plotdata");
        assert!(manifest.source.is_some());
    }

    #[test]
    fn csv_bytes_identical_across_worker_counts() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let a1 = tiny_run_args(d, "w1", &["--workers", "1"]);
        let a4 = tiny_run_args(d, "w4", &["--workers", "4"]);
        let r1: Vec<&str> = a1.iter().map(|s| s.as_str()).collect();
        let r4: Vec<&str> = a4.iter().map(|s| s.as_str()).collect();
        let p1 = execute(parse(&r1)).unwrap();
        let p4 = execute(parse(&r4)).unwrap();
        assert_eq!(fs::read(&p1[0]).unwrap(), fs::read(&p4[0]).unwrap());
    }

    #[test]
    fn sweep_emits_full_grid() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let mut args: Vec<String> = [
            "cfdiff", "sweep", "--profile", "fig2", "--outdir", d, "--setups", "1", "--blocks",
            "1", "--seed", "2",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for kv in [
            "l=6", "k=2", "n=2", "l_k=2", "design=alamouti", "tau_p=4", "side_m=250",
            "norm_batch=30",
        ] {
            args.push("--set".into());
            args.push(kv.into());
        }
        let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        let paths = execute(parse(&refs)).unwrap();
        assert_eq!(paths.len(), 9); // 8 grid cells + manifest
        let manifest: ExperimentManifest =
            serde_json::from_str(&fs::read_to_string(paths.last().unwrap()).unwrap()).unwrap();
        assert_eq!(manifest.outputs.len(), 8);
        assert_eq!(manifest.profile.as_deref(), Some("fig2"));
        let mut combos = std::collections::HashSet::new();
        for (path, rec) in paths[..8].iter().zip(&manifest.outputs) {
            let text = fs::read_to_string(path).unwrap();
            assert_eq!(rec.sha256, sha256_hex(text.as_bytes()));
            let row = text.lines().nth(1).unwrap();
            let f: Vec<&str> = row.split(',').collect();
            combos.insert((f[2].to_string(), f[3].to_string()));
            let name = path.file_name().unwrap().to_str().unwrap();
            assert!(name.contains(f[2]) && name.contains(f[3]), "{name}");
        }
        assert_eq!(combos.len(), 8);
    }

    #[test]
    fn bad_set_pairs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        for bad in ["bogus=1", "noequals"] {
            let cli = parse(&["cfdiff", "run", "--outdir", d, "--set", bad]);
            match execute(cli) {
                Err(Error::ParseError(_)) => {}
                other => panic!("expected ParseError, got {other:?}"),
            }
        }
    }

    #[test]
    fn outdir_resolution_prefers_flag_then_env() {
        let flag = Some(PathBuf::from("/a"));
        let env = Some(std::ffi::OsString::from("/b"));
        assert_eq!(resolve_outdir(flag.clone(), env.clone()), PathBuf::from("/a"));
        assert_eq!(resolve_outdir(None, env), PathBuf::from("/b"));
        assert_eq!(resolve_outdir(None, None), PathBuf::from("."));
    }

    #[test]
    fn metric_parser_reports_positions() {
        let ok = "setup,ue,scheme,precoder,ber,se,bits,errors\n0,0,dstbc,lpmmse,0.1,2.07,900,90\n";
        assert_eq!(parse_results_metric(ok, "ber").unwrap(), vec![0.1]);
        let missing = parse_results_metric(ok, "sinr").unwrap_err();
        assert!(missing.to_string().contains("sinr"));
        let bad = "setup,ue,scheme,precoder,ber,se,bits,errors\n0,0,dstbc,lpmmse,x,2.07,900,90\n";
        let err = parse_results_metric(bad, "ber").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn selftest_passes() {
        assert!(run_selftest());
    }
}
