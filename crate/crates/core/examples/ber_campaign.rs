//! Campaign artifacts without the command-line binary: run a campaign from
//! code, render the results CSV, and turn one column into CDF samples
//! ready for any plotting tool.

use cfdiff::cli::{cdf_csv, parse_results_metric, results_csv};
use cfdiff::config::{DesignChoice, Scheme, SimConfig};
use cfdiff::simulator::run_campaign;
use std::fs;

fn main() -> cfdiff::error::Result<()> {
    let mut cfg = SimConfig::default();
    cfg.l = 15;
    cfg.k = 5;
    cfg.n = 2;
    cfg.l_k = 2;
    cfg.design = DesignChoice::Alamouti;
    cfg.scheme = Scheme::Dstbc;
    cfg.tau_p = 5;
    cfg.side_m = 400.0;
    cfg.setups = 5;
    cfg.blocks = 40;
    cfg.seed = 2;
    cfg.validate()?;

    let res = run_campaign(&cfg)?;
    let csv = results_csv(&cfg, &res);

    let dir = std::env::temp_dir().join("cfdiff-example");
    fs::create_dir_all(&dir)?;
    let results_path = dir.join("dstbc.csv");
    fs::write(&results_path, &csv)?;
    println!("results: {}", results_path.display());

    let se = parse_results_metric(&csv, "se")?;
    let cdf_path = dir.join("dstbc-cdf-se.csv");
    fs::write(&cdf_path, cdf_csv(&se))?;
    println!("cdf samples: {}", cdf_path.display());

    println!("config digest: {}", res.config_digest);
    println!("rerun with identical bytes: same config, same seed, any worker count");
    Ok(())
}
