//! `sbmx`: simulate super-Brownian paths, integrate against their martingale
//! measure, probe vertical derivatives and fit martingale representations.
//!
//! Integrand, functional and target specs are JSON objects given inline or
//! as `@file.json`; the schemas are those of the config file sections.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use superbrownian::functional::{default_bump, vderiv_richardson};
use superbrownian::harness::format::{read_path, read_paths};
use superbrownian::harness::stats::Estimate;
use superbrownian::{
    covariation, integrate, integrate_u_closed_form, represent, run, Basis, Experiment, ExperimentConfig,
    FunctionalSpec, MeasurePathF64, Point, PredictableIntegrand, TargetSpec, UIntegrandSpec,
};

#[derive(Debug, Parser)]
#[command(
    name = "sbmx",
    version,
    about = "Super-Brownian motion: simulation, stochastic integrals and martingale representation"
)]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate an ensemble and write event logs, states and a manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Stochastic integral of a U-integrand over stored paths.
    Integrate {
        #[arg(long)]
        phi: String,
        #[arg(long)]
        paths: PathBuf,
        #[arg(long)]
        t: f64,
    },
    /// Both sides of the isometry for two U-integrands over stored paths.
    VerifyIso {
        #[arg(long)]
        phi: String,
        #[arg(long)]
        psi: String,
        #[arg(long)]
        paths: PathBuf,
    },
    /// Vertical derivative of a functional on one stored path.
    Vderiv {
        #[arg(long)]
        functional: String,
        /// Event log (`.sbmx`); the state file beside it is read too.
        #[arg(long)]
        path: PathBuf,
        #[arg(long)]
        t: f64,
        /// Comma-separated coordinates.
        #[arg(long, allow_hyphen_values = true)]
        x: String,
    },
    /// Galerkin representation of a target over stored paths, fitted on the
    /// first half and scored on the second.
    Represent {
        #[arg(long)]
        target: String,
        /// JSON array of U-integrand specs.
        #[arg(long)]
        basis: String,
        #[arg(long)]
        paths: PathBuf,
        #[arg(long)]
        ridge: Option<f64>,
    },
    /// Run a configured experiment; exits nonzero if any gate fails.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the experiment named in the config.
        #[arg(long, value_parser = parse_experiment)]
        experiment: Option<Experiment>,
    },
}

fn parse_experiment(s: &str) -> std::result::Result<Experiment, String> {
    serde_json::from_value(json!(s)).map_err(|_| {
        format!("unknown experiment `{s}` (simulate, verify-mp, verify-iso, vderiv, represent, full-suite)")
    })
}

fn read_spec<S: serde::de::DeserializeOwned>(what: &str, text: &str) -> Result<S> {
    let body = match text.strip_prefix('@') {
        Some(file) => fs::read_to_string(file).with_context(|| format!("reading {what} spec from {file}"))?,
        None => text.to_string(),
    };
    serde_json::from_str(&body).with_context(|| format!("parsing {what} spec"))
}

fn print(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value"));
}

fn load_paths(dir: &Path) -> Result<Vec<MeasurePathF64>> {
    let paths = read_paths::<f64>(dir).with_context(|| format!("reading paths from {}", dir.display()))?;
    if paths.is_empty() {
        bail!("no event logs found in {}", dir.display());
    }
    Ok(paths)
}

fn integrand(spec: &str) -> Result<(superbrownian::UIntegrandF64, PredictableIntegrand<f64>)> {
    let u = read_spec::<UIntegrandSpec>("integrand", spec)?.build::<f64>()?;
    let p = PredictableIntegrand::from(&u);
    Ok((u, p))
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Simulate { config } => {
            let mut cfg = load_config(&config, cli.seed)?;
            cfg.experiment = Experiment::Simulate;
            let out = cli.out.ok_or_else(|| anyhow!("--out is required"))?;
            let outcome = run(&cfg, &out)?;
            let m = &outcome.manifest;
            print(&json!({
                "out": out,
                "replicates": m.replicates.len(),
                "capped": m.capped.len(),
                "seed": m.config.seed,
                "resolution": m.config.resolution,
                "wall_clock_seconds": m.wall_clock_seconds,
            }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Integrate { phi, paths, t } => {
            let (u, p) = integrand(&phi)?;
            let paths = load_paths(&paths)?;
            let mut values = Vec::with_capacity(paths.len());
            let mut closed_gap: f64 = 0.0;
            for path in &paths {
                let v = integrate(&p, path, t)?;
                closed_gap = closed_gap.max((v - integrate_u_closed_form(&u, path, t)?).abs());
                values.push(v);
            }
            if let Some(out) = &cli.out {
                fs::create_dir_all(out)?;
                let mut w = String::from("replicate,integral\n");
                for (i, v) in values.iter().enumerate() {
                    w.push_str(&format!("{i},{v}\n"));
                }
                fs::write(out.join("integrals.csv"), w)?;
            }
            print(&json!({
                "t": t,
                "paths": values.len(),
                "estimate": Estimate::of(values.iter().copied()),
                "max_closed_form_gap": closed_gap,
            }));
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifyIso { phi, psi, paths } => {
            let (_, p) = integrand(&phi)?;
            let (_, q) = integrand(&psi)?;
            let paths = load_paths(&paths)?;
            let c = covariation(&p, &q, paths.as_slice())?;
            print(&json!({
                "paths": paths.len(),
                "integral_product": c.lhs,
                "quadrature": c.rhs,
                "gap": c.gap,
                "consistent_3se": c.consistent(3.0),
            }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Vderiv { functional, path, t, x } => {
            let f = read_spec::<FunctionalSpec>("functional", &functional)?.build::<f64>()?;
            let path: MeasurePathF64 = read_path(&path).with_context(|| format!("reading {}", path.display()))?;
            let coords = x
                .split(',')
                .map(|c| c.trim().parse::<f64>().with_context(|| format!("bad coordinate `{c}`")))
                .collect::<Result<Vec<_>>>()?;
            let point = Point::new(coords)?;
            let k = path.grid().index_of(t)?;
            let omega = path.full();
            let eps = default_bump(&omega, k);
            let pair = vderiv_richardson(f.as_ref(), k, &omega, &point, eps)?;
            let analytic = f.analytic_vderiv(k, &omega, &point).transpose()?;
            print(&json!({
                "t": t,
                "x": point.coords(),
                "eps": eps,
                "coarse": pair.coarse,
                "fine": pair.fine,
                "extrapolated": pair.extrapolated,
                "analytic": analytic,
                "abs_error": analytic.map(|a| (a - pair.extrapolated).abs()),
            }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Represent { target, basis, paths, ridge } => {
            let target = read_spec::<TargetSpec>("target", &target)?.build::<f64>()?;
            let basis = Basis::from_specs(&read_spec::<Vec<UIntegrandSpec>>("basis", &basis)?)?;
            let paths = load_paths(&paths)?;
            if paths.len() < 4 {
                bail!("need at least 4 paths to fit and score, found {}", paths.len());
            }
            let (fit, holdout) = paths.split_at(paths.len() / 2);
            let report = represent(&target, &basis, fit, holdout, ridge)?;
            let value = serde_json::to_value(&report)?;
            if let Some(out) = &cli.out {
                fs::create_dir_all(out)?;
                fs::write(out.join("represent.json"), serde_json::to_string_pretty(&value)? + "\n")?;
            }
            print(&value);
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, experiment } => {
            let mut cfg = load_config(&config, cli.seed)?;
            if let Some(e) = experiment {
                cfg.experiment = e;
            }
            let out = cli.out.unwrap_or_else(|| PathBuf::from("sbmx-out"));
            let outcome = run(&cfg, &out)?;
            for g in &outcome.gates {
                println!(
                    "{} {}: estimate {:.6e}, target {:.6e}, tolerance {:.3e}",
                    if g.pass { "PASS" } else { "FAIL" },
                    g.name,
                    g.estimate,
                    g.target,
                    g.tolerance
                );
            }
            let failing = outcome.failing();
            if failing.is_empty() {
                println!("all {} gates passed; outputs in {}", outcome.gates.len(), out.display());
                Ok(ExitCode::SUCCESS)
            } else {
                let names: Vec<&str> = failing.iter().map(|g| g.name.as_str()).collect();
                eprintln!("failing gates: {}", names.join(", "));
                Ok(ExitCode::from(2))
            }
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
