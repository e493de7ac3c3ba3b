//! Experiment runner: simulates the configured ensemble, evaluates the
//! selected checks and writes CSV tables, `summary.json`, `gates.csv` and
//! `manifest.json` into the output directory.
//!
//! CSV tables and `summary.json` depend only on the configuration, never on
//! the thread count; timing and checksums live in the manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::ensemble::{Ensemble, SimulatedEnsemble};
use crate::error::{Error, Result};
use crate::functional::{default_bump, vderiv_richardson};
use crate::harness::config::{Experiment, ExperimentConfig};
use crate::harness::format::write_path;
use crate::harness::stats::{Estimate, MomentAccumulator};
use crate::measure::Point;
use crate::representation::{projection_sample, represent, Basis, TargetMartingale, TargetSpec};
use crate::simulator::{martingale_problem_sample, MartingaleProblemReport};

/// One pass/fail line: `|estimate − target| ≤ tolerance`, where the
/// tolerance is `k · se` for statistical gates and fixed otherwise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gate {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub target: f64,
    pub k: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Gate {
    pub fn statistical(name: impl Into<String>, estimate: f64, se: f64, target: f64, k: f64) -> Self {
        let tolerance = k * se;
        let pass = (estimate - target).abs() <= tolerance;
        Self { name: name.into(), estimate, se, target, k, tolerance, pass }
    }

    pub fn absolute(name: impl Into<String>, estimate: f64, target: f64, tolerance: f64) -> Self {
        let pass = (estimate - target).abs() <= tolerance;
        Self { name: name.into(), estimate, se: 0.0, target, k: 0.0, tolerance, pass }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateSeed {
    pub replicate: usize,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub version: String,
    /// Effective configuration, with defaults filled in.
    pub config: ExperimentConfig,
    pub threads: usize,
    pub replicates: Vec<ReplicateSeed>,
    pub capped: Vec<usize>,
    pub wall_clock_seconds: f64,
    pub files: Vec<FileDigest>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub gates: Vec<Gate>,
    pub manifest: Manifest,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.gates.iter().all(|g| g.pass)
    }

    pub fn failing(&self) -> Vec<&Gate> {
        self.gates.iter().filter(|g| !g.pass).collect()
    }
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn csv<R: Serialize>(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(self.dir.join(name))?;
        w.write_record(header)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<V: Serialize>(&mut self, name: &str, value: &V) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.dir.join(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn digests(&self) -> Result<Vec<FileDigest>> {
        let mut names = self.files.clone();
        names.sort();
        names.dedup();
        names
            .into_iter()
            .map(|name| {
                let bytes = fs::read(self.dir.join(&name))?;
                let sha256 = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
                Ok(FileDigest { name, bytes: bytes.len() as u64, sha256 })
            })
            .collect()
    }
}

/// Runs `config.experiment` and writes its outputs under `out`.
pub fn run(config: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let start = Instant::now();
    let cfg = config.clone().default_suite();
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let ensemble = SimulatedEnsemble::new(cfg.initial_measure()?, cfg.sim_params()?, cfg.replicates);
    let mut outputs = Outputs { dir: out.to_path_buf(), files: Vec::new() };
    let mut gates = Vec::new();
    let mut summary = serde_json::Map::new();
    let mut capped = Vec::new();

    let wanted = |e: Experiment| cfg.experiment == e || cfg.experiment == Experiment::FullSuite;
    if wanted(Experiment::Simulate) {
        let (v, c) = simulate_section(&cfg, &ensemble, &mut outputs, &mut gates)?;
        summary.insert("simulate".into(), v);
        capped = c;
    }
    if wanted(Experiment::VerifyMp) {
        let (v, c) = martingale_section(&cfg, &ensemble, &mut outputs, &mut gates)?;
        summary.insert("verify_mp".into(), v);
        capped = c;
    }
    if wanted(Experiment::VerifyIso) {
        let (v, c) = isometry_section(&cfg, &ensemble, &mut outputs, &mut gates)?;
        summary.insert("verify_iso".into(), v);
        capped = c;
    }
    if wanted(Experiment::Vderiv) {
        summary.insert("vderiv".into(), vderiv_section(&cfg, &ensemble, &mut outputs, &mut gates)?);
    }
    if wanted(Experiment::Represent) {
        summary.insert("represent".into(), represent_section(&cfg, &ensemble, &mut outputs, &mut gates)?);
    }

    summary.insert("passed".into(), json!(gates.iter().all(|g| g.pass)));
    outputs.json("summary.json", &Value::Object(summary))?;
    outputs.csv(
        "gates.csv",
        &["name", "estimate", "se", "target", "k", "tolerance", "pass"],
        gates.iter().map(|g| (&g.name, g.estimate, g.se, g.target, g.k, g.tolerance, g.pass)),
    )?;

    let p = &ensemble.params;
    let manifest = Manifest {
        experiment: cfg.experiment.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads: rayon::current_num_threads(),
        replicates: (0..cfg.replicates)
            .map(|i| ReplicateSeed { replicate: i, seed: p.seed, stream: ensemble.first_replicate + i as u64 })
            .collect(),
        capped,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        files: outputs.digests()?,
        config: cfg,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out.join("manifest.json"), text)?;
    Ok(RunOutcome { out_dir: out.to_path_buf(), gates, manifest })
}

fn label(t: f64) -> f64 {
    (t * 1e9).round() / 1e9
}

fn checkpoints(steps: usize) -> Vec<usize> {
    (1..=5).map(|j| (steps * j + 2) / 5).collect()
}

struct SimRecord {
    masses: Vec<f64>,
    events: usize,
    particles: usize,
}

fn simulate_section(
    cfg: &ExperimentConfig,
    ens: &SimulatedEnsemble<f64>,
    outputs: &mut Outputs,
    gates: &mut Vec<Gate>,
) -> Result<(Value, Vec<usize>)> {
    let paths_dir = outputs.dir.join("paths");
    let write = cfg.write_paths || cfg.experiment == Experiment::Simulate;
    if write {
        fs::create_dir_all(&paths_dir)?;
    }
    let records: Vec<Result<Option<SimRecord>>> = (0..ens.replicates)
        .into_par_iter()
        .map(|i| match ens.replicate(i) {
            Ok(path) => {
                if write {
                    write_path(&paths_dir, ens.first_replicate as usize + i, &path)?;
                }
                let particles = path.state(path.grid().steps()).len();
                Ok(Some(SimRecord { masses: path.total_masses(), events: path.events().len(), particles }))
            }
            Err(Error::PopulationCap { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut kept = Vec::new();
    let mut capped = Vec::new();
    let mut rows = Vec::new();
    for (i, r) in records.into_iter().enumerate() {
        match r? {
            Some(rec) => {
                rows.push((
                    i,
                    ens.first_replicate + i as u64,
                    rec.events,
                    rec.particles,
                    *rec.masses.last().unwrap(),
                    false,
                ));
                kept.push(rec);
            }
            None => {
                rows.push((i, ens.first_replicate + i as u64, 0, 0, f64::NAN, true));
                capped.push(i);
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    outputs.csv("replicates.csv", &["replicate", "stream", "events", "particles", "final_mass", "capped"], rows)?;

    let grid = ens.params.grid;
    let z0 = ens.initial.total_mass();
    let per_time: Vec<(f64, Estimate<f64>, f64)> = (0..=grid.steps())
        .map(|k| {
            let acc: MomentAccumulator<f64> = kept.iter().map(|r| r.masses[k]).collect();
            let extinct = kept.iter().filter(|r| r.masses[k] == 0.0).count() as f64 / kept.len() as f64;
            (grid.time(k), acc.estimate(), extinct)
        })
        .collect();
    outputs.csv(
        "mass.csv",
        &["time", "mean", "se", "extinct_fraction"],
        per_time.iter().map(|(t, e, x)| (t, e.mean, e.se, x)),
    )?;
    for k in checkpoints(grid.steps()) {
        let (t, e, _) = per_time[k];
        gates.push(Gate::statistical(format!("mass_mean@{}", label(t)), e.mean, e.se, z0, cfg.tolerances.k));
    }
    let last = per_time.last().unwrap();
    let summary = json!({
        "paths": kept.len(),
        "capped": capped.len(),
        "mean_events": kept.iter().map(|r| r.events as f64).sum::<f64>() / kept.len() as f64,
        "terminal_mass": last.1,
        "extinct_fraction": last.2,
        "paths_written": write,
    });
    Ok((summary, capped))
}

fn martingale_section(
    cfg: &ExperimentConfig,
    ens: &SimulatedEnsemble<f64>,
    outputs: &mut Outputs,
    gates: &mut Vec<Gate>,
) -> Result<(Value, Vec<usize>)> {
    let phis = cfg.test_functions.iter().map(|s| s.build::<f64>()).collect::<Result<Vec<_>>>()?;
    let out =
        ens.map_paths(|p| phis.iter().map(|phi| martingale_problem_sample(p, phi)).collect::<Result<Vec<_>>>())?;
    if out.values.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let grid = ens.params.grid;
    let times: Vec<f64> = grid.times().collect();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (i, _) in phis.iter().enumerate() {
        let samples: Vec<_> = out.values.iter().map(|v| v[i].clone()).collect();
        let r = MartingaleProblemReport::from_samples(times.clone(), &samples, out.capped.len())?;
        for (t, e) in r.times.iter().zip(&r.mean) {
            rows.push((i, *t, e.mean, e.se));
        }
        for k in checkpoints(grid.steps()) {
            let e = r.mean[k];
            gates.push(Gate::statistical(
                format!("mp[{i}].mean@{}", label(times[k])),
                e.mean,
                e.se,
                0.0,
                cfg.tolerances.k,
            ));
        }
        gates.push(Gate::statistical(
            format!("mp[{i}].quadratic_variation"),
            r.terminal_square.mean - r.quadratic_variation.mean,
            r.terminal_square.se + r.quadratic_variation.se,
            0.0,
            cfg.tolerances.k,
        ));
        reports.push(r);
    }
    outputs.csv("martingale.csv", &["function", "time", "mean", "se"], rows)?;
    let summary = json!(reports
        .iter()
        .map(|r| json!({
            "max_abs_mean": r.max_abs_mean(),
            "worst_time": r.times[r.worst_index],
            "terminal_square": r.terminal_square,
            "quadratic_variation": r.quadratic_variation,
            "motion_square": r.motion_square,
            "capped": r.capped,
        }))
        .collect::<Vec<_>>());
    Ok((summary, out.capped))
}

fn isometry_section(
    cfg: &ExperimentConfig,
    ens: &SimulatedEnsemble<f64>,
    outputs: &mut Outputs,
    gates: &mut Vec<Gate>,
) -> Result<(Value, Vec<usize>)> {
    let basis = Basis::from_specs(&cfg.integrands)?;
    let n = basis.len();
    let none = TargetMartingale::MassIncrement;
    let out = ens.map_paths(|p| projection_sample(&none, &basis, p))?;
    if out.values.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut rows = Vec::new();
    for i in 0..n {
        for j in i..n {
            let lhs = Estimate::of(out.values.iter().map(|s| s.integrals[i] * s.integrals[j]));
            let rhs = Estimate::of(out.values.iter().map(|s| s.quadrature[i][j]));
            gates.push(Gate::statistical(
                format!("iso[{i},{j}]"),
                lhs.mean - rhs.mean,
                lhs.se + rhs.se,
                0.0,
                cfg.tolerances.k,
            ));
            rows.push((i, j, lhs.mean, lhs.se, rhs.mean, rhs.se));
        }
    }
    let summary = json!({ "pairs": rows.len(), "paths": out.values.len() });
    outputs.csv("isometry.csv", &["i", "j", "lhs", "lhs_se", "rhs", "rhs_se"], rows)?;
    Ok((summary, out.capped))
}

#[derive(Serialize)]
struct ProbeRow {
    functional: usize,
    replicate: usize,
    time: f64,
    x: String,
    coarse: f64,
    fine: f64,
    extrapolated: f64,
    analytic: Option<f64>,
    abs_error: Option<f64>,
}

fn vderiv_section(
    cfg: &ExperimentConfig,
    ens: &SimulatedEnsemble<f64>,
    outputs: &mut Outputs,
    gates: &mut Vec<Gate>,
) -> Result<Value> {
    let functionals = cfg.functionals.iter().map(|f| f.build::<f64>()).collect::<Result<Vec<_>>>()?;
    let steps = ens.params.grid.steps();
    let d = cfg.dimension;
    // probe locations come from their own stream so they do not shift with R
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let probes: Vec<(usize, usize, Vec<f64>)> = (0..cfg.probes)
        .map(|p| {
            let t = rng.random_range(1..=steps);
            let x = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            (p % ens.replicates.min(cfg.probes.max(1)), t, x)
        })
        .collect();
    let used = probes.iter().map(|p| p.0).max().map_or(0, |m| m + 1);
    let rows: Vec<Vec<ProbeRow>> = (0..used)
        .into_par_iter()
        .map(|r| -> Result<Vec<ProbeRow>> {
            let path = match ens.replicate(r) {
                Ok(p) => p,
                Err(Error::PopulationCap { .. }) => return Ok(Vec::new()),
                Err(e) => return Err(e),
            };
            let omega = path.full();
            let mut rows = Vec::new();
            for (_, t, x) in probes.iter().filter(|p| p.0 == r) {
                let point = Point::new(x.clone())?;
                for (fi, f) in functionals.iter().enumerate() {
                    let eps = default_bump(&omega, *t);
                    let pair = vderiv_richardson(f.as_ref(), *t, &omega, &point, eps)?;
                    let analytic = f.analytic_vderiv(*t, &omega, &point).transpose()?;
                    rows.push(ProbeRow {
                        functional: fi,
                        replicate: r,
                        time: path.grid().time(*t),
                        x: x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "),
                        coarse: pair.coarse,
                        fine: pair.fine,
                        extrapolated: pair.extrapolated,
                        analytic,
                        abs_error: analytic.map(|a| (a - pair.extrapolated).abs()),
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ProbeRow> = rows.into_iter().flatten().collect();
    let mut worst = Vec::new();
    for fi in 0..functionals.len() {
        let errs: Vec<f64> = rows.iter().filter(|r| r.functional == fi).filter_map(|r| r.abs_error).collect();
        if let Some(m) = errs.iter().copied().reduce(f64::max) {
            gates.push(Gate::absolute(format!("vderiv[{fi}].max_error"), m, 0.0, cfg.tolerances.vderiv));
            worst.push(json!({ "functional": fi, "max_abs_error": m }));
        }
    }
    let summary = json!({ "probes": rows.len(), "analytic": worst });
    outputs.csv(
        "vderiv.csv",
        &["functional", "replicate", "time", "x", "coarse", "fine", "extrapolated", "analytic", "abs_error"],
        rows,
    )?;
    Ok(summary)
}

fn represent_section(
    cfg: &ExperimentConfig,
    ens: &SimulatedEnsemble<f64>,
    outputs: &mut Outputs,
    gates: &mut Vec<Gate>,
) -> Result<Value> {
    let basis = Basis::from_specs(&cfg.basis)?;
    let spec =
        cfg.target.as_ref().ok_or_else(|| Error::Config { field: "target".into(), message: "missing".into() })?;
    let target = spec.build::<f64>()?;
    let (fit, holdout) = ens.split_half();
    let report = represent(&target, &basis, &fit, &holdout, cfg.ridge)?;
    let k = cfg.tolerances.k;
    let planted = match spec {
        TargetSpec::Planted { coefficients, integrands } if *integrands == cfg.basis => Some(coefficients.clone()),
        _ => None,
    };
    let sol = &report.solution;
    for (j, c) in sol.coefficients.iter().enumerate() {
        if let Some(p) = &planted {
            gates.push(Gate::statistical(format!("coef[{j}]"), *c, report.coefficient_se[j], p[j], k));
        }
    }
    for (j, a) in report.adjoint.iter().enumerate() {
        gates.push(Gate::statistical(format!("adjoint[{j}]"), a.lhs.mean - a.rhs.mean, a.combined_se(), 0.0, k));
    }
    if let Some(bound) = cfg.tolerances.residual {
        gates.push(Gate::absolute("residual.relative", report.residual.relative, 0.0, bound));
    }
    outputs.csv(
        "coefficients.csv",
        &["index", "coefficient", "se", "planted"],
        sol.coefficients
            .iter()
            .enumerate()
            .map(|(j, c)| (j, *c, report.coefficient_se[j], planted.as_ref().map(|p| p[j]))),
    )?;
    outputs.csv(
        "adjoint.csv",
        &["index", "lhs", "lhs_se", "rhs", "rhs_se"],
        report.adjoint.iter().enumerate().map(|(j, a)| (j, a.lhs.mean, a.lhs.se, a.rhs.mean, a.rhs.se)),
    )?;
    Ok(serde_json::to_value(&report)?)
}
