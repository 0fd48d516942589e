//! Command dispatch behind the command-line front end.
//!
//! Primary outputs (`<command>.json` or `<command>.csv`, plus series and grids) depend only on
//! the configuration and seed. Wall-clock time lives in the `<command>.meta.json` sidecar.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::collision::CollisionModel;
use crate::config::ScenarioConfig;
use crate::engine::{simulate_ensemble, SimulationPlan};
use crate::error::{Error, Result};
use crate::fourier::{crosscheck, evolve, initial_grid, CfGrid, QuadraturePanel};
use crate::limit::{
    verify_fixpoint, verify_mixture, verify_thm2, verify_thm6, LimitRun, MixtureCase, Scenario, Thm2Case, Thm6Case,
};
use crate::rng::sub_seed;
use crate::spectral::{classify_regime, Regime, SpectralProfile, P_PROBE};
use crate::spine::{many_to_one_i, many_to_one_ii, ManyToOneRun};
use crate::stats::XiGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verify {
    ManyToOne,
    Martingale,
    Fixpoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    Thm2,
    Thm3,
    Thm4,
    Thm5,
    Thm6,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "command", content = "target", rename_all = "snake_case")]
pub enum Command {
    Classify,
    Simulate,
    Solve,
    Verify(Verify),
    Limit(Theorem),
    Crosscheck,
}

impl Command {
    pub fn stem(&self) -> String {
        match self {
            Command::Classify => "classify".into(),
            Command::Simulate => "simulate".into(),
            Command::Solve => "solve".into(),
            Command::Crosscheck => "crosscheck".into(),
            Command::Verify(v) => format!("verify-{}", json_name(v)),
            Command::Limit(t) => format!("limit-{}", json_name(t)),
        }
    }
}

fn json_name<S: Serialize>(v: &S) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(|s| s.replace('_', "-"))).unwrap_or_default()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub format: Format,
    /// `git describe`-style version string embedded in every artifact.
    pub version: String,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// `None` for commands without a tolerance check.
    pub passed: Option<bool>,
    pub files: Vec<PathBuf>,
    pub summary: Vec<(String, String)>,
}

struct Produced {
    report: Value,
    passed: Option<bool>,
    capped_fraction: f64,
    extra_files: Vec<PathBuf>,
}

impl Produced {
    fn new<S: Serialize>(report: &S, passed: Option<bool>, capped_fraction: f64) -> Result<Self> {
        Ok(Self { report: serde_json::to_value(report)?, passed, capped_fraction, extra_files: Vec::new() })
    }
}

pub fn run(command: Command, cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out)?;
    let start = Instant::now();
    let produced = match command {
        Command::Classify => classify(cfg)?,
        Command::Simulate => simulate(cfg, opts)?,
        Command::Solve => solve(cfg, opts)?,
        Command::Verify(Verify::ManyToOne) => many_to_one(cfg, opts)?,
        Command::Verify(Verify::Martingale) => martingale(cfg, opts)?,
        Command::Verify(Verify::Fixpoint) => fixpoint(cfg, opts)?,
        Command::Limit(t) => limit(cfg, opts, t)?,
        Command::Crosscheck => crosscheck_cmd(cfg, opts)?,
    };
    let elapsed = start.elapsed().as_secs_f64();

    let stem = command.stem();
    let envelope = json!({
        "command": stem,
        "version": opts.version,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "capped_fraction": produced.capped_fraction,
        "passed": produced.passed,
        "report": produced.report,
    });
    let mut files = produced.extra_files;
    let primary = match opts.format {
        Format::Json => {
            let p = opts.out.join(format!("{stem}.json"));
            std::fs::write(&p, serde_json::to_vec_pretty(&envelope)?)?;
            p
        }
        Format::Csv => {
            let p = opts.out.join(format!("{stem}.csv"));
            let mut w = csv::Writer::from_path(&p)?;
            w.write_record(["key", "value"])?;
            for (k, v) in flatten(&envelope) {
                w.write_record([k, v])?;
            }
            w.flush()?;
            p
        }
    };
    files.insert(0, primary);
    let meta = json!({
        "command": stem,
        "version": opts.version,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "capped_fraction": produced.capped_fraction,
        "wall_clock_seconds": elapsed,
        "threads": opts.threads,
        "files": files.iter().map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned())).collect::<Vec<_>>(),
    });
    let meta_path = opts.out.join(format!("{stem}.meta.json"));
    std::fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?)?;
    files.push(meta_path);

    let mut summary: Vec<(String, String)> = flatten(&envelope).into_iter().filter(|(k, _)| !k.contains('[')).collect();
    summary.push(("wall_clock_seconds".into(), format!("{elapsed:.3}")));
    Ok(RunOutcome { passed: produced.passed, files, summary })
}

/// `path -> scalar` pairs of a JSON tree, arrays indexed as `a[0]`.
pub fn flatten(v: &Value) -> Vec<(String, String)> {
    fn go(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    go(&p, x, out);
                }
            }
            Value::Array(a) => {
                for (i, x) in a.iter().enumerate() {
                    go(&format!("{prefix}[{i}]"), x, out);
                }
            }
            Value::String(s) => out.push((prefix.into(), s.clone())),
            Value::Null => out.push((prefix.into(), String::new())),
            other => out.push((prefix.into(), other.to_string())),
        }
    }
    let mut out = Vec::new();
    go("", v, &mut out);
    out
}

/// Aligned two-column text table.
pub fn text_table(rows: &[(String, String)]) -> String {
    let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<w$}  {v}\n")).collect()
}

fn classify(cfg: &ScenarioConfig) -> Result<Produced> {
    let model = cfg.model()?;
    let profile = SpectralProfile::exact(&model)?;
    let report = classify_regime(&model, &profile, &P_PROBE)?;
    Produced::new(&report, None, 0.0)
}

fn simulate(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Produced> {
    let p = &cfg.simulate;
    let plan = SimulationPlan::new(cfg.model()?, cfg.ic.clone(), p.checkpoints.clone(), p.gammas.clone(), cfg.seed)?
        .with_caps(p.caps())?;
    let ens = simulate_ensemble(&plan, p.n, opts.threads);
    ens.check_invariants()?;
    let series = p
        .gammas
        .iter()
        .map(|g| Ok(json!({"gamma": g, "martingale": ens.martingale_series(*g)?})))
        .collect::<Result<Vec<_>>>()?;
    let csv_path = opts.out.join("simulate_summary.csv");
    ens.write_summary_csv_file(&csv_path)?;
    let mut produced = Produced::new(
        &json!({"n": ens.len(), "biased": ens.biased(), "checkpoints": p.checkpoints, "series": series}),
        None,
        ens.capped_fraction(),
    )?;
    produced.extra_files.push(csv_path);
    if p.binary {
        let bin = opts.out.join("simulate_dump.bin");
        ens.write_binary(BufWriter::new(File::create(&bin)?))?;
        produced.extra_files.push(bin);
    }
    Ok(produced)
}

fn solve(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Produced> {
    let p = &cfg.solve;
    let grid = XiGrid::new(p.xi_max, p.n_points);
    let phi0 = initial_grid(&cfg.ic, grid)?;
    let panel = QuadraturePanel::draw(&cfg.model()?, p.panel, sub_seed(cfg.seed, 1))?;
    let ev = evolve(&phi0, &panel, p.t_end, p.dt, &p.checkpoints)?;
    let mut grids = ev.checkpoints.clone();
    if grids.last().is_none_or(|g| (g.time - ev.final_grid.time).abs() > 1e-12) {
        grids.push(ev.final_grid.clone());
    }
    let csv_path = opts.out.join("solve_grid.csv");
    CfGrid::write_csv(&grids, BufWriter::new(File::create(&csv_path)?))?;
    let sidecar = opts.out.join("solve_grid.json");
    ev.meta.write_json(&sidecar)?;
    let mut produced = Produced::new(&ev.meta, None, 0.0)?;
    produced.passed = Some(ev.meta.clamped == 0);
    produced.extra_files.extend([csv_path, sidecar]);
    Ok(produced)
}

fn many_to_one(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Produced> {
    let p = &cfg.many_to_one;
    let model = cfg.model()?;
    let profile = SpectralProfile::exact(&model)?;
    let mut reports = Vec::new();
    let mut passed = true;
    let mut capped: f64 = 0.0;
    for (j, g) in p.g.iter().enumerate() {
        let run = ManyToOneRun { t: p.t, n_trees: p.n_trees, n_paths: p.n_paths, seed: sub_seed(cfg.seed, j as u64), threads: opts.threads };
        let alpha = p.alpha.unwrap_or_else(|| g.natural_alpha());
        let one = many_to_one_i(&profile, &cfg.ic, *g, alpha, &run)?;
        let two = many_to_one_ii(&profile, *g, alpha, &run)?;
        passed &= one.overlap && two.overlap;
        capped = capped.max(one.capped_fraction).max(two.capped_fraction);
        reports.push(json!({"alive": one, "dead": two}));
    }
    Produced::new(&reports, Some(passed), capped)
}

fn martingale(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Produced> {
    let p = &cfg.martingale;
    let model = cfg.model()?;
    let profile = SpectralProfile::exact(&model)?;
    let plan = SimulationPlan::new(model, cfg.ic.clone(), p.checkpoints.clone(), p.gammas.clone(), cfg.seed)?;
    let ens = simulate_ensemble(&plan, p.n, opts.threads);
    ens.check_invariants()?;
    let mut passed = true;
    let mut out = Vec::new();
    for g in &p.gammas {
        let series = ens.martingale_series(*g)?;
        let unit_mean = series.iter().all(|s| (s.mean - 1.0).abs() <= 3.0 * s.se);
        passed &= unit_mean;
        let mut entry = Map::new();
        entry.insert("gamma".into(), json!(g));
        entry.insert("unit_mean".into(), json!(unit_mean));
        let mu_prime = profile.mu_prime(*g)?;
        entry.insert("mu_prime".into(), json!(mu_prime));
        if mu_prime < 0.0 && series.len() >= 2 {
            let (a, b) = (&series[series.len() - 2], &series[series.len() - 1]);
            let se = a.variance_se.hypot(b.variance_se);
            let plateau = (a.variance - b.variance).abs() <= 3.0 * se + 1e-12;
            passed &= plateau;
            entry.insert("plateau".into(), json!(plateau));
            entry.insert("drift".into(), serde_json::to_value(ens.max_position_drift(*g)?)?);
        }
        entry.insert("series".into(), serde_json::to_value(&series)?);
        out.push(Value::Object(entry));
    }
    Produced::new(&out, Some(passed), ens.capped_fraction())
}

fn scenario(cfg: &ScenarioConfig) -> Result<Scenario<f64>> {
    let (sim, oracle) = (cfg.model()?, cfg.oracle()?);
    Ok(if cfg.oracle.is_some() { Scenario::perturbed(sim, oracle) } else { Scenario::nominal(sim) })
}

fn limit_run(cfg: &ScenarioConfig, n: usize, opts: &RunOptions) -> LimitRun {
    LimitRun::new(n, cfg.seed).threads(opts.threads)
}

fn fixpoint(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Produced> {
    let p = &cfg.fixpoint;
    let report = verify_fixpoint(&scenario(cfg)?, p.horizon, &limit_run(cfg, p.n, opts))?;
    let passed = report.passed(p.band);
    Produced::new(&report, Some(passed), 0.0)
}

fn regime_of(model: &CollisionModel<f64>) -> Result<Regime> {
    Ok(classify_regime(model, &SpectralProfile::exact(model)?, &P_PROBE)?.label)
}

fn need_gamma(cfg: &ScenarioConfig) -> Result<f64> {
    cfg.limit.gamma.ok_or_else(|| Error::Config("limit.gamma is required for this case".into()))
}

fn limit(cfg: &ScenarioConfig, opts: &RunOptions, theorem: Theorem) -> Result<Produced> {
    let p = &cfg.limit;
    let s = scenario(cfg)?;
    let run = limit_run(cfg, p.n, opts);
    let regime = regime_of(&s.oracle)?;
    let t = *p.t_grid.last().expect("validated");
    let mixture = |case: MixtureCase| -> Result<Produced> {
        let r = verify_mixture(&s, &cfg.ic, case, t, p.xi_cap, p.band, &run)?;
        let (passed, capped) = (r.passed, r.capped_fraction);
        let path = opts.out.join(format!("limit_{}_profile.csv", json_name(&theorem)));
        r.write_profile_csv(BufWriter::new(File::create(&path)?))?;
        let mut produced = Produced::new(&r, Some(passed), capped)?;
        produced.extra_files.push(path);
        Ok(produced)
    };
    match theorem {
        Theorem::Thm2 => {
            let case = match regime {
                Regime::A => Thm2Case::A,
                Regime::B => Thm2Case::B,
                _ => Thm2Case::C,
            };
            let r = verify_thm2(&s, case, &p.t_grid, &run)?;
            Produced::new(&r, Some(r.passed()), r.capped_fraction)
        }
        Theorem::Thm3 => mixture(MixtureCase::Gaussian),
        Theorem::Thm4 => match regime {
            Regime::A => mixture(MixtureCase::RegimeA),
            Regime::E => mixture(MixtureCase::Gaussian),
            _ => mixture(MixtureCase::FixedPoint { gamma: need_gamma(cfg)? }),
        },
        Theorem::Thm5 => mixture(MixtureCase::RegimeE { gamma: need_gamma(cfg)? }),
        Theorem::Thm6 => {
            let case = match regime {
                Regime::A => Thm6Case::A,
                Regime::B => Thm6Case::B,
                _ => Thm6Case::C { gamma: need_gamma(cfg)? },
            };
            let r = verify_thm6(&s, &cfg.ic, case, &p.t_grid, p.ks_band, &run)?;
            Produced::new(&r, Some(r.passed()), r.capped_fraction)
        }
    }
}

fn crosscheck_cmd(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Produced> {
    let p = &cfg.crosscheck;
    let grid = XiGrid::new(p.xi_max, p.n_points);
    let (report, solver, ecf) = crosscheck(&cfg.model()?, &cfg.ic, p.t, p.n, p.panel, p.dt, grid, cfg.seed, opts.threads)?;
    let path = opts.out.join("crosscheck_grid.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["xi", "solver_re", "solver_im", "mc_re", "mc_im"])?;
    for (i, (a, b)) in solver.values.iter().zip(&ecf.values).enumerate() {
        w.write_record([solver.xi(i).to_string(), format!("{:e}", a.re), format!("{:e}", a.im), format!("{:e}", b.re), format!("{:e}", b.im)])?;
    }
    w.flush()?;
    let passed = report.sup_distance <= p.band && report.solver.clamped == 0;
    let mut produced = Produced::new(&json!({"band": p.band, "result": report}), Some(passed), report.capped_fraction)?;
    produced.extra_files.push(path);
    Ok(produced)
}

/// Reads a config file, runs `command`, and reports where everything went.
pub fn run_file(command: Command, path: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    run(command, &ScenarioConfig::load(path)?, opts)
}
