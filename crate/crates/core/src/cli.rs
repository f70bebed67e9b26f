//! Command-line driver: config parsing, dispatch and artifact emission.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{ExperimentConfig, LawSpec};
use crate::error::{Result, SfdeError};
use crate::estimate::MonteCarloEstimate;
use crate::functional::{Constant, Linear};
use crate::generator::{
    default_shift_step, dirichlet_poisson_estimate, dynkin_check, generator_apply, law_control,
    weak_generator_estimate, weak_generator_estimate_corrected,
};
use crate::grid::SimulationGrid;
use crate::model::{ConstantLaw, ControlLaw, LinearDelayModel};
use crate::noise::NoiseStream;
use crate::optimizer::{cost_samples, hjb_residual, policy_search, PolicyRanking};
use crate::portfolio::{portfolio_experiment, CandidateCheck, PortfolioParams};
use crate::segment::{ControlledState, SegmentPath};
use crate::simulator::{simulate_path, simulate_path_with, BatchConfig, StoppingRule};

#[derive(Debug, Parser)]
#[command(
    name = "sfde",
    version,
    about = "Controlled stochastic delay equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `output` from the config, else `sfde-out`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate paths; writes paths.csv and estimate.csv.
    Simulate(RunArgs),
    /// Analytic vs Monte Carlo generator; writes generator.csv.
    Generator(RunArgs),
    /// Both sides of the Dynkin formula; writes dynkin.csv.
    Dynkin(RunArgs),
    /// Exit-time Dirichlet–Poisson estimate; writes estimate.csv.
    Dirichlet(RunArgs),
    /// HJB residual over the control grid; writes hjb.csv.
    Hjb(RunArgs),
    /// Ranks the control family; writes ranking.csv.
    PolicySearch(RunArgs),
    /// Portfolio experiment; writes ranking.csv and mcurve.csv.
    Portfolio(RunArgs),
    /// Runs the bundled trivial-oracle checks.
    Selftest,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Generator(_) => "generator",
            Command::Dynkin(_) => "dynkin",
            Command::Dirichlet(_) => "dirichlet",
            Command::Hjb(_) => "hjb",
            Command::PolicySearch(_) => "policy-search",
            Command::Portfolio(_) => "portfolio",
            Command::Selftest => "selftest",
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    version: &'static str,
    master_seed: u64,
    workers: Option<usize>,
    config: &'a ExperimentConfig,
    censored_fractions: BTreeMap<String, f64>,
    outputs: Vec<String>,
    summary: serde_json::Value,
}

/// Results of one subcommand before they hit the disk.
#[derive(Default)]
struct Artifacts {
    tables: Vec<(String, Vec<String>, Vec<Vec<String>>)>,
    censored: BTreeMap<String, f64>,
    summary: serde_json::Value,
}

impl Artifacts {
    fn table(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) {
        let header = header.iter().map(|s| s.to_string()).collect();
        self.tables.push((name.to_string(), header, rows));
    }
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code: 0 success, 1 validation error, 2 numeric blow-up.
pub fn execute<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                2
            } else {
                1
            }
        }
    }
}

fn run(command: &Command) -> Result<()> {
    let args = match command {
        Command::Selftest => return selftest(),
        Command::Simulate(a)
        | Command::Generator(a)
        | Command::Dynkin(a)
        | Command::Dirichlet(a)
        | Command::Hjb(a)
        | Command::PolicySearch(a)
        | Command::Portfolio(a) => a,
    };
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed_override {
        cfg.master_seed = seed;
    }
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(SfdeError::Config("--workers must be positive".into()));
        }
        cfg.workers = Some(w);
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("sfde-out"));

    let artifacts = match command {
        Command::Simulate(_) => run_simulate(&cfg)?,
        Command::Generator(_) => run_generator(&cfg)?,
        Command::Dynkin(_) => run_dynkin(&cfg)?,
        Command::Dirichlet(_) => run_dirichlet(&cfg)?,
        Command::Hjb(_) => run_hjb(&cfg)?,
        Command::PolicySearch(_) => run_policy_search(&cfg)?,
        Command::Portfolio(_) => run_portfolio(&cfg)?,
        Command::Selftest => unreachable!(),
    };
    write_artifacts(&out, command.name(), &cfg, artifacts)
}

fn write_artifacts(
    out: &Path,
    subcommand: &str,
    cfg: &ExperimentConfig,
    artifacts: Artifacts,
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut outputs = Vec::new();
    for (name, header, rows) in &artifacts.tables {
        let mut w = csv::Writer::from_path(out.join(name))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        outputs.push(name.clone());
    }
    let manifest = Manifest {
        subcommand,
        version: env!("CARGO_PKG_VERSION"),
        master_seed: cfg.master_seed,
        workers: cfg.workers,
        config: cfg,
        censored_fractions: artifacts.censored,
        outputs,
        summary: artifacts.summary,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| SfdeError::Io(format!("manifest: {e}")))?;
    std::fs::write(out.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn estimate_row(e: &MonteCarloEstimate) -> Vec<String> {
    e.csv_record().to_vec()
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn run_simulate(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let grid = cfg.simulation_grid()?;
    let model = cfg.build_model()?;
    let coeffs = model.coefficients();
    let law = cfg.build_law(&cfg.control.law)?;
    let init = cfg.initial_state()?;
    let batch = cfg.batch();

    let mut rows = Vec::new();
    for i in 0..cfg.recorded_paths.min(cfg.n_paths) {
        let stream = batch.stream(i, coeffs.noise_dim());
        let mut steps = Vec::new();
        let res = simulate_path_with(
            coeffs,
            law.as_ref(),
            &init,
            &grid,
            &stream,
            0.0,
            cfg.stopping,
            &mut |v| {
                let u = v.control.first().copied().unwrap_or(0.0);
                steps.push((u.to_string(), coeffs.in_region(v.segment, v.current)));
            },
        )
        .map_err(|e| e.on_path(i))?;
        let (seg, x) = res.exit_state.view();
        let last_in_g = coeffs.in_region(&seg, x);
        let traj = &res.trajectory;
        for j in 0..traj.len() {
            let step = traj.first_step() + j as i64;
            let (control, in_g) = match usize::try_from(step) {
                Ok(k) if k < steps.len() => (steps[k].0.clone(), steps[k].1.to_string()),
                Ok(_) => (String::new(), last_in_g.to_string()),
                Err(_) => (String::new(), String::new()),
            };
            rows.push(vec![
                i.to_string(),
                step.to_string(),
                traj.time_of(j).to_string(),
                traj.values()[j * traj.dim()].to_string(),
                control,
                in_g,
            ]);
        }
    }

    let (samples, censored) =
        cost_samples(coeffs, law.as_ref(), &init, &grid, &batch, cfg.stopping)?;
    let estimate = MonteCarloEstimate::from_samples(&samples, cfg.master_seed, censored);

    let mut a = Artifacts::default();
    a.table(
        "paths.csv",
        &["path", "step", "time", "state", "control", "in_g"],
        rows,
    );
    a.table(
        "estimate.csv",
        &MonteCarloEstimate::CSV_HEADER,
        vec![estimate_row(&estimate)],
    );
    a.censored.insert(cfg.control.law.id(), censored);
    a.summary = json(&estimate);
    Ok(a)
}

fn run_generator(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let grid = cfg.simulation_grid()?;
    let model = cfg.build_model()?;
    let coeffs = model.coefficients();
    let law = cfg.build_law(&cfg.control.law)?;
    let init = cfg.initial_state()?;
    let batch = cfg.batch();
    let f = cfg.functional.build();
    let u = law_control(law.as_ref(), &init);
    let analytic = generator_apply(f.as_ref(), coeffs, &u, &init, default_shift_step(&grid))?;

    let mut rows = Vec::new();
    for h in cfg.generator_steps()? {
        let plain =
            weak_generator_estimate(f.as_ref(), coeffs, law.as_ref(), &init, &grid, h, &batch)?;
        let corrected = weak_generator_estimate_corrected(
            f.as_ref(),
            coeffs,
            law.as_ref(),
            &init,
            &grid,
            h,
            &batch,
        )?;
        rows.push(vec![
            h.to_string(),
            analytic.to_string(),
            plain.mean.to_string(),
            plain.std_error.to_string(),
            corrected.mean.to_string(),
            corrected.std_error.to_string(),
            (plain.mean - analytic).abs().to_string(),
            (corrected.mean - analytic).abs().to_string(),
            batch.n_paths.to_string(),
            batch.master_seed.to_string(),
        ]);
    }
    let mut a = Artifacts::default();
    a.table(
        "generator.csv",
        &[
            "h",
            "analytic",
            "mc_mean",
            "mc_std_error",
            "corrected_mean",
            "corrected_std_error",
            "gap",
            "corrected_gap",
            "n_paths",
            "seed",
        ],
        rows,
    );
    a.summary = serde_json::json!({ "analytic": analytic, "control": u });
    Ok(a)
}

fn run_dynkin(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let grid = cfg.simulation_grid()?;
    let model = cfg.build_model()?;
    let law = cfg.build_law(&cfg.control.law)?;
    let init = cfg.initial_state()?;
    let f = cfg.functional.build();
    let res = dynkin_check(
        f.as_ref(),
        model.coefficients(),
        law.as_ref(),
        &init,
        &grid,
        cfg.stopping,
        &cfg.batch(),
    )?;
    let side = |name: &str, e: &MonteCarloEstimate| {
        let mut row = vec![name.to_string()];
        row.extend(estimate_row(e));
        row
    };
    let mut header = vec!["side"];
    header.extend(MonteCarloEstimate::CSV_HEADER);
    let mut a = Artifacts::default();
    a.table(
        "dynkin.csv",
        &header,
        vec![side("lhs", &res.lhs), side("rhs", &res.rhs)],
    );
    a.censored
        .insert(cfg.control.law.id(), res.lhs.censored_fraction);
    a.summary = json(&res);
    Ok(a)
}

fn run_dirichlet(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let grid = cfg.simulation_grid()?;
    let model = cfg.build_model()?;
    let coeffs = model.coefficients();
    let law = cfg.build_law(&cfg.control.law)?;
    let init = cfg.initial_state()?;
    let source = cfg.source;
    let report = dirichlet_poisson_estimate(
        coeffs,
        law.as_ref(),
        &init,
        &grid,
        &|_, _| source,
        &|seg, x| coeffs.terminal_cost(seg, x),
        &cfg.batch(),
    )?;
    if report.censored_warning {
        eprintln!(
            "warning: censored fraction {} (pilot {}) exceeds the acceptance threshold",
            report.estimate.censored_fraction, report.pilot_censored_fraction
        );
    }
    let mut a = Artifacts::default();
    a.table(
        "estimate.csv",
        &MonteCarloEstimate::CSV_HEADER,
        vec![estimate_row(&report.estimate)],
    );
    a.censored
        .insert(cfg.control.law.id(), report.estimate.censored_fraction);
    a.summary = json(&report);
    Ok(a)
}

fn run_hjb(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let model = cfg.build_model()?;
    let init = cfg.initial_state()?;
    let f = cfg.functional.build();
    let h = cfg.generator_steps()?[0];
    let report = hjb_residual(
        f.as_ref(),
        model.coefficients(),
        &cfg.control_grid()?,
        &init,
        h,
        cfg.objective,
    )?;
    let rows = report
        .per_control_values
        .iter()
        .map(|(v, m)| vec![v[0].to_string(), m.to_string()])
        .collect();
    let mut a = Artifacts::default();
    a.table("hjb.csv", &["control", "value"], rows);
    a.summary = serde_json::json!({
        "objective": report.objective,
        "residual": report.residual,
        "optimal_control": report.argmin_control,
        "h": h,
    });
    Ok(a)
}

fn family_laws(
    cfg: &ExperimentConfig,
    specs: &[LawSpec],
) -> Result<Vec<(String, Box<dyn ControlLaw>)>> {
    specs
        .iter()
        .map(|s| Ok((s.id(), cfg.build_law(s)?)))
        .collect()
}

fn ranking_artifacts(a: &mut Artifacts, ranking: &PolicyRanking) {
    let rows = ranking
        .csv_records()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();
    a.table("ranking.csv", &PolicyRanking::CSV_HEADER, rows);
    for e in &ranking.entries {
        a.censored
            .insert(e.law_id.clone(), e.estimate.censored_fraction);
    }
}

fn run_policy_search(cfg: &ExperimentConfig) -> Result<Artifacts> {
    if cfg.control.family.is_empty() {
        return Err(SfdeError::Config("control.family is empty".into()));
    }
    let grid = cfg.simulation_grid()?;
    let model = cfg.build_model()?;
    let init = cfg.initial_state()?;
    let laws = family_laws(cfg, &cfg.control.family)?;
    let family: Vec<(&str, &dyn ControlLaw)> = laws
        .iter()
        .map(|(id, l)| (id.as_str(), l.as_ref()))
        .collect();
    let ranking = policy_search(
        model.coefficients(),
        &family,
        &init,
        &grid,
        &cfg.batch(),
        cfg.stopping,
        cfg.objective,
    )?;
    let mut a = Artifacts::default();
    ranking_artifacts(&mut a, &ranking);
    a.summary = serde_json::json!({ "best": ranking.best().law_id, "objective": cfg.objective });
    Ok(a)
}

/// Family used by `portfolio` when the config leaves it empty.
pub fn default_portfolio_family() -> Vec<LawSpec> {
    let mut v: Vec<LawSpec> = [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&u| LawSpec::Constant(u))
        .collect();
    v.push(LawSpec::ClosedForm);
    v
}

/// `mean(a) - mean(b)` under common random numbers for every pair, in rank order.
#[derive(Debug, Serialize)]
struct PairedDifference {
    minuend: String,
    subtrahend: String,
    mean: f64,
    std_error: f64,
}

fn paired_differences(ranking: &PolicyRanking) -> Vec<PairedDifference> {
    let mut out = Vec::new();
    for (i, a) in ranking.entries.iter().enumerate() {
        for b in &ranking.entries[i + 1..] {
            if let Some(d) = ranking.paired_difference(&a.law_id, &b.law_id) {
                out.push(PairedDifference {
                    minuend: a.law_id.clone(),
                    subtrahend: b.law_id.clone(),
                    mean: d.mean,
                    std_error: d.std_error,
                });
            }
        }
    }
    out
}

fn run_portfolio(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let params: PortfolioParams = cfg
        .build_model()?
        .portfolio_params()
        .ok_or_else(|| SfdeError::Config("portfolio needs model.portfolio".into()))?;
    let grid = cfg.simulation_grid()?;
    let init = cfg.initial_state()?;
    let specs = if cfg.control.family.is_empty() {
        default_portfolio_family()
    } else {
        cfg.control.family.clone()
    };
    let fractions: Vec<f64> = specs
        .iter()
        .filter_map(|s| match s {
            LawSpec::Constant(v) => Some(*v),
            LawSpec::ClosedForm => None,
        })
        .collect();
    let with_closed_form = specs.contains(&LawSpec::ClosedForm);
    let report = portfolio_experiment(
        &params,
        &init,
        &grid,
        &cfg.batch(),
        &fractions,
        with_closed_form,
        &cfg.control_grid()?,
    )?;

    let mut a = Artifacts::default();
    ranking_artifacts(&mut a, &report.ranking);
    let curve = report
        .m_curve
        .m_values
        .iter()
        .map(|(v, m)| vec![v.to_string(), m.to_string()])
        .collect();
    a.table("mcurve.csv", &CandidateCheck::CSV_HEADER, curve);

    let mut summary = json(&report.summary());
    summary["paired_differences"] = json(&paired_differences(&report.ranking));
    summary["m_concave"] = json(&report.m_curve.is_concave(1e-12));
    a.summary = summary;
    Ok(a)
}

/// One bundled check with a trivially known answer.
pub struct SelftestCase {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn case(name: &'static str, r: Result<(bool, String)>) -> SelftestCase {
    match r {
        Ok((passed, detail)) => SelftestCase {
            name,
            passed,
            detail,
        },
        Err(e) => SelftestCase {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// Runs the trivial-oracle suite.
pub fn selftest_cases() -> Vec<SelftestCase> {
    let stream = NoiseStream::new(1, 0, 1);
    vec![
        case(
            "zero dynamics keep the trajectory constant",
            (|| {
                let grid = SimulationGrid::new(1.0, 1.0, 0.01)?;
                let init = ControlledState::from_segment(SegmentPath::constant(grid, &[0.7])?);
                let res = simulate_path(
                    &LinearDelayModel::default(),
                    &ConstantLaw::scalar(0.0),
                    &init,
                    &grid,
                    &stream,
                    0.0,
                )?;
                let ok = res.trajectory.values().iter().all(|v| *v == 0.7);
                Ok((ok, format!("{} samples", res.trajectory.len())))
            })(),
        ),
        case(
            "unit drift reaches 1 at t = 1",
            (|| {
                let grid = SimulationGrid::new(1.0, 1.0, 0.01)?;
                let model = LinearDelayModel {
                    drift_const: 1.0,
                    ..Default::default()
                };
                let init = ControlledState::from_segment(SegmentPath::constant(grid, &[0.0])?);
                let res = simulate_path(
                    &model,
                    &ConstantLaw::scalar(0.0),
                    &init,
                    &grid,
                    &stream,
                    0.0,
                )?;
                let end = res.exit_state.current()[0];
                Ok(((end - 1.0).abs() < 1e-12, format!("S(1) = {end}")))
            })(),
        ),
        case(
            "unit history has unit norm",
            (|| {
                let grid = SimulationGrid::new(1.0, 1.0, 0.01)?;
                let n = SegmentPath::constant(grid, &[1.0])?.norm();
                Ok(((n - 1.0).abs() < 1e-12, format!("norm = {n}")))
            })(),
        ),
        case(
            "generator of a constant is zero",
            (|| {
                let grid = SimulationGrid::new(1.0, 1.0, 0.01)?;
                let init = ControlledState::from_segment(SegmentPath::constant(grid, &[1.0])?);
                let g = generator_apply(
                    &Constant(3.0),
                    &LinearDelayModel::gbm(0.1, 0.2),
                    &[0.0],
                    &init,
                    0.04,
                )?;
                Ok((g == 0.0, format!("A f = {g}")))
            })(),
        ),
        case(
            "generator of x under constant drift is the drift",
            (|| {
                let grid = SimulationGrid::new(1.0, 1.0, 0.01)?;
                let init = ControlledState::from_segment(SegmentPath::constant(grid, &[1.0])?);
                let model = LinearDelayModel {
                    drift_const: 0.3,
                    ..Default::default()
                };
                let g = generator_apply(&Linear(vec![1.0]), &model, &[0.0], &init, 0.04)?;
                Ok(((g - 0.3).abs() < 1e-15, format!("A f = {g}")))
            })(),
        ),
        case(
            "frozen state inside G is censored",
            (|| {
                let grid = SimulationGrid::new(0.01, 0.5, 0.01)?;
                let model = LinearDelayModel::brownian(0.0, Some((0.0, 1.0)));
                let init = ControlledState::from_segment(SegmentPath::constant(grid, &[0.5])?);
                let (_, censored) = cost_samples(
                    &model,
                    &ConstantLaw::scalar(0.0),
                    &init,
                    &grid,
                    &BatchConfig::new(4, 1),
                    StoppingRule::RegionExit,
                )?;
                Ok((censored == 1.0, format!("censored fraction {censored}")))
            })(),
        ),
        case(
            "no excess return means no risky holding",
            (|| {
                let grid = SimulationGrid::new(1.0, 1.0, 0.01)?;
                let params = PortfolioParams::new(0.04, 0.04, 0.4, 0.5)?;
                let init = ControlledState::from_segment(SegmentPath::constant(grid, &[1.0])?);
                let u = crate::portfolio::optimal_fraction(&params, &init).value;
                Ok((u == 0.0, format!("u* = {u}")))
            })(),
        ),
    ]
}

fn selftest() -> Result<()> {
    let cases = selftest_cases();
    let mut failed = 0;
    for c in &cases {
        println!(
            "{} {} ({})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        if !c.passed {
            failed += 1;
        }
    }
    println!(
        "{} of {} selftest cases passed",
        cases.len() - failed,
        cases.len()
    );
    if failed > 0 {
        return Err(SfdeError::Precondition(format!(
            "{failed} selftest case(s) failed"
        )));
    }
    Ok(())
}
