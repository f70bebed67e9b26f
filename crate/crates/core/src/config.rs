//! JSON experiment configuration.
//!
//! Parsing is strict: unknown keys are rejected and the error names the
//! offending key path plus the line and column.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfdeError};
use crate::functional::{Constant, Linear, NormSquaredPower, Power, SmoothFunctional, SquaredNorm};
use crate::grid::SimulationGrid;
use crate::model::{Coefficients, ConstantLaw, ControlLaw, LinearDelayModel};
use crate::optimizer::{ControlGrid, Objective};
use crate::portfolio::{ClosedFormLaw, PortfolioModel, PortfolioParams, PortfolioRegion};
use crate::segment::{ControlledState, SegmentPath};
use crate::simulator::{BatchConfig, StoppingRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Portfolio {
        #[serde(flatten)]
        params: PortfolioParams,
        #[serde(default)]
        region: PortfolioRegion,
    },
    Linear(LinearDelayModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Delay `r`.
    pub r: f64,
    /// Horizon `a`.
    pub a: f64,
    pub dt: f64,
}

/// History window on `[-r, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentSpec {
    Constant(f64),
    /// Linear from `φ(-r) = oldest` to `φ(0) = latest`.
    Linear {
        oldest: f64,
        latest: f64,
    },
    /// CSV with header `offset,value`, one row per grid offset from `-r`
    /// to `0`; a relative path is resolved against the config file.
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub segment: SegmentSpec,
    /// Overrides `φ(0)` as the current value.
    #[serde(default)]
    pub current: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    Constant(f64),
    /// The portfolio feedback law; needs the portfolio model.
    ClosedForm,
}

impl LawSpec {
    pub fn id(&self) -> String {
        match self {
            LawSpec::Constant(v) => crate::portfolio::constant_law_id(*v),
            LawSpec::ClosedForm => crate::portfolio::CLOSED_FORM_ID.to_string(),
        }
    }
}

impl Default for LawSpec {
    fn default() -> Self {
        LawSpec::Constant(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    /// Law for single-law subcommands.
    #[serde(default)]
    pub law: LawSpec,
    /// Candidates for `policy-search` and `portfolio`.
    #[serde(default)]
    pub family: Vec<LawSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalSpec {
    Constant(f64),
    /// `x`
    Identity,
    /// `x²`
    #[default]
    Square,
    /// `x^p`
    Power(f64),
    /// `‖φ‖² x^p`
    NormSquaredPower(f64),
}

impl FunctionalSpec {
    pub fn build(&self) -> Box<dyn SmoothFunctional> {
        match *self {
            FunctionalSpec::Constant(c) => Box::new(Constant(c)),
            FunctionalSpec::Identity => Box::new(Linear(vec![1.0])),
            FunctionalSpec::Square => Box::new(SquaredNorm),
            FunctionalSpec::Power(p) => Box::new(Power(p)),
            FunctionalSpec::NormSquaredPower(p) => Box::new(NormSquaredPower::new(p)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlGridSpec {
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
}

impl Default for ControlGridSpec {
    fn default() -> Self {
        Self {
            lower: 0.0,
            upper: 1.0,
            step: 0.01,
        }
    }
}

/// One value or a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Steps {
    One(f64),
    Many(Vec<f64>),
}

impl Steps {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Steps::One(h) => vec![*h],
            Steps::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub grid: GridSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub control: ControlSpec,
    pub n_paths: usize,
    /// Mandatory; there is no clock-derived default.
    pub master_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub stopping: StoppingRule,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default)]
    pub functional: FunctionalSpec,
    /// Generator step(s); defaults to the Γ shift step.
    #[serde(default)]
    pub h: Option<Steps>,
    #[serde(default)]
    pub control_grid: ControlGridSpec,
    /// Constant source `g` for `dirichlet`.
    #[serde(default)]
    pub source: f64,
    /// Number of paths written to `paths.csv` by `simulate`.
    #[serde(default = "default_recorded")]
    pub recorded_paths: usize,
}

fn default_recorded() -> usize {
    10
}

/// A built coefficient set.
pub enum BuiltModel {
    Portfolio(PortfolioModel),
    Linear(LinearDelayModel),
}

impl BuiltModel {
    pub fn coefficients(&self) -> &dyn Coefficients {
        match self {
            BuiltModel::Portfolio(m) => m,
            BuiltModel::Linear(m) => m,
        }
    }

    pub fn portfolio_params(&self) -> Option<PortfolioParams> {
        match self {
            BuiltModel::Portfolio(m) => Some(m.params),
            BuiltModel::Linear(_) => None,
        }
    }
}

impl ExperimentConfig {
    /// Parses JSON text; errors carry the key path, line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            SfdeError::Config(format!(
                "line {} column {} at `{}`: {}",
                inner.line(),
                inner.column(),
                path,
                inner
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SfdeError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let SegmentSpec::Csv(p) = &mut cfg.initial.segment {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.simulation_grid()?;
        if self.n_paths == 0 {
            return Err(SfdeError::Config("n_paths must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(SfdeError::Config("workers must be positive".into()));
        }
        match &self.model {
            ModelSpec::Portfolio { params, .. } => params.validate()?,
            ModelSpec::Linear(m) => {
                m.validate()?;
                let uses_closed_form = self.control.law == LawSpec::ClosedForm
                    || self.control.family.contains(&LawSpec::ClosedForm);
                if uses_closed_form {
                    return Err(SfdeError::Config(
                        "closed_form law needs the portfolio model".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn simulation_grid(&self) -> Result<SimulationGrid> {
        SimulationGrid::new(self.grid.r, self.grid.a, self.grid.dt)
    }

    pub fn batch(&self) -> BatchConfig {
        BatchConfig {
            n_paths: self.n_paths,
            master_seed: self.master_seed,
            workers: self.workers,
        }
    }

    pub fn build_model(&self) -> Result<BuiltModel> {
        Ok(match &self.model {
            ModelSpec::Portfolio { params, region } => {
                params.validate()?;
                BuiltModel::Portfolio(PortfolioModel::new(*params).with_region(*region))
            }
            ModelSpec::Linear(m) => {
                m.validate()?;
                BuiltModel::Linear(m.clone())
            }
        })
    }

    pub fn initial_state(&self) -> Result<ControlledState> {
        let grid = self.simulation_grid()?;
        let segment = match &self.initial.segment {
            SegmentSpec::Constant(c) => SegmentPath::constant(grid, &[*c])?,
            SegmentSpec::Linear { oldest, latest } => {
                let r = grid.delay();
                SegmentPath::from_fn(grid, |s| oldest + (latest - oldest) * (s + r) / r)?
            }
            SegmentSpec::Csv(path) => read_segment_csv(path, grid)?,
        };
        match self.initial.current {
            Some(x) => ControlledState::new(segment, vec![x]),
            None => Ok(ControlledState::from_segment(segment)),
        }
    }

    pub fn build_law(&self, spec: &LawSpec) -> Result<Box<dyn ControlLaw>> {
        Ok(match spec {
            LawSpec::Constant(v) => Box::new(ConstantLaw::scalar(*v)),
            LawSpec::ClosedForm => match &self.model {
                ModelSpec::Portfolio { params, .. } => Box::new(ClosedFormLaw::new(*params)),
                ModelSpec::Linear(_) => {
                    return Err(SfdeError::Config(
                        "closed_form law needs the portfolio model".into(),
                    ))
                }
            },
        })
    }

    pub fn control_grid(&self) -> Result<ControlGrid> {
        let g = self.control_grid;
        ControlGrid::interval(g.lower, g.upper, g.step)
    }

    /// Generator steps, each a positive multiple of `dt`.
    pub fn generator_steps(&self) -> Result<Vec<f64>> {
        let grid = self.simulation_grid()?;
        let steps = match &self.h {
            Some(s) => s.values(),
            None => vec![crate::generator::default_shift_step(&grid)],
        };
        if steps.is_empty() {
            return Err(SfdeError::Config("h list is empty".into()));
        }
        for h in &steps {
            if !(*h > 0.0) {
                return Err(SfdeError::Config(format!("h = {h} must be positive")));
            }
            grid.step_of(*h)?;
        }
        Ok(steps)
    }
}

fn read_segment_csv(path: &Path, grid: SimulationGrid) -> Result<SegmentPath> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() != 2 {
        return Err(SfdeError::Config(format!(
            "{}: expected columns offset,value",
            path.display()
        )));
    }
    let mut values = Vec::with_capacity(grid.n_history() + 1);
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let parse = |j: usize| -> Result<f64> {
            row[j]
                .trim()
                .parse::<f64>()
                .map_err(|e| SfdeError::Config(format!("{} row {}: {e}", path.display(), i + 2)))
        };
        let offset = parse(0)?;
        let expected = -grid.delay() + i as f64 * grid.dt();
        if (offset - expected).abs() > 1e-9 * grid.delay().max(1.0) {
            return Err(SfdeError::Config(format!(
                "{} row {}: offset {offset} is not on the grid (expected {expected})",
                path.display(),
                i + 2
            )));
        }
        values.push(parse(1)?);
    }
    SegmentPath::from_values(grid, 1, values)
}

/// Writes a segment as `offset,value` rows.
pub fn write_segment_csv(seg: &SegmentPath, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["offset", "value"])?;
    for i in 0..=seg.grid().n_history() {
        let v = seg.values()[i * seg.dim()];
        w.write_record([seg.offset(i).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GBM: &str = r#"{
        "model": {"linear": {"drift_x": 0.05, "diffusion_x": 0.2, "terminal": "identity"}},
        "grid": {"r": 0.001, "a": 1.0, "dt": 0.001},
        "initial": {"segment": {"constant": 1.0}},
        "n_paths": 100,
        "master_seed": 7
    }"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_json(GBM).unwrap();
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.simulation_grid().unwrap().n_forward(), 1000);
        assert_eq!(cfg.initial_state().unwrap().current(), &[1.0]);
        assert_eq!(cfg.stopping, StoppingRule::RegionExit);
    }

    #[test]
    fn unknown_key_is_reported_with_location() {
        let text = GBM.replace("\"n_paths\"", "\"n_pahts\": 3, \"n_paths\"");
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("n_pahts"), "{err}");
        assert!(err.contains("line 5"), "{err}");
    }

    #[test]
    fn nested_type_error_names_the_key() {
        let text = GBM.replace("\"dt\": 0.001", "\"dt\": \"small\"");
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("grid.dt"), "{err}");
    }

    #[test]
    fn seed_is_mandatory() {
        let text = GBM.replace(",\n        \"master_seed\": 7", "");
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("master_seed"), "{err}");
    }

    #[test]
    fn misaligned_grid_is_rejected() {
        let text = GBM.replace("\"a\": 1.0", "\"a\": 1.00005");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn closed_form_requires_portfolio() {
        let text = GBM.replace(
            "\"n_paths\"",
            "\"control\": {\"law\": \"closed_form\"}, \"n_paths\"",
        );
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn portfolio_model_and_linear_segment() {
        let text = r#"{
            "model": {"portfolio": {"mu": 0.06, "k": 0.04, "sigma": 0.4, "p": 0.5}},
            "grid": {"r": 1.0, "a": 1.0, "dt": 0.25},
            "initial": {"segment": {"linear": {"oldest": 0.0, "latest": 1.0}}, "current": 2.0},
            "control": {"family": [{"constant": 0.5}, "closed_form"]},
            "n_paths": 10,
            "master_seed": 1,
            "h": [0.5, 0.25]
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let st = cfg.initial_state().unwrap();
        assert_eq!(st.segment().values(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(st.current(), &[2.0]);
        assert_eq!(cfg.generator_steps().unwrap(), vec![0.5, 0.25]);
        assert!(cfg.build_model().unwrap().portfolio_params().is_some());
        assert_eq!(cfg.control.family[1].id(), "closed_form");
    }

    #[test]
    fn segment_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = SimulationGrid::new(1.0, 1.0, 0.25).unwrap();
        let seg = SegmentPath::from_fn(grid, |s| 1.0 + s * s).unwrap();
        let path = dir.path().join("seg.csv");
        write_segment_csv(&seg, &path).unwrap();
        assert_eq!(read_segment_csv(&path, grid).unwrap(), seg);
        let coarse = SimulationGrid::new(1.0, 1.0, 0.5).unwrap();
        assert!(read_segment_csv(&path, coarse).is_err());
    }
}
