//! Experiment configuration: a flat TOML file with one table per concern.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use mindisp::adjoint::FdStep;
use mindisp::costs::{
    central_moment_cost, doubled_model, replicated_model, spike_cost, ConstantCost, CostFunction,
    MomentIndex, MomentSum, PairwiseDispersion,
};
use mindisp::descent::{DescentConfig, GridSearch};
use mindisp::hamiltonian::ControlSpace;
use mindisp::models::{brownian_model, controlled_linear_model, theta_model, ThetaParams};
use mindisp::sde::{InitialLaw, Model, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    pub cost: CostConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub descent: DescentSection,
    #[serde(default)]
    pub plot: PlotConfig,
    #[serde(default)]
    pub diagnose: DiagnoseConfig,
    /// Where artifacts go; never echoed, so moving the output leaves the
    /// artifacts themselves unchanged.
    #[serde(default, skip_serializing)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Theta,
    Brownian,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Noise intensity for `theta` and `brownian`.
    pub beta: Option<f64>,
    /// Linear model `dX = (aX + b w) dt + σ dW`.
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub sigma: Option<f64>,
    /// Independent Gaussian initial law; zero std gives a point mass.
    pub initial_mean: Option<Vec<f64>>,
    pub initial_std: Option<Vec<f64>>,
    /// Independent copies of the state (2 = doubled process).
    pub copies: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Spike,
    Moment,
    SquaredDistance,
    TraceCovariance,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub kind: CostKind,
    pub p: Option<u32>,
    pub alpha: Option<Vec<u32>>,
    pub target: Option<Vec<f64>>,
    pub value: Option<f64>,
    /// Zero-based state coordinates entering `trace_covariance` (default all).
    pub coords: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub horizon: f64,
    pub knots_per_unit: usize,
    pub substeps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            horizon: 6.0,
            knots_per_unit: 20,
            substeps: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescentSection {
    pub adjoint_paths: usize,
    pub particles: usize,
    pub tolerance: f64,
    pub max_iters: usize,
    pub patience: usize,
    pub eval_paths: usize,
    /// Relative finite-difference step for `∇p̄`.
    pub fd_step: f64,
    /// Quadratic penalty weight λ; ignored when box bounds are given.
    pub penalty: f64,
    pub box_lo: Option<Vec<f64>>,
    pub box_hi: Option<Vec<f64>>,
    /// Grid minimizer resolution for drifts that are not control-affine.
    pub grid_resolution: Option<usize>,
}

impl Default for DescentSection {
    fn default() -> Self {
        Self {
            adjoint_paths: 100,
            particles: 1,
            tolerance: 1e-4,
            max_iters: 10,
            patience: 3,
            eval_paths: 1000,
            fd_step: 1e-3,
            penalty: 1.0,
            box_lo: None,
            box_hi: None,
            grid_resolution: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotConfig {
    /// Sample paths per bundle in `paths_initial.csv` / `paths_learned.csv`.
    pub paths: usize,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self { paths: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseConfig {
    /// Pass threshold in standard errors for the statistical checks.
    pub sigma: f64,
    /// Absolute tolerance for the trace-covariance identity.
    pub identity_tol: f64,
    pub oracle_paths: usize,
    pub defect_paths: usize,
    pub defect_particles: usize,
    pub increment_direct_paths: usize,
    pub increment_particles: usize,
    pub increment_inner_paths: usize,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            sigma: 3.0,
            identity_tol: 1e-12,
            oracle_paths: 10_000,
            defect_paths: 1000,
            defect_particles: 1000,
            increment_direct_paths: 10_000,
            increment_particles: 1000,
            increment_inner_paths: 10,
        }
    }
}

impl DiagnoseConfig {
    fn validate(&self) -> Result<()> {
        ensure!(self.sigma > 0.0, "diagnose.sigma must be positive");
        ensure!(
            self.identity_tol >= 0.0,
            "diagnose.identity_tol must be non-negative"
        );
        ensure!(
            [
                self.oracle_paths,
                self.defect_paths,
                self.defect_particles,
                self.increment_direct_paths,
                self.increment_particles
            ]
            .iter()
            .all(|&n| n >= 2)
                && self.increment_inner_paths >= 1,
            "diagnose sample sizes must be at least 2 (inner paths at least 1)"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Parses and fills every defaulted field, so the echo is self-contained.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.resolve()?;
        Ok(cfg)
    }

    fn resolve(&mut self) -> Result<()> {
        let m = &mut self.model;
        match m.kind {
            ModelKind::Theta => {
                let defaults = ThetaParams::default();
                m.beta.get_or_insert(defaults.beta);
                if let InitialLaw::Gaussian { mean, std } = defaults.initial {
                    m.initial_mean.get_or_insert(mean);
                    m.initial_std.get_or_insert(std);
                }
            }
            ModelKind::Brownian => {
                m.beta.get_or_insert(0.05);
                m.initial_mean.get_or_insert_with(|| vec![0.0]);
                m.initial_std.get_or_insert_with(|| vec![0.0]);
            }
            ModelKind::Linear => {
                m.a.get_or_insert(0.0);
                m.b.get_or_insert(1.0);
                m.sigma.get_or_insert(0.5);
                m.initial_mean.get_or_insert_with(|| vec![1.0]);
                m.initial_std.get_or_insert_with(|| vec![0.0]);
            }
        }
        let copies = m.copies.get_or_insert(1);
        if self.cost.kind == CostKind::TraceCovariance {
            ensure!(
                *copies == 1 || *copies == 2,
                "trace_covariance works on the doubled model; set copies = 2 or leave it unset"
            );
            *copies = 2;
        }
        if self.cost.kind == CostKind::Spike {
            self.cost.p.get_or_insert(1);
        }
        Ok(())
    }

    /// Resolved configuration as TOML, without the output section.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn build(&self) -> Result<Experiment> {
        let model = self.build_model()?;
        let cost = self.build_cost(model.state_dim())?;
        let g = &self.grid;
        let grid = TimeGrid::per_unit_time(g.horizon, g.knots_per_unit, g.substeps)?;
        let descent = self.build_descent(model.basis_len(), model.is_control_affine())?;
        self.diagnose.validate()?;
        Ok(Experiment {
            model,
            cost,
            grid,
            descent,
        })
    }

    fn initial_law(&self, dim: usize) -> Result<InitialLaw> {
        let mean = self.model.initial_mean.clone().unwrap_or_default();
        let std = self.model.initial_std.clone().unwrap_or_default();
        ensure!(
            mean.len() == dim && std.len() == dim,
            "initial_mean and initial_std need {dim} entries for this model"
        );
        Ok(if std.iter().all(|s| *s == 0.0) {
            InitialLaw::Dirac(mean)
        } else {
            InitialLaw::Gaussian { mean, std }
        })
    }

    fn build_model(&self) -> Result<Box<dyn Model>> {
        let m = &self.model;
        let base: Box<dyn Model> = match m.kind {
            ModelKind::Theta => Box::new(theta_model(ThetaParams {
                beta: m.beta.unwrap_or_default(),
                initial: self.initial_law(2)?,
            })?),
            ModelKind::Brownian => Box::new(
                brownian_model(m.beta.unwrap_or_default())?.with_initial(self.initial_law(1)?)?,
            ),
            ModelKind::Linear => Box::new(
                controlled_linear_model(
                    m.a.unwrap_or_default(),
                    m.b.unwrap_or_default(),
                    m.sigma.unwrap_or_default(),
                )?
                .with_initial(self.initial_law(1)?)?,
            ),
        };
        Ok(match m.copies.unwrap_or(1) {
            1 => base,
            2 => Box::new(doubled_model(base)),
            q => Box::new(replicated_model(base, q)?),
        })
    }

    fn build_cost(&self, state_dim: usize) -> Result<Box<dyn CostFunction>> {
        let c = &self.cost;
        let target = || c.target.clone().unwrap_or_else(|| vec![0.0; state_dim]);
        Ok(match c.kind {
            CostKind::Spike => {
                ensure!(
                    self.model.kind == ModelKind::Theta,
                    "spike cost needs the theta model"
                );
                Box::new(spike_cost(c.p.unwrap_or(1))?)
            }
            CostKind::Moment => {
                let alpha = c.alpha.clone().context("moment cost needs `alpha`")?;
                ensure!(alpha.len() == state_dim, "alpha needs {state_dim} entries");
                Box::new(central_moment_cost(MomentIndex::new(alpha, target())?))
            }
            CostKind::SquaredDistance => {
                let t = target();
                ensure!(t.len() == state_dim, "target needs {state_dim} entries");
                Box::new(MomentSum::squared_distance(&t))
            }
            CostKind::TraceCovariance => {
                let block = state_dim / 2;
                match &c.coords {
                    Some(coords) => Box::new(PairwiseDispersion::on_coords(block, coords.clone())?),
                    None => Box::new(PairwiseDispersion::new(block)),
                }
            }
            CostKind::Constant => Box::new(ConstantCost(
                c.value.context("constant cost needs `value`")?,
            )),
        })
    }

    fn build_descent(&self, basis_len: usize, affine: bool) -> Result<DescentConfig> {
        let d = &self.descent;
        let space = match (&d.box_lo, &d.box_hi) {
            (Some(lo), Some(hi)) => ControlSpace::bounded(lo.clone(), hi.clone())?,
            (None, None) => ControlSpace::penalized(basis_len, d.penalty)?,
            _ => bail!("box_lo and box_hi must be given together"),
        };
        ensure!(
            space.dim() == basis_len,
            "control space needs {basis_len} entries"
        );
        let grid_search = match (&space, d.grid_resolution) {
            (_, None) => None,
            (ControlSpace::Box { lo, hi }, Some(resolution)) => Some(GridSearch {
                lo: lo.clone(),
                hi: hi.clone(),
                resolution,
            }),
            (ControlSpace::Penalized { .. }, Some(_)) => bail!("grid_resolution needs box bounds"),
        };
        ensure!(
            affine || grid_search.is_some(),
            "drift is not control-affine; give box bounds and grid_resolution"
        );
        let cfg = DescentConfig {
            adjoint_paths: d.adjoint_paths,
            particles: d.particles,
            tolerance: d.tolerance,
            max_iters: d.max_iters,
            patience: d.patience,
            eval_paths: d.eval_paths,
            seed: self.seed,
            fd_step: FdStep::Relative(d.fd_step),
            space,
            grid_search,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Validated, ready-to-run objects.
pub struct Experiment {
    pub model: Box<dyn Model>,
    pub cost: Box<dyn CostFunction>,
    pub grid: TimeGrid,
    pub descent: DescentConfig,
}
