//! The outer descent loop and its knot-by-knot control synthesis.
//!
//! Iteration `k` freezes the reference signal `u^k`, estimates `∇p̄` under it
//! by Feynman–Kac sampling, and builds `u^{k+1}` left to right: at knot `t_k`
//! the synthesis particles (already driven by the new signal on `[0, t_k)`)
//! supply the empirical measure, the averaged Hamiltonian is minimized, and
//! the resulting row is applied on `[t_k, t_{k+1})` before moving on.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjoint::{gradient_only, FdStep};
use crate::costs::CostFunction;
use crate::hamiltonian::{argmin_control, argmin_grid, averaged_coeffs, ControlSpace};
use crate::noise::{NoiseStream, Purpose, StreamId};
use crate::sde::{Integrator, Model, TimeGrid};
use crate::stats::Estimate;
use crate::{Error, Result};

pub use crate::sde::EnsembleControl;

/// Box and resolution for the grid minimizer used with non-affine drifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    /// Feynman–Kac paths per gradient estimate (`N`).
    pub adjoint_paths: usize,
    /// Synthesis particles (`M`).
    pub particles: usize,
    /// Stop once the best-so-far cost moves by less than this (`ε`).
    pub tolerance: f64,
    pub max_iters: usize,
    /// Consecutive non-improving iterations tolerated before stopping.
    pub patience: usize,
    /// Test paths for cost evaluation.
    pub eval_paths: usize,
    pub seed: u64,
    pub fd_step: FdStep,
    pub space: ControlSpace,
    #[serde(default)]
    pub grid_search: Option<GridSearch>,
}

impl DescentConfig {
    /// `N = 100`, `M = 1`, 1000 test paths, penalty weight 1.
    pub fn new(basis_len: usize, seed: u64) -> Self {
        Self {
            adjoint_paths: 100,
            particles: 1,
            tolerance: 1e-4,
            max_iters: 10,
            patience: 3,
            eval_paths: 1000,
            seed,
            fd_step: FdStep::default(),
            space: ControlSpace::Penalized {
                dim: basis_len,
                weight: 1.0,
            },
            grid_search: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.adjoint_paths == 0
            || self.particles == 0
            || self.max_iters == 0
            || self.patience == 0
        {
            return Err(Error::invalid(
                "N, M, max_iters and patience must be at least 1",
            ));
        }
        if self.eval_paths < 2 {
            return Err(Error::invalid("eval_paths must be at least 2"));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::invalid("tolerance must be positive"));
        }
        self.space.validate()
    }
}

/// Monte-Carlo estimate of `E ℓ(X_T)` from `n_eval` independent paths.
pub fn evaluate_cost<M, C>(
    model: &M,
    grid: &TimeGrid,
    control: &EnsembleControl,
    cost: &C,
    n_eval: usize,
    noise: &NoiseStream,
) -> Result<Estimate>
where
    M: Model + ?Sized,
    C: CostFunction + ?Sized,
{
    evaluate_cost_counted(model, grid, control, cost, n_eval, noise).map(|(e, _)| e)
}

fn evaluate_cost_counted<M, C>(
    model: &M,
    grid: &TimeGrid,
    control: &EnsembleControl,
    cost: &C,
    n_eval: usize,
    noise: &NoiseStream,
) -> Result<(Estimate, u64)>
where
    M: Model + ?Sized,
    C: CostFunction + ?Sized,
{
    if n_eval < 2 {
        return Err(Error::invalid("cost evaluation needs at least 2 paths"));
    }
    control.check_against(grid, model.basis_len())?;
    let n = model.state_dim();
    let samples: Vec<(f64, u64)> = (0..n_eval)
        .into_par_iter()
        .map(|l| {
            let mut integ = Integrator::new(model, grid, control)?;
            let mut rng = noise.path_rng(l as u64);
            let mut x = vec![0.0; n];
            model.sample_initial(&mut rng, &mut x);
            integ.advance_to_end(0, &mut x, &mut rng)?;
            Ok((cost.eval(&x), integ.steps()))
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = samples.iter().map(|(v, _)| *v).collect();
    let steps = samples.iter().map(|(_, s)| s).sum();
    Ok((Estimate::from_samples(&values), steps))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub control: EnsembleControl,
    /// Euler–Maruyama steps spent, adjoint paths and particles together.
    pub sde_steps: u64,
}

/// Builds the next coefficient signal from `ref_control`.
///
/// Streams: particle `l` uses generator `l` of `Synthesis`; the gradient
/// estimates at knot `k` share one CRN block, `Adjoint { knot: k }` with
/// particle 0, across all particles. The iteration index is taken from
/// `noise.id.iteration`.
pub fn ks_synthesize<M, C>(
    model: &M,
    grid: &TimeGrid,
    ref_control: &EnsembleControl,
    cost: &C,
    cfg: &DescentConfig,
    noise: &NoiseStream,
) -> Result<Synthesis>
where
    M: Model + ?Sized,
    C: CostFunction + ?Sized,
{
    cfg.validate()?;
    ref_control.check_against(grid, model.basis_len())?;
    Error::check_dim("control space", model.basis_len(), cfg.space.dim())?;
    let affine = model.is_control_affine();
    if !affine && cfg.grid_search.is_none() {
        return Err(Error::UnsupportedStructure);
    }

    let n = model.state_dim();
    let base = NoiseStream::new(
        noise.seed,
        StreamId::new(noise.id.iteration, 0, Purpose::Synthesis),
    );
    let mut rngs: Vec<_> = (0..cfg.particles)
        .map(|l| base.path_rng(l as u64))
        .collect();
    let mut particles: Vec<Vec<f64>> = rngs
        .iter_mut()
        .map(|rng| {
            let mut x = vec![0.0; n];
            model.sample_initial(rng, &mut x);
            x
        })
        .collect();

    let mut control = EnsembleControl::zeros_on(grid, model.basis_len());
    let mut steps = 0u64;
    for k in 0..grid.intervals() {
        let t = grid.knot(k);
        let adjoint = base.with_purpose(Purpose::Adjoint { knot: k as u32 });
        let grads: Vec<(Vec<f64>, u64)> = particles
            .par_iter()
            .map(|x| {
                gradient_only(
                    model,
                    grid,
                    ref_control,
                    grid.knot_step(k),
                    x,
                    cfg.adjoint_paths,
                    cost,
                    &adjoint,
                    cfg.fd_step,
                )
            })
            .collect::<Result<_>>()?;
        steps += grads.iter().map(|(_, s)| s).sum::<u64>();
        let points: Vec<(&[f64], &[f64])> = particles
            .iter()
            .zip(&grads)
            .map(|(x, (g, _))| (x.as_slice(), g.as_slice()))
            .collect();

        let row = if affine {
            argmin_control(&averaged_coeffs(model, t, &points)?, &cfg.space)?
        } else {
            let gs = cfg.grid_search.as_ref().expect("checked above");
            argmin_grid(model, t, &points, &gs.lo, &gs.hi, gs.resolution, &cfg.space)?
        };
        control.row_mut(k).copy_from_slice(&row);

        let mut integ = Integrator::new(model, grid, &control)?;
        for (x, rng) in particles.iter_mut().zip(rngs.iter_mut()) {
            integ.advance(grid.knot_step(k), grid.knot_step(k + 1), x, rng, |_, _| {})?;
        }
        steps += integ.steps();
    }
    Ok(Synthesis {
        control,
        sde_steps: steps,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub std_error: f64,
    pub control: EnsembleControl,
    /// Steps spent synthesizing this iterate (0 for the initial guess).
    pub synthesis_steps: u64,
    pub evaluation_steps: u64,
    /// Seconds since the start of the run; not serialized so that reports
    /// stay reproducible.
    #[serde(skip)]
    pub elapsed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The best-so-far cost moved by less than the tolerance, or the
    /// synthesized signal reproduced its reference exactly.
    Converged,
    /// Too many consecutive non-improving iterations.
    Patience,
    MaxIters,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescentReport {
    /// Iterate 0 is the initial guess.
    pub iterations: Vec<IterationRecord>,
    pub best_iteration: usize,
    pub best_cost: f64,
    pub best_std_error: f64,
    /// Best-cost iterate, which need not be the last one.
    pub final_control: EnsembleControl,
    pub stop_reason: Option<StopReason>,
    #[serde(skip)]
    pub wall_time: f64,
}

// Equality ignores wall-clock fields: two runs with the same inputs compare equal.
impl PartialEq for IterationRecord {
    fn eq(&self, other: &Self) -> bool {
        self.iteration == other.iteration
            && self.cost.to_bits() == other.cost.to_bits()
            && self.std_error.to_bits() == other.std_error.to_bits()
            && self.control == other.control
            && self.synthesis_steps == other.synthesis_steps
            && self.evaluation_steps == other.evaluation_steps
    }
}

impl PartialEq for DescentReport {
    fn eq(&self, other: &Self) -> bool {
        self.iterations == other.iterations
            && self.best_iteration == other.best_iteration
            && self.best_cost.to_bits() == other.best_cost.to_bits()
            && self.best_std_error.to_bits() == other.best_std_error.to_bits()
            && self.final_control == other.final_control
            && self.stop_reason == other.stop_reason
    }
}

impl DescentReport {
    /// Number of synthesis iterations performed.
    pub fn iteration_count(&self) -> usize {
        self.iterations.len().saturating_sub(1)
    }

    /// `min_{j ≤ k} Ǐ^j` for each `k`.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.iterations
            .iter()
            .scan(f64::INFINITY, |best, r| {
                *best = best.min(r.cost);
                Some(*best)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Error)]
#[error("descent failed after {} evaluated iterates: {source}", partial.iterations.len())]
pub struct DescentFailure {
    pub source: Error,
    pub partial: Box<DescentReport>,
}

/// Runs the descent loop from `initial` and returns the best iterate seen.
///
/// Every iterate is scored on the same test paths (`Evaluation` stream,
/// iteration 0), so consecutive costs are compared with common random numbers.
pub fn run_descent<M, C>(
    model: &M,
    grid: &TimeGrid,
    cost: &C,
    cfg: &DescentConfig,
    initial: &EnsembleControl,
    mut progress: impl FnMut(&IterationRecord),
) -> Result<DescentReport, DescentFailure>
where
    M: Model + ?Sized,
    C: CostFunction + ?Sized,
{
    let started = Instant::now();
    let mut report = DescentReport {
        iterations: Vec::new(),
        best_iteration: 0,
        best_cost: f64::INFINITY,
        best_std_error: f64::NAN,
        final_control: initial.clone(),
        stop_reason: None,
        wall_time: 0.0,
    };
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(source) => {
                    report.wall_time = started.elapsed().as_secs_f64();
                    return Err(DescentFailure {
                        source,
                        partial: Box::new(report),
                    });
                }
            }
        };
    }

    attempt!(cfg.validate());
    attempt!(initial.check_against(grid, model.basis_len()));
    let eval_stream = NoiseStream::for_purpose(cfg.seed, Purpose::Evaluation);

    let (c0, s0) = attempt!(evaluate_cost_counted(
        model,
        grid,
        initial,
        cost,
        cfg.eval_paths,
        &eval_stream
    ));
    let first = IterationRecord {
        iteration: 0,
        cost: c0.mean,
        std_error: c0.std_error,
        control: initial.clone(),
        synthesis_steps: 0,
        evaluation_steps: s0,
        elapsed: started.elapsed().as_secs_f64(),
    };
    progress(&first);
    report.best_cost = c0.mean;
    report.best_std_error = c0.std_error;
    report.iterations.push(first);

    let mut reference = initial.clone();
    let mut stale = 0;
    for it in 1..=cfg.max_iters {
        let noise = NoiseStream::new(cfg.seed, StreamId::new(it as u32, 0, Purpose::Synthesis));
        let syn = attempt!(ks_synthesize(model, grid, &reference, cost, cfg, &noise));
        let (c, s) = attempt!(evaluate_cost_counted(
            model,
            grid,
            &syn.control,
            cost,
            cfg.eval_paths,
            &eval_stream
        ));
        let record = IterationRecord {
            iteration: it,
            cost: c.mean,
            std_error: c.std_error,
            control: syn.control.clone(),
            synthesis_steps: syn.sde_steps,
            evaluation_steps: s,
            elapsed: started.elapsed().as_secs_f64(),
        };
        progress(&record);
        report.iterations.push(record);

        let decrease = report.best_cost - c.mean;
        if c.mean < report.best_cost {
            report.best_cost = c.mean;
            report.best_std_error = c.std_error;
            report.best_iteration = it;
            report.final_control = syn.control.clone();
        }
        let fixed_point = syn.control == reference;
        reference = syn.control;

        if fixed_point || decrease.abs() < cfg.tolerance {
            report.stop_reason = Some(StopReason::Converged);
            break;
        }
        if decrease >= cfg.tolerance {
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                report.stop_reason = Some(StopReason::Patience);
                break;
            }
        }
    }
    report.stop_reason.get_or_insert(StopReason::MaxIters);
    report.wall_time = started.elapsed().as_secs_f64();
    Ok(report)
}
