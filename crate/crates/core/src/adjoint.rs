//! Monte-Carlo Feynman–Kac estimates of the backward Kolmogorov solution
//! `p̄_t(x) = E ℓ(X̄_{t,T}(x))` and its spatial gradient, plus the duality and
//! increment-formula diagnostics built on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::CostFunction;
use crate::descent::evaluate_cost;
use crate::hamiltonian::hamiltonian;
use crate::noise::{NoiseStream, Purpose};
use crate::sde::{EnsembleControl, Integrator, Model, TimeGrid};
use crate::stats::{combined, Estimate};
use crate::{Error, Result};

/// Finite-difference step for the adjoint gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "h", rename_all = "snake_case")]
pub enum FdStep {
    /// `h_i = h`.
    Absolute(f64),
    /// `h_i = h · max(1, |x_i|)`.
    Relative(f64),
}

impl Default for FdStep {
    fn default() -> Self {
        FdStep::Relative(1e-3)
    }
}

impl FdStep {
    pub fn at(&self, xi: f64) -> f64 {
        match *self {
            FdStep::Absolute(h) => h,
            FdStep::Relative(h) => h * xi.abs().max(1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let h = match *self {
            FdStep::Absolute(h) | FdStep::Relative(h) => h,
        };
        if h > 0.0 && h.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "finite-difference step must be > 0, got {h}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointEstimate {
    /// `p̄_t(x)`
    pub value: f64,
    /// `∇_x p̄_t(x)`; empty for value-only estimates.
    pub gradient: Vec<f64>,
    /// Standard error of `value`.
    pub std_error: f64,
    /// Per-coordinate standard error of the CRN difference quotients.
    pub gradient_std_error: Vec<f64>,
    pub n_paths: usize,
    /// Euler–Maruyama steps spent on this estimate.
    pub sde_steps: u64,
}

/// Per-path samples: optionally `ℓ(X_T)` from `x`, then one central
/// difference quotient per coordinate, all `2n (+1)` simulations of path `j`
/// driven by the same generator `j` of `noise`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn path_samples<M, C>(
    model: &M,
    grid: &TimeGrid,
    control: &EnsembleControl,
    start_step: usize,
    x: &[f64],
    n_paths: usize,
    cost: &C,
    noise: &NoiseStream,
    step: Option<FdStep>,
    with_value: bool,
) -> Result<(Vec<Vec<f64>>, u64)>
where
    M: Model + ?Sized,
    C: CostFunction + ?Sized,
{
    let n = model.state_dim();
    let rows: Vec<(Vec<f64>, u64)> = (0..n_paths)
        .into_par_iter()
        .map(|j| {
            let mut integ = Integrator::new(model, grid, control)?;
            let base = noise.path_rng(j as u64);
            let mut row = Vec::with_capacity(n + 1);
            let mut y = vec![0.0; n];
            if with_value {
                y.copy_from_slice(x);
                integ.advance_to_end(start_step, &mut y, &mut base.clone())?;
                row.push(cost.eval(&y));
            }
            if let Some(step) = step {
                for i in 0..n {
                    let h = step.at(x[i]);
                    y.copy_from_slice(x);
                    y[i] += h;
                    integ.advance_to_end(start_step, &mut y, &mut base.clone())?;
                    let plus = cost.eval(&y);
                    y.copy_from_slice(x);
                    y[i] -= h;
                    integ.advance_to_end(start_step, &mut y, &mut base.clone())?;
                    let minus = cost.eval(&y);
                    row.push((plus - minus) / (2.0 * h));
                }
            }
            Ok((row, integ.steps()))
        })
        .collect::<Result<_>>()?;
    let steps = rows.iter().map(|(_, s)| s).sum();
    Ok((rows.into_iter().map(|(r, _)| r).collect(), steps))
}

fn column(rows: &[Vec<f64>], c: usize) -> Vec<f64> {
    rows.iter().map(|r| r[c]).collect()
}

fn check_inputs<M: Model + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    control: &EnsembleControl,
    x: &[f64],
    n_paths: usize,
) -> Result<()> {
    Error::check_dim("state", model.state_dim(), x.len())?;
    control.check_against(grid, model.basis_len())?;
    if n_paths == 0 {
        return Err(Error::invalid("need at least one Feynman–Kac path"));
    }
    Ok(())
}

/// `(1/N) Σ_j ℓ(X̄^j_{t,T}(x))` under `ref_control`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_p<M, C>(
    model: &M,
    grid: &TimeGrid,
    ref_control: &EnsembleControl,
    t: f64,
    x: &[f64],
    n_paths: usize,
    cost: &C,
    noise: &NoiseStream,
) -> Result<AdjointEstimate>
where
    M: Model + ?Sized,
    C: CostFunction + ?Sized,
{
    check_inputs(model, grid, ref_control, x, n_paths)?;
    let start = grid.step_index(t)?;
    let (rows, steps) = path_samples(
        model,
        grid,
        ref_control,
        start,
        x,
        n_paths,
        cost,
        noise,
        None,
        true,
    )?;
    let v = Estimate::from_samples(&column(&rows, 0));
    Ok(AdjointEstimate {
        value: v.mean,
        gradient: Vec::new(),
        std_error: v.std_error,
        gradient_std_error: Vec::new(),
        n_paths,
        sde_steps: steps,
    })
}

/// Value and central-difference gradient of `p̄_t` at `x`; every perturbed
/// start reuses the same `N` increment streams.
#[allow(clippy::too_many_arguments)]
pub fn estimate_grad_p<M, C>(
    model: &M,
    grid: &TimeGrid,
    ref_control: &EnsembleControl,
    t: f64,
    x: &[f64],
    n_paths: usize,
    cost: &C,
    noise: &NoiseStream,
    step: FdStep,
) -> Result<AdjointEstimate>
where
    M: Model + ?Sized,
    C: CostFunction + ?Sized,
{
    check_inputs(model, grid, ref_control, x, n_paths)?;
    step.validate()?;
    let start = grid.step_index(t)?;
    let (rows, steps) = path_samples(
        model,
        grid,
        ref_control,
        start,
        x,
        n_paths,
        cost,
        noise,
        Some(step),
        true,
    )?;
    let v = Estimate::from_samples(&column(&rows, 0));
    let grads: Vec<Estimate> = (1..=x.len())
        .map(|c| Estimate::from_samples(&column(&rows, c)))
        .collect();
    Ok(AdjointEstimate {
        value: v.mean,
        gradient: grads.iter().map(|g| g.mean).collect(),
        std_error: v.std_error,
        gradient_std_error: grads.iter().map(|g| g.std_error).collect(),
        n_paths,
        sde_steps: steps,
    })
}

/// Gradient only, as used by the control synthesis.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gradient_only<M, C>(
    model: &M,
    grid: &TimeGrid,
    ref_control: &EnsembleControl,
    start_step: usize,
    x: &[f64],
    n_paths: usize,
    cost: &C,
    noise: &NoiseStream,
    step: FdStep,
) -> Result<(Vec<f64>, u64)>
where
    M: Model + ?Sized,
    C: CostFunction + ?Sized,
{
    let (rows, steps) = path_samples(
        model,
        grid,
        ref_control,
        start_step,
        x,
        n_paths,
        cost,
        noise,
        Some(step),
        false,
    )?;
    let mut g = vec![0.0; x.len()];
    for row in &rows {
        g.iter_mut().zip(row).for_each(|(gi, r)| *gi += r);
    }
    g.iter_mut().for_each(|gi| *gi /= n_paths as f64);
    Ok((g, steps))
}

/// `∫ p̄_t dμ_t − ∫ p̄_0 dμ_0` at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectEstimate {
    pub time: f64,
    pub defect: f64,
    pub std_error: f64,
}

/// Duality defect with the same control generating `μ` and `p̄`; expected ≈ 0.
#[allow(clippy::too_many_arguments)]
pub fn duality_defect<M, C>(
    model: &M,
    grid: &TimeGrid,
    control: &EnsembleControl,
    cost: &C,
    times: &[f64],
    n_paths: usize,
    n_particles: usize,
    noise: &NoiseStream,
) -> Result<Vec<DefectEstimate>>
where
    M: Model + ?Sized,
    C: CostFunction + ?Sized,
{
    duality_defect_between(
        model,
        grid,
        control,
        control,
        cost,
        times,
        n_paths,
        n_particles,
        noise,
    )
}

/// Duality defect with `μ` generated by `law_control` and `p̄` by
/// `adjoint_control`. At `t = T` this estimates `J[law] − J[adjoint]`.
///
/// Particle `l` follows generator `l` of the `Ensemble` stream; its inner
/// Feynman–Kac paths at knot `k` use `Adjoint { knot: k }` with particle `l`,
/// so every estimate is independent. Standard errors come from the
/// per-particle differences, which keeps the pathwise correlation between
/// `p̄_t(X_t)` and `p̄_0(X_0)`.
#[allow(clippy::too_many_arguments)]
pub fn duality_defect_between<M, C>(
    model: &M,
    grid: &TimeGrid,
    law_control: &EnsembleControl,
    adjoint_control: &EnsembleControl,
    cost: &C,
    times: &[f64],
    n_paths: usize,
    n_particles: usize,
    noise: &NoiseStream,
) -> Result<Vec<DefectEstimate>>
where
    M: Model + ?Sized,
    C: CostFunction + ?Sized,
{
    law_control.check_against(grid, model.basis_len())?;
    adjoint_control.check_against(grid, model.basis_len())?;
    if n_paths == 0 || n_particles < 2 {
        return Err(Error::invalid("duality defect needs N >= 1 and M >= 2"));
    }
    let knots: Vec<usize> = times
        .iter()
        .map(|&t| grid.knot_index(t))
        .collect::<Result<_>>()?;
    let n = model.state_dim();
    let particle_stream = noise.with_purpose(Purpose::Ensemble);

    let per_particle: Vec<Vec<f64>> = (0..n_particles)
        .into_par_iter()
        .map(|l| {
            let mut integ = Integrator::new(model, grid, law_control)?;
            let mut rng = particle_stream.path_rng(l as u64);
            let mut x = vec![0.0; n];
            model.sample_initial(&mut rng, &mut x);
            let mut at_knot = vec![x.clone()];
            let substeps = grid.substeps();
            integ.advance(0, grid.total_steps(), &mut x, &mut rng, |s, x| {
                if s % substeps == 0 {
                    at_knot.push(x.to_vec());
                }
            })?;
            let p_at = |k: usize| -> Result<f64> {
                let inner = noise
                    .with_purpose(Purpose::Adjoint { knot: k as u32 })
                    .with_particle(l as u64);
                let (rows, _) = path_samples(
                    model,
                    grid,
                    adjoint_control,
                    grid.knot_step(k),
                    &at_knot[k],
                    n_paths,
                    cost,
                    &inner,
                    None,
                    true,
                )?;
                Ok(rows.iter().map(|r| r[0]).sum::<f64>() / n_paths as f64)
            };
            let p0 = p_at(0)?;
            knots.iter().map(|&k| Ok(p_at(k)? - p0)).collect()
        })
        .collect::<Result<_>>()?;

    Ok(knots
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let d = Estimate::from_samples(&column(&per_particle, i));
            DefectEstimate {
                time: grid.knot(k),
                defect: d.mean,
                std_error: d.std_error,
            }
        })
        .collect())
}

/// Both sides of the increment formula
/// `J[u] − J[ū] = ∫∫ (H̄_s(x, u_s) − H̄_s(x, ū_s)) dμ_s(x) ds`,
/// where `H̄` uses `∇p̄` under `ū` and `μ` is the law under `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementCheck {
    /// `J[u] − J[ū]` from two independent cost evaluations.
    pub direct: f64,
    pub direct_std_error: f64,
    /// Left-endpoint quadrature of the Hamiltonian gap on the control grid.
    pub integral: f64,
    pub integral_std_error: f64,
}

impl IncrementCheck {
    pub fn combined_std_error(&self) -> f64 {
        combined(self.direct_std_error, self.integral_std_error)
    }

    pub fn z_score(&self) -> f64 {
        crate::stats::z_score(self.direct - self.integral, self.combined_std_error())
    }
}

/// Evaluates both sides of the increment formula.
///
/// The direct side uses `n_direct` test paths per control. The integral side
/// follows `n_particles` paths under `target`; at each knot every particle
/// gets its own CRN gradient estimate from `n_inner` paths under `reference`.
#[allow(clippy::too_many_arguments)]
pub fn increment_check<M, C>(
    model: &M,
    grid: &TimeGrid,
    reference: &EnsembleControl,
    target: &EnsembleControl,
    cost: &C,
    n_direct: usize,
    n_particles: usize,
    n_inner: usize,
    noise: &NoiseStream,
    step: FdStep,
) -> Result<IncrementCheck>
where
    M: Model + ?Sized,
    C: CostFunction + ?Sized,
{
    reference.check_against(grid, model.basis_len())?;
    target.check_against(grid, model.basis_len())?;
    step.validate()?;
    if n_particles < 2 || n_inner == 0 {
        return Err(Error::invalid("increment check needs M >= 2 and N >= 1"));
    }
    let eval = noise.with_purpose(Purpose::Evaluation);
    let j_target = evaluate_cost(model, grid, target, cost, n_direct, &eval.with_particle(1))?;
    let j_ref = evaluate_cost(
        model,
        grid,
        reference,
        cost,
        n_direct,
        &eval.with_particle(2),
    )?;

    let n = model.state_dim();
    let particle_stream = noise.with_purpose(Purpose::Ensemble);
    let per_particle: Vec<f64> = (0..n_particles)
        .into_par_iter()
        .map(|l| {
            let mut integ = Integrator::new(model, grid, target)?;
            let mut rng = particle_stream.path_rng(l as u64);
            let mut x = vec![0.0; n];
            model.sample_initial(&mut rng, &mut x);
            let mut total = 0.0;
            for k in 0..grid.intervals() {
                let t = grid.knot(k);
                let inner = noise
                    .with_purpose(Purpose::Adjoint { knot: k as u32 })
                    .with_particle(l as u64);
                let (psi, _) = gradient_only(
                    model,
                    grid,
                    reference,
                    grid.knot_step(k),
                    &x,
                    n_inner,
                    cost,
                    &inner,
                    step,
                )?;
                let gap = hamiltonian(model, t, &x, &psi, target.row(k))
                    - hamiltonian(model, t, &x, &psi, reference.row(k));
                total += gap * (grid.knot(k + 1) - t);
                integ.advance(
                    grid.knot_step(k),
                    grid.knot_step(k + 1),
                    &mut x,
                    &mut rng,
                    |_, _| {},
                )?;
            }
            Ok(total)
        })
        .collect::<Result<_>>()?;
    let integral = Estimate::from_samples(&per_particle);

    Ok(IncrementCheck {
        direct: j_target.mean - j_ref.mean,
        direct_std_error: combined(j_target.std_error, j_ref.std_error),
        integral: integral.mean,
        integral_std_error: integral.std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{central_moment_cost, ConstantCost, MomentIndex};
    use crate::models::{brownian_model, controlled_linear_model};
    use crate::noise::Purpose;

    fn square() -> impl CostFunction {
        central_moment_cost(MomentIndex::new(vec![2], vec![0.0]).unwrap())
    }

    fn stream() -> NoiseStream {
        NoiseStream::for_purpose(7, Purpose::Diagnostic(0))
    }

    #[test]
    fn constant_cost_is_exact() {
        let m = brownian_model(0.05).unwrap();
        let g = TimeGrid::per_unit_time(6.0, 2, 5).unwrap();
        let u = EnsembleControl::zeros_on(&g, 1);
        let e = estimate_grad_p(
            &m,
            &g,
            &u,
            1.0,
            &[0.3],
            50,
            &ConstantCost(3.5),
            &stream(),
            FdStep::default(),
        )
        .unwrap();
        assert_eq!(e.value, 3.5);
        assert_eq!(e.std_error, 0.0);
        assert_eq!(e.gradient, vec![0.0]);
        assert_eq!(e.sde_steps, 50 * 3 * 50);
    }

    #[test]
    fn terminal_condition() {
        let m = brownian_model(0.05).unwrap();
        let g = TimeGrid::per_unit_time(6.0, 2, 5).unwrap();
        let u = EnsembleControl::zeros_on(&g, 1);
        let e = estimate_p(&m, &g, &u, 6.0, &[1.7], 20, &square(), &stream()).unwrap();
        assert_eq!(e.value, 1.7 * 1.7);
        assert_eq!(e.std_error, 0.0);
        assert_eq!(e.sde_steps, 0);
    }

    #[test]
    fn frozen_gradient_is_exact_difference() {
        let m = controlled_linear_model(0.0, 0.0, 0.0).unwrap();
        let g = TimeGrid::uniform(1.0, 4, 2).unwrap();
        let u = EnsembleControl::zeros_on(&g, 1);
        for &x in &[0.5, -2.0, 3.0] {
            let a = estimate_grad_p(
                &m,
                &g,
                &u,
                0.25,
                &[x],
                3,
                &square(),
                &stream(),
                FdStep::default(),
            )
            .unwrap();
            let b = estimate_grad_p(
                &m,
                &g,
                &u,
                0.25,
                &[x],
                3,
                &square(),
                &stream(),
                FdStep::default(),
            )
            .unwrap();
            assert_eq!(a, b);
            // central differences are exact on quadratics up to rounding
            assert!((a.gradient[0] - 2.0 * x).abs() < 1e-9);
            let half = estimate_grad_p(
                &m,
                &g,
                &u,
                0.25,
                &[x],
                3,
                &square(),
                &stream(),
                FdStep::Relative(5e-4),
            )
            .unwrap();
            assert!((half.gradient[0] - a.gradient[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn off_grid_time_is_rejected() {
        let m = brownian_model(0.05).unwrap();
        let g = TimeGrid::per_unit_time(6.0, 2, 5).unwrap();
        let u = EnsembleControl::zeros_on(&g, 1);
        let r = estimate_p(&m, &g, &u, 0.123, &[0.0], 10, &square(), &stream());
        assert!(matches!(r, Err(Error::OffGrid(_))));
        let r = estimate_grad_p(
            &m,
            &g,
            &u,
            0.0,
            &[0.0],
            10,
            &square(),
            &stream(),
            FdStep::Absolute(0.0),
        );
        assert!(r.is_err());
    }

    #[test]
    fn frozen_duality_defect_is_zero() {
        let m = brownian_model(0.0)
            .unwrap()
            .with_initial(crate::sde::InitialLaw::Gaussian {
                mean: vec![1.0],
                std: vec![0.5],
            })
            .unwrap();
        let g = TimeGrid::per_unit_time(6.0, 1, 2).unwrap();
        let u = EnsembleControl::zeros_on(&g, 1);
        let d = duality_defect(&m, &g, &u, &square(), &[1.0, 3.0, 6.0], 4, 16, &stream()).unwrap();
        for e in d {
            assert_eq!(e.defect, 0.0);
            assert_eq!(e.std_error, 0.0);
        }
    }
}
