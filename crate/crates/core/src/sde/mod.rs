//! Controlled SDE models and seeded Euler–Maruyama integration.

mod control;
mod ensemble;
mod grid;

pub use control::EnsembleControl;
pub use ensemble::ParticleEnsemble;
pub use grid::TimeGrid;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::noise::NoiseStream;
use crate::{Error, Result};

/// A finite point of the state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State(Vec<f64>);

impl State {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("non-finite state {coords:?}")));
        }
        Ok(Self(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for State {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Law of `X_0` with independent coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialLaw {
    Dirac(Vec<f64>),
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Dirac(x) => x.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn sample(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        match self {
            InitialLaw::Dirac(x) => out.copy_from_slice(x),
            InitialLaw::Gaussian { mean, std } => {
                for ((o, &m), &s) in out.iter_mut().zip(mean).zip(std) {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = m + s * z;
                }
            }
        }
    }

    pub(crate) fn validate(&self, dim: usize) -> Result<()> {
        Error::check_dim("initial law", dim, self.dim())?;
        if let InitialLaw::Gaussian { mean, std } = self {
            Error::check_dim("initial law std", mean.len(), std.len())?;
            if std.iter().any(|s| s.is_nan() || *s < 0.0) {
                return Err(Error::invalid("initial law std must be non-negative"));
            }
        }
        Ok(())
    }
}

/// A controlled diffusion `dX = f_t(X, w) dt + σ_t(X) dW` together with the
/// predefined Markovian control structure `w(t, x) = Σ_j ξ_j(x) u_j(t)`.
pub trait Model: Send + Sync {
    /// `n`
    fn state_dim(&self) -> usize;
    /// `m`
    fn noise_dim(&self) -> usize;
    /// Dimension `d` of the Markovian control value `w`.
    fn control_dim(&self) -> usize {
        1
    }
    /// Number of basis maps `ξ_j`, i.e. of learned coefficients per interval.
    fn basis_len(&self) -> usize;

    fn drift(&self, t: f64, x: &[f64], w: &[f64], out: &mut [f64]);

    /// `σ_t(x)` as an `n × m` row-major matrix.
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// `ξ_j(x)` stacked as a `basis_len × d` row-major matrix.
    fn feedback_basis(&self, x: &[f64], out: &mut [f64]);

    fn sample_initial(&self, rng: &mut dyn RngCore, out: &mut [f64]);

    /// Whether `f_t(x, ·)` is affine in `w`.
    fn is_control_affine(&self) -> bool {
        false
    }
}

impl<M: Model + ?Sized> Model for &M {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn noise_dim(&self) -> usize {
        (**self).noise_dim()
    }
    fn control_dim(&self) -> usize {
        (**self).control_dim()
    }
    fn basis_len(&self) -> usize {
        (**self).basis_len()
    }
    fn drift(&self, t: f64, x: &[f64], w: &[f64], out: &mut [f64]) {
        (**self).drift(t, x, w, out)
    }
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).diffusion(t, x, out)
    }
    fn feedback_basis(&self, x: &[f64], out: &mut [f64]) {
        (**self).feedback_basis(x, out)
    }
    fn sample_initial(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        (**self).sample_initial(rng, out)
    }
    fn is_control_affine(&self) -> bool {
        (**self).is_control_affine()
    }
}

impl<M: Model + ?Sized> Model for Box<M> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn noise_dim(&self) -> usize {
        (**self).noise_dim()
    }
    fn control_dim(&self) -> usize {
        (**self).control_dim()
    }
    fn basis_len(&self) -> usize {
        (**self).basis_len()
    }
    fn drift(&self, t: f64, x: &[f64], w: &[f64], out: &mut [f64]) {
        (**self).drift(t, x, w, out)
    }
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).diffusion(t, x, out)
    }
    fn feedback_basis(&self, x: &[f64], out: &mut [f64]) {
        (**self).feedback_basis(x, out)
    }
    fn sample_initial(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        (**self).sample_initial(rng, out)
    }
    fn is_control_affine(&self) -> bool {
        (**self).is_control_affine()
    }
}

/// `w = Σ_j ξ_j(x) u_j` for a stacked basis matrix.
pub fn markov_value(basis: &[f64], coeffs: &[f64], w: &mut [f64]) {
    let d = w.len();
    w.fill(0.0);
    for (xi, &u) in basis.chunks_exact(d).zip(coeffs) {
        for (wc, &b) in w.iter_mut().zip(xi) {
            *wc += b * u;
        }
    }
}

/// One Euler–Maruyama update `x + f_t(x, w) dt + σ_t(x) dW`.
pub fn em_step<M: Model + ?Sized>(
    model: &M,
    t: f64,
    x: &State,
    w: &[f64],
    dt: f64,
    dw: &[f64],
) -> Result<State> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::invalid(format!(
            "step length must be positive, got {dt}"
        )));
    }
    Error::check_dim("state", model.state_dim(), x.dim())?;
    Error::check_dim("control value", model.control_dim(), w.len())?;
    Error::check_dim("noise increment", model.noise_dim(), dw.len())?;
    let mut out = x.0.clone();
    let mut drift = vec![0.0; model.state_dim()];
    let mut diff = vec![0.0; model.state_dim() * model.noise_dim()];
    em_update(model, t, &mut out, w, dt, dw, &mut drift, &mut diff)?;
    Ok(State(out))
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn em_update<M: Model + ?Sized>(
    model: &M,
    t: f64,
    x: &mut [f64],
    w: &[f64],
    dt: f64,
    dw: &[f64],
    drift: &mut [f64],
    diff: &mut [f64],
) -> Result<()> {
    model.drift(t, x, w, drift);
    model.diffusion(t, x, diff);
    let m = dw.len();
    for (i, xi) in x.iter_mut().enumerate() {
        let noise: f64 = diff[i * m..(i + 1) * m]
            .iter()
            .zip(dw)
            .map(|(s, z)| s * z)
            .sum();
        *xi += drift[i] * dt + noise;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegrationBlowup {
            t: t + dt,
            state: x.to_vec(),
        });
    }
    Ok(())
}

/// Reusable Euler–Maruyama driver for one `(model, grid, control)` triple.
pub(crate) struct Integrator<'a, M: Model + ?Sized> {
    model: &'a M,
    grid: &'a TimeGrid,
    control: &'a EnsembleControl,
    basis: Vec<f64>,
    w: Vec<f64>,
    drift: Vec<f64>,
    diff: Vec<f64>,
    dw: Vec<f64>,
    steps: u64,
}

impl<'a, M: Model + ?Sized> Integrator<'a, M> {
    pub fn new(model: &'a M, grid: &'a TimeGrid, control: &'a EnsembleControl) -> Result<Self> {
        control.check_against(grid, model.basis_len())?;
        let (n, m, d) = (model.state_dim(), model.noise_dim(), model.control_dim());
        Ok(Self {
            model,
            grid,
            control,
            basis: vec![0.0; model.basis_len() * d],
            w: vec![0.0; d],
            drift: vec![0.0; n],
            diff: vec![0.0; n * m],
            dw: vec![0.0; m],
            steps: 0,
        })
    }

    /// Number of Euler–Maruyama steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Integrates from global step `from` to `to`, calling `visit(s, x)` after
    /// each step with `s` the index of the step boundary just reached.
    pub fn advance<R: Rng + ?Sized>(
        &mut self,
        from: usize,
        to: usize,
        x: &mut [f64],
        rng: &mut R,
        mut visit: impl FnMut(usize, &[f64]),
    ) -> Result<()> {
        for s in from..to {
            let k = self.grid.interval_of_step(s);
            let t = self.grid.step_time(s);
            let dt = self.grid.interval_dt(k);
            self.model.feedback_basis(x, &mut self.basis);
            markov_value(&self.basis, self.control.row(k), &mut self.w);
            let sqrt_dt = dt.sqrt();
            for z in self.dw.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *z = g * sqrt_dt;
            }
            em_update(
                self.model,
                t,
                x,
                &self.w,
                dt,
                &self.dw,
                &mut self.drift,
                &mut self.diff,
            )?;
            self.steps += 1;
            visit(s + 1, x);
        }
        Ok(())
    }

    pub fn advance_to_end<R: Rng + ?Sized>(
        &mut self,
        from: usize,
        x: &mut [f64],
        rng: &mut R,
    ) -> Result<()> {
        self.advance(from, self.grid.total_steps(), x, rng, |_, _| {})
    }
}

/// Sampled path: `(time, state)` at every substep boundary.
pub type Path = Vec<(f64, State)>;

/// Simulates one path from `(start_time, start)` to the horizon using the
/// first generator of `noise`.
pub fn simulate_path<M: Model + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    control: &EnsembleControl,
    start_time: f64,
    start: &State,
    noise: &NoiseStream,
) -> Result<Path> {
    Error::check_dim("state", model.state_dim(), start.dim())?;
    let from = grid.step_index(start_time)?;
    let mut integ = Integrator::new(model, grid, control)?;
    let mut rng = noise.path_rng(0);
    let mut x = start.as_slice().to_vec();
    let mut path = Vec::with_capacity(grid.total_steps() - from + 1);
    path.push((grid.step_time(from), start.clone()));
    integ.advance(from, grid.total_steps(), &mut x, &mut rng, |s, x| {
        path.push((grid.step_time(s), State(x.to_vec())));
    })?;
    Ok(path)
}

/// Full-resolution paths from the initial law; path `l` uses generator `l`
/// of `noise`, so it matches particle `l` of [`sample_ensemble`].
pub fn sample_paths<M: Model + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    control: &EnsembleControl,
    count: usize,
    noise: &NoiseStream,
) -> Result<Vec<Path>> {
    control.check_against(grid, model.basis_len())?;
    let n = model.state_dim();
    (0..count)
        .into_par_iter()
        .map(|l| {
            let mut integ = Integrator::new(model, grid, control)?;
            let mut rng = noise.path_rng(l as u64);
            let mut x = vec![0.0; n];
            model.sample_initial(&mut rng, &mut x);
            let mut path = Vec::with_capacity(grid.total_steps() + 1);
            path.push((grid.step_time(0), State(x.clone())));
            integ.advance(0, grid.total_steps(), &mut x, &mut rng, |s, x| {
                path.push((grid.step_time(s), State(x.to_vec())));
            })?;
            Ok(path)
        })
        .collect()
}

/// Draws `count` paths from the initial law, path `l` using generator `l` of
/// `noise`, and returns the empirical measures at every knot `t_0, …, t_K`.
pub fn sample_ensemble<M: Model + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    control: &EnsembleControl,
    count: usize,
    noise: &NoiseStream,
) -> Result<Vec<ParticleEnsemble>> {
    if count == 0 {
        return Err(Error::invalid("ensemble size must be at least 1"));
    }
    control.check_against(grid, model.basis_len())?;
    let n = model.state_dim();
    let knots = grid.intervals() + 1;
    let per_particle: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|l| {
            let mut integ = Integrator::new(model, grid, control)?;
            let mut rng = noise.path_rng(l as u64);
            let mut x = vec![0.0; n];
            model.sample_initial(&mut rng, &mut x);
            let mut at_knots = Vec::with_capacity(knots * n);
            at_knots.extend_from_slice(&x);
            let substeps = grid.substeps();
            integ.advance(0, grid.total_steps(), &mut x, &mut rng, |s, x| {
                if s % substeps == 0 {
                    at_knots.extend_from_slice(x);
                }
            })?;
            Ok(at_knots)
        })
        .collect::<Result<_>>()?;

    Ok((0..knots)
        .map(|k| {
            let coords = per_particle
                .iter()
                .flat_map(|p| p[k * n..(k + 1) * n].iter().copied())
                .collect();
            ParticleEnsemble::new(grid.knot(k), n, coords)
        })
        .collect())
}
