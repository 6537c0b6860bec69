//! Concrete models: the theta neuron benchmark and analytic oracle models.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::sde::{InitialLaw, Model};
use crate::{Error, Result};

/// Parameters of the stochastic theta (Ermentrout–Kopell) neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaParams {
    /// Noise intensity of the baseline current, `dY = √(2β) dW`.
    pub beta: f64,
    /// Law of `(X_0, Y_0)`.
    pub initial: InitialLaw,
}

impl Default for ThetaParams {
    /// `β = 0.05`, `X_0 ~ N(π, 0.2²)`, `Y_0 ~ N(-1.75, 0.2²)`.
    ///
    /// With the current centred below the firing threshold the uncontrolled
    /// neuron is excitable but mostly quiet, so the spike cost has room to
    /// move in both directions.
    fn default() -> Self {
        Self {
            beta: 0.05,
            initial: InitialLaw::Gaussian {
                mean: vec![std::f64::consts::PI, -1.75],
                std: vec![0.2, 0.2],
            },
        }
    }
}

/// Phase `X` (left unwrapped on ℝ) and baseline current `Y`:
///
/// ```text
/// dX = [(1 − cos X) + (1 + cos X)(Y + w)] dt
/// dY = √(2β) dW
/// w  = u_1 + u_2 Y + u_3 cos X + u_4 sin X
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaModel {
    params: ThetaParams,
    noise_scale: f64,
}

pub fn theta_model(params: ThetaParams) -> Result<ThetaModel> {
    if !(params.beta >= 0.0 && params.beta.is_finite()) {
        return Err(Error::invalid(format!(
            "beta must be >= 0, got {}",
            params.beta
        )));
    }
    params.initial.validate(2)?;
    Ok(ThetaModel {
        noise_scale: (2.0 * params.beta).sqrt(),
        params,
    })
}

impl ThetaModel {
    pub fn params(&self) -> &ThetaParams {
        &self.params
    }
}

impl Model for ThetaModel {
    fn state_dim(&self) -> usize {
        2
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn basis_len(&self) -> usize {
        4
    }

    fn drift(&self, _t: f64, x: &[f64], w: &[f64], out: &mut [f64]) {
        let c = x[0].cos();
        out[0] = (1.0 - c) + (1.0 + c) * (x[1] + w[0]);
        out[1] = 0.0;
    }

    fn diffusion(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = self.noise_scale;
    }

    fn feedback_basis(&self, x: &[f64], out: &mut [f64]) {
        let (s, c) = x[0].sin_cos();
        out[0] = 1.0;
        out[1] = x[1];
        out[2] = c;
        out[3] = s;
    }

    fn sample_initial(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        self.params.initial.sample(rng, out)
    }

    fn is_control_affine(&self) -> bool {
        true
    }
}

/// Uncontrolled 1-D Brownian motion `dY = √(2β) dW`, law `N(y_0, 2βt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianModel {
    pub beta: f64,
    pub initial: InitialLaw,
    noise_scale: f64,
}

/// Brownian oracle model started at `δ_0`.
pub fn brownian_model(beta: f64) -> Result<BrownianModel> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be >= 0, got {beta}")));
    }
    Ok(BrownianModel {
        beta,
        initial: InitialLaw::Dirac(vec![0.0]),
        noise_scale: (2.0 * beta).sqrt(),
    })
}

impl BrownianModel {
    pub fn with_initial(mut self, initial: InitialLaw) -> Result<Self> {
        initial.validate(1)?;
        self.initial = initial;
        Ok(self)
    }
}

impl Model for BrownianModel {
    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn basis_len(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, _x: &[f64], _w: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn diffusion(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = self.noise_scale;
    }

    fn feedback_basis(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }

    fn sample_initial(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        self.initial.sample(rng, out)
    }

    fn is_control_affine(&self) -> bool {
        true
    }
}

/// `dX = (aX + b w) dt + σ dW` with the single basis function `ξ ≡ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub initial: InitialLaw,
}

/// Linear oracle model started at `δ_0`.
pub fn controlled_linear_model(a: f64, b: f64, sigma: f64) -> Result<LinearModel> {
    if ![a, b, sigma].iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("linear model coefficients must be finite"));
    }
    Ok(LinearModel {
        a,
        b,
        sigma,
        initial: InitialLaw::Dirac(vec![0.0]),
    })
}

impl LinearModel {
    pub fn with_initial(mut self, initial: InitialLaw) -> Result<Self> {
        initial.validate(1)?;
        self.initial = initial;
        Ok(self)
    }

    /// `E[X_T]` under a constant control `u` from the deterministic start `x`
    /// at time `t` (continuous-time dynamics).
    pub fn mean_at(&self, x: f64, u: f64, elapsed: f64) -> f64 {
        if self.a == 0.0 {
            x + self.b * u * elapsed
        } else {
            let e = (self.a * elapsed).exp();
            x * e + self.b * u * (e - 1.0) / self.a
        }
    }

    /// `Var[X_T]` after `elapsed` time from a deterministic start.
    pub fn variance_at(&self, elapsed: f64) -> f64 {
        if self.a == 0.0 {
            self.sigma * self.sigma * elapsed
        } else {
            self.sigma * self.sigma * ((2.0 * self.a * elapsed).exp() - 1.0) / (2.0 * self.a)
        }
    }
}

impl Model for LinearModel {
    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn basis_len(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, x: &[f64], w: &[f64], out: &mut [f64]) {
        out[0] = self.a * x[0] + self.b * w[0];
    }

    fn diffusion(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = self.sigma;
    }

    fn feedback_basis(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }

    fn sample_initial(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        self.initial.sample(rng, out)
    }

    fn is_control_affine(&self) -> bool {
        true
    }
}
