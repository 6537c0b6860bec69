//! Terminal costs `ℓ` and dispersion functionals.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::sde::{Model, ParticleEnsemble};
use crate::{Error, Result};

/// A terminal cost `ℓ: ℝⁿ → ℝ` with its gradient.
pub trait CostFunction: Send + Sync {
    fn eval(&self, x: &[f64]) -> f64;

    /// Defaults to central differences with `h = 1e-5 · max(1, |x_i|)`.
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        central_difference(|y| self.eval(y), x, 1e-5, out)
    }
}

impl<C: CostFunction + ?Sized> CostFunction for &C {
    fn eval(&self, x: &[f64]) -> f64 {
        (**self).eval(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (**self).gradient(x, out)
    }
}

impl<C: CostFunction + ?Sized> CostFunction for Box<C> {
    fn eval(&self, x: &[f64]) -> f64 {
        (**self).eval(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (**self).gradient(x, out)
    }
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], rel_step: f64, out: &mut [f64]) {
    let mut y = x.to_vec();
    for i in 0..x.len() {
        let h = rel_step * x[i].abs().max(1.0);
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        out[i] = (fp - fm) / (2.0 * h);
    }
}

/// `ℓ ≡ c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantCost(pub f64);

impl CostFunction for ConstantCost {
    fn eval(&self, _x: &[f64]) -> f64 {
        self.0
    }
    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// User-supplied cost with a finite-difference gradient.
pub struct FnCost<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Send + Sync> CostFunction for FnCost<F> {
    fn eval(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

/// Multi-index `α` and target `x̂` of a mixed central moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentIndex {
    pub alpha: Vec<u32>,
    pub target: Vec<f64>,
}

impl MomentIndex {
    pub fn new(alpha: Vec<u32>, target: Vec<f64>) -> Result<Self> {
        Error::check_dim("moment target", alpha.len(), target.len())?;
        if alpha.iter().sum::<u32>() == 0 {
            return Err(Error::invalid("moment order |alpha| must be at least 1"));
        }
        if target.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("moment target must be finite"));
        }
        Ok(Self { alpha, target })
    }

    pub fn order(&self) -> u32 {
        self.alpha.iter().sum()
    }
}

/// `ℓ(x) = Π_j (x_j − x̂_j)^{α_j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralMoment(MomentIndex);

pub fn central_moment_cost(idx: MomentIndex) -> CentralMoment {
    CentralMoment(idx)
}

impl CentralMoment {
    pub fn index(&self) -> &MomentIndex {
        &self.0
    }
}

impl CostFunction for CentralMoment {
    fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .alpha
            .iter()
            .zip(&self.0.target)
            .zip(x)
            .map(|((&a, &c), &xi)| (xi - c).powi(a as i32))
            .product()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let idx = &self.0;
        for (i, o) in out.iter_mut().enumerate() {
            if idx.alpha[i] == 0 {
                *o = 0.0;
                continue;
            }
            let mut g = idx.alpha[i] as f64 * (x[i] - idx.target[i]).powi(idx.alpha[i] as i32 - 1);
            for (j, (&a, &c)) in idx.alpha.iter().zip(&idx.target).enumerate() {
                if j != i {
                    g *= (x[j] - c).powi(a as i32);
                }
            }
            *o = g;
        }
    }
}

/// Sum of mixed central moments, e.g. `‖x − x̂‖²` as `Σ_i 𝔪_{2e_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSum(pub Vec<CentralMoment>);

impl MomentSum {
    /// `‖x − x̂‖²`.
    pub fn squared_distance(target: &[f64]) -> Self {
        let n = target.len();
        Self(
            (0..n)
                .map(|i| {
                    let mut alpha = vec![0; n];
                    alpha[i] = 2;
                    CentralMoment(MomentIndex {
                        alpha,
                        target: target.to_vec(),
                    })
                })
                .collect(),
        )
    }
}

impl CostFunction for MomentSum {
    fn eval(&self, x: &[f64]) -> f64 {
        self.0.iter().map(|m| m.eval(x)).sum()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut g = vec![0.0; out.len()];
        for m in &self.0 {
            m.gradient(x, &mut g);
            out.iter_mut().zip(&g).for_each(|(o, gi)| *o += gi);
        }
    }
}

/// Spike cost on the phase coordinate (index 0):
/// `ℓ = sin(x)^{2p} + (cos(x) − 1)^{2p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeCost {
    p: u32,
}

pub fn spike_cost(p: u32) -> Result<SpikeCost> {
    if p == 0 {
        return Err(Error::invalid("spike cost exponent p must be positive"));
    }
    Ok(SpikeCost { p })
}

impl SpikeCost {
    pub fn p(&self) -> u32 {
        self.p
    }
}

impl CostFunction for SpikeCost {
    fn eval(&self, x: &[f64]) -> f64 {
        let (s, c) = x[0].sin_cos();
        let e = 2 * self.p as i32;
        s.powi(e) + (c - 1.0).powi(e)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let (s, c) = x[0].sin_cos();
        let e = 2 * self.p as i32;
        let k = e as f64;
        out.fill(0.0);
        out[0] = k * s.powi(e - 1) * c - k * (c - 1.0).powi(e - 1) * s;
    }
}

/// `½ Σ_{i∈S} (x_i − y_i)²` on a doubled state `(x, y) ∈ ℝⁿ × ℝⁿ`. Its
/// expectation under the doubled law is the summed variance of the selected
/// coordinates `S` of one block (all of them by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDispersion {
    block: usize,
    coords: Vec<usize>,
}

impl PairwiseDispersion {
    /// Full trace over blocks of dimension `block`.
    pub fn new(block: usize) -> Self {
        Self {
            block,
            coords: (0..block).collect(),
        }
    }

    /// Restricts the trace to `coords` of each block.
    pub fn on_coords(block: usize, coords: Vec<usize>) -> Result<Self> {
        if coords.is_empty() || coords.iter().any(|&i| i >= block) {
            return Err(Error::invalid(format!(
                "dispersion coordinates must lie in 0..{block}"
            )));
        }
        Ok(Self { block, coords })
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn coords(&self) -> &[usize] {
        &self.coords
    }
}

impl CostFunction for PairwiseDispersion {
    fn eval(&self, x: &[f64]) -> f64 {
        let n = self.block;
        0.5 * self
            .coords
            .iter()
            .map(|&i| (x[i] - x[n + i]).powi(2))
            .sum::<f64>()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let n = self.block;
        out.fill(0.0);
        for &i in &self.coords {
            let d = x[i] - x[n + i];
            out[i] = d;
            out[n + i] = -d;
        }
    }
}

/// `(1/(2M²)) Σ_i Σ_j ‖x_i − x_j‖²`.
pub fn trace_covariance(samples: &ParticleEnsemble) -> f64 {
    let m = samples.len() as f64;
    let mut total = 0.0;
    for (i, a) in samples.iter().enumerate() {
        for b in samples.iter().skip(i + 1) {
            total += a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        }
    }
    // each unordered pair appears twice in the double sum
    total / (m * m)
}

/// `(1/M) Σ ‖x_i − x̄‖²`.
pub fn biased_covariance_trace(samples: &ParticleEnsemble) -> f64 {
    let mean = samples.mean();
    samples.average(|x| x.iter().zip(&mean).map(|(p, q)| (p - q).powi(2)).sum())
}

/// `q` independent copies of a base model sharing one coefficient signal.
///
/// The Markovian value is evaluated per copy, so `w` stacks `q` blocks of the
/// base control dimension and `ξ_j` stacks `ξ_j(x^1), …, ξ_j(x^q)`.
#[derive(Debug, Clone)]
pub struct ReplicatedModel<M> {
    base: M,
    copies: usize,
}

/// The doubled process `(X, Y)`: both blocks follow the base dynamics under
/// the same coefficient signal with independent noises and initial draws.
pub fn doubled_model<M: Model>(base: M) -> ReplicatedModel<M> {
    ReplicatedModel { base, copies: 2 }
}

/// `q`-fold product model, used to linearize `μ`-polynomial costs of degree `q`.
pub fn replicated_model<M: Model>(base: M, copies: usize) -> Result<ReplicatedModel<M>> {
    if copies == 0 {
        return Err(Error::invalid("need at least one copy"));
    }
    Ok(ReplicatedModel { base, copies })
}

impl<M> ReplicatedModel<M> {
    pub fn base(&self) -> &M {
        &self.base
    }

    pub fn copies(&self) -> usize {
        self.copies
    }
}

impl<M: Model> Model for ReplicatedModel<M> {
    fn state_dim(&self) -> usize {
        self.copies * self.base.state_dim()
    }

    fn noise_dim(&self) -> usize {
        self.copies * self.base.noise_dim()
    }

    fn control_dim(&self) -> usize {
        self.copies * self.base.control_dim()
    }

    fn basis_len(&self) -> usize {
        self.base.basis_len()
    }

    fn drift(&self, t: f64, x: &[f64], w: &[f64], out: &mut [f64]) {
        let (n, d) = (self.base.state_dim(), self.base.control_dim());
        for c in 0..self.copies {
            self.base.drift(
                t,
                &x[c * n..(c + 1) * n],
                &w[c * d..(c + 1) * d],
                &mut out[c * n..(c + 1) * n],
            );
        }
    }

    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (n, m) = (self.base.state_dim(), self.base.noise_dim());
        let cols = self.copies * m;
        out.fill(0.0);
        let mut block = vec![0.0; n * m];
        for c in 0..self.copies {
            self.base.diffusion(t, &x[c * n..(c + 1) * n], &mut block);
            for i in 0..n {
                let row = (c * n + i) * cols + c * m;
                out[row..row + m].copy_from_slice(&block[i * m..(i + 1) * m]);
            }
        }
    }

    fn feedback_basis(&self, x: &[f64], out: &mut [f64]) {
        let (n, d, j) = (
            self.base.state_dim(),
            self.base.control_dim(),
            self.base.basis_len(),
        );
        let width = self.copies * d;
        let mut block = vec![0.0; j * d];
        for c in 0..self.copies {
            self.base.feedback_basis(&x[c * n..(c + 1) * n], &mut block);
            for r in 0..j {
                out[r * width + c * d..r * width + (c + 1) * d]
                    .copy_from_slice(&block[r * d..(r + 1) * d]);
            }
        }
    }

    fn sample_initial(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        for block in out.chunks_exact_mut(self.base.state_dim()) {
            self.base.sample_initial(rng, block);
        }
    }

    fn is_control_affine(&self) -> bool {
        self.base.is_control_affine()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{brownian_model, theta_model, ThetaParams};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grad(c: &impl CostFunction, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        c.gradient(x, &mut g);
        g
    }

    #[test]
    fn moment_hand_values() {
        let c = central_moment_cost(MomentIndex::new(vec![2, 2], vec![1.0, 1.0]).unwrap());
        assert_eq!(c.eval(&[2.0, 3.0]), 4.0);
        assert_eq!(c.eval(&[1.0, 1.0]), 0.0);
        let c = central_moment_cost(MomentIndex::new(vec![2], vec![1.0]).unwrap());
        let ens = ParticleEnsemble::from_points(0.0, &[[0.0], [2.0]]);
        assert_eq!(ens.average(|x| c.eval(x)), 1.0);
    }

    #[test]
    fn moment_index_validation() {
        assert!(MomentIndex::new(vec![0, 0], vec![0.0, 0.0]).is_err());
        assert!(MomentIndex::new(vec![1], vec![0.0, 0.0]).is_err());
        assert_eq!(
            MomentIndex::new(vec![3, 1], vec![0.0, 0.0])
                .unwrap()
                .order(),
            4
        );
    }

    #[test]
    fn spike_hand_values() {
        let p1 = spike_cost(1).unwrap();
        let p2 = spike_cost(2).unwrap();
        assert_eq!(p1.eval(&[0.0, 5.0]), 0.0);
        assert!(p1.eval(&[4.0 * PI, -1.0]) < 1e-28);
        assert!((p1.eval(&[PI, 0.0]) - 4.0).abs() < 1e-14);
        assert!((p2.eval(&[PI / 2.0, 0.0]) - 2.0).abs() < 1e-14);
        assert!(spike_cost(0).is_err());
        // current coordinate never enters
        assert_eq!(p1.eval(&[1.0, 0.0]), p1.eval(&[1.0, 100.0]));
        assert_eq!(grad(&p1, &[1.0, 3.0])[1], 0.0);
    }

    #[test]
    fn dispersion_on_selected_coordinates() {
        let all = PairwiseDispersion::new(2);
        let first = PairwiseDispersion::on_coords(2, vec![0]).unwrap();
        let x = [1.0, 5.0, 3.0, -5.0];
        assert_eq!(all.eval(&x), 0.5 * (4.0 + 100.0));
        assert_eq!(first.eval(&x), 2.0);
        assert_eq!(grad(&first, &x), vec![-2.0, 0.0, 2.0, 0.0]);
        assert!(PairwiseDispersion::on_coords(2, vec![2]).is_err());
        assert!(PairwiseDispersion::on_coords(2, vec![]).is_err());
    }

    #[test]
    fn trace_covariance_hand_values() {
        let ens = ParticleEnsemble::from_points(0.0, &[[-1.0], [1.0]]);
        assert_eq!(trace_covariance(&ens), 1.0);
        assert_eq!(biased_covariance_trace(&ens), 1.0);
        let point = ParticleEnsemble::from_points(0.0, &[[2.0, 3.0]; 7]);
        assert_eq!(trace_covariance(&point), 0.0);
    }

    #[test]
    fn pairwise_dispersion_gradient() {
        let c = PairwiseDispersion::new(2);
        assert_eq!(c.eval(&[1.0, 2.0, 0.0, 4.0]), 0.5 * (1.0 + 4.0));
        assert_eq!(grad(&c, &[1.0, 2.0, 0.0, 4.0]), vec![1.0, -2.0, -1.0, 2.0]);
    }

    #[test]
    fn doubled_structure() {
        let base = theta_model(ThetaParams::default()).unwrap();
        let m = doubled_model(base.clone());
        assert_eq!(
            (m.state_dim(), m.noise_dim(), m.control_dim(), m.basis_len()),
            (4, 2, 2, 4)
        );
        let x = [0.3, -0.2, 2.0, 0.5];
        let mut sig = vec![0.0; 8];
        m.diffusion(0.0, &x, &mut sig);
        let s = 0.1f64.sqrt();
        assert_eq!(sig, vec![0.0, 0.0, s, 0.0, 0.0, 0.0, 0.0, s]);
        let mut f = vec![0.0; 4];
        m.drift(0.0, &x, &[0.7, -1.1], &mut f);
        let mut fx = vec![0.0; 2];
        base.drift(0.0, &x[..2], &[0.7], &mut fx);
        assert_eq!(&f[..2], &fx[..]);
        base.drift(0.0, &x[2..], &[-1.1], &mut fx);
        assert_eq!(&f[2..], &fx[..]);
        let mut xi = vec![0.0; 8];
        m.feedback_basis(&x, &mut xi);
        let mut xa = vec![0.0; 4];
        let mut xb = vec![0.0; 4];
        base.feedback_basis(&x[..2], &mut xa);
        base.feedback_basis(&x[2..], &mut xb);
        for j in 0..4 {
            assert_eq!(xi[2 * j], xa[j]);
            assert_eq!(xi[2 * j + 1], xb[j]);
        }

        let frozen = doubled_model(brownian_model(0.0).unwrap());
        let mut f = vec![1.0; 2];
        frozen.drift(0.0, &[1.0, 2.0], &[3.0, 4.0], &mut f);
        let mut s = vec![1.0; 4];
        frozen.diffusion(0.0, &[1.0, 2.0], &mut s);
        assert!(f.iter().chain(&s).all(|v| *v == 0.0));
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    proptest! {
        #[test]
        fn trace_identity(points in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..60)) {
            let ens = ParticleEnsemble::from_points(0.0, &points);
            let a = trace_covariance(&ens);
            let b = biased_covariance_trace(&ens);
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }

        #[test]
        fn spike_is_periodic(x in -50.0f64..50.0, p in 1u32..4) {
            let c = spike_cost(p).unwrap();
            let a = c.eval(&[x, 0.0]);
            let b = c.eval(&[x + 2.0 * PI, 0.0]);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn analytic_gradients_match_differences(
            x in prop::collection::vec(-3.0f64..3.0, 3),
            a in prop::collection::vec(0u32..4, 3),
            p in 1u32..4,
        ) {
            prop_assume!(a.iter().sum::<u32>() > 0);
            let moment = central_moment_cost(MomentIndex::new(a, vec![0.5, -0.25, 1.0]).unwrap());
            let spike = spike_cost(p).unwrap();
            let pair = PairwiseDispersion::new(1);
            let sum = MomentSum::squared_distance(&[1.0, 2.0, 3.0]);
            let costs: [&dyn CostFunction; 4] = [&moment, &spike, &pair, &sum];
            for c in costs {
                let g = grad(&c, &x);
                let mut fd = vec![0.0; 3];
                central_difference(|y| c.eval(y), &x, 1e-5, &mut fd);
                for (gi, fi) in g.iter().zip(&fd) {
                    prop_assert!(rel_err(*gi, *fi) < 1e-4, "{g:?} vs {fd:?}");
                }
            }
        }
    }
}
