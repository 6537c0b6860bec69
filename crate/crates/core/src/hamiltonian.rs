//! Contracted Hamilton–Pontryagin function `H(x, ψ, υ) = ψ · f_t(x, Σ_j ξ_j(x) υ_j)`
//! and its minimization over the coefficient vector `υ`.

use serde::{Deserialize, Serialize};

use crate::sde::{markov_value, Model};
use crate::{Error, Result};

/// Admissible coefficient vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlSpace {
    /// `U = ℝ^d` with penalty `λ ‖υ‖²` added to the averaged Hamiltonian.
    Penalized { dim: usize, weight: f64 },
    /// `U = Π_i [lo_i, hi_i]`, no penalty.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl ControlSpace {
    pub fn penalized(dim: usize, weight: f64) -> Result<Self> {
        let s = ControlSpace::Penalized { dim, weight };
        s.validate()?;
        Ok(s)
    }

    pub fn bounded(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let s = ControlSpace::Box { lo, hi };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSpace::Penalized { dim, .. } => *dim,
            ControlSpace::Box { lo, .. } => lo.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControlSpace::Penalized { weight, .. } => {
                if !(*weight > 0.0 && weight.is_finite()) {
                    return Err(Error::invalid(format!(
                        "penalty weight must be > 0, got {weight}"
                    )));
                }
            }
            ControlSpace::Box { lo, hi } => {
                Error::check_dim("box bounds", lo.len(), hi.len())?;
                if lo
                    .iter()
                    .zip(hi)
                    .any(|(l, h)| !l.is_finite() || !h.is_finite() || l >= h)
                {
                    return Err(Error::invalid(
                        "box bounds need finite lo < hi componentwise",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        match self {
            ControlSpace::Penalized { dim, .. } => {
                v.len() == *dim && v.iter().all(|x| x.is_finite())
            }
            ControlSpace::Box { lo, hi } => {
                v.len() == lo.len() && v.iter().zip(lo).zip(hi).all(|((x, l), h)| l <= x && x <= h)
            }
        }
    }

    /// Penalty term of the per-knot objective (zero for boxes).
    pub fn penalty(&self, v: &[f64]) -> f64 {
        match self {
            ControlSpace::Penalized { weight, .. } => weight * v.iter().map(|x| x * x).sum::<f64>(),
            ControlSpace::Box { .. } => 0.0,
        }
    }
}

/// Averaged Hamiltonian as an affine function `constant + linear · υ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineHamiltonianCoeffs {
    pub constant: f64,
    pub linear: Vec<f64>,
}

impl AffineHamiltonianCoeffs {
    pub fn eval(&self, v: &[f64]) -> f64 {
        self.constant + self.linear.iter().zip(v).map(|(b, x)| b * x).sum::<f64>()
    }
}

pub fn hamiltonian<M: Model + ?Sized>(model: &M, t: f64, x: &[f64], psi: &[f64], v: &[f64]) -> f64 {
    let d = model.control_dim();
    let mut basis = vec![0.0; model.basis_len() * d];
    let mut w = vec![0.0; d];
    let mut f = vec![0.0; model.state_dim()];
    model.feedback_basis(x, &mut basis);
    markov_value(&basis, v, &mut w);
    model.drift(t, x, &w, &mut f);
    psi.iter().zip(&f).map(|(p, fi)| p * fi).sum()
}

/// Coefficients of `(1/M) Σ_l H(x_l, ∇p̄(x_l), ·)` for an affine-in-control drift.
///
/// `points` pairs each particle position with its adjoint gradient.
pub fn averaged_coeffs<M, S, G>(
    model: &M,
    t: f64,
    points: &[(S, G)],
) -> Result<AffineHamiltonianCoeffs>
where
    M: Model + ?Sized,
    S: AsRef<[f64]>,
    G: AsRef<[f64]>,
{
    if points.is_empty() {
        return Err(Error::invalid("averaged_coeffs needs at least one point"));
    }
    if !model.is_control_affine() {
        return Err(Error::UnsupportedStructure);
    }
    let (n, d, j) = (model.state_dim(), model.control_dim(), model.basis_len());
    let mut basis = vec![0.0; j * d];
    let mut f0 = vec![0.0; n];
    let mut fe = vec![0.0; n];
    let mut w = vec![0.0; d];
    // ψ · G(x) for each control component, G = ∂f/∂w
    let mut psi_gain = vec![0.0; d];
    let mut constant = 0.0;
    let mut linear = vec![0.0; j];

    for (x, psi) in points {
        let (x, psi) = (x.as_ref(), psi.as_ref());
        Error::check_dim("state", n, x.len())?;
        Error::check_dim("adjoint gradient", n, psi.len())?;
        w.fill(0.0);
        model.drift(t, x, &w, &mut f0);
        let h0: f64 = psi.iter().zip(&f0).map(|(p, f)| p * f).sum();
        constant += h0;
        for c in 0..d {
            w.fill(0.0);
            w[c] = 1.0;
            model.drift(t, x, &w, &mut fe);
            psi_gain[c] = psi
                .iter()
                .zip(fe.iter().zip(&f0))
                .map(|(p, (a, b))| p * (a - b))
                .sum();
        }
        model.feedback_basis(x, &mut basis);
        for (lin, xi) in linear.iter_mut().zip(basis.chunks_exact(d)) {
            *lin += xi.iter().zip(&psi_gain).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let m = points.len() as f64;
    linear.iter_mut().for_each(|b| *b /= m);
    Ok(AffineHamiltonianCoeffs {
        constant: constant / m,
        linear,
    })
}

/// Minimizer of `coeffs(υ) + penalty(υ)` over the control space.
pub fn argmin_control(coeffs: &AffineHamiltonianCoeffs, space: &ControlSpace) -> Result<Vec<f64>> {
    Error::check_dim("control space", coeffs.linear.len(), space.dim())?;
    Ok(match space {
        ControlSpace::Penalized { weight, .. } => {
            coeffs.linear.iter().map(|b| -b / (2.0 * weight)).collect()
        }
        ControlSpace::Box { lo, hi } => coeffs
            .linear
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(&b, (&l, &h))| {
                if b > 0.0 {
                    l
                } else if b < 0.0 {
                    h
                } else if l <= 0.0 && 0.0 <= h {
                    0.0
                } else {
                    l
                }
            })
            .collect(),
    })
}

/// Uniform grid search of `(1/M) Σ_l H(x_l, ψ_l, υ) + penalty(υ)` over a box,
/// for drifts that are not affine in the control. `resolution ≥ 2` points per
/// axis, bounds included; ties keep the first grid point in lexicographic order.
pub fn argmin_grid<M, S, G>(
    model: &M,
    t: f64,
    points: &[(S, G)],
    lo: &[f64],
    hi: &[f64],
    resolution: usize,
    penalty: &ControlSpace,
) -> Result<Vec<f64>>
where
    M: Model + ?Sized,
    S: AsRef<[f64]>,
    G: AsRef<[f64]>,
{
    let dim = model.basis_len();
    Error::check_dim("grid bounds", dim, lo.len())?;
    Error::check_dim("grid bounds", dim, hi.len())?;
    if resolution < 2 {
        return Err(Error::invalid("grid resolution must be at least 2"));
    }
    if points.is_empty() {
        return Err(Error::invalid("argmin_grid needs at least one point"));
    }
    let total = resolution
        .checked_pow(dim as u32)
        .ok_or_else(|| Error::invalid("grid too large"))?;
    let mut v = vec![0.0; dim];
    let mut best = (f64::INFINITY, v.clone());
    for flat in 0..total {
        let mut r = flat;
        for i in (0..dim).rev() {
            let idx = r % resolution;
            r /= resolution;
            v[i] = lo[i] + (hi[i] - lo[i]) * idx as f64 / (resolution - 1) as f64;
        }
        let mean_h = points
            .iter()
            .map(|(x, psi)| hamiltonian(model, t, x.as_ref(), psi.as_ref(), &v))
            .sum::<f64>()
            / points.len() as f64;
        let obj = mean_h + penalty.penalty(&v);
        if obj < best.0 {
            best = (obj, v.clone());
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{theta_model, ThetaParams};
    use proptest::prelude::*;

    fn theta() -> crate::models::ThetaModel {
        theta_model(ThetaParams::default()).unwrap()
    }

    #[test]
    fn hamiltonian_hand_values() {
        let m = theta();
        assert_eq!(
            hamiltonian(&m, 0.0, &[1.0, 2.0], &[0.0, 0.0], &[1.0, 2.0, 3.0, 4.0]),
            0.0
        );
        // w = u_1 = 1 at x = (0, 0)
        let h = hamiltonian(&m, 0.0, &[0.0, 0.0], &[1.0, 0.0], &[1.0, 0.0, 0.0, 0.0]);
        assert!((h - 2.0).abs() < 1e-15);
    }

    #[test]
    fn theta_single_point_coeffs() {
        let c = averaged_coeffs(&theta(), 0.0, &[(vec![0.0, 0.0], vec![1.0, 0.0])]).unwrap();
        // drift at w = 0 is (1 − 1) + 2·0 = 0
        assert_eq!(c.constant, 0.0);
        assert_eq!(c.linear, vec![2.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn zero_gradients_give_zero_coeffs() {
        let c = averaged_coeffs(&theta(), 0.0, &[(vec![0.3, 1.0], vec![0.0, 0.0])]).unwrap();
        assert_eq!(c.constant, 0.0);
        assert!(c.linear.iter().all(|b| *b == 0.0));
        assert_eq!(
            argmin_control(&c, &ControlSpace::penalized(4, 1.0).unwrap()).unwrap(),
            vec![0.0; 4]
        );
    }

    #[test]
    fn closed_form_minimizer() {
        let c = AffineHamiltonianCoeffs {
            constant: 0.0,
            linear: vec![2.0, 0.0, 0.0, 0.0],
        };
        let u = argmin_control(&c, &ControlSpace::penalized(4, 1.0).unwrap()).unwrap();
        assert_eq!(u, vec![-1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn box_minimizer_and_ties() {
        let space = ControlSpace::bounded(vec![-1.0, -1.0, 0.5], vec![1.0, 1.0, 2.0]).unwrap();
        let c = AffineHamiltonianCoeffs {
            constant: 1.0,
            linear: vec![4.0, 0.0, 0.0],
        };
        assert_eq!(argmin_control(&c, &space).unwrap(), vec![-1.0, 0.0, 0.5]);
        let c = AffineHamiltonianCoeffs {
            constant: 1.0,
            linear: vec![-4.0, 0.0, -1.0],
        };
        assert_eq!(argmin_control(&c, &space).unwrap(), vec![1.0, 0.0, 2.0]);
    }

    #[test]
    fn box_matches_grid_search_1d() {
        let space = ControlSpace::bounded(vec![-1.0], vec![1.0]).unwrap();
        let c = AffineHamiltonianCoeffs {
            constant: 0.0,
            linear: vec![4.0],
        };
        let u = argmin_control(&c, &space).unwrap();
        let grid = 100_000;
        let (mut best, mut arg) = (f64::INFINITY, 0.0);
        for i in 0..=grid {
            let v = -1.0 + 2.0 * i as f64 / grid as f64;
            if c.eval(&[v]) < best {
                best = c.eval(&[v]);
                arg = v;
            }
        }
        assert!((u[0] - arg).abs() <= 2.0 / grid as f64);
    }

    #[test]
    fn invalid_spaces() {
        assert!(ControlSpace::penalized(2, 0.0).is_err());
        assert!(ControlSpace::bounded(vec![1.0], vec![1.0]).is_err());
        assert!(ControlSpace::bounded(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    /// Drift `x + w²`: not affine in the control.
    struct Quadratic;
    impl Model for Quadratic {
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
            out[0] = x[0] + (w[0] - 0.3).powi(2);
        }
        fn diffusion(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn feedback_basis(&self, _x: &[f64], out: &mut [f64]) {
            out[0] = 1.0;
        }
        fn sample_initial(&self, _rng: &mut dyn rand::RngCore, out: &mut [f64]) {
            out[0] = 0.0;
        }
    }

    #[test]
    fn non_affine_falls_back_to_grid() {
        let pts = [(vec![1.0], vec![1.0])];
        assert_eq!(
            averaged_coeffs(&Quadratic, 0.0, &pts),
            Err(Error::UnsupportedStructure)
        );
        let none = ControlSpace::bounded(vec![-1.0], vec![1.0]).unwrap();
        let u = argmin_grid(&Quadratic, 0.0, &pts, &[-1.0], &[1.0], 201, &none).unwrap();
        assert!((u[0] - 0.3).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hamiltonian_is_affine(
            x in prop::collection::vec(-4.0f64..4.0, 2),
            psi in prop::collection::vec(-3.0f64..3.0, 2),
            v1 in prop::collection::vec(-2.0f64..2.0, 4),
            v2 in prop::collection::vec(-2.0f64..2.0, 4),
        ) {
            let m = theta();
            let sum: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| a + b).collect();
            let lhs = hamiltonian(&m, 0.0, &x, &psi, &v1) + hamiltonian(&m, 0.0, &x, &psi, &v2);
            let rhs = hamiltonian(&m, 0.0, &x, &psi, &sum) + hamiltonian(&m, 0.0, &x, &psi, &[0.0; 4]);
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn coeffs_reproduce_direct_average(
            pts in prop::collection::vec((prop::collection::vec(-4.0f64..4.0, 2), prop::collection::vec(-3.0f64..3.0, 2)), 1..6),
            v in prop::collection::vec(-2.0f64..2.0, 4),
        ) {
            let m = theta();
            let c = averaged_coeffs(&m, 0.0, &pts).unwrap();
            let direct = pts.iter().map(|(x, p)| hamiltonian(&m, 0.0, x, p, &v)).sum::<f64>() / pts.len() as f64;
            prop_assert!((c.eval(&v) - direct).abs() < 1e-10);
        }

        #[test]
        fn penalized_optimality_certificate(
            b in prop::collection::vec(-10.0f64..10.0, 1..6),
            weight in 0.01f64..10.0,
            probes in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 6), 20),
        ) {
            let space = ControlSpace::penalized(b.len(), weight).unwrap();
            let c = AffineHamiltonianCoeffs { constant: 0.0, linear: b.clone() };
            let u = argmin_control(&c, &space).unwrap();
            let best = c.eval(&u) + space.penalty(&u);
            for p in probes {
                let v = &p[..b.len()];
                prop_assert!(best <= c.eval(v) + space.penalty(v) + 1e-12);
            }
        }
    }
}
