use serde::{Deserialize, Serialize};

/// Empirical measure `(1/M) Σ δ_{x_l}` at a fixed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub time: f64,
    dim: usize,
    coords: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(time: f64, dim: usize, coords: Vec<f64>) -> Self {
        assert!(
            dim > 0 && coords.len().is_multiple_of(dim),
            "ragged ensemble"
        );
        Self { time, dim, coords }
    }

    pub fn from_points<P: AsRef<[f64]>>(time: f64, points: &[P]) -> Self {
        let dim = points.first().map_or(1, |p| p.as_ref().len());
        let coords = points
            .iter()
            .flat_map(|p| p.as_ref().iter().copied())
            .collect();
        Self::new(time, dim, coords)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particle(&self, l: usize) -> &[f64] {
        &self.coords[l * self.dim..(l + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    /// `∫ φ dμ^M`.
    pub fn average(&self, phi: impl Fn(&[f64]) -> f64) -> f64 {
        self.iter().map(phi).sum::<f64>() / self.len() as f64
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for x in self.iter() {
            for (mi, xi) in m.iter_mut().zip(x) {
                *mi += xi;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}
