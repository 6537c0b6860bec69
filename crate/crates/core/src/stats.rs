use serde::{Deserialize, Serialize};

/// Sample mean with its standard error `sd / √n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl Estimate {
    /// Sequential reduction, so the result does not depend on how the
    /// samples were produced.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                samples: 0,
            };
        }
        // degenerate samples keep their value exactly
        let mean = if xs.iter().all(|x| *x == xs[0]) {
            xs[0]
        } else {
            xs.iter().sum::<f64>() / n as f64
        };
        let std_error = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_error,
            samples: n,
        }
    }

    /// `|a − b| / √(se_a² + se_b²)`, with `0/0 = 0`.
    pub fn z_distance(&self, other: &Estimate) -> f64 {
        z_score(
            self.mean - other.mean,
            combined(self.std_error, other.std_error),
        )
    }
}

pub fn combined(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

/// `|diff| / se`, treating an exact zero difference as zero regardless of `se`.
pub fn z_score(diff: f64, se: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else {
        diff.abs() / se
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_error() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.std_error - (5.0f64 / 12.0 / 4.0).sqrt() * 2.0).abs() < 1e-15);
        assert_eq!(Estimate::from_samples(&[7.0]).std_error, 0.0);
        assert_eq!(Estimate::from_samples(&[3.0; 10]).std_error, 0.0);
    }

    #[test]
    fn z_scores() {
        assert_eq!(z_score(0.0, 0.0), 0.0);
        assert!(z_score(1e-9, 0.0).is_infinite());
        assert_eq!(z_score(-2.0, 1.0), 2.0);
    }
}
