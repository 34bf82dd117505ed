//! Frequency vectors and the trigonometric embedding `Emb(x; u)`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the frequencies of a [`FrequencyVector`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrequencyDistribution {
    /// `u_i = theta^(i/d)`.
    LogLinear { theta: f64 },
    /// Zero mean, the given variance.
    Gaussian { variance: f64 },
    /// Symmetric on `[-range, range]`.
    Uniform { range: f64 },
    /// Zero location, the given scale.
    Laplacian { scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyVector {
    values: Vec<f64>,
    distribution: FrequencyDistribution,
    seed: u64,
}

impl FrequencyVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn distribution(&self) -> FrequencyDistribution {
        self.distribution
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Output length of [`embed`] for this vector.
    pub fn embedding_width(&self) -> usize {
        6 * self.values.len()
    }
}

pub fn make_loglinear(d: usize, theta: f64) -> Result<FrequencyVector> {
    if d == 0 {
        return Err(Error::InvalidArgument("frequency count must be >= 1".into()));
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::InvalidArgument(format!("theta must be positive, got {theta}")));
    }
    let values = (1..=d)
        .map(|i| theta.powf(i as f64 / d as f64))
        .collect();
    Ok(FrequencyVector {
        values,
        distribution: FrequencyDistribution::LogLinear { theta },
        seed: 0,
    })
}

/// Draws `d` frequencies from `distribution`, reproducibly from `seed`.
///
/// Log-linear vectors are deterministic and ignore the seed.
pub fn make_random(
    d: usize,
    distribution: FrequencyDistribution,
    seed: u64,
) -> Result<FrequencyVector> {
    if d == 0 {
        return Err(Error::InvalidArgument("frequency count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = match distribution {
        FrequencyDistribution::LogLinear { theta } => return make_loglinear(d, theta),
        FrequencyDistribution::Gaussian { variance } => {
            if !(variance > 0.0 && variance.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "gaussian variance must be positive, got {variance}"
                )));
            }
            let normal = Normal::new(0.0, variance.sqrt())
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            (0..d).map(|_| normal.sample(&mut rng)).collect()
        }
        FrequencyDistribution::Uniform { range } => {
            // a zero range is the degenerate all-zero vector
            if !(range >= 0.0 && range.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "uniform range must be nonnegative, got {range}"
                )));
            }
            (0..d)
                .map(|_| range * (2.0 * rng.random::<f64>() - 1.0))
                .collect()
        }
        FrequencyDistribution::Laplacian { scale } => {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "laplacian scale must be positive, got {scale}"
                )));
            }
            (0..d)
                .map(|_| {
                    // inverse CDF on u in (-1/2, 1/2)
                    let u: f64 = rng.random::<f64>() - 0.5;
                    -scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
                })
                .collect()
        }
    };
    Ok(FrequencyVector {
        values,
        distribution,
        seed,
    })
}

/// Writes `Emb(x; freqs)` into `out` (length `6 * freqs.len()`).
///
/// Layout: sine block then cosine block, each frequency-major with the three
/// coordinates innermost: `sin(2π u1 x), sin(2π u1 y), sin(2π u1 z), sin(2π u2 x), ...`.
#[inline]
pub fn embed_into(x: &[f64; 3], freqs: &[f64], out: &mut [f64]) {
    let half = 3 * freqs.len();
    debug_assert_eq!(out.len(), 2 * half);
    let (sin_block, cos_block) = out.split_at_mut(half);
    for (i, &u) in freqs.iter().enumerate() {
        for a in 0..3 {
            let (s, c) = (TAU * u * x[a]).sin_cos();
            sin_block[3 * i + a] = s;
            cos_block[3 * i + a] = c;
        }
    }
}

pub fn embed(x: &[f64; 3], freqs: &FrequencyVector) -> Vec<f64> {
    let mut out = vec![0.0; freqs.embedding_width()];
    embed_into(x, freqs.values(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn loglinear_values() {
        assert_eq!(make_loglinear(1, 20.0).unwrap().values(), &[20.0]);
        let v = make_loglinear(2, 4.0).unwrap();
        assert_abs_diff_eq!(v.values()[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.values()[1], 4.0, epsilon = 1e-12);
        let v = make_loglinear(15, 20.0).unwrap();
        assert_abs_diff_eq!(v.values()[14], 20.0, epsilon = 1e-12);
        // 20^(1/15) = exp(ln 20 / 15)
        assert_abs_diff_eq!(v.values()[0], (20f64.ln() / 15.0).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(v.values()[0], 1.221, epsilon = 1e-3);
        assert!(v.values().windows(2).all(|w| w[0] < w[1]));
        assert!(make_loglinear(3, 0.0).is_err());
        assert!(make_loglinear(3, -1.0).is_err());
        assert!(make_loglinear(0, 2.0).is_err());
    }

    #[test]
    fn random_is_reproducible() {
        let dist = FrequencyDistribution::Gaussian { variance: 0.1 };
        let a = make_random(32, dist, 9).unwrap();
        let b = make_random(32, dist, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values(), make_random(32, dist, 10).unwrap().values());
    }

    #[test]
    fn gaussian_variance() {
        let v = make_random(10_000, FrequencyDistribution::Gaussian { variance: 0.1 }, 1).unwrap();
        let n = v.len() as f64;
        let mean = v.values().iter().sum::<f64>() / n;
        let var = v.values().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 0.1).abs() < 0.01, "sample variance {var}");
    }

    #[test]
    fn laplacian_and_uniform_moments() {
        let b = 0.22;
        let v = make_random(20_000, FrequencyDistribution::Laplacian { scale: b }, 3).unwrap();
        let n = v.len() as f64;
        let var = v.values().iter().map(|x| x * x).sum::<f64>() / n;
        assert!((var - 2.0 * b * b).abs() < 0.1 * 2.0 * b * b, "laplace variance {var}");
        let r = 0.55;
        let v = make_random(20_000, FrequencyDistribution::Uniform { range: r }, 3).unwrap();
        assert!(v.values().iter().all(|x| x.abs() <= r));
        let var = v.values().iter().map(|x| x * x).sum::<f64>() / n;
        assert!((var - r * r / 3.0).abs() < 0.05 * r * r / 3.0, "uniform variance {var}");
    }

    #[test]
    fn degenerate_and_invalid_parameters() {
        let v = make_random(5, FrequencyDistribution::Uniform { range: 0.0 }, 4).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.0));
        assert!(make_random(5, FrequencyDistribution::Gaussian { variance: 0.0 }, 4).is_err());
        assert!(make_random(5, FrequencyDistribution::Laplacian { scale: -1.0 }, 4).is_err());
        assert!(make_random(5, FrequencyDistribution::Uniform { range: -0.1 }, 4).is_err());
    }

    #[test]
    fn embed_examples() {
        let u = make_loglinear(3, 7.0).unwrap();
        let e = embed(&[0.0; 3], &u);
        assert!(e[..9].iter().all(|&v| v == 0.0));
        assert!(e[9..].iter().all(|&v| v == 1.0));

        let one = make_loglinear(1, 1.0).unwrap();
        let e = embed(&[0.25, 0.0, 0.0], &one);
        let want = [1.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        for (a, b) in e.iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn embed_layout_is_frequency_major() {
        let u = make_loglinear(2, 4.0).unwrap(); // [2, 4]
        let x = [0.1, 0.2, 0.3];
        let e = embed(&x, &u);
        assert_abs_diff_eq!(e[4], (TAU * 4.0 * 0.2).sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(e[6 + 2], (TAU * 2.0 * 0.3).cos(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn embed_bounded_and_parity(
            x in proptest::array::uniform3(-50.0f64..50.0),
            seed in 0u64..1000,
        ) {
            let u = make_random(4, FrequencyDistribution::Gaussian { variance: 2.0 }, seed).unwrap();
            let e = embed(&x, &u);
            let neg = embed(&[-x[0], -x[1], -x[2]], &u);
            prop_assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
            for i in 0..12 {
                prop_assert!((e[i] + neg[i]).abs() < 1e-9);
                prop_assert!((e[12 + i] - neg[12 + i]).abs() < 1e-9);
            }
        }
    }
}
