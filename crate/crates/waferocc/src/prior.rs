//! Hypersphere-shaped prior: center initialization, radius maintenance,
//! sampling, and the in-sphere label rule.
//!
//! Samples are drawn as C + sigma * n with n standard normal and
//! sigma = nu_prior * R / sqrt(N), so the expected squared distance from
//! the center is nu_prior^2 R^2. At nu_prior = 1 roughly half the mass
//! falls inside the sphere; larger values push it outside.

use crate::tensor::Tensor;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Column means of one pass of encoder means, with components snapped away
/// from zero: |c| < 0.1 becomes +-0.1 (sign preserved, zero goes positive).
/// The center is frozen after this.
pub fn init_center(mu: &[f32], rows: usize, latent: usize) -> Result<Vec<f32>> {
    if rows == 0 || latent == 0 {
        return Err(Error::Data("center init needs at least one latent row".into()));
    }
    debug_assert_eq!(mu.len(), rows * latent);
    let mut sums = vec![0.0f64; latent];
    for row in mu.chunks_exact(latent) {
        for (s, &v) in sums.iter_mut().zip(row) {
            *s += v as f64;
        }
    }
    Ok(sums
        .into_iter()
        .map(|s| {
            let c = (s / rows as f64) as f32;
            if c.abs() < 0.1 {
                if c < 0.0 {
                    -0.1
                } else {
                    0.1
                }
            } else {
                c
            }
        })
        .collect())
}

/// Quantile-style radius update, taken at the exact minimizer of the
/// soft-boundary objective R^2 + (1/(nu n)) sum max(0, d_i^2 - R^2): the
/// objective falls while more than nu*n distances exceed R and rises once
/// fewer do, so the minimum sits at the distance ranked floor(n - nu*n)
/// from below. nu_svdd = 1 takes the minimum distance. Bounded below by
/// 1e-6 so the sphere never collapses to a point.
pub fn update_radius(distances: &[f32], nu_svdd: f32) -> Result<f32> {
    if distances.is_empty() {
        return Err(Error::Numeric("radius update with no distances".into()));
    }
    if !(nu_svdd > 0.0 && nu_svdd <= 1.0) {
        return Err(Error::Config(format!("nu_svdd must be in (0, 1], got {nu_svdd}")));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("non-finite distance in radius update".into()));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f32::total_cmp);
    let n = sorted.len();
    let k = ((n as f64 * (1.0 - nu_svdd as f64)).floor() as usize).min(n - 1);
    Ok(sorted[k].max(1e-6))
}

/// Prior standard deviation sigma = nu_prior * R / sqrt(latent).
pub fn prior_sigma(radius: f32, nu_prior: f32, latent: usize) -> f32 {
    nu_prior * radius / (latent as f32).sqrt()
}

/// `count` rows of C + sigma * n, one draw per component in row-major order.
pub fn sample_prior(
    center: &[f32],
    radius: f32,
    nu_prior: f32,
    count: usize,
    rng: &mut impl Rng,
) -> Tensor {
    let latent = center.len();
    let sigma = prior_sigma(radius, nu_prior, latent);
    let mut data = Vec::with_capacity(count * latent);
    for _ in 0..count {
        for &c in center {
            let n: f32 = rng.sample(StandardNormal);
            data.push(c + sigma * n);
        }
    }
    Tensor::new(vec![count, latent], data).expect("sized here")
}

/// One label per sample row: 1.0 (prior class) iff the squared distance to
/// the center is <= R^2, else 0.0 (encoder class).
pub fn assign_labels(samples: &Tensor, center: &[f32], radius: f32) -> Result<Tensor> {
    let (rows, cols) = samples.rows_cols();
    if cols != center.len() {
        return Err(Error::Config(format!(
            "samples have {cols} components, center has {}",
            center.len()
        )));
    }
    let r2 = radius as f64 * radius as f64;
    let labels: Vec<f32> = samples
        .data
        .chunks_exact(cols)
        .map(|row| {
            let d2: f64 = row
                .iter()
                .zip(center)
                .map(|(&z, &c)| {
                    let d = (z - c) as f64;
                    d * d
                })
                .sum();
            if d2 <= r2 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(vec![rows, 1], labels).map_err(Error::from)
}
