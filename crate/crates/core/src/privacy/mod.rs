//! Kraskov–Stögbauer–Grassberger mutual information, its self-normalized
//! form, estimator calibration, and the Monte Carlo leakage experiment.

mod knn;
mod leakage;

pub use leakage::{monte_carlo_leakage, Adversary, LeakageConfig, LeakagePoint, LeakageReport};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{normal, SeedStream};
use crate::scalar::Real;

/// Default neighbor count.
pub const DEFAULT_K: usize = 3;

/// Smallest sample the meter accepts.
pub const MIN_SAMPLES: usize = 50;

/// Width of the uniform tie-breaking noise added to every coordinate.
pub const JITTER: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// `I(X; Y)` in nats; may be slightly negative.
    pub value: f64,
    pub k: usize,
    pub sample_count: usize,
    /// `I(X; Y) / I(X; X)` clamped to `[0, 1]`.
    pub normalized: f64,
}

fn needed(k: usize) -> usize {
    (2 * k + 2).max(MIN_SAMPLES)
}

fn check_samples(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if n < needed(k) {
        return Err(Error::InsufficientSamples { needed: needed(k), got: n });
    }
    Ok(())
}

fn columns<T: Real>(m: &Matrix<T>) -> Result<Vec<Vec<f64>>> {
    let cols: Vec<Vec<f64>> = (0..m.cols()).map(|c| m.column(c).into_iter().map(Real::as_f64).collect()).collect();
    if cols.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite".into()));
    }
    Ok(cols)
}

/// Adds `JITTER · U[0, 1)` to a column. The noise stream is keyed by the
/// column's contents, so identical columns receive identical noise.
fn jitter(column: &[f64]) -> Vec<f64> {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in column {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    let mut rng = SeedStream::new(h).rng();
    column.iter().map(|&v| v + JITTER * rng.gen::<f64>()).collect()
}

fn prepared<T: Real>(m: &Matrix<T>) -> Result<Vec<Vec<f64>>> {
    Ok(columns(m)?.iter().map(|c| jitter(c)).collect())
}

/// KSG estimator (first variant) with max-norm neighborhoods:
/// `ψ(k) + ψ(N) − ⟨ψ(nₓ + 1) + ψ(n_y + 1)⟩`, where `nₓ`, `n_y` count points
/// strictly closer than the `k`-th joint neighbor. Samples are jittered first.
pub fn ksg_mi<T: Real>(x: &Matrix<T>, y: &Matrix<T>, k: usize) -> Result<f64> {
    if x.rows() != y.rows() {
        return Err(Error::InvalidArgument("x and y need the same number of rows".into()));
    }
    check_samples(x.rows(), k)?;
    Ok(knn::ksg(&prepared(x)?, &prepared(y)?, k))
}

/// `ksg_mi(x, y) / ksg_mi(x, x)` with shared jitter, clamped to `[0, 1]`.
pub fn normalized_mi<T: Real>(x: &Matrix<T>, y: &Matrix<T>, k: usize) -> Result<MiEstimate> {
    if x.rows() != y.rows() {
        return Err(Error::InvalidArgument("x and y need the same number of rows".into()));
    }
    check_samples(x.rows(), k)?;
    let xj = prepared(x)?;
    let value = knn::ksg(&xj, &prepared(y)?, k);
    let self_info = knn::ksg(&xj, &xj, k);
    let normalized = if self_info > 0.0 {
        (value / self_info).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(MiEstimate {
        value,
        k,
        sample_count: x.rows(),
        normalized,
    })
}

/// `−½ ln(1 − ρ²)`: mutual information of a bivariate Gaussian.
pub fn gaussian_mi(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

/// `n` draws of a standard bivariate Gaussian with correlation `rho`.
pub fn bivariate_gaussian(n: usize, rho: f64, seeds: SeedStream) -> (Matrix<f64>, Matrix<f64>) {
    let mut rng = seeds.rng();
    let s = (1.0 - rho * rho).sqrt();
    let (mut xs, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let a: f64 = normal(&mut rng, 1.0);
        let b: f64 = normal(&mut rng, 1.0);
        xs.push(a);
        ys.push(rho * a + s * b);
    }
    (
        Matrix::from_vec(n, 1, xs).expect("column"),
        Matrix::from_vec(n, 1, ys).expect("column"),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub rho: f64,
    pub samples: usize,
    pub repeats: usize,
    pub truth: f64,
    pub mean_estimate: f64,
    pub stderr: f64,
    /// `|mean − truth| / truth`, or the absolute error when `truth = 0`.
    pub error: f64,
}

/// Mean KSG estimate of Gaussian MI over `repeats` independent samples for
/// every `(ρ, N)` pair.
pub fn calibrate(rhos: &[f64], sizes: &[usize], repeats: usize, k: usize, seeds: SeedStream) -> Result<Vec<CalibrationRow>> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("at least one repeat required".into()));
    }
    let mut rows = Vec::new();
    for &rho in rhos {
        if !(rho.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!("correlation {rho} outside (-1, 1)")));
        }
        for &n in sizes {
            let stream = seeds.child(&format!("rho={rho};n={n}"));
            let estimates = (0..repeats)
                .map(|r| {
                    let (x, y) = bivariate_gaussian(n, rho, stream.nth(r as u64));
                    ksg_mi(&x, &y, k)
                })
                .collect::<Result<Vec<_>>>()?;
            let (mean, stderr) = mean_and_stderr(&estimates);
            let truth = gaussian_mi(rho);
            let error = if truth > 0.0 { (mean - truth).abs() / truth } else { mean.abs() };
            rows.push(CalibrationRow {
                rho,
                samples: n,
                repeats,
                truth,
                mean_estimate: mean,
                stderr,
                error,
            });
        }
    }
    Ok(rows)
}

/// Sample mean and standard error of the mean (zero for a single value).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(v: Vec<f64>) -> Matrix<f64> {
        Matrix::from_vec(v.len(), 1, v).unwrap()
    }

    #[test]
    fn too_few_samples() {
        let x = column((0..10).map(f64::from).collect());
        assert!(matches!(ksg_mi(&x, &x, 3), Err(Error::InsufficientSamples { needed: 50, got: 10 })));
    }

    #[test]
    fn self_information_normalizes_to_one() {
        let (x, _) = bivariate_gaussian(500, 0.0, SeedStream::new(1));
        let est = normalized_mi(&x, &x, 3).unwrap();
        assert_eq!(est.normalized, 1.0);
        assert!(est.value > 3.0);
    }

    #[test]
    fn independent_is_near_zero() {
        let (x, y) = bivariate_gaussian(10_000, 0.0, SeedStream::new(2));
        assert!(ksg_mi(&x, &y, 3).unwrap().abs() < 0.02);
        assert!(normalized_mi(&x, &y, 3).unwrap().normalized < 0.03);
    }

    #[test]
    fn correlated_gaussian_matches_closed_form() {
        let (x, y) = bivariate_gaussian(10_000, 0.9, SeedStream::new(3));
        let est = ksg_mi(&x, &y, 3).unwrap();
        let truth = gaussian_mi(0.9);
        assert!((truth - 0.830_366).abs() < 1e-6);
        assert!((est - truth).abs() < 0.1 * truth, "{est} vs {truth}");
    }

    #[test]
    fn nmi_monotone_in_snr() {
        let (x, noise) = bivariate_gaussian(4_000, 0.0, SeedStream::new(4));
        let mut last = 1.0;
        for snr in [100.0f64, 10.0, 1.0] {
            let scale = 1.0 / snr.sqrt();
            let y = column(x.as_slice().iter().zip(noise.as_slice()).map(|(a, b)| a + scale * b).collect());
            let v = normalized_mi(&x, &y, 3).unwrap().normalized;
            assert!(v > 0.0 && v < last, "snr {snr}: {v}");
            last = v;
        }
    }

    #[test]
    fn identical_columns_share_jitter() {
        let a = vec![1.0, 2.0, 3.0];
        assert_eq!(jitter(&a), jitter(&a.clone()));
        assert_ne!(jitter(&a), jitter(&[1.0, 2.0, 3.5]));
        assert!(jitter(&a).iter().zip(&a).all(|(j, v)| j - v >= 0.0 && j - v < 1e-10 + 1e-15));
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        assert_eq!(mean_and_stderr(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        let (m, s) = mean_and_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
