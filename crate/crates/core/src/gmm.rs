//! Gaussian mixture math: densities, E-step, per-node sufficient statistics,
//! the global M-step and a centralized EM reference.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::rng::SeedStream;
use crate::scalar::{compensated_sum, log_sum_exp, CompensatedSum, Real};

/// Mixture weights, means and covariances for `c` components in `d` dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamsRecord<T>", try_from = "ParamsRecord<T>")]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct GmmParams<T> {
    pub weights: Vec<T>,
    pub means: Vec<Vec<T>>,
    pub covariances: Vec<Matrix<T>>,
}

/// Flat wire form `{c, d, beta, mu, sigma}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct ParamsRecord<T> {
    pub c: usize,
    pub d: usize,
    pub beta: Vec<T>,
    pub mu: Vec<Vec<T>>,
    pub sigma: Vec<Vec<Vec<T>>>,
}

impl<T: Real> From<GmmParams<T>> for ParamsRecord<T> {
    fn from(p: GmmParams<T>) -> Self {
        Self {
            c: p.components(),
            d: p.dim(),
            sigma: p.covariances.iter().map(Matrix::to_rows).collect(),
            beta: p.weights,
            mu: p.means,
        }
    }
}

impl<T: Real> TryFrom<ParamsRecord<T>> for GmmParams<T> {
    type Error = Error;
    fn try_from(r: ParamsRecord<T>) -> Result<Self> {
        let covariances = r.sigma.iter().map(|m| Matrix::from_rows(m)).collect::<Result<Vec<_>>>()?;
        let p = GmmParams {
            weights: r.beta,
            means: r.mu,
            covariances,
        };
        if p.components() != r.c || p.dim() != r.d {
            return Err(Error::InvalidArgument("c/d do not match the arrays".into()));
        }
        p.check_shapes()?;
        Ok(p)
    }
}

impl<T: Real> GmmParams<T> {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn check_shapes(&self) -> Result<()> {
        let (c, d) = (self.components(), self.dim());
        if c == 0 || self.means.len() != c || self.covariances.len() != c {
            return Err(Error::InvalidArgument("component arrays disagree in length".into()));
        }
        if self.means.iter().any(|m| m.len() != d) || self.covariances.iter().any(|s| s.rows() != d || s.cols() != d) {
            return Err(Error::InvalidArgument("dimension mismatch in means or covariances".into()));
        }
        Ok(())
    }

    /// Checks shapes, weight normalization (within `1e-9`), symmetry and
    /// positive definiteness.
    pub fn validate(&self) -> Result<()> {
        self.check_shapes()?;
        if self.weights.iter().any(|&b| b < T::zero() || !b.is_finite()) {
            return Err(Error::InvalidArgument("negative or non-finite weight".into()));
        }
        let total: T = self.weights.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::InvalidArgument(format!("weights sum to {total}")));
        }
        for s in &self.covariances {
            if !s.is_symmetric(T::lit(1e-9) * (T::one() + s.frobenius_norm())) {
                return Err(Error::InvalidArgument("covariance not symmetric".into()));
            }
            Cholesky::new(s)?;
        }
        Ok(())
    }

    /// Largest absolute entrywise difference over weights, means and covariances.
    pub fn max_abs_diff(&self, other: &GmmParams<T>) -> T {
        let w = self.weights.iter().zip(&other.weights).map(|(&a, &b)| (a - b).abs());
        let m = self
            .means
            .iter()
            .zip(&other.means)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| (x - y).abs()));
        let s = self.covariances.iter().zip(&other.covariances).map(|(a, b)| a.max_abs_diff(b));
        w.chain(m).chain(s).fold(T::zero(), T::max)
    }

    fn factorize(&self) -> Result<Vec<Cholesky<T>>> {
        self.covariances.iter().map(Cholesky::new).collect()
    }
}

/// Regularization and component-death thresholds shared by every driver so
/// that distributed runs stay comparable with the centralized reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct EmOptions<T> {
    /// `ε` added to every covariance diagonal after an M-step.
    pub covariance_reg: T,
    /// A component dies when its mass drops below this fraction of the point count.
    pub min_mass_fraction: T,
}

impl<T: Real> EmOptions<T> {
    /// `ε = 1e-6 · mean per-feature variance` of the pooled data.
    pub fn for_data(points: &Matrix<T>) -> Self {
        let var = column_variances(points);
        let mean_var = if var.is_empty() {
            T::zero()
        } else {
            var.iter().copied().sum::<T>() / T::from_count(var.len())
        };
        Self {
            covariance_reg: T::lit(1e-6) * mean_var,
            min_mass_fraction: T::lit(1e-8),
        }
    }
}

fn column_means<T: Real>(points: &Matrix<T>) -> Vec<T> {
    let n = T::from_count(points.rows().max(1));
    let mut mean = vec![T::zero(); points.cols()];
    for row in points.row_iter() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

fn column_variances<T: Real>(points: &Matrix<T>) -> Vec<T> {
    let cov = sample_covariance(points);
    (0..cov.rows()).map(|i| cov[(i, i)]).collect()
}

/// Maximum-likelihood covariance (divides by the point count).
pub fn sample_covariance<T: Real>(points: &Matrix<T>) -> Matrix<T> {
    let mean = column_means(points);
    let mut cov = Matrix::zeros(points.cols(), points.cols());
    let mut centered = vec![T::zero(); points.cols()];
    for row in points.row_iter() {
        for ((c, &x), &m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = x - m;
        }
        cov.add_outer(T::one(), &centered);
    }
    let n = T::from_count(points.rows().max(1));
    let mut cov = cov.scale(n.recip());
    cov.symmetrize();
    cov
}

fn gaussian_log_pdf_factored<T: Real>(x: &[T], mu: &[T], chol: &Cholesky<T>) -> T {
    let d = x.len();
    let diff: Vec<T> = x.iter().zip(mu).map(|(&a, &b)| a - b).collect();
    let two_pi = T::lit(std::f64::consts::TAU);
    -T::lit(0.5) * (T::from_count(d) * two_pi.ln() + chol.log_det() + chol.mahalanobis_sq(&diff))
}

/// Log of the multivariate normal density.
pub fn gaussian_log_pdf<T: Real>(x: &[T], mu: &[T], sigma: &Matrix<T>) -> Result<T> {
    if x.len() != mu.len() || sigma.rows() != x.len() {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    Ok(gaussian_log_pdf_factored(x, mu, &Cholesky::new(sigma)?))
}

/// Multivariate normal density evaluated through a Cholesky factor.
pub fn gaussian_pdf<T: Real>(x: &[T], mu: &[T], sigma: &Matrix<T>) -> Result<T> {
    gaussian_log_pdf(x, mu, sigma).map(T::exp)
}

/// Per-point, per-component weighted log densities `ln βⱼ + ln p(x|μⱼ,Σⱼ)`.
fn weighted_log_densities<T: Real>(points: &Matrix<T>, params: &GmmParams<T>) -> Result<Matrix<T>> {
    if points.cols() != params.dim() {
        return Err(Error::InvalidArgument(format!(
            "points have {} features, model has {}",
            points.cols(),
            params.dim()
        )));
    }
    let chol = params.factorize()?;
    let c = params.components();
    let mut out = Matrix::zeros(points.rows(), c);
    for (i, x) in points.row_iter().enumerate() {
        for j in 0..c {
            out[(i, j)] = params.weights[j].ln() + gaussian_log_pdf_factored(x, &params.means[j], &chol[j]);
        }
    }
    Ok(out)
}

/// Row-stochastic matrix of component responsibilities (points × c).
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities<T> {
    matrix: Matrix<T>,
}

impl<T: Real> Responsibilities<T> {
    /// Wraps a matrix whose rows must each sum to one (within `1e-10`).
    pub fn from_matrix(matrix: Matrix<T>) -> Result<Self> {
        for (i, row) in matrix.row_iter().enumerate() {
            let s: T = row.iter().copied().sum();
            if row.iter().any(|&r| r < T::zero() || r > T::one()) || (s - T::one()).abs() > T::lit(1e-10) {
                return Err(Error::InvalidArgument(format!("row {i} is not a probability vector")));
            }
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.matrix.row(i)
    }

    pub fn points(&self) -> usize {
        self.matrix.rows()
    }

    pub fn components(&self) -> usize {
        self.matrix.cols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            matrix: self.matrix.select_rows(rows),
        }
    }
}

/// E-step in the log domain: each row is normalized by its log-sum-exp.
pub fn e_step<T: Real>(points: &Matrix<T>, params: &GmmParams<T>) -> Result<Responsibilities<T>> {
    let mut logs = weighted_log_densities(points, params)?;
    for i in 0..logs.rows() {
        let row = logs.row_mut(i);
        let lse = log_sum_exp(row);
        if !lse.is_finite() {
            return Err(Error::DegenerateDenominator { row: i });
        }
        for v in row.iter_mut() {
            *v = (*v - lse).exp();
        }
    }
    Ok(Responsibilities { matrix: logs })
}

/// `Σᵢ ln Σⱼ βⱼ p(xᵢ|μⱼ,Σⱼ)`
pub fn log_likelihood<T: Real>(points: &Matrix<T>, params: &GmmParams<T>) -> Result<T> {
    let logs = weighted_log_densities(points, params)?;
    Ok(compensated_sum(logs.row_iter().map(log_sum_exp)))
}

/// Per-component sums `aⱼ = Σ r`, `bⱼ = Σ r·x`, `Cⱼ = Σ r·(x−μⱼ)(x−μⱼ)ᵀ`
/// over a set of points, plus the number of points they cover.
///
/// For one node this is what the node would upload; summed over nodes it is
/// the global statistic the M-step divides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct SufficientStats<T> {
    pub mass: Vec<T>,
    pub weighted_sum: Vec<Vec<T>>,
    pub scatter: Vec<Matrix<T>>,
    pub count: usize,
}

/// What one node shares (or would share) in an iteration.
pub type LocalUpdates<T> = SufficientStats<T>;
/// Network-wide sums entering the M-step.
pub type GlobalSums<T> = SufficientStats<T>;

impl<T: Real> SufficientStats<T> {
    pub fn zeros(c: usize, d: usize) -> Self {
        Self {
            mass: vec![T::zero(); c],
            weighted_sum: vec![vec![T::zero(); d]; c],
            scatter: vec![Matrix::zeros(d, d); c],
            count: 0,
        }
    }

    pub fn components(&self) -> usize {
        self.mass.len()
    }

    pub fn dim(&self) -> usize {
        self.weighted_sum.first().map_or(0, Vec::len)
    }

    /// Length of the stacked vector: `c·(1 + d + d²)`.
    pub fn stacked_len(c: usize, d: usize) -> usize {
        c * (1 + d + d * d)
    }

    /// `[a₁, b₁…, C₁ (row-major)…, a₂, …]`
    pub fn to_stacked(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(Self::stacked_len(self.components(), self.dim()));
        for j in 0..self.components() {
            out.push(self.mass[j]);
            out.extend_from_slice(&self.weighted_sum[j]);
            out.extend_from_slice(self.scatter[j].as_slice());
        }
        out
    }

    pub fn from_stacked(stacked: &[T], c: usize, d: usize, count: usize) -> Result<Self> {
        if stacked.len() != Self::stacked_len(c, d) {
            return Err(Error::InvalidArgument(format!(
                "stacked vector has {} entries, expected {}",
                stacked.len(),
                Self::stacked_len(c, d)
            )));
        }
        let mut s = Self::zeros(c, d);
        s.count = count;
        for (j, chunk) in stacked.chunks(1 + d + d * d).enumerate() {
            s.mass[j] = chunk[0];
            s.weighted_sum[j].copy_from_slice(&chunk[1..1 + d]);
            s.scatter[j] = Matrix::from_vec(d, d, chunk[1 + d..].to_vec())?;
        }
        Ok(s)
    }

    pub fn accumulate(&mut self, other: &SufficientStats<T>) {
        for j in 0..self.components() {
            self.mass[j] += other.mass[j];
            for (b, &o) in self.weighted_sum[j].iter_mut().zip(&other.weighted_sum[j]) {
                *b += o;
            }
            self.scatter[j].add_assign(&other.scatter[j]);
        }
        self.count += other.count;
    }

    /// Entry-wise compensated sum of several statistics.
    pub fn sum<'a, I>(c: usize, d: usize, parts: I) -> Self
    where
        I: IntoIterator<Item = &'a SufficientStats<T>>,
    {
        let mut acc = vec![CompensatedSum::new(); Self::stacked_len(c, d)];
        let mut count = 0;
        for p in parts {
            for (a, v) in acc.iter_mut().zip(p.to_stacked()) {
                a.add(v);
            }
            count += p.count;
        }
        let stacked: Vec<T> = acc.iter().map(CompensatedSum::value).collect();
        Self::from_stacked(&stacked, c, d, count).expect("layout matches")
    }
}

/// Sufficient statistics of a batch of local points. `means` must be the
/// current-iteration means, the same ones the responsibilities were computed with.
pub fn local_updates<T: Real>(points: &Matrix<T>, resp: &Responsibilities<T>, means: &[Vec<T>]) -> Result<LocalUpdates<T>> {
    if resp.points() != points.rows() || resp.components() != means.len() {
        return Err(Error::InvalidArgument("responsibilities do not align with points/means".into()));
    }
    let (c, d) = (means.len(), points.cols());
    let width = 1 + d + d * d;
    let mut acc = vec![CompensatedSum::new(); c * width];
    let mut centered = vec![T::zero(); d];
    for (i, x) in points.row_iter().enumerate() {
        for j in 0..c {
            let r = resp.row(i)[j];
            let block = &mut acc[j * width..(j + 1) * width];
            block[0].add(r);
            for (b, &xv) in block[1..1 + d].iter_mut().zip(x) {
                b.add(r * xv);
            }
            for ((cv, &xv), &mv) in centered.iter_mut().zip(x).zip(&means[j]) {
                *cv = xv - mv;
            }
            for k in 0..d {
                let ru = r * centered[k];
                for l in k..d {
                    let v = ru * centered[l];
                    block[1 + d + k * d + l].add(v);
                    if l != k {
                        block[1 + d + l * d + k].add(v);
                    }
                }
            }
        }
    }
    let stacked: Vec<T> = acc.iter().map(CompensatedSum::value).collect();
    SufficientStats::from_stacked(&stacked, c, d, points.rows())
}

fn assemble<T: Real>(sums: &GlobalSums<T>, weight_total: T, count: T, opts: &EmOptions<T>) -> Result<GmmParams<T>> {
    let c = sums.components();
    let threshold = opts.min_mass_fraction * count;
    let mut params = GmmParams {
        weights: Vec::with_capacity(c),
        means: Vec::with_capacity(c),
        covariances: Vec::with_capacity(c),
    };
    for j in 0..c {
        let a = sums.mass[j];
        if !(a > threshold) {
            return Err(Error::EmptyComponent {
                component: j,
                mass: a.as_f64(),
            });
        }
        params.weights.push(a / weight_total);
        params.means.push(sums.weighted_sum[j].iter().map(|&b| b / a).collect());
        let mut sigma = sums.scatter[j].scale(a.recip());
        sigma.symmetrize();
        sigma.add_diagonal(opts.covariance_reg);
        params.covariances.push(sigma);
    }
    Ok(params)
}

/// M-step from network sums: `β = a/n`, `μ = b/a`, `Σ = C/a + εI`.
pub fn global_update<T: Real>(sums: &GlobalSums<T>, opts: &EmOptions<T>) -> Result<GmmParams<T>> {
    if sums.count == 0 {
        return Err(Error::InvalidArgument("global sums cover no points".into()));
    }
    let n = T::from_count(sums.count);
    assemble(sums, n, n, opts)
}

/// M-step from network averages `a/n, b/n, C/n`. Weights are normalized by
/// `Σ āⱼ`, which equals one for exact averages and absorbs consensus error otherwise.
pub fn update_from_averages<T: Real>(avg: &SufficientStats<T>, opts: &EmOptions<T>) -> Result<GmmParams<T>> {
    let total: T = avg.mass.iter().copied().sum();
    assemble(avg, total, T::one(), opts)
}

/// `c` means drawn from the data without replacement, uniform weights, and
/// the pooled covariance plus `εI` for every component.
pub fn init_params<T: Real>(points: &Matrix<T>, c: usize, seed: u64, opts: &EmOptions<T>) -> Result<GmmParams<T>> {
    if c == 0 || points.rows() < c {
        return Err(Error::InvalidArgument(format!(
            "need at least {c} points to seed {c} components, have {}",
            points.rows()
        )));
    }
    let mut rng = SeedStream::new(seed).rng();
    let picks = sample(&mut rng, points.rows(), c);
    let mut cov = sample_covariance(points);
    cov.add_diagonal(opts.covariance_reg);
    Ok(GmmParams {
        weights: vec![T::from_count(c).recip(); c],
        means: picks.iter().map(|i| points.row(i).to_vec()).collect(),
        covariances: vec![cov; c],
    })
}

/// Parameter trajectory (`T + 1` entries, starting with the initialization)
/// and the log-likelihood of the pooled data under each entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct EmTrace<T> {
    pub params: Vec<GmmParams<T>>,
    pub loglik: Vec<T>,
}

/// Plain EM on pooled data: `iters` rounds of E-step then M-step.
pub fn centralized_em<T: Real>(points: &Matrix<T>, iters: usize, init: &GmmParams<T>, opts: &EmOptions<T>) -> Result<EmTrace<T>> {
    let mut params = vec![init.clone()];
    let mut loglik = vec![log_likelihood(points, init)?];
    for _ in 0..iters {
        let current = params.last().expect("non-empty trajectory");
        let resp = e_step(points, current)?;
        let sums = local_updates(points, &resp, &current.means)?;
        let next = global_update(&sums, opts)?;
        loglik.push(log_likelihood(points, &next)?);
        params.push(next);
    }
    Ok(EmTrace { params, loglik })
}
