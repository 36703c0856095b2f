//! CSV ingestion, PCA and synthetic data generators.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::linalg::{symmetric_eigen, Cholesky, Matrix};
use crate::rng::{normal, uniform, Rng, SeedStream};
use crate::scalar::Real;

/// Numeric table with named features and an optional separated label column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Dataset<T> {
    pub matrix: Matrix<T>,
    pub feature_names: Vec<String>,
    pub labels: Option<Vec<T>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvOptions {
    /// `Some(true)` forces a header row, `Some(false)` forbids one. When unset
    /// the first row is a header iff none of its fields is numeric.
    pub header: Option<bool>,
    /// Header name of the label column to split off.
    pub label_column: Option<String>,
    /// Header names of columns to discard, such as record identifiers.
    pub drop_columns: Vec<String>,
}

impl CsvOptions {
    /// Layout of the UCI Parkinsons file: a `name` column and a `status` label.
    pub fn parkinsons() -> Self {
        Self {
            header: Some(true),
            label_column: Some("status".into()),
            drop_columns: vec!["name".into()],
        }
    }
}

fn parse_number<T: Real>(field: &str) -> Option<T> {
    field.trim().parse::<f64>().ok().filter(|v| v.is_finite()).map(T::lit)
}

pub fn load_csv<T: Real>(path: &Path, opts: &CsvOptions) -> Result<Dataset<T>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, opts)
}

pub fn read_csv<T: Real, R: Read>(reader: R, opts: &CsvOptions) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::ParseError {
                line,
                column: 1,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(records.len() + 1, |p| p.line() as usize);
        records.push((line, rec));
    }
    if records.is_empty() {
        return Err(Error::ParseError {
            line: 1,
            column: 1,
            message: "empty file".into(),
        });
    }
    let has_header = opts
        .header
        .unwrap_or_else(|| records[0].1.iter().all(|f| parse_number::<f64>(f).is_none()));
    let width = records[0].1.len();
    let names: Vec<String> = if has_header {
        records[0].1.iter().map(|s| s.trim().to_string()).collect()
    } else {
        (1..=width).map(|k| format!("x{k}")).collect()
    };
    let find = |name: &str| -> Result<usize> {
        if !has_header {
            return Err(Error::InvalidArgument(format!("column {name:?} named but the file has no header")));
        }
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no column named {name:?}")))
    };
    let label_idx = opts.label_column.as_deref().map(find).transpose()?;
    let dropped = opts.drop_columns.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
    let kept: Vec<usize> = (0..width).filter(|k| Some(*k) != label_idx && !dropped.contains(k)).collect();
    let body = &records[usize::from(has_header)..];
    if body.is_empty() {
        return Err(Error::ParseError {
            line: records[0].0 + 1,
            column: 1,
            message: "no data rows".into(),
        });
    }
    let mut values = Vec::with_capacity(body.len() * kept.len());
    let mut labels = label_idx.map(|_| Vec::with_capacity(body.len()));
    for (line, rec) in body {
        if rec.len() != width {
            return Err(Error::ParseError {
                line: *line,
                column: rec.len().min(width) + 1,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let cell = |k: usize| -> Result<T> {
            parse_number(&rec[k]).ok_or_else(|| Error::NonNumeric {
                line: *line,
                column: k + 1,
                value: rec[k].to_string(),
            })
        };
        for &k in &kept {
            values.push(cell(k)?);
        }
        if let (Some(l), Some(k)) = (labels.as_mut(), label_idx) {
            l.push(cell(k)?);
        }
    }
    Ok(Dataset {
        matrix: Matrix::from_vec(body.len(), kept.len(), values)?,
        feature_names: kept.iter().map(|&k| names[k].clone()).collect(),
        labels,
    })
}

/// Writes a matrix with an optional header; values use the shortest
/// representation that parses back to the same number.
pub fn write_csv<T: Real, W: Write>(matrix: &Matrix<T>, header: Option<&[String]>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let map = |e: csv::Error| Error::InvalidArgument(format!("csv write failed: {e}"));
    if let Some(h) = header {
        w.write_record(h).map_err(map)?;
    }
    for row in matrix.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(map)?;
    }
    w.flush().map_err(|e| Error::InvalidArgument(format!("csv write failed: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct Pca<T> {
    pub mean: Vec<T>,
    /// Per-feature standard deviations when the data was standardized.
    pub scale: Option<Vec<T>>,
    /// One unit-norm principal direction per row.
    pub components: Matrix<T>,
    pub explained_variance: Vec<T>,
    pub explained_ratio: Vec<T>,
    pub projected: Matrix<T>,
}

impl<T: Real> Pca<T> {
    /// Back-projection onto the original feature space.
    pub fn reconstruct(&self) -> Matrix<T> {
        let mut out = self.projected.matmul(&self.components);
        for r in 0..out.rows() {
            for (k, v) in out.row_mut(r).iter_mut().enumerate() {
                if let Some(s) = &self.scale {
                    *v *= s[k];
                }
                *v += self.mean[k];
            }
        }
        out
    }
}

/// Top-`k` eigenvectors of the sample covariance (divisor `N − 1`). Each
/// direction is flipped so its largest-magnitude entry is positive.
pub fn pca<T: Real>(data: &Matrix<T>, k: usize, standardize: bool) -> Result<Pca<T>> {
    let (n, d) = (data.rows(), data.cols());
    if n < 2 || k == 0 || k > n.min(d) {
        return Err(Error::InvalidArgument(format!("cannot take {k} components of a {n}x{d} matrix")));
    }
    let mut mean = vec![T::zero(); d];
    for row in data.row_iter() {
        mean.iter_mut().zip(row).for_each(|(m, &x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= T::from_count(n));
    let mut centered = data.clone();
    for r in 0..n {
        centered.row_mut(r).iter_mut().zip(&mean).for_each(|(x, &m)| *x -= m);
    }
    let scale = if standardize {
        let mut sd = vec![T::zero(); d];
        for row in centered.row_iter() {
            sd.iter_mut().zip(row).for_each(|(s, &x)| *s += x * x);
        }
        sd.iter_mut().for_each(|s| *s = (*s / T::from_count(n - 1)).sqrt());
        if let Some(j) = sd.iter().position(|&s| s == T::zero()) {
            return Err(Error::InvalidArgument(format!("feature {j} is constant")));
        }
        for r in 0..n {
            centered.row_mut(r).iter_mut().zip(&sd).for_each(|(x, &s)| *x /= s);
        }
        Some(sd)
    } else {
        None
    };
    let cov = centered.transpose().matmul(&centered).scale(T::from_count(n - 1).recip());
    let eig = symmetric_eigen(&cov)?;
    let top = eig.values.first().copied().unwrap_or_else(T::zero).max(T::zero());
    let cutoff = top * (T::epsilon() * T::lit(100.0)).max(T::lit(1e-10));
    let rank = eig.values.iter().filter(|&&v| v > cutoff).count();
    if rank < k {
        return Err(Error::RankDeficient { rank, requested: k });
    }
    let mut components = Matrix::zeros(k, d);
    for c in 0..k {
        let v = eig.vectors.row(c);
        let lead = v
            .iter()
            .copied()
            .fold(T::zero(), |best, x| if x.abs() > best.abs() { x } else { best });
        let flip = if lead < T::zero() { -T::one() } else { T::one() };
        components.row_mut(c).iter_mut().zip(v).for_each(|(o, &x)| *o = flip * x);
    }
    let total: T = eig.values.iter().map(|&v| v.max(T::zero())).sum();
    let explained_variance: Vec<T> = eig.values[..k].to_vec();
    let explained_ratio = explained_variance.iter().map(|&v| v / total).collect();
    let projected = centered.matmul(&components.transpose());
    Ok(Pca {
        mean,
        scale,
        components,
        explained_variance,
        explained_ratio,
        projected,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponsibilityNorm {
    /// Each node's responsibilities sum to one across components.
    #[default]
    OverComponents,
    /// Each component's responsibilities sum to one across nodes.
    OverNodes,
}

/// Scalar private values and responsibilities for the leakage experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct PrivateSample<T> {
    /// `x[i]` is the datum of the `i`-th node.
    pub x: Vec<T>,
    /// `responsibilities[i][j]` of node `i` for component `j`.
    pub responsibilities: Vec<Vec<T>>,
}

/// `n × c` uniform responsibilities normalized per `norm`.
pub fn draw_responsibilities<T: Real>(n: usize, c: usize, norm: ResponsibilityNorm, rng: &mut Rng) -> Vec<Vec<T>> {
    let mut responsibilities: Vec<Vec<T>> = (0..n).map(|_| (0..c).map(|_| uniform(rng)).collect()).collect();
    match norm {
        ResponsibilityNorm::OverComponents => {
            for row in &mut responsibilities {
                let s: T = row.iter().copied().sum();
                row.iter_mut().for_each(|v| *v /= s);
                // the last entry absorbs rounding so the row sums to one exactly
                if let Some((last, rest)) = row.split_last_mut() {
                    *last = T::one() - rest.iter().copied().sum::<T>();
                }
            }
        }
        ResponsibilityNorm::OverNodes => {
            for j in 0..c {
                let s: T = responsibilities.iter().map(|r| r[j]).sum();
                responsibilities.iter_mut().for_each(|r| r[j] /= s);
            }
        }
    }
    responsibilities
}

/// `xᵢ ~ N(0, 1)` and uniform responsibilities normalized per `norm`.
pub fn draw_private_data<T: Real>(n: usize, c: usize, norm: ResponsibilityNorm, rng: &mut Rng) -> PrivateSample<T> {
    let x = (0..n).map(|_| normal(rng, T::one())).collect();
    let responsibilities = draw_responsibilities(n, c, norm, rng);
    PrivateSample { x, responsibilities }
}

pub fn synthetic_private_data<T: Real>(n: usize, c: usize, seed: u64) -> PrivateSample<T> {
    draw_private_data(n, c, ResponsibilityNorm::OverComponents, &mut SeedStream::new(seed).rng())
}

/// Ancestral sampling from a mixture. Labels are zero-based component indices.
pub fn synthetic_gmm_data<T: Real>(params: &GmmParams<T>, count: usize, seed: u64) -> Result<(Matrix<T>, Vec<usize>)> {
    params.validate()?;
    let factors = params.covariances.iter().map(Cholesky::new).collect::<Result<Vec<_>>>()?;
    let d = params.dim();
    let mut rng = SeedStream::new(seed).rng();
    let mut values = Vec::with_capacity(count * d);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let u: T = uniform(&mut rng);
        let mut acc = T::zero();
        let mut j = params.components() - 1;
        for (k, &w) in params.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                j = k;
                break;
            }
        }
        while params.weights[j] == T::zero() && j > 0 {
            j -= 1;
        }
        let z: Vec<T> = (0..d).map(|_| normal(&mut rng, T::one())).collect();
        let offset = factors[j].mul_lower(&z);
        values.extend(params.means[j].iter().zip(offset).map(|(&m, o)| m + o));
        labels.push(j);
    }
    Ok((Matrix::from_vec(count, d, values)?, labels))
}

/// Stand-in with the shape of the UCI Parkinsons table: 195 voice records,
/// 22 features on very different scales, and a binary `status` label for two
/// latent groups (about three quarters positive).
pub fn parkinsons_like<T: Real>(seed: u64) -> Dataset<T> {
    const ROWS: usize = 195;
    const FEATURES: usize = 22;
    let seeds = SeedStream::new(seed);
    let mut rng = seeds.child("layout").rng();
    let scales: Vec<f64> = (0..FEATURES)
        .map(|k| 10f64.powf(-2.0 + 4.0 * k as f64 / (FEATURES - 1) as f64))
        .collect();
    let offsets: Vec<f64> = scales.iter().map(|&s| s * (1.0 + uniform::<f64>(&mut rng) * 4.0)).collect();
    let loadings: Vec<[f64; 3]> = (0..FEATURES)
        .map(|_| [normal(&mut rng, 1.0), normal(&mut rng, 1.0), normal(&mut rng, 1.0)])
        .collect();
    let mut rng = seeds.child("rows").rng();
    let mut values = Vec::with_capacity(ROWS * FEATURES);
    let mut labels = Vec::with_capacity(ROWS);
    for _ in 0..ROWS {
        let positive = uniform::<f64>(&mut rng) < 0.75;
        let centre = if positive { [1.2, 0.4, 0.0] } else { [-2.0, -1.0, 0.5] };
        let z: Vec<f64> = centre.iter().map(|&m| m + normal(&mut rng, 0.5)).collect();
        for k in 0..FEATURES {
            let signal: f64 = loadings[k].iter().zip(&z).map(|(l, v)| l * v).sum();
            let noise: f64 = normal(&mut rng, 0.2);
            values.push(T::lit(offsets[k] + scales[k] * (signal + noise)));
        }
        labels.push(if positive { T::one() } else { T::zero() });
    }
    Dataset {
        matrix: Matrix::from_vec(ROWS, FEATURES, values).expect("fixed shape"),
        feature_names: (1..=FEATURES).map(|k| format!("feature_{k:02}")).collect(),
        labels: Some(labels),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headerless_single_row() {
        let d: Dataset<f64> = read_csv("1,2,3\n".as_bytes(), &CsvOptions::default()).unwrap();
        assert_eq!(d.matrix.to_rows(), vec![vec![1.0, 2.0, 3.0]]);
        assert!(d.labels.is_none());
    }

    #[test]
    fn empty_file_is_parse_error() {
        let r: Result<Dataset<f64>> = read_csv("".as_bytes(), &CsvOptions::default());
        assert!(matches!(r, Err(Error::ParseError { line: 1, .. })));
    }

    #[test]
    fn non_numeric_cell_is_located() {
        let text = "a,b\n1,2\n3,x\n";
        match read_csv::<f64, _>(text.as_bytes(), &CsvOptions::default()) {
            Err(Error::NonNumeric { line, column, value }) => assert_eq!((line, column, value.as_str()), (3, 2, "x")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_row_is_parse_error() {
        let r = read_csv::<f64, _>("1,2\n3\n".as_bytes(), &CsvOptions::default());
        assert!(matches!(r, Err(Error::ParseError { .. })));
    }

    #[test]
    fn label_and_drop_columns() {
        let text = "name,f1,status,f2\nr1,1.5,1,2\nr2,3,0,4\n";
        let d: Dataset<f64> = read_csv(text.as_bytes(), &CsvOptions::parkinsons()).unwrap();
        assert_eq!(d.feature_names, vec!["f1", "f2"]);
        assert_eq!(d.matrix.to_rows(), vec![vec![1.5, 2.0], vec![3.0, 4.0]]);
        assert_eq!(d.labels, Some(vec![1.0, 0.0]));
    }

    #[test]
    fn write_read_round_trip() {
        let m = Matrix::from_rows(&[vec![0.1, -1e-300, 1.0 / 3.0], vec![12345.678, 2.5e10, -0.0]]).unwrap();
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let mut buf = Vec::new();
        write_csv(&m, Some(&names), &mut buf).unwrap();
        let d: Dataset<f64> = read_csv(buf.as_slice(), &CsvOptions::default()).unwrap();
        assert_eq!(d.matrix, m);
        assert_eq!(d.feature_names, names);
    }

    #[test]
    fn pca_of_a_line() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let p = pca(&m, 1, false).unwrap();
        assert!((p.explained_ratio[0] - 1.0).abs() < 1e-12);
        let s5 = 5f64.sqrt();
        assert!((p.components[(0, 0)] - 1.0 / s5).abs() < 1e-12);
        assert!((p.components[(0, 1)] - 2.0 / s5).abs() < 1e-12);
        // centered point (i − 4.5)(1, 2) projects to (i − 4.5)·√5
        for i in 0..10 {
            assert!((p.projected[(i, 0)] - (i as f64 - 4.5) * s5).abs() < 1e-12);
        }
        assert!(matches!(pca(&m, 2, false), Err(Error::RankDeficient { rank: 1, requested: 2 })));
    }

    #[test]
    fn full_pca_reconstructs() {
        let d: Dataset<f64> = parkinsons_like(3);
        for standardize in [false, true] {
            let p = pca(&d.matrix, 22, standardize).unwrap();
            let back = p.reconstruct();
            let scale = d.matrix.as_slice().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            assert!(back.max_abs_diff(&d.matrix) <= 1e-9 * scale.max(1.0));
        }
    }

    #[test]
    fn private_data_rows_sum_to_one() {
        let s: PrivateSample<f64> = synthetic_private_data(50, 3, 1);
        for r in &s.responsibilities {
            assert_eq!(r.iter().sum::<f64>(), 1.0);
        }
        let one: PrivateSample<f64> = synthetic_private_data(20, 1, 2);
        assert!(one.responsibilities.iter().all(|r| r == &vec![1.0]));
    }

    #[test]
    fn over_nodes_normalization() {
        let s: PrivateSample<f64> = draw_private_data(6, 2, ResponsibilityNorm::OverNodes, &mut SeedStream::new(5).rng());
        for j in 0..2 {
            let col: f64 = s.responsibilities.iter().map(|r| r[j]).sum();
            assert!((col - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_weights_pick_first_component() {
        let params = GmmParams {
            weights: vec![1.0, 0.0],
            means: vec![vec![0.0], vec![5.0]],
            covariances: vec![Matrix::identity(1), Matrix::identity(1)],
        };
        let (_, labels) = synthetic_gmm_data(&params, 500, 1).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn parkinsons_like_shape() {
        let d: Dataset<f64> = parkinsons_like(0);
        assert_eq!((d.matrix.rows(), d.matrix.cols()), (195, 22));
        assert_eq!(d, parkinsons_like(0));
    }
}
