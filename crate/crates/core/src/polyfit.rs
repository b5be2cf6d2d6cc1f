//! Least-squares polynomial fitting in a Chebyshev basis.
//!
//! The support is mapped affinely onto [-1, 1] and the design matrix is built
//! from Chebyshev polynomials T_0..T_k, then solved by Householder QR with
//! column pivoting. Power-basis coefficients are derived for display only;
//! every evaluation goes through the Chebyshev representation.

use std::f64::consts::{LN_2, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sources::{Interval, Sample};

/// Relative threshold on the pivoted R diagonal below which a column counts as dependent.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Rank threshold for [`fit_truncated`].
pub const SWEEP_RANK_TOLERANCE: f64 = f64::EPSILON;

/// A fitted polynomial of fixed degree.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyModel {
    pub degree: usize,
    /// Power-basis coefficients a_0..a_k in the original x units.
    pub coefficients: Vec<f64>,
    /// Chebyshev coefficients on the support mapped to [-1, 1].
    pub basis_coefficients: Vec<f64>,
    pub support: Interval,
    /// Mean squared training residual.
    pub train_mse: f64,
    pub train_n: usize,
    /// Ratio of the largest to smallest pivoted R diagonal.
    pub condition_estimate: f64,
    /// Numerical rank of the design; below `degree + 1` only for truncated fits.
    pub rank: usize,
    pub train_x: Vec<f64>,
    pub sample_digest: u64,
}

/// Serialized form of a [`PolyModel`]; the Chebyshev representation stays internal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyModelRecord {
    pub degree: usize,
    pub coefficients: Vec<f64>,
    pub train_mse: f64,
    pub train_n: usize,
    pub support: Interval,
}

impl From<&PolyModel> for PolyModelRecord {
    fn from(m: &PolyModel) -> Self {
        PolyModelRecord {
            degree: m.degree,
            coefficients: m.coefficients.clone(),
            train_mse: m.train_mse,
            train_n: m.train_n,
            support: m.support,
        }
    }
}

impl Serialize for PolyModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        PolyModelRecord::from(self).serialize(serializer)
    }
}

/// Gradient of the per-point log-likelihood with respect to the basis
/// coefficients: one row per coefficient, one column per point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub values: DMatrix<f64>,
}

impl ScoreVector {
    /// Gradient of the total log-likelihood of the sample.
    pub fn total(&self) -> Vec<f64> {
        self.values.row_iter().map(|r| r.iter().sum()).collect()
    }
}

/// Maps `x` in `support` onto [-1, 1].
pub fn to_unit(support: Interval, x: f64) -> f64 {
    (2.0 * x - support.a - support.b) / support.width()
}

/// T_0(t)..T_degree(t).
pub fn chebyshev_features(t: f64, degree: usize) -> Vec<f64> {
    let mut phi = Vec::with_capacity(degree + 1);
    phi.push(1.0);
    if degree >= 1 {
        phi.push(t);
    }
    for j in 2..=degree {
        phi.push(2.0 * t * phi[j - 1] - phi[j - 2]);
    }
    phi
}

/// Clenshaw evaluation of Σ c_j T_j(t).
pub fn chebyshev_eval(coefficients: &[f64], t: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &c in coefficients.iter().skip(1).rev() {
        let b0 = 2.0 * t * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    coefficients.first().copied().unwrap_or(0.0) + t * b1 - b2
}

impl PolyModel {
    pub fn eval(&self, x: f64) -> f64 {
        chebyshev_eval(&self.basis_coefficients, to_unit(self.support, x))
    }

    /// Feature vector φ(x) in the internal basis.
    pub fn features(&self, x: f64) -> Vec<f64> {
        chebyshev_features(to_unit(self.support, x), self.degree)
    }

    /// Evaluates the power-basis coefficients directly (Horner). Loses accuracy at high degree.
    pub fn eval_power(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn record(&self) -> PolyModelRecord {
        self.into()
    }
}

struct LeastSquares {
    solution: Vec<f64>,
    condition: f64,
    rank: usize,
}

/// Householder QR with column pivoting (largest remaining column norm first).
/// `columns` is the design matrix stored column by column.
/// Below `tolerance × |R₀₀|` a diagonal counts as zero. With `truncate` the
/// trailing columns are dropped (basic solution on the numerical rank);
/// otherwise rank deficiency is an error.
fn pivoted_least_squares(
    mut columns: Vec<Vec<f64>>,
    mut rhs: Vec<f64>,
    degree: usize,
    tolerance: f64,
    truncate: bool,
) -> Result<LeastSquares> {
    let n = rhs.len();
    let m = columns.len();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut diag = vec![0.0; m];

    for j in 0..m {
        let tail_norm2 = |c: &Vec<f64>| c[j..].iter().map(|v| v * v).sum::<f64>();
        let pivot = (j..m)
            .map(|c| (c, tail_norm2(&columns[c])))
            .fold((j, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0;
        columns.swap(j, pivot);
        perm.swap(j, pivot);

        let norm = tail_norm2(&columns[j]).sqrt();
        if norm == 0.0 {
            diag[j] = 0.0;
            continue;
        }
        let alpha = if columns[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = columns[j][j..].to_vec();
        v[0] -= alpha;
        let v_norm2: f64 = v.iter().map(|x| x * x).sum();
        if v_norm2 > 0.0 {
            let reflect = |target: &mut [f64]| {
                let s: f64 = v.iter().zip(target.iter()).map(|(a, b)| a * b).sum();
                let f = 2.0 * s / v_norm2;
                for (t, vi) in target.iter_mut().zip(&v) {
                    *t -= f * vi;
                }
            };
            for c in columns.iter_mut().skip(j + 1) {
                reflect(&mut c[j..]);
            }
            reflect(&mut rhs[j..]);
        }
        columns[j][j] = alpha;
        for v in columns[j][j + 1..n].iter_mut() {
            *v = 0.0;
        }
        diag[j] = alpha;
    }

    let largest = diag.first().map_or(0.0, |d| d.abs());
    let rank = diag
        .iter()
        .position(|d| largest == 0.0 || d.abs() <= tolerance * largest)
        .unwrap_or(m);
    if rank < m && !truncate {
        return Err(Error::RankDeficient { degree, rank });
    }
    if rank == 0 {
        return Err(Error::RankDeficient { degree, rank });
    }

    let mut z = vec![0.0; m];
    for i in (0..rank).rev() {
        let s: f64 = (i + 1..rank).map(|c| columns[c][i] * z[c]).sum();
        z[i] = (rhs[i] - s) / diag[i];
    }
    let mut solution = vec![0.0; m];
    for (j, &p) in perm.iter().enumerate() {
        solution[p] = z[j];
    }
    Ok(LeastSquares {
        solution,
        condition: largest / diag[rank - 1].abs(),
        rank,
    })
}

fn poly_mul_linear(p: &[f64], slope: f64, intercept: f64) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + 1];
    for (i, &c) in p.iter().enumerate() {
        out[i] += c * intercept;
        out[i + 1] += c * slope;
    }
    out
}

/// Converts Chebyshev coefficients on the mapped support to power-basis coefficients in x.
pub fn chebyshev_to_power(basis: &[f64], support: Interval) -> Vec<f64> {
    let k = basis.len();
    // Power-basis coefficients (in t) of each T_j.
    let mut in_t = vec![0.0; k];
    let (mut prev, mut cur) = (vec![1.0], vec![0.0, 1.0]);
    for (j, &c) in basis.iter().enumerate() {
        let tj: &[f64] = match j {
            0 => &prev,
            1 => &cur,
            _ => {
                let mut next = poly_mul_linear(&cur, 2.0, 0.0);
                for (i, v) in prev.iter().enumerate() {
                    next[i] -= v;
                }
                prev = std::mem::replace(&mut cur, next);
                &cur
            }
        };
        for (i, &v) in tj.iter().enumerate() {
            in_t[i] += c * v;
        }
    }
    // Substitute t = slope·x + intercept by Horner on polynomials.
    let slope = 2.0 / support.width();
    let intercept = -(support.a + support.b) / support.width();
    let mut out = vec![0.0];
    for &c in in_t.iter().rev() {
        out = poly_mul_linear(&out, slope, intercept);
        out[0] += c;
    }
    out.truncate(k.max(1));
    out
}

/// Least-squares polynomial of the given degree through the sample.
/// A design whose numerical rank (at [`RANK_TOLERANCE`]) is below `degree + 1`
/// is an error.
pub fn fit(sample: &Sample, degree: usize) -> Result<PolyModel> {
    fit_with(sample, degree, RANK_TOLERANCE, false)
}

/// As [`fit`], for degree sweeps that run up to near-interpolation. Only
/// directions below machine precision count as rank loss, and those are
/// dropped instead of failing the fit.
pub fn fit_truncated(sample: &Sample, degree: usize) -> Result<PolyModel> {
    fit_with(sample, degree, SWEEP_RANK_TOLERANCE, true)
}

fn fit_with(sample: &Sample, degree: usize, tolerance: f64, truncate: bool) -> Result<PolyModel> {
    let n = sample.len();
    if degree + 1 > n {
        return Err(Error::Underdetermined { degree, n });
    }
    let support = sample.support;
    let ts: Vec<f64> = sample.xs().map(|x| to_unit(support, x)).collect();
    let mut columns = vec![vec![0.0; n]; degree + 1];
    for (i, &t) in ts.iter().enumerate() {
        for (j, v) in chebyshev_features(t, degree).into_iter().enumerate() {
            columns[j][i] = v;
        }
    }
    let ls = pivoted_least_squares(columns, sample.ys().collect(), degree, tolerance, truncate)?;

    let sse: f64 = ts
        .iter()
        .zip(sample.ys())
        .map(|(&t, y)| (y - chebyshev_eval(&ls.solution, t)).powi(2))
        .sum();

    Ok(PolyModel {
        degree,
        coefficients: chebyshev_to_power(&ls.solution, support),
        basis_coefficients: ls.solution,
        support,
        train_mse: sse / n as f64,
        train_n: n,
        condition_estimate: ls.condition.max(1.0),
        rank: ls.rank,
        train_x: sample.xs().collect(),
        sample_digest: sample.digest(),
    })
}

/// Mean squared error of the model on a sample.
pub fn mse(model: &PolyModel, sample: &Sample) -> f64 {
    let sse: f64 = sample.points.iter().map(|p| (p.y - model.eval(p.x)).powi(2)).sum();
    sse / sample.len() as f64
}

fn check_variance(variance: f64) -> Result<()> {
    if variance > 0.0 && variance.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("variance must be finite and > 0, got {variance}")))
    }
}

/// −log₂ p(sample | model, variance) under Gaussian noise.
pub fn nll_bits(model: &PolyModel, sample: &Sample, variance: f64) -> Result<f64> {
    check_variance(variance)?;
    let norm = 0.5 * (2.0 * PI * variance).log2();
    Ok(sample
        .points
        .iter()
        .map(|p| norm + (p.y - model.eval(p.x)).powi(2) / (2.0 * variance * LN_2))
        .sum())
}

/// Per-observation Fisher information of the Gaussian regression model in
/// the internal basis, averaged over the training x values (natural log).
pub fn fisher_information(model: &PolyModel, variance: f64) -> Result<DMatrix<f64>> {
    check_variance(variance)?;
    let m = model.degree + 1;
    let mut j = DMatrix::zeros(m, m);
    for &x in &model.train_x {
        let phi = model.features(x);
        for a in 0..m {
            for b in 0..m {
                j[(a, b)] += phi[a] * phi[b];
            }
        }
    }
    Ok(j / (variance * model.train_x.len() as f64))
}

/// Natural-log score of each observation with respect to the basis coefficients.
pub fn score_vector(model: &PolyModel, sample: &Sample, variance: f64) -> Result<ScoreVector> {
    check_variance(variance)?;
    let m = model.degree + 1;
    let mut values = DMatrix::zeros(m, sample.len());
    for (i, p) in sample.points.iter().enumerate() {
        let r = (p.y - model.eval(p.x)) / variance;
        for (a, phi) in model.features(p.x).into_iter().enumerate() {
            values[(a, i)] = phi * r;
        }
    }
    Ok(ScoreVector { values })
}
