//! Model-selection criteria over a sweep of polynomial degrees.
//!
//! AIC works in nats; the MDL criteria report code lengths in bits. Every
//! criterion yields a per-degree score and selects the smallest-scoring
//! degree, breaking ties toward lower degrees.

use std::f64::consts::{LN_2, PI};
use std::io::Write;
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::smooth3_values;
use crate::error::{Error, Result};
use crate::infotheory::kl_gaussian_regression;
use crate::polyfit::{chebyshev_features, fit_truncated, mse, nll_bits, to_unit, PolyModel};
use crate::rng::{Stream, StreamRng};
use crate::sources::{Sample, SourceCurve};

/// Scores within this relative distance of the minimum count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Closed form and Monte Carlo may differ by at most this many standard errors.
pub const MC_MAX_DEVIATION: f64 = 3.0;

/// Declaration order is the canonical order used in reports and plot columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Aic,
    MdlTwoPart,
    MdlMixture,
    CrossValidation,
    OracleKl,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [
        Criterion::Aic,
        Criterion::MdlTwoPart,
        Criterion::MdlMixture,
        Criterion::CrossValidation,
        Criterion::OracleKl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Aic => "aic",
            Criterion::MdlTwoPart => "mdl_two_part",
            Criterion::MdlMixture => "mdl_mixture",
            Criterion::CrossValidation => "cross_validation",
            Criterion::OracleKl => "oracle_kl",
        }
    }

    pub fn parse(s: &str) -> Option<Criterion> {
        Criterion::ALL.into_iter().find(|c| c.name() == s)
    }

    /// `oracle_kl` needs the true source and is a diagnostic, not a selector.
    pub fn is_operational(self) -> bool {
        self != Criterion::OracleKl
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariancePolicy {
    /// Each model uses its own training MSE as noise variance.
    PerModelMse,
    Fixed(f64),
}

impl VariancePolicy {
    fn resolve(self, model: &PolyModel) -> Result<f64> {
        let v = match self {
            VariancePolicy::PerModelMse => model.train_mse,
            VariancePolicy::Fixed(v) => v,
        };
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else if matches!(self, VariancePolicy::PerModelMse) {
            Err(Error::DegenerateFit { degree: model.degree })
        } else {
            Err(Error::config("variance", format!("fixed variance must be > 0, got {v}")))
        }
    }

    fn fixed(self, what: &str) -> Result<f64> {
        match self {
            VariancePolicy::Fixed(v) if v > 0.0 && v.is_finite() => Ok(v),
            VariancePolicy::Fixed(v) => Err(Error::config("variance", format!("fixed variance must be > 0, got {v}"))),
            VariancePolicy::PerModelMse => Err(Error::config(
                "shared_variance_policy",
                format!("{what} needs a fixed noise variance"),
            )),
        }
    }
}

/// Models for a contiguous range of degrees, all fitted on one training sample.
#[derive(Debug, Clone)]
pub struct SweepInput<'a> {
    sample: &'a Sample,
    models: Vec<PolyModel>,
    pub policy: VariancePolicy,
}

impl<'a> SweepInput<'a> {
    pub fn new(sample: &'a Sample, models: Vec<PolyModel>, policy: VariancePolicy) -> Result<Self> {
        let first = models.first().ok_or_else(|| Error::config("models", "empty sweep"))?;
        let digest = sample.digest();
        for (i, m) in models.iter().enumerate() {
            if m.degree != first.degree + i {
                return Err(Error::config("models", "degrees must be contiguous and increasing"));
            }
            if m.train_n != sample.len() || m.sample_digest != digest {
                return Err(Error::config("models", format!("degree {} was fitted on a different sample", m.degree)));
            }
        }
        Ok(SweepInput { sample, models, policy })
    }

    /// Fits every degree in `degrees` (in parallel) on `sample` with [`fit_truncated`].
    pub fn fit(sample: &'a Sample, degrees: RangeInclusive<usize>, policy: VariancePolicy) -> Result<Self> {
        let models = degrees
            .into_par_iter()
            .map(|k| fit_truncated(sample, k).map_err(|e| Error::at_degree(k, e)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(sample, models, policy)
    }

    pub fn with_policy(&self, policy: VariancePolicy) -> Self {
        SweepInput {
            policy,
            ..self.clone()
        }
    }

    pub fn sample(&self) -> &Sample {
        self.sample
    }

    pub fn models(&self) -> &[PolyModel] {
        &self.models
    }

    pub fn train_n(&self) -> usize {
        self.sample.len()
    }
}

/// Per-degree scores of one criterion and the degree it selects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionScore {
    pub criterion: Criterion,
    pub per_degree: Vec<(usize, f64)>,
    pub selected_k: usize,
    pub tie_policy_applied: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// One-line summary written next to the per-degree CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionSummary {
    pub criterion: Criterion,
    pub selected_k: usize,
    pub tie_policy_applied: bool,
}

impl CriterionScore {
    pub fn from_scores(criterion: Criterion, per_degree: Vec<(usize, f64)>) -> Self {
        assert!(!per_degree.is_empty(), "a criterion needs at least one degree");
        let min = per_degree.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
        let slack = TIE_TOLERANCE * min.abs().max(1.0);
        let mut tied = per_degree.iter().filter(|(_, s)| *s <= min + slack);
        let selected_k = tied.next().map(|(k, _)| *k).unwrap_or(per_degree[0].0);
        let tie_policy_applied = tied.next().is_some();
        CriterionScore {
            criterion,
            per_degree,
            selected_k,
            tie_policy_applied,
            warnings: Vec::new(),
        }
    }

    pub fn scores(&self) -> Vec<f64> {
        self.per_degree.iter().map(|(_, s)| *s).collect()
    }

    pub fn score_at(&self, k: usize) -> Option<f64> {
        self.per_degree.iter().find(|(d, _)| *d == k).map(|(_, s)| *s)
    }

    pub fn summary(&self) -> CriterionSummary {
        CriterionSummary {
            criterion: self.criterion,
            selected_k: self.selected_k,
            tie_policy_applied: self.tie_policy_applied,
        }
    }

    /// Appends `criterion,k,score` rows (no header).
    pub fn write_csv_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for (k, s) in &self.per_degree {
            w.write_record([self.criterion.name().to_string(), k.to_string(), format!("{s:?}")])?;
        }
        Ok(())
    }
}

/// n·ln(σ̂²_k) + 2k for each (k, σ̂²_k).
pub fn aic_scores(n: usize, mse_by_degree: &[(usize, f64)]) -> Result<Vec<(usize, f64)>> {
    mse_by_degree
        .iter()
        .map(|&(k, s2)| {
            if s2 > 0.0 {
                Ok((k, n as f64 * s2.ln() + 2.0 * k as f64))
            } else {
                Err(Error::DegenerateFit { degree: k })
            }
        })
        .collect()
}

/// Akaike's criterion on the training MSE of each degree.
pub fn aic(sweep: &SweepInput) -> Result<CriterionScore> {
    let mses: Vec<(usize, f64)> = sweep.models.iter().map(|m| (m.degree, m.train_mse)).collect();
    Ok(CriterionScore::from_scores(Criterion::Aic, aic_scores(sweep.train_n(), &mses)?))
}

/// Data bits plus k·log₂√n model bits.
pub fn two_part_totals(n: usize, data_bits: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let per_parameter = 0.5 * (n as f64).log2();
    data_bits
        .iter()
        .map(|&(k, bits)| (k, bits + k as f64 * per_parameter))
        .collect()
}

/// Rissanen's two-part code: −log₂ p(s | m_k) + k·log₂√n.
pub fn mdl_two_part(sweep: &SweepInput) -> Result<CriterionScore> {
    let data = sweep
        .models
        .iter()
        .map(|m| {
            let v = sweep.policy.resolve(m)?;
            Ok((m.degree, nll_bits(m, sweep.sample, v)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = sweep.train_n();
    let mut score = CriterionScore::from_scores(Criterion::MdlTwoPart, two_part_totals(n, &data));
    if n <= 1 {
        score
            .warnings
            .push("small sample: log2(sqrt(n)) = 0, selection reduces to maximum likelihood".into());
    }
    Ok(score)
}

fn design(sample: &Sample, degree: usize) -> DMatrix<f64> {
    let m = degree + 1;
    let mut phi = DMatrix::zeros(sample.len(), m);
    for (i, x) in sample.xs().enumerate() {
        for (j, v) in chebyshev_features(to_unit(sample.support, x), degree).into_iter().enumerate() {
            phi[(i, j)] = v;
        }
    }
    phi
}

fn check_prior_scale(prior_scale: f64) -> Result<()> {
    if prior_scale > 0.0 && prior_scale.is_finite() {
        Ok(())
    } else {
        Err(Error::config("mixture_prior_scale", format!("must be > 0, got {prior_scale}")))
    }
}

/// −log₂ p(s | k) for the Gaussian linear model y = Φc + ε with
/// c ~ N(0, prior_scale²·I) on the Chebyshev coefficients and ε ~ N(0, σ²·I).
pub fn mixture_neg_log2_marginal(sample: &Sample, degree: usize, variance: f64, prior_scale: f64) -> Result<f64> {
    check_prior_scale(prior_scale)?;
    let n = sample.len() as f64;
    let m = degree + 1;
    let phi = design(sample, degree);
    let y = DVector::from_iterator(sample.len(), sample.ys());
    let ratio = variance / (prior_scale * prior_scale);
    let a = phi.tr_mul(&phi) + DMatrix::identity(m, m) * ratio;
    let b = phi.tr_mul(&y);
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Domain(format!("posterior precision at degree {degree} is not positive definite")))?;
    let log_det_a: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    // Σ = σ²I + s²ΦΦᵀ; det via the matrix determinant lemma, inverse via Woodbury.
    let log_det = n * variance.ln() - m as f64 * ratio.ln() + log_det_a;
    let quad = (y.dot(&y) - b.dot(&chol.solve(&b))) / variance;
    Ok(0.5 * (n * (2.0 * PI).ln() + log_det + quad) / LN_2)
}

/// Monte Carlo estimate of the marginal likelihood p(s | k).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub neg_log2_marginal: f64,
    /// Standard error of the estimate, relative to the estimate itself.
    pub relative_std_error: f64,
    /// |estimate − reference| in standard errors, when a reference was supplied.
    pub deviation: f64,
}

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Importance-sampling estimate of p(s | k) = ∫ p(c) p(s | c) dc.
///
/// Draws come from an equal mixture of the prior and a Gaussian at the
/// posterior mode with twice the posterior covariance, which keeps every
/// weight below 2^(m/2 + 1)·p(s | k). The mode and covariance come from a QR
/// factorisation of the prior-augmented design, not from the closed form.
/// `reference_neg_log2`, if given, is compared in standard errors.
pub fn mixture_monte_carlo(
    sample: &Sample,
    degree: usize,
    variance: f64,
    prior_scale: f64,
    draws: usize,
    reference_neg_log2: Option<f64>,
) -> Result<MonteCarloEstimate> {
    check_prior_scale(prior_scale)?;
    if draws < 2 {
        return Err(Error::config("mixture_mc_samples", "need at least two draws"));
    }
    let m = degree + 1;
    let n = sample.len() as f64;
    let phi = design(sample, degree);
    let y = DVector::from_iterator(sample.len(), sample.ys());
    let s2 = prior_scale * prior_scale;
    let sd = variance.sqrt();

    // Posterior mode and precision from a QR of the stacked system
    // [Φ/σ; I/s]·c ≈ [y/σ; 0]; RᵀR is the posterior precision.
    let mut stacked = DMatrix::zeros(sample.len() + m, m);
    stacked.rows_mut(0, sample.len()).copy_from(&(&phi / sd));
    stacked.rows_mut(sample.len(), m).fill_diagonal(1.0 / prior_scale);
    let mut rhs = DVector::zeros(sample.len() + m);
    rhs.rows_mut(0, sample.len()).copy_from(&(&y / sd));
    let qr = stacked.qr();
    let r = qr.r();
    qr.q_tr_mul(&mut rhs);
    let centre = r
        .solve_upper_triangular(&rhs.rows(0, m).into_owned())
        .expect("stacked design has full column rank");
    // Proposal covariance is twice the posterior covariance.
    let log_det_proposal = m as f64 * LN_2 - 2.0 * r.diagonal().iter().map(|d| d.abs().ln()).sum::<f64>();

    let log_2pi = (2.0 * PI).ln();
    let log_prior = |c: &DVector<f64>| -0.5 * m as f64 * (log_2pi + s2.ln()) - c.norm_squared() / (2.0 * s2);
    let log_lik = |c: &DVector<f64>| {
        let res = &y - &phi * c;
        -0.5 * n * (log_2pi + variance.ln()) - res.norm_squared() / (2.0 * variance)
    };

    let mut rng = StreamRng::new(sample.seed, Stream::MixtureMonteCarlo { degree });
    let mut log_w = Vec::with_capacity(draws);
    for _ in 0..draws {
        let pick_prior = rng.uniform() < 0.5;
        let z = DVector::from_iterator(m, (0..m).map(|_| rng.standard_normal()));
        let c = if pick_prior {
            z * prior_scale
        } else {
            let u = r.solve_upper_triangular(&z).expect("R is nonsingular");
            &centre + u * std::f64::consts::SQRT_2
        };
        let lp = log_prior(&c);
        let d = &r * (&c - &centre);
        let lg = -0.5 * (m as f64 * log_2pi + log_det_proposal) - d.norm_squared() / 4.0;
        let lq = log_sum_exp2(lp, lg) - LN_2;
        log_w.push(lp + log_lik(&c) - lq);
    }

    let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - shift).exp()).collect();
    let count = draws as f64;
    let mean = w.iter().sum::<f64>() / count;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
    let se = (var / count).sqrt();
    let deviation = match reference_neg_log2 {
        Some(r) => {
            let reference = (-r * LN_2 - shift).exp();
            if se > 0.0 {
                (mean - reference).abs() / se
            } else if (mean - reference).abs() <= 1e-12 * reference {
                0.0
            } else {
                f64::INFINITY
            }
        }
        None => 0.0,
    };
    Ok(MonteCarloEstimate {
        neg_log2_marginal: -(mean.ln() + shift) / LN_2,
        relative_std_error: se / mean,
        deviation,
    })
}

/// Mixture MDL: −log₂ p(s | k) + log₂(k + 1).
///
/// With `mc_samples > 0` each degree's closed form is checked against
/// [`mixture_monte_carlo`]; a gap beyond [`MC_MAX_DEVIATION`] standard errors
/// is a numeric-integrity error.
pub fn mdl_mixture(sweep: &SweepInput, prior_scale: f64, mc_samples: usize) -> Result<CriterionScore> {
    let variance = sweep.policy.fixed("mdl_mixture")?;
    check_prior_scale(prior_scale)?;
    let per_degree = sweep
        .models
        .par_iter()
        .map(|model| {
            let k = model.degree;
            let closed = mixture_neg_log2_marginal(sweep.sample, k, variance, prior_scale)
                .map_err(|e| Error::at_degree(k, e))?;
            if mc_samples > 0 {
                let mc = mixture_monte_carlo(sweep.sample, k, variance, prior_scale, mc_samples, Some(closed))?;
                if !(mc.deviation <= MC_MAX_DEVIATION) {
                    return Err(Error::NumericIntegrity {
                        degree: k,
                        closed_bits: closed,
                        mc_bits: mc.neg_log2_marginal,
                        deviation: mc.deviation,
                    });
                }
            }
            Ok((k, closed + ((k + 1) as f64).log2()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CriterionScore::from_scores(Criterion::MdlMixture, per_degree))
}

/// Mean held-out MSE per degree over `folds` folds. Fold membership is a
/// shuffle keyed by the sample seed.
pub fn cross_validation_curve(sample: &Sample, degrees: RangeInclusive<usize>, folds: usize) -> Result<Vec<f64>> {
    let n = sample.len();
    if folds < 2 || folds > n {
        return Err(Error::config("cv_folds", format!("need 2 <= folds <= {n}, got {folds}")));
    }
    let k_max = *degrees.end();
    let largest_fold = n.div_ceil(folds);
    let min_train = n - largest_fold;
    if min_train < k_max + 1 {
        return Err(Error::config(
            "cv_folds",
            format!(
                "{folds} folds leave {min_train} training points, enough only up to degree {}; k_max is {k_max}",
                min_train as i64 - 1
            ),
        ));
    }

    let mut order: Vec<usize> = (0..n).collect();
    StreamRng::new(sample.seed, Stream::CvFolds).shuffle(&mut order);
    let splits = (0..folds)
        .map(|f| {
            let mut train = Vec::with_capacity(n);
            let mut held = Vec::with_capacity(largest_fold);
            for (j, &i) in order.iter().enumerate() {
                if j % folds == f {
                    held.push(i);
                } else {
                    train.push(i);
                }
            }
            Ok((sample.subset(&train)?, sample.subset(&held)?))
        })
        .collect::<Result<Vec<_>>>()?;

    degrees
        .into_par_iter()
        .map(|k| {
            let mut total = 0.0;
            for (train, held) in &splits {
                let model = fit_truncated(train, k).map_err(|e| Error::at_degree(k, e))?;
                total += mse(&model, held);
            }
            Ok(total / folds as f64)
        })
        .collect()
}

/// k-fold cross-validation, optionally smoothed by 3-point means before selection.
pub fn cross_validation(
    sample: &Sample,
    degrees: RangeInclusive<usize>,
    folds: usize,
    smoothing: bool,
) -> Result<CriterionScore> {
    let k_min = *degrees.start();
    let mut scores = cross_validation_curve(sample, degrees, folds)?;
    if smoothing {
        scores = smooth3_values(&scores);
    }
    let per_degree = scores.into_iter().enumerate().map(|(i, s)| (k_min + i, s)).collect();
    Ok(CriterionScore::from_scores(Criterion::CrossValidation, per_degree))
}

/// Ground-truth diagnostic: KL cost (nats) of predicting `n_future` points
/// with each fitted model instead of the true source.
pub fn oracle_kl(sweep: &SweepInput, source: &SourceCurve, n_future: usize) -> Result<CriterionScore> {
    let variance = sweep.policy.fixed("oracle_kl")?;
    let support = sweep.sample.support;
    let per_degree = sweep
        .models
        .par_iter()
        .map(|m| {
            kl_gaussian_regression(|x| source.eval(x), m, variance, support, n_future)
                .map(|kl| (m.degree, kl))
                .map_err(|e| Error::at_degree(m.degree, e))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CriterionScore::from_scores(Criterion::OracleKl, per_degree))
}

/// Index minimising −log₂P(s|m) + K(m) over `(neg_log2_likelihood, code_length_bits)` pairs.
/// Ties go to the lowest index.
pub fn select_min_description_length(candidates: &[(f64, f64)]) -> Option<usize> {
    let totals: Vec<f64> = candidates.iter().map(|(nll, k)| nll + k).collect();
    (!totals.is_empty()).then(|| crate::analysis::argmin(&totals))
}

/// Index maximising P(s|m)·2^(−K(m)) over `(likelihood, code_length_bits)` pairs.
/// Ties go to the lowest index.
pub fn select_max_posterior(candidates: &[(f64, f64)]) -> Option<usize> {
    let weights: Vec<f64> = candidates.iter().map(|(p, k)| -(p * (-k).exp2())).collect();
    (!weights.is_empty()).then(|| crate::analysis::argmin(&weights))
}
