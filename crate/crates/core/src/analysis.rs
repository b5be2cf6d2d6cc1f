//! Generalization curves and their critical points.
//!
//! A curve holds the test error of each degree in a contiguous range. From it
//! we read off the origin (degree k_min), the optimum, the region of good
//! generalization (errors below the log-scale midpoint between origin and
//! optimum), false minima, and the point from which every model is worse than
//! the origin.

use std::io::{Read, Write};
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polyfit::{fit_truncated, mse};
use crate::sources::Sample;

/// Per-degree error sequence over a contiguous degree range.
#[derive(Debug, Clone, PartialEq)]
pub struct GenCurve {
    pub k_min: usize,
    pub errors: Vec<f64>,
    pub smoothed: bool,
}

impl GenCurve {
    /// Errors must be finite and non-negative (exactly zero only for noiseless data).
    pub fn new(k_min: usize, errors: Vec<f64>) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::config("errors", "a curve needs at least one degree"));
        }
        if let Some((i, e)) = errors.iter().enumerate().find(|(_, e)| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::Domain(format!("error at degree {} is {e}", k_min + i)));
        }
        Ok(GenCurve {
            k_min,
            errors,
            smoothed: false,
        })
    }

    pub fn k_max(&self) -> usize {
        self.k_min + self.errors.len() - 1
    }

    pub fn degrees(&self) -> RangeInclusive<usize> {
        self.k_min..=self.k_max()
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn error_at(&self, k: usize) -> Option<f64> {
        k.checked_sub(self.k_min).and_then(|i| self.errors.get(i).copied())
    }

    /// Writes `k,error` rows, with a `smoothed_error` column when `smoothed` is given.
    pub fn write_csv<W: Write>(&self, smoothed: Option<&GenCurve>, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        match smoothed {
            Some(_) => w.write_record(["k", "error", "smoothed_error"])?,
            None => w.write_record(["k", "error"])?,
        }
        for (i, k) in self.degrees().enumerate() {
            let mut row = vec![k.to_string(), format!("{:?}", self.errors[i])];
            if let Some(s) = smoothed {
                row.push(format!("{:?}", s.errors[i]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<(GenCurve, Option<GenCurve>)> {
        let mut r = csv::Reader::from_reader(reader);
        let with_smoothed = r.headers()?.len() == 3;
        let mut ks = Vec::new();
        let mut raw = Vec::new();
        let mut smooth = Vec::new();
        for row in r.records() {
            let row = row?;
            let field = |i: usize| -> Result<&str> {
                row.get(i)
                    .ok_or_else(|| Error::config("curve csv", format!("missing column {i}")))
            };
            ks.push(
                field(0)?
                    .parse::<usize>()
                    .map_err(|e| Error::config("curve csv", e.to_string()))?,
            );
            raw.push(parse_f64(field(1)?)?);
            if with_smoothed {
                smooth.push(parse_f64(field(2)?)?);
            }
        }
        let k_min = *ks.first().ok_or_else(|| Error::config("curve csv", "no rows"))?;
        if ks.iter().enumerate().any(|(i, &k)| k != k_min + i) {
            return Err(Error::config("curve csv", "degrees are not contiguous"));
        }
        let curve = GenCurve::new(k_min, raw)?;
        let smoothed = if with_smoothed {
            let mut s = GenCurve::new(k_min, smooth)?;
            s.smoothed = true;
            Some(s)
        } else {
            None
        };
        Ok((curve, smoothed))
    }
}

pub(crate) fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::config("number", format!("{s:?}: {e}")))
}

/// Test error of the least-squares fit at every degree in `degrees`.
/// Degrees are fitted in parallel; the result does not depend on scheduling.
pub fn generalization_curve(train: &Sample, test: &Sample, degrees: RangeInclusive<usize>) -> Result<GenCurve> {
    let k_min = *degrees.start();
    if degrees.is_empty() {
        return Err(Error::config("degree_range", "empty degree range"));
    }
    let errors = degrees
        .into_par_iter()
        .map(|k| fit_truncated(train, k).map(|m| mse(&m, test)).map_err(|e| Error::at_degree(k, e)))
        .collect::<Result<Vec<f64>>>()?;
    GenCurve::new(k_min, errors)
}

/// Mean of each value with its existing neighbours.
pub fn smooth3_values(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

pub fn smooth3(curve: &GenCurve) -> GenCurve {
    GenCurve {
        k_min: curve.k_min,
        errors: smooth3_values(&curve.errors),
        smoothed: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticalPoints {
    pub origin_error: f64,
    pub optimum_k: usize,
    pub optimum_error: f64,
    /// Inclusive degree interval.
    pub region_good: (usize, usize),
    pub false_minima: Vec<usize>,
    pub overfit_k: Option<usize>,
    pub threshold_used: f64,
}

impl CriticalPoints {
    pub fn in_region_good(&self, k: usize) -> bool {
        (self.region_good.0..=self.region_good.1).contains(&k)
    }
}

/// Index of the smallest value; ties go to the lowest index.
pub(crate) fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v < values[best] { i } else { best })
}

/// Extracts origin, optimum, region of good generalization, false minima and
/// the point of real overfitting.
///
/// The region is the maximal run of degrees around the optimum whose error is
/// below √(origin · optimum). When origin and optimum coincide (flat curve or
/// optimum at the origin) membership becomes `error <= threshold`. False
/// minima are interior strict local minima outside the region.
pub fn detect_critical_points(curve: &GenCurve) -> Result<CriticalPoints> {
    let e = &curve.errors;
    if e.len() < 2 {
        return Err(Error::Domain("critical points need a curve of at least two degrees".into()));
    }
    let origin = e[0];
    let opt_i = argmin(e);
    let opt = e[opt_i];
    let threshold = (origin * opt).sqrt().clamp(opt, origin);

    let inside = |v: f64| if threshold > opt { v < threshold } else { v <= threshold };
    let mut lo = opt_i;
    while lo > 0 && inside(e[lo - 1]) {
        lo -= 1;
    }
    let mut hi = opt_i;
    while hi + 1 < e.len() && inside(e[hi + 1]) {
        hi += 1;
    }

    let false_minima = (1..e.len() - 1)
        .filter(|&i| (i < lo || i > hi) && e[i - 1] > e[i] && e[i + 1] > e[i])
        .map(|i| curve.k_min + i)
        .collect();

    let mut tail = e.len();
    while tail > 0 && e[tail - 1] > origin {
        tail -= 1;
    }
    let overfit_k = (tail < e.len()).then_some(curve.k_min + tail);

    Ok(CriticalPoints {
        origin_error: origin,
        optimum_k: curve.k_min + opt_i,
        optimum_error: opt,
        region_good: (curve.k_min + lo, curve.k_min + hi),
        false_minima,
        overfit_k,
        threshold_used: threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub in_region_good: bool,
    pub error_ratio_vs_optimum: f64,
    /// overfit_k − selected_k; zero or negative once the selection has crossed it.
    pub distance_to_overfit: Option<i64>,
    pub beyond_overfit: bool,
}

/// How a selected degree fares against the curve's critical points.
pub fn evaluate_selection(cp: &CriticalPoints, selected_k: usize, curve: &GenCurve) -> Result<Verdict> {
    let err = curve
        .error_at(selected_k)
        .ok_or_else(|| Error::Domain(format!("degree {selected_k} is outside the curve")))?;
    let ratio = if cp.optimum_error > 0.0 {
        err / cp.optimum_error
    } else if err == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    Ok(Verdict {
        in_region_good: cp.in_region_good(selected_k),
        error_ratio_vs_optimum: ratio.max(1.0),
        distance_to_overfit: cp.overfit_k.map(|o| o as i64 - selected_k as i64),
        beyond_overfit: cp.overfit_k.is_some_and(|o| selected_k >= o),
    })
}
