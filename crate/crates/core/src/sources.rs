//! Ground-truth curves and noisy samples drawn from them.
//!
//! Two sources are supported: a segment of the Lorenz attractor (z coordinate
//! against time, both rescaled onto the plotting window) and a fixed
//! polynomial. Samples have x uniform on the support and Gaussian deviations
//! along y.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Stream, StreamRng};

/// Minimum number of integration steps in the tabulated Lorenz window.
pub const MIN_LORENZ_STEPS: f64 = 1000.0;

/// Vertical range the Lorenz z coordinate is mapped onto.
pub const LORENZ_Y_RANGE: (f64, f64) = (-10.0, 15.0);

/// Closed interval `[a, b]` of the x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Self {
        Interval { a, b }
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.a && x <= self.b
    }

    pub fn is_valid(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.a < self.b
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Interval { a: v[0], b: v[1] }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.a, i.b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Lorenz,
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

/// Description of a ground-truth curve and its noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub kind: SourceKind,
    #[serde(default)]
    pub poly_coefficients: Vec<f64>,
    pub support: Interval,
    pub noise_variance: f64,
    /// (sigma, rho, beta)
    #[serde(default = "default_lorenz_params")]
    pub lorenz_params: [f64; 3],
    #[serde(default = "default_lorenz_initial")]
    pub lorenz_initial: [f64; 3],
    #[serde(default = "default_lorenz_window")]
    pub lorenz_time_window: [f64; 2],
    #[serde(default = "default_lorenz_step")]
    pub lorenz_step: f64,
}

fn default_lorenz_params() -> [f64; 3] {
    [10.0, 28.0, 8.0 / 3.0]
}

fn default_lorenz_initial() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

/// Starts after the transient `t < 30` has been discarded.
fn default_lorenz_window() -> [f64; 2] {
    [38.5, 41.0]
}

fn default_lorenz_step() -> f64 {
    1e-3
}

/// Default quartic for the polynomial experiment: peaks at x = 2 and x = 8,
/// a valley at x = 5, zero at both ends of [0, 10]. Its variance under a
/// uniform x is about 13, so the degree-0 test error is around 14.
pub const DEFAULT_POLY_COEFFICIENTS: [f64; 5] = [0.0, 21.6, -8.91, 1.35, -0.0675];

impl SourceSpec {
    pub fn default_lorenz() -> Self {
        SourceSpec {
            kind: SourceKind::Lorenz,
            poly_coefficients: Vec::new(),
            support: Interval::new(0.0, 10.0),
            noise_variance: 1.0,
            lorenz_params: default_lorenz_params(),
            lorenz_initial: default_lorenz_initial(),
            lorenz_time_window: default_lorenz_window(),
            lorenz_step: default_lorenz_step(),
        }
    }

    pub fn default_polynomial() -> Self {
        SourceSpec {
            kind: SourceKind::Polynomial,
            poly_coefficients: DEFAULT_POLY_COEFFICIENTS.to_vec(),
            ..SourceSpec::default_lorenz()
        }
    }

    pub fn polynomial(coefficients: Vec<f64>, support: Interval, noise_variance: f64) -> Self {
        SourceSpec {
            kind: SourceKind::Polynomial,
            poly_coefficients: coefficients,
            support,
            noise_variance,
            ..SourceSpec::default_lorenz()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.support.is_valid() {
            return Err(Error::config("support", "need finite a < b"));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::config("noise_variance", "must be finite and >= 0"));
        }
        match self.kind {
            SourceKind::Polynomial => {
                if self.poly_coefficients.is_empty() {
                    return Err(Error::config("poly_coefficients", "must be nonempty"));
                }
                if self.poly_coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(Error::config("poly_coefficients", "must be finite"));
                }
            }
            SourceKind::Lorenz => {
                if !(self.lorenz_step > 0.0 && self.lorenz_step.is_finite()) {
                    return Err(Error::config("lorenz_step", "must be > 0"));
                }
                let [t0, t1] = self.lorenz_time_window;
                if !(t0 >= 0.0 && t1.is_finite()) || (t1 - t0) / self.lorenz_step < MIN_LORENZ_STEPS {
                    return Err(Error::config(
                        "lorenz_time_window",
                        format!("need 0 <= t_start and at least {MIN_LORENZ_STEPS} steps in the window"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Builds the curve this spec describes.
    pub fn curve(&self) -> Result<SourceCurve> {
        self.validate()?;
        match self.kind {
            SourceKind::Polynomial => Ok(SourceCurve::Polynomial(poly_curve(&self.poly_coefficients))),
            SourceKind::Lorenz => Ok(SourceCurve::Tabulated(lorenz_curve(self)?)),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SourceSpec = serde_json::from_str(text)?;
        Ok(spec)
    }
}

/// Polynomial in the power basis, evaluated in Horner order.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub coefficients: Vec<f64>,
}

impl Polynomial {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }
}

pub fn poly_curve(coefficients: &[f64]) -> Polynomial {
    Polynomial {
        coefficients: coefficients.to_vec(),
    }
}

/// Function tabulated on a uniform grid, linearly interpolated between knots.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedCurve {
    x0: f64,
    dx: f64,
    ys: Vec<f64>,
}

impl TabulatedCurve {
    pub fn new(domain: Interval, ys: Vec<f64>) -> Self {
        assert!(ys.len() >= 2, "a tabulated curve needs at least two knots");
        TabulatedCurve {
            x0: domain.a,
            dx: domain.width() / (ys.len() - 1) as f64,
            ys,
        }
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.ys
            .iter()
            .enumerate()
            .map(move |(i, &y)| (self.x0 + i as f64 * self.dx, y))
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let last = self.ys.len() - 1;
        let u = ((x - self.x0) / self.dx).clamp(0.0, last as f64);
        let i = (u.floor() as usize).min(last - 1);
        let frac = u - i as f64;
        self.ys[i] + frac * (self.ys[i + 1] - self.ys[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceCurve {
    Polynomial(Polynomial),
    Tabulated(TabulatedCurve),
}

impl SourceCurve {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            SourceCurve::Polynomial(p) => p.eval(x),
            SourceCurve::Tabulated(t) => t.eval(x),
        }
    }
}

fn lorenz_rhs([sigma, rho, beta]: [f64; 3], [x, y, z]: [f64; 3]) -> [f64; 3] {
    [sigma * (y - x), x * (rho - z) - y, x * y - beta * z]
}

fn axpy(s: [f64; 3], h: f64, d: [f64; 3]) -> [f64; 3] {
    [s[0] + h * d[0], s[1] + h * d[1], s[2] + h * d[2]]
}

fn rk4_step(params: [f64; 3], s: [f64; 3], h: f64) -> [f64; 3] {
    let k1 = lorenz_rhs(params, s);
    let k2 = lorenz_rhs(params, axpy(s, h / 2.0, k1));
    let k3 = lorenz_rhs(params, axpy(s, h / 2.0, k2));
    let k4 = lorenz_rhs(params, axpy(s, h, k3));
    let mut out = s;
    for i in 0..3 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Fixed-step RK4 integration of the Lorenz system. Returns `steps + 1`
/// states starting with `initial`.
pub fn integrate_lorenz(params: [f64; 3], initial: [f64; 3], step: f64, steps: usize) -> Result<Vec<[f64; 3]>> {
    let mut states = Vec::with_capacity(steps + 1);
    let mut s = initial;
    states.push(s);
    for n in 1..=steps {
        s = rk4_step(params, s, step);
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationDiverged { steps: n });
        }
        states.push(s);
    }
    Ok(states)
}

/// Tabulates the z coordinate of a Lorenz trajectory over the spec's time
/// window. Time maps affinely onto the support; z maps onto
/// [`LORENZ_Y_RANGE`] unless the segment is constant.
pub fn lorenz_curve(spec: &SourceSpec) -> Result<TabulatedCurve> {
    if spec.kind != SourceKind::Lorenz {
        return Err(Error::config("kind", "lorenz_curve needs kind = lorenz"));
    }
    spec.validate()?;
    let h = spec.lorenz_step;
    let [t_start, t_end] = spec.lorenz_time_window;
    let first = (t_start / h).round() as usize;
    let last = (t_end / h).round() as usize;

    let mut s = spec.lorenz_initial;
    let mut zs = Vec::with_capacity(last - first + 1);
    for n in 0..=last {
        if n >= first {
            zs.push(s[2]);
        }
        if n < last {
            s = rk4_step(spec.lorenz_params, s, h);
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationDiverged { steps: n + 1 });
            }
        }
    }

    let (lo, hi) = zs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &z| (lo.min(z), hi.max(z)));
    if hi > lo {
        let (ya, yb) = LORENZ_Y_RANGE;
        for z in &mut zs {
            *z = ya + (*z - lo) / (hi - lo) * (yb - ya);
        }
    }
    Ok(TabulatedCurve::new(spec.support, zs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// An i.i.d. sample of noisy observations of a source curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub points: Vec<Point>,
    pub support: Interval,
    pub role: Role,
    pub seed: u64,
}

impl Sample {
    pub fn new(points: Vec<Point>, support: Interval, role: Role, seed: u64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::config("points", "a sample needs at least one point"));
        }
        if let Some(p) = points.iter().find(|p| !support.contains(p.x) || !p.y.is_finite()) {
            return Err(Error::config(
                "points",
                format!("point ({}, {}) outside support [{}, {}]", p.x, p.y, support.a, support.b),
            ));
        }
        Ok(Sample {
            points,
            support,
            role,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.x)
    }

    pub fn ys(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.y)
    }

    /// Same support, role and seed, restricted to `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Sample> {
        Sample::new(
            indices.iter().map(|&i| self.points[i]).collect(),
            self.support,
            self.role,
            self.seed,
        )
    }

    /// Hash of the exact point sequence; identifies the training sample a model was fitted on.
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for p in &self.points {
            p.x.to_bits().hash(&mut h);
            p.y.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "y"])?;
        for p in &self.points {
            w.write_record([format!("{:?}", p.x), format!("{:?}", p.y)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, support: Interval, role: Role, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "y"] {
            return Err(Error::config("sample csv", "header must be `x,y`"));
        }
        let mut points = Vec::new();
        for record in r.deserialize() {
            let p: Point = record?;
            points.push(p);
        }
        Sample::new(points, support, role, seed)
    }
}

/// Draws `n` points with x uniform on the support and y = g(x) + N(0, σ²).
/// x and noise come from separate streams keyed by `(seed, role)`.
pub fn draw_sample(spec: &SourceSpec, n: usize, role: Role, seed: u64) -> Result<Sample> {
    let curve = spec.curve()?;
    draw_from_curve(spec, &curve, n, role, seed)
}

/// As [`draw_sample`], reusing an already built curve.
pub fn draw_from_curve(spec: &SourceSpec, curve: &SourceCurve, n: usize, role: Role, seed: u64) -> Result<Sample> {
    if n == 0 {
        return Err(Error::config("n", "sample size must be >= 1"));
    }
    let (x_stream, noise_stream) = match role {
        Role::Train => (Stream::TrainX, Stream::TrainNoise),
        Role::Test => (Stream::TestX, Stream::TestNoise),
    };
    let mut xr = StreamRng::new(seed, x_stream);
    let mut nr = StreamRng::new(seed, noise_stream);
    let sd = spec.noise_variance.sqrt();
    let points = (0..n)
        .map(|_| {
            let x = xr.uniform_in(spec.support.a, spec.support.b);
            let y = curve.eval(x) + sd * nr.standard_normal();
            Point { x, y }
        })
        .collect();
    Sample::new(points, spec.support, role, seed)
}
