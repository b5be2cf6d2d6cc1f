//! Entropy, Shannon-Fano code lengths, relative entropy and their Gaussian
//! counterparts.
//!
//! Discrete quantities are in bits. [`kl_gaussian_regression`] reports nats,
//! like the score and Fisher quantities in [`crate::polyfit`].

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::f64::consts::{E, PI};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polyfit::PolyModel;
use crate::sources::Interval;

const SUM_TOLERANCE: f64 = 1e-12;
const LOAD_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    Empirical,
    Specified,
}

/// Probability distribution over a finite set of words.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    outcomes: Vec<(String, f64)>,
    kind: DistributionKind,
}

impl Distribution {
    pub fn new(outcomes: Vec<(String, f64)>, kind: DistributionKind) -> Result<Self> {
        Self::with_tolerance(outcomes, kind, SUM_TOLERANCE)
    }

    fn with_tolerance(outcomes: Vec<(String, f64)>, kind: DistributionKind, tol: f64) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Domain("distribution has no outcomes".into()));
        }
        let mut seen = HashSet::new();
        for (w, p) in &outcomes {
            if !seen.insert(w.as_str()) {
                return Err(Error::Domain(format!("duplicate word {w:?}")));
            }
            if !(p.is_finite() && *p >= 0.0) {
                return Err(Error::Domain(format!("p({w:?}) = {p} is not a probability")));
            }
        }
        let total: f64 = outcomes.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::Domain(format!("probabilities sum to {total}")));
        }
        Ok(Distribution { outcomes, kind })
    }

    /// Convenience constructor with words "w0", "w1", ...
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        Self::new(
            probs.iter().enumerate().map(|(i, &p)| (format!("w{i}"), p)).collect(),
            DistributionKind::Specified,
        )
    }

    /// Relative frequencies of the words in `tokens`, in order of first appearance.
    pub fn empirical<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let mut order = Vec::new();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in tokens {
            let c = counts.entry(t.as_ref()).or_insert(0);
            if *c == 0 {
                order.push(t.as_ref());
            }
            *c += 1;
        }
        let n = tokens.len() as f64;
        let outcomes = order
            .into_iter()
            .map(|w| (w.to_string(), counts[w] as f64 / n))
            .collect();
        Self::with_tolerance(outcomes, DistributionKind::Empirical, 1e-9)
    }

    pub fn outcomes(&self) -> &[(String, f64)] {
        &self.outcomes
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    pub fn prob(&self, word: &str) -> Option<f64> {
        self.outcomes.iter().find(|(w, _)| w == word).map(|(_, p)| *p)
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["word", "p"])?;
        for (word, p) in &self.outcomes {
            w.write_record([word.clone(), format!("{p:?}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `word,p` rows; the probabilities must sum to 1 within 1e-9.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut outcomes = Vec::new();
        for row in r.deserialize() {
            let (word, p): (String, f64) = row?;
            outcomes.push((word, p));
        }
        Self::with_tolerance(outcomes, DistributionKind::Specified, LOAD_SUM_TOLERANCE)
    }
}

/// H = −Σ p log₂ p, with 0·log 0 = 0.
pub fn entropy_bits(d: &Distribution) -> f64 {
    d.outcomes
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(_, p)| -p * p.log2())
        .sum()
}

/// Integer Shannon-Fano code lengths ⌈−log₂ p(w)⌉.
pub fn shannon_fano_lengths(d: &Distribution) -> Result<Vec<(String, u32)>> {
    d.outcomes
        .iter()
        .map(|(w, p)| {
            if *p <= 0.0 {
                Err(Error::Domain(format!("word {w:?} has zero probability and no code")))
            } else {
                Ok((w.clone(), (-p.log2()).ceil() as u32))
            }
        })
        .collect()
}

pub fn kraft_sum(lengths: &[(String, u32)]) -> f64 {
    lengths.iter().map(|(_, l)| (-(*l as f64)).exp2()).sum()
}

/// Expected code length under `d` for the given lengths.
pub fn average_length(d: &Distribution, lengths: &[(String, u32)]) -> f64 {
    let by_word: HashMap<&str, u32> = lengths.iter().map(|(w, l)| (w.as_str(), *l)).collect();
    d.outcomes
        .iter()
        .map(|(w, p)| p * by_word.get(w.as_str()).copied().unwrap_or(0) as f64)
        .sum()
}

/// Relative entropy in bits, plus the words (if any) where q vanishes but p does not.
#[derive(Debug, Clone, PartialEq)]
pub struct KlDivergence {
    pub bits: f64,
    pub unsupported: Vec<String>,
}

/// D(p‖q) = Σ p log₂(p/q). Infinite when q misses some word of p's support.
pub fn kl_bits(p: &Distribution, q: &Distribution) -> Result<KlDivergence> {
    let q_by_word: HashMap<&str, f64> = q.outcomes.iter().map(|(w, v)| (w.as_str(), *v)).collect();
    if p.len() != q.len() || p.outcomes.iter().any(|(w, _)| !q_by_word.contains_key(w.as_str())) {
        return Err(Error::Domain("p and q are over different word sets".into()));
    }
    let mut unsupported = Vec::new();
    let mut bits = 0.0;
    for (w, pw) in p.outcomes.iter().filter(|(_, pw)| *pw > 0.0) {
        let qw = q_by_word[w.as_str()];
        if qw == 0.0 {
            unsupported.push(w.clone());
        } else {
            bits += pw * (pw / qw).log2();
        }
    }
    if !unsupported.is_empty() {
        bits = f64::INFINITY;
    }
    Ok(KlDivergence {
        bits: bits.max(0.0),
        unsupported,
    })
}

/// Differential entropy ½log₂(2πe·σ²) of a Gaussian.
pub fn gaussian_entropy_bits(variance: f64) -> Result<f64> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::Domain(format!("variance must be > 0, got {variance}")));
    }
    Ok(0.5 * (2.0 * PI * E * variance).log2())
}

/// Density of N(0, σ²) at `residual`.
pub fn gaussian_density(residual: f64, variance: f64) -> f64 {
    (-residual * residual / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt()
}

/// KL divergence (nats) from the true regression model to a fitted one for
/// `n_future` i.i.d. observations with x uniform on `support` and a shared
/// noise variance: n_future · E_x[(g − f̂)²] / (2σ²).
pub fn kl_gaussian_regression<F: Fn(f64) -> f64>(
    true_curve: F,
    fitted: &PolyModel,
    variance: f64,
    support: Interval,
    n_future: usize,
) -> Result<f64> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::Domain(format!("variance must be > 0, got {variance}")));
    }
    if n_future == 0 {
        return Err(Error::Domain("n_future must be >= 1".into()));
    }
    let integral = integrate(|x| (true_curve(x) - fitted.eval(x)).powi(2), support.a, support.b, 1e-8);
    let mean_sq = integral / support.width();
    Ok(n_future as f64 * mean_sq / (2.0 * variance))
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for nodes 1, 3, 5, 7 above.
const G_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = G_WEIGHTS[3] * fc;
    for i in 0..7 {
        let pair = f(c - h * GK_NODES[i]) + f(c + h * GK_NODES[i]);
        kronrod += GK_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += G_WEIGHTS[i / 2] * pair;
        }
    }
    Panel {
        a,
        b,
        value: kronrod * h,
        error: ((kronrod - gauss) * h).abs(),
    }
}

/// Globally adaptive Gauss-Kronrod (7/15) quadrature to relative tolerance `rel_tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    const MAX_PANELS: usize = 50_000;
    let mut heap = BinaryHeap::new();
    let first = gauss_kronrod(&f, a, b);
    let (mut value, mut error) = (first.value, first.error);
    heap.push(first);
    while error > rel_tol * value.abs() && error > f64::MIN_POSITIVE && heap.len() < MAX_PANELS {
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            break;
        }
        let left = gauss_kronrod(&f, worst.a, mid);
        let right = gauss_kronrod(&f, mid, worst.b);
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // Re-sum from scratch to shed drift from the running updates.
    let mut panels = heap.into_vec();
    panels.sort_by(|p, q| p.a.total_cmp(&q.a));
    panels.iter().map(|p| p.value).sum()
}
