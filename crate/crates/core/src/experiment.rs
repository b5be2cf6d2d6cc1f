//! Seeded replication sweeps and their reports.
//!
//! A run draws a train and a test sample per seed, fits the degree sweep,
//! scores every enabled criterion and judges each selection against the
//! critical points of the test-error curve. Seeds run in a worker pool but
//! results are merged and written in seed order, so outputs are
//! byte-identical across runs and pool widths.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{detect_critical_points, evaluate_selection, parse_f64, CriticalPoints, GenCurve, Verdict};
use crate::criteria::{
    aic, cross_validation, mdl_mixture, mdl_two_part, oracle_kl, Criterion, CriterionScore, CriterionSummary,
    SweepInput, VariancePolicy,
};
use crate::error::{Error, Result};
use crate::polyfit::mse;
use crate::sources::{draw_from_curve, Role, Sample, SourceCurve, SourceSpec};

/// Environment variable overriding the worker-pool width.
pub const WORKERS_ENV: &str = "OVERFITLAB_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: SourceSpec,
    pub n_train: usize,
    pub n_test: usize,
    /// Inclusive (k_min, k_max).
    pub degree_range: (usize, usize),
    pub seeds: Vec<u64>,
    #[serde(default = "all_criteria")]
    pub criteria_enabled: Vec<Criterion>,
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
    #[serde(default = "default_true")]
    pub cv_smoothing: bool,
    #[serde(default = "default_prior_scale")]
    pub mixture_prior_scale: f64,
    #[serde(default)]
    pub mixture_mc_samples: usize,
    /// Future sample size for the oracle KL diagnostic.
    #[serde(default = "default_n_future")]
    pub oracle_n_future: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn all_criteria() -> Vec<Criterion> {
    Criterion::ALL.to_vec()
}

fn default_cv_folds() -> usize {
    10
}

fn default_true() -> bool {
    true
}

fn default_prior_scale() -> f64 {
    10.0
}

fn default_n_future() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Lorenz source, 300 train / 3000 test, degrees 0..60.
    pub fn lorenz_default(seeds: Vec<u64>) -> Self {
        ExperimentConfig {
            source: SourceSpec::default_lorenz(),
            n_train: 300,
            n_test: 3000,
            degree_range: (0, 60),
            seeds,
            criteria_enabled: all_criteria(),
            cv_folds: default_cv_folds(),
            cv_smoothing: true,
            mixture_prior_scale: default_prior_scale(),
            mixture_mc_samples: 0,
            oracle_n_future: default_n_future(),
            output_dir: default_output_dir(),
        }
    }

    /// Quartic source, 100 train / 3000 test, degrees 0..60.
    pub fn polynomial_default(seeds: Vec<u64>) -> Self {
        ExperimentConfig {
            source: SourceSpec::default_polynomial(),
            n_train: 100,
            ..ExperimentConfig::lorenz_default(seeds)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn k_min(&self) -> usize {
        self.degree_range.0
    }

    pub fn k_max(&self) -> usize {
        self.degree_range.1
    }

    pub fn is_enabled(&self, c: Criterion) -> bool {
        self.criteria_enabled.contains(&c)
    }

    /// Enabled criteria, deduplicated, in canonical order.
    pub fn criteria(&self) -> Vec<Criterion> {
        Criterion::ALL.into_iter().filter(|c| self.is_enabled(*c)).collect()
    }

    /// Checks every invariant, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        let (k_min, k_max) = self.degree_range;
        if k_min > k_max {
            return Err(Error::config("degree_range", format!("k_min {k_min} > k_max {k_max}")));
        }
        if self.n_train < k_max + 1 {
            return Err(Error::config(
                "n_train",
                format!("{} points cannot fit degree {k_max}; need at least {}", self.n_train, k_max + 1),
            ));
        }
        if self.n_test == 0 {
            return Err(Error::config("n_test", "must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        if self.is_enabled(Criterion::CrossValidation) {
            let n = self.n_train;
            if self.cv_folds < 2 || self.cv_folds > n {
                return Err(Error::config("cv_folds", format!("need 2 <= cv_folds <= n_train, got {}", self.cv_folds)));
            }
            let min_train = n - n.div_ceil(self.cv_folds);
            if min_train < k_max + 1 {
                return Err(Error::config(
                    "cv_folds",
                    format!(
                        "folds leave {min_train} training points, enough only up to degree {}",
                        min_train as i64 - 1
                    ),
                ));
            }
        }
        let needs_variance = self.is_enabled(Criterion::MdlMixture) || self.is_enabled(Criterion::OracleKl);
        if needs_variance && self.source.noise_variance <= 0.0 {
            return Err(Error::config("noise_variance", "mdl_mixture and oracle_kl need a positive noise variance"));
        }
        if self.is_enabled(Criterion::MdlMixture) && !(self.mixture_prior_scale > 0.0 && self.mixture_prior_scale.is_finite()) {
            return Err(Error::config("mixture_prior_scale", "must be > 0"));
        }
        if self.is_enabled(Criterion::OracleKl) && self.oracle_n_future == 0 {
            return Err(Error::config("oracle_n_future", "must be >= 1"));
        }
        Ok(())
    }
}

/// Everything computed for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    pub curve: GenCurve,
    pub critical_points: CriticalPoints,
    /// Canonical criterion order.
    pub scores: Vec<CriterionScore>,
    pub verdicts: Vec<(Criterion, Verdict)>,
}

impl SeedReport {
    pub fn score(&self, c: Criterion) -> Option<&CriterionScore> {
        self.scores.iter().find(|s| s.criterion == c)
    }

    pub fn verdict(&self, c: Criterion) -> Option<&Verdict> {
        self.verdicts.iter().find(|(k, _)| *k == c).map(|(_, v)| v)
    }

    /// Rebuilds critical points and verdicts from a curve and stored scores.
    pub fn assemble(seed: u64, curve: GenCurve, scores: Vec<CriterionScore>) -> Result<Self> {
        let critical_points = detect_critical_points(&curve)?;
        let verdicts = scores
            .iter()
            .map(|s| Ok((s.criterion, evaluate_selection(&critical_points, s.selected_k, &curve)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SeedReport {
            seed,
            curve,
            critical_points,
            scores,
            verdicts,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionAggregate {
    pub in_region_good_rate: f64,
    pub beyond_overfit_rate: f64,
    pub median_error_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: Vec<u64>,
    pub optimum_k: Vec<usize>,
    pub overfit_k: Vec<Option<usize>>,
    pub per_criterion: BTreeMap<Criterion, CriterionAggregate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub seeds: Vec<SeedReport>,
    pub aggregate: Aggregate,
}

/// Draws the training and test samples for one seed.
pub fn draw_samples(config: &ExperimentConfig, curve: &SourceCurve, seed: u64) -> Result<(Sample, Sample)> {
    let train = draw_from_curve(&config.source, curve, config.n_train, Role::Train, seed)?;
    let test = draw_from_curve(&config.source, curve, config.n_test, Role::Test, seed)?;
    Ok((train, test))
}

/// The full per-seed pipeline.
pub fn run_seed(config: &ExperimentConfig, curve: &SourceCurve, seed: u64) -> Result<SeedReport> {
    let (train, test) = draw_samples(config, curve, seed)?;
    let degrees = config.k_min()..=config.k_max();
    let sweep = SweepInput::fit(&train, degrees.clone(), VariancePolicy::PerModelMse)?;
    let errors: Vec<f64> = sweep.models().par_iter().map(|m| mse(m, &test)).collect();
    let gen_curve = GenCurve::new(config.k_min(), errors)?;
    let fixed = sweep.with_policy(VariancePolicy::Fixed(config.source.noise_variance));

    let scores = config
        .criteria()
        .into_iter()
        .map(|c| match c {
            Criterion::Aic => aic(&sweep),
            Criterion::MdlTwoPart => mdl_two_part(&sweep),
            Criterion::MdlMixture => mdl_mixture(&fixed, config.mixture_prior_scale, config.mixture_mc_samples),
            Criterion::CrossValidation => cross_validation(&train, degrees.clone(), config.cv_folds, config.cv_smoothing),
            Criterion::OracleKl => oracle_kl(&fixed, curve, config.oracle_n_future),
        })
        .collect::<Result<Vec<_>>>()?;
    SeedReport::assemble(seed, gen_curve, scores)
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let width = match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|w| *w > 0)
            .ok_or_else(|| Error::config(WORKERS_ENV, format!("expected a positive integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(width)
        .build()
        .map_err(|e| Error::config(WORKERS_ENV, e.to_string()))
}

/// Runs every seed of `config` in memory; nothing is written.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let curve = config.source.curve()?;
    let pool = worker_pool()?;
    let seeds = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&s| run_seed(config, &curve, s))
            .collect::<Vec<_>>()
    });
    let seeds = seeds.into_iter().collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate(&seeds);
    Ok(ExperimentReport { seeds, aggregate })
}

/// Median of a non-empty slice; mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn aggregate(seeds: &[SeedReport]) -> Aggregate {
    let mut per_criterion = BTreeMap::new();
    for c in Criterion::ALL {
        let verdicts: Vec<&Verdict> = seeds.iter().filter_map(|s| s.verdict(c)).collect();
        if verdicts.is_empty() {
            continue;
        }
        let n = verdicts.len() as f64;
        let ratios: Vec<f64> = verdicts.iter().map(|v| v.error_ratio_vs_optimum).collect();
        per_criterion.insert(
            c,
            CriterionAggregate {
                in_region_good_rate: verdicts.iter().filter(|v| v.in_region_good).count() as f64 / n,
                beyond_overfit_rate: verdicts.iter().filter(|v| v.beyond_overfit).count() as f64 / n,
                median_error_ratio: median(&ratios),
            },
        );
    }
    Aggregate {
        seeds: seeds.iter().map(|s| s.seed).collect(),
        optimum_k: seeds.iter().map(|s| s.critical_points.optimum_k).collect(),
        overfit_k: seeds.iter().map(|s| s.critical_points.overfit_k).collect(),
        per_criterion,
    }
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Writes `train.csv` and `test.csv` for one seed.
pub fn write_samples(dir: &Path, train: &Sample, test: &Sample) -> Result<()> {
    fs::create_dir_all(dir)?;
    train.write_csv(create(&dir.join("train.csv"))?)?;
    test.write_csv(create(&dir.join("test.csv"))?)?;
    Ok(())
}

/// Writes one seed's files into `<out>/seed_<s>/`.
pub fn write_seed(out: &Path, report: &SeedReport) -> Result<()> {
    let dir = seed_dir(out, report.seed);
    fs::create_dir_all(&dir)?;
    report.curve.write_csv(None, create(&dir.join("curve.csv"))?)?;

    let mut w = csv::Writer::from_writer(create(&dir.join("criteria.csv"))?);
    w.write_record(["criterion", "k", "score"])?;
    for s in &report.scores {
        s.write_csv_rows(&mut w)?;
    }
    w.flush()?;

    let mut summary = create(&dir.join("criteria_summary.jsonl"))?;
    for s in &report.scores {
        serde_json::to_writer(&mut summary, &s.summary())?;
        writeln!(summary)?;
    }
    summary.flush()?;

    write_json(&dir.join("critical_points.json"), &report.critical_points)?;
    let verdicts: BTreeMap<Criterion, &Verdict> = report.verdicts.iter().map(|(c, v)| (*c, v)).collect();
    write_json(&dir.join("verdicts.json"), &verdicts)?;
    Ok(())
}

/// Writes every seed (in seed order) and `<out>/aggregate.json`.
pub fn write_report(out: &Path, report: &ExperimentReport) -> Result<()> {
    fs::create_dir_all(out)?;
    for s in &report.seeds {
        write_seed(out, s)?;
    }
    write_json(&out.join("aggregate.json"), &report.aggregate)
}

/// Reads `criteria.csv` and `criteria_summary.jsonl` back into scores.
pub fn read_scores<R1: Read, R2: BufRead>(csv_reader: R1, summary: R2) -> Result<Vec<CriterionScore>> {
    let mut per: BTreeMap<Criterion, Vec<(usize, f64)>> = BTreeMap::new();
    let mut r = csv::Reader::from_reader(csv_reader);
    for row in r.records() {
        let row = row?;
        let bad = || Error::config("criteria csv", format!("malformed row {row:?}"));
        let c = row.get(0).and_then(Criterion::parse).ok_or_else(bad)?;
        let k = row.get(1).and_then(|k| k.parse::<usize>().ok()).ok_or_else(bad)?;
        let s = parse_f64(row.get(2).ok_or_else(bad)?)?;
        per.entry(c).or_default().push((k, s));
    }
    let mut scores = Vec::new();
    for line in summary.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: CriterionSummary = serde_json::from_str(&line)?;
        let per_degree = per
            .remove(&s.criterion)
            .ok_or_else(|| Error::config("criteria csv", format!("no rows for {}", s.criterion)))?;
        scores.push(CriterionScore {
            criterion: s.criterion,
            per_degree,
            selected_k: s.selected_k,
            tie_policy_applied: s.tie_policy_applied,
            warnings: Vec::new(),
        });
    }
    if let Some(c) = per.keys().next() {
        return Err(Error::config("criteria summary", format!("missing summary for {c}")));
    }
    scores.sort_by_key(|s| s.criterion);
    Ok(scores)
}

/// Loads a seed written by [`write_seed`].
pub fn read_seed(out: &Path, seed: u64) -> Result<SeedReport> {
    let dir = seed_dir(out, seed);
    let (curve, _) = GenCurve::read_csv(File::open(dir.join("curve.csv"))?)?;
    let scores = read_scores(
        File::open(dir.join("criteria.csv"))?,
        BufReader::new(File::open(dir.join("criteria_summary.jsonl"))?),
    )?;
    SeedReport::assemble(seed, curve, scores)
}

pub fn read_aggregate(out: &Path) -> Result<Aggregate> {
    Ok(serde_json::from_reader(BufReader::new(File::open(out.join("aggregate.json"))?))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Curve,
    CriteriaOverlay,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "curve" => Ok(PlotKind::Curve),
            "criteria_overlay" => Ok(PlotKind::CriteriaOverlay),
            other => Err(Error::config("which", format!("unknown report section {other:?}"))),
        }
    }
}

/// Whitespace-separated columns with `#` comment lines, readable by gnuplot
/// and most plotting libraries.
pub fn emit_plot_data<W: Write>(report: &SeedReport, which: PlotKind, mut w: W) -> Result<()> {
    let mut columns = vec!["k".to_string(), "test_mse".to_string()];
    if which == PlotKind::CriteriaOverlay {
        columns.extend(report.scores.iter().map(|s| s.criterion.name().to_string()));
    }
    writeln!(w, "# seed {}", report.seed)?;
    writeln!(w, "# y-axis: log scale recommended")?;
    writeln!(w, "# {}", columns.join(" "))?;
    for (i, k) in report.curve.degrees().enumerate() {
        write!(w, "{k} {:?}", report.curve.errors[i])?;
        if which == PlotKind::CriteriaOverlay {
            for s in &report.scores {
                write!(w, " {:?}", s.per_degree[i].1)?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed plot-data file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_plot_data<R: BufRead>(r: R) -> Result<PlotData> {
    let mut columns = Vec::new();
    let mut rows = Vec::new();
    for line in r.lines() {
        let line = line?;
        if let Some(comment) = line.strip_prefix('#') {
            let words: Vec<&str> = comment.split_whitespace().collect();
            if words.first() == Some(&"k") {
                columns = words.into_iter().map(String::from).collect();
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        rows.push(line.split_whitespace().map(parse_f64).collect::<Result<Vec<_>>>()?);
    }
    if rows.iter().any(|r| r.len() != columns.len()) {
        return Err(Error::config("plot data", "row width does not match the column header"));
    }
    Ok(PlotData { columns, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub criterion: Criterion,
    pub in_region_good_rate: f64,
    pub beyond_overfit_rate: f64,
    /// Over seeds whose curve has a point of overfitting.
    pub mean_distance_to_overfit: Option<f64>,
    pub median_error_ratio: f64,
}

/// Ranks criteria by how often they select beyond the point of overfitting
/// (fewer is better), then by how often they land in the region of good
/// generalization. The result does not depend on seed order.
pub fn compare_methods(reports: &[SeedReport]) -> Result<Vec<ComparisonRow>> {
    if reports.len() < 2 {
        return Err(Error::config("seeds", "comparison needs at least two seeds"));
    }
    let mut rows = Vec::new();
    for c in Criterion::ALL {
        let verdicts: Vec<&Verdict> = reports.iter().filter_map(|r| r.verdict(c)).collect();
        if verdicts.is_empty() {
            continue;
        }
        let n = verdicts.len() as f64;
        let mut distances: Vec<i64> = verdicts.iter().filter_map(|v| v.distance_to_overfit).collect();
        distances.sort_unstable();
        let ratios: Vec<f64> = verdicts.iter().map(|v| v.error_ratio_vs_optimum).collect();
        rows.push(ComparisonRow {
            criterion: c,
            in_region_good_rate: verdicts.iter().filter(|v| v.in_region_good).count() as f64 / n,
            beyond_overfit_rate: verdicts.iter().filter(|v| v.beyond_overfit).count() as f64 / n,
            mean_distance_to_overfit: (!distances.is_empty())
                .then(|| distances.iter().sum::<i64>() as f64 / distances.len() as f64),
            median_error_ratio: median(&ratios),
        });
    }
    rows.sort_by(|a, b| {
        a.beyond_overfit_rate
            .total_cmp(&b.beyond_overfit_rate)
            .then(b.in_region_good_rate.total_cmp(&a.in_region_good_rate))
            .then(a.criterion.cmp(&b.criterion))
    });
    Ok(rows)
}

pub fn write_comparison<W: Write>(rows: &[ComparisonRow], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "criterion",
        "in_region_good_rate",
        "beyond_overfit_rate",
        "mean_distance_to_overfit",
        "median_error_ratio",
    ])?;
    for r in rows {
        w.write_record([
            r.criterion.name().to_string(),
            format!("{:?}", r.in_region_good_rate),
            format!("{:?}", r.beyond_overfit_rate),
            r.mean_distance_to_overfit.map(|d| format!("{d:?}")).unwrap_or_default(),
            format!("{:?}", r.median_error_ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}
