//! Exit criteria for the whole toolkit. Each test prints one PASS/FAIL line.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture --test-threads 1`
//! to see the lines in order.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use overfitlab::analysis::{detect_critical_points, smooth3, GenCurve};
use overfitlab::criteria::{
    aic_scores, cross_validation_curve, mixture_monte_carlo, mixture_neg_log2_marginal, select_max_posterior,
    select_min_description_length, two_part_totals, Criterion, CriterionScore,
};
use overfitlab::experiment::{run_experiment, ExperimentConfig};
use overfitlab::infotheory::{
    average_length, entropy_bits, gaussian_density, gaussian_entropy_bits, kl_bits, kraft_sum, shannon_fano_lengths,
    Distribution,
};
use overfitlab::polyfit::{fisher_information, fit, fit_truncated, score_vector};
use overfitlab::rng::{Stream, StreamRng};
use overfitlab::sources::{draw_sample, Interval, Point, Role, Sample, SourceSpec};

use common::{golden_section_max, polynomial_suite, verdict, SUITE_SEEDS};

#[test]
fn lorenz_curve_shape() {
    let mut config = ExperimentConfig::lorenz_default(SUITE_SEEDS.collect());
    config.criteria_enabled.clear();
    let start = Instant::now();
    let report = run_experiment(&config).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let mut hits = 0;
    for s in &report.seeds {
        let cp = &s.critical_points;
        let width = cp.region_good.1 - cp.region_good.0 + 1;
        let tail_peak = cp.overfit_k.map_or(0.0, |o| {
            s.curve.errors[o - s.curve.k_min..].iter().copied().fold(0.0, f64::max)
        });
        if width >= 5 && cp.overfit_k.is_some_and(|o| o <= 60) && tail_peak > 10.0 * cp.origin_error {
            hits += 1;
        }
    }
    verdict(
        "lorenz curve shape",
        hits >= 16 && elapsed <= 60.0,
        format!("{hits}/20 seeds with region >= 5 wide, overfitting by 60 and a 10x tail (need 16); {elapsed:.1}s (limit 60s)"),
    );
}

#[test]
fn polynomial_curve_shape() {
    let report = polynomial_suite();
    let mut hits = 0;
    let mut residual_ok = 0;
    let mut optima = Vec::new();
    for s in &report.seeds {
        let cp = &s.critical_points;
        optima.push(cp.optimum_k);
        let at4 = s.curve.error_at(4).unwrap();
        if (5..=12).contains(&cp.optimum_k)
            && at4 > cp.optimum_error
            && cp.overfit_k.is_some_and(|o| (10..=60).contains(&o))
        {
            hits += 1;
        }
        if (0.85..=1.15).contains(&cp.optimum_error) {
            residual_ok += 1;
        }
    }
    verdict(
        "polynomial curve shape",
        hits >= 16 && residual_ok == 20,
        format!(
            "{hits}/20 seeds with optimum in 5..=12, k=4 worse, overfitting in 10..=60 (need 16); \
             optimum test variance in [0.85, 1.15] on {residual_ok}/20; optima {optima:?}"
        ),
    );
}

#[test]
fn interpolation_and_monotone_training_error() {
    let lorenz = SourceSpec::default_lorenz().curve().unwrap();
    let mut worst_interp: f64 = 0.0;
    for n in 1..=30usize {
        let support = Interval::new(0.0, 10.0);
        let equispaced: Vec<Point> = (0..n)
            .map(|i| {
                let x = if n == 1 { 5.0 } else { 10.0 * i as f64 / (n - 1) as f64 };
                Point { x, y: lorenz.eval(x) }
            })
            .collect();
        let s = Sample::new(equispaced, support, Role::Train, 0).unwrap();
        worst_interp = worst_interp.max(fit(&s, n - 1).unwrap().train_mse);

        let mut noiseless = SourceSpec::default_lorenz();
        noiseless.noise_variance = 0.0;
        let random = draw_sample(&noiseless, n, Role::Train, n as u64).unwrap();
        worst_interp = worst_interp.max(fit_truncated(&random, n - 1).unwrap().train_mse);
    }

    let mut violations = Vec::new();
    let mut samples = 0;
    for (spec, n) in [(SourceSpec::default_polynomial(), 100), (SourceSpec::default_lorenz(), 300)] {
        for seed in SUITE_SEEDS {
            samples += 1;
            let s = draw_sample(&spec, n, Role::Train, seed).unwrap();
            let mse: Vec<f64> = (0..=60).map(|k| fit_truncated(&s, k).unwrap().train_mse).collect();
            for k in 1..mse.len() {
                if mse[k] > mse[k - 1] {
                    violations.push((n, seed, k, mse[k - 1], mse[k]));
                }
            }
        }
    }
    verdict(
        "interpolation and monotone training error",
        worst_interp < 1e-8 && violations.is_empty(),
        format!(
            "worst interpolation train_mse {worst_interp:.3e} (limit 1e-8); {} increases over {samples} samples, \
             degrees 0..60 {:?}",
            violations.len(),
            violations.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_hand_values() {
    let aic = aic_scores(10, &[(0, 4.0), (1, 2.0), (2, 2.0)]).unwrap();
    let aic_want = [13.862943611198906, 8.931471805599453, 10.931471805599453];
    let two = two_part_totals(100, &[(1, 200.0), (2, 180.0), (3, 175.0)]);
    let two_want = [203.32192809488736, 186.64385618977472, 184.96578428466208];
    let gap = aic
        .iter()
        .zip(aic_want)
        .chain(two.iter().zip(two_want))
        .map(|((_, got), want)| (got - want).abs())
        .fold(0.0, f64::max);
    let aic_k = CriterionScore::from_scores(Criterion::Aic, aic).selected_k;
    let two_k = CriterionScore::from_scores(Criterion::MdlTwoPart, two).selected_k;
    verdict(
        "criterion hand values",
        gap <= 1e-9 && aic_k == 1 && two_k == 3,
        format!("max deviation {gap:.2e} (limit 1e-9); selected aic {aic_k}, mdl_two_part {two_k}"),
    );
}

#[test]
fn mixture_closed_form_matches_monte_carlo() {
    let start = Instant::now();
    let spec = SourceSpec::default_polynomial();
    let mut worst = (0.0, 0, 0, 0.0);
    let mut failures = 0;
    let mut points = 0;
    for n in [1usize, 3, 8, 20] {
        let sample = draw_sample(&spec, n, Role::Train, 100 + n as u64).unwrap();
        for k in 0..=3 {
            for scale in [0.1, 1.0, 10.0] {
                points += 1;
                let closed = mixture_neg_log2_marginal(&sample, k, 1.0, scale).unwrap();
                let mc = mixture_monte_carlo(&sample, k, 1.0, scale, 100_000, Some(closed)).unwrap();
                if mc.deviation > 3.0 {
                    failures += 1;
                }
                if mc.deviation > worst.0 {
                    worst = (mc.deviation, n, k, scale);
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "mixture closed form vs Monte Carlo",
        failures == 0 && elapsed <= 120.0,
        format!(
            "{failures}/{points} grid points beyond 3 SE; worst {:.2} SE at n={} k={} scale={}; {elapsed:.1}s (limit 120s)",
            worst.0, worst.1, worst.2, worst.3
        ),
    );
}

/// Random complete prefix-code lengths with `leaves` leaves.
fn dyadic_lengths(rng: &mut StreamRng, leaves: usize) -> Vec<u32> {
    let mut lengths = vec![0u32];
    while lengths.len() < leaves {
        let i = rng.below(lengths.len());
        let l = lengths[i] + 1;
        lengths[i] = l;
        lengths.push(l);
    }
    lengths
}

#[test]
fn information_theory_identities() {
    let mut rng = StreamRng::new(7, Stream::TrainX);
    let mut failures: Vec<String> = Vec::new();
    for trial in 0..10_000 {
        let leaves = 1 + rng.below(32);
        let lp = dyadic_lengths(&mut rng, leaves);
        let lq = dyadic_lengths(&mut rng, leaves);
        let p = Distribution::from_probs(&lp.iter().map(|&l| (-(l as f64)).exp2()).collect::<Vec<_>>()).unwrap();
        let q = Distribution::from_probs(&lq.iter().map(|&l| (-(l as f64)).exp2()).collect::<Vec<_>>()).unwrap();

        let h = entropy_bits(&p);
        let expected_h: f64 = lp.iter().map(|&l| l as f64 * (-(l as f64)).exp2()).sum();
        let codes = shannon_fano_lengths(&p).unwrap();
        let lengths_match = codes.iter().zip(&lp).all(|((_, got), want)| got == want);
        let kraft = kraft_sum(&codes);
        let avg = average_length(&p, &codes);
        let kl = kl_bits(&p, &q).unwrap().bits;
        let cross: f64 = p.outcomes().iter().zip(&lq).map(|((_, pw), &l)| pw * l as f64).sum();

        let ok = (h - expected_h).abs() <= 1e-12
            && h >= -1e-12
            && h <= (leaves as f64).log2() + 1e-12
            && lengths_match
            && kraft <= 1.0 + 1e-12
            && h <= avg + 1e-12
            && avg < h + 1.0
            && kl >= -1e-12
            && ((kl.abs() <= 1e-12) == (lp == lq))
            && (kl - (cross - h)).abs() <= 1e-9;
        if !ok {
            failures.push(format!("trial {trial}: lengths {lp:?} vs {lq:?}"));
        }
    }

    // A distribution on a grid of spacing δ is a piecewise-uniform density with
    // variance v + δ²/12; its differential entropy is H + log₂δ.
    let delta = 0.05;
    let grid: Vec<f64> = (-200..=200).map(|i| i as f64 * delta).collect();
    let mut max_entropy_gap = f64::NEG_INFINITY;
    for trial in 0..10_000 {
        let weights: Vec<f64> = if trial == 0 {
            grid.iter().map(|x| (-0.5 * x * x).exp()).collect()
        } else {
            let comps = 1 + rng.below(4);
            let params: Vec<(f64, f64, f64)> = (0..comps)
                .map(|_| (rng.uniform_in(-3.0, 3.0), rng.uniform_in(0.2, 2.0), rng.uniform()))
                .collect();
            grid.iter()
                .map(|x| {
                    params
                        .iter()
                        .map(|(m, s, w)| w * (-0.5 * ((x - m) / s).powi(2)).exp())
                        .sum::<f64>()
                        + 1e-3 * rng.uniform()
                })
                .collect()
        };
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mean: f64 = probs.iter().zip(&grid).map(|(p, x)| p * x).sum();
        let var: f64 = probs.iter().zip(&grid).map(|(p, x)| p * (x - mean).powi(2)).sum();
        let d = Distribution::from_probs(&probs).unwrap();
        // Rescaled to unit variance, the density's entropy shifts by −½log₂ v.
        let h_unit = entropy_bits(&d) + delta.log2() - 0.5 * var.log2();
        let bound = gaussian_entropy_bits(1.0).unwrap() + 0.5 * (1.0 + delta * delta / (12.0 * var)).log2();
        max_entropy_gap = max_entropy_gap.max(h_unit - bound);
    }

    let unit = gaussian_entropy_bits(1.0).unwrap();
    let unit_gap = (unit - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).log2()).abs();

    let mut worst_argmax: f64 = 0.0;
    for l in [0.3, 1.0, 2.0, 3.7] {
        let sigma = golden_section_max(|s| gaussian_density(l, s * s), 1e-3, 10.0, 1e-12);
        worst_argmax = worst_argmax.max((sigma * sigma - l * l).abs());
    }

    verdict(
        "information-theory identities",
        failures.is_empty() && max_entropy_gap <= 1e-12 && unit_gap <= 1e-12 && worst_argmax <= 1e-6,
        format!(
            "{} of 10^4 dyadic pairs fail {:?}; max-entropy excess {max_entropy_gap:.2e} bits; \
             unit-variance entropy off by {unit_gap:.1e}; variance argmax off by {worst_argmax:.1e}",
            failures.len(),
            failures.first()
        ),
    );
}

#[test]
fn fisher_matches_score_covariance() {
    let spec = SourceSpec::default_polynomial();
    let train = draw_sample(&spec, 50, Role::Train, 11).unwrap();
    let draws = 10_000;
    let mut worst: f64 = 0.0;
    for k in [0usize, 1, 3] {
        let model = fit(&train, k).unwrap();
        let m = k + 1;
        let n = train.len() as f64;
        let analytic = fisher_information(&model, 1.0).unwrap();
        let mut sum = vec![0.0; m];
        let mut outer = vec![vec![0.0; m]; m];
        for d in 0..draws {
            let mut rng = StreamRng::new(d, Stream::TestNoise);
            let points = train
                .xs()
                .map(|x| Point { x, y: model.eval(x) + rng.standard_normal() })
                .collect();
            let sample = Sample::new(points, train.support, Role::Test, d).unwrap();
            let total = score_vector(&model, &sample, 1.0).unwrap().total();
            for a in 0..m {
                sum[a] += total[a];
                for b in 0..m {
                    outer[a][b] += total[a] * total[b];
                }
            }
        }
        let dn = draws as f64;
        for a in 0..m {
            for b in 0..m {
                let cov = (outer[a][b] - sum[a] * sum[b] / dn) / (dn - 1.0);
                let per_point = cov / n;
                let scale = (analytic[(a, a)] * analytic[(b, b)]).sqrt();
                worst = worst.max((per_point - analytic[(a, b)]).abs() / scale);
            }
        }
    }
    verdict(
        "Fisher information vs score covariance",
        worst <= 0.05,
        format!("worst relative error {:.2}% at k in {{0, 1, 3}} (limit 5%)", 100.0 * worst),
    );
}

#[test]
fn description_length_equals_posterior_mode() {
    let mut rng = StreamRng::new(3, Stream::CvFolds);
    let mut mismatches = 0;
    for _ in 0..1_000 {
        let size = 1 + rng.below(20);
        let models: Vec<(u32, u32)> = (0..size).map(|_| (rng.below(60) as u32, rng.below(30) as u32)).collect();
        let by_length: Vec<(f64, f64)> = models.iter().map(|&(a, k)| (a as f64, k as f64)).collect();
        let by_posterior: Vec<(f64, f64)> = models.iter().map(|&(a, k)| ((-(a as f64)).exp2(), k as f64)).collect();
        if select_min_description_length(&by_length) != select_max_posterior(&by_posterior) {
            mismatches += 1;
        }
    }
    verdict(
        "description length / posterior identity",
        mismatches == 0,
        format!("{mismatches} of 1000 random model sets disagree"),
    );
}

#[test]
fn critical_point_detector() {
    let curve = GenCurve::new(0, vec![18.0, 10.0, 6.0, 3.0, 2.7, 3.0, 9.0, 30.0, 25.0, 40.0]).unwrap();
    let cp = detect_critical_points(&curve).unwrap();
    let hand = cp.origin_error == 18.0
        && cp.optimum_k == 4
        && (cp.threshold_used - (18.0f64 * 2.7).sqrt()).abs() < 1e-12
        && cp.region_good == (2, 5)
        && cp.overfit_k == Some(7)
        && cp.false_minima.contains(&8);

    let mut rng = StreamRng::new(5, Stream::TestX);
    let mut broken = 0;
    for _ in 0..1_000 {
        let len = 2 + rng.below(70);
        let errors: Vec<f64> = (0..len).map(|_| 10f64.powf(rng.uniform_in(-3.0, 3.0))).collect();
        let base = detect_critical_points(&GenCurve::new(0, errors.clone()).unwrap()).unwrap();

        let c = 10f64.powf(rng.uniform_in(-4.0, 4.0));
        let scaled = GenCurve::new(0, errors.iter().map(|e| e * c).collect()).unwrap();
        let s = detect_critical_points(&scaled).unwrap();
        let scale_ok = s.optimum_k == base.optimum_k
            && s.region_good == base.region_good
            && s.false_minima == base.false_minima
            && s.overfit_k == base.overfit_k;

        let shift = rng.below(40);
        let r = detect_critical_points(&GenCurve::new(shift, errors).unwrap()).unwrap();
        let relabel_ok = r.optimum_k == base.optimum_k + shift
            && r.region_good == (base.region_good.0 + shift, base.region_good.1 + shift)
            && r.false_minima.iter().zip(&base.false_minima).all(|(a, b)| *a == b + shift)
            && r.false_minima.len() == base.false_minima.len()
            && r.overfit_k == base.overfit_k.map(|o| o + shift)
            && r.threshold_used == base.threshold_used;
        if !(scale_ok && relabel_ok) {
            broken += 1;
        }
    }
    verdict(
        "critical-point detector",
        hand && broken == 0,
        format!("hand trace {}; {broken} of 1000 random curves break scale or relabel invariance", if hand { "matches" } else { "differs" }),
    );
}

#[test]
fn selection_quality() {
    let report = polynomial_suite();
    let rate = |c: Criterion| report.aggregate.per_criterion[&c].clone();
    let two = rate(Criterion::MdlTwoPart);
    let cv = rate(Criterion::CrossValidation);

    let mut affected = 0;
    let mut reduced = 0;
    for seed in SUITE_SEEDS {
        let config = ExperimentConfig::polynomial_default(vec![seed]);
        let train = draw_sample(&config.source, config.n_train, Role::Train, seed).unwrap();
        let raw = GenCurve::new(0, cross_validation_curve(&train, 0..=60, config.cv_folds).unwrap()).unwrap();
        let raw_count = detect_critical_points(&raw).unwrap().false_minima.len();
        if raw_count > 0 {
            affected += 1;
            if detect_critical_points(&smooth3(&raw)).unwrap().false_minima.len() < raw_count {
                reduced += 1;
            }
        }
    }
    let ok = two.in_region_good_rate >= 0.7
        && two.beyond_overfit_rate == 0.0
        && cv.in_region_good_rate >= 0.7
        && cv.beyond_overfit_rate == 0.0
        && affected as f64 >= 0.2 * 20.0
        && reduced as f64 >= 0.8 * affected as f64;
    verdict(
        "selection quality",
        ok,
        format!(
            "mdl_two_part good {:.2} beyond {:.2}; smoothed cv good {:.2} beyond {:.2}; \
             raw cv false minima in {affected}/20 seeds, smoothing reduces {reduced}/{affected}",
            two.in_region_good_rate, two.beyond_overfit_rate, cv.in_region_good_rate, cv.beyond_overfit_rate
        ),
    );
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn end_to_end_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::polynomial_default(vec![4, 9, 2]);
    config.degree_range = (0, 20);
    let config_path = tmp.path().join("config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let run = |name: &str, workers: &str| {
        let out = tmp.path().join(name);
        let bin = env!("CARGO_BIN_EXE_overfitlab");
        let status = Command::new(bin)
            .args(["sweep", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(&out)
            .env("OVERFITLAB_WORKERS", workers)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        for which in ["curve", "criteria_overlay"] {
            let s = Command::new(bin)
                .args(["plotdata", "--which", which, "--out"])
                .arg(&out)
                .output()
                .unwrap();
            assert!(s.status.success());
        }
        snapshot(&out)
    };
    let a = run("a", "1");
    let b = run("b", "4");
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    verdict(
        "end-to-end determinism",
        a.len() == b.len() && differing.is_empty() && a.len() > 3,
        format!("{} files per run, {} differ {:?}", a.len(), differing.len(), differing),
    );
}
