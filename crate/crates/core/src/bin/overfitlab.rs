use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use overfitlab::analysis::{detect_critical_points, smooth3, GenCurve};
use overfitlab::experiment::{
    compare_methods, draw_samples, emit_plot_data, read_aggregate, read_seed, run_experiment, seed_dir,
    write_comparison, write_report, write_samples, ExperimentConfig, PlotKind,
};
use overfitlab::{Error, Result};

/// Polynomial overfitting experiments and model-selection criteria.
#[derive(Parser)]
#[command(name = "overfitlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the train and test samples for each seed.
    Generate(RunArgs),
    /// Run the degree sweep, criteria and critical-point analysis.
    Sweep(RunArgs),
    /// Critical points of a stored curve or of every seed in an output directory.
    Analyze {
        #[arg(long, conflicts_with = "curve")]
        out: Option<PathBuf>,
        /// A `k,error` CSV file.
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Apply 3-point smoothing before the analysis.
        #[arg(long)]
        smooth: bool,
        #[arg(long = "seed-index")]
        seed_index: Option<usize>,
    },
    /// Rank the criteria of a finished sweep.
    Compare {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write plot-ready columns for one seed.
    Plotdata {
        #[arg(long)]
        out: PathBuf,
        /// `curve` or `criteria_overlay`.
        #[arg(long, default_value = "curve")]
        which: String,
        #[arg(long = "seed-index", default_value_t = 0)]
        seed_index: usize,
        /// Destination; defaults to `<out>/seed_<s>/<which>.dat`.
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run only the seed at this position of `seeds`.
    #[arg(long = "seed-index")]
    seed_index: Option<usize>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

/// Scalar config fields; each flag carries the field's name.
#[derive(Args)]
struct Overrides {
    #[arg(long = "n_train")]
    n_train: Option<u64>,
    #[arg(long = "n_test")]
    n_test: Option<u64>,
    #[arg(long = "cv_folds")]
    cv_folds: Option<u64>,
    #[arg(long = "cv_smoothing")]
    cv_smoothing: Option<bool>,
    #[arg(long = "mixture_prior_scale")]
    mixture_prior_scale: Option<f64>,
    #[arg(long = "mixture_mc_samples")]
    mixture_mc_samples: Option<u64>,
    #[arg(long = "oracle_n_future")]
    oracle_n_future: Option<u64>,
    #[arg(long = "output_dir")]
    output_dir: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, doc: &mut Value) -> Result<()> {
        let obj = doc
            .as_object_mut()
            .ok_or_else(|| Error::config("config", "top level must be a JSON object"))?;
        let mut set = |field: &str, v: Option<Value>| {
            if let Some(v) = v {
                obj.insert(field.to_string(), v);
            }
        };
        set("n_train", self.n_train.map(Value::from));
        set("n_test", self.n_test.map(Value::from));
        set("cv_folds", self.cv_folds.map(Value::from));
        set("cv_smoothing", self.cv_smoothing.map(Value::from));
        set("mixture_prior_scale", self.mixture_prior_scale.map(Value::from));
        set("mixture_mc_samples", self.mixture_mc_samples.map(Value::from));
        set("oracle_n_future", self.oracle_n_future.map(Value::from));
        set(
            "output_dir",
            self.output_dir.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned())),
        );
        Ok(())
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Error::config("config", format!("{}: {e}", args.config.display())))?;
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| Error::config("config", e.to_string()))?;
    args.overrides.apply(&mut doc)?;
    let mut config = ExperimentConfig::from_json(&doc.to_string())?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(i) = args.seed_index {
        let seed = *config
            .seeds
            .get(i)
            .ok_or_else(|| Error::config("seed-index", format!("{i} is out of range for {} seeds", config.seeds.len())))?;
        config.seeds = vec![seed];
    }
    Ok(config)
}

fn stored_seeds(out: &Path, index: Option<usize>) -> Result<Vec<u64>> {
    let seeds = read_aggregate(out)?.seeds;
    match index {
        None => Ok(seeds),
        Some(i) => seeds
            .get(i)
            .map(|s| vec![*s])
            .ok_or_else(|| Error::config("seed-index", format!("{i} is out of range for {} seeds", seeds.len()))),
    }
}

fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut stdout = stdout.lock();
    match cli.command {
        Command::Generate(args) => {
            let config = load_config(&args)?;
            let curve = config.source.curve()?;
            for &seed in &config.seeds {
                let (train, test) = draw_samples(&config, &curve, seed)?;
                let dir = seed_dir(&config.output_dir, seed);
                write_samples(&dir, &train, &test)?;
                writeln!(stdout, "{}", dir.display())?;
            }
        }
        Command::Sweep(args) => {
            let config = load_config(&args)?;
            let report = run_experiment(&config)?;
            write_report(&config.output_dir, &report)?;
            serde_json::to_writer_pretty(&mut stdout, &report.aggregate)?;
            writeln!(stdout)?;
        }
        Command::Analyze {
            out,
            curve,
            smooth,
            seed_index,
        } => match (out, curve) {
            (_, Some(path)) => {
                let (mut c, _) = GenCurve::read_csv(File::open(&path)?)?;
                if smooth {
                    c = smooth3(&c);
                }
                serde_json::to_writer_pretty(&mut stdout, &detect_critical_points(&c)?)?;
                writeln!(stdout)?;
            }
            (Some(out), None) => {
                for seed in stored_seeds(&out, seed_index)? {
                    let report = read_seed(&out, seed)?;
                    let curve = if smooth { smooth3(&report.curve) } else { report.curve };
                    let cp = detect_critical_points(&curve)?;
                    writeln!(stdout, "{{\"seed\":{seed},\"critical_points\":{}}}", serde_json::to_string(&cp)?)?;
                }
            }
            (None, None) => return Err(Error::config("analyze", "give --out or --curve")),
        },
        Command::Compare { out } => {
            let reports = stored_seeds(&out, None)?
                .into_iter()
                .map(|s| read_seed(&out, s))
                .collect::<Result<Vec<_>>>()?;
            let rows = compare_methods(&reports)?;
            write_comparison(&rows, BufWriter::new(File::create(out.join("comparison.csv"))?))?;
            write_comparison(&rows, &mut stdout)?;
        }
        Command::Plotdata {
            out,
            which,
            seed_index,
            file,
        } => {
            let kind: PlotKind = which.parse()?;
            let seed = stored_seeds(&out, Some(seed_index))?[0];
            let report = read_seed(&out, seed)?;
            let path = file.unwrap_or_else(|| seed_dir(&out, seed).join(format!("{which}.dat")));
            emit_plot_data(&report, kind, BufWriter::new(File::create(&path)?))?;
            writeln!(stdout, "{}", path.display())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
