//! `dcca` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dcca::config::{Mode, RunConfig};
use dcca::correlation::{BlockTransform, Identity};
use dcca::eval::{run_benchmark, warp_error, write_report};
use dcca::io::{
    knots_table, load_signal, load_truth, load_warp, overlay_table, save_signal, save_warp, transformed_table,
    write_dataset, DatasetSpec, SignalFormat,
};
use dcca::pipeline::align_with;
use dcca::synth::{DriftRecipe, Family, NoiseSpec};
use dcca::transform::{load_checkpoint, save_checkpoint};
use dcca::{apply_warp, Error, Result};

#[derive(Parser)]
#[command(name = "dcca", version, about = "Temporal alignment of long raw sensor signals")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Bin,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Overlay,
    Knots,
    Transformed,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Generate {
        #[arg(long)]
        family: Family,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Duration in minutes.
        #[arg(long)]
        duration: f64,
        #[arg(long)]
        fs: f64,
        /// `none`, `random:TOTAL_MS:N_OFFSETS:OFFSET_MS` or `poly:C0,C1[,C2][@T:STEP,...]`.
        #[arg(long, default_value = "none")]
        drift: DriftRecipe,
        /// `none`, `all` or `key=value,...`.
        #[arg(long, default_value = "none")]
        noise: NoiseSpec,
        #[arg(long, default_value_t = 1)]
        records: usize,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the warp that aligns sensor 2 to sensor 1.
    Align {
        #[arg(long)]
        s1: PathBuf,
        #[arg(long)]
        s2: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Extra `key=value` overrides.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Save the trained first network here (the second one, if any, to `<path>.f2`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Initialise the first network from these weights.
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Resample a sensor-2 signal onto the reference time axis.
    Apply {
        #[arg(long)]
        signal: PathBuf,
        #[arg(long)]
        warp: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a warp against ground truth.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        warp: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run methods over every record of a manifest.
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated modes.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Mode>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export plot-ready tables.
    PlotData {
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long)]
        s1: Option<PathBuf>,
        #[arg(long)]
        s2: Option<PathBuf>,
        #[arg(long)]
        warp: Option<PathBuf>,
        /// Trained first network (transformed kind).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Trained second network (transformed kind).
        #[arg(long)]
        checkpoint2: Option<PathBuf>,
        /// Write every n-th sample.
        #[arg(long, default_value_t = 1)]
        step: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::InvalidInput(format!("--{flag} is required for this kind")))
}

fn load(path: &Path) -> Result<dcca::Signal> {
    load_signal(path, SignalFormat::from_path(path))
}

fn run_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::parse_text(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("override '{o}' is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn second_checkpoint(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".f2");
    PathBuf::from(s)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate { family, seed, duration, fs, drift, noise, records, format, out } => {
            let format = match format {
                FormatArg::Csv => SignalFormat::Csv,
                FormatArg::Bin => SignalFormat::Bin,
            };
            let spec = DatasetSpec { family, seed, duration_min: duration, fs, drift, noise, records, format };
            let m = write_dataset(&out, &spec)?;
            println!("wrote {} record(s) to {}", m.records.len(), out.display());
        }
        Command::Align { s1, s2, config, mode, seed, mut overrides, out, checkpoint, pretrained } => {
            if let Some(m) = mode {
                overrides.push(format!("mode={m}"));
            }
            if let Some(s) = seed {
                overrides.push(format!("seed={s}"));
            }
            let cfg = run_config(config.as_deref(), &overrides)?;
            let (a, b) = (load(&s1)?, load(&s2)?);
            let pre = pretrained.as_deref().map(load_checkpoint).transpose()?;
            let result = align_with(&a, &b, &cfg, pre)?;
            save_warp(&out, &result.warp, &result.knots)?;
            if let Some(cp) = checkpoint {
                match &result.net1 {
                    Some(n) => save_checkpoint(&cp, n)?,
                    None => log::warn!("mode {} trains no network; no checkpoint written", cfg.mode),
                }
                if let Some(n2) = &result.net2 {
                    save_checkpoint(&second_checkpoint(&cp), n2)?;
                }
            }
            println!(
                "{}: {} model(s), {} of {} knots outliers",
                cfg.mode,
                result.warp.models.len(),
                result.warp.outlier_count(),
                result.warp.knots.len()
            );
        }
        Command::Apply { signal, warp, out } => {
            let s = load(&signal)?;
            let doc = load_warp(&warp)?;
            let aligned = apply_warp(&s, &doc.warp)?;
            save_signal(&out, &aligned, SignalFormat::from_path(&out))?;
        }
        Command::Evaluate { truth, warp, out } => {
            let t = load_truth(&truth)?;
            let doc = load_warp(&warp)?;
            let start = t.time_ms[0];
            let end = *t.time_ms.last().expect("non-empty truth");
            let (mae, std) = warp_error(&t, &doc.warp, start, end)?;
            let mut w = csv::Writer::from_path(&out).map_err(Error::from)?;
            w.write_record(["mae_ms", "std_ms", "points"]).map_err(Error::from)?;
            w.write_record(&[mae.to_string(), std.to_string(), t.time_ms.len().to_string()])
                .map_err(Error::from)?;
            w.flush()?;
            println!("MAE {mae:.3} ms, std {std:.3} ms");
        }
        Command::Bench { manifest, methods, repeats, config, overrides, out } => {
            let cfg = run_config(config.as_deref(), &overrides)?;
            let report = run_benchmark(&manifest, &methods, &cfg, repeats)?;
            write_report(&out, &report)?;
            for s in &report.summary {
                println!(
                    "{:<8} {:<6} MAE {:>10.2} ms  median {:>10.2} ms  std {:>10.2} ms  failures {}",
                    s.dataset, s.method, s.mae_ms, s.median_mae_ms, s.std_ms, s.failures
                );
            }
        }
        Command::PlotData { kind, s1, s2, warp, checkpoint, checkpoint2, step, out } => {
            let file = std::io::BufWriter::new(std::fs::File::create(&out)?);
            match kind {
                PlotKind::Overlay => {
                    let doc = warp.as_deref().map(load_warp).transpose()?;
                    let (a, b) = (load(need(&s1, "s1")?)?, load(need(&s2, "s2")?)?);
                    overlay_table(file, &a, &b, doc.as_ref().map(|d| &d.warp), step)?;
                }
                PlotKind::Knots => {
                    let doc = load_warp(need(&warp, "warp")?)?;
                    knots_table(file, &doc.warp, &doc.knots)?;
                }
                PlotKind::Transformed => {
                    let doc = load_warp(need(&warp, "warp")?)?;
                    let (a, b) = (load(need(&s1, "s1")?)?, load(need(&s2, "s2")?)?);
                    let n1 = checkpoint.as_deref().map(load_checkpoint).transpose()?;
                    let n2 = checkpoint2.as_deref().map(load_checkpoint).transpose()?;
                    let t1: &dyn BlockTransform = match &n1 {
                        Some(n) => n,
                        None => &Identity,
                    };
                    let t2: &dyn BlockTransform = match &n2 {
                        Some(n) => n,
                        None => &Identity,
                    };
                    transformed_table(file, &a, &b, &doc.warp, t1, t2, step)?;
                }
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NoCorrelatedContent(_) => 2,
        Error::Io(_) => 3,
        Error::Csv(c) if c.is_io_error() => 3,
        Error::Json(j) if j.is_io() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
