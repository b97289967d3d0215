//! Alignment error metrics and the benchmark runner.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{path_displacements, WarpPath};
use crate::config::{Mode, RunConfig};
use crate::error::{Error, Result};
use crate::io::{load_manifest, load_signal, load_truth, manifest_relative, SignalFormat};
use crate::pipeline::align;
use crate::synth::GroundTruth;
use crate::warp::PiecewiseWarp;

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and (population) standard deviation of `|d_true - d_hat|` over
/// `eval_times`.
pub fn alignment_mae(
    d_true: impl Fn(f64) -> Result<f64>,
    d_hat: impl Fn(f64) -> Result<f64>,
    eval_times: &[f64],
) -> Result<(f64, f64)> {
    if eval_times.is_empty() {
        return Err(Error::invalid("no evaluation times"));
    }
    let errs = eval_times.iter().map(|&t| Ok((d_true(t)? - d_hat(t)?).abs())).collect::<Result<Vec<f64>>>()?;
    Ok(mean_std(&errs))
}

/// Error of `warp` against `truth` at the truth's sample times that fall
/// inside `[start_ms, end_ms]`.
pub fn warp_error(truth: &GroundTruth, warp: &PiecewiseWarp, start_ms: f64, end_ms: f64) -> Result<(f64, f64)> {
    let times: Vec<f64> = truth.time_ms.iter().copied().filter(|&t| t >= start_ms && t <= end_ms).collect();
    alignment_mae(|t| Ok(truth.at(t)), |t| warp.evaluate(t - warp.origin_ms), &times)
}

/// Error of a warping path: per S1 sample, the mean matched S2 index minus
/// the S1 index, in ms, plus the start-time difference `s2_t0 - s1_t0`.
pub fn dtw_path_error(
    path: &WarpPath,
    n1: usize,
    d_true: impl Fn(f64) -> Result<f64>,
    fs: f64,
    s1_t0: f64,
    s2_t0: f64,
) -> Result<(f64, f64)> {
    let disp = path_displacements(path, n1);
    let period = 1000.0 / fs;
    let times: Vec<f64> = (0..n1).map(|i| s1_t0 + i as f64 * period).collect();
    let est = |t: f64| {
        let i = ((t - s1_t0) / period).round() as usize;
        Ok(s2_t0 - s1_t0 + disp[i.min(n1 - 1)] * period)
    };
    alignment_mae(d_true, est, &times)
}

/// One method run on one record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub dataset: String,
    pub record: String,
    pub method: String,
    pub repeat: usize,
    pub mae_ms: Option<f64>,
    pub std_ms: Option<f64>,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-method aggregate over records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub dataset: String,
    pub method: String,
    /// Grand mean over records of the per-record mean MAE.
    pub mae_ms: f64,
    /// Std over time points, grand-meaned over records.
    pub std_ms: f64,
    /// Std of the per-record MAEs.
    pub std_records_ms: f64,
    /// Std over repeats, averaged over records.
    pub std_repeats_ms: f64,
    pub median_mae_ms: f64,
    pub records: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub summary: Vec<BenchSummary>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Aggregate rows per (dataset, method), in first-seen order.
pub fn summarize(rows: &[BenchRow]) -> Vec<BenchSummary> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.dataset.clone(), r.method.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(dataset, method)| {
            let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.dataset == dataset && r.method == method).collect();
            let mut records: Vec<&str> = mine.iter().map(|r| r.record.as_str()).collect();
            records.dedup();
            let mut rec_mae = Vec::new();
            let mut rec_std = Vec::new();
            let mut rec_rep = Vec::new();
            for rec in &records {
                let ok: Vec<&&BenchRow> = mine.iter().filter(|r| r.record == *rec && r.mae_ms.is_some()).collect();
                if ok.is_empty() {
                    continue;
                }
                let maes: Vec<f64> = ok.iter().filter_map(|r| r.mae_ms).collect();
                let stds: Vec<f64> = ok.iter().filter_map(|r| r.std_ms).collect();
                let (m, s) = mean_std(&maes);
                rec_mae.push(m);
                rec_rep.push(s);
                rec_std.push(mean_std(&stds).0);
            }
            let failures = mine.iter().filter(|r| r.mae_ms.is_none()).count();
            let nan_if_empty = |v: &[f64], f: fn(&[f64]) -> f64| if v.is_empty() { f64::NAN } else { f(v) };
            BenchSummary {
                dataset,
                method,
                mae_ms: nan_if_empty(&rec_mae, |v| mean_std(v).0),
                std_ms: nan_if_empty(&rec_std, |v| mean_std(v).0),
                std_records_ms: nan_if_empty(&rec_mae, |v| mean_std(v).1),
                std_repeats_ms: nan_if_empty(&rec_rep, |v| mean_std(v).0),
                median_mae_ms: median(rec_mae.clone()),
                records: records.len(),
                failures,
            }
        })
        .collect()
}

/// Run every method on every record of a manifest.
///
/// Deterministic methods run once and their row is repeated; trained
/// methods use seed `cfg.seed + repeat`. Failures become rows with an
/// error message and no MAE.
pub fn run_benchmark(manifest_path: &Path, methods: &[Mode], cfg: &RunConfig, repeats: usize) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(Error::invalid("repeats must be >= 1"));
    }
    let manifest = load_manifest(manifest_path)?;
    let mut rows = Vec::new();
    if methods.is_empty() {
        return Ok(BenchReport::default());
    }
    for rec in &manifest.records {
        let path = |p: &Path| manifest_relative(manifest_path, p);
        let load = |p: &Path| load_signal(&path(p), SignalFormat::from_path(p));
        let s1 = load(&rec.s1)?;
        let s2 = load(&rec.s2)?;
        let truth = load_truth(&path(&rec.truth))?;
        let end = s1.time_ms(s1.len() - 1);
        for &method in methods {
            let runs = if method.is_stochastic() { repeats } else { 1 };
            let mut done = Vec::new();
            for repeat in 0..runs {
                let run_cfg = RunConfig { mode: method, seed: cfg.seed.wrapping_add(repeat as u64), ..cfg.clone() };
                let started = Instant::now();
                let result = align(&s1, &s2, &run_cfg).and_then(|o| warp_error(&truth, &o.warp, s1.t0(), end));
                let wall = started.elapsed().as_secs_f64();
                let row = BenchRow {
                    dataset: manifest.dataset.clone(),
                    record: rec.name.clone(),
                    method: method.to_string(),
                    repeat,
                    mae_ms: result.as_ref().ok().map(|r| r.0),
                    std_ms: result.as_ref().ok().map(|r| r.1),
                    wall_time_s: wall,
                    error: result.err().map(|e| e.to_string()),
                };
                log::info!("{} {} {} repeat {repeat}: {:?} ms in {wall:.2} s", row.dataset, row.record, row.method, row.mae_ms);
                done.push(row);
            }
            for repeat in runs..repeats {
                done.push(BenchRow { repeat, ..done[0].clone() });
            }
            rows.extend(done);
        }
    }
    let summary = summarize(&rows);
    Ok(BenchReport { rows, summary })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// `rows.csv`, `summary.csv` and `report.json` in `dir`.
pub fn write_report(dir: &Path, report: &BenchReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("rows.csv"))?;
    w.write_record(["dataset", "record", "method", "repeat", "mae_ms", "std_ms", "wall_time_s", "error"])?;
    for r in &report.rows {
        w.write_record(&[
            r.dataset.clone(),
            r.record.clone(),
            r.method.clone(),
            r.repeat.to_string(),
            opt(r.mae_ms),
            opt(r.std_ms),
            r.wall_time_s.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record([
        "dataset",
        "method",
        "mae_ms",
        "std_ms",
        "std_records_ms",
        "std_repeats_ms",
        "median_mae_ms",
        "records",
        "failures",
    ])?;
    for s in &report.summary {
        w.write_record(&[
            s.dataset.clone(),
            s.method.clone(),
            s.mae_ms.to_string(),
            s.std_ms.to_string(),
            s.std_records_ms.to_string(),
            s.std_repeats_ms.to_string(),
            s.median_mae_ms.to_string(),
            s.records.to_string(),
            s.failures.to_string(),
        ])?;
    }
    w.flush()?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    Ok(())
}
