//! File formats: signals, warps, ground truth, dataset manifests and plot
//! tables.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::correlation::{standardize_rows, BlockTransform};
use crate::error::{Error, Result};
use crate::model_fit::Knot;
use crate::signal::Signal;
use crate::synth::{generate_pair, DriftRecipe, DriftSpec, Family, GroundTruth, NoiseSpec};
use crate::warp::{apply_warp, Label, PiecewiseWarp};

pub const WARP_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalFormat {
    Csv,
    Bin,
}

impl SignalFormat {
    /// `.bin` is binary, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Self::Bin,
            _ => Self::Csv,
        }
    }
}

/// Sidecar describing a binary signal file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinHeader {
    pub fs: f64,
    pub t0: f64,
    pub channels: usize,
    pub dtype: String,
    /// Samples per channel.
    pub count: usize,
    #[serde(default)]
    pub names: Vec<String>,
}

/// `<path>.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn load_signal(path: &Path, format: SignalFormat) -> Result<Signal> {
    match format {
        SignalFormat::Csv => read_signal_csv(BufReader::new(File::open(path)?)),
        SignalFormat::Bin => {
            let header: BinHeader = serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
            let mut bytes = Vec::new();
            File::open(path)?.read_to_end(&mut bytes)?;
            signal_from_bin(&header, &bytes)
        }
    }
}

pub fn save_signal(path: &Path, s: &Signal, format: SignalFormat) -> Result<()> {
    match format {
        SignalFormat::Csv => write_signal_csv(BufWriter::new(File::create(path)?), s),
        SignalFormat::Bin => {
            let (header, bytes) = signal_to_bin(s);
            File::create(path)?.write_all(&bytes)?;
            serde_json::to_writer_pretty(File::create(sidecar_path(path))?, &header)?;
            Ok(())
        }
    }
}

/// Header `time_ms,<name>,...`; times strictly increasing and uniform.
pub fn read_signal_csv<R: Read>(reader: R) -> Result<Signal> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("time_ms") || header.len() < 2 {
        return Err(Error::Format("header must be time_ms followed by at least one channel".into()));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut times = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() != names.len() + 1 {
            return Err(Error::Format(format!("row {row}: expected {} fields, got {}", names.len() + 1, rec.len())));
        }
        let mut vals = rec.iter().map(|f| {
            let v: f64 = f.parse().map_err(|_| Error::Format(format!("row {row}: '{f}' is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Format(format!("row {row}: non-finite value '{f}'")))
            }
        });
        times.push(vals.next().expect("length checked")?);
        for c in cols.iter_mut() {
            c.push(vals.next().expect("length checked")?);
        }
    }
    if times.len() < 2 {
        return Err(Error::Format("need at least two rows to infer the sampling rate".into()));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::Format("row 3: time must strictly increase".into()));
    }
    for (i, &t) in times.iter().enumerate() {
        if (t - (times[0] + i as f64 * dt)).abs() > 1e-3 * dt {
            return Err(Error::Format(format!("row {}: time {t} breaks the uniform {dt} ms grid", i + 2)));
        }
    }
    let n = times.len();
    let fs = 1000.0 * (n - 1) as f64 / (times[n - 1] - times[0]);
    let data = Array2::from_shape_fn((names.len(), n), |(c, i)| cols[c][i]);
    Signal::with_names(data, fs, times[0], names)
}

pub fn write_signal_csv<W: Write>(writer: W, s: &Signal) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time_ms".to_string()];
    header.extend(s.channel_names().iter().cloned());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(s.channels() + 1);
    for i in 0..s.len() {
        row.clear();
        row.push(s.time_ms(i).to_string());
        row.extend((0..s.channels()).map(|c| s.data()[[c, i]].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Little-endian `f32`, samples interleaved across channels.
pub fn signal_to_bin(s: &Signal) -> (BinHeader, Vec<u8>) {
    let mut bytes = Vec::with_capacity(s.len() * s.channels() * 4);
    for i in 0..s.len() {
        for c in 0..s.channels() {
            bytes.extend_from_slice(&(s.data()[[c, i]] as f32).to_le_bytes());
        }
    }
    let header = BinHeader {
        fs: s.fs(),
        t0: s.t0(),
        channels: s.channels(),
        dtype: "f32".into(),
        count: s.len(),
        names: s.channel_names().to_vec(),
    };
    (header, bytes)
}

pub fn signal_from_bin(h: &BinHeader, bytes: &[u8]) -> Result<Signal> {
    if h.dtype != "f32" {
        return Err(Error::Format(format!("unsupported dtype '{}', expected f32", h.dtype)));
    }
    let expected = h.count * h.channels * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "sidecar declares {} x {} samples ({expected} bytes) but the file has {} bytes",
            h.channels,
            h.count,
            bytes.len()
        )));
    }
    let mut data = Array2::zeros((h.channels, h.count));
    for (k, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4")) as f64;
        data[[k % h.channels, k / h.channels]] = v;
    }
    let names = if h.names.len() == h.channels {
        h.names.clone()
    } else {
        (0..h.channels).map(|c| format!("ch{c}")).collect()
    };
    Signal::with_names(data, h.fs, h.t0, names)
}

/// Versioned warp document, optionally carrying the knot estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpDocument {
    pub version: u32,
    pub warp: PiecewiseWarp,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub knots: Vec<Knot>,
}

pub fn warp_to_json(w: &PiecewiseWarp, knots: &[Knot]) -> Result<String> {
    let doc = WarpDocument { version: WARP_VERSION, warp: w.clone(), knots: knots.to_vec() };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn warp_from_json(text: &str) -> Result<WarpDocument> {
    let raw: serde_json::Value = serde_json::from_str(text)?;
    match raw.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == WARP_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Format(format!("unsupported warp schema version {v} (expected {WARP_VERSION})")))
        }
        None => return Err(Error::Format("warp document has no version".into())),
    }
    let doc: WarpDocument = serde_json::from_value(raw)?;
    doc.warp.validate()?;
    Ok(doc)
}

pub fn save_warp(path: &Path, w: &PiecewiseWarp, knots: &[Knot]) -> Result<()> {
    std::fs::write(path, warp_to_json(w, knots)?)?;
    Ok(())
}

pub fn load_warp(path: &Path) -> Result<WarpDocument> {
    warp_from_json(&std::fs::read_to_string(path)?)
}

/// CSV `time_ms,drift_ms,offset_ms,d_ms`.
pub fn save_truth(path: &Path, t: &GroundTruth) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time_ms", "drift_ms", "offset_ms", "d_ms"])?;
    for i in 0..t.time_ms.len() {
        w.write_record(&[
            t.time_ms[i].to_string(),
            t.drift_ms[i].to_string(),
            t.offset_ms[i].to_string(),
            t.d_ms[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_truth(path: &Path) -> Result<GroundTruth> {
    let mut r = csv::Reader::from_path(path)?;
    let mut t = GroundTruth { time_ms: vec![], drift_ms: vec![], offset_ms: vec![], d_ms: vec![] };
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let get = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("truth row {}: bad or missing field {}", i + 2, k + 1)))
        };
        t.time_ms.push(get(0)?);
        t.drift_ms.push(get(1)?);
        t.offset_ms.push(get(2)?);
        t.d_ms.push(get(3)?);
    }
    if t.time_ms.is_empty() {
        return Err(Error::Format("truth file has no rows".into()));
    }
    if t.time_ms.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Format("truth times must strictly increase".into()));
    }
    Ok(t)
}

/// One generated or external pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub name: String,
    pub seed: u64,
    /// Paths are relative to the manifest's directory.
    pub s1: PathBuf,
    pub s2: PathBuf,
    pub truth: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub duration_min: f64,
    #[serde(default)]
    pub fs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftRecipe>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    pub records: Vec<RecordEntry>,
}

pub fn save_manifest(path: &Path, m: &Manifest) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(m)?)?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Resolve a manifest-relative path.
pub fn manifest_relative(manifest: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    manifest.parent().unwrap_or(Path::new(".")).join(p)
}

/// What `generate` writes.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub family: Family,
    pub seed: u64,
    pub duration_min: f64,
    pub fs: f64,
    pub drift: DriftRecipe,
    pub noise: NoiseSpec,
    pub records: usize,
    pub format: SignalFormat,
}

/// Generate `spec.records` pairs into `dir` (record `k` uses seed
/// `seed + k`) and write `manifest.json`.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec) -> Result<Manifest> {
    if spec.records == 0 {
        return Err(Error::invalid("records must be >= 1"));
    }
    std::fs::create_dir_all(dir)?;
    let ext = match spec.format {
        SignalFormat::Csv => "csv",
        SignalFormat::Bin => "bin",
    };
    let mut records = Vec::with_capacity(spec.records);
    for k in 0..spec.records {
        let seed = spec.seed.wrapping_add(k as u64);
        let pair = generate_pair(spec.family, seed, spec.duration_min * 60.0, spec.fs, &spec.drift, &spec.noise)?;
        let name = format!("rec{k:03}");
        let entry = RecordEntry {
            s1: PathBuf::from(format!("{name}_s1.{ext}")),
            s2: PathBuf::from(format!("{name}_s2.{ext}")),
            truth: PathBuf::from(format!("{name}_truth.csv")),
            name,
            seed,
            drift: Some(pair.drift.clone()),
        };
        save_signal(&dir.join(&entry.s1), &pair.s1, spec.format)?;
        save_signal(&dir.join(&entry.s2), &pair.s2, spec.format)?;
        save_truth(&dir.join(&entry.truth), &pair.truth)?;
        records.push(entry);
    }
    let family = serde_json::to_value(spec.family)?.as_str().unwrap_or("custom").to_string();
    let manifest = Manifest {
        dataset: family,
        family: Some(spec.family),
        seed: spec.seed,
        duration_min: spec.duration_min,
        fs: spec.fs,
        drift: Some(spec.drift.clone()),
        noise: Some(spec.noise.clone()),
        records,
    };
    save_manifest(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Sample-by-sample overlay of the raw pair, plus sensor 2 resampled by
/// `warp` when given. Every `step`-th sample is written.
pub fn overlay_table<W: Write>(out: W, s1: &Signal, s2: &Signal, warp: Option<&PiecewiseWarp>, step: usize) -> Result<()> {
    let corrected = warp.map(|w| apply_warp(s2, w)).transpose()?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time_ms".to_string()];
    header.extend(s1.channel_names().iter().map(|n| format!("s1_{n}")));
    header.extend(s2.channel_names().iter().map(|n| format!("s2_{n}")));
    if corrected.is_some() {
        header.extend(s2.channel_names().iter().map(|n| format!("s2_aligned_{n}")));
    }
    w.write_record(&header)?;
    let n = s1.len().min(s2.len());
    for i in (0..n).step_by(step.max(1)) {
        let mut row = vec![s1.time_ms(i).to_string()];
        row.extend((0..s1.channels()).map(|c| s1.data()[[c, i]].to_string()));
        row.extend((0..s2.channels()).map(|c| s2.data()[[c, i]].to_string()));
        if let Some(s) = &corrected {
            row.extend((0..s.channels()).map(|c| s.data()[[c, i]].to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Points per model curve in [`knots_table`].
pub const CURVE_POINTS: usize = 100;

/// Knot displacements with their labels (`-1` for outliers) followed by
/// each model sampled at [`CURVE_POINTS`] points across its span.
///
/// Columns: `kind,model,time_ms,d_ms,score,valid`; `kind` is `knot` or
/// `curve`, times are relative to the warp origin.
pub fn knots_table<W: Write>(out: W, warp: &PiecewiseWarp, knots: &[Knot]) -> Result<()> {
    if knots.len() != warp.knots.len() {
        return Err(Error::invalid(format!("{} knot estimates for a warp with {} knots", knots.len(), warp.knots.len())));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "model", "time_ms", "d_ms", "score", "valid"])?;
    for (k, l) in knots.iter().zip(&warp.labels) {
        let label = match l {
            Label::Model(m) => *m as i64,
            Label::Outlier => -1,
        };
        w.write_record(&[
            "knot".to_string(),
            label.to_string(),
            k.time_ms.to_string(),
            k.value_ms.to_string(),
            k.score.to_string(),
            k.valid.to_string(),
        ])?;
    }
    for (m, model) in warp.models.iter().enumerate() {
        let (a, b) = model.span;
        for i in 0..CURVE_POINTS {
            let t = if i + 1 == CURVE_POINTS { b } else { a + (b - a) * i as f64 / (CURVE_POINTS - 1) as f64 };
            w.write_record(&[
                "curve".to_string(),
                m.to_string(),
                t.to_string(),
                model.eval(t).to_string(),
                String::new(),
                String::new(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Both signals standardized and passed through their transforms, sensor 2
/// resampled by `warp` first.
pub fn transformed_table<W: Write>(
    out: W,
    s1: &Signal,
    s2: &Signal,
    warp: &PiecewiseWarp,
    t1: &dyn BlockTransform,
    t2: &dyn BlockTransform,
    step: usize,
) -> Result<()> {
    let aligned = apply_warp(s2, warp)?;
    let n = s1.len().min(aligned.len());
    let u = t1.transform(&standardize_rows(&s1.data().slice(ndarray::s![.., ..n]).to_owned()))?;
    let v = t2.transform(&standardize_rows(&aligned.data().slice(ndarray::s![.., ..n]).to_owned()))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time_ms".to_string()];
    header.extend((0..u.nrows()).map(|c| format!("f1_{c}")));
    header.extend((0..v.nrows()).map(|c| format!("f2_{c}")));
    w.write_record(&header)?;
    for i in (0..n).step_by(step.max(1)) {
        let mut row = vec![s1.time_ms(i).to_string()];
        row.extend((0..u.nrows()).map(|c| u[[c, i]].to_string()));
        row.extend((0..v.nrows()).map(|c| v[[c, i]].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::PolyModel;

    #[test]
    fn three_sample_csv() {
        let s = read_signal_csv("time_ms,ch0\n0,1.5\n10,2\n20,-3\n".as_bytes()).unwrap();
        assert_eq!(s.fs(), 100.0);
        assert_eq!(s.len(), 3);
        assert_eq!(s.channel(0).to_vec(), vec![1.5, 2.0, -3.0]);
    }

    #[test]
    fn csv_errors_name_the_row() {
        let e = read_signal_csv("time_ms,ch0\n0,1\n10,2\n30,3\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("row 4"), "{e}");
        let e = read_signal_csv("time_ms,ch0\n0,1\n10,NaN\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("row 3"), "{e}");
        assert!(read_signal_csv("t,ch0\n0,1\n10,2\n".as_bytes()).is_err());
        assert!(read_signal_csv("time_ms,a,b\n0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn csv_round_trip_keeps_values() {
        let s = Signal::from_samples(vec![0.1, -2.5e-7, 3.0, 1.0 / 3.0], 200.0, 1234.5).unwrap();
        let mut buf = Vec::new();
        write_signal_csv(&mut buf, &s).unwrap();
        let back = read_signal_csv(buf.as_slice()).unwrap();
        assert_eq!(back.data(), s.data());
        assert_eq!(back.t0(), s.t0());
        assert!((back.fs() - 200.0).abs() < 1e-9);
    }

    #[test]
    fn bin_round_trip_is_bitwise() {
        let data = Array2::from_shape_fn((2, 50), |(c, i)| (c as f32 * 0.25 + i as f32 * 0.1) as f64);
        let s = Signal::new(data, 128.0, 5.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        save_signal(&p, &s, SignalFormat::Bin).unwrap();
        let back = load_signal(&p, SignalFormat::Bin).unwrap();
        assert_eq!(back, s);
        let bytes = std::fs::read(&p).unwrap();
        save_signal(&p, &back, SignalFormat::Bin).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
    }

    #[test]
    fn bin_length_mismatch_is_an_error() {
        let h = BinHeader { fs: 1.0, t0: 0.0, channels: 1, dtype: "f32".into(), count: 3, names: vec![] };
        assert!(signal_from_bin(&h, &[0u8; 8]).is_err());
    }

    fn two_model_warp() -> PiecewiseWarp {
        PiecewiseWarp {
            family: 1,
            models: vec![PolyModel::new(vec![0.0, 1e-4], (0.0, 2000.0)), PolyModel::new(vec![500.0], (4000.0, 6000.0))],
            knots: vec![0.0, 1000.0, 2000.0, 3000.0, 4000.0, 5000.0, 6000.0],
            labels: vec![
                Label::Model(0),
                Label::Model(0),
                Label::Model(0),
                Label::Outlier,
                Label::Model(1),
                Label::Model(1),
                Label::Model(1),
            ],
            origin_ms: 17.25,
        }
    }

    #[test]
    fn warp_round_trips() {
        for w in [PiecewiseWarp::identity(), two_model_warp()] {
            let doc = warp_from_json(&warp_to_json(&w, &[]).unwrap()).unwrap();
            assert_eq!(doc.warp, w);
        }
    }

    #[test]
    fn unknown_warp_version_is_rejected() {
        let text = warp_to_json(&PiecewiseWarp::identity(), &[]).unwrap().replace("\"version\": 1", "\"version\": 7");
        let e = warp_from_json(&text).unwrap_err();
        assert!(e.to_string().contains("version 7"), "{e}");
    }

    #[test]
    fn knot_table_rows_and_curves() {
        let w = two_model_warp();
        let knots: Vec<Knot> = w
            .knots
            .iter()
            .map(|&t| Knot { time_ms: t, value_ms: w.evaluate(t).unwrap(), score: 0.9, valid: true })
            .collect();
        let mut buf = Vec::new();
        knots_table(&mut buf, &w, &knots).unwrap();
        let mut r = csv::Reader::from_reader(buf.as_slice());
        let rows: Vec<csv::StringRecord> = r.records().map(|r| r.unwrap()).collect();
        let knot_rows: Vec<_> = rows.iter().filter(|r| &r[0] == "knot").collect();
        assert_eq!(knot_rows.len(), w.knots.len());
        assert_eq!(&knot_rows[3][1], "-1");
        for m in 0..2 {
            let curve: Vec<_> = rows.iter().filter(|r| &r[0] == "curve" && r[1] == *m.to_string()).collect();
            assert_eq!(curve.len(), CURVE_POINTS);
            for r in [curve[0], curve[CURVE_POINTS - 1]] {
                let t: f64 = r[2].parse().unwrap();
                let d: f64 = r[3].parse().unwrap();
                assert!((d - w.evaluate(t).unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dataset_manifest_points_at_loadable_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            family: Family::Smp,
            seed: 3,
            duration_min: 0.5,
            fs: 50.0,
            drift: DriftRecipe::Random { total_ms: 200.0, offsets: 1, offset_ms: 100.0 },
            noise: NoiseSpec::none(),
            records: 2,
            format: SignalFormat::Bin,
        };
        write_dataset(dir.path(), &spec).unwrap();
        let mpath = dir.path().join("manifest.json");
        let m = load_manifest(&mpath).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.dataset, "smp");
        for r in &m.records {
            let s1 = load_signal(&manifest_relative(&mpath, &r.s1), SignalFormat::Bin).unwrap();
            assert_eq!(s1.len(), 1500);
            assert!(load_truth(&manifest_relative(&mpath, &r.truth)).is_ok());
        }
    }

    #[test]
    fn truth_round_trip() {
        let t = GroundTruth {
            time_ms: vec![0.0, 1000.0],
            drift_ms: vec![0.0, 0.5],
            offset_ms: vec![0.0, 100.0],
            d_ms: vec![0.0, 100.5],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("truth.csv");
        save_truth(&p, &t).unwrap();
        assert_eq!(load_truth(&p).unwrap(), t);
    }
}
