//! Synthetic signal pairs with known warping functions.
//!
//! Every generator is a pure function of its seed and configuration.

use std::f64::consts::PI;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{difference, Signal};
use crate::warp::{Label, PiecewiseWarp, PolyModel};

const MS_PER_HOUR: f64 = 3.6e6;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Truncated Gaussian kernel (±4σ), normalized to unit sum.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let half = (4.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-half..=half).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Same-length convolution with a centred kernel, zero padded.
fn smooth(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = x.len() as i64;
    let half = (kernel.len() / 2) as i64;
    (0..n)
        .map(|i| {
            let lo = (i - half).max(0);
            let hi = (i + half).min(n - 1);
            (lo..=hi).map(|j| x[j as usize] * kernel[(j - i + half) as usize]).sum()
        })
        .collect()
}

/// Parameters of the smoothed Poisson-process generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonSmoothConfig {
    /// Event rate of each process.
    pub rates_hz: Vec<f64>,
    /// Mixing weight of each process (each process has unit variance).
    pub weights: Vec<f64>,
    /// Gaussian smoothing width of each process.
    pub smoothing_ms: Vec<f64>,
    pub noise_std: f64,
    pub channels: usize,
}

impl Default for PoissonSmoothConfig {
    fn default() -> Self {
        Self {
            rates_hz: vec![0.5, 2.0, 8.0],
            weights: vec![1.0, 0.6, 0.3],
            smoothing_ms: vec![400.0, 120.0, 30.0],
            noise_std: 0.01,
            channels: 1,
        }
    }
}

impl PoissonSmoothConfig {
    fn validate(&self) -> Result<()> {
        let k = self.rates_hz.len();
        if self.weights.len() != k || self.smoothing_ms.len() != k {
            return Err(Error::invalid("rates, weights and smoothing widths must have equal length"));
        }
        if self.rates_hz.iter().chain(&self.smoothing_ms).any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("event rates and smoothing widths must be finite and >= 0"));
        }
        if !(self.noise_std >= 0.0) || self.channels == 0 {
            return Err(Error::invalid("noise std must be >= 0 and channels >= 1"));
        }
        Ok(())
    }
}

/// Weighted sum of Gaussian-smoothed Poisson event trains plus white noise.
///
/// Events carry exponentially distributed (positive) amplitudes; each
/// smoothed process is scaled to unit variance before weighting, so the
/// output is non-negative apart from the white noise.
pub fn gen_poisson_smooth(seed: u64, duration_s: f64, fs: f64, cfg: &PoissonSmoothConfig) -> Result<Signal> {
    cfg.validate()?;
    if !(duration_s > 0.0 && fs > 0.0) {
        return Err(Error::invalid("duration and sampling frequency must be > 0"));
    }
    let n = (duration_s * fs).round() as usize;
    if n < 2 {
        return Err(Error::invalid("duration too short for the sampling frequency"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Array2::zeros((cfg.channels, n));
    for mut row in data.axis_iter_mut(Axis(0)) {
        for ((&rate, &weight), &width) in cfg.rates_hz.iter().zip(&cfg.weights).zip(&cfg.smoothing_ms) {
            if rate == 0.0 {
                continue;
            }
            let kernel = gaussian_kernel(width * fs / 1000.0);
            let half = kernel.len() / 2;
            let mut proc = vec![0.0; n];
            let expected = Poisson::new(rate * n as f64 / fs).map_err(|e| Error::invalid(e.to_string()))?;
            let events = expected.sample(&mut rng) as usize;
            for _ in 0..events {
                let at = rng.random_range(0..n);
                let amp: f64 = rng.sample(rand_distr::Exp1);
                for (k, w) in kernel.iter().enumerate() {
                    let j = at as i64 + k as i64 - half as i64;
                    if (0..n as i64).contains(&j) {
                        proc[j as usize] += amp * w;
                    }
                }
            }
            let sd = std_dev(&proc);
            if sd > 0.0 {
                row.iter_mut().zip(&proc).for_each(|(r, p)| *r += weight * p / sd);
            }
        }
        if cfg.noise_std > 0.0 {
            let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
            row.iter_mut().for_each(|r| *r += noise.sample(&mut rng));
        }
    }
    Signal::new(data, fs, 0.0)
}

/// First difference and elementwise square of a base signal.
///
/// Both outputs have `N - 1` samples on the same time axis; the squared
/// signal drops the first base sample.
pub fn derive_pair_1d(base: &Signal) -> Result<(Signal, Signal)> {
    let d = difference(base, 1)?;
    let sq = base.slice(1, base.len())?;
    let sq = sq.map_data(sq.data().mapv(|v| v * v))?;
    Ok((d, sq))
}

/// Cartesian `(x, y, z)` to `(r², θ, φ)` with θ the inclination from +z
/// and φ the azimuth from +x. The origin maps to `(0, 0, 0)`.
pub fn to_spherical(x: f64, y: f64, z: f64) -> (f64, f64, f64) {
    let r2 = x * x + y * y + z * z;
    if r2 == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let theta = (x.hypot(y)).atan2(z);
    (r2, theta, y.atan2(x))
}

pub fn from_spherical(r2: f64, theta: f64, phi: f64) -> (f64, f64, f64) {
    let r = r2.sqrt();
    (r * theta.sin() * phi.cos(), r * theta.sin() * phi.sin(), r * theta.cos())
}

/// Three-channel Cartesian signal and its spherical counterpart with the
/// radius squared.
pub fn derive_pair_3d(base3: &Signal) -> Result<(Signal, Signal)> {
    if base3.channels() != 3 {
        return Err(Error::invalid(format!("need 3 channels, got {}", base3.channels())));
    }
    let d = base3.data();
    let mut out = Array2::zeros((3, base3.len()));
    for i in 0..base3.len() {
        let (r2, th, ph) = to_spherical(d[[0, i]], d[[1, i]], d[[2, i]]);
        out[[0, i]] = r2;
        out[[1, i]] = th;
        out[[2, i]] = ph;
    }
    let names = vec!["r2".to_string(), "theta".to_string(), "phi".to_string()];
    Ok((base3.clone(), Signal::with_names(out, base3.fs(), base3.t0(), names)?))
}

/// Heart-rate specification for the quasi-periodic generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    pub bpm: f64,
    /// Standard deviation of the inter-beat interval.
    pub variability_ms: f64,
    /// Breathing rate that swings the pulse amplitude through zero, as in
    /// a lead nearly perpendicular to the cardiac axis. `0` disables it.
    #[serde(default)]
    pub respiration_bpm: f64,
}

impl Default for RateSpec {
    fn default() -> Self {
        Self { bpm: 60.0, variability_ms: 50.0, respiration_bpm: 15.0 }
    }
}

#[derive(Clone, Debug)]
pub struct QuasiPeriodicPair {
    /// Spiky pulse waveform.
    pub ecg: Signal,
    /// Smoothed, oscillating counterpart.
    pub bcg: Signal,
    pub beats_ms: Vec<f64>,
}

/// (offset ms, amplitude, width ms) of the P, Q, R, S and T waves.
const PQRST: [(f64, f64, f64); 5] =
    [(-200.0, 0.15, 25.0), (-35.0, -0.15, 8.0), (0.0, 1.0, 10.0), (35.0, -0.25, 8.0), (250.0, 0.3, 40.0)];

/// Oscillation frequency of the derived waveform.
const BCG_CARRIER_HZ: f64 = 5.0;

/// A pulse train with beat-to-beat variability and a morphologically
/// distinct derived signal sharing its beat timing.
///
/// The derived signal is a band-pass (difference of Gaussians) detail of
/// the unmodulated pulse train, squared and smoothed into an energy
/// envelope, then modulated by a sine locked to each beat. With respiratory
/// modulation the pulse polarity follows a cosine of the breathing phase,
/// so the two signals are nearly uncorrelated at every lag while still
/// sharing their beat timing.
pub fn gen_quasiperiodic_pair(seed: u64, duration_s: f64, fs: f64, rate: RateSpec) -> Result<QuasiPeriodicPair> {
    if !(duration_s > 0.0 && fs > 0.0 && rate.bpm > 0.0 && rate.variability_ms >= 0.0 && rate.respiration_bpm >= 0.0) {
        return Err(Error::invalid("duration, fs and rate must be > 0, variability and respiration >= 0"));
    }
    let n = (duration_s * fs).round() as usize;
    if n < 2 {
        return Err(Error::invalid("duration too short for the sampling frequency"));
    }
    let period = 1000.0 / fs;
    let mean_ibi = 60_000.0 / rate.bpm;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, rate.variability_ms).map_err(|e| Error::invalid(e.to_string()))?;
    let end = n as f64 * period;
    let mut beats = Vec::new();
    let mut t = rng.random::<f64>() * mean_ibi;
    while t < end {
        beats.push(t);
        t += (mean_ibi + jitter.sample(&mut rng)).max(0.3 * mean_ibi);
    }

    let breath = rng.random::<f64>() * 2.0 * PI;
    let mut pulses = vec![0.0; n];
    let mut ecg = vec![0.0; n];
    let reach = 4.0 * PQRST.iter().map(|w| w.0.abs() + w.2).fold(0.0, f64::max);
    for &b in &beats {
        let gain = if rate.respiration_bpm > 0.0 {
            (2.0 * PI * rate.respiration_bpm * b / 60_000.0 + breath).cos()
        } else {
            1.0
        };
        let lo = ((b - reach) / period).floor().max(0.0) as usize;
        let hi = (((b + reach) / period).ceil() as usize).min(n - 1);
        for i in lo..=hi {
            let ti = i as f64 * period - b;
            let v: f64 = PQRST.iter().map(|&(o, a, w)| a * (-(ti - o).powi(2) / (2.0 * w * w)).exp()).sum();
            pulses[i] += v;
            ecg[i] += gain * v;
        }
    }

    let ms = |v: f64| v / period;
    let fine = smooth(&pulses, &gaussian_kernel(ms(15.0)));
    let coarse = smooth(&pulses, &gaussian_kernel(ms(45.0)));
    let energy: Vec<f64> = fine.iter().zip(&coarse).map(|(a, b)| (a - b).powi(2)).collect();
    let envelope = smooth(&energy, &gaussian_kernel(ms(60.0)));
    let peak = envelope.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut bcg = vec![0.0; n];
    let mut k = 0;
    for (i, v) in bcg.iter_mut().enumerate() {
        let ti = i as f64 * period;
        while k + 1 < beats.len() && (beats[k + 1] - ti).abs() < (beats[k] - ti).abs() {
            k += 1;
        }
        let phase = beats.get(k).map_or(ti, |b| ti - b);
        *v = envelope[i] / peak * (2.0 * PI * BCG_CARRIER_HZ * phase / 1000.0).sin();
    }
    let names = |s: &str| vec![s.to_string()];
    Ok(QuasiPeriodicPair {
        ecg: Signal::with_names(Array2::from_shape_vec((1, n), ecg).expect("shape"), fs, 0.0, names("ecg"))?,
        bcg: Signal::with_names(Array2::from_shape_vec((1, n), bcg).expect("shape"), fs, 0.0, names("bcg"))?,
        beats_ms: beats,
    })
}

/// Smooth clock-drift shape `h(t)`, `t` in ms from the recording start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftShape {
    /// Ascending coefficients, at most quadratic.
    Polynomial { coeffs: Vec<f64> },
    Sinusoid { amplitude_ms: f64, period_ms: f64, phase_rad: f64 },
}

impl DriftShape {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Polynomial { coeffs } => crate::warp::polyval(coeffs, t),
            Self::Sinusoid { amplitude_ms, period_ms, phase_rad } => {
                amplitude_ms * (2.0 * PI * t / period_ms + phase_rad).sin()
            }
        }
    }

    /// Largest |dh/dt| over `[0, duration_ms]`.
    pub fn max_slope(&self, duration_ms: f64) -> f64 {
        match self {
            Self::Polynomial { coeffs } => {
                let c1 = coeffs.get(1).copied().unwrap_or(0.0);
                let c2 = coeffs.get(2).copied().unwrap_or(0.0);
                (c1.abs()).max((c1 + 2.0 * c2 * duration_ms).abs())
            }
            Self::Sinusoid { amplitude_ms, period_ms, .. } => (amplitude_ms * 2.0 * PI / period_ms).abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Offset {
    pub time_ms: f64,
    pub step_ms: f64,
}

/// Clock drift plus step offsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub drift: DriftShape,
    /// Sorted by time; a step applies from its time onwards.
    pub offsets: Vec<Offset>,
    /// Upper bound on the drift rate.
    pub max_rate_ms_per_hr: f64,
}

impl DriftSpec {
    pub fn none() -> Self {
        Self { drift: DriftShape::Polynomial { coeffs: vec![0.0] }, offsets: Vec::new(), max_rate_ms_per_hr: 0.0 }
    }

    /// Random quadratic drift reaching `total_ms` in magnitude at the end,
    /// plus `n_offsets` steps of magnitude in `[offset_ms / 2, offset_ms]`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        duration_ms: f64,
        total_ms: f64,
        n_offsets: usize,
        offset_ms: f64,
    ) -> Self {
        let total = rng.random_range(-1.0..=1.0) * total_ms;
        let frac: f64 = rng.random();
        let coeffs = vec![0.0, total * (1.0 - frac) / duration_ms, total * frac / (duration_ms * duration_ms)];
        let offsets = (0..n_offsets)
            .map(|k| {
                let pos = (k as f64 + rng.random_range(0.25..0.75)) / n_offsets as f64;
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                Offset {
                    time_ms: duration_ms * (0.1 + 0.8 * pos),
                    step_ms: sign * offset_ms * rng.random_range(0.5..=1.0),
                }
            })
            .collect();
        let drift = DriftShape::Polynomial { coeffs };
        let max_rate_ms_per_hr = drift.max_slope(duration_ms) * MS_PER_HOUR;
        Self { drift, offsets, max_rate_ms_per_hr }
    }

    pub fn validate(&self, duration_ms: f64) -> Result<()> {
        if let DriftShape::Polynomial { coeffs } = &self.drift {
            if coeffs.is_empty() || coeffs.len() > 3 {
                return Err(Error::invalid("drift polynomial must have 1 to 3 coefficients"));
            }
        }
        if let DriftShape::Sinusoid { period_ms, .. } = &self.drift {
            if !(*period_ms > 0.0) {
                return Err(Error::invalid("drift sinusoid period must be > 0"));
            }
        }
        let slope = self.drift.max_slope(duration_ms);
        if !(slope < 1.0) {
            return Err(Error::Constraint(format!("|dh/dt| < 1 violated: max slope {slope}")));
        }
        if slope * MS_PER_HOUR > self.max_rate_ms_per_hr * (1.0 + 1e-9) + 1e-9 {
            return Err(Error::Constraint(format!(
                "drift rate {} ms/hr exceeds the declared maximum {} ms/hr",
                slope * MS_PER_HOUR,
                self.max_rate_ms_per_hr
            )));
        }
        if self.offsets.windows(2).any(|w| w[0].time_ms > w[1].time_ms) {
            return Err(Error::invalid("offsets must be sorted by time"));
        }
        if self.offsets.iter().any(|o| !(o.time_ms.is_finite() && o.step_ms.is_finite())) {
            return Err(Error::invalid("offsets must be finite"));
        }
        Ok(())
    }

    /// Cumulative step offset `b(t)`.
    pub fn steps_at(&self, t: f64) -> f64 {
        self.offsets.iter().take_while(|o| o.time_ms <= t).map(|o| o.step_ms).sum()
    }

    /// Total displacement `d(t) = h(t) + b(t)`.
    pub fn eval(&self, t: f64) -> f64 {
        self.drift.eval(t) + self.steps_at(t)
    }

    /// The true warp over `[0, duration_ms]`, one model per offset segment.
    ///
    /// Polynomial drift is represented exactly; sinusoidal drift by linear
    /// pieces between 1 s samples.
    pub fn to_warp(&self, origin_ms: f64, duration_ms: f64) -> PiecewiseWarp {
        let mut bounds = vec![0.0];
        bounds.extend(self.offsets.iter().map(|o| o.time_ms).filter(|&t| t > 0.0 && t < duration_ms));
        bounds.push(duration_ms);
        bounds.dedup();
        let mut models = Vec::new();
        let mut knots = Vec::new();
        for w in bounds.windows(2) {
            let (a, b) = (w[0], w[1]);
            let step = self.steps_at(a);
            match &self.drift {
                DriftShape::Polynomial { coeffs } => {
                    let mut c = coeffs.clone();
                    c[0] += step;
                    knots.push((a, models.len()));
                    models.push(PolyModel::new(c, (a, b)));
                }
                DriftShape::Sinusoid { .. } => {
                    let mut t = a;
                    while t < b {
                        let u = (t + 1000.0).min(b);
                        let (ya, yb) = (self.drift.eval(t) + step, self.drift.eval(u) + step);
                        let slope = (yb - ya) / (u - t);
                        knots.push((t, models.len()));
                        models.push(PolyModel::new(vec![ya - slope * t, slope], (t, u)));
                        t = u;
                    }
                }
            }
        }
        PiecewiseWarp {
            family: match &self.drift {
                DriftShape::Polynomial { coeffs } => coeffs.len() - 1,
                DriftShape::Sinusoid { .. } => 1,
            },
            models,
            knots: knots.iter().map(|k| k.0).collect(),
            labels: knots.iter().map(|k| Label::Model(k.1)).collect(),
            origin_ms,
        }
    }
}

/// How `generate` builds a drift specification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftRecipe {
    None,
    Random { total_ms: f64, offsets: usize, offset_ms: f64 },
    Fixed { spec: DriftSpec },
}

impl DriftRecipe {
    pub fn resolve<R: Rng + ?Sized>(&self, rng: &mut R, duration_ms: f64) -> DriftSpec {
        match self {
            Self::None => DriftSpec::none(),
            Self::Random { total_ms, offsets, offset_ms } => {
                DriftSpec::random(rng, duration_ms, *total_ms, *offsets, *offset_ms)
            }
            Self::Fixed { spec } => spec.clone(),
        }
    }
}

impl FromStr for DriftRecipe {
    type Err = Error;

    /// `none`, `random:TOTAL_MS:N_OFFSETS:OFFSET_MS`, or
    /// `poly:C0,C1[,C2][@T:STEP,...]` with coefficients in ms and ms/ms.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unrecognised drift spec '{s}'"));
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
        if s == "none" {
            return Ok(Self::None);
        }
        if let Some(rest) = s.strip_prefix("random:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            return Ok(Self::Random {
                total_ms: num(parts[0])?,
                offsets: parts[1].trim().parse().map_err(|_| bad())?,
                offset_ms: num(parts[2])?,
            });
        }
        if let Some(rest) = s.strip_prefix("poly:") {
            let (poly, steps) = rest.split_once('@').unwrap_or((rest, ""));
            let coeffs = poly.split(',').map(num).collect::<Result<Vec<_>>>()?;
            let offsets = steps
                .split(',')
                .filter(|p| !p.trim().is_empty())
                .map(|p| {
                    let (t, st) = p.split_once(':').ok_or_else(bad)?;
                    Ok(Offset { time_ms: num(t)?, step_ms: num(st)? })
                })
                .collect::<Result<Vec<_>>>()?;
            let drift = DriftShape::Polynomial { coeffs };
            // slopes are bounded by 1 anyway; a finite cap keeps the spec JSON-safe
            return Ok(Self::Fixed { spec: DriftSpec { drift, offsets, max_rate_ms_per_hr: MS_PER_HOUR } });
        }
        Err(bad())
    }
}

/// True displacement sampled at 1 Hz on the reference clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Absolute reference times.
    pub time_ms: Vec<f64>,
    pub drift_ms: Vec<f64>,
    pub offset_ms: Vec<f64>,
    pub d_ms: Vec<f64>,
}

impl GroundTruth {
    pub fn zeros_like(&self) -> Self {
        let z = vec![0.0; self.time_ms.len()];
        Self { time_ms: self.time_ms.clone(), drift_ms: z.clone(), offset_ms: z.clone(), d_ms: z }
    }

    /// Linear interpolation of `d` at absolute time `t`, clamped at the ends.
    pub fn at(&self, t: f64) -> f64 {
        let ts = &self.time_ms;
        if ts.is_empty() {
            return 0.0;
        }
        let i = ts.partition_point(|&x| x <= t);
        if i == 0 {
            return self.d_ms[0];
        }
        if i == ts.len() {
            return self.d_ms[ts.len() - 1];
        }
        let f = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
        self.d_ms[i - 1] + f * (self.d_ms[i] - self.d_ms[i - 1])
    }
}

/// Move every sample from its time `t` to `t + d(t)` and re-interpolate
/// onto the original uniform grid.
///
/// Gaps opened by positive steps are bridged linearly; where a negative
/// step folds time back, later samples overwrite earlier ones. Grid
/// points outside the moved range repeat the nearest end sample.
pub fn inject_drift_offsets(s: &Signal, spec: &DriftSpec) -> Result<(Signal, GroundTruth)> {
    let duration = s.duration_ms();
    spec.validate(duration)?;
    let n = s.len();
    let period = s.period_ms();
    let moved: Vec<f64> = (0..n).map(|i| i as f64 + spec.eval(i as f64 * period) / period).collect();
    let mut out = Array2::zeros((s.channels(), n));
    for c in 0..s.channels() {
        let x = s.channel(c);
        let mut row = out.row_mut(c);
        let first = moved[0].ceil().max(0.0) as usize;
        for j in 0..first.min(n) {
            row[j] = x[0];
        }
        let last = moved[n - 1].floor();
        if last < (n - 1) as f64 {
            let from = (last + 1.0).max(0.0) as usize;
            for j in from..n {
                row[j] = x[n - 1];
            }
        }
        if moved[0] >= 0.0 && moved[0] == moved[0].floor() && (moved[0] as usize) < n {
            row[moved[0] as usize] = x[0];
        }
        for i in 1..n {
            let (a, b) = (moved[i - 1], moved[i]);
            if b <= a {
                continue;
            }
            let lo = (a.floor() + 1.0).max(0.0);
            let hi = b.floor().min((n - 1) as f64);
            let mut j = lo;
            while j <= hi {
                let f = (j - a) / (b - a);
                row[j as usize] = if f >= 1.0 { x[i] } else { x[i - 1] + f * (x[i] - x[i - 1]) };
                j += 1.0;
            }
        }
    }
    let warped = s.map_data(out)?;
    let count = (duration / 1000.0).floor() as usize + 1;
    let mut truth = GroundTruth { time_ms: vec![], drift_ms: vec![], offset_ms: vec![], d_ms: vec![] };
    for k in 0..count {
        let t = k as f64 * 1000.0;
        let h = spec.drift.eval(t);
        let b = spec.steps_at(t);
        truth.time_ms.push(s.t0() + t);
        truth.drift_ms.push(h);
        truth.offset_ms.push(b);
        truth.d_ms.push(h + b);
    }
    Ok((warped, truth))
}

/// Noise applied to a clean signal. Amplitudes are relative to each
/// channel's standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub wander_amplitude: f64,
    pub wander_band_hz: (f64, f64),
    /// Fraction of samples replaced by low-amplitude Gaussian noise.
    pub loss_rate: f64,
    pub loss_amplitude: f64,
    /// Fraction of samples mixed with an unrelated signal.
    pub external_rate: f64,
    /// Weight of the unrelated signal inside external segments.
    pub external_mix: f64,
    /// Length of each loss or external segment.
    pub segment_ms: f64,
    pub snr_db: Option<f64>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            wander_amplitude: 0.0,
            wander_band_hz: (0.05, 0.5),
            loss_rate: 0.0,
            loss_amplitude: 0.1,
            external_rate: 0.0,
            external_mix: 1.0,
            segment_ms: 2000.0,
            snr_db: None,
        }
    }

    /// Slow baseline wander, sparse loss and external segments, 20 dB
    /// white noise.
    pub fn all() -> Self {
        Self {
            wander_amplitude: 0.2,
            wander_band_hz: (0.01, 0.1),
            loss_rate: 0.02,
            external_rate: 0.02,
            snr_db: Some(20.0),
            ..Self::none()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("loss_rate", self.loss_rate), ("external_rate", self.external_rate), ("external_mix", self.external_mix)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid(format!("{name} must be in [0, 1], got {r}")));
            }
        }
        let (lo, hi) = self.wander_band_hz;
        if !(self.wander_amplitude >= 0.0 && lo >= 0.0 && hi >= lo) {
            return Err(Error::invalid("wander amplitude must be >= 0 and its band ordered"));
        }
        if !(self.loss_amplitude >= 0.0 && self.segment_ms > 0.0) {
            return Err(Error::invalid("loss amplitude must be >= 0 and segment length > 0"));
        }
        if self.snr_db.is_some_and(|v| !v.is_finite()) {
            return Err(Error::invalid("SNR must be finite"));
        }
        Ok(())
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;

    /// `none`, `all`, or comma-separated `key=value` pairs over `wander`,
    /// `wander_lo`, `wander_hi`, `loss`, `loss_amp`, `external`, `mix`,
    /// `segment_ms` and `snr`, starting from `none`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => return Ok(Self::none()),
            "all" => return Ok(Self::all()),
            _ => {}
        }
        let mut spec = Self::none();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("noise spec entry '{part}' is not key=value")))?;
            let v: f64 =
                v.trim().parse().map_err(|_| Error::invalid(format!("noise spec value '{v}' is not a number")))?;
            match k.trim() {
                "wander" => spec.wander_amplitude = v,
                "wander_lo" => spec.wander_band_hz.0 = v,
                "wander_hi" => spec.wander_band_hz.1 = v,
                "loss" => spec.loss_rate = v,
                "loss_amp" => spec.loss_amplitude = v,
                "external" => spec.external_rate = v,
                "mix" => spec.external_mix = v,
                "segment_ms" => spec.segment_ms = v,
                "snr" => spec.snr_db = Some(v),
                other => return Err(Error::invalid(format!("unknown noise key '{other}'"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Segment start indices covering about `rate` of `n` samples.
fn pick_segments<R: Rng + ?Sized>(rng: &mut R, n: usize, seg: usize, rate: f64) -> Vec<usize> {
    let slots = n / seg;
    let count = ((rate * slots as f64).round() as usize).min(slots);
    if count == 0 {
        return Vec::new();
    }
    let mut picked: Vec<usize> = sample(rng, slots, count).into_iter().map(|s| s * seg).collect();
    picked.sort_unstable();
    picked
}

/// Apply baseline wander, signal loss, external segments and white noise,
/// in that order.
///
/// Wander is a sum of sinusoids at exact DFT bin frequencies inside the
/// band, so it adds no energy outside it.
pub fn inject_noise(s: &Signal, spec: &NoiseSpec, seed: u64) -> Result<Signal> {
    spec.validate()?;
    let n = s.len();
    let fs = s.fs();
    let seg = ((spec.segment_ms * fs / 1000.0).round() as usize).clamp(1, n);
    let mut data = s.data().clone();
    for c in 0..s.channels() {
        let mut rng = stream(seed, c as u64);
        let mut row = data.row_mut(c);
        let sd = std_dev(row.as_slice().expect("standard layout"));
        let scale = if sd > 0.0 { sd } else { 1.0 };

        if spec.wander_amplitude > 0.0 {
            let lo = ((spec.wander_band_hz.0 * n as f64 / fs).ceil() as usize).max(1);
            let hi = (spec.wander_band_hz.1 * n as f64 / fs).floor() as usize;
            if hi >= lo {
                let bins: Vec<usize> = sample(&mut rng, hi - lo + 1, (hi - lo + 1).min(5)).into_iter().map(|b| b + lo).collect();
                let amp = spec.wander_amplitude * scale * (2.0 / bins.len() as f64).sqrt();
                for &k in &bins {
                    let phase = rng.random::<f64>() * 2.0 * PI;
                    for (i, v) in row.iter_mut().enumerate() {
                        *v += amp * (2.0 * PI * (k * i) as f64 / n as f64 + phase).sin();
                    }
                }
            } else {
                log::warn!("signal too short for a wander band of {:?} Hz", spec.wander_band_hz);
            }
        }

        if spec.loss_rate > 0.0 {
            let noise = Normal::new(0.0, spec.loss_amplitude * scale).map_err(|e| Error::invalid(e.to_string()))?;
            for start in pick_segments(&mut rng, n, seg, spec.loss_rate) {
                for v in row.iter_mut().skip(start).take(seg) {
                    *v = noise.sample(&mut rng);
                }
            }
        }

        if spec.external_rate > 0.0 {
            let starts = pick_segments(&mut rng, n, seg, spec.external_rate);
            if !starts.is_empty() {
                let other = gen_poisson_smooth(rng.random(), n as f64 / fs, fs, &PoissonSmoothConfig::default())?;
                let ext = other.channel(0);
                let ext_sd = std_dev(ext.as_slice().expect("standard layout")).max(f64::MIN_POSITIVE);
                for start in starts {
                    for i in start..(start + seg).min(n) {
                        let e = ext[i.min(ext.len() - 1)] / ext_sd * scale;
                        row[i] = (1.0 - spec.external_mix) * row[i] + spec.external_mix * e;
                    }
                }
            }
        }

        if let Some(snr) = spec.snr_db {
            let noise = Normal::new(0.0, scale / 10f64.powf(snr / 20.0)).map_err(|e| Error::invalid(e.to_string()))?;
            row.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        }
    }
    s.map_data(data)
}

/// Benchmark signal families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Smp,
    Rnd1d,
    Rnd3d,
    Ecgbcg,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smp" => Ok(Self::Smp),
            "rnd1d" => Ok(Self::Rnd1d),
            "rnd3d" => Ok(Self::Rnd3d),
            "ecgbcg" => Ok(Self::Ecgbcg),
            _ => Err(Error::invalid(format!("unknown family '{s}' (smp, rnd1d, rnd3d, ecgbcg)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedPair {
    pub s1: Signal,
    pub s2: Signal,
    pub drift: DriftSpec,
    pub truth: GroundTruth,
}

/// A full benchmark pair: clean family signals, drift and offsets on the
/// second sensor, independent noise on both.
pub fn generate_pair(
    family: Family,
    seed: u64,
    duration_s: f64,
    fs: f64,
    drift: &DriftRecipe,
    noise: &NoiseSpec,
) -> Result<GeneratedPair> {
    let smp = PoissonSmoothConfig::default();
    let (a, b) = match family {
        Family::Smp => {
            let base = gen_poisson_smooth(seed, duration_s, fs, &smp)?;
            (base.clone(), base)
        }
        Family::Rnd1d => derive_pair_1d(&gen_poisson_smooth(seed, duration_s, fs, &smp)?)?,
        Family::Rnd3d => {
            let cfg = PoissonSmoothConfig { channels: 3, ..smp };
            derive_pair_3d(&gen_poisson_smooth(seed, duration_s, fs, &cfg)?)?
        }
        Family::Ecgbcg => {
            let p = gen_quasiperiodic_pair(seed, duration_s, fs, RateSpec::default())?;
            (p.ecg, p.bcg)
        }
    };
    let spec = drift.resolve(&mut stream(seed, 101), b.duration_ms());
    let (b, truth) = inject_drift_offsets(&b, &spec)?;
    let s1 = inject_noise(&a, noise, seed.wrapping_add(1_000_003))?;
    let s2 = inject_noise(&b, noise, seed.wrapping_add(2_000_003))?;
    Ok(GeneratedPair { s1, s2, drift: spec, truth })
}
