//! Uniformly sampled multichannel signals.

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// A multichannel, uniformly sampled time series.
///
/// `data` is laid out as `channels x samples`. Times are in milliseconds;
/// `t0` is the time of the first sample since the epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    data: Array2<f64>,
    fs: f64,
    t0: f64,
    channel_names: Vec<String>,
}

impl Signal {
    pub fn new(data: Array2<f64>, fs: f64, t0: f64) -> Result<Self> {
        let names = (0..data.nrows()).map(|c| format!("ch{c}")).collect();
        Self::with_names(data, fs, t0, names)
    }

    pub fn with_names(
        data: Array2<f64>,
        fs: f64,
        t0: f64,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::invalid(format!("sampling frequency must be > 0, got {fs}")));
        }
        if !t0.is_finite() {
            return Err(Error::invalid("start time must be finite"));
        }
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid(format!(
                "signal must have at least one channel and one sample, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if channel_names.len() != data.nrows() {
            return Err(Error::invalid(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                data.nrows()
            )));
        }
        if let Some(((c, i), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample {v} at channel {c}, index {i}")));
        }
        Ok(Self { data, fs, t0, channel_names })
    }

    /// Single-channel convenience constructor.
    pub fn from_samples(samples: Vec<f64>, fs: f64, t0: f64) -> Result<Self> {
        let n = samples.len();
        let data = Array2::from_shape_vec((1, n), samples)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(data, fs, t0)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn channel(&self, c: usize) -> ArrayView1<'_, f64> {
        self.data.row(c)
    }

    /// Sample period in milliseconds.
    pub fn period_ms(&self) -> f64 {
        1000.0 / self.fs
    }

    /// Time between the first and the last sample, in milliseconds.
    pub fn duration_ms(&self) -> f64 {
        (self.len() - 1) as f64 * self.period_ms()
    }

    /// Absolute time of sample `i`, in milliseconds.
    pub fn time_ms(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.period_ms()
    }

    /// Same signal with a new start time.
    pub fn with_t0(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }

    /// Keep samples `[start, end)`; `t0` moves with `start`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::invalid(format!(
                "slice [{start}, {end}) out of range for {} samples",
                self.len()
            )));
        }
        let data = self.data.slice(ndarray::s![.., start..end]).to_owned();
        Ok(Self {
            data,
            fs: self.fs,
            t0: self.time_ms(start),
            channel_names: self.channel_names.clone(),
        })
    }

    /// Replace the sample matrix, keeping timing and names.
    pub fn map_data(&self, data: Array2<f64>) -> Result<Self> {
        Self::with_names(data, self.fs, self.t0, self.channel_names.clone())
    }
}

/// Linearly interpolate a uniformly sampled row at a fractional sample
/// position. Positions outside the row are clamped to the end samples.
pub fn interp_at(row: ArrayView1<'_, f64>, pos: f64) -> f64 {
    let n = row.len();
    if pos <= 0.0 {
        return row[0];
    }
    let last = (n - 1) as f64;
    if pos >= last {
        return row[n - 1];
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if frac == 0.0 {
        return row[i];
    }
    row[i] + (row[i + 1] - row[i]) * frac
}

/// Linear-interpolation resampling onto a uniform grid at `target_fs`.
///
/// The output starts at the same `t0` and ends at the last grid point not
/// beyond the input's last sample.
pub fn resample(s: &Signal, target_fs: f64) -> Result<Signal> {
    if !(target_fs.is_finite() && target_fs > 0.0) {
        return Err(Error::invalid(format!("target sampling frequency must be > 0, got {target_fs}")));
    }
    if s.is_empty() {
        return Err(Error::invalid("cannot resample an empty signal"));
    }
    let ratio = s.fs() / target_fs;
    let n_out = ((s.len() - 1) as f64 / ratio + 1e-9).floor() as usize + 1;
    let mut out = Array2::zeros((s.channels(), n_out));
    for (c, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let src = s.channel(c);
        for (j, v) in row.iter_mut().enumerate() {
            *v = interp_at(src, j as f64 * ratio);
        }
    }
    Signal::with_names(out, target_fs, s.t0(), s.channel_names().to_vec())
}

/// Per-channel finite difference of order 1 or 2.
///
/// The result has `N - order` samples and its start time advances by
/// `order` sample periods.
pub fn difference(s: &Signal, order: usize) -> Result<Signal> {
    if !(order == 1 || order == 2) {
        return Err(Error::invalid(format!("difference order must be 1 or 2, got {order}")));
    }
    if s.len() <= order {
        return Err(Error::invalid(format!(
            "need more than {order} samples to difference, got {}",
            s.len()
        )));
    }
    let n = s.len() - order;
    let mut out = Array2::zeros((s.channels(), n));
    for (c, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let x = s.channel(c);
        for (i, v) in row.iter_mut().enumerate() {
            *v = if order == 1 {
                x[i + 1] - x[i]
            } else {
                // (x[i+2] - x[i+1]) - (x[i+1] - x[i]), kept in this order so that
                // differencing twice gives the same rounding.
                (x[i + 2] - x[i + 1]) - (x[i + 1] - x[i])
            };
        }
    }
    Signal::with_names(
        out,
        s.fs(),
        s.t0() + order as f64 * s.period_ms(),
        s.channel_names().to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_bad_construction() {
        assert!(Signal::from_samples(vec![], 10.0, 0.0).is_err());
        assert!(Signal::from_samples(vec![1.0], 0.0, 0.0).is_err());
        assert!(Signal::from_samples(vec![1.0, f64::NAN], 10.0, 0.0).is_err());
    }

    #[test]
    fn resample_constant() {
        let s = Signal::from_samples(vec![5.0; 4], 4.0, 0.0).unwrap();
        let r = resample(&s, 2.0).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.data().iter().all(|&v| v == 5.0));
        assert_eq!(r.t0(), 0.0);
    }

    #[test]
    fn resample_ramp_stays_on_line() {
        let s = Signal::from_samples((0..10).map(f64::from).collect(), 10.0, 3.0).unwrap();
        let r = resample(&s, 5.0).unwrap();
        assert_eq!(r.t0(), 3.0);
        assert_eq!(r.channel(0)[0], 0.0);
        for (j, v) in r.channel(0).iter().enumerate() {
            assert!((v - 2.0 * j as f64).abs() < 1e-12);
        }
        assert!(s.duration_ms() - r.duration_ms() < r.period_ms());
    }

    #[test]
    fn resample_sine_matches_closed_form() {
        let fs = 100.0;
        let f = 1.0;
        let x: Vec<f64> = (0..1000)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin())
            .collect();
        let s = Signal::from_samples(x, fs, 0.0).unwrap();
        let r = resample(&s, 50.0).unwrap();
        let max_dev = r
            .channel(0)
            .iter()
            .enumerate()
            .map(|(j, v)| (v - (2.0 * std::f64::consts::PI * f * j as f64 / 50.0).sin()).abs())
            .fold(0.0, f64::max);
        assert!(max_dev < 1e-3, "max deviation {max_dev}");
    }

    #[test]
    fn difference_examples() {
        let s = Signal::from_samples(vec![1.0, 3.0, 6.0, 10.0], 10.0, 0.0).unwrap();
        let d = difference(&s, 1).unwrap();
        assert_eq!(d.data(), &array![[2.0, 3.0, 4.0]]);
        assert_eq!(d.t0(), 100.0);

        let ramp = Signal::from_samples((0..8).map(|i| 0.5 * i as f64).collect(), 10.0, 0.0)
            .unwrap();
        assert!(difference(&ramp, 1).unwrap().data().iter().all(|&v| v == 0.5));
        assert!(difference(&ramp, 2).unwrap().data().iter().all(|&v| v == 0.0));

        assert!(difference(&s, 3).is_err());
        assert!(difference(&s, 0).is_err());
    }

    #[test]
    fn differenced_random_walk_recovers_step_autocorrelation() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        // AR(1) steps with coefficient 0.6 integrated into a walk; differencing
        // returns the steps, so the lag-1 autocorrelation should be near 0.6.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let phi = 0.6;
        let mut step = 0.0;
        let mut level = 0.0;
        let mut walk = Vec::with_capacity(50_001);
        walk.push(level);
        for _ in 0..50_000 {
            step = phi * step + normal.sample(&mut rng);
            level += step;
            walk.push(level);
        }
        let s = Signal::from_samples(walk, 100.0, 0.0).unwrap();
        let d = difference(&s, 1).unwrap();
        let x = d.channel(0);
        let mean = x.mean().unwrap();
        let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        let cov: f64 = (0..x.len() - 1).map(|i| (x[i] - mean) * (x[i + 1] - mean)).sum();
        let r1 = cov / var;
        assert!((r1 - phi).abs() < 0.02, "lag-1 autocorrelation {r1}");
    }

    #[test]
    fn double_first_difference_equals_second() {
        let s = Signal::from_samples(
            (0..50).map(|i| ((i * 37 % 11) as f64).sin() * 3.0).collect(),
            10.0,
            0.0,
        )
        .unwrap();
        let twice = difference(&difference(&s, 1).unwrap(), 1).unwrap();
        let once = difference(&s, 2).unwrap();
        assert_eq!(twice.data(), once.data());
        assert_eq!(twice.t0(), once.t0());
    }
}
