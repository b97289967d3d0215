//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::time::Instant;

use dcca::baselines::{fastdtw, path_displacements};
use dcca::config::{Mode, RunConfig};
use dcca::correlation::{cca_all_lags, ncc_all_lags, Ridge};
use dcca::io::{read_signal_csv, signal_from_bin, signal_to_bin, warp_from_json, warp_to_json, write_signal_csv};
use dcca::model_fit::{
    alpha_expansion, build_neighborhood, labeling_energy, pearl_fit, polyfit, DataCosts, EnergyConfig, Knot, Neighborhood,
    PearlFit,
};
use dcca::pipeline::align;
use dcca::segmentation::WindowPair;
use dcca::synth::{
    gen_poisson_smooth, gen_quasiperiodic_pair, inject_drift_offsets, DriftShape, DriftSpec, PoissonSmoothConfig,
    RateSpec,
};
use dcca::transform::{loss_and_grad, Architecture, Side, TransformNet};
use dcca::warp::{polyval, Label, PiecewiseWarp, PolyModel};
use dcca::{apply_warp, Signal};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const KNOT_SPACING: f64 = 10_000.0;

/// Quadratic drift with a 500 ms step at 1200 s.
pub fn planted_truth(t: f64) -> f64 {
    let drift = 200.0 + 2e-5 * t + 4e-11 * t * t;
    if t >= 1.2e6 {
        drift + 500.0
    } else {
        drift
    }
}

/// `n` knots on [`planted_truth`] with `outlier_frac` of them replaced by
/// uniform noise in `[-5w, 5w]`; inliers carry Gaussian jitter rounded to
/// whole 5 ms samples.
pub fn planted_knots(seed: u64, n: usize, outlier_frac: f64, sigma: f64) -> (Vec<Knot>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, sigma.max(1e-300)).unwrap();
    let mut is_noise = vec![false; n];
    let n_noise = (outlier_frac * n as f64).round() as usize;
    for i in rand::seq::index::sample(&mut rng, n, n_noise) {
        is_noise[i] = true;
    }
    let knots = (0..n)
        .map(|i| {
            let t = i as f64 * KNOT_SPACING;
            let value = if is_noise[i] {
                rng.random_range(-5.0 * KNOT_SPACING..5.0 * KNOT_SPACING)
            } else if sigma > 0.0 {
                ((planted_truth(t) + jitter.sample(&mut rng)) / 5.0).round() * 5.0
            } else {
                planted_truth(t)
            };
            Knot { time_ms: t, value_ms: value, score: 1.0, valid: true }
        })
        .collect();
    (knots, is_noise)
}

pub fn inlier_mae(fit: &PearlFit, knots: &[Knot], noise: &[bool]) -> f64 {
    let pts: Vec<f64> = knots.iter().zip(noise).filter(|(_, &n)| !n).map(|(k, _)| k.time_ms).collect();
    pts.iter().map(|&t| (fit.warp.evaluate(t).unwrap() - planted_truth(t)).abs()).sum::<f64>() / pts.len() as f64
}

/// Lowest energy over every labeling.
pub fn brute_force_energy(costs: &DataCosts, graph: &Neighborhood, label_cost: f64) -> f64 {
    let k = costs.models + 1;
    let n = costs.nodes;
    let mut labels = vec![Label::Outlier; n];
    let mut best = f64::INFINITY;
    for code in 0..k.pow(n as u32) {
        let mut c = code;
        for l in labels.iter_mut() {
            let v = c % k;
            c /= k;
            *l = if v == costs.models { Label::Outlier } else { Label::Model(v) };
        }
        best = best.min(labeling_energy(costs, graph, &labels, label_cost));
    }
    best
}

pub struct PearlRecovery {
    /// Runs that selected exactly two models.
    pub exact_two: usize,
    pub runs: usize,
    pub worst_inlier_mae: f64,
    /// Smallest fraction of planted outliers labeled as such.
    pub worst_catch: f64,
}

/// 200 knots, 40% outliers, five seeds.
pub fn pearl_recovery() -> PearlRecovery {
    let runs = 5;
    let mut out = PearlRecovery { exact_two: 0, runs, worst_inlier_mae: 0.0, worst_catch: 1.0 };
    for seed in 0..runs as u64 {
        let (knots, noise) = planted_knots(100 + seed, 200, 0.4, 3.0);
        let fit = pearl_fit(&knots, &EnergyConfig::default(), seed).unwrap();
        if fit.warp.models.len() == 2 {
            out.exact_two += 1;
        }
        out.worst_inlier_mae = out.worst_inlier_mae.max(inlier_mae(&fit, &knots, &noise));
        let total = noise.iter().filter(|&&n| n).count();
        let caught = noise.iter().zip(&fit.warp.labels).filter(|(&n, l)| n && l.is_outlier()).count();
        out.worst_catch = out.worst_catch.min(caught as f64 / total as f64);
    }
    out
}

/// Largest ratio of expansion energy to the exhaustive optimum over small
/// two-line instances of 8 to 12 knots.
pub fn expansion_worst_ratio(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 8 + (seed as usize % 5);
        let (knots, _) = planted_knots(seed, n, 0.3, 3.0);
        let t: Vec<f64> = knots.iter().map(|k| k.time_ms).collect();
        let y: Vec<f64> = knots.iter().map(|k| k.value_ms).collect();
        let models: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                let idx = rand::seq::index::sample(&mut rng, n, 2).into_vec();
                polyfit(&[t[idx[0]], t[idx[1]]], &[y[idx[0]], y[idx[1]]], 1).unwrap()
            })
            .collect();
        let costs: Vec<f64> =
            (0..n).flat_map(|p| models.iter().map(|m| (y[p] - polyval(m, t[p])).abs()).collect::<Vec<_>>()).collect();
        let costs = DataCosts::new(n, models.len(), costs, 40.0).unwrap();
        let pos: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let graph = build_neighborhood(&pos, 2, 3.0).unwrap();
        let label_cost = 15.0;
        let (_, e) = alpha_expansion(&costs, &graph, label_cost, &vec![Label::Outlier; n]).unwrap();
        let opt = brute_force_energy(&costs, &graph, label_cost);
        worst = worst.max(e / opt);
    }
    worst
}

pub fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

/// `s1` and a copy delayed by `k` samples: the event at sample `j` of
/// `s1` shows at sample `j + k` of `s2`.
pub fn delayed_pair(seed: u64, minutes: f64, fs: f64, k: usize) -> (Signal, Signal) {
    let n = (minutes * 60.0 * fs).round() as usize;
    let base = gen_poisson_smooth(seed, (n + k) as f64 / fs, fs, &PoissonSmoothConfig::default()).unwrap();
    let s1 = base.slice(k, k + n).unwrap().with_t0(0.0);
    let s2 = base.slice(0, n).unwrap();
    (s1, s2)
}

/// Largest relative deviation of the analytic loss gradient from central
/// differences over `trials` random two-layer networks.
pub fn gradient_check(trials: u64) -> f64 {
    let arch = Architecture { channels: 1, hidden: 4, kernel: 5, blocks: 0, head_layers: 1 };
    let n = 64;
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let normal = Normal::new(0.0, 0.4).unwrap();
        let params: Vec<f64> = (0..arch.param_count()).map(|_| normal.sample(&mut rng)).collect();
        let net = TransformNet::from_params(arch, params.clone()).unwrap();
        let x = gaussian(n + 5, 2000 + trial);
        let noise = gaussian(n, 3000 + trial);
        let xa = Array2::from_shape_fn((1, n), |(_, i)| x[i + 5]);
        let ya = Array2::from_shape_fn((1, n), |(_, i)| x[i] + 0.3 * noise[i]);
        let pair = WindowPair { x: xa, y: ya, start1: 0, start2: 0, knot_ms: 0.0, truncated: false };
        let eval = |p: Vec<f64>| {
            let net = TransformNet::from_params(arch, p).unwrap();
            loss_and_grad(&net, None, &pair, Side::First, 0.1, Ridge::Relative(1e-4), 16).unwrap()
        };
        let (base, grad) = loss_and_grad(&net, None, &pair, Side::First, 0.1, Ridge::Relative(1e-4), 16).unwrap();
        let h = 1e-6;
        let mut fd = vec![0.0; params.len()];
        for (i, f) in fd.iter_mut().enumerate() {
            let (mut up, mut down) = (params.clone(), params.clone());
            up[i] += h;
            down[i] -= h;
            let (lu, _) = eval(up);
            let (ld, _) = eval(down);
            assert_eq!((lu.lag, ld.lag), (base.lag, base.lag), "peak moved under perturbation");
            *f = (lu.loss - ld.loss) / (2.0 * h);
        }
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let err = grad.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        worst = worst.max(err);
    }
    worst
}

pub struct PeriodicDemo {
    pub expected_lag: i64,
    pub ncc_lag: i64,
    pub dtw_mean_displacement: f64,
    pub period_samples: f64,
}

/// Ten seconds of a pulse train against the same train with its first two
/// beats removed.
pub fn almost_periodic_demo(seed: u64) -> PeriodicDemo {
    let fs = 100.0;
    let rate = RateSpec { bpm: 60.0, variability_ms: 40.0, respiration_bpm: 0.0 };
    let pair = gen_quasiperiodic_pair(seed, 30.0, fs, rate).unwrap();
    let ecg = pair.ecg.channel(0).to_vec();
    let beats = &pair.beats_ms;
    // cut halfway between the second and third beats
    let cut = (((beats[1] + beats[2]) / 2.0) * fs / 1000.0).round() as usize;
    let n = 1000;
    let x = &ecg[..n];
    let y = &ecg[cut..cut + n];
    let (ncc_lag, _) = ncc_all_lags(x, y, n / 2).unwrap().argmax();
    let path = fastdtw(x, y, 30).unwrap();
    let disp = path_displacements(&path, n);
    let mean = disp.iter().sum::<f64>() / n as f64;
    let ibi: Vec<f64> = beats.windows(2).map(|w| w[1] - w[0]).collect();
    let period_samples = ibi.iter().sum::<f64>() / ibi.len() as f64 * fs / 1000.0;
    PeriodicDemo { expected_lag: -(cut as i64), ncc_lag, dtw_mean_displacement: mean, period_samples }
}

/// Wall time of identity-mode alignment over `supers` twenty-minute
/// super-segments at 200 Hz, best of `reps` runs.
pub fn align_seconds(supers: usize, reps: usize) -> f64 {
    let fs = 200.0;
    let (s1, s2) = delayed_pair(77, 20.0 * supers as f64 + 0.1, fs, 13);
    let cfg = RunConfig { w_ms: 20_005.0, z_ms: 1_200_000.0, mode: Mode::Idcca, ..Default::default() };
    (0..reps)
        .map(|_| {
            let start = Instant::now();
            let out = align(&s1, &s2, &cfg).unwrap();
            assert_eq!(out.grid.as_ref().unwrap().super_count(), supers);
            start.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Coefficient of determination of a least-squares line through `(x, y)`.
pub fn linear_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

// Property checks, shared by the proptest suites and the acceptance run.

pub fn smooth_series() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (proptest::collection::vec(-1.0f64..1.0, 80..200), 0usize..20).prop_map(|(raw, shift)| {
        let smooth: Vec<f64> = raw.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
        (smooth, shift)
    })
}

/// `(x, y)` with `y` equal to `x` delayed by `shift` plus a little noise.
pub fn delayed_windows(series: &[f64], shift: usize) -> (Vec<f64>, Vec<f64>) {
    let n = series.len() - 20;
    let x = series[20..20 + n].to_vec();
    let y = series[20 - shift..20 - shift + n].to_vec();
    (x, y)
}

pub fn prop_affine_invariance(series: Vec<f64>, shift: usize, a: f64, b: f64, c: f64, d: f64) -> Result<(), TestCaseError> {
    let (x, y) = delayed_windows(&series, shift);
    let max_lag = 25;
    let base = ncc_all_lags(&x, &y, max_lag).unwrap();
    prop_assume!(!base.degenerate);
    let xa: Vec<f64> = x.iter().map(|v| a * v + b).collect();
    let ya: Vec<f64> = y.iter().map(|v| c * v + d).collect();
    let moved = ncc_all_lags(&xa, &ya, max_lag).unwrap();
    for (s, t) in base.scores.iter().zip(&moved.scores) {
        prop_assert!((s - t).abs() < 1e-8, "{s} vs {t}");
    }
    prop_assert_eq!(base.argmax().0, moved.argmax().0);
    Ok(())
}

pub fn prop_mixing_invariance(seed: u64, shift: usize) -> Result<(), TestCaseError> {
    let n = 160;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let src: Vec<Vec<f64>> = (0..2).map(|_| (0..n + 20).map(|_| normal.sample(&mut rng)).collect()).collect();
    let x = Array2::from_shape_fn((2, n), |(c, i)| src[c][i + 20]);
    let y = Array2::from_shape_fn((2, n), |(c, i)| src[1 - c][i + 20 - shift] + 0.1 * normal.sample(&mut rng));
    let mix = Array2::from_shape_fn((2, 2), |_| normal.sample(&mut rng));
    let det = mix[[0, 0]] * mix[[1, 1]] - mix[[0, 1]] * mix[[1, 0]];
    prop_assume!(det.abs() > 0.2);
    let ridge = Ridge::Absolute(0.0);
    let base = cca_all_lags(x.view(), y.view(), 25, ridge).unwrap();
    let mixed = cca_all_lags(mix.dot(&x).view(), y.view(), 25, ridge).unwrap();
    for (s, t) in base.scores.iter().zip(&mixed.scores) {
        prop_assert!((s - t).abs() < 1e-6, "{s} vs {t}");
    }
    prop_assert_eq!(base.argmax().0, shift as i64);
    prop_assert_eq!(mixed.argmax().0, shift as i64);
    Ok(())
}

/// Direct per-lag evaluation of centered, overlap-normalized correlation.
pub fn brute_force_ncc(x: &[f64], y: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    (-(max_lag as i64)..=max_lag as i64)
        .map(|c| {
            let (mut num, mut ex, mut ey) = (0.0, 0.0, 0.0);
            for i in 0..n as i64 {
                let j = i + c;
                if j < 0 || j >= n as i64 {
                    continue;
                }
                let (a, b) = (x[i as usize] - mx, y[j as usize] - my);
                num += a * b;
                ex += a * a;
                ey += b * b;
            }
            if ex * ey > 0.0 {
                num / (ex * ey).sqrt()
            } else {
                0.0
            }
        })
        .collect()
}

pub fn prop_brute_force_ncc(x: Vec<f64>, y: Vec<f64>, max_lag: usize) -> Result<(), TestCaseError> {
    let n = x.len().min(y.len());
    let (x, y) = (&x[..n], &y[..n]);
    let max_lag = max_lag.min(n - 2);
    let fast = ncc_all_lags(x, y, max_lag).unwrap();
    prop_assume!(!fast.degenerate);
    let slow = brute_force_ncc(x, y, max_lag);
    for (i, (a, b)) in fast.scores.iter().zip(&slow).enumerate() {
        prop_assert!((a - b).abs() < 1e-9, "lag index {i}: {a} vs {b}");
    }
    Ok(())
}

pub fn prop_antisymmetry(x: Vec<f64>, y: Vec<f64>) -> Result<(), TestCaseError> {
    let n = x.len().min(y.len());
    let (x, y) = (&x[..n], &y[..n]);
    let max_lag = n / 3;
    let xy = ncc_all_lags(x, y, max_lag).unwrap();
    let yx = ncc_all_lags(y, x, max_lag).unwrap();
    for c in -(max_lag as i64)..=max_lag as i64 {
        let (a, b) = (xy.score_at(c).unwrap(), yx.score_at(-c).unwrap());
        prop_assert!((a - b).abs() < 1e-9, "lag {c}: {a} vs {b}");
    }
    Ok(())
}

/// Delay by a linear drift, then undo it with the matching warp.
pub fn prop_warp_round_trip(seed: u64, offset_ms: f64, rate_ms_per_s: f64) -> Result<(), TestCaseError> {
    let fs = 100.0;
    // slow components only, so linear interpolation is accurate
    let smooth = PoissonSmoothConfig {
        rates_hz: vec![0.5, 2.0],
        weights: vec![1.0, 0.6],
        smoothing_ms: vec![400.0, 120.0],
        noise_std: 0.0,
        channels: 1,
    };
    let s = gen_poisson_smooth(seed, 120.0, fs, &smooth).unwrap();
    let spec = DriftSpec {
        drift: DriftShape::Polynomial { coeffs: vec![offset_ms, rate_ms_per_s / 1000.0] },
        offsets: vec![],
        max_rate_ms_per_hr: f64::INFINITY,
    };
    let (moved, _) = inject_drift_offsets(&s, &spec).unwrap();
    let warp = spec.to_warp(0.0, s.duration_ms());
    let back = apply_warp(&moved, &warp).unwrap();
    let x = s.channel(0);
    let z = back.channel(0);
    let sd = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    // skip the clamped ends
    let margin = ((offset_ms.abs() + rate_ms_per_s.abs() * 120.0) / 10.0).ceil() as usize + 2;
    for i in margin..x.len() - margin {
        prop_assert!((x[i] - z[i]).abs() < 0.05 * sd, "sample {i}: {} vs {}", x[i], z[i]);
    }
    Ok(())
}

pub fn prop_signal_round_trip(seed: u64, channels: usize, len: usize, fs_index: usize, t0: f64) -> Result<(), TestCaseError> {
    let fs = [1.0, 50.0, 100.0, 128.0, 200.0, 250.0, 1000.0][fs_index];
    let values = gaussian(channels * len, seed);
    let data = Array2::from_shape_fn((channels, len), |(c, i)| values[c * len + i] * 10.0);
    let s = Signal::new(data, fs, t0).unwrap();

    let mut buf = Vec::new();
    write_signal_csv(&mut buf, &s).unwrap();
    let back = read_signal_csv(buf.as_slice()).unwrap();
    prop_assert_eq!(back.data(), s.data());
    prop_assert!((back.fs() - fs).abs() < 1e-6 * fs);
    prop_assert_eq!(back.t0(), t0);

    let (header, bytes) = signal_to_bin(&s);
    let back = signal_from_bin(&header, &bytes).unwrap();
    for (a, b) in back.data().iter().zip(s.data()) {
        prop_assert_eq!(*a, *b as f32 as f64);
    }
    prop_assert_eq!(back.fs(), fs);
    Ok(())
}

pub fn random_warp(seed: u64, models: usize) -> (PiecewiseWarp, Vec<Knot>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = 5;
    let mut knots_t = Vec::new();
    let mut labels = Vec::new();
    let mut poly = Vec::new();
    let mut knots = Vec::new();
    for m in 0..models {
        let coeffs = vec![rng.random_range(-1e3..1e3), rng.random_range(-1e-3..1e-3), rng.random_range(-1e-9..1e-9)];
        let start = (m * per) as f64 * 1e4;
        poly.push(PolyModel::new(coeffs.clone(), (start, start + (per - 1) as f64 * 1e4)));
        for k in 0..per {
            let t = start + k as f64 * 1e4;
            knots_t.push(t);
            let outlier = rng.random_bool(0.2) && k > 0;
            labels.push(if outlier { Label::Outlier } else { Label::Model(m) });
            knots.push(Knot { time_ms: t, value_ms: rng.random_range(-1e3..1e3), score: rng.random(), valid: !outlier });
        }
    }
    let warp = PiecewiseWarp { family: 2, models: poly, knots: knots_t, labels, origin_ms: rng.random_range(0.0..1e12) };
    (warp, knots)
}

pub fn prop_warp_json_round_trip(seed: u64, models: usize) -> Result<(), TestCaseError> {
    let (warp, knots) = random_warp(seed, models);
    let text = warp_to_json(&warp, &knots).unwrap();
    let doc = warp_from_json(&text).unwrap();
    prop_assert_eq!(&doc.warp, &warp);
    prop_assert_eq!(&doc.knots, &knots);
    Ok(())
}

pub fn prop_config_round_trip(seed: u64) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = [Mode::Idcca, Mode::Dcca, Mode::Bdcca, Mode::Plw, Mode::Nlw];
    let cfg = RunConfig {
        w_ms: rng.random_range(1000.0..20_000.0),
        z_ms: rng.random_range(1e5..1e7),
        lambda: rng.random_range(0.05..0.95),
        beta: rng.random(),
        lr: rng.random_range(1e-5..1e-2),
        epochs: rng.random_range(0..100),
        threshold: rng.random(),
        gamma: rng.random_range(1.0..500.0),
        h_l: rng.random_range(1.0..5000.0),
        max_curvature: rng.random_bool(0.5).then(|| rng.random_range(0.0..1e-6)),
        seed: rng.random(),
        sequential: rng.random(),
        mode: modes[rng.random_range(0..modes.len())],
        ..Default::default()
    };
    let back = RunConfig::parse_text(&cfg.to_text()).unwrap();
    prop_assert_eq!(back, cfg);
    Ok(())
}

/// Run one property `cases` times outside the `proptest!` macro.
pub fn run_property<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}
