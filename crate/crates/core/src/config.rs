//! Flat `key = value` run configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::correlation::Ridge;
use crate::error::{Error, Result};
use crate::model_fit::EnergyConfig;
use crate::transform::{Architecture, TrainConfig, TrainMode};

/// Alignment method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Identity transforms.
    Idcca,
    /// First transform trained.
    Dcca,
    /// Both transforms trained.
    Bdcca,
    /// Windowed correlation lags joined linearly.
    Plw,
    /// Approximate dynamic time warping.
    Nlw,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Idcca => "idcca",
            Self::Dcca => "dcca",
            Self::Bdcca => "bdcca",
            Self::Plw => "plw",
            Self::Nlw => "nlw",
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Self::Dcca | Self::Bdcca)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    /// Case and hyphen insensitive: `I-DCCA`, `idcca`, `B-DCCA`, ...
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "idcca" => Ok(Self::Idcca),
            "dcca" => Ok(Self::Dcca),
            "bdcca" => Ok(Self::Bdcca),
            "plw" => Ok(Self::Plw),
            "nlw" => Ok(Self::Nlw),
            _ => Err(Error::invalid(format!("unknown mode '{s}' (idcca, dcca, bdcca, plw, nlw)"))),
        }
    }
}

/// Every hyperparameter of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub w_ms: f64,
    pub z_ms: f64,
    pub lambda: f64,
    pub max_drift_ms_per_hr: f64,
    /// Carry each super-segment's fitted shift into the next one.
    pub sequential: bool,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub outer_iterations: usize,
    pub batch_size: usize,
    pub early_stop: f64,
    pub threshold: f64,
    /// Relative ridge added to covariance diagonals.
    pub ridge: f64,
    pub hidden: usize,
    pub kernel: usize,
    pub blocks: usize,
    pub head_layers: usize,
    pub h_l: f64,
    pub c_smooth: f64,
    pub smooth_weight: f64,
    pub gamma: f64,
    pub family: usize,
    pub n_neighbors: usize,
    pub max_curvature: Option<f64>,
    pub pearl_iterations: usize,
    pub dtw_radius: usize,
    /// NLW knot spacing in samples.
    pub knot_step: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            w_ms: 10_000.0,
            z_ms: 300_000.0,
            lambda: 0.5,
            max_drift_ms_per_hr: 3600.0,
            sequential: true,
            beta: 0.1,
            lr: 0.0004,
            epochs: 25,
            outer_iterations: 1,
            batch_size: 8,
            early_stop: 1e-5,
            threshold: 0.3,
            ridge: 1e-4,
            hidden: 16,
            kernel: 11,
            blocks: 15,
            head_layers: 3,
            h_l: 50.0,
            c_smooth: 10.0,
            smooth_weight: 1.0,
            gamma: 10.0,
            family: 2,
            n_neighbors: 2,
            max_curvature: None,
            pearl_iterations: 50,
            dtw_radius: 30,
            knot_step: 100,
            seed: 0,
            mode: Mode::Dcca,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::invalid(format!("bad value '{v}' for key '{key}'")))
}

impl RunConfig {
    /// Set one key from its text value. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "w_ms" => self.w_ms = parse(key, v)?,
            "z_ms" => self.z_ms = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "max_drift_ms_per_hr" => self.max_drift_ms_per_hr = parse(key, v)?,
            "sequential" => self.sequential = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "outer_iterations" => self.outer_iterations = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "early_stop" => self.early_stop = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "ridge" => self.ridge = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "kernel" => self.kernel = parse(key, v)?,
            "blocks" => self.blocks = parse(key, v)?,
            "head_layers" => self.head_layers = parse(key, v)?,
            "h_L" | "h_l" => self.h_l = parse(key, v)?,
            "c_smooth" => self.c_smooth = parse(key, v)?,
            "smooth_weight" => self.smooth_weight = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "family" => self.family = parse(key, v)?,
            "n_neighbors" => self.n_neighbors = parse(key, v)?,
            "max_curvature" => {
                self.max_curvature = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "pearl_iterations" => self.pearl_iterations = parse(key, v)?,
            "dtw_radius" => self.dtw_radius = parse(key, v)?,
            "knot_step" => self.knot_step = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "mode" => self.mode = v.parse()?,
            _ => return Err(Error::invalid(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| match e {
                Error::InvalidInput(m) => Error::InvalidInput(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        let lines = [
            ("w_ms", self.w_ms.to_string()),
            ("z_ms", self.z_ms.to_string()),
            ("lambda", self.lambda.to_string()),
            ("max_drift_ms_per_hr", self.max_drift_ms_per_hr.to_string()),
            ("sequential", self.sequential.to_string()),
            ("beta", self.beta.to_string()),
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("outer_iterations", self.outer_iterations.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("early_stop", self.early_stop.to_string()),
            ("threshold", self.threshold.to_string()),
            ("ridge", self.ridge.to_string()),
            ("hidden", self.hidden.to_string()),
            ("kernel", self.kernel.to_string()),
            ("blocks", self.blocks.to_string()),
            ("head_layers", self.head_layers.to_string()),
            ("h_L", self.h_l.to_string()),
            ("c_smooth", self.c_smooth.to_string()),
            ("smooth_weight", self.smooth_weight.to_string()),
            ("gamma", self.gamma.to_string()),
            ("family", self.family.to_string()),
            ("n_neighbors", self.n_neighbors.to_string()),
            ("max_curvature", opt(self.max_curvature)),
            ("pearl_iterations", self.pearl_iterations.to_string()),
            ("dtw_radius", self.dtw_radius.to_string()),
            ("knot_step", self.knot_step.to_string()),
            ("seed", self.seed.to_string()),
            ("mode", self.mode.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0) {
            return Err(Error::invalid("ridge must be >= 0"));
        }
        if self.knot_step == 0 {
            return Err(Error::invalid("knot_step must be >= 1"));
        }
        self.architecture(1).validate()?;
        self.train_config().validate()?;
        self.energy_config().validate()
    }

    pub fn architecture(&self, channels: usize) -> Architecture {
        Architecture {
            channels,
            hidden: self.hidden,
            kernel: self.kernel,
            blocks: self.blocks,
            head_layers: self.head_layers,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            beta: self.beta,
            lr: self.lr,
            epochs: self.epochs,
            outer_iterations: self.outer_iterations,
            threshold: self.threshold,
            seed: self.seed,
            ridge: Ridge::Relative(self.ridge),
            batch_size: self.batch_size,
            early_stop: self.early_stop,
            mode: if self.mode == Mode::Bdcca { TrainMode::Both } else { TrainMode::First },
        }
    }

    pub fn energy_config(&self) -> EnergyConfig {
        EnergyConfig {
            label_cost: self.h_l,
            c_smooth: self.c_smooth,
            smooth_weight: self.smooth_weight,
            gamma: self.gamma,
            n_neighbors: self.n_neighbors,
            family: self.family,
            max_curvature: self.max_curvature,
            max_iterations: self.pearl_iterations,
            ..EnergyConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig { w_ms: 5000.5, mode: Mode::Nlw, max_curvature: Some(1e-9), ..Default::default() };
        cfg.seed = 42;
        assert_eq!(RunConfig::parse_text(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::parse_text("").unwrap(), RunConfig::default());
    }

    #[test]
    fn comments_and_modes() {
        let cfg = RunConfig::parse_text("# hi\nmode = I-DCCA  # identity\nh_L=20\n").unwrap();
        assert_eq!(cfg.mode, Mode::Idcca);
        assert_eq!(cfg.h_l, 20.0);
    }

    #[test]
    fn unknown_or_bad_keys_are_rejected() {
        let e = RunConfig::parse_text("w_ms = 1000\nwindow = 3\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(RunConfig::parse_text("epochs = -1").is_err());
        assert!(RunConfig::parse_text("beta = 2").is_err());
        assert!(RunConfig::parse_text("just words").is_err());
    }
}
