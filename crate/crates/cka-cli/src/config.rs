//! Run configuration: a single TOML file with explicit field names.

use anyhow::{bail, Context};
use cka_core::channel::ChannelConfig;
use cka_core::network::NetworkTopology;
use cka_core::source::SourceConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSweep {
    pub start_db: f64,
    pub stop_db: f64,
    pub step_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Tolerances {
    /// Relative tolerance for click-probability phase averages.
    pub click: Option<f64>,
    /// Relative tolerance for transition-matrix entries.
    pub transition: Option<f64>,
}

fn default_workers() -> usize {
    0
}
fn default_seed() -> u64 {
    1
}
fn default_mc_trials() -> u64 {
    200_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub users: usize,
    pub layers: u32,
    pub u_max: f64,
    pub slices: usize,
    pub cut_x: usize,
    pub cut_y: usize,
    pub p_dark: f64,
    pub n_bar: usize,
    pub loss: LossSweep,
    /// 0 means one worker per CPU.
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Trials used by the `validate` subcommand's Monte Carlo check.
    #[serde(default = "default_mc_trials")]
    pub mc_trials: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output_path: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).context("cannot parse config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let n_det = 1usize
            .checked_shl(self.layers)
            .filter(|_| self.layers >= 1 && self.layers <= 20)
            .context("field `layers`: must be in 1..=20")?;
        if self.users == 0 || self.users > n_det {
            bail!("field `users`: must be in 1..={n_det} for {} layers", self.layers);
        }
        if self.slices < 2 || !self.slices.is_multiple_of(2) {
            bail!("field `slices`: must be an even integer >= 2");
        }
        for (name, v) in [("cut_x", self.cut_x), ("cut_y", self.cut_y)] {
            if v == 0 || v >= self.slices {
                bail!("field `{name}`: must be in 1..={}", self.slices - 1);
            }
        }
        if !(self.p_dark >= 0.0 && self.p_dark < 1.0) {
            bail!("field `p_dark`: must lie in [0, 1)");
        }
        if !(self.u_max >= 0.0) || !self.u_max.is_finite() {
            bail!("field `u_max`: must be finite and nonnegative");
        }
        if self.n_bar == 0 || self.n_bar > 8 {
            bail!("field `n_bar`: must be in 1..=8");
        }
        if !(self.loss.start_db >= 0.0) || self.loss.stop_db < self.loss.start_db {
            bail!("table `loss`: need 0 <= start_db <= stop_db");
        }
        if !(self.loss.step_db > 0.0) {
            bail!("table `loss`: step_db must be positive");
        }
        if self.mc_trials == 0 {
            bail!("field `mc_trials`: must be at least 1");
        }
        for (name, t) in [
            ("tolerances.click", self.tolerances.click),
            ("tolerances.transition", self.tolerances.transition),
        ] {
            if let Some(t) = t {
                if !(t > 0.0 && t < 1.0) {
                    bail!("field `{name}`: must lie in (0, 1)");
                }
            }
        }
        Ok(())
    }

    pub fn channel_config(&self, loss_db: f64) -> anyhow::Result<ChannelConfig> {
        let topology = NetworkTopology::new(self.layers, self.users)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let source =
            SourceConfig::new(self.u_max, self.slices).map_err(|e| anyhow::anyhow!("{e}"))?;
        ChannelConfig::uniform(topology, source, loss_db, self.p_dark)
            .map_err(|e| anyhow::anyhow!("{e}"))
    }

    pub fn loss_points(&self) -> Vec<f64> {
        let mut points = Vec::new();
        let mut i = 0u64;
        loop {
            let loss = self.loss.start_db + i as f64 * self.loss.step_db;
            if loss > self.loss.stop_db + 1e-9 {
                break;
            }
            points.push(loss);
            i += 1;
        }
        points
    }
}

pub fn init_workers(workers: usize) {
    if workers > 0 {
        // Ignore the error if a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}
