//! Scenario configuration (TOML) and the shipped presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{LinkStateParams, PathLossParams, RadioConfig, RateParams};
use crate::error::{Error, Result};
use crate::scheduler::SchedulerSettings;
use crate::solver::SolverSettings;

pub const CASE1_2RN: &str = include_str!("../data/case1_2rn.toml");
pub const CASE2_4RN: &str = include_str!("../data/case2_4rn.toml");
pub const BRUTE_4SF: &str = include_str!("../data/brute_4sf.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub radio: Radios,
    pub channel: ChannelConfig,
    pub frame: FrameConfig,
    pub deployment: DeploymentConfig,
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub scheduler: SchedulerSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Radios {
    /// Shared by the base station and relays.
    pub bs: RadioConfig,
    pub ue: RadioConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub bandwidth_hz: f64,
    pub carrier_hz: f64,
    pub eta: f64,
    pub delta_loss_db: f64,
    pub nlos: PathLossParams,
    pub los: PathLossParams,
    pub link_state: LinkStateParams,
}

impl ChannelConfig {
    pub fn rate_params(&self) -> RateParams {
        RateParams {
            eta: self.eta,
            delta_loss: self.delta_loss_db,
            w_max: self.bandwidth_hz,
            carrier: self.carrier_hz,
        }
    }

    pub fn path_loss(&self, state: crate::channel::LinkState) -> &PathLossParams {
        match state {
            crate::channel::LinkState::Los => &self.los,
            _ => &self.nlos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    pub frame_period_ms: f64,
    pub subframe_period_ms: f64,
    /// Subframes the dynamic scheduler may use per frame.
    pub usable_subframes: usize,
}

impl FrameConfig {
    /// `T_f / T_sf`.
    pub fn subframes_per_frame(&self) -> usize {
        (self.frame_period_ms / self.subframe_period_ms).round() as usize
    }

    /// Converts a per-subframe capacity into a frame-averaged rate.
    pub fn rate_scale(&self) -> f64 {
        self.subframe_period_ms / self.frame_period_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentConfig {
    /// Side of the square (toroidal) deployment area, m.
    pub area_side: f64,
    /// Minimum wrap distance between a relay and the base station, m.
    pub min_rn_distance: f64,
    pub n_rn: usize,
    pub n_ue: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub drops: usize,
    pub seed: u64,
    #[serde(default)]
    pub brute_force: bool,
    /// Static TDD pattern file; the shipped LTE table when absent.
    #[serde(default)]
    pub static_patterns: Option<String>,
    /// Sweep only static patterns with as many usable subframes as the
    /// dynamic scheduler gets.
    #[serde(default = "yes")]
    pub static_usable_only: bool,
}

fn yes() -> bool {
    true
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<ScenarioConfig> {
        let cfg: ScenarioConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn case1() -> ScenarioConfig {
        Self::from_toml_str(CASE1_2RN).expect("shipped preset parses")
    }

    pub fn case2() -> ScenarioConfig {
        Self::from_toml_str(CASE2_4RN).expect("shipped preset parses")
    }

    pub fn brute_study() -> ScenarioConfig {
        Self::from_toml_str(BRUTE_4SF).expect("shipped preset parses")
    }

    pub fn preset(name: &str) -> Option<ScenarioConfig> {
        match name {
            "case1" | "2rn" => Some(Self::case1()),
            "case2" | "4rn" => Some(Self::case2()),
            "brute" => Some(Self::brute_study()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |r: std::result::Result<(), String>| r.map_err(Error::Config);
        check(self.radio.bs.validate())?;
        check(self.radio.ue.validate())?;
        check(self.channel.nlos.validate())?;
        check(self.channel.los.validate())?;
        check(self.channel.link_state.validate())?;
        check(self.channel.rate_params().validate())?;
        let f = &self.frame;
        if !(f.frame_period_ms > 0.0 && f.subframe_period_ms > 0.0) {
            return Err(Error::Config("frame and subframe periods must be > 0".into()));
        }
        if f.usable_subframes == 0 || f.usable_subframes > f.subframes_per_frame() {
            return Err(Error::Config(format!(
                "usable_subframes must lie in 1..={}",
                f.subframes_per_frame()
            )));
        }
        let d = &self.deployment;
        if !(d.area_side > 0.0) || !(d.min_rn_distance >= 0.0) {
            return Err(Error::Config("area_side must be > 0 and min_rn_distance >= 0".into()));
        }
        if self.experiment.drops == 0 {
            return Err(Error::Config("drops must be >= 1".into()));
        }
        check(self.solver.validate())?;
        check(self.scheduler.validate())?;
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
