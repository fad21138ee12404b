//! 28 GHz statistical channel: distance-based path loss with lognormal
//! shadowing, the LOS/NLOS/outage link-state model, long-term beamforming
//! gain, the conservative (full-load) interference model, SINR and the
//! capacity abstraction.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::units::{db_to_linear, dbm_to_mw, linear_to_db, THERMAL_NOISE_DBM_PER_HZ};

/// Coefficients of `alpha + beta * 10 log10(d) + xi`, `xi ~ N(0, sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossParams {
    /// Intercept, dB.
    pub alpha: f64,
    /// Slope, unitless.
    pub beta: f64,
    /// Shadowing standard deviation, dB.
    pub sigma: f64,
}

impl PathLossParams {
    pub const NLOS_28GHZ: PathLossParams = PathLossParams { alpha: 72.0, beta: 2.92, sigma: 8.7 };
    pub const LOS_28GHZ: PathLossParams = PathLossParams { alpha: 61.4, beta: 2.0, sigma: 5.8 };

    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma >= 0.0) {
            return Err(format!("path loss sigma must be >= 0, got {}", self.sigma));
        }
        if !(self.beta > 0.0) {
            return Err(format!("path loss beta must be > 0, got {}", self.beta));
        }
        Ok(())
    }
}

/// Parameters of the three-state blockage model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkStateParams {
    /// 1/m.
    pub a_out: f64,
    pub b_out: f64,
    /// 1/m.
    pub a_los: f64,
}

impl LinkStateParams {
    pub const DENSE_URBAN_28GHZ: LinkStateParams =
        LinkStateParams { a_out: 0.0334, b_out: 5.2, a_los: 0.0149 };

    pub fn validate(&self) -> Result<(), String> {
        if !(self.a_out > 0.0 && self.a_los > 0.0) {
            return Err("link-state parameters a_out and a_los must be > 0".into());
        }
        Ok(())
    }

    /// `(p_los, p_nlos, p_out)` at distance `d` meters.
    ///
    /// `p_out = max(0, 1 - exp(-a_out d + b_out))`,
    /// `p_los = (1 - p_out) exp(-a_los d)`, NLOS takes the remainder.
    pub fn probabilities(&self, d: f64) -> (f64, f64, f64) {
        let p_out = (1.0 - (-self.a_out * d + self.b_out).exp()).max(0.0);
        let p_los = (1.0 - p_out) * (-self.a_los * d).exp();
        let p_nlos = (1.0 - p_out - p_los).max(0.0);
        (p_los, p_nlos, p_out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkState {
    Los,
    Nlos,
    Outage,
}

impl LinkState {
    pub fn as_str(&self) -> &'static str {
        match self {
            LinkState::Los => "los",
            LinkState::Nlos => "nlos",
            LinkState::Outage => "outage",
        }
    }
}

/// Per-node-kind radio front end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioConfig {
    /// dBm.
    pub tx_power: f64,
    /// Elements of a square half-wavelength planar array.
    pub n_antennas: u32,
    /// dB.
    pub noise_figure: f64,
}

impl RadioConfig {
    pub const BASE_STATION: RadioConfig = RadioConfig { tx_power: 30.0, n_antennas: 64, noise_figure: 5.0 };
    pub const USER: RadioConfig = RadioConfig { tx_power: 20.0, n_antennas: 16, noise_figure: 7.0 };

    pub fn validate(&self) -> Result<(), String> {
        let side = (self.n_antennas as f64).sqrt().round() as u32;
        if self.n_antennas == 0 || side * side != self.n_antennas {
            return Err(format!(
                "antenna count must be a positive perfect square, got {}",
                self.n_antennas
            ));
        }
        Ok(())
    }
}

/// Capacity abstraction `eta * W * log2(1 + 10^((SINR - delta_loss) / 10))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateParams {
    pub eta: f64,
    /// dB.
    pub delta_loss: f64,
    /// Total bandwidth, Hz.
    pub w_max: f64,
    /// Hz.
    pub carrier: f64,
}

impl Default for RateParams {
    fn default() -> Self {
        RateParams { eta: 0.8, delta_loss: 3.0, w_max: 1.0e9, carrier: 28.0e9 }
    }
}

impl RateParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(format!("eta must lie in (0, 1], got {}", self.eta));
        }
        if !(self.w_max > 0.0) {
            return Err(format!("w_max must be > 0, got {}", self.w_max));
        }
        Ok(())
    }
}

/// Full-band, full-power budget of one directed link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    /// dB, shadowing included.
    pub path_loss: f64,
    /// dB.
    pub bf_gain: f64,
    /// dBm.
    pub rx_power: f64,
    /// mW.
    pub interference: f64,
    /// mW.
    pub noise: f64,
    /// dB.
    pub sinr: f64,
    /// bits/s/Hz.
    pub spectral_efficiency: f64,
}

impl LinkBudget {
    pub fn compute(
        path_loss: f64,
        tx: &RadioConfig,
        rx: &RadioConfig,
        interference: f64,
        rate: &RateParams,
    ) -> LinkBudget {
        let bf_gain = beamforming_gain_db(tx.n_antennas, rx.n_antennas);
        let rx_power = tx.tx_power + bf_gain - path_loss;
        let noise = noise_power_mw(rate.w_max, rx.noise_figure);
        let sinr = sinr_db(dbm_to_mw(rx_power), interference, noise);
        LinkBudget {
            path_loss,
            bf_gain,
            rx_power,
            interference,
            noise,
            sinr,
            spectral_efficiency: spectral_efficiency(sinr, rate),
        }
    }

    /// A budget with only the SINR meaningful; for hand-built topologies.
    pub fn from_sinr(sinr: f64, rate: &RateParams) -> LinkBudget {
        LinkBudget {
            path_loss: f64::NAN,
            bf_gain: 0.0,
            rx_power: f64::NAN,
            interference: 0.0,
            noise: f64::NAN,
            sinr,
            spectral_efficiency: spectral_efficiency(sinr, rate),
        }
    }

    /// A budget with a prescribed spectral efficiency (bits/s/Hz).
    pub fn from_spectral_efficiency(rho: f64) -> LinkBudget {
        LinkBudget {
            path_loss: f64::NAN,
            bf_gain: 0.0,
            rx_power: f64::NAN,
            interference: 0.0,
            noise: f64::NAN,
            sinr: f64::NAN,
            spectral_efficiency: rho,
        }
    }
}

/// `alpha + beta * 10 log10(d) + xi`; distances under 1 m are clamped.
pub fn path_loss_db(d: f64, p: &PathLossParams, xi: f64) -> f64 {
    p.alpha + p.beta * 10.0 * d.max(1.0).log10() + xi
}

pub fn sample_link_state<R: Rng + ?Sized>(d: f64, p: &LinkStateParams, rng: &mut R) -> LinkState {
    let (p_los, p_nlos, _) = p.probabilities(d);
    let u: f64 = rng.gen();
    if u < p_los {
        LinkState::Los
    } else if u < p_los + p_nlos {
        LinkState::Nlos
    } else {
        LinkState::Outage
    }
}

/// Draws `xi ~ N(0, sigma^2)`. Always consumes one normal variate so the
/// random stream does not depend on `sigma`.
pub fn sample_shadowing<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    if sigma == 0.0 {
        0.0
    } else {
        sigma * z
    }
}

/// Full array gain of both ends: `10 log10(n_tx) + 10 log10(n_rx)`.
pub fn beamforming_gain_db(n_tx: u32, n_rx: u32) -> f64 {
    linear_to_db(n_tx.max(1) as f64) + linear_to_db(n_rx.max(1) as f64)
}

/// Thermal noise over `w` Hz with noise figure `nf` dB.
pub fn noise_power_mw(w: f64, nf: f64) -> f64 {
    dbm_to_mw(noise_floor_dbm(w, nf))
}

pub fn noise_floor_dbm(w: f64, nf: f64) -> f64 {
    THERMAL_NOISE_DBM_PER_HZ + linear_to_db(w) + nf
}

pub fn sinr_db(rx_power_mw: f64, interference_mw: f64, noise_mw: f64) -> f64 {
    linear_to_db(rx_power_mw / (interference_mw + noise_mw))
}

/// bits/s/Hz. Capacity on an allocation of `W` Hz is `W` times this value.
pub fn spectral_efficiency(sinr: f64, rp: &RateParams) -> f64 {
    rp.eta * (1.0 + db_to_linear(sinr - rp.delta_loss)).log2()
}

/// Received power (mW) at a victim from an interferer at full power with
/// omnidirectional gains at both ends; blocked paths contribute nothing.
pub fn omni_received_mw(tx_power_dbm: f64, state: LinkState, path_loss: f64) -> f64 {
    match state {
        LinkState::Outage => 0.0,
        _ => dbm_to_mw(tx_power_dbm - path_loss),
    }
}

/// Per-pair channel realization, fixed for a drop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairChannel {
    pub state: LinkState,
    /// Distance, m.
    pub distance: f64,
    /// dB including shadowing; infinite for outage.
    pub path_loss: f64,
}

/// Symmetric table of pair channels over `n` nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMap {
    n: usize,
    pairs: Vec<PairChannel>,
}

impl ChannelMap {
    pub fn new(n: usize, mut f: impl FnMut(usize, usize) -> PairChannel) -> ChannelMap {
        let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                pairs.push(f(i, j));
            }
        }
        ChannelMap { n, pairs }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn index(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        // row-major upper triangle without the diagonal
        a * (2 * self.n - a - 1) / 2 + (b - a - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> &PairChannel {
        assert_ne!(i, j, "no self channel");
        &self.pairs[self.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, pc: PairChannel) {
        let k = self.index(i, j);
        self.pairs[k] = pc;
    }
}

/// Worst-case average interference (mW) at `victim`: every other node
/// transmits at full power, omnidirectional gains, pair path losses from the
/// drop's channel map.
pub fn max_avg_interference(tx_powers_dbm: &[f64], channels: &ChannelMap, victim: usize) -> f64 {
    (0..tx_powers_dbm.len())
        .filter(|&n| n != victim)
        .map(|n| {
            let pc = channels.get(n, victim);
            omni_received_mw(tx_powers_dbm[n], pc.state, pc.path_loss)
        })
        .sum()
}

/// Inverse of [`spectral_efficiency`]: the SINR (dB) achieving `rho`.
pub fn sinr_for_spectral_efficiency(rho: f64, rp: &RateParams) -> f64 {
    linear_to_db((rho / rp.eta).exp2() - 1.0) + rp.delta_loss
}
