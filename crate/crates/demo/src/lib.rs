//! WebAssembly entry points for the browser demo in `www/`.
//!
//! Each export returns JSON. The `*_json` functions hold the logic and are
//! plain Rust so they can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dtdd::baselines;
use dtdd::channel::{self, LinkState};
use dtdd::harness::{self, RunOptions, Schemes};
use dtdd::schedule::Mode;
use dtdd::topology::{Direction, NodeKind};
use dtdd::ScenarioConfig;

#[derive(Serialize)]
struct Curves {
    distance: Vec<f64>,
    path_loss_los: Vec<f64>,
    path_loss_nlos: Vec<f64>,
    p_los: Vec<f64>,
    p_nlos: Vec<f64>,
    p_out: Vec<f64>,
    /// bits/s/Hz of a base-station-to-user downlink, noise only.
    rho_los: Vec<f64>,
    rho_nlos: Vec<f64>,
}

/// Median path loss, state probabilities and noise-limited downlink spectral
/// efficiency at `points` distances up to `max_distance` meters.
pub fn channel_curves_json(max_distance: f64, points: usize) -> Result<String, String> {
    if !(max_distance > 1.0) || points < 2 {
        return Err("need max_distance > 1 and at least 2 points".into());
    }
    let cfg = ScenarioConfig::case1();
    let ch = &cfg.channel;
    let rate = ch.rate_params();
    let (bs, ue) = (cfg.radio.bs, cfg.radio.ue);
    let gain = channel::beamforming_gain_db(bs.n_antennas, ue.n_antennas);
    let noise = channel::noise_power_mw(rate.w_max, ue.noise_figure);
    let rho = |pl: f64| {
        let rx = 10f64.powf((bs.tx_power + gain - pl) / 10.0);
        channel::spectral_efficiency(channel::sinr_db(rx, 0.0, noise), &rate)
    };
    let mut c = Curves {
        distance: Vec::new(),
        path_loss_los: Vec::new(),
        path_loss_nlos: Vec::new(),
        p_los: Vec::new(),
        p_nlos: Vec::new(),
        p_out: Vec::new(),
        rho_los: Vec::new(),
        rho_nlos: Vec::new(),
    };
    for k in 0..points {
        let d = 1.0 + (max_distance - 1.0) * k as f64 / (points - 1) as f64;
        let (pl_l, pl_n) = (channel::path_loss_db(d, &ch.los, 0.0), channel::path_loss_db(d, &ch.nlos, 0.0));
        let (pl, pn, po) = ch.link_state.probabilities(d);
        c.distance.push(d);
        c.path_loss_los.push(pl_l);
        c.path_loss_nlos.push(pl_n);
        c.p_los.push(pl);
        c.p_nlos.push(pn);
        c.p_out.push(po);
        c.rho_los.push(rho(pl_l));
        c.rho_nlos.push(rho(pl_n));
    }
    serde_json::to_string(&c).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct DemoNode {
    id: usize,
    kind: &'static str,
    x: f64,
    y: f64,
    parent: Option<usize>,
    state: &'static str,
}

#[derive(Serialize)]
struct DemoFlow {
    ue: usize,
    direction: &'static str,
    hops: usize,
    dtdd_mbps: f64,
    static_mbps: f64,
}

#[derive(Serialize)]
struct DemoDrop {
    area_side: f64,
    nodes: Vec<DemoNode>,
    /// One string per base station or relay, `+` TX, `-` RX.
    schedule: Vec<String>,
    flows: Vec<DemoFlow>,
    dtdd_utility: f64,
    inner_calls: usize,
    static_configs: usize,
    best_static: String,
    best_static_utility: f64,
}

/// One seeded drop solved by the dynamic scheduler and the static sweep.
pub fn simulate_drop_json(seed: u64, drop: usize, n_rn: usize, n_ue: usize) -> Result<String, String> {
    let mut cfg = ScenarioConfig::case1();
    cfg.experiment.seed = seed;
    cfg.deployment.n_rn = n_rn;
    cfg.deployment.n_ue = n_ue;
    cfg.validate().map_err(|e| e.to_string())?;
    let opts = RunOptions::new(Schemes { dtdd: true, static_sweep: true, brute: false });
    let o = harness::run_drop(&cfg, drop, &opts, &baselines::default_patterns()).map_err(|e| e.to_string())?;
    let t = &o.topology;
    let st = o.dtdd.as_ref().expect("dynamic scheme ran");
    let sw = o.static_sweep.as_ref().expect("static sweep ran");
    let avg = sw.average_rates();

    let nodes = t
        .nodes
        .iter()
        .map(|n| DemoNode {
            id: n.id,
            kind: match n.kind {
                NodeKind::Bs => "bs",
                NodeKind::Rn => "rn",
                NodeKind::Ue => "ue",
            },
            x: n.position[0],
            y: n.position[1],
            parent: t.parent[n.id],
            state: match n.kind {
                NodeKind::Ue => t.ue_state(n.id).as_str(),
                NodeKind::Rn => t.links[t.down_link(n.id).unwrap()].state.as_str(),
                NodeKind::Bs => LinkState::Los.as_str(),
            },
        })
        .collect();
    let schedule = t
        .access_points()
        .map(|a| st.schedule.row(a).iter().map(|&m| if m == Mode::Tx { '+' } else { '-' }).collect())
        .collect();
    let flows = t
        .flows
        .iter()
        .map(|f| DemoFlow {
            ue: f.ue,
            direction: if f.direction == Direction::Dl { "dl" } else { "ul" },
            hops: f.path.len(),
            dtdd_mbps: st.allocation.flow_rates[f.id] / 1e6,
            static_mbps: avg[f.id] / 1e6,
        })
        .collect();
    let d = DemoDrop {
        area_side: cfg.deployment.area_side,
        nodes,
        schedule,
        flows,
        dtdd_utility: st.utility,
        inner_calls: st.inner_calls,
        static_configs: sw.outcomes.len(),
        best_static: sw.best().config.label(),
        best_static_utility: sw.best().utility,
    };
    serde_json::to_string(&d).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn channel_curves(max_distance: f64, points: usize) -> Result<String, JsError> {
    channel_curves_json(max_distance, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate_drop(seed: u64, drop: usize, n_rn: usize, n_ue: usize) -> Result<String, JsError> {
    simulate_drop_json(seed, drop, n_rn, n_ue).map_err(|e| JsError::new(&e))
}

/// bits/s/Hz at `sinr_db` for the given efficiency factor and loss margin.
#[wasm_bindgen]
pub fn spectral_efficiency(sinr_db: f64, eta: f64, delta_loss_db: f64) -> f64 {
    let rp = channel::RateParams { eta, delta_loss: delta_loss_db, ..Default::default() };
    channel::spectral_efficiency(sinr_db, &rp)
}
