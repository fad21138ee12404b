//! Seeded Monte-Carlo experiments: drops, schemes, metrics and output files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, BruteForceResult, StaticPattern, StaticSweep};
use crate::channel::LinkState;
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::scheduler::{run_dtdd, SearchState};
use crate::solver::{kkt_residual, InnerSolver};
use crate::topology::{build_topology, Direction, NodeKind, Topology};

/// Share of samples averaged into the cell-edge rate.
pub const EDGE_PERCENT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schemes {
    pub dtdd: bool,
    pub static_sweep: bool,
    pub brute: bool,
}

impl Schemes {
    pub const ALL: Schemes = Schemes { dtdd: true, static_sweep: true, brute: true };

    pub fn from_config(cfg: &ScenarioConfig) -> Schemes {
        Schemes { dtdd: true, static_sweep: true, brute: cfg.experiment.brute_force }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub schemes: Schemes,
    /// Keep per-drop move logs and topologies.
    pub trace: bool,
    /// Exhaustive search over every schedule instead of one per
    /// subframe-permutation class.
    pub brute_unreduced: bool,
}

impl RunOptions {
    pub fn new(schemes: Schemes) -> RunOptions {
        RunOptions { schemes, trace: false, brute_unreduced: false }
    }
}

/// Per-flow observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub drop: usize,
    pub ue: usize,
    pub direction: Direction,
    pub scheme: String,
    /// Frame-averaged bits/s.
    pub rate_bps: f64,
    /// SINR of the user's access link in this direction.
    pub sinr_db: f64,
    pub link_state: LinkState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Mean of the lowest 5% of samples (at least one).
    pub edge: f64,
}

/// Mean, linearly interpolated median and cell-edge rate; `None` for an
/// empty sample set.
pub fn compute_metrics(samples: &[f64]) -> Option<RateStats> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let pos = (n - 1) as f64 * 0.5;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let median = v[lo] + (v[hi] - v[lo]) * (pos - lo as f64);
    let k = ((n * EDGE_PERCENT + 99) / 100).max(1);
    let edge = v[..k].iter().sum::<f64>() / k as f64;
    Some(RateStats { count: n, mean, median, edge })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeMetrics {
    pub scheme: String,
    pub dl: Option<RateStats>,
    pub ul: Option<RateStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gain {
    pub mean: f64,
    pub median: f64,
    pub edge: f64,
}

/// Dynamic over static-average ratios on the same drops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub dl: Gain,
    pub ul: Gain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkStateFractions {
    pub los: f64,
    pub nlos: f64,
    pub outage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub mean_inner_calls: f64,
    pub max_inner_calls: usize,
    pub mean_accepted_moves: f64,
    pub half_duplex_violations: usize,
    /// Largest residual over converged dynamic-scheme incumbents.
    pub max_kkt_residual: f64,
    pub unconverged_solves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteComparison {
    pub drop: usize,
    pub greedy_utility: f64,
    pub brute_utility: f64,
    /// `greedy / brute`.
    pub ratio: f64,
    pub greedy_calls: usize,
    pub brute_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropSummary {
    pub drop: usize,
    pub served_ues: usize,
    pub outage_ues: usize,
    pub dtdd_utility: Option<f64>,
    /// Base-station and relay rows, `+` TX, `-` RX.
    pub dtdd_schedule: Option<String>,
    pub inner_calls: Option<usize>,
    pub static_configs: Option<usize>,
    pub static_mean_utility: Option<f64>,
    pub best_static: Option<String>,
    pub best_static_utility: Option<f64>,
    pub brute_utility: Option<f64>,
    pub brute_evaluated: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDrop {
    pub drop: usize,
    pub category: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub drops: usize,
    pub n_rn: usize,
    pub n_ue: usize,
    /// Subframes scheduled by the dynamic and exhaustive schemes.
    pub dynamic_subframes: usize,
    pub frame_subframes: usize,
    pub schemes: Vec<SchemeMetrics>,
    pub gains: Option<Gains>,
    pub link_states: LinkStateFractions,
    pub iterations: Option<IterationStats>,
    pub brute: Vec<BruteComparison>,
    pub per_drop: Vec<DropSummary>,
    pub skipped: Vec<SkippedDrop>,
    pub samples: Vec<FlowSample>,
}

impl MetricsReport {
    pub fn scheme(&self, name: &str) -> Option<&SchemeMetrics> {
        self.schemes.iter().find(|s| s.scheme == name)
    }

    /// `greedy / brute` utility ratio averaged over drops.
    pub fn mean_brute_ratio(&self) -> Option<f64> {
        (!self.brute.is_empty()).then(|| self.brute.iter().map(|b| b.ratio).sum::<f64>() / self.brute.len() as f64)
    }
}

/// Everything one drop produced.
#[derive(Debug, Clone)]
pub struct DropOutcome {
    pub drop: usize,
    pub topology: Topology,
    pub dtdd: Option<SearchState>,
    pub static_sweep: Option<StaticSweep>,
    pub brute: Option<BruteForceResult>,
    pub samples: Vec<FlowSample>,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: MetricsReport,
    pub outcomes: Vec<DropOutcome>,
}

/// Generator for drop `k`: the master seed with stream `k`, so a drop does
/// not depend on which other drops run.
pub fn drop_rng(seed: u64, drop: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(drop as u64);
    rng
}

pub fn solver_for(cfg: &ScenarioConfig) -> InnerSolver {
    InnerSolver::new(cfg.channel.bandwidth_hz, cfg.frame.rate_scale(), cfg.solver.clone())
}

pub fn static_patterns(cfg: &ScenarioConfig) -> Result<Vec<StaticPattern>> {
    match &cfg.experiment.static_patterns {
        Some(p) => baselines::load_patterns(Path::new(p)),
        None => Ok(baselines::default_patterns()),
    }
}

fn samples_for(topo: &Topology, drop: usize, scheme: &str, rates: &[f64]) -> Vec<FlowSample> {
    topo.flows
        .iter()
        .map(|f| {
            let access = match f.direction {
                Direction::Dl => topo.down_link(f.ue),
                Direction::Ul => topo.up_link(f.ue),
            }
            .expect("served user has access links");
            let link = &topo.links[access];
            FlowSample {
                drop,
                ue: f.ue,
                direction: f.direction,
                scheme: scheme.to_string(),
                rate_bps: rates[f.id],
                sinr_db: link.budget.sinr,
                link_state: link.state,
            }
        })
        .collect()
}

/// Runs one drop with the selected schemes.
pub fn run_drop(
    cfg: &ScenarioConfig,
    drop: usize,
    opts: &RunOptions,
    patterns: &[StaticPattern],
) -> Result<DropOutcome> {
    let mut rng = drop_rng(cfg.experiment.seed, drop);
    let topo = build_topology(cfg, &mut rng)?;
    if topo.flows.is_empty() {
        return Err(Error::Deployment("every user is in outage".into()));
    }
    let solver = solver_for(cfg);
    let n_dyn = cfg.frame.usable_subframes;
    let mut samples = Vec::new();

    let dtdd = if opts.schemes.dtdd {
        let mut st = run_dtdd(&topo, n_dyn, &solver, &cfg.scheduler)?;
        samples.extend(samples_for(&topo, drop, "dtdd", &st.allocation.flow_rates));
        if !opts.trace {
            st.trace.clear();
        }
        Some(st)
    } else {
        None
    };
    let static_sweep = if opts.schemes.static_sweep {
        let (configs, _) = baselines::enumerate_static_configs(
            patterns,
            &topo,
            cfg.frame.subframes_per_frame(),
            cfg.experiment.static_usable_only.then_some(n_dyn),
        )?;
        let sweep = baselines::best_static(&topo, &configs, &solver)?;
        samples.extend(samples_for(&topo, drop, "static", &sweep.average_rates()));
        samples.extend(samples_for(&topo, drop, "static-best", &sweep.best().allocation.flow_rates));
        Some(sweep)
    } else {
        None
    };
    let brute = if opts.schemes.brute {
        let b = baselines::brute_force(&topo, n_dyn, &solver, !opts.brute_unreduced)?;
        samples.extend(samples_for(&topo, drop, "brute", &b.allocation.flow_rates));
        Some(b)
    } else {
        None
    };
    Ok(DropOutcome { drop, topology: topo, dtdd, static_sweep, brute, samples })
}

/// Runs every drop (in parallel) and aggregates the report in drop order.
pub fn run_experiment(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Experiment> {
    cfg.validate()?;
    let patterns = static_patterns(cfg)?;
    if opts.schemes.brute {
        let rows = cfg.deployment.n_rn + 1;
        if cfg.frame.usable_subframes * rows > baselines::BRUTE_FORCE_LIMIT {
            return Err(Error::TooLarge(format!(
                "{} subframes x {} base-station/relay rows exceeds {}",
                cfg.frame.usable_subframes,
                rows,
                baselines::BRUTE_FORCE_LIMIT
            )));
        }
    }
    let results: Vec<Result<DropOutcome>> =
        (0..cfg.experiment.drops).into_par_iter().map(|k| run_drop(cfg, k, opts, &patterns)).collect();
    let mut outcomes = Vec::new();
    let mut skipped = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                log::warn!("drop {k} skipped: {e}");
                skipped.push(SkippedDrop { drop: k, category: e.category().into(), message: e.to_string() });
            }
        }
    }
    let report = aggregate(cfg, &outcomes, skipped);
    Ok(Experiment { report, outcomes })
}

fn scheme_metrics(samples: &[FlowSample], scheme: &str) -> Option<SchemeMetrics> {
    let rates = |d: Direction| -> Vec<f64> {
        samples.iter().filter(|s| s.scheme == scheme && s.direction == d).map(|s| s.rate_bps).collect()
    };
    let (dl, ul) = (rates(Direction::Dl), rates(Direction::Ul));
    if dl.is_empty() && ul.is_empty() {
        return None;
    }
    Some(SchemeMetrics { scheme: scheme.to_string(), dl: compute_metrics(&dl), ul: compute_metrics(&ul) })
}

fn ratio(a: &Option<RateStats>, b: &Option<RateStats>) -> Option<Gain> {
    let (a, b) = (a.as_ref()?, b.as_ref()?);
    Some(Gain { mean: a.mean / b.mean, median: a.median / b.median, edge: a.edge / b.edge })
}

/// Fractions of users whose serving link is LOS, NLOS or in outage,
/// averaged over drops.
pub fn link_state_fractions(topologies: &[&Topology]) -> LinkStateFractions {
    let mut acc = LinkStateFractions { los: 0.0, nlos: 0.0, outage: 0.0 };
    for t in topologies {
        let users: Vec<usize> = t.users().collect();
        let n = users.len().max(1) as f64;
        for u in users {
            match t.ue_state(u) {
                LinkState::Los => acc.los += 1.0 / n,
                LinkState::Nlos => acc.nlos += 1.0 / n,
                LinkState::Outage => acc.outage += 1.0 / n,
            }
        }
    }
    let d = topologies.len().max(1) as f64;
    LinkStateFractions { los: acc.los / d, nlos: acc.nlos / d, outage: acc.outage / d }
}

fn aggregate(cfg: &ScenarioConfig, outcomes: &[DropOutcome], skipped: Vec<SkippedDrop>) -> MetricsReport {
    let samples: Vec<FlowSample> = outcomes.iter().flat_map(|o| o.samples.iter().cloned()).collect();
    let schemes: Vec<SchemeMetrics> =
        ["dtdd", "static", "static-best", "brute"].iter().filter_map(|s| scheme_metrics(&samples, s)).collect();
    let find = |n: &str| schemes.iter().find(|s| s.scheme == n);
    let gains = match (find("dtdd"), find("static")) {
        (Some(d), Some(s)) => match (ratio(&d.dl, &s.dl), ratio(&d.ul, &s.ul)) {
            (Some(dl), Some(ul)) => Some(Gains { dl, ul }),
            _ => None,
        },
        _ => None,
    };

    let topos: Vec<&Topology> = outcomes.iter().map(|o| &o.topology).collect();
    let link_states = link_state_fractions(&topos);

    let searched: Vec<(&DropOutcome, &SearchState)> =
        outcomes.iter().filter_map(|o| o.dtdd.as_ref().map(|s| (o, s))).collect();
    let iterations = (!searched.is_empty()).then(|| {
        let n = searched.len() as f64;
        let solver = solver_for(cfg);
        let mut max_kkt: f64 = 0.0;
        let mut unconverged = 0;
        for (o, s) in &searched {
            if s.allocation.converged {
                let p = solver.problem(&o.topology, &s.schedule);
                max_kkt = max_kkt.max(kkt_residual(&p, &s.allocation).unwrap_or(f64::INFINITY));
            } else {
                unconverged += 1;
            }
        }
        IterationStats {
            mean_inner_calls: searched.iter().map(|(_, s)| s.inner_calls as f64).sum::<f64>() / n,
            max_inner_calls: searched.iter().map(|(_, s)| s.inner_calls).max().unwrap_or(0),
            mean_accepted_moves: searched.iter().map(|(_, s)| s.accepted_moves as f64).sum::<f64>() / n,
            half_duplex_violations: searched.iter().map(|(_, s)| s.half_duplex_violations).sum(),
            max_kkt_residual: max_kkt,
            unconverged_solves: unconverged,
        }
    });

    let brute = outcomes
        .iter()
        .filter_map(|o| {
            let (d, b) = (o.dtdd.as_ref()?, o.brute.as_ref()?);
            Some(BruteComparison {
                drop: o.drop,
                greedy_utility: d.utility,
                brute_utility: b.utility,
                ratio: d.utility / b.utility,
                greedy_calls: d.inner_calls,
                brute_evaluated: b.evaluated,
            })
        })
        .collect();

    let per_drop = outcomes
        .iter()
        .map(|o| {
            let t = &o.topology;
            let sw = o.static_sweep.as_ref();
            DropSummary {
                drop: o.drop,
                served_ues: t.users().filter(|&u| t.parent[u].is_some()).count(),
                outage_ues: t.outage_ues.len(),
                dtdd_utility: o.dtdd.as_ref().map(|s| s.utility),
                dtdd_schedule: o.dtdd.as_ref().map(|s| s.schedule.access_string(t)),
                inner_calls: o.dtdd.as_ref().map(|s| s.inner_calls),
                static_configs: sw.map(|s| s.outcomes.len()),
                static_mean_utility: sw.map(|s| s.outcomes.iter().map(|c| c.utility).sum::<f64>() / s.outcomes.len() as f64),
                best_static: sw.map(|s| s.best().config.label()),
                best_static_utility: sw.map(|s| s.best().utility),
                brute_utility: o.brute.as_ref().map(|b| b.utility),
                brute_evaluated: o.brute.as_ref().map(|b| b.evaluated),
            }
        })
        .collect();

    MetricsReport {
        seed: cfg.experiment.seed,
        drops: cfg.experiment.drops,
        n_rn: cfg.deployment.n_rn,
        n_ue: cfg.deployment.n_ue,
        dynamic_subframes: cfg.frame.usable_subframes,
        frame_subframes: cfg.frame.subframes_per_frame(),
        schemes,
        gains,
        link_states,
        iterations,
        brute,
        per_drop,
        skipped,
        samples,
    }
}

/// Paths written by [`emit_outputs`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub flows_csv: PathBuf,
    pub summary_json: PathBuf,
    pub rate_cdf_csv: PathBuf,
    pub sinr_cdf_csv: PathBuf,
    pub traces: Vec<PathBuf>,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn flows_csv(report: &MetricsReport) -> String {
    let mut s = String::from("drop,ue,direction,scheme,rate_bps,sinr_db,link_state\n");
    for r in &report.samples {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.drop,
            r.ue,
            r.direction.as_str(),
            r.scheme,
            r.rate_bps,
            r.sinr_db,
            r.link_state.as_str()
        );
    }
    s
}

/// Empirical CDF rows `scheme,direction,rate_bps,cdf`, rates ascending.
pub fn rate_cdf_csv(report: &MetricsReport) -> String {
    let mut s = String::from("scheme,direction,rate_bps,cdf\n");
    for m in &report.schemes {
        for d in [Direction::Dl, Direction::Ul] {
            let mut v: Vec<f64> = report
                .samples
                .iter()
                .filter(|x| x.scheme == m.scheme && x.direction == d)
                .map(|x| x.rate_bps)
                .collect();
            v.sort_by(f64::total_cmp);
            let n = v.len() as f64;
            for (i, r) in v.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{}", m.scheme, d.as_str(), r, (i + 1) as f64 / n);
            }
        }
    }
    s
}

/// Empirical CDF of served users' access-link SINR, `direction,sinr_db,cdf`.
pub fn sinr_cdf_csv(outcomes: &[DropOutcome]) -> String {
    let mut s = String::from("direction,sinr_db,cdf\n");
    for d in [Direction::Dl, Direction::Ul] {
        let mut v: Vec<f64> = outcomes
            .iter()
            .flat_map(|o| {
                let t = &o.topology;
                t.users()
                    .filter_map(move |u| match d {
                        Direction::Dl => t.down_link(u),
                        Direction::Ul => t.up_link(u),
                    })
                    .map(move |l| t.links[l].budget.sinr)
            })
            .collect();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        for (i, x) in v.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", d.as_str(), x, (i + 1) as f64 / n);
        }
    }
    s
}

/// Writes the flow CSV, summary JSON, CDF CSVs and, for traced runs, one
/// move log per drop under `dir/traces`.
pub fn emit_outputs(exp: &Experiment, dir: &Path) -> Result<OutputPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = OutputPaths {
        flows_csv: dir.join("flows.csv"),
        summary_json: dir.join("summary.json"),
        rate_cdf_csv: dir.join("rate_cdf.csv"),
        sinr_cdf_csv: dir.join("sinr_cdf.csv"),
        traces: Vec::new(),
    };
    write(&paths.flows_csv, &flows_csv(&exp.report))?;
    let json = serde_json::to_string_pretty(&exp.report).map_err(|e| Error::Serde(e.to_string()))?;
    write(&paths.summary_json, &json)?;
    write(&paths.rate_cdf_csv, &rate_cdf_csv(&exp.report))?;
    write(&paths.sinr_cdf_csv, &sinr_cdf_csv(&exp.outcomes))?;
    let mut traces = Vec::new();
    let traced: Vec<_> = exp.outcomes.iter().filter(|o| o.dtdd.as_ref().is_some_and(|s| !s.trace.is_empty())).collect();
    if !traced.is_empty() {
        let tdir = dir.join("traces");
        fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
        for o in traced {
            let p = tdir.join(format!("drop_{:03}.txt", o.drop));
            write(&p, &o.dtdd.as_ref().unwrap().trace_text())?;
            traces.push(p);
        }
    }
    Ok(OutputPaths { traces, ..paths })
}

/// JSON dump of a topology with node kinds, positions, the tree and link
/// budgets.
pub fn topology_json(topo: &Topology) -> Result<String> {
    serde_json::to_string_pretty(topo).map_err(|e| Error::Serde(e.to_string()))
}

/// Per-node-kind counts, handy for log lines.
pub fn describe(topo: &Topology) -> String {
    let count = |k: NodeKind| topo.nodes.iter().filter(|n| n.kind == k).count();
    format!(
        "{} relays, {} users ({} in outage), {} links, {} flows",
        count(NodeKind::Rn),
        count(NodeKind::Ue),
        topo.outage_ues.len(),
        topo.links.len(),
        topo.flows.len()
    )
}
