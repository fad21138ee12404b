//! The inner OFDMA problem: for a fixed link schedule, choose per-subframe
//! bandwidths and flow rates maximizing the proportional-fair utility
//! `sum_f log R_f`.
//!
//! Constraints, with `s[l][t] = W[l][t] / W_max`:
//!
//! * bandwidth: `sum_{l sent by n, active in t} s[l][t] <= 1` for every node and subframe;
//! * capacity: `sum_{f through l} R_f <= K * rho_l * sum_t s[l][t]`, `K = W_max * rate_scale`,
//!   which is the per-subframe capacity constraint after summing the per-subframe flow shares;
//! * flow conservation: `R_f` is carried in full on every link of its path.
//!
//! Capacity is linear in bandwidth (constant power spectral density), so the
//! program has a concave objective and linear constraints. Subframes in which
//! a node sees the same set of active links are interchangeable; they are
//! merged into one budget of matching size before solving and split evenly
//! afterwards.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::barrier::{LogProgram, Row};
use crate::error::{Error, Result};
use crate::schedule::{derive_link_schedule, DuplexSchedule, LinkSchedule};
use crate::topology::{FlowId, LinkId, NodeId, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// Target complementarity and KKT residual.
    pub tolerance: f64,
    /// Newton steps across all barrier stages.
    pub max_iterations: usize,
    /// bits/s; floor inside the logarithm for flows without capacity.
    pub rate_floor: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tolerance: 1e-9, max_iterations: 600, rate_floor: 1.0 }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.tolerance > 0.0) || !(self.rate_floor > 0.0) || self.max_iterations == 0 {
            return Err("solver tolerance, rate_floor and max_iterations must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemLink {
    pub id: LinkId,
    pub tx: NodeId,
    /// bits/s/Hz.
    pub rho: f64,
    pub active: Vec<usize>,
    /// Flows with positive end-to-end capacity crossing this link.
    pub flows: Vec<FlowId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFlow {
    pub id: FlowId,
    pub path: Vec<LinkId>,
    /// Some path link is never active.
    pub starved: bool,
}

/// Bandwidth budget of one transmitting node in one subframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub node: NodeId,
    pub subframe: usize,
    /// Active links of `node` in `subframe` that carry live flows.
    pub links: Vec<LinkId>,
}

#[derive(Debug, Clone)]
struct Class {
    links: Vec<LinkId>,
    subframes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub n_subframes: usize,
    /// Hz.
    pub w_max: f64,
    pub rate_scale: f64,
    pub links: Vec<ProblemLink>,
    pub flows: Vec<ProblemFlow>,
    pub budgets: Vec<Budget>,
    classes: Vec<Class>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Hz, `[link][subframe]`.
    pub bandwidth: Vec<Vec<f64>>,
    /// bits/s carried for each flow on each link of its path, `[flow][hop][subframe]`.
    pub link_rates: Vec<Vec<Vec<f64>>>,
    /// bits/s.
    pub flow_rates: Vec<f64>,
    pub utility: f64,
    pub starved: Vec<FlowId>,
    /// Capacity-constraint multipliers per link (per normalized rate unit).
    pub link_prices: Vec<f64>,
    /// Bandwidth-constraint multipliers, `[node][subframe]`.
    pub budget_prices: Vec<Vec<f64>>,
    pub converged: bool,
    pub newton_steps: usize,
}

impl Problem {
    /// Assembles the program for `ls` on `topo`.
    pub fn build(topo: &Topology, ls: &LinkSchedule, w_max: f64, rate_scale: f64) -> Problem {
        let n_sf = ls.n_subframes;
        let mut flows: Vec<ProblemFlow> = topo
            .flows
            .iter()
            .map(|f| ProblemFlow {
                id: f.id,
                path: f.path.clone(),
                starved: f.path.iter().any(|&l| ls.active_subframes(l).next().is_none()),
            })
            .collect();
        flows.sort_by_key(|f| f.id);
        let links: Vec<ProblemLink> = topo
            .links
            .iter()
            .map(|l| ProblemLink {
                id: l.id,
                tx: l.tx,
                rho: l.budget.spectral_efficiency,
                active: ls.active_subframes(l.id).collect(),
                flows: flows.iter().filter(|f| !f.starved && f.path.contains(&l.id)).map(|f| f.id).collect(),
            })
            .collect();

        let mut budgets = Vec::new();
        for n in 0..topo.n_nodes() {
            for t in 0..n_sf {
                let ls_nt: Vec<LinkId> = links
                    .iter()
                    .filter(|l| l.tx == n && !l.flows.is_empty() && ls.is_active(l.id, t))
                    .map(|l| l.id)
                    .collect();
                if !ls_nt.is_empty() {
                    budgets.push(Budget { node: n, subframe: t, links: ls_nt });
                }
            }
        }

        let mut grouped: BTreeMap<(NodeId, Vec<LinkId>), Vec<usize>> = BTreeMap::new();
        for b in &budgets {
            grouped.entry((b.node, b.links.clone())).or_default().push(b.subframe);
        }
        let classes = grouped.into_iter().map(|((_, links), subframes)| Class { links, subframes }).collect();

        Problem { n_subframes: n_sf, w_max, rate_scale, links, flows, budgets, classes }
    }

    /// bits/s per unit of normalized rate.
    pub fn rate_unit(&self) -> f64 {
        self.w_max * self.rate_scale
    }

    pub fn live_flows(&self) -> impl Iterator<Item = &ProblemFlow> + '_ {
        self.flows.iter().filter(|f| !f.starved)
    }

    pub fn starved(&self) -> Vec<FlowId> {
        self.flows.iter().filter(|f| f.starved).map(|f| f.id).collect()
    }

    /// Counts of bandwidth variables, flow-rate variables and constraint rows
    /// (bandwidth budgets plus link capacities) of the disaggregated program.
    pub fn dimensions(&self) -> (usize, usize, usize) {
        let w_vars = self.budgets.iter().map(|b| b.links.len()).sum();
        let r_vars = self.live_flows().count();
        let cap_rows = self.links.iter().filter(|l| !l.flows.is_empty()).count();
        (w_vars, r_vars, self.budgets.len() + cap_rows)
    }

    /// Plain-text dump of the disaggregated program.
    ///
    /// ```text
    /// maximize sum_f log(R[f])
    /// var W[l,t] in [0, W_max] Hz; var R[f] >= 0 bits/s
    /// budget n t: W[l,t] + ... <= W_max
    /// capacity l: R[f] + ... - k * (W[l,t] + ...) <= 0
    /// starved f
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# inner problem: {} subframes, W_max {} Hz, rate_scale {}", self.n_subframes, self.w_max, self.rate_scale);
        let live: Vec<String> = self.live_flows().map(|f| format!("log(R[{}])", f.id)).collect();
        let _ = writeln!(s, "maximize {}", if live.is_empty() { "0".into() } else { live.join(" + ") });
        for b in &self.budgets {
            let terms: Vec<String> = b.links.iter().map(|l| format!("W[{},{}]", l, b.subframe)).collect();
            let _ = writeln!(s, "budget {} {}: {} <= {}", b.node, b.subframe, terms.join(" + "), self.w_max);
        }
        for l in self.links.iter().filter(|l| !l.flows.is_empty()) {
            let r: Vec<String> = l.flows.iter().map(|f| format!("R[{f}]")).collect();
            let w: Vec<String> = l.active.iter().map(|t| format!("W[{},{}]", l.id, t)).collect();
            let _ = writeln!(s, "capacity {}: {} - {} * ({}) <= 0", l.id, r.join(" + "), l.rho * self.rate_scale, w.join(" + "));
        }
        for f in self.flows.iter().filter(|f| f.starved) {
            let _ = writeln!(s, "starved {}", f.id);
        }
        s
    }
}

/// `sum_f log(max(R_f, floor))`, natural log.
pub fn utility(rates: &[f64], rate_floor: f64) -> f64 {
    rates.iter().map(|r| r.max(rate_floor).ln()).sum()
}

/// Solves the program. Returns the best iterate with `converged == false` if
/// the Newton budget runs out first.
pub fn solve(problem: &Problem, settings: &SolverSettings) -> Allocation {
    let n_links = problem.links.len();
    let n_nodes = problem.budgets.iter().map(|b| b.node + 1).max().unwrap_or(0)
        .max(problem.links.iter().map(|l| l.tx + 1).max().unwrap_or(0));
    let n_sf = problem.n_subframes;
    let n_flows = problem.flows.len();

    // variable layout: one per (class, link), then one per live flow
    let mut s_index: Vec<(usize, LinkId)> = Vec::new();
    for (k, c) in problem.classes.iter().enumerate() {
        for &l in &c.links {
            s_index.push((k, l));
        }
    }
    let live: Vec<FlowId> = problem.live_flows().map(|f| f.id).collect();
    let n_s = s_index.len();
    let r_var = |pos: usize| n_s + pos;
    let mut flow_pos = vec![usize::MAX; n_flows];
    for (pos, &f) in live.iter().enumerate() {
        flow_pos[f] = pos;
    }

    let mut alloc = Allocation {
        bandwidth: vec![vec![0.0; n_sf]; n_links],
        link_rates: problem.flows.iter().map(|f| vec![vec![0.0; n_sf]; f.path.len()]).collect(),
        flow_rates: vec![0.0; n_flows],
        utility: 0.0,
        starved: problem.starved(),
        link_prices: vec![0.0; n_links],
        budget_prices: vec![vec![0.0; n_sf]; n_nodes],
        converged: true,
        newton_steps: 0,
    };
    if live.is_empty() {
        alloc.utility = utility(&alloc.flow_rates, settings.rate_floor);
        return alloc;
    }

    let mut rows = Vec::new();
    // capacity rows first, in link order
    let mut cap_row_of = vec![None; n_links];
    for l in problem.links.iter().filter(|l| !l.flows.is_empty()) {
        let mut coeffs: Vec<(usize, f64)> = l.flows.iter().map(|&f| (r_var(flow_pos[f]), 1.0)).collect();
        for (v, &(_, sl)) in s_index.iter().enumerate() {
            if sl == l.id {
                coeffs.push((v, -l.rho));
            }
        }
        cap_row_of[l.id] = Some(rows.len());
        rows.push(Row { coeffs, rhs: 0.0 });
    }
    let first_budget_row = rows.len();
    for (k, c) in problem.classes.iter().enumerate() {
        let coeffs = s_index.iter().enumerate().filter(|(_, &(kk, _))| kk == k).map(|(v, _)| (v, 1.0)).collect();
        rows.push(Row { coeffs, rhs: c.subframes.len() as f64 });
    }
    for v in 0..n_s {
        rows.push(Row { coeffs: vec![(v, -1.0)], rhs: 0.0 });
    }

    // strictly feasible start
    let mut z = vec![0.0; n_s + live.len()];
    let mut cap = vec![0.0; n_links];
    for (v, &(k, l)) in s_index.iter().enumerate() {
        let c = &problem.classes[k];
        z[v] = c.subframes.len() as f64 / (c.links.len() as f64 + 1.0);
        cap[l] += problem.links[l].rho * z[v];
    }
    for (pos, &f) in live.iter().enumerate() {
        let share = problem.flows[f]
            .path
            .iter()
            .map(|&l| cap[l] / problem.links[l].flows.len() as f64)
            .fold(f64::INFINITY, f64::min);
        z[r_var(pos)] = 0.5 * share;
    }

    let program = LogProgram { n: z.len(), log_vars: (n_s..z.len()).collect(), rows };
    // headroom for the disaggregation round-off checked below
    let out = program.solve(z, 0.05 * settings.tolerance, settings.max_iterations);
    alloc.converged = out.converged;
    alloc.newton_steps = out.newton_steps;

    let unit = problem.rate_unit();
    for (v, &(k, l)) in s_index.iter().enumerate() {
        let c = &problem.classes[k];
        let per = out.z[v].max(0.0) / c.subframes.len() as f64;
        for &t in &c.subframes {
            alloc.bandwidth[l][t] = per * problem.w_max;
        }
    }
    for (k, c) in problem.classes.iter().enumerate() {
        let price = out.duals[first_budget_row + k];
        let node = problem.links[c.links[0]].tx;
        for &t in &c.subframes {
            alloc.budget_prices[node][t] = price;
        }
    }
    for l in 0..n_links {
        if let Some(row) = cap_row_of[l] {
            alloc.link_prices[l] = out.duals[row];
        }
    }
    for (pos, &f) in live.iter().enumerate() {
        let r = out.z[r_var(pos)];
        alloc.flow_rates[f] = r * unit;
        for (hop, &l) in problem.flows[f].path.iter().enumerate() {
            let total: f64 = alloc.bandwidth[l].iter().sum();
            for t in 0..n_sf {
                alloc.link_rates[f][hop][t] = alloc.flow_rates[f] * alloc.bandwidth[l][t] / total;
            }
        }
    }
    alloc.utility = utility(&alloc.flow_rates, settings.rate_floor);
    if alloc.converged {
        match kkt_residual(problem, &alloc) {
            Ok(r) if r <= settings.tolerance => {}
            Ok(r) => {
                log::warn!("KKT residual {r:.3e} above tolerance");
                alloc.converged = false;
            }
            Err(e) => {
                log::warn!("{e}");
                alloc.converged = false;
            }
        }
    }
    alloc
}

/// Schedule-level entry point: derives the link schedule, builds and solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerSolver {
    pub w_max: f64,
    pub rate_scale: f64,
    pub settings: SolverSettings,
}

impl InnerSolver {
    pub fn new(w_max: f64, rate_scale: f64, settings: SolverSettings) -> InnerSolver {
        InnerSolver { w_max, rate_scale, settings }
    }

    pub fn problem(&self, topo: &Topology, x: &DuplexSchedule) -> Problem {
        Problem::build(topo, &derive_link_schedule(x, topo), self.w_max, self.rate_scale)
    }

    pub fn evaluate(&self, topo: &Topology, x: &DuplexSchedule) -> Allocation {
        solve(&self.problem(topo, x), &self.settings)
    }
}

/// Relative violation of the primal constraints; 0 when feasible.
pub fn primal_violation(problem: &Problem, alloc: &Allocation) -> f64 {
    let unit = problem.rate_unit();
    let mut worst: f64 = 0.0;
    for row in &alloc.bandwidth {
        for &w in row {
            worst = worst.max(-w / problem.w_max);
        }
    }
    for &r in &alloc.flow_rates {
        worst = worst.max(-r / unit);
    }
    for l in &problem.links {
        for t in 0..problem.n_subframes {
            if !l.active.contains(&t) && alloc.bandwidth[l.id][t] != 0.0 {
                worst = worst.max(alloc.bandwidth[l.id][t].abs() / problem.w_max);
            }
        }
    }
    for b in &problem.budgets {
        let used: f64 = b.links.iter().map(|&l| alloc.bandwidth[l][b.subframe]).sum();
        worst = worst.max(used / problem.w_max - 1.0);
    }
    for l in &problem.links {
        // per-subframe capacity and flow conservation
        for t in 0..problem.n_subframes {
            let cap = l.rho * alloc.bandwidth[l.id][t] * problem.rate_scale;
            let mut carried = 0.0;
            for f in problem.flows.iter().filter(|f| f.path.contains(&l.id)) {
                let hop = f.path.iter().position(|&p| p == l.id).unwrap();
                carried += alloc.link_rates[f.id][hop][t];
            }
            let scale = (l.rho * problem.w_max * problem.rate_scale).max(f64::MIN_POSITIVE);
            worst = worst.max((carried - cap) / scale);
        }
    }
    for f in &problem.flows {
        for hop in 0..f.path.len() {
            let delivered: f64 = alloc.link_rates[f.id][hop].iter().sum();
            worst = worst.max((alloc.flow_rates[f.id] - delivered) / unit);
        }
    }
    worst
}

/// Largest violation of the optimality conditions at `alloc`, using the
/// multipliers it carries:
///
/// * stationarity in `R_f`: `|r_f * sum_{l in path} lambda_l - 1|`;
/// * stationarity in `s[l][t]`: reduced cost `nu[n][t] - rho_l lambda_l` must be
///   nonnegative and vanish where `s > 0`;
/// * complementary slackness of the capacity and bandwidth rows.
///
/// Rates are measured in units of `W_max * rate_scale`, which makes every
/// term dimensionless. Points violating the constraints by more than `1e-9`
/// are rejected.
pub fn kkt_residual(problem: &Problem, alloc: &Allocation) -> Result<f64> {
    let infeas = primal_violation(problem, alloc);
    if infeas > 1e-9 {
        return Err(Error::Infeasible(format!("constraint violation {infeas:.3e}")));
    }
    let unit = problem.rate_unit();
    let mut res: f64 = 0.0;
    for &p in &alloc.link_prices {
        res = res.max(-p);
    }
    for row in &alloc.budget_prices {
        for &p in row {
            res = res.max(-p);
        }
    }
    for f in problem.live_flows() {
        let r = alloc.flow_rates[f.id] / unit;
        let price: f64 = f.path.iter().map(|&l| alloc.link_prices[l]).sum();
        res = res.max((r * price - 1.0).abs());
    }
    for b in &problem.budgets {
        let nu = alloc.budget_prices[b.node][b.subframe];
        let mut used = 0.0;
        for &l in &b.links {
            let s = alloc.bandwidth[l][b.subframe] / problem.w_max;
            used += s;
            let reduced = nu - problem.links[l].rho * alloc.link_prices[l];
            res = res.max(-reduced);
            res = res.max(s * reduced.max(0.0));
        }
        res = res.max(nu * (1.0 - used).max(0.0));
    }
    for l in problem.links.iter().filter(|l| !l.flows.is_empty()) {
        let cap: f64 = l.rho * alloc.bandwidth[l.id].iter().sum::<f64>() / problem.w_max;
        let load: f64 = l.flows.iter().map(|&f| alloc.flow_rates[f] / unit).sum();
        res = res.max(alloc.link_prices[l.id] * (cap - load).max(0.0));
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::Mode::{Rx, Tx};
    use crate::topology::{TopologyBuilder, ROOT};

    const W: f64 = 1e9;

    fn solver() -> InnerSolver {
        InnerSolver::new(W, 1.0, SolverSettings::default())
    }

    #[test]
    fn single_user_takes_everything() {
        let mut b = TopologyBuilder::new();
        b.user(ROOT, 2.0, 1.0);
        let t = b.build();
        let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx, Rx, Tx]]).unwrap();
        let a = solver().evaluate(&t, &x);
        assert!(a.converged);
        let dl = t.down_link(1).unwrap();
        for s in [0, 2] {
            assert!((a.bandwidth[dl][s] - W).abs() < 1e-6 * W);
        }
        assert_eq!(a.bandwidth[dl][1], 0.0);
        assert!((a.flow_rates[0] - 2.0 * 2.0 * W).abs() < 1e-6 * W);
        assert!((a.flow_rates[1] - 1.0 * W).abs() < 1e-6 * W);
    }

    #[test]
    fn symmetric_users_split_evenly() {
        let mut b = TopologyBuilder::new();
        b.user(ROOT, 3.0, 3.0);
        b.user(ROOT, 3.0, 3.0);
        let t = b.build();
        let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx]]).unwrap();
        let p = solver().problem(&t, &x);
        assert_eq!(p.starved().len(), 2, "uplinks never scheduled");
        let a = solve(&p, &SolverSettings::default());
        for f in t.flows.iter().filter(|f| f.direction == crate::topology::Direction::Dl) {
            assert!((a.flow_rates[f.id] - 1.5 * W).abs() < 1e-6 * W);
            assert!((a.bandwidth[f.path[0]][0] - W / 2.0).abs() < 1e-6 * W);
        }
        let res = kkt_residual(&p, &a).unwrap();
        assert!(res <= 1e-9, "{res} {:?}", a);
    }

    #[test]
    fn unscheduled_backhaul_starves_relayed_flows() {
        let mut b = TopologyBuilder::new();
        let r = b.relay(ROOT, 5.0, 5.0);
        b.user(r, 2.0, 2.0);
        let t = b.build();
        // relay and base station always both transmit: backhaul never active
        let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx, Tx], vec![Tx, Tx]]).unwrap();
        let p = solver().problem(&t, &x);
        assert_eq!(p.starved(), vec![0, 1]);
        let a = solve(&p, &SolverSettings::default());
        assert_eq!(a.flow_rates, vec![0.0, 0.0]);
        assert_eq!(a.utility, 0.0);
    }

    #[test]
    fn problem_dimensions_one_link() {
        let mut b = TopologyBuilder::new();
        b.user(ROOT, 2.0, 1.0);
        let t = b.build();
        let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx]]).unwrap();
        let p = solver().problem(&t, &x);
        assert_eq!(p.dimensions(), (1, 1, 2));
        let text = p.to_text();
        assert!(text.contains("budget 0 0: W[0,0] <= 1000000000"));
        assert!(text.contains("starved 1"));
    }

    #[test]
    fn utility_examples() {
        assert_eq!(utility(&[1.0, 1.0, 1.0], 1.0), 0.0);
        let e = std::f64::consts::E;
        assert!((utility(&[e, e], 1e-9) - 2.0).abs() < 1e-12);
        let r = [3.0, 7.0, 11.0];
        let d: Vec<f64> = r.iter().map(|x| 2.0 * x).collect();
        assert!((utility(&d, 1.0) - utility(&r, 1.0) - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(utility(&[0.0], 1.0), 0.0);
    }
}
