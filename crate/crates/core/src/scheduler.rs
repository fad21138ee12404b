//! Greedy recursive duplexing search.
//!
//! Starting from an initial schedule, `test_subtree` first re-optimizes every
//! relay subtree under the incumbent, then for each direction (downlink
//! first) repeatedly moves one more subframe of the subtree root into that
//! direction, points its users the other way, evaluates the candidate with
//! the inner solver and lets every relay child answer with a complementary
//! move followed by its own recursive search. A candidate replaces the
//! incumbent only if it strictly improves the utility.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{derive_link_schedule, DuplexSchedule, Mode};
use crate::solver::{Allocation, InnerSolver};
use crate::topology::{NodeId, Topology, ROOT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialPattern {
    /// Base station alternates TX/RX by subframe parity, relays complement
    /// their parent.
    #[default]
    Alternating,
    /// Base station transmits in the first three quarters of the frame,
    /// relays complement their parent.
    DownlinkBiased,
}

/// Which schedule a relay's complementary move starts from inside the
/// improvement loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReallocBase {
    /// The incumbent from before the subtree root's move.
    #[default]
    Incumbent,
    /// The candidate that already contains the subtree root's move.
    Candidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSettings {
    /// Bound on improvement passes per node and direction.
    pub max_passes: usize,
    pub initial_pattern: InitialPattern,
    pub realloc_base: ReallocBase,
    /// Relative utility gain a move must exceed to count as an improvement.
    pub improvement_eps: f64,
}

impl Default for SchedulerSettings {
    fn default() -> Self {
        SchedulerSettings {
            max_passes: 16,
            initial_pattern: InitialPattern::Alternating,
            realloc_base: ReallocBase::Incumbent,
            improvement_eps: 1e-9,
        }
    }
}

impl SchedulerSettings {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.max_passes == 0 {
            return Err("max_passes must be >= 1".into());
        }
        if !(self.improvement_eps >= 0.0) {
            return Err("improvement_eps must be >= 0".into());
        }
        Ok(())
    }
}

/// One inner-solver evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub eval: usize,
    /// Node whose move produced the candidate; `None` for the initial schedule.
    pub node: Option<NodeId>,
    pub direction: Option<Mode>,
    pub depth: usize,
    pub utility: f64,
    /// The candidate became the search incumbent.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub schedule: DuplexSchedule,
    pub utility: f64,
    pub allocation: Allocation,
    pub inner_calls: usize,
    pub accepted_moves: usize,
    /// Evaluated schedules whose link schedule broke half duplex (always 0).
    pub half_duplex_violations: usize,
    pub trace: Vec<TraceEntry>,
}

impl SearchState {
    /// Text move log: a header, then one line per evaluation with
    /// `eval node direction depth utility accepted`; `node`/`direction` are
    /// `-` for the initial schedule, direction is `+` (TX) or `-` (RX),
    /// utility has 9 decimals and `accepted` is 0/1.
    pub fn trace_text(&self) -> String {
        let mut s = String::from("# eval node direction depth utility accepted\n");
        for e in &self.trace {
            let node = e.node.map_or("-".to_string(), |n| n.to_string());
            let dir = e.direction.map_or('-', |m| m.symbol());
            let dir = if e.direction.is_none() { "-".to_string() } else { dir.to_string() };
            let _ = writeln!(s, "{} {} {} {} {:.9} {}", e.eval, node, dir, e.depth, e.utility, e.accepted as u8);
        }
        s
    }

    /// Utilities of accepted candidates in evaluation order.
    pub fn accepted_utilities(&self) -> Vec<f64> {
        self.trace.iter().filter(|e| e.accepted).map(|e| e.utility).collect()
    }
}

/// Default starting point; requires at least two subframes.
pub fn initial_schedule(topo: &Topology, n_subframes: usize, pattern: InitialPattern) -> Result<DuplexSchedule> {
    if n_subframes < 2 {
        return Err(Error::Schedule(format!("need at least 2 subframes, got {n_subframes}")));
    }
    let root_tx = |t: usize| match pattern {
        InitialPattern::Alternating => t % 2 == 0,
        InitialPattern::DownlinkBiased => 4 * t < 3 * n_subframes,
    };
    let rows: Vec<Vec<Mode>> = topo
        .access_points()
        .map(|n| {
            let flip = topo.depth(n) % 2 == 1;
            (0..n_subframes)
                .map(|t| if root_tx(t) != flip { Mode::Tx } else { Mode::Rx })
                .collect()
        })
        .collect();
    DuplexSchedule::from_access_rows(topo, &rows)
}

#[derive(Debug, Clone)]
struct Incumbent {
    x: DuplexSchedule,
    u: f64,
    eval: Option<usize>,
}

struct Evaluated {
    utility: f64,
    eval: usize,
    allocation: Allocation,
}

/// Mutable search context: realloc cursors, evaluation cache and trace.
pub struct Search<'a> {
    topo: &'a Topology,
    solver: &'a InnerSolver,
    settings: &'a SchedulerSettings,
    cursors: Vec<usize>,
    cache: HashMap<DuplexSchedule, Evaluated>,
    trace: Vec<TraceEntry>,
    accepted_moves: usize,
    half_duplex_violations: usize,
}

impl<'a> Search<'a> {
    pub fn new(topo: &'a Topology, solver: &'a InnerSolver, settings: &'a SchedulerSettings) -> Search<'a> {
        Search {
            topo,
            solver,
            settings,
            cursors: vec![0; topo.n_nodes()],
            cache: HashMap::new(),
            trace: Vec::new(),
            accepted_moves: 0,
            half_duplex_violations: 0,
        }
    }

    pub fn inner_calls(&self) -> usize {
        self.trace.len()
    }

    fn evaluate(&mut self, x: &DuplexSchedule, node: Option<NodeId>, dir: Option<Mode>, depth: usize) -> (f64, usize) {
        if let Some(e) = self.cache.get(x) {
            return (e.utility, e.eval);
        }
        let ls = derive_link_schedule(x, self.topo);
        self.half_duplex_violations += ls.half_duplex_violations(self.topo);
        let allocation = self.solver.evaluate(self.topo, x);
        let utility = if allocation.converged { allocation.utility } else { f64::NEG_INFINITY };
        if !allocation.converged {
            log::warn!("inner solve did not converge; candidate discarded");
        }
        let eval = self.trace.len();
        self.trace.push(TraceEntry { eval, node, direction: dir, depth, utility, accepted: false });
        self.cache.insert(x.clone(), Evaluated { utility, eval, allocation });
        (utility, eval)
    }

    fn improves(&self, candidate: f64, incumbent: f64) -> bool {
        candidate > incumbent + self.settings.improvement_eps * incumbent.abs().max(1.0)
    }

    fn commit(&mut self, inc: &Incumbent, depth: usize) {
        if depth == 0 {
            if let Some(e) = inc.eval {
                self.trace[e].accepted = true;
            }
            self.accepted_moves += 1;
        }
    }

    /// Moves one subframe of `node` to `new_mode` and points its users the
    /// other way. Relays prefer the first subframe where they currently match
    /// their parent; otherwise (and for the root) the subframe is the next
    /// flippable one, scanning cyclically from the node's cursor for relays
    /// and from subframe 0 for the root. `None` when every subframe already
    /// has `new_mode`.
    pub fn realloc(&mut self, x: &DuplexSchedule, node: NodeId, new_mode: Mode) -> Option<DuplexSchedule> {
        let n_sf = x.n_subframes();
        let flippable = |t: usize| x.mode(node, t) != new_mode;
        let t = match self.topo.parent[node] {
            None => (0..n_sf).find(|&t| flippable(t))?,
            Some(p) => match (0..n_sf).find(|&t| flippable(t) && x.mode(node, t) == x.mode(p, t)) {
                Some(t) => t,
                None => {
                    let start = self.cursors[node];
                    let t = (0..n_sf).map(|k| (start + k) % n_sf).find(|&t| flippable(t))?;
                    self.cursors[node] = (t + 1) % n_sf;
                    t
                }
            },
        };
        let mut y = x.clone();
        y.set(node, t, new_mode);
        y.complement_users(self.topo, node, t);
        Some(y)
    }

    fn test_subtree(&mut self, n: NodeId, start: Incumbent, depth: usize) -> Option<Incumbent> {
        let topo = self.topo;
        let relays: Vec<NodeId> = topo.relay_children(n).collect();
        let mut inc = start;
        let mut improved = false;

        for &r in &relays {
            if let Some(better) = self.test_subtree(r, inc.clone(), depth + 1) {
                inc = better;
                improved = true;
                self.commit(&inc, depth);
            }
        }

        for dir in [Mode::Tx, Mode::Rx] {
            for _ in 0..self.settings.max_passes {
                let Some(x_tst) = self.realloc(&inc.x, n, dir) else { break };
                let (u, eval) = self.evaluate(&x_tst, Some(n), Some(dir), depth);
                let mut best = Incumbent { x: x_tst, u, eval: Some(eval) };
                for &r in &relays {
                    let base = match self.settings.realloc_base {
                        ReallocBase::Incumbent => inc.x.clone(),
                        ReallocBase::Candidate => best.x.clone(),
                    };
                    let seed = self.realloc(&base, r, dir.opposite()).unwrap_or(base);
                    let probe = Incumbent { x: seed, u: inc.u, eval: None };
                    if let Some(sub) = self.test_subtree(r, probe, depth + 1) {
                        if sub.u > best.u {
                            best = sub;
                        }
                    }
                }
                if self.improves(best.u, inc.u) {
                    inc = best;
                    improved = true;
                    self.commit(&inc, depth);
                } else {
                    break;
                }
            }
        }
        improved.then_some(inc)
    }

    /// Runs the search from `seed` and returns the best schedule found.
    pub fn run_from(mut self, seed: DuplexSchedule) -> SearchState {
        let (u0, e0) = self.evaluate(&seed, None, None, 0);
        self.trace[e0].accepted = true;
        let start = Incumbent { x: seed, u: u0, eval: Some(e0) };
        let fin = self.test_subtree(ROOT, start.clone(), 0).unwrap_or(start);
        let allocation = self.cache.remove(&fin.x).expect("incumbent was evaluated").allocation;
        SearchState {
            schedule: fin.x,
            utility: fin.u,
            allocation,
            inner_calls: self.trace.len(),
            accepted_moves: self.accepted_moves,
            half_duplex_violations: self.half_duplex_violations,
            trace: self.trace,
        }
    }
}

/// Dynamic duplexing for one topology: initial schedule, baseline solve, then
/// the recursive search from the base station.
pub fn run_dtdd(
    topo: &Topology,
    n_subframes: usize,
    solver: &InnerSolver,
    settings: &SchedulerSettings,
) -> Result<SearchState> {
    let seed = initial_schedule(topo, n_subframes, settings.initial_pattern)?;
    Ok(Search::new(topo, solver, settings).run_from(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::SolverSettings;
    use crate::topology::TopologyBuilder;
    use Mode::{Rx, Tx};

    fn solver() -> InnerSolver {
        InnerSolver::new(1e9, 0.1, SolverSettings::default())
    }

    fn relay_net() -> Topology {
        let mut b = TopologyBuilder::new();
        let r = b.relay(ROOT, 6.0, 6.0);
        b.user(ROOT, 2.0, 1.5);
        b.user(r, 3.0, 2.0);
        b.build()
    }

    #[test]
    fn initial_schedule_shapes() {
        let t = relay_net();
        let x = initial_schedule(&t, 2, InitialPattern::Alternating).unwrap();
        assert_eq!(x.row(0), &[Tx, Rx]);
        assert_eq!(x.row(1), &[Rx, Tx]);
        assert!(initial_schedule(&t, 1, InitialPattern::Alternating).is_err());
        let ls = derive_link_schedule(&x, &t);
        assert_eq!(ls.half_duplex_violations(&t), 0);
        for f in &t.flows {
            assert!(f.path.iter().all(|&l| ls.active_subframes(l).next().is_some()));
        }
        let y = initial_schedule(&t, 4, InitialPattern::DownlinkBiased).unwrap();
        assert_eq!(y.row(0), &[Tx, Tx, Tx, Rx]);
    }

    #[test]
    fn realloc_rules() {
        let t = relay_net();
        let s = solver();
        let settings = SchedulerSettings::default();
        let mut search = Search::new(&t, &s, &settings);

        let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx, Rx, Rx, Rx], vec![Rx, Tx, Tx, Tx]]).unwrap();
        let y = search.realloc(&x, ROOT, Tx).unwrap();
        assert_eq!(y.row(0), &[Tx, Tx, Rx, Rx]);
        // the base station's user follows the complement
        assert_eq!(y.row(2), &[Rx, Rx, Tx, Tx]);

        // relay matches its parent only in subframe 2
        let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx, Rx, Rx, Tx], vec![Rx, Tx, Rx, Rx]]).unwrap();
        let y = search.realloc(&x, 1, Tx).unwrap();
        assert_eq!(y.row(1), &[Rx, Tx, Tx, Rx]);
        assert_eq!(y.row(3), &[Tx, Rx, Rx, Tx]);

        let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx; 3], vec![Rx; 3]]).unwrap();
        assert!(search.realloc(&x, ROOT, Tx).is_none());
    }

    #[test]
    fn relay_cursor_cycles() {
        let t = relay_net();
        let s = solver();
        let settings = SchedulerSettings::default();
        let mut search = Search::new(&t, &s, &settings);
        // relay never matches its parent: fallback scans from the cursor
        let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx, Rx, Tx, Rx], vec![Rx, Tx, Rx, Tx]]).unwrap();
        let a = search.realloc(&x, 1, Tx).unwrap();
        assert_eq!(a.row(1), &[Tx, Tx, Rx, Tx]);
        let b = search.realloc(&x, 1, Tx).unwrap();
        assert_eq!(b.row(1), &[Rx, Tx, Tx, Tx]);
        let c = search.realloc(&x, 1, Tx).unwrap();
        assert_eq!(c.row(1), &[Tx, Tx, Rx, Tx]);
    }

    #[test]
    fn search_improves_monotonically() {
        let t = relay_net();
        for base in [ReallocBase::Incumbent, ReallocBase::Candidate] {
            let settings = SchedulerSettings { realloc_base: base, ..Default::default() };
            let st = run_dtdd(&t, 4, &solver(), &settings).unwrap();
            let acc = st.accepted_utilities();
            assert!(acc.windows(2).all(|w| w[1] > w[0]), "{acc:?}");
            assert_eq!(*acc.last().unwrap(), st.utility);
            assert!(st.utility >= st.trace[0].utility);
            assert_eq!(st.half_duplex_violations, 0);
            assert_eq!(st.inner_calls, st.trace.len());
            assert!((st.allocation.utility - st.utility).abs() < 1e-12, "{} {} {}", st.allocation.utility, st.utility, st.allocation.converged);
        }
    }

    #[test]
    fn trace_text_format() {
        let t = relay_net();
        let st = run_dtdd(&t, 2, &solver(), &SchedulerSettings::default()).unwrap();
        let text = st.trace_text();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# eval node direction depth utility accepted");
        let first: Vec<&str> = lines.next().unwrap().split(' ').collect();
        assert_eq!(&first[..4], &["0", "-", "-", "0"]);
        assert_eq!(first[5], "1");
        assert_eq!(text.lines().count(), st.trace.len() + 1);
    }
}
