use dtdd::schedule::{DuplexSchedule, Mode};
use dtdd::solver::{kkt_residual, primal_violation, solve, Allocation, InnerSolver, Problem, SolverSettings};
use dtdd::topology::{Direction, Topology, TopologyBuilder, ROOT};
use proptest::prelude::*;
use Mode::{Rx, Tx};

const W: f64 = 1e9;
const STEPS: usize = 1000;

fn solver(scale: f64) -> InnerSolver {
    InnerSolver::new(W, scale, SolverSettings::default())
}

/// Every composition of `STEPS` grid units into `k` parts.
fn compositions(k: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for a in 0..=left {
            cur.push(a);
            rec(k - 1, left - a, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, STEPS, &mut Vec::new(), &mut out);
    out
}

/// Grid search over every budget's bandwidth split with step `W_max / 1000`.
/// Only valid when each link carries at most one flow, which makes the best
/// flow rate for fixed bandwidths the bottleneck capacity along its path.
fn grid_oracle(p: &Problem) -> f64 {
    assert!(p.links.iter().all(|l| l.flows.len() <= 1));
    let grids: Vec<Vec<Vec<usize>>> = p.budgets.iter().map(|b| compositions(b.links.len())).collect();
    let total: usize = grids.iter().map(|g| g.len()).product();
    assert!(total <= 2_000_000, "grid too large: {total}");
    let mut idx = vec![0usize; grids.len()];
    let mut best = f64::NEG_INFINITY;
    loop {
        let mut cap = vec![0.0; p.links.len()];
        for (b, (budget, grid)) in p.budgets.iter().zip(&grids).enumerate() {
            for (&l, &units) in budget.links.iter().zip(&grid[idx[b]]) {
                cap[l] += p.links[l].rho * p.rate_scale * W * units as f64 / STEPS as f64;
            }
        }
        let u: f64 = p
            .flows
            .iter()
            .filter(|f| !f.starved)
            .map(|f| f.path.iter().map(|&l| cap[l]).fold(f64::INFINITY, f64::min).max(1.0).ln())
            .sum();
        best = best.max(u);
        let mut b = 0;
        loop {
            if b == idx.len() {
                return best;
            }
            idx[b] += 1;
            if idx[b] < grids[b].len() {
                break;
            }
            idx[b] = 0;
            b += 1;
        }
    }
}

fn assert_matches_oracle(p: &Problem) -> Allocation {
    let a = solve(p, &SolverSettings::default());
    assert!(a.converged);
    let oracle = grid_oracle(p);
    assert!(a.utility >= oracle - 1e-9, "solver {} below grid {}", a.utility, oracle);
    assert!((a.utility - oracle).abs() <= 0.005 * oracle.abs(), "solver {} grid {}", a.utility, oracle);
    a
}

fn star(rhos: &[(f64, f64)]) -> Topology {
    let mut b = TopologyBuilder::new();
    for &(dl, ul) in rhos {
        b.user(ROOT, dl, ul);
    }
    b.build()
}

/// BS, a relay with one user, and one direct user. In subframe 0 the base
/// station feeds the relay and the direct user; in subframe 1 the relay
/// serves its user while the direct user keeps receiving.
fn two_hop(backhaul: f64, access: f64, direct: f64) -> (Topology, DuplexSchedule) {
    let mut b = TopologyBuilder::new();
    let r = b.relay(ROOT, backhaul, backhaul);
    b.user(r, access, access);
    b.user(ROOT, direct, direct);
    let t = b.build();
    let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx, Tx], vec![Rx, Tx]]).unwrap();
    (t, x)
}

#[test]
fn two_users_one_subframe() {
    let t = star(&[(1.0, 1.0), (4.0, 1.0)]);
    let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx]]).unwrap();
    let p = solver(1.0).problem(&t, &x);
    let a = assert_matches_oracle(&p);
    // proportional fairness splits a shared budget evenly regardless of rho
    for f in t.flows.iter().filter(|f| f.direction == Direction::Dl) {
        assert!((a.bandwidth[f.path[0]][0] - W / 2.0).abs() < 1e-6 * W);
    }
}

#[test]
fn three_users_one_subframe() {
    let t = star(&[(0.5, 1.0), (2.0, 1.0), (6.0, 1.0)]);
    let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx]]).unwrap();
    assert_matches_oracle(&solver(0.1).problem(&t, &x));
}

#[test]
fn one_user_both_directions() {
    let t = star(&[(3.0, 0.7)]);
    let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx, Rx]]).unwrap();
    let a = assert_matches_oracle(&solver(1.0).problem(&t, &x));
    assert!((a.flow_rates[0] - 3.0 * W).abs() < 1e-6 * W);
    assert!((a.flow_rates[1] - 0.7 * W).abs() < 1e-6 * W);
}

#[test]
fn two_users_two_separate_subframes() {
    let t = star(&[(2.0, 1.0), (5.0, 1.0)]);
    let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx, Tx]]).unwrap();
    assert_matches_oracle(&solver(1.0).problem(&t, &x));
}

#[test]
fn access_limited_two_hop_flow() {
    let (ra, rb, rd) = (0.5, 6.0, 2.0);
    let (t, x) = two_hop(rb, ra, rd);
    let p = solver(1.0).problem(&t, &x);
    assert_eq!(p.links.iter().filter(|l| !l.flows.is_empty()).count(), 3);
    let a = solve(&p, &SolverSettings::default());
    let oracle = grid_oracle(&p);
    assert!((a.utility - oracle).abs() <= 1e-3 * oracle.abs());
    // the relayed flow gets exactly what one full access subframe carries
    let relayed = t.flows.iter().find(|f| f.direction == Direction::Dl && f.path.len() == 2).unwrap();
    assert!((a.flow_rates[relayed.id] - ra * W).abs() <= 1e-3 * ra * W);
    let direct = t.flows.iter().find(|f| f.direction == Direction::Dl && f.path.len() == 1).unwrap();
    let expected = rd * (2.0 - ra / rb) * W;
    assert!((a.flow_rates[direct.id] - expected).abs() <= 1e-3 * expected);
}

/// Rebuilds a feasible single-hop allocation from the bandwidths, keeping the
/// multipliers of `a`.
fn refill(p: &Problem, t: &Topology, mut a: Allocation) -> Allocation {
    for f in t.flows.iter().filter(|f| !p.flows[f.id].starved) {
        let l = f.path[0];
        let mut total = 0.0;
        for s in 0..p.n_subframes {
            let r = p.links[l].rho * p.rate_scale * a.bandwidth[l][s];
            a.link_rates[f.id][0][s] = r;
            total += r;
        }
        a.flow_rates[f.id] = total;
    }
    a
}

#[test]
fn perturbed_split_raises_kkt_residual() {
    let t = star(&[(1.0, 1.0), (3.0, 1.0)]);
    let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx]]).unwrap();
    let p = solver(1.0).problem(&t, &x);
    let a = solve(&p, &SolverSettings::default());
    let base = kkt_residual(&p, &a).unwrap();
    assert!(base <= 1e-9);
    let (l0, l1) = (t.flows[0].path[0], t.flows[2].path[0]);
    let mut b = a.clone();
    b.bandwidth[l0][0] *= 1.1;
    b.bandwidth[l1][0] = W - b.bandwidth[l0][0];
    let b = refill(&p, &t, b);
    assert!(primal_violation(&p, &b) <= 1e-12);
    let moved = kkt_residual(&p, &b).unwrap();
    assert!(moved > base && moved > 0.05, "{base} -> {moved}");
}

#[test]
fn infeasible_point_is_rejected() {
    let t = star(&[(1.0, 1.0), (3.0, 1.0)]);
    let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx]]).unwrap();
    let p = solver(1.0).problem(&t, &x);
    let mut a = solve(&p, &SolverSettings::default());
    a.bandwidth[t.flows[0].path[0]][0] *= 1.5;
    let a = refill(&p, &t, a);
    assert!(matches!(kkt_residual(&p, &a), Err(dtdd::Error::Infeasible(_))));
}

fn relay_net(rhos: &[f64; 6]) -> Topology {
    let mut b = TopologyBuilder::new();
    let r = b.relay(ROOT, rhos[0], rhos[1]);
    b.user(ROOT, rhos[2], rhos[3]);
    b.user(r, rhos[4], rhos[5]);
    b.user(r, rhos[5], rhos[4]);
    b.build()
}

fn schedule_3(t: &Topology) -> DuplexSchedule {
    DuplexSchedule::from_access_rows(t, &[vec![Tx, Tx, Rx], vec![Rx, Tx, Tx]]).unwrap()
}

#[test]
fn converged_solves_certify_kkt() {
    let t = relay_net(&[6.0, 5.0, 1.0, 0.5, 2.0, 1.5]);
    let x = schedule_3(&t);
    let p = solver(0.1).problem(&t, &x);
    let a = solve(&p, &SolverSettings::default());
    assert!(a.converged);
    assert!(kkt_residual(&p, &a).unwrap() <= 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_stars_match_oracle(a in 0.1f64..8.0, b in 0.1f64..8.0, c in 0.1f64..8.0) {
        let t = star(&[(a, 1.0), (b, 1.0), (c, 1.0)]);
        let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx]]).unwrap();
        assert_matches_oracle(&solver(1.0).problem(&t, &x));
    }

    #[test]
    fn random_two_hop_matches_oracle(rb in 0.2f64..8.0, ra in 0.2f64..8.0, rd in 0.2f64..8.0) {
        let (t, x) = two_hop(rb, ra, rd);
        assert_matches_oracle(&solver(1.0).problem(&t, &x));
    }

    #[test]
    fn scaling_rho_scales_rates(rhos in prop::array::uniform6(0.2f64..8.0), k in 0.1f64..10.0) {
        let t = relay_net(&rhos);
        let scaled: [f64; 6] = rhos.map(|r| r * k);
        let tk = relay_net(&scaled);
        let x = schedule_3(&t);
        let a = solver(0.1).evaluate(&t, &x);
        let b = solver(0.1).evaluate(&tk, &x);
        for (ra, rb) in a.flow_rates.iter().zip(&b.flow_rates) {
            prop_assert!((rb - k * ra).abs() <= 1e-6 * (k * ra).max(1.0), "{} vs {}", rb, k * ra);
        }
        for (wa, wb) in a.bandwidth.iter().flatten().zip(b.bandwidth.iter().flatten()) {
            prop_assert!((wa - wb).abs() <= 1e-6 * W);
        }
    }

    #[test]
    fn activating_a_subframe_never_hurts(rhos in prop::array::uniform6(0.2f64..8.0)) {
        let t = relay_net(&rhos);
        // the relay subtree is silent in the third subframe, then receives
        let base = DuplexSchedule::from_access_rows(&t, &[vec![Tx, Tx, Tx], vec![Rx, Tx, Mode::Mute]]).unwrap();
        let more = DuplexSchedule::from_access_rows(&t, &[vec![Tx, Tx, Tx], vec![Rx, Tx, Rx]]).unwrap();
        let s = solver(0.1);
        let (ub, um) = (s.evaluate(&t, &base).utility, s.evaluate(&t, &more).utility);
        prop_assert!(um >= ub - 1e-9 * ub.abs(), "{} < {}", um, ub);
    }

    #[test]
    fn subframe_order_does_not_matter(rhos in prop::array::uniform6(0.2f64..8.0)) {
        let t = relay_net(&rhos);
        let x = schedule_3(&t);
        let s = solver(0.1);
        let u = s.evaluate(&t, &x).utility;
        for perm in [[1, 0, 2], [2, 1, 0], [1, 2, 0]] {
            let v = s.evaluate(&t, &x.permute_subframes(&perm)).utility;
            prop_assert!((u - v).abs() <= 1e-9 * u.abs(), "{} vs {}", u, v);
        }
    }
}
