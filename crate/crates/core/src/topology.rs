//! Random drops, UE association and the fixed routing tree.
//!
//! Node ids are dense indices: the base station is always node 0, relays
//! follow, then users. Every non-root node owns exactly one downlink link
//! (parent to node) and one uplink link (node to parent).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    beamforming_gain_db, max_avg_interference, omni_received_mw, path_loss_db, sample_link_state,
    sample_shadowing, ChannelMap, LinkBudget, LinkState, PairChannel, RadioConfig,
};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};

pub type NodeId = usize;
pub type LinkId = usize;
pub type FlowId = usize;

pub const ROOT: NodeId = 0;

/// Redraws allowed per relay for the minimum base-station distance.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Bs,
    Rn,
    Ue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Dl,
    Ul,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Dl => "dl",
            Direction::Ul => "ul",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Meters.
    pub position: [f64; 2],
    pub radio: RadioConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub tx: NodeId,
    pub rx: NodeId,
    pub direction: Direction,
    pub state: LinkState,
    pub budget: LinkBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub id: FlowId,
    pub ue: NodeId,
    pub direction: Direction,
    /// Links in traversal order, source to destination.
    pub path: Vec<LinkId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<Node>,
    pub parent: Vec<Option<NodeId>>,
    pub children: Vec<Vec<NodeId>>,
    pub links: Vec<Link>,
    pub flows: Vec<Flow>,
    /// Users left unserved because every candidate was blocked.
    pub outage_ues: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_side: Option<f64>,
    #[serde(skip)]
    pub channels: Option<ChannelMap>,
    /// Parent-to-node link of each non-root node.
    down_link: Vec<Option<LinkId>>,
    /// Node-to-parent link of each non-root node.
    up_link: Vec<Option<LinkId>>,
}

impl Topology {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn kind(&self, n: NodeId) -> NodeKind {
        self.nodes[n].kind
    }

    /// Base station and relays: the nodes whose modes the scheduler chooses.
    pub fn access_points(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| n.kind != NodeKind::Ue).map(|n| n.id)
    }

    pub fn relays(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Rn).map(|n| n.id)
    }

    pub fn users(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Ue).map(|n| n.id)
    }

    pub fn relay_children(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.children[n].iter().copied().filter(move |&c| self.nodes[c].kind == NodeKind::Rn)
    }

    pub fn user_children(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.children[n].iter().copied().filter(move |&c| self.nodes[c].kind == NodeKind::Ue)
    }

    pub fn down_link(&self, n: NodeId) -> Option<LinkId> {
        self.down_link[n]
    }

    pub fn up_link(&self, n: NodeId) -> Option<LinkId> {
        self.up_link[n]
    }

    /// Links transmitted by `n`.
    pub fn links_from(&self, n: NodeId) -> impl Iterator<Item = &Link> + '_ {
        self.links.iter().filter(move |l| l.tx == n)
    }

    /// Flows whose path includes `link`.
    pub fn flows_on(&self, link: LinkId) -> impl Iterator<Item = &Flow> + '_ {
        self.flows.iter().filter(move |f| f.path.contains(&link))
    }

    /// Serving link state of a user, `Outage` when unserved.
    pub fn ue_state(&self, ue: NodeId) -> LinkState {
        match self.down_link[ue] {
            Some(l) => self.links[l].state,
            None => LinkState::Outage,
        }
    }

    pub fn depth(&self, mut n: NodeId) -> usize {
        let mut d = 0;
        while let Some(p) = self.parent[n] {
            n = p;
            d += 1;
        }
        d
    }

    /// Worst-case average interference (mW) at `victim` from every other node.
    /// Hand-built topologies carry no channel map and report zero.
    pub fn max_avg_interference(&self, victim: NodeId) -> f64 {
        match &self.channels {
            Some(map) => {
                let powers: Vec<f64> = self.nodes.iter().map(|n| n.radio.tx_power).collect();
                max_avg_interference(&powers, map, victim)
            }
            None => 0.0,
        }
    }

    /// Checks the tree invariants: single root, acyclic parent map, users are
    /// leaves, one link per direction per edge, flow paths connect the root to
    /// their user.
    pub fn check(&self) -> Result<()> {
        let n = self.nodes.len();
        let bad = |m: String| Err(Error::Deployment(m));
        if n == 0 || self.nodes[ROOT].kind != NodeKind::Bs || self.parent[ROOT].is_some() {
            return bad("node 0 must be the parentless base station".into());
        }
        if self.nodes.iter().filter(|x| x.kind == NodeKind::Bs).count() != 1 {
            return bad("exactly one base station required".into());
        }
        for v in 1..n {
            let served = self.parent[v].is_some();
            if !served && !self.outage_ues.contains(&v) {
                return bad(format!("node {v} is detached"));
            }
            let mut seen = 0;
            let mut cur = v;
            while let Some(p) = self.parent[cur] {
                cur = p;
                seen += 1;
                if seen > n {
                    return bad(format!("cycle through node {v}"));
                }
            }
            if served && cur != ROOT {
                return bad(format!("node {v} does not reach the root"));
            }
            if self.nodes[v].kind == NodeKind::Ue && !self.children[v].is_empty() {
                return bad(format!("user {v} has children"));
            }
        }
        let served = (1..n).filter(|&v| self.parent[v].is_some()).count();
        for dir in [Direction::Dl, Direction::Ul] {
            if self.links.iter().filter(|l| l.direction == dir).count() != served {
                return bad(format!("{} link count mismatch", dir.as_str()));
            }
        }
        for f in &self.flows {
            let (first, last) = (&self.links[f.path[0]], &self.links[*f.path.last().unwrap()]);
            let ok = match f.direction {
                Direction::Dl => first.tx == ROOT && last.rx == f.ue,
                Direction::Ul => first.tx == f.ue && last.rx == ROOT,
            };
            if !ok || f.path.windows(2).any(|w| self.links[w[0]].rx != self.links[w[1]].tx) {
                return bad(format!("flow {} path is broken", f.id));
            }
        }
        Ok(())
    }

    fn assemble(
        nodes: Vec<Node>,
        parent: Vec<Option<NodeId>>,
        outage_ues: Vec<NodeId>,
        mut link_info: impl FnMut(NodeId, NodeId, Direction) -> (LinkState, LinkBudget),
    ) -> Topology {
        let n = nodes.len();
        let mut children = vec![Vec::new(); n];
        for v in 0..n {
            if let Some(p) = parent[v] {
                children[p].push(v);
            }
        }
        let mut links = Vec::new();
        let mut down_link = vec![None; n];
        let mut up_link = vec![None; n];
        for v in 0..n {
            let Some(p) = parent[v] else { continue };
            for (dir, tx, rx) in [(Direction::Dl, p, v), (Direction::Ul, v, p)] {
                let (state, budget) = link_info(tx, rx, dir);
                let id = links.len();
                links.push(Link { id, tx, rx, direction: dir, state, budget });
                match dir {
                    Direction::Dl => down_link[v] = Some(id),
                    Direction::Ul => up_link[v] = Some(id),
                }
            }
        }
        let mut flows = Vec::new();
        for v in 0..n {
            if nodes[v].kind != NodeKind::Ue || parent[v].is_none() {
                continue;
            }
            let mut ups = Vec::new();
            let mut downs = Vec::new();
            let mut cur = v;
            while parent[cur].is_some() {
                ups.push(up_link[cur].unwrap());
                downs.push(down_link[cur].unwrap());
                cur = parent[cur].unwrap();
            }
            downs.reverse();
            flows.push(Flow { id: flows.len(), ue: v, direction: Direction::Dl, path: downs });
            flows.push(Flow { id: flows.len(), ue: v, direction: Direction::Ul, path: ups });
        }
        Topology {
            nodes,
            parent,
            children,
            links,
            flows,
            outage_ues,
            area_side: None,
            channels: None,
            down_link,
            up_link,
        }
    }
}

/// Toroidal distance on a `side` x `side` square.
pub fn wrap_distance(a: [f64; 2], b: [f64; 2], side: f64) -> f64 {
    let axis = |u: f64, v: f64| {
        let d = (u - v).abs() % side;
        d.min(side - d)
    };
    axis(a[0], b[0]).hypot(axis(a[1], b[1]))
}

/// Uniform placement of one base station, `n_rn` relays (each farther than
/// `min_rn_distance` from the base station) and `n_ue` users.
pub fn drop_nodes<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Vec<Node>> {
    let dep = &cfg.deployment;
    let side = dep.area_side;
    let uniform = |rng: &mut R| [rng.gen::<f64>() * side, rng.gen::<f64>() * side];
    let bs_pos = uniform(rng);
    let mut nodes = vec![Node { id: ROOT, kind: NodeKind::Bs, position: bs_pos, radio: cfg.radio.bs }];
    for _ in 0..dep.n_rn {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let p = uniform(rng);
            if wrap_distance(p, bs_pos, side) > dep.min_rn_distance {
                placed = Some(p);
                break;
            }
        }
        let position = placed.ok_or_else(|| {
            Error::Deployment(format!(
                "no relay position farther than {} m from the base station in a {side} m area",
                dep.min_rn_distance
            ))
        })?;
        nodes.push(Node { id: nodes.len(), kind: NodeKind::Rn, position, radio: cfg.radio.bs });
    }
    for _ in 0..dep.n_ue {
        let position = uniform(rng);
        nodes.push(Node { id: nodes.len(), kind: NodeKind::Ue, position, radio: cfg.radio.ue });
    }
    Ok(nodes)
}

/// Draws the pair channel of every node pair once. Base-station/relay pairs
/// are planned line-of-sight.
pub fn sample_channels<R: Rng + ?Sized>(cfg: &ScenarioConfig, nodes: &[Node], rng: &mut R) -> ChannelMap {
    let side = cfg.deployment.area_side;
    let ch = &cfg.channel;
    ChannelMap::new(nodes.len(), |i, j| {
        let distance = wrap_distance(nodes[i].position, nodes[j].position, side);
        let backhaul = matches!(
            (nodes[i].kind, nodes[j].kind),
            (NodeKind::Bs, NodeKind::Rn) | (NodeKind::Rn, NodeKind::Bs)
        );
        let state = if backhaul {
            LinkState::Los
        } else {
            sample_link_state(distance, &ch.link_state, rng)
        };
        let xi = sample_shadowing(ch.path_loss(state).sigma, rng);
        let path_loss = match state {
            LinkState::Outage => f64::INFINITY,
            s => path_loss_db(distance, ch.path_loss(s), xi),
        };
        PairChannel { state, distance, path_loss }
    })
}

/// Serving node for user `ue`: the non-blocked candidate with the least
/// effective loss (path loss minus long-term beamforming gain). Relays whose
/// backhaul is not line-of-sight are ineligible; ties go to the lowest id.
/// `None` means every candidate is blocked.
pub fn associate(ue: NodeId, nodes: &[Node], channels: &ChannelMap) -> Option<NodeId> {
    let mut best: Option<(NodeId, f64)> = None;
    for cand in nodes.iter().filter(|n| n.kind != NodeKind::Ue) {
        if cand.kind == NodeKind::Rn && channels.get(ROOT, cand.id).state != LinkState::Los {
            continue;
        }
        let pc = channels.get(cand.id, ue);
        if pc.state == LinkState::Outage {
            continue;
        }
        let eff = pc.path_loss - beamforming_gain_db(cand.radio.n_antennas, nodes[ue].radio.n_antennas);
        if best.map_or(true, |(_, b)| eff < b) {
            best = Some((cand.id, eff));
        }
    }
    best.map(|(id, _)| id)
}

/// One complete drop: placement, channels, association, budgets and flows.
pub fn build_topology<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Topology> {
    let nodes = drop_nodes(cfg, rng)?;
    let channels = sample_channels(cfg, &nodes, rng);
    let mut parent = vec![None; nodes.len()];
    let mut outage_ues = Vec::new();
    for n in &nodes {
        match n.kind {
            NodeKind::Bs => {}
            // two-hop deployment: every relay hangs off the base station
            NodeKind::Rn => parent[n.id] = Some(ROOT),
            NodeKind::Ue => match associate(n.id, &nodes, &channels) {
                Some(p) => parent[n.id] = Some(p),
                None => outage_ues.push(n.id),
            },
        }
    }
    let rate = cfg.channel.rate_params();
    let powers: Vec<f64> = nodes.iter().map(|n| n.radio.tx_power).collect();
    let interference: Vec<f64> =
        (0..nodes.len()).map(|v| max_avg_interference(&powers, &channels, v)).collect();
    let mut topo = Topology::assemble(nodes.clone(), parent, outage_ues, |tx, rx, _| {
        let pc = channels.get(tx, rx);
        // the serving transmitter is not its own interferer
        let own = omni_received_mw(powers[tx], pc.state, pc.path_loss);
        let i = (interference[rx] - own).max(0.0);
        let budget = LinkBudget::compute(pc.path_loss, &nodes[tx].radio, &nodes[rx].radio, i, &rate);
        (pc.state, budget)
    });
    topo.area_side = Some(cfg.deployment.area_side);
    topo.channels = Some(channels);
    Ok(topo)
}

/// Hand-built trees with prescribed spectral efficiencies, for tests and
/// small studies.
#[derive(Debug, Clone)]
pub struct TopologyBuilder {
    nodes: Vec<Node>,
    parent: Vec<Option<NodeId>>,
    rho: Vec<Option<(f64, f64)>>,
    outage: Vec<NodeId>,
}

impl Default for TopologyBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl TopologyBuilder {
    pub fn new() -> TopologyBuilder {
        TopologyBuilder {
            nodes: vec![Node {
                id: ROOT,
                kind: NodeKind::Bs,
                position: [0.0, 0.0],
                radio: RadioConfig::BASE_STATION,
            }],
            parent: vec![None],
            rho: vec![None],
            outage: Vec::new(),
        }
    }

    fn push(&mut self, kind: NodeKind, parent: Option<NodeId>, rho: Option<(f64, f64)>) -> NodeId {
        let id = self.nodes.len();
        let radio = if kind == NodeKind::Ue { RadioConfig::USER } else { RadioConfig::BASE_STATION };
        self.nodes.push(Node { id, kind, position: [id as f64, 0.0], radio });
        self.parent.push(parent);
        self.rho.push(rho);
        id
    }

    /// Relay under `parent` with downlink/uplink spectral efficiencies (bits/s/Hz).
    pub fn relay(&mut self, parent: NodeId, dl: f64, ul: f64) -> NodeId {
        assert_ne!(self.nodes[parent].kind, NodeKind::Ue);
        self.push(NodeKind::Rn, Some(parent), Some((dl, ul)))
    }

    pub fn user(&mut self, parent: NodeId, dl: f64, ul: f64) -> NodeId {
        assert_ne!(self.nodes[parent].kind, NodeKind::Ue);
        self.push(NodeKind::Ue, Some(parent), Some((dl, ul)))
    }

    pub fn outage_user(&mut self) -> NodeId {
        let id = self.push(NodeKind::Ue, None, None);
        self.outage.push(id);
        id
    }

    pub fn build(self) -> Topology {
        let rho = self.rho;
        Topology::assemble(self.nodes, self.parent, self.outage, |tx, rx, dir| {
            let (dl, ul) = match dir {
                Direction::Dl => rho[rx].unwrap(),
                Direction::Ul => rho[tx].unwrap(),
            };
            let r = if dir == Direction::Dl { dl } else { ul };
            (LinkState::Los, LinkBudget::from_spectral_efficiency(r))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wrap_distance_examples() {
        assert_eq!(wrap_distance([3.0, 4.0], [3.0, 4.0], 400.0), 0.0);
        assert!((wrap_distance([0.0, 0.0], [399.0, 0.0], 400.0) - 1.0).abs() < 1e-12);
        assert!((wrap_distance([0.0, 0.0], [200.0, 200.0], 400.0) - 200.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((wrap_distance([10.0, 390.0], [390.0, 10.0], 400.0) - 20.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn drops_respect_counts_and_relay_spacing() {
        let cfg = ScenarioConfig::case1();
        for seed in 0..25 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nodes = drop_nodes(&cfg, &mut rng).unwrap();
            let count = |k| nodes.iter().filter(|n| n.kind == k).count();
            assert_eq!((count(NodeKind::Bs), count(NodeKind::Rn), count(NodeKind::Ue)), (1, 2, 10));
            for n in &nodes {
                assert!(n.position.iter().all(|&c| (0.0..400.0).contains(&c)));
                if n.kind == NodeKind::Rn {
                    assert!(wrap_distance(n.position, nodes[0].position, 400.0) > 50.0);
                }
            }
        }
    }

    #[test]
    fn impossible_spacing_fails() {
        let mut cfg = ScenarioConfig::case1();
        cfg.deployment.area_side = 60.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(drop_nodes(&cfg, &mut rng), Err(Error::Deployment(_))));
    }

    #[test]
    fn no_relays_means_star() {
        let mut cfg = ScenarioConfig::case1();
        cfg.deployment.n_rn = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = build_topology(&cfg, &mut rng).unwrap();
        t.check().unwrap();
        for u in t.users() {
            assert!(t.parent[u].is_none() || t.parent[u] == Some(ROOT));
        }
        assert!(t.flows.iter().all(|f| f.path.len() == 1));
    }

    #[test]
    fn built_topologies_satisfy_tree_invariants() {
        let cfg = ScenarioConfig::case2();
        for seed in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = build_topology(&cfg, &mut rng).unwrap();
            t.check().unwrap();
            let served = t.users().filter(|&u| t.parent[u].is_some()).count();
            assert_eq!(t.flows.len(), 2 * served);
            assert_eq!(served + t.outage_ues.len(), 10);
            assert!(t.flows.iter().all(|f| f.path.len() <= 2));
            for r in t.relays() {
                let l = t.down_link(r).unwrap();
                assert_eq!(t.links[l].state, LinkState::Los);
                assert_eq!(t.links[t.up_link(r).unwrap()].state, LinkState::Los);
            }
            // association optimality
            let map = t.channels.as_ref().unwrap();
            for u in t.users() {
                let Some(p) = t.parent[u] else { continue };
                let chosen = map.get(p, u).path_loss;
                for c in t.access_points() {
                    let pc = map.get(c, u);
                    if pc.state != LinkState::Outage {
                        assert!(pc.path_loss >= chosen, "seed {seed}: user {u} misassociated");
                    }
                }
            }
        }
    }

    #[test]
    fn downlink_and_uplink_budgets_differ_by_radio() {
        let cfg = ScenarioConfig::case1();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = build_topology(&cfg, &mut rng).unwrap();
        let u = t.users().find(|&u| t.parent[u].is_some()).unwrap();
        let dl = &t.links[t.down_link(u).unwrap()].budget;
        let ul = &t.links[t.up_link(u).unwrap()].budget;
        assert_eq!(dl.path_loss, ul.path_loss);
        assert!((dl.rx_power - ul.rx_power - 10.0).abs() < 1e-9);
        assert!(dl.noise > ul.noise);
    }

    #[test]
    fn same_seed_same_topology() {
        let cfg = ScenarioConfig::case1();
        let a = build_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = build_topology(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn association_ties_go_to_lowest_id() {
        let mk = |id, kind| Node { id, kind, position: [0.0, 0.0], radio: RadioConfig::BASE_STATION };
        let nodes = vec![
            mk(0, NodeKind::Bs),
            mk(1, NodeKind::Rn),
            mk(2, NodeKind::Rn),
            Node { id: 3, kind: NodeKind::Ue, position: [0.0, 0.0], radio: RadioConfig::USER },
        ];
        let los = |pl| PairChannel { state: LinkState::Los, distance: 60.0, path_loss: pl };
        let map = ChannelMap::new(4, |i, j| match (i, j) {
            (0, 3) => los(120.0),
            (1, 3) | (2, 3) => los(100.0),
            _ => los(90.0),
        });
        for _ in 0..3 {
            assert_eq!(associate(3, &nodes, &map), Some(1));
        }
        let blocked = PairChannel { state: LinkState::Outage, distance: 300.0, path_loss: f64::INFINITY };
        let map = ChannelMap::new(4, |_, j| if j == 3 { blocked } else { los(90.0) });
        assert_eq!(associate(3, &nodes, &map), None);
        let map = ChannelMap::new(4, |i, j| match (i, j) {
            (0, 1) => PairChannel { state: LinkState::Nlos, distance: 60.0, path_loss: 95.0 },
            (0, 3) => los(120.0),
            (1, 3) => los(80.0),
            (2, 3) => los(100.0),
            _ => los(90.0),
        });
        // relay 1 has the best access path but a blocked-quality backhaul
        assert_eq!(associate(3, &nodes, &map), Some(2));
    }

    #[test]
    fn builder_flows_and_outage() {
        let mut b = TopologyBuilder::new();
        let r = b.relay(ROOT, 5.0, 5.0);
        b.user(ROOT, 2.0, 1.0);
        b.user(r, 3.0, 3.0);
        b.outage_user();
        let t = b.build();
        t.check().unwrap();
        assert_eq!(t.flows.len(), 4);
        assert_eq!(t.outage_ues, vec![4]);
        assert_eq!(t.max_avg_interference(1), 0.0);
        let relayed_dl = t.flows.iter().find(|f| f.ue == 3 && f.direction == Direction::Dl).unwrap();
        assert_eq!(relayed_dl.path.len(), 2);
        assert_eq!(t.links[relayed_dl.path[0]].tx, ROOT);
    }
}
