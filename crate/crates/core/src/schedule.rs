//! Node duplexing modes per subframe and the link activity they imply.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{NodeId, NodeKind, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    Tx,
    Rx,
    Mute,
}

impl Mode {
    pub fn opposite(self) -> Mode {
        match self {
            Mode::Tx => Mode::Rx,
            Mode::Rx => Mode::Tx,
            Mode::Mute => Mode::Mute,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Mode::Tx => 1,
            Mode::Rx => -1,
            Mode::Mute => 0,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Mode::Tx => '+',
            Mode::Rx => '-',
            Mode::Mute => '0',
        }
    }
}

/// Mode of every node (rows) in every subframe (columns).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DuplexSchedule {
    rows: Vec<Vec<Mode>>,
}

impl DuplexSchedule {
    /// All nodes muted.
    pub fn muted(n_nodes: usize, n_subframes: usize) -> DuplexSchedule {
        DuplexSchedule { rows: vec![vec![Mode::Mute; n_subframes]; n_nodes] }
    }

    /// Builds a schedule from base-station and relay rows (in node-id order);
    /// users take the complement of their parent, unserved users are muted.
    pub fn from_access_rows(topo: &Topology, access_rows: &[Vec<Mode>]) -> Result<DuplexSchedule> {
        let aps: Vec<NodeId> = topo.access_points().collect();
        if access_rows.len() != aps.len() {
            return Err(Error::Schedule(format!(
                "expected {} access-point rows, got {}",
                aps.len(),
                access_rows.len()
            )));
        }
        let n_sf = access_rows.first().map_or(0, |r| r.len());
        if n_sf == 0 || access_rows.iter().any(|r| r.len() != n_sf) {
            return Err(Error::Schedule("rows must be non-empty and equally long".into()));
        }
        let mut x = DuplexSchedule::muted(topo.n_nodes(), n_sf);
        for (&n, row) in aps.iter().zip(access_rows) {
            x.rows[n] = row.clone();
        }
        x.sync_users(topo);
        Ok(x)
    }

    pub fn from_rows(rows: Vec<Vec<Mode>>) -> Result<DuplexSchedule> {
        let n_sf = rows.first().map_or(0, |r| r.len());
        if n_sf == 0 || rows.iter().any(|r| r.len() != n_sf) {
            return Err(Error::Schedule("rows must be non-empty and equally long".into()));
        }
        Ok(DuplexSchedule { rows })
    }

    pub fn n_subframes(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    pub fn n_nodes(&self) -> usize {
        self.rows.len()
    }

    pub fn mode(&self, n: NodeId, t: usize) -> Mode {
        self.rows[n][t]
    }

    pub fn row(&self, n: NodeId) -> &[Mode] {
        &self.rows[n]
    }

    pub fn rows(&self) -> &[Vec<Mode>] {
        &self.rows
    }

    pub fn set(&mut self, n: NodeId, t: usize, m: Mode) {
        self.rows[n][t] = m;
    }

    /// Sets each user child of `n` to the complement of `n` in subframe `t`.
    pub fn complement_users(&mut self, topo: &Topology, n: NodeId, t: usize) {
        let m = self.rows[n][t].opposite();
        for u in topo.user_children(n) {
            self.rows[u][t] = m;
        }
    }

    /// Re-derives every served user row from its parent; unserved users mute.
    pub fn sync_users(&mut self, topo: &Topology) {
        for u in topo.users() {
            match topo.parent[u] {
                Some(p) => {
                    for t in 0..self.n_subframes() {
                        self.rows[u][t] = self.rows[p][t].opposite();
                    }
                }
                None => self.rows[u].iter_mut().for_each(|m| *m = Mode::Mute),
            }
        }
    }

    /// Applies a column permutation: new column `k` is old column `perm[k]`.
    pub fn permute_subframes(&self, perm: &[usize]) -> DuplexSchedule {
        assert_eq!(perm.len(), self.n_subframes());
        DuplexSchedule { rows: self.rows.iter().map(|r| perm.iter().map(|&k| r[k]).collect()).collect() }
    }

    /// Representative of the subframe-permutation class (columns sorted).
    pub fn canonical(&self) -> DuplexSchedule {
        let mut cols: Vec<Vec<Mode>> =
            (0..self.n_subframes()).map(|t| self.rows.iter().map(|r| r[t]).collect()).collect();
        cols.sort();
        let rows = (0..self.n_nodes()).map(|n| cols.iter().map(|c| c[n]).collect()).collect();
        DuplexSchedule { rows }
    }

    /// Compact form: one row per base station or relay, `+`/`-`/`0` per subframe.
    pub fn access_string(&self, topo: &Topology) -> String {
        topo.access_points()
            .map(|n| self.rows[n].iter().map(|m| m.symbol()).collect::<String>())
            .collect::<Vec<_>>()
            .join("|")
    }
}

impl fmt::Display for DuplexSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, r) in self.rows.iter().enumerate() {
            let s: String = r.iter().map(|m| m.symbol()).collect();
            writeln!(f, "{n:>3} {s}")?;
        }
        Ok(())
    }
}

/// Activity of every link (rows, by link id) in every subframe.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinkSchedule {
    pub active: Vec<Vec<bool>>,
    pub n_subframes: usize,
}

impl LinkSchedule {
    pub fn is_active(&self, link: usize, t: usize) -> bool {
        self.active[link][t]
    }

    pub fn active_subframes(&self, link: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_subframes).filter(move |&t| self.active[link][t])
    }

    /// Number of (node, subframe) pairs where a node both sends and receives
    /// on an active link.
    pub fn half_duplex_violations(&self, topo: &Topology) -> usize {
        let mut violations = 0;
        for n in 0..topo.n_nodes() {
            for t in 0..self.n_subframes {
                let sends = topo.links.iter().any(|l| l.tx == n && self.active[l.id][t]);
                let receives = topo.links.iter().any(|l| l.rx == n && self.active[l.id][t]);
                if sends && receives {
                    violations += 1;
                }
            }
        }
        violations
    }
}

/// A link is active in `t` exactly when its transmitter is in TX mode and its
/// receiver in RX mode.
pub fn derive_link_schedule(x: &DuplexSchedule, topo: &Topology) -> LinkSchedule {
    assert_eq!(x.n_nodes(), topo.n_nodes(), "schedule does not match topology");
    let n_sf = x.n_subframes();
    let active = topo
        .links
        .iter()
        .map(|l| (0..n_sf).map(|t| x.mode(l.tx, t) == Mode::Tx && x.mode(l.rx, t) == Mode::Rx).collect())
        .collect();
    LinkSchedule { active, n_subframes: n_sf }
}

/// Number of base station and relay rows; users are derived.
pub fn access_point_count(topo: &Topology) -> usize {
    topo.nodes.iter().filter(|n| n.kind != NodeKind::Ue).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{TopologyBuilder, ROOT};
    use Mode::{Rx, Tx};

    fn two_hop() -> Topology {
        let mut b = TopologyBuilder::new();
        let r = b.relay(ROOT, 4.0, 4.0);
        b.user(ROOT, 2.0, 2.0);
        b.user(r, 3.0, 3.0);
        b.build()
    }

    #[test]
    fn all_transmitting_activates_nothing() {
        let t = two_hop();
        let mut x = DuplexSchedule::muted(t.n_nodes(), 3);
        for n in 0..t.n_nodes() {
            for s in 0..3 {
                x.set(n, s, Tx);
            }
        }
        let ls = derive_link_schedule(&x, &t);
        assert!(ls.active.iter().flatten().all(|&a| !a));
    }

    #[test]
    fn backhaul_downlink_subframe() {
        let t = two_hop();
        let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx], vec![Rx]]).unwrap();
        let ls = derive_link_schedule(&x, &t);
        let r = 1;
        assert!(ls.is_active(t.down_link(r).unwrap(), 0));
        // relay receives, so its user transmits on the uplink and the
        // relay's downlink access is idle
        assert!(!ls.is_active(t.down_link(3).unwrap(), 0));
        assert!(ls.is_active(t.up_link(3).unwrap(), 0));
        assert!(ls.is_active(t.down_link(2).unwrap(), 0));
        assert_eq!(ls.half_duplex_violations(&t), 0);
    }

    #[test]
    fn users_complement_parent() {
        let t = two_hop();
        let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx, Rx], vec![Rx, Tx]]).unwrap();
        assert_eq!(x.row(2), &[Rx, Tx]);
        assert_eq!(x.row(3), &[Tx, Rx]);
        assert_eq!(x.access_string(&t), "+-|-+");
    }

    #[test]
    fn canonical_is_permutation_invariant() {
        let t = two_hop();
        let x = DuplexSchedule::from_access_rows(&t, &[vec![Tx, Rx, Tx], vec![Rx, Rx, Tx]]).unwrap();
        let y = x.permute_subframes(&[2, 0, 1]);
        assert_ne!(x, y);
        assert_eq!(x.canonical(), y.canonical());
    }

    #[test]
    fn row_shape_errors() {
        let t = two_hop();
        assert!(DuplexSchedule::from_access_rows(&t, &[vec![Tx]]).is_err());
        assert!(DuplexSchedule::from_access_rows(&t, &[vec![Tx], vec![Tx, Rx]]).is_err());
    }
}
