//! Comparison anchors: the static LTE-TDD relay sweep and exhaustive search
//! over duplexing schedules for small instances.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{DuplexSchedule, Mode};
use crate::solver::{Allocation, InnerSolver};
use crate::topology::{NodeKind, Topology};

/// The pattern file shipped with the crate.
pub const DEFAULT_PATTERNS: &str = include_str!("../data/lte_tdd_patterns.txt");

/// Bound on `n_subframes * (n_rn + 1)` for exhaustive search.
pub const BRUTE_FORCE_LIMIT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubframeKind {
    D,
    U,
    S,
}

impl SubframeKind {
    fn parse(c: char) -> Option<SubframeKind> {
        match c {
            'D' => Some(SubframeKind::D),
            'U' => Some(SubframeKind::U),
            'S' => Some(SubframeKind::S),
            _ => None,
        }
    }

    fn letter(self) -> char {
        match self {
            SubframeKind::D => 'D',
            SubframeKind::U => 'U',
            SubframeKind::S => 'S',
        }
    }
}

/// Subframes reserved for base-station/relay traffic.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackhaulMask {
    pub dl: Vec<usize>,
    pub ul: Vec<usize>,
}

impl fmt::Display for BackhaulMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
        write!(f, "dl={} ul={}", list(&self.dl), list(&self.ul))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticPattern {
    pub name: String,
    pub subframes: Vec<SubframeKind>,
    pub masks: Vec<BackhaulMask>,
}

impl StaticPattern {
    /// Subframes not designated `S`.
    pub fn usable(&self) -> usize {
        self.subframes.iter().filter(|&&k| k != SubframeKind::S).count()
    }

    pub fn letters(&self) -> String {
        self.subframes.iter().map(|k| k.letter()).collect()
    }

    /// Downlink mask subframes must be `D` and uplink mask subframes `U`.
    pub fn accepts(&self, mask: &BackhaulMask) -> bool {
        let kind = |t: usize| self.subframes.get(t).copied();
        mask.dl.iter().all(|&t| kind(t) == Some(SubframeKind::D))
            && mask.ul.iter().all(|&t| kind(t) == Some(SubframeKind::U))
    }
}

/// Parses the pattern file format:
///
/// ```text
/// # comment
/// pattern NAME DSUUUDSUUU
/// mask NAME dl=9 ul=3
/// ```
///
/// `mask` lines refer to a pattern declared earlier; indices are 0-based and
/// either list may be empty (`dl=`). `path` only labels errors.
pub fn parse_patterns(text: &str, path: &str) -> Result<Vec<StaticPattern>> {
    let err = |line: usize, msg: String| Error::Parse { path: path.to_string(), line, msg };
    let mut patterns: Vec<StaticPattern> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let words: Vec<&str> = content.split_whitespace().collect();
        match words[0] {
            "pattern" => {
                let [_, name, letters] = words[..] else {
                    return Err(err(line, "expected `pattern NAME SUBFRAMES`".into()));
                };
                if patterns.iter().any(|p| p.name == name) {
                    return Err(err(line, format!("duplicate pattern `{name}`")));
                }
                let subframes = letters
                    .chars()
                    .map(|c| SubframeKind::parse(c).ok_or_else(|| err(line, format!("bad subframe letter `{c}`"))))
                    .collect::<Result<Vec<_>>>()?;
                patterns.push(StaticPattern { name: name.to_string(), subframes, masks: Vec::new() });
            }
            "mask" => {
                if words.len() != 4 {
                    return Err(err(line, "expected `mask NAME dl=LIST ul=LIST`".into()));
                }
                let pat = patterns
                    .iter_mut()
                    .find(|p| p.name == words[1])
                    .ok_or_else(|| err(line, format!("unknown pattern `{}`", words[1])))?;
                let n = pat.subframes.len();
                let list = |word: &str, key: &str| -> Result<Vec<usize>> {
                    let v = word.strip_prefix(key).ok_or_else(|| err(line, format!("expected `{key}LIST`")))?;
                    let mut out = Vec::new();
                    for s in v.split(',').filter(|s| !s.is_empty()) {
                        let t: usize = s.parse().map_err(|_| err(line, format!("bad subframe index `{s}`")))?;
                        if t >= n {
                            return Err(err(line, format!("subframe {t} out of range for {n} subframes")));
                        }
                        out.push(t);
                    }
                    Ok(out)
                };
                let mask = BackhaulMask { dl: list(words[2], "dl=")?, ul: list(words[3], "ul=")? };
                pat.masks.push(mask);
            }
            other => return Err(err(line, format!("unknown directive `{other}`"))),
        }
    }
    Ok(patterns)
}

pub fn load_patterns(path: &Path) -> Result<Vec<StaticPattern>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_patterns(&text, &path.display().to_string())
}

pub fn default_patterns() -> Vec<StaticPattern> {
    parse_patterns(DEFAULT_PATTERNS, "lte_tdd_patterns.txt").expect("shipped pattern file parses")
}

/// One valid (pattern, mask) combination expanded to node modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticConfig {
    pub pattern: String,
    pub mask: BackhaulMask,
    pub schedule: DuplexSchedule,
}

impl StaticConfig {
    pub fn label(&self) -> String {
        format!("{} {}", self.pattern, self.mask)
    }
}

/// Node modes for one pattern and mask:
///
/// | subframe      | BS  | RN  | UE  |
/// |---------------|-----|-----|-----|
/// | `D`           | TX  | TX  | RX  |
/// | `D`, reserved | TX  | RX  | RX  |
/// | `U`           | RX  | RX  | TX  |
/// | `U`, reserved | RX  | TX  | TX  |
/// | `S`           | mute| mute| mute|
///
/// Unserved users are muted throughout.
pub fn expand(topo: &Topology, pattern: &StaticPattern, mask: &BackhaulMask) -> DuplexSchedule {
    let n_sf = pattern.subframes.len();
    let mut x = DuplexSchedule::muted(topo.n_nodes(), n_sf);
    for (t, &kind) in pattern.subframes.iter().enumerate() {
        let (bs, rn, ue) = match kind {
            SubframeKind::D if mask.dl.contains(&t) => (Mode::Tx, Mode::Rx, Mode::Rx),
            SubframeKind::D => (Mode::Tx, Mode::Tx, Mode::Rx),
            SubframeKind::U if mask.ul.contains(&t) => (Mode::Rx, Mode::Tx, Mode::Tx),
            SubframeKind::U => (Mode::Rx, Mode::Rx, Mode::Tx),
            SubframeKind::S => (Mode::Mute, Mode::Mute, Mode::Mute),
        };
        for n in 0..topo.n_nodes() {
            let m = match topo.kind(n) {
                NodeKind::Bs => bs,
                NodeKind::Rn => rn,
                NodeKind::Ue if topo.parent[n].is_some() => ue,
                NodeKind::Ue => Mode::Mute,
            };
            x.set(n, t, m);
        }
    }
    x
}

/// Every valid combination, in file order. Patterns must have `n_subframes`
/// subframes; with `usable` set, patterns with a different number of non-`S`
/// subframes are skipped. Returns the configurations and the number of
/// rejected (inconsistent) combinations.
pub fn enumerate_static_configs(
    patterns: &[StaticPattern],
    topo: &Topology,
    n_subframes: usize,
    usable: Option<usize>,
) -> Result<(Vec<StaticConfig>, usize)> {
    let mut configs = Vec::new();
    let mut rejected = 0;
    for p in patterns {
        if p.subframes.len() != n_subframes {
            return Err(Error::Config(format!(
                "pattern `{}` has {} subframes, frame has {}",
                p.name,
                p.subframes.len(),
                n_subframes
            )));
        }
        if usable.is_some_and(|u| u != p.usable()) {
            continue;
        }
        for m in &p.masks {
            if p.accepts(m) {
                configs.push(StaticConfig { pattern: p.name.clone(), mask: m.clone(), schedule: expand(topo, p, m) });
            } else {
                rejected += 1;
            }
        }
    }
    Ok((configs, rejected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticOutcome {
    pub config: StaticConfig,
    pub utility: f64,
    pub allocation: Allocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticSweep {
    /// One entry per configuration, in input order.
    pub outcomes: Vec<StaticOutcome>,
    /// Index of the utility-maximizing configuration.
    pub best: usize,
}

impl StaticSweep {
    pub fn best(&self) -> &StaticOutcome {
        &self.outcomes[self.best]
    }

    /// Per-flow rate averaged over all configurations (bits/s).
    pub fn average_rates(&self) -> Vec<f64> {
        let n = self.outcomes.len() as f64;
        let flows = self.outcomes[0].allocation.flow_rates.len();
        (0..flows)
            .map(|f| self.outcomes.iter().map(|o| o.allocation.flow_rates[f]).sum::<f64>() / n)
            .collect()
    }
}

/// Solves every configuration. Non-converged solves count as `-inf` when
/// picking the best; ties go to the lexicographically smallest schedule.
pub fn best_static(topo: &Topology, configs: &[StaticConfig], solver: &InnerSolver) -> Result<StaticSweep> {
    if configs.is_empty() {
        return Err(Error::Config("no valid static configuration".into()));
    }
    let outcomes: Vec<StaticOutcome> = configs
        .par_iter()
        .map(|c| {
            let allocation = solver.evaluate(topo, &c.schedule);
            let utility = if allocation.converged { allocation.utility } else { f64::NEG_INFINITY };
            StaticOutcome { config: c.clone(), utility, allocation }
        })
        .collect();
    let best = (0..outcomes.len())
        .reduce(|a, b| {
            let (oa, ob) = (&outcomes[a], &outcomes[b]);
            if ob.utility > oa.utility || (ob.utility == oa.utility && ob.config.schedule < oa.config.schedule) {
                b
            } else {
                a
            }
        })
        .unwrap();
    Ok(StaticSweep { outcomes, best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceResult {
    pub schedule: DuplexSchedule,
    pub utility: f64,
    pub allocation: Allocation,
    /// Schedules solved.
    pub evaluated: usize,
}

/// `C(2^(n_rn+1) + n_subframes - 1, n_subframes)`: schedules over base
/// station and relay rows that differ other than by reordering subframes.
pub fn count_unique(n_subframes: usize, n_rn: usize) -> u128 {
    let kinds = 1u128 << (n_rn + 1);
    binomial(kinds + n_subframes as u128 - 1, n_subframes as u128)
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n.saturating_sub(k));
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// Nondecreasing sequences of length `len` over `0..kinds`.
fn multisets(kinds: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(len);
    fn rec(kinds: usize, len: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for c in start..kinds {
            cur.push(c);
            rec(kinds, len, c, cur, out);
            cur.pop();
        }
    }
    rec(kinds, len, 0, &mut cur, &mut out);
    out
}

/// Exhaustive search over base-station and relay modes (users complement
/// their parent). With `reduced`, one schedule per subframe-permutation
/// class; otherwise all `2^(n_subframes * (n_rn + 1))` schedules.
pub fn brute_force(topo: &Topology, n_subframes: usize, solver: &InnerSolver, reduced: bool) -> Result<BruteForceResult> {
    let aps = topo.access_points().count();
    if n_subframes == 0 || n_subframes * aps > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(format!(
            "{} subframes x {} base-station/relay rows exceeds {}",
            n_subframes, aps, BRUTE_FORCE_LIMIT
        )));
    }
    let kinds = 1usize << aps;
    let columns: Vec<Vec<usize>> = if reduced {
        multisets(kinds, n_subframes)
    } else {
        (0..kinds.pow(n_subframes as u32))
            .map(|mut code| {
                (0..n_subframes)
                    .map(|_| {
                        let c = code % kinds;
                        code /= kinds;
                        c
                    })
                    .collect()
            })
            .collect()
    };
    let schedules: Vec<DuplexSchedule> = columns
        .iter()
        .map(|cols| {
            let rows: Vec<Vec<Mode>> = (0..aps)
                .map(|a| cols.iter().map(|&c| if c >> a & 1 == 1 { Mode::Tx } else { Mode::Rx }).collect())
                .collect();
            DuplexSchedule::from_access_rows(topo, &rows)
        })
        .collect::<Result<_>>()?;
    let solved: Vec<(f64, Allocation)> = schedules
        .par_iter()
        .map(|x| {
            let a = solver.evaluate(topo, x);
            (if a.converged { a.utility } else { f64::NEG_INFINITY }, a)
        })
        .collect();
    let best = (0..schedules.len())
        .reduce(|a, b| {
            if solved[b].0 > solved[a].0 || (solved[b].0 == solved[a].0 && schedules[b] < schedules[a]) {
                b
            } else {
                a
            }
        })
        .unwrap();
    let evaluated = schedules.len();
    let (utility, allocation) = solved.into_iter().nth(best).unwrap();
    Ok(BruteForceResult { schedule: schedules.into_iter().nth(best).unwrap(), utility, allocation, evaluated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{TopologyBuilder, ROOT};

    #[test]
    fn counts() {
        assert_eq!(count_unique(1, 0), 2);
        assert_eq!(count_unique(4, 2), 330);
        assert_eq!(multisets(8, 4).len(), 330);
        for n in 1..5 {
            for r in 0..3 {
                assert!(count_unique(n, r) <= 1u128 << (n * (r + 1)));
                assert_eq!(multisets(1 << (r + 1), n).len() as u128, count_unique(n, r));
            }
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = parse_patterns("pattern a DU\n\nmask b dl=0 ul=1\n", "p.txt").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = parse_patterns("pattern a DXU\n", "p.txt").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = parse_patterns("# c\npattern a DU\nmask a dl=5 ul=\n", "p.txt").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        assert!(parse_patterns("frame a DU\n", "p").is_err());
    }

    #[test]
    fn shipped_patterns() {
        let p = default_patterns();
        assert_eq!(p.len(), 7);
        assert!(p.iter().all(|p| p.subframes.len() == 10));
        assert_eq!(p[1].letters(), "DSUUDDSUUD");
        assert!(p.iter().flat_map(|p| p.masks.iter().map(move |m| p.accepts(m))).all(|ok| ok));
    }

    #[test]
    fn expansion_and_rejection() {
        let mut b = TopologyBuilder::new();
        let r = b.relay(ROOT, 5.0, 5.0);
        let u0 = b.user(ROOT, 2.0, 2.0);
        let u1 = b.user(r, 2.0, 2.0);
        let t = b.build();
        let pats = parse_patterns("pattern p DUDU\nmask p dl= ul=\nmask p dl=1 ul=\nmask p dl=2 ul=1\n", "x").unwrap();
        let (cfgs, rejected) = enumerate_static_configs(&pats, &t, 4, None).unwrap();
        assert_eq!((cfgs.len(), rejected), (2, 1));
        use Mode::{Rx, Tx};
        assert_eq!(cfgs[0].schedule.row(ROOT), &[Tx, Rx, Tx, Rx]);
        assert_eq!(cfgs[0].schedule.row(r), &[Tx, Rx, Tx, Rx]);
        assert_eq!(cfgs[0].schedule.row(u0), &[Rx, Tx, Rx, Tx]);
        assert_eq!(cfgs[1].schedule.row(r), &[Tx, Tx, Rx, Rx]);
        assert_eq!(cfgs[1].schedule.row(u1), &[Rx, Tx, Rx, Tx]);
        assert!(enumerate_static_configs(&pats, &t, 10, None).is_err());
        assert!(enumerate_static_configs(&pats, &t, 4, Some(3)).unwrap().0.is_empty());
        let lte = default_patterns();
        let usable: Vec<usize> = lte.iter().map(|p| p.usable()).collect();
        assert_eq!(usable, vec![8, 8, 8, 9, 9, 9, 8]);
        assert_eq!(enumerate_static_configs(&lte, &t, 10, Some(8)).unwrap().0.len(), 7);
        assert_eq!(enumerate_static_configs(&lte, &t, 10, None).unwrap().0.len(), 11);
    }
}
