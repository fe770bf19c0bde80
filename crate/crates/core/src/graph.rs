//! Rooted directed hierarchy graphs paired with robot positions.
//!
//! A swarm graph grows from a two-robot kernel: the leader `v1` (the root)
//! and the first follower `v2` (sole child of the leader). Every other robot
//! is a standard follower with exactly two parents at two distinct hierarchy
//! levels. The hierarchy level of a robot is the hop count of the longest
//! directed path from it to the leader, so
//!
//!   level(i) = 1 + max over parents of level(parent),   level(leader) = 0.
//!
//! Edges are stored child -> parent: an edge `(i, j)` means robot `i`
//! receives information from robot `j`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Robot identifier, 1-based. Robot 1 is the leader, robot 2 the first
/// follower of a freshly constructed graph.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct RobotId(pub u32);

impl fmt::Display for RobotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// 3-component position in meters. Planar graphs keep z = 0.
pub type Position = [f64; 3];

/// Euclidean distance between two positions.
pub fn distance(a: Position, b: Position) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Interval between topology reconfigurations. Hierarchy levels, candidate
/// sets, and consensus biases are constant within an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub index: u64,
    pub start_time: f64,
}

impl Epoch {
    pub fn initial() -> Self {
        Epoch {
            index: 0,
            start_time: 0.0,
        }
    }

    /// Start the next epoch at the given time.
    pub fn next(self, start_time: f64) -> Self {
        Epoch {
            index: self.index + 1,
            start_time,
        }
    }
}

/// Rooted directed hierarchy graph with positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierGraph {
    parents: BTreeMap<RobotId, Vec<RobotId>>,
    positions: BTreeMap<RobotId, Position>,
    hierarchy: BTreeMap<RobotId, u32>,
    leader: RobotId,
    first_follower: RobotId,
}

impl HierGraph {
    /// Assemble a graph from raw parts without validating the hierarchy
    /// invariants; run [`validate_hhc`] to check them.
    pub fn from_parts(
        parents: BTreeMap<RobotId, Vec<RobotId>>,
        positions: BTreeMap<RobotId, Position>,
        hierarchy: BTreeMap<RobotId, u32>,
        leader: RobotId,
        first_follower: RobotId,
    ) -> Self {
        HierGraph {
            parents,
            positions,
            hierarchy,
            leader,
            first_follower,
        }
    }

    pub fn leader(&self) -> RobotId {
        self.leader
    }

    pub fn first_follower(&self) -> RobotId {
        self.first_follower
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn contains(&self, id: RobotId) -> bool {
        self.parents.contains_key(&id)
    }

    /// Robot ids in ascending order.
    pub fn robots(&self) -> impl Iterator<Item = RobotId> + '_ {
        self.parents.keys().copied()
    }

    /// Standard followers: every robot except the leader and first follower.
    pub fn standard_followers(&self) -> impl Iterator<Item = RobotId> + '_ {
        let (leader, ff) = (self.leader, self.first_follower);
        self.robots().filter(move |&r| r != leader && r != ff)
    }

    /// All non-leader robots.
    pub fn followers(&self) -> impl Iterator<Item = RobotId> + '_ {
        let leader = self.leader;
        self.robots().filter(move |&r| r != leader)
    }

    pub fn parents_of(&self, id: RobotId) -> Result<&[RobotId]> {
        self.parents
            .get(&id)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownRobot(id))
    }

    pub fn position(&self, id: RobotId) -> Result<Position> {
        self.positions
            .get(&id)
            .copied()
            .ok_or(Error::UnknownRobot(id))
    }

    pub fn set_position(&mut self, id: RobotId, pos: Position) -> Result<()> {
        match self.positions.get_mut(&id) {
            Some(p) => {
                *p = pos;
                Ok(())
            }
            None => Err(Error::UnknownRobot(id)),
        }
    }

    pub fn positions(&self) -> &BTreeMap<RobotId, Position> {
        &self.positions
    }

    pub fn hierarchy(&self, id: RobotId) -> Result<u32> {
        self.hierarchy
            .get(&id)
            .copied()
            .ok_or(Error::UnknownRobot(id))
    }

    pub fn hierarchy_map(&self) -> &BTreeMap<RobotId, u32> {
        &self.hierarchy
    }

    /// Whether a primary edge child -> parent exists.
    pub fn has_edge(&self, child: RobotId, parent: RobotId) -> bool {
        self.parents
            .get(&child)
            .map(|ps| ps.contains(&parent))
            .unwrap_or(false)
    }

    /// Children of a robot (robots that list it as a parent), ascending.
    pub fn children_of(&self, id: RobotId) -> Vec<RobotId> {
        self.parents
            .iter()
            .filter(|(_, ps)| ps.contains(&id))
            .map(|(&c, _)| c)
            .collect()
    }

    /// Number of robots served by `id` over primary edges.
    pub fn primary_child_count(&self, id: RobotId) -> usize {
        self.parents.values().filter(|ps| ps.contains(&id)).count()
    }

    /// Minimum hop count from `id` to the leader over primary edges, or
    /// `None` if the leader is unreachable.
    pub fn primary_hops(&self, id: RobotId) -> Option<u32> {
        if id == self.leader {
            return Some(0);
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        queue.push_back((id, 0u32));
        seen.insert(id);
        while let Some((r, hops)) = queue.pop_front() {
            for &p in self.parents.get(&r)?.iter() {
                if p == self.leader {
                    return Some(hops + 1);
                }
                if seen.insert(p) {
                    queue.push_back((p, hops + 1));
                }
            }
        }
        None
    }

    /// Robots within range `r` of robot `i`, excluding `i` itself.
    pub fn neighbors_in_range(&self, i: RobotId, r: f64) -> Result<BTreeSet<RobotId>> {
        let pi = self.position(i)?;
        Ok(self
            .positions
            .iter()
            .filter(|(&j, &pj)| j != i && distance(pi, pj) <= r)
            .map(|(&j, _)| j)
            .collect())
    }

    /// Serialize to the line-based text format, one record per robot:
    /// `id<TAB>parents<TAB>x y z<TAB>level`, parents comma-separated or `-`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# hiergraph v1\n");
        out.push_str(&format!(
            "# leader={} first_follower={}\n",
            self.leader.0, self.first_follower.0
        ));
        for (&id, parents) in &self.parents {
            let ps = if parents.is_empty() {
                "-".to_string()
            } else {
                parents
                    .iter()
                    .map(|p| p.0.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let pos = self.positions[&id];
            out.push_str(&format!(
                "{}\t{}\t{} {} {}\t{}\n",
                id.0, ps, pos[0], pos[1], pos[2], self.hierarchy[&id]
            ));
        }
        out
    }

    /// Parse the line-based text format produced by [`HierGraph::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut leader = None;
        let mut first_follower = None;
        let mut parents = BTreeMap::new();
        let mut positions = BTreeMap::new();
        let mut hierarchy = BTreeMap::new();
        let bad = |msg: &str, line: usize| Error::Topology(format!("line {}: {msg}", line + 1));

        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for field in rest.split_whitespace() {
                    if let Some(v) = field.strip_prefix("leader=") {
                        leader = v.parse::<u32>().ok().map(RobotId);
                    } else if let Some(v) = field.strip_prefix("first_follower=") {
                        first_follower = v.parse::<u32>().ok().map(RobotId);
                    }
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad("expected 4 tab-separated columns", ln));
            }
            let id = RobotId(cols[0].parse().map_err(|_| bad("bad robot id", ln))?);
            let ps = if cols[1] == "-" {
                Vec::new()
            } else {
                cols[1]
                    .split(',')
                    .map(|p| p.parse().map(RobotId))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("bad parent list", ln))?
            };
            let xyz: Vec<f64> = cols[2]
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("bad position", ln))?;
            if xyz.len() != 3 {
                return Err(bad("position needs 3 components", ln));
            }
            let level = cols[3].parse().map_err(|_| bad("bad level", ln))?;
            parents.insert(id, ps);
            positions.insert(id, [xyz[0], xyz[1], xyz[2]]);
            hierarchy.insert(id, level);
        }
        let leader = leader.ok_or_else(|| Error::Topology("missing leader header".into()))?;
        let first_follower =
            first_follower.ok_or_else(|| Error::Topology("missing first_follower header".into()))?;
        Ok(HierGraph::from_parts(
            parents,
            positions,
            hierarchy,
            leader,
            first_follower,
        ))
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// A single violated invariant with the offending robots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Leader must not have parents.
    LeaderHasParents { robot: RobotId },
    /// First follower's sole parent must be the leader.
    FirstFollowerParent { robot: RobotId },
    /// Standard follower without exactly two parents.
    ParentCount { robot: RobotId, count: usize },
    /// Parents of a follower share a hierarchy level.
    ParentLevels { robot: RobotId },
    /// Parent id not present in the graph.
    MissingParent { robot: RobotId, parent: RobotId },
    /// Stored level differs from 1 + max parent level.
    Hierarchy {
        robot: RobotId,
        stored: u32,
        expected: u32,
    },
    /// Parent links contain a directed cycle.
    Cycle { members: Vec<RobotId> },
    /// Robot cannot reach the leader by following parents.
    Unreachable { robot: RobotId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LeaderHasParents { robot } => write!(f, "leader {robot} has parents"),
            Violation::FirstFollowerParent { robot } => {
                write!(f, "first follower {robot} must have the leader as sole parent")
            }
            Violation::ParentCount { robot, count } => {
                write!(f, "parent-count: {robot} has {count} parents, expected 2")
            }
            Violation::ParentLevels { robot } => {
                write!(f, "parent-levels: parents of {robot} share a hierarchy level")
            }
            Violation::MissingParent { robot, parent } => {
                write!(f, "missing-parent: {robot} lists unknown parent {parent}")
            }
            Violation::Hierarchy {
                robot,
                stored,
                expected,
            } => write!(
                f,
                "hierarchy: {robot} stored level {stored}, expected {expected}"
            ),
            Violation::Cycle { members } => {
                write!(f, "cycle among {} robots", members.len())
            }
            Violation::Unreachable { robot } => {
                write!(f, "unreachable: {robot} cannot reach the leader")
            }
        }
    }
}

/// Result of [`validate_hhc`]: empty iff the graph satisfies every invariant.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Check every structural invariant and report all violations.
pub fn validate_hhc(g: &HierGraph) -> ValidationReport {
    let mut report = ValidationReport::default();
    let leader = g.leader;
    let ff = g.first_follower;

    if !g.parents.get(&leader).map(Vec::is_empty).unwrap_or(false) {
        report.violations.push(Violation::LeaderHasParents { robot: leader });
    }
    match g.parents.get(&ff) {
        Some(ps) if ps.as_slice() == [leader] => {}
        _ => report
            .violations
            .push(Violation::FirstFollowerParent { robot: ff }),
    }

    for (&id, parents) in &g.parents {
        for &p in parents {
            if !g.parents.contains_key(&p) {
                report
                    .violations
                    .push(Violation::MissingParent { robot: id, parent: p });
            }
        }
        if id == leader || id == ff {
            continue;
        }
        if parents.len() != 2 {
            report.violations.push(Violation::ParentCount {
                robot: id,
                count: parents.len(),
            });
        } else {
            let l0 = g.hierarchy.get(&parents[0]);
            let l1 = g.hierarchy.get(&parents[1]);
            if let (Some(a), Some(b)) = (l0, l1) {
                if a == b {
                    report.violations.push(Violation::ParentLevels { robot: id });
                }
            }
        }
    }

    // Cycle check over child -> parent links, then level recurrence and
    // leader reachability on the acyclic part.
    match topo_levels(g) {
        Err(cycle) => report.violations.push(Violation::Cycle { members: cycle }),
        Ok(levels) => {
            for (&id, &stored) in &g.hierarchy {
                match levels.get(&id) {
                    Some(&expected) if expected == stored => {}
                    Some(&expected) => report.violations.push(Violation::Hierarchy {
                        robot: id,
                        stored,
                        expected,
                    }),
                    None => report.violations.push(Violation::Unreachable { robot: id }),
                }
            }
        }
    }

    report
}

/// Longest-path-to-leader levels by dynamic programming over the parent DAG.
/// Returns the cycle members on failure. Robots that cannot reach the leader
/// are absent from the result.
fn topo_levels(g: &HierGraph) -> std::result::Result<BTreeMap<RobotId, u32>, Vec<RobotId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let mut marks: BTreeMap<RobotId, Mark> = g.robots().map(|r| (r, Mark::New)).collect();
    let mut levels: BTreeMap<RobotId, u32> = BTreeMap::new();

    fn visit(
        g: &HierGraph,
        id: RobotId,
        marks: &mut BTreeMap<RobotId, Mark>,
        levels: &mut BTreeMap<RobotId, u32>,
    ) -> std::result::Result<Option<u32>, Vec<RobotId>> {
        match marks.get(&id) {
            Some(Mark::Done) => return Ok(levels.get(&id).copied()),
            Some(Mark::Open) => {
                return Err(marks
                    .iter()
                    .filter(|(_, &m)| m == Mark::Open)
                    .map(|(&r, _)| r)
                    .collect())
            }
            _ => {}
        }
        marks.insert(id, Mark::Open);
        let mut level = if id == g.leader { Some(0) } else { None };
        if id != g.leader {
            let parents = g.parents.get(&id).cloned().unwrap_or_default();
            let mut best: Option<u32> = None;
            for p in parents {
                if !g.parents.contains_key(&p) {
                    continue;
                }
                if let Some(pl) = visit(g, p, marks, levels)? {
                    best = Some(best.map_or(pl, |b: u32| b.max(pl)));
                }
            }
            level = best.map(|b| b + 1);
        }
        marks.insert(id, Mark::Done);
        if let Some(l) = level {
            levels.insert(id, l);
        }
        Ok(level)
    }

    for id in g.robots().collect::<Vec<_>>() {
        visit(g, id, &mut marks, &mut levels)?;
    }
    Ok(levels)
}

/// Recompute every hierarchy level as 1 + max parent level (leader = 0).
/// Fails if the parent links contain a cycle.
pub fn recompute_hierarchy(g: &HierGraph) -> Result<HierGraph> {
    let levels = topo_levels(g).map_err(|cycle| {
        Error::Topology(format!(
            "cycle detected among {} robots while recomputing hierarchy",
            cycle.len()
        ))
    })?;
    for id in g.robots() {
        if !levels.contains_key(&id) {
            return Err(Error::Topology(format!(
                "{id} cannot reach the leader; hierarchy undefined"
            )));
        }
    }
    let mut out = g.clone();
    out.hierarchy = levels;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Random construction
// ---------------------------------------------------------------------------

/// Rejection-sampling parameters for placing new robots. Each follower is
/// placed in an annulus around a randomly chosen existing robot and must end
/// up with two in-range parents at distinct hierarchy levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementParams {
    /// Communication range; parents must be within this distance.
    pub comm_range: f64,
    /// Inner radius of the placement annulus around the anchor robot.
    pub anchor_min: f64,
    /// Outer radius of the placement annulus around the anchor robot.
    pub anchor_max: f64,
    /// Minimum pairwise separation between robots.
    pub min_separation: f64,
    /// Rejection-sampling attempts per robot before giving up.
    pub max_attempts: usize,
}

impl Default for PlacementParams {
    fn default() -> Self {
        PlacementParams {
            comm_range: 2.0,
            anchor_min: 0.45,
            anchor_max: 0.9,
            min_separation: 0.3,
            max_attempts: 600,
        }
    }
}

/// Grow a random hierarchy graph of `n` robots.
///
/// Robots are numbered in construction order starting from the leader
/// (robot 1) and first follower (robot 2). Each new follower picks two
/// in-range robots with distinct hierarchy levels and spare child capacity
/// as parents. A construction can paint itself into a corner (all capacity
/// concentrated on a single hierarchy level), in which case it restarts
/// with fresh draws from the same generator.
pub fn build_random_hhc<R: Rng>(
    n: usize,
    max_leader_children: usize,
    max_follower_children: usize,
    placement: PlacementParams,
    rng: &mut R,
) -> Result<HierGraph> {
    const RESTARTS: usize = 64;
    let mut last = Err(Error::InvalidSize { min: 2, got: n });
    for _ in 0..RESTARTS {
        last = try_build_hhc(n, max_leader_children, max_follower_children, placement, rng);
        match last {
            Ok(_) => return last,
            Err(Error::PlacementExhausted { .. }) => continue,
            Err(_) => return last,
        }
    }
    last
}

fn try_build_hhc<R: Rng>(
    n: usize,
    max_leader_children: usize,
    max_follower_children: usize,
    placement: PlacementParams,
    rng: &mut R,
) -> Result<HierGraph> {
    if n < 2 {
        return Err(Error::InvalidSize { min: 2, got: n });
    }
    let leader = RobotId(1);
    let ff = RobotId(2);
    let mut parents: BTreeMap<RobotId, Vec<RobotId>> = BTreeMap::new();
    let mut positions: BTreeMap<RobotId, Position> = BTreeMap::new();
    let mut hierarchy: BTreeMap<RobotId, u32> = BTreeMap::new();
    let mut child_count: BTreeMap<RobotId, usize> = BTreeMap::new();

    parents.insert(leader, Vec::new());
    positions.insert(leader, [0.0, 0.0, 0.0]);
    hierarchy.insert(leader, 0);
    child_count.insert(leader, 1);

    let ff_pos = sample_annulus([0.0, 0.0, 0.0], &placement, rng);
    parents.insert(ff, vec![leader]);
    positions.insert(ff, ff_pos);
    hierarchy.insert(ff, 1);
    child_count.insert(ff, 0);

    let ids: Vec<RobotId> = (3..=n as u32).map(RobotId).collect();
    for id in ids {
        let mut placed = false;
        for _ in 0..placement.max_attempts {
            let existing: Vec<RobotId> = positions.keys().copied().collect();
            let anchor = existing[rng.gen_range(0..existing.len())];
            let pos = sample_annulus(positions[&anchor], &placement, rng);
            if positions
                .values()
                .any(|&p| distance(p, pos) < placement.min_separation)
            {
                continue;
            }
            let eligible: Vec<RobotId> = existing
                .iter()
                .copied()
                .filter(|&j| {
                    let cap = if j == leader {
                        max_leader_children
                    } else {
                        max_follower_children
                    };
                    child_count[&j] < cap && distance(positions[&j], pos) <= placement.comm_range
                })
                .collect();
            if eligible.len() < 2 {
                continue;
            }
            let first = eligible[rng.gen_range(0..eligible.len())];
            let second_pool: Vec<RobotId> = eligible
                .iter()
                .copied()
                .filter(|&j| j != first && hierarchy[&j] != hierarchy[&first])
                .collect();
            if second_pool.is_empty() {
                continue;
            }
            let second = second_pool[rng.gen_range(0..second_pool.len())];
            let mut ps = vec![first, second];
            ps.sort();
            let level = 1 + hierarchy[&first].max(hierarchy[&second]);
            *child_count.get_mut(&first).unwrap() += 1;
            *child_count.get_mut(&second).unwrap() += 1;
            parents.insert(id, ps);
            positions.insert(id, pos);
            hierarchy.insert(id, level);
            child_count.insert(id, 0);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::PlacementExhausted {
                robot: id.0,
                attempts: placement.max_attempts,
            });
        }
    }

    Ok(HierGraph::from_parts(
        parents,
        positions,
        hierarchy,
        leader,
        ff,
    ))
}

fn sample_annulus<R: Rng>(center: Position, p: &PlacementParams, rng: &mut R) -> Position {
    let radius = rng.gen_range(p.anchor_min..p.anchor_max);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    [
        center[0] + radius * angle.cos(),
        center[1] + radius * angle.sin(),
        0.0,
    ]
}

// ---------------------------------------------------------------------------
// Removal and reconfiguration
// ---------------------------------------------------------------------------

/// Remove failed robots and refill roles by greedy nearest-target matching.
///
/// The first `|survivors|` roles in (hierarchy level, id) order are retained;
/// every parent of a retained role has a strictly lower level and is
/// therefore also retained, so the induced role graph keeps all hierarchy
/// invariants. Surviving robots whose role was dropped move into the vacated
/// retained roles, each taking the nearest formation slot (ties broken by
/// lowest robot id, then lowest role id). Returns the reconfigured graph;
/// positions of refilled roles are the assigned survivors' current positions.
pub fn remove_and_reconfigure(
    g: &HierGraph,
    failed: &BTreeSet<RobotId>,
    formation_targets: &BTreeMap<RobotId, Position>,
) -> Result<HierGraph> {
    if failed.contains(&g.leader) {
        return Err(Error::LeaderFailed);
    }
    let survivors: BTreeSet<RobotId> = g.robots().filter(|r| !failed.contains(r)).collect();
    if survivors.len() < 2 {
        return Err(Error::DegenerateSwarm {
            survivors: survivors.len(),
            failed: failed.len(),
        });
    }
    if failed.is_empty() {
        return Ok(g.clone());
    }

    let mut roles: Vec<RobotId> = g.robots().collect();
    roles.sort_by_key(|&r| (g.hierarchy[&r], r));
    let kept: BTreeSet<RobotId> = roles.into_iter().take(survivors.len()).collect();

    let vacated: Vec<RobotId> = kept.iter().copied().filter(|r| failed.contains(r)).collect();
    let displaced: Vec<RobotId> = survivors
        .iter()
        .copied()
        .filter(|r| !kept.contains(r))
        .collect();
    debug_assert_eq!(vacated.len(), displaced.len());

    // Greedy nearest matching: repeatedly take the globally closest
    // (survivor, vacated slot) pair.
    let mut free_robots: BTreeSet<RobotId> = displaced.iter().copied().collect();
    let mut free_roles: BTreeSet<RobotId> = vacated.iter().copied().collect();
    let mut assignment: BTreeMap<RobotId, RobotId> = BTreeMap::new(); // role -> robot
    while !free_roles.is_empty() {
        let mut best: Option<(f64, RobotId, RobotId)> = None;
        for &robot in &free_robots {
            let rp = g.positions[&robot];
            for &role in &free_roles {
                let target = formation_targets
                    .get(&role)
                    .copied()
                    .unwrap_or(g.positions[&role]);
                let d = distance(rp, target);
                let candidate = (d, robot, role);
                best = match best {
                    None => Some(candidate),
                    Some(b) => {
                        if candidate.0 < b.0
                            || (candidate.0 == b.0 && (candidate.1, candidate.2) < (b.1, b.2))
                        {
                            Some(candidate)
                        } else {
                            Some(b)
                        }
                    }
                };
            }
        }
        let (_, robot, role) = best.expect("free role with no free robot");
        assignment.insert(role, robot);
        free_robots.remove(&robot);
        free_roles.remove(&role);
    }

    let mut parents = BTreeMap::new();
    let mut positions = BTreeMap::new();
    let mut hierarchy = BTreeMap::new();
    for &role in &kept {
        parents.insert(role, g.parents[&role].clone());
        hierarchy.insert(role, g.hierarchy[&role]);
        let occupant = assignment.get(&role).copied().unwrap_or(role);
        positions.insert(role, g.positions[&occupant]);
    }

    Ok(HierGraph::from_parts(
        parents,
        positions,
        hierarchy,
        g.leader,
        g.first_follower,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Hand-built eight-robot graph in the shape of the minimal construction:
    /// leader 1, first follower 2, each later robot with two parents at
    /// distinct levels.
    pub(crate) fn eight_robot_graph() -> HierGraph {
        let edges: &[(u32, &[u32])] = &[
            (1, &[]),
            (2, &[1]),
            (3, &[1, 2]),
            (4, &[1, 3]),
            (5, &[2, 3]),
            (6, &[3, 4]),
            (7, &[5, 6]),
            (8, &[4, 6]),
        ];
        let mut parents = BTreeMap::new();
        let mut positions = BTreeMap::new();
        for &(id, ps) in edges {
            parents.insert(RobotId(id), ps.iter().map(|&p| RobotId(p)).collect());
            let angle = id as f64;
            positions.insert(
                RobotId(id),
                [angle.cos() * id as f64 * 0.3, angle.sin() * id as f64 * 0.3, 0.0],
            );
        }
        let hierarchy = [
            (1u32, 0u32),
            (2, 1),
            (3, 2),
            (4, 3),
            (5, 3),
            (6, 4),
            (7, 5),
            (8, 5),
        ]
        .into_iter()
        .map(|(id, l)| (RobotId(id), l))
        .collect();
        HierGraph::from_parts(parents, positions, hierarchy, RobotId(1), RobotId(2))
    }

    /// Brute-force longest directed path to the leader, by path enumeration.
    fn longest_path_oracle(g: &HierGraph, id: RobotId) -> Option<u32> {
        if id == g.leader() {
            return Some(0);
        }
        let mut best = None;
        for &p in g.parents_of(id).unwrap() {
            if let Some(l) = longest_path_oracle(g, p) {
                best = Some(best.map_or(l + 1, |b: u32| b.max(l + 1)));
            }
        }
        best
    }

    #[test]
    fn kernel_graph_is_valid() {
        let g = build_random_hhc(2, 4, 3, PlacementParams::default(), &mut rng(1)).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.hierarchy(RobotId(1)).unwrap(), 0);
        assert_eq!(g.hierarchy(RobotId(2)).unwrap(), 1);
        assert!(validate_hhc(&g).is_valid());
    }

    #[test]
    fn rejects_too_small_swarm() {
        let err = build_random_hhc(1, 4, 3, PlacementParams::default(), &mut rng(1));
        assert!(matches!(err, Err(Error::InvalidSize { .. })));
    }

    #[test]
    fn random_graphs_pass_validator_and_respect_caps() {
        for seed in 0..25 {
            let g = build_random_hhc(20, 4, 3, PlacementParams::default(), &mut rng(seed)).unwrap();
            assert_eq!(g.len(), 20);
            let report = validate_hhc(&g);
            assert!(report.is_valid(), "seed {seed}: {report}");
            assert!(g.primary_child_count(g.leader()) <= 4);
            for f in g.followers() {
                assert!(g.primary_child_count(f) <= 3, "seed {seed} robot {f}");
            }
        }
    }

    #[test]
    fn twenty_robot_graphs_reach_deep_hierarchies() {
        // Depth is seed-dependent; structurally we only require that some
        // seeds reach the deep-hierarchy regime.
        let max_depth = (0..20)
            .map(|seed| {
                let g =
                    build_random_hhc(20, 4, 3, PlacementParams::default(), &mut rng(seed)).unwrap();
                g.hierarchy_map().values().copied().max().unwrap()
            })
            .max()
            .unwrap();
        assert!(max_depth >= 6, "deepest hierarchy over 20 seeds: {max_depth}");
    }

    #[test]
    fn validator_flags_parent_count() {
        let mut g = eight_robot_graph();
        g.parents.insert(RobotId(7), vec![RobotId(5)]);
        let report = validate_hhc(&g);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::ParentCount { robot, count: 1 } if *robot == RobotId(7))));
    }

    #[test]
    fn validator_flags_mutated_hierarchy() {
        let mut g = eight_robot_graph();
        g.hierarchy.insert(RobotId(6), 9);
        let report = validate_hhc(&g);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Hierarchy { robot, .. } if *robot == RobotId(6))));
    }

    #[test]
    fn validator_flags_cycles() {
        let mut g = eight_robot_graph();
        g.parents.insert(RobotId(3), vec![RobotId(1), RobotId(7)]);
        let report = validate_hhc(&g);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Cycle { .. })));
    }

    #[test]
    fn recompute_matches_levels_on_chain() {
        // v1 <- v2, v3 with parents {v1, v2}.
        let mut parents = BTreeMap::new();
        parents.insert(RobotId(1), vec![]);
        parents.insert(RobotId(2), vec![RobotId(1)]);
        parents.insert(RobotId(3), vec![RobotId(1), RobotId(2)]);
        let positions = (1..=3)
            .map(|i| (RobotId(i), [i as f64, 0.0, 0.0]))
            .collect();
        let hierarchy = (1..=3).map(|i| (RobotId(i), 0)).collect();
        let g = HierGraph::from_parts(parents, positions, hierarchy, RobotId(1), RobotId(2));
        let g = recompute_hierarchy(&g).unwrap();
        assert_eq!(g.hierarchy(RobotId(1)).unwrap(), 0);
        assert_eq!(g.hierarchy(RobotId(2)).unwrap(), 1);
        assert_eq!(g.hierarchy(RobotId(3)).unwrap(), 2);
    }

    #[test]
    fn recompute_matches_longest_path_oracle_and_is_idempotent() {
        let g = eight_robot_graph();
        let recomputed = recompute_hierarchy(&g).unwrap();
        for id in recomputed.robots() {
            assert_eq!(
                recomputed.hierarchy(id).unwrap(),
                longest_path_oracle(&recomputed, id).unwrap(),
                "{id}"
            );
        }
        assert_eq!(recompute_hierarchy(&recomputed).unwrap(), recomputed);

        for seed in 0..10 {
            let g = build_random_hhc(15, 4, 3, PlacementParams::default(), &mut rng(seed)).unwrap();
            let r = recompute_hierarchy(&g).unwrap();
            assert_eq!(r, g, "construction levels already satisfy the recurrence");
            for id in r.robots() {
                assert_eq!(r.hierarchy(id).unwrap(), longest_path_oracle(&r, id).unwrap());
            }
        }
    }

    #[test]
    fn recompute_detects_cycle() {
        let mut g = eight_robot_graph();
        g.parents.insert(RobotId(4), vec![RobotId(1), RobotId(8)]);
        assert!(matches!(recompute_hierarchy(&g), Err(Error::Topology(_))));
    }

    #[test]
    fn neighbors_match_brute_force() {
        let g = build_random_hhc(20, 4, 3, PlacementParams::default(), &mut rng(9)).unwrap();
        for &r in &[0.4, 1.0, 2.5, 10.0] {
            for i in g.robots() {
                let fast = g.neighbors_in_range(i, r).unwrap();
                let naive: BTreeSet<RobotId> = g
                    .robots()
                    .filter(|&j| {
                        j != i
                            && distance(g.position(i).unwrap(), g.position(j).unwrap()) <= r
                    })
                    .collect();
                assert_eq!(fast, naive);
            }
        }
    }

    #[test]
    fn neighbors_edge_radii() {
        let g = build_random_hhc(10, 4, 3, PlacementParams::default(), &mut rng(3)).unwrap();
        let i = RobotId(1);
        assert!(g.neighbors_in_range(i, 1e-6).unwrap().is_empty());
        assert_eq!(g.neighbors_in_range(i, 1e6).unwrap().len(), 9);
        assert!(matches!(
            g.neighbors_in_range(RobotId(99), 1.0),
            Err(Error::UnknownRobot(_))
        ));
    }

    #[test]
    fn remove_nothing_is_identity() {
        let g = eight_robot_graph();
        let targets = g.positions().clone();
        let out = remove_and_reconfigure(&g, &BTreeSet::new(), &targets).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn remove_leader_and_degenerate_cases() {
        let g = eight_robot_graph();
        let targets = g.positions().clone();
        let mut failed = BTreeSet::new();
        failed.insert(RobotId(1));
        assert!(matches!(
            remove_and_reconfigure(&g, &failed, &targets),
            Err(Error::LeaderFailed)
        ));
        let failed: BTreeSet<RobotId> = (2..=8).map(RobotId).collect();
        assert!(matches!(
            remove_and_reconfigure(&g, &failed, &targets),
            Err(Error::DegenerateSwarm { .. })
        ));
    }

    #[test]
    fn reconfigured_graphs_stay_valid_under_random_removals() {
        for seed in 0..20 {
            let g = build_random_hhc(20, 4, 3, PlacementParams::default(), &mut rng(seed)).unwrap();
            let targets = g.positions().clone();
            let mut r = rng(seed ^ 0xdead);
            let count = 5 + (seed as usize % 5); // 5..=9 removals
            let mut failed = BTreeSet::new();
            let followers: Vec<RobotId> = g.followers().collect();
            while failed.len() < count {
                failed.insert(followers[r.gen_range(0..followers.len())]);
            }
            let out = remove_and_reconfigure(&g, &failed, &targets).unwrap();
            assert_eq!(out.len(), 20 - count);
            let report = validate_hhc(&out);
            assert!(report.is_valid(), "seed {seed}: {report}");
        }
    }

    #[test]
    fn displaced_survivors_fill_nearest_vacated_roles() {
        // Remove robots 3 and 4; kept roles are 1..6 and survivors 7, 8 must
        // fill roles 3 and 4 (their own roles rank below the cut).
        let g = eight_robot_graph();
        let targets = g.positions().clone();
        let failed: BTreeSet<RobotId> = [RobotId(3), RobotId(4)].into_iter().collect();
        let out = remove_and_reconfigure(&g, &failed, &targets).unwrap();
        assert_eq!(out.len(), 6);
        assert!(out.contains(RobotId(3)) && out.contains(RobotId(4)));
        assert!(!out.contains(RobotId(7)) && !out.contains(RobotId(8)));
        let sort_key = |p: &Position| (p[0].to_bits(), p[1].to_bits(), p[2].to_bits());
        let mut occupied: Vec<Position> = [RobotId(3), RobotId(4)]
            .iter()
            .map(|r| out.position(*r).unwrap())
            .collect();
        let mut survivors: Vec<Position> = [RobotId(7), RobotId(8)]
            .iter()
            .map(|r| g.position(*r).unwrap())
            .collect();
        occupied.sort_by_key(sort_key);
        survivors.sort_by_key(sort_key);
        assert_eq!(occupied, survivors);
    }

    #[test]
    fn text_round_trip() {
        let g = build_random_hhc(12, 4, 3, PlacementParams::default(), &mut rng(5)).unwrap();
        let text = g.to_text();
        let parsed = HierGraph::from_text(&text).unwrap();
        assert_eq!(parsed, g);
    }

    #[test]
    fn text_format_is_frozen() {
        // The serialized form is a stable external interface.
        let mut parents = BTreeMap::new();
        parents.insert(RobotId(1), vec![]);
        parents.insert(RobotId(2), vec![RobotId(1)]);
        parents.insert(RobotId(3), vec![RobotId(1), RobotId(2)]);
        let positions: BTreeMap<RobotId, Position> = [
            (RobotId(1), [0.0, 0.0, 0.0]),
            (RobotId(2), [0.5, -0.25, 0.0]),
            (RobotId(3), [1.0, 0.125, 0.0]),
        ]
        .into_iter()
        .collect();
        let hierarchy = [(1u32, 0u32), (2, 1), (3, 2)]
            .into_iter()
            .map(|(i, h)| (RobotId(i), h))
            .collect();
        let g = HierGraph::from_parts(parents, positions, hierarchy, RobotId(1), RobotId(2));
        let expected = "# hiergraph v1\n\
                        # leader=1 first_follower=2\n\
                        1\t-\t0 0 0\t0\n\
                        2\t1\t0.5 -0.25 0\t1\n\
                        3\t1,2\t1 0.125 0\t2\n";
        assert_eq!(g.to_text(), expected);
    }
}
