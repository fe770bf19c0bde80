//! Adaptive biased minimum consensus (ABMC) and the static-graph baseline
//! (BMC), plus backup-path extraction and the backup network layer.
//!
//! Each follower keeps a scalar hop-cost estimate `s_i` and repeatedly pulls
//! it toward the cheapest candidate parent:
//!
//!   s_i[k+1] = (1 - step) * s_i[k] + step * (s_j*[k] + a_ij*[k]),
//!   step = dt / eta in (0, 1],
//!
//! where `j*` ranges over the candidate parent set: robots that are in
//! communication range, not already adjacent in the primary graph, and at a
//! strictly lower hierarchy level. The destination set (leader and first
//! follower) keeps fixed states. The bias against picking `j` as the next
//! hop is
//!
//!   a_ij = max{ 1 - rho * (H_i - H_j) + psi * max{0, dout_j - kappa_d}, gamma },
//!
//! where `dout_j` counts the robots `j` currently serves over primary edges
//! plus selected backup edges. At the fixed point the states solve Bellman's
//! equation over the candidate graph, which [`bellman_oracle`] computes
//! directly by dynamic programming for cross-checking.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::{distance, Epoch, HierGraph, RobotId};
use crate::{Error, Result};

/// Consensus parameters. See module docs for the update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbmcParams {
    /// Convergence rate factor (eta > 0).
    pub eta: f64,
    /// Weight of hierarchy differences in the bias (rho > 0).
    pub rho: f64,
    /// Weight of the congestion penalty (psi >= 0).
    pub psi: f64,
    /// Outdegree threshold above which congestion is penalized.
    pub kappa_d: usize,
    /// Bias floor (gamma > 0).
    pub gamma: f64,
    /// Communication range in meters.
    pub r: f64,
    /// Maximum consensus iterations.
    pub max_iterations: usize,
    /// Per-robot convergence tolerance on |s[k+1] - s[k]|.
    pub zeta: f64,
    /// Cost slack under which a non-minimal candidate yields an alternative
    /// backup path.
    pub tau: f64,
    /// Sampling interval; dt / eta must lie in (0, 1].
    pub dt: f64,
    /// Consecutive iterations a challenger with a marginal improvement
    /// (between zeta and hysteresis_band) must persist before the backup
    /// parent is switched. Clear improvements switch immediately.
    pub hysteresis_rounds: u32,
    /// Improvement above which a challenger is considered clearly better
    /// and adopted without waiting out the streak.
    pub hysteresis_band: f64,
}

impl Default for AbmcParams {
    fn default() -> Self {
        AbmcParams {
            eta: 0.1,
            rho: 0.9,
            psi: 0.5,
            kappa_d: 6,
            gamma: 0.1,
            r: 2.0,
            max_iterations: 500,
            zeta: 1e-9,
            tau: 0.15,
            dt: 0.1,
            hysteresis_rounds: 3,
            hysteresis_band: 1e-6,
        }
    }
}

impl AbmcParams {
    /// Euler step size dt / eta.
    pub fn step_size(&self) -> f64 {
        self.dt / self.eta
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, path: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("abmc.{path}"), msg))
            }
        };
        check(self.eta > 0.0, "eta", "must be > 0")?;
        check(self.rho > 0.0, "rho", "must be > 0")?;
        check(self.psi >= 0.0, "psi", "must be >= 0")?;
        check(self.gamma > 0.0, "gamma", "must be > 0")?;
        check(self.r > 0.0, "r", "must be > 0")?;
        check(self.zeta > 0.0, "zeta", "must be > 0")?;
        check(self.tau >= 0.0, "tau", "must be >= 0")?;
        check(self.dt > 0.0, "dt", "must be > 0")?;
        let s = self.step_size();
        check(s > 0.0 && s <= 1.0, "dt", "dt/eta must lie in (0, 1]")?;
        check(self.hysteresis_rounds >= 1, "hysteresis_rounds", "must be >= 1")?;
        check(
            self.hysteresis_band >= self.zeta,
            "hysteresis_band",
            "must be >= zeta",
        )
    }
}

/// Per-robot consensus state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbmcState {
    /// Hop-cost estimates.
    pub s: BTreeMap<RobotId, f64>,
    /// Currently selected backup parent per robot (leader and first follower
    /// have none).
    pub backup_parent: BTreeMap<RobotId, Option<RobotId>>,
    /// Last update residual beta_i = -s_i + min_j (s_j + a_ij), recorded
    /// before the update. Diagnostics for the envelope properties.
    pub beta: BTreeMap<RobotId, f64>,
    /// Iteration counter.
    pub iteration: usize,
    /// Robots whose candidate parent set is empty.
    pub unreachable: BTreeSet<RobotId>,
    /// Hysteresis bookkeeping: pending challenger and its streak length.
    challenger: BTreeMap<RobotId, (RobotId, u32)>,
}

impl AbmcState {
    /// Initial state: leader 0, first follower 1, everyone else at a large
    /// finite sentinel standing in for +infinity.
    pub fn init(g: &HierGraph, p: &AbmcParams) -> Self {
        let sentinel = init_sentinel(g, p);
        let mut s = BTreeMap::new();
        let mut backup_parent = BTreeMap::new();
        let mut beta = BTreeMap::new();
        for id in g.robots() {
            let v = if id == g.leader() {
                0.0
            } else if id == g.first_follower() {
                1.0
            } else {
                sentinel
            };
            s.insert(id, v);
            backup_parent.insert(id, None);
            beta.insert(id, 0.0);
        }
        AbmcState {
            s,
            backup_parent,
            beta,
            iteration: 0,
            unreachable: BTreeSet::new(),
            challenger: BTreeMap::new(),
        }
    }

    /// Initial state with explicit follower values (destination states stay
    /// at 0 and 1).
    pub fn init_with(g: &HierGraph, p: &AbmcParams, follower_init: &BTreeMap<RobotId, f64>) -> Self {
        let mut state = Self::init(g, p);
        for (&id, &v) in follower_init {
            if id != g.leader() && id != g.first_follower() {
                state.s.insert(id, v);
            }
        }
        state
    }
}

/// Finite stand-in for the +infinity initialization: larger than any
/// reachable cost so min-updates overwrite it on first contact.
pub fn init_sentinel(g: &HierGraph, p: &AbmcParams) -> f64 {
    let n = g.len() as f64;
    let a_max_est = 1.0 + p.psi * n;
    n * a_max_est + 10.0
}

/// Candidate parent set of follower `i`: robots `j != i` with no primary
/// edge (i, j), strictly lower hierarchy, and within range `r`.
pub fn candidate_parents(g: &HierGraph, i: RobotId, r: f64) -> Result<BTreeSet<RobotId>> {
    let hi = g.hierarchy(i)?;
    let pi = g.position(i)?;
    Ok(g.robots()
        .filter(|&j| {
            j != i
                && !g.has_edge(i, j)
                && g.hierarchy(j).map(|hj| hj < hi).unwrap_or(false)
                && distance(pi, g.position(j).expect("positions cover robots")) <= r
        })
        .collect())
}

/// Bias from raw ingredients; `delta_out` is the serving robot's current
/// outdegree (primary children plus selected backup children).
pub fn bias_value(h_i: u32, h_j: u32, delta_out: usize, p: &AbmcParams) -> f64 {
    let dh = f64::from(h_i) - f64::from(h_j);
    let congestion = delta_out.saturating_sub(p.kappa_d) as f64;
    (1.0 - p.rho * dh + p.psi * congestion).max(p.gamma)
}

/// Bias of robot `i` against next hop `j`, with outdegree taken from the
/// primary graph only (epoch-start value).
pub fn bias(i: RobotId, j: RobotId, g: &HierGraph, p: &AbmcParams) -> Result<f64> {
    Ok(bias_value(
        g.hierarchy(i)?,
        g.hierarchy(j)?,
        g.primary_child_count(j),
        p,
    ))
}

/// Frozen per-epoch consensus ingredients.
#[derive(Debug, Clone)]
pub struct AbmcContext {
    pub candidates: BTreeMap<RobotId, Vec<RobotId>>,
    primary_children: BTreeMap<RobotId, usize>,
}

impl AbmcContext {
    pub fn new(g: &HierGraph, p: &AbmcParams) -> Result<Self> {
        let mut candidates = BTreeMap::new();
        for i in g.standard_followers().collect::<Vec<_>>() {
            let set = candidate_parents(g, i, p.r)?;
            candidates.insert(i, set.into_iter().collect());
        }
        let primary_children = g
            .robots()
            .map(|j| (j, g.primary_child_count(j)))
            .collect();
        Ok(AbmcContext {
            candidates,
            primary_children,
        })
    }

    /// Robots that can reach the destination set through candidate chains.
    pub fn reachable(&self, g: &HierGraph) -> BTreeSet<RobotId> {
        let mut reachable: BTreeSet<RobotId> =
            [g.leader(), g.first_follower()].into_iter().collect();
        loop {
            let mut grew = false;
            for (&i, cands) in &self.candidates {
                if !reachable.contains(&i) && cands.iter().any(|j| reachable.contains(j)) {
                    reachable.insert(i);
                    grew = true;
                }
            }
            if !grew {
                return reachable;
            }
        }
    }

    /// Outdegree of `j` as seen by chooser `i`: primary children plus
    /// backup selections by robots other than `i`. A robot's own edge
    /// exists wherever it points, so it carries no penalty difference
    /// between options and is excluded.
    fn outdegree_seen_by(&self, j: RobotId, i: RobotId, state: &AbmcState) -> usize {
        let backup = state
            .backup_parent
            .iter()
            .filter(|(&k, bp)| k != i && **bp == Some(j))
            .count();
        self.primary_children.get(&j).copied().unwrap_or(0) + backup
    }

    fn robot_count(&self) -> usize {
        self.primary_children.len()
    }
}

/// Outcome of one synchronous consensus round.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    /// Largest |s[k+1] - s[k]| across robots.
    pub max_delta: f64,
    /// A challenger is still waiting out the hysteresis streak.
    pub pending_switch: bool,
}

/// One synchronous Euler round over all followers; reads only the previous
/// round's states. Robots with empty candidate sets are flagged unreachable
/// and left unchanged.
pub fn abmc_step_ctx(
    state: &AbmcState,
    ctx: &AbmcContext,
    g: &HierGraph,
    p: &AbmcParams,
) -> (AbmcState, StepReport) {
    let step = p.step_size();
    let mut next = state.clone();
    next.iteration = state.iteration + 1;
    let mut max_delta: f64 = 0.0;
    let mut pending_switch = false;

    for (&i, cands) in &ctx.candidates {
        if cands.is_empty() {
            next.unreachable.insert(i);
            next.beta.insert(i, 0.0);
            continue;
        }
        // Costs against the previous round's states and outdegrees.
        let cost = |j: RobotId| {
            state.s[&j]
                + bias_value(
                    g.hierarchy_map()[&i],
                    g.hierarchy_map()[&j],
                    ctx.outdegree_seen_by(j, i, state),
                    p,
                )
        };
        let mut j_min = cands[0];
        let mut c_min = cost(j_min);
        for &j in &cands[1..] {
            let c = cost(j);
            if c < c_min {
                c_min = c;
                j_min = j;
            }
        }

        let s_i = state.s[&i];
        next.beta.insert(i, -s_i + c_min);

        // Hysteresis: a clearly better challenger (improvement above the
        // band) is adopted at once; a marginally better one must persist for
        // `hysteresis_rounds` consecutive rounds. Ties keep the current
        // parent, which suppresses chattering between equal-cost routes.
        //
        // With congestion feedback (psi > 0) the biases move with the
        // selections, and simultaneous re-selection oscillates globally
        // (everyone floods the cheapest relay, then flees its penalty
        // together). Parent changes are therefore staggered round-robin by
        // robot id, so reactions to load are sequential and settle; first
        // adoptions stay immediate so costs can propagate.
        let may_move =
            p.psi == 0.0 || state.iteration % ctx.robot_count() == i.0 as usize % ctx.robot_count();
        let current = state.backup_parent[&i];
        let selected = match current {
            None => {
                next.challenger.remove(&i);
                j_min
            }
            Some(cur) if cur == j_min => {
                next.challenger.remove(&i);
                cur
            }
            Some(cur) => {
                let improvement = cost(cur) - c_min;
                if improvement <= p.zeta {
                    next.challenger.remove(&i);
                    cur
                } else if !may_move {
                    pending_switch = true;
                    cur
                } else if improvement > p.hysteresis_band {
                    next.challenger.remove(&i);
                    j_min
                } else {
                    let streak = match state.challenger.get(&i) {
                        Some(&(cand, n)) if cand == j_min => n + 1,
                        _ => 1,
                    };
                    if streak >= p.hysteresis_rounds {
                        next.challenger.remove(&i);
                        j_min
                    } else {
                        next.challenger.insert(i, (j_min, streak));
                        pending_switch = true;
                        cur
                    }
                }
            }
        };
        let c_sel = cost(selected);
        let s_new = (1.0 - step) * s_i + step * c_sel;
        max_delta = max_delta.max((s_new - s_i).abs());
        next.s.insert(i, s_new);
        next.backup_parent.insert(i, Some(selected));
    }

    (
        next,
        StepReport {
            max_delta,
            pending_switch,
        },
    )
}

/// One consensus round with the epoch context rebuilt from the graph.
pub fn abmc_step(state: &AbmcState, g: &HierGraph, p: &AbmcParams) -> Result<AbmcState> {
    let ctx = AbmcContext::new(g, p)?;
    Ok(abmc_step_ctx(state, &ctx, g, p).0)
}

/// Iterate until every robot's update falls below zeta (with no pending
/// hysteresis switch) or the iteration cap is reached.
pub fn run_to_convergence(
    g: &HierGraph,
    p: &AbmcParams,
    init: AbmcState,
) -> Result<(AbmcState, bool)> {
    let ctx = AbmcContext::new(g, p)?;
    Ok(run_to_convergence_ctx(g, p, &ctx, init))
}

/// As [`run_to_convergence`], reusing a prebuilt context.
///
/// Stops on a round where every update stays below zeta and no robot —
/// permitted or staggered out — wants a different parent, so the fixed
/// point holds the argmin selection under the live congestion loads.
pub fn run_to_convergence_ctx(
    g: &HierGraph,
    p: &AbmcParams,
    ctx: &AbmcContext,
    init: AbmcState,
) -> (AbmcState, bool) {
    let mut state = init;
    let mut converged = false;
    for _ in 0..p.max_iterations {
        let (next, report) = abmc_step_ctx(&state, ctx, g, p);
        state = next;
        if report.max_delta < p.zeta && !report.pending_switch {
            converged = true;
            break;
        }
    }
    (state, converged)
}

// ---------------------------------------------------------------------------
// Path extraction and the backup layer
// ---------------------------------------------------------------------------

/// Minimum-cost backup path plus near-minimal alternatives for one robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackupPathSet {
    /// Robots from the owner to the leader, inclusive.
    pub min_path: Vec<RobotId>,
    pub min_cost: f64,
    /// Alternative paths with their costs, ordered by (cost, first hop).
    pub alternatives: Vec<(Vec<RobotId>, f64)>,
    /// Consecutive (child, parent) pairs of the minimum-cost path.
    pub min_edges: Vec<(RobotId, RobotId)>,
    /// First-hop edges of the alternatives.
    pub alt_edges: Vec<(RobotId, RobotId)>,
}

impl BackupPathSet {
    pub fn min_hops(&self) -> usize {
        self.min_path.len() - 1
    }
}

/// Backup paths for every covered follower; one layer of the multiplex
/// network for a single epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplexLayer {
    pub paths: BTreeMap<RobotId, BackupPathSet>,
    /// Standard followers whose candidate sets cannot reach the leader.
    pub unreachable: Vec<RobotId>,
    pub epoch: Epoch,
    pub converged: bool,
}

/// Follow converged backup parents from `i` to the destination set. A chain
/// ending at the first follower is extended to the leader over its primary
/// edge.
fn backtrack_min(state: &AbmcState, g: &HierGraph, i: RobotId) -> Result<Vec<RobotId>> {
    let mut path = vec![i];
    let mut cur = i;
    while cur != g.leader() {
        if cur == g.first_follower() {
            path.push(g.leader());
            break;
        }
        let next = state
            .backup_parent
            .get(&cur)
            .copied()
            .flatten()
            .ok_or(Error::BacktrackCycle(path.len()))?;
        path.push(next);
        if path.len() > g.len() {
            return Err(Error::BacktrackCycle(path.len()));
        }
        cur = next;
    }
    Ok(path)
}

/// Minimum-cost path and tau-slack alternatives for robot `i` from a
/// converged state.
pub fn extract_backup_paths(
    state: &AbmcState,
    g: &HierGraph,
    p: &AbmcParams,
    i: RobotId,
) -> Result<BackupPathSet> {
    let ctx = AbmcContext::new(g, p)?;
    extract_backup_paths_ctx(state, g, p, &ctx, i)
}

fn path_edges(path: &[RobotId]) -> Vec<(RobotId, RobotId)> {
    path.windows(2).map(|w| (w[0], w[1])).collect()
}

/// As [`extract_backup_paths`], reusing a prebuilt context.
pub fn extract_backup_paths_ctx(
    state: &AbmcState,
    g: &HierGraph,
    p: &AbmcParams,
    ctx: &AbmcContext,
    i: RobotId,
) -> Result<BackupPathSet> {
    let cands = ctx
        .candidates
        .get(&i)
        .ok_or(Error::UnknownRobot(i))?;
    if cands.is_empty() {
        return Err(Error::Topology(format!("{i} has no candidate parents")));
    }
    let min_path = backtrack_min(state, g, i)?;
    let min_cost = state.s[&i];
    let j_star = state.backup_parent[&i];

    let mut alternatives = Vec::new();
    let mut alt_edges = Vec::new();
    for &j in cands {
        if Some(j) == j_star {
            continue;
        }
        let cost = state.s[&j]
            + bias_value(
                g.hierarchy_map()[&i],
                g.hierarchy_map()[&j],
                ctx.outdegree_seen_by(j, i, state),
                p,
            );
        if (cost - min_cost).abs() < p.tau {
            let mut path = vec![i];
            path.extend(backtrack_min(state, g, j)?);
            if path.len() > g.len() + 1 {
                return Err(Error::BacktrackCycle(path.len()));
            }
            alt_edges.push((i, j));
            alternatives.push((path, cost));
        }
    }
    alternatives.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });

    Ok(BackupPathSet {
        min_edges: path_edges(&min_path),
        min_path,
        min_cost,
        alternatives,
        alt_edges,
    })
}

/// Run consensus to convergence and collect backup paths for every standard
/// follower that can reach the destination set.
pub fn build_backup_layer(g: &HierGraph, p: &AbmcParams, epoch: Epoch) -> Result<MultiplexLayer> {
    let ctx = AbmcContext::new(g, p)?;
    let (state, converged) = run_to_convergence_ctx(g, p, &ctx, AbmcState::init(g, p));
    let reachable = ctx.reachable(g);
    let mut paths = BTreeMap::new();
    let mut unreachable = Vec::new();
    for i in g.standard_followers().collect::<Vec<_>>() {
        if reachable.contains(&i) {
            paths.insert(i, extract_backup_paths_ctx(&state, g, p, &ctx, i)?);
        } else {
            unreachable.push(i);
        }
    }
    Ok(MultiplexLayer {
        paths,
        unreachable,
        epoch,
        converged,
    })
}

impl MultiplexLayer {
    /// Backup layer CSV: robot id, path type, space-separated hop list, cost.
    pub fn to_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["robot", "path_type", "hops", "cost"])?;
        for (robot, set) in &self.paths {
            let fmt_path = |p: &[RobotId]| {
                p.iter()
                    .map(|r| r.0.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            wtr.write_record([
                robot.0.to_string(),
                "min".into(),
                fmt_path(&set.min_path),
                format!("{}", set.min_cost),
            ])?;
            for (path, cost) in &set.alternatives {
                wtr.write_record([
                    robot.0.to_string(),
                    "alt".into(),
                    fmt_path(path),
                    format!("{cost}"),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Bellman oracle
// ---------------------------------------------------------------------------

/// Exact minimum cumulative bias to the destination set by dynamic
/// programming over increasing hierarchy. `fixed` holds the destination
/// states (leader cost, first-follower cost). Unreachable robots get
/// `f64::INFINITY`.
pub fn bellman_oracle(
    candidates: &BTreeMap<RobotId, Vec<RobotId>>,
    biases: &BTreeMap<(RobotId, RobotId), f64>,
    fixed: &BTreeMap<RobotId, f64>,
    hierarchy: &BTreeMap<RobotId, u32>,
) -> BTreeMap<RobotId, f64> {
    let mut order: Vec<RobotId> = hierarchy.keys().copied().collect();
    order.sort_by_key(|r| (hierarchy[r], *r));
    let mut cost: BTreeMap<RobotId, f64> = fixed.clone();
    for i in order {
        if cost.contains_key(&i) {
            continue;
        }
        let best = candidates
            .get(&i)
            .map(|cs| {
                cs.iter()
                    .filter_map(|&j| {
                        let cj = cost.get(&j).copied()?;
                        if cj.is_finite() {
                            Some(cj + biases[&(i, j)])
                        } else {
                            None
                        }
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .unwrap_or(f64::INFINITY);
        cost.insert(i, best);
    }
    cost
}

/// Frozen per-pair biases exactly as a converged state evaluated them
/// (snapshot outdegrees minus the chooser's own edge). Input for
/// [`bellman_oracle`].
pub fn frozen_biases(
    g: &HierGraph,
    p: &AbmcParams,
    ctx: &AbmcContext,
    state: &AbmcState,
) -> BTreeMap<(RobotId, RobotId), f64> {
    let mut biases = BTreeMap::new();
    for (&i, cands) in &ctx.candidates {
        for &j in cands {
            biases.insert(
                (i, j),
                bias_value(
                    g.hierarchy_map()[&i],
                    g.hierarchy_map()[&j],
                    ctx.outdegree_seen_by(j, i, state),
                    p,
                ),
            );
        }
    }
    biases
}

// ---------------------------------------------------------------------------
// BMC baseline
// ---------------------------------------------------------------------------

/// Static undirected network for the BMC baseline: symmetric positive
/// weights, arbitrary destination set with fixed states.
#[derive(Debug, Clone)]
pub struct BmcNetwork {
    pub neighbors: Vec<Vec<usize>>,
    pub weights: BTreeMap<(usize, usize), f64>,
    pub destinations: BTreeSet<usize>,
}

impl BmcNetwork {
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let key = if i < j { (i, j) } else { (j, i) };
        self.weights[&key]
    }
}

/// One Euler round of the biased minimum consensus on a static graph;
/// destination nodes retain their states.
pub fn bmc_step(state: &[f64], net: &BmcNetwork, step: f64) -> Vec<f64> {
    state
        .iter()
        .enumerate()
        .map(|(i, &s_i)| {
            if net.destinations.contains(&i) || net.neighbors[i].is_empty() {
                s_i
            } else {
                let m = net.neighbors[i]
                    .iter()
                    .map(|&j| state[j] + net.weight(i, j))
                    .fold(f64::INFINITY, f64::min);
                (1.0 - step) * s_i + step * m
            }
        })
        .collect()
}

/// Residual of the BMC equilibrium condition; ~0 at the fixed point.
pub fn bmc_residual(state: &[f64], net: &BmcNetwork) -> f64 {
    state
        .iter()
        .enumerate()
        .map(|(i, &s_i)| {
            if net.destinations.contains(&i) || net.neighbors[i].is_empty() {
                0.0
            } else {
                let m = net.neighbors[i]
                    .iter()
                    .map(|&j| state[j] + net.weight(i, j))
                    .fold(f64::INFINITY, f64::min);
                (s_i - m).abs()
            }
        })
        .fold(0.0, f64::max)
}
