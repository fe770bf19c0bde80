//! Discrete-time swarm simulation: single-integrator robots under
//! distance-based formation control, a leader moving at constant speed,
//! measurement routing through the multiplex network, and per-robot
//! tracking metrics with breakdown accounting.
//!
//! Each tick runs two phases. First, every follower receives one relative
//! position sample per parent over the primary path (offset faults plus
//! one hop of channel noise) and one per backup path (channel noise scaled
//! by that path's hop count); parent monitors update their windows and
//! routing decisions from the previous tick's positions. Second, every
//! follower integrates a velocity proportional to the averaged error
//! between the routed measurements and the prescribed formation offsets,
//! plus the commanded formation velocity as feedforward (the leader
//! broadcasts its motion command), so a clean swarm tracks the moving
//! formation with no steady-state lag.
//!
//! Detection scoring is window-aligned: a parent-tick counts as truly
//! faulty when any sample inside the monitor's current evaluation window
//! was corrupted, which is the hypothesis the windowed LLR actually tests.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::abmc::{build_backup_layer, AbmcParams, MultiplexLayer};
use crate::detector::{
    average_scores, score_series, DetectorParams, ParentMonitor, Route,
};
use crate::fault::{
    apply_channel, corrupt, ChannelModel, DurationModel, FaultProcess, Measurement, SourcePath,
};
use crate::graph::{build_random_hhc, Epoch, HierGraph, PlacementParams, Position, RobotId};
use crate::seed::stream_rng;
use crate::{Error, Result};

/// Axis of the leader's constant-velocity motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn unit(self) -> [f64; 3] {
        match self {
            Axis::X => [1.0, 0.0, 0.0],
            Axis::Y => [0.0, 1.0, 0.0],
            Axis::Z => [0.0, 0.0, 1.0],
        }
    }
}

/// Which edges carry intermittent offset faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    /// No faults anywhere.
    None,
    /// The edges listed in `FaultConfig::edges`.
    Edges,
    /// Both parent edges of the lowest-id robot whose parents are both
    /// followers and which has backup coverage.
    TwoFaultyParents,
    /// Every edge whose parent is a follower. Leader-sourced data is
    /// authored by the fault-free leader and cannot carry relay faults.
    FollowerEdges,
}

/// One explicitly faulted edge (child receives from parent).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub child: u32,
    pub parent: u32,
}

/// Fault placement and process parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultConfig {
    pub mode: FaultMode,
    /// Activation probability per sampling tick.
    pub p_f: f64,
    /// Offset (o_x, o_y) in meters.
    pub offset: [f64; 2],
    pub duration: DurationModel,
    /// Seconds of fault-free operation before the processes arm. The
    /// backup layer is built and the detectors calibrate their thresholds
    /// on clean traffic during this window.
    pub t_start: f64,
    /// Edges for `FaultMode::Edges`.
    pub edges: Vec<EdgeSpec>,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig {
            mode: FaultMode::None,
            p_f: 0.0,
            offset: [0.5, 0.5],
            duration: DurationModel::default(),
            t_start: 5.0,
            edges: Vec::new(),
        }
    }
}

/// A time-boxed burst of elevated fault probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstConfig {
    pub p_f: f64,
    pub t_start: f64,
    pub t_end: f64,
}

/// Full description of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Config schema version; must be 1.
    pub schema_version: u32,
    /// Robot count.
    pub n: usize,
    /// Spatial dimension, 2 or 3.
    pub d: usize,
    pub leader_speed: f64,
    pub leader_axis: Axis,
    /// Proportional control gain; 1 - gain * dt must lie in (0, 1).
    pub control_gain: f64,
    /// Trial length in seconds.
    pub duration: f64,
    /// Sampling interval in seconds.
    pub dt: f64,
    pub seed: u64,
    /// Route around detected faults (false freezes every route at primary).
    pub mitigation: bool,
    /// Cumulative tracking error (m s) beyond which a robot is counted
    /// irrecoverable.
    pub breakdown_threshold: f64,
    pub max_leader_children: usize,
    pub max_follower_children: usize,
    pub placement: PlacementParams,
    pub abmc: AbmcParams,
    pub channel: ChannelModel,
    pub detector: DetectorParams,
    pub fault: FaultConfig,
    pub burst: Option<BurstConfig>,
    /// Record per-tick decision and fault logs plus the leader trajectory.
    pub collect_logs: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            schema_version: 1,
            n: 20,
            d: 3,
            leader_speed: 0.1,
            leader_axis: Axis::Z,
            control_gain: 0.8,
            duration: 40.0,
            dt: 0.1,
            seed: 1,
            mitigation: true,
            breakdown_threshold: 1.0,
            max_leader_children: 4,
            max_follower_children: 3,
            placement: PlacementParams::default(),
            abmc: AbmcParams::default(),
            channel: ChannelModel::default(),
            detector: DetectorParams::default(),
            fault: FaultConfig::default(),
            burst: None,
            collect_logs: false,
        }
    }
}

impl ScenarioConfig {
    /// Validate every field and cross-field constraint.
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, path: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(path, msg))
            }
        };
        check(self.schema_version == 1, "schema_version", "must be 1")?;
        check(self.n >= 2, "n", "swarm needs at least 2 robots")?;
        check(self.d == 2 || self.d == 3, "d", "dimension must be 2 or 3")?;
        check(
            self.d == 3 || self.leader_axis != Axis::Z,
            "leader_axis",
            "z motion needs d = 3",
        )?;
        check(self.dt > 0.0, "dt", "must be > 0")?;
        check(self.duration >= self.dt, "duration", "must cover at least one tick")?;
        let decay = 1.0 - self.control_gain * self.dt;
        check(
            decay > 0.0 && decay < 1.0,
            "control_gain",
            "1 - gain * dt must lie in (0, 1)",
        )?;
        check(self.breakdown_threshold > 0.0, "breakdown_threshold", "must be > 0")?;
        check(
            (0.0..=1.0).contains(&self.fault.p_f),
            "fault.p_f",
            "must lie in [0, 1]",
        )?;
        check(self.fault.t_start >= 0.0, "fault.t_start", "must be >= 0")?;
        check(
            self.fault.offset.iter().all(|o| o.is_finite()),
            "fault.offset",
            "must be finite",
        )?;
        check(
            (0.0..=1.0).contains(&self.channel.p_e),
            "channel.p_e",
            "must lie in [0, 1]",
        )?;
        check(self.channel.c >= 0.0, "channel.c", "must be >= 0")?;
        if self.fault.mode == FaultMode::Edges {
            check(
                !self.fault.edges.is_empty(),
                "fault.edges",
                "edges mode needs at least one edge",
            )?;
        }
        if let Some(b) = &self.burst {
            check(
                (0.0..=1.0).contains(&b.p_f),
                "burst.p_f",
                "must lie in [0, 1]",
            )?;
            check(b.t_start < b.t_end, "burst", "t_start must precede t_end")?;
            check(
                b.t_start >= 0.0 && b.t_end <= self.duration,
                "burst",
                "interval must lie within the trial duration",
            )?;
        }
        self.abmc.validate()?;
        self.detector.validate()?;
        Ok(())
    }

    /// Copy with the detector clock synchronized to the simulation tick.
    pub fn normalized(&self) -> Self {
        let mut cfg = self.clone();
        cfg.detector.dt = cfg.dt;
        cfg
    }

    pub fn ticks(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Single-integrator step: move against the error between the received
/// relative position and the prescribed offset.
pub fn control_step(
    pos: [f64; 3],
    received: [f64; 3],
    target: [f64; 3],
    gain: f64,
    dt: f64,
) -> [f64; 3] {
    [
        pos[0] - gain * dt * (received[0] - target[0]),
        pos[1] - gain * dt * (received[1] - target[1]),
        pos[2] - gain * dt * (received[2] - target[2]),
    ]
}

/// Pick this tick's delivered measurement for one parent edge according to
/// the monitor's route. Fails when the layer is stale for the epoch.
pub fn route_measurement(
    layer: &MultiplexLayer,
    current_epoch: Epoch,
    monitor: &ParentMonitor,
    mitigation: bool,
    primary: Measurement,
    backups: &[Measurement],
) -> Result<Measurement> {
    if layer.epoch.index != current_epoch.index {
        return Err(Error::EpochMismatch {
            layer: layer.epoch.index,
            current: current_epoch.index,
        });
    }
    if !mitigation {
        return Ok(primary);
    }
    match monitor.route {
        Route::Primary => Ok(primary),
        Route::Backup(b) => backups.get(b).copied().ok_or(Error::EpochMismatch {
            layer: layer.epoch.index,
            current: current_epoch.index,
        }),
    }
}

/// Irrecoverability accounting over per-robot instantaneous error series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownResult {
    /// Fraction of robots not yet broken, per tick.
    pub fraction: Vec<f64>,
    /// Final irrecoverable flag per robot (same order as the input rows).
    pub broken: Vec<bool>,
}

/// Integrate per-robot errors over time; a robot whose cumulative error
/// crosses the threshold is irrecoverable from that tick onward.
pub fn breakdown_accounting(
    per_robot_error: &[Vec<f64>],
    dt: f64,
    threshold: f64,
) -> BreakdownResult {
    let robots = per_robot_error.len();
    let ticks = per_robot_error.first().map(Vec::len).unwrap_or(0);
    let mut cumulative = vec![0.0f64; robots];
    let mut broken = vec![false; robots];
    let mut fraction = Vec::with_capacity(ticks);
    for t in 0..ticks {
        for (r, series) in per_robot_error.iter().enumerate() {
            if !broken[r] {
                cumulative[r] += series[t] * dt;
                if cumulative[r] > threshold {
                    broken[r] = true;
                }
            }
        }
        let alive = broken.iter().filter(|&&b| !b).count();
        fraction.push(alive as f64 / robots as f64);
    }
    BreakdownResult { fraction, broken }
}

// ---------------------------------------------------------------------------
// Trial metrics and logs
// ---------------------------------------------------------------------------

/// One row of the per-tick routing decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub tick: usize,
    pub robot: u32,
    pub parent: u32,
    pub llrs: Vec<f64>,
    pub lambda: f64,
    pub lambda_recover: f64,
    pub route: String,
    pub t_lock: f64,
    pub declared: bool,
}

/// One row of the fault schedule log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultRow {
    pub tick: usize,
    pub robot: u32,
    pub parent: u32,
    pub active: bool,
}

/// Everything a trial produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub dt: f64,
    /// Mean absolute tracking error over all robots, per tick.
    pub mean_err: Vec<f64>,
    /// Formation fraction under breakdown accounting, per tick.
    pub fraction: Vec<f64>,
    /// Irrecoverable flag per robot.
    pub broken: BTreeMap<RobotId, bool>,
    /// Window-aligned detection accuracy over monitored faulty edges.
    pub accuracy: Option<f64>,
    /// Window-aligned false positive rate over monitored faulty edges.
    pub false_positive_rate: Option<f64>,
    /// (primary hops, minimum backup hops) per covered follower.
    pub hop_pairs: Vec<(u32, u32)>,
    /// Followers without leader reachability through candidate parents.
    pub unreachable: Vec<RobotId>,
    pub decision_log: Vec<DecisionRow>,
    pub fault_log: Vec<FaultRow>,
    /// Leader positions per tick (collect_logs only).
    pub leader_path: Vec<[f64; 3]>,
    pub runtime_s: f64,
}

impl TrialMetrics {
    /// Tick index holding the state at time `t` (samples are post-update).
    pub fn tick_at(&self, t: f64) -> usize {
        ((t / self.dt).round() as usize).saturating_sub(1)
    }

    /// Compact summary record.
    pub fn summary(&self) -> TrialSummary {
        TrialSummary {
            accuracy: self.accuracy,
            false_positive_rate: self.false_positive_rate,
            final_fraction: self.fraction.last().copied().unwrap_or(1.0),
            final_mean_err: self.mean_err.last().copied().unwrap_or(0.0),
            runtime_s: self.runtime_s,
        }
    }

    /// Tick-indexed series CSV: tick, t, mean_err, fraction.
    pub fn series_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["tick", "t", "mean_err", "fraction"])?;
        for (i, (e, f)) in self.mean_err.iter().zip(&self.fraction).enumerate() {
            wtr.write_record([
                i.to_string(),
                format!("{}", (i + 1) as f64 * self.dt),
                format!("{e}"),
                format!("{f}"),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Decision log CSV: tick, robot, parent, llrs, lambda, lambda_recover,
    /// route, t_lock, declared.
    pub fn decisions_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "tick", "robot", "parent", "llrs", "lambda", "lambda_recover", "route", "t_lock",
            "declared",
        ])?;
        for row in &self.decision_log {
            wtr.write_record([
                row.tick.to_string(),
                row.robot.to_string(),
                row.parent.to_string(),
                row.llrs
                    .iter()
                    .map(|v| format!("{v}"))
                    .collect::<Vec<_>>()
                    .join(" "),
                format!("{}", row.lambda),
                format!("{}", row.lambda_recover),
                row.route.clone(),
                format!("{}", row.t_lock),
                row.declared.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Fault schedule CSV: tick, robot, parent, active.
    pub fn faults_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["tick", "robot", "parent", "active"])?;
        for row in &self.fault_log {
            wtr.write_record([
                row.tick.to_string(),
                row.robot.to_string(),
                row.parent.to_string(),
                row.active.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Compact JSON-ready trial summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub accuracy: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub final_fraction: f64,
    pub final_mean_err: f64,
    pub runtime_s: f64,
}

// ---------------------------------------------------------------------------
// Trial runner
// ---------------------------------------------------------------------------

/// (primary hops, minimum backup hops) per covered follower of a layer.
pub fn layer_hop_pairs(g: &HierGraph, layer: &MultiplexLayer) -> Vec<(u32, u32)> {
    layer
        .paths
        .iter()
        .filter_map(|(&robot, set)| {
            let primary = g.primary_hops(robot)?;
            Some((primary, set.min_hops() as u32))
        })
        .collect()
}

/// Resolve which edges carry fault processes.
pub fn resolve_faulty_edges(
    g: &HierGraph,
    layer: &MultiplexLayer,
    fault: &FaultConfig,
) -> Result<Vec<(RobotId, RobotId)>> {
    match fault.mode {
        FaultMode::None => Ok(Vec::new()),
        FaultMode::Edges => {
            let mut out = Vec::new();
            for e in &fault.edges {
                let (child, parent) = (RobotId(e.child), RobotId(e.parent));
                if !g.has_edge(child, parent) {
                    return Err(Error::config(
                        "fault.edges",
                        format!("no primary edge {child} -> {parent}"),
                    ));
                }
                out.push((child, parent));
            }
            Ok(out)
        }
        FaultMode::TwoFaultyParents => {
            let leader = g.leader();
            for robot in g.standard_followers().collect::<Vec<_>>() {
                let parents = g.parents_of(robot)?;
                if parents.len() == 2
                    && parents.iter().all(|&p| p != leader)
                    && layer.paths.contains_key(&robot)
                {
                    return Ok(parents.iter().map(|&p| (robot, p)).collect());
                }
            }
            Err(Error::config(
                "fault.mode",
                "no covered robot with two follower parents exists",
            ))
        }
        FaultMode::FollowerEdges => {
            let leader = g.leader();
            let mut out = Vec::new();
            for child in g.followers().collect::<Vec<_>>() {
                for &parent in g.parents_of(child)? {
                    if parent != leader {
                        out.push((child, parent));
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Build the trial's graph from the seed and run it.
pub fn run_trial(cfg: &ScenarioConfig) -> Result<TrialMetrics> {
    cfg.validate()?;
    let cfg = cfg.normalized();
    let mut graph_rng = stream_rng(cfg.seed, "graph", &[]);
    let placement = PlacementParams {
        comm_range: cfg.abmc.r,
        ..cfg.placement
    };
    let g = build_random_hhc(
        cfg.n,
        cfg.max_leader_children,
        cfg.max_follower_children,
        placement,
        &mut graph_rng,
    )?;
    let targets = g.positions().clone();
    run_trial_on(&cfg, &g, &targets, Epoch::initial())
}

/// Run a trial on an existing graph. `targets` prescribes the formation
/// slot of each robot at time zero; robots start at their graph positions.
pub fn run_trial_on(
    cfg: &ScenarioConfig,
    g: &HierGraph,
    targets: &BTreeMap<RobotId, Position>,
    epoch: Epoch,
) -> Result<TrialMetrics> {
    let started = Instant::now();
    cfg.validate()?;
    let cfg = cfg.normalized();
    let layer = build_backup_layer(g, &cfg.abmc, epoch)?;
    let faulty_edges = resolve_faulty_edges(g, &layer, &cfg.fault)?;
    let faulty_set: BTreeSet<(RobotId, RobotId)> = faulty_edges.iter().copied().collect();

    // Fault processes with per-edge RNG streams, independent of routing.
    let mut faults: BTreeMap<(RobotId, RobotId), FaultProcess> = faulty_edges
        .iter()
        .map(|&(c, p)| {
            (
                (c, p),
                FaultProcess::new(cfg.fault.p_f, cfg.fault.offset, cfg.fault.duration),
            )
        })
        .collect();
    let mut fault_rngs: BTreeMap<(RobotId, RobotId), _> = faulty_edges
        .iter()
        .map(|&(c, p)| {
            (
                (c, p),
                stream_rng(cfg.seed, "fault", &[u64::from(c.0), u64::from(p.0)]),
            )
        })
        .collect();

    // Backup path hop counts per robot, ordered [min, alt...].
    let path_hops: BTreeMap<RobotId, Vec<usize>> = layer
        .paths
        .iter()
        .map(|(&r, set)| {
            let mut hops = vec![set.min_hops()];
            hops.extend(set.alternatives.iter().map(|(p, _)| p.len() - 1));
            (r, hops)
        })
        .collect();

    // One monitor per (follower, parent) edge.
    let mut monitors: BTreeMap<(RobotId, RobotId), ParentMonitor> = BTreeMap::new();
    for child in g.followers().collect::<Vec<_>>() {
        let paths = path_hops.get(&child).map(Vec::len).unwrap_or(0);
        for &parent in g.parents_of(child)? {
            monitors.insert((child, parent), ParentMonitor::new(parent, paths));
        }
    }

    // Window-aligned corruption flags per faulty edge.
    let mut truth_windows: BTreeMap<(RobotId, RobotId), VecDeque<bool>> = faulty_set
        .iter()
        .map(|&e| (e, VecDeque::new()))
        .collect();
    let mut decision_flags: BTreeMap<(RobotId, RobotId), (Vec<bool>, Vec<bool>)> = faulty_set
        .iter()
        .map(|&e| (e, (Vec::new(), Vec::new())))
        .collect();

    let robots: Vec<RobotId> = g.robots().collect();
    let followers: Vec<RobotId> = g.followers().collect();
    let mut positions: BTreeMap<RobotId, Position> = g.positions().clone();
    let leader = g.leader();
    let leader_origin = positions[&leader];
    let axis = cfg.leader_axis.unit();

    let ticks = cfg.ticks();
    let mut per_robot_error: Vec<Vec<f64>> = vec![Vec::with_capacity(ticks); robots.len()];
    let mut mean_err = Vec::with_capacity(ticks);
    let mut decision_log = Vec::new();
    let mut fault_log = Vec::new();
    let mut leader_path = Vec::new();

    for tick in 0..ticks {
        let t = tick as f64 * cfg.dt;

        // Fault processes arm only after the calibration window; the burst
        // interval overrides the background activation probability.
        let p_f_now = if t < cfg.fault.t_start {
            0.0
        } else {
            match &cfg.burst {
                Some(b) if t >= b.t_start && t < b.t_end => b.p_f,
                _ => cfg.fault.p_f,
            }
        };
        for (edge, fp) in faults.iter_mut() {
            fp.p_f = p_f_now;
            fp.advance(fault_rngs.get_mut(edge).expect("rng per fault edge"));
            if cfg.collect_logs {
                fault_log.push(FaultRow {
                    tick,
                    robot: edge.0 .0,
                    parent: edge.1 .0,
                    active: fp.active,
                });
            }
        }

        // Phase 1: measurements and decisions from current positions.
        let mut controls: BTreeMap<RobotId, [f64; 3]> = BTreeMap::new();
        for &child in &followers {
            let parents = g.parents_of(child)?.to_vec();
            let mut err_sum = [0.0f64; 3];
            for &parent in &parents {
                let q_true = [
                    positions[&child][0] - positions[&parent][0],
                    positions[&child][1] - positions[&parent][1],
                    positions[&child][2] - positions[&parent][2],
                ];
                let q_target = [
                    targets[&child][0] - targets[&parent][0],
                    targets[&child][1] - targets[&parent][1],
                    targets[&child][2] - targets[&parent][2],
                ];
                let edge = (child, parent);
                let clean = Measurement::new(q_true, t, SourcePath::Primary);

                // Primary path: offset fault (if scheduled) plus one hop of
                // channel noise.
                let mut primary = clean;
                let fault_active = faults.get(&edge).map(|fp| fp.active).unwrap_or(false);
                if let Some(fp) = faults.get(&edge) {
                    primary = corrupt(primary, fp);
                }
                let mut chan_rng = stream_rng(
                    cfg.seed,
                    "chan-primary",
                    &[u64::from(child.0), u64::from(parent.0), tick as u64],
                );
                primary = apply_channel(primary, &cfg.channel, 1, cfg.d, &mut chan_rng);

                // Backup references: clean data over each backup path's hops.
                let hops = path_hops.get(&child).cloned().unwrap_or_default();
                let backups: Vec<Measurement> = hops
                    .iter()
                    .enumerate()
                    .map(|(b, &h)| {
                        let mut rng = stream_rng(
                            cfg.seed,
                            "chan-backup",
                            &[
                                u64::from(child.0),
                                u64::from(parent.0),
                                b as u64,
                                tick as u64,
                            ],
                        );
                        apply_channel(
                            Measurement::new(q_true, t, SourcePath::Backup(b)),
                            &cfg.channel,
                            h.max(1),
                            cfg.d,
                            &mut rng,
                        )
                    })
                    .collect();

                let monitor = monitors.get_mut(&edge).expect("monitor per edge");
                let backup_xy: Vec<[f64; 2]> = backups.iter().map(Measurement::xy).collect();
                monitor.push_samples(primary.xy(), &backup_xy, cfg.detector.window);
                monitor.evaluate(&cfg.detector)?;

                if let Some(tw) = truth_windows.get_mut(&edge) {
                    tw.push_back(fault_active);
                    while tw.len() > cfg.detector.window {
                        tw.pop_front();
                    }
                    if !monitor.warming && !monitor.no_coverage {
                        let flags = decision_flags.get_mut(&edge).expect("flags per edge");
                        flags.0.push(monitor.declared);
                        flags.1.push(tw.iter().any(|&b| b));
                    }
                }

                let delivered = route_measurement(
                    &layer,
                    epoch,
                    monitor,
                    cfg.mitigation,
                    primary,
                    &backups,
                )?;

                if cfg.collect_logs && !monitor.warming && !monitor.no_coverage {
                    decision_log.push(DecisionRow {
                        tick,
                        robot: child.0,
                        parent: parent.0,
                        llrs: monitor.llr_set.clone(),
                        lambda: monitor.lambda,
                        lambda_recover: monitor.lambda_recover,
                        route: match monitor.route {
                            Route::Primary => "primary".to_string(),
                            Route::Backup(b) => format!("backup{b}"),
                        },
                        t_lock: monitor.t_lock,
                        declared: monitor.declared,
                    });
                }

                err_sum[0] += delivered.value[0] - q_target[0];
                err_sum[1] += delivered.value[1] - q_target[1];
                err_sum[2] += delivered.value[2] - q_target[2];
            }
            let k = parents.len() as f64;
            controls.insert(
                child,
                [err_sum[0] / k, err_sum[1] / k, err_sum[2] / k],
            );
        }

        // Phase 2: integrate positions (proportional term plus commanded
        // formation velocity as feedforward).
        let ff = [
            axis[0] * cfg.leader_speed * cfg.dt,
            axis[1] * cfg.leader_speed * cfg.dt,
            axis[2] * cfg.leader_speed * cfg.dt,
        ];
        for (&child, err) in &controls {
            let pos = positions[&child];
            let stepped = control_step(pos, *err, [0.0; 3], cfg.control_gain, cfg.dt);
            positions.insert(
                child,
                [stepped[0] + ff[0], stepped[1] + ff[1], stepped[2] + ff[2]],
            );
        }
        let t_next = (tick + 1) as f64 * cfg.dt;
        positions.insert(
            leader,
            [
                leader_origin[0] + axis[0] * cfg.leader_speed * t_next,
                leader_origin[1] + axis[1] * cfg.leader_speed * t_next,
                leader_origin[2] + axis[2] * cfg.leader_speed * t_next,
            ],
        );
        if cfg.collect_logs {
            leader_path.push(positions[&leader]);
        }

        // Tracking error against the moving formation slots.
        let disp = [
            axis[0] * cfg.leader_speed * t_next,
            axis[1] * cfg.leader_speed * t_next,
            axis[2] * cfg.leader_speed * t_next,
        ];
        let mut total = 0.0;
        for (idx, &r) in robots.iter().enumerate() {
            let slot = targets[&r];
            let goal = [slot[0] + disp[0], slot[1] + disp[1], slot[2] + disp[2]];
            let p = positions[&r];
            let e = ((p[0] - goal[0]).powi(2) + (p[1] - goal[1]).powi(2) + (p[2] - goal[2]).powi(2))
                .sqrt();
            per_robot_error[idx].push(e);
            total += e;
        }
        mean_err.push(total / robots.len() as f64);
    }

    let breakdown = breakdown_accounting(&per_robot_error, cfg.dt, cfg.breakdown_threshold);
    let broken: BTreeMap<RobotId, bool> = robots
        .iter()
        .zip(&breakdown.broken)
        .map(|(&r, &b)| (r, b))
        .collect();

    let scores: Vec<_> = decision_flags
        .values()
        .filter(|(d, _)| !d.is_empty())
        .map(|(d, t)| score_series(d, t))
        .collect::<Result<Vec<_>>>()?;
    let agg = average_scores(&scores);

    Ok(TrialMetrics {
        dt: cfg.dt,
        mean_err,
        fraction: breakdown.fraction,
        broken,
        accuracy: agg.accuracy,
        false_positive_rate: agg.false_positive_rate,
        hop_pairs: layer_hop_pairs(g, &layer),
        unreachable: layer.unreachable.clone(),
        decision_log,
        fault_log,
        leader_path,
        runtime_s: started.elapsed().as_secs_f64(),
    })
}
