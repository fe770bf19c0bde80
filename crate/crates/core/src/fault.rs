//! Intermittent offset faults and per-hop channel noise on relative-position
//! measurements.
//!
//! An offset fault adds a constant (o_x, o_y) to the transmitted relative
//! position while active. Activation is a Bernoulli draw with probability
//! `p_f` per sampling tick; once active the fault persists for a duration
//! drawn from the duration model. With one-tick durations the per-sample
//! corruption is an independent Bernoulli, so over many ticks the corrupted
//! stream has mean q + p_f * o and per-axis variance p_f (1 - p_f) o^2.
//!
//! Transmission over a binary-symmetric channel with bit-error probability
//! `p_e` is approximated by additive zero-mean Gaussian noise whose per-axis
//! variance is proportional to `p_e` and accumulates linearly with the hop
//! count of the path.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Where a measurement travelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourcePath {
    Primary,
    /// Index into the robot's backup path set.
    Backup(usize),
}

/// A relative-position sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Relative position in meters; planar scenarios keep z = 0.
    pub value: [f64; 3],
    /// Sample time in seconds.
    pub timestamp: f64,
    pub source: SourcePath,
}

impl Measurement {
    pub fn new(value: [f64; 3], timestamp: f64, source: SourcePath) -> Self {
        Measurement {
            value,
            timestamp,
            source,
        }
    }

    /// The (x, y) components the detector operates on.
    pub fn xy(&self) -> [f64; 2] {
        [self.value[0], self.value[1]]
    }
}

/// Law of the fault-active interval, in sampling ticks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DurationModel {
    /// Every fault lasts exactly this many ticks.
    Fixed { ticks: u32 },
    /// Memoryless duration with the given mean (support starts at 1 tick).
    Geometric { mean_ticks: f64 },
}

impl Default for DurationModel {
    fn default() -> Self {
        DurationModel::Geometric { mean_ticks: 3.0 }
    }
}

impl DurationModel {
    fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        match *self {
            DurationModel::Fixed { ticks } => ticks.max(1),
            DurationModel::Geometric { mean_ticks } => {
                let p = (1.0 / mean_ticks.max(1.0)).clamp(f64::MIN_POSITIVE, 1.0);
                if p >= 1.0 {
                    return 1;
                }
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                1 + (u.ln() / (1.0 - p).ln()).floor() as u32
            }
        }
    }
}

/// Bernoulli offset-fault generator for one edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultProcess {
    /// Activation probability per sampling tick.
    pub p_f: f64,
    /// Constant offset (o_x, o_y) in meters applied while active.
    pub offset: [f64; 2],
    pub duration: DurationModel,
    pub active: bool,
    /// Ticks of activity left, including the current one.
    pub remaining_ticks: u32,
}

impl FaultProcess {
    pub fn new(p_f: f64, offset: [f64; 2], duration: DurationModel) -> Self {
        FaultProcess {
            p_f,
            offset,
            duration,
            active: false,
            remaining_ticks: 0,
        }
    }

    /// Advance one sampling tick: an expiring fault deactivates and the
    /// process immediately becomes eligible to re-activate, so p_f = 1 with
    /// one-tick durations is active on every tick.
    pub fn advance<R: Rng>(&mut self, rng: &mut R) {
        if self.active {
            self.remaining_ticks = self.remaining_ticks.saturating_sub(1);
            if self.remaining_ticks == 0 {
                self.active = false;
            }
        }
        if !self.active && self.p_f > 0.0 && rng.gen_bool(self.p_f.min(1.0)) {
            self.active = true;
            self.remaining_ticks = self.duration.sample(rng);
        }
    }
}

/// Free-function form of [`FaultProcess::advance`]; `dt` is the sampling
/// interval the tick represents and must be positive.
pub fn advance_fault<R: Rng>(fp: &mut FaultProcess, dt: f64, rng: &mut R) {
    debug_assert!(dt > 0.0);
    fp.advance(rng);
}

/// Add the offset to a measurement when the fault is active.
pub fn corrupt(q: Measurement, fp: &FaultProcess) -> Measurement {
    if !fp.active {
        return q;
    }
    let mut out = q;
    out.value[0] += fp.offset[0];
    out.value[1] += fp.offset[1];
    out
}

/// Binary-symmetric-channel noise model: per-hop, per-axis Gaussian variance
/// `c * p_e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    /// Bit-error probability per hop.
    pub p_e: f64,
    /// Variance per unit bit-error probability, in m^2.
    pub c: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel { p_e: 0.0, c: 0.04 }
    }
}

impl ChannelModel {
    /// Per-hop, per-axis noise variance sigma_e^2(p_e) = c * p_e.
    pub fn sigma_e_sq(&self) -> f64 {
        self.c * self.p_e
    }
}

/// Standard normal via Box-Muller; two independent draws.
fn normal_pair<R: Rng>(rng: &mut R) -> (f64, f64) {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Add independent per-hop channel noise on the first `dims` axes; the
/// per-axis variance of the total is `hops * sigma_e_sq`.
pub fn apply_channel<R: Rng>(
    q: Measurement,
    ch: &ChannelModel,
    hops: usize,
    dims: usize,
    rng: &mut R,
) -> Measurement {
    debug_assert!(hops >= 1);
    let var = ch.sigma_e_sq() * hops as f64;
    if var <= 0.0 {
        return q;
    }
    let sd = var.sqrt();
    let mut out = q;
    let (n0, n1) = normal_pair(rng);
    out.value[0] += sd * n0;
    if dims >= 2 {
        out.value[1] += sd * n1;
    }
    if dims >= 3 {
        let (n2, _) = normal_pair(rng);
        out.value[2] += sd * n2;
    }
    out
}
