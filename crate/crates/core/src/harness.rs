//! Experiment harness: scenario/sweep config files, seeded Monte Carlo
//! sweeps over parameter grids, and CSV report emission.
//!
//! Config files are TOML with explicit schema versioning. A file with
//! `axes`/`trials` keys is a sweep; anything else is a single scenario.
//! Per-trial seeds derive from a stable hash of (seed base, cell
//! assignment, trial index), so results never depend on thread count and
//! adding axis values never perturbs other cells' seeds.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seed::{mix, tag};
use crate::sim::{run_trial, ScenarioConfig, TrialMetrics, TrialSummary};
use crate::{Error, Result};

/// Environment variable holding the default report directory.
pub const OUT_DIR_ENV: &str = "SWARMGUARD_OUT";

/// One sweep axis: a parameter path and the values it takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub path: String,
    pub values: Vec<f64>,
}

/// A grid of scenarios: the base config crossed with every axis value
/// combination, `trials` seeded runs per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub schema_version: u32,
    pub trials: usize,
    pub seed_base: u64,
    pub axes: Vec<SweepAxis>,
    pub base: ScenarioConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(Error::config("schema_version", "must be 1"));
        }
        if self.trials < 1 {
            return Err(Error::config("trials", "must be >= 1"));
        }
        if self.axes.is_empty() {
            return Err(Error::config("axes", "sweep needs at least one axis"));
        }
        for axis in &self.axes {
            if axis.values.is_empty() {
                return Err(Error::config(
                    format!("axes.{}", axis.path),
                    "axis needs at least one value",
                ));
            }
            // Fail fast on unknown parameter paths.
            let mut probe = self.base.clone();
            apply_axis(&mut probe, &axis.path, axis.values[0])?;
        }
        self.base.validate()
    }

    /// Number of grid cells.
    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    /// Axis value assignment of the given cell, in axis order.
    pub fn assignment(&self, mut cell: usize) -> Vec<(String, f64)> {
        let mut out = Vec::with_capacity(self.axes.len());
        for axis in self.axes.iter().rev() {
            let k = axis.values.len();
            out.push((axis.path.clone(), axis.values[cell % k]));
            cell /= k;
        }
        out.reverse();
        out
    }
}

/// Set one sweepable parameter by path.
pub fn apply_axis(cfg: &mut ScenarioConfig, path: &str, value: f64) -> Result<()> {
    match path {
        "fault.p_f" => cfg.fault.p_f = value,
        "fault.offset_x" => cfg.fault.offset[0] = value,
        "fault.offset_y" => cfg.fault.offset[1] = value,
        "burst.p_f" => match cfg.burst.as_mut() {
            Some(b) => b.p_f = value,
            None => return Err(Error::config("burst.p_f", "scenario has no burst")),
        },
        "channel.p_e" => cfg.channel.p_e = value,
        "channel.c" => cfg.channel.c = value,
        "detector.window" => cfg.detector.window = value as usize,
        "detector.theta" => cfg.detector.theta = value,
        "detector.eps_cov" => cfg.detector.eps_cov = value,
        "detector.history_len" => cfg.detector.history_len = value as usize,
        "abmc.tau" => cfg.abmc.tau = value,
        "abmc.r" => cfg.abmc.r = value,
        "sim.n" => cfg.n = value as usize,
        "sim.duration" => cfg.duration = value,
        "sim.leader_speed" => cfg.leader_speed = value,
        "sim.mitigation" => cfg.mitigation = value != 0.0,
        other => {
            return Err(Error::config(
                format!("axes.{other}"),
                "unknown sweep parameter path",
            ))
        }
    }
    Ok(())
}

/// Stable per-trial seed: hash of seed base, cell assignment, trial index.
pub fn trial_seed(seed_base: u64, assignment: &[(String, f64)], trial: usize) -> u64 {
    let mut parts = vec![seed_base];
    for (path, value) in assignment {
        parts.push(tag(path));
        parts.push(value.to_bits());
    }
    parts.push(trial as u64);
    mix(&parts)
}

/// Parsed config file.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigFile {
    Scenario(Box<ScenarioConfig>),
    Sweep(Box<SweepSpec>),
}

/// Parse and validate a scenario or sweep TOML file. Unknown keys are
/// rejected with the offending key path.
pub fn parse_config(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path)?;
    parse_config_str(&text)
}

/// As [`parse_config`], from an in-memory string.
pub fn parse_config_str(text: &str) -> Result<ConfigFile> {
    let value: toml::Value = toml::from_str(text)
        .map_err(|e| Error::config("<document>", e.to_string()))?;
    let is_sweep = value.get("axes").is_some() || value.get("base").is_some();
    if is_sweep {
        let spec: SweepSpec = toml::from_str(text)
            .map_err(|e| Error::config("<sweep>", e.to_string()))?;
        spec.validate()?;
        Ok(ConfigFile::Sweep(Box::new(spec)))
    } else {
        let cfg: ScenarioConfig = toml::from_str(text)
            .map_err(|e| Error::config("<scenario>", e.to_string()))?;
        cfg.validate()?;
        Ok(ConfigFile::Scenario(Box::new(cfg)))
    }
}

/// Serialize a scenario back to TOML.
pub fn scenario_to_toml(cfg: &ScenarioConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::config("<scenario>", e.to_string()))
}

// ---------------------------------------------------------------------------
// Aggregates
// ---------------------------------------------------------------------------

/// Backup-hop statistics for one primary-path length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopStat {
    pub primary_hops: u32,
    pub count: usize,
    pub mean_backup_hops: f64,
    pub sd_backup_hops: f64,
}

/// Per-cell aggregate over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub assignment: Vec<(String, f64)>,
    pub trials: usize,
    /// (trial index, error message) for every failed trial.
    pub failures: Vec<(usize, String)>,
    pub mean_accuracy: Option<f64>,
    pub sd_accuracy: Option<f64>,
    pub mean_fpr: Option<f64>,
    pub sd_fpr: Option<f64>,
    pub mean_final_fraction: f64,
    pub sd_final_fraction: f64,
    /// Mean tracking-error series across trials (per tick).
    pub err_series_mean: Vec<f64>,
    pub err_series_sd: Vec<f64>,
    pub fraction_series_mean: Vec<f64>,
    pub hop_stats: Vec<HopStat>,
    pub summaries: Vec<Option<TrialSummary>>,
}

/// Whole-sweep result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub axis_paths: Vec<String>,
    pub dt: f64,
    pub cells: Vec<CellResult>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn opt_mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_sd(values);
        (Some(m), Some(s))
    }
}

fn aggregate_cell(
    assignment: Vec<(String, f64)>,
    outcomes: Vec<std::result::Result<TrialMetrics, String>>,
) -> CellResult {
    let trials = outcomes.len();
    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (idx, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(m) => ok.push(m),
            Err(e) => failures.push((idx, e)),
        }
    }
    let accuracy: Vec<f64> = ok.iter().filter_map(|m| m.accuracy).collect();
    let fpr: Vec<f64> = ok.iter().filter_map(|m| m.false_positive_rate).collect();
    let final_fraction: Vec<f64> = ok
        .iter()
        .map(|m| m.fraction.last().copied().unwrap_or(1.0))
        .collect();
    let (mean_accuracy, sd_accuracy) = opt_mean_sd(&accuracy);
    let (mean_fpr, sd_fpr) = opt_mean_sd(&fpr);
    let (mean_final_fraction, sd_final_fraction) = mean_sd(&final_fraction);

    let ticks = ok.iter().map(|m| m.mean_err.len()).min().unwrap_or(0);
    let mut err_series_mean = Vec::with_capacity(ticks);
    let mut err_series_sd = Vec::with_capacity(ticks);
    let mut fraction_series_mean = Vec::with_capacity(ticks);
    for t in 0..ticks {
        let errs: Vec<f64> = ok.iter().map(|m| m.mean_err[t]).collect();
        let (m, s) = mean_sd(&errs);
        err_series_mean.push(m);
        err_series_sd.push(s);
        let fracs: Vec<f64> = ok.iter().map(|m| m.fraction[t]).collect();
        fraction_series_mean.push(mean_sd(&fracs).0);
    }

    let mut by_primary: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for m in &ok {
        for &(primary, backup) in &m.hop_pairs {
            by_primary.entry(primary).or_default().push(f64::from(backup));
        }
    }
    let hop_stats = by_primary
        .into_iter()
        .map(|(primary_hops, backups)| {
            let (mean, sd) = mean_sd(&backups);
            HopStat {
                primary_hops,
                count: backups.len(),
                mean_backup_hops: mean,
                sd_backup_hops: sd,
            }
        })
        .collect();

    let summaries = ok.iter().map(|m| Some(m.summary())).collect();
    CellResult {
        assignment,
        trials,
        failures,
        mean_accuracy,
        sd_accuracy,
        mean_fpr,
        sd_fpr,
        mean_final_fraction,
        sd_final_fraction,
        err_series_mean,
        err_series_sd,
        fraction_series_mean,
        hop_stats,
        summaries,
    }
}

/// Run every (cell, trial) job of the sweep. Results are deterministic for
/// a fixed seed base regardless of `parallelism`; failed trials are
/// recorded per cell and do not abort the sweep.
pub fn run_sweep(spec: &SweepSpec, parallelism: usize) -> Result<AggregateResult> {
    spec.validate()?;
    let cells = spec.cell_count();
    let jobs: Vec<(usize, usize)> = (0..cells)
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::config("parallelism", e.to_string()))?;
    let outcomes: Vec<std::result::Result<TrialMetrics, String>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(cell, trial)| {
                let assignment = spec.assignment(cell);
                let mut cfg = spec.base.clone();
                for (path, value) in &assignment {
                    apply_axis(&mut cfg, path, *value).map_err(|e| e.to_string())?;
                }
                cfg.seed = trial_seed(spec.seed_base, &assignment, trial);
                match catch_unwind(AssertUnwindSafe(|| run_trial(&cfg))) {
                    Ok(Ok(m)) => Ok(m),
                    Ok(Err(e)) => Err(e.to_string()),
                    Err(_) => Err("trial panicked".to_string()),
                }
            })
            .collect()
    });

    let mut cells_out = Vec::with_capacity(cells);
    let mut it = outcomes.into_iter();
    for cell in 0..cells {
        let outcomes: Vec<_> = (&mut it).take(spec.trials).collect();
        cells_out.push(aggregate_cell(spec.assignment(cell), outcomes));
    }
    Ok(AggregateResult {
        axis_paths: spec.axes.iter().map(|a| a.path.clone()).collect(),
        dt: spec.base.dt,
        cells: cells_out,
    })
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Write the per-cell summary, error-series, and hop-statistics CSVs.
/// Returns the created file paths. Column order is stable; an empty sweep
/// produces header-only files.
pub fn emit_reports(agg: &AggregateResult, outdir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(outdir)?;
    let axis_cols: Vec<String> = agg.axis_paths.iter().map(|p| format!("axis:{p}")).collect();

    let summary_path = outdir.join("summary.csv");
    {
        let mut wtr = csv::Writer::from_path(&summary_path)?;
        let mut header = vec!["cell".to_string()];
        header.extend(axis_cols.iter().cloned());
        header.extend(
            [
                "trials",
                "failures",
                "mean_accuracy",
                "sd_accuracy",
                "mean_fpr",
                "sd_fpr",
                "mean_final_fraction",
                "sd_final_fraction",
            ]
            .map(String::from),
        );
        wtr.write_record(&header)?;
        for (idx, cell) in agg.cells.iter().enumerate() {
            let mut row = vec![idx.to_string()];
            row.extend(cell.assignment.iter().map(|(_, v)| format!("{v}")));
            row.push(cell.trials.to_string());
            row.push(cell.failures.len().to_string());
            row.push(fmt_opt(cell.mean_accuracy));
            row.push(fmt_opt(cell.sd_accuracy));
            row.push(fmt_opt(cell.mean_fpr));
            row.push(fmt_opt(cell.sd_fpr));
            row.push(format!("{}", cell.mean_final_fraction));
            row.push(format!("{}", cell.sd_final_fraction));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
    }

    let series_path = outdir.join("error_series.csv");
    {
        let mut wtr = csv::Writer::from_path(&series_path)?;
        let mut header = vec!["cell".to_string()];
        header.extend(axis_cols.iter().cloned());
        header.extend(["tick", "t", "mean_err_mean", "mean_err_sd", "fraction_mean"].map(String::from));
        wtr.write_record(&header)?;
        for (idx, cell) in agg.cells.iter().enumerate() {
            for t in 0..cell.err_series_mean.len() {
                let mut row = vec![idx.to_string()];
                row.extend(cell.assignment.iter().map(|(_, v)| format!("{v}")));
                row.push(t.to_string());
                row.push(format!("{}", (t + 1) as f64 * agg.dt));
                row.push(format!("{}", cell.err_series_mean[t]));
                row.push(format!("{}", cell.err_series_sd[t]));
                row.push(format!("{}", cell.fraction_series_mean[t]));
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
    }

    let hops_path = outdir.join("hop_stats.csv");
    {
        let mut wtr = csv::Writer::from_path(&hops_path)?;
        let mut header = vec!["cell".to_string()];
        header.extend(axis_cols.iter().cloned());
        header.extend(
            ["primary_hops", "count", "mean_backup_hops", "sd_backup_hops"].map(String::from),
        );
        wtr.write_record(&header)?;
        for (idx, cell) in agg.cells.iter().enumerate() {
            for h in &cell.hop_stats {
                let mut row = vec![idx.to_string()];
                row.extend(cell.assignment.iter().map(|(_, v)| format!("{v}")));
                row.push(h.primary_hops.to_string());
                row.push(h.count.to_string());
                row.push(format!("{}", h.mean_backup_hops));
                row.push(format!("{}", h.sd_backup_hops));
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
    }

    Ok(vec![summary_path, series_path, hops_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{FaultConfig, FaultMode};

    fn small_base() -> ScenarioConfig {
        ScenarioConfig {
            n: 10,
            duration: 4.0,
            fault: FaultConfig {
                mode: FaultMode::TwoFaultyParents,
                p_f: 0.3,
                ..FaultConfig::default()
            },
            ..ScenarioConfig::default()
        }
    }

    fn small_spec() -> SweepSpec {
        SweepSpec {
            schema_version: 1,
            trials: 2,
            seed_base: 900,
            axes: vec![SweepAxis {
                path: "fault.p_f".into(),
                values: vec![0.1, 0.4],
            }],
            base: small_base(),
        }
    }

    #[test]
    fn minimal_scenario_fills_defaults() {
        let parsed = parse_config_str("schema_version = 1\nn = 20\nseed = 1\n").unwrap();
        match parsed {
            ConfigFile::Scenario(cfg) => {
                assert_eq!(cfg.n, 20);
                assert_eq!(cfg.seed, 1);
                assert_eq!(cfg.detector.window, 20);
            }
            _ => panic!("expected scenario"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config_str("schema_version = 1\nnrobots = 20\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nrobots"), "{msg}");
    }

    #[test]
    fn burst_validation_runs_at_parse_time() {
        let text = r#"
schema_version = 1
n = 10
[burst]
p_f = 0.4
t_start = 30.0
t_end = 10.0
"#;
        assert!(parse_config_str(text).is_err());
    }

    #[test]
    fn scenario_round_trips_through_toml() {
        let mut cfg = small_base();
        cfg.burst = Some(crate::sim::BurstConfig {
            p_f: 0.35,
            t_start: 1.0,
            t_end: 2.0,
        });
        let text = scenario_to_toml(&cfg).unwrap();
        match parse_config_str(&text).unwrap() {
            ConfigFile::Scenario(parsed) => assert_eq!(*parsed, cfg),
            _ => panic!("expected scenario"),
        }
    }

    #[test]
    fn sweep_files_parse_and_validate() {
        let text = r#"
schema_version = 1
trials = 2
seed_base = 7
[[axes]]
path = "fault.p_f"
values = [0.1, 0.2]
[base]
schema_version = 1
n = 10
[base.fault]
mode = "two_faulty_parents"
p_f = 0.1
"#;
        match parse_config_str(text).unwrap() {
            ConfigFile::Sweep(spec) => {
                assert_eq!(spec.cell_count(), 2);
                assert_eq!(spec.assignment(1), vec![("fault.p_f".to_string(), 0.2)]);
            }
            _ => panic!("expected sweep"),
        }
        let bad = text.replace("fault.p_f", "fault.bogus");
        assert!(parse_config_str(&bad).is_err());
    }

    #[test]
    fn trial_seeds_are_stable_under_axis_growth() {
        let a = trial_seed(5, &[("fault.p_f".into(), 0.1)], 3);
        let b = trial_seed(5, &[("fault.p_f".into(), 0.1)], 3);
        assert_eq!(a, b);
        // Different cells and trials get different seeds.
        assert_ne!(a, trial_seed(5, &[("fault.p_f".into(), 0.2)], 3));
        assert_ne!(a, trial_seed(5, &[("fault.p_f".into(), 0.1)], 4));
    }

    #[test]
    fn single_cell_single_trial_equals_run_trial() {
        let spec = SweepSpec {
            trials: 1,
            axes: vec![SweepAxis {
                path: "fault.p_f".into(),
                values: vec![0.3],
            }],
            ..small_spec()
        };
        let agg = run_sweep(&spec, 1).unwrap();
        assert_eq!(agg.cells.len(), 1);
        let mut cfg = spec.base.clone();
        apply_axis(&mut cfg, "fault.p_f", 0.3).unwrap();
        cfg.seed = trial_seed(spec.seed_base, &spec.assignment(0), 0);
        let direct = run_trial(&cfg).unwrap();
        let cell = &agg.cells[0];
        assert_eq!(cell.err_series_mean, direct.mean_err);
        assert_eq!(cell.mean_accuracy, direct.accuracy);
    }

    #[test]
    fn parallelism_does_not_change_aggregates() {
        let spec = small_spec();
        let mut a = run_sweep(&spec, 1).unwrap();
        let mut b = run_sweep(&spec, 8).unwrap();
        // Wall-clock runtimes are the one legitimately nondeterministic
        // field; everything else must match bit for bit.
        let zero_runtimes = |agg: &mut AggregateResult| {
            for cell in &mut agg.cells {
                for s in cell.summaries.iter_mut().flatten() {
                    s.runtime_s = 0.0;
                }
            }
        };
        zero_runtimes(&mut a);
        zero_runtimes(&mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn cell_count_is_axis_product_and_sd_nonnegative() {
        let mut spec = small_spec();
        spec.axes.push(SweepAxis {
            path: "channel.p_e".into(),
            values: vec![0.01, 0.02, 0.05],
        });
        spec.trials = 1;
        spec.base.duration = 2.0;
        let agg = run_sweep(&spec, 4).unwrap();
        assert_eq!(agg.cells.len(), 6);
        for cell in &agg.cells {
            assert!(cell.sd_final_fraction >= 0.0);
            if let Some(sd) = cell.sd_accuracy {
                assert!(sd >= 0.0);
            }
        }
    }

    #[test]
    fn aggregate_mean_matches_recomputation_from_summaries() {
        let spec = small_spec();
        let agg = run_sweep(&spec, 2).unwrap();
        for cell in &agg.cells {
            let accs: Vec<f64> = cell
                .summaries
                .iter()
                .flatten()
                .filter_map(|s| s.accuracy)
                .collect();
            if let Some(mean) = cell.mean_accuracy {
                let recomputed = accs.iter().sum::<f64>() / accs.len() as f64;
                assert!((mean - recomputed).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn failed_trials_are_recorded_and_do_not_abort_the_sweep() {
        // p_f = 3.0 fails scenario validation inside the trial; the cell
        // records the failure and the other cell still aggregates.
        let mut spec = small_spec();
        spec.trials = 1;
        spec.axes[0].values = vec![3.0, 0.2];
        spec.base.duration = 2.0;
        let agg = run_sweep(&spec, 2).unwrap();
        assert_eq!(agg.cells.len(), 2);
        assert_eq!(agg.cells[0].failures.len(), 1);
        assert!(agg.cells[0].failures[0].1.contains("fault.p_f"));
        assert!(agg.cells[1].failures.is_empty());
        assert!(!agg.cells[1].err_series_mean.is_empty());
    }

    #[test]
    fn reports_have_stable_shape() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SweepSpec {
            trials: 1,
            ..small_spec()
        };
        let agg = run_sweep(&spec, 2).unwrap();
        let files = emit_reports(&agg, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let summary = fs::read_to_string(&files[0]).unwrap();
        let mut lines = summary.lines();
        assert_eq!(
            lines.next().unwrap(),
            "cell,axis:fault.p_f,trials,failures,mean_accuracy,sd_accuracy,mean_fpr,sd_fpr,mean_final_fraction,sd_final_fraction"
        );
        assert_eq!(lines.count(), 2, "one row per cell");

        // Empty sweep: header-only files.
        let empty = AggregateResult {
            axis_paths: vec!["fault.p_f".into()],
            dt: 0.1,
            cells: Vec::new(),
        };
        let files = emit_reports(&empty, dir.path()).unwrap();
        for f in files {
            let text = fs::read_to_string(f).unwrap();
            assert_eq!(text.lines().count(), 1);
        }
    }
}
