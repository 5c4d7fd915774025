//! Seeds × parameter grids, per-run summaries and CSV emission.

use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::SimConfig;
use crate::engine::{run_simulation, MetricsRecord, SimOutput, TupleRow};
use crate::error::{Result, SimError};

/// Mean of the per-slot forecast errors in `slots`, weighted by the number of
/// forecasts graded in each slot.
pub fn window_mae(metrics: &[MetricsRecord], slots: Range<u64>) -> Option<f64> {
    let (sum, n) = metrics
        .iter()
        .filter(|m| slots.contains(&m.slot))
        .filter_map(|m| {
            m.prediction_mae_db
                .map(|e| (e * m.graded_predictions as f64, m.graded_predictions))
        })
        .fold((0.0, 0usize), |(s, n), (e, k)| (s + e, n + k));
    (n > 0).then(|| sum / n as f64)
}

fn mean_std(xs: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

/// Post-warm-up statistics of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub slots_evaluated: usize,
    pub mean_throughput_mbps: f64,
    pub std_throughput_mbps: f64,
    pub mean_throughput_connected_mbps: f64,
    pub total_handovers: u64,
    pub std_handovers_per_slot: f64,
    pub mean_active_users: f64,
    pub final_mae_db: Option<f64>,
    pub std_mae_db: Option<f64>,
}

impl RunSummary {
    /// Throughput and handovers are taken over slots at or after the warm-up;
    /// forecast error over the trailing `final_window_slots`.
    pub fn from_metrics(metrics: &[MetricsRecord], cfg: &SimConfig) -> Self {
        let warm = cfg.engine.warm_up_slots;
        let eval: Vec<&MetricsRecord> = metrics.iter().filter(|m| m.slot >= warm).collect();
        let (tp, tp_sd) = mean_std(eval.iter().map(|m| m.mean_throughput_mbps)).unwrap_or((0.0, 0.0));
        let (tpc, _) = mean_std(eval.iter().map(|m| m.mean_throughput_connected_mbps)).unwrap_or((0.0, 0.0));
        let (_, ho_sd) = mean_std(eval.iter().map(|m| m.handovers as f64)).unwrap_or((0.0, 0.0));
        let (users, _) = mean_std(eval.iter().map(|m| m.active_users as f64)).unwrap_or((0.0, 0.0));
        let end = metrics.last().map_or(0, |m| m.slot + 1);
        let start = end.saturating_sub(cfg.engine.final_window_slots);
        let window = start..end;
        let final_mae = window_mae(metrics, window.clone());
        let mae_sd = mean_std(
            metrics
                .iter()
                .filter(|m| window.contains(&m.slot))
                .filter_map(|m| m.prediction_mae_db),
        )
        .map(|(_, s)| s);
        Self {
            slots_evaluated: eval.len(),
            mean_throughput_mbps: tp,
            std_throughput_mbps: tp_sd,
            mean_throughput_connected_mbps: tpc,
            total_handovers: eval.iter().map(|m| m.handovers as u64).sum(),
            std_handovers_per_slot: ho_sd,
            mean_active_users: users,
            final_mae_db: final_mae,
            std_mae_db: final_mae.and(mae_sd),
        }
    }
}

/// One axis of a parameter sweep: a dotted config key and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<toml::Value>,
}

/// Sets `section.key` in a config, re-validating the result.
pub fn apply_override(cfg: &SimConfig, key: &str, value: toml::Value) -> Result<SimConfig> {
    let mut tree = toml::Value::try_from(cfg).map_err(|e| SimError::Parse(e.to_string()))?;
    let mut node = &mut tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| SimError::config(key, "is not a configuration field"))?;
        if !table.contains_key(*part) {
            return Err(SimError::config(key, "is not a configuration field"));
        }
        if i + 1 == parts.len() {
            table.insert((*part).to_string(), value.clone());
            break;
        }
        node = table.get_mut(*part).unwrap();
    }
    let out: SimConfig = tree
        .try_into()
        .map_err(|e: toml::de::Error| SimError::config(key, e.to_string()))?;
    Ok(out)
}

/// Every combination of sweep values, in row-major order of the axes.
pub fn grid(axes: &[SweepAxis]) -> Vec<Vec<(String, toml::Value)>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((axis.key.clone(), v.clone()));
                    p
                })
            })
            .collect()
    })
}

pub struct CellResult {
    pub point: Vec<(String, toml::Value)>,
    pub seed: u64,
    pub config: SimConfig,
    pub outcome: std::result::Result<(RunSummary, SimOutput), String>,
}

impl CellResult {
    /// Stable, filesystem-safe name of the cell.
    pub fn label(&self) -> String {
        let mut parts: Vec<String> = self
            .point
            .iter()
            .map(|(k, v)| {
                let v = v.as_str().map_or_else(|| v.to_string(), str::to_string);
                format!("{}={v}", k.rsplit('.').next().unwrap_or(k))
            })
            .collect();
        parts.push(format!("seed={}", self.seed));
        parts
            .join("_")
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "=._-".contains(c) {
                    c
                } else {
                    '-'
                }
            })
            .collect()
    }
}

/// Runs every (grid point, seed) cell. Seeds run in parallel; within a seed
/// the grid points run in order and a predictive cell starts from the model
/// left by the previous predictive cell of that seed (or from `carried`).
/// A failing cell is reported, not propagated. Cells come back grid-point
/// major, seeds in the order given.
pub fn run_experiment(
    base: &SimConfig,
    seeds: &[u64],
    axes: &[SweepAxis],
    carried: Option<&Checkpoint>,
) -> Result<Vec<CellResult>> {
    if seeds.is_empty() {
        return Err(SimError::config("seeds", "need at least one seed"));
    }
    let mut points = Vec::new();
    for point in grid(axes) {
        let mut cfg = base.clone();
        for (k, v) in &point {
            cfg = apply_override(&cfg, k, v.clone())?;
        }
        points.push((point, cfg));
    }
    let per_seed: Vec<Vec<CellResult>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut model = carried.cloned();
            let mut out = Vec::with_capacity(points.len());
            for (point, cfg) in &points {
                let mut config = cfg.clone();
                config.engine.seed = seed;
                let start = model
                    .as_ref()
                    .filter(|ck| *ck.model.arch() == config.architecture())
                    .cloned();
                let outcome = run_simulation(&config, start)
                    .map(|out| (RunSummary::from_metrics(&out.metrics, &config), out))
                    .map_err(|e| e.to_string());
                if let Ok((_, run)) = &outcome {
                    if let Some(ck) = &run.checkpoint {
                        model = Some(ck.clone());
                    }
                }
                out.push(CellResult {
                    point: point.clone(),
                    seed,
                    config,
                    outcome,
                });
            }
            out
        })
        .collect();
    let mut columns: Vec<_> = per_seed.into_iter().map(Vec::into_iter).collect();
    let mut cells = Vec::with_capacity(points.len() * seeds.len());
    for _ in 0..points.len() {
        for col in &mut columns {
            cells.extend(col.next());
        }
    }
    Ok(cells)
}

pub fn write_metrics_csv(path: &Path, metrics: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if metrics.is_empty() {
        w.write_record([
            "slot",
            "active_users",
            "connected_users",
            "mean_throughput_mbps",
            "mean_throughput_connected_mbps",
            "handovers",
            "cumulative_handovers",
            "prediction_mae_db",
            "graded_predictions",
            "training_loss",
        ])?;
    }
    for m in metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tuples_csv(path: &Path, run_id: &str, num_aps: usize, rows: &[TupleRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "run_id".to_string(),
        "slot".into(),
        "user_id".into(),
        "dl_mbps".into(),
        "ul_mbps".into(),
    ];
    header.extend((0..num_aps).map(|i| format!("rssi_{i}")));
    header.push("ap_id".into());
    header.push("handover_flag".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            run_id.to_string(),
            r.slot.to_string(),
            r.user_id.to_string(),
            r.dl_mbps.to_string(),
            r.ul_mbps.to_string(),
        ];
        rec.extend(r.rssi.iter().map(f64::to_string));
        rec.push(r.ap.map(|a| a.to_string()).unwrap_or_default());
        rec.push(u8::from(r.handover).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const SUMMARY_COLUMNS: [&str; 12] = [
    "policy",
    "seed",
    "status",
    "slots_evaluated",
    "mean_throughput_mbps",
    "std_throughput_mbps",
    "mean_throughput_connected_mbps",
    "total_handovers",
    "std_handovers_per_slot",
    "mean_active_users",
    "final_mae_db",
    "std_mae_db",
];

/// One row per cell; sweep keys come first so rows are self-describing.
pub fn write_summary_csv(path: &Path, axes: &[SweepAxis], cells: &[CellResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = axes.iter().map(|a| a.key.clone()).collect();
    header.extend(SUMMARY_COLUMNS.iter().map(|s| s.to_string()));
    header.push("error".into());
    w.write_record(&header)?;
    for cell in cells {
        let mut rec: Vec<String> = cell.point.iter().map(|(_, v)| v.to_string()).collect();
        rec.push(cell.config.policy.policy().variant.to_string());
        rec.push(cell.seed.to_string());
        match &cell.outcome {
            Ok((s, _)) => {
                rec.extend([
                    "ok".to_string(),
                    s.slots_evaluated.to_string(),
                    s.mean_throughput_mbps.to_string(),
                    s.std_throughput_mbps.to_string(),
                    s.mean_throughput_connected_mbps.to_string(),
                    s.total_handovers.to_string(),
                    s.std_handovers_per_slot.to_string(),
                    s.mean_active_users.to_string(),
                    opt(s.final_mae_db),
                    opt(s.std_mae_db),
                    String::new(),
                ]);
            }
            Err(e) => {
                rec.push("failed".into());
                rec.extend(std::iter::repeat_n(String::new(), SUMMARY_COLUMNS.len() - 3));
                rec.push(e.clone());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Across-seed mean and standard deviation per grid point.
pub fn write_aggregate_csv(path: &Path, axes: &[SweepAxis], cells: &[CellResult]) -> Result<()> {
    let mut header: Vec<String> = axes.iter().map(|a| a.key.clone()).collect();
    header.extend(
        [
            "policy",
            "runs",
            "failed",
            "mean_throughput_mbps",
            "sd_throughput_mbps",
            "mean_total_handovers",
            "sd_total_handovers",
            "mean_final_mae_db",
            "sd_final_mae_db",
        ]
        .map(String::from),
    );
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    let mut points: Vec<&Vec<(String, toml::Value)>> = Vec::new();
    for c in cells {
        if !points.contains(&&c.point) {
            points.push(&c.point);
        }
    }
    for point in points {
        let group: Vec<&CellResult> = cells.iter().filter(|c| &c.point == point).collect();
        let ok: Vec<&RunSummary> = group
            .iter()
            .filter_map(|c| c.outcome.as_ref().ok().map(|(s, _)| s))
            .collect();
        let tp = mean_std(ok.iter().map(|s| s.mean_throughput_mbps));
        let ho = mean_std(ok.iter().map(|s| s.total_handovers as f64));
        let mae = mean_std(ok.iter().filter_map(|s| s.final_mae_db));
        let mut rec: Vec<String> = point.iter().map(|(_, v)| v.to_string()).collect();
        rec.push(group[0].config.policy.policy().variant.to_string());
        rec.push(ok.len().to_string());
        rec.push((group.len() - ok.len()).to_string());
        for pair in [tp, ho, mae] {
            rec.push(opt(pair.map(|p| p.0)));
            rec.push(opt(pair.map(|p| p.1)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
