//! Experiment spec files, flag handling and result emission for the
//! `wigig` binary.
//!
//! An experiment spec file is the simulator TOML (one section per subsystem)
//! plus two optional sections:
//!
//! ```toml
//! [experiment]
//! seeds = [1, 2, 3]
//! out_dir = "results/interarrival"
//! checkpoint_in = "pretrained.ckpt"
//!
//! [sweep]
//! "scenario.interarrival_mean_s" = [5.0, 10.0, 20.0]
//! ```
//!
//! Flags override the file. The fully resolved spec is echoed and saved as
//! `resolved.toml` next to the results, which is what `replay-check` reads.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use wigig_core::checkpoint::Checkpoint;
use wigig_core::engine::run_simulation;
use wigig_core::experiment::{
    apply_override, run_experiment, write_aggregate_csv, write_metrics_csv, write_summary_csv, write_tuples_csv,
    CellResult, RunSummary, SweepAxis,
};
use wigig_core::policy::{Mode, PolicyFamily};
use wigig_core::SimConfig;

pub const RESOLVED_FILE: &str = "resolved.toml";
pub const DEFAULT_CHECKPOINT: &str = "model.ckpt";

#[derive(Debug, Parser)]
#[command(
    name = "wigig",
    version,
    about = "Multi-AP 60 GHz room simulator with predictive handover"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation.
    Run(SpecArgs),
    /// Run every (sweep point, seed) cell of an experiment grid.
    Sweep(SpecArgs),
    /// Re-run the experiment spec saved in a result directory and compare outputs byte for byte.
    ReplayCheck {
        /// Directory written by an earlier `run` or `sweep`.
        dir: PathBuf,
    },
    /// Print a summary of a model checkpoint.
    InspectModel { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Predictive,
    Reactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Greedy,
    Conservative,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SpecArgs {
    /// Spec file; defaults apply to anything it leaves out.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds; `a-b` expands to the inclusive range.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<SeedList>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub threshold_mbps: Option<f64>,
    #[arg(long)]
    pub interarrival_s: Option<f64>,
    #[arg(long)]
    pub slots: Option<u64>,
    #[arg(long)]
    pub warm_up_slots: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_in: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

pub fn parse_seeds(s: &str) -> std::result::Result<SeedList, String> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        match item.split_once('-') {
            Some((lo, hi)) => {
                let lo: u64 = lo.trim().parse().map_err(|e| format!("seed range `{item}`: {e}"))?;
                let hi: u64 = hi.trim().parse().map_err(|e| format!("seed range `{item}`: {e}"))?;
                if lo > hi {
                    return Err(format!("seed range `{item}` is empty"));
                }
                out.extend(lo..=hi);
            }
            None => out.push(item.parse().map_err(|e| format!("seed `{item}`: {e}"))?),
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(SeedList(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Run,
    Sweep,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    command: Option<CommandKind>,
    #[serde(default)]
    seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint_in: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint_out: Option<PathBuf>,
}

/// Everything needed to reproduce a batch of results.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub command: CommandKind,
    pub config: SimConfig,
    pub seeds: Vec<u64>,
    /// Sorted by key.
    pub sweep: Vec<SweepAxis>,
    pub out_dir: PathBuf,
    pub checkpoint_in: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn to_toml(&self) -> String {
        let mut root = match toml::Value::try_from(&self.config).expect("config serialises") {
            toml::Value::Table(t) => t,
            _ => unreachable!("config is a table"),
        };
        let exp = ExperimentSection {
            command: Some(self.command),
            seeds: self.seeds.clone(),
            out_dir: Some(self.out_dir.clone()),
            checkpoint_in: self.checkpoint_in.clone(),
            checkpoint_out: self.checkpoint_out.clone(),
        };
        root.insert(
            "experiment".into(),
            toml::Value::try_from(&exp).expect("experiment section serialises"),
        );
        let sweep: toml::Table = self
            .sweep
            .iter()
            .map(|a| (a.key.clone(), toml::Value::Array(a.values.clone())))
            .collect();
        root.insert("sweep".into(), toml::Value::Table(sweep));
        toml::to_string(&root).expect("spec serialises")
    }

    /// Cells this experiment expands to.
    pub fn cell_count(&self) -> usize {
        self.sweep.iter().map(|a| a.values.len()).product::<usize>() * self.seeds.len()
    }

    /// Where `run` stores the trained model, if anywhere.
    pub fn checkpoint_path(&self) -> Option<PathBuf> {
        match (&self.checkpoint_out, self.command) {
            (Some(p), _) => Some(p.clone()),
            (None, CommandKind::Run) => Some(self.out_dir.join(DEFAULT_CHECKPOINT)),
            (None, CommandKind::Sweep) => None,
        }
    }
}

/// Reads an optional spec file and applies flag overrides on top.
pub fn parse_config(command: CommandKind, file: Option<&Path>, args: &SpecArgs) -> Result<ExperimentSpec> {
    let text = match file {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    parse_config_str(command, &text, args)
}

pub fn parse_config_str(command: CommandKind, text: &str, args: &SpecArgs) -> Result<ExperimentSpec> {
    let mut root: toml::Table = toml::from_str(text).context("spec file is not valid TOML")?;
    let exp: ExperimentSection = match root.remove("experiment") {
        Some(v) => v.try_into().map_err(|e| anyhow!("[experiment]: {e}"))?,
        None => ExperimentSection::default(),
    };
    let sweep_table = match root.remove("sweep") {
        Some(toml::Value::Table(t)) => t,
        Some(_) => bail!("[sweep] must be a table of `key = [values]`"),
        None => toml::Table::new(),
    };
    let mut config: SimConfig = serde_path_to_error::deserialize(toml::Value::Table(root)).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("`{path}`: {}", e.into_inner().message())
    })?;

    let p = &mut config.policy;
    if let Some(k) = args.policy {
        p.kind = match k {
            PolicyArg::Predictive => PolicyFamily::Predictive,
            PolicyArg::Reactive => PolicyFamily::Reactive,
        };
    }
    if let Some(m) = args.mode {
        p.mode = match m {
            ModeArg::Greedy => Mode::Greedy,
            ModeArg::Conservative => Mode::Conservative,
        };
    }
    if let Some(t) = args.threshold_mbps {
        p.threshold_mbps = t;
    }
    if let Some(v) = args.interarrival_s {
        config.scenario.interarrival_mean_s = v;
    }
    if let Some(v) = args.slots {
        config.engine.total_slots = v;
    }
    if let Some(v) = args.warm_up_slots {
        config.engine.warm_up_slots = v;
    }

    let seeds = match (args.seed, &args.seeds) {
        (Some(s), _) => vec![s],
        (None, Some(list)) => list.0.clone(),
        (None, None) if !exp.seeds.is_empty() => exp.seeds.clone(),
        (None, None) => vec![config.engine.seed],
    };
    config.engine.seed = seeds[0];
    config.validate()?;

    let mut sweep = Vec::new();
    for (key, values) in sweep_table {
        let values = match values {
            toml::Value::Array(v) if !v.is_empty() => v,
            _ => bail!("sweep axis `{key}` needs a non-empty list of values"),
        };
        if key == "engine.seed" {
            bail!("sweep axis `{key}`: list seeds under [experiment] seeds instead");
        }
        for v in &values {
            apply_override(&config, &key, v.clone())?;
        }
        sweep.push(SweepAxis { key, values });
    }

    let checkpoint_in = match args.checkpoint_in.clone().or(exp.checkpoint_in) {
        Some(p) => Some(fs::canonicalize(&p).with_context(|| format!("checkpoint_in {} not found", p.display()))?),
        None => None,
    };
    let spec = ExperimentSpec {
        command,
        config,
        seeds,
        sweep,
        out_dir: args
            .out_dir
            .clone()
            .or(exp.out_dir)
            .unwrap_or_else(|| PathBuf::from("results")),
        checkpoint_in,
        checkpoint_out: args.checkpoint_out.clone().or(exp.checkpoint_out),
    };
    if command == CommandKind::Run {
        if spec.seeds.len() != 1 {
            bail!("`run` takes a single seed; use `sweep` for {} seeds", spec.seeds.len());
        }
        if !spec.sweep.is_empty() {
            bail!("`run` does not expand [sweep]; use `sweep`");
        }
    }
    Ok(spec)
}

fn load_carried(spec: &ExperimentSpec) -> Result<Option<Checkpoint>> {
    spec.checkpoint_in
        .as_deref()
        .map(|p| Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display())))
        .transpose()
}

fn summary_line(label: &str, s: &RunSummary) -> String {
    let mae = s.final_mae_db.map_or("n/a".to_string(), |m| format!("{m:.3} dB"));
    format!(
        "{label}: mean throughput {:.1} Mbps, {} handovers, final forecast MAE {mae}",
        s.mean_throughput_mbps, s.total_handovers
    )
}

/// Single simulation. Returns a one-line human summary.
pub fn execute_run(spec: &ExperimentSpec) -> Result<String> {
    fs::create_dir_all(&spec.out_dir).with_context(|| format!("creating {}", spec.out_dir.display()))?;
    fs::write(spec.out_dir.join(RESOLVED_FILE), spec.to_toml())?;
    let cfg = &spec.config;
    let out = run_simulation(cfg, load_carried(spec)?)?;
    let summary = RunSummary::from_metrics(&out.metrics, cfg);

    write_metrics_csv(&spec.out_dir.join("metrics.csv"), &out.metrics)?;
    fs::write(spec.out_dir.join("scenario.toml"), out.scenario.to_toml())?;
    if cfg.engine.record_tuples {
        let run_id = format!("{}_seed={}", cfg.policy.policy().variant, cfg.engine.seed);
        write_tuples_csv(
            &spec.out_dir.join("tuples.csv"),
            &run_id,
            cfg.scenario.num_aps,
            &out.tuples,
        )?;
    }
    if let (Some(path), Some(ck)) = (spec.checkpoint_path(), &out.checkpoint) {
        ck.save(&path).with_context(|| format!("writing {}", path.display()))?;
    }
    let label = format!("{} seed {}", cfg.policy.policy().variant, cfg.engine.seed);
    let cell = CellResult {
        point: Vec::new(),
        seed: cfg.engine.seed,
        config: cfg.clone(),
        outcome: Ok((summary.clone(), out)),
    };
    let cells = [cell];
    write_summary_csv(&spec.out_dir.join("summary.csv"), &[], &cells)?;
    write_aggregate_csv(&spec.out_dir.join("aggregate.csv"), &[], &cells)?;
    Ok(summary_line(&label, &summary))
}

/// Full grid. Returns one summary line per cell; failed cells are listed,
/// not fatal.
pub fn execute_sweep(spec: &ExperimentSpec) -> Result<Vec<String>> {
    fs::create_dir_all(&spec.out_dir).with_context(|| format!("creating {}", spec.out_dir.display()))?;
    fs::write(spec.out_dir.join(RESOLVED_FILE), spec.to_toml())?;
    let carried = load_carried(spec)?;
    let cells = run_experiment(&spec.config, &spec.seeds, &spec.sweep, carried.as_ref())?;

    let cell_dir = spec.out_dir.join("cells");
    let mut lines = Vec::with_capacity(cells.len());
    let mut last_model = None;
    for cell in &cells {
        let label = cell.label();
        match &cell.outcome {
            Ok((summary, out)) => {
                let dir = cell_dir.join(&label);
                fs::create_dir_all(&dir)?;
                write_metrics_csv(&dir.join("metrics.csv"), &out.metrics)?;
                if cell.config.engine.record_tuples {
                    write_tuples_csv(
                        &dir.join("tuples.csv"),
                        &label,
                        cell.config.scenario.num_aps,
                        &out.tuples,
                    )?;
                }
                if cell.seed == spec.seeds[0] && out.checkpoint.is_some() {
                    last_model = out.checkpoint.as_ref();
                }
                lines.push(summary_line(&label, summary));
            }
            Err(e) => lines.push(format!("{label}: FAILED: {e}")),
        }
    }
    write_summary_csv(&spec.out_dir.join("summary.csv"), &spec.sweep, &cells)?;
    write_aggregate_csv(&spec.out_dir.join("aggregate.csv"), &spec.sweep, &cells)?;
    if let (Some(path), Some(ck)) = (spec.checkpoint_path(), last_model) {
        ck.save(&path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(lines)
}

fn collect_outputs(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_outputs(root, &path, out)?;
        } else if matches!(path.extension().and_then(|e| e.to_str()), Some("csv" | "ckpt")) {
            let rel = path.strip_prefix(root).expect("inside root").to_path_buf();
            out.insert(rel, path);
        }
    }
    Ok(())
}

/// Re-executes `dir/resolved.toml` into `scratch` and lists every CSV or
/// checkpoint whose bytes differ, or that exists on only one side.
pub fn replay_check(dir: &Path, scratch: &Path) -> Result<Vec<String>> {
    let resolved = dir.join(RESOLVED_FILE);
    let text = fs::read_to_string(&resolved).with_context(|| format!("reading {}", resolved.display()))?;
    let root: toml::Table = toml::from_str(&text)?;
    let command = root
        .get("experiment")
        .and_then(|e| e.get("command"))
        .and_then(|c| c.as_str())
        .ok_or_else(|| anyhow!("{} does not record which command produced it", resolved.display()))?;
    let command = match command {
        "run" => CommandKind::Run,
        "sweep" => CommandKind::Sweep,
        other => bail!("unknown command `{other}` in {}", resolved.display()),
    };
    let mut spec = parse_config_str(command, &text, &SpecArgs::default())?;
    spec.out_dir = scratch.to_path_buf();
    spec.checkpoint_out = spec
        .checkpoint_out
        .as_ref()
        .map(|p| scratch.join(p.file_name().unwrap_or_else(|| DEFAULT_CHECKPOINT.as_ref())));
    match command {
        CommandKind::Run => {
            execute_run(&spec)?;
        }
        CommandKind::Sweep => {
            execute_sweep(&spec)?;
        }
    }

    let mut original = BTreeMap::new();
    collect_outputs(dir, dir, &mut original)?;
    let mut replayed = BTreeMap::new();
    collect_outputs(scratch, scratch, &mut replayed)?;
    let mut problems = Vec::new();
    for (rel, path) in &original {
        match replayed.get(rel) {
            None => problems.push(format!("{}: not produced by the replay", rel.display())),
            Some(other) => {
                if fs::read(path)? != fs::read(other)? {
                    problems.push(format!("{}: contents differ", rel.display()));
                }
            }
        }
    }
    for rel in replayed.keys().filter(|r| !original.contains_key(*r)) {
        problems.push(format!("{}: missing from {}", rel.display(), dir.display()));
    }
    Ok(problems)
}
