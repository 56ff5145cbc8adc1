use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use confplan::experiment::{
    self, compare_allocators, derive_seed, learn_belief, probe_endpoints, sweep_budget,
    sweep_replan, write_outputs, AllocatorChoice, ExperimentConfig, Stream, PROBE_DISTANCE,
};
use confplan::grid::{generate_field, render_ascii, AsciiLayers};
use confplan::planner::eps_search_traced;
use confplan::{Cell, EntropyField, GridMap, StaticEntropy};

#[derive(Parser)]
#[command(
    name = "confplan",
    version,
    about = "Informative path planning for modular robot reconfiguration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full planning and acting pipeline, repeated `--reps` times.
    Run(Common),
    /// Expansions of a fixed start/goal search as the budget grows.
    SweepBudget {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "45,50,55")]
        budgets: Vec<usize>,
        /// Also write one JSONL expansion trace per budget and repetition.
        #[arg(long)]
        eps_trace: bool,
    },
    /// Sequential allocation against the auction baseline on shared bids.
    CompareAlloc {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "10,20")]
        sizes: Vec<usize>,
    },
    /// Single-module runs over several replan intervals (default B/2, B/5, B/10).
    SweepReplan {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        intervals: Vec<usize>,
    },
    /// Summarise an acting or search trace and draw it on the grid.
    ShowTrace {
        trace: PathBuf,
        #[arg(long, default_value_t = 30)]
        width: usize,
        #[arg(long, default_value_t = 30)]
        height: usize,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// `key = value` file applied before the other flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    replan_interval: Option<usize>,
    /// Also sets `--spots` unless that is given.
    #[arg(long)]
    modules: Option<usize>,
    #[arg(long)]
    spots: Option<usize>,
    #[arg(long)]
    allocator: Option<AllocatorChoice>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.reps {
            cfg.repetitions = v;
        }
        if let Some(v) = self.budget {
            cfg.budget = v;
        }
        if let Some(v) = self.replan_interval {
            cfg.replan_interval = Some(v);
        }
        if let Some(v) = self.modules {
            cfg.modules = v;
            cfg.spots = self.spots.unwrap_or(v);
        } else if let Some(v) = self.spots {
            cfg.spots = v;
        }
        if let Some(v) = self.allocator {
            cfg.allocator = v;
        }
        Ok(cfg)
    }
}

fn check(label: &str, ok: bool, failures: &mut Vec<String>) {
    println!("check {label}: {}", if ok { "ok" } else { "FAILED" });
    if !ok {
        failures.push(label.to_string());
    }
}

fn run(common: &Common) -> Result<Vec<String>> {
    let cfg = common.resolve()?;
    let out = experiment::run(&cfg)?;
    write_outputs(&cfg, &out, &cfg.output_dir)?;
    println!(
        "{:<12} {:>10} {:>10} {:>9} {:>8} {:>8}",
        "run", "estimated", "collected", "messages", "replans", "no_hole"
    );
    for m in &out.metrics {
        println!(
            "{:<12} {:>10.3e} {:>10.2} {:>9} {:>8} {:>8}",
            m.run_id(),
            m.estimated_informativeness,
            m.collected_information,
            m.total_messages(),
            m.replans,
            m.no_hole
        );
    }
    println!("wrote {}", cfg.output_dir.display());
    let mut failures = Vec::new();
    if let Some(f) = &out.failure {
        eprintln!("run {} failed: {}", f.run_id, f.error);
        failures.push(format!("run {}", f.run_id));
    }
    for m in out.metrics.iter().filter(|m| !m.passed()) {
        failures.push(format!(
            "run {} (no_hole={}, injective={}, within_budget={})",
            m.run_id(),
            m.no_hole,
            m.injective,
            m.within_budget()
        ));
    }
    Ok(failures)
}

fn write_eps_traces(cfg: &ExperimentConfig, budgets: &[usize], dir: &Path) -> Result<()> {
    let distance = PROBE_DISTANCE.min(cfg.width + cfg.height - 2);
    let (start, goal) = probe_endpoints(cfg.width, cfg.height, distance)?;
    let blocked = BTreeSet::new();
    for run in 0..cfg.repetitions {
        let s = |stream| derive_seed(cfg.seed, run, stream);
        let map = generate_field(
            s(Stream::Field),
            cfg.width,
            cfg.height,
            cfg.field_low,
            cfg.field_high,
        )?;
        let (_, gp) = learn_belief(
            &map,
            cfg.training_fraction,
            cfg.condition_on_training,
            &[start, goal],
            s(Stream::Training),
            s(Stream::Fit),
        )?;
        let entropy = StaticEntropy::new(map.width(), EntropyField::new(&gp, &map).to_vec());
        for &b in budgets {
            let outcome = eps_search_traced(start, goal, b, &entropy, &map, &blocked, true)?;
            fs::write(
                dir.join(format!("eps-{run}-B{b}.jsonl")),
                outcome.trace_jsonl(),
            )?;
        }
    }
    Ok(())
}

fn sweep_budget_cmd(common: &Common, budgets: &[usize], eps_trace: bool) -> Result<Vec<String>> {
    let cfg = common.resolve()?;
    cfg.validate()?;
    let rows = sweep_budget(&cfg, budgets)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let mut csv = String::from("budget,mean_expansions,found,samples\n");
    let mut timings = String::from("budget,mean_runtime_us\n");
    println!(
        "{:>7} {:>16} {:>7} {:>14}",
        "budget", "mean_expansions", "found", "runtime_us"
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{:.3},{},{}",
            r.budget, r.mean_expansions, r.found, r.samples
        );
        let us = r.mean_runtime.as_secs_f64() * 1e6;
        let _ = writeln!(timings, "{},{:.3}", r.budget, us);
        println!(
            "{:>7} {:>16.2} {:>4}/{:<2} {:>14.1}",
            r.budget, r.mean_expansions, r.found, r.samples, us
        );
    }
    fs::write(dir.join("config-echo.txt"), cfg.to_text())?;
    fs::write(dir.join("sweep-budget.csv"), csv)?;
    fs::write(dir.join("sweep-budget-timings.csv"), timings)?;
    if eps_trace {
        write_eps_traces(&cfg, budgets, dir)?;
    }
    let mut failures = Vec::new();
    let mut sorted: Vec<_> = rows.iter().collect();
    sorted.sort_by_key(|r| r.budget);
    let monotone = sorted
        .windows(2)
        .all(|w| w[0].mean_expansions <= w[1].mean_expansions);
    check(
        "expansions non-decreasing in budget",
        monotone,
        &mut failures,
    );
    Ok(failures)
}

fn compare_cmd(common: &Common, sizes: &[usize]) -> Result<Vec<String>> {
    let mut cfg = common.resolve()?;
    cfg.allocator = AllocatorChoice::Both;
    let rows = compare_allocators(&cfg, sizes)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let mut csv =
        String::from("n,info_sa,info_auction,relative_gap,messages_sa,messages_auction,valid\n");
    let mut timings = String::from("n,planning_ms_sa,planning_ms_auction\n");
    println!(
        "{:>4} {:>12} {:>12} {:>7} {:>12} {:>14}",
        "n", "info_sa", "info_auction", "gap", "messages_sa", "messages_auction"
    );
    let mut failures = Vec::new();
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{:.6},{:.6},{:.6},{:.1},{:.1},{}",
            r.n,
            r.info_sa,
            r.info_auction,
            r.relative_gap(),
            r.messages_sa,
            r.messages_auction,
            r.valid
        );
        let _ = writeln!(
            timings,
            "{},{:.3},{:.3}",
            r.n,
            r.time_sa.as_secs_f64() * 1e3,
            r.time_auction.as_secs_f64() * 1e3
        );
        println!(
            "{:>4} {:>12.4e} {:>12.4e} {:>7.4} {:>12.1} {:>14.1}",
            r.n,
            r.info_sa,
            r.info_auction,
            r.relative_gap(),
            r.messages_sa,
            r.messages_auction
        );
        check(
            &format!("n={} assignments valid", r.n),
            r.valid,
            &mut failures,
        );
        check(
            &format!("n={} informativeness within 15%", r.n),
            r.relative_gap() <= 0.15,
            &mut failures,
        );
        check(
            &format!("n={} auction sends more messages", r.n),
            r.messages_auction > r.messages_sa,
            &mut failures,
        );
    }
    fs::write(dir.join("config-echo.txt"), cfg.to_text())?;
    fs::write(dir.join("compare-alloc.csv"), csv)?;
    fs::write(dir.join("compare-alloc-timings.csv"), timings)?;
    Ok(failures)
}

fn replan_cmd(common: &Common, intervals: &[usize]) -> Result<Vec<String>> {
    let cfg = common.resolve()?;
    let b = cfg.budget;
    let intervals = if intervals.is_empty() {
        vec![(b / 2).max(1), (b / 5).max(1), (b / 10).max(1)]
    } else {
        intervals.to_vec()
    };
    let rows = sweep_replan(&cfg, &intervals)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let mut csv = String::from("interval,mean_collected,mean_replans,max_replans,runs\n");
    let mut timings = String::from("interval,mean_acting_ms\n");
    println!(
        "{:>9} {:>15} {:>13} {:>12} {:>11}",
        "interval", "mean_collected", "mean_replans", "max_replans", "acting_ms"
    );
    let mut failures = Vec::new();
    for r in &rows {
        let ms = r.mean_runtime.as_secs_f64() * 1e3;
        let _ = writeln!(
            csv,
            "{},{:.6},{:.3},{},{}",
            r.interval, r.mean_collected, r.mean_replans, r.max_replans, r.runs
        );
        let _ = writeln!(timings, "{},{:.3}", r.interval, ms);
        println!(
            "{:>9} {:>15.4} {:>13.2} {:>12} {:>11.3}",
            r.interval, r.mean_collected, r.mean_replans, r.max_replans, ms
        );
        check(
            &format!("interval {} replans within ceil(B/O)", r.interval),
            r.max_replans <= b.div_ceil(r.interval),
            &mut failures,
        );
    }
    fs::write(dir.join("config-echo.txt"), cfg.to_text())?;
    fs::write(dir.join("sweep-replan.csv"), csv)?;
    fs::write(dir.join("sweep-replan-timings.csv"), timings)?;
    let mut sorted: Vec<_> = rows.iter().collect();
    sorted.sort_by_key(|r| r.interval);
    let direction = sorted
        .windows(2)
        .all(|w| w[0].mean_collected >= w[1].mean_collected);
    check(
        "collected information non-increasing in interval",
        direction,
        &mut failures,
    );
    Ok(failures)
}

fn cell_of(v: &Value) -> Option<Cell> {
    let pair = v.get("cell")?.as_array()?;
    Some(Cell::new(
        pair.first()?.as_u64()? as usize,
        pair.get(1)?.as_u64()? as usize,
    ))
}

/// Grid size from a `config-echo.txt` next to the trace, if present.
fn echoed_dims(trace: &Path) -> Option<(usize, usize)> {
    let echo = trace.parent()?.join("config-echo.txt");
    let cfg = ExperimentConfig::load(&echo).ok()?;
    Some((cfg.width, cfg.height))
}

fn show_trace(path: &Path, width: usize, height: usize) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let records: Vec<Value> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("line {}", i + 1)))
        .collect::<Result<_>>()?;
    let (width, height) = echoed_dims(path).unwrap_or((width, height));
    let map = GridMap::uniform(width, height, 0.0)?;
    let mut visited = BTreeSet::new();
    let mut last: BTreeMap<u64, Cell> = BTreeMap::new();

    if records.first().is_some_and(|r| r.get("hu").is_some()) {
        for r in &records {
            let c = cell_of(r).context("record without cell")?;
            if !map.contains(c) {
                bail!("cell {c} outside a {width}x{height} grid");
            }
            visited.insert(c);
        }
        println!(
            "{} expansions over {} distinct cells",
            records.len(),
            visited.len()
        );
    } else {
        let mut per_module: BTreeMap<u64, (usize, f64, usize, usize, bool)> = BTreeMap::new();
        for r in &records {
            let module = r
                .get("module")
                .and_then(Value::as_u64)
                .context("record without module")?;
            let c = cell_of(r).context("record without cell")?;
            if !map.contains(c) {
                bail!("cell {c} outside a {width}x{height} grid");
            }
            let entry = per_module.entry(module).or_default();
            match r.get("event").and_then(Value::as_str) {
                Some("move") => {
                    entry.0 += 1;
                    entry.1 += r
                        .get("entropy_collected")
                        .and_then(Value::as_f64)
                        .unwrap_or(0.0);
                    visited.insert(c);
                    last.insert(module, c);
                }
                Some("replan_accept") => {
                    entry.2 += 1;
                    entry.3 += 1;
                }
                Some("replan_reject") => entry.2 += 1,
                Some("reached") => entry.4 = true,
                other => bail!("unknown event {other:?}"),
            }
        }
        println!(
            "{:>6} {:>6} {:>10} {:>8} {:>8} {:>8}",
            "module", "steps", "collected", "replans", "accepted", "reached"
        );
        for (m, (steps, collected, replans, accepted, reached)) in &per_module {
            println!("{m:>6} {steps:>6} {collected:>10.3} {replans:>8} {accepted:>8} {reached:>8}");
        }
    }
    let occupied: BTreeSet<Cell> = last.values().copied().collect();
    print!(
        "{}",
        render_ascii(
            &map,
            &AsciiLayers {
                blocked: Some(&occupied),
                explored: Some(&visited),
                path: None,
            }
        )
    );
    Ok(Vec::new())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(common) => run(common),
        Command::SweepBudget {
            common,
            budgets,
            eps_trace,
        } => sweep_budget_cmd(common, budgets, *eps_trace),
        Command::CompareAlloc { common, sizes } => compare_cmd(common, sizes),
        Command::SweepReplan { common, intervals } => replan_cmd(common, intervals),
        Command::ShowTrace {
            trace,
            width,
            height,
        } => show_trace(trace, *width, *height),
    };
    match result {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in failures {
                eprintln!("failed: {f}");
            }
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
