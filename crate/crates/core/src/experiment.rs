//! Experiment harness: configuration, seeding, the end-to-end pipeline, the
//! three sweeps, and output files.
//!
//! Everything written to `metrics.csv` and the traces is a pure function of
//! the configuration. Wall-clock timings go to `timings.csv` only.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::allocation::{
    allocate_auction, allocate_sa, compute_bids, AllocatorKind, Assignment, Bid, DEFAULT_EPSILON,
};
use crate::config::{generate_random, TargetConfig};
use crate::error::{Error, Result};
use crate::gp::{fit_hyperparameters, CandidateGrid, EntropyField, GpState, StaticEntropy};
use crate::grid::{encode_pgm, generate_field, Cell, GridMap};
use crate::planner::eps_search_traced;
use crate::sim::{ActingParams, ActingReport, SimWorld};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocatorChoice {
    Sa,
    Auction,
    Both,
}

impl AllocatorChoice {
    pub fn kinds(self) -> Vec<AllocatorKind> {
        match self {
            AllocatorChoice::Sa => vec![AllocatorKind::Sequential],
            AllocatorChoice::Auction => vec![AllocatorKind::Auction],
            AllocatorChoice::Both => vec![AllocatorKind::Sequential, AllocatorKind::Auction],
        }
    }
}

impl fmt::Display for AllocatorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AllocatorChoice::Sa => "sa",
            AllocatorChoice::Auction => "auction",
            AllocatorChoice::Both => "both",
        })
    }
}

impl FromStr for AllocatorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sa" => Ok(AllocatorChoice::Sa),
            "auction" => Ok(AllocatorChoice::Auction),
            "both" => Ok(AllocatorChoice::Both),
            other => Err(Error::Parse(format!(
                "unknown allocator {other:?} (expected sa, auction or both)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub field_low: f64,
    pub field_high: f64,
    pub modules: usize,
    pub spots: usize,
    pub budget: usize,
    /// `None` resolves to half the budget.
    pub replan_interval: Option<usize>,
    pub allocator: AllocatorChoice,
    pub repetitions: usize,
    pub training_fraction: f64,
    /// Whether the training cells also condition the initial belief, or only
    /// feed the hyperparameter fit.
    pub condition_on_training: bool,
    pub auction_epsilon: f64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 30,
            height: 30,
            field_low: 1.0,
            field_high: 10.0,
            modules: 10,
            spots: 10,
            budget: 45,
            replan_interval: None,
            allocator: AllocatorChoice::Sa,
            repetitions: 5,
            training_fraction: 0.4,
            condition_on_training: CONDITION_ON_TRAINING_DEFAULT,
            auction_epsilon: DEFAULT_EPSILON,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad value {value:?} for {key}")))
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 15] = [
        "seed",
        "width",
        "height",
        "field_low",
        "field_high",
        "modules",
        "spots",
        "budget",
        "replan_interval",
        "allocator",
        "repetitions",
        "training_fraction",
        "condition_on_training",
        "auction_epsilon",
        "output_dir",
    ];

    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are skipped. A file that sets `modules` but not `spots` gets
    /// one spot per module. The result is not validated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
            seen.push(key.trim().to_string());
        }
        if seen.iter().any(|k| k == "modules") && !seen.iter().any(|k| k == "spots") {
            cfg.spots = cfg.modules;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "width" => self.width = parse_value(key, value)?,
            "height" => self.height = parse_value(key, value)?,
            "field_low" => self.field_low = parse_value(key, value)?,
            "field_high" => self.field_high = parse_value(key, value)?,
            "modules" => self.modules = parse_value(key, value)?,
            "spots" => self.spots = parse_value(key, value)?,
            "budget" => self.budget = parse_value(key, value)?,
            "replan_interval" => self.replan_interval = Some(parse_value(key, value)?),
            "allocator" => self.allocator = value.parse()?,
            "repetitions" => self.repetitions = parse_value(key, value)?,
            "training_fraction" => self.training_fraction = parse_value(key, value)?,
            "condition_on_training" => self.condition_on_training = parse_value(key, value)?,
            "auction_epsilon" => self.auction_epsilon = parse_value(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            other => return Err(Error::Parse(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn replan_interval(&self) -> usize {
        self.replan_interval.unwrap_or((self.budget / 2).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.width == 0 || self.height == 0 {
            return bad("grid dimensions must be positive".into());
        }
        if self.field_low.partial_cmp(&self.field_high) != Some(std::cmp::Ordering::Less) {
            return bad(format!(
                "field range [{}, {}] is empty",
                self.field_low, self.field_high
            ));
        }
        if self.spots == 0 {
            return bad("need at least one spot".into());
        }
        if self.modules < self.spots {
            return bad(format!(
                "{} modules cannot fill {} spots",
                self.modules, self.spots
            ));
        }
        if self.modules + self.spots > self.width * self.height {
            return bad("modules and spots do not fit on the grid".into());
        }
        if self.budget == 0 {
            return bad("budget must be at least 1".into());
        }
        let o = self.replan_interval();
        if o == 0 || o > self.budget {
            return bad(format!("replan interval {o} outside [1, {}]", self.budget));
        }
        if self.repetitions == 0 {
            return bad("need at least one repetition".into());
        }
        if !(self.training_fraction > 0.0 && self.training_fraction < 1.0) {
            return bad(format!(
                "training fraction {} outside (0, 1)",
                self.training_fraction
            ));
        }
        if !(self.auction_epsilon > 0.0) || !self.auction_epsilon.is_finite() {
            return bad("auction epsilon must be positive".into());
        }
        Ok(())
    }

    /// Fully resolved `key = value` text; parsing it back yields the same run.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "width = {}", self.width);
        let _ = writeln!(out, "height = {}", self.height);
        let _ = writeln!(out, "field_low = {}", self.field_low);
        let _ = writeln!(out, "field_high = {}", self.field_high);
        let _ = writeln!(out, "modules = {}", self.modules);
        let _ = writeln!(out, "spots = {}", self.spots);
        let _ = writeln!(out, "budget = {}", self.budget);
        let _ = writeln!(out, "replan_interval = {}", self.replan_interval());
        let _ = writeln!(out, "allocator = {}", self.allocator);
        let _ = writeln!(out, "repetitions = {}", self.repetitions);
        let _ = writeln!(out, "training_fraction = {}", self.training_fraction);
        let _ = writeln!(
            out,
            "condition_on_training = {}",
            self.condition_on_training
        );
        let _ = writeln!(out, "auction_epsilon = {}", self.auction_epsilon);
        let _ = writeln!(out, "output_dir = {}", self.output_dir.display());
        out
    }
}

pub const CONDITION_ON_TRAINING_DEFAULT: bool = true;

/// Independent random streams of one repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Field = 1,
    Config = 2,
    Starts = 3,
    Training = 4,
    Fit = 5,
    Allocation = 6,
    Acting = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, run: usize, stream: Stream) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(run as u64)) ^ stream as u64)
}

/// Everything the planning phase of one repetition starts from.
#[derive(Debug, Clone)]
pub struct Instance {
    pub run: usize,
    pub map: GridMap,
    pub config: TargetConfig,
    pub starts: Vec<Cell>,
    pub training: Vec<(Cell, f64)>,
    pub gp: GpState,
}

fn sample_cells(cells: &[Cell], k: usize, seed: u64) -> Vec<Cell> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, cells.len(), k.min(cells.len()))
        .into_iter()
        .map(|i| cells[i])
        .collect()
}

/// Draws `fraction` of the grid as training data, avoiding `reserved`, and
/// fits the hyperparameters on it. The returned GP is conditioned on the
/// training data only if `condition` is set.
pub fn learn_belief(
    map: &GridMap,
    fraction: f64,
    condition: bool,
    reserved: &[Cell],
    training_seed: u64,
    fit_seed: u64,
) -> Result<(Vec<(Cell, f64)>, GpState)> {
    let pool: Vec<Cell> = map
        .cells()
        .filter(|c| !map.is_obstacle(*c) && !reserved.contains(c))
        .collect();
    let want = (fraction * map.len() as f64).round() as usize;
    let mut cells = sample_cells(&pool, want.max(2), training_seed);
    cells.sort();
    let training: Vec<(Cell, f64)> = cells.into_iter().map(|c| (c, map.value(c))).collect();
    let n = training.len() as f64;
    let mean = training.iter().map(|t| t.1).sum::<f64>() / n;
    let var = training.iter().map(|t| (t.1 - mean).powi(2)).sum::<f64>() / n;
    let hp = fit_hyperparameters(
        &training,
        &CandidateGrid::scaled_default(var.max(1e-6)),
        fit_seed,
    )?;
    let gp = if condition {
        GpState::with_observations(hp, &training)?
    } else {
        GpState::new(hp)?
    };
    Ok((training, gp))
}

pub fn build_instance(cfg: &ExperimentConfig, run: usize) -> Result<Instance> {
    let s = |stream| derive_seed(cfg.seed, run, stream);
    let map = generate_field(
        s(Stream::Field),
        cfg.width,
        cfg.height,
        cfg.field_low,
        cfg.field_high,
    )?;
    let config = generate_random(s(Stream::Config), cfg.spots, &map)?;
    let spot_cells = config.cells();
    let free: Vec<Cell> = map
        .cells()
        .filter(|c| !map.is_obstacle(*c) && !spot_cells.contains(c))
        .collect();
    if free.len() < cfg.modules {
        return Err(Error::InvalidArgument(
            "not enough free cells for module starts".into(),
        ));
    }
    let starts = sample_cells(&free, cfg.modules, s(Stream::Starts));
    let reserved: Vec<Cell> = starts.iter().chain(&spot_cells).copied().collect();
    let (training, gp) = learn_belief(
        &map,
        cfg.training_fraction,
        cfg.condition_on_training,
        &reserved,
        s(Stream::Training),
        s(Stream::Fit),
    )?;
    Ok(Instance {
        run,
        map,
        config,
        starts,
        training,
        gp,
    })
}

#[derive(Debug, Clone)]
pub struct Planning {
    /// `bids[module][spot]`.
    pub bids: Vec<Vec<Bid>>,
    pub eps_calls: usize,
    pub expansions: usize,
    /// Bids that fell back to a shortest path.
    pub fallbacks: usize,
    pub elapsed: Duration,
}

impl Planning {
    pub fn mean_expansions(&self) -> f64 {
        if self.eps_calls == 0 {
            0.0
        } else {
            self.expansions as f64 / self.eps_calls as f64
        }
    }
}

/// Every module bids on every spot against the planning-time belief. Other
/// modules' start cells are blocked.
pub fn plan_bids(inst: &Instance, budget: usize) -> Result<Planning> {
    let started = Instant::now();
    let entropy = StaticEntropy::new(
        inst.map.width(),
        EntropyField::new(&inst.gp, &inst.map).to_vec(),
    );
    let mut bids = Vec::with_capacity(inst.starts.len());
    for (m, &start) in inst.starts.iter().enumerate() {
        let blocked = inst
            .starts
            .iter()
            .copied()
            .filter(|&c| c != start)
            .collect();
        bids.push(compute_bids(
            m,
            start,
            &inst.config,
            budget,
            &entropy,
            &inst.map,
            &blocked,
        )?);
    }
    let all = bids.iter().flatten();
    let searched: Vec<&Bid> = all
        .filter(|b| b.expansions > 0 || b.path.is_some() || b.fallback_path.is_some())
        .collect();
    Ok(Planning {
        eps_calls: searched.len(),
        expansions: searched.iter().map(|b| b.expansions).sum(),
        fallbacks: searched
            .iter()
            .filter(|b| b.fallback_path.is_some())
            .count(),
        bids,
        elapsed: started.elapsed(),
    })
}

pub fn allocate(
    kind: AllocatorKind,
    planning: &Planning,
    spots: usize,
    epsilon: f64,
    seed: u64,
) -> Result<Assignment> {
    match kind {
        AllocatorKind::Sequential => allocate_sa(&planning.bids, spots, seed),
        AllocatorKind::Auction => allocate_auction(&planning.bids, spots, epsilon, seed),
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub run: usize,
    pub allocator: AllocatorKind,
    pub modules: usize,
    pub spots: usize,
    pub budget: usize,
    pub replan_interval: usize,
    pub eps_calls: usize,
    pub mean_expansions: f64,
    pub fallbacks: usize,
    pub over_budget: usize,
    pub broadcast_messages: usize,
    pub allocation_messages: usize,
    pub acting_messages: usize,
    pub estimated_informativeness: f64,
    pub collected_information: f64,
    pub replans: usize,
    pub replans_accepted: usize,
    pub acting_steps: usize,
    pub max_path_cost: usize,
    pub no_hole: bool,
    pub injective: bool,
    pub planning_time: Duration,
    pub acting_time: Duration,
}

impl RunMetrics {
    pub const CSV_HEADER: &'static str = "run,allocator,modules,spots,budget,replan_interval,eps_calls,\
mean_expansions,fallbacks,over_budget,broadcast_messages,allocation_messages,acting_messages,total_messages,\
estimated_informativeness,collected_information,replans,replans_accepted,replans_rejected,acting_steps,\
max_path_cost,no_hole,injective,within_budget";

    pub fn run_id(&self) -> String {
        format!("{}-{}", self.run, self.allocator)
    }

    pub fn planning_messages(&self) -> usize {
        self.broadcast_messages + self.allocation_messages
    }

    pub fn total_messages(&self) -> usize {
        self.planning_messages() + self.acting_messages
    }

    pub fn within_budget(&self) -> bool {
        self.max_path_cost <= self.budget
    }

    pub fn passed(&self) -> bool {
        self.no_hole && self.injective && self.within_budget()
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.6},{},{},{},{},{},{},{:.6},{:.6},{},{},{},{},{},{},{},{}",
            self.run,
            self.allocator,
            self.modules,
            self.spots,
            self.budget,
            self.replan_interval,
            self.eps_calls,
            self.mean_expansions,
            self.fallbacks,
            self.over_budget,
            self.broadcast_messages,
            self.allocation_messages,
            self.acting_messages,
            self.total_messages(),
            self.estimated_informativeness,
            self.collected_information,
            self.replans,
            self.replans_accepted,
            self.replans - self.replans_accepted,
            self.acting_steps,
            self.max_path_cost,
            self.no_hole,
            self.injective,
            self.within_budget(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunFailure {
    pub run_id: String,
    pub error: Error,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub metrics: Vec<RunMetrics>,
    /// `(run id, JSONL)` per acting run, including a failed one.
    pub traces: Vec<(String, String)>,
    /// `(run id, PGM)` of the final entropy map per acting run.
    pub grids: Vec<(String, Vec<u8>)>,
    pub failure: Option<RunFailure>,
}

impl ExperimentOutput {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.metrics.iter().all(RunMetrics::passed)
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(RunMetrics::CSV_HEADER);
        out.push('\n');
        for m in &self.metrics {
            out.push_str(&m.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("run,allocator,planning_ms,acting_ms\n");
        for m in &self.metrics {
            let _ = writeln!(
                out,
                "{},{},{:.3},{:.3}",
                m.run,
                m.allocator,
                m.planning_time.as_secs_f64() * 1e3,
                m.acting_time.as_secs_f64() * 1e3
            );
        }
        out
    }
}

fn entropy_pgm(gp: &GpState, map: &GridMap) -> Result<Vec<u8>> {
    encode_pgm(
        &EntropyField::new(gp, map).to_vec(),
        map.width(),
        map.height(),
    )
}

/// Runs the acting phase for one assignment. On failure the partial trace is
/// still pushed to `output`.
fn act(
    inst: &Instance,
    assignment: &Assignment,
    params: ActingParams,
    run_id: &str,
    output: &mut ExperimentOutput,
) -> std::result::Result<(SimWorld, ActingReport), Error> {
    let mut world = SimWorld::new(
        inst.map.clone(),
        inst.gp.clone(),
        &inst.config,
        &inst.starts,
        assignment,
        params,
    )?;
    let result = world.run_to_end();
    output
        .traces
        .push((run_id.to_string(), world.trace_jsonl()));
    let report = result?;
    output
        .grids
        .push((run_id.to_string(), entropy_pgm(world.gp(), &inst.map)?));
    Ok((world, report))
}

/// Full pipeline for every repetition and allocator. Stops at the first
/// acting error and reports it in [`ExperimentOutput::failure`].
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut output = ExperimentOutput::default();
    let params_for = |run| ActingParams {
        budget: cfg.budget,
        replan_interval: cfg.replan_interval(),
        seed: derive_seed(cfg.seed, run, Stream::Acting),
    };
    for run in 0..cfg.repetitions {
        let inst = build_instance(cfg, run)?;
        let planning = plan_bids(&inst, cfg.budget)?;
        for kind in cfg.allocator.kinds() {
            let alloc_seed = derive_seed(cfg.seed, run, Stream::Allocation);
            let assignment = allocate(kind, &planning, cfg.spots, cfg.auction_epsilon, alloc_seed)?;
            let run_id = format!("{run}-{kind}");
            let (world, report) =
                match act(&inst, &assignment, params_for(run), &run_id, &mut output) {
                    Ok(done) => done,
                    Err(error) => {
                        output.failure = Some(RunFailure { run_id, error });
                        return Ok(output);
                    }
                };
            let n = cfg.modules;
            output.metrics.push(RunMetrics {
                run,
                allocator: kind,
                modules: n,
                spots: cfg.spots,
                budget: cfg.budget,
                replan_interval: cfg.replan_interval(),
                eps_calls: planning.eps_calls,
                mean_expansions: planning.mean_expansions(),
                fallbacks: planning.fallbacks,
                over_budget: assignment.over_budget_count(),
                broadcast_messages: n * (n - 1),
                allocation_messages: assignment.messages,
                acting_messages: report.messages,
                estimated_informativeness: assignment.total_informativeness(),
                collected_information: report.total_collected,
                replans: report.replans,
                replans_accepted: report.replans_accepted,
                acting_steps: report.steps,
                max_path_cost: report.max_cost(),
                no_hole: world.check_no_hole(&inst.config),
                injective: assignment.is_injective() && assignment.is_total(cfg.spots),
                planning_time: planning.elapsed + assignment.elapsed,
                acting_time: report.wall_time,
            });
        }
    }
    Ok(output)
}

/// Writes `config-echo.txt`, `metrics.csv`, `timings.csv`, and the per-run
/// traces and entropy maps into `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, output: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config-echo.txt"), cfg.to_text())?;
    fs::write(dir.join("metrics.csv"), output.metrics_csv())?;
    fs::write(dir.join("timings.csv"), output.timings_csv())?;
    for (id, jsonl) in &output.traces {
        fs::write(dir.join(format!("trace-{id}.jsonl")), jsonl)?;
    }
    for (id, pgm) in &output.grids {
        fs::write(dir.join(format!("grid-{id}.pgm")), pgm)?;
    }
    Ok(())
}

/// Fixed endpoints for the budget sweep: `distance` apart along the diagonal,
/// centred on the grid.
pub fn probe_endpoints(width: usize, height: usize, distance: usize) -> Result<(Cell, Cell)> {
    let dx = (distance / 2).min(width - 1);
    let dy = (distance - dx).min(height - 1);
    if dx + dy != distance || distance == 0 {
        return Err(Error::InvalidArgument(format!(
            "no endpoints {distance} apart on a {width}x{height} grid"
        )));
    }
    let x0 = (width - 1 - dx) / 2;
    let y0 = (height - 1 - dy) / 2;
    Ok((Cell::new(x0, y0), Cell::new(x0 + dx, y0 + dy)))
}

/// Manhattan distance between the budget-sweep endpoints on the default grid.
pub const PROBE_DISTANCE: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetRow {
    pub budget: usize,
    pub mean_expansions: f64,
    pub mean_runtime: Duration,
    /// Repetitions in which the search returned a path.
    pub found: usize,
    pub samples: usize,
    pub expansions: Vec<usize>,
}

/// Expansions and runtime of a single fixed start/goal search per budget,
/// one belief per repetition.
pub fn sweep_budget(cfg: &ExperimentConfig, budgets: &[usize]) -> Result<Vec<BudgetRow>> {
    if budgets.contains(&0) {
        return Err(Error::InvalidArgument("budgets must be at least 1".into()));
    }
    let distance = PROBE_DISTANCE.min(cfg.width + cfg.height - 2);
    let (start, goal) = probe_endpoints(cfg.width, cfg.height, distance)?;
    let mut rows: Vec<BudgetRow> = budgets
        .iter()
        .map(|&budget| BudgetRow {
            budget,
            mean_expansions: 0.0,
            mean_runtime: Duration::ZERO,
            found: 0,
            samples: 0,
            expansions: Vec::new(),
        })
        .collect();
    let none = Default::default();
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
        for row in rows.iter_mut() {
            let started = Instant::now();
            let outcome = eps_search_traced(start, goal, row.budget, &entropy, &map, &none, false)?;
            row.mean_runtime += started.elapsed();
            row.expansions.push(outcome.stats.expansions);
            row.found += usize::from(outcome.path.is_some());
            row.samples += 1;
        }
    }
    for row in rows.iter_mut() {
        row.mean_expansions = row.expansions.iter().sum::<usize>() as f64 / row.samples as f64;
        row.mean_runtime /= row.samples as u32;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocatorRow {
    pub n: usize,
    pub info_sa: f64,
    pub info_auction: f64,
    pub messages_sa: f64,
    pub messages_auction: f64,
    pub time_sa: Duration,
    pub time_auction: Duration,
    /// Every assignment was injective and total.
    pub valid: bool,
}

impl AllocatorRow {
    pub fn relative_gap(&self) -> f64 {
        (self.info_sa - self.info_auction).abs() / self.info_auction.abs()
    }
}

/// Planning-phase comparison of the two allocators on shared bids, averaged
/// over the repetitions, for each team size in `sizes`.
pub fn compare_allocators(cfg: &ExperimentConfig, sizes: &[usize]) -> Result<Vec<AllocatorRow>> {
    let mut rows = Vec::new();
    for &n in sizes {
        let mut c = cfg.clone();
        c.modules = n;
        c.spots = n;
        c.validate()?;
        let mut row = AllocatorRow {
            n,
            info_sa: 0.0,
            info_auction: 0.0,
            messages_sa: 0.0,
            messages_auction: 0.0,
            time_sa: Duration::ZERO,
            time_auction: Duration::ZERO,
            valid: true,
        };
        for run in 0..c.repetitions {
            let inst = build_instance(&c, run)?;
            let planning = plan_bids(&inst, c.budget)?;
            let seed = derive_seed(c.seed, run, Stream::Allocation);
            let sa = allocate(
                AllocatorKind::Sequential,
                &planning,
                n,
                c.auction_epsilon,
                seed,
            )?;
            let au = allocate(
                AllocatorKind::Auction,
                &planning,
                n,
                c.auction_epsilon,
                seed,
            )?;
            row.info_sa += sa.total_informativeness();
            row.info_auction += au.total_informativeness();
            row.messages_sa += sa.messages as f64;
            row.messages_auction += au.messages as f64;
            row.time_sa += planning.elapsed + sa.elapsed;
            row.time_auction += planning.elapsed + au.elapsed;
            row.valid &= sa.is_injective() && sa.is_total(n) && au.is_injective() && au.is_total(n);
        }
        let reps = c.repetitions as f64;
        row.info_sa /= reps;
        row.info_auction /= reps;
        row.messages_sa /= reps;
        row.messages_auction /= reps;
        row.time_sa /= c.repetitions as u32;
        row.time_auction /= c.repetitions as u32;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplanRow {
    pub interval: usize,
    pub mean_collected: f64,
    pub mean_runtime: Duration,
    pub mean_replans: f64,
    pub max_replans: usize,
    pub runs: usize,
}

/// Single-module runs, one instance per repetition, replayed with each
/// replan interval.
pub fn sweep_replan(cfg: &ExperimentConfig, intervals: &[usize]) -> Result<Vec<ReplanRow>> {
    let mut c = cfg.clone();
    c.modules = 1;
    c.spots = 1;
    c.replan_interval = None;
    c.validate()?;
    if intervals.iter().any(|&o| o == 0 || o > c.budget) {
        return Err(Error::InvalidArgument(format!(
            "replan intervals must lie in [1, {}]",
            c.budget
        )));
    }
    let mut rows: Vec<ReplanRow> = intervals
        .iter()
        .map(|&interval| ReplanRow {
            interval,
            mean_collected: 0.0,
            mean_runtime: Duration::ZERO,
            mean_replans: 0.0,
            max_replans: 0,
            runs: 0,
        })
        .collect();
    for run in 0..c.repetitions {
        let inst = build_instance(&c, run)?;
        let planning = plan_bids(&inst, c.budget)?;
        let assignment = allocate_sa(
            &planning.bids,
            1,
            derive_seed(c.seed, run, Stream::Allocation),
        )?;
        for row in rows.iter_mut() {
            let params = ActingParams {
                budget: c.budget,
                replan_interval: row.interval,
                seed: derive_seed(c.seed, run, Stream::Acting),
            };
            let world = SimWorld::new(
                inst.map.clone(),
                inst.gp.clone(),
                &inst.config,
                &inst.starts,
                &assignment,
                params,
            )?;
            let (_, report) = world.run()?;
            row.mean_collected += report.total_collected;
            row.mean_runtime += report.wall_time;
            row.mean_replans += report.replans as f64;
            row.max_replans = row.max_replans.max(report.replans);
            row.runs += 1;
        }
    }
    for row in rows.iter_mut() {
        row.mean_collected /= row.runs as f64;
        row.mean_replans /= row.runs as f64;
        row.mean_runtime /= row.runs as u32;
    }
    Ok(rows)
}
