//! Sequential acting phase.
//!
//! Modules move one at a time in the center-out order of their spots. The
//! active module advances one cell per step, senses it into the shared GP, and
//! every `replan_interval` cells re-runs the budgeted search from where it
//! stands with whatever budget it has left. Every other module, waiting or
//! settled, is an obstacle for the active one.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::allocation::{Assignment, ModuleId};
use crate::config::{SpotId, TargetConfig};
use crate::error::{Error, Result};
use crate::gp::{EntropyField, GpState};
use crate::grid::{render_ascii, AsciiLayers, Cell, GridMap};
use crate::planner::{eps_search, path_informativeness, shortest_path};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleStatus {
    Waiting,
    Moving,
    Reached,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleState {
    pub id: ModuleId,
    pub start: Cell,
    pub current: Cell,
    pub spot: Option<SpotId>,
    pub goal: Option<Cell>,
    /// Remaining path, starting at `current`.
    pub remaining: Vec<Cell>,
    /// Budget left; negative once an over-budget fallback path has been walked.
    pub budget_remaining: i64,
    /// Cells visited so far, starting with the start cell.
    pub visited: Vec<Cell>,
    pub cells_since_replan: usize,
    pub status: ModuleStatus,
    pub replans: usize,
    pub replans_accepted: usize,
    pub local_replans: usize,
    pub collected: f64,
}

impl ModuleState {
    pub fn steps_taken(&self) -> usize {
        self.visited.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Move,
    ReplanAccept,
    ReplanReject,
    Reached,
}

/// One trace record; serialized as a JSONL line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEvent {
    pub t: usize,
    pub module: ModuleId,
    pub cell: (usize, usize),
    pub entropy_collected: f64,
    pub b_remaining: i64,
    pub event: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActingParams {
    pub budget: usize,
    pub replan_interval: usize,
    /// Seed for the centrality tie breaks in the acting order.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Moved(ModuleId),
    Arrived(ModuleId),
    Done,
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    map: GridMap,
    gp: GpState,
    modules: Vec<ModuleState>,
    spot_order: Vec<SpotId>,
    module_order: Vec<ModuleId>,
    active: usize,
    params: ActingParams,
    trace: Vec<TraceEvent>,
    collected: f64,
    messages: usize,
    t: usize,
}

impl SimWorld {
    /// Sets up the acting phase. `starts[m]` is module `m`'s initial cell.
    pub fn new(
        map: GridMap,
        gp: GpState,
        config: &TargetConfig,
        starts: &[Cell],
        assignment: &Assignment,
        params: ActingParams,
    ) -> Result<Self> {
        if params.budget == 0 || params.replan_interval == 0 {
            return Err(Error::InvalidArgument(
                "budget and replan interval must be positive".into(),
            ));
        }
        if !assignment.is_injective() || !assignment.is_total(config.len()) {
            return Err(Error::InvalidArgument(
                "assignment must be injective and total".into(),
            ));
        }
        let distinct: BTreeSet<Cell> = starts.iter().copied().collect();
        if distinct.len() != starts.len() {
            return Err(Error::InvalidArgument(
                "module start cells must be distinct".into(),
            ));
        }
        for &s in starts {
            map.check(s)?;
        }
        let mut modules: Vec<ModuleState> = starts
            .iter()
            .enumerate()
            .map(|(id, &start)| ModuleState {
                id,
                start,
                current: start,
                spot: None,
                goal: None,
                remaining: vec![start],
                budget_remaining: params.budget as i64,
                visited: vec![start],
                cells_since_replan: 0,
                status: ModuleStatus::Waiting,
                replans: 0,
                replans_accepted: 0,
                local_replans: 0,
                collected: 0.0,
            })
            .collect();
        for e in &assignment.entries {
            let m = modules.get_mut(e.module).ok_or_else(|| {
                Error::InvalidArgument(format!("assignment names unknown module {}", e.module))
            })?;
            m.spot = Some(e.spot);
            m.goal = Some(config.spot(e.spot).cell());
            if let Some(plan) = &e.plan {
                if plan.start() == m.start && plan.goal() == config.spot(e.spot).cell() {
                    m.remaining = plan.cells.clone();
                }
            }
        }
        let spot_order = config.acting_order(params.seed);
        let module_order = spot_order
            .iter()
            .map(|&s| assignment.module_of(s).expect("total assignment"))
            .collect();
        Ok(Self {
            map,
            gp,
            modules,
            spot_order,
            module_order,
            active: 0,
            params,
            trace: Vec::new(),
            collected: 0.0,
            messages: 0,
            t: 0,
        })
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn gp(&self) -> &GpState {
        &self.gp
    }

    pub fn modules(&self) -> &[ModuleState] {
        &self.modules
    }

    pub fn spot_order(&self) -> &[SpotId] {
        &self.spot_order
    }

    pub fn module_order(&self) -> &[ModuleId] {
        &self.module_order
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn collected(&self) -> f64 {
        self.collected
    }

    pub fn messages(&self) -> usize {
        self.messages
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn params(&self) -> ActingParams {
        self.params
    }

    pub fn is_done(&self) -> bool {
        self.active >= self.module_order.len()
    }

    /// Hard step cap: modules × cells.
    pub fn step_cap(&self) -> usize {
        self.modules.len().max(1) * self.map.len()
    }

    fn blocked_for(&self, module: ModuleId) -> BTreeSet<Cell> {
        self.modules
            .iter()
            .filter(|m| m.id != module)
            .map(|m| m.current)
            .collect()
    }

    fn record(&mut self, module: ModuleId, cell: Cell, entropy_collected: f64, event: EventKind) {
        let b_remaining = self.modules[module].budget_remaining;
        self.trace.push(TraceEvent {
            t: self.t,
            module,
            cell: (cell.x, cell.y),
            entropy_collected,
            b_remaining,
            event,
        });
    }

    fn arrive(&mut self, id: ModuleId) -> StepOutcome {
        let cell = self.modules[id].current;
        self.modules[id].status = ModuleStatus::Reached;
        self.modules[id].remaining = vec![cell];
        self.messages += self.modules.len() - 1;
        self.record(id, cell, 0.0, EventKind::Reached);
        self.active += 1;
        StepOutcome::Arrived(id)
    }

    /// Replaces the active module's path when its next cell is occupied.
    fn route_around(&mut self, id: ModuleId, goal: Cell) -> Result<()> {
        let blocked = self.blocked_for(id);
        let m = &self.modules[id];
        let current = m.current;
        let budget = m.budget_remaining.max(0) as usize;
        let field = EntropyField::new(&self.gp, &self.map);
        let mut path = if budget > 0 {
            eps_search(current, goal, budget, &field, &self.map, &blocked)?
        } else {
            None
        };
        if path.is_none() {
            path = shortest_path(current, goal, &field, &self.map, &blocked)?;
        }
        let Some(path) = path else {
            return Err(Error::BlockedArrival {
                module: id,
                spot: m.spot.expect("assigned module"),
                cell: current,
            });
        };
        let m = &mut self.modules[id];
        m.remaining = path.cells;
        m.local_replans += 1;
        Ok(())
    }

    fn replan(&mut self, id: ModuleId, goal: Cell) -> Result<()> {
        let blocked = self.blocked_for(id);
        let m = &self.modules[id];
        let current = m.current;
        let budget = m.budget_remaining;
        let field = EntropyField::new(&self.gp, &self.map);
        let candidate = eps_search(current, goal, budget as usize, &field, &self.map, &blocked)?;
        let current_info = path_informativeness(&m.remaining, &field);
        let accept = candidate
            .as_ref()
            .is_some_and(|p| p.informativeness > current_info && p.cost as i64 <= budget);
        drop(field);
        let m = &mut self.modules[id];
        m.replans += 1;
        m.cells_since_replan = 0;
        if accept {
            m.remaining = candidate.expect("accepted candidate").cells;
            m.replans_accepted += 1;
            self.record(id, current, 0.0, EventKind::ReplanAccept);
        } else {
            self.record(id, current, 0.0, EventKind::ReplanReject);
        }
        Ok(())
    }

    /// Advances the active module by one cell.
    pub fn step(&mut self) -> Result<StepOutcome> {
        if self.is_done() {
            return Ok(StepOutcome::Done);
        }
        let id = self.module_order[self.active];
        let goal = self.modules[id].goal.expect("ordered modules are assigned");
        if self.modules[id].status == ModuleStatus::Waiting {
            self.modules[id].status = ModuleStatus::Moving;
        }
        if self.modules[id].current == goal {
            return Ok(self.arrive(id));
        }

        let blocked = self.blocked_for(id);
        let next_ok = |m: &ModuleState| {
            m.remaining.len() >= 2
                && m.remaining[0] == m.current
                && !blocked.contains(&m.remaining[1])
                && self.map.contains(m.remaining[1])
                && !self.map.is_obstacle(m.remaining[1])
        };
        if !next_ok(&self.modules[id]) {
            self.route_around(id, goal)?;
        }

        let next = self.modules[id].remaining[1];
        let gain = if self.gp.is_observed(next) {
            0.0
        } else {
            self.gp.cell_entropy(next).max(0.0)
        };
        self.gp.observe(next, self.map.value(next))?;
        {
            let m = &mut self.modules[id];
            m.remaining.remove(0);
            m.current = next;
            m.visited.push(next);
            m.budget_remaining -= 1;
            m.cells_since_replan += 1;
            m.collected += gain;
        }
        self.collected += gain;
        self.record(id, next, gain, EventKind::Move);

        let outcome = if next == goal {
            self.arrive(id)
        } else {
            let m = &self.modules[id];
            if m.cells_since_replan >= self.params.replan_interval && m.budget_remaining > 0 {
                self.replan(id, goal)?;
            }
            StepOutcome::Moved(id)
        };
        self.t += 1;
        Ok(outcome)
    }

    /// Steps until every assigned module has reached its spot. On error the
    /// world keeps the trace up to the failing step.
    pub fn run_to_end(&mut self) -> Result<ActingReport> {
        let started = Instant::now();
        let cap = self.step_cap();
        while !self.is_done() {
            if self.t >= cap {
                return Err(Error::StepCap(cap));
            }
            self.step()?;
        }
        Ok(ActingReport::from_world(self, started.elapsed()))
    }

    pub fn run(mut self) -> Result<(SimWorld, ActingReport)> {
        let report = self.run_to_end()?;
        Ok((self, report))
    }

    pub fn check_no_hole(&self, config: &TargetConfig) -> bool {
        let starts: Vec<Cell> = self.modules.iter().map(|m| m.start).collect();
        let assigned: BTreeMap<SpotId, ModuleId> = self
            .modules
            .iter()
            .filter_map(|m| m.spot.map(|s| (s, m.id)))
            .collect();
        check_no_hole(&self.trace, &starts, &assigned, config)
    }

    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.trace {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    /// Module cells as `#`, every visited cell as `o`.
    pub fn ascii_snapshot(&self) -> String {
        let occupied: BTreeSet<Cell> = self.modules.iter().map(|m| m.current).collect();
        let explored: BTreeSet<Cell> = self
            .modules
            .iter()
            .flat_map(|m| m.visited.iter().copied())
            .collect();
        render_ascii(
            &self.map,
            &AsciiLayers {
                blocked: Some(&occupied),
                explored: Some(&explored),
                path: None,
            },
        )
    }
}

pub fn run_acting(world: SimWorld) -> Result<(SimWorld, ActingReport)> {
    world.run()
}

/// Replays `trace` from `starts` and checks that every spot is held by
/// exactly its assigned module, which must have announced its arrival.
pub fn check_no_hole(
    trace: &[TraceEvent],
    starts: &[Cell],
    assigned: &BTreeMap<SpotId, ModuleId>,
    config: &TargetConfig,
) -> bool {
    let mut position: Vec<Cell> = starts.to_vec();
    let mut reached = vec![false; starts.len()];
    for e in trace {
        if e.module >= starts.len() {
            return false;
        }
        match e.event {
            EventKind::Move => position[e.module] = Cell::new(e.cell.0, e.cell.1),
            EventKind::Reached => reached[e.module] = true,
            _ => {}
        }
    }
    config.spots().iter().all(|spot| {
        let Some(&m) = assigned.get(&spot.id) else {
            return false;
        };
        let occupants = position.iter().filter(|&&p| p == spot.cell()).count();
        m < starts.len() && reached[m] && position[m] == spot.cell() && occupants == 1
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModuleReport {
    pub module: ModuleId,
    pub spot: Option<SpotId>,
    pub path: Vec<Cell>,
    pub cost: usize,
    pub collected: f64,
    pub replans: usize,
    pub replans_accepted: usize,
    pub local_replans: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActingReport {
    pub modules: Vec<ModuleReport>,
    pub total_collected: f64,
    pub replans: usize,
    pub replans_accepted: usize,
    pub messages: usize,
    pub steps: usize,
    pub wall_time: Duration,
}

impl ActingReport {
    fn from_world(world: &SimWorld, wall_time: Duration) -> Self {
        let modules: Vec<ModuleReport> = world
            .modules
            .iter()
            .map(|m| ModuleReport {
                module: m.id,
                spot: m.spot,
                path: m.visited.clone(),
                cost: m.steps_taken(),
                collected: m.collected,
                replans: m.replans,
                replans_accepted: m.replans_accepted,
                local_replans: m.local_replans,
            })
            .collect();
        Self {
            total_collected: world.collected,
            replans: modules.iter().map(|m| m.replans).sum(),
            replans_accepted: modules.iter().map(|m| m.replans_accepted).sum(),
            messages: world.messages,
            steps: world.t,
            wall_time,
            modules,
        }
    }

    pub fn max_cost(&self) -> usize {
        self.modules.iter().map(|m| m.cost).max().unwrap_or(0)
    }
}
