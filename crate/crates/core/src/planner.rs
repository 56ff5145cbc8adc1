//! Budget-bounded informative path search.
//!
//! [`eps_search`] is a greedy best-first search over the 4-connected grid keyed
//! on the entropic potential `hu(c) = (B - g(c)) / h(c) + H(c|O)`, with `h` the
//! Manhattan distance to the goal. Nodes with `g + h >= B` are pruned, cells
//! with non-positive entropy never enter OPEN, and the search returns as soon
//! as the goal is generated.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gp::EntropySource;
use crate::grid::{manhattan_distance, Cell, GridMap};

/// Stand-in for `-inf` entropies when summing a path's informativeness.
pub const INFORMATIVENESS_FLOOR: f64 = -1e12;

/// Sum of per-cell entropies along `cells`, each clamped at [`INFORMATIVENESS_FLOOR`].
pub fn path_informativeness(cells: &[Cell], entropy: &dyn EntropySource) -> f64 {
    cells
        .iter()
        .map(|&c| entropy.entropy(c).max(INFORMATIVENESS_FLOOR))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathPlan {
    pub cells: Vec<Cell>,
    pub cost: usize,
    pub informativeness: f64,
    /// Budget the plan was searched under; `None` for unbudgeted shortest paths.
    pub budget: Option<usize>,
}

impl PathPlan {
    pub fn new(cells: Vec<Cell>, entropy: &dyn EntropySource, budget: Option<usize>) -> Self {
        let informativeness = path_informativeness(&cells, entropy);
        Self {
            cost: cells.len().saturating_sub(1),
            cells,
            informativeness,
            budget,
        }
    }

    pub fn start(&self) -> Cell {
        self.cells[0]
    }

    pub fn goal(&self) -> Cell {
        *self.cells.last().expect("non-empty path")
    }

    pub fn within_budget(&self, budget: usize) -> bool {
        self.cost <= budget
    }

    /// Checks adjacency, obstacle/blocked freedom (start excepted) and cost bookkeeping.
    pub fn check(
        &self,
        map: &GridMap,
        blocked: &BTreeSet<Cell>,
    ) -> std::result::Result<(), String> {
        if self.cells.is_empty() {
            return Err("empty path".into());
        }
        if self.cost + 1 != self.cells.len() {
            return Err(format!("cost {} for {} cells", self.cost, self.cells.len()));
        }
        for (i, &c) in self.cells.iter().enumerate() {
            if !map.contains(c) {
                return Err(format!("cell {c} out of bounds"));
            }
            if map.is_obstacle(c) {
                return Err(format!("cell {c} is an obstacle"));
            }
            if i > 0 && blocked.contains(&c) {
                return Err(format!("cell {c} is blocked"));
            }
        }
        for w in self.cells.windows(2) {
            if manhattan_distance(w[0], w[1]) != 1 {
                return Err(format!("{} and {} are not adjacent", w[0], w[1]));
            }
        }
        Ok(())
    }
}

/// `(B - g) / h`, or `+inf` at the goal.
pub fn potential(budget: f64, g: f64, h: f64) -> f64 {
    if h == 0.0 {
        f64::INFINITY
    } else {
        (budget - g) / h
    }
}

pub fn entropic_potential(budget: f64, g: f64, h: f64, entropy: f64) -> f64 {
    potential(budget, g, h) + entropy
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchNode {
    pub cell: Cell,
    pub g: usize,
    pub parent: Option<Cell>,
    pub hu: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SearchStats {
    /// Nodes popped from OPEN and expanded.
    pub expansions: usize,
    /// Neighbors inserted into OPEN (including re-insertions).
    pub insertions: usize,
    /// CLOSED nodes re-opened on a strictly better `g`.
    pub reopened: usize,
}

/// One expansion, as written to the JSONL search trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansionRecord {
    pub cell: (usize, usize),
    pub g: usize,
    pub hu: f64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub path: Option<PathPlan>,
    pub stats: SearchStats,
    pub trace: Vec<ExpansionRecord>,
}

impl SearchOutcome {
    pub fn explored(&self) -> BTreeSet<Cell> {
        self.trace
            .iter()
            .map(|r| Cell::new(r.cell.0, r.cell.1))
            .collect()
    }

    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.trace {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Unseen,
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy)]
struct OpenEntry {
    hu: f64,
    g: usize,
    seq: u64,
    index: usize,
}

// Max-heap order: larger hu, then larger g, then earlier insertion.
impl Ord for OpenEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.hu
            .total_cmp(&other.hu)
            .then(self.g.cmp(&other.g))
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

fn check_endpoints(start: Cell, goal: Cell, map: &GridMap, blocked: &BTreeSet<Cell>) -> Result<()> {
    map.check(start)?;
    map.check(goal)?;
    if start == goal {
        return Err(Error::InvalidArgument(format!(
            "start and goal coincide at {start}"
        )));
    }
    if blocked.contains(&goal) || map.is_obstacle(goal) {
        return Err(Error::InvalidArgument(format!("goal {goal} is blocked")));
    }
    Ok(())
}

fn reconstruct(last: Cell, parents: &[Option<Cell>], map: &GridMap) -> Vec<Cell> {
    let mut cells = vec![last];
    let mut cur = last;
    while let Some(p) = parents[map.index(cur)] {
        cells.push(p);
        cur = p;
    }
    cells.reverse();
    cells
}

/// Entropic Potential Search. Returns `None` when no path of cost below `budget` is found.
pub fn eps_search(
    start: Cell,
    goal: Cell,
    budget: usize,
    entropy: &dyn EntropySource,
    map: &GridMap,
    blocked: &BTreeSet<Cell>,
) -> Result<Option<PathPlan>> {
    Ok(eps_search_traced(start, goal, budget, entropy, map, blocked, false)?.path)
}

/// [`eps_search`] that also reports counters and, if `record` is set, every expansion.
pub fn eps_search_traced(
    start: Cell,
    goal: Cell,
    budget: usize,
    entropy: &dyn EntropySource,
    map: &GridMap,
    blocked: &BTreeSet<Cell>,
    record: bool,
) -> Result<SearchOutcome> {
    check_endpoints(start, goal, map, blocked)?;
    let b = budget as f64;
    let n = map.len();
    let mut status = vec![Status::Unseen; n];
    let mut g = vec![usize::MAX; n];
    let mut parent: Vec<Option<Cell>> = vec![None; n];
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;
    let mut stats = SearchStats::default();
    let mut trace = Vec::new();

    let h = |c: Cell| manhattan_distance(c, goal) as f64;
    let mut entropies: Vec<Option<f64>> = vec![None; n];
    let mut entropy_at =
        |c: Cell| *entropies[map.index(c)].get_or_insert_with(|| entropy.entropy(c));

    let si = map.index(start);
    g[si] = 0;
    status[si] = Status::Open;
    open.push(OpenEntry {
        hu: entropic_potential(b, 0.0, h(start), entropy_at(start)),
        g: 0,
        seq,
        index: si,
    });

    while let Some(entry) = open.pop() {
        let mi = entry.index;
        // lazy deletion: skip superseded heap entries
        if status[mi] != Status::Open || entry.g != g[mi] {
            continue;
        }
        let current = map.cell_at(mi);
        stats.expansions += 1;
        if record {
            trace.push(ExpansionRecord {
                cell: (current.x, current.y),
                g: g[mi],
                hu: entry.hu,
            });
        }
        let g_next = g[mi] + 1;
        for next in map.neighbors4(current, blocked) {
            let ni = map.index(next);
            if status[ni] != Status::Unseen && g[ni] <= g_next {
                continue;
            }
            if g_next as f64 + h(next) >= b {
                continue;
            }
            if next == goal {
                parent[ni] = Some(current);
                let cells = reconstruct(next, &parent, map);
                let plan = PathPlan::new(cells, entropy, Some(budget));
                return Ok(SearchOutcome {
                    path: Some(plan),
                    stats,
                    trace,
                });
            }
            let hn = entropy_at(next);
            match status[ni] {
                Status::Open => {}
                Status::Closed => stats.reopened += 1,
                Status::Unseen => {
                    if !(hn > 0.0) {
                        continue;
                    }
                }
            }
            g[ni] = g_next;
            parent[ni] = Some(current);
            status[ni] = Status::Open;
            seq += 1;
            stats.insertions += 1;
            open.push(OpenEntry {
                hu: entropic_potential(b, g_next as f64, h(next), hn),
                g: g_next,
                seq,
                index: ni,
            });
        }
        status[mi] = Status::Closed;
    }

    Ok(SearchOutcome {
        path: None,
        stats,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct AstarEntry {
    f: usize,
    seq: u64,
    index: usize,
}

impl Ord for AstarEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (f, seq)
        other.f.cmp(&self.f).then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for AstarEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-cost 4-connected path (A* with the Manhattan heuristic), annotated
/// with informativeness from `entropy`. `None` iff the goal is unreachable.
pub fn shortest_path(
    start: Cell,
    goal: Cell,
    entropy: &dyn EntropySource,
    map: &GridMap,
    blocked: &BTreeSet<Cell>,
) -> Result<Option<PathPlan>> {
    check_endpoints(start, goal, map, blocked)?;
    let n = map.len();
    let mut g = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut parent: Vec<Option<Cell>> = vec![None; n];
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;

    let si = map.index(start);
    g[si] = 0;
    open.push(AstarEntry {
        f: manhattan_distance(start, goal),
        seq,
        index: si,
    });
    while let Some(AstarEntry { index, .. }) = open.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        let current = map.cell_at(index);
        if current == goal {
            let cells = reconstruct(goal, &parent, map);
            return Ok(Some(PathPlan::new(cells, entropy, None)));
        }
        for next in map.neighbors4(current, blocked) {
            let ni = map.index(next);
            let gn = g[index] + 1;
            if closed[ni] || gn >= g[ni] {
                continue;
            }
            g[ni] = gn;
            parent[ni] = Some(current);
            seq += 1;
            open.push(AstarEntry {
                f: gn + manhattan_distance(next, goal),
                seq,
                index: ni,
            });
        }
    }
    Ok(None)
}
