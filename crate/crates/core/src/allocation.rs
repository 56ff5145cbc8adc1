//! Spot allocation: the supervisor's sequential rounds and an ε-auction baseline.
//!
//! Message accounting:
//! - sequential allocation: one bid list per module plus one allotment
//!   broadcast per module, `2 * modules` in total;
//! - auction: each bid is one message and each resulting price update is
//!   broadcast to every module.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{SpotId, TargetConfig};
use crate::error::{Error, Result};
use crate::gp::EntropySource;
use crate::grid::{Cell, GridMap};
use crate::planner::{eps_search_traced, shortest_path, PathPlan};

pub type ModuleId = usize;

/// Informativeness values closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Auction value base for bids that only have an over-budget fallback path.
pub const OVER_BUDGET_VALUE: f64 = -1e6;
/// Auction value for spots a module cannot reach at all.
pub const UNREACHABLE_VALUE: f64 = -1e9;
/// Auction value of the padding items used when modules outnumber spots.
/// Every complete assignment uses the same number of them, so any constant
/// shared by all modules leaves the optimum unchanged; zero keeps the price
/// climb short when spare modules compete.
const DUMMY_VALUE: f64 = 0.0;

pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Bid {
    pub module: ModuleId,
    pub spot: SpotId,
    /// Budgeted informative path, if one exists.
    pub path: Option<PathPlan>,
    /// Shortest path, filled only when the budgeted search failed.
    pub fallback_path: Option<PathPlan>,
    pub informativeness: f64,
    /// `None` when the spot is unreachable.
    pub cost: Option<usize>,
    /// Nodes the budgeted search expanded; 0 when it did not run.
    pub expansions: usize,
}

impl Bid {
    fn from_paths(
        module: ModuleId,
        spot: SpotId,
        path: Option<PathPlan>,
        fallback_path: Option<PathPlan>,
    ) -> Self {
        let chosen = path.as_ref().or(fallback_path.as_ref());
        Self {
            module,
            spot,
            informativeness: chosen.map_or(f64::NEG_INFINITY, |p| p.informativeness),
            cost: chosen.map(|p| p.cost),
            path,
            fallback_path,
            expansions: 0,
        }
    }

    pub fn within_budget(&self) -> bool {
        self.path.is_some()
    }

    pub fn is_reachable(&self) -> bool {
        self.cost.is_some()
    }

    pub fn chosen_path(&self) -> Option<&PathPlan> {
        self.path.as_ref().or(self.fallback_path.as_ref())
    }

    /// Value used by the auction baseline.
    pub fn auction_value(&self) -> f64 {
        match (self.within_budget(), self.cost) {
            (true, _) => self.informativeness,
            (false, Some(c)) => OVER_BUDGET_VALUE - c as f64,
            (false, None) => UNREACHABLE_VALUE,
        }
    }
}

/// One bid per spot for a module starting at `start`.
pub fn compute_bids(
    module: ModuleId,
    start: Cell,
    config: &TargetConfig,
    budget: usize,
    entropy: &dyn EntropySource,
    map: &GridMap,
    blocked: &BTreeSet<Cell>,
) -> Result<Vec<Bid>> {
    map.check(start)?;
    if blocked.contains(&start) || map.is_obstacle(start) {
        return Err(Error::InvalidArgument(format!(
            "module {module} starts on a blocked cell {start}"
        )));
    }
    let mut bids = Vec::with_capacity(config.len());
    for spot in config.spots() {
        let goal = spot.cell();
        if goal == start {
            let here = PathPlan::new(vec![start], entropy, Some(budget));
            bids.push(Bid::from_paths(module, spot.id, Some(here), None));
            continue;
        }
        if blocked.contains(&goal) || map.is_obstacle(goal) || !map.contains(goal) {
            bids.push(Bid::from_paths(module, spot.id, None, None));
            continue;
        }
        let outcome = eps_search_traced(start, goal, budget, entropy, map, blocked, false)?;
        let fallback = match outcome.path {
            Some(_) => None,
            None => shortest_path(start, goal, entropy, map, blocked)?,
        };
        let mut bid = Bid::from_paths(module, spot.id, outcome.path, fallback);
        bid.expansions = outcome.stats.expansions;
        bids.push(bid);
    }
    Ok(bids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AllocatorKind {
    Sequential,
    Auction,
}

impl AllocatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AllocatorKind::Sequential => "sa",
            AllocatorKind::Auction => "auction",
        }
    }
}

impl fmt::Display for AllocatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AllocatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sa" => Ok(AllocatorKind::Sequential),
            "auction" => Ok(AllocatorKind::Auction),
            other => Err(Error::Parse(format!("unknown allocator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentEntry {
    pub spot: SpotId,
    pub module: ModuleId,
    pub plan: Option<PathPlan>,
    pub within_budget: bool,
    pub cost: Option<usize>,
    pub informativeness: f64,
}

#[derive(Debug, Clone)]
pub struct Assignment {
    pub allocator: AllocatorKind,
    /// Sorted by spot id.
    pub entries: Vec<AssignmentEntry>,
    pub messages: usize,
    pub elapsed: Duration,
}

impl Assignment {
    fn from_pairs(
        allocator: AllocatorKind,
        pairs: Vec<(SpotId, ModuleId)>,
        bids: &[Vec<Bid>],
        messages: usize,
        start: Instant,
    ) -> Self {
        let mut entries: Vec<AssignmentEntry> = pairs
            .into_iter()
            .map(|(spot, module)| {
                let bid = &bids[module][spot];
                AssignmentEntry {
                    spot,
                    module,
                    plan: bid.chosen_path().cloned(),
                    within_budget: bid.within_budget(),
                    cost: bid.cost,
                    informativeness: bid.informativeness,
                }
            })
            .collect();
        entries.sort_by_key(|e| e.spot);
        Self {
            allocator,
            entries,
            messages,
            elapsed: start.elapsed(),
        }
    }

    pub fn module_of(&self, spot: SpotId) -> Option<ModuleId> {
        self.entries
            .iter()
            .find(|e| e.spot == spot)
            .map(|e| e.module)
    }

    pub fn spot_of(&self, module: ModuleId) -> Option<SpotId> {
        self.entries
            .iter()
            .find(|e| e.module == module)
            .map(|e| e.spot)
    }

    pub fn entry(&self, spot: SpotId) -> Option<&AssignmentEntry> {
        self.entries.iter().find(|e| e.spot == spot)
    }

    pub fn is_injective(&self) -> bool {
        let spots: BTreeSet<_> = self.entries.iter().map(|e| e.spot).collect();
        let modules: BTreeSet<_> = self.entries.iter().map(|e| e.module).collect();
        spots.len() == self.entries.len() && modules.len() == self.entries.len()
    }

    pub fn is_total(&self, spots: usize) -> bool {
        let covered: BTreeSet<_> = self.entries.iter().map(|e| e.spot).collect();
        covered.len() == spots && covered.iter().all(|&s| s < spots)
    }

    pub fn total_informativeness(&self) -> f64 {
        self.entries.iter().map(|e| e.informativeness).sum()
    }

    pub fn over_budget_count(&self) -> usize {
        self.entries.iter().filter(|e| !e.within_budget).count()
    }

    pub const CSV_HEADER: &'static str =
        "spot_id,module_id,cost,informativeness,allocator,messages";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            let cost = e.cost.map_or_else(|| "inf".to_string(), |c| c.to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.spot, e.module, cost, e.informativeness, self.allocator, self.messages
            ));
        }
        out
    }
}

fn check_bids(bids: &[Vec<Bid>], spots: usize) -> Result<()> {
    if bids.len() < spots {
        return Err(Error::TooFewModules {
            modules: bids.len(),
            spots,
        });
    }
    for (m, list) in bids.iter().enumerate() {
        if list.len() != spots {
            return Err(Error::InvalidArgument(format!(
                "module {m} has {} bids for {spots} spots",
                list.len()
            )));
        }
        if list
            .iter()
            .enumerate()
            .any(|(s, b)| b.spot != s || b.module != m)
        {
            return Err(Error::InvalidArgument(format!(
                "bids of module {m} are not indexed by spot"
            )));
        }
    }
    Ok(())
}

/// Sequential spot allocation. `bids[m][s]` is module `m`'s bid for spot `s`.
///
/// Spots are allocated in index order. Among the still-free modules holding a
/// within-budget path, the most informative wins; ties go to the cheaper
/// path, then to a seeded random pick. With no within-budget path, the
/// cheapest fallback path wins.
pub fn allocate_sa(bids: &[Vec<Bid>], spots: usize, seed: u64) -> Result<Assignment> {
    let start = Instant::now();
    check_bids(bids, spots)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut free: Vec<ModuleId> = (0..bids.len()).collect();
    let mut pairs = Vec::with_capacity(spots);

    for spot in 0..spots {
        let within: Vec<ModuleId> = free
            .iter()
            .copied()
            .filter(|&m| bids[m][spot].within_budget())
            .collect();
        let tied: Vec<ModuleId> = if !within.is_empty() {
            let best = within
                .iter()
                .map(|&m| bids[m][spot].informativeness)
                .fold(f64::NEG_INFINITY, f64::max);
            let winners: Vec<ModuleId> = within
                .into_iter()
                .filter(|&m| bids[m][spot].informativeness >= best - TIE_TOLERANCE)
                .collect();
            cheapest(&winners, spot, bids)
        } else {
            cheapest(&free, spot, bids)
        };
        let winner = if tied.len() == 1 {
            tied[0]
        } else {
            *tied.choose(&mut rng).expect("at least one free module")
        };
        free.retain(|&m| m != winner);
        pairs.push((spot, winner));
    }
    Ok(Assignment::from_pairs(
        AllocatorKind::Sequential,
        pairs,
        bids,
        2 * bids.len(),
        start,
    ))
}

fn cheapest(candidates: &[ModuleId], spot: SpotId, bids: &[Vec<Bid>]) -> Vec<ModuleId> {
    let cost = |m: ModuleId| bids[m][spot].cost.unwrap_or(usize::MAX);
    let min = candidates
        .iter()
        .map(|&m| cost(m))
        .min()
        .unwrap_or(usize::MAX);
    candidates
        .iter()
        .copied()
        .filter(|&m| cost(m) == min)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionResult {
    /// `item_of[bidder]`.
    pub item_of: Vec<usize>,
    pub prices: Vec<f64>,
    pub bids: usize,
    pub messages: usize,
}

/// Forward ε-auction for a square `values[bidder][item]` matrix (maximization).
/// Bidders are served one at a time from a queue whose initial order is
/// shuffled with `seed`.
pub fn auction_assign(values: &[Vec<f64>], epsilon: f64, seed: u64) -> Result<AuctionResult> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    let n = values.len();
    if values.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidArgument(
            "auction needs a square value matrix".into(),
        ));
    }
    let mut prices = vec![0.0; n];
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut item_of: Vec<Option<usize>> = vec![None; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut queue: VecDeque<usize> = order.into();
    let mut bids = 0usize;

    while let Some(i) = queue.pop_front() {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        let mut second = f64::NEG_INFINITY;
        for j in 0..n {
            let net = values[i][j] - prices[j];
            if net > best.1 {
                second = best.1;
                best = (j, net);
            } else if net > second {
                second = net;
            }
        }
        let (j, w1) = best;
        let increment = if second.is_finite() {
            w1 - second + epsilon
        } else {
            epsilon
        };
        prices[j] += increment;
        bids += 1;
        if let Some(prev) = owner[j].replace(i) {
            item_of[prev] = None;
            queue.push_back(prev);
        }
        item_of[i] = Some(j);
    }
    Ok(AuctionResult {
        item_of: item_of
            .into_iter()
            .map(|j| j.expect("every bidder assigned"))
            .collect(),
        prices,
        bids,
        messages: bids * (1 + n),
    })
}

/// Auction baseline: modules bid for spots valued by path informativeness.
pub fn allocate_auction(
    bids: &[Vec<Bid>],
    spots: usize,
    epsilon: f64,
    seed: u64,
) -> Result<Assignment> {
    let start = Instant::now();
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    check_bids(bids, spots)?;
    let modules = bids.len();
    let values: Vec<Vec<f64>> = bids
        .iter()
        .map(|list| {
            let mut row: Vec<f64> = list.iter().map(Bid::auction_value).collect();
            row.resize(modules, DUMMY_VALUE);
            row
        })
        .collect();
    let result = auction_assign(&values, epsilon, seed)?;
    let pairs: Vec<(SpotId, ModuleId)> = result
        .item_of
        .iter()
        .enumerate()
        .filter(|(_, &item)| item < spots)
        .map(|(m, &item)| (item, m))
        .collect();
    Ok(Assignment::from_pairs(
        AllocatorKind::Auction,
        pairs,
        bids,
        result.messages,
        start,
    ))
}

/// Convenience map from module to its assigned spot.
pub fn module_to_spot(assignment: &Assignment) -> BTreeMap<ModuleId, SpotId> {
    assignment
        .entries
        .iter()
        .map(|e| (e.module, e.spot))
        .collect()
}
