//! Target configuration graph: spots, adjacency, betweenness centrality and
//! the center-out order in which spots are occupied.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{manhattan_distance, Cell, GridMap, Heading, Pose};

pub type SpotId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Spot {
    pub id: SpotId,
    pub pose: Pose,
    pub neighbors: Vec<SpotId>,
}

impl Spot {
    pub fn cell(&self) -> Cell {
        self.pose.cell
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DegreeOutOfRange {
        spot: SpotId,
        degree: usize,
    },
    NonUnitEdge {
        a: SpotId,
        b: SpotId,
        distance: usize,
    },
    Disconnected {
        components: usize,
    },
    OutOfBounds {
        spot: SpotId,
    },
    SharedCell {
        a: SpotId,
        b: SpotId,
    },
    Empty,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DegreeOutOfRange { spot, degree } => {
                write!(f, "spot {spot} has {degree} neighbors (allowed 1..=4)")
            }
            Violation::NonUnitEdge { a, b, distance } => {
                write!(f, "edge {a}-{b} spans distance {distance}")
            }
            Violation::Disconnected { components } => {
                write!(f, "graph has {components} components")
            }
            Violation::OutOfBounds { spot } => write!(f, "spot {spot} lies outside the map"),
            Violation::SharedCell { a, b } => write!(f, "spots {a} and {b} share a cell"),
            Violation::Empty => write!(f, "configuration has no spots"),
        }
    }
}

/// Target configuration `G_T`. Spot ids are `0..len()`.
#[derive(Debug)]
pub struct TargetConfig {
    spots: Vec<Spot>,
    edges: BTreeSet<(SpotId, SpotId)>,
    centrality: OnceLock<Vec<f64>>,
}

impl Clone for TargetConfig {
    fn clone(&self) -> Self {
        let centrality = OnceLock::new();
        if let Some(c) = self.centrality.get() {
            let _ = centrality.set(c.clone());
        }
        Self {
            spots: self.spots.clone(),
            edges: self.edges.clone(),
            centrality,
        }
    }
}

impl PartialEq for TargetConfig {
    fn eq(&self, other: &Self) -> bool {
        self.spots == other.spots && self.edges == other.edges
    }
}

impl TargetConfig {
    /// Builds the graph; `poses[i]` belongs to spot `i`. Edges are unordered.
    pub fn new(
        poses: Vec<Pose>,
        edges: impl IntoIterator<Item = (SpotId, SpotId)>,
    ) -> Result<Self> {
        let n = poses.len();
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge {a}-{b} references an unknown spot"
                )));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop on spot {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let mut spots: Vec<Spot> = poses
            .into_iter()
            .enumerate()
            .map(|(id, pose)| Spot {
                id,
                pose,
                neighbors: Vec::new(),
            })
            .collect();
        for &(a, b) in &set {
            spots[a].neighbors.push(b);
            spots[b].neighbors.push(a);
        }
        for s in &mut spots {
            s.neighbors.sort_unstable();
        }
        Ok(Self {
            spots,
            edges: set,
            centrality: OnceLock::new(),
        })
    }

    pub fn spots(&self) -> &[Spot] {
        &self.spots
    }

    pub fn spot(&self, id: SpotId) -> &Spot {
        &self.spots[id]
    }

    pub fn edges(&self) -> &BTreeSet<(SpotId, SpotId)> {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.spots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spots.is_empty()
    }

    pub fn cells(&self) -> Vec<Cell> {
        self.spots.iter().map(Spot::cell).collect()
    }

    fn component_count(&self) -> usize {
        let mut seen = vec![false; self.len()];
        let mut count = 0;
        for root in 0..self.len() {
            if seen[root] {
                continue;
            }
            count += 1;
            seen[root] = true;
            let mut stack = vec![root];
            while let Some(v) = stack.pop() {
                for &w in &self.spots[v].neighbors {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }

    /// Every structural violation found; empty means valid.
    pub fn validate(&self, map: &GridMap) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.is_empty() {
            out.push(Violation::Empty);
            return out;
        }
        for s in &self.spots {
            if !map.contains(s.cell()) {
                out.push(Violation::OutOfBounds { spot: s.id });
            }
            let degree = s.neighbors.len();
            if degree > 4 || (self.len() > 1 && degree == 0) {
                out.push(Violation::DegreeOutOfRange { spot: s.id, degree });
            }
        }
        for &(a, b) in &self.edges {
            let distance = manhattan_distance(self.spots[a].cell(), self.spots[b].cell());
            if distance != 1 {
                out.push(Violation::NonUnitEdge { a, b, distance });
            }
        }
        let mut by_cell: Vec<(Cell, SpotId)> =
            self.spots.iter().map(|s| (s.cell(), s.id)).collect();
        by_cell.sort();
        for w in by_cell.windows(2) {
            if w[0].0 == w[1].0 {
                out.push(Violation::SharedCell {
                    a: w[0].1,
                    b: w[1].1,
                });
            }
        }
        let components = self.component_count();
        if components > 1 {
            out.push(Violation::Disconnected { components });
        }
        out
    }

    /// Unweighted betweenness centrality (Brandes), endpoints excluded,
    /// halved for the undirected graph. Cached after the first call.
    pub fn betweenness(&self) -> &[f64] {
        self.centrality.get_or_init(|| brandes(self))
    }

    /// Center-out occupation order: the most central spot first (seeded tie
    /// break), then BFS layers outward, each layer by descending centrality.
    pub fn acting_order(&self, seed: u64) -> Vec<SpotId> {
        if self.is_empty() {
            return Vec::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bc = self.betweenness();
        let best = bc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let centers: Vec<SpotId> = (0..self.len()).filter(|&i| bc[i] == best).collect();
        let center = *centers.choose(&mut rng).expect("non-empty");

        let mut order = vec![center];
        let mut seen = vec![false; self.len()];
        seen[center] = true;
        let mut layer = vec![center];
        while !layer.is_empty() {
            let mut next: Vec<SpotId> = Vec::new();
            for &v in &layer {
                for &w in &self.spots[v].neighbors {
                    if !seen[w] {
                        seen[w] = true;
                        next.push(w);
                    }
                }
            }
            next.sort_unstable();
            next.shuffle(&mut rng);
            next.sort_by(|a, b| bc[*b].total_cmp(&bc[*a]));
            order.extend_from_slice(&next);
            layer = next;
        }
        // disconnected remainder, should validation have been skipped
        let mut rest: Vec<SpotId> = (0..self.len()).filter(|&i| !seen[i]).collect();
        rest.sort_by(|a, b| bc[*b].total_cmp(&bc[*a]));
        order.extend(rest);
        order
    }

    /// `id x y theta` lines for spots followed by `id id` lines for edges.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.spots {
            out.push_str(&format!(
                "{} {} {} {}\n",
                s.id,
                s.cell().x,
                s.cell().y,
                s.pose.theta()
            ));
        }
        for &(a, b) in &self.edges {
            out.push_str(&format!("{a} {b}\n"));
        }
        out
    }

    /// Parses [`TargetConfig::to_text`] output. Line order does not matter;
    /// blank lines and `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut poses: Vec<(SpotId, Pose)> = Vec::new();
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let bad = |what: &str| Error::Parse(format!("line {}: {what}: {raw:?}", lineno + 1));
            let int = |t: &str| {
                t.parse::<usize>()
                    .map_err(|_| bad("expected a non-negative integer"))
            };
            match toks.len() {
                4 => {
                    let theta: f64 = toks[3].parse().map_err(|_| bad("expected an angle"))?;
                    let pose = Pose::new(
                        Cell::new(int(toks[1])?, int(toks[2])?),
                        Heading::from_theta(theta),
                    );
                    poses.push((int(toks[0])?, pose));
                }
                2 => edges.push((int(toks[0])?, int(toks[1])?)),
                _ => return Err(bad("expected `id x y theta` or `id id`")),
            }
        }
        poses.sort_by_key(|(id, _)| *id);
        for (expected, (id, _)) in poses.iter().enumerate() {
            if *id != expected {
                return Err(Error::Parse(format!(
                    "spot ids must be 0..n without gaps, found {id}"
                )));
            }
        }
        Self::new(poses.into_iter().map(|(_, p)| p).collect(), edges)
    }
}

fn brandes(config: &TargetConfig) -> Vec<f64> {
    let n = config.len();
    let mut bc = vec![0.0; n];
    let mut stack = Vec::with_capacity(n);
    let mut preds: Vec<Vec<SpotId>> = vec![Vec::new(); n];
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![-1i64; n];
    let mut delta = vec![0.0f64; n];
    let mut queue = VecDeque::new();

    for s in 0..n {
        stack.clear();
        for v in 0..n {
            preds[v].clear();
            sigma[v] = 0.0;
            dist[v] = -1;
            delta[v] = 0.0;
        }
        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in &config.spots[v].neighbors {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                bc[w] += delta[w];
            }
        }
    }
    for b in &mut bc {
        *b /= 2.0;
    }
    bc
}

/// Grows a connected configuration of `n` spots by random accretion from the
/// map center. Each new spot is 4-adjacent to an existing one; extra edges to
/// other adjacent spots are added on a fair coin flip.
pub fn generate_random(seed: u64, n: usize, map: &GridMap) -> Result<TargetConfig> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "configuration needs at least one spot".into(),
        ));
    }
    let free = map.len() - map.obstacles().len();
    if n > free {
        return Err(Error::Generation(format!(
            "{n} spots do not fit in {free} free cells"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let headings = [Heading::East, Heading::North, Heading::West, Heading::South];
    let center = Cell::new(map.width() / 2, map.height() / 2);
    let first = if map.is_obstacle(center) {
        map.cells()
            .filter(|c| !map.is_obstacle(*c))
            .min_by_key(|c| (manhattan_distance(*c, center), *c))
            .expect("free cell exists")
    } else {
        center
    };

    let mut cells = vec![first];
    let mut taken: BTreeSet<Cell> = [first].into();
    let mut edges: Vec<(SpotId, SpotId)> = Vec::new();
    let mut degree = vec![0usize];
    let none = BTreeSet::new();
    let max_attempts = 64 * n + 64;
    let mut attempts = 0;

    while cells.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Generation(format!(
                "placed {} of {n} spots after {max_attempts} attempts",
                cells.len()
            )));
        }
        let parent = rng.gen_range(0..cells.len());
        if degree[parent] >= 4 {
            continue;
        }
        let options: Vec<Cell> = map
            .neighbors4(cells[parent], &none)
            .into_iter()
            .filter(|c| !taken.contains(c))
            .collect();
        let Some(&cell) = options.choose(&mut rng) else {
            continue;
        };
        let id = cells.len();
        cells.push(cell);
        taken.insert(cell);
        degree.push(1);
        degree[parent] += 1;
        edges.push((parent, id));
        for (other, &oc) in cells.iter().enumerate().take(id) {
            if other != parent && manhattan_distance(oc, cell) == 1 && rng.gen_bool(0.5) {
                edges.push((other, id));
                degree[other] += 1;
                degree[id] += 1;
            }
        }
    }
    let poses = cells
        .into_iter()
        .map(|c| Pose::new(c, *headings.choose(&mut rng).expect("non-empty")))
        .collect();
    TargetConfig::new(poses, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> TargetConfig {
        let poses = (0..n)
            .map(|i| Pose::new(Cell::new(i, 0), Heading::East))
            .collect();
        TargetConfig::new(poses, (1..n).map(|i| (i - 1, i))).unwrap()
    }

    fn map() -> GridMap {
        GridMap::uniform(30, 30, 1.0).unwrap()
    }

    #[test]
    fn minimal_config_is_valid() {
        let c = line(2);
        assert!(c.validate(&map()).is_empty());
        let single =
            TargetConfig::new(vec![Pose::new(Cell::new(3, 3), Heading::North)], []).unwrap();
        assert!(single.validate(&map()).is_empty());
    }

    #[test]
    fn detects_violations() {
        let far = TargetConfig::new(
            vec![
                Pose::new(Cell::new(0, 0), Heading::East),
                Pose::new(Cell::new(2, 0), Heading::East),
            ],
            [(0, 1)],
        )
        .unwrap();
        assert_eq!(
            far.validate(&map()),
            vec![Violation::NonUnitEdge {
                a: 0,
                b: 1,
                distance: 2
            }]
        );

        let split = TargetConfig::new(
            (0..4)
                .map(|i| Pose::new(Cell::new(i, 0), Heading::East))
                .collect(),
            [(0, 1), (2, 3)],
        )
        .unwrap();
        assert_eq!(
            split.validate(&map()),
            vec![Violation::Disconnected { components: 2 }]
        );

        let stacked = TargetConfig::new(
            vec![
                Pose::new(Cell::new(0, 0), Heading::East),
                Pose::new(Cell::new(0, 0), Heading::East),
            ],
            [(0, 1)],
        )
        .unwrap();
        assert!(stacked
            .validate(&map())
            .contains(&Violation::SharedCell { a: 0, b: 1 }));

        let outside =
            TargetConfig::new(vec![Pose::new(Cell::new(30, 0), Heading::East)], []).unwrap();
        assert_eq!(
            outside.validate(&map()),
            vec![Violation::OutOfBounds { spot: 0 }]
        );
        assert!(TargetConfig::new(vec![], [(0, 1)]).is_err());
    }

    #[test]
    fn generated_configs_validate() {
        let m = map();
        let one = generate_random(1, 1, &m).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one.edges().is_empty());
        assert!(one.validate(&m).is_empty());
        assert!(generate_random(7, 10, &m).unwrap().validate(&m).is_empty());
        for n in [10, 20, 30, 40, 50] {
            for seed in 0..5 {
                let c = generate_random(seed, n, &m).unwrap();
                assert_eq!(c.len(), n);
                let v = c.validate(&m);
                assert!(v.is_empty(), "n={n} seed={seed}: {v:?}");
            }
        }
        assert_eq!(
            generate_random(3, 20, &m).unwrap(),
            generate_random(3, 20, &m).unwrap()
        );
    }

    #[test]
    fn generation_fails_on_tiny_maps() {
        let m = GridMap::uniform(2, 2, 1.0).unwrap();
        assert!(generate_random(0, 5, &m).is_err());
        assert!(generate_random(0, 4, &m).is_ok());
        assert!(generate_random(0, 0, &m).is_err());
    }

    #[test]
    fn path_center_has_max_centrality() {
        let c = line(3);
        assert_eq!(c.betweenness(), &[0.0, 1.0, 0.0]);
        assert_eq!(c.acting_order(0)[0], 1);
    }

    #[test]
    fn cycle_is_uniform() {
        let poses = [(0, 0), (1, 0), (1, 1), (0, 1)]
            .iter()
            .map(|&(x, y)| Pose::new(Cell::new(x, y), Heading::East))
            .collect();
        let c = TargetConfig::new(poses, [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let bc = c.betweenness();
        assert!(bc.iter().all(|&b| (b - bc[0]).abs() < 1e-12));
        assert!((bc[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn star_hub_goes_first() {
        let poses = [(5, 5), (5, 6), (6, 5), (5, 4), (4, 5)]
            .iter()
            .map(|&(x, y)| Pose::new(Cell::new(x, y), Heading::East))
            .collect();
        let c = TargetConfig::new(poses, [(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        for seed in 0..5 {
            let order = c.acting_order(seed);
            assert_eq!(order[0], 0);
            let mut rest = order[1..].to_vec();
            rest.sort();
            assert_eq!(rest, vec![1, 2, 3, 4]);
        }
        assert_eq!(c.acting_order(11), c.acting_order(11));
    }

    #[test]
    fn acting_order_prefix_property() {
        let m = map();
        for n in [2, 5, 10, 20, 35] {
            for seed in 0..10 {
                let c = generate_random(seed, n, &m).unwrap();
                let order = c.acting_order(seed);
                let mut sorted = order.clone();
                sorted.sort();
                assert_eq!(sorted, (0..n).collect::<Vec<_>>());
                for (k, &s) in order.iter().enumerate().skip(1) {
                    assert!(
                        c.spot(s).neighbors.iter().any(|nb| order[..k].contains(nb)),
                        "spot {s} has no earlier neighbor"
                    );
                }
            }
        }
    }

    #[test]
    fn text_roundtrip_is_order_independent() {
        let c = generate_random(4, 8, &map()).unwrap();
        let text = c.to_text();
        assert_eq!(TargetConfig::from_text(&text).unwrap(), c);
        let mut lines: Vec<&str> = text.lines().collect();
        lines.reverse();
        let shuffled = format!("# reversed\n\n{}", lines.join("\n"));
        assert_eq!(TargetConfig::from_text(&shuffled).unwrap(), c);
        assert!(TargetConfig::from_text("0 1 2\n").is_err());
        assert!(TargetConfig::from_text("1 0 0 0\n").is_err());
    }
}
