//! Discretized 4-connected environment.
//!
//! Cells are addressed by `(x, y)` with `x` the column and `y` the row.
//! "North" is `+y`; neighbor enumeration is always N, E, S, W so that every
//! search that consumes it breaks ties the same way on every run.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Euclidean distance between cell centroids.
    pub fn euclidean(self, other: Cell) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        (dx * dx + dy * dy).sqrt()
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

pub fn manhattan_distance(a: Cell, b: Cell) -> usize {
    a.x.abs_diff(b.x) + a.y.abs_diff(b.y)
}

/// Cardinal orientation. Turning is free; only cell count contributes to cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Heading {
    #[default]
    East,
    North,
    West,
    South,
}

impl Heading {
    pub fn theta(self) -> f64 {
        match self {
            Heading::East => 0.0,
            Heading::North => FRAC_PI_2,
            Heading::West => PI,
            Heading::South => 3.0 * FRAC_PI_2,
        }
    }

    /// Snaps an angle in radians to the nearest cardinal heading.
    pub fn from_theta(theta: f64) -> Self {
        let quarter = (theta.rem_euclid(2.0 * PI) / FRAC_PI_2).round() as i64 % 4;
        match quarter {
            0 => Heading::East,
            1 => Heading::North,
            2 => Heading::West,
            _ => Heading::South,
        }
    }

    /// Heading of a unit move from `from` to `to`, if they are 4-adjacent.
    pub fn between(from: Cell, to: Cell) -> Option<Self> {
        match (to.x as i64 - from.x as i64, to.y as i64 - from.y as i64) {
            (1, 0) => Some(Heading::East),
            (-1, 0) => Some(Heading::West),
            (0, 1) => Some(Heading::North),
            (0, -1) => Some(Heading::South),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub cell: Cell,
    pub heading: Heading,
}

impl Pose {
    pub fn new(cell: Cell, heading: Heading) -> Self {
        Self { cell, heading }
    }

    pub fn theta(&self) -> f64 {
        self.heading.theta()
    }
}

/// Bounded (non-wrapping) rectangular grid with a ground-truth information field.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    width: usize,
    height: usize,
    obstacles: BTreeSet<Cell>,
    field: Vec<f64>,
    field_range: (f64, f64),
}

impl GridMap {
    /// Builds a map from an explicit row-major field.
    pub fn from_field(
        width: usize,
        height: usize,
        field: Vec<f64>,
        field_range: (f64, f64),
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(
                "map dimensions must be positive".into(),
            ));
        }
        if field.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, expected {}",
                field.len(),
                width * height
            )));
        }
        let (low, high) = field_range;
        if let Some(v) = field.iter().find(|v| !(low..=high).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "field value {v} outside [{low}, {high}]"
            )));
        }
        Ok(Self {
            width,
            height,
            obstacles: BTreeSet::new(),
            field,
            field_range,
        })
    }

    /// Map with a constant field, mostly useful in tests.
    pub fn uniform(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_field(width, height, vec![value; width * height], (value, value))
    }

    pub fn with_obstacles(mut self, obstacles: impl IntoIterator<Item = Cell>) -> Result<Self> {
        for c in obstacles {
            self.check(c)?;
            self.obstacles.insert(c);
        }
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn obstacles(&self) -> &BTreeSet<Cell> {
        &self.obstacles
    }

    pub fn field_range(&self) -> (f64, f64) {
        self.field_range
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn check(&self, c: Cell) -> Result<()> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                cell: c,
                width: self.width,
                height: self.height,
            })
        }
    }

    pub fn is_obstacle(&self, c: Cell) -> bool {
        self.obstacles.contains(&c)
    }

    pub fn index(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    /// All cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.len()).map(move |i| self.cell_at(i))
    }

    pub fn value(&self, c: Cell) -> f64 {
        self.field[self.index(c)]
    }

    pub fn field(&self) -> &[f64] {
        &self.field
    }

    /// In-bounds von Neumann neighbors of `c` in N, E, S, W order, skipping
    /// obstacles and anything in `blocked`.
    pub fn neighbors4(&self, c: Cell, blocked: &BTreeSet<Cell>) -> Vec<Cell> {
        let mut out = Vec::with_capacity(4);
        let candidates = [
            (c.y + 1 < self.height).then(|| Cell::new(c.x, c.y + 1)),
            (c.x + 1 < self.width).then(|| Cell::new(c.x + 1, c.y)),
            c.y.checked_sub(1).map(|y| Cell::new(c.x, y)),
            c.x.checked_sub(1).map(|x| Cell::new(x, c.y)),
        ];
        for n in candidates.into_iter().flatten() {
            if !self.obstacles.contains(&n) && !blocked.contains(&n) {
                out.push(n);
            }
        }
        out
    }
}

pub fn neighbors4(c: Cell, map: &GridMap, blocked: &BTreeSet<Cell>) -> Vec<Cell> {
    map.neighbors4(c, blocked)
}

/// Draws an i.i.d. `U[low, high]` field from a ChaCha8 stream seeded with `seed`.
pub fn generate_field(
    seed: u64,
    width: usize,
    height: usize,
    low: f64,
    high: f64,
) -> Result<GridMap> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(
            "map dimensions must be positive".into(),
        ));
    }
    if !(low < high) || !low.is_finite() || !high.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "field range requires low < high, got [{low}, {high}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(low, high);
    let field = (0..width * height).map(|_| dist.sample(&mut rng)).collect();
    GridMap::from_field(width, height, field, (low, high))
}

/// Overlay sets for [`render_ascii`]. Later layers win: path over blocked over explored.
#[derive(Debug, Default, Clone)]
pub struct AsciiLayers<'a> {
    pub blocked: Option<&'a BTreeSet<Cell>>,
    pub explored: Option<&'a BTreeSet<Cell>>,
    pub path: Option<&'a [Cell]>,
}

/// One character per cell, one line per row starting at `y = 0`:
/// `.` free, `#` obstacle or blocked, `o` explored, `*` path.
pub fn render_ascii(map: &GridMap, layers: &AsciiLayers<'_>) -> String {
    let mut grid = vec![b'.'; map.len()];
    if let Some(explored) = layers.explored {
        for &c in explored.iter().filter(|c| map.contains(**c)) {
            grid[map.index(c)] = b'o';
        }
    }
    for &c in map.obstacles() {
        grid[map.index(c)] = b'#';
    }
    if let Some(blocked) = layers.blocked {
        for &c in blocked.iter().filter(|c| map.contains(**c)) {
            grid[map.index(c)] = b'#';
        }
    }
    if let Some(path) = layers.path {
        for &c in path.iter().filter(|c| map.contains(**c)) {
            grid[map.index(c)] = b'*';
        }
    }
    let mut out = String::with_capacity(map.len() + map.height());
    for row in grid.chunks(map.width()) {
        // chunks of ASCII bytes are valid UTF-8
        out.push_str(std::str::from_utf8(row).expect("ascii"));
        out.push('\n');
    }
    out
}

/// Binary (P5) PGM heatmap of a row-major value grid, linearly normalized to
/// 0..=255 over the finite values. Non-finite values render as 0.
pub fn encode_pgm(values: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::InvalidArgument(format!(
            "heatmap has {} values for a {width}x{height} grid",
            values.len()
        )));
    }
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let mut header = String::new();
    let _ = write!(header, "P5\n{width} {height}\n255\n");
    let mut out = header.into_bytes();
    out.extend(values.iter().map(|&v| {
        if !v.is_finite() || !(span > 0.0) {
            0u8
        } else {
            (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
        }
    }));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn empty() -> BTreeSet<Cell> {
        BTreeSet::new()
    }

    #[test]
    fn manhattan_examples() {
        assert_eq!(manhattan_distance(Cell::new(0, 0), Cell::new(0, 0)), 0);
        assert_eq!(manhattan_distance(Cell::new(0, 0), Cell::new(3, 4)), 7);
        assert_eq!(manhattan_distance(Cell::new(2, 5), Cell::new(5, 2)), 6);
        assert_eq!(manhattan_distance(Cell::new(5, 2), Cell::new(2, 5)), 6);
    }

    #[test]
    fn corner_neighbors_in_fixed_order() {
        let map = GridMap::uniform(3, 3, 1.0).unwrap();
        assert_eq!(
            map.neighbors4(Cell::new(0, 0), &empty()),
            vec![Cell::new(0, 1), Cell::new(1, 0)]
        );
    }

    #[test]
    fn interior_neighbors() {
        let map = GridMap::uniform(3, 3, 1.0).unwrap();
        let n = map.neighbors4(Cell::new(1, 1), &empty());
        assert_eq!(
            n,
            vec![
                Cell::new(1, 2),
                Cell::new(2, 1),
                Cell::new(1, 0),
                Cell::new(0, 1)
            ]
        );
        let blocked: BTreeSet<Cell> = [
            Cell::new(1, 0),
            Cell::new(1, 2),
            Cell::new(0, 1),
            Cell::new(2, 1),
        ]
        .into();
        assert!(map.neighbors4(Cell::new(1, 1), &blocked).is_empty());
    }

    #[test]
    fn obstacles_are_skipped() {
        let map = GridMap::uniform(3, 3, 1.0)
            .unwrap()
            .with_obstacles([Cell::new(1, 2)])
            .unwrap();
        assert_eq!(map.neighbors4(Cell::new(1, 1), &empty()).len(), 3);
        assert!(GridMap::uniform(3, 3, 1.0)
            .unwrap()
            .with_obstacles([Cell::new(3, 0)])
            .is_err());
    }

    #[test]
    fn field_is_deterministic_and_in_range() {
        let a = generate_field(42, 30, 30, 1.0, 10.0).unwrap();
        let b = generate_field(42, 30, 30, 1.0, 10.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.field().len(), 900);
        assert!(a.field().iter().all(|v| (1.0..=10.0).contains(v)));
        let c = generate_field(43, 30, 30, 1.0, 10.0).unwrap();
        assert_ne!(a.field(), c.field());
    }

    #[test]
    fn field_mean_near_midpoint() {
        // U[1, 10] has mean 5.5; 900 draws give a standard error of ~0.087.
        for seed in 0..20 {
            let map = generate_field(seed, 30, 30, 1.0, 10.0).unwrap();
            let mean = map.field().iter().sum::<f64>() / map.len() as f64;
            assert!((mean - 5.5).abs() <= 0.5, "seed {seed}: mean {mean}");
        }
    }

    #[test]
    fn field_rejects_bad_arguments() {
        assert!(generate_field(0, 0, 3, 1.0, 10.0).is_err());
        assert!(generate_field(0, 3, 0, 1.0, 10.0).is_err());
        assert!(generate_field(0, 3, 3, 10.0, 10.0).is_err());
        assert!(generate_field(0, 3, 3, 10.0, 1.0).is_err());
    }

    #[test]
    fn heading_roundtrip() {
        for h in [Heading::East, Heading::North, Heading::West, Heading::South] {
            assert_eq!(Heading::from_theta(h.theta()), h);
        }
        assert_eq!(
            Heading::between(Cell::new(1, 1), Cell::new(1, 2)),
            Some(Heading::North)
        );
        assert_eq!(Heading::between(Cell::new(1, 1), Cell::new(2, 2)), None);
    }

    #[test]
    fn ascii_snapshot() {
        let map = GridMap::uniform(3, 2, 1.0).unwrap();
        let blocked: BTreeSet<Cell> = [Cell::new(2, 1)].into();
        let explored: BTreeSet<Cell> = [Cell::new(1, 0), Cell::new(1, 1)].into();
        let path = [Cell::new(0, 0), Cell::new(1, 0)];
        let s = render_ascii(
            &map,
            &AsciiLayers {
                blocked: Some(&blocked),
                explored: Some(&explored),
                path: Some(&path),
            },
        );
        assert_eq!(s, "**.\n.o#\n");
    }

    #[test]
    fn pgm_encoding() {
        let bytes = encode_pgm(&[0.0, 1.0, f64::NEG_INFINITY, 0.5], 2, 2).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 255, 0, 128]);
        assert!(encode_pgm(&[0.0], 2, 2).is_err());
    }

    proptest! {
        #[test]
        fn manhattan_is_a_metric(
            ax in 0usize..50, ay in 0usize..50,
            bx in 0usize..50, by in 0usize..50,
            cx in 0usize..50, cy in 0usize..50,
        ) {
            let (a, b, c) = (Cell::new(ax, ay), Cell::new(bx, by), Cell::new(cx, cy));
            prop_assert_eq!(manhattan_distance(a, b), manhattan_distance(b, a));
            prop_assert_eq!(manhattan_distance(a, b) == 0, a == b);
            prop_assert!(manhattan_distance(a, c) <= manhattan_distance(a, b) + manhattan_distance(b, c));
        }

        #[test]
        fn neighbors_respect_bounds_and_blocks(
            w in 1usize..8, h in 1usize..8,
            x in 0usize..8, y in 0usize..8,
            blocked in proptest::collection::btree_set((0usize..8, 0usize..8), 0..20),
        ) {
            let map = GridMap::uniform(w, h, 1.0).unwrap();
            let c = Cell::new(x % w, y % h);
            let blocked: BTreeSet<Cell> = blocked.into_iter().map(|(x, y)| Cell::new(x, y)).collect();
            let n = map.neighbors4(c, &blocked);
            prop_assert!(n.len() <= 4);
            for m in n {
                prop_assert!(map.contains(m));
                prop_assert!(!blocked.contains(&m));
                prop_assert_eq!(manhattan_distance(c, m), 1);
            }
        }
    }
}
