//! Gaussian-process belief over the information field.
//!
//! Squared-exponential kernel over Euclidean cell distance. The noise term is
//! part of the kernel itself: `k(a, a)` includes it, so a cell that has been
//! observed has zero posterior variance at that cell.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{E, PI};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Cell, GridMap};

/// Entropy reported for a cell whose posterior variance is exactly zero.
pub const ZERO_VARIANCE_ENTROPY: f64 = f64::NEG_INFINITY;

/// Diagonal jitter ladder tried, in order, when a factorization fails.
pub const JITTER_LADDER: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Posterior variances below this fraction of the prior variance are rounded to zero.
const RELATIVE_VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub prior_mean: f64,
}

impl GpHyperparams {
    pub fn new(
        length_scale: f64,
        signal_variance: f64,
        noise_variance: f64,
        prior_mean: f64,
    ) -> Result<Self> {
        let hp = Self {
            length_scale,
            signal_variance,
            noise_variance,
            prior_mean,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "length_scale must be > 0, got {}",
                self.length_scale
            )));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "signal_variance must be > 0, got {}",
                self.signal_variance
            )));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_variance must be >= 0, got {}",
                self.noise_variance
            )));
        }
        if !self.prior_mean.is_finite() {
            return Err(Error::InvalidArgument("prior_mean must be finite".into()));
        }
        Ok(())
    }

    pub fn prior_variance(&self) -> f64 {
        self.signal_variance + self.noise_variance
    }
}

pub fn kernel(a: Cell, b: Cell, hp: &GpHyperparams) -> f64 {
    let d = a.euclidean(b);
    let k = hp.signal_variance * (-(d * d) / (2.0 * hp.length_scale * hp.length_scale)).exp();
    if a == b {
        k + hp.noise_variance
    } else {
        k
    }
}

/// Differential entropy `½ ln(2πe σ²)` in nats.
pub fn entropy_from_variance(variance: f64) -> f64 {
    if variance > 0.0 {
        0.5 * (2.0 * PI * E * variance).ln()
    } else {
        ZERO_VARIANCE_ENTROPY
    }
}

fn kernel_matrix(cells: &[Cell], hp: &GpHyperparams) -> DMatrix<f64> {
    let n = cells.len();
    DMatrix::from_fn(n, n, |i, j| kernel(cells[i], cells[j], hp))
}

/// Lower Cholesky factor of `k + jitter·I`, walking up [`JITTER_LADDER`].
fn factor_with_jitter(k: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    for &jitter in &JITTER_LADDER {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = m.cholesky() {
            return Ok((chol.unpack(), jitter));
        }
    }
    Err(Error::Factorization {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b)
        .expect("cholesky factor has a positive diagonal")
}

/// A GP conditioned on an ordered set of distinct observed cells.
///
/// Holds the lower Cholesky factor of the observed covariance and the weight
/// vector `Σ_OO⁻¹ (X_O − μ_O)`; both are extended in place on [`GpState::observe`].
#[derive(Debug, Clone)]
pub struct GpState {
    hp: GpHyperparams,
    observed: Vec<(Cell, f64)>,
    index: HashMap<Cell, usize>,
    chol: DMatrix<f64>,
    jitter: f64,
    weights: DVector<f64>,
}

impl GpState {
    pub fn new(hp: GpHyperparams) -> Result<Self> {
        hp.validate()?;
        Ok(Self {
            hp,
            observed: Vec::new(),
            index: HashMap::new(),
            chol: DMatrix::zeros(0, 0),
            jitter: 0.0,
            weights: DVector::zeros(0),
        })
    }

    /// Conditions on `observations` in order; duplicate cells after the first are ignored.
    pub fn with_observations(hp: GpHyperparams, observations: &[(Cell, f64)]) -> Result<Self> {
        let mut state = Self::new(hp)?;
        for &(c, v) in observations {
            if state.index.contains_key(&c) {
                continue;
            }
            state.index.insert(c, state.observed.len());
            state.observed.push((c, v));
        }
        state.rebuild()?;
        Ok(state)
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hp
    }

    pub fn observed(&self) -> &[(Cell, f64)] {
        &self.observed
    }

    pub fn is_observed(&self, c: Cell) -> bool {
        self.index.contains_key(&c)
    }

    /// Diagonal jitter currently baked into the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn observed_cells(&self) -> Vec<Cell> {
        self.observed.iter().map(|(c, _)| *c).collect()
    }

    fn residuals(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.observed.len(),
            self.observed.iter().map(|(_, v)| v - self.hp.prior_mean),
        )
    }

    fn rebuild(&mut self) -> Result<()> {
        let k = kernel_matrix(&self.observed_cells(), &self.hp);
        let (l, jitter) = factor_with_jitter(&k)?;
        self.chol = l;
        self.jitter = jitter;
        self.refresh_weights();
        Ok(())
    }

    fn refresh_weights(&mut self) {
        let r = self.residuals();
        let z = solve_lower(&self.chol, &r);
        self.weights = self
            .chol
            .tr_solve_lower_triangular(&z)
            .expect("cholesky factor has a positive diagonal");
    }

    /// Moves `c` into the observed set with measurement `value`.
    /// Re-observing a cell leaves the state unchanged.
    pub fn observe(&mut self, c: Cell, value: f64) -> Result<()> {
        if self.index.contains_key(&c) {
            return Ok(());
        }
        let n = self.observed.len();
        let cross = DVector::from_iterator(
            n,
            self.observed.iter().map(|(o, _)| kernel(*o, c, &self.hp)),
        );
        let row = solve_lower(&self.chol, &cross);
        let pivot = kernel(c, c, &self.hp) + self.jitter - row.dot(&row);

        self.index.insert(c, n);
        self.observed.push((c, value));

        if pivot > RELATIVE_VARIANCE_FLOOR * self.hp.prior_variance() && pivot.is_finite() {
            let mut l = DMatrix::zeros(n + 1, n + 1);
            l.view_mut((0, 0), (n, n)).copy_from(&self.chol);
            for j in 0..n {
                l[(n, j)] = row[j];
            }
            l[(n, n)] = pivot.sqrt();
            self.chol = l;
            self.refresh_weights();
            Ok(())
        } else {
            let rebuilt = self.rebuild();
            if rebuilt.is_err() {
                self.observed.pop();
                self.index.remove(&c);
                self.rebuild()?;
            }
            rebuilt
        }
    }

    /// Posterior means and variances (diagonal only) at each query cell.
    pub fn posterior(&self, query: &[Cell]) -> (Vec<f64>, Vec<f64>) {
        let prior_var = self.hp.prior_variance();
        if self.observed.is_empty() {
            return (
                vec![self.hp.prior_mean; query.len()],
                vec![prior_var; query.len()],
            );
        }
        let n = self.observed.len();
        let cross = DMatrix::from_fn(n, query.len(), |i, j| {
            kernel(self.observed[i].0, query[j], &self.hp)
        });
        let v = self
            .chol
            .solve_lower_triangular(&cross)
            .expect("cholesky factor has a positive diagonal");
        let mut means = Vec::with_capacity(query.len());
        let mut vars = Vec::with_capacity(query.len());
        for j in 0..query.len() {
            let col = cross.column(j);
            means.push(self.hp.prior_mean + col.dot(&self.weights));
            let explained = v.column(j).norm_squared();
            let var = prior_var - explained;
            vars.push(if var <= RELATIVE_VARIANCE_FLOOR * prior_var {
                0.0
            } else {
                var
            });
        }
        (means, vars)
    }

    pub fn posterior_variance(&self, c: Cell) -> f64 {
        self.posterior(&[c]).1[0]
    }

    pub fn cell_entropy(&self, c: Cell) -> f64 {
        entropy_from_variance(self.posterior_variance(c))
    }

    pub fn snapshot(&self) -> GpSnapshot {
        GpSnapshot {
            length_scale: self.hp.length_scale,
            signal_variance: self.hp.signal_variance,
            noise_variance: self.hp.noise_variance,
            prior_mean: self.hp.prior_mean,
            observations: self.observed.iter().map(|(c, v)| (c.x, c.y, *v)).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.snapshot()).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: GpSnapshot =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        snap.restore()
    }
}

/// Replayable text form of a [`GpState`]: hyperparameters plus `[x, y, value]` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSnapshot {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub prior_mean: f64,
    pub observations: Vec<(usize, usize, f64)>,
}

impl GpSnapshot {
    pub fn restore(&self) -> Result<GpState> {
        let hp = GpHyperparams::new(
            self.length_scale,
            self.signal_variance,
            self.noise_variance,
            self.prior_mean,
        )?;
        let obs: Vec<(Cell, f64)> = self
            .observations
            .iter()
            .map(|&(x, y, v)| (Cell::new(x, y), v))
            .collect();
        GpState::with_observations(hp, &obs)
    }
}

/// Per-cell conditional entropy lookup used by the planners.
pub trait EntropySource {
    fn entropy(&self, c: Cell) -> f64;
}

impl EntropySource for GpState {
    fn entropy(&self, c: Cell) -> f64 {
        self.cell_entropy(c)
    }
}

/// Entropies of a frozen GP state over a whole map, computed on first access
/// per cell and cached. Safe to share across threads.
#[derive(Debug)]
pub struct EntropyField<'a> {
    gp: &'a GpState,
    width: usize,
    height: usize,
    cache: Vec<OnceLock<f64>>,
}

impl<'a> EntropyField<'a> {
    pub fn new(gp: &'a GpState, map: &GridMap) -> Self {
        Self {
            gp,
            width: map.width(),
            height: map.height(),
            cache: (0..map.len()).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn gp(&self) -> &GpState {
        self.gp
    }

    /// All entropies in row-major order.
    pub fn to_vec(&self) -> Vec<f64> {
        let missing: Vec<usize> = (0..self.cache.len())
            .filter(|&i| self.cache[i].get().is_none())
            .collect();
        if !missing.is_empty() {
            let cells: Vec<Cell> = missing
                .iter()
                .map(|&i| Cell::new(i % self.width, i / self.width))
                .collect();
            let (_, vars) = self.gp.posterior(&cells);
            for (&i, v) in missing.iter().zip(vars) {
                let _ = self.cache[i].set(entropy_from_variance(v));
            }
        }
        self.cache
            .iter()
            .map(|c| *c.get().expect("filled above"))
            .collect()
    }
}

impl EntropySource for EntropyField<'_> {
    fn entropy(&self, c: Cell) -> f64 {
        if c.x >= self.width || c.y >= self.height {
            return self.gp.cell_entropy(c);
        }
        *self.cache[c.y * self.width + c.x].get_or_init(|| self.gp.cell_entropy(c))
    }
}

/// Fixed per-cell entropies, row-major. Handy for tests and replay.
#[derive(Debug, Clone)]
pub struct StaticEntropy {
    width: usize,
    values: Vec<f64>,
}

impl StaticEntropy {
    pub fn new(width: usize, values: Vec<f64>) -> Self {
        Self { width, values }
    }

    pub fn constant(map: &GridMap, value: f64) -> Self {
        Self::new(map.width(), vec![value; map.len()])
    }
}

impl EntropySource for StaticEntropy {
    fn entropy(&self, c: Cell) -> f64 {
        self.values[c.y * self.width + c.x]
    }
}

/// Candidate values for the exhaustive likelihood search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGrid {
    pub length_scales: Vec<f64>,
    pub signal_variances: Vec<f64>,
    pub noise_variances: Vec<f64>,
    /// Upper bound on training points used for fitting; larger sets are
    /// subsampled with the fitting seed.
    pub max_points: Option<usize>,
}

impl CandidateGrid {
    /// `n` values geometrically spaced from `lo` to `hi` inclusive.
    pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![lo],
            _ => {
                let step = (hi / lo).ln() / (n - 1) as f64;
                (0..n).map(|i| lo * (step * i as f64).exp()).collect()
            }
        }
    }

    /// Default search space, scaled to the variance of the training values.
    pub fn scaled_default(sample_variance: f64) -> Self {
        let v = if sample_variance > 0.0 {
            sample_variance
        } else {
            1.0
        };
        Self {
            length_scales: Self::log_spaced(0.5, 8.0, 5),
            signal_variances: Self::log_spaced(0.25 * v, 2.0 * v, 4),
            noise_variances: Self::log_spaced(1e-3 * v, v, 4),
            max_points: Some(150),
        }
    }

    /// Candidates with length scale outermost, then signal, then noise variance.
    pub fn candidates(&self, prior_mean: f64) -> impl Iterator<Item = GpHyperparams> + '_ {
        self.length_scales.iter().flat_map(move |&l| {
            self.signal_variances.iter().flat_map(move |&s| {
                self.noise_variances.iter().map(move |&n| GpHyperparams {
                    length_scale: l,
                    signal_variance: s,
                    noise_variance: n,
                    prior_mean,
                })
            })
        })
    }

    pub fn len(&self) -> usize {
        self.length_scales.len() * self.signal_variances.len() * self.noise_variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Log marginal likelihood of `training` under `hp`, using the jitter ladder.
pub fn log_marginal_likelihood(training: &[(Cell, f64)], hp: &GpHyperparams) -> Result<f64> {
    let cells: Vec<Cell> = training.iter().map(|(c, _)| *c).collect();
    let k = kernel_matrix(&cells, hp);
    let (l, _) = factor_with_jitter(&k)?;
    let r = DVector::from_iterator(
        training.len(),
        training.iter().map(|(_, v)| v - hp.prior_mean),
    );
    let z = solve_lower(&l, &r);
    let log_det_half: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
    Ok(-0.5 * z.dot(&z) - log_det_half - 0.5 * training.len() as f64 * (2.0 * PI).ln())
}

/// Maximum-likelihood hyperparameters over `grid`. The prior mean is the
/// training sample mean; ties go to the earliest candidate.
pub fn fit_hyperparameters(
    training: &[(Cell, f64)],
    grid: &CandidateGrid,
    seed: u64,
) -> Result<GpHyperparams> {
    if training.len() < 2 {
        return Err(Error::InvalidArgument(
            "fitting needs at least two training points".into(),
        ));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty candidate grid".into()));
    }
    let mut sorted: BTreeMap<Cell, f64> = BTreeMap::new();
    for &(c, v) in training {
        if sorted.insert(c, v).is_some() {
            return Err(Error::DuplicateCell(c));
        }
    }
    let mut points: Vec<(Cell, f64)> = sorted.into_iter().collect();
    let prior_mean = points.iter().map(|(_, v)| v).sum::<f64>() / points.len() as f64;
    if let Some(cap) = grid.max_points {
        if points.len() > cap.max(2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            points.shuffle(&mut rng);
            points.truncate(cap.max(2));
            points.sort_by_key(|(c, _)| *c);
        }
    }

    let mut best: Option<(f64, GpHyperparams)> = None;
    for hp in grid.candidates(prior_mean) {
        if hp.validate().is_err() {
            continue;
        }
        let Ok(ll) = log_marginal_likelihood(&points, &hp) else {
            continue;
        };
        if ll.is_finite() && best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, hp));
        }
    }
    best.map(|(_, hp)| hp).ok_or(Error::Factorization {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}
