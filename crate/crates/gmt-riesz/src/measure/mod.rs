//! Weighted atom clouds standing in for compactly supported Radon measures.

pub mod generate;
mod io;
pub mod kdtree;

pub use generate::{generate, GeneratorSettings, MeasureKind};
pub use io::{read_measure, write_measure, MeasureDoc};

use kdtree::{dist2, KdTree};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("measure has no atoms")]
    Empty,
    #[error("atom {index} has invalid weight {weight}")]
    BadWeight { index: usize, weight: f64 },
    #[error("atom {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("coordinate buffer of length {len} does not match dimension {dim}")]
    DimensionMismatch { len: usize, dim: usize },
    #[error("ambient dimension {ambient} must equal growth dimension {growth} + 1")]
    Codimension { ambient: usize, growth: usize },
    #[error("unknown measure kind `{0}`")]
    UnknownKind(String),
    #[error("generator would produce {requested} atoms, above the cap of {cap}")]
    AtomCap { requested: u128, cap: usize },
    #[error("ball radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed input: {0}")]
    Malformed(String),
}

/// Closed Euclidean ball.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self, MeasureError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(MeasureError::BadRadius(radius));
        }
        Ok(Ball { center, radius })
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        dist2(p, &self.center) <= self.radius * self.radius
    }

    pub fn scaled(&self, factor: f64) -> Ball {
        Ball { center: self.center.clone(), radius: self.radius * factor }
    }
}

/// Per-node label summary built by [`DiscreteMeasure::label_index`].
#[derive(Debug, Clone)]
pub struct LabelIndex {
    node_labels: Vec<u32>,
}

/// Immutable weighted point cloud in R^{n+1} with growth dimension n.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    dim_ambient: usize,
    dim_growth: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
    total_mass: f64,
    index: KdTree,
}

impl DiscreteMeasure {
    pub fn new(dim_growth: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        let dim = dim_growth + 1;
        if weights.is_empty() {
            return Err(MeasureError::Empty);
        }
        if coords.len() != dim * weights.len() {
            return Err(MeasureError::DimensionMismatch { len: coords.len(), dim });
        }
        for (index, &weight) in weights.iter().enumerate() {
            if !(weight >= 0.0 && weight.is_finite()) {
                return Err(MeasureError::BadWeight { index, weight });
            }
            if coords[index * dim..(index + 1) * dim].iter().any(|c| !c.is_finite()) {
                return Err(MeasureError::NonFinite { index });
            }
        }
        let total_mass = weights.iter().sum();
        let index = KdTree::build(dim, &coords, &weights);
        Ok(DiscreteMeasure { dim_ambient: dim, dim_growth, coords, weights, total_mass, index })
    }

    pub fn from_points(dim_growth: usize, points: &[Vec<f64>], weights: Vec<f64>) -> Result<Self, MeasureError> {
        let dim = dim_growth + 1;
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(MeasureError::DimensionMismatch { len: p.len(), dim });
            }
            coords.extend_from_slice(p);
        }
        Self::new(dim_growth, coords, weights)
    }

    pub fn dim_ambient(&self) -> usize {
        self.dim_ambient
    }

    pub fn dim_growth(&self) -> usize {
        self.dim_growth
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn position(&self, atom: usize) -> &[f64] {
        &self.coords[atom * self.dim_ambient..(atom + 1) * self.dim_ambient]
    }

    pub fn weight(&self, atom: usize) -> f64 {
        self.weights[atom]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        dist2(self.position(a), self.position(b)).sqrt()
    }

    /// μ(B) for the closed ball B.
    pub fn mass_in_ball(&self, ball: &Ball) -> f64 {
        self.mass_within(&ball.center, ball.radius)
    }

    pub fn mass_within(&self, center: &[f64], radius: f64) -> f64 {
        self.index.ball_mass(&self.coords, &self.weights, center, radius)
    }

    /// μ(B(center, r)) for each radius of an ascending list.
    pub fn mass_profile(&self, center: &[f64], radii: &[f64]) -> Vec<f64> {
        self.index.ball_masses(&self.coords, &self.weights, center, radii)
    }

    /// Spatial summary of a per-atom labelling for [`DiscreteMeasure::nearest_other_label`].
    pub fn label_index(&self, labels: &[u32]) -> LabelIndex {
        LabelIndex { node_labels: self.index.uniform_labels(labels) }
    }

    /// Nearest atom within `max_dist` whose label differs from `own`.
    pub fn nearest_other_label(&self, point: &[f64], max_dist: f64, labels: &[u32], index: &LabelIndex, own: u32) -> Option<(usize, f64)> {
        self.index.nearest_other_label(&self.coords, point, max_dist, labels, &index.node_labels, own)
    }

    pub fn atoms_within(&self, center: &[f64], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.index.for_each_in_ball(&self.coords, center, radius, |i| out.push(i));
        out
    }

    pub fn for_each_within(&self, center: &[f64], radius: f64, visit: impl FnMut(usize)) {
        self.index.for_each_in_ball(&self.coords, center, radius, visit);
    }

    pub fn nearest_other(&self, atom: usize) -> Option<(usize, f64)> {
        self.index.nearest_excluding(&self.coords, self.position(atom), Some(atom))
    }

    pub fn nearest_to(&self, point: &[f64]) -> Option<(usize, f64)> {
        self.index.nearest_excluding(&self.coords, point, None)
    }

    /// Nearest atom accepted by `keep`, searching only up to `max_dist`.
    pub fn nearest_where(&self, point: &[f64], max_dist: f64, keep: impl Fn(usize) -> bool) -> Option<(usize, f64)> {
        self.index.nearest_where(&self.coords, point, max_dist, keep)
    }

    /// Smallest distance between two distinct atoms; infinite for one atom.
    pub fn min_gap(&self) -> f64 {
        (0..self.len()).filter_map(|i| self.nearest_other(i).map(|(_, d)| d)).fold(f64::INFINITY, f64::min)
    }

    /// Axis-aligned bounding box as (lower, upper).
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim_ambient];
        let mut hi = vec![f64::NEG_INFINITY; self.dim_ambient];
        for atom in 0..self.len() {
            for (axis, &c) in self.position(atom).iter().enumerate() {
                lo[axis] = lo[axis].min(c);
                hi[axis] = hi[axis].max(c);
            }
        }
        (lo, hi)
    }

    /// Diameter of the support (exact over atom pairs for small clouds,
    /// bounding-box diagonal otherwise).
    pub fn diameter(&self) -> f64 {
        if self.len() <= 2048 {
            let mut best: f64 = 0.0;
            for a in 0..self.len() {
                for b in a + 1..self.len() {
                    best = best.max(dist2(self.position(a), self.position(b)));
                }
            }
            best.sqrt()
        } else {
            let (lo, hi) = self.bounding_box();
            dist2(&lo, &hi).sqrt()
        }
    }

    /// Affine rescaling of the support into the unit cube, largest side 1.
    pub fn normalized(&self) -> Result<Self, MeasureError> {
        let (lo, hi) = self.bounding_box();
        let extent = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
        let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };
        let coords = self.coords.chunks(self.dim_ambient).flat_map(|p| p.iter().zip(&lo).map(|(c, l)| (c - l) * scale).collect::<Vec<_>>()).collect();
        Self::new(self.dim_growth, coords, self.weights.clone())
    }

    /// Restriction to a subset of atoms (indices into this measure).
    pub fn restrict(&self, atoms: &[usize]) -> Result<Self, MeasureError> {
        let coords = atoms.iter().flat_map(|&a| self.position(a).iter().copied()).collect();
        let weights = atoms.iter().map(|&a| self.weights[a]).collect();
        Self::new(self.dim_growth, coords, weights)
    }

    /// Lower bound for the polynomial growth constant sup μ(B(x,r))/rⁿ over atom
    /// centers and ratio-2 radii from the minimal gap up to the diameter.
    /// A single atom has unbounded density and returns +∞.
    pub fn growth_constant(&self) -> f64 {
        if self.len() < 2 {
            return f64::INFINITY;
        }
        let gap = self.min_gap();
        if gap <= 0.0 {
            return f64::INFINITY;
        }
        let diam = self.diameter();
        let mut radii = Vec::new();
        let mut r = gap;
        while r < diam {
            radii.push(r);
            r *= 2.0;
        }
        radii.push(diam);
        let n = self.dim_growth as i32;
        (0..self.len())
            .map(|atom| radii.iter().map(|&r| self.mass_within(self.position(atom), r) / r.powi(n)).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }
}
