//! Nonnegative 1-Lipschitz suppression functions Φ.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::measure::kdtree::dist2;
use crate::measure::DiscreteMeasure;

/// Caller-supplied Φ.
pub type Evaluator = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Φ: R^{n+1} → [0, ∞).
#[derive(Clone)]
pub enum SuppressionFn {
    Zero,
    /// max(0, offset + ⟨slope, x⟩) with |slope| ≤ 1.
    Affine {
        offset: f64,
        slope: Vec<f64>,
    },
    /// min over sites of (offset_i + |x − p_i|), e.g. Ψ(x) = inf_Q (ℓ(Q) + dist(x, Q)).
    SiteDistance(Arc<SiteDistance>),
    /// Arbitrary evaluator; the caller vouches for the Lipschitz bound.
    Custom(Arc<Evaluator>),
}

impl fmt::Debug for SuppressionFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SuppressionFn::Zero => write!(f, "Zero"),
            SuppressionFn::Affine { offset, slope } => write!(f, "Affine({offset}, {slope:?})"),
            SuppressionFn::SiteDistance(s) => write!(f, "SiteDistance({} sites)", s.offsets.len()),
            SuppressionFn::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Sites with additive offsets, indexed for min(offset + distance) queries.
pub struct SiteDistance {
    sites: DiscreteMeasure,
    offsets: Vec<f64>,
    min_offset: f64,
}

impl SiteDistance {
    /// `points` holds one row per site; offsets must be nonnegative.
    pub fn new(dim_growth: usize, points: &[Vec<f64>], offsets: Vec<f64>) -> Option<Self> {
        if points.is_empty() || points.len() != offsets.len() || offsets.iter().any(|&o| !(o >= 0.0 && o.is_finite())) {
            return None;
        }
        let sites = DiscreteMeasure::from_points(dim_growth, points, vec![1.0; points.len()]).ok()?;
        let min_offset = offsets.iter().copied().fold(f64::INFINITY, f64::min);
        Some(SiteDistance { sites, offsets, min_offset })
    }

    /// (value, minimizing site).
    fn eval(&self, x: &[f64]) -> (f64, usize) {
        let (first, d) = self.sites.nearest_to(x).expect("nonempty site set");
        let mut best = (self.offsets[first] + d, first);
        // Any better site lies within best − min_offset of x.
        self.sites.for_each_within(x, best.0 - self.min_offset, |i| {
            let value = self.offsets[i] + dist2(self.sites.position(i), x).sqrt();
            if value < best.0 {
                best = (value, i);
            }
        });
        best
    }
}

impl SuppressionFn {
    pub fn affine(offset: f64, slope: Vec<f64>) -> Option<Self> {
        (slope.iter().map(|s| s * s).sum::<f64>() <= 1.0 + 1e-12).then_some(SuppressionFn::Affine { offset, slope })
    }

    pub fn site_distance(sites: SiteDistance) -> Self {
        SuppressionFn::SiteDistance(Arc::new(sites))
    }

    pub fn custom(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        SuppressionFn::Custom(Arc::new(f))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            SuppressionFn::Zero => 0.0,
            SuppressionFn::Affine { offset, slope } => (offset + slope.iter().zip(x).map(|(s, v)| s * v).sum::<f64>()).max(0.0),
            SuppressionFn::SiteDistance(s) => s.eval(x).0,
            SuppressionFn::Custom(f) => f(x).max(0.0),
        }
    }

    /// ∇Φ(x) where Φ is differentiable and the variant knows its closed form.
    pub fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        match self {
            SuppressionFn::Zero => Some(vec![0.0; x.len()]),
            SuppressionFn::Affine { slope, .. } => Some(if self.eval(x) > 0.0 { slope.clone() } else { vec![0.0; x.len()] }),
            SuppressionFn::SiteDistance(s) => {
                let (_, site) = s.eval(x);
                let p = s.sites.position(site);
                let d = dist2(p, x).sqrt();
                (d > 0.0).then(|| x.iter().zip(p).map(|(a, b)| (a - b) / d).collect())
            }
            SuppressionFn::Custom(_) => None,
        }
    }

    /// Largest |Φ(x) − Φ(y)|/|x − y| over nearest-neighbour pairs and
    /// `random_pairs` random pairs of atoms.
    pub fn lipschitz_estimate(&self, mu: &DiscreteMeasure, random_pairs: usize, seed: u64) -> f64 {
        let values: Vec<f64> = (0..mu.len()).map(|a| self.eval(mu.position(a))).collect();
        let slope = |a: usize, b: usize| {
            let d = mu.distance(a, b);
            if d > 0.0 {
                (values[a] - values[b]).abs() / d
            } else {
                0.0
            }
        };
        let mut worst: f64 = 0.0;
        for a in 0..mu.len() {
            if let Some((b, _)) = mu.nearest_other(a) {
                worst = worst.max(slope(a, b));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..random_pairs {
            let (a, b) = (rng.gen_range(0..mu.len()), rng.gen_range(0..mu.len()));
            worst = worst.max(slope(a, b));
        }
        worst
    }
}
