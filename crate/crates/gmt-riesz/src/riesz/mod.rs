//! Riesz kernel sums on discrete measures: truncated, principal value,
//! maximal and suppressed transforms, W-energy, Cotlar sides, localized
//! transforms and a Barnes–Hut backend.

pub mod haar;
mod suppression;
pub mod tree;


pub use suppression::{SiteDistance, SuppressionFn};

use std::collections::HashSet;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{CubeId, Lattice};
use crate::measure::kdtree::dist2;
use crate::measure::DiscreteMeasure;
use tree::SourceTree;

#[derive(Debug, Error)]
pub enum RieszError {
    #[error("atoms {first} and {second} coincide with positive weights; merge them first")]
    CoincidentAtoms { first: usize, second: usize },
    #[error("target point coincides with atom {atom}")]
    CoincidentTarget { atom: usize },
    #[error("family cells {first:?} and {second:?} overlap")]
    OverlappingFamily { first: CubeId, second: CubeId },
    #[error("tree accuracy must lie in (0, 0.1], got {0}")]
    Accuracy(f64),
    #[error("unknown backend '{0}', expected direct or tree")]
    UnknownBackend(String),
    #[error("field has {found} rows, expected {expected}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One vector per atom, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    dim: usize,
    values: Vec<f64>,
}

impl VectorField {
    pub fn zeros(len: usize, dim: usize) -> Self {
        VectorField { dim, values: vec![0.0; len * dim] }
    }

    /// Panics unless `values.len()` is a multiple of `dim`.
    pub fn from_values(dim: usize, values: Vec<f64>) -> Self {
        assert!(dim > 0 && values.len().is_multiple_of(dim), "values do not form rows of length {dim}");
        VectorField { dim, values }
    }

    /// Scalar field (`dim` = 1).
    pub fn scalar(values: Vec<f64>) -> Self {
        VectorField { dim: 1, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, atom: usize) -> &[f64] {
        &self.values[atom * self.dim..(atom + 1) * self.dim]
    }

    pub fn get_mut(&mut self, atom: usize) -> &mut [f64] {
        &mut self.values[atom * self.dim..(atom + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self, atom: usize) -> f64 {
        self.get(atom).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        (0..self.len()).map(|a| self.norm(a)).fold(0.0, f64::max)
    }

    /// ‖f‖²_{L²(μ)}.
    pub fn l2_norm_sq(&self, mu: &DiscreteMeasure) -> f64 {
        (0..self.len()).map(|a| mu.weight(a) * self.norm(a).powi(2)).sum()
    }

    /// ⟨f, g⟩_{L²(μ)}.
    pub fn inner(&self, other: &VectorField, mu: &DiscreteMeasure) -> f64 {
        (0..self.len()).map(|a| mu.weight(a) * self.get(a).iter().zip(other.get(a)).map(|(x, y)| x * y).sum::<f64>()).sum()
    }

    /// Σ_x w(x) f(x).
    pub fn weighted_sum(&self, mu: &DiscreteMeasure) -> Vec<f64> {
        let mut total = vec![0.0; self.dim];
        for a in 0..self.len() {
            for (t, v) in total.iter_mut().zip(self.get(a)) {
                *t += mu.weight(a) * v;
            }
        }
        total
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// CSV with columns `atom_index, v_0, ..., v_{dim-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), RieszError> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["atom_index".to_string()];
        header.extend((0..self.dim).map(|i| format!("v_{i}")));
        writer.write_record(&header)?;
        for a in 0..self.len() {
            let mut row = vec![a.to_string()];
            row.extend(self.get(a).iter().map(|v| format!("{v:e}")));
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Summation strategy for full-measure kernel sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backend {
    Direct,
    /// Barnes–Hut with a relative accuracy target in (0, 0.1].
    Tree {
        accuracy: f64,
    },
}

impl Backend {
    pub fn tree(accuracy: f64) -> Result<Self, RieszError> {
        if accuracy > 0.0 && accuracy <= 0.1 {
            Ok(Backend::Tree { accuracy })
        } else {
            Err(RieszError::Accuracy(accuracy))
        }
    }
}

impl FromStr for Backend {
    type Err = RieszError;

    /// `direct` or `tree` (accuracy 1e-3).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(Backend::Direct),
            "tree" => Ok(Backend::Tree { accuracy: 1e-3 }),
            other => Err(RieszError::UnknownBackend(other.to_string())),
        }
    }
}

/// Adds weight·(x−y)/(|x−y|² + Φx·Φy)^{(n+1)/2} to `out`.
#[inline]
pub(crate) fn accumulate_kernel(x: &[f64], y: &[f64], phi_x: f64, phi_y: f64, weight: f64, n: usize, out: &mut [f64]) {
    let denom_sq = dist2(x, y) + phi_x * phi_y;
    if denom_sq == 0.0 {
        return;
    }
    let scale = weight / denom_sq.sqrt().powi(n as i32 + 1);
    for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
        *o += scale * (a - b);
    }
}

/// (x−y)/|x−y|^{n+1}, zero when x = y.
pub fn riesz_kernel(x: &[f64], y: &[f64], n: usize) -> Vec<f64> {
    suppressed_kernel_values(x, y, 0.0, 0.0, n)
}

/// K_Φ(x, y) given Φ(x) and Φ(y); zero when x = y.
pub fn suppressed_kernel_values(x: &[f64], y: &[f64], phi_x: f64, phi_y: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    if x != y {
        accumulate_kernel(x, y, phi_x, phi_y, 1.0, n, &mut out);
    }
    out
}

/// K_Φ(x, y) = (x−y)/(|x−y|² + Φ(x)Φ(y))^{(n+1)/2}.
pub fn suppressed_kernel(x: &[f64], y: &[f64], phi: &SuppressionFn, n: usize) -> Vec<f64> {
    suppressed_kernel_values(x, y, phi.eval(x), phi.eval(y), n)
}

/// Jacobians (∂K_i/∂x_j, ∂K_i/∂y_j) of K_Φ, row-major, given Φ and ∇Φ at
/// both points. Requires x ≠ y or Φ(x)Φ(y) > 0.
pub fn suppressed_kernel_jacobians(x: &[f64], y: &[f64], phi_x: f64, phi_y: f64, grad_x: &[f64], grad_y: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let dim = x.len();
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let denom_sq = dist2(x, y) + phi_x * phi_y;
    let power = (n as f64 + 1.0) / 2.0;
    let lead = denom_sq.powf(-power);
    let slope = power * denom_sq.powf(-power - 1.0);
    let mut jac_x = vec![0.0; dim * dim];
    let mut jac_y = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            let delta = if i == j { lead } else { 0.0 };
            let dx = 2.0 * diff[j] + phi_y * grad_x[j];
            let dy = -2.0 * diff[j] + phi_x * grad_y[j];
            jac_x[i * dim + j] = delta - slope * diff[i] * dx;
            jac_y[i * dim + j] = -delta - slope * diff[i] * dy;
        }
    }
    (jac_x, jac_y)
}

/// R_ε μ(x) = Σ_{|x−y|>ε} w(y)(x−y)/|x−y|^{n+1}.
pub fn truncated_riesz(mu: &DiscreteMeasure, x: &[f64], eps: f64) -> Vec<f64> {
    let n = mu.dim_growth();
    let eps2 = eps * eps;
    let mut out = vec![0.0; x.len()];
    for a in 0..mu.len() {
        let y = mu.position(a);
        if dist2(x, y) > eps2 {
            accumulate_kernel(x, y, 0.0, 0.0, mu.weight(a), n, &mut out);
        }
    }
    out
}

/// Errors on two coincident atoms of positive weight.
pub fn check_distinct_atoms(mu: &DiscreteMeasure) -> Result<(), RieszError> {
    for a in 0..mu.len() {
        if mu.weight(a) == 0.0 {
            continue;
        }
        let mut clash = None;
        mu.for_each_within(mu.position(a), 0.0, |b| {
            if b != a && mu.weight(b) > 0.0 && dist2(mu.position(a), mu.position(b)) == 0.0 {
                clash = Some(b);
            }
        });
        if let Some(b) = clash {
            return Err(RieszError::CoincidentAtoms { first: a.min(b), second: a.max(b) });
        }
    }
    Ok(())
}

/// Atomized principal value: Σ_{y≠x} w(y)(x−y)/|x−y|^{n+1} at every atom,
/// summed directly.
pub fn pv_riesz_at_atoms(mu: &DiscreteMeasure) -> Result<VectorField, RieszError> {
    field_at_atoms(mu, &SuppressionFn::Zero, Backend::Direct)
}

/// Principal value field with the chosen backend.
pub fn pv_field(mu: &DiscreteMeasure, backend: Backend) -> Result<VectorField, RieszError> {
    field_at_atoms(mu, &SuppressionFn::Zero, backend)
}

/// R_Φ μ at every atom, self-pair excluded.
pub fn suppressed_field(mu: &DiscreteMeasure, phi: &SuppressionFn, backend: Backend) -> Result<VectorField, RieszError> {
    field_at_atoms(mu, phi, backend)
}

fn phi_values(mu: &DiscreteMeasure, phi: &SuppressionFn) -> Vec<f64> {
    match phi {
        SuppressionFn::Zero => Vec::new(),
        _ => (0..mu.len()).into_par_iter().map(|a| phi.eval(mu.position(a))).collect(),
    }
}

fn field_at_atoms(mu: &DiscreteMeasure, phi: &SuppressionFn, backend: Backend) -> Result<VectorField, RieszError> {
    check_distinct_atoms(mu)?;
    let targets: Vec<usize> = (0..mu.len()).collect();
    let rows = kernel_sums(mu, phi, &targets, backend)?;
    Ok(VectorField::from_values(mu.dim_ambient(), rows.concat()))
}

/// Kernel sums at the listed atoms (self excluded), one vector per target.
pub fn kernel_sums(mu: &DiscreteMeasure, phi: &SuppressionFn, targets: &[usize], backend: Backend) -> Result<Vec<Vec<f64>>, RieszError> {
    let phis = phi_values(mu, phi);
    let phi_at = |a: usize| phis.get(a).copied().unwrap_or(0.0);
    let dim = mu.dim_ambient();
    let n = mu.dim_growth();
    match backend {
        Backend::Direct => targets
            .par_iter()
            .map(|&t| {
                let x = mu.position(t);
                let mut out = vec![0.0; dim];
                for a in 0..mu.len() {
                    if a != t && mu.weight(a) != 0.0 {
                        accumulate_kernel(x, mu.position(a), phi_at(t), phi_at(a), mu.weight(a), n, &mut out);
                    }
                }
                Ok(out)
            })
            .collect(),
        Backend::Tree { accuracy } => {
            if !(accuracy > 0.0 && accuracy <= 0.1) {
                return Err(RieszError::Accuracy(accuracy));
            }
            let tree = SourceTree::build(mu, &phis);
            let theta = tree::opening_angle(accuracy);
            targets
                .par_iter()
                .map(|&t| {
                    let mut out = vec![0.0; dim];
                    tree.field_at(mu, &phis, mu.position(t), phi_at(t), Some(t), theta, &mut out)?;
                    Ok(out)
                })
                .collect()
        }
    }
}

/// Kernel sums at arbitrary points. A point on a positive-weight atom is an
/// error for the Riesz kernel.
pub fn kernel_sums_at_points(mu: &DiscreteMeasure, phi: &SuppressionFn, points: &[Vec<f64>], backend: Backend) -> Result<Vec<Vec<f64>>, RieszError> {
    let phis = phi_values(mu, phi);
    let dim = mu.dim_ambient();
    let n = mu.dim_growth();
    let tree = match backend {
        Backend::Tree { accuracy } if accuracy > 0.0 && accuracy <= 0.1 => Some((SourceTree::build(mu, &phis), tree::opening_angle(accuracy))),
        Backend::Tree { accuracy } => return Err(RieszError::Accuracy(accuracy)),
        Backend::Direct => None,
    };
    points
        .par_iter()
        .map(|x| {
            let phi_x = phi.eval(x);
            let mut out = vec![0.0; dim];
            if let Some((tree, theta)) = &tree {
                tree.field_at(mu, &phis, x, phi_x, None, *theta, &mut out)?;
                return Ok(out);
            }
            for a in 0..mu.len() {
                let y = mu.position(a);
                let phi_y = phis.get(a).copied().unwrap_or(0.0);
                if mu.weight(a) == 0.0 {
                    continue;
                }
                if dist2(x, y) == 0.0 && phi_x * phi_y == 0.0 {
                    return Err(RieszError::CoincidentTarget { atom: a });
                }
                accumulate_kernel(x, y, phi_x, phi_y, mu.weight(a), n, &mut out);
            }
            Ok(out)
        })
        .collect()
}

/// R_Φ μ(x) = Σ_{y≠x} w(y) K_Φ(x, y).
pub fn suppressed_riesz(mu: &DiscreteMeasure, x: &[f64], phi: &SuppressionFn) -> Vec<f64> {
    let n = mu.dim_growth();
    let phi_x = phi.eval(x);
    let mut out = vec![0.0; x.len()];
    for a in 0..mu.len() {
        let y = mu.position(a);
        if y != x {
            accumulate_kernel(x, y, phi_x, phi.eval(y), mu.weight(a), n, &mut out);
        }
    }
    out
}

/// Truncation radii for the maximal transform.
#[derive(Debug, Clone, PartialEq)]
pub enum EpsGrid {
    /// Every interpoint distance from x: the exact supremum.
    Breakpoints,
    /// ε₀·2^k up to the farthest atom, with ε₀ = r0 or half the nearest
    /// distance; a lower bound for the supremum.
    Dyadic,
    Explicit(Vec<f64>),
}

/// Breakpoints for at most this many atoms, dyadic otherwise.
pub const BREAKPOINT_LIMIT: usize = 10_000;

impl EpsGrid {
    pub fn auto(mu: &DiscreteMeasure) -> Self {
        if mu.len() <= BREAKPOINT_LIMIT {
            EpsGrid::Breakpoints
        } else {
            EpsGrid::Dyadic
        }
    }
}

/// Distances from x with suffix sums of kernel contributions, for evaluating
/// R_ε μ(x) at many ε.
struct RadialProfile {
    /// Ascending distances.
    dists: Vec<f64>,
    /// `suffix[k]` = Σ_{j≥k} contribution of the j-th nearest atom, `dim` entries each.
    suffix: Vec<f64>,
    dim: usize,
}

impl RadialProfile {
    fn new(mu: &DiscreteMeasure, x: &[f64]) -> Self {
        let dim = x.len();
        let n = mu.dim_growth();
        let mut entries: Vec<(f64, usize)> = (0..mu.len()).map(|a| (dist2(x, mu.position(a)).sqrt(), a)).filter(|e| e.0 > 0.0).collect();
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut suffix = vec![0.0; (entries.len() + 1) * dim];
        for (k, &(_, a)) in entries.iter().enumerate().rev() {
            let mut term = vec![0.0; dim];
            accumulate_kernel(x, mu.position(a), 0.0, 0.0, mu.weight(a), n, &mut term);
            for i in 0..dim {
                suffix[k * dim + i] = suffix[(k + 1) * dim + i] + term[i];
            }
        }
        RadialProfile { dists: entries.into_iter().map(|e| e.0).collect(), suffix, dim }
    }

    /// |R_ε μ(x)|.
    fn norm_at(&self, eps: f64) -> f64 {
        self.norm_from(self.dists.partition_point(|&d| d <= eps))
    }

    fn norm_from(&self, k: usize) -> f64 {
        self.suffix[k * self.dim..(k + 1) * self.dim].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// sup_{ε ≥ r0} |R_ε μ(x)| over the breakpoints, exact for atoms.
    fn sup_from(&self, r0: f64) -> f64 {
        let mut best = self.norm_at(r0);
        for (k, &d) in self.dists.iter().enumerate() {
            // ε = d excludes every atom at distance ≤ d.
            if d >= r0 && (k + 1 == self.dists.len() || self.dists[k + 1] > d) {
                best = best.max(self.norm_from(k + 1));
            }
        }
        best
    }
}

/// sup_ε |R_ε μ(x)| over the grid.
pub fn maximal_riesz(mu: &DiscreteMeasure, x: &[f64], grid: &EpsGrid) -> f64 {
    maximal_riesz_from(mu, x, 0.0, grid)
}

/// sup_{ε ≥ r0} |R_ε μ(x)| over the grid (r0 = 0 means ε > 0).
pub fn maximal_riesz_from(mu: &DiscreteMeasure, x: &[f64], r0: f64, grid: &EpsGrid) -> f64 {
    let profile = RadialProfile::new(mu, x);
    match grid {
        EpsGrid::Breakpoints => profile.sup_from(r0),
        EpsGrid::Dyadic => {
            let (Some(&nearest), Some(&top)) = (profile.dists.first(), profile.dists.last()) else {
                return 0.0;
            };
            let mut eps = if r0 > 0.0 { r0 } else { nearest / 2.0 };
            let mut best = profile.norm_at(eps);
            while eps <= top {
                eps *= 2.0;
                best = best.max(profile.norm_at(eps));
            }
            best
        }
        EpsGrid::Explicit(radii) => radii.iter().filter(|&&e| e >= r0).map(|&e| profile.norm_at(e)).fold(0.0, f64::max),
    }
}

/// W(F) = Σ_{x≠y∈F} w(x)w(y) / (diam(F)·|x−y|^{n−1}); zero when diam(F) = 0.
pub fn w_energy(mu: &DiscreteMeasure, atoms: &[usize]) -> f64 {
    let diam =
        atoms.iter().enumerate().flat_map(|(i, &a)| atoms[i + 1..].iter().map(move |&b| (a, b))).map(|(a, b)| mu.distance(a, b)).fold(0.0, f64::max);
    w_energy_with_diameter(mu, atoms, diam)
}

/// W with a supplied diameter, such as 2r for the atoms of a ball.
pub fn w_energy_with_diameter(mu: &DiscreteMeasure, atoms: &[usize], diam: f64) -> f64 {
    if diam <= 0.0 {
        return 0.0;
    }
    let n = mu.dim_growth() as i32;
    let pair_sum: f64 = atoms
        .par_iter()
        .enumerate()
        .map(|(i, &a)| {
            atoms[i + 1..]
                .iter()
                .map(|&b| {
                    let d = mu.distance(a, b);
                    if d > 0.0 {
                        mu.weight(a) * mu.weight(b) / d.powi(n - 1)
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        })
        .sum();
    2.0 * pair_sum / diam
}

/// Both sides of the Cotlar inequality at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct CotlarSides {
    /// sup_{ε≥r0} |R_ε μ(x)|.
    pub lhs: f64,
    /// Doubling-restricted maximal function of |pv Rμ| plus θ1.
    pub rhs: f64,
    pub maximal_part: f64,
    /// Radius attaining the maximal part, if any ball qualified.
    pub best_radius: Option<f64>,
    /// Whether the density and W-energy hypotheses hold with θ1.
    pub hypotheses_met: bool,
}

/// Radii r0·2^k, k ≥ 0, until the ball around x holds all of μ.
fn cotlar_radii(mu: &DiscreteMeasure, x: &[f64], r0: f64) -> Vec<f64> {
    let reach = (0..mu.len()).map(|a| dist2(x, mu.position(a)).sqrt()).fold(0.0, f64::max);
    let mut radii = vec![r0];
    while *radii.last().expect("nonempty") <= reach {
        radii.push(radii.last().expect("nonempty") * 2.0);
    }
    radii
}

/// Doubling constant used by the Cotlar maximal function: 128^{n+2}.
pub fn cotlar_doubling_constant(n: usize) -> f64 {
    128f64.powi(n as i32 + 2)
}

/// Smallest θ1 for which the density and W-energy hypotheses hold at x.
pub fn cotlar_min_theta1(mu: &DiscreteMeasure, x: &[f64], r0: f64) -> f64 {
    let n = mu.dim_growth() as i32;
    let doubling = cotlar_doubling_constant(mu.dim_growth());
    let mut worst: f64 = 0.0;
    for r in cotlar_radii(mu, x, r0) {
        let mass = mu.mass_within(x, r);
        worst = worst.max(mass / r.powi(n));
        if mass > 0.0 && mu.mass_within(x, 16.0 * r) <= doubling * mass {
            let atoms = mu.atoms_within(x, r);
            worst = worst.max(w_energy_with_diameter(mu, &atoms, 2.0 * r) / mass);
        }
    }
    worst
}

/// Cotlar sides at x with maximal function of `pv_norms` (|pv Rμ| per atom)
/// over (16, 128^{n+2})-doubling balls B(x, r), r > r0 on a dyadic grid.
pub fn cotlar_sides(mu: &DiscreteMeasure, pv_norms: &[f64], x: &[f64], r0: f64, theta1: f64) -> CotlarSides {
    let lhs = maximal_riesz_from(mu, x, r0, &EpsGrid::Breakpoints);
    let doubling = cotlar_doubling_constant(mu.dim_growth());
    let mut best: Option<(f64, f64)> = None;
    for r in cotlar_radii(mu, x, r0).into_iter().skip(1) {
        let mass = mu.mass_within(x, r);
        if mass <= 0.0 || mu.mass_within(x, 16.0 * r) > doubling * mass {
            continue;
        }
        let mut total = 0.0;
        mu.for_each_within(x, r, |a| total += mu.weight(a) * pv_norms[a]);
        let mean = total / mass;
        // Strict improvement keeps the smaller radius on ties.
        if best.is_none_or(|(value, _)| mean > value) {
            best = Some((mean, r));
        }
    }
    let maximal_part = best.map_or(0.0, |b| b.0);
    CotlarSides {
        lhs,
        rhs: maximal_part + theta1,
        maximal_part,
        best_radius: best.map(|b| b.1),
        hypotheses_met: cotlar_min_theta1(mu, x, r0) <= theta1,
    }
}

/// Σ_{Q∈family} χ_Q(x) R(χ_{2R∖2Q} μ)(x), with 2Q the atom set of λ = 2.
pub fn localized_riesz(lat: &Lattice, mu: &DiscreteMeasure, family: &[CubeId], root: CubeId) -> Result<VectorField, RieszError> {
    for (i, &p) in family.iter().enumerate() {
        for &q in &family[i + 1..] {
            if lat.contains(p, q) || lat.contains(q, p) {
                return Err(RieszError::OverlappingFamily { first: p, second: q });
            }
        }
    }
    let dim = mu.dim_ambient();
    let n = mu.dim_growth();
    let outer = lat.lambda_dilate(mu, root, 2.0);
    let pieces: Vec<(Vec<usize>, Vec<f64>)> = family
        .par_iter()
        .map(|&q| {
            let excluded: HashSet<usize> = lat.lambda_dilate(mu, q, 2.0).into_iter().collect();
            let sources: Vec<usize> = outer.iter().copied().filter(|a| !excluded.contains(a)).collect();
            let members = lat.cube(q).members.clone();
            let mut values = vec![0.0; members.len() * dim];
            for (k, &t) in members.iter().enumerate() {
                let out = &mut values[k * dim..(k + 1) * dim];
                for &a in &sources {
                    accumulate_kernel(mu.position(t), mu.position(a), 0.0, 0.0, mu.weight(a), n, out);
                }
            }
            (members, values)
        })
        .collect();
    let mut field = VectorField::zeros(mu.len(), dim);
    for (members, values) in pieces {
        for (k, &t) in members.iter().enumerate() {
            field.get_mut(t).copy_from_slice(&values[k * dim..(k + 1) * dim]);
        }
    }
    Ok(field)
}
