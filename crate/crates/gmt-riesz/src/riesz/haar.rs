//! Martingale differences of atom functions along a lattice, with the coarse
//! variants built from stopping families and adjacent parent cells.

use std::collections::BTreeSet;

use crate::coeffs::CoeffTable;
use crate::lattice::{CubeId, Lattice};
use crate::measure::DiscreteMeasure;

use super::VectorField;

/// Per-cell integrals ∫_Q f dμ of a field, giving means m_Q f.
#[derive(Debug, Clone)]
pub struct CellMeans {
    dim: usize,
    integrals: Vec<f64>,
    masses: Vec<f64>,
}

impl CellMeans {
    pub fn new(lat: &Lattice, mu: &DiscreteMeasure, f: &VectorField) -> Self {
        let dim = f.dim();
        let mut integrals = vec![0.0; lat.len() * dim];
        let mut masses = vec![0.0; lat.len()];
        for (id, cube) in lat.cubes().iter().enumerate() {
            let slot = &mut integrals[id * dim..(id + 1) * dim];
            for &a in &cube.members {
                let w = mu.weight(a);
                masses[id] += w;
                for (s, v) in slot.iter_mut().zip(f.get(a)) {
                    *s += w * v;
                }
            }
        }
        CellMeans { dim, integrals, masses }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mass(&self, id: CubeId) -> f64 {
        self.masses[id.0]
    }

    /// m_Q f, zero for a null cell.
    pub fn mean(&self, id: CubeId) -> Vec<f64> {
        self.mean_over(&[id])
    }

    /// Mean over the union of disjoint cells.
    pub fn mean_over(&self, cells: &[CubeId]) -> Vec<f64> {
        let mut total = vec![0.0; self.dim];
        let mut mass = 0.0;
        for &c in cells {
            mass += self.masses[c.0];
            for (t, v) in total.iter_mut().zip(&self.integrals[c.0 * self.dim..(c.0 + 1) * self.dim]) {
                *t += v;
            }
        }
        if mass > 0.0 {
            total.iter_mut().for_each(|t| *t /= mass);
        }
        total
    }

    /// m_{2Q} f over the atoms of the λ = 2 dilate.
    pub fn double_mean(&self, lat: &Lattice, mu: &DiscreteMeasure, q: CubeId) -> Vec<f64> {
        self.mean_over(&lat.lambda_dilate_cells(mu, q, 2.0))
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Writes Σ_S (value_S)χ_S into a zero field.
fn piecewise(lat: &Lattice, len: usize, dim: usize, pieces: impl IntoIterator<Item = (CubeId, Vec<f64>)>) -> VectorField {
    let mut out = VectorField::zeros(len, dim);
    for (cell, value) in pieces {
        for &a in &lat.cube(cell).members {
            out.get_mut(a).copy_from_slice(&value);
        }
    }
    out
}

/// Δ_Q f = Σ_{S∈Ch(Q)} m_S f χ_S − m_Q f χ_Q; zero for a childless Q.
pub fn haar_delta(lat: &Lattice, mu: &DiscreteMeasure, f: &VectorField, q: CubeId) -> VectorField {
    let means = CellMeans::new(lat, mu, f);
    let parent_mean = means.mean(q);
    piecewise(lat, mu.len(), f.dim(), lat.children(q).iter().map(|&s| (s, means.mean(s).iter().zip(&parent_mean).map(|(a, b)| a - b).collect())))
}

/// ‖Δ_Q f‖²_{L²(μ)} = Σ_S μ(S)|m_S f − m_Q f|².
pub fn haar_delta_norm_sq(lat: &Lattice, means: &CellMeans, q: CubeId) -> f64 {
    let parent_mean = means.mean(q);
    lat.children(q).iter().map(|&s| means.mass(s) * dist_sq(&means.mean(s), &parent_mean)).sum()
}

/// Both sides of the finite-depth Parseval identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaarEnergy {
    /// Σ_Q ‖Δ_Q f‖².
    pub tree_sum: f64,
    /// Σ over leaves L of ‖χ_L(f − m_L f)‖², the part below the finest cells.
    pub leaf_residual: f64,
    /// ‖f − m_root f‖², computed directly from atom values.
    pub centered_norm_sq: f64,
}

impl HaarEnergy {
    /// |tree_sum + leaf_residual − centered| / centered (absolute when centered is 0).
    pub fn parseval_error(&self) -> f64 {
        let gap = (self.tree_sum + self.leaf_residual - self.centered_norm_sq).abs();
        if self.centered_norm_sq > 0.0 {
            gap / self.centered_norm_sq
        } else {
            gap
        }
    }
}

pub fn haar_energy(lat: &Lattice, mu: &DiscreteMeasure, f: &VectorField) -> HaarEnergy {
    let means = CellMeans::new(lat, mu, f);
    let mut tree_sum = 0.0;
    let mut leaf_residual = 0.0;
    for id in lat.ids() {
        if lat.cube(id).is_leaf() {
            let m = means.mean(id);
            leaf_residual += lat.cube(id).members.iter().map(|&a| mu.weight(a) * dist_sq(f.get(a), &m)).sum::<f64>();
        } else {
            tree_sum += haar_delta_norm_sq(lat, &means, id);
        }
    }
    let root_mean = means.mean(lat.root());
    let centered_norm_sq = (0..mu.len()).map(|a| mu.weight(a) * dist_sq(f.get(a), &root_mean)).sum();
    HaarEnergy { tree_sum, leaf_residual, centered_norm_sq }
}

/// Δ̂_Q f = Σ_{S∈family} (m_S f − m_{2Q} f) χ_S for a stopping family S ≺ Q.
pub fn coarse_haar_hat(lat: &Lattice, mu: &DiscreteMeasure, f: &VectorField, q: CubeId, family: &[CubeId]) -> VectorField {
    let means = CellMeans::new(lat, mu, f);
    let base = means.double_mean(lat, mu, q);
    piecewise(lat, mu.len(), f.dim(), family.iter().map(|&s| (s, means.mean(s).iter().zip(&base).map(|(a, b)| a - b).collect())))
}

/// 𝒜(Q): cells one generation coarser than Q that meet 2Q, which are the
/// parents of the cells making up 2Q. Empty at the root generation.
pub fn adjacent_coarse_cells(lat: &Lattice, mu: &DiscreteMeasure, q: CubeId) -> Vec<CubeId> {
    let parents: BTreeSet<CubeId> = lat.lambda_dilate_cells(mu, q, 2.0).into_iter().filter_map(|c| lat.parent(c)).collect();
    parents.into_iter().collect()
}

/// Δ̌_Q f = Σ_{R∈𝒜(Q)} (m_R f − m_{2Q} f) χ_R.
pub fn coarse_haar_check(lat: &Lattice, mu: &DiscreteMeasure, f: &VectorField, q: CubeId) -> VectorField {
    let means = CellMeans::new(lat, mu, f);
    let base = means.double_mean(lat, mu, q);
    let family = adjacent_coarse_cells(lat, mu, q);
    piecewise(lat, mu.len(), f.dim(), family.into_iter().map(|r| (r, means.mean(r).iter().zip(&base).map(|(a, b)| a - b).collect())))
}

/// ‖Δ̌_Q f‖² from precomputed means.
pub fn coarse_check_norm_sq(lat: &Lattice, mu: &DiscreteMeasure, means: &CellMeans, q: CubeId) -> f64 {
    let base = means.double_mean(lat, mu, q);
    adjacent_coarse_cells(lat, mu, q).into_iter().map(|r| means.mass(r) * dist_sq(&means.mean(r), &base)).sum()
}

/// Σ_{Q 𝒫-doubling} ‖Δ̌_Q f‖² / ‖f‖²; zero for f = 0.
pub fn quasi_orthogonality_ratio(lat: &Lattice, mu: &DiscreteMeasure, coeffs: &CoeffTable, f: &VectorField) -> f64 {
    let norm = f.l2_norm_sq(mu);
    if norm == 0.0 {
        return 0.0;
    }
    let means = CellMeans::new(lat, mu, f);
    let total: f64 = lat.ids().filter(|&q| coeffs.is_pdoubling(q)).map(|q| coarse_check_norm_sq(lat, mu, &means, q)).sum();
    total / norm
}
