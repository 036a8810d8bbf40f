//! Approximating measures built from pieces: uniform half-balls over a
//! regularized family, and flat disks over the stopped cells of a spreading
//! subtree. Each piece is realized by a deterministic quadrature grid so that
//! every integral against the measure is an atom sum.

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corona::{Regularized, SpreadTree};
use crate::lattice::{CubeId, Lattice};
use crate::measure::{DiscreteMeasure, MeasureDoc, MeasureError};
use crate::riesz::{pv_field, Backend, RieszError, VectorField};

/// Fewest quadrature atoms per half-ball or disk.
pub const MIN_QUADRATURE: usize = 64;
/// Sample centres used by the regularity scans.
const SCAN_CENTRES: usize = 256;

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("approximating measure has no pieces")]
    Empty,
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Riesz(#[from] RieszError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Carrier {
    /// Uniform measure on the ball B(center, radius) of the ambient space.
    HalfBall { center: Vec<f64>, radius: f64 },
    /// Uniform measure on the n-disk through `center` orthogonal to the last axis.
    Disk { center: Vec<f64>, radius: f64 },
    /// A rescaled copy of the original atoms of a cell.
    Residual { atoms: Vec<usize> },
}

#[derive(Debug, Clone, Serialize)]
pub struct Piece {
    pub carrier: Carrier,
    pub mass: f64,
    pub source: CubeId,
    /// Length scale of the carrier, the lower end of the regularity scan.
    pub size: f64,
    /// Range of this piece in the flattened atom list.
    pub first_atom: usize,
    pub atom_count: usize,
}

#[derive(Debug, Clone)]
pub struct ApproxMeasure {
    pub pieces: Vec<Piece>,
    atoms: DiscreteMeasure,
    /// Piece index of every quadrature atom.
    owner: Vec<usize>,
}

/// Uniform quadrature for the unit-mass measure on a ball of `radius` in
/// dimension `dim`, returned as offsets from the centre with equal weights.
/// Dimensions 1 and 2 use midpoint and polar (equal-area ring) layouts,
/// dimension 3 uses equal-volume shells of spiral directions and higher
/// dimensions a cubic grid clipped to the ball.
pub fn ball_quadrature(dim: usize, radius: f64, count: usize) -> Vec<Vec<f64>> {
    let count = count.max(1);
    match dim {
        1 => (0..count).map(|i| vec![radius * (2.0 * (i as f64 + 0.5) / count as f64 - 1.0)]).collect(),
        2 => {
            let rings = (count as f64).sqrt().ceil() as usize;
            let per_ring = count.div_ceil(rings);
            let mut out = Vec::with_capacity(rings * per_ring);
            for k in 0..rings {
                let rho = radius * ((k as f64 + 0.5) / rings as f64).sqrt();
                let shift = if k % 2 == 0 { 0.0 } else { 0.5 };
                for j in 0..per_ring {
                    let angle = 2.0 * PI * (j as f64 + shift) / per_ring as f64;
                    out.push(vec![rho * angle.cos(), rho * angle.sin()]);
                }
            }
            out
        }
        3 => {
            let shells = (count as f64).cbrt().ceil() as usize;
            let per_shell = count.div_ceil(shells);
            let golden = PI * (3.0 - 5f64.sqrt());
            let mut out = Vec::with_capacity(shells * per_shell);
            for k in 0..shells {
                let rho = radius * ((k as f64 + 0.5) / shells as f64).cbrt();
                for j in 0..per_shell {
                    let z = 1.0 - 2.0 * (j as f64 + 0.5) / per_shell as f64;
                    let ring = (1.0 - z * z).sqrt();
                    let angle = golden * (j + k * per_shell) as f64;
                    out.push(vec![rho * ring * angle.cos(), rho * ring * angle.sin(), rho * z]);
                }
            }
            out
        }
        _ => {
            let mut steps = 2usize;
            loop {
                let h = 2.0 / steps as f64;
                let mut out = Vec::new();
                let total = steps.pow(dim as u32);
                for flat in 0..total {
                    let mut rest = flat;
                    let p: Vec<f64> = (0..dim)
                        .map(|_| {
                            let i = rest % steps;
                            rest /= steps;
                            -1.0 + h * (i as f64 + 0.5)
                        })
                        .collect();
                    if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                        out.push(p.into_iter().map(|v| v * radius).collect());
                    }
                }
                if out.len() >= count {
                    return out;
                }
                steps += 1;
            }
        }
    }
}

struct PieceSpec {
    carrier: Carrier,
    mass: f64,
    source: CubeId,
    size: f64,
}

impl ApproxMeasure {
    fn assemble(mu: &DiscreteMeasure, specs: Vec<PieceSpec>, points: usize) -> Result<Self, ApproxError> {
        if specs.is_empty() {
            return Err(ApproxError::Empty);
        }
        let dim = mu.dim_ambient();
        let n = mu.dim_growth();
        let built: Vec<(Vec<Vec<f64>>, Vec<f64>)> = specs
            .par_iter()
            .map(|spec| match &spec.carrier {
                Carrier::HalfBall { center, radius } => {
                    let offsets = ball_quadrature(dim, *radius, points);
                    let w = spec.mass / offsets.len() as f64;
                    let pts = offsets.iter().map(|o| center.iter().zip(o).map(|(c, d)| c + d).collect()).collect();
                    (pts, vec![w; offsets.len()])
                }
                Carrier::Disk { center, radius } => {
                    let offsets = ball_quadrature(n, *radius, points);
                    let w = spec.mass / offsets.len() as f64;
                    let pts = offsets
                        .iter()
                        .map(|o| {
                            let mut p = center.clone();
                            p.iter_mut().zip(o).for_each(|(c, d)| *c += d);
                            p
                        })
                        .collect();
                    (pts, vec![w; offsets.len()])
                }
                Carrier::Residual { atoms } => {
                    let base: f64 = atoms.iter().map(|&a| mu.weight(a)).sum();
                    let scale = spec.mass / base;
                    (atoms.iter().map(|&a| mu.position(a).to_vec()).collect(), atoms.iter().map(|&a| mu.weight(a) * scale).collect())
                }
            })
            .collect();
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        let mut owner = Vec::new();
        let mut pieces = Vec::with_capacity(specs.len());
        for (index, (spec, (pts, w))) in specs.into_iter().zip(built).enumerate() {
            pieces.push(Piece {
                carrier: spec.carrier,
                mass: spec.mass,
                source: spec.source,
                size: spec.size,
                first_atom: weights.len(),
                atom_count: w.len(),
            });
            owner.extend(std::iter::repeat_n(index, w.len()));
            pts.iter().for_each(|p| coords.extend_from_slice(p));
            weights.extend(w);
        }
        debug_assert_eq!(coords.len(), dim * weights.len());
        let atoms = DiscreteMeasure::new(n, coords, weights)?;
        Ok(ApproxMeasure { pieces, atoms, owner })
    }

    /// The quadrature atomization.
    pub fn atoms(&self) -> &DiscreteMeasure {
        &self.atoms
    }

    pub fn piece_of(&self, atom: usize) -> usize {
        self.owner[atom]
    }

    pub fn total_mass(&self) -> f64 {
        self.pieces.iter().map(|p| p.mass).sum()
    }

    /// Total mass of the pieces whose source cell lies inside `q`.
    pub fn mass_below(&self, lat: &Lattice, q: CubeId) -> f64 {
        self.pieces.iter().filter(|p| lat.contains(q, p.source)).map(|p| p.mass).sum()
    }

    /// Pairs of half-ball or disk carriers whose closed balls meet.
    pub fn overlapping_pairs(&self) -> usize {
        let balls: Vec<(&[f64], f64)> = self
            .pieces
            .iter()
            .filter_map(|p| match &p.carrier {
                Carrier::HalfBall { center, radius } | Carrier::Disk { center, radius } => Some((center.as_slice(), *radius)),
                Carrier::Residual { .. } => None,
            })
            .collect();
        let mut count = 0;
        for (i, a) in balls.iter().enumerate() {
            for b in &balls[i + 1..] {
                let gap = crate::measure::kdtree::dist2(a.0, b.0).sqrt();
                if gap <= a.1 + b.1 {
                    count += 1;
                }
            }
        }
        count
    }

    pub fn has_overlap(&self) -> bool {
        self.overlapping_pairs() > 0
    }

    /// Writes the flattened atoms as measure JSON and the piece table to
    /// `<path>.pieces.json`. Returns the sidecar path.
    pub fn write_json(&self, path: &Path) -> Result<PathBuf, ApproxError> {
        serde_json::to_writer(BufWriter::new(File::create(path)?), &MeasureDoc::from_measure(&self.atoms))?;
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".pieces.json");
        let sidecar = PathBuf::from(sidecar);
        serde_json::to_writer_pretty(BufWriter::new(File::create(&sidecar)?), &self.pieces)?;
        Ok(sidecar)
    }
}

/// η = Σ_{P∈Reg} μ(P) · uniform(½B(P)).
pub fn eta_from_reg(lat: &Lattice, mu: &DiscreteMeasure, reg: &Regularized) -> Result<ApproxMeasure, ApproxError> {
    eta_from_cells(lat, mu, &reg.reg)
}

/// Uniform half-ball pieces of mass μ(P) over the given cells.
pub fn eta_from_cells(lat: &Lattice, mu: &DiscreteMeasure, cells: &[CubeId]) -> Result<ApproxMeasure, ApproxError> {
    let specs = cells
        .iter()
        .map(|&p| {
            let cube = lat.cube(p);
            let radius = 0.5 * cube.radius;
            PieceSpec { carrier: Carrier::HalfBall { center: cube.center.clone(), radius }, mass: cube.mass, source: p, size: radius }
        })
        .collect();
    ApproxMeasure::assemble(mu, specs, quadrature_points(lat))
}

fn quadrature_points(lat: &Lattice) -> usize {
    lat.params().quadrature_points.max(MIN_QUADRATURE)
}

/// Disks D_Q of radius r(Q)/2 with mass μ(Q) + s(Q) over the stopped cells,
/// and rescaled copies of μ⌊Q over the residual cells. Zero-mass pieces are
/// left out.
pub fn eta_disks(lat: &Lattice, mu: &DiscreteMeasure, tree: &SpreadTree) -> Result<ApproxMeasure, ApproxError> {
    let mass_of = |q: CubeId| {
        let m = lat.mass(q) + tree.s(q);
        assert!(m >= -1e-12 * lat.mass(q), "negative piece mass {m} on {q:?}");
        m.max(0.0)
    };
    let mut specs = Vec::new();
    for &q in tree.stops.keys() {
        let mass = mass_of(q);
        if mass > 0.0 {
            let cube = lat.cube(q);
            let radius = 0.5 * cube.radius;
            specs.push(PieceSpec { carrier: Carrier::Disk { center: cube.center.clone(), radius }, mass, source: q, size: radius });
        }
    }
    for &q in &tree.residual {
        let mass = mass_of(q);
        if mass > 0.0 {
            let cube = lat.cube(q);
            specs.push(PieceSpec { carrier: Carrier::Residual { atoms: cube.members.clone() }, mass, source: q, size: 0.5 * cube.radius });
        }
    }
    ApproxMeasure::assemble(mu, specs, quadrature_points(lat))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdRegularity {
    pub c_low: f64,
    pub c_high: f64,
    pub centres: usize,
    pub radii: usize,
}

fn scan_centres(am: &ApproxMeasure) -> Vec<usize> {
    let len = am.atoms.len();
    let stride = len.div_ceil(SCAN_CENTRES).max(1);
    (0..len).step_by(stride).collect()
}

/// Extremes of η(B(x, r)) / (θ rⁿ) over sampled support points x and
/// dyadic radii r from the smallest piece size up to the diameter.
pub fn check_ad_regular(am: &ApproxMeasure, theta_ref: f64) -> Result<AdRegularity, ApproxError> {
    if am.pieces.is_empty() {
        return Err(ApproxError::Empty);
    }
    let atoms = &am.atoms;
    let n = atoms.dim_growth() as i32;
    let r_min = am.pieces.iter().map(|p| p.size).fold(f64::INFINITY, f64::min);
    let r_max = atoms.diameter().max(r_min);
    let mut radii: Vec<f64> = std::iter::successors(Some(r_min), |r| Some(r * 2.0)).take_while(|&r| r < r_max).collect();
    radii.push(r_max);
    let centres = scan_centres(am);
    let (c_low, c_high) = centres
        .par_iter()
        .map(|&a| {
            let x = atoms.position(a);
            let profile = atoms.mass_profile(x, &radii);
            profile.iter().zip(&radii).fold((f64::INFINITY, 0.0f64), |(lo, hi), (m, r)| {
                let ratio = m / (theta_ref * r.powi(n));
                (lo.min(ratio), hi.max(ratio))
            })
        })
        .reduce(|| (f64::INFINITY, 0.0), |a, b| (a.0.min(b.0), a.1.max(b.1)));
    Ok(AdRegularity { c_low, c_high, centres: centres.len(), radii: radii.len() })
}

/// sup η(B(x, r)) / rⁿ over sampled support points x and dyadic radii
/// r ≥ floor(x) up to the diameter.
pub fn growth_above(am: &ApproxMeasure, floor: impl Fn(&[f64]) -> f64 + Sync) -> f64 {
    let atoms = &am.atoms;
    let n = atoms.dim_growth() as i32;
    let r_max = atoms.diameter();
    scan_centres(am)
        .par_iter()
        .map(|&a| {
            let x = atoms.position(a);
            let start = floor(x).max(f64::MIN_POSITIVE);
            let mut radii: Vec<f64> = std::iter::successors(Some(start), |r| Some(r * 2.0)).take_while(|&r| r < r_max).collect();
            radii.push(r_max.max(start));
            let profile = atoms.mass_profile(x, &radii);
            profile.iter().zip(&radii).map(|(m, r)| m / r.powi(n)).fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct EtaField {
    pub field: VectorField,
    /// ‖ℛη‖ in L²(η).
    pub l2_norm: f64,
}

/// Principal-value Riesz field of the quadrature atomization at its own atoms.
pub fn riesz_on_eta(am: &ApproxMeasure, backend: Backend) -> Result<EtaField, ApproxError> {
    let field = pv_field(&am.atoms, backend)?;
    let l2_norm = field.l2_norm_sq(&am.atoms).sqrt();
    Ok(EtaField { field, l2_norm })
}

#[cfg(test)]
mod tests;
