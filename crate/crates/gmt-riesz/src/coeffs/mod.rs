//! Densities, beta numbers, Poisson-type coefficients and Wolff energies.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::lattice::{CubeId, Lattice};
use crate::measure::{Ball, DiscreteMeasure};

#[derive(Debug, Error)]
pub enum CoeffError {
    #[error("coefficient table has {table} records but the lattice has {lattice} cells")]
    SizeMismatch { table: usize, lattice: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// θ(B) = μ(B)/r(B)ⁿ.
pub fn theta(mu: &DiscreteMeasure, ball: &Ball) -> f64 {
    mu.mass_in_ball(ball) / ball.radius.powi(mu.dim_growth() as i32)
}

/// Best-fitting affine n-plane through a weighted point set: centroid and unit normal.
pub struct PlaneFit {
    pub centroid: Vec<f64>,
    pub normal: Vec<f64>,
    /// Σ w·dist(p, L)², the minimal weighted squared distance.
    pub residual: f64,
}

/// Fits the plane minimizing Σ w·dist(p, L)² over the given atoms.
///
/// The optimal plane passes through the weighted centroid and is orthogonal to the
/// eigenvector of the smallest eigenvalue of the weighted covariance.
pub fn fit_plane(mu: &DiscreteMeasure, atoms: &[usize]) -> Option<PlaneFit> {
    let dim = mu.dim_ambient();
    let mass: f64 = atoms.iter().map(|&a| mu.weight(a)).sum();
    if atoms.is_empty() || mass <= 0.0 {
        return None;
    }
    let mut centroid = vec![0.0; dim];
    for &a in atoms {
        for (c, x) in centroid.iter_mut().zip(mu.position(a)) {
            *c += mu.weight(a) * x;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= mass);
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut offset = vec![0.0; dim];
    for &a in atoms {
        let w = mu.weight(a);
        for (o, (x, c)) in offset.iter_mut().zip(mu.position(a).iter().zip(&centroid)) {
            *o = x - c;
        }
        for i in 0..dim {
            for j in 0..=i {
                cov[(i, j)] += w * offset[i] * offset[j];
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            cov[(j, i)] = cov[(i, j)];
        }
    }
    let eigen = SymmetricEigen::new(cov);
    let bottom = eigen.eigenvalues.imin();
    let normal: Vec<f64> = eigen.eigenvectors.column(bottom).iter().copied().collect();
    // Summing distances directly keeps nearly flat sets accurate to rounding.
    let residual = atoms
        .iter()
        .map(|&a| {
            let d: f64 = mu.position(a).iter().zip(&centroid).zip(&normal).map(|((x, c), n)| (x - c) * n).sum();
            mu.weight(a) * d * d
        })
        .sum();
    Some(PlaneFit { centroid, normal, residual })
}

/// β₂(B) = ( r⁻ⁿ Σ_{p∈B} w (dist(p, L)/r)² )^{1/2} for the optimal affine n-plane L.
///
/// At most n + 1 atoms always lie on a common n-plane, giving 0.
pub fn beta2(mu: &DiscreteMeasure, ball: &Ball) -> f64 {
    let atoms = mu.atoms_within(&ball.center, ball.radius);
    if atoms.len() <= mu.dim_growth() + 1 {
        return 0.0;
    }
    fit_plane(mu, &atoms).map_or(0.0, |fit| (fit.residual / ball.radius.powi(mu.dim_growth() as i32 + 2)).sqrt())
}

/// 𝔼(μ⌊B) = ∫_B ∫_0^∞ r^α θ_{μ⌊B}(x, r)² dr/r dμ(x).
///
/// Radii below the smallest interpoint gap of μ⌊B are dropped. Above it the density
/// is a step function of r, so the radial integral is summed exactly between
/// consecutive interpoint distances, including the unbounded last piece.
pub fn wolff_energy_ball(mu: &DiscreteMeasure, ball: &Ball, alpha: f64) -> f64 {
    let atoms = mu.atoms_within(&ball.center, ball.radius);
    if atoms.len() < 2 {
        return 0.0;
    }
    let local = mu.restrict(&atoms).expect("restriction of a valid measure");
    let gap = local.min_gap();
    let power = alpha - 2.0 * mu.dim_growth() as f64;
    let antiderivative = |r: f64| if r.is_finite() { r.powf(power) / power } else { 0.0 };
    (0..local.len())
        .map(|x| {
            let mut steps: Vec<(f64, f64)> = (0..local.len()).map(|y| (local.distance(x, y), local.weight(y))).collect();
            steps.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut mass = 0.0;
            let mut inner = 0.0;
            for (i, &(dist, weight)) in steps.iter().enumerate() {
                mass += weight;
                let lo = dist.max(gap);
                let hi = steps.get(i + 1).map_or(f64::INFINITY, |next| next.0.max(gap));
                if hi > lo {
                    inner += mass * mass * (antiderivative(hi) - antiderivative(lo));
                }
            }
            local.weight(x) * inner
        })
        .sum()
}

/// Midpoint-rule version of [`wolff_energy_ball`] on `steps_per_octave` radii per
/// factor of two, between the interpoint gap and 2r(B), plus the exact tail beyond 2r(B).
pub fn wolff_energy_ball_quadrature(mu: &DiscreteMeasure, ball: &Ball, alpha: f64, steps_per_octave: u32) -> f64 {
    let atoms = mu.atoms_within(&ball.center, ball.radius);
    if atoms.len() < 2 {
        return 0.0;
    }
    let local = mu.restrict(&atoms).expect("restriction of a valid measure");
    let n = mu.dim_growth() as i32;
    let gap = local.min_gap();
    let top = 2.0 * ball.radius;
    let total = local.total_mass();
    let tail = total * total * top.powf(alpha - 2.0 * n as f64) / (2.0 * n as f64 - alpha);
    let step = std::f64::consts::LN_2 / steps_per_octave as f64;
    let count = ((top / gap).ln() / step).ceil().max(0.0) as usize;
    let radii: Vec<f64> = (0..count).map(|i| top * (-(i as f64 + 0.5) * step).exp()).filter(|&r| r >= gap).collect();
    (0..local.len())
        .map(|x| {
            let inner: f64 = radii
                .iter()
                .map(|&r| {
                    let density = local.mass_within(local.position(x), r) / r.powi(n);
                    r.powf(alpha) * density * density * step
                })
                .sum();
            local.weight(x) * (inner + tail)
        })
        .sum()
}

/// Per-cube coefficient record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CubeCoeffs {
    /// μ(2B_Q)/ℓ(Q)ⁿ.
    pub theta2b: f64,
    /// Integer k with Θ(Q) = A0^{kn}.
    pub theta_exp: i32,
    pub big_theta: f64,
    pub p: f64,
    /// β₂(2B_Q), not squared.
    pub beta2_2b: f64,
    pub e4q: f64,
    pub is_pdoubling: bool,
    pub is_he: bool,
}

/// Coefficients for every cell of a lattice, indexed by `CubeId`.
#[derive(Debug, Clone)]
pub struct CoeffTable {
    records: Vec<CubeCoeffs>,
    /// Σ_{P ⊆ Q} (ℓ(P)/ℓ(Q))^α Θ(P)² μ(P), per cell Q.
    subtree_energy: Vec<f64>,
    a0: f64,
    dim_growth: usize,
}

/// Θ-bucket exponent: the k with A0^{kn} ≤ density < A0^{(k+1)n}.
pub fn theta_bucket(density: f64, a0: f64, n: usize) -> i32 {
    let base = a0.powi(n as i32);
    let mut k = (density.ln() / base.ln()).floor() as i32;
    while base.powi(k) > density {
        k -= 1;
    }
    while base.powi(k + 1) <= density {
        k += 1;
    }
    k
}

impl CoeffTable {
    pub fn compute(lat: &Lattice, mu: &DiscreteMeasure) -> Self {
        let params = lat.params();
        let n = lat.dim_growth();
        let a0 = params.a0;
        let base = a0.powi(n as i32);
        let balls: Vec<(f64, f64, i32)> = lat
            .ids()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&id| {
                let cube = lat.cube(id);
                let ball = Ball { center: cube.center.clone(), radius: 2.0 * cube.big_radius() };
                let mass2b = mu.mass_in_ball(&ball);
                let theta2b = mass2b / lat.side(id).powi(n as i32);
                (theta2b, beta2(mu, &ball), if theta2b > 0.0 { theta_bucket(theta2b, a0, n) } else { i32::MIN })
            })
            .collect();
        let mut records: Vec<CubeCoeffs> = balls
            .iter()
            .map(|&(theta2b, beta, theta_exp)| CubeCoeffs {
                theta2b,
                theta_exp,
                big_theta: if theta_exp == i32::MIN { 0.0 } else { base.powi(theta_exp) },
                p: 0.0,
                beta2_2b: beta,
                e4q: 0.0,
                is_pdoubling: false,
                is_he: false,
            })
            .collect();
        // Cells are stored coarse to fine, so parents are filled first.
        for id in lat.ids() {
            let inherited = lat.parent(id).map_or(0.0, |p| records[p.0].p / a0);
            let rec = &mut records[id.0];
            rec.p = rec.theta2b + inherited;
            rec.is_pdoubling = rec.p <= params.cd(n) * rec.theta2b;
        }
        let decay = a0.powf(-params.alpha);
        let mut subtree_energy = vec![0.0; lat.len()];
        for id in lat.ids().collect::<Vec<_>>().into_iter().rev() {
            let own = records[id.0].big_theta.powi(2) * lat.mass(id);
            let below: f64 = lat.children(id).iter().map(|c| subtree_energy[c.0]).sum();
            subtree_energy[id.0] = own + decay * below;
        }
        let energies: Vec<f64> = lat
            .ids()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&id| lat.lambda_dilate_cells(mu, id, 4.0).iter().map(|c| subtree_energy[c.0]).sum())
            .collect();
        let m0 = params.m0;
        for (id, e4q) in energies.into_iter().enumerate() {
            let rec = &mut records[id];
            rec.e4q = e4q;
            rec.is_he = e4q >= m0 * m0 * rec.big_theta.powi(2) * lat.mass(CubeId(id));
        }
        CoeffTable { records, subtree_energy, a0, dim_growth: n }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[CubeCoeffs] {
        &self.records
    }

    pub fn get(&self, id: CubeId) -> &CubeCoeffs {
        &self.records[id.0]
    }

    pub fn big_theta(&self, id: CubeId) -> f64 {
        self.records[id.0].big_theta
    }

    pub fn p(&self, id: CubeId) -> f64 {
        self.records[id.0].p
    }

    pub fn is_pdoubling(&self, id: CubeId) -> bool {
        self.records[id.0].is_pdoubling
    }

    pub fn is_he(&self, id: CubeId) -> bool {
        self.records[id.0].is_he
    }

    pub fn check_size(&self, lat: &Lattice) -> Result<(), CoeffError> {
        if self.records.len() == lat.len() {
            Ok(())
        } else {
            Err(CoeffError::SizeMismatch { table: self.records.len(), lattice: lat.len() })
        }
    }

    /// ℰ(λQ) = Σ_{P∈𝒟(λQ)} (ℓ(P)/ℓ(Q))^α Θ(P)² μ(P).
    pub fn wolff_energy_cube(&self, lat: &Lattice, mu: &DiscreteMeasure, id: CubeId, lambda: f64) -> f64 {
        lat.lambda_dilate_cells(mu, id, lambda).iter().map(|c| self.subtree_energy[c.0]).sum()
    }

    /// hd_k(Q): maximal cells P with ℓ(P) < ℓ(Q) and Θ(P) ≥ A0^{kn} Θ(Q), anywhere in the lattice.
    pub fn hd_k(&self, lat: &Lattice, id: CubeId, k: i32) -> Vec<CubeId> {
        let g = lat.cube(id).generation;
        let starts: Vec<CubeId> = lat.generation(g + 1).collect();
        self.hd_k_from(lat, id, k, &starts)
    }

    /// hd_k(Q) restricted to the subtrees of `starts`, which must be cells finer than Q.
    pub fn hd_k_from(&self, lat: &Lattice, id: CubeId, k: i32, starts: &[CubeId]) -> Vec<CubeId> {
        let threshold = self.records[id.0].theta_exp.saturating_add(k);
        lat.maximal_cells(starts, |p| self.records[p.0].theta_exp >= threshold)
    }

    /// σ(I) = Σ_{P∈I} Θ(P)² μ(P).
    pub fn sigma(&self, lat: &Lattice, family: &[CubeId]) -> f64 {
        self.sigma_p(lat, family, 2.0)
    }

    /// σ_p(I) = Σ_{P∈I} Θ(P)^p μ(P).
    pub fn sigma_p(&self, lat: &Lattice, family: &[CubeId], p: f64) -> f64 {
        family.iter().map(|&c| self.records[c.0].big_theta.powf(p) * lat.mass(c)).sum()
    }

    /// Σ_Q β₂(2B_Q)² Θ(Q) μ(Q) over every cell.
    pub fn beta_wolff_sum(&self, lat: &Lattice) -> f64 {
        lat.ids().map(|q| self.records[q.0].beta2_2b.powi(2) * self.records[q.0].big_theta * lat.mass(q)).sum()
    }

    /// Checks μ(2B_{Q_m})/ℓ(Q_m)ⁿ ≤ A0^{-m/2} 𝒫(Q_0) along every chain Q_m ⊂ … ⊂ Q_1
    /// of non-𝒫-doubling cells below Q_0. Returns (cells checked, violations).
    pub fn chain_decay(&self, lat: &Lattice) -> ChainDecay {
        let mut report = ChainDecay::default();
        for id in lat.ids() {
            if self.records[id.0].is_pdoubling {
                continue;
            }
            let top = lat.ancestors(id).find(|&c| self.records[c.0].is_pdoubling);
            let Some(q0) = top else { continue };
            let m = (lat.cube(id).generation - lat.cube(q0).generation) as f64;
            let bound = self.a0.powf(-m / 2.0) * self.records[q0.0].p;
            let ratio = self.records[id.0].theta2b / bound;
            report.checked += 1;
            report.worst_ratio = report.worst_ratio.max(ratio);
            if ratio > 1.0 + 1e-12 {
                report.violations += 1;
            }
        }
        report
    }

    /// For 𝒫-doubling Q and P ∈ hd_k(Q) ∩ 𝒟(4Q) with k ≥ 4, counts how often
    /// Θ(P) = A0^{kn}Θ(Q) with P 𝒫-doubling fails.
    pub fn jump_regularity(&self, lat: &Lattice, mu: &DiscreteMeasure) -> JumpRegularity {
        let max_exp = self.records.iter().map(|r| r.theta_exp).max().unwrap_or(0);
        let mut report = JumpRegularity::default();
        for q in lat.ids().filter(|&q| self.records[q.0].is_pdoubling) {
            let q_exp = self.records[q.0].theta_exp;
            let starts: Vec<CubeId> = lat.lambda_dilate_cells(mu, q, 4.0).iter().flat_map(|&c| lat.children(c).iter().copied()).collect();
            for k in 4..=max_exp.saturating_sub(q_exp) {
                for p in self.hd_k_from(lat, q, k, &starts) {
                    report.checked += 1;
                    if self.records[p.0].theta_exp != q_exp + k || !self.records[p.0].is_pdoubling {
                        report.violations += 1;
                    }
                }
            }
        }
        report
    }

    /// Writes one CSV row per cell.
    ///
    /// Columns: gen, index, theta2B, BigTheta, P, beta2_2B, E4Q, is_pdoubling, is_HE.
    pub fn write_csv<W: Write>(&self, lat: &Lattice, out: W) -> Result<(), CoeffError> {
        self.check_size(lat)?;
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["gen", "index", "theta2B", "BigTheta", "P", "beta2_2B", "E4Q", "is_pdoubling", "is_HE"])?;
        for id in lat.ids() {
            let cube = lat.cube(id);
            let r = &self.records[id.0];
            writer.write_record([
                cube.generation.to_string(),
                cube.index.to_string(),
                r.theta2b.to_string(),
                r.big_theta.to_string(),
                r.p.to_string(),
                r.beta2_2b.to_string(),
                r.e4q.to_string(),
                r.is_pdoubling.to_string(),
                r.is_he.to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn dim_growth(&self) -> usize {
        self.dim_growth
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ChainDecay {
    pub checked: usize,
    pub violations: usize,
    pub worst_ratio: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct JumpRegularity {
    pub checked: usize,
    pub violations: usize,
}

impl JumpRegularity {
    pub fn violation_rate(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.violations as f64 / self.checked as f64
        }
    }
}

/// D(P, Q) = ℓ(P) + dist(P, Q) + ℓ(Q).
pub fn separation(lat: &Lattice, mu: &DiscreteMeasure, p: CubeId, q: CubeId) -> f64 {
    lat.side(p) + lat.dist_cubes(mu, p, q) + lat.side(q)
}

/// 𝒬_Reg(Q) = Σ_{P∈family} ℓ(P) μ(P) / D(P, Q)^{n+1}.
pub fn q_reg_coeff(lat: &Lattice, mu: &DiscreteMeasure, family: &[CubeId], q: CubeId) -> f64 {
    let exponent = lat.dim_growth() as i32 + 1;
    family.iter().map(|&p| lat.side(p) * lat.mass(p) / separation(lat, mu, p, q).powi(exponent)).sum()
}

#[cfg(test)]
mod tests;
