//! Regularized cubes Reg(e′(R)) from the distance function d_R, and the
//! (j, k) selection of the H families.

use rayon::prelude::*;
use serde::Serialize;

use crate::lattice::CubeId;
use crate::measure::kdtree::dist2;
use crate::riesz::{SiteDistance, SuppressionFn};

use super::{CellMask, Corona, CoronaError, GeneralizedTree};

/// Largest-cell rule ℓ(Q_x) ≤ d_{R,ℓ0}/60.
const REG_RATIO: f64 = 60.0;
/// Radius multiple of the balls B(x_P, 50ℓ(P)) in the regularity diagnostics.
const REG_BALL: f64 = 50.0;
/// Atoms sampled per ball in the two-sided d check.
const BALL_SAMPLES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegDiagnostics {
    /// min d_{R,ℓ0}(x)/ℓ(P) over x ∈ B(x_P, 50ℓ(P)); regular families have ≥ 10.
    pub min_lower_ratio: f64,
    /// Fitted c in d_{R,ℓ0}(x) ≤ cℓ(P) on the same balls.
    pub max_upper_ratio: f64,
    /// Largest side ratio between cells whose 50-balls meet.
    pub neighbor_ratio: f64,
    /// Largest number of 50-balls containing a Reg centre.
    pub max_overlap: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Regularized {
    pub root: CubeId,
    /// ℓ₀ after any halving.
    pub ell0: f64,
    pub halvings: u32,
    /// Reg cells found by the 1/60 rule, pairwise disjoint.
    pub reg: Vec<CubeId>,
    /// Atoms of e′(R) for which no lattice cell is small enough.
    pub unresolved_atoms: usize,
    /// Finest cells holding the unresolved atoms.
    pub fallback_cells: Vec<CubeId>,
    pub diagnostics: RegDiagnostics,
    #[serde(skip)]
    d_root: SuppressionFn,
}

impl Regularized {
    /// d_R(x) = inf_{Q∈𝒯(e′(R))} (dist(x, Q) + ℓ(Q)).
    pub fn d_root(&self) -> &SuppressionFn {
        &self.d_root
    }

    /// d_{R,ℓ0}(x) = max(ℓ₀, d_R(x)).
    pub fn d(&self, x: &[f64]) -> f64 {
        self.d_root.eval(x).max(self.ell0)
    }

    /// d_{R,ℓ0} as a suppression function.
    pub fn d_floor(&self) -> SuppressionFn {
        let (inner, floor) = (self.d_root.clone(), self.ell0);
        SuppressionFn::custom(move |x| inner.eval(x).max(floor))
    }
}

/// Result of the (j, k) selection over H_m(e_{h,j}(R)).
#[derive(Debug, Clone, Serialize)]
pub struct BigHSelection {
    pub j: usize,
    pub k: usize,
    /// H = H_k(e_{h,j}(R)).
    pub family: Vec<CubeId>,
    /// H′ = H_k(e_{h,j+1}(R)).
    pub family_next: Vec<CubeId>,
    pub fallback: bool,
    /// (j, σ_p(H_m(e_{h,j})) for m = 0..=k_{Λ*}+2).
    pub sums: Vec<(usize, Vec<f64>)>,
}

impl<'a> Corona<'a> {
    /// Reg(e′(R)) for the generalized tree of R. ℓ₀ is halved until the cells of
    /// HD₁(e(R)) with ℓ ≥ ℓ₀ carry half of their total mass.
    pub fn regularize(&self, tree: &GeneralizedTree, ell0: f64) -> Result<Regularized, CoronaError> {
        let (lat, mu) = (self.lat, self.mu);
        let r = tree.root;
        let e1 = self.enlarged(r, tree.h + 1);

        let mut offsets = vec![f64::INFINITY; mu.len()];
        for &q in &tree.tree {
            let side = lat.side(q);
            for &a in &lat.cube(q).members {
                offsets[a] = offsets[a].min(side);
            }
        }
        let sites: Vec<usize> = e1.atoms(lat).into_iter().filter(|&a| offsets[a].is_finite()).collect();
        let points: Vec<Vec<f64>> = sites.iter().map(|&a| mu.position(a).to_vec()).collect();
        let site_offsets = sites.iter().map(|&a| offsets[a]).collect();
        let d_root = SiteDistance::new(mu.dim_growth(), &points, site_offsets).map(SuppressionFn::site_distance).ok_or(CoronaError::TooShallow(r))?;

        let total: f64 = tree.hd1_e.iter().map(|&q| lat.mass(q)).sum();
        let mut ell0 = ell0;
        let mut halvings = 0;
        while halvings < 200 && tree.hd1_e.iter().filter(|&&q| lat.side(q) >= ell0).map(|&q| lat.mass(q)).sum::<f64>() < 0.5 * total {
            ell0 *= 0.5;
            halvings += 1;
        }

        let d_values: Vec<f64> = (0..mu.len()).into_par_iter().map(|a| d_root.eval(mu.position(a)).max(ell0)).collect();
        let mut cell_min = vec![f64::INFINITY; lat.len()];
        for id in lat.ids().collect::<Vec<_>>().into_iter().rev() {
            let cube = lat.cube(id);
            cell_min[id.0] = if cube.is_leaf() {
                cube.members.iter().map(|&a| d_values[a]).fold(f64::INFINITY, f64::min)
            } else {
                cube.children.iter().map(|c| cell_min[c.0]).fold(f64::INFINITY, f64::min)
            };
        }

        let mut reg = Vec::new();
        let mut fallback_cells = Vec::new();
        let mut unresolved_atoms = 0;
        for a in e1.atoms(lat) {
            let found = (0..lat.depth()).map(|g| lat.owner(g, a)).find(|&q| lat.side(q) * REG_RATIO <= cell_min[q.0]);
            match found {
                Some(q) => reg.push(q),
                None => {
                    unresolved_atoms += 1;
                    fallback_cells.push(lat.owner(lat.depth() - 1, a));
                }
            }
        }
        reg.sort_unstable();
        reg.dedup();
        fallback_cells.sort_unstable();
        fallback_cells.dedup();
        if reg.is_empty() {
            return Err(CoronaError::TooShallow(r));
        }
        let diagnostics = self.reg_diagnostics(&reg, &d_values, &d_root, ell0);
        Ok(Regularized { root: r, ell0, halvings, reg, unresolved_atoms, fallback_cells, diagnostics, d_root })
    }

    fn reg_diagnostics(&self, reg: &[CubeId], d_values: &[f64], d_root: &SuppressionFn, ell0: f64) -> RegDiagnostics {
        let (lat, mu) = (self.lat, self.mu);
        let mut out = RegDiagnostics { min_lower_ratio: f64::INFINITY, max_upper_ratio: 0.0, neighbor_ratio: 1.0, max_overlap: 0 };
        for &p in reg {
            let cube = lat.cube(p);
            let side = lat.side(p);
            let ball = mu.atoms_within(&cube.center, REG_BALL * side);
            let stride = ball.len().div_ceil(BALL_SAMPLES).max(1);
            let centre_value = d_root.eval(&cube.center).max(ell0);
            for value in ball.iter().step_by(stride).map(|&a| d_values[a]).chain([centre_value]) {
                out.min_lower_ratio = out.min_lower_ratio.min(value / side);
                out.max_upper_ratio = out.max_upper_ratio.max(value / side);
            }
        }
        for (i, &p) in reg.iter().enumerate() {
            let (cp, rp) = (&lat.cube(p).center, REG_BALL * lat.side(p));
            let mut overlap = 0;
            for (k, &q) in reg.iter().enumerate() {
                let (cq, rq) = (&lat.cube(q).center, REG_BALL * lat.side(q));
                let gap = dist2(cp, cq).sqrt();
                if gap <= rq {
                    overlap += 1;
                }
                if k > i && gap <= rp + rq {
                    out.neighbor_ratio = out.neighbor_ratio.max(rp / rq).max(rq / rp);
                }
            }
            out.max_overlap = out.max_overlap.max(overlap);
        }
        out
    }

    /// The first j of the enlargement grid (with its maximizing k) such that
    /// σ_p(H_m(e_{h,j+1})) ≤ Λ*^{ε_n} σ_p(H_k(e_{h,j})) for every m ≤ k_{Λ*}+2,
    /// where H_m = 𝒯_Reg(e′(R)) ∩ hd^{k_{Λ*}+m}(R).
    pub fn select_big_h(&self, tree: &GeneralizedTree, reg: &Regularized, p: f64) -> Result<BigHSelection, CoronaError> {
        let (lat, mu) = (self.lat, self.mu);
        let params = self.params();
        let r = tree.root;
        let h = tree.h;
        let e1 = self.enlarged(r, h + 1);
        let mut t_reg = vec![r];
        t_reg.extend(self.cells_above(&e1.cells, &CellMask::new(lat, &reg.reg)));
        let t_reg_mask = CellMask::new(lat, &t_reg);
        let kls = params.k_lambda_star() as i32;
        let top_m = params.k_lambda_star() as usize + 2;
        let h_families: Vec<Vec<CubeId>> = (0..=top_m)
            .map(|m| self.coeffs.hd_k_from(lat, r, kls + m as i32, &e1.cells).into_iter().filter(|&q| t_reg_mask.has(q)).collect())
            .collect();

        let grid: Vec<usize> = if self.strict() {
            let top = (params.a0 / 4.0).floor() as usize;
            if top < 10 {
                return Err(CoronaError::EmptyGrid(params.a0));
            }
            (10..=top).collect()
        } else {
            (1..=4).collect()
        };
        let inside_double = |j: usize| -> Vec<Vec<CubeId>> {
            let mut mask = vec![false; mu.len()];
            for q in self.enlarged(r, h).cells {
                for a in self.enlarged(q, j).atoms(lat) {
                    mask[a] = true;
                }
            }
            h_families.iter().map(|fam| fam.iter().copied().filter(|&q| lat.cube(q).members.iter().all(|&a| mask[a])).collect()).collect()
        };
        let bound = params.lambda_star(self.n()).powf(params.eps_n);
        let mut sums = Vec::new();
        let mut current = inside_double(grid[0]);
        let mut result = None;
        for &j in &grid {
            let next = inside_double(j + 1);
            let here: Vec<f64> = current.iter().map(|f| self.sigma_p(f, p)).collect();
            let there: Vec<f64> = next.iter().map(|f| self.sigma_p(f, p)).collect();
            let k = (0..here.len()).fold(0, |best, m| if here[m] > here[best] { m } else { best });
            let worst = there.iter().copied().fold(0.0, f64::max);
            sums.push((j, here.clone()));
            let pass = worst <= bound * here[k];
            if pass || j == grid[grid.len() - 1] {
                result = Some((j, k, current[k].clone(), next[k].clone(), !pass));
                if pass {
                    break;
                }
            }
            current = next;
        }
        let (j, k, family, family_next, fallback) = result.expect("grid is nonempty");
        if fallback {
            log::info!("no admissible (j, k) for {r:?}; using j = {j}");
        }
        Ok(BigHSelection { j, k, family, family_next, fallback, sums })
    }
}
