//! Stopping-time machinery over a lattice: the Top forest, enlarged cubes and
//! moderate-decrement roots, generalized trees, layers, regularized cubes and
//! spreading subtrees.

mod cover;
mod enlarged;
mod layers;
mod regular;
mod spread;


pub use cover::{pairwise_disjoint, select_disjoint, BallCandidate, CoverSelection};
pub use enlarged::{ball_nesting_holds, enlarged_radius, EnlargedCube, GeneralizedTree, Generations, HSelection, MdwAnalysis};
pub use layers::{layers, Layer};
pub use regular::{BigHSelection, RegDiagnostics, Regularized};
pub use spread::{SpreadTree, StopCause};

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::coeffs::CoeffTable;
use crate::lattice::{CubeId, Lattice, Params};
use crate::measure::DiscreteMeasure;

#[derive(Debug, Error)]
pub enum CoronaError {
    #[error("coefficient table has {table} records but the lattice has {lattice} cells")]
    SizeMismatch { table: usize, lattice: usize },
    #[error("strict constants need A0 ≥ 44 for the enlargement grid, got A0 = {0}")]
    EmptyGrid(f64),
    #[error("cell {0:?} is not a moderate-decrement root")]
    NotMdw(CubeId),
    #[error("cell {cube:?} cannot root a spreading subtree: {reason}")]
    BadSubtreeRoot { cube: CubeId, reason: &'static str },
    #[error("lattice too shallow: no atom of e'({0:?}) has a cell with side ≤ d/60")]
    TooShallow(CubeId),
}

/// Shared read-only inputs of every corona computation.
#[derive(Clone, Copy)]
pub struct Corona<'a> {
    pub lat: &'a Lattice,
    pub mu: &'a DiscreteMeasure,
    pub coeffs: &'a CoeffTable,
}

/// Flat membership flags over lattice cells.
#[derive(Debug, Clone)]
pub(crate) struct CellMask(Vec<bool>);

impl CellMask {
    pub(crate) fn new(lat: &Lattice, cells: &[CubeId]) -> Self {
        let mut flags = vec![false; lat.len()];
        cells.iter().for_each(|c| flags[c.0] = true);
        CellMask(flags)
    }

    pub(crate) fn has(&self, id: CubeId) -> bool {
        self.0[id.0]
    }
}

impl<'a> Corona<'a> {
    pub fn new(lat: &'a Lattice, mu: &'a DiscreteMeasure, coeffs: &'a CoeffTable) -> Result<Self, CoronaError> {
        if coeffs.len() != lat.len() {
            return Err(CoronaError::SizeMismatch { table: coeffs.len(), lattice: lat.len() });
        }
        Ok(Corona { lat, mu, coeffs })
    }

    pub fn params(&self) -> &'a Params {
        self.lat.params()
    }

    pub fn n(&self) -> usize {
        self.lat.dim_growth()
    }

    pub fn strict(&self) -> bool {
        self.params().strict_paper_constants
    }

    pub fn b_const(&self) -> f64 {
        self.params().b_const(self.n())
    }

    pub fn delta0(&self) -> f64 {
        self.params().delta0(self.n())
    }

    pub fn is_pdoubling(&self, id: CubeId) -> bool {
        self.coeffs.is_pdoubling(id)
    }

    /// Θ(P) ≥ A0^{kn} Θ(R).
    pub fn is_high(&self, p: CubeId, r: CubeId, k: u32) -> bool {
        self.coeffs.get(p).theta_exp >= self.coeffs.get(r).theta_exp.saturating_add(k as i32)
    }

    /// 𝒫(P) ≤ δ₀ Θ(R).
    pub fn is_low(&self, p: CubeId, r: CubeId) -> bool {
        self.coeffs.p(p) <= self.delta0() * self.coeffs.big_theta(r)
    }

    pub fn sigma(&self, family: &[CubeId]) -> f64 {
        self.coeffs.sigma(self.lat, family)
    }

    pub fn sigma_p(&self, family: &[CubeId], p: f64) -> f64 {
        self.coeffs.sigma_p(self.lat, family, p)
    }

    /// HD(R) ∩ 𝒟(R) with HD = hd^{kΛ}.
    pub fn hd(&self, r: CubeId) -> Vec<CubeId> {
        let k = self.params().k_lambda;
        self.lat.maximal_cells(self.lat.children(r), |p| self.is_high(p, r, k))
    }

    /// LD(R) ∩ 𝒟(R).
    pub fn ld(&self, r: CubeId) -> Vec<CubeId> {
        self.lat.maximal_cells(self.lat.children(r), |p| self.is_low(p, r))
    }

    /// Stop(R): maximal cells of HD(R) ∪ LD(R) inside R.
    pub fn stop(&self, r: CubeId) -> Vec<CubeId> {
        let k = self.params().k_lambda;
        self.lat.maximal_cells(self.lat.children(r), |p| self.is_high(p, r, k) || self.is_low(p, r))
    }

    /// Maximal 𝒫-doubling cells inside the given cells (the cells themselves included).
    pub fn maximal_pdoubling(&self, cells: &[CubeId]) -> Vec<CubeId> {
        self.lat.maximal_cells(cells, |p| self.is_pdoubling(p))
    }

    /// Cells below `starts` (included) that are not strictly inside a cell of `walls`.
    pub(crate) fn cells_above(&self, starts: &[CubeId], walls: &CellMask) -> Vec<CubeId> {
        let mut out = Vec::new();
        let mut stack: Vec<CubeId> = starts.iter().rev().copied().collect();
        while let Some(cur) = stack.pop() {
            out.push(cur);
            if !walls.has(cur) {
                stack.extend(self.lat.children(cur).iter().rev());
            }
        }
        out
    }

    /// The Top forest with every root's families and moderate-decrement annotations.
    pub fn build_top(&self) -> Result<CoronaForest, CoronaError> {
        let mut roots = Vec::new();
        let mut queue = std::collections::VecDeque::from([self.lat.root()]);
        while let Some(r) = queue.pop_front() {
            let stop = self.stop(r);
            let end = self.maximal_pdoubling(&stop);
            let mut tree = vec![r];
            tree.extend(self.cells_above(self.lat.children(r), &CellMask::new(self.lat, &end)));
            let mdw = self.analyze(r)?;
            queue.extend(end.iter().copied());
            roots.push(RootFamilies {
                root: r,
                generation: self.lat.cube(r).generation,
                theta_exp: self.coeffs.get(r).theta_exp,
                is_pdoubling: self.is_pdoubling(r),
                sigma: self.sigma(&[r]),
                sigma_stop: self.sigma(&stop),
                hd: self.hd(r),
                ld: self.ld(r),
                stop,
                end,
                tree,
                is_mdw: mdw.is_some(),
                h: mdw.as_ref().map(|m| m.h.h),
                h_fallback: mdw.as_ref().is_some_and(|m| m.h.fallback),
                is_trc: mdw.as_ref().map(|m| m.is_tractable()),
                sigma_hd1_e: mdw.as_ref().map_or(0.0, |m| m.tree.sigma_hd1_e),
            });
        }
        let index = roots.iter().enumerate().map(|(i, f)| (f.root, i)).collect();
        Ok(CoronaForest { roots, index })
    }
}

/// Families and annotations attached to one root R of Top.
#[derive(Debug, Clone, Serialize)]
pub struct RootFamilies {
    pub root: CubeId,
    pub generation: usize,
    pub theta_exp: i32,
    pub is_pdoubling: bool,
    /// σ(R) = Θ(R)² μ(R).
    pub sigma: f64,
    pub sigma_stop: f64,
    pub hd: Vec<CubeId>,
    pub ld: Vec<CubeId>,
    pub stop: Vec<CubeId>,
    pub end: Vec<CubeId>,
    pub tree: Vec<CubeId>,
    pub is_mdw: bool,
    pub h: Option<usize>,
    /// The enlargement grid had no admissible j and its last point was used.
    pub h_fallback: bool,
    pub is_trc: Option<bool>,
    /// σ(HD₁(e(R))), zero when R is not a moderate-decrement root.
    pub sigma_hd1_e: f64,
}

#[derive(Debug, Clone)]
pub struct CoronaForest {
    pub roots: Vec<RootFamilies>,
    index: BTreeMap<CubeId, usize>,
}

/// Outcome of the exact coverage scan over all cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CoverageCheck {
    pub cells: usize,
    pub uncovered: usize,
    /// Cells shared by two trees other than as root of one and end of the other.
    pub bad_overlaps: usize,
}

impl CoverageCheck {
    pub fn holds(&self) -> bool {
        self.uncovered == 0 && self.bad_overlaps == 0
    }
}

/// Compact per-root summary for the forest report.
#[derive(Debug, Clone, Serialize)]
pub struct RootSummary {
    pub root: usize,
    pub generation: usize,
    pub theta_exp: i32,
    pub sigma: f64,
    pub hd: usize,
    pub ld: usize,
    pub stop: usize,
    pub end: usize,
    pub tree: usize,
    pub is_mdw: bool,
    pub h: Option<usize>,
    pub is_trc: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ForestReport {
    pub roots: Vec<RootSummary>,
    pub mdw_count: usize,
    pub trc_count: usize,
    /// Histogram of h(R) over moderate-decrement roots.
    pub h_histogram: BTreeMap<usize, usize>,
    pub coverage: CoverageCheck,
}

impl CoronaForest {
    pub fn roots(&self) -> impl Iterator<Item = CubeId> + '_ {
        self.roots.iter().map(|f| f.root)
    }

    pub fn get(&self, root: CubeId) -> Option<&RootFamilies> {
        self.index.get(&root).map(|&i| &self.roots[i])
    }

    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Every cell lies in some tree, and two trees share a cell only when it
    /// is the root of one and an end cell of the other.
    pub fn check_coverage(&self, lat: &Lattice) -> CoverageCheck {
        let mut owners: Vec<Vec<usize>> = vec![Vec::new(); lat.len()];
        for (i, f) in self.roots.iter().enumerate() {
            for &c in &f.tree {
                owners[c.0].push(i);
            }
        }
        let mut check = CoverageCheck { cells: lat.len(), uncovered: 0, bad_overlaps: 0 };
        for (c, trees) in owners.iter().enumerate() {
            let cell = CubeId(c);
            match trees.as_slice() {
                [] => check.uncovered += 1,
                [_] => {}
                [a, b] => {
                    let (fa, fb) = (&self.roots[*a], &self.roots[*b]);
                    let linked = |upper: &RootFamilies, lower: &RootFamilies| lower.root == cell && upper.end.contains(&cell);
                    if !(linked(fa, fb) || linked(fb, fa)) {
                        check.bad_overlaps += 1;
                    }
                }
                _ => check.bad_overlaps += 1,
            }
        }
        check
    }

    pub fn report(&self, lat: &Lattice) -> ForestReport {
        let mut h_histogram = BTreeMap::new();
        for f in &self.roots {
            if let Some(h) = f.h {
                *h_histogram.entry(h).or_insert(0) += 1;
            }
        }
        ForestReport {
            roots: self
                .roots
                .iter()
                .map(|f| RootSummary {
                    root: f.root.0,
                    generation: f.generation,
                    theta_exp: f.theta_exp,
                    sigma: f.sigma,
                    hd: f.hd.len(),
                    ld: f.ld.len(),
                    stop: f.stop.len(),
                    end: f.end.len(),
                    tree: f.tree.len(),
                    is_mdw: f.is_mdw,
                    h: f.h,
                    is_trc: f.is_trc,
                })
                .collect(),
            mdw_count: self.roots.iter().filter(|f| f.is_mdw).count(),
            trc_count: self.roots.iter().filter(|f| f.is_trc == Some(true)).count(),
            h_histogram,
            coverage: self.check_coverage(lat),
        }
    }
}
