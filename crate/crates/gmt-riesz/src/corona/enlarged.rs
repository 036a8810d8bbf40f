//! Enlarged cubes e_j(R), moderate decrement of Wolff energy, the
//! generalized tree 𝒯(e′(R)) and the GH/Gen/Trc iteration.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::lattice::{CubeId, Lattice};
use crate::measure::kdtree::dist2;

use super::cover::{pairwise_disjoint, select_disjoint, BallCandidate};
use super::{CellMask, Corona, CoronaError};

/// e_j(R): R together with the cells one generation finer whose distance to
/// x_R is below ℓ(R)/2 + 2jℓ′, ℓ′ the finer side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnlargedCube {
    pub base: CubeId,
    pub j: usize,
    /// Sorted cells of generation gen(R)+1; empty when R is in the finest generation.
    pub cells: Vec<CubeId>,
}

impl EnlargedCube {
    /// Whether a cell with ℓ ≤ ℓ(R) is contained in e_j(R).
    pub fn contains(&self, lat: &Lattice, cell: CubeId) -> bool {
        if cell == self.base {
            return true;
        }
        let g = lat.cube(self.base).generation + 1;
        lat.cube(cell).generation >= g && self.cells.binary_search(&lat.owner(g, lat.cube(cell).center_atom)).is_ok()
    }

    pub fn atoms(&self, lat: &Lattice) -> Vec<usize> {
        let mut atoms: Vec<usize> = if self.cells.is_empty() {
            lat.cube(self.base).members.clone()
        } else {
            self.cells.iter().flat_map(|c| lat.cube(*c).members.iter().copied()).collect()
        };
        atoms.sort_unstable();
        atoms
    }

    /// 𝒟(e_j(R)): R and every cell below the finer cells, coarsest first.
    pub fn family(&self, lat: &Lattice) -> Vec<CubeId> {
        let mut out = vec![self.base];
        out.extend(self.cells.iter().flat_map(|&c| lat.subtree(c)));
        out
    }
}

/// Minimal admissible j of the enlargement grid and the resulting h(R).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HSelection {
    pub j: usize,
    pub h: usize,
    /// No grid point passed the ratio test; the last one was taken.
    pub fallback: bool,
    /// (j, σ(HD₁(e_j(R)))) over every enlargement evaluated.
    pub sigmas: Vec<(usize, f64)>,
}

/// The eight families attached to 𝒯(e′(R)).
#[derive(Debug, Clone, Serialize)]
pub struct GeneralizedTree {
    pub root: CubeId,
    pub h: usize,
    pub hd1_e: Vec<CubeId>,
    pub hd1_e1: Vec<CubeId>,
    pub hd2_e1: Vec<CubeId>,
    pub stop2_e1: Vec<CubeId>,
    pub tstop: Vec<CubeId>,
    pub neg: Vec<CubeId>,
    pub end: Vec<CubeId>,
    pub tree: Vec<CubeId>,
    pub sigma_hd1_e: f64,
    pub sigma_hd2_e1: f64,
    /// Every Neg cell lies outside R.
    pub neg_outside_root: bool,
    /// min over Neg of ℓ(Q)/(δ₀²ℓ(R)); infinite when Neg is empty.
    pub min_neg_side_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MdwAnalysis {
    pub root: CubeId,
    pub h: HSelection,
    pub tree: GeneralizedTree,
    pub tractable: bool,
}

impl MdwAnalysis {
    pub fn is_tractable(&self) -> bool {
        self.tractable
    }
}

/// Generations of GH families below a moderate-decrement root.
#[derive(Debug, Clone, Serialize)]
pub struct Generations {
    pub root: CubeId,
    /// Gen_0 = {R}, Gen_1, … up to the cap or exhaustion.
    pub gens: Vec<Vec<CubeId>>,
    /// Trc_j = Gen_j ∩ Trc.
    pub trc: Vec<Vec<CubeId>>,
    pub gh: BTreeMap<CubeId, Vec<CubeId>>,
    /// Generated cells with an atom outside B(e″(R)).
    pub outside_ball: usize,
    /// Every GH family has pairwise disjoint balls B(e″(Q)).
    pub gh_disjoint: bool,
    /// HD₁(e′) cells passing the density test but not 𝒫-doubling.
    pub skipped_not_pdoubling: usize,
}

/// Radius (1/2 + 2A0⁻¹(h+k))ℓ(R) of B(e^{(k)}(R)).
pub fn enlarged_radius(a0: f64, side: f64, h: usize, k: usize) -> f64 {
    (0.5 + 2.0 * (h + k) as f64 / a0) * side
}

/// The radius inclusions B(e^{(k)}) ⊆ (1+8/A0)B(e^{(k−2)}) ⊆ B(e^{(k+4)})
/// for every k ≥ 2 with h+k−2 ≤ A0/2, and B(e^{(10)}) ⊆ B(x_R, 3ℓ/2) when
/// h+10 ≤ A0/4. Returns false on the first failure.
pub fn ball_nesting_holds(a0: f64, h: usize) -> bool {
    let r = |k: usize| enlarged_radius(a0, 1.0, h, k);
    let chain =
        (2..).take_while(|&k| (h + k - 2) as f64 <= a0 / 2.0).all(|k| r(k) <= (1.0 + 8.0 / a0) * r(k - 2) && (1.0 + 8.0 / a0) * r(k - 2) <= r(k + 4));
    let tenth = (h + 10) as f64 > a0 / 4.0 || r(10) <= 1.5;
    chain && tenth
}

impl<'a> Corona<'a> {
    pub fn enlarged(&self, r: CubeId, j: usize) -> EnlargedCube {
        let lat = self.lat;
        let g = lat.cube(r).generation;
        if lat.children(r).is_empty() {
            return EnlargedCube { base: r, j, cells: Vec::new() };
        }
        let radius = 0.5 * lat.side(r) + 2.0 * j as f64 * self.params().side(g + 1);
        let center = &lat.cube(r).center;
        let mut cells: Vec<CubeId> = lat.children(r).to_vec();
        self.mu.for_each_within(center, radius, |a| {
            if dist2(self.mu.position(a), center) < radius * radius {
                cells.push(lat.owner(g + 1, a));
            }
        });
        cells.sort_unstable();
        cells.dedup();
        EnlargedCube { base: r, j, cells }
    }

    pub fn enlarged_radius(&self, r: CubeId, h: usize, k: usize) -> f64 {
        enlarged_radius(self.params().a0, self.lat.side(r), h, k)
    }

    /// Bad(R) restricted to the subtrees of `starts`: maximal cells of LD(R) ∪ HD_*(R).
    pub fn bad(&self, r: CubeId, starts: &[CubeId]) -> Vec<CubeId> {
        let k = self.params().k_lambda_star();
        self.lat.maximal_cells(starts, |p| self.is_high(p, r, k) || self.is_low(p, r))
    }

    /// Stop_*(R) = Bad(R) ∩ 𝒟(R).
    pub fn stop_star(&self, r: CubeId) -> Vec<CubeId> {
        self.bad(r, self.lat.children(r))
    }

    fn keep_high_star(&self, r: CubeId, cells: Vec<CubeId>) -> Vec<CubeId> {
        let k = self.params().k_lambda_star();
        cells.into_iter().filter(|&p| self.is_high(p, r, k)).collect()
    }

    /// HD₁(R) = Stop_*(R) ∩ HD_*(R).
    pub fn hd1(&self, r: CubeId) -> Vec<CubeId> {
        self.keep_high_star(r, self.stop_star(r))
    }

    pub fn stop_star_e(&self, e: &EnlargedCube) -> Vec<CubeId> {
        self.bad(e.base, &e.cells)
    }

    /// HD₁(e_j(R)) = Stop_*(e_j(R)) ∩ HD_*(R).
    pub fn hd1_e(&self, e: &EnlargedCube) -> Vec<CubeId> {
        self.keep_high_star(e.base, self.stop_star_e(e))
    }

    /// R is 𝒫-doubling and σ(HD_*(R) ∩ Stop_*(R)) ≥ B⁻¹σ(R).
    pub fn is_mdw(&self, r: CubeId) -> bool {
        self.is_pdoubling(r) && self.sigma(&self.hd1(r)) >= self.sigma(&[r]) / self.b_const()
    }

    /// Minimal j with σ(HD₁(e_j)) ≤ B^{1/4} σ(HD₁(e_{j−step})). Strict
    /// constants use j ∈ [10, A0/4] with step 10; desk constants use
    /// j ∈ [1, 4] with step 1 and fall back to j = 4.
    pub fn select_h(&self, r: CubeId) -> Result<HSelection, CoronaError> {
        let (grid, step): (Vec<usize>, usize) = if self.strict() {
            let top = (self.params().a0 / 4.0).floor() as usize;
            if top < 10 {
                return Err(CoronaError::EmptyGrid(self.params().a0));
            }
            ((10..=top).collect(), 10)
        } else {
            ((1..=4).collect(), 1)
        };
        let mut sigmas: BTreeMap<usize, f64> = BTreeMap::new();
        let mut sigma_at = |j: usize| *sigmas.entry(j).or_insert_with(|| self.sigma(&self.hd1_e(&self.enlarged(r, j))));
        let bound = self.b_const().powf(0.25);
        let mut chosen = None;
        for &j in &grid {
            if sigma_at(j) <= bound * sigma_at(j - step) {
                chosen = Some(j);
                break;
            }
        }
        let fallback = chosen.is_none();
        let j = chosen.unwrap_or(grid[grid.len() - 1]);
        if fallback {
            log::info!("no admissible enlargement for {r:?}; using j = {j}");
        }
        Ok(HSelection { j, h: j - step, fallback, sigmas: sigmas.into_iter().collect() })
    }

    /// HD₁, HD₂, Stop₂, 𝒯_Stop, Neg, End and 𝒯 for e′(R) = e_{h+1}(R).
    pub fn generalized_tree(&self, r: CubeId, h: usize) -> GeneralizedTree {
        let lat = self.lat;
        let e = self.enlarged(r, h);
        let e1 = self.enlarged(r, h + 1);
        let hd1_e = self.hd1_e(&e);
        let stop_e1 = self.stop_star_e(&e1);
        let hd1_e1 = self.keep_high_star(r, stop_e1.clone());
        let hd1_mask = CellMask::new(lat, &hd1_e1);
        let mut hd2_e1 = Vec::new();
        let mut stop2_e1: Vec<CubeId> = stop_e1.iter().copied().filter(|c| !hd1_mask.has(*c)).collect();
        for &q in &hd1_e1 {
            let inner = self.stop_star(q);
            hd2_e1.extend(self.keep_high_star(q, inner.clone()));
            stop2_e1.extend(inner);
        }
        let stop2_mask = CellMask::new(lat, &stop2_e1);
        let mut tstop = vec![r];
        tstop.extend(self.cells_above(&e1.cells, &stop2_mask));

        let root_pd = self.is_pdoubling(r);
        let mut neg = Vec::new();
        if !root_pd {
            neg.push(r);
        }
        let mut stack: Vec<(CubeId, bool)> = e1.cells.iter().rev().map(|&c| (c, (root_pd && lat.contains(r, c)) || self.is_pdoubling(c))).collect();
        while let Some((cell, covered)) = stack.pop() {
            if !covered {
                neg.push(cell);
            }
            if !stop2_mask.has(cell) {
                stack.extend(lat.children(cell).iter().rev().map(|&c| (c, covered || self.is_pdoubling(c))));
            }
        }
        let neg_mask = CellMask::new(lat, &neg);
        let mut end: Vec<CubeId> = stop2_e1.iter().copied().filter(|c| neg_mask.has(*c)).collect();
        let positive: Vec<CubeId> = stop2_e1.iter().copied().filter(|c| !neg_mask.has(*c)).collect();
        end.extend(self.maximal_pdoubling(&positive));
        let mut tree = vec![r];
        tree.extend(self.cells_above(&e1.cells, &CellMask::new(lat, &end)));

        let delta_sq = self.delta0().powi(2) * lat.side(r);
        GeneralizedTree {
            root: r,
            h,
            sigma_hd1_e: self.sigma(&hd1_e),
            sigma_hd2_e1: self.sigma(&hd2_e1),
            neg_outside_root: neg.iter().all(|&q| !lat.contains(r, q)),
            min_neg_side_ratio: neg.iter().map(|&q| lat.side(q) / delta_sq).fold(f64::INFINITY, f64::min),
            hd1_e,
            hd1_e1,
            hd2_e1,
            stop2_e1,
            tstop,
            neg,
            end,
            tree,
        }
    }

    /// σ(HD₂(e′(R))) ≤ B σ(HD₁(e(R))).
    pub fn is_tractable(&self, tree: &GeneralizedTree) -> bool {
        tree.sigma_hd2_e1 <= self.b_const() * tree.sigma_hd1_e
    }

    /// h(R), 𝒯(e′(R)) and tractability, or None when R is not a moderate-decrement root.
    pub fn analyze(&self, r: CubeId) -> Result<Option<MdwAnalysis>, CoronaError> {
        if !self.is_mdw(r) {
            return Ok(None);
        }
        let h = self.select_h(r)?;
        let tree = self.generalized_tree(r, h.h);
        let tractable = self.is_tractable(&tree);
        Ok(Some(MdwAnalysis { root: r, h, tree, tractable }))
    }

    /// GH(R) from the analysis of R, with analyses of the candidates cached.
    fn gh(
        &self,
        parent: &MdwAnalysis,
        cache: &mut BTreeMap<CubeId, Option<MdwAnalysis>>,
        skipped: &mut usize,
    ) -> Result<(Vec<CubeId>, Vec<BallCandidate>), CoronaError> {
        let threshold = self.b_const().sqrt();
        let mut candidates = Vec::new();
        for &q in &parent.tree.hd1_e1 {
            if self.sigma(&self.hd1(q)) < threshold * self.sigma(&[q]) {
                continue;
            }
            if !self.is_pdoubling(q) {
                *skipped += 1;
                continue;
            }
            if let std::collections::btree_map::Entry::Vacant(slot) = cache.entry(q) {
                slot.insert(self.analyze(q)?);
            }
            if let Some(a) = &cache[&q] {
                candidates.push(BallCandidate {
                    cube: q,
                    center: self.lat.cube(q).center.clone(),
                    radius: self.enlarged_radius(q, a.h.h, 2),
                    weight: a.tree.sigma_hd1_e,
                });
            }
        }
        let selection = select_disjoint(&candidates, 1.0 + 8.0 / self.params().a0);
        let balls = candidates.into_iter().filter(|c| selection.chosen.contains(&c.cube)).collect();
        Ok((selection.chosen, balls))
    }

    /// GH(R) for a moderate-decrement R, whether or not its tree is tractable.
    pub fn gh_family(&self, r: CubeId) -> Result<Vec<CubeId>, CoronaError> {
        let analysis = self.analyze(r)?.ok_or(CoronaError::NotMdw(r))?;
        let mut cache = BTreeMap::new();
        Ok(self.gh(&analysis, &mut cache, &mut 0)?.0)
    }

    /// Gen_j(R) = ⋃_{Q∈Gen_{j−1}∖Trc} GH(Q) for j ≤ max_gen, with the
    /// containment of every generated cell in B(e″(R)) counted.
    pub fn gh_and_generations(&self, r: CubeId, max_gen: usize) -> Result<Generations, CoronaError> {
        let root = self.analyze(r)?.ok_or(CoronaError::NotMdw(r))?;
        let center = self.lat.cube(r).center.clone();
        let reach = self.enlarged_radius(r, root.h.h, 2);
        let mut cache = BTreeMap::from([(r, Some(root))]);
        let mut out = Generations {
            root: r,
            gens: vec![vec![r]],
            trc: Vec::new(),
            gh: BTreeMap::new(),
            outside_ball: 0,
            gh_disjoint: true,
            skipped_not_pdoubling: 0,
        };
        for _ in 0..max_gen {
            let current = out.gens.last().cloned().unwrap_or_default();
            let mut trc = Vec::new();
            let mut next = Vec::new();
            for q in current {
                let analysis = cache.get(&q).cloned().flatten().ok_or(CoronaError::NotMdw(q))?;
                if analysis.tractable {
                    trc.push(q);
                    continue;
                }
                let (family, balls) = self.gh(&analysis, &mut cache, &mut out.skipped_not_pdoubling)?;
                out.gh_disjoint &= pairwise_disjoint(&balls);
                next.extend(family.iter().copied());
                out.gh.insert(q, family);
            }
            out.trc.push(trc);
            if next.is_empty() {
                break;
            }
            out.outside_ball +=
                next.iter().filter(|&&q| self.lat.cube(q).members.iter().any(|&a| dist2(self.mu.position(a), &center) > reach * reach)).count();
            out.gens.push(next);
        }
        if out.trc.len() < out.gens.len() {
            let last = out.gens.last().cloned().unwrap_or_default();
            out.trc.push(last.into_iter().filter(|q| cache.get(q).cloned().flatten().is_some_and(|a| a.tractable)).collect());
        }
        Ok(out)
    }
}
