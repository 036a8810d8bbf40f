//! Nested dyadic-style partitions of a discrete measure with cell balls,
//! doubling flags and small-boundary diagnostics.

mod build;
mod io;
mod params;

pub use build::{build_lattice, build_lattice_with_tail, SINGLETON_TAIL};
pub use io::{read_lattice, write_lattice, LatticeDoc};
pub use params::{Params, ParamsError};

use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::kdtree::dist2;
use crate::measure::{DiscreteMeasure, MeasureError};

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("lattice document is inconsistent: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CubeId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub generation: usize,
    /// Position within its generation.
    pub index: usize,
    pub center_atom: usize,
    pub center: Vec<f64>,
    /// r(Q), the radius of B(Q).
    pub radius: f64,
    /// Inner and outer auxiliary radii used for cell assembly.
    pub aux_radii: (f64, f64),
    pub members: Vec<usize>,
    pub mass: f64,
    pub parent: Option<CubeId>,
    pub children: Vec<CubeId>,
    pub is_db: bool,
}

impl Cube {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Radius of B_Q = 28 B(Q).
    pub fn big_radius(&self) -> f64 {
        28.0 * self.radius
    }
}

#[derive(Debug, Clone)]
pub struct Lattice {
    params: Params,
    dim_growth: usize,
    atom_count: usize,
    cubes: Vec<Cube>,
    generations: Vec<Range<usize>>,
    /// `owners[g][atom]` is the generation-g cell holding the atom.
    owners: Vec<Vec<u32>>,
}

/// Per-generation outcome of the structural checks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub generation: usize,
    pub cells: usize,
    pub partition: bool,
    pub nesting: bool,
    pub inner_ball: bool,
    pub outer_ball: bool,
    pub disjoint_5b: bool,
    pub radius_bounds: bool,
    /// Largest |y − x_Q| / r(Q) over members; the outer ball needs ≤ 28.
    pub max_spread: f64,
}

impl InvariantReport {
    pub fn all_hold(&self) -> bool {
        self.partition && self.nesting && self.inner_ball && self.outer_ball && self.disjoint_5b && self.radius_bounds
    }
}

impl Lattice {
    fn from_parts(
        params: Params,
        dim_growth: usize,
        atom_count: usize,
        cubes: Vec<Cube>,
        generations: Vec<Range<usize>>,
    ) -> Result<Self, LatticeError> {
        let mut owners = Vec::with_capacity(generations.len());
        for range in &generations {
            let mut owner = vec![u32::MAX; atom_count];
            for id in range.clone() {
                for &atom in &cubes[id].members {
                    if atom >= atom_count || owner[atom] != u32::MAX {
                        return Err(LatticeError::Corrupt(format!("atom {atom} misplaced in cube {id}")));
                    }
                    owner[atom] = id as u32;
                }
            }
            if owner.contains(&u32::MAX) {
                return Err(LatticeError::Corrupt("a generation does not cover every atom".into()));
            }
            owners.push(owner);
        }
        Ok(Lattice { params, dim_growth, atom_count, cubes, generations, owners })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn dim_growth(&self) -> usize {
        self.dim_growth
    }

    pub fn atom_count(&self) -> usize {
        self.atom_count
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn cube(&self, id: CubeId) -> &Cube {
        &self.cubes[id.0]
    }

    pub fn cubes(&self) -> &[Cube] {
        &self.cubes
    }

    pub fn ids(&self) -> impl Iterator<Item = CubeId> + '_ {
        (0..self.cubes.len()).map(CubeId)
    }

    pub fn root(&self) -> CubeId {
        CubeId(0)
    }

    /// Number of generations, counting the root generation.
    pub fn depth(&self) -> usize {
        self.generations.len()
    }

    pub fn generation(&self, g: usize) -> impl Iterator<Item = CubeId> + '_ {
        self.generations.get(g).cloned().unwrap_or(0..0).map(CubeId)
    }

    pub fn owner(&self, generation: usize, atom: usize) -> CubeId {
        CubeId(self.owners[generation][atom] as usize)
    }

    /// ℓ(Q) = 56 C0 A0^{-k}.
    pub fn side(&self, id: CubeId) -> f64 {
        self.params.side(self.cubes[id.0].generation)
    }

    pub fn mass(&self, id: CubeId) -> f64 {
        self.cubes[id.0].mass
    }

    pub fn parent(&self, id: CubeId) -> Option<CubeId> {
        self.cubes[id.0].parent
    }

    pub fn children(&self, id: CubeId) -> &[CubeId] {
        &self.cubes[id.0].children
    }

    /// Q itself followed by its ancestors up to the root.
    pub fn ancestors(&self, id: CubeId) -> impl Iterator<Item = CubeId> + '_ {
        std::iter::successors(Some(id), move |&c| self.parent(c))
    }

    /// All cells contained in Q (Q included), parents before children.
    pub fn subtree(&self, id: CubeId) -> Vec<CubeId> {
        let mut out = vec![id];
        let mut next = 0;
        while next < out.len() {
            let cur = out[next];
            out.extend_from_slice(self.children(cur));
            next += 1;
        }
        out
    }

    /// Maximal cells satisfying `pred` among the subtrees of `starts`.
    pub fn maximal_cells(&self, starts: &[CubeId], mut pred: impl FnMut(CubeId) -> bool) -> Vec<CubeId> {
        let mut out = Vec::new();
        let mut stack: Vec<CubeId> = starts.iter().rev().copied().collect();
        while let Some(cur) = stack.pop() {
            if pred(cur) {
                out.push(cur);
            } else {
                stack.extend(self.children(cur).iter().rev());
            }
        }
        out
    }

    /// True when `inner ⊆ outer` as cells.
    pub fn contains(&self, outer: CubeId, inner: CubeId) -> bool {
        let g = self.cubes[outer.0].generation;
        self.cubes[inner.0].generation >= g && self.owner(g, self.cubes[inner.0].center_atom) == outer
    }

    pub fn atom_in(&self, id: CubeId, atom: usize) -> bool {
        self.owner(self.cubes[id.0].generation, atom) == id
    }

    /// Distance from a point to the atoms of a cell.
    pub fn dist_point_cube(&self, mu: &DiscreteMeasure, point: &[f64], id: CubeId) -> f64 {
        mu.nearest_where(point, f64::INFINITY, |a| self.atom_in(id, a)).map_or(f64::INFINITY, |(_, d)| d)
    }

    /// Distance between the atom sets of two cells.
    pub fn dist_cubes(&self, mu: &DiscreteMeasure, a: CubeId, b: CubeId) -> f64 {
        let (small, large) = if self.cubes[a.0].members.len() <= self.cubes[b.0].members.len() { (a, b) } else { (b, a) };
        if self.contains(large, small) {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for &atom in &self.cubes[small.0].members {
            if let Some((_, d)) = mu.nearest_where(mu.position(atom), best, |y| self.atom_in(large, y)) {
                best = best.min(d);
            }
        }
        best
    }

    /// λQ: the same-generation cells P with dist(x_Q, P) ≤ λ ℓ(Q).
    pub fn lambda_dilate_cells(&self, mu: &DiscreteMeasure, id: CubeId, lambda: f64) -> Vec<CubeId> {
        let cube = &self.cubes[id.0];
        let mut found = HashSet::new();
        mu.for_each_within(&cube.center, lambda * self.side(id), |atom| {
            found.insert(self.owner(cube.generation, atom));
        });
        found.insert(id);
        let mut cells: Vec<CubeId> = found.into_iter().collect();
        cells.sort_unstable();
        cells
    }

    /// Atom set of λQ.
    pub fn lambda_dilate(&self, mu: &DiscreteMeasure, id: CubeId, lambda: f64) -> Vec<usize> {
        let mut atoms: Vec<usize> =
            self.lambda_dilate_cells(mu, id, lambda).into_iter().flat_map(|c| self.cubes[c.0].members.iter().copied()).collect();
        atoms.sort_unstable();
        atoms
    }

    /// 𝒟(λQ): cells P ⊆ λQ with ℓ(P) ≤ ℓ(Q), coarsest first.
    pub fn dilate_family(&self, mu: &DiscreteMeasure, id: CubeId, lambda: f64) -> Vec<CubeId> {
        self.lambda_dilate_cells(mu, id, lambda).into_iter().flat_map(|c| self.subtree(c)).collect()
    }

    /// μ(N_l(Q)), the mass within A0^{-k-l} of the boundary of Q on either side.
    pub fn neighborhood_mass(&self, mu: &DiscreteMeasure, id: CubeId, l: u32) -> f64 {
        let cube = &self.cubes[id.0];
        let delta = self.params.scale(cube.generation + l as usize);
        let delta2 = delta * delta;
        let mut near_outside: HashSet<usize> = HashSet::new();
        let mut interior = 0.0;
        for &atom in &cube.members {
            let p = mu.position(atom);
            let mut touches = false;
            mu.for_each_within(p, delta, |y| {
                if dist2(mu.position(y), p) < delta2 && !self.atom_in(id, y) {
                    touches = true;
                    near_outside.insert(y);
                }
            });
            if touches {
                interior += mu.weight(atom);
            }
        }
        interior + near_outside.iter().map(|&y| mu.weight(y)).sum::<f64>()
    }

    /// (𝒟̃^{int}(Q), 𝒟̃^{ext}(Q)): cells inside Q whose 2B meets the rest of
    /// the support, and cells outside Q no larger than Q whose 2B meets Q.
    pub fn boundary_families(&self, mu: &DiscreteMeasure, id: CubeId) -> (Vec<CubeId>, Vec<CubeId>) {
        let cube = &self.cubes[id.0];
        let interior = self
            .subtree(id)
            .into_iter()
            .filter(|&p| {
                let cp = &self.cubes[p.0];
                mu.nearest_where(&cp.center, 2.0 * cp.big_radius(), |y| !self.atom_in(id, y)).is_some()
            })
            .collect();
        let mut exterior = Vec::new();
        for g in cube.generation..self.depth() {
            for p in self.generation(g) {
                let cp = &self.cubes[p.0];
                let reach = 2.0 * cp.big_radius();
                if self.contains(id, p) || dist2(&cp.center, &cube.center).sqrt() > cube.big_radius() + reach {
                    continue;
                }
                if mu.nearest_where(&cp.center, reach, |y| self.atom_in(id, y)).is_some() {
                    exterior.push(p);
                }
            }
        }
        (interior, exterior)
    }

    /// Checks partition, nesting, both ball inclusions, 5B-disjointness and
    /// radius bounds for every generation by direct enumeration.
    pub fn check_invariants(&self, mu: &DiscreteMeasure) -> Vec<InvariantReport> {
        let p = &self.params;
        (0..self.depth())
            .map(|g| {
                let ids: Vec<CubeId> = self.generation(g).collect();
                let scale = p.scale(g);
                let mut report = InvariantReport { generation: g, cells: ids.len(), ..Default::default() };
                let mut seen = vec![0u32; self.atom_count];
                for &id in &ids {
                    for &a in &self.cubes[id.0].members {
                        seen[a] += 1;
                    }
                }
                report.partition = seen.iter().all(|&c| c == 1);
                report.nesting = ids.iter().all(|&id| {
                    let cube = &self.cubes[id.0];
                    let mut union: Vec<usize> = cube.children.iter().flat_map(|c| self.cubes[c.0].members.iter().copied()).collect();
                    union.sort_unstable();
                    let mut own = cube.members.clone();
                    own.sort_unstable();
                    (cube.is_leaf() || union == own)
                        && cube.parent.is_none_or(|par| {
                            let pc = &self.cubes[par.0];
                            pc.generation + 1 == g && cube.members.iter().all(|&a| self.atom_in(par, a))
                        })
                });
                report.inner_ball = ids.iter().all(|&id| {
                    let cube = &self.cubes[id.0];
                    mu.atoms_within(&cube.center, cube.radius).iter().all(|&a| self.atom_in(id, a))
                });
                report.max_spread = ids
                    .iter()
                    .flat_map(|&id| {
                        let cube = &self.cubes[id.0];
                        cube.members.iter().map(move |&a| dist2(mu.position(a), &cube.center).sqrt() / cube.radius)
                    })
                    .fold(0.0, f64::max);
                report.outer_ball = ids.iter().all(|&id| {
                    let cube = &self.cubes[id.0];
                    let limit = cube.big_radius() * cube.big_radius();
                    cube.members.iter().all(|&a| dist2(mu.position(a), &cube.center) <= limit)
                });
                let max_radius = ids.iter().map(|&id| self.cubes[id.0].radius).fold(0.0, f64::max);
                report.disjoint_5b = ids.iter().all(|&a| {
                    let ca = &self.cubes[a.0];
                    let mut ok = true;
                    mu.for_each_within(&ca.center, 5.0 * (ca.radius + max_radius), |atom| {
                        let b = self.owner(g, atom);
                        let cb = &self.cubes[b.0];
                        if b != a && cb.center_atom == atom {
                            ok &= dist2(&ca.center, &cb.center).sqrt() > 5.0 * (ca.radius + cb.radius);
                        }
                    });
                    ok
                });
                report.radius_bounds = ids.iter().all(|&id| {
                    let cube = &self.cubes[id.0];
                    let in_range = cube.radius >= scale && cube.radius <= p.c0 * scale;
                    in_range && (cube.is_db || cube.radius == scale)
                });
                report
            })
            .collect()
    }
}
