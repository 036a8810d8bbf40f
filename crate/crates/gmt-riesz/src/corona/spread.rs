//! Spreading subtrees: the measure of low-density cells is redistributed over
//! their 𝒫-doubling siblings through the coefficients s(Q).

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::lattice::{CubeId, Lattice};
use crate::riesz::riesz_kernel;

use super::{CellMask, Corona, CoronaError, CoronaForest};

/// Which stopping condition closed a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum StopCause {
    /// In HD(R₀) ∪ LD(R₀) ∪ BR(R).
    #[serde(rename = "i")]
    Family,
    /// s(Q) ≥ μ(Q).
    #[serde(rename = "ii")]
    Saturated,
    /// Low-density children carry half of μ(Q).
    #[serde(rename = "iii")]
    LowChildren,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpreadTree {
    pub top_root: CubeId,
    pub root: CubeId,
    /// Members in breadth-first order, root first.
    pub members: Vec<CubeId>,
    pub s: BTreeMap<CubeId, f64>,
    /// t(Q) for every expanded member.
    pub t: BTreeMap<CubeId, f64>,
    /// ĈCh(Q) for every expanded member.
    pub hat_children: BTreeMap<CubeId, Vec<CubeId>>,
    /// ĈCh(Q) for members stopped by the low-children rule.
    pub stopped_hat_children: BTreeMap<CubeId, Vec<CubeId>>,
    pub stops: BTreeMap<CubeId, StopCause>,
    /// Members that are neither stopped nor expandable (finest cells).
    pub residual: Vec<CubeId>,
    /// Members in LD(R₀).
    pub low: Vec<CubeId>,
    /// Members stopped as big-Riesz cells.
    pub big_riesz: Vec<CubeId>,
    /// K·Θ(R).
    pub riesz_threshold: f64,
}

impl SpreadTree {
    pub fn s(&self, q: CubeId) -> f64 {
        self.s[&q]
    }

    pub fn stop_histogram(&self) -> BTreeMap<StopCause, usize> {
        let mut out = BTreeMap::new();
        for cause in self.stops.values() {
            *out.entry(*cause).or_insert(0) += 1;
        }
        out
    }

    /// Largest |Σ_{P∈𝓘} s(P) − s(R)| / μ(R) over random finite disjoint covers 𝓘 of R.
    pub fn conservation_error(&self, lat: &Lattice, covers: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mass = lat.mass(self.root);
        let mut worst: f64 = 0.0;
        for _ in 0..covers {
            let mut cover = vec![self.root];
            loop {
                let open: Vec<usize> = (0..cover.len()).filter(|&i| self.hat_children.contains_key(&cover[i])).collect();
                if open.is_empty() || rng.gen_bool(0.15) {
                    break;
                }
                let pick = open[rng.gen_range(0..open.len())];
                let q = cover.swap_remove(pick);
                cover.extend_from_slice(&self.hat_children[&q]);
            }
            let total: f64 = cover.iter().map(|q| self.s[q]).sum();
            worst = worst.max((total - self.s[&self.root]).abs() / mass);
        }
        worst
    }

    /// s(Q) = −μ(Q) exactly on LD(R₀) members and 0 ≤ s(Q) ≤ 3μ(Q) elsewhere.
    pub fn s_range_holds(&self, lat: &Lattice) -> bool {
        let low = CellMask::new(lat, &self.low);
        self.members.iter().all(|&q| {
            let (s, m) = (self.s[&q], lat.mass(q));
            if low.has(q) {
                s == -m
            } else {
                s >= -1e-12 * m && s <= 3.0 * m * (1.0 + 1e-12)
            }
        })
    }

    /// Σ μ over stops in LD ∪ HD ∪ BR, plus the LD children of (iii) stops,
    /// plus μ(Ĝ(R)), divided by μ(R).
    pub fn mass_accounting(&self, lat: &Lattice) -> f64 {
        let low = CellMask::new(lat, &self.low);
        let mut total = 0.0;
        for (&q, cause) in &self.stops {
            match cause {
                StopCause::Family => total += lat.mass(q),
                StopCause::LowChildren => total += self.stopped_hat_children[&q].iter().filter(|c| low.has(**c)).map(|&c| lat.mass(c)).sum::<f64>(),
                StopCause::Saturated => {}
            }
        }
        total += self.residual.iter().map(|&q| lat.mass(q)).sum::<f64>();
        total / lat.mass(self.root)
    }
}

impl<'a> Corona<'a> {
    /// K in the big-Riesz test: the configured multiplier with desk constants,
    /// 10³Λ/δ₀ with strict ones.
    pub fn big_riesz_constant(&self) -> f64 {
        if self.strict() {
            1e3 * self.params().lambda(self.n()) / self.delta0()
        } else {
            self.params().k_br
        }
    }

    /// ĈCh(Q): maximal proper subcells that are 𝒫-doubling or in LD(R₀),
    /// with finest cells admitted so that the family always covers Q.
    fn hat_children(&self, q: CubeId, low: &CellMask) -> Vec<CubeId> {
        self.lat.maximal_cells(self.lat.children(q), |p| self.is_pdoubling(p) || low.has(p) || self.lat.cube(p).is_leaf())
    }

    /// |R_μ χ_{2R∖2Q}(x_Q)|.
    fn annulus_riesz(&self, outer: &[usize], q: CubeId) -> f64 {
        let inner = self.lat.lambda_dilate(self.mu, q, 2.0);
        let x = self.mu.position(self.lat.cube(q).center_atom);
        let mut sum = vec![0.0; x.len()];
        for &a in outer {
            if inner.binary_search(&a).is_err() {
                let k = riesz_kernel(x, self.mu.position(a), self.n());
                sum.iter_mut().zip(&k).for_each(|(s, v)| *s += self.mu.weight(a) * v);
            }
        }
        sum.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// The subtree rooted at R ∈ Tree(R₀) with spreading coefficients.
    pub fn build_spread_tree(&self, forest: &CoronaForest, r0: CubeId, r: CubeId) -> Result<SpreadTree, CoronaError> {
        let lat = self.lat;
        let fam = forest.get(r0).ok_or(CoronaError::BadSubtreeRoot { cube: r0, reason: "not a root of Top" })?;
        if !fam.tree.contains(&r) {
            return Err(CoronaError::BadSubtreeRoot { cube: r, reason: "outside Tree(R0)" });
        }
        if !self.is_pdoubling(r) {
            return Err(CoronaError::BadSubtreeRoot { cube: r, reason: "not P-doubling" });
        }
        if fam.end.contains(&r) {
            return Err(CoronaError::BadSubtreeRoot { cube: r, reason: "in End(R0)" });
        }
        let high = CellMask::new(lat, &fam.hd);
        let low = CellMask::new(lat, &fam.ld);
        let outer = lat.lambda_dilate(self.mu, r, 2.0);
        let riesz_threshold = self.big_riesz_constant() * self.coeffs.big_theta(r);

        let mut tree = SpreadTree {
            top_root: r0,
            root: r,
            members: Vec::new(),
            s: BTreeMap::from([(r, 0.0)]),
            t: BTreeMap::new(),
            hat_children: BTreeMap::new(),
            stopped_hat_children: BTreeMap::new(),
            stops: BTreeMap::new(),
            residual: Vec::new(),
            low: Vec::new(),
            big_riesz: Vec::new(),
            riesz_threshold,
        };
        let mut queue = VecDeque::from([r]);
        while let Some(q) = queue.pop_front() {
            tree.members.push(q);
            if low.has(q) {
                tree.low.push(q);
            }
            let mass = lat.mass(q);
            let s = tree.s[&q];
            let big_riesz = q != r && self.is_pdoubling(q) && !high.has(q) && !low.has(q) && self.annulus_riesz(&outer, q) >= riesz_threshold;
            if high.has(q) || low.has(q) || big_riesz {
                if big_riesz {
                    tree.big_riesz.push(q);
                }
                tree.stops.insert(q, StopCause::Family);
                continue;
            }
            if s >= mass {
                tree.stops.insert(q, StopCause::Saturated);
                continue;
            }
            let children = self.hat_children(q, &low);
            let t: f64 = children.iter().filter(|c| low.has(**c)).map(|&c| lat.mass(c)).sum();
            if t >= 0.5 * mass {
                tree.stops.insert(q, StopCause::LowChildren);
                tree.stopped_hat_children.insert(q, children);
                tree.t.insert(q, t);
                continue;
            }
            if children.is_empty() {
                tree.residual.push(q);
                continue;
            }
            for &p in &children {
                let value = if low.has(p) { -lat.mass(p) } else { (s + t) * lat.mass(p) / (mass - t) };
                tree.s.insert(p, value);
                queue.push_back(p);
            }
            tree.t.insert(q, t);
            tree.hat_children.insert(q, children);
        }
        Ok(tree)
    }
}
