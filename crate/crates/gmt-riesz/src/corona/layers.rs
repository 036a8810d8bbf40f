//! Density layers F_j^h of moderate-decrement roots and their disjoint
//! subfamilies L_j^h.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::lattice::CubeId;

use super::cover::{pairwise_disjoint, select_disjoint, BallCandidate};
use super::{Corona, CoronaForest};

#[derive(Debug, Clone, Serialize)]
pub struct Layer {
    /// Θ(R) = A0^{jn} on the layer.
    pub j: i32,
    /// Peeling depth, 1 for the maximal cells.
    pub h: usize,
    pub family: Vec<CubeId>,
    pub selected: Vec<CubeId>,
    /// The balls B(e^{(4)}(Q)) of the selected cells are pairwise disjoint.
    pub disjoint: bool,
}

/// F_j = Top ∩ MDW with Θ = A0^{jn}, peeled into maximal layers F_j^h, each
/// thinned to L_j^h by the greedy disjoint selection weighted by σ(HD₁(e(Q))).
pub fn layers(corona: &Corona<'_>, forest: &CoronaForest) -> Vec<Layer> {
    let lat = corona.lat;
    let mut buckets: BTreeMap<i32, Vec<(CubeId, usize, f64)>> = BTreeMap::new();
    for f in forest.roots.iter().filter(|f| f.is_mdw) {
        buckets.entry(f.theta_exp).or_default().push((f.root, f.h.unwrap_or(0), f.sigma_hd1_e));
    }
    let mut out = Vec::new();
    for (j, mut remaining) in buckets {
        let mut h = 0;
        while !remaining.is_empty() {
            h += 1;
            let (top, rest): (Vec<_>, Vec<_>) =
                remaining.iter().copied().partition(|&(q, _, _)| !remaining.iter().any(|&(o, _, _)| o != q && lat.contains(o, q)));
            let balls: Vec<BallCandidate> = top
                .iter()
                .map(|&(q, hq, w)| BallCandidate { cube: q, center: lat.cube(q).center.clone(), radius: corona.enlarged_radius(q, hq, 4), weight: w })
                .collect();
            let selection = select_disjoint(&balls, 1.0 + 8.0 / corona.params().a0);
            let chosen: Vec<BallCandidate> = balls.iter().filter(|b| selection.chosen.contains(&b.cube)).cloned().collect();
            out.push(Layer { j, h, family: top.iter().map(|t| t.0).collect(), selected: selection.chosen, disjoint: pairwise_disjoint(&chosen) });
            remaining = rest;
        }
    }
    out
}
