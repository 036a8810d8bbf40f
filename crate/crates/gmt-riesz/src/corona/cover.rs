//! Deterministic greedy covering and colouring of candidate balls.

use serde::Serialize;

use crate::lattice::CubeId;
use crate::measure::kdtree::dist2;

#[derive(Debug, Clone, PartialEq)]
pub struct BallCandidate {
    pub cube: CubeId,
    pub center: Vec<f64>,
    pub radius: f64,
    /// Score summed when choosing among disjoint classes.
    pub weight: f64,
}

impl BallCandidate {
    fn gap(&self, other: &BallCandidate) -> f64 {
        dist2(&self.center, &other.center).sqrt()
    }

    /// Closed balls meet.
    pub fn meets(&self, other: &BallCandidate) -> bool {
        self.gap(other) <= self.radius + other.radius
    }

    /// This ball lies inside `other` scaled by `factor` about its centre.
    pub fn inside(&self, other: &BallCandidate, factor: f64) -> bool {
        self.gap(other) + self.radius <= factor * other.radius
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverSelection {
    /// Selected cells, pairwise disjoint balls.
    pub chosen: Vec<CubeId>,
    /// Size of the covering subfamily before the split.
    pub covering: usize,
    /// Number of disjoint classes of the split.
    pub classes: usize,
}

/// Keeps the balls not inside another candidate, then walks them by
/// decreasing radius and keeps each ball not already inside an
/// `enlarge`-dilate of a kept one. The kept family is split by greedy
/// colouring of its intersection graph into classes of pairwise disjoint
/// balls, and the class with the largest total weight is returned.
pub fn select_disjoint(candidates: &[BallCandidate], enlarge: f64) -> CoverSelection {
    let maximal: Vec<&BallCandidate> = candidates
        .iter()
        .enumerate()
        .filter(|(i, b)| !candidates.iter().enumerate().any(|(j, o)| j != *i && b.inside(o, 1.0) && (!o.inside(b, 1.0) || j < *i)))
        .map(|(_, b)| b)
        .collect();
    let mut order = maximal;
    order.sort_by(|a, b| b.radius.total_cmp(&a.radius).then(a.cube.cmp(&b.cube)));
    let mut kept: Vec<&BallCandidate> = Vec::new();
    for ball in order {
        if !kept.iter().any(|k| ball.inside(k, enlarge)) {
            kept.push(ball);
        }
    }
    let mut colour = vec![usize::MAX; kept.len()];
    let mut classes = 0;
    for i in 0..kept.len() {
        let taken: Vec<usize> = (0..i).filter(|&j| kept[i].meets(kept[j])).map(|j| colour[j]).collect();
        let c = (0..).find(|c| !taken.contains(c)).unwrap_or(0);
        colour[i] = c;
        classes = classes.max(c + 1);
    }
    let mut best: Option<(usize, f64)> = None;
    for c in 0..classes {
        let w: f64 = (0..kept.len()).filter(|&i| colour[i] == c).map(|i| kept[i].weight).sum();
        if best.is_none_or(|(_, bw)| w > bw) {
            best = Some((c, w));
        }
    }
    let chosen = best.map_or_else(Vec::new, |(c, _)| (0..kept.len()).filter(|&i| colour[i] == c).map(|i| kept[i].cube).collect());
    CoverSelection { chosen, covering: kept.len(), classes }
}

/// No two balls of the family meet.
pub fn pairwise_disjoint(balls: &[BallCandidate]) -> bool {
    balls.iter().enumerate().all(|(i, a)| balls[i + 1..].iter().all(|b| !a.meets(b)))
}
