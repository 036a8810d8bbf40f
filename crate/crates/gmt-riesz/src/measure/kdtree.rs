//! Static kd-tree over a flat coordinate buffer.
//!
//! Queries use closed balls and the same squared-distance predicate as a
//! linear scan, so membership answers agree exactly with brute force.

const LEAF_SIZE: usize = 12;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    start: u32,
    end: u32,
    left: u32,
    right: u32,
    mass: f64,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    perm: Vec<u32>,
    nodes: Vec<Node>,
    /// `2 * dim` bounds per node: all lower corners then upper corners.
    bounds: Vec<f64>,
}

#[inline]
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KdTree {
    pub fn build(dim: usize, coords: &[f64], weights: &[f64]) -> Self {
        let count = weights.len();
        let mut tree = KdTree { dim, perm: (0..count as u32).collect(), nodes: Vec::with_capacity(2 * count / LEAF_SIZE + 1), bounds: Vec::new() };
        if count > 0 {
            tree.build_node(coords, weights, 0, count);
        }
        tree
    }

    fn build_node(&mut self, coords: &[f64], weights: &[f64], start: usize, end: usize) -> u32 {
        let dim = self.dim;
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        let mut mass = 0.0;
        for &idx in &self.perm[start..end] {
            let p = &coords[idx as usize * dim..(idx as usize + 1) * dim];
            for axis in 0..dim {
                lo[axis] = lo[axis].min(p[axis]);
                hi[axis] = hi[axis].max(p[axis]);
            }
            mass += weights[idx as usize];
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { start: start as u32, end: end as u32, left: NONE, right: NONE, mass });
        self.bounds.extend_from_slice(&lo);
        self.bounds.extend_from_slice(&hi);
        if end - start > LEAF_SIZE {
            let axis = (0..dim).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
            if hi[axis] > lo[axis] {
                let mid = (start + end) / 2;
                self.perm[start..end]
                    .select_nth_unstable_by(mid - start, |&a, &b| coords[a as usize * dim + axis].total_cmp(&coords[b as usize * dim + axis]));
                let left = self.build_node(coords, weights, start, mid);
                let right = self.build_node(coords, weights, mid, end);
                self.nodes[id as usize].left = left;
                self.nodes[id as usize].right = right;
            }
        }
        id
    }

    fn node_bounds(&self, node: u32) -> (&[f64], &[f64]) {
        let base = node as usize * 2 * self.dim;
        (&self.bounds[base..base + self.dim], &self.bounds[base + self.dim..base + 2 * self.dim])
    }

    /// Squared distance from `center` to the node box, and to its farthest corner.
    fn box_extent2(&self, node: u32, center: &[f64]) -> (f64, f64) {
        let (lo, hi) = self.node_bounds(node);
        let mut near = 0.0;
        let mut far = 0.0;
        for axis in 0..self.dim {
            let c = center[axis];
            let below = (lo[axis] - c).max(0.0);
            let above = (c - hi[axis]).max(0.0);
            let gap = below.max(above);
            near += gap * gap;
            let span = (c - lo[axis]).abs().max((hi[axis] - c).abs());
            far += span * span;
        }
        (near, far)
    }

    /// Calls `visit` with every atom index inside the closed ball.
    pub fn for_each_in_ball(&self, coords: &[f64], center: &[f64], radius: f64, mut visit: impl FnMut(usize)) {
        if self.nodes.is_empty() {
            return;
        }
        let r2 = radius * radius;
        let mut stack = vec![0u32];
        while let Some(node) = stack.pop() {
            let (near, _) = self.box_extent2(node, center);
            if near > r2 {
                continue;
            }
            let n = &self.nodes[node as usize];
            if n.left == NONE {
                for &idx in &self.perm[n.start as usize..n.end as usize] {
                    let i = idx as usize;
                    if dist2(&coords[i * self.dim..(i + 1) * self.dim], center) <= r2 {
                        visit(i);
                    }
                }
            } else {
                stack.push(n.left);
                stack.push(n.right);
            }
        }
    }

    /// Total weight inside the closed ball.
    pub fn ball_mass(&self, coords: &[f64], weights: &[f64], center: &[f64], radius: f64) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        let r2 = radius * radius;
        // Whole-node shortcut only with a safety margin, so boundary atoms are
        // always decided by the exact per-atom predicate.
        let inner = r2 * (1.0 - 1e-12);
        let mut total = 0.0;
        let mut stack = vec![0u32];
        while let Some(node) = stack.pop() {
            let (near, far) = self.box_extent2(node, center);
            if near > r2 {
                continue;
            }
            let n = &self.nodes[node as usize];
            if far < inner {
                total += n.mass;
            } else if n.left == NONE {
                for &idx in &self.perm[n.start as usize..n.end as usize] {
                    let i = idx as usize;
                    if dist2(&coords[i * self.dim..(i + 1) * self.dim], center) <= r2 {
                        total += weights[i];
                    }
                }
            } else {
                stack.push(n.left);
                stack.push(n.right);
            }
        }
        total
    }

    /// Closed-ball masses for every radius of the ascending list `radii`, in one traversal.
    pub fn ball_masses(&self, coords: &[f64], weights: &[f64], center: &[f64], radii: &[f64]) -> Vec<f64> {
        let mut bins = vec![0.0; radii.len() + 1];
        let Some(&largest) = radii.last() else { return Vec::new() };
        if self.nodes.is_empty() {
            return vec![0.0; radii.len()];
        }
        let squared: Vec<f64> = radii.iter().map(|r| r * r).collect();
        // First radius whose closed ball holds a point at squared distance d2.
        let first_holding = |d2: f64| squared.partition_point(|&r2| r2 < d2);
        let mut stack = vec![0u32];
        while let Some(node) = stack.pop() {
            let (near, far) = self.box_extent2(node, center);
            if near > largest * largest {
                continue;
            }
            let n = &self.nodes[node as usize];
            // Same safety margin as `ball_mass`: a whole node is credited only
            // when every radius from some index on clearly contains it.
            let from = squared.partition_point(|&r2| r2 * (1.0 - 1e-12) <= far);
            let touched = first_holding(near);
            if from == touched {
                bins[from] += n.mass;
            } else if n.left == NONE {
                for &idx in &self.perm[n.start as usize..n.end as usize] {
                    let i = idx as usize;
                    bins[first_holding(dist2(&coords[i * self.dim..(i + 1) * self.dim], center))] += weights[i];
                }
            } else {
                stack.push(n.left);
                stack.push(n.right);
            }
        }
        let mut acc = 0.0;
        bins[..radii.len()]
            .iter()
            .map(|b| {
                acc += b;
                acc
            })
            .collect()
    }

    /// Per node, the common label of its atoms or `u32::MAX` when they differ.
    pub fn uniform_labels(&self, labels: &[u32]) -> Vec<u32> {
        let mut out = vec![NONE; self.nodes.len()];
        // Children come after their parent in `nodes`.
        for (id, n) in self.nodes.iter().enumerate().rev() {
            out[id] = if n.left == NONE {
                let mut atoms = self.perm[n.start as usize..n.end as usize].iter().map(|&i| labels[i as usize]);
                let first = atoms.next().unwrap_or(NONE);
                if atoms.all(|l| l == first) {
                    first
                } else {
                    NONE
                }
            } else {
                let (a, b) = (out[n.left as usize], out[n.right as usize]);
                if a == b {
                    a
                } else {
                    NONE
                }
            };
        }
        out
    }

    /// Nearest atom whose label differs from `own`, within `max_dist`; nodes whose
    /// atoms all carry `own` (per [`KdTree::uniform_labels`]) are skipped whole.
    pub fn nearest_other_label(
        &self,
        coords: &[f64],
        center: &[f64],
        max_dist: f64,
        labels: &[u32],
        node_labels: &[u32],
        own: u32,
    ) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let limit = max_dist * max_dist;
        let mut best: Option<(usize, f64)> = None;
        let mut stack = vec![0u32];
        while let Some(node) = stack.pop() {
            if node_labels[node as usize] == own {
                continue;
            }
            let (near, _) = self.box_extent2(node, center);
            if near > best.map_or(limit, |(_, b)| b) {
                continue;
            }
            let n = &self.nodes[node as usize];
            if n.left == NONE {
                for &idx in &self.perm[n.start as usize..n.end as usize] {
                    let i = idx as usize;
                    if labels[i] == own {
                        continue;
                    }
                    let d2 = dist2(&coords[i * self.dim..(i + 1) * self.dim], center);
                    if d2 <= limit && best.is_none_or(|(_, b)| d2 < b) {
                        best = Some((i, d2));
                    }
                }
            } else {
                let (dl, _) = self.box_extent2(n.left, center);
                let (dr, _) = self.box_extent2(n.right, center);
                if dl <= dr {
                    stack.push(n.right);
                    stack.push(n.left);
                } else {
                    stack.push(n.left);
                    stack.push(n.right);
                }
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }

    /// Nearest atom to `center` other than `exclude`, as (index, distance).
    pub fn nearest_excluding(&self, coords: &[f64], center: &[f64], exclude: Option<usize>) -> Option<(usize, f64)> {
        self.nearest_where(coords, center, f64::INFINITY, |i| Some(i) != exclude)
    }

    /// Nearest atom accepted by `keep` within distance `max_dist`, as (index, distance).
    pub fn nearest_where(&self, coords: &[f64], center: &[f64], max_dist: f64, keep: impl Fn(usize) -> bool) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let limit = max_dist * max_dist;
        let mut best: Option<(usize, f64)> = None;
        let mut stack = vec![0u32];
        while let Some(node) = stack.pop() {
            let (near, _) = self.box_extent2(node, center);
            if near > best.map_or(limit, |(_, b)| b) {
                continue;
            }
            let n = &self.nodes[node as usize];
            if n.left == NONE {
                for &idx in &self.perm[n.start as usize..n.end as usize] {
                    let i = idx as usize;
                    if !keep(i) {
                        continue;
                    }
                    let d2 = dist2(&coords[i * self.dim..(i + 1) * self.dim], center);
                    if d2 <= limit && best.is_none_or(|(_, b)| d2 < b) {
                        best = Some((i, d2));
                    }
                }
            } else {
                // Visit the closer child last so it is popped first.
                let (dl, _) = self.box_extent2(n.left, center);
                let (dr, _) = self.box_extent2(n.right, center);
                if dl <= dr {
                    stack.push(n.right);
                    stack.push(n.left);
                } else {
                    stack.push(n.left);
                    stack.push(n.right);
                }
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }
}
