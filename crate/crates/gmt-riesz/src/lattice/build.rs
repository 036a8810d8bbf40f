//! Top-down construction: per-atom radii, auxiliary boundary radii chosen by
//! a grid search, Vitali selection of centers and priority assignment.

use std::collections::HashMap;

use super::{Cube, CubeId, Lattice, LatticeError, Params};
use crate::measure::kdtree::dist2;
use crate::measure::DiscreteMeasure;

/// Consecutive all-singleton generations kept past the first one.
pub const SINGLETON_TAIL: usize = 2;

/// Builds generations 0..=max_depth, truncating once every cell has been a
/// single atom for more than [`SINGLETON_TAIL`] extra generations.
pub fn build_lattice(mu: &DiscreteMeasure, params: &Params, max_depth: usize) -> Result<Lattice, LatticeError> {
    build_lattice_with_tail(mu, params, max_depth, SINGLETON_TAIL)
}

/// As [`build_lattice`] with a configurable number of trailing all-singleton
/// generations; `tail = 0` stops at the first one.
pub fn build_lattice_with_tail(mu: &DiscreteMeasure, params: &Params, max_depth: usize, tail: usize) -> Result<Lattice, LatticeError> {
    params.validate()?;
    if params.a0 <= params.c0 {
        return Err(super::ParamsError::Constraint(format!("a0 = {} must exceed c0 = {}", params.a0, params.c0)).into());
    }
    let builder = Builder::new(mu, params);
    let mut cubes = vec![builder.root()];
    let mut generations: Vec<std::ops::Range<usize>> = Vec::new();
    generations.push(0..1);
    let mut owner = vec![0u32; mu.len()];
    let mut singleton_gens = usize::from(mu.len() == 1);
    for g in 1..=max_depth {
        if singleton_gens > tail {
            log::warn!("lattice truncated at generation {}: cells are single atoms", g - 1);
            break;
        }
        let prev = generations[g - 1].clone();
        let start = cubes.len();
        builder.next_generation(g, prev, &mut cubes, &mut owner);
        generations.push(start..cubes.len());
        if cubes[start..].iter().all(|c| c.members.len() == 1) {
            singleton_gens += 1;
        }
    }
    let lattice = Lattice::from_parts(params.clone(), mu.dim_growth(), mu.len(), cubes, generations)?;
    Ok(lattice)
}

struct Center {
    atom: usize,
    radius: f64,
    is_db: bool,
    parent: usize,
}

struct Builder<'a> {
    mu: &'a DiscreteMeasure,
    params: &'a Params,
    min_gap: f64,
}

impl<'a> Builder<'a> {
    fn new(mu: &'a DiscreteMeasure, params: &'a Params) -> Self {
        Builder { mu, params, min_gap: mu.min_gap() }
    }

    fn root(&self) -> Cube {
        let mu = self.mu;
        let dim = mu.dim_ambient();
        let mut centroid = vec![0.0; dim];
        for atom in 0..mu.len() {
            for (c, x) in centroid.iter_mut().zip(mu.position(atom)) {
                *c += mu.weight(atom) * x;
            }
        }
        let total = mu.total_mass();
        if total > 0.0 {
            centroid.iter_mut().for_each(|c| *c /= total);
        } else {
            centroid.copy_from_slice(mu.position(0));
        }
        let (atom, _) = mu.nearest_to(&centroid).expect("nonempty measure");
        let (radius, is_db) = self.choose_radius(atom, 1.0);
        let energy = self.energy_density(0);
        Cube {
            generation: 0,
            index: 0,
            center_atom: atom,
            center: mu.position(atom).to_vec(),
            radius,
            aux_radii: self.aux_radii(atom, radius, 0, &energy),
            members: (0..mu.len()).collect(),
            mass: total,
            parent: None,
            children: Vec::new(),
            is_db,
        }
    }

    /// Smallest grid radius in [s, C0 s] whose ball is (100, C0)-doubling,
    /// or exactly s when none is.
    fn choose_radius(&self, atom: usize, scale: f64) -> (f64, bool) {
        let p = self.params;
        let x = self.mu.position(atom);
        let m = p.radius_candidates.max(2);
        let candidates: Vec<f64> = (0..m).map(|i| if i == 0 { scale } else { scale * (1.0 + (p.c0 - 1.0) * i as f64 / (m - 1) as f64) }).collect();
        // Masses at t and 100t for every candidate t, from one sorted profile query.
        let mut radii: Vec<(f64, usize)> = candidates.iter().enumerate().flat_map(|(i, &t)| [(t, i), (100.0 * t, m + i)]).collect();
        radii.sort_by(|a, b| a.0.total_cmp(&b.0));
        let sorted: Vec<f64> = radii.iter().map(|r| r.0).collect();
        let mut masses = vec![0.0; 2 * m];
        for (&(_, slot), mass) in radii.iter().zip(self.mu.mass_profile(x, &sorted)) {
            masses[slot] = mass;
        }
        match (0..m).find(|&i| masses[m + i] <= p.c0 * masses[i]) {
            Some(i) => (candidates[i], true),
            None => (scale, false),
        }
    }

    /// Per-atom weight Σ_j A0^{-γ(j+1)} θ(y, 112 C0 A0^{-g-j-1})² of the
    /// boundary-energy functional at generation g.
    fn energy_density(&self, g: usize) -> Vec<f64> {
        let p = self.params;
        let n = self.mu.dim_growth() as i32;
        let mut radii = Vec::new();
        for j in 0..8 {
            let rho = 112.0 * p.c0 * p.scale(g + j + 1);
            if j > 0 && rho < self.min_gap {
                break;
            }
            radii.push((p.a0.powf(-p.gamma * (j + 1) as f64), rho));
        }
        (0..self.mu.len())
            .map(|y| {
                let pos = self.mu.position(y);
                radii
                    .iter()
                    .map(|&(w, rho)| {
                        let theta = self.mu.mass_within(pos, rho) / rho.powi(n);
                        w * theta * theta
                    })
                    .sum()
            })
            .collect()
    }

    /// Grid argmin of the normalized thin-boundary mass plus boundary energy
    /// over r1 ∈ (1.1, 1.2) r and r2 ∈ (25, 26) r.
    fn aux_radii(&self, atom: usize, r: f64, g: usize, energy: &[f64]) -> (f64, f64) {
        let p = self.params;
        let half_width = 300.0 * p.c0 * p.scale(g + 1);
        let x = self.mu.position(atom);
        let reach = 27.0 * r + half_width;
        let mut near: Vec<(f64, usize)> = Vec::new();
        self.mu.for_each_within(x, reach, |y| near.push((dist2(self.mu.position(y), x).sqrt(), y)));
        near.sort_by(|a, b| a.0.total_cmp(&b.0));
        let dists: Vec<f64> = near.iter().map(|e| e.0).collect();
        let mut mass_prefix = vec![0.0];
        let mut energy_prefix = vec![0.0];
        for &(_, y) in &near {
            mass_prefix.push(mass_prefix.last().unwrap() + self.mu.weight(y));
            energy_prefix.push(energy_prefix.last().unwrap() + self.mu.weight(y) * energy[y]);
        }
        // Closed range lo ≤ d ≤ hi, or half-open lo < d ≤ hi for annuli.
        let upto = |v: f64| dists.partition_point(|&d| d <= v);
        let below = |v: f64| dists.partition_point(|&d| d < v);
        let closed = |prefix: &[f64], lo: f64, hi: f64| prefix[upto(hi)] - prefix[below(lo)];
        let annulus = |prefix: &[f64], lo: f64, hi: f64| prefix[upto(hi)] - prefix[upto(lo)];
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        let m = p.radius_candidates;
        let pick = |lo: f64, hi: f64, reference: f64| {
            let ref_mass = mass_prefix[upto(reference)];
            let ref_energy = energy_prefix[upto(reference)];
            let mut best = (f64::INFINITY, lo);
            for i in 0..m {
                let t = r * (lo + (hi - lo) * (i as f64 + 0.5) / m as f64);
                let thin = closed(&mass_prefix, t - p.thin_boundary * r, t + p.thin_boundary * r);
                let boundary_energy = annulus(&energy_prefix, t - half_width, t + half_width);
                let score = ratio(thin, ref_mass) + ratio(boundary_energy, ref_energy);
                if score < best.0 {
                    best = (score, t);
                }
            }
            best.1
        };
        (pick(1.1, 1.2, 1.3 * r), pick(25.0, 26.0, 27.0 * r))
    }

    fn next_generation(&self, g: usize, prev: std::ops::Range<usize>, cubes: &mut Vec<Cube>, owner: &mut [u32]) {
        let mu = self.mu;
        let p = self.params;
        let scale = p.scale(g);
        let radii: Vec<(f64, bool)> = (0..mu.len()).map(|a| self.choose_radius(a, scale)).collect();

        // Distance to the rest of the support outside the parent, capped
        // beyond the range where it affects eligibility or priority.
        let cap = 6.0 * p.c0 * scale;
        let labels = mu.label_index(owner);
        let outside: Vec<f64> =
            (0..mu.len()).map(|a| mu.nearest_other_label(mu.position(a), cap, owner, &labels, owner[a]).map_or(cap, |(_, d)| d)).collect();

        let mut grid = CenterGrid::new(10.0 * p.c0 * scale);
        let mut centers: Vec<Center> = Vec::new();
        let mut try_select = |atom: usize, centers: &mut Vec<Center>| {
            let (radius, is_db) = radii[atom];
            let pos = mu.position(atom);
            let clash = grid.neighbors(pos).any(|c: usize| {
                let other: &Center = &centers[c];
                dist2(mu.position(other.atom), pos).sqrt() <= 5.0 * (radius + other.radius)
            });
            if !clash {
                grid.insert(pos, centers.len());
                centers.push(Center { atom, radius, is_db, parent: owner[atom] as usize });
            }
        };
        // Parent centers are far apart at this scale, so each parent keeps one child.
        for pid in prev.clone() {
            try_select(cubes[pid].center_atom, &mut centers);
        }
        let mut candidates: Vec<usize> = (0..mu.len()).filter(|&a| outside[a] > radii[a].0).collect();
        let priority = |a: usize| outside[a] / radii[a].0;
        candidates.sort_by(|&a, &b| {
            let deep_a = outside[a] > 5.0 * radii[a].0;
            let deep_b = outside[b] > 5.0 * radii[b].0;
            deep_b.cmp(&deep_a).then(priority(b).total_cmp(&priority(a))).then(a.cmp(&b))
        });
        for atom in candidates {
            try_select(atom, &mut centers);
        }

        let energy = self.energy_density(g);
        let aux: Vec<(f64, f64)> = centers.iter().map(|c| self.aux_radii(c.atom, c.radius, g, &energy)).collect();
        let weight90: Vec<f64> = centers.iter().map(|c| mu.mass_within(mu.position(c.atom), 90.0 * c.radius)).collect();
        let mut order: Vec<usize> = (0..centers.len()).collect();
        order.sort_by(|&a, &b| weight90[b].total_cmp(&weight90[a]).then(centers[a].atom.cmp(&centers[b].atom)));

        let mut by_parent: HashMap<usize, Vec<usize>> = HashMap::new();
        for &c in &order {
            by_parent.entry(centers[c].parent).or_default().push(c);
        }

        let mut assigned = vec![usize::MAX; mu.len()];
        for pid in prev.clone() {
            let local = &by_parent[&pid];
            for &y in &cubes[pid].members {
                let py = mu.position(y);
                let d: Vec<f64> = local.iter().map(|&c| dist2(mu.position(centers[c].atom), py).sqrt()).collect();
                // Rule 1: the inner ball B1 claims its atoms outright. Otherwise the
                // nearest center in units of its radius among those whose B2
                // holds y, falling back to all centers of the parent; ties go
                // to the earlier center in the 90r-mass order.
                let inner = (0..local.len()).find(|&i| d[i] <= aux[local[i]].0);
                let nearest = |within_outer: bool| {
                    (0..local.len())
                        .filter(|&i| !within_outer || d[i] <= aux[local[i]].1)
                        .min_by(|&i, &j| (d[i] / centers[local[i]].radius).total_cmp(&(d[j] / centers[local[j]].radius)).then(i.cmp(&j)))
                };
                let pick = inner.or_else(|| nearest(true)).or_else(|| nearest(false)).expect("parent has a center");
                assigned[y] = local[pick];
            }
        }

        let mut members: Vec<Vec<usize>> = vec![Vec::new(); centers.len()];
        for (y, &c) in assigned.iter().enumerate() {
            members[c].push(y);
        }
        let start = cubes.len();
        for pid in prev {
            let mut local = by_parent.remove(&pid).unwrap_or_default();
            local.sort_by_key(|&c| centers[c].atom);
            for c in local {
                let center = &centers[c];
                let id = cubes.len();
                for &y in &members[c] {
                    owner[y] = id as u32;
                }
                let mass = members[c].iter().map(|&y| mu.weight(y)).sum();
                cubes.push(Cube {
                    generation: g,
                    index: id - start,
                    center_atom: center.atom,
                    center: mu.position(center.atom).to_vec(),
                    radius: center.radius,
                    aux_radii: aux[c],
                    members: std::mem::take(&mut members[c]),
                    mass,
                    parent: Some(CubeId(pid)),
                    children: Vec::new(),
                    is_db: center.is_db,
                });
                cubes[pid].children.push(CubeId(id));
            }
        }
    }
}

/// Uniform hash grid over selected centers for conflict lookups.
struct CenterGrid {
    cell: f64,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
}

impl CenterGrid {
    fn new(cell: f64) -> Self {
        CenterGrid { cell, buckets: HashMap::new() }
    }

    fn key(&self, pos: &[f64]) -> Vec<i64> {
        pos.iter().map(|c| (c / self.cell).floor() as i64).collect()
    }

    fn insert(&mut self, pos: &[f64], value: usize) {
        let key = self.key(pos);
        self.buckets.entry(key).or_default().push(value);
    }

    fn neighbors(&self, pos: &[f64]) -> impl Iterator<Item = usize> + '_ {
        let base = self.key(pos);
        let dim = base.len();
        (0..3usize.pow(dim as u32)).flat_map(move |code| {
            let mut key = base.clone();
            let mut rest = code;
            for k in key.iter_mut() {
                *k += (rest % 3) as i64 - 1;
                rest /= 3;
            }
            self.buckets.get(&key).into_iter().flatten().copied()
        })
    }
}
