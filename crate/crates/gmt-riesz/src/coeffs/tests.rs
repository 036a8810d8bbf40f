use super::*;
use crate::lattice::{build_lattice, Params};
use crate::measure::{generate, GeneratorSettings, MeasureKind};
use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gen(kind: MeasureKind, depth: u32) -> DiscreteMeasure {
    generate(kind, depth, &GeneratorSettings::default()).unwrap()
}

fn ball(center: &[f64], radius: f64) -> Ball {
    Ball::new(center.to_vec(), radius).unwrap()
}

/// Cyclic Jacobi rotations; returns eigenvalues and eigenvectors (as columns).
#[allow(clippy::needless_range_loop)]
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let dim = a.len();
    let mut v: Vec<Vec<f64>> = (0..dim).map(|i| (0..dim).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..dim).flat_map(|i| (0..dim).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
        if off < 1e-300 {
            break;
        }
        for p in 0..dim {
            for q in p + 1..dim {
                if a[p][q] == 0.0 {
                    continue;
                }
                let tau = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let values = (0..dim).map(|i| a[i][i]).collect();
    let vectors = (0..dim).map(|j| (0..dim).map(|i| v[i][j]).collect()).collect();
    (values, vectors)
}

/// β₂ by a dense eigen-solve followed by a direct distance sum to the fitted plane.
fn beta2_oracle(mu: &DiscreteMeasure, b: &Ball) -> f64 {
    let atoms: Vec<usize> = (0..mu.len()).filter(|&a| b.contains(mu.position(a))).collect();
    if atoms.len() <= mu.dim_growth() + 1 {
        return 0.0;
    }
    let dim = mu.dim_ambient();
    let mass: f64 = atoms.iter().map(|&a| mu.weight(a)).sum();
    let centroid: Vec<f64> = (0..dim).map(|i| atoms.iter().map(|&a| mu.weight(a) * mu.position(a)[i]).sum::<f64>() / mass).collect();
    let cov: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| {
                    atoms
                        .iter()
                        .map(|&a| {
                            let p = mu.position(a);
                            mu.weight(a) * (p[i] - centroid[i]) * (p[j] - centroid[j])
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    let (values, vectors) = jacobi_eigen(cov);
    let bottom = (0..dim).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap();
    let normal = &vectors[bottom];
    let residual: f64 = atoms
        .iter()
        .map(|&a| {
            let d: f64 = mu.position(a).iter().zip(&centroid).zip(normal).map(|((x, c), n)| (x - c) * n).sum();
            mu.weight(a) * d * d
        })
        .sum();
    (residual / b.radius.powi(mu.dim_growth() as i32 + 2)).sqrt()
}

#[test]
fn theta_examples() {
    let mu = DiscreteMeasure::from_points(1, &[vec![0.0, 0.0]], vec![1.0]).unwrap();
    assert_eq!(theta(&mu, &ball(&[0.0, 0.0], 2.0)), 0.5);
    assert_eq!(theta(&mu, &ball(&[5.0, 5.0], 1.0)), 0.0);
    let seg = gen(MeasureKind::Segment, 10);
    let spacing = 1.0 / 1024.0;
    for r in [0.05, 0.1, 0.3] {
        assert!((theta(&seg, &ball(&[0.5, 0.5], r)) - 2.0).abs() <= spacing / r);
    }
}

#[test]
fn beta2_examples() {
    let square = DiscreteMeasure::from_points(1, &[vec![1.0, 1.0], vec![-1.0, 1.0], vec![1.0, -1.0], vec![-1.0, -1.0]], vec![1.0; 4]).unwrap();
    assert_relative_eq!(beta2(&square, &ball(&[0.0, 0.0], 2.0)), 0.5f64.sqrt(), max_relative = 1e-14);
    let line = DiscreteMeasure::from_points(1, &[vec![0.0, 0.1], vec![0.3, 0.4], vec![0.7, 0.8]], vec![1.0, 2.0, 0.5]).unwrap();
    assert!(beta2(&line, &ball(&[0.3, 0.4], 1.0)) <= 1e-12);
    let single = DiscreteMeasure::from_points(1, &[vec![0.3, 0.4]], vec![1.0]).unwrap();
    assert_eq!(beta2(&single, &ball(&[0.3, 0.4], 1.0)), 0.0);
    assert_eq!(beta2(&square, &ball(&[9.0, 9.0], 1.0)), 0.0);
}

#[test]
fn beta2_matches_dense_eigen_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let (ambient, growth) = if trial % 2 == 0 { (2, 1) } else { (3, 2) };
        let count = rng.gen_range(3..=500);
        let coords: Vec<f64> = (0..ambient * count).map(|_| rng.gen::<f64>()).collect();
        let weights: Vec<f64> = (0..count).map(|_| rng.gen_range(0.1..2.0)).collect();
        let mu = DiscreteMeasure::new(growth, coords, weights).unwrap();
        let center: Vec<f64> = (0..ambient).map(|_| rng.gen::<f64>()).collect();
        let b = ball(&center, rng.gen_range(0.2..1.0));
        let oracle = beta2_oracle(&mu, &b);
        if oracle == 0.0 {
            assert_eq!(beta2(&mu, &b), 0.0);
            continue;
        }
        worst = worst.max((beta2(&mu, &b) - oracle).abs() / oracle);
    }
    assert!(worst <= 1e-10, "worst relative error {worst}");
}

#[test]
fn theta_bucket_brackets_density() {
    for (density, a0, n, k) in [(1.0, 4.0, 1, 0), (3.99, 4.0, 1, 0), (4.0, 4.0, 1, 1), (0.25, 4.0, 1, -1), (0.2, 4.0, 1, -2), (16.0, 4.0, 2, 1)] {
        assert_eq!(theta_bucket(density, a0, n), k, "{density}");
    }
}

fn setup(kind: MeasureKind, depth: u32, lattice_depth: usize) -> (DiscreteMeasure, Lattice, CoeffTable) {
    let mu = gen(kind, depth);
    let lat = build_lattice(&mu, &Params::default(), lattice_depth).unwrap();
    let table = CoeffTable::compute(&lat, &mu);
    (mu, lat, table)
}

#[test]
fn table_records_satisfy_bucket_invariants() {
    for (kind, depth, ld) in [(MeasureKind::Segment, 10, 6), (MeasureKind::Cantor4Corner, 4, 5), (MeasureKind::PlanePatch, 3, 3)] {
        let (_, lat, table) = setup(kind, depth, ld);
        let base = lat.params().a0.powi(lat.dim_growth() as i32);
        for id in lat.ids() {
            let r = table.get(id);
            assert!(r.big_theta <= r.theta2b && r.theta2b < base * r.big_theta, "{r:?}");
            for &child in lat.children(id) {
                assert!(table.get(child).big_theta <= base * r.big_theta);
            }
        }
    }
}

#[test]
fn p_coeff_matches_ancestor_sum() {
    let (mu, lat, table) = setup(MeasureKind::LipschitzGraph, 9, 6);
    let n = lat.dim_growth() as i32;
    let root = lat.root();
    assert_relative_eq!(table.p(root), table.get(root).theta2b, max_relative = 1e-15);
    assert!(table.is_pdoubling(root));
    for q in lat.ids() {
        let direct: f64 = lat
            .ancestors(q)
            .map(|r| {
                let mass2b = mu.mass_within(&lat.cube(r).center, 56.0 * lat.cube(r).radius);
                lat.side(q) / lat.side(r).powi(n + 1) * mass2b
            })
            .sum();
        assert_relative_eq!(table.p(q), direct, max_relative = 1e-12);
    }
}

#[test]
fn p_coeff_two_term_chain() {
    // A lone light atom: the root and its generation-1 cell both have 2B covering it.
    let mu = DiscreteMeasure::from_points(1, &[vec![0.5, 0.5]], vec![0.3]).unwrap();
    let lat = build_lattice(&mu, &Params::default(), 1).unwrap();
    let table = CoeffTable::compute(&lat, &mu);
    let q = lat.generation(1).next().unwrap();
    let (lq, lr) = (lat.side(q), lat.side(lat.root()));
    let expected = 0.3 / lq + lq / (lr * lr) * 0.3;
    assert_relative_eq!(table.p(q), expected, max_relative = 1e-14);
}

#[test]
fn light_atom_beside_heavy_cluster_is_not_p_doubling() {
    let mut points = vec![vec![0.5, 0.5]];
    let mut weights = vec![1e-8];
    for i in 0..8 {
        points.push(vec![0.0 + 1e-4 * i as f64, 0.5]);
        weights.push(0.125);
    }
    let mu = DiscreteMeasure::from_points(1, &points, weights).unwrap();
    let lat = build_lattice(&mu, &Params::default(), 5).unwrap();
    let table = CoeffTable::compute(&lat, &mu);
    let cd = lat.params().cd(1);
    let q = lat.ancestors(lat.generation(lat.depth() - 1).find(|&c| lat.atom_in(c, 0)).unwrap()).find(|&c| lat.cube(c).generation == 4).unwrap();
    let ancestor_density = table.p(q) - table.get(q).theta2b;
    assert!(ancestor_density >= 10.0 * cd * table.get(q).theta2b);
    assert!(!table.is_pdoubling(q));
}

#[test]
fn uniform_segment_is_mostly_p_doubling() {
    let (_, lat, table) = setup(MeasureKind::Segment, 12, 7);
    for g in 0..lat.depth() {
        let failing = lat.generation(g).filter(|&q| !table.is_pdoubling(q)).count();
        assert!(failing <= 2, "generation {g}: {failing} non-doubling cells");
    }
}

/// hd_k by scanning all finer cells and keeping those with no qualifying ancestor below Q's generation.
fn hd_k_oracle(lat: &Lattice, table: &CoeffTable, q: CubeId, k: i32) -> Vec<CubeId> {
    let g = lat.cube(q).generation;
    let n = lat.dim_growth() as i32;
    let threshold = lat.params().a0.powi(k * n) * table.big_theta(q);
    let qualifies = |p: CubeId| table.big_theta(p) >= threshold * (1.0 - 1e-12);
    let mut out: Vec<CubeId> = lat
        .ids()
        .filter(|&p| lat.cube(p).generation > g && qualifies(p))
        .filter(|&p| lat.ancestors(p).skip(1).take_while(|&a| lat.cube(a).generation > g).all(|a| !qualifies(a)))
        .collect();
    out.sort_unstable();
    out
}

#[test]
fn hd_k_matches_scan() {
    for (kind, depth, ld) in [(MeasureKind::Segment, 9, 6), (MeasureKind::Cantor4Corner, 4, 5), (MeasureKind::LipschitzGraph, 8, 6)] {
        let (_, lat, table) = setup(kind, depth, ld);
        for q in lat.ids() {
            for k in 1..=3 {
                let mut found = table.hd_k(&lat, q, k);
                found.sort_unstable();
                assert_eq!(found, hd_k_oracle(&lat, &table, q, k));
            }
        }
    }
}

#[test]
fn hd_k_is_empty_on_flat_density_and_huge_thresholds() {
    let (_, lat, table) = setup(MeasureKind::Segment, 14, 7);
    let top = lat.ids().map(|q| table.get(q).theta_exp).max().unwrap();
    let flat: Vec<CubeId> = lat.ids().filter(|&q| lat.cube(q).generation >= 4 && table.get(q).theta_exp == top).collect();
    assert!(!flat.is_empty());
    for q in flat {
        assert!(table.hd_k(&lat, q, 1).is_empty());
    }
    assert!(table.hd_k(&lat, lat.root(), 60).is_empty());
}

#[test]
fn hd_k_finds_heavy_cluster() {
    let mut points: Vec<Vec<f64>> = (0..256).map(|i| vec![(i as f64 + 0.5) / 256.0, 0.5]).collect();
    let mut weights = vec![1.0 / 256.0; 256];
    for i in 0..16 {
        points.push(vec![0.3 + 1e-6 * i as f64, 0.5]);
        weights.push(0.05);
    }
    let mu = DiscreteMeasure::from_points(1, &points, weights).unwrap();
    let lat = build_lattice(&mu, &Params::default(), 8).unwrap();
    let table = CoeffTable::compute(&lat, &mu);
    let q = lat.generation(2).find(|&c| lat.atom_in(c, 256)).unwrap();
    let found = table.hd_k(&lat, q, 2);
    let holding: Vec<CubeId> = found.iter().copied().filter(|&p| lat.atom_in(p, 256)).collect();
    assert_eq!(holding.len(), 1);
    let p = holding[0];
    let n = lat.dim_growth() as i32;
    let threshold = lat.params().a0.powi(2 * n) * table.big_theta(q);
    assert!(table.big_theta(p) >= threshold);
    let above = lat.parent(p).unwrap();
    assert!(lat.cube(above).generation == 2 || table.big_theta(above) < threshold);
}

#[test]
fn wolff_ball_trivial_cases() {
    let single = DiscreteMeasure::from_points(1, &[vec![0.3, 0.4]], vec![1.0]).unwrap();
    assert_eq!(wolff_energy_ball(&single, &ball(&[0.3, 0.4], 1.0), 0.75), 0.0);
    assert_eq!(wolff_energy_ball(&single, &ball(&[5.0, 5.0], 1.0), 0.75), 0.0);
}

#[test]
fn wolff_ball_pair_closed_form() {
    // Two unit atoms at distance d: for r ≥ d each sees mass 2, so each contributes
    // 4 ∫_d^∞ r^{α−2n−1} dr = 4 d^{α−2n}/(2n−α).
    let d: f64 = 0.1;
    let pair = DiscreteMeasure::from_points(1, &[vec![0.0, 0.0], vec![d, 0.0]], vec![1.0, 1.0]).unwrap();
    let expected = 2.0 * 4.0 * d.powf(0.75 - 2.0) / (2.0 - 0.75);
    assert_relative_eq!(wolff_energy_ball(&pair, &ball(&[0.0, 0.0], 1.0), 0.75), expected, max_relative = 1e-13);
}

#[test]
fn wolff_ball_matches_fine_quadrature() {
    for kind in MeasureKind::ALL {
        let depth = if kind.dim_growth() == 2 { 3 } else { 5 };
        let mu = gen(kind, depth);
        let center = mu.position(mu.len() / 3).to_vec();
        let b = ball(&center, 0.3);
        let exact = wolff_energy_ball(&mu, &b, 0.75);
        let fine = wolff_energy_ball_quadrature(&mu, &b, 0.75, 512);
        assert!((exact - fine).abs() <= 2e-3 * exact, "{kind}: {exact} vs {fine}");
    }
}

#[test]
fn wolff_quadrature_converges_under_step_halving() {
    for kind in MeasureKind::ALL {
        let depth = if kind.dim_growth() == 2 { 4 } else { 7 };
        let mu = gen(kind, depth);
        let center = mu.position(mu.len() / 3).to_vec();
        let b = ball(&center, 0.4);
        let exact = wolff_energy_ball(&mu, &b, 0.75);
        let errors: Vec<f64> = [8, 64, 512].iter().map(|&steps| (wolff_energy_ball_quadrature(&mu, &b, 0.75, steps) - exact).abs() / exact).collect();
        assert!(errors[2] < 0.01 && errors[2] <= errors[0], "{kind}: {errors:?}");
    }
}

#[test]
fn wolff_ball_obeys_growth_bound() {
    // 𝔼(μ⌊B) ≤ C θ0² r(B)^α μ(2B) with θ0 the growth constant; record the fitted C.
    let mut worst: f64 = 0.0;
    for kind in MeasureKind::ALL {
        let depth = if kind.dim_growth() == 2 { 3 } else { 7 };
        let mu = gen(kind, depth);
        let theta0 = mu.growth_constant();
        for radius in [0.05, 0.1, 0.2, 0.4] {
            let center = mu.position(mu.len() / 3).to_vec();
            let b = ball(&center, radius);
            let energy = wolff_energy_ball(&mu, &b, 0.75);
            let bound = theta0 * theta0 * radius.powf(0.75) * mu.mass_in_ball(&b.scaled(2.0));
            worst = worst.max(energy / bound);
        }
    }
    eprintln!("fitted growth-bound constant {worst}");
    assert!(worst.is_finite() && worst < 2.0, "fitted constant {worst}");
}

#[test]
fn wolff_cube_matches_direct_sum() {
    let (mu, lat, table) = setup(MeasureKind::Cantor4Corner, 4, 5);
    let alpha = lat.params().alpha;
    for q in lat.ids() {
        for lambda in [1.0, 2.0, 4.0] {
            let direct: f64 = lat
                .dilate_family(&mu, q, lambda)
                .iter()
                .map(|&p| (lat.side(p) / lat.side(q)).powf(alpha) * table.big_theta(p).powi(2) * lat.mass(p))
                .sum();
            assert_relative_eq!(table.wolff_energy_cube(&lat, &mu, q, lambda), direct, max_relative = 1e-12);
        }
        assert_relative_eq!(table.get(q).e4q, table.wolff_energy_cube(&lat, &mu, q, 4.0), max_relative = 1e-15);
    }
}

#[test]
fn one_cell_lattice_energy_is_single_term() {
    let mu = gen(MeasureKind::Segment, 4);
    let lat = build_lattice(&mu, &Params::default(), 0).unwrap();
    let table = CoeffTable::compute(&lat, &mu);
    let root = lat.root();
    assert_relative_eq!(table.get(root).e4q, table.big_theta(root).powi(2) * lat.mass(root), max_relative = 1e-15);
    assert!(!table.is_he(root));
}

/// Cells whose 4Q and the 2B balls of its cells stay inside the unit segment.
fn interior_cells(lat: &Lattice) -> Vec<CubeId> {
    lat.ids()
        .filter(|&q| {
            let (x, l) = (lat.cube(q).center[0], lat.side(q));
            x - 6.0 * l >= 0.0 && x + 6.0 * l <= 1.0
        })
        .collect()
}

fn energy_ratio(lat: &Lattice, table: &CoeffTable, q: CubeId) -> f64 {
    table.get(q).e4q / (table.big_theta(q).powi(2) * lat.mass(q))
}

#[test]
fn segment_energy_ratio_plateaus() {
    // ℰ(4Q)/(Θ(Q)²μ(Q)) on interior cells of a fixed generation as the lattice deepens.
    let ratios: Vec<f64> = (6..=9)
        .map(|ld| {
            let (_, lat, table) = setup(MeasureKind::Segment, 14, ld);
            interior_cells(&lat).into_iter().filter(|&q| lat.cube(q).generation == 6).map(|q| energy_ratio(&lat, &table, q)).fold(0.0, f64::max)
        })
        .collect();
    // Each extra generation adds roughly A0^{-α} times the previous increment.
    let increments: Vec<f64> = ratios.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(increments.iter().all(|&d| d >= 0.0), "{ratios:?}");
    assert!(increments.windows(2).all(|d| d[1] <= 0.5 * d[0]), "{ratios:?}");
    assert!(ratios.iter().all(|&r| r < 256.0), "{ratios:?}");
}

#[test]
fn cantor_energy_ratio_stays_bounded() {
    let ratios: Vec<f64> = (3..=6)
        .map(|depth| {
            let (_, lat, table) = setup(MeasureKind::Cantor4Corner, depth, depth as usize + 1);
            lat.ids().filter(|&q| lat.cube(q).generation == 2).map(|q| energy_ratio(&lat, &table, q)).fold(0.0, f64::max)
        })
        .collect();
    assert!(ratios.windows(2).all(|w| w[1] <= 1.1 * w[0]), "{ratios:?}");
}

#[test]
fn segment_interior_is_low_energy_at_default_m0() {
    let (_, lat, table) = setup(MeasureKind::Segment, 14, 8);
    let interior = interior_cells(&lat);
    assert!(!interior.is_empty());
    assert!(interior.iter().all(|&q| !table.is_he(q)));
    // With M0 = 10 the threshold 100 sits below the plateau reached by 4Q.
    let mu = gen(MeasureKind::Segment, 14);
    let params = Params { m0: 10.0, ..Params::default() };
    let lat = build_lattice(&mu, &params, 8).unwrap();
    let table = CoeffTable::compute(&lat, &mu);
    assert!(interior_cells(&lat).iter().any(|&q| table.is_he(q)));
}

#[test]
fn density_spike_is_high_energy() {
    let mut points: Vec<Vec<f64>> = (0..64).map(|i| vec![(i as f64 + 0.5) / 64.0, 0.5]).collect();
    let mut weights = vec![1.0 / 64.0; 64];
    for i in 0..32 {
        points.push(vec![0.3 + 1e-7 * i as f64, 0.5]);
        weights.push(0.01);
    }
    let mu = DiscreteMeasure::from_points(1, &points, weights).unwrap();
    let lat = build_lattice(&mu, &Params::default(), 12).unwrap();
    let table = CoeffTable::compute(&lat, &mu);
    let m0 = lat.params().m0;
    let spike_ancestors: Vec<CubeId> = lat.ancestors(lat.generation(lat.depth() - 1).find(|&c| lat.atom_in(c, 64)).unwrap()).collect();
    let strong = spike_ancestors.iter().copied().find(|&q| {
        let direct: f64 =
            lat.dilate_family(&mu, q, 4.0).iter().map(|&p| (lat.side(p) / lat.side(q)).powf(0.75) * table.big_theta(p).powi(2) * lat.mass(p)).sum();
        direct >= 2.0 * m0 * m0 * table.big_theta(q).powi(2) * lat.mass(q)
    });
    let q = strong.expect("a spike ancestor with twice the threshold energy");
    assert!(table.is_he(q));
}

#[test]
fn q_reg_examples() {
    let (mu, lat, _) = setup(MeasureKind::Segment, 8, 4);
    let q = lat.generation(3).next().unwrap();
    let l = lat.side(q);
    assert_relative_eq!(q_reg_coeff(&lat, &mu, &[q], q), l * lat.mass(q) / (2.0 * l).powi(2), max_relative = 1e-15);
    assert_eq!(q_reg_coeff(&lat, &mu, &[], q), 0.0);
}

#[test]
fn q_reg_far_pair() {
    let mut points = Vec::new();
    for i in 0..4 {
        points.push(vec![1e-3 * i as f64, 0.0]);
        points.push(vec![1e4 + 1e-3 * i as f64, 0.0]);
    }
    let mu = DiscreteMeasure::from_points(1, &points, vec![0.125; 8]).unwrap();
    let lat = build_lattice(&mu, &Params::default(), 6).unwrap();
    let g = (0..lat.depth()).find(|&g| lat.generation(g).count() == 2).unwrap() + 1;
    let p = lat.generation(g).find(|&c| lat.atom_in(c, 0)).unwrap();
    let q = lat.generation(g).find(|&c| lat.atom_in(c, 1)).unwrap();
    let dist = lat.dist_cubes(&mu, p, q);
    let value = q_reg_coeff(&lat, &mu, &[p], q);
    let approx = lat.side(p) * lat.mass(p) / dist.powi(2);
    assert!((value - approx).abs() / approx <= 2.0 * (lat.side(p) + lat.side(q)) / dist);
}

#[test]
fn flat_measure_has_null_beta_sum() {
    let (_, lat, table) = setup(MeasureKind::Segment, 10, 6);
    let scale: f64 = lat.ids().map(|q| table.big_theta(q) * lat.mass(q)).sum();
    assert!(table.beta_wolff_sum(&lat) <= 1e-10 * scale);
    assert!(lat.ids().all(|q| table.get(q).beta2_2b <= 1e-10));
}

#[test]
fn beta_sum_grows_on_cantor_and_plateaus_on_lipschitz() {
    let cantor: Vec<(f64, f64)> = (2..=6)
        .map(|k| {
            let (_, lat, table) = setup(MeasureKind::Cantor4Corner, k, k as usize + 1);
            (k as f64, table.beta_wolff_sum(&lat))
        })
        .collect();
    let fit = crate::stats::linear_fit(&cantor);
    assert!(fit.slope > 0.0, "{cantor:?}");
    let lip: Vec<f64> = (5..=8)
        .map(|d| {
            let (_, lat, table) = setup(MeasureKind::LipschitzGraph, 10, d);
            table.beta_wolff_sum(&lat)
        })
        .collect();
    assert!(lip.windows(2).all(|w| w[1] <= 1.25 * w[0] + 1e-12), "{lip:?}");
}

#[test]
fn sigma_recomputes_from_records() {
    let (_, lat, table) = setup(MeasureKind::Cantor4Corner, 3, 4);
    let family: Vec<CubeId> = lat.generation(2).collect();
    let direct: f64 = family.iter().map(|&p| table.get(p).big_theta.powi(2) * lat.mass(p)).sum();
    assert_eq!(table.sigma(&lat, &family), direct);
    assert_relative_eq!(table.sigma_p(&lat, &family, 2.0), direct);
}

#[test]
fn chain_decay_has_no_violations() {
    for (kind, depth, ld) in [(MeasureKind::Segment, 12, 7), (MeasureKind::Cantor4Corner, 5, 6), (MeasureKind::LipschitzGraph, 10, 7)] {
        let (_, lat, table) = setup(kind, depth, ld);
        let report = table.chain_decay(&lat);
        assert_eq!(report.violations, 0, "{kind}: {report:?}");
    }
}

#[test]
fn jump_regularity_rate_is_reported() {
    let (mu, lat, table) = setup(MeasureKind::Cantor4Corner, 4, 5);
    let report = table.jump_regularity(&lat, &mu);
    assert!(report.violations <= report.checked);
    assert!((0.0..=1.0).contains(&report.violation_rate()));
}

#[test]
fn csv_has_fixed_columns() {
    let (_, lat, table) = setup(MeasureKind::Segment, 6, 3);
    let mut buf = Vec::new();
    table.write_csv(&lat, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "gen,index,theta2B,BigTheta,P,beta2_2B,E4Q,is_pdoubling,is_HE");
    assert_eq!(lines.count(), lat.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bucket_brackets_any_density(density in 1e-9f64..1e9, a0 in prop::sample::select(vec![4.0, 8.0, 16.0]), n in 1usize..3) {
        let k = theta_bucket(density, a0, n);
        let base = a0.powi(n as i32);
        prop_assert!(base.powi(k) <= density && density < base.powi(k + 1));
    }

    #[test]
    fn beta2_is_invariant_under_rigid_motion(seed in 0u64..1000, angle in 0.0f64..std::f64::consts::TAU, shift in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = rng.gen_range(2..60);
        let points: Vec<Vec<f64>> = (0..count).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let weights: Vec<f64> = (0..count).map(|_| rng.gen_range(0.1..1.0)).collect();
        let (s, c) = angle.sin_cos();
        let moved: Vec<Vec<f64>> = points.iter().map(|p| vec![c * p[0] - s * p[1] + shift, s * p[0] + c * p[1] - shift]).collect();
        let a = DiscreteMeasure::from_points(1, &points, weights.clone()).unwrap();
        let b = DiscreteMeasure::from_points(1, &moved, weights).unwrap();
        let before = beta2(&a, &ball(&[0.5, 0.5], 2.0));
        let center = [c * 0.5 - s * 0.5 + shift, s * 0.5 + c * 0.5 - shift];
        let after = beta2(&b, &ball(&center, 2.0));
        prop_assert!((before - after).abs() <= 1e-9 * (1.0 + before));
    }
}
