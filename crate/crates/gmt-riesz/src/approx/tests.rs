use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::coeffs::CoeffTable;
use crate::corona::Corona;
use crate::lattice::{build_lattice, Params};
use crate::riesz::riesz_kernel;

fn on_line(points: &[(f64, f64)]) -> DiscreteMeasure {
    let pts: Vec<Vec<f64>> = points.iter().map(|&(x, _)| vec![x, 0.5]).collect();
    DiscreteMeasure::from_points(1, &pts, points.iter().map(|p| p.1).collect()).unwrap()
}

fn lumpy(count: usize, decades: f64, seed: u64) -> DiscreteMeasure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block: Vec<f64> = (0..count / 16).map(|_| 10f64.powf(-decades * rng.gen::<f64>())).collect();
    let total: f64 = block.iter().sum::<f64>() * 16.0;
    on_line(&(0..count).map(|i| ((i as f64 + 0.5) / count as f64, block[i / 16] / total)).collect::<Vec<_>>())
}

fn disk(center: Vec<f64>, radius: f64, mass: f64, source: usize) -> PieceSpec {
    PieceSpec { carrier: Carrier::Disk { center, radius }, mass, source: CubeId(source), size: radius }
}

fn placeholder(n: usize) -> DiscreteMeasure {
    DiscreteMeasure::new(n, vec![0.0; n + 1], vec![1.0]).unwrap()
}

#[test]
fn quadrature_matches_uniform_moments() {
    for (dim, tol) in [(1, 1e-3), (2, 1e-12), (3, 0.02), (4, 0.05)] {
        let pts = ball_quadrature(dim, 2.0, 64);
        assert!(pts.len() >= 64);
        assert!(pts.iter().all(|p| p.len() == dim && p.iter().map(|v| v * v).sum::<f64>() <= 4.0 + 1e-12));
        for axis in 0..dim {
            let mean = pts.iter().map(|p| p[axis]).sum::<f64>() / pts.len() as f64;
            assert!(mean.abs() < 0.05, "dim {dim} axis {axis} mean {mean}");
        }
        // E|x|² = d/(d+2) R² for the uniform ball.
        let second = pts.iter().map(|p| p.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / pts.len() as f64;
        assert_relative_eq!(second, 4.0 * dim as f64 / (dim + 2) as f64, max_relative = tol);
    }
}

#[test]
fn empty_piece_list_is_rejected() {
    assert!(matches!(ApproxMeasure::assemble(&placeholder(1), Vec::new(), 64), Err(ApproxError::Empty)));
}

#[test]
fn one_cell_gives_one_half_ball() {
    let mu = on_line(&(0..64).map(|i| ((i as f64 + 0.5) / 64.0, 1.0 / 64.0)).collect::<Vec<_>>());
    let lat = build_lattice(&mu, &Params::default(), 3).unwrap();
    let root = lat.root();
    let am = eta_from_cells(&lat, &mu, &[root]).unwrap();
    assert_eq!(am.pieces.len(), 1);
    assert_relative_eq!(am.pieces[0].mass, 1.0, max_relative = 1e-15);
    assert!(am.atoms().len() >= MIN_QUADRATURE);
    assert_relative_eq!(am.atoms().total_mass(), 1.0, max_relative = 1e-12);
    let cube = lat.cube(root);
    for a in 0..am.atoms().len() {
        let d = crate::measure::kdtree::dist2(am.atoms().position(a), &cube.center).sqrt();
        assert!(d <= 0.5 * cube.radius * (1.0 + 1e-12));
        assert_eq!(am.piece_of(a), 0);
    }
}

struct Pipeline {
    mu: DiscreteMeasure,
    lat: Lattice,
    coeffs: CoeffTable,
}

impl Pipeline {
    fn new(mu: DiscreteMeasure, params: Params, depth: usize) -> Self {
        let lat = build_lattice(&mu, &params, depth).unwrap();
        let coeffs = CoeffTable::compute(&lat, &mu);
        Pipeline { mu, lat, coeffs }
    }

    fn corona(&self) -> Corona<'_> {
        Corona::new(&self.lat, &self.mu, &self.coeffs).unwrap()
    }
}

fn clusters() -> Pipeline {
    let mut pts: Vec<(f64, f64)> = (0..1024).map(|i| ((i as f64 + 0.5) / 1024.0, 1.0 / 1024.0)).collect();
    for c in [0.25, 0.75] {
        pts.extend((0..16).map(|k| (c + 1e-7 * (k as f64 + 0.25), 0.01 / 16.0)));
    }
    Pipeline::new(on_line(&pts), Params::default(), 8)
}

#[test]
fn reg_eta_carries_the_reg_mass_with_bounded_growth() {
    let p = clusters();
    let c = p.corona();
    let r = p.lat.ids().find(|&r| c.is_mdw(r)).unwrap();
    let analysis = c.analyze(r).unwrap().unwrap();
    let reg = c.regularize(&analysis.tree, 1e-3).unwrap();
    let am = eta_from_reg(&p.lat, &p.mu, &reg).unwrap();
    let expected: f64 = reg.reg.iter().map(|&q| p.lat.mass(q)).sum();
    assert_relative_eq!(am.total_mass(), expected, max_relative = 1e-15);
    assert_relative_eq!(am.atoms().total_mass(), expected, max_relative = 1e-12);
    for (piece, &q) in am.pieces.iter().zip(&reg.reg) {
        assert_eq!(piece.source, q);
        assert_eq!(piece.mass, p.lat.mass(q));
        assert!(piece.atom_count >= MIN_QUADRATURE);
    }
    let growth = growth_above(&am, |x| reg.d(x));
    // Oracle: the same sup by direct summation over the quadrature atoms.
    let atoms = am.atoms();
    let diam = atoms.diameter();
    let stride = atoms.len().div_ceil(SCAN_CENTRES).max(1);
    let mut brute: f64 = 0.0;
    for a in (0..atoms.len()).step_by(stride) {
        let x = atoms.position(a);
        let mut r = reg.d(x);
        loop {
            let rr = r.min(diam.max(reg.d(x)));
            let m: f64 = (0..atoms.len()).filter(|&b| crate::measure::kdtree::dist2(atoms.position(b), x) <= rr * rr).map(|b| atoms.weight(b)).sum();
            brute = brute.max(m / rr);
            if r >= diam {
                break;
            }
            r *= 2.0;
        }
    }
    assert_relative_eq!(growth, brute, max_relative = 1e-12);
    let theta_h = p.coeffs.big_theta(r);
    assert!(growth.is_finite() && growth > 0.0 && theta_h > 0.0);
}

#[test]
fn single_disk_ratios_follow_planar_geometry() {
    // n = 1: for a segment of density θ the ratio lies in [1, 2].
    let am = ApproxMeasure::assemble(&placeholder(1), vec![disk(vec![0.0, 0.0], 0.5, 1.0, 0)], 64).unwrap();
    let reg = check_ad_regular(&am, 1.0).unwrap();
    assert!(reg.c_low >= 0.95 && reg.c_high <= 2.0 + 1e-12, "{reg:?}");
    // n = 2: ratios range from the diameter ball (π/4) to the centred ball of the disk radius (π).
    let theta = 3.0;
    let rho: f64 = 0.25;
    let am = ApproxMeasure::assemble(&placeholder(2), vec![disk(vec![0.0, 0.0, 0.0], rho, theta * PI * rho * rho, 0)], 64).unwrap();
    let reg = check_ad_regular(&am, theta).unwrap();
    assert!(reg.c_low >= 0.7 && reg.c_high <= PI + 1e-9, "{reg:?}");
}

#[test]
fn far_disks_keep_their_small_scale_ratios() {
    let one = ApproxMeasure::assemble(&placeholder(2), vec![disk(vec![0.0, 0.0, 0.0], 0.25, 1.0, 0)], 64).unwrap();
    let two = ApproxMeasure::assemble(&placeholder(2), vec![disk(vec![0.0, 0.0, 0.0], 0.25, 1.0, 0), disk(vec![100.0, 0.0, 0.0], 0.25, 1.0, 1)], 64)
        .unwrap();
    let (a, b) = (check_ad_regular(&one, 1.0).unwrap(), check_ad_regular(&two, 1.0).unwrap());
    assert_relative_eq!(a.c_high, b.c_high, max_relative = 1e-12);
    assert!(b.c_low < 1e-3 * a.c_low);
    assert!(!two.has_overlap());
    let touching =
        ApproxMeasure::assemble(&placeholder(2), vec![disk(vec![0.0, 0.0, 0.0], 0.25, 1.0, 0), disk(vec![0.5, 0.0, 0.0], 0.25, 1.0, 1)], 64).unwrap();
    assert_eq!(touching.overlapping_pairs(), 1);
}

#[test]
fn symmetric_disk_has_no_field_at_its_centre() {
    for n in [1, 2] {
        let centre = vec![0.3; n + 1];
        let am = ApproxMeasure::assemble(&placeholder(n), vec![disk(centre.clone(), 0.2, 1.0, 0)], 64).unwrap();
        let atoms = am.atoms();
        let mut sum = vec![0.0; n + 1];
        for a in 0..atoms.len() {
            let k = riesz_kernel(&centre, atoms.position(a), n);
            sum.iter_mut().zip(&k).for_each(|(s, v)| *s += atoms.weight(a) * v);
        }
        assert!(sum.iter().all(|v| v.abs() < 1e-12), "{sum:?}");
    }
}

#[test]
fn two_disk_field_matches_direct_sum() {
    let am = ApproxMeasure::assemble(&placeholder(1), vec![disk(vec![0.0, 0.2], 0.1, 1.0, 0), disk(vec![0.5, 0.2], 0.1, 0.5, 1)], 64).unwrap();
    let eta = riesz_on_eta(&am, Backend::Direct).unwrap();
    let atoms = am.atoms();
    let mut norm_sq = 0.0;
    for a in 0..atoms.len() {
        let mut sum = [0.0; 2];
        for b in (0..atoms.len()).filter(|&b| b != a) {
            let k = riesz_kernel(atoms.position(a), atoms.position(b), 1);
            sum[0] += atoms.weight(b) * k[0];
            sum[1] += atoms.weight(b) * k[1];
        }
        assert_relative_eq!(eta.field.get(a)[0], sum[0], max_relative = 1e-12, epsilon = 1e-12);
        // Collinear disks: no transverse component.
        assert_eq!(eta.field.get(a)[1], 0.0);
        norm_sq += atoms.weight(a) * (sum[0] * sum[0] + sum[1] * sum[1]);
    }
    assert_relative_eq!(eta.l2_norm, norm_sq.sqrt(), max_relative = 1e-12);
    let tree = riesz_on_eta(&am, Backend::tree(1e-3).unwrap()).unwrap();
    assert!((tree.l2_norm - eta.l2_norm).abs() <= 1e-3 * eta.l2_norm);
}

#[test]
fn disk_masses_equal_cell_masses_without_spreading() {
    let mu = on_line(&(0..1024).map(|i| ((i as f64 + 0.5) / 1024.0, 1.0 / 1024.0)).collect::<Vec<_>>());
    let p = Pipeline::new(mu, Params::default(), 6);
    let c = p.corona();
    let forest = c.build_top().unwrap();
    let top = forest.get(p.lat.root()).unwrap();
    let r = *top.tree.iter().find(|&&q| q != p.lat.root() && c.is_pdoubling(q) && !top.end.contains(&q) && !top.hd.contains(&q)).unwrap();
    let tree = c.build_spread_tree(&forest, top.root, r).unwrap();
    assert!(tree.s.values().all(|&s| s == 0.0));
    let am = eta_disks(&p.lat, &p.mu, &tree).unwrap();
    for piece in &am.pieces {
        assert_eq!(piece.mass, p.lat.mass(piece.source));
    }
    assert_relative_eq!(am.total_mass(), p.lat.mass(r), max_relative = 1e-12);
}

#[test]
fn disk_eta_conserves_mass_and_drops_low_cells() {
    let p = Pipeline::new(lumpy(2048, 4.0, 2), Params { n0: 0, ..Params::default() }, 7);
    let c = p.corona();
    let forest = c.build_top().unwrap();
    let mut low_stops = 0;
    let mut trees = 0;
    for f in forest.roots.iter().step_by(5) {
        for &r in f.tree.iter().filter(|&&r| c.is_pdoubling(r) && !f.end.contains(&r)).take(6) {
            let tree = c.build_spread_tree(&forest, f.root, r).unwrap();
            let am = eta_disks(&p.lat, &p.mu, &tree).unwrap();
            trees += 1;
            assert_relative_eq!(am.total_mass(), p.lat.mass(r), max_relative = 1e-12);
            assert_relative_eq!(am.atoms().total_mass(), p.lat.mass(r), max_relative = 1e-12);
            for &low in tree.low.iter().filter(|q| tree.stops.contains_key(q)) {
                assert!(am.pieces.iter().all(|piece| piece.source != low));
                low_stops += 1;
            }
            for &q in &tree.members {
                assert_relative_eq!(am.mass_below(&p.lat, q), p.lat.mass(q) + tree.s(q), max_relative = 1e-10, epsilon = 1e-15);
            }
            assert!(am.pieces.iter().all(|piece| piece.mass > 0.0));
        }
    }
    assert!(trees > 0 && low_stops > 0);
}

#[test]
fn json_round_trip_with_sidecar() {
    let am = ApproxMeasure::assemble(&placeholder(1), vec![disk(vec![0.0, 0.0], 0.5, 1.0, 3)], 64).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eta.json");
    let sidecar = am.write_json(&path).unwrap();
    let back = crate::measure::read_measure(&path, false).unwrap();
    assert_eq!(back.len(), am.atoms().len());
    assert_eq!(back.weights(), am.atoms().weights());
    let table: serde_json::Value = serde_json::from_reader(File::open(sidecar).unwrap()).unwrap();
    assert_eq!(table[0]["source"], 3);
    assert_eq!(table[0]["carrier"]["kind"], "disk");
}
