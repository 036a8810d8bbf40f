//! Canonical test measures, all supported in the unit cube with total mass 1.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DiscreteMeasure, MeasureError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    Segment,
    PlanePatch,
    LipschitzGraph,
    CantorLine,
    #[serde(rename = "cantor4corner")]
    Cantor4Corner,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 5] =
        [MeasureKind::Segment, MeasureKind::PlanePatch, MeasureKind::LipschitzGraph, MeasureKind::CantorLine, MeasureKind::Cantor4Corner];

    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::Segment => "segment",
            MeasureKind::PlanePatch => "plane_patch",
            MeasureKind::LipschitzGraph => "lipschitz_graph",
            MeasureKind::CantorLine => "cantor_line",
            MeasureKind::Cantor4Corner => "cantor4corner",
        }
    }

    pub fn dim_growth(self) -> usize {
        match self {
            MeasureKind::PlanePatch => 2,
            _ => 1,
        }
    }

    /// log2 of the atom count at the given depth.
    fn atoms_log2(self, depth: u32) -> u32 {
        match self {
            MeasureKind::Segment | MeasureKind::LipschitzGraph | MeasureKind::CantorLine => depth,
            MeasureKind::PlanePatch | MeasureKind::Cantor4Corner => 2 * depth,
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MeasureKind {
    type Err = MeasureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MeasureKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| MeasureError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorSettings {
    pub atom_cap: usize,
    /// Slope amplitude of the graph; the function is `amplitude`-Lipschitz.
    pub lipschitz_amplitude: f64,
    pub lipschitz_frequency: f64,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        GeneratorSettings { atom_cap: 1 << 22, lipschitz_amplitude: 0.5, lipschitz_frequency: 2.0 }
    }
}

pub fn generate(kind: MeasureKind, depth: u32, settings: &GeneratorSettings) -> Result<DiscreteMeasure, MeasureError> {
    let log2 = kind.atoms_log2(depth);
    let requested: u128 = if log2 >= 127 { u128::MAX } else { 1u128 << log2 };
    if requested > settings.atom_cap as u128 {
        return Err(MeasureError::AtomCap { requested, cap: settings.atom_cap });
    }
    let count = requested as usize;
    match kind {
        MeasureKind::Segment => {
            let side = (1u64 << depth) as f64;
            let coords = (0..count).flat_map(|i| [(i as f64 + 0.5) / side, 0.5]).collect();
            DiscreteMeasure::new(1, coords, vec![1.0 / side; count])
        }
        MeasureKind::PlanePatch => {
            let per_side = 1usize << depth;
            let side = per_side as f64;
            let coords = (0..count).flat_map(|i| [((i % per_side) as f64 + 0.5) / side, ((i / per_side) as f64 + 0.5) / side, 0.5]).collect();
            DiscreteMeasure::new(2, coords, vec![1.0 / count as f64; count])
        }
        MeasureKind::LipschitzGraph => lipschitz_graph(depth, count, settings),
        MeasureKind::CantorLine => {
            let coords = (0..count).flat_map(|i| [cantor_coordinate(i, depth), 0.5]).collect();
            DiscreteMeasure::new(1, coords, vec![1.0 / count as f64; count])
        }
        MeasureKind::Cantor4Corner => {
            let coords = (0..count)
                .flat_map(|i| {
                    let (xs, ys) = split_digits(i, depth);
                    [cantor_coordinate(xs, depth), cantor_coordinate(ys, depth)]
                })
                .collect();
            DiscreteMeasure::new(1, coords, vec![1.0 / count as f64; count])
        }
    }
}

fn lipschitz_graph(depth: u32, count: usize, settings: &GeneratorSettings) -> Result<DiscreteMeasure, MeasureError> {
    let amp = settings.lipschitz_amplitude;
    let freq = settings.lipschitz_frequency;
    let height = |x: f64| 0.5 + amp * (TAU * freq * x).sin() / (TAU * freq);
    let slope = |x: f64| amp * (TAU * freq * x).cos();
    let side = (1u64 << depth) as f64;
    let xs: Vec<f64> = (0..count).map(|i| (i as f64 + 0.5) / side).collect();
    let arclength: Vec<f64> = xs.iter().map(|&x| (1.0 + slope(x).powi(2)).sqrt()).collect();
    let total: f64 = arclength.iter().sum();
    let coords = xs.iter().flat_map(|&x| [x, height(x)]).collect();
    DiscreteMeasure::new(1, coords, arclength.iter().map(|a| a / total).collect())
}

/// Center of the level-`depth` interval of the quarter Cantor set whose
/// left/right choices are the bits of `code`, most significant first.
fn cantor_coordinate(code: usize, depth: u32) -> f64 {
    let mut left = 0.0;
    let mut width = 1.0;
    for level in (0..depth).rev() {
        width /= 4.0;
        if (code >> level) & 1 == 1 {
            left += 3.0 * width;
        }
    }
    left + width / 2.0
}

/// Splits a base-4 code into its x and y bit strings.
fn split_digits(code: usize, depth: u32) -> (usize, usize) {
    let mut xs = 0;
    let mut ys = 0;
    for level in (0..depth).rev() {
        let digit = (code >> (2 * level)) & 3;
        xs = (xs << 1) | (digit & 1);
        ys = (ys << 1) | (digit >> 1);
    }
    (xs, ys)
}

/// Index of the level-`level` construction square containing atom `atom` of a
/// depth-`depth` four-corner Cantor measure. Atoms are generated in base-4
/// digit order, so the label is a prefix of the atom index.
pub fn cantor_square_label(atom: usize, depth: u32, level: u32) -> usize {
    atom >> (2 * (depth - level.min(depth)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(kind: MeasureKind, depth: u32) -> DiscreteMeasure {
        generate(kind, depth, &GeneratorSettings::default()).unwrap()
    }

    #[test]
    fn cantor_depth_one_corners() {
        let mu = gen(MeasureKind::Cantor4Corner, 1);
        assert_eq!(mu.len(), 4);
        let mut pts: Vec<(f64, f64)> = (0..4).map(|i| (mu.position(i)[0] - 0.5, mu.position(i)[1] - 0.5)).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = 3.0 / 8.0;
        assert_eq!(pts, vec![(-q, -q), (-q, q), (q, -q), (q, q)]);
        assert!(mu.weights().iter().all(|&w| w == 0.25));
    }

    #[test]
    fn cantor_depth_zero_is_one_atom() {
        let mu = gen(MeasureKind::Cantor4Corner, 0);
        assert_eq!(mu.len(), 1);
        assert_eq!(mu.total_mass(), 1.0);
    }

    #[test]
    fn segment_counts_and_mass() {
        for k in 0..12 {
            let mu = gen(MeasureKind::Segment, k);
            assert_eq!(mu.len(), 1 << k);
            assert_eq!(mu.total_mass(), 1.0);
        }
    }

    #[test]
    fn dyadic_generators_have_exact_unit_mass() {
        for kind in [MeasureKind::PlanePatch, MeasureKind::CantorLine, MeasureKind::Cantor4Corner] {
            for k in 0..6 {
                assert_eq!(gen(kind, k).total_mass(), 1.0, "{kind} depth {k}");
            }
        }
    }

    #[test]
    fn lipschitz_graph_is_unit_mass_and_lipschitz() {
        let mu = gen(MeasureKind::LipschitzGraph, 9);
        assert!((mu.total_mass() - 1.0).abs() < 1e-12);
        for i in 1..mu.len() {
            let (a, b) = (mu.position(i - 1), mu.position(i));
            assert!((b[1] - a[1]).abs() <= (b[0] - a[0]).abs() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn everything_inside_unit_cube() {
        for kind in MeasureKind::ALL {
            let mu = gen(kind, 4);
            assert!(mu.coords().iter().all(|&c| (0.0..=1.0).contains(&c)), "{kind}");
        }
    }

    #[test]
    fn cantor_labels_group_squares() {
        let depth = 3;
        let mu = gen(MeasureKind::Cantor4Corner, depth);
        for level in 0..=depth {
            let side = 0.25f64.powi(level as i32);
            for a in 0..mu.len() {
                for b in 0..mu.len() {
                    if cantor_square_label(a, depth, level) == cantor_square_label(b, depth, level) {
                        let pa = mu.position(a);
                        let pb = mu.position(b);
                        assert!((pa[0] - pb[0]).abs() < side && (pa[1] - pb[1]).abs() < side);
                    }
                }
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        let settings = GeneratorSettings { atom_cap: 1000, ..Default::default() };
        assert!(matches!(generate(MeasureKind::Segment, 10, &settings), Err(MeasureError::AtomCap { requested: 1024, cap: 1000 })));
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in MeasureKind::ALL {
            assert_eq!(kind.name().parse::<MeasureKind>().unwrap(), kind);
        }
        assert!("sphere".parse::<MeasureKind>().is_err());
    }
}
