//! End-to-end experiments: measure, lattice, coefficients and Riesz fields,
//! reduced to the two sides of the square-function equivalence and a set of
//! per-instance invariant checks.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffs::{beta2, theta, CoeffTable};
use crate::lattice::{build_lattice, LatticeError, Params, ParamsError};
use crate::measure::{generate, Ball, DiscreteMeasure, GeneratorSettings, MeasureError, MeasureKind};
use crate::riesz::haar::haar_energy;
use crate::riesz::{pv_field, Backend, RieszError};
use crate::stats::{linear_fit, LinearFit};

pub const SCHEMA_VERSION: u32 = 1;
/// Lattice generations requested when an experiment does not pin a depth;
/// construction stops earlier once every cell is a single atom.
pub const AUTO_LATTICE_DEPTH: usize = 30;
/// Largest measure on which the direct-sum antisymmetry check runs.
const ANTISYMMETRY_MAX_ATOMS: usize = 1 << 14;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Riesz(#[from] RieszError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub backend: Backend,
    pub seed: u64,
    pub lattice_depth: Option<usize>,
    /// Centres sampled for the double integral; all atoms when fewer.
    pub integral_centres: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { backend: Backend::Direct, seed: 0, lattice_depth: None, integral_centres: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureDescriptor {
    pub kind: String,
    pub depth: u32,
    pub atoms: usize,
    pub n: usize,
    pub total_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl InvariantCheck {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        InvariantCheck { name: name.to_string(), pass, detail }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub haar_over_cubes: f64,
    pub lhs_over_cubes: f64,
    pub lhs_over_integral: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub lattice_ms: f64,
    pub coeffs_ms: f64,
    pub field_ms: f64,
    pub integral_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub measure: MeasureDescriptor,
    pub lattice_depth: usize,
    pub cells: usize,
    /// ‖pv ℛμ‖² + ‖μ‖.
    pub lhs: f64,
    /// Σ_Q ‖Δ_Q ℛμ‖² + ‖μ‖.
    pub lhs_haar: f64,
    /// Σ_Q β₂(2B_Q)² Θ(Q) μ(Q) + ‖μ‖.
    pub rhs_cubes: f64,
    /// Sampled ∫∫ β₂(x, r)² θ(x, r) dr/r dμ(x) + ‖μ‖.
    pub rhs_integral: f64,
    pub ratios: Ratios,
    pub invariants: Vec<InvariantCheck>,
    pub timings: Timings,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.invariants.iter().all(|c| c.pass)
    }
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// ∫∫ β₂(x, r)² θ(x, r) dr/r dμ(x) on the atoms (or a seeded sample of them,
/// reweighted to the full mass) times dyadic radii from the minimal gap to the
/// diameter, each radius carrying weight ln 2.
pub fn beta_theta_integral(mu: &DiscreteMeasure, centres: usize, seed: u64) -> f64 {
    let picked: Vec<usize> = if mu.len() <= centres {
        (0..mu.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, mu.len(), centres).into_vec();
        idx.sort_unstable();
        idx
    };
    let picked_mass: f64 = picked.iter().map(|&a| mu.weight(a)).sum();
    let scale = mu.total_mass() / picked_mass;
    let gap = mu.min_gap();
    let diameter = mu.diameter();
    if !(gap > 0.0 && diameter > 0.0) {
        return 0.0;
    }
    let radii: Vec<f64> = std::iter::successors(Some(gap), |r| Some(r * 2.0)).take_while(|&r| r <= diameter).collect();
    let per_centre: Vec<f64> = picked
        .par_iter()
        .map(|&a| {
            let x = mu.position(a);
            let inner: f64 = radii
                .iter()
                .map(|&r| {
                    let ball = Ball { center: x.to_vec(), radius: r };
                    beta2(mu, &ball).powi(2) * theta(mu, &ball)
                })
                .sum();
            mu.weight(a) * inner * std::f64::consts::LN_2
        })
        .collect();
    scale * per_centre.iter().sum::<f64>()
}

/// Runs the full pipeline on a given measure.
pub fn run_on_measure(
    mu: &DiscreteMeasure,
    descriptor: MeasureDescriptor,
    params: &Params,
    options: &RunOptions,
) -> Result<ExperimentReport, HarnessError> {
    let total = Instant::now();
    let mut timings = Timings::default();

    let start = Instant::now();
    let lat = build_lattice(mu, params, options.lattice_depth.unwrap_or(AUTO_LATTICE_DEPTH))?;
    timings.lattice_ms = millis(start);

    let start = Instant::now();
    let coeffs = CoeffTable::compute(&lat, mu);
    timings.coeffs_ms = millis(start);

    let start = Instant::now();
    let field = pv_field(mu, options.backend)?;
    let energy = haar_energy(&lat, mu, &field);
    timings.field_ms = millis(start);

    let start = Instant::now();
    let integral = beta_theta_integral(mu, options.integral_centres, options.seed);
    timings.integral_ms = millis(start);

    let mass = mu.total_mass();
    let lhs = field.l2_norm_sq(mu) + mass;
    let lhs_haar = energy.tree_sum + mass;
    let rhs_cubes = coeffs.beta_wolff_sum(&lat) + mass;
    let rhs_integral = integral + mass;
    let ratios = Ratios { haar_over_cubes: lhs_haar / rhs_cubes, lhs_over_cubes: lhs / rhs_cubes, lhs_over_integral: lhs / rhs_integral };

    let mut invariants = Vec::new();
    let broken: Vec<usize> = lat.check_invariants(mu).iter().filter(|r| !r.all_hold()).map(|r| r.generation).collect();
    invariants.push(InvariantCheck::new("lattice", broken.is_empty(), format!("failing generations {broken:?}")));
    if mu.len() <= ANTISYMMETRY_MAX_ATOMS {
        let direct = if options.backend == Backend::Direct { field.clone() } else { pv_field(mu, Backend::Direct)? };
        let moment = direct.weighted_sum(mu).iter().map(|v| v * v).sum::<f64>().sqrt();
        let bound = 1e-10 * mass * direct.max_norm();
        invariants.push(InvariantCheck::new("antisymmetry", moment <= bound, format!("|Σ w R| = {moment:.3e}, bound {bound:.3e}")));
    }
    let chains = coeffs.chain_decay(&lat);
    invariants.push(InvariantCheck::new(
        "chain_decay",
        chains.violations == 0,
        format!("{} violations over {} chain cells", chains.violations, chains.checked),
    ));
    let parseval = energy.parseval_error();
    invariants.push(InvariantCheck::new("parseval", parseval <= 1e-9, format!("relative error {parseval:.3e}")));
    let finite = [ratios.haar_over_cubes, ratios.lhs_over_cubes, ratios.lhs_over_integral].iter().all(|r| r.is_finite() && *r > 0.0);
    invariants.push(InvariantCheck::new("ratios_finite", finite, format!("{ratios:?}")));

    timings.total_ms = millis(total);
    Ok(ExperimentReport {
        measure: descriptor,
        lattice_depth: lat.depth(),
        cells: lat.len(),
        lhs,
        lhs_haar,
        rhs_cubes,
        rhs_integral,
        ratios,
        invariants,
        timings,
    })
}

/// Generates the measure and runs the pipeline.
pub fn verify_equivalence(kind: MeasureKind, depth: u32, params: &Params, options: &RunOptions) -> Result<ExperimentReport, HarnessError> {
    let mu = generate(kind, depth, &GeneratorSettings::default())?;
    let descriptor = MeasureDescriptor { kind: kind.to_string(), depth, atoms: mu.len(), n: mu.dim_growth(), total_mass: mu.total_mass() };
    run_on_measure(&mu, descriptor, params, options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub kind: MeasureKind,
    pub depth: u32,
    /// Parameter overrides as key/value text.
    #[serde(default)]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub lattice_depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default = "default_accuracy")]
    pub accuracy: f64,
    #[serde(default)]
    pub strict_paper_constants: bool,
    #[serde(default)]
    pub experiments: Vec<ExperimentSpec>,
}

fn default_backend() -> String {
    "tree".to_string()
}

fn default_accuracy() -> f64 {
    1e-3
}

impl SuiteConfig {
    /// Segment and Lipschitz graph at depths 4..=7, the 4-corner Cantor set at
    /// depths 2..=6 and a plane patch at depth 4.
    pub fn standard() -> Self {
        let mut experiments = Vec::new();
        let mut add = |kind: MeasureKind, depths: std::ops::RangeInclusive<u32>| {
            for depth in depths {
                experiments.push(ExperimentSpec { name: format!("{kind}-{depth}"), kind, depth, params: BTreeMap::new(), lattice_depth: None });
            }
        };
        add(MeasureKind::Segment, 4..=7);
        add(MeasureKind::LipschitzGraph, 4..=7);
        add(MeasureKind::Cantor4Corner, 2..=6);
        add(MeasureKind::PlanePatch, 4..=4);
        SuiteConfig { seed: 0, backend: default_backend(), accuracy: default_accuracy(), strict_paper_constants: false, experiments }
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    pub fn backend(&self) -> Result<Backend, HarnessError> {
        Ok(match self.backend.as_str() {
            "tree" => Backend::tree(self.accuracy)?,
            other => other.parse()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub name: String,
    pub report: Option<ExperimentReport>,
    /// Why the experiment could not run.
    pub failure: Option<String>,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.as_ref().is_some_and(ExperimentReport::passed)
    }
}

/// Depth behaviour of one generator family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyScaling {
    pub kind: String,
    pub depths: Vec<u32>,
    /// Smallest C with lhs_haar/rhs_cubes ∈ [1/C, C] at every depth.
    pub band: f64,
    /// Last-depth over previous-depth value of lhs_haar and rhs_cubes.
    pub plateau: Option<(f64, f64)>,
    pub lhs_haar_fit: LinearFit,
    pub rhs_cubes_fit: LinearFit,
}

/// Groups reports by generator kind and fits their depth dependence.
pub fn family_scaling(reports: &[&ExperimentReport]) -> Vec<FamilyScaling> {
    let mut groups: BTreeMap<&str, Vec<&ExperimentReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(r.measure.kind.as_str()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(kind, mut rs)| {
            rs.sort_by_key(|r| r.measure.depth);
            let band = rs.iter().map(|r| r.ratios.haar_over_cubes.max(1.0 / r.ratios.haar_over_cubes)).fold(1.0, f64::max);
            let plateau = match rs.as_slice() {
                [.., a, b] => Some((b.lhs_haar / a.lhs_haar, b.rhs_cubes / a.rhs_cubes)),
                _ => None,
            };
            let fit = |f: fn(&ExperimentReport) -> f64| linear_fit(&rs.iter().map(|r| (r.measure.depth as f64, f(r))).collect::<Vec<_>>());
            FamilyScaling {
                kind: kind.to_string(),
                depths: rs.iter().map(|r| r.measure.depth).collect(),
                band,
                plateau,
                lhs_haar_fit: fit(|r| r.lhs_haar),
                rhs_cubes_fit: fit(|r| r.rhs_cubes),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub seed: u64,
    pub backend: String,
    pub entries: Vec<SuiteEntry>,
    pub families: Vec<FamilyScaling>,
    pub pass: bool,
}

impl SuiteReport {
    pub fn write_json(&self, path: &Path) -> Result<(), HarnessError> {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    /// One row per experiment.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "name",
            "kind",
            "depth",
            "atoms",
            "lhs",
            "lhs_haar",
            "rhs_cubes",
            "rhs_integral",
            "haar_over_cubes",
            "lhs_over_integral",
            "pass",
            "total_ms",
        ])?;
        for e in &self.entries {
            match &e.report {
                Some(r) => w.write_record([
                    e.name.clone(),
                    r.measure.kind.clone(),
                    r.measure.depth.to_string(),
                    r.measure.atoms.to_string(),
                    r.lhs.to_string(),
                    r.lhs_haar.to_string(),
                    r.rhs_cubes.to_string(),
                    r.rhs_integral.to_string(),
                    r.ratios.haar_over_cubes.to_string(),
                    r.ratios.lhs_over_integral.to_string(),
                    r.passed().to_string(),
                    format!("{:.1}", r.timings.total_ms),
                ])?,
                None => w.write_record([e.name.as_str(), "", "", "", "", "", "", "", "", "", "false", ""])?,
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every configured experiment. Entries are ordered by name; a run that
/// cannot start (bad parameters, unsupported constants) is recorded as a failure.
pub fn run_suite_config(config: &SuiteConfig, base: &Params) -> Result<SuiteReport, HarnessError> {
    let backend = config.backend()?;
    let mut entries: Vec<SuiteEntry> = config
        .experiments
        .par_iter()
        .map(|spec| {
            let outcome = (|| -> Result<ExperimentReport, HarnessError> {
                let mut params = base.clone();
                params.strict_paper_constants |= config.strict_paper_constants;
                for (k, v) in &spec.params {
                    params.set(k, v)?;
                }
                let options = RunOptions { backend, seed: config.seed, lattice_depth: spec.lattice_depth, ..RunOptions::default() };
                verify_equivalence(spec.kind, spec.depth, &params, &options)
            })();
            match outcome {
                Ok(report) => SuiteEntry { name: spec.name.clone(), report: Some(report), failure: None },
                Err(err) => SuiteEntry { name: spec.name.clone(), report: None, failure: Some(err.to_string()) },
            }
        })
        .collect();
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    let reports: Vec<&ExperimentReport> = entries.iter().filter_map(|e| e.report.as_ref()).collect();
    let families = family_scaling(&reports);
    let pass = entries.iter().all(SuiteEntry::passed);
    Ok(SuiteReport { schema_version: SCHEMA_VERSION, seed: config.seed, backend: config.backend.clone(), entries, families, pass })
}

/// Reads a JSON suite config and runs it with default parameters.
pub fn run_suite(config_path: &Path) -> Result<SuiteReport, HarnessError> {
    run_suite_config(&SuiteConfig::from_file(config_path)?, &Params::default())
}
