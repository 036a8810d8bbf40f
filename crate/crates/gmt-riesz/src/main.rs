use std::error::Error;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gmt_riesz::coeffs::CoeffTable;
use gmt_riesz::corona::Corona;
use gmt_riesz::harness::{run_on_measure, run_suite_config, verify_equivalence, MeasureDescriptor, RunOptions, SuiteConfig};
use gmt_riesz::lattice::{build_lattice, read_lattice, write_lattice, Lattice, Params};
use gmt_riesz::measure::{generate, read_measure, write_measure, DiscreteMeasure, GeneratorSettings, MeasureKind};
use gmt_riesz::riesz::{pv_field, Backend};

type CliResult<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "gmt-riesz", version, about = "Lattices, coefficients, corona decompositions and Riesz transforms of discrete measures")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Parameter file with one `key = value` per line.
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    /// Generator depth for `generate` and `verify`; lattice generations
    /// for `lattice`, `coeffs` and `corona` (default: the `max_gen` parameter).
    #[arg(long, global = true)]
    depth: Option<usize>,
    /// `direct` or `tree`.
    #[arg(long, global = true, default_value = "direct")]
    backend: String,
    /// Relative accuracy of the tree backend.
    #[arg(long, global = true, default_value_t = 1e-3)]
    accuracy: f64,
    /// Seed for sampled quantities (default 0, or the suite config's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    strict_paper_constants: bool,
    /// Measure file (CSV or JSON).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a canonical test measure.
    Generate {
        #[arg(long)]
        kind: MeasureKind,
    },
    /// Build the lattice of a measure and report its structural checks.
    Lattice,
    /// Per-cell coefficients as CSV.
    Coeffs {
        /// Reuse a lattice written by `lattice --output`.
        #[arg(long)]
        lattice: Option<PathBuf>,
    },
    /// Principal-value Riesz field at the atoms, as CSV.
    Riesz,
    /// Corona forest summary as JSON.
    Corona,
    /// Both sides of the square-function equivalence for one measure.
    Verify {
        /// Generator kind, used when no --input is given.
        #[arg(long)]
        kind: Option<MeasureKind>,
    },
    /// Run a suite of experiments; exits nonzero when any check fails.
    Suite {
        /// JSON suite config; the standard suite when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the CSV summary here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

impl Common {
    fn params(&self) -> CliResult<Params> {
        let mut params = match &self.params {
            Some(path) => Params::from_file(path)?,
            None => Params::default(),
        };
        params.strict_paper_constants |= self.strict_paper_constants;
        params.validate()?;
        Ok(params)
    }

    fn backend(&self) -> CliResult<Backend> {
        Ok(match self.backend.as_str() {
            "tree" => Backend::tree(self.accuracy)?,
            other => other.parse()?,
        })
    }

    fn measure(&self) -> CliResult<DiscreteMeasure> {
        let path = self.input.as_ref().ok_or("--input is required")?;
        Ok(read_measure(path, false)?)
    }

    fn generator_depth(&self) -> CliResult<u32> {
        Ok(u32::try_from(self.depth.ok_or("--depth is required")?)?)
    }

    fn lattice(&self, mu: &DiscreteMeasure, params: &Params) -> CliResult<Lattice> {
        Ok(build_lattice(mu, params, self.depth.unwrap_or(params.max_gen))?)
    }

    fn sink(&self) -> CliResult<Box<dyn Write>> {
        Ok(match &self.output {
            Some(path) => Box::new(BufWriter::new(File::create(path)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    fn emit_json(&self, value: &impl Serialize) -> CliResult<()> {
        let mut out = self.sink()?;
        serde_json::to_writer_pretty(&mut out, value)?;
        writeln!(out)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct LatticeSummary {
    generations: usize,
    cells: usize,
    all_hold: bool,
    checks: Vec<gmt_riesz::lattice::InvariantReport>,
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    let common = &cli.common;
    match cli.command {
        Command::Generate { kind } => {
            let mu = generate(kind, common.generator_depth()?, &GeneratorSettings::default())?;
            match &common.output {
                Some(path) => write_measure(&mu, path)?,
                None => {
                    let mut out = common.sink()?;
                    for a in 0..mu.len() {
                        let coords: Vec<String> = mu.position(a).iter().map(f64::to_string).collect();
                        writeln!(out, "{},{}", coords.join(","), mu.weight(a))?;
                    }
                }
            }
        }
        Command::Lattice => {
            let params = common.params()?;
            let mu = common.measure()?;
            let lat = common.lattice(&mu, &params)?;
            let checks = lat.check_invariants(&mu);
            let summary = LatticeSummary { generations: lat.depth(), cells: lat.len(), all_hold: checks.iter().all(|c| c.all_hold()), checks };
            match &common.output {
                Some(path) => {
                    write_lattice(&lat, path)?;
                    serde_json::to_writer_pretty(io::stdout().lock(), &summary)?;
                    println!();
                }
                None => common.emit_json(&summary)?,
            }
            if !summary.all_hold {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Coeffs { lattice } => {
            let params = common.params()?;
            let mu = common.measure()?;
            let lat = match lattice {
                Some(path) => read_lattice(&path)?,
                None => common.lattice(&mu, &params)?,
            };
            CoeffTable::compute(&lat, &mu).write_csv(&lat, common.sink()?)?;
        }
        Command::Riesz => {
            let mu = common.measure()?;
            pv_field(&mu, common.backend()?)?.write_csv(common.sink()?)?;
        }
        Command::Corona => {
            let params = common.params()?;
            let mu = common.measure()?;
            let lat = common.lattice(&mu, &params)?;
            let coeffs = CoeffTable::compute(&lat, &mu);
            let corona = Corona::new(&lat, &mu, &coeffs)?;
            common.emit_json(&corona.build_top()?.report(&lat))?;
        }
        Command::Verify { kind } => {
            let params = common.params()?;
            let options = RunOptions { backend: common.backend()?, seed: common.seed.unwrap_or(0), ..RunOptions::default() };
            let report = match (kind, &common.input) {
                (_, Some(path)) => {
                    let mu = read_measure(path, false)?;
                    let descriptor = MeasureDescriptor {
                        kind: path.display().to_string(),
                        depth: 0,
                        atoms: mu.len(),
                        n: mu.dim_growth(),
                        total_mass: mu.total_mass(),
                    };
                    run_on_measure(&mu, descriptor, &params, &options)?
                }
                (Some(kind), None) => verify_equivalence(kind, common.generator_depth()?, &params, &options)?,
                (None, None) => return Err("verify needs --kind or --input".into()),
            };
            common.emit_json(&report)?;
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Suite { config, csv } => {
            let mut suite = match config {
                Some(path) => SuiteConfig::from_file(&path)?,
                None => SuiteConfig::standard(),
            };
            if let Some(seed) = common.seed {
                suite.seed = seed;
            }
            suite.strict_paper_constants |= common.strict_paper_constants;
            let base = match &common.params {
                Some(path) => Params::from_file(path)?,
                None => Params::default(),
            };
            let report = run_suite_config(&suite, &base)?;
            if let Some(path) = csv {
                report.write_csv(File::create(Path::new(&path))?)?;
            }
            common.emit_json(&report)?;
            for entry in report.entries.iter().filter(|e| !e.passed()) {
                log::error!("{} failed: {}", entry.name, entry.failure.clone().unwrap_or_else(|| "invariant check".into()));
            }
            if !report.pass {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
