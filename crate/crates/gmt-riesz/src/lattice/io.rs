//! JSON cache format: parameters plus generations of cells.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cube, Lattice, LatticeError, Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeDoc {
    pub params: Params,
    pub dim_growth: usize,
    pub atom_count: usize,
    pub generations: Vec<Vec<Cube>>,
}

impl LatticeDoc {
    pub fn from_lattice(lattice: &Lattice) -> Self {
        LatticeDoc {
            params: lattice.params.clone(),
            dim_growth: lattice.dim_growth,
            atom_count: lattice.atom_count,
            generations: lattice.generations.iter().map(|r| lattice.cubes[r.clone()].to_vec()).collect(),
        }
    }

    pub fn into_lattice(self) -> Result<Lattice, LatticeError> {
        let mut cubes = Vec::new();
        let mut ranges = Vec::new();
        for gen in self.generations {
            let start = cubes.len();
            cubes.extend(gen);
            ranges.push(start..cubes.len());
        }
        for (id, cube) in cubes.iter().enumerate() {
            if cube.children.iter().any(|c| c.0 >= cubes.len() || cubes[c.0].parent.map(|p| p.0) != Some(id)) {
                return Err(LatticeError::Corrupt(format!("broken child links at cube {id}")));
            }
        }
        Lattice::from_parts(self.params, self.dim_growth, self.atom_count, cubes, ranges)
    }
}

pub fn write_lattice(lattice: &Lattice, path: &Path) -> Result<(), LatticeError> {
    serde_json::to_writer(BufWriter::new(File::create(path)?), &LatticeDoc::from_lattice(lattice))?;
    Ok(())
}

pub fn read_lattice(path: &Path) -> Result<Lattice, LatticeError> {
    let doc: LatticeDoc = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    doc.into_lattice()
}
