//! Computational toolkit for dyadic lattices, β coefficients, Wolff energies,
//! Riesz transforms and corona decompositions of discrete measures.

pub mod approx;
pub mod coeffs;
pub mod corona;
pub mod harness;
pub mod lattice;
pub mod measure;
pub mod riesz;
pub mod stats;
