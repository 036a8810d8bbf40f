//! Named constants shared by every construction, with desk-scale defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("unknown parameter `{0}`")]
    UnknownKey(String),
    #[error("parameter `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error("line {0}: expected key=value")]
    BadLine(usize),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub c0: f64,
    pub a0: f64,
    pub gamma: f64,
    /// Overrides the default `4 * a0^n` for the 𝒫-doubling constant.
    pub cd_override: Option<f64>,
    pub k_lambda: u32,
    pub n_big: u32,
    pub n0: u32,
    pub m0: f64,
    /// Threshold multiplier for the big-Riesz family.
    pub k_br: f64,
    pub ell0: f64,
    pub eps_n: f64,
    pub eps_z: f64,
    /// Radial exponent of the Wolff energy.
    pub alpha: f64,
    pub b_override: Option<f64>,
    /// Half-width of the thin-boundary annulus, relative to the cell radius.
    pub thin_boundary: f64,
    pub radius_candidates: usize,
    pub max_gen: usize,
    pub quadrature_points: usize,
    pub strict_paper_constants: bool,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            c0: 2.0,
            a0: 4.0,
            gamma: 0.9,
            cd_override: None,
            k_lambda: 2,
            n_big: 2,
            n0: 1,
            m0: 16.0,
            k_br: 8.0,
            ell0: 1e-3,
            eps_n: 1.0 / 15.0,
            eps_z: 1e-2,
            alpha: 0.75,
            b_override: None,
            thin_boundary: 0.05,
            radius_candidates: 64,
            max_gen: 8,
            quadrature_points: 64,
            strict_paper_constants: false,
        }
    }
}

impl Params {
    pub fn with_a0(a0: f64) -> Self {
        Params { a0, ..Params::default() }
    }

    /// Scale A0^{-k} of generation `k`.
    pub fn scale(&self, generation: usize) -> f64 {
        self.a0.powi(-(generation as i32))
    }

    /// Side length ℓ = 56 C0 A0^{-k}.
    pub fn side(&self, generation: usize) -> f64 {
        56.0 * self.c0 * self.scale(generation)
    }

    pub fn cd(&self, n: usize) -> f64 {
        self.cd_override.unwrap_or(4.0 * self.a0.powi(n as i32))
    }

    pub fn lambda(&self, n: usize) -> f64 {
        self.a0.powf((self.k_lambda as usize * n) as f64)
    }

    pub fn lambda_star(&self, n: usize) -> f64 {
        self.lambda(n).powf(1.0 - 1.0 / self.n_big as f64)
    }

    /// k_{Λ*} = kΛ (1 − 1/N), the exponent with Λ* = A0^{k_{Λ*} n}.
    pub fn k_lambda_star(&self) -> u32 {
        self.k_lambda - self.k_lambda / self.n_big
    }

    pub fn delta0(&self, n: usize) -> f64 {
        self.lambda(n).powf(-(self.n0 as f64) - 1.0 / (2.0 * self.n_big as f64))
    }

    pub fn b_const(&self, n: usize) -> f64 {
        self.b_override.unwrap_or_else(|| self.lambda_star(n).powf(1.0 / (100.0 * n as f64)))
    }

    /// Checks structural constraints; the strict flag adds the large-constant regime.
    /// Comparisons are negated so that NaN fails them.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ParamsError> {
        let fail = |msg: String| Err(ParamsError::Constraint(msg));
        if !(self.c0 > 1.0) {
            return fail(format!("c0 = {} must exceed 1", self.c0));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma = {} must lie in (0,1)", self.gamma));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail(format!("alpha = {} must lie in (0,1]", self.alpha));
        }
        if !(self.m0 > 1.0) || !(self.ell0 > 0.0) || self.n_big == 0 {
            return fail("m0 > 1, ell0 > 0 and N ≥ 1 are required".into());
        }
        if self.radius_candidates == 0 || self.quadrature_points == 0 {
            return fail("grid sizes must be positive".into());
        }
        if self.strict_paper_constants {
            if !(self.a0 > 5000.0 * self.c0) {
                return fail(format!("strict mode needs a0 > 5000 c0, got a0 = {}", self.a0));
            }
            if self.k_lambda <= 10 || !self.k_lambda.is_multiple_of(2 * self.n_big) {
                return fail(format!("strict mode needs kΛ > 10 divisible by 2N, got {}", self.k_lambda));
            }
        } else if self.a0 < 4.0 {
            return fail(format!("a0 = {} must be at least 4", self.a0));
        }
        Ok(())
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ParamsError> {
        for (number, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ParamsError::BadLine(number + 1))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ParamsError> {
        let mut params = Params::default();
        params.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(params)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ParamsError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ParamsError> {
            value.parse().map_err(|_| ParamsError::BadValue { key: key.into(), value: value.into() })
        }
        match key {
            "c0" | "C0" => self.c0 = parse(key, value)?,
            "a0" | "A0" => self.a0 = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "cd" | "Cd" => self.cd_override = Some(parse(key, value)?),
            "k_lambda" | "kLambda" => self.k_lambda = parse(key, value)?,
            "N" | "n_big" => self.n_big = parse(key, value)?,
            "N0" | "n0" => self.n0 = parse(key, value)?,
            "m0" | "M0" => self.m0 = parse(key, value)?,
            "K" | "k_br" => self.k_br = parse(key, value)?,
            "ell0" => self.ell0 = parse(key, value)?,
            "eps_n" | "epsN" => self.eps_n = parse(key, value)?,
            "eps_z" | "epsZ" => self.eps_z = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "B" | "b" | "Bconst" => self.b_override = Some(parse(key, value)?),
            "thin_boundary" | "tau" => self.thin_boundary = parse(key, value)?,
            "radius_candidates" => self.radius_candidates = parse(key, value)?,
            "max_gen" => self.max_gen = parse(key, value)?,
            "quadrature_points" => self.quadrature_points = parse(key, value)?,
            "strict_paper_constants" => self.strict_paper_constants = parse(key, value)?,
            _ => return Err(ParamsError::UnknownKey(key.into())),
        }
        Ok(())
    }
}
