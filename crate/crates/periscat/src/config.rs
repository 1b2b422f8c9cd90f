//! Study configuration: a strict TOML document mapping one-to-one onto
//! the sweep parameters. Unknown keys are rejected; angles are radians
//! and lengths use the cell period 2 pi.

use num_complex::Complex64;
use serde::Deserialize;
use thiserror::Error;

use crate::kernels::{KernelError, PmlSpec, Wavenumber};
use crate::mesh::{MeshError, SourceTerm, Support, SurfaceProfile};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("k = {0} is not covered by the substituted grid; 2k must be an integer")]
    NonExceptionalWavenumber(f64),
    #[error("sweep needs at least two distinct rho values")]
    TooFewRho,
    #[error("rho values must be nonnegative, got {0}")]
    NegativeRho(f64),
    #[error("rho_reference = {reference} must exceed the largest swept rho ({max})")]
    ReferenceNotStrongest { reference: f64, max: f64 },
    #[error(
        "evaluation height {height} must lie strictly above the surface maximum \
         {zeta_max} and not above the strip line {strip}"
    )]
    EvalHeightOutOfRange {
        height: f64,
        zeta_max: f64,
        strip: f64,
    },
    #[error("evaluation interval [{lo}, {hi}] is empty")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("evaluation needs at least 2 trace samples, got {0}")]
    TooFewSamples(usize),
    #[error("quadrature order must be at least 1")]
    ZeroQuadrature,
    #[error("truncation J = {j} too small for k = {k}; need J >= ceil(k) + 1")]
    TruncationTooSmall { j: usize, k: f64 },
    #[error(transparent)]
    Surface(#[from] MeshError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Which trace norm divides the error: the tested solution (default) or
/// the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    #[default]
    Tested,
    Reference,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    /// Mean height of the surface.
    pub mean: f64,
    /// Amplitudes of sin(m x1), m = 1, 2, ...
    #[serde(default)]
    pub sin: Vec<f64>,
    /// Amplitudes of cos(m x1), m = 1, 2, ...
    #[serde(default)]
    pub cos: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmlSection {
    /// Layer thickness.
    pub lambda: f64,
    /// Profile exponent m.
    pub exponent: u32,
    /// Complex coefficient chi, as modulus and phase (radians).
    pub chi_modulus: f64,
    pub chi_phase: f64,
    /// Strengths to sweep.
    pub rho: Vec<f64>,
    /// Strength of the reference solve.
    pub rho_reference: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Height of the trace line.
    pub height: f64,
    /// Trace interval in x1.
    pub interval: [f64; 2],
    /// Uniform trace samples (trapezoid norm).
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub denominator: Denominator,
}

fn default_samples() -> usize {
    512
}

fn default_amplitude() -> f64 {
    1.0
}

/// Source descriptor: a modulated profile
/// `amplitude * cos(freq_x1 * x1) * sin(freq_x2 * x2)` on a disk or box;
/// a zero frequency drops the corresponding factor.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Disk {
        center: [f64; 2],
        radius: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default)]
        freq_x1: f64,
        #[serde(default)]
        freq_x2: f64,
    },
    Rect {
        x1: [f64; 2],
        x2: [f64; 2],
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default)]
        freq_x1: f64,
        #[serde(default)]
        freq_x2: f64,
    },
}

impl SourceSpec {
    pub fn source_term(&self) -> SourceTerm {
        let (support, amplitude, f1, f2) = match *self {
            SourceSpec::Disk {
                center,
                radius,
                amplitude,
                freq_x1,
                freq_x2,
            } => (
                Support::Disk {
                    center: (center[0], center[1]),
                    radius,
                },
                amplitude,
                freq_x1,
                freq_x2,
            ),
            SourceSpec::Rect {
                x1,
                x2,
                amplitude,
                freq_x1,
                freq_x2,
            } => (
                Support::Rect {
                    x1: (x1[0], x1[1]),
                    x2: (x2[0], x2[1]),
                },
                amplitude,
                freq_x1,
                freq_x2,
            ),
        };
        SourceTerm::new(support, move |x1, x2| {
            let horizontal = if f1 == 0.0 { 1.0 } else { (f1 * x1).cos() };
            let vertical = if f2 == 0.0 { 1.0 } else { (f2 * x2).sin() };
            Complex64::new(amplitude * horizontal * vertical, 0.0)
        })
    }
}

/// Full description of one convergence study.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub k: f64,
    pub mesh_h: f64,
    /// Gauss order per substituted half interval.
    pub n_quadrature: usize,
    /// Boundary Fourier truncation; defaults to ceil(k) + 10.
    #[serde(default)]
    pub truncation_j: Option<usize>,
    /// Height of the strip line carrying the boundary condition.
    pub strip_height: f64,
    pub surface: SurfaceSpec,
    pub pml: PmlSection,
    pub evaluation: EvalSection,
    pub source: SourceSpec,
}

impl StudyConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn wavenumber(&self) -> Result<Wavenumber, ConfigError> {
        let wn = Wavenumber::new(self.k)?;
        if !wn.is_exceptional() {
            return Err(ConfigError::NonExceptionalWavenumber(self.k));
        }
        Ok(wn)
    }

    pub fn surface_profile(&self) -> Result<SurfaceProfile, ConfigError> {
        Ok(SurfaceProfile::trig(
            self.surface.mean,
            &self.surface.sin,
            &self.surface.cos,
            self.strip_height,
        )?)
    }

    pub fn source_term(&self) -> SourceTerm {
        self.source.source_term()
    }

    pub fn chi(&self) -> Complex64 {
        Complex64::from_polar(self.pml.chi_modulus, self.pml.chi_phase)
    }

    pub fn pml_spec(&self, rho: f64) -> Result<PmlSpec, ConfigError> {
        Ok(PmlSpec::new(
            self.pml.lambda,
            rho,
            self.pml.exponent,
            self.chi(),
            self.strip_height,
        )?)
    }

    pub fn truncation(&self) -> usize {
        self.truncation_j
            .unwrap_or_else(|| self.k.ceil() as usize + 10)
    }

    /// Uniform trace abscissas over the evaluation interval, both
    /// endpoints included.
    pub fn eval_points(&self) -> Vec<f64> {
        let [lo, hi] = self.evaluation.interval;
        let n = self.evaluation.samples;
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    /// Check every cross-field constraint that does not need a mesh.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.wavenumber()?;
        if self.n_quadrature == 0 {
            return Err(ConfigError::ZeroQuadrature);
        }
        let floor = self.k.ceil() as usize + 1;
        if self.truncation() < floor {
            return Err(ConfigError::TruncationTooSmall {
                j: self.truncation(),
                k: self.k,
            });
        }
        let mut distinct = self.pml.rho.clone();
        for &r in &distinct {
            if r < 0.0 {
                return Err(ConfigError::NegativeRho(r));
            }
        }
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(ConfigError::TooFewRho);
        }
        let max = *distinct.last().unwrap();
        if self.pml.rho_reference <= max {
            return Err(ConfigError::ReferenceNotStrongest {
                reference: self.pml.rho_reference,
                max,
            });
        }
        // builds chi and the strongest layer, catching bad chi early
        self.pml_spec(self.pml.rho_reference)?;
        let surface = self.surface_profile()?;
        let height = self.evaluation.height;
        if height <= surface.zeta_max() || height > self.strip_height {
            return Err(ConfigError::EvalHeightOutOfRange {
                height,
                zeta_max: surface.zeta_max(),
                strip: self.strip_height,
            });
        }
        let [lo, hi] = self.evaluation.interval;
        if !(hi > lo) {
            return Err(ConfigError::EmptyInterval { lo, hi });
        }
        if self.evaluation.samples < 2 {
            return Err(ConfigError::TooFewSamples(self.evaluation.samples));
        }
        Ok(())
    }
}
