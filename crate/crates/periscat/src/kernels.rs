//! Closed-form scalar kernels shared by the cell solver and the synthesis
//! pipeline: the branch square root behind the transparent boundary
//! condition, PML mode coefficients with their removable singularity, the
//! complex stretching profile, and certified bounds on the PML truncation
//! gap.

use num_complex::Complex64;
use thiserror::Error;

/// Below this magnitude of `beta * sigma` the PML coefficient switches to
/// its series expansion around the removable singularity at `beta = 0`.
const LAURENT_SWITCH: f64 = 1e-4;

/// Errors from kernel construction and evaluation.
#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("wave number must be positive and finite, got {0}")]
    NonPositiveWavenumber(f64),
    #[error("PML layer thickness must be positive, got {0}")]
    NonPositiveThickness(f64),
    #[error("PML strength must be nonnegative and finite, got {0}")]
    NegativeStrength(f64),
    #[error("PML profile exponent must be at least 1, got {0}")]
    ZeroExponent(u32),
    #[error("PML coefficient chi must have positive real and imaginary parts, got {0}")]
    InvalidChi(Complex64),
    #[error("coordinate x2 = {x2} lies above the absorbing layer top {top}")]
    AboveLayer { x2: f64, top: f64 },
    #[error("sigma must have positive real or imaginary part, got {0}")]
    InvalidSigma(Complex64),
    #[error("gap bound needs 0 < delta < k, got delta = {delta}, k = {k}")]
    InvalidGapWindow { delta: f64, k: f64 },
    #[error("gap bound needs Re(sigma) > 0 and Im(sigma) > 0, got {0}")]
    InvalidGapSigma(Complex64),
}

/// A wave number together with its critical-point data on the Floquet
/// interval.
///
/// `kappa` is the distance from `k` to the nearest integer; the two cutoff
/// modes satisfy `kappa + j_plus = k` and `-kappa + j_minus = -k`. The
/// wave number is *exceptional* when `2k` is an integer, which is exactly
/// when the two cutoffs coincide modulo 1 (at center 0 for integer `k`,
/// at center 1/2 for odd `2k`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wavenumber {
    k: f64,
    kappa: f64,
    critical_center: f64,
    j_plus: i64,
    j_minus: i64,
    exceptional: bool,
}

impl Wavenumber {
    pub fn new(k: f64) -> Result<Self, KernelError> {
        if !k.is_finite() || k <= 0.0 {
            return Err(KernelError::NonPositiveWavenumber(k));
        }
        let two_k = 2.0 * k;
        let exceptional = two_k == two_k.round();
        let kappa = (k - k.round()).abs();
        let critical_center = if kappa == 0.0 { 0.0 } else { 0.5 };
        let j_plus = (k - kappa).round() as i64;
        Ok(Self {
            k,
            kappa,
            critical_center,
            j_plus,
            j_minus: -j_plus,
            exceptional,
        })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Distance from `k` to the nearest integer, in `[0, 1/2]`.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Center of the quadratic substitution: 0 for integer `k`, 1/2 for
    /// odd `2k`.
    pub fn critical_center(&self) -> f64 {
        self.critical_center
    }

    pub fn j_plus(&self) -> i64 {
        self.j_plus
    }

    pub fn j_minus(&self) -> i64 {
        self.j_minus
    }

    /// True when `2k` is an integer, i.e. the two Floquet cutoffs overlap.
    pub fn is_exceptional(&self) -> bool {
        self.exceptional
    }
}

/// Parameters of the absorbing layer above the strip.
///
/// The layer occupies `[base_height, base_height + lambda]` and stretches
/// the vertical coordinate by `s(x2) = 1 + rho * chi * ((x2 - H)/lambda)^m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmlSpec {
    lambda: f64,
    rho: f64,
    exponent: u32,
    chi: Complex64,
    base_height: f64,
}

impl PmlSpec {
    pub fn new(
        lambda: f64,
        rho: f64,
        exponent: u32,
        chi: Complex64,
        base_height: f64,
    ) -> Result<Self, KernelError> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(KernelError::NonPositiveThickness(lambda));
        }
        if !rho.is_finite() || rho < 0.0 {
            return Err(KernelError::NegativeStrength(rho));
        }
        if exponent == 0 {
            return Err(KernelError::ZeroExponent(exponent));
        }
        if !(chi.re > 0.0 && chi.im > 0.0) {
            return Err(KernelError::InvalidChi(chi));
        }
        Ok(Self {
            lambda,
            rho,
            exponent,
            chi,
            base_height,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn exponent(&self) -> u32 {
        self.exponent
    }

    pub fn chi(&self) -> Complex64 {
        self.chi
    }

    /// Height of the layer base (the line carrying the transparent
    /// boundary condition).
    pub fn base_height(&self) -> f64 {
        self.base_height
    }

    /// Height of the layer top (outer Dirichlet wall of the stretched
    /// formulation).
    pub fn top_height(&self) -> f64 {
        self.base_height + self.lambda
    }

    /// Integrated stretching `sigma = lambda * (1 + rho * chi / (m + 1))`.
    pub fn sigma(&self) -> Complex64 {
        self.lambda * (Complex64::new(1.0, 0.0) + self.rho * self.chi / (self.exponent as f64 + 1.0))
    }

    /// Pointwise stretching profile `s(x2)`; equals 1 below the layer.
    pub fn stretch(&self, x2: f64) -> Result<Complex64, KernelError> {
        let top = self.top_height();
        if x2 > top {
            return Err(KernelError::AboveLayer { x2, top });
        }
        if x2 < self.base_height {
            return Ok(Complex64::new(1.0, 0.0));
        }
        let t = (x2 - self.base_height) / self.lambda;
        Ok(Complex64::new(1.0, 0.0) + self.rho * self.chi * t.powi(self.exponent as i32))
    }
}

/// Branch of `sqrt(k^2 - z^2)` used throughout: nonnegative real for
/// propagating arguments, positive imaginary for evanescent ones.
pub fn branch_sqrt(k: f64, z: f64) -> Complex64 {
    let d = k * k - z * z;
    if d >= 0.0 {
        Complex64::new(d.sqrt(), 0.0)
    } else {
        Complex64::new(0.0, (-d).sqrt())
    }
}

/// Transparent-boundary mode coefficient `beta_j = sqrt(k^2 - (alpha+j)^2)`.
///
/// The assembled boundary form multiplies this by `i`.
pub fn dtn_coeff(k: f64, alpha: f64, j: i64) -> Complex64 {
    branch_sqrt(k, alpha + j as f64)
}

/// PML-modified mode coefficient `h = beta * coth(-i * beta * sigma)`.
///
/// The singularity at `beta = 0` is removable with limit `i / sigma`; for
/// `|beta * sigma|` below a small threshold the value is computed from the
/// series expansion to avoid cancellation.
pub fn pml_coeff(k: f64, alpha: f64, j: i64, sigma: Complex64) -> Result<Complex64, KernelError> {
    if !(sigma.re > 0.0 || sigma.im > 0.0) {
        return Err(KernelError::InvalidSigma(sigma));
    }
    Ok(pml_coeff_from_beta(branch_sqrt(k, alpha + j as f64), sigma))
}

pub(crate) fn pml_coeff_from_beta(beta: Complex64, sigma: Complex64) -> Complex64 {
    if (beta * sigma).norm() < LAURENT_SWITCH {
        pml_coeff_series(beta, sigma)
    } else {
        pml_coeff_direct(beta, sigma)
    }
}

/// `beta * coth(-i beta sigma) = (i/sigma) * (1 - (bs)^2/3 - (bs)^4/45 - ...)`
fn pml_coeff_series(beta: Complex64, sigma: Complex64) -> Complex64 {
    let bs2 = (beta * sigma) * (beta * sigma);
    Complex64::i() / sigma * (Complex64::new(1.0, 0.0) - bs2 / 3.0 - bs2 * bs2 / 45.0)
}

fn pml_coeff_direct(beta: Complex64, sigma: Complex64) -> Complex64 {
    beta * coth(Complex64::new(0.0, -1.0) * beta * sigma)
}

/// Hyperbolic cotangent, guarded against overflow of `exp(2z)`.
fn coth(z: Complex64) -> Complex64 {
    if z.re > 20.0 {
        Complex64::new(1.0, 0.0) + 2.0 * (-2.0 * z).exp()
    } else if z.re < -20.0 {
        Complex64::new(-1.0, 0.0) - 2.0 * (2.0 * z).exp()
    } else {
        let e = (2.0 * z).exp();
        (e + Complex64::new(1.0, 0.0)) / (e - Complex64::new(1.0, 0.0))
    }
}

/// Certified upper bound on `|pml_coeff - branch_sqrt|`, valid for every
/// real argument at distance at least `delta` from the cutoffs `+-k`.
///
/// Returns the larger of the two explicit constants: the propagating-side
/// bound `(2 sqrt 2 / sigma_2) exp(-sqrt(k delta) sigma_2)` and the
/// evanescent-side bound `(sqrt 6 / sigma_1) exp(-sqrt(2 k delta) sigma_1)`.
pub fn pml_gap_bound(k: f64, delta: f64, sigma: Complex64) -> Result<f64, KernelError> {
    if !(delta > 0.0 && delta < k) {
        return Err(KernelError::InvalidGapWindow { delta, k });
    }
    let (s1, s2) = (sigma.re, sigma.im);
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(KernelError::InvalidGapSigma(sigma));
    }
    let propagating = 2.0 * std::f64::consts::SQRT_2 / s2 * (-(k * delta).sqrt() * s2).exp();
    let evanescent = 6.0_f64.sqrt() / s1 * (-(2.0 * k * delta).sqrt() * s1).exp();
    Ok(propagating.max(evanescent))
}

/// Both boundary coefficients for a single Fourier mode, bundled for
/// diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct ModeCoefficient {
    pub alpha: f64,
    pub mode_index: i64,
    /// Transparent-boundary value `beta_j`.
    pub beta: Complex64,
    /// PML-modified value `h(alpha, sigma, j)`.
    pub h: Complex64,
}

impl ModeCoefficient {
    pub fn new(k: f64, alpha: f64, j: i64, sigma: Complex64) -> Result<Self, KernelError> {
        Ok(Self {
            alpha,
            mode_index: j,
            beta: dtn_coeff(k, alpha, j),
            h: pml_coeff(k, alpha, j, sigma)?,
        })
    }
}
