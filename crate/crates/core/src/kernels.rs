//! Regularised Landau collision kernels.
//!
//! For `z in R^3` with `r = |z|` the kernel is `A(z) = a(r) Pi(z)` where
//! `Pi = I - z z^T / r^2` and `a(r) = chi(r / eps) r^(gamma + 2)`. Its
//! divergence is `B(z) = -2 a(r) z / r^2` for any radial profile, because the
//! gradient of `a` is radial and annihilated by `Pi`.
//!
//! Two cutoff profiles are provided:
//!
//! * [`ChiProfile::SoftCore`] (default) blends the log-slope of `a` smoothly
//!   from `max(2, gamma + 2)` below `r = eps` to `gamma + 2` above `r = 2 eps`.
//!   The core is `c r^2`, so `A` is a polynomial near the origin, and
//!   `|r a'(r) / a(r)| <= max(2, |gamma + 2|) < sqrt(22)` everywhere.
//! * [`ChiProfile::Compact`] vanishes identically for `r <= eps`. A positive
//!   function that reaches zero at a finite radius cannot have a bounded
//!   log-derivative, so this profile fails the `sqrt(22)` bound near `eps`.

use serde::{Deserialize, Serialize};

use crate::error::{config, domain};
use crate::{Error, Mat3, Result, Vec3};

/// The constant in the log-derivative condition on `a`.
pub const LOG_DERIVATIVE_BOUND: f64 = 4.690_415_759_823_43;

/// Log-slope of the soft-core kernel inside `r <= eps`.
pub const CORE_POWER: f64 = 2.0;

/// Number of radii used by [`verify_log_derivative_bound`].
pub const BOUND_GRID_POINTS: usize = 4096;

/// Cutoff profile `chi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChiProfile {
    #[default]
    SoftCore,
    Compact,
}

impl std::str::FromStr for ChiProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softcore" => Ok(ChiProfile::SoftCore),
            "compact" => Ok(ChiProfile::Compact),
            other => Err(config(format!("unknown chi profile '{other}'"))),
        }
    }
}

/// Interaction potential: exponent `gamma`, cutoff radius `eps` and profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub gamma: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub chi: ChiProfile,
}

/// `a`, `beta = a / r^2` and the radial derivatives `a' / r`, `beta' / r`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Radial {
    a: f64,
    beta: f64,
    a1: f64,
    b1: f64,
}

/// Kernel values and first derivatives at one relative velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelJet {
    pub a: f64,
    pub a_mat: Mat3,
    pub b: Vec3,
    /// `db[(alpha, c)] = d B_alpha / d z_c`.
    pub db: Mat3,
    /// `da[c] = d A / d z_c`.
    pub da: [Mat3; 3],
}

/// Outcome of the sampled log-derivative check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogDerivativeReport {
    pub max_ratio: f64,
    pub at_radius: f64,
    pub within_bound: bool,
}

#[inline]
fn smootherstep(t: f64) -> f64 {
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

#[inline]
fn smootherstep_prime(t: f64) -> f64 {
    30.0 * t * t * (1.0 - t) * (1.0 - t)
}

/// `int_t^1 (1 - S(u)) du` for the quintic smootherstep `S`.
#[inline]
fn smootherstep_tail(t: f64) -> f64 {
    let t2 = t * t;
    (1.0 - t) - 0.5 + t2 * t2 * (t2 - 3.0 * t + 2.5)
}

#[inline]
fn powi_or_powf(r: f64, e: f64) -> f64 {
    match e {
        x if x == -1.0 => 1.0 / r,
        x if x == 0.0 => 1.0,
        x if x == 1.0 => r,
        x if x == 2.0 => r * r,
        x if x == 3.0 => r * r * r,
        _ => r.powf(e),
    }
}

impl PotentialSpec {
    /// Soft-core potential.
    pub fn new(gamma: f64, epsilon: f64) -> Result<Self> {
        let spec = Self {
            gamma,
            epsilon,
            chi: ChiProfile::SoftCore,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_chi(mut self, chi: ChiProfile) -> Self {
        self.chi = chi;
        self
    }

    /// The presets used by the bound check: `gamma in {-3,..,1}`, `eps in {0.25, 1}`.
    pub fn shipped_presets() -> Vec<PotentialSpec> {
        let mut out = Vec::new();
        for gamma in [-3.0, -2.0, -1.0, 0.0, 1.0] {
            for eps in [0.25, 1.0] {
                out.push(PotentialSpec {
                    gamma,
                    epsilon: eps,
                    chi: ChiProfile::SoftCore,
                });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || !(-3.0..=1.0).contains(&self.gamma) {
            return Err(config(format!("gamma = {} outside [-3, 1]", self.gamma)));
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(config(format!("epsilon = {} must be >= 0", self.epsilon)));
        }
        Ok(())
    }

    /// Simulation needs a cutoff whenever the kernel is singular.
    pub fn validate_for_simulation(&self) -> Result<()> {
        self.validate()?;
        if self.gamma < 0.0 && self.epsilon <= 0.0 {
            return Err(Error::CutoffRequired { gamma: self.gamma });
        }
        Ok(())
    }

    /// Exponent `kappa` with `chi(x) ~ x^kappa` below `x = 1` (soft core).
    fn kappa(&self) -> f64 {
        (CORE_POWER - (self.gamma + 2.0)).max(0.0)
    }

    /// `chi(x)` and `chi'(x)`.
    pub fn chi(&self, x: f64) -> (f64, f64) {
        if x >= 2.0 {
            return (1.0, 0.0);
        }
        match self.chi {
            ChiProfile::Compact => {
                if x <= 1.0 {
                    (0.0, 0.0)
                } else {
                    (smootherstep(x - 1.0), smootherstep_prime(x - 1.0))
                }
            }
            ChiProfile::SoftCore => {
                let kappa = self.kappa();
                if kappa == 0.0 {
                    return (1.0, 0.0);
                }
                let ln2 = std::f64::consts::LN_2;
                if x >= 1.0 {
                    let t = x.log2();
                    let chi = (-kappa * ln2 * smootherstep_tail(t)).exp();
                    (chi, chi * kappa * (1.0 - smootherstep(t)) / x)
                } else if x > 0.0 {
                    let chi1 = (-0.5 * kappa * ln2).exp();
                    let chi = chi1 * x.powf(kappa);
                    (chi, kappa * chi / x)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }

    fn radial(&self, r: f64) -> Result<Radial> {
        if !r.is_finite() || r < 0.0 {
            return Err(domain(format!("radius {r} must be finite and >= 0")));
        }
        let e = self.gamma + 2.0;
        let eps = self.epsilon;
        if eps == 0.0 {
            if r == 0.0 {
                return Err(domain("r = 0 with epsilon = 0 is singular"));
            }
            let a = powi_or_powf(r, e);
            let da = e * a / r;
            return Ok(Radial {
                a,
                beta: a / (r * r),
                a1: da / r,
                b1: (da - 2.0 * a / r) / (r * r * r),
            });
        }
        if r <= eps {
            match self.chi {
                ChiProfile::Compact => {
                    return Ok(Radial {
                        a: 0.0,
                        beta: 0.0,
                        a1: 0.0,
                        b1: 0.0,
                    })
                }
                ChiProfile::SoftCore if self.kappa() > 0.0 => {
                    // a = c r^2 exactly, c = chi(1) eps^(gamma + 2) / eps^2.
                    let (chi1, _) = self.chi(1.0);
                    let c = chi1 * powi_or_powf(eps, e) / (eps * eps);
                    return Ok(Radial {
                        a: c * r * r,
                        beta: c,
                        a1: 2.0 * c,
                        b1: 0.0,
                    });
                }
                ChiProfile::SoftCore => {
                    if r == 0.0 {
                        // gamma >= 0: a = r^(gamma+2) with gamma + 2 >= 2.
                        let c = if e == 2.0 { 1.0 } else { 0.0 };
                        return Ok(Radial {
                            a: 0.0,
                            beta: c,
                            a1: 2.0 * c,
                            b1: 0.0,
                        });
                    }
                }
            }
        }
        let p = powi_or_powf(r, e);
        let (chi, dchi) = self.chi(r / eps);
        let a = chi * p;
        let da = dchi * p / eps + chi * e * p / r;
        Ok(Radial {
            a,
            beta: a / (r * r),
            a1: da / r,
            b1: (da - 2.0 * a / r) / (r * r * r),
        })
    }

    /// `a^eps(r)`.
    pub fn eval_a(&self, r: f64) -> Result<f64> {
        Ok(self.radial(r)?.a)
    }

    /// `a^eps(r)` and its derivative.
    pub fn eval_a_with_derivative(&self, r: f64) -> Result<(f64, f64)> {
        let rad = self.radial(r)?;
        Ok((rad.a, rad.a1 * r))
    }

    /// `(a, beta)` with `A = a I - beta z z^T` and `B = -2 beta z`. Fast path
    /// used inside the particle step.
    #[inline]
    pub fn pair_coefficients(&self, z: &Vec3) -> Result<(f64, f64)> {
        let rad = self.radial(z.norm())?;
        Ok((rad.a, rad.beta))
    }

    /// Kernel values with first derivatives in `z`.
    pub fn jet(&self, z: &Vec3) -> Result<KernelJet> {
        let rad = self.radial(z.norm())?;
        let Radial { a, beta, a1, b1 } = rad;
        let zz = z * z.transpose();
        let a_mat = Mat3::identity() * a - zz * beta;
        let b = z * (-2.0 * beta);
        let mut db = Mat3::zeros();
        let mut da = [Mat3::zeros(); 3];
        for c in 0..3 {
            for al in 0..3 {
                db[(al, c)] = -2.0 * b1 * z[c] * z[al] - if al == c { 2.0 * beta } else { 0.0 };
                for be in 0..3 {
                    let mut v = -b1 * z[c] * z[al] * z[be];
                    if al == be {
                        v += a1 * z[c];
                    }
                    if al == c {
                        v -= beta * z[be];
                    }
                    if be == c {
                        v -= beta * z[al];
                    }
                    da[c][(al, be)] = v;
                }
            }
        }
        Ok(KernelJet { a, a_mat, b, db, da })
    }
}

/// Scalar kernel `a^eps(r)`.
pub fn eval_a(r: f64, spec: &PotentialSpec) -> Result<f64> {
    spec.eval_a(r)
}

/// Projection onto the plane orthogonal to `z`.
pub fn project_matrix(z: &Vec3) -> Result<Mat3> {
    let r2 = z.norm_squared();
    if !(r2 > 0.0) || !r2.is_finite() {
        return Err(domain("projection needs a finite nonzero vector"));
    }
    Ok(Mat3::identity() - z * z.transpose() / r2)
}

/// Matrix kernel `A(z) = a(|z|) Pi(z)`.
pub fn eval_a_mat(z: &Vec3, spec: &PotentialSpec) -> Result<Mat3> {
    let (a, beta) = spec.pair_coefficients(z)?;
    Ok(Mat3::identity() * a - z * z.transpose() * beta)
}

/// Divergence of `A`, `B(z) = -2 a z / |z|^2`.
pub fn eval_b(z: &Vec3, spec: &PotentialSpec) -> Result<Vec3> {
    let (_, beta) = spec.pair_coefficients(z)?;
    Ok(z * (-2.0 * beta))
}

/// Symmetric square root `sqrt(a) Pi(z)` of `A(z)`.
pub fn sqrt_a_mat(z: &Vec3, spec: &PotentialSpec) -> Result<Mat3> {
    let (a, _) = spec.pair_coefficients(z)?;
    if a == 0.0 {
        return Ok(Mat3::zeros());
    }
    Ok(project_matrix(z)? * a.sqrt())
}

/// Maximum of `r |a'(r)| / a(r)` over 4096 log-spaced radii in
/// `[eps / 4, 1e4]` (or `[1e-4, 1e4]` without cutoff), skipping zeros of `a`.
pub fn verify_log_derivative_bound(spec: &PotentialSpec) -> Result<LogDerivativeReport> {
    spec.validate()?;
    let lo = if spec.epsilon > 0.0 { spec.epsilon / 4.0 } else { 1e-4 };
    let (llo, lhi) = (lo.ln(), 1e4f64.ln());
    let mut best = LogDerivativeReport {
        max_ratio: 0.0,
        at_radius: lo,
        within_bound: true,
    };
    for k in 0..BOUND_GRID_POINTS {
        let r = (llo + (lhi - llo) * k as f64 / (BOUND_GRID_POINTS - 1) as f64).exp();
        let (a, da) = spec.eval_a_with_derivative(r)?;
        if a > 0.0 {
            let ratio = r * da.abs() / a;
            if ratio > best.max_ratio {
                best.max_ratio = ratio;
                best.at_radius = r;
            }
        }
    }
    best.within_bound = best.max_ratio <= LOG_DERIVATIVE_BOUND;
    Ok(best)
}
