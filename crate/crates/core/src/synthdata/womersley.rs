//! Analytic pulsatile pipe flow.
//!
//! The axial velocity is a harmonic sum over pressure-gradient modes. The
//! n = 0 mode of the harmonic form degenerates (division by n), so the steady
//! component is evaluated as the Poiseuille solution, which is its limit and
//! satisfies the same no-slip condition.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use super::bessel::bessel_j0_complex;

/// Physical parameters of the analytic solution.
///
/// `alpha` and `angular_freq` are redundant (alpha = R sqrt(f rho / mu));
/// constructors derive one from the other and `validate` enforces agreement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WomersleyParams {
    /// Tube radius R (m).
    pub radius: f64,
    /// Fluid density rho (kg m^-3).
    pub rho: f64,
    /// Dynamic viscosity mu (Pa s).
    pub mu: f64,
    /// Womersley number (dimensionless).
    pub alpha: f64,
    /// Angular frequency f of the first harmonic (rad/s).
    pub angular_freq: f64,
    /// Pressure-gradient modes P'_n (Pa/m) as (re, im) pairs, n = 0..N.
    /// Mode 0 must be real.
    pub pressure_modes: Vec<[f64; 2]>,
    /// Reynolds number of the flow (dimensionless).
    pub reynolds: f64,
}

impl WomersleyParams {
    /// Build from a target Womersley number; the angular frequency follows
    /// from f = alpha^2 mu / (rho R^2).
    pub fn from_alpha(
        radius: f64,
        rho: f64,
        mu: f64,
        alpha: f64,
        pressure_modes: Vec<[f64; 2]>,
        reynolds: f64,
    ) -> Result<Self, DataError> {
        let angular_freq = alpha * alpha * mu / (rho * radius * radius);
        let p = WomersleyParams {
            radius,
            rho,
            mu,
            alpha,
            angular_freq,
            pressure_modes,
            reynolds,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_frequency(
        radius: f64,
        rho: f64,
        mu: f64,
        angular_freq: f64,
        pressure_modes: Vec<[f64; 2]>,
        reynolds: f64,
    ) -> Result<Self, DataError> {
        let alpha = radius * (angular_freq * rho / mu).sqrt();
        let p = WomersleyParams {
            radius,
            rho,
            mu,
            alpha,
            angular_freq,
            pressure_modes,
            reynolds,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.radius > 0.0 && self.rho > 0.0 && self.mu > 0.0) {
            return Err(DataError::Config(
                "radius, rho and mu must be positive".into(),
            ));
        }
        if self.pressure_modes.is_empty() {
            return Err(DataError::Config("at least one pressure mode".into()));
        }
        if self.pressure_modes[0][1] != 0.0 {
            return Err(DataError::Config("steady mode P'_0 must be real".into()));
        }
        if !(self.reynolds > 0.0) {
            return Err(DataError::Config("Reynolds number must be positive".into()));
        }
        let derived = self.radius * (self.angular_freq * self.rho / self.mu).sqrt();
        let rel = (derived - self.alpha).abs() / self.alpha.abs().max(1e-300);
        if rel > 1e-9 {
            return Err(DataError::Config(format!(
                "alpha {} inconsistent with angular frequency (derived {derived})",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Number of harmonics N (modes run n = 0..=N).
    pub fn harmonics(&self) -> usize {
        self.pressure_modes.len() - 1
    }

    /// Cycle period T = 2 pi / f (s).
    pub fn period(&self) -> f64 {
        std::f64::consts::TAU / self.angular_freq
    }

    /// Kinematic viscosity nu = mu / rho (m^2/s).
    pub fn nu(&self) -> f64 {
        self.mu / self.rho
    }

    /// Centerline velocity of the steady (Poiseuille) component.
    pub fn poiseuille_peak(&self) -> f64 {
        self.pressure_modes[0][0] * self.radius * self.radius / (4.0 * self.mu)
    }

    /// Scale all pressure modes by `s` (velocity scales linearly with them).
    pub fn scale_modes(&mut self, s: f64) {
        for m in &mut self.pressure_modes {
            m[0] *= s;
            m[1] *= s;
        }
    }
}

/// Axial velocity u(y, t) in m/s at radial fraction y = r/R in [-1, 1].
///
/// Outside the tube (|y| > 1) the velocity is zero. The steady mode is the
/// Poiseuille profile; harmonics follow the Bessel-quotient form with the
/// complex argument alpha * y * sqrt(n) * i^(3/2).
pub fn womersley_velocity(p: &WomersleyParams, y: f64, t: f64) -> f64 {
    if y.abs() > 1.0 {
        return 0.0;
    }
    let mut u = p.pressure_modes[0][0] * p.radius * p.radius * (1.0 - y * y) / (4.0 * p.mu);
    if p.pressure_modes.len() == 1 {
        return u;
    }
    // i^(3/2) on the principal branch
    let i32 = Complex64::from_polar(1.0, 3.0 * std::f64::consts::FRAC_PI_4);
    for (n, mode) in p.pressure_modes.iter().enumerate().skip(1) {
        let nf = n as f64;
        let pn = Complex64::new(mode[0], mode[1]);
        let sqrt_n = nf.sqrt();
        let wall = bessel_j0_complex(p.alpha * sqrt_n * i32)
            .expect("wall Bessel argument within range");
        let here = bessel_j0_complex(p.alpha * y * sqrt_n * i32)
            .expect("interior Bessel argument within range");
        let bracket = Complex64::new(1.0, 0.0) - here / wall;
        let phase = Complex64::from_polar(1.0, nf * p.angular_freq * t);
        let term = Complex64::i() * pn / (p.rho * nf * p.angular_freq) * bracket * phase;
        u += term.re;
    }
    u
}
