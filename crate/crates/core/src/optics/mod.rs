//! Plane-wave absorption in thin-film stacks and nanowire gratings.
//!
//! Conventions: time dependence `e^{-iωt}`, refractive index `n + ik` with
//! `k ≥ 0` for passive media, `z` pointing down into the stack. The ambient
//! medium must be lossless. TE means the electric field is parallel to the
//! grating lines (the `y` axis); TM has the magnetic field along them.

mod rcwa;
mod scan;
mod tmm;

use alloc::vec::Vec;

use num_complex::Complex64;

pub use rcwa::{rcwa_solve, DEFAULT_HARMONICS};
pub use scan::{optimize_spacer, rejection_ratio, wavelength_scan, AbsorberTarget, Rejection, SpacerScan};
pub use tmm::tmm_solve;

use crate::linalg::LinalgError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OpticsError {
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("wavelength {wavelength} m is outside the tabulated range [{min}, {max}] m")]
    OutOfTable { wavelength: f64, min: f64, max: f64 },
    #[error("harmonics must be an odd number >= 1 (got {0})")]
    EvenHarmonics(usize),
    #[error("layer index {index} out of range for a stack of {layers} layers")]
    LayerIndex { index: usize, layers: usize },
    #[error("modal solve failed in layer {layer} with {harmonics} harmonics: {source}")]
    Solver { layer: usize, harmonics: usize, source: LinalgError },
}

/// Complex refractive index, constant or tabulated against vacuum wavelength.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum OpticalMaterial {
    Constant { n: f64, k: f64 },
    /// `(wavelength m, n, k)` rows sorted by wavelength; linear interpolation.
    Table(Vec<(f64, f64, f64)>),
}

impl OpticalMaterial {
    pub const fn constant(n: f64, k: f64) -> Self {
        Self::Constant { n, k }
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        match self {
            Self::Constant { n, k } => {
                if !n.is_finite() || !k.is_finite() || *n <= 0.0 && *k == 0.0 {
                    return Err(OpticsError::InvalidInput("refractive index must be finite and nonzero"));
                }
                if *k < 0.0 {
                    return Err(OpticsError::InvalidInput("extinction coefficient must be >= 0"));
                }
            }
            Self::Table(rows) => {
                if rows.is_empty() {
                    return Err(OpticsError::InvalidInput("empty optical-constant table"));
                }
                if rows.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(OpticsError::InvalidInput("table wavelengths must increase strictly"));
                }
                if rows.iter().any(|r| !(r.0 > 0.0) || !r.1.is_finite() || !(r.2 >= 0.0)) {
                    return Err(OpticsError::InvalidInput("table rows need wavelength > 0, finite n and k >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Complex index `n + ik` at a vacuum wavelength.
    pub fn index_at(&self, wavelength: f64) -> Result<Complex64, OpticsError> {
        match self {
            Self::Constant { n, k } => Ok(Complex64::new(*n, *k)),
            Self::Table(rows) => {
                let (first, last) = (rows[0], rows[rows.len() - 1]);
                if wavelength < first.0 || wavelength > last.0 {
                    return Err(OpticsError::OutOfTable { wavelength, min: first.0, max: last.0 });
                }
                if rows.len() == 1 {
                    return Ok(Complex64::new(first.1, first.2));
                }
                let i = rows.partition_point(|r| r.0 <= wavelength).clamp(1, rows.len() - 1);
                let (a, b) = (rows[i - 1], rows[i]);
                let t = (wavelength - a.0) / (b.0 - a.0);
                Ok(Complex64::new(a.1 + t * (b.1 - a.1), a.2 + t * (b.2 - a.2)))
            }
        }
    }

    pub(crate) fn permittivity(&self, wavelength: f64) -> Result<Complex64, OpticsError> {
        let n = self.index_at(wavelength)?;
        Ok(n * n)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Layer {
    pub material: OpticalMaterial,
    pub thickness: f64,
}

/// Ambient above, finite layers top to bottom, semi-infinite substrate below.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerStack {
    pub ambient: OpticalMaterial,
    pub layers: Vec<Layer>,
    pub substrate: OpticalMaterial,
}

impl LayerStack {
    pub fn validate(&self) -> Result<(), OpticsError> {
        self.ambient.validate()?;
        self.substrate.validate()?;
        for layer in &self.layers {
            layer.material.validate()?;
            if !(layer.thickness > 0.0) || !layer.thickness.is_finite() {
                return Err(OpticsError::InvalidInput("layer thickness must be positive"));
            }
        }
        Ok(())
    }

    pub fn with_thickness(&self, index: usize, thickness: f64) -> Result<Self, OpticsError> {
        if index >= self.layers.len() {
            return Err(OpticsError::LayerIndex { index, layers: self.layers.len() });
        }
        let mut out = self.clone();
        out.layers[index].thickness = thickness;
        Ok(out)
    }
}

/// Lamellar grating occupying one layer of a stack. Wires of width
/// `fill_factor * period` are centered on `x = 0`; the host layer keeps its
/// thickness and its material is replaced by the wire/gap pattern.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grating1D {
    pub period: f64,
    pub fill_factor: f64,
    pub wire: OpticalMaterial,
    pub gap: OpticalMaterial,
    pub layer: usize,
}

impl Grating1D {
    pub fn validate(&self, stack: &LayerStack) -> Result<(), OpticsError> {
        if !(self.period > 0.0) || !self.period.is_finite() {
            return Err(OpticsError::InvalidInput("grating period must be positive"));
        }
        if !(0.0..=1.0).contains(&self.fill_factor) {
            return Err(OpticsError::InvalidInput("fill factor must lie in [0, 1]"));
        }
        if self.layer >= stack.layers.len() {
            return Err(OpticsError::LayerIndex { index: self.layer, layers: stack.layers.len() });
        }
        self.wire.validate()?;
        self.gap.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Polarization {
    Te,
    Tm,
    /// Incoherent average of TE and TM.
    Unpolarized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlaneWave {
    pub wavelength: f64,
    /// Angle of incidence in the ambient, radians.
    pub angle: f64,
    pub polarization: Polarization,
}

impl PlaneWave {
    pub fn normal(wavelength: f64, polarization: Polarization) -> Self {
        Self { wavelength, angle: 0.0, polarization }
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        if !(self.wavelength > 0.0) || !self.wavelength.is_finite() {
            return Err(OpticsError::InvalidInput("wavelength must be positive"));
        }
        if !(self.angle >= 0.0 && self.angle < core::f64::consts::FRAC_PI_2) {
            return Err(OpticsError::InvalidInput("angle of incidence must lie in [0, pi/2)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AbsorptionResult {
    pub r: f64,
    pub t: f64,
    /// Absorption in each stack layer, top to bottom.
    pub layer_absorption: Vec<f64>,
    /// Absorption inside the grating wires (grating runs only).
    pub a_wire: Option<f64>,
    /// Absorption in the grating gaps (grating runs only).
    pub a_gap: Option<f64>,
}

impl AbsorptionResult {
    pub fn total_absorption(&self) -> f64 {
        self.layer_absorption.iter().sum()
    }

    /// `R + T + ΣA - 1`.
    pub fn energy_residual(&self) -> f64 {
        self.r + self.t + self.total_absorption() - 1.0
    }

    fn average(a: &Self, b: &Self) -> Self {
        let mean = |x: f64, y: f64| 0.5 * (x + y);
        Self {
            r: mean(a.r, b.r),
            t: mean(a.t, b.t),
            layer_absorption: a.layer_absorption.iter().zip(&b.layer_absorption).map(|(x, y)| mean(*x, *y)).collect(),
            a_wire: a.a_wire.zip(b.a_wire).map(|(x, y)| mean(x, y)),
            a_gap: a.a_gap.zip(b.a_gap).map(|(x, y)| mean(x, y)),
        }
    }
}

/// Normal wavevector component (units of `k0`) with `Im ≥ 0` for decaying
/// waves and `Re > 0` for propagating ones.
pub(crate) fn kz_branch(q2: Complex64) -> Complex64 {
    let q = q2.sqrt();
    if q.re + q.im < 0.0 {
        -q
    } else {
        q
    }
}

fn check_ambient(stack: &LayerStack, wavelength: f64) -> Result<Complex64, OpticsError> {
    let n0 = stack.ambient.index_at(wavelength)?;
    if n0.im != 0.0 || !(n0.re > 0.0) {
        return Err(OpticsError::InvalidInput("ambient medium must be lossless with n > 0"));
    }
    Ok(n0)
}
