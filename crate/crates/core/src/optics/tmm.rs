//! Characteristic-matrix solver for homogeneous layer stacks.

use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

use super::{check_ambient, kz_branch, AbsorptionResult, LayerStack, OpticsError, PlaneWave, Polarization};

/// Normalized `k_z / k0` and tilted admittance of a medium.
pub(crate) fn admittance(eps: Complex64, kx2: f64, pol: Polarization) -> (Complex64, Complex64) {
    let q = kz_branch(eps - kx2);
    let eta = match pol {
        Polarization::Tm => eps / q,
        _ => q,
    };
    (q, eta)
}

pub fn tmm_solve(stack: &LayerStack, wave: &PlaneWave) -> Result<AbsorptionResult, OpticsError> {
    stack.validate()?;
    wave.validate()?;
    match wave.polarization {
        Polarization::Unpolarized => {
            let te = solve_polarized(stack, wave.wavelength, wave.angle, Polarization::Te)?;
            let tm = solve_polarized(stack, wave.wavelength, wave.angle, Polarization::Tm)?;
            Ok(AbsorptionResult::average(&te, &tm))
        }
        pol => solve_polarized(stack, wave.wavelength, wave.angle, pol),
    }
}

fn solve_polarized(
    stack: &LayerStack,
    wavelength: f64,
    angle: f64,
    pol: Polarization,
) -> Result<AbsorptionResult, OpticsError> {
    let n0 = check_ambient(stack, wavelength)?;
    let kx = n0.re * angle.sin();
    let kx2 = kx * kx;
    let (_, eta0) = admittance(n0 * n0, kx2, pol);
    let (_, eta_s) = admittance(stack.substrate.permittivity(wavelength)?, kx2, pol);
    let k0 = 2.0 * core::f64::consts::PI / wavelength;

    // tangential (E, H) from the substrate up; boundaries[j] = (top, bottom) of layer j
    let mut field = (Complex64::new(1.0, 0.0), eta_s);
    let mut boundaries = Vec::with_capacity(stack.layers.len());
    for layer in stack.layers.iter().rev() {
        let (q, eta) = admittance(layer.material.permittivity(wavelength)?, kx2, pol);
        let delta = q * (k0 * layer.thickness);
        let (c, s) = (delta.cos(), delta.sin());
        let i = Complex64::i();
        let bottom = field;
        field = (c * bottom.0 - i * s / eta * bottom.1, -i * eta * s * bottom.0 + c * bottom.1);
        boundaries.push((field, bottom));
    }
    boundaries.reverse();

    let (u, v) = field;
    let a_inc = 0.5 * (u + v / eta0);
    let inc = eta0.re * a_inc.norm_sqr();
    let r = (eta0 * u - v) / (eta0 * u + v);
    let flux = |f: (Complex64, Complex64)| (f.0 * f.1.conj()).re / inc;
    Ok(AbsorptionResult {
        r: r.norm_sqr(),
        t: eta_s.re / inc,
        layer_absorption: boundaries.iter().map(|&(top, bottom)| flux(top) - flux(bottom)).collect(),
        a_wire: None,
        a_gap: None,
    })
}
