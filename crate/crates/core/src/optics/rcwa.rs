//! Fourier modal method for a stack containing one lamellar grating layer.
//!
//! Every medium is expanded in `harmonics` plane-wave orders. Homogeneous
//! media are diagonal in that basis; the grating layer is diagonalized
//! numerically (direct Laurent rule for TE, inverse rule for TM). Layers are
//! joined with scattering matrices and Redheffer star products.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

use super::tmm::admittance;
use super::{check_ambient, kz_branch, AbsorptionResult, Grating1D, LayerStack, OpticsError, PlaneWave, Polarization};
use crate::linalg::{eig, inverse, solve, CMatrix, CVector, LinalgError};

pub const DEFAULT_HARMONICS: usize = 51;

/// Absorption of a stack whose layer `grating.layer` is patterned into wires.
///
/// `harmonics` is the number of diffraction orders kept (odd, centered on
/// the specular order).
pub fn rcwa_solve(
    stack: &LayerStack,
    grating: &Grating1D,
    wave: &PlaneWave,
    harmonics: usize,
) -> Result<AbsorptionResult, OpticsError> {
    solve_with(stack, grating, wave, harmonics, false)
}

pub(crate) fn solve_with(
    stack: &LayerStack,
    grating: &Grating1D,
    wave: &PlaneWave,
    harmonics: usize,
    force_modal: bool,
) -> Result<AbsorptionResult, OpticsError> {
    stack.validate()?;
    wave.validate()?;
    grating.validate(stack)?;
    if harmonics == 0 || harmonics % 2 == 0 {
        return Err(OpticsError::EvenHarmonics(harmonics));
    }
    let run = |pol| Solver::new(stack, grating, wave.wavelength, wave.angle, pol, harmonics, force_modal)?.run();
    match wave.polarization {
        Polarization::Unpolarized => Ok(AbsorptionResult::average(&run(Polarization::Te)?, &run(Polarization::Tm)?)),
        pol => run(pol),
    }
}

/// Fourier coefficient `h` of a unit-height wire of fractional width `f`
/// centered in the period.
fn wire_coefficient(h: i64, f: f64) -> f64 {
    if h == 0 {
        return f;
    }
    let x = h as f64 * f;
    if x == x.round() {
        0.0
    } else {
        (PI * x).sin() / (PI * h as f64)
    }
}

fn toeplitz(n: usize, fill: f64, inside: Complex64, outside: Complex64) -> CMatrix {
    CMatrix::from_fn(n, n, |m, k| {
        let h = k as i64 - m as i64;
        let base = if h == 0 { outside } else { Complex64::new(0.0, 0.0) };
        base + (inside - outside) * wire_coefficient(h, fill)
    })
}

struct Modes {
    /// Columns: tangential primary field (E_y for TE, H_y for TM) per mode.
    w: CMatrix,
    /// Matching tangential secondary field.
    v: CMatrix,
    /// Normalized propagation constants.
    q: Vec<Complex64>,
    /// Per-order flux weights, homogeneous media only.
    eta: Option<Vec<Complex64>>,
    /// TM only: Fourier coefficients of `E_z` per mode, `[[ε]]⁻¹ Kx W`.
    ez: Option<CMatrix>,
}

struct SMatrix {
    s11: CMatrix,
    s12: CMatrix,
    s21: CMatrix,
    s22: CMatrix,
}

impl SMatrix {
    fn propagation(x: &CMatrix) -> Self {
        let n = x.nrows();
        Self { s11: CMatrix::zeros(n, n), s12: x.clone(), s21: x.clone(), s22: CMatrix::zeros(n, n) }
    }

    fn interface(upper: &Modes, lower: &Modes) -> Result<Self, LinalgError> {
        let n = upper.w.nrows();
        let mut lhs = CMatrix::zeros(2 * n, 2 * n);
        let mut rhs = CMatrix::zeros(2 * n, 2 * n);
        lhs.view_mut((0, 0), (n, n)).copy_from(&upper.w);
        lhs.view_mut((0, n), (n, n)).copy_from(&(-&lower.w));
        lhs.view_mut((n, 0), (n, n)).copy_from(&(-&upper.v));
        lhs.view_mut((n, n), (n, n)).copy_from(&(-&lower.v));
        rhs.view_mut((0, 0), (n, n)).copy_from(&(-&upper.w));
        rhs.view_mut((0, n), (n, n)).copy_from(&lower.w);
        rhs.view_mut((n, 0), (n, n)).copy_from(&(-&upper.v));
        rhs.view_mut((n, n), (n, n)).copy_from(&(-&lower.v));
        let s = solve(lhs, &rhs)?;
        Ok(Self {
            s11: s.view((0, 0), (n, n)).into_owned(),
            s12: s.view((0, n), (n, n)).into_owned(),
            s21: s.view((n, 0), (n, n)).into_owned(),
            s22: s.view((n, n), (n, n)).into_owned(),
        })
    }

    /// Redheffer product: `self` on top of `below`.
    fn star(&self, below: &Self) -> Result<Self, LinalgError> {
        let n = self.s11.nrows();
        let id = CMatrix::identity(n, n);
        let down = &id - &below.s11 * &self.s22;
        let up = &id - &self.s22 * &below.s11;
        let a = solve(down.clone(), &(&below.s11 * &self.s21))?;
        let b = solve(down, &below.s12)?;
        let c = solve(up.clone(), &self.s21)?;
        let d = solve(up, &(&self.s22 * &below.s12))?;
        Ok(Self {
            s11: &self.s11 + &self.s12 * a,
            s12: &self.s12 * b,
            s21: &below.s21 * c,
            s22: &below.s22 + &below.s21 * d,
        })
    }
}

struct Solver {
    pol: Polarization,
    harmonics: usize,
    k0: f64,
    kx: Vec<f64>,
    /// ambient, layers, substrate
    modes: Vec<Modes>,
    thickness: Vec<f64>,
    grating_medium: usize,
    fill: f64,
    eps_wire: Complex64,
    eps_gap: Complex64,
}

impl Solver {
    fn new(
        stack: &LayerStack,
        grating: &Grating1D,
        wavelength: f64,
        angle: f64,
        pol: Polarization,
        harmonics: usize,
        force_modal: bool,
    ) -> Result<Self, OpticsError> {
        let n0 = check_ambient(stack, wavelength)?;
        let half = (harmonics / 2) as i64;
        let kx: Vec<f64> = (-half..=half).map(|m| n0.re * angle.sin() - m as f64 * wavelength / grating.period).collect();
        let eps_wire = grating.wire.permittivity(wavelength)?;
        let eps_gap = grating.gap.permittivity(wavelength)?;
        let grating_medium = grating.layer + 1;

        let mut modes = Vec::with_capacity(stack.layers.len() + 2);
        modes.push(homogeneous(n0 * n0, &kx, pol));
        for (i, layer) in stack.layers.iter().enumerate() {
            if i == grating.layer {
                let uniform = grating.fill_factor == 0.0 || grating.fill_factor == 1.0 || eps_wire == eps_gap;
                if uniform && !force_modal {
                    let eps = if grating.fill_factor == 0.0 { eps_gap } else { eps_wire };
                    modes.push(homogeneous(eps, &kx, pol));
                } else {
                    let m = patterned(&kx, grating.fill_factor, eps_wire, eps_gap, pol)
                        .map_err(|source| OpticsError::Solver { layer: i, harmonics, source })?;
                    modes.push(m);
                }
            } else {
                modes.push(homogeneous(layer.material.permittivity(wavelength)?, &kx, pol));
            }
        }
        modes.push(homogeneous(stack.substrate.permittivity(wavelength)?, &kx, pol));
        let mut thickness = alloc::vec![0.0];
        thickness.extend(stack.layers.iter().map(|l| l.thickness));
        thickness.push(0.0);
        Ok(Self {
            pol,
            harmonics,
            k0: 2.0 * PI / wavelength,
            kx,
            modes,
            thickness,
            grating_medium,
            fill: grating.fill_factor,
            eps_wire,
            eps_gap,
        })
    }

    fn phase(&self, medium: usize) -> CMatrix {
        let d = self.k0 * self.thickness[medium];
        let diag: Vec<Complex64> = self.modes[medium].q.iter().map(|q| (Complex64::i() * q * d).exp()).collect();
        CMatrix::from_diagonal(&CVector::from_vec(diag))
    }

    fn err(&self, medium: usize) -> impl Fn(LinalgError) -> OpticsError + '_ {
        move |source| OpticsError::Solver { layer: medium.saturating_sub(1), harmonics: self.harmonics, source }
    }

    fn run(&self) -> Result<AbsorptionResult, OpticsError> {
        let n = self.kx.len();
        let media = self.modes.len();
        let layers = media - 2;
        let interfaces: Vec<SMatrix> = (0..media - 1)
            .map(|i| SMatrix::interface(&self.modes[i], &self.modes[i + 1]).map_err(self.err(i + 1)))
            .collect::<Result<_, _>>()?;
        let phases: Vec<CMatrix> = (0..media).map(|m| self.phase(m)).collect();

        // above[j]: ambient down to the top of medium j + 1
        let mut above: Vec<SMatrix> = Vec::with_capacity(layers + 1);
        for (i, s) in interfaces.iter().enumerate() {
            let next = match above.last() {
                None => SMatrix { s11: s.s11.clone(), s12: s.s12.clone(), s21: s.s21.clone(), s22: s.s22.clone() },
                Some(prev) => prev
                    .star(&SMatrix::propagation(&phases[i]))
                    .and_then(|p| p.star(s))
                    .map_err(self.err(i))?,
            };
            above.push(next);
        }
        // below[j]: bottom of medium j down to the substrate
        let mut below: Vec<Option<SMatrix>> = (0..=layers).map(|_| None).collect();
        for i in (0..interfaces.len()).rev() {
            let s = &interfaces[i];
            let next = match below.get(i + 1).and_then(|b| b.as_ref()) {
                None => SMatrix { s11: s.s11.clone(), s12: s.s12.clone(), s21: s.s21.clone(), s22: s.s22.clone() },
                Some(next) => SMatrix::propagation(&phases[i + 1])
                    .star(next)
                    .and_then(|p| s.star(&p))
                    .map_err(self.err(i + 1))?,
            };
            below[i] = Some(next);
        }

        let centre = n / 2;
        let mut e0 = CVector::zeros(n);
        e0[centre] = Complex64::new(1.0, 0.0);
        let total = &above[layers];
        let refl = &total.s11 * &e0;
        let trans = &total.s21 * &e0;
        let eta_in = self.modes[0].eta.as_ref().expect("ambient is homogeneous");
        let eta_out = self.modes[media - 1].eta.as_ref().expect("substrate is homogeneous");
        let inc = eta_in[centre].re;
        let r: f64 = (0..n).map(|m| eta_in[m].re * refl[m].norm_sqr()).sum::<f64>() / inc;
        let t: f64 = (0..n).map(|m| eta_out[m].re * trans[m].norm_sqr()).sum::<f64>() / inc;

        let mut layer_absorption = Vec::with_capacity(layers);
        let (mut a_wire, mut a_gap) = (None, None);
        for j in 1..=layers {
            let x = &phases[j];
            let up = &above[j - 1];
            let down = below[j].as_ref().expect("filled above");
            let id = CMatrix::identity(n, n);
            let loop_gain = &id - &up.s22 * x * &down.s11 * x;
            let c_plus = solve(loop_gain, &CMatrix::from_columns(&[&up.s21 * &e0])).map_err(self.err(j))?.column(0).into_owned();
            let c_minus = &down.s11 * x * &c_plus;
            let modes = &self.modes[j];
            let flux = |a: &CVector, b: &CVector| {
                let f1 = &modes.w * (a + b);
                let f2 = &modes.v * (a - b);
                f1.iter().zip(f2.iter()).map(|(p, s)| (p * s.conj()).re).sum::<f64>() / inc
            };
            let top = flux(&c_plus, &(x * &c_minus));
            let bottom = flux(&(x * &c_plus), &c_minus);
            layer_absorption.push(top - bottom);
            if j == self.grating_medium {
                let (w, g) = self.region_absorption(modes, &c_plus, &c_minus, self.thickness[j], inc);
                a_wire = Some(w);
                a_gap = Some(g);
            }
        }
        Ok(AbsorptionResult { r, t, layer_absorption, a_wire, a_gap })
    }

    /// Absorption in the wire and gap regions of the grating layer from the
    /// modal fields, integrated analytically.
    fn region_absorption(&self, modes: &Modes, c_plus: &CVector, c_minus: &CVector, thickness: f64, inc: f64) -> (f64, f64) {
        let n = self.kx.len();
        let d = self.k0 * thickness;
        let g_wire = CMatrix::from_fn(n, n, |m, k| Complex64::new(wire_coefficient(m as i64 - k as i64, self.fill), 0.0));
        let g_gap = CMatrix::identity(n, n) - &g_wire;
        let (m_sum, m_diff) = z_integrals(&modes.q, c_plus, c_minus, d);
        let energy = |basis: &CMatrix, gram_of: &CMatrix, m: &CMatrix| {
            let gram = basis.adjoint() * gram_of * basis;
            gram.iter().zip(m.iter()).map(|(g, z)| g * z).sum::<Complex64>().re
        };
        match self.pol {
            Polarization::Tm => {
                let wq = &modes.w * CMatrix::from_diagonal(&CVector::from_vec(modes.q.clone()));
                // E_x from the continuous D_x, E_z directly (it is continuous across the walls)
                let ez = modes.ez.as_ref().expect("TM modes carry E_z");
                let part = |g: &CMatrix, eps: Complex64| {
                    eps.im * (energy(&wq, g, &m_diff) / eps.norm_sqr() + energy(ez, g, &m_sum)) / inc
                };
                (part(&g_wire, self.eps_wire), part(&g_gap, self.eps_gap))
            }
            _ => (
                self.eps_wire.im * energy(&modes.w, &g_wire, &m_sum) / inc,
                self.eps_gap.im * energy(&modes.w, &g_gap, &m_sum) / inc,
            ),
        }
    }
}

/// `∫₀^d e^{iαz} dz`.
fn exp_integral(alpha: Complex64, d: f64) -> Complex64 {
    let x = Complex64::i() * alpha * d;
    if x.norm() < 1e-3 {
        d * (1.0 + x / 2.0 + x * x / 6.0 + x * x * x / 24.0)
    } else {
        (x.exp() - 1.0) / (Complex64::i() * alpha)
    }
}

/// Matrices `M_lk = ∫ u_l* u_k dz` for `u_k = c⁺_k e^{iq_k z} ± c⁻_k e^{iq_k (d-z)}`,
/// returned as (plus, minus).
fn z_integrals(q: &[Complex64], cp: &CVector, cm: &CVector, d: f64) -> (CMatrix, CMatrix) {
    let n = q.len();
    let mut plus = CMatrix::zeros(n, n);
    let mut minus = CMatrix::zeros(n, n);
    for l in 0..n {
        for k in 0..n {
            let direct = exp_integral(q[k] - q[l].conj(), d);
            let beta = q[k] + q[l].conj();
            let ek = (Complex64::i() * q[k] * d).exp();
            let cross = if (beta * d).norm() < 1e-3 {
                ek * exp_integral(-beta, d)
            } else {
                (ek - (-Complex64::i() * q[l].conj() * d).exp()) / (Complex64::i() * beta)
            };
            let same = cp[l].conj() * cp[k] + cm[l].conj() * cm[k];
            let mixed = cp[l].conj() * cm[k] + cm[l].conj() * cp[k];
            plus[(l, k)] = same * direct + mixed * cross;
            minus[(l, k)] = same * direct - mixed * cross;
        }
    }
    (plus, minus)
}

fn homogeneous(eps: Complex64, kx: &[f64], pol: Polarization) -> Modes {
    let n = kx.len();
    let (q, eta): (Vec<Complex64>, Vec<Complex64>) = kx.iter().map(|k| admittance(eps, k * k, pol)).unzip();
    // flux weight: TE k_z, TM k_z / ε (H_y is the primary field)
    let v_diag: Vec<Complex64> = match pol {
        Polarization::Tm => q.iter().map(|q| q / eps).collect(),
        _ => eta.clone(),
    };
    let ez = (pol == Polarization::Tm)
        .then(|| CMatrix::from_diagonal(&CVector::from_vec(kx.iter().map(|&k| Complex64::new(k, 0.0) / eps).collect())));
    Modes {
        w: CMatrix::identity(n, n),
        v: CMatrix::from_diagonal(&CVector::from_vec(v_diag.clone())),
        q,
        eta: Some(v_diag),
        ez,
    }
}

fn patterned(kx: &[f64], fill: f64, eps_wire: Complex64, eps_gap: Complex64, pol: Polarization) -> Result<Modes, LinalgError> {
    let n = kx.len();
    let kx_mat = CMatrix::from_diagonal(&CVector::from_vec(kx.iter().map(|&k| Complex64::new(k, 0.0)).collect()));
    let eps = toeplitz(n, fill, eps_wire, eps_gap);
    let (p, a, e_inv) = match pol {
        Polarization::Tm => {
            let inv_eps = toeplitz(n, fill, eps_wire.inv(), eps_gap.inv());
            let e_inv = inverse(eps)?;
            let inner = CMatrix::identity(n, n) - &kx_mat * &e_inv * &kx_mat;
            (solve(inv_eps.clone(), &inner)?, Some(inv_eps), Some(e_inv))
        }
        _ => (eps - &kx_mat * &kx_mat, None, None),
    };
    let (values, w) = eig(p)?;
    let q: Vec<Complex64> = values.into_iter().map(kz_branch).collect();
    let wq = &w * CMatrix::from_diagonal(&CVector::from_vec(q.clone()));
    let v = match a {
        Some(a) => a * wq,
        None => wq,
    };
    let ez = e_inv.map(|e| e * kx_mat * &w);
    Ok(Modes { w, v, q, eta: None, ez })
}
