//! Surface-electrode trap fields in the gapless-plane approximation.
//!
//! The electrode plane is fully tiled: listed electrodes carry their
//! potentials and everything else is grounded. For a Dirichlet plane the
//! potential above it is the solid-angle weighted sum
//! `Φ(p) = Σ V_e Ω_e(p) / 2π`, so all field evaluations reduce to
//! [`geometry::signed_solid_angle_polygon`](crate::geometry::signed_solid_angle_polygon).
//!
//! Electrode `rf_amplitude` values are peak volts per volt of drive; the
//! [`RfDrive`] amplitude multiplies them. A single rf electrode is therefore
//! usually given `rf_amplitude = 1`.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

use crate::constants::ELEMENTARY_CHARGE;
use crate::geometry::{signed_solid_angle_polygon, GeometryError, PlanarPolygon, Point3};
use crate::linalg::{inverse3, symmetric_eigen3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrapError {
    #[error("field point must lie above the electrode plane (z = {z})")]
    OutOfDomain { z: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid layout: {0}")]
    InvalidLayout(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("no pseudopotential minimum found above the search origin")]
    NoTrap,
    #[error("reported minimum is a saddle (Hessian eigenvalues {eigenvalues:?} J/m^2)")]
    SaddleDetected { eigenvalues: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Electrode {
    /// Outlines of the electrode; several disjoint pieces may share one potential.
    pub shapes: Vec<PlanarPolygon>,
    /// Holes cut out of the shapes.
    pub holes: Vec<PlanarPolygon>,
    /// Peak rf potential per volt of drive.
    pub rf_amplitude: f64,
    /// Static potential, V.
    pub static_potential: f64,
}

impl Electrode {
    pub fn new(shape: PlanarPolygon) -> Self {
        Self { shapes: alloc::vec![shape], holes: Vec::new(), rf_amplitude: 0.0, static_potential: 0.0 }
    }

    pub fn with_hole(mut self, hole: PlanarPolygon) -> Self {
        self.holes.push(hole);
        self
    }

    pub fn with_rf(mut self, amplitude: f64) -> Self {
        self.rf_amplitude = amplitude;
        self
    }

    pub fn with_static(mut self, volts: f64) -> Self {
        self.static_potential = volts;
        self
    }

    fn validate(&self) -> Result<(), TrapError> {
        if self.shapes.is_empty() {
            return Err(TrapError::InvalidLayout("electrode without shapes"));
        }
        for poly in self.shapes.iter().chain(&self.holes) {
            poly.validate()?;
        }
        for hole in &self.holes {
            let parent = self.shapes.iter().find(|s| hole.vertices.iter().all(|v| s.contains(v[0], v[1])));
            match parent {
                Some(parent) if !edges_cross(parent, hole) && !touches_boundary(parent, hole) => {}
                _ => return Err(TrapError::InvalidLayout("hole must lie strictly inside its parent shape")),
            }
        }
        if !self.rf_amplitude.is_finite() || !self.static_potential.is_finite() {
            return Err(TrapError::InvalidLayout("electrode potentials must be finite"));
        }
        Ok(())
    }

    /// Solid angle of the electrode surface from `p`, holes removed.
    pub fn solid_angle(&self, p: Point3) -> f64 {
        let shapes: f64 = self.shapes.iter().map(|s| signed_solid_angle_polygon(s, p).abs()).sum();
        let holes: f64 = self.holes.iter().map(|s| signed_solid_angle_polygon(s, p).abs()).sum();
        shapes - holes
    }

    fn covers(&self, x: f64, y: f64) -> bool {
        self.shapes.iter().any(|s| s.contains(x, y)) && !self.holes.iter().any(|h| h.contains(x, y))
    }
}

fn edges_cross(a: &PlanarPolygon, b: &PlanarPolygon) -> bool {
    let (na, nb) = (a.vertices.len(), b.vertices.len());
    for i in 0..na {
        let (p0, p1) = (a.vertices[i], a.vertices[(i + 1) % na]);
        for j in 0..nb {
            let (q0, q1) = (b.vertices[j], b.vertices[(j + 1) % nb]);
            let o = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            let (d1, d2, d3, d4) = (o(q0, q1, p0), o(q0, q1, p1), o(p0, p1, q0), o(p0, p1, q1));
            if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
                return true;
            }
        }
    }
    false
}

fn touches_boundary(parent: &PlanarPolygon, inner: &PlanarPolygon) -> bool {
    let n = parent.vertices.len();
    inner.vertices.iter().any(|v| {
        (0..n).any(|i| {
            let (a, b) = (parent.vertices[i], parent.vertices[(i + 1) % n]);
            let cross = (b[0] - a[0]) * (v[1] - a[1]) - (b[1] - a[1]) * (v[0] - a[0]);
            let within = v[0] >= a[0].min(b[0]) && v[0] <= a[0].max(b[0]) && v[1] >= a[1].min(b[1]) && v[1] <= a[1].max(b[1]);
            cross == 0.0 && within
        })
    })
}

/// Electrodes on the trap plane; uncovered area is grounded.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ElectrodeLayout {
    pub electrodes: Vec<Electrode>,
}

impl ElectrodeLayout {
    pub fn new(electrodes: Vec<Electrode>) -> Result<Self, TrapError> {
        let layout = Self { electrodes };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), TrapError> {
        for e in &self.electrodes {
            e.validate()?;
        }
        for (i, a) in self.electrodes.iter().enumerate() {
            for b in &self.electrodes[i + 1..] {
                let crossing = a.shapes.iter().any(|sa| b.shapes.iter().any(|sb| edges_cross(sa, sb)));
                let nested = a.shapes.iter().any(|s| s.vertices.iter().any(|v| strictly_covers(b, *v)))
                    || b.shapes.iter().any(|s| s.vertices.iter().any(|v| strictly_covers(a, *v)));
                if crossing || nested {
                    return Err(TrapError::InvalidLayout("electrodes overlap"));
                }
            }
        }
        Ok(())
    }

    /// Largest distance of any electrode vertex from the origin.
    pub fn extent(&self) -> f64 {
        self.electrodes.iter().flat_map(|e| e.shapes.iter()).map(|s| s.bounding_radius()).fold(0.0, f64::max)
    }
}

fn strictly_covers(e: &Electrode, v: [f64; 2]) -> bool {
    // nudge towards the four diagonals so shared edges do not count
    let eps = 1e-9 * (v[0].abs() + v[1].abs()).max(1e-12);
    [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        .iter()
        .all(|(sx, sy)| e.covers(v[0] + sx * eps, v[1] + sy * eps))
}

/// Which electrode potentials to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Drive {
    /// rf potentials at unit drive and zero phase.
    Rf,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RfDrive {
    /// Peak drive amplitude, V.
    pub v_pk: f64,
    /// Angular frequency, rad/s.
    pub omega_rf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IonSpecies {
    pub mass: f64,
    pub charge: f64,
}

impl IonSpecies {
    pub fn beryllium9() -> Self {
        Self { mass: crate::constants::BE9_ION_MASS, charge: ELEMENTARY_CHARGE }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrapSolution {
    pub minimum_position: Point3,
    pub ion_height: f64,
    /// Well depth, eV.
    pub well_depth: f64,
    pub well_depth_joules: f64,
    /// Secular frequencies (Hz), ascending.
    pub secular_frequencies: [f64; 3],
    /// Unit mode directions matching `secular_frequencies`.
    pub secular_axes: [[f64; 3]; 3],
    /// Lowest escape saddle; `None` when no barrier was found.
    pub escape_position: Option<Point3>,
}

fn check_point(p: Point3) -> Result<(), TrapError> {
    if !(p.z > 0.0) || !p.is_finite() {
        return Err(TrapError::OutOfDomain { z: p.z });
    }
    Ok(())
}

fn potential_unchecked(layout: &ElectrodeLayout, p: Point3, which: Drive) -> f64 {
    layout
        .electrodes
        .iter()
        .map(|e| {
            let v = match which {
                Drive::Rf => e.rf_amplitude,
                Drive::Static => e.static_potential,
            };
            if v == 0.0 {
                0.0
            } else {
                v * e.solid_angle(p)
            }
        })
        .sum::<f64>()
        / (2.0 * PI)
}

/// Electrostatic potential at `p` (V; per volt of drive for [`Drive::Rf`]).
pub fn potential(layout: &ElectrodeLayout, p: Point3, which: Drive) -> Result<f64, TrapError> {
    check_point(p)?;
    Ok(potential_unchecked(layout, p, which))
}

fn fd_step(z: f64) -> f64 {
    (1e-4 * z).max(1e-9).min(0.25 * z)
}

fn efield_unchecked(layout: &ElectrodeLayout, p: Point3, which: Drive) -> [f64; 3] {
    let h = fd_step(p.z);
    let central = |step: f64, axis: usize| {
        let mut d = [0.0; 3];
        d[axis] = step;
        let plus = potential_unchecked(layout, p.offset(d[0], d[1], d[2]), which);
        let minus = potential_unchecked(layout, p.offset(-d[0], -d[1], -d[2]), which);
        (plus - minus) / (2.0 * step)
    };
    let mut e = [0.0; 3];
    for (axis, slot) in e.iter_mut().enumerate() {
        let coarse = central(h, axis);
        let fine = central(0.5 * h, axis);
        *slot = -(4.0 * fine - coarse) / 3.0;
    }
    e
}

/// Electric field `-∇Φ` (V/m) by Richardson-extrapolated central differences.
pub fn efield(layout: &ElectrodeLayout, p: Point3, which: Drive) -> Result<[f64; 3], TrapError> {
    check_point(p)?;
    Ok(efield_unchecked(layout, p, which))
}

/// Seven-point finite-difference Laplacian of the potential with step `h`.
pub fn fd_laplacian(layout: &ElectrodeLayout, p: Point3, which: Drive, h: f64) -> Result<f64, TrapError> {
    check_point(p)?;
    if !(h > 0.0 && h < p.z) {
        return Err(TrapError::InvalidParameter("Laplacian step must be positive and below the point height"));
    }
    let c = potential_unchecked(layout, p, which);
    let mut acc = -6.0 * c;
    for (dx, dy, dz) in [(h, 0.0, 0.0), (-h, 0.0, 0.0), (0.0, h, 0.0), (0.0, -h, 0.0), (0.0, 0.0, h), (0.0, 0.0, -h)] {
        acc += potential_unchecked(layout, p.offset(dx, dy, dz), which);
    }
    Ok(acc / (h * h))
}

fn check_drive(drive: &RfDrive, species: &IonSpecies) -> Result<(), TrapError> {
    if !(drive.v_pk > 0.0 && drive.omega_rf > 0.0) || !drive.v_pk.is_finite() || !drive.omega_rf.is_finite() {
        return Err(TrapError::InvalidParameter("rf drive amplitude and frequency must be positive"));
    }
    if !(species.mass > 0.0 && species.charge > 0.0) {
        return Err(TrapError::InvalidParameter("ion mass and charge must be positive"));
    }
    Ok(())
}

/// `q² V_pk² / (4 m ω²)`: converts the squared unit-drive field into joules.
fn pseudo_scale(drive: &RfDrive, species: &IonSpecies) -> f64 {
    let q = species.charge * drive.v_pk;
    q * q / (4.0 * species.mass * drive.omega_rf * drive.omega_rf)
}

/// Time-averaged rf pseudopotential `q²|E_rf|²/(4 m ω²)`, joules.
pub fn pseudopotential(
    layout: &ElectrodeLayout,
    drive: &RfDrive,
    species: &IonSpecies,
    p: Point3,
) -> Result<f64, TrapError> {
    check_point(p)?;
    check_drive(drive, species)?;
    let e = efield_unchecked(layout, p, Drive::Rf);
    Ok(pseudo_scale(drive, species) * (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]))
}

/// Pseudopotential in eV.
pub fn pseudopotential_ev(
    layout: &ElectrodeLayout,
    drive: &RfDrive,
    species: &IonSpecies,
    p: Point3,
) -> Result<f64, TrapError> {
    Ok(pseudopotential(layout, drive, species, p)? / ELEMENTARY_CHARGE)
}

/// Squared unit-drive rf field and its derivatives. The pseudopotential is
/// this function times a drive-dependent constant, so the trap search runs
/// on it directly.
struct FieldEnergy<'a> {
    layout: &'a ElectrodeLayout,
}

impl FieldEnergy<'_> {
    fn value(&self, p: Point3) -> f64 {
        let e = efield_unchecked(self.layout, p, Drive::Rf);
        e[0] * e[0] + e[1] * e[1] + e[2] * e[2]
    }

    fn step(p: Point3) -> f64 {
        1e-3 * p.z
    }

    /// `∇|E|² = 2 Jᵀ E` with the field Jacobian from central differences.
    fn gradient(&self, p: Point3) -> [f64; 3] {
        let h = Self::step(p);
        let e = efield_unchecked(self.layout, p, Drive::Rf);
        let mut jac = [[0.0; 3]; 3];
        for axis in 0..3 {
            let mut d = [0.0; 3];
            d[axis] = h;
            let plus = efield_unchecked(self.layout, p.offset(d[0], d[1], d[2]), Drive::Rf);
            let minus = efield_unchecked(self.layout, p.offset(-d[0], -d[1], -d[2]), Drive::Rf);
            for i in 0..3 {
                jac[i][axis] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        let mut g = [0.0; 3];
        for (j, slot) in g.iter_mut().enumerate() {
            *slot = 2.0 * (0..3).map(|i| jac[i][j] * e[i]).sum::<f64>();
        }
        g
    }

    fn hessian(&self, p: Point3) -> [[f64; 3]; 3] {
        let h = Self::step(p);
        let mut hess = [[0.0; 3]; 3];
        for axis in 0..3 {
            let mut d = [0.0; 3];
            d[axis] = h;
            let plus = self.gradient(p.offset(d[0], d[1], d[2]));
            let minus = self.gradient(p.offset(-d[0], -d[1], -d[2]));
            for i in 0..3 {
                hess[i][axis] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                let avg = 0.5 * (hess[i][j] + hess[j][i]);
                hess[i][j] = avg;
                hess[j][i] = avg;
            }
        }
        hess
    }

    /// Newton iteration on `∇|E|² = 0`. Converges to whichever critical
    /// point is nearby, minimum or saddle.
    fn newton(&self, start: Point3, max_step: f64) -> Option<Point3> {
        let mut p = start;
        let mut last = f64::INFINITY;
        for _ in 0..60 {
            let g = self.gradient(p);
            let inv = inverse3(self.hessian(p))?;
            let mut d = [0.0; 3];
            for (i, slot) in d.iter_mut().enumerate() {
                *slot = -(0..3).map(|j| inv[i][j] * g[j]).sum::<f64>();
            }
            let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if !len.is_finite() {
                return None;
            }
            let scale = if len > max_step { max_step / len } else { 1.0 };
            let next = p.offset(d[0] * scale, d[1] * scale, d[2] * scale);
            if !(next.z > 0.0) {
                return None;
            }
            p = next;
            last = len;
            if len < 1e-10 * p.z {
                return Some(p);
            }
        }
        // finite-difference noise can stall the last digits
        (last < 1e-7 * p.z).then_some(p)
    }
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iterations: usize) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iterations {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Locates the rf pseudopotential minimum above `(origin_x, origin_y)` and
/// characterizes it.
///
/// The vertical line through the origin is scanned on a logarithmic grid
/// for the lowest local minimum of `|E_rf|²`, which is refined by
/// golden-section search and then by a 3-D Newton iteration. Secular
/// frequencies come from the Hessian eigenvalues. The well depth is the
/// lowest barrier among the escape routes seeded along the mode axes,
/// softest first: each route walks straight out of the minimum until the
/// pseudopotential starts to fall, and the peak is refined to a saddle
/// point where Newton converges.
pub fn find_trap(
    layout: &ElectrodeLayout,
    drive: &RfDrive,
    species: &IonSpecies,
    origin_x: f64,
    origin_y: f64,
) -> Result<TrapSolution, TrapError> {
    check_drive(drive, species)?;
    layout.validate()?;
    let scale = layout.extent();
    if !(scale > 0.0) {
        return Err(TrapError::NoTrap);
    }
    let energy = FieldEnergy { layout };
    let at = |z: f64| Point3::new(origin_x, origin_y, z);

    // vertical bracketing
    let samples = 400;
    let (z_lo, z_hi) = (1e-3 * scale, 5.0 * scale);
    let zs: Vec<f64> = (0..samples).map(|i| z_lo * (z_hi / z_lo).powf(i as f64 / (samples - 1) as f64)).collect();
    let gs: Vec<f64> = zs.iter().map(|&z| energy.value(at(z))).collect();
    let mut best: Option<usize> = None;
    for i in 1..samples - 1 {
        if gs[i] <= gs[i - 1] && gs[i] < gs[i + 1] && best.map_or(true, |b| gs[i] < gs[b]) {
            best = Some(i);
        }
    }
    let i = best.ok_or(TrapError::NoTrap)?;
    let z0 = golden_min(|z| energy.value(at(z)), zs[i - 1], zs[i + 1], 80);

    let minimum = energy.newton(at(z0), 0.05 * z0).ok_or(TrapError::NoTrap)?;
    let hess = energy.hessian(minimum);
    let (curvatures, axes) = symmetric_eigen3(hess);
    let pscale = pseudo_scale(drive, species);
    let eigenvalues = curvatures.map(|c| c * pscale);
    if eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(TrapError::SaddleDetected { eigenvalues });
    }
    let secular_frequencies = eigenvalues.map(|l| (l / species.mass).sqrt() / (2.0 * PI));

    let g_min = energy.value(minimum);
    let mut barrier: Option<(f64, Point3)> = None;
    for axis in axes {
        for sign in [1.0, -1.0] {
            if let Some((g, p)) = escape_barrier(&energy, minimum, axis.map(|c| sign * c), g_min) {
                if barrier.map_or(true, |(b, _)| g < b) {
                    barrier = Some((g, p));
                }
            }
        }
    }
    let (well_depth_joules, escape_position) = match barrier {
        Some((g, p)) => (((g - g_min) * pscale).max(0.0), Some(p)),
        None => (0.0, None),
    };
    Ok(TrapSolution {
        minimum_position: minimum,
        ion_height: minimum.z,
        well_depth: well_depth_joules / ELEMENTARY_CHARGE,
        well_depth_joules,
        secular_frequencies,
        secular_axes: axes,
        escape_position,
    })
}

fn escape_barrier(energy: &FieldEnergy, minimum: Point3, dir: [f64; 3], g_min: f64) -> Option<(f64, Point3)> {
    let ds = minimum.z / 200.0;
    let along = |s: f64| minimum.offset(s * dir[0], s * dir[1], s * dir[2]);
    let mut prev = g_min;
    let mut peak = None;
    for k in 1..=2000 {
        let p = along(k as f64 * ds);
        if p.z < 0.02 * minimum.z {
            break;
        }
        let g = energy.value(p);
        if g < prev {
            peak = Some(((k - 1) as f64) * ds);
            break;
        }
        prev = g;
    }
    let s_peak = peak?;
    if s_peak <= 0.0 {
        return None;
    }
    let ray_top = along(s_peak);
    let ray_value = energy.value(ray_top);
    // refine to a true saddle: one negative curvature, higher than the minimum
    if let Some(saddle) = energy.newton(ray_top, 0.05 * minimum.z) {
        let (curv, _) = symmetric_eigen3(energy.hessian(saddle));
        let negatives = curv.iter().filter(|&&c| c < 0.0).count();
        let g = energy.value(saddle);
        if negatives == 1 && g > g_min && g <= ray_value * (1.0 + 1e-9) {
            return Some((g, saddle));
        }
    }
    Some((ray_value, ray_top))
}

#[cfg(test)]
mod tests {
    use super::*;

    const UM: f64 = 1e-6;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> PlanarPolygon {
        PlanarPolygon::rectangle(x0 * UM, y0 * UM, x1 * UM, y1 * UM).unwrap()
    }

    /// Rectangular rf ring around a grounded center.
    fn ring(inner: (f64, f64), outer: (f64, f64)) -> ElectrodeLayout {
        let e = Electrode::new(rect(-outer.0, -outer.1, outer.0, outer.1))
            .with_hole(rect(-inner.0, -inner.1, inner.0, inner.1))
            .with_rf(1.0);
        ElectrodeLayout::new(alloc::vec![e]).unwrap()
    }

    #[test]
    fn boundary_condition_inside_electrode() {
        let layout = ElectrodeLayout::new(alloc::vec![Electrode::new(rect(-50.0, -50.0, 50.0, 50.0)).with_static(3.0)])
            .unwrap();
        let v = potential(&layout, Point3::new(10.0 * UM, -5.0 * UM, 1e-6 * UM), Drive::Static).unwrap();
        assert!((v - 3.0).abs() < 1e-6, "{v}");
        let far = potential(&layout, Point3::new(0.0, 0.0, 1.0), Drive::Static).unwrap();
        assert!(far.abs() < 1e-7);
        assert_eq!(potential(&layout, Point3::new(0.0, 0.0, 1.0), Drive::Rf).unwrap(), 0.0);
    }

    #[test]
    fn out_of_domain() {
        let layout = ring((40.0, 40.0), (100.0, 100.0));
        assert!(matches!(potential(&layout, Point3::new(0.0, 0.0, 0.0), Drive::Rf), Err(TrapError::OutOfDomain { .. })));
        assert!(efield(&layout, Point3::new(0.0, 0.0, -1.0), Drive::Rf).is_err());
    }

    #[test]
    fn symmetric_layout_has_no_lateral_field_on_axis() {
        let layout = ring((40.0, 40.0), (100.0, 100.0));
        let e = efield(&layout, Point3::new(0.0, 0.0, 30.0 * UM), Drive::Rf).unwrap();
        assert!(e[0].abs() < 1e-6 * e[2].abs().max(1.0) && e[1].abs() < 1e-6 * e[2].abs().max(1.0), "{e:?}");
    }

    #[test]
    fn whole_plane_equipotential_has_no_field() {
        let big = 1e4;
        let layout = ElectrodeLayout::new(alloc::vec![Electrode::new(rect(-big, -big, big, big)).with_static(5.0)])
            .unwrap();
        let p = Point3::new(1.0 * UM, 2.0 * UM, 40.0 * UM);
        assert!((potential(&layout, p, Drive::Static).unwrap() - 5.0).abs() < 5e-2);
        // V/z would be 1.25e5 V/m
        let e = efield(&layout, p, Drive::Static).unwrap();
        assert!(e.iter().all(|c| c.abs() < 1e3), "{e:?}");
    }

    #[test]
    fn superposition() {
        let a = Electrode::new(rect(-60.0, -20.0, -10.0, 20.0)).with_static(1.5);
        let b = Electrode::new(rect(10.0, -20.0, 60.0, 20.0)).with_static(-0.7);
        let both = ElectrodeLayout::new(alloc::vec![a.clone(), b.clone()]).unwrap();
        let only_a = ElectrodeLayout::new(alloc::vec![a]).unwrap();
        let only_b = ElectrodeLayout::new(alloc::vec![b]).unwrap();
        let p = Point3::new(3.0 * UM, 4.0 * UM, 25.0 * UM);
        let sum = potential(&only_a, p, Drive::Static).unwrap() + potential(&only_b, p, Drive::Static).unwrap();
        let joint = potential(&both, p, Drive::Static).unwrap();
        assert!(((sum - joint) / joint).abs() < 1e-12);
    }

    #[test]
    fn overlapping_electrodes_rejected() {
        let a = Electrode::new(rect(0.0, 0.0, 10.0, 10.0));
        let b = Electrode::new(rect(5.0, 5.0, 15.0, 15.0));
        assert!(matches!(ElectrodeLayout::new(alloc::vec![a.clone(), b]), Err(TrapError::InvalidLayout(_))));
        // shared edge is fine
        let c = Electrode::new(rect(10.0, 0.0, 20.0, 10.0));
        assert!(ElectrodeLayout::new(alloc::vec![a.clone(), c]).is_ok());
        // hole poking out of its parent
        let bad = Electrode::new(rect(0.0, 0.0, 10.0, 10.0)).with_hole(rect(5.0, 2.0, 12.0, 8.0));
        assert!(ElectrodeLayout::new(alloc::vec![bad]).is_err());
        // island inside a ring hole
        let ring = Electrode::new(rect(-20.0, -20.0, 20.0, 20.0)).with_hole(rect(-10.0, -10.0, 10.0, 10.0));
        let island = Electrode::new(rect(-5.0, -5.0, 5.0, 5.0));
        assert!(ElectrodeLayout::new(alloc::vec![ring, island]).is_ok());
    }

    #[test]
    fn pseudopotential_closed_form_scale() {
        // |E| = 1.9e4 V/m for a 9Be+ ion at 46.23 MHz
        let drive = RfDrive { v_pk: 1.0, omega_rf: 2.0 * PI * 46.23e6 };
        let species = IonSpecies { mass: 1.4965e-26, charge: 1.602e-19 };
        let ev = pseudo_scale(&drive, &species) * 1.9e4f64.powi(2) / ELEMENTARY_CHARGE;
        assert!((ev - 0.01145).abs() < 1e-4, "{ev}");
    }

    #[test]
    fn pseudopotential_quadratic_in_drive() {
        let layout = ring((40.0, 30.0), (110.0, 90.0));
        let species = IonSpecies::beryllium9();
        let d1 = RfDrive { v_pk: 25.0, omega_rf: 2.0 * PI * 46.23e6 };
        let d2 = RfDrive { v_pk: 50.0, ..d1 };
        for p in [Point3::new(0.0, 0.0, 20.0 * UM), Point3::new(7.0 * UM, -3.0 * UM, 70.0 * UM)] {
            let a = pseudopotential(&layout, &d1, &species, p).unwrap();
            let b = pseudopotential(&layout, &d2, &species, p).unwrap();
            assert!((b / a - 4.0).abs() < 1e-12);
        }
    }

    /// Potential of a unit-potential rectangle, differentiated analytically.
    fn rect_field_analytic(x0: f64, x1: f64, y0: f64, y1: f64, p: Point3) -> [f64; 3] {
        // Φ = (1/2π) Σ ± atan(xy / (z r)); derivatives of atan(xy/(z r))
        let corner = |x: f64, y: f64| {
            let z = p.z;
            let r2 = x * x + y * y + z * z;
            let r = r2.sqrt();
            let u = x * y / (z * r);
            let k = 1.0 / (1.0 + u * u);
            // derivatives w.r.t. the corner offsets (x = cx - px etc.)
            let du_dx = y / (z * r) - x * x * y / (z * r * r2);
            let du_dy = x / (z * r) - x * y * y / (z * r * r2);
            let du_dz = -x * y / (z * z * r) - x * y / (r * r2);
            [k * du_dx, k * du_dy, k * du_dz]
        };
        let mut g = [0.0; 3];
        for (cx, cy, s) in [(x1, y1, 1.0), (x0, y1, -1.0), (x1, y0, -1.0), (x0, y0, 1.0)] {
            let d = corner(cx - p.x, cy - p.y);
            // offsets depend on p with a minus sign in x and y
            g[0] += -s * d[0];
            g[1] += -s * d[1];
            g[2] += s * d[2];
        }
        g.map(|c| -c / (2.0 * PI))
    }

    #[test]
    fn efield_matches_analytic_rectangle() {
        let layout = ElectrodeLayout::new(alloc::vec![
            Electrode::new(rect(-30.0, -15.0, 20.0, 25.0)).with_static(1.0)
        ])
        .unwrap();
        for p in [
            Point3::new(0.0, 0.0, 30.0 * UM),
            Point3::new(35.0 * UM, -10.0 * UM, 12.0 * UM),
            Point3::new(-50.0 * UM, 40.0 * UM, 60.0 * UM),
        ] {
            let num = efield(&layout, p, Drive::Static).unwrap();
            let ana = rect_field_analytic(-30.0 * UM, 20.0 * UM, -15.0 * UM, 25.0 * UM, p);
            let norm = ana.iter().map(|c| c * c).sum::<f64>().sqrt();
            for i in 0..3 {
                assert!((num[i] - ana[i]).abs() < 1e-6 * norm, "{num:?} {ana:?}");
            }
        }
    }

    #[test]
    fn ring_trap_scaling() {
        let layout = ring((45.0, 35.0), (140.0, 120.0));
        let species = IonSpecies::beryllium9();
        let base = RfDrive { v_pk: 25.0, omega_rf: 2.0 * PI * 46.23e6 };
        let a = find_trap(&layout, &base, &species, 0.0, 0.0).unwrap();
        assert!(a.ion_height > 10.0 * UM && a.ion_height < 100.0 * UM, "{}", a.ion_height);
        assert!(a.well_depth > 0.0);
        assert!(a.escape_position.is_some());

        let b = find_trap(&layout, &RfDrive { v_pk: 50.0, ..base }, &species, 0.0, 0.0).unwrap();
        assert!(a.minimum_position.distance(&b.minimum_position) < 1e-9);
        assert!((b.well_depth / a.well_depth - 4.0).abs() < 1e-9);
        for i in 0..3 {
            assert!((b.secular_frequencies[i] / a.secular_frequencies[i] - 2.0).abs() < 1e-9);
        }

        let c = find_trap(&layout, &RfDrive { omega_rf: 2.0 * base.omega_rf, ..base }, &species, 0.0, 0.0).unwrap();
        assert!(a.minimum_position.distance(&c.minimum_position) < 1e-9);
        assert!((a.well_depth / c.well_depth - 4.0).abs() < 1e-9);
        for i in 0..3 {
            assert!((a.secular_frequencies[i] / c.secular_frequencies[i] - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rf_null_frequency_sum_rule() {
        // at an rf null the field Jacobian is traceless, so f_hi = f_lo + f_mid
        let layout = ring((45.0, 35.0), (140.0, 120.0));
        let t = find_trap(
            &layout,
            &RfDrive { v_pk: 25.0, omega_rf: 2.0 * PI * 46.23e6 },
            &IonSpecies::beryllium9(),
            0.0,
            0.0,
        )
        .unwrap();
        let f = t.secular_frequencies;
        assert!(((f[0] + f[1]) / f[2] - 1.0).abs() < 1e-4, "{f:?}");
    }

    #[test]
    fn no_trap_without_rf() {
        let layout = ElectrodeLayout::new(alloc::vec![Electrode::new(rect(-10.0, -10.0, 10.0, 10.0)).with_static(1.0)])
            .unwrap();
        let r = find_trap(&layout, &RfDrive { v_pk: 1.0, omega_rf: 1e8 }, &IonSpecies::beryllium9(), 0.0, 0.0);
        assert!(r.is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Three rectangles in separate vertical bands so they never overlap.
        fn layout_strategy() -> impl Strategy<Value = ElectrodeLayout> {
            proptest::collection::vec((5.0..40.0f64, -60.0..60.0f64, 5.0..80.0f64, -3.0..3.0f64, -2.0..2.0f64), 3)
                .prop_map(|specs| {
                    let electrodes = specs
                        .iter()
                        .enumerate()
                        .map(|(i, &(w, y0, h, vs, vr))| {
                            let x0 = -150.0 + 100.0 * i as f64;
                            Electrode::new(rect(x0, y0, x0 + w + 40.0, y0 + h)).with_static(vs).with_rf(vr)
                        })
                        .collect();
                    ElectrodeLayout::new(electrodes).unwrap()
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn laplace_residual_is_discretization_error(
                layout in layout_strategy(),
                x in -120.0..120.0f64, y in -80.0..80.0f64, z in 10.0..80.0f64,
            ) {
                let p = Point3::new(x * UM, y * UM, z * UM);
                let h = 0.05 * p.z;
                let coarse = fd_laplacian(&layout, p, Drive::Static, h).unwrap();
                let fine = fd_laplacian(&layout, p, Drive::Static, 0.5 * h).unwrap();
                let phi_scale = 3.0 / (p.z * p.z);
                if coarse.abs() > 1e-6 * phi_scale {
                    let ratio = coarse / fine;
                    prop_assert!(ratio > 3.0 && ratio < 5.5, "ratio {}", ratio);
                } else {
                    prop_assert!(fine.abs() <= 1e-6 * phi_scale);
                }
            }

            #[test]
            fn superposition_holds(layout in layout_strategy(), x in -120.0..120.0f64, z in 5.0..90.0f64) {
                let p = Point3::new(x * UM, 7.0 * UM, z * UM);
                let joint = potential(&layout, p, Drive::Static).unwrap();
                let parts: f64 = layout
                    .electrodes
                    .iter()
                    .map(|e| potential(&ElectrodeLayout { electrodes: alloc::vec![e.clone()] }, p, Drive::Static).unwrap())
                    .sum();
                let scale = layout.electrodes.iter().map(|e| e.static_potential.abs()).sum::<f64>();
                prop_assert!((joint - parts).abs() <= 1e-12 * scale.max(1e-300));
            }

            #[test]
            fn trap_invariant_under_drive_and_species(
                v in 1.0..200.0f64, f in 5e6..200e6f64, m in 1e-27..1e-24f64, q in 1.0..3.0f64,
            ) {
                let layout = ring((41.0, 61.0), (61.0, 102.0));
                let base_drive = RfDrive { v_pk: 25.0, omega_rf: 2.0 * PI * 46.23e6 };
                let base_ion = IonSpecies::beryllium9();
                let a = find_trap(&layout, &base_drive, &base_ion, 0.0, 0.0).unwrap();
                let drive = RfDrive { v_pk: v, omega_rf: 2.0 * PI * f };
                let ion = IonSpecies { mass: m, charge: q * ELEMENTARY_CHARGE };
                let b = find_trap(&layout, &drive, &ion, 0.0, 0.0).unwrap();
                prop_assert!(a.minimum_position.distance(&b.minimum_position) < 1e-9);
                // the pseudopotential already carries 1/m, so f goes as qV/(mω)
                let expected = (v * ion.charge / (m * drive.omega_rf))
                    / (base_drive.v_pk * base_ion.charge / (base_ion.mass * base_drive.omega_rf));
                for i in 0..3 {
                    let ratio = b.secular_frequencies[i] / a.secular_frequencies[i];
                    prop_assert!((ratio / expected - 1.0).abs() < 1e-9);
                }
                prop_assert!(b.well_depth >= 0.0);
            }
        }
    }
}
