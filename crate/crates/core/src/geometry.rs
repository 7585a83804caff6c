//! Solid angles of planar detectors seen from an ion, and the layout
//! arithmetic built on them.
//!
//! Every detector lies in the `z = 0` plane. Viewpoints sit above it.
//! Rectangles use the closed-form pyramid formula on four signed corner
//! rectangles, so off-axis viewpoints cost four arctangents. General
//! polygons are fan-triangulated and summed with the triangle formula of
//! Van Oosterom and Strackee.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("viewpoint must lie strictly above the detector plane (z = {z})")]
    InvalidViewpoint { z: f64 },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(&'static str),
    #[error("value {value} outside the allowed domain {domain}")]
    Domain { value: f64, domain: &'static str },
}

/// A point in space, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn offset(&self, dx: f64, dy: f64, dz: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.z + dz)
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Axis-aligned rectangle in the `z = 0` plane.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlanarRect {
    pub center: Point3,
    pub width: f64,
    pub height: f64,
}

impl PlanarRect {
    pub fn new(center_x: f64, center_y: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        let rect = Self { center: Point3::new(center_x, center_y, 0.0), width, height };
        rect.validate()?;
        Ok(rect)
    }

    /// Square of side `side` centered at the origin.
    pub fn centered_square(side: f64) -> Result<Self, GeometryError> {
        Self::new(0.0, 0.0, side, side)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.center.z != 0.0 {
            return Err(GeometryError::InvalidGeometry("rectangle must lie in the z = 0 plane"));
        }
        if !self.center.is_finite() {
            return Err(GeometryError::InvalidGeometry("rectangle center must be finite"));
        }
        if !(self.width > 0.0 && self.height > 0.0) || !self.width.is_finite() || !self.height.is_finite() {
            return Err(GeometryError::InvalidGeometry("rectangle width and height must be positive"));
        }
        Ok(())
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.center.x - 0.5 * self.width, self.center.x + 0.5 * self.width)
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.center.y - 0.5 * self.height, self.center.y + 0.5 * self.height)
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Counter-clockwise polygon with the same outline.
    pub fn to_polygon(&self) -> PlanarPolygon {
        let (x0, x1) = self.x_range();
        let (y0, y1) = self.y_range();
        PlanarPolygon { vertices: alloc::vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]] }
    }
}

/// Simple polygon in the `z = 0` plane, vertices in meters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlanarPolygon {
    pub vertices: Vec<[f64; 2]>,
}

impl PlanarPolygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self, GeometryError> {
        let poly = Self { vertices };
        poly.validate()?;
        Ok(poly)
    }

    /// Axis-aligned rectangle spanning `[x0, x1] × [y0, y1]`.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        Self::new(alloc::vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.vertices.len();
        if n < 3 {
            return Err(GeometryError::InvalidGeometry("polygon needs at least three vertices"));
        }
        if self.vertices.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(GeometryError::InvalidGeometry("polygon vertices must be finite"));
        }
        if self.signed_area() == 0.0 {
            return Err(GeometryError::InvalidGeometry("polygon has zero area"));
        }
        for i in 0..n {
            let (a0, a1) = (self.vertices[i], self.vertices[(i + 1) % n]);
            if a0 == a1 {
                return Err(GeometryError::InvalidGeometry("polygon has repeated vertices"));
            }
            for j in (i + 1)..n {
                // adjacent edges share a vertex by construction
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (b0, b1) = (self.vertices[j], self.vertices[(j + 1) % n]);
                if segments_intersect(a0, a1, b0, b1) {
                    return Err(GeometryError::InvalidGeometry("polygon is self-intersecting"));
                }
            }
        }
        Ok(())
    }

    /// Shoelace area, positive for counter-clockwise winding.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        let mut acc = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            acc += a[0] * b[1] - b[0] * a[1];
        }
        0.5 * acc
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = (self.vertices[i][0], self.vertices[i][1]);
            let (xj, yj) = (self.vertices[j][0], self.vertices[j][1]);
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    pub fn bounding_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max)
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a0: [f64; 2], a1: [f64; 2], b0: [f64; 2], b1: [f64; 2]) -> bool {
    let d1 = orient(b0, b1, a0);
    let d2 = orient(b0, b1, a1);
    let d3 = orient(a0, a1, b0);
    let d4 = orient(a0, a1, b1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(b0, b1, a0))
        || (d2 == 0.0 && on_segment(b0, b1, a1))
        || (d3 == 0.0 && on_segment(a0, a1, b0))
        || (d4 == 0.0 && on_segment(a0, a1, b1))
}

/// Solid angle of the rectangle `[0, x] × [0, y]` seen from height `h`
/// above the origin, signed by the quadrant of `(x, y)`.
#[inline]
fn corner_solid_angle(x: f64, y: f64, h: f64) -> f64 {
    (x * y / (h * (x * x + y * y + h * h).sqrt())).atan()
}

/// Solid angle (sr) subtended by `rect` from `p`.
pub fn solid_angle_rect(rect: &PlanarRect, p: Point3) -> Result<f64, GeometryError> {
    rect.validate()?;
    if !(p.z > 0.0) || !p.is_finite() {
        return Err(GeometryError::InvalidViewpoint { z: p.z });
    }
    let (x0, x1) = rect.x_range();
    let (y0, y1) = rect.y_range();
    let (x0, x1, y0, y1) = (x0 - p.x, x1 - p.x, y0 - p.y, y1 - p.y);
    let h = p.z;
    Ok(corner_solid_angle(x1, y1, h) - corner_solid_angle(x0, y1, h) - corner_solid_angle(x1, y0, h)
        + corner_solid_angle(x0, y0, h))
}

/// Signed solid angle of the triangle `(a, b, c)` seen from the origin.
fn triangle_solid_angle(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let norm = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let dot = |u: [f64; 3], v: [f64; 3]| u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let cross = [b[1] * c[2] - b[2] * c[1], b[2] * c[0] - b[0] * c[2], b[0] * c[1] - b[1] * c[0]];
    let triple = dot(a, cross);
    let (la, lb, lc) = (norm(a), norm(b), norm(c));
    let denom = la * lb * lc + dot(a, b) * lc + dot(a, c) * lb + dot(b, c) * la;
    2.0 * triple.atan2(denom)
}

/// Signed solid angle of `poly` from `p`. Positive when the polygon winds
/// counter-clockwise seen from above and `p.z > 0`.
pub fn signed_solid_angle_polygon(poly: &PlanarPolygon, p: Point3) -> f64 {
    let v = &poly.vertices;
    let rel = |q: [f64; 2]| [q[0] - p.x, q[1] - p.y, -p.z];
    let a = rel(v[0]);
    let mut total = 0.0;
    for i in 1..v.len() - 1 {
        total += triangle_solid_angle(a, rel(v[i]), rel(v[i + 1]));
    }
    // the triangle formula is oriented for outward normals; a CCW polygon
    // seen from above has its normal pointing at the viewer
    -total
}

/// Solid angle magnitude (sr) subtended by a simple polygon from `p`.
pub fn solid_angle_polygon(poly: &PlanarPolygon, p: Point3) -> Result<f64, GeometryError> {
    poly.validate()?;
    if p.z == 0.0 || !p.is_finite() {
        return Err(GeometryError::InvalidViewpoint { z: p.z });
    }
    Ok(signed_solid_angle_polygon(poly, p).abs())
}

/// Numerical aperture of the cone holding the solid-angle fraction
/// `f = Ω / 4π`: `(1 - cos θ) / 2 = f`, `NA = sin θ`.
pub fn fraction_to_na(f: f64) -> Result<f64, GeometryError> {
    if !(0.0..=0.5).contains(&f) {
        return Err(GeometryError::Domain { value: f, domain: "[0, 0.5]" });
    }
    let c = 1.0 - 2.0 * f;
    Ok((1.0 - c * c).sqrt())
}

/// Solid angle expressed as a fraction of the full sphere.
pub fn solid_angle_fraction(omega: f64) -> f64 {
    omega / (4.0 * PI)
}

/// Light from the neighbouring ion reaching this detector, relative to the
/// light from its own ion. The neighbour sits `spacing_factor` ion heights
/// away along x. Line of sight only; no shielding by raised electrodes.
pub fn crosstalk(rect: &PlanarRect, ion_height: f64, spacing_factor: f64) -> Result<f64, GeometryError> {
    if !(ion_height > 0.0) {
        return Err(GeometryError::InvalidViewpoint { z: ion_height });
    }
    if !(spacing_factor >= 0.0) || !spacing_factor.is_finite() {
        return Err(GeometryError::Domain { value: spacing_factor, domain: "[0, inf)" });
    }
    let own = Point3::new(rect.center.x, rect.center.y, ion_height);
    let neighbour = own.offset(spacing_factor * ion_height, 0.0, 0.0);
    Ok(solid_angle_rect(rect, neighbour)? / solid_angle_rect(rect, own)?)
}

/// Parameters of a row of detection zones sharing one focused readout beam.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ZoneArraySpec {
    pub ion_height: f64,
    pub wavelength: f64,
    /// Beam waist as a fraction of the ion height.
    pub waist_factor: f64,
    /// Zone pitch in ion heights.
    pub spacing_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ZoneArrayResult {
    pub waist: f64,
    pub rayleigh_length: f64,
    pub zone_count: u64,
}

/// Zones spaced `s·h` apart that fit within half a Rayleigh length either
/// side of the focus: `N = floor(z_R / (s·h)) + 1`.
pub fn zone_array(spec: &ZoneArraySpec) -> Result<ZoneArrayResult, GeometryError> {
    let positive = |v: f64| v > 0.0 && v.is_finite();
    if !(positive(spec.ion_height) && positive(spec.wavelength) && positive(spec.spacing_factor)) {
        return Err(GeometryError::InvalidGeometry("zone array parameters must be positive"));
    }
    if !(spec.waist_factor >= 0.0 && spec.waist_factor < 1.0) {
        return Err(GeometryError::Domain { value: spec.waist_factor, domain: "[0, 1)" });
    }
    let waist = spec.waist_factor * spec.ion_height;
    let rayleigh_length = PI * waist * waist / spec.wavelength;
    let zone_count = (rayleigh_length / (spec.spacing_factor * spec.ion_height)).floor() as u64 + 1;
    Ok(ZoneArrayResult { waist, rayleigh_length, zone_count })
}
