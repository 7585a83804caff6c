//! Thickness and wavelength scans built on the TMM and RCWA solvers.

use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

use super::{rcwa_solve, tmm_solve, AbsorptionResult, Grating1D, LayerStack, OpticsError, PlaneWave};

/// Which absorption figure a scan maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AbsorberTarget {
    /// Grating wires; falls back to the grating host layer when no grating is given.
    Wire,
    Layer(usize),
}

impl AbsorberTarget {
    pub fn pick(self, result: &AbsorptionResult, grating: Option<&Grating1D>) -> Result<f64, OpticsError> {
        let layer = match (self, grating) {
            (Self::Wire, _) if result.a_wire.is_some() => return Ok(result.a_wire.unwrap_or_default()),
            (Self::Wire, Some(g)) => g.layer,
            (Self::Wire, None) => return Err(OpticsError::InvalidInput("wire target needs a grating")),
            (Self::Layer(i), _) => i,
        };
        result
            .layer_absorption
            .get(layer)
            .copied()
            .ok_or(OpticsError::LayerIndex { index: layer, layers: result.layer_absorption.len() })
    }
}

fn solve(
    stack: &LayerStack,
    grating: Option<&Grating1D>,
    harmonics: usize,
    wave: &PlaneWave,
) -> Result<AbsorptionResult, OpticsError> {
    match grating {
        Some(g) => rcwa_solve(stack, g, wave, harmonics),
        None => tmm_solve(stack, wave),
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpacerScan {
    pub best_thickness: f64,
    pub best_absorption: f64,
    /// `(thickness, result)` for every sampled thickness.
    pub curve: Vec<(f64, AbsorptionResult)>,
}

/// Exhaustive scan of layer `layer_index` over `[start, stop]` at `step`.
/// Ties keep the thinnest layer.
#[allow(clippy::too_many_arguments)]
pub fn optimize_spacer(
    stack: &LayerStack,
    grating: Option<&Grating1D>,
    harmonics: usize,
    wave: &PlaneWave,
    layer_index: usize,
    range: (f64, f64),
    step: f64,
    target: AbsorberTarget,
) -> Result<SpacerScan, OpticsError> {
    if layer_index >= stack.layers.len() {
        return Err(OpticsError::LayerIndex { index: layer_index, layers: stack.layers.len() });
    }
    let (start, stop) = range;
    if !(step > 0.0) || !(start > 0.0) || !(stop >= start) || !stop.is_finite() {
        return Err(OpticsError::InvalidInput("spacer range must be positive and non-empty with step > 0"));
    }
    let count = ((stop - start) / step * (1.0 + 1e-12)).floor() as usize + 1;
    let mut curve = Vec::with_capacity(count);
    let mut best: Option<(f64, f64)> = None;
    for i in 0..count {
        let thickness = start + i as f64 * step;
        let result = solve(&stack.with_thickness(layer_index, thickness)?, grating, harmonics, wave)?;
        let value = target.pick(&result, grating)?;
        if best.map_or(true, |(_, b)| value > b) {
            best = Some((thickness, value));
        }
        curve.push((thickness, result));
    }
    let (best_thickness, best_absorption) = best.ok_or(OpticsError::InvalidInput("empty spacer range"))?;
    Ok(SpacerScan { best_thickness, best_absorption, curve })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rejection {
    /// `A(uv) / A(ir)`; infinite when the IR absorption vanishes.
    pub ratio: f64,
    pub absorption_uv: f64,
    pub absorption_ir: f64,
    pub infinite: bool,
}

pub fn rejection_ratio(
    stack: &LayerStack,
    grating: Option<&Grating1D>,
    harmonics: usize,
    wave_uv: &PlaneWave,
    wave_ir: &PlaneWave,
    target: AbsorberTarget,
) -> Result<Rejection, OpticsError> {
    let uv = target.pick(&solve(stack, grating, harmonics, wave_uv)?, grating)?;
    let ir = target.pick(&solve(stack, grating, harmonics, wave_ir)?, grating)?;
    let infinite = ir <= 0.0;
    Ok(Rejection { ratio: if infinite { f64::INFINITY } else { uv / ir }, absorption_uv: uv, absorption_ir: ir, infinite })
}

/// Evaluates the stack at each wavelength, keeping the other wave parameters.
pub fn wavelength_scan(
    stack: &LayerStack,
    grating: Option<&Grating1D>,
    harmonics: usize,
    wave: &PlaneWave,
    wavelengths: &[f64],
) -> Result<Vec<(f64, AbsorptionResult)>, OpticsError> {
    wavelengths
        .iter()
        .map(|&wavelength| Ok((wavelength, solve(stack, grating, harmonics, &PlaneWave { wavelength, ..*wave })?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::{Layer, OpticalMaterial, Polarization};
    use super::*;
    use alloc::vec;

    const NM: f64 = 1e-9;

    /// Thin absorber on a lossless spacer over a near-perfect mirror.
    fn mirror_stack(spacer_n: f64) -> LayerStack {
        LayerStack {
            ambient: OpticalMaterial::constant(1.0, 0.0),
            layers: vec![
                Layer { material: OpticalMaterial::constant(2.0, 2.5), thickness: 1.0 * NM },
                Layer { material: OpticalMaterial::constant(spacer_n, 0.0), thickness: 50.0 * NM },
            ],
            substrate: OpticalMaterial::constant(0.0, 1e5),
        }
    }

    #[test]
    fn mirror_antinode() {
        // weak index-matched absorber so it does not shift the standing wave
        let n = 1.46;
        let mut stack = mirror_stack(n);
        stack.layers[0] = Layer { material: OpticalMaterial::constant(n, 0.05), thickness: 0.1 * NM };
        let wave = PlaneWave::normal(315.0 * NM, Polarization::Te);
        let step = 0.5 * NM;
        let scan = optimize_spacer(&stack, None, 1, &wave, 1, (5.0 * NM, 100.0 * NM), step, AbsorberTarget::Layer(0)).unwrap();
        // absorber centre a quarter wave above the mirror
        let antinode = 315.0 * NM / (4.0 * n) - 0.05 * NM;
        assert!((scan.best_thickness - antinode).abs() <= step, "{} vs {}", scan.best_thickness, antinode);
        assert_eq!(scan.curve.len(), 191);
    }

    #[test]
    fn half_step_refinement_is_consistent() {
        let wave = PlaneWave::normal(315.0 * NM, Polarization::Te);
        let stack = mirror_stack(1.49);
        let coarse = optimize_spacer(&stack, None, 1, &wave, 1, (10.0 * NM, 120.0 * NM), 2.0 * NM, AbsorberTarget::Layer(0)).unwrap();
        let fine = optimize_spacer(&stack, None, 1, &wave, 1, (10.0 * NM, 120.0 * NM), 1.0 * NM, AbsorberTarget::Layer(0)).unwrap();
        assert!((coarse.best_thickness - fine.best_thickness).abs() <= 2.0 * NM);
    }

    #[test]
    fn range_errors() {
        let wave = PlaneWave::normal(315.0 * NM, Polarization::Te);
        let s = mirror_stack(1.49);
        assert!(optimize_spacer(&s, None, 1, &wave, 1, (50.0 * NM, 10.0 * NM), NM, AbsorberTarget::Layer(0)).is_err());
        assert!(optimize_spacer(&s, None, 1, &wave, 1, (10.0 * NM, 50.0 * NM), 0.0, AbsorberTarget::Layer(0)).is_err());
        assert!(optimize_spacer(&s, None, 1, &wave, 7, (10.0 * NM, 50.0 * NM), NM, AbsorberTarget::Layer(0)).is_err());
        assert!(optimize_spacer(&s, None, 1, &wave, 1, (10.0 * NM, 50.0 * NM), NM, AbsorberTarget::Wire).is_err());
    }

    #[test]
    fn rejection_definition() {
        let s = mirror_stack(1.49);
        let uv = PlaneWave::normal(313.0 * NM, Polarization::Te);
        let same = rejection_ratio(&s, None, 1, &uv, &uv, AbsorberTarget::Layer(0)).unwrap();
        assert!((same.ratio - 1.0).abs() < 1e-15);
        let ir = PlaneWave::normal(1092.0 * NM, Polarization::Te);
        let r = rejection_ratio(&s, None, 1, &uv, &ir, AbsorberTarget::Layer(0)).unwrap();
        let a_uv = tmm_solve(&s, &uv).unwrap().layer_absorption[0];
        let a_ir = tmm_solve(&s, &ir).unwrap().layer_absorption[0];
        assert_eq!(r.ratio, a_uv / a_ir);
        // a lossless target never absorbs
        let none = rejection_ratio(&s, None, 1, &uv, &ir, AbsorberTarget::Layer(1)).unwrap();
        assert!(none.infinite || none.ratio.abs() > 1e6 || none.absorption_ir.abs() < 1e-12);
    }

    #[test]
    fn antinode_node_design_rejects_ir() {
        // spacer a half wave at the IR line puts the absorber near an IR node
        let n = 1.46;
        let mut s = mirror_stack(n);
        s.layers[1].thickness = 1092.0 * NM / (2.0 * n);
        let uv = PlaneWave::normal(313.0 * NM, Polarization::Te);
        let ir = PlaneWave::normal(1092.0 * NM, Polarization::Te);
        let r = rejection_ratio(&s, None, 1, &uv, &ir, AbsorberTarget::Layer(0)).unwrap();
        assert!(r.ratio > 10.0, "{}", r.ratio);
    }
}
