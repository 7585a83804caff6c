//! Synthetic count-rate curves with Poisson noise, for fit checks and the
//! example data.

use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use trapdet_core::detector::{effective_sde, sde_dc, RfBias, RfProfile, SdeCurve};
use trapdet_core::fit::{build_dc_curve, fit_rf_model, CurveLabel, FitConfig, FitError, FitResult, MeasuredCurve, DEFAULT_PLATEAU_FRACTION};

const UA: f64 = 1e-6;

/// Generator settings. Rates are counts per second with a one-second dwell,
/// so `plateau_rate` is also the expected plateau count per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub truth: SdeCurve,
    pub plateau_rate: f64,
    pub bias_start: f64,
    pub bias_step: f64,
    pub samples: usize,
}

impl Default for Synthetic {
    fn default() -> Self {
        Self {
            truth: SdeCurve::Parametric { e_max: 1.0, i_mid: 6.0 * UA, sigma: 0.8 * UA, i_sw: 11.5 * UA },
            plateau_rate: 1e5,
            bias_start: 0.5 * UA,
            bias_step: 0.2 * UA,
            samples: 256,
        }
    }
}

impl Synthetic {
    fn grid(&self, stop: f64) -> Vec<f64> {
        let n = ((stop - self.bias_start) / self.bias_step + 1e-9).floor().max(0.0) as usize;
        (0..=n).map(|k| self.bias_start + k as f64 * self.bias_step).collect()
    }

    fn sample(&self, expected: Vec<(f64, f64)>, seed: u64, label: CurveLabel) -> MeasuredCurve {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = Vec::with_capacity(expected.len());
        let samples = expected
            .into_iter()
            .map(|(i, r)| {
                let n = if r > 0.0 { Poisson::new(r).expect("positive mean").sample(&mut rng) } else { 0.0 };
                counts.push(n);
                (i, n)
            })
            .collect();
        MeasuredCurve { samples, counts: Some(counts), label }
    }

    /// rf-off sweep up to just below switching.
    pub fn rf_off(&self, seed: u64) -> MeasuredCurve {
        let top = self.truth.i_sw() - 0.5 * self.bias_step;
        let expected = self.grid(top).into_iter().map(|i| (i, self.plateau_rate * sde_dc(&self.truth, i).unwrap_or(0.0))).collect();
        self.sample(expected, seed, CurveLabel::RfOff)
    }

    /// rf-on sweep with a linear amplitude gradient `g` (0 for uniform),
    /// stopping before the wire latches.
    pub fn rf_on(&self, i_rf: f64, delta_i_dc: f64, gradient: f64, seed: u64, label: CurveLabel) -> MeasuredCurve {
        let peak = i_rf * (1.0 + gradient.abs() / 2.0);
        let top = self.truth.i_sw() - peak - delta_i_dc - 0.5 * self.bias_step;
        let profile = if gradient == 0.0 { RfProfile::Uniform { i_rf } } else { RfProfile::linear_gradient(i_rf, gradient, 8) };
        let expected = self
            .grid(top)
            .into_iter()
            .map(|i| {
                let bias = RfBias { i_dc: (i + delta_i_dc).abs(), profile: profile.clone(), omega: 1.0 };
                let e = effective_sde(&self.truth, &bias, self.samples).map(|r| r.effective).unwrap_or(0.0);
                (i, self.plateau_rate * e)
            })
            .collect();
        self.sample(expected, seed, label)
    }

    /// Generates and fits `datasets` independent rf-off/rf-on pairs with a
    /// uniform rf amplitude. Dataset `k` draws from seeds `(seed, 2k)` and
    /// `(seed, 2k + 1)`; results come back in dataset order.
    pub fn round_trip(&self, i_rf: f64, delta_i_dc: f64, datasets: usize, seed: u64, config: &FitConfig) -> Vec<Result<FitResult, FitError>> {
        let stream = |k: u64| (seed << 32) ^ k;
        (0..datasets as u64)
            .into_par_iter()
            .map(|k| {
                let off = self.rf_off(stream(2 * k));
                let on = self.rf_on(i_rf, delta_i_dc, 0.0, stream(2 * k + 1), CurveLabel::RfOn);
                let dc = build_dc_curve(&off, DEFAULT_PLATEAU_FRACTION)?;
                fit_rf_model(&dc, &on, config)
            })
            .collect()
    }
}
