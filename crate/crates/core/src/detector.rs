//! Detection efficiency and dark counts under an rf-modulated bias.
//!
//! The bias is `I_b(t) = I_dc + A sin(ωt + φ)`. The nanowire responds to
//! `|I_b|`; any excursion reaching the switching current latches it, and a
//! latched configuration counts nothing.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

use crate::circuit::InducedCurrentProfile;

pub const DEFAULT_SAMPLES: usize = 256;
pub const MIN_SAMPLES: usize = 16;
/// Recovery factor for the count-rate ceiling, `1 / (k τ)`.
pub const DEFAULT_RECOVERY_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectorError {
    #[error("bias {current} A is at or above the switching current {i_sw} A (latched)")]
    Latched { current: f64, i_sw: f64 },
    #[error("rf amplitude {amplitude} A exceeds the switching current {i_sw} A; the wire is always latched")]
    AlwaysLatched { amplitude: f64, i_sw: f64 },
    #[error("bright mean {bright} is below dark mean {dark} (inverted scenario)")]
    InvertedScenario { bright: f64, dark: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
}

/// Piecewise cubic Hermite interpolant with Fritsch–Carlson slopes; it
/// never overshoots monotone data. Constant beyond the end points.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, DetectorError> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(DetectorError::InvalidInput("interpolant needs at least two (x, y) pairs"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) || y.iter().any(|v| !v.is_finite()) {
            return Err(DetectorError::InvalidInput("interpolant abscissae must increase strictly"));
        }
        let n = x.len();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
        let mut d = alloc::vec![0.0; n];
        d[0] = delta[0];
        d[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            d[i] = if delta[i - 1] * delta[i] <= 0.0 { 0.0 } else { 0.5 * (delta[i - 1] + delta[i]) };
        }
        for i in 0..n - 1 {
            if delta[i] == 0.0 {
                d[i] = 0.0;
                d[i + 1] = 0.0;
                continue;
            }
            let (a, b) = (d[i] / delta[i], d[i + 1] / delta[i]);
            let s = a * a + b * b;
            if s > 9.0 {
                let t = 3.0 / s.sqrt();
                d[i] = t * a * delta[i];
                d[i + 1] = t * b * delta[i];
            }
        }
        Ok(Self { x, y, d })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = self.x.partition_point(|&v| v <= t) - 1;
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        // written so a constant run reproduces its value exactly
        self.y[i] + (self.y[i + 1] - self.y[i]) * (3.0 * s2 - 2.0 * s3) + h * ((s3 - 2.0 * s2 + s) * self.d[i] + (s3 - s2) * self.d[i + 1])
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.x, &self.y)
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum SdeCurve {
    /// `E_max Φ((I - I_mid) / σ)`; `σ = 0` is a step with value `E_max/2` at `I_mid`.
    Parametric { e_max: f64, i_mid: f64, sigma: f64, i_sw: f64 },
    Tabulated { table: MonotoneCubic, i_sw: f64 },
}

impl SdeCurve {
    pub fn tabulated(currents: Vec<f64>, efficiencies: Vec<f64>, i_sw: f64) -> Result<Self, DetectorError> {
        let curve = Self::Tabulated { table: MonotoneCubic::new(currents, efficiencies)?, i_sw };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        match self {
            Self::Parametric { e_max, i_mid, sigma, i_sw } => {
                if !(0.0..=1.0).contains(e_max) || !i_mid.is_finite() || !(*sigma >= 0.0) || !sigma.is_finite() {
                    return Err(DetectorError::InvalidInput("parametric curve needs 0 <= E_max <= 1 and sigma >= 0"));
                }
                if !(*i_sw > 0.0) || !i_sw.is_finite() {
                    return Err(DetectorError::InvalidInput("switching current must be positive"));
                }
            }
            Self::Tabulated { table, i_sw } => {
                if !(*i_sw > 0.0) || !i_sw.is_finite() {
                    return Err(DetectorError::InvalidInput("switching current must be positive"));
                }
                let (_, y) = table.knots();
                if y.iter().any(|v| !(0.0..=1.0).contains(v)) || y.windows(2).any(|w| w[1] < w[0]) {
                    return Err(DetectorError::InvalidInput("tabulated efficiencies must be non-decreasing within [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn i_sw(&self) -> f64 {
        match *self {
            Self::Parametric { i_sw, .. } | Self::Tabulated { i_sw, .. } => i_sw,
        }
    }

    /// Largest efficiency the curve reaches below switching.
    pub fn e_max(&self) -> f64 {
        match self {
            Self::Parametric { e_max, .. } => *e_max,
            Self::Tabulated { table, .. } => table.knots().1.iter().copied().fold(0.0, f64::max),
        }
    }

    /// Efficiency at `|current|`, ignoring latching.
    fn value(&self, current: f64) -> f64 {
        let i = current.abs();
        match self {
            Self::Parametric { e_max, i_mid, sigma, .. } => {
                if *sigma == 0.0 {
                    e_max * if i > *i_mid { 1.0 } else if i == *i_mid { 0.5 } else { 0.0 }
                } else {
                    e_max * normal_cdf((i - i_mid) / sigma)
                }
            }
            Self::Tabulated { table, .. } => table.eval(i).clamp(0.0, 1.0),
        }
    }
}

/// Efficiency at a dc bias.
pub fn sde_dc(curve: &SdeCurve, current: f64) -> Result<f64, DetectorError> {
    if !current.is_finite() || current < 0.0 {
        return Err(DetectorError::InvalidInput("bias current must be >= 0"));
    }
    if current >= curve.i_sw() {
        return Err(DetectorError::Latched { current, i_sw: curve.i_sw() });
    }
    Ok(curve.value(current))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum RfProfile {
    Uniform { i_rf: f64 },
    /// `(amplitude A, phase rad)` per segment.
    Segmented { segments: Vec<(f64, f64)> },
}

impl RfProfile {
    pub fn from_induced(profile: &InducedCurrentProfile) -> Self {
        Self::Segmented { segments: profile.currents.iter().map(|c: &Complex64| (c.norm(), c.arg())).collect() }
    }

    /// Linear amplitude ramp from `i_rf (1 - g/2)` to `i_rf (1 + g/2)`, in phase.
    pub fn linear_gradient(i_rf: f64, gradient: f64, segments: usize) -> Self {
        let n = segments.max(1);
        let segments = (0..n)
            .map(|k| {
                let x = if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 - 0.5 };
                ((i_rf * (1.0 + gradient * x)).abs(), 0.0)
            })
            .collect();
        Self::Segmented { segments }
    }

    fn segments(&self) -> Vec<(f64, f64)> {
        match self {
            Self::Uniform { i_rf } => alloc::vec![(*i_rf, 0.0)],
            Self::Segmented { segments } => segments.clone(),
        }
    }

    pub fn max_amplitude(&self) -> f64 {
        self.segments().iter().map(|s| s.0.abs()).fold(0.0, f64::max)
    }

    fn validate(&self) -> Result<(), DetectorError> {
        let segs = self.segments();
        if segs.is_empty() || segs.iter().any(|(a, p)| !(*a >= 0.0) || !a.is_finite() || !p.is_finite()) {
            return Err(DetectorError::InvalidInput("rf amplitudes must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RfBias {
    pub i_dc: f64,
    pub profile: RfProfile,
    pub omega: f64,
}

impl RfBias {
    pub fn uniform(i_dc: f64, i_rf: f64, omega: f64) -> Self {
        Self { i_dc, profile: RfProfile::Uniform { i_rf }, omega }
    }

    fn validate(&self) -> Result<(), DetectorError> {
        if !(self.i_dc >= 0.0) || !self.i_dc.is_finite() {
            return Err(DetectorError::InvalidInput("dc bias must be >= 0"));
        }
        self.profile.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EffectiveSdeResult {
    pub effective: f64,
    pub e_hi: f64,
    pub e_lo: f64,
    pub latched: bool,
}

impl EffectiveSdeResult {
    const LATCHED: Self = Self { effective: 0.0, e_hi: 0.0, e_lo: 0.0, latched: true };
}

fn check_samples(samples: usize) -> Result<(), DetectorError> {
    if samples < MIN_SAMPLES {
        return Err(DetectorError::InvalidInput("need at least 16 samples per rf cycle"));
    }
    Ok(())
}

/// Peak `|I_b|` over the cycle.
fn peak_current(i_dc: f64, amplitude: f64) -> f64 {
    i_dc.abs() + amplitude.abs()
}

/// `sin(2πk/n + phase)`, exactly odd about the half cycle when `phase = 0`.
fn grid_sine(k: usize, n: usize, phase: f64) -> f64 {
    if phase != 0.0 {
        return (2.0 * PI * k as f64 / n as f64 + phase).sin();
    }
    if k == 0 || 2 * k == n {
        return 0.0;
    }
    if 2 * k > n {
        return -grid_sine(n - k, n, 0.0);
    }
    (2.0 * PI * k as f64 / n as f64).sin()
}

/// Cycle average of `f(I_b(t))` on a uniform grid, with the sample extremes.
fn cycle_average(i_dc: f64, amplitude: f64, phase: f64, samples: usize, f: impl Fn(f64) -> f64) -> (f64, f64, f64) {
    let (mut sum, mut hi, mut lo) = (0.0, f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..samples {
        let v = f(i_dc + amplitude * grid_sine(k, samples, phase));
        sum += v;
        hi = hi.max(v);
        lo = lo.min(v);
    }
    (sum / samples as f64, hi, lo)
}

fn single_segment(curve: &SdeCurve, i_dc: f64, amplitude: f64, phase: f64, samples: usize) -> EffectiveSdeResult {
    if peak_current(i_dc, amplitude) >= curve.i_sw() {
        return EffectiveSdeResult::LATCHED;
    }
    if amplitude == 0.0 {
        let e = curve.value(i_dc);
        return EffectiveSdeResult { effective: e, e_hi: e, e_lo: e, latched: false };
    }
    let (effective, e_hi, e_lo) = cycle_average(i_dc, amplitude, phase, samples, |i| curve.value(i));
    EffectiveSdeResult { effective, e_hi, e_lo, latched: false }
}

/// Cycle-averaged efficiency. A segmented profile is averaged over its
/// segments as in [`effective_sde_gradient`].
pub fn effective_sde(curve: &SdeCurve, bias: &RfBias, samples: usize) -> Result<EffectiveSdeResult, DetectorError> {
    effective_sde_gradient(curve, bias, samples)
}

/// Mean over segments of each segment's cycle-averaged efficiency, for
/// photons spread evenly along the meander.
pub fn effective_sde_gradient(curve: &SdeCurve, bias: &RfBias, samples: usize) -> Result<EffectiveSdeResult, DetectorError> {
    check_samples(samples)?;
    curve.validate()?;
    bias.validate()?;
    let segs = bias.profile.segments();
    let mut out = EffectiveSdeResult { effective: 0.0, e_hi: f64::NEG_INFINITY, e_lo: f64::INFINITY, latched: false };
    for &(amplitude, phase) in &segs {
        let r = single_segment(curve, bias.i_dc, amplitude, phase, samples);
        if r.latched {
            return Ok(EffectiveSdeResult::LATCHED);
        }
        out.effective += r.effective;
        out.e_hi = out.e_hi.max(r.e_hi);
        out.e_lo = out.e_lo.min(r.e_lo);
    }
    out.effective /= segs.len() as f64;
    Ok(out)
}

/// Highest dc bias that does not latch: `I_sw - max amplitude`.
pub fn observed_switching_current(i_sw: f64, profile: &RfProfile) -> Result<f64, DetectorError> {
    if !(i_sw > 0.0) || !i_sw.is_finite() {
        return Err(DetectorError::InvalidInput("switching current must be positive"));
    }
    profile.validate()?;
    let amplitude = profile.max_amplitude();
    let observed = i_sw - amplitude;
    if observed < 0.0 {
        return Err(DetectorError::AlwaysLatched { amplitude, i_sw });
    }
    Ok(observed)
}

/// Background counts `B(I) = B₀ exp(|I| / I_scale)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BcrModel {
    pub b0: f64,
    pub i_scale: f64,
}

impl BcrModel {
    pub fn rate(&self, current: f64) -> f64 {
        self.b0 * (current.abs() / self.i_scale).exp()
    }

    fn validate(&self) -> Result<(), DetectorError> {
        if !(self.b0 >= 0.0) || !(self.i_scale > 0.0) || !self.b0.is_finite() || !self.i_scale.is_finite() {
            return Err(DetectorError::InvalidInput("BCR model needs B0 >= 0 and I_scale > 0"));
        }
        Ok(())
    }
}

/// Cycle-averaged background rate; a latched wire counts nothing. `i_sw`
/// is the switching current the latch test uses.
pub fn effective_bcr(bcr: &BcrModel, bias: &RfBias, i_sw: f64, samples: usize) -> Result<f64, DetectorError> {
    check_samples(samples)?;
    bcr.validate()?;
    bias.validate()?;
    let segs = bias.profile.segments();
    let mut total = 0.0;
    for &(amplitude, phase) in &segs {
        if peak_current(bias.i_dc, amplitude) >= i_sw {
            return Ok(0.0);
        }
        total += if amplitude == 0.0 {
            bcr.rate(bias.i_dc)
        } else {
            cycle_average(bias.i_dc, amplitude, phase, samples, |i| bcr.rate(i)).0
        };
    }
    Ok(total / segs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NanowireGeometry {
    pub width: f64,
    pub length: f64,
    /// Sheet kinetic inductance, H per square.
    pub l_sq: f64,
    /// Critical temperature, K. Carried along, not used.
    pub t_c: f64,
}

pub fn kinetic_inductance(geom: &NanowireGeometry) -> Result<f64, DetectorError> {
    if !(geom.width > 0.0) || !(geom.length > 0.0) || !(geom.l_sq > 0.0) {
        return Err(DetectorError::InvalidInput("nanowire width, length and L_sq must be positive"));
    }
    Ok(geom.l_sq * geom.length / geom.width)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PulseTiming {
    pub tau: f64,
    /// `1 / (k τ)`; infinite when `τ = 0`.
    pub max_count_rate: f64,
    pub recovery_factor: f64,
    /// Set for a zero inductance.
    pub degenerate: bool,
}

pub fn pulse_time_constant(inductance: f64, z_load: f64, recovery_factor: f64) -> Result<PulseTiming, DetectorError> {
    if !(inductance >= 0.0) || !inductance.is_finite() || !(z_load > 0.0) || !(recovery_factor > 0.0) {
        return Err(DetectorError::InvalidInput("need L >= 0, Z_load > 0 and recovery factor > 0"));
    }
    let tau = inductance / z_load;
    let degenerate = tau == 0.0;
    let max_count_rate = if degenerate { f64::INFINITY } else { 1.0 / (recovery_factor * tau) };
    Ok(PulseTiming { tau, max_count_rate, recovery_factor, degenerate })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CountingScenario {
    /// Photon rate reaching the detector in the bright state, per second.
    pub bright_rate: f64,
    pub stray_rate: f64,
    pub background: BcrModel,
    pub bias: RfBias,
    /// Switching current for the background latch test.
    pub i_sw: f64,
    pub integration_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Fidelity {
    /// Declare bright when more than this many counts arrive.
    pub threshold: u64,
    pub error_bright: f64,
    pub error_dark: f64,
    pub fidelity: f64,
    pub lambda_bright: f64,
    pub lambda_dark: f64,
}

/// Mean counts in the two states.
pub fn count_means(scenario: &CountingScenario, sde: f64) -> Result<(f64, f64), DetectorError> {
    let s = scenario;
    if [s.bright_rate, s.stray_rate].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || !(s.integration_time > 0.0) {
        return Err(DetectorError::InvalidInput("rates must be >= 0 and the integration time > 0"));
    }
    if !(0.0..=1.0).contains(&sde) {
        return Err(DetectorError::InvalidInput("efficiency must lie in [0, 1]"));
    }
    let bcr = effective_bcr(&s.background, &s.bias, s.i_sw, DEFAULT_SAMPLES)?;
    let dark = (s.stray_rate + bcr) * s.integration_time;
    Ok(((s.bright_rate * sde) * s.integration_time + dark, dark))
}

pub fn readout_fidelity(scenario: &CountingScenario, sde: f64) -> Result<Fidelity, DetectorError> {
    let (lb, ld) = count_means(scenario, sde)?;
    fidelity_from_means(lb, ld)
}

/// Best threshold for Poisson means `λ_b` and `λ_d`.
pub fn fidelity_from_means(lambda_bright: f64, lambda_dark: f64) -> Result<Fidelity, DetectorError> {
    let (lb, ld) = (lambda_bright, lambda_dark);
    if !(lb >= 0.0) || !(ld >= 0.0) || !lb.is_finite() || !ld.is_finite() {
        return Err(DetectorError::InvalidInput("Poisson means must be finite and >= 0"));
    }
    if lb < ld {
        return Err(DetectorError::InvertedScenario { bright: lb, dark: ld });
    }
    // beyond this both CDFs are 1 to double precision
    let k_max = (lb + 40.0 * lb.sqrt() + 60.0).ceil() as u64;
    let (mut cdf_b, mut cdf_d) = (0.0, 0.0);
    let mut best = Fidelity { threshold: 0, error_bright: 0.0, error_dark: 0.0, fidelity: 0.0, lambda_bright: lb, lambda_dark: ld };
    let mut best_err = f64::INFINITY;
    for k in 0..=k_max {
        cdf_b = (cdf_b + poisson_pmf(lb, k)).min(1.0);
        cdf_d = (cdf_d + poisson_pmf(ld, k)).min(1.0);
        let (eb, ed) = (cdf_b, 1.0 - cdf_d);
        let err = 0.5 * (eb + ed);
        if err < best_err {
            best_err = err;
            best = Fidelity { threshold: k, error_bright: eb, error_dark: ed, fidelity: 1.0 - err, ..best };
        }
    }
    Ok(best)
}

fn poisson_pmf(lambda: f64, k: u64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let k = k as f64;
    (k * lambda.ln() - lambda - libm::lgamma(k + 1.0)).exp()
}
