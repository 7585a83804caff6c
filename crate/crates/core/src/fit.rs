//! Recovers the rf amplitude and a dc offset from count-rate-versus-bias
//! curves, using the rf-off curve as the dc efficiency characteristic.

use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

use crate::detector::{effective_sde, DetectorError, RfBias, RfProfile, SdeCurve};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("invalid curve: {0}")]
    InvalidCurve(&'static str),
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("no start converged in {iterations} iterations (best residual {best_residual}, best simplex diameter {best_diameter} A)")]
    NoConvergence { iterations: usize, best_residual: f64, best_diameter: f64 },
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum CurveLabel {
    RfOff,
    RfOn,
    RfOnCancelled,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeasuredCurve {
    /// `(applied bias A, count rate 1/s)`, bias strictly increasing.
    pub samples: Vec<(f64, f64)>,
    /// Raw counts per point, used for weights when present.
    pub counts: Option<Vec<f64>>,
    pub label: CurveLabel,
}

impl MeasuredCurve {
    pub fn new(samples: Vec<(f64, f64)>, label: CurveLabel) -> Self {
        Self { samples, counts: None, label }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if self.samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(FitError::InvalidCurve("bias values must increase strictly"));
        }
        if self.samples.iter().any(|&(i, r)| !i.is_finite() || !(r >= 0.0) || !r.is_finite()) {
            return Err(FitError::InvalidCurve("rates must be finite and >= 0"));
        }
        if let Some(c) = &self.counts {
            if c.len() != self.samples.len() || c.iter().any(|v| !(*v >= 0.0)) {
                return Err(FitError::InvalidCurve("counts must match the samples and be >= 0"));
            }
        }
        Ok(())
    }

    /// Least-squares weights: `counts / rate²` with counts, else `1 / max(rate, 1)`.
    fn weights(&self) -> Vec<f64> {
        match &self.counts {
            Some(c) => self
                .samples
                .iter()
                .zip(c)
                .map(|(&(_, r), &n)| if r > 0.0 && n > 0.0 { n / (r * r) } else { 1.0 / r.max(1.0) })
                .collect(),
            None => self.samples.iter().map(|&(_, r)| 1.0 / r.max(1.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DcCurve {
    /// Efficiency relative to the plateau, so it reaches 1.
    pub curve: SdeCurve,
    pub plateau_rate: f64,
    /// The rates did not level off; the plateau is the largest rate.
    pub plateau_flagged: bool,
}

/// Fraction of the highest rf-off rates averaged into the plateau.
pub const DEFAULT_PLATEAU_FRACTION: f64 = 0.1;

/// Pool-adjacent-violators fit; returns the non-decreasing least-squares fit.
fn isotonic(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 && blocks[blocks.len() - 2].0 > blocks[blocks.len() - 1].0 {
            let (b, nb) = blocks.pop().unwrap_or_default();
            let last = blocks.len() - 1;
            let (a, na) = blocks[last];
            blocks[last] = ((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb);
        }
    }
    blocks.into_iter().flat_map(|(v, n)| core::iter::repeat(v).take(n)).collect()
}

/// Builds a relative dc efficiency curve from rf-off data. The switching
/// current is placed one grid step past the last sample.
pub fn build_dc_curve(rf_off: &MeasuredCurve, plateau_fraction: f64) -> Result<DcCurve, FitError> {
    rf_off.validate()?;
    let n = rf_off.samples.len();
    if n < 5 {
        return Err(FitError::InvalidCurve("the dc curve needs at least 5 points"));
    }
    if !(plateau_fraction > 0.0 && plateau_fraction <= 1.0) {
        return Err(FitError::InvalidConfig("plateau fraction must lie in (0, 1]"));
    }
    let mut rates: Vec<f64> = rf_off.samples.iter().map(|s| s.1).collect();
    rates.sort_by(|a, b| b.total_cmp(a));
    let top = ((n as f64 * plateau_fraction).ceil() as usize).clamp(1, n);
    let mean_top = rates[..top].iter().sum::<f64>() / top as f64;
    let last = rf_off.samples[n - 1].1;
    // a plateau is a tight block of top rates that the curve ends on
    let spread = (rates[0] - rates[top - 1]) / mean_top;
    let flagged = !(mean_top > 0.0) || last < 0.9 * mean_top || spread > 0.1;
    let plateau_rate = if flagged { rates[0] } else { mean_top };
    if !(plateau_rate > 0.0) {
        return Err(FitError::InvalidCurve("rf-off curve has no counts"));
    }
    let rel: Vec<f64> = rf_off.samples.iter().map(|s| (s.1 / plateau_rate).min(1.0)).collect();
    let rel = isotonic(&rel);
    let currents: Vec<f64> = rf_off.samples.iter().map(|s| s.0).collect();
    let i_sw = currents[n - 1] + (currents[n - 1] - currents[n - 2]);
    let curve = SdeCurve::tabulated(currents, rel, i_sw)?;
    Ok(DcCurve { curve, plateau_rate, plateau_flagged: flagged })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FitConfig {
    /// Multi-start span for `I_rf`, amperes.
    pub i_rf_range: (f64, f64),
    /// Multi-start span for the dc offset, amperes.
    pub delta_range: (f64, f64),
    /// Multi-start span for the gradient parameter.
    pub gradient_range: (f64, f64),
    /// Starts per axis.
    pub grid: usize,
    /// Time samples per rf cycle in the model.
    pub samples: usize,
    pub max_iterations: usize,
    /// Simplex diameter at convergence, amperes.
    pub tolerance: f64,
    /// Meander segments in the gradient model.
    pub segments: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            i_rf_range: (0.0, 6e-6),
            delta_range: (-1.5e-6, 1.5e-6),
            gradient_range: (-1.0, 1.0),
            grid: 5,
            samples: 64,
            max_iterations: 600,
            tolerance: 1e-9,
            segments: 8,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<(), FitError> {
        let ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.1 >= r.0;
        if !ok(self.i_rf_range) || !ok(self.delta_range) || !ok(self.gradient_range) || self.i_rf_range.0 < 0.0 {
            return Err(FitError::InvalidConfig("ranges must be finite with lo <= hi and I_rf >= 0"));
        }
        if self.grid < 1 || self.max_iterations == 0 || !(self.tolerance > 0.0) || self.segments == 0 {
            return Err(FitError::InvalidConfig("grid, iterations, tolerance and segments must be positive"));
        }
        if self.samples < crate::detector::MIN_SAMPLES {
            return Err(FitError::InvalidConfig("need at least 16 samples per cycle"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitResult {
    pub i_rf: f64,
    pub delta_i_dc: f64,
    /// Amplitude gradient across the meander (gradient model only).
    pub gradient: Option<f64>,
    /// Weighted sum of squared residuals.
    pub residual: f64,
    pub residual_norm: f64,
    /// One-sigma half-widths from the local curvature, in parameter order.
    pub half_widths: Vec<f64>,
    pub converged: bool,
    /// Objective at each start, in start order.
    pub start_residuals: Vec<f64>,
    pub points: usize,
}

// parameters are handled in µA internally; the gradient is dimensionless
const SCALE: f64 = 1e-6;

struct Problem<'a> {
    dc: &'a DcCurve,
    biases: Vec<f64>,
    rates: Vec<f64>,
    weights: Vec<f64>,
    samples: usize,
    segments: usize,
}

impl Problem<'_> {
    fn new<'a>(dc: &'a DcCurve, rf_on: &MeasuredCurve, config: &FitConfig) -> Result<Problem<'a>, FitError> {
        rf_on.validate()?;
        config.validate()?;
        if rf_on.samples.len() < 3 {
            return Err(FitError::InvalidCurve("the rf-on curve needs at least 3 points"));
        }
        Ok(Problem {
            dc,
            biases: rf_on.samples.iter().map(|s| s.0).collect(),
            rates: rf_on.samples.iter().map(|s| s.1).collect(),
            weights: rf_on.weights(),
            samples: config.samples,
            segments: config.segments,
        })
    }

    /// Model rate at one applied bias.
    fn model(&self, bias: f64, p: &[f64]) -> f64 {
        let i_rf = p[0].abs() * SCALE;
        let profile = match p.get(2) {
            Some(&g) => RfProfile::linear_gradient(i_rf, g, self.segments),
            None => RfProfile::Uniform { i_rf },
        };
        let bias = RfBias { i_dc: (bias + p[1] * SCALE).abs(), profile, omega: 1.0 };
        match effective_sde(&self.dc.curve, &bias, self.samples) {
            Ok(r) => self.dc.plateau_rate * r.effective,
            Err(_) => 0.0,
        }
    }

    fn objective(&self, p: &[f64]) -> f64 {
        self.biases.iter().zip(&self.rates).zip(&self.weights).map(|((&b, &r), &w)| w * (r - self.model(b, p)).powi(2)).sum()
    }
}

fn diameter(simplex: &[Vec<f64>]) -> f64 {
    let mut d: f64 = 0.0;
    for a in simplex {
        for b in simplex {
            let dist = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            d = d.max(dist);
        }
    }
    d
}

/// Nelder–Mead with standard coefficients. Returns (point, value, converged, diameter).
fn nelder_mead(f: &impl Fn(&[f64]) -> f64, start: &[f64], steps: &[f64], tol: f64, max_iter: usize) -> (Vec<f64>, f64, bool, f64) {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = alloc::vec![start.to_vec()];
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut converged = false;
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if diameter(&simplex) < tol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let v: Vec<f64> = (0..n).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                    values[i] = f(&v);
                    simplex[i] = v;
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    (simplex[best].clone(), values[best], converged, diameter(&simplex))
}

/// One-sigma half-widths from a central-difference Hessian, scaled by the
/// reduced residual.
fn half_widths(problem: &Problem, p: &[f64], value: f64) -> Vec<f64> {
    let n = p.len();
    let dof = problem.biases.len().saturating_sub(n).max(1) as f64;
    // 10 nA, or 0.01 in the gradient
    let h = alloc::vec![1e-2; n];
    let at = |di: usize, si: f64, dj: usize, sj: f64| {
        let mut q = p.to_vec();
        q[di] += si * h[di];
        q[dj] += sj * h[dj];
        problem.objective(&q)
    };
    let mut hess = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            hess[(i, j)] = if i == j {
                let mut q = p.to_vec();
                q[i] += h[i];
                let up = problem.objective(&q);
                q[i] -= 2.0 * h[i];
                (up - 2.0 * value + problem.objective(&q)) / (h[i] * h[i])
            } else {
                (at(i, 1.0, j, 1.0) - at(i, 1.0, j, -1.0) - at(i, -1.0, j, 1.0) + at(i, -1.0, j, -1.0)) / (4.0 * h[i] * h[j])
            };
        }
    }
    let units = |i: usize| if i < 2 { SCALE } else { 1.0 };
    match hess.try_inverse() {
        Some(inv) => (0..n)
            .map(|i| {
                let var = 2.0 * inv[(i, i)] * value / dof;
                if var >= 0.0 { var.sqrt() * units(i) } else { f64::INFINITY }
            })
            .collect(),
        None => alloc::vec![f64::INFINITY; n],
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return alloc::vec![0.5 * (lo + hi)];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

fn run_starts(problem: &Problem, starts: &[Vec<f64>], config: &FitConfig) -> Result<FitResult, FitError> {
    let f = |p: &[f64]| problem.objective(p);
    let steps: Vec<f64> = (0..starts[0].len()).map(|i| if i < 2 { 0.3 } else { 0.2 }).collect();
    let tol = config.tolerance / SCALE;
    let mut start_residuals = Vec::with_capacity(starts.len());
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    let mut best_diameter = f64::INFINITY;
    for s in starts {
        start_residuals.push(f(s));
        let (p, v, converged, d) = nelder_mead(&f, s, &steps, tol, config.max_iterations);
        best_diameter = best_diameter.min(d);
        // strict comparison keeps the earliest start on ties
        if best.as_ref().map_or(true, |b| v < b.1) {
            best = Some((p, v, converged));
        }
    }
    let (p, value, converged) = best.ok_or(FitError::InvalidConfig("no starts"))?;
    if !converged {
        return Err(FitError::NoConvergence { iterations: config.max_iterations, best_residual: value, best_diameter: best_diameter * SCALE });
    }
    Ok(FitResult {
        i_rf: p[0].abs() * SCALE,
        delta_i_dc: p[1] * SCALE,
        gradient: p.get(2).copied(),
        residual: value,
        residual_norm: value.sqrt(),
        half_widths: half_widths(problem, &p, value),
        converged,
        start_residuals,
        points: problem.biases.len(),
    })
}

/// Model count rates at the applied biases for the given parameters.
pub fn model_rates(dc: &DcCurve, biases: &[f64], i_rf: f64, delta_i_dc: f64, gradient: Option<f64>, config: &FitConfig) -> Vec<f64> {
    let problem = Problem { dc, biases: Vec::new(), rates: Vec::new(), weights: Vec::new(), samples: config.samples, segments: config.segments };
    let mut p = alloc::vec![i_rf / SCALE, delta_i_dc / SCALE];
    p.extend(gradient);
    biases.iter().map(|&b| problem.model(b, &p)).collect()
}

/// Fits `I_rf` and the dc offset from a multi-start grid.
pub fn fit_rf_model(dc: &DcCurve, rf_on: &MeasuredCurve, config: &FitConfig) -> Result<FitResult, FitError> {
    let problem = Problem::new(dc, rf_on, config)?;
    let mut starts = Vec::new();
    for a in linspace(config.i_rf_range.0, config.i_rf_range.1, config.grid) {
        for d in linspace(config.delta_range.0, config.delta_range.1, config.grid) {
            starts.push(alloc::vec![a / SCALE, d / SCALE]);
        }
    }
    run_starts(&problem, &starts, config)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GradientFit {
    pub fit: FitResult,
    pub two_parameter: FitResult,
    /// Two-parameter residual minus three-parameter residual, >= 0.
    pub delta_residual: f64,
    /// The improvement exceeds the 95% point of χ²(1) after scaling by the
    /// reduced residual.
    pub significant: bool,
}

/// Adds a linear amplitude gradient along the meander and compares with
/// the two-parameter fit.
pub fn gradient_model_fit(dc: &DcCurve, rf_on: &MeasuredCurve, config: &FitConfig) -> Result<GradientFit, FitError> {
    let two = fit_rf_model(dc, rf_on, config)?;
    let problem = Problem::new(dc, rf_on, config)?;
    let (a, d) = (two.i_rf / SCALE, two.delta_i_dc / SCALE);
    // g = 0 first so the nested fit can only improve on the two-parameter one
    let mut gs = alloc::vec![0.0];
    gs.extend(linspace(config.gradient_range.0, config.gradient_range.1, config.grid).into_iter().filter(|g| *g != 0.0));
    let starts: Vec<Vec<f64>> = gs.into_iter().map(|g| alloc::vec![a, d, g]).collect();
    let fit = run_starts(&problem, &starts, config)?;
    let delta_residual = (two.residual - fit.residual).max(0.0);
    let dof = (fit.points.saturating_sub(3)).max(1) as f64;
    let significant = delta_residual / (fit.residual / dof).max(f64::MIN_POSITIVE) > 3.841;
    Ok(GradientFit { fit, two_parameter: two, delta_residual, significant })
}
