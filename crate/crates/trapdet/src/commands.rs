//! One function per subcommand. Each returns a JSON object and, where the
//! result is a series, a table for CSV output.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};
use trapdet_core::circuit::{induced_currents, optimize_cancellation, InducedCurrentProfile};
use trapdet_core::detector::{
    effective_bcr, effective_sde, observed_switching_current, pulse_time_constant, readout_fidelity, sde_dc, BcrModel, CountingScenario,
    DetectorError,
};
use trapdet_core::fit::{build_dc_curve, fit_rf_model, gradient_model_fit, model_rates, CurveLabel, DcCurve, FitConfig, FitResult, MeasuredCurve};
use trapdet_core::geometry::{crosstalk, fraction_to_na, solid_angle_fraction, solid_angle_polygon, solid_angle_rect};
use trapdet_core::optics::{optimize_spacer, rcwa_solve, rejection_ratio, tmm_solve, wavelength_scan, AbsorptionResult, OpticsError, PlaneWave};
use trapdet_core::trapfields::find_trap;

use crate::config::{DetectorShape, Format, Loaded, Optics};
use crate::csvio::{self, num, Table};
use crate::error::{CliError, Result};
use crate::units::{self, Dim};

pub const SCHEMA_VERSION: u32 = 1;
// output scaling out of SI
const PER_UA: f64 = 1e6;
const PER_NM: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, clap::Subcommand)]
pub enum Command {
    /// Solid angle, collection fraction and equivalent NA of the detector.
    SolidAngle,
    /// Equivalent-cone NA for a collection fraction.
    Na {
        /// Fraction of 4π; defaults to geometry.fraction, then to the detector.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Fraction of a neighbouring zone's light reaching this detector.
    Crosstalk,
    /// Rayleigh length and zone count of a shared-beam array.
    Zones,
    /// Trap position, depth and secular frequencies.
    Trap,
    /// Homogeneous stack absorption (transfer matrix).
    Stack,
    /// Grating absorption (coupled-wave).
    Grating,
    /// Scan a spacer layer for maximum absorption.
    OptimizeSpacer,
    /// UV/IR absorption ratio.
    Rejection,
    /// Per-segment rf currents induced in the meander.
    InducedCurrent,
    /// Best cancellation tone and the residual currents.
    Cancel,
    /// Cycle-averaged efficiency and background at the configured bias.
    Sde,
    /// Observed switching current and reset timing.
    Switching,
    /// Bright/dark discrimination fidelity.
    Fidelity,
    /// Fit rf amplitude and dc offset to rf-on data.
    Fit(FitArgs),
    /// Evaluate another command over a parameter range.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, PartialEq, Default, clap::Args)]
pub struct FitArgs {
    /// CSV with `bias_uA,rate_cps[,counts]`, rf off.
    #[arg(long)]
    pub rf_off: Option<PathBuf>,
    /// Same columns, rf on.
    #[arg(long)]
    pub rf_on: Option<PathBuf>,
    /// Add the linear amplitude-gradient parameter.
    #[arg(long)]
    pub gradient: bool,
    /// Residual-bootstrap replicates for parameter spread.
    #[arg(long)]
    pub bootstrap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, clap::Args)]
pub struct SweepArgs {
    /// Config key path, e.g. `detector.i_dc` or `optics.layers[1].thickness`.
    #[arg(long)]
    pub parameter: Option<String>,
    /// First value, with the key's unit, e.g. "1 uA".
    #[arg(long, allow_hyphen_values = true)]
    pub start: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub stop: Option<String>,
    #[arg(long)]
    pub step: Option<String>,
    /// Subcommand evaluated at each point.
    #[arg(long)]
    pub command: Option<String>,
    /// Worker threads; output does not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SolidAngle => "solid-angle",
            Command::Na { .. } => "na",
            Command::Crosstalk => "crosstalk",
            Command::Zones => "zones",
            Command::Trap => "trap",
            Command::Stack => "stack",
            Command::Grating => "grating",
            Command::OptimizeSpacer => "optimize-spacer",
            Command::Rejection => "rejection",
            Command::InducedCurrent => "induced-current",
            Command::Cancel => "cancel",
            Command::Sde => "sde",
            Command::Switching => "switching",
            Command::Fidelity => "fidelity",
            Command::Fit(_) => "fit",
            Command::Sweep(_) => "sweep",
        }
    }

    /// Commands a sweep can evaluate, by name.
    pub fn sweepable(name: &str) -> Option<Command> {
        Some(match name {
            "solid-angle" => Command::SolidAngle,
            "na" => Command::Na { fraction: None },
            "crosstalk" => Command::Crosstalk,
            "zones" => Command::Zones,
            "trap" => Command::Trap,
            "stack" => Command::Stack,
            "grating" => Command::Grating,
            "optimize-spacer" => Command::OptimizeSpacer,
            "rejection" => Command::Rejection,
            "induced-current" => Command::InducedCurrent,
            "cancel" => Command::Cancel,
            "sde" => Command::Sde,
            "switching" => Command::Switching,
            "fidelity" => Command::Fidelity,
            "fit" => Command::Fit(FitArgs::default()),
            _ => return None,
        })
    }
}

/// A command result: a JSON object plus an optional series table.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub command: String,
    pub fields: Map<String, Value>,
    pub table: Option<Table>,
}

impl Output {
    fn new(command: &str) -> Self {
        Self { command: command.into(), fields: Map::new(), table: None }
    }

    fn set(&mut self, key: &str, v: impl Serialize) {
        self.fields.insert(key.into(), serde_json::to_value(v).expect("plain data serializes"));
    }

    fn merge(&mut self, v: impl Serialize) {
        if let Value::Object(m) = serde_json::to_value(v).expect("plain data serializes") {
            self.fields.extend(m);
        }
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("schema_version".into(), json!(SCHEMA_VERSION));
        m.insert("command".into(), json!(self.command));
        m.extend(self.fields.clone());
        Value::Object(m)
    }

    /// Scalar fields, nested objects flattened with `.`; arrays are skipped.
    pub fn scalar_row(&self) -> Vec<(String, String)> {
        fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
            match v {
                Value::Object(m) => {
                    for (k, v) in m {
                        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                        walk(&key, v, out);
                    }
                }
                Value::Array(_) => {}
                Value::Null => out.push((prefix.into(), String::new())),
                Value::String(s) => out.push((prefix.into(), s.clone())),
                Value::Bool(b) => out.push((prefix.into(), b.to_string())),
                Value::Number(n) => out.push((prefix.into(), n.as_f64().map_or_else(|| n.to_string(), num))),
            }
        }
        let mut out = Vec::new();
        walk("", &Value::Object(self.fields.clone()), &mut out);
        out
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.to_json()).expect("json value serializes");
                s.push('\n');
                s
            }
            Format::Csv => match &self.table {
                Some(t) => t.to_csv(),
                None => {
                    let row = self.scalar_row();
                    let mut t = Table::new(row.iter().map(|r| r.0.clone()));
                    t.push(row.into_iter().map(|r| r.1).collect());
                    t.to_csv()
                }
            },
        }
    }
}

fn solver(e: impl std::fmt::Display) -> CliError {
    CliError::solver(e)
}

fn optics_err(e: OpticsError) -> CliError {
    match e {
        OpticsError::OutOfTable { .. } | OpticsError::InvalidInput(_) | OpticsError::LayerIndex { .. } | OpticsError::EvenHarmonics(_) => {
            CliError::at("optics", e)
        }
        OpticsError::Solver { .. } => CliError::solver(e),
    }
}

pub fn run(cmd: &Command, cfg: &Loaded) -> Result<Output> {
    match cmd {
        Command::SolidAngle => solid_angle(cfg),
        Command::Na { fraction } => na(cfg, *fraction),
        Command::Crosstalk => crosstalk_cmd(cfg),
        Command::Zones => zones(cfg),
        Command::Trap => trap(cfg),
        Command::Stack => stack(cfg, false),
        Command::Grating => stack(cfg, true),
        Command::OptimizeSpacer => spacer(cfg),
        Command::Rejection => rejection(cfg),
        Command::InducedCurrent => induced(cfg),
        Command::Cancel => cancel(cfg),
        Command::Sde => sde(cfg),
        Command::Switching => switching(cfg),
        Command::Fidelity => fidelity(cfg),
        Command::Fit(args) => fit(cfg, args),
        Command::Sweep(args) => crate::sweep::run(cfg, args),
    }
}

fn detector_solid_angle(cfg: &Loaded) -> Result<f64> {
    let p = cfg.ion_position()?;
    match cfg.detector_shape()? {
        DetectorShape::Rect(r) => solid_angle_rect(&r, p),
        DetectorShape::Polygon(poly) => solid_angle_polygon(&poly, p),
    }
    .map_err(|e| CliError::at("geometry", e))
}

fn solid_angle(cfg: &Loaded) -> Result<Output> {
    let omega = detector_solid_angle(cfg)?;
    let fraction = solid_angle_fraction(omega);
    let mut out = Output::new("solid-angle");
    out.set("solid_angle_sr", omega);
    out.set("fraction", fraction);
    out.set("na", fraction_to_na(fraction).map_err(solver)?);
    Ok(out)
}

fn na(cfg: &Loaded, fraction: Option<f64>) -> Result<Output> {
    let fraction = match fraction.or(cfg.config.geometry.as_ref().and_then(|g| g.fraction)) {
        Some(f) => f,
        None => solid_angle_fraction(detector_solid_angle(cfg)?),
    };
    let na = fraction_to_na(fraction).map_err(|e| CliError::at("geometry.fraction", e))?;
    let mut out = Output::new("na");
    out.set("fraction", fraction);
    out.set("na", na);
    Ok(out)
}

fn crosstalk_cmd(cfg: &Loaded) -> Result<Output> {
    let DetectorShape::Rect(rect) = cfg.detector_shape()? else {
        return Err(CliError::at("geometry", "crosstalk needs a rectangular detector"));
    };
    let h = cfg.ion_position()?.z;
    let s = cfg.geometry()?.spacing_factor.unwrap_or(3.0);
    let x = crosstalk(&rect, h, s).map_err(|e| CliError::at("geometry.spacing_factor", e))?;
    let mut out = Output::new("crosstalk");
    out.set("spacing_factor", s);
    out.set("crosstalk", x);
    out.set("point_limit", (1.0 + s * s).powf(-1.5));
    Ok(out)
}

fn zones(cfg: &Loaded) -> Result<Output> {
    let spec = cfg.zones()?;
    let r = trapdet_core::geometry::zone_array(&spec).map_err(|e| CliError::at("zones", e))?;
    let mut out = Output::new("zones");
    out.merge(r);
    Ok(out)
}

fn trap(cfg: &Loaded) -> Result<Output> {
    let layout = cfg.layout()?;
    let (drive, species, [ox, oy]) = cfg.trap()?;
    let sol = find_trap(&layout, &drive, &species, ox, oy).map_err(solver)?;
    let mut out = Output::new("trap");
    out.merge(sol);
    Ok(out)
}

fn absorption_fields(out: &mut Output, r: &AbsorptionResult, a_target: f64) {
    out.set("R", r.r);
    out.set("T", r.t);
    out.set("layer_absorption", &r.layer_absorption);
    out.set("total_absorption", r.total_absorption());
    if let Some(w) = r.a_wire {
        out.set("a_wire", w);
    }
    if let Some(g) = r.a_gap {
        out.set("a_gap", g);
    }
    out.set("A_wire", a_target);
}

fn series(axis: &str, scale: f64, rows: &[(f64, AbsorptionResult)], pick: impl Fn(&AbsorptionResult) -> Result<f64>) -> Result<Table> {
    let mut t = Table::new([axis, "R", "T", "A_wire"]);
    for (x, r) in rows {
        t.push(vec![num(x * scale), num(r.r), num(r.t), num(pick(r)?)]);
    }
    Ok(t)
}

fn stack(cfg: &Loaded, grating: bool) -> Result<Output> {
    let o: Optics = cfg.optics()?;
    let (name, g) = if grating {
        ("grating", Some(o.grating.as_ref().ok_or_else(|| CliError::at("optics.grating", "missing from config"))?))
    } else {
        ("stack", None)
    };
    let target = if grating { o.grating_target() } else { o.stack_target() };
    let pick = |r: &AbsorptionResult| target.pick(r, g).map_err(optics_err);
    let r = match g {
        Some(g) => rcwa_solve(&o.stack, g, &o.wave, o.harmonics),
        None => tmm_solve(&o.stack, &o.wave),
    }
    .map_err(optics_err)?;
    let mut out = Output::new(name);
    absorption_fields(&mut out, &r, pick(&r)?);
    if grating {
        out.set("harmonics", o.harmonics);
    }
    out.set("predicted_sde", pick(&r)? * o.internal_efficiency);
    out.set("energy_residual", r.energy_residual());
    if let Some(wl) = cfg.wavelength_scan()? {
        let rows = wavelength_scan(&o.stack, g, o.harmonics, &o.wave, &wl).map_err(optics_err)?;
        out.table = Some(series("wavelength_nm", PER_NM, &rows, pick)?);
    }
    Ok(out)
}

fn spacer(cfg: &Loaded) -> Result<Output> {
    let o = cfg.optics()?;
    let (layer, range, step) = cfg.spacer()?;
    if layer >= o.stack.layers.len() {
        return Err(CliError::at("optics.spacer.layer", format!("no layer {layer} in a stack of {}", o.stack.layers.len())));
    }
    let target = if o.grating.is_some() { o.grating_target() } else { o.stack_target() };
    let scan = optimize_spacer(&o.stack, o.grating.as_ref(), o.harmonics, &o.wave, layer, range, step, target).map_err(optics_err)?;
    let mut out = Output::new("optimize-spacer");
    out.set("layer", layer);
    out.set("best_thickness", scan.best_thickness);
    out.set("best_absorption", scan.best_absorption);
    out.set("predicted_sde", scan.best_absorption * o.internal_efficiency);
    out.table = Some(series("thickness_nm", PER_NM, &scan.curve, |r| target.pick(r, o.grating.as_ref()).map_err(optics_err))?);
    Ok(out)
}

fn rejection(cfg: &Loaded) -> Result<Output> {
    let o = cfg.optics()?;
    let (uv, ir) = cfg.rejection()?;
    let target = if o.grating.is_some() { o.grating_target() } else { o.stack_target() };
    let wave = |wavelength| PlaneWave { wavelength, ..o.wave };
    let r = rejection_ratio(&o.stack, o.grating.as_ref(), o.harmonics, &wave(uv), &wave(ir), target).map_err(optics_err)?;
    let mut out = Output::new("rejection");
    out.merge(r);
    Ok(out)
}

fn profile_json(p: &InducedCurrentProfile) -> Value {
    let segments: Vec<Value> = p
        .magnitudes()
        .iter()
        .zip(p.phases())
        .enumerate()
        .map(|(k, (m, ph))| json!({ "segment": k, "magnitude_uA": m * PER_UA, "phase_deg": ph.to_degrees() }))
        .collect();
    json!({
        "segments": segments,
        "min_uA": p.min * PER_UA,
        "max_uA": p.max * PER_UA,
        "phase_span_deg": p.phase_span.to_degrees(),
        "uniform_component_uA": p.uniform_component() * PER_UA,
    })
}

fn induced(cfg: &Loaded) -> Result<Output> {
    let spec = cfg.meander()?;
    let p = induced_currents(&spec).map_err(solver)?;
    let mut out = Output::new("induced-current");
    out.merge(profile_json(&p));
    let mut t = Table::new(["segment", "magnitude_uA", "phase_deg"]);
    for (k, (m, ph)) in p.magnitudes().iter().zip(p.phases()).enumerate() {
        t.push(vec![k.to_string(), num(m * PER_UA), num(ph.to_degrees())]);
    }
    out.table = Some(t);
    Ok(out)
}

fn cancel(cfg: &Loaded) -> Result<Output> {
    let spec = cfg.meander()?;
    let search = cfg.tone_search()?;
    let r = optimize_cancellation(&spec, &search).map_err(solver)?;
    let mut out = Output::new("cancel");
    out.set(
        "tone",
        json!({
            "amplitude_V": r.tone.amplitude,
            "phase_deg": r.tone.phase.to_degrees(),
            "source_impedance_ohm": r.tone.source_impedance,
            "attenuation_db": r.tone.attenuation_db,
        }),
    );
    out.set("uncancelled", profile_json(&r.uncancelled));
    out.set("residual", profile_json(&r.residual));
    out.set("peak_ratio", r.residual.max / r.uncancelled.max);
    let mut t = Table::new(["segment", "uncancelled_uA", "uncancelled_deg", "residual_uA", "residual_deg"]);
    let (um, up, rm, rp) = (r.uncancelled.magnitudes(), r.uncancelled.phases(), r.residual.magnitudes(), r.residual.phases());
    for k in 0..um.len() {
        t.push(vec![k.to_string(), num(um[k] * PER_UA), num(up[k].to_degrees()), num(rm[k] * PER_UA), num(rp[k].to_degrees())]);
    }
    out.table = Some(t);
    Ok(out)
}

fn detector_err(e: DetectorError) -> CliError {
    match e {
        DetectorError::InvalidInput(_) | DetectorError::InvertedScenario { .. } => CliError::at("detector", e),
        _ => CliError::solver(e),
    }
}

fn sde(cfg: &Loaded) -> Result<Output> {
    let curve = cfg.sde_curve()?;
    let bias = cfg.rf_bias()?;
    let samples = cfg.samples()?;
    let r = effective_sde(&curve, &bias, samples).map_err(detector_err)?;
    let bcr = match cfg.bcr()? {
        // a latched wire does not count
        Some(_) if r.latched => Some(0.0),
        Some(b) => Some(effective_bcr(&b, &bias, curve.i_sw(), samples).map_err(detector_err)?),
        None => None,
    };
    let mut out = Output::new("sde");
    out.set("bias_uA", bias.i_dc * PER_UA);
    out.set("effective_sde", r.effective);
    out.set("effective_bcr_cps", bcr);
    out.set("latched", r.latched);
    out.set("e_hi", r.e_hi);
    out.set("e_lo", r.e_lo);
    out.set("dc_sde", sde_dc(&curve, bias.i_dc).ok());
    out.set("peak_rf_uA", bias.profile.max_amplitude() * PER_UA);
    Ok(out)
}

fn switching(cfg: &Loaded) -> Result<Output> {
    let curve = cfg.sde_curve()?;
    let bias = cfg.rf_bias()?;
    let observed = observed_switching_current(curve.i_sw(), &bias.profile).map_err(detector_err)?;
    let mut out = Output::new("switching");
    out.set("i_sw_uA", curve.i_sw() * PER_UA);
    out.set("peak_rf_uA", bias.profile.max_amplitude() * PER_UA);
    out.set("observed_switching_uA", observed * PER_UA);
    let d = cfg.detector_cfg()?;
    if d.inductance.is_some() || d.nanowire.is_some() {
        let (l, _) = cfg.inductance()?;
        let (z, k) = cfg.z_load()?;
        let t = pulse_time_constant(l, z, k).map_err(detector_err)?;
        out.set("inductance_nH", l * PER_NM);
        out.set("z_load_ohm", z);
        out.set("tau_ns", t.tau * PER_NM);
        out.set("max_count_rate_cps", t.max_count_rate);
        out.set("recovery_factor", t.recovery_factor);
        out.set("degenerate", t.degenerate);
    }
    Ok(out)
}

fn fidelity(cfg: &Loaded) -> Result<Output> {
    let f = cfg.fidelity_cfg()?;
    let q = |path: &str, t: &str, dim| units::parse(t, dim).map_err(|e| CliError::at(path, e));
    let curve = cfg.sde_curve()?;
    let bias = cfg.rf_bias()?;
    let scenario = CountingScenario {
        bright_rate: q("fidelity.bright_rate", &f.bright_rate, Dim::Rate)?,
        stray_rate: f.stray_rate.as_deref().map_or(Ok(0.0), |s| q("fidelity.stray_rate", s, Dim::Rate))?,
        background: cfg.bcr()?.unwrap_or(BcrModel { b0: 0.0, i_scale: 1.0 }),
        bias: bias.clone(),
        i_sw: curve.i_sw(),
        integration_time: q("fidelity.integration_time", &f.integration_time, Dim::Time)?,
    };
    let sde = match f.sde {
        Some(s) if (0.0..=1.0).contains(&s) => s,
        Some(_) => return Err(CliError::at("fidelity.sde", "must lie in [0, 1]")),
        None => effective_sde(&curve, &bias, cfg.samples()?).map_err(detector_err)?.effective,
    };
    let r = readout_fidelity(&scenario, sde).map_err(detector_err)?;
    let mut out = Output::new("fidelity");
    out.set("sde", sde);
    out.merge(r);
    Ok(out)
}

/// Paths from flags are taken as given; paths from the config resolve
/// against its directory.
fn fit_inputs(cfg: &Loaded, args: &FitArgs) -> Result<(MeasuredCurve, MeasuredCurve)> {
    let f = cfg.fit_cfg();
    let pick = |flag: &Option<PathBuf>, key: &Option<String>, name: &str| -> Result<PathBuf> {
        match (flag, key) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(k)) => Ok(cfg.file(k)),
            (None, None) => Err(CliError::Usage(format!("fit needs --{name} or fit.{} in the config", name.replace('-', "_")))),
        }
    };
    let off = csvio::read_measured(&pick(&args.rf_off, &f.rf_off, "rf-off")?, CurveLabel::RfOff)?;
    let on = csvio::read_measured(&pick(&args.rf_on, &f.rf_on, "rf-on")?, CurveLabel::RfOn)?;
    Ok((off, on))
}

fn fit_once(dc: &DcCurve, on: &MeasuredCurve, config: &FitConfig, gradient: bool) -> Result<(FitResult, Option<(FitResult, f64, bool)>)> {
    if gradient {
        let g = gradient_model_fit(dc, on, config).map_err(solver)?;
        Ok((g.fit, Some((g.two_parameter, g.delta_residual, g.significant))))
    } else {
        Ok((fit_rf_model(dc, on, config).map_err(solver)?, None))
    }
}

fn fit(cfg: &Loaded, args: &FitArgs) -> Result<Output> {
    let (off, on) = fit_inputs(cfg, args)?;
    let (config, fraction) = cfg.fit_config()?;
    let dc = build_dc_curve(&off, fraction).map_err(|e| CliError::Validation(format!("rf-off curve: {e}")))?;
    let gradient = args.gradient || cfg.fit_cfg().gradient.unwrap_or(false);
    let (best, nested) = fit_once(&dc, &on, &config, gradient)?;
    let mut out = Output::new("fit");
    out.merge(&best);
    out.set("plateau_rate", dc.plateau_rate);
    out.set("plateau_flagged", dc.plateau_flagged);
    if let Some((two, delta, significant)) = nested {
        out.set("two_parameter", two);
        out.set("delta_residual", delta);
        out.set("gradient_significant", significant);
    }
    let replicates = args.bootstrap.or(cfg.fit_cfg().bootstrap).unwrap_or(0);
    if replicates > 0 {
        out.set("bootstrap", bootstrap(&dc, &on, &config, &best, replicates, cfg.seed())?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
struct Spread {
    mean: f64,
    std: f64,
    p025: f64,
    p975: f64,
}

fn spread(mut v: Vec<f64>) -> Spread {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    v.sort_by(f64::total_cmp);
    let at = |p: f64| v[((p * (n - 1.0)).round() as usize).min(v.len() - 1)];
    Spread { mean, std, p025: at(0.025), p975: at(0.975) }
}

/// Residual bootstrap: each replicate adds resampled residuals to the best
/// model. Replicate `k` draws from its own stream of the run seed, so the
/// result does not depend on scheduling.
fn bootstrap(dc: &DcCurve, on: &MeasuredCurve, config: &FitConfig, best: &FitResult, replicates: usize, seed: u64) -> Result<Value> {
    let biases: Vec<f64> = on.samples.iter().map(|s| s.0).collect();
    let model = model_rates(dc, &biases, best.i_rf, best.delta_i_dc, best.gradient, config);
    let residuals: Vec<f64> = on.samples.iter().zip(&model).map(|(s, m)| s.1 - m).collect();
    let fits: Vec<Result<FitResult>> = (0..replicates)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let samples = biases.iter().zip(&model).map(|(&b, &m)| (b, (m + residuals[rng.gen_range(0..residuals.len())]).max(0.0))).collect();
            let replica = MeasuredCurve { samples, counts: on.counts.clone(), label: on.label };
            Ok(fit_once(dc, &replica, config, best.gradient.is_some())?.0)
        })
        .collect();
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let mut v = json!({
        "replicates": replicates,
        "seed": seed,
        "i_rf": spread(fits.iter().map(|f| f.i_rf).collect()),
        "delta_i_dc": spread(fits.iter().map(|f| f.delta_i_dc).collect()),
    });
    if best.gradient.is_some() {
        v["gradient"] = serde_json::to_value(spread(fits.iter().filter_map(|f| f.gradient).collect())).expect("plain data");
    }
    Ok(v)
}
