//! Run configuration: TOML with unit-suffixed quantities, resolved into core
//! types. Errors name the offending key path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use trapdet_core::circuit::{parallel_plate_capacitance, LeadSpec, MeanderCouplingSpec, RfSource, Termination, ToneSearch};
use trapdet_core::detector::{BcrModel, NanowireGeometry, RfBias, RfProfile, SdeCurve, DEFAULT_RECOVERY_FACTOR, DEFAULT_SAMPLES};
use trapdet_core::fit::{FitConfig, DEFAULT_PLATEAU_FRACTION};
use trapdet_core::geometry::{PlanarPolygon, PlanarRect, Point3, ZoneArraySpec};
use trapdet_core::optics::{AbsorberTarget, Grating1D, Layer, LayerStack, OpticalMaterial, PlaneWave, Polarization, DEFAULT_HARMONICS};
use trapdet_core::trapfields::{Electrode, ElectrodeLayout, IonSpecies, RfDrive};

use crate::csvio;
use crate::error::{CliError, Result};
use crate::units::{self, Dim};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format: Option<Format>,
    pub seed: Option<u64>,
    pub geometry: Option<GeometryCfg>,
    pub zones: Option<ZonesCfg>,
    pub layout: Option<LayoutCfg>,
    pub trap: Option<TrapCfg>,
    pub optics: Option<OpticsCfg>,
    pub meander: Option<MeanderCfg>,
    pub cancel: Option<CancelCfg>,
    pub detector: Option<DetectorCfg>,
    pub fidelity: Option<FidelityCfg>,
    pub fit: Option<FitCfg>,
    pub sweep: Option<SweepCfg>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryCfg {
    pub ion_height: Option<String>,
    pub ion_x: Option<String>,
    pub ion_y: Option<String>,
    pub detector_width: Option<String>,
    pub detector_height: Option<String>,
    pub detector_polygon_um: Option<Vec<[f64; 2]>>,
    pub spacing_factor: Option<f64>,
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZonesCfg {
    pub ion_height: String,
    pub wavelength: String,
    pub waist_factor: f64,
    pub spacing_factor: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutCfg {
    pub electrodes: Vec<ElectrodeCfg>,
}

/// Shapes are vertex lists or `[x0, y0, x1, y1]` rectangles in µm.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeCfg {
    pub name: Option<String>,
    #[serde(default)]
    pub rects_um: Vec<[f64; 4]>,
    #[serde(default)]
    pub polygons_um: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    pub hole_rects_um: Vec<[f64; 4]>,
    #[serde(default)]
    pub hole_polygons_um: Vec<Vec<[f64; 2]>>,
    /// Peak rf potential per volt of drive.
    pub rf: Option<f64>,
    pub dc: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapCfg {
    pub v_pk: String,
    pub rf_frequency: String,
    pub mass: Option<String>,
    pub charge: Option<String>,
    pub origin_um: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsCfg {
    pub wavelength: String,
    pub angle: Option<String>,
    pub polarization: Option<Polarization>,
    pub harmonics: Option<usize>,
    pub internal_efficiency: Option<f64>,
    pub target_layer: Option<usize>,
    pub materials: BTreeMap<String, MaterialCfg>,
    pub ambient: String,
    pub substrate: String,
    pub layers: Vec<LayerCfg>,
    pub grating: Option<GratingCfg>,
    pub spacer: Option<SpacerCfg>,
    pub rejection: Option<RejectionCfg>,
    pub scan: Option<RangeCfg>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialCfg {
    pub n: Option<f64>,
    pub k: Option<f64>,
    /// CSV with `wavelength_nm,n,k`, relative to the config file.
    pub table: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerCfg {
    pub material: String,
    pub thickness: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GratingCfg {
    pub period: String,
    pub fill_factor: f64,
    pub wire: String,
    pub gap: String,
    pub layer: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacerCfg {
    pub layer: usize,
    pub start: String,
    pub stop: String,
    pub step: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RejectionCfg {
    pub uv_wavelength: String,
    pub ir_wavelength: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeCfg {
    pub start: String,
    pub stop: String,
    pub step: String,
}

/// Every key is optional; missing ones take the built-in meander defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanderCfg {
    pub n_segments: Option<usize>,
    pub l_total: Option<String>,
    pub c_meander: Option<Vec<String>>,
    pub c_node: Option<String>,
    pub plates: Option<PlatesCfg>,
    pub left: Option<LeadCfg>,
    pub right: Option<LeadCfg>,
    pub v_pk: Option<String>,
    pub rf_frequency: Option<String>,
}

/// Parallel-plate estimates for the node and lead capacitances.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatesCfg {
    pub eps_r: Option<f64>,
    pub node_area: String,
    pub node_gap: String,
    pub lead_area: String,
    pub lead_gap: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadCfg {
    pub z0: Option<String>,
    pub electrical_length: Option<String>,
    pub coupling: Option<String>,
    /// `short`, `open` or a resistance such as `50 ohm`.
    pub termination: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CancelCfg {
    pub attenuation: Option<String>,
    pub amplitude_max: Option<String>,
    pub amplitude_points: Option<usize>,
    pub phase_points: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorCfg {
    pub curve: CurveCfg,
    pub bcr: Option<BcrCfg>,
    pub i_dc: Option<String>,
    pub i_rf: Option<String>,
    /// `uniform` (default), `gradient` or `meander`.
    pub profile: Option<String>,
    pub gradient: Option<f64>,
    pub segments: Option<usize>,
    pub rf_frequency: Option<String>,
    pub samples: Option<usize>,
    pub nanowire: Option<NanowireCfg>,
    pub inductance: Option<String>,
    pub z_load: Option<String>,
    pub recovery_factor: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveCfg {
    /// `parametric` or `table`.
    pub kind: String,
    pub e_max: Option<f64>,
    pub i_mid: Option<String>,
    pub sigma: Option<String>,
    pub i_sw: String,
    /// CSV with `bias_uA,sde`.
    pub file: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcrCfg {
    pub b0: String,
    pub i_scale: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NanowireCfg {
    pub width: String,
    pub length: String,
    /// Sheet kinetic inductance, e.g. `70 pH` per square.
    pub l_sq: String,
    pub t_c: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityCfg {
    pub bright_rate: String,
    pub stray_rate: Option<String>,
    pub integration_time: String,
    /// Fixed efficiency; otherwise the effective SDE of `[detector]`.
    pub sde: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitCfg {
    pub rf_off: Option<String>,
    pub rf_on: Option<String>,
    pub gradient: Option<bool>,
    pub plateau_fraction: Option<f64>,
    pub i_rf_range: Option<[String; 2]>,
    pub delta_range: Option<[String; 2]>,
    pub gradient_range: Option<[f64; 2]>,
    pub grid: Option<usize>,
    pub samples: Option<usize>,
    pub max_iterations: Option<usize>,
    pub tolerance: Option<String>,
    pub segments: Option<usize>,
    pub bootstrap: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCfg {
    pub parameter: String,
    pub start: toml::Value,
    pub stop: toml::Value,
    pub step: toml::Value,
    pub command: String,
    pub threads: Option<usize>,
}

/// A parsed config with the directory its relative file paths resolve against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub tree: toml::Value,
    pub base: PathBuf,
}

pub fn parse_tree(text: &str, origin: &str) -> Result<toml::Value> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Validation(format!("{origin}: {e}")))?;
    Ok(toml::Value::Table(table))
}

/// Deserializes and checks a TOML tree. Unknown keys and missing files are errors.
pub fn from_tree(tree: toml::Value, base: PathBuf) -> Result<Loaded> {
    let config: RunConfig = serde_path_to_error::deserialize(tree.clone()).map_err(|e| {
        let path = e.path().to_string();
        CliError::at(if path == "." { "config".into() } else { path }, e.into_inner())
    })?;
    let loaded = Loaded { config, tree, base };
    loaded.check_files()?;
    Ok(loaded)
}

/// An empty config, for commands that take everything from flags.
pub fn empty() -> Loaded {
    Loaded { config: RunConfig::default(), tree: toml::Value::Table(toml::Table::new()), base: PathBuf::new() }
}

pub fn load(path: &Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let tree = parse_tree(&text, &path.display().to_string())?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    from_tree(tree, base)
}

fn q(path: &str, text: &str, dim: Dim) -> Result<f64> {
    units::parse(text, dim).map_err(|e| CliError::at(path, e))
}

fn q_opt(path: &str, text: &Option<String>, dim: Dim, default: f64) -> Result<f64> {
    text.as_deref().map_or(Ok(default), |t| q(path, t, dim))
}

fn positive(path: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::at(path, format!("must be positive (got {v})")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::at(path, format!("must be >= 0 (got {v})")))
    }
}

fn missing(path: &str) -> CliError {
    CliError::at(path, "missing from config")
}

impl Loaded {
    pub fn file(&self, rel: &str) -> PathBuf {
        self.base.join(rel)
    }

    fn check_files(&self) -> Result<()> {
        let c = &self.config;
        let mut files: Vec<(String, &str)> = Vec::new();
        if let Some(o) = &c.optics {
            for (name, m) in &o.materials {
                if let Some(t) = &m.table {
                    files.push((format!("optics.materials.{name}.table"), t));
                }
            }
        }
        if let Some(f) = c.detector.as_ref().and_then(|d| d.curve.file.as_deref()) {
            files.push(("detector.curve.file".into(), f));
        }
        if let Some(fit) = &c.fit {
            for (key, v) in [("fit.rf_off", &fit.rf_off), ("fit.rf_on", &fit.rf_on)] {
                if let Some(f) = v {
                    files.push((key.into(), f));
                }
            }
        }
        for (key, rel) in files {
            if !self.file(rel).is_file() {
                return Err(CliError::at(key, format!("file `{}` does not exist", self.file(rel).display())));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.config.seed.unwrap_or(0)
    }

    pub fn geometry(&self) -> Result<&GeometryCfg> {
        self.config.geometry.as_ref().ok_or_else(|| missing("geometry"))
    }

    pub fn ion_position(&self) -> Result<Point3> {
        let g = self.geometry()?;
        let h = q("geometry.ion_height", g.ion_height.as_deref().ok_or_else(|| missing("geometry.ion_height"))?, Dim::Length)?;
        let h = positive("geometry.ion_height", h)?;
        let x = q_opt("geometry.ion_x", &g.ion_x, Dim::Length, 0.0)?;
        let y = q_opt("geometry.ion_y", &g.ion_y, Dim::Length, 0.0)?;
        Ok(Point3::new(x, y, h))
    }

    pub fn detector_shape(&self) -> Result<DetectorShape> {
        let g = self.geometry()?;
        match (&g.detector_width, &g.detector_height, &g.detector_polygon_um) {
            (Some(w), Some(h), None) => {
                let w = positive("geometry.detector_width", q("geometry.detector_width", w, Dim::Length)?)?;
                let h = positive("geometry.detector_height", q("geometry.detector_height", h, Dim::Length)?)?;
                PlanarRect::new(0.0, 0.0, w, h).map(DetectorShape::Rect).map_err(|e| CliError::at("geometry", e))
            }
            (None, None, Some(v)) => polygon("geometry.detector_polygon_um", v).map(DetectorShape::Polygon),
            _ => Err(CliError::at("geometry", "give detector_width and detector_height, or detector_polygon_um")),
        }
    }

    pub fn zones(&self) -> Result<ZoneArraySpec> {
        let z = self.config.zones.as_ref().ok_or_else(|| missing("zones"))?;
        let spec = ZoneArraySpec {
            ion_height: positive("zones.ion_height", q("zones.ion_height", &z.ion_height, Dim::Length)?)?,
            wavelength: positive("zones.wavelength", q("zones.wavelength", &z.wavelength, Dim::Length)?)?,
            waist_factor: z.waist_factor,
            spacing_factor: positive("zones.spacing_factor", z.spacing_factor)?,
        };
        if !(0.0..1.0).contains(&spec.waist_factor) || spec.waist_factor == 0.0 {
            return Err(CliError::at("zones.waist_factor", "must lie in (0, 1)"));
        }
        Ok(spec)
    }

    pub fn layout(&self) -> Result<ElectrodeLayout> {
        let l = self.config.layout.as_ref().ok_or_else(|| missing("layout"))?;
        let mut electrodes = Vec::with_capacity(l.electrodes.len());
        for (i, e) in l.electrodes.iter().enumerate() {
            let at = format!("layout.electrodes[{i}]");
            let mut shapes = Vec::new();
            for (j, r) in e.rects_um.iter().enumerate() {
                shapes.push(rect(&format!("{at}.rects_um[{j}]"), r)?);
            }
            for (j, p) in e.polygons_um.iter().enumerate() {
                shapes.push(polygon(&format!("{at}.polygons_um[{j}]"), p)?);
            }
            let mut holes = Vec::new();
            for (j, r) in e.hole_rects_um.iter().enumerate() {
                holes.push(rect(&format!("{at}.hole_rects_um[{j}]"), r)?);
            }
            for (j, p) in e.hole_polygons_um.iter().enumerate() {
                holes.push(polygon(&format!("{at}.hole_polygons_um[{j}]"), p)?);
            }
            if shapes.is_empty() {
                return Err(CliError::at(&at, "electrode needs at least one of rects_um or polygons_um"));
            }
            let rf = e.rf.unwrap_or(0.0);
            if !rf.is_finite() {
                return Err(CliError::at(format!("{at}.rf"), "must be finite"));
            }
            let dc = q_opt(&format!("{at}.dc"), &e.dc, Dim::Voltage, 0.0)?;
            electrodes.push(Electrode { shapes, holes, rf_amplitude: rf, static_potential: dc });
        }
        ElectrodeLayout::new(electrodes).map_err(|e| CliError::at("layout.electrodes", e))
    }

    pub fn trap(&self) -> Result<(RfDrive, IonSpecies, [f64; 2])> {
        let t = self.config.trap.as_ref().ok_or_else(|| missing("trap"))?;
        let v_pk = positive("trap.v_pk", q("trap.v_pk", &t.v_pk, Dim::Voltage)?)?;
        let f = positive("trap.rf_frequency", q("trap.rf_frequency", &t.rf_frequency, Dim::Frequency)?)?;
        let be = IonSpecies::beryllium9();
        let mass = positive("trap.mass", q_opt("trap.mass", &t.mass, Dim::Mass, be.mass)?)?;
        let charge = positive("trap.charge", q_opt("trap.charge", &t.charge, Dim::Charge, be.charge)?)?;
        let o = t.origin_um.unwrap_or([0.0, 0.0]);
        Ok((RfDrive { v_pk, omega_rf: 2.0 * std::f64::consts::PI * f }, IonSpecies { mass, charge }, [o[0] * 1e-6, o[1] * 1e-6]))
    }

    pub fn optics(&self) -> Result<Optics> {
        let o = self.config.optics.as_ref().ok_or_else(|| missing("optics"))?;
        let material = |path: &str, name: &str| -> Result<OpticalMaterial> {
            let m = o.materials.get(name).ok_or_else(|| CliError::at(path, format!("material `{name}` is not defined under optics.materials")))?;
            let mpath = format!("optics.materials.{name}");
            let mat = match (m.n, m.k, &m.table) {
                (Some(n), k, None) => OpticalMaterial::constant(n, k.unwrap_or(0.0)),
                (None, None, Some(t)) => OpticalMaterial::Table(csvio::read_index_table(&self.file(t))?),
                _ => return Err(CliError::at(&mpath, "give n (and optionally k) or a table file")),
            };
            mat.validate().map_err(|e| CliError::at(&mpath, e))?;
            Ok(mat)
        };
        let mut layers = Vec::with_capacity(o.layers.len());
        for (i, l) in o.layers.iter().enumerate() {
            let at = format!("optics.layers[{i}]");
            let thickness = positive(&format!("{at}.thickness"), q(&format!("{at}.thickness"), &l.thickness, Dim::Length)?)?;
            layers.push(Layer { material: material(&format!("{at}.material"), &l.material)?, thickness });
        }
        let stack = LayerStack { ambient: material("optics.ambient", &o.ambient)?, layers, substrate: material("optics.substrate", &o.substrate)? };
        stack.validate().map_err(|e| CliError::at("optics", e))?;
        let wave = PlaneWave {
            wavelength: positive("optics.wavelength", q("optics.wavelength", &o.wavelength, Dim::Length)?)?,
            angle: q_opt("optics.angle", &o.angle, Dim::Angle, 0.0)?,
            polarization: o.polarization.unwrap_or(Polarization::Te),
        };
        wave.validate().map_err(|e| CliError::at("optics.angle", e))?;
        let grating = match &o.grating {
            None => None,
            Some(g) => {
                let grating = Grating1D {
                    period: positive("optics.grating.period", q("optics.grating.period", &g.period, Dim::Length)?)?,
                    fill_factor: g.fill_factor,
                    wire: material("optics.grating.wire", &g.wire)?,
                    gap: material("optics.grating.gap", &g.gap)?,
                    layer: g.layer,
                };
                grating.validate(&stack).map_err(|e| CliError::at("optics.grating", e))?;
                Some(grating)
            }
        };
        let harmonics = o.harmonics.unwrap_or(DEFAULT_HARMONICS);
        if harmonics % 2 == 0 {
            return Err(CliError::at("optics.harmonics", "must be odd"));
        }
        if let Some(t) = o.target_layer {
            if t >= stack.layers.len() {
                return Err(CliError::at("optics.target_layer", format!("no layer {t} in a stack of {}", stack.layers.len())));
            }
        }
        let eta = o.internal_efficiency.unwrap_or(1.0);
        if !(0.0..=1.0).contains(&eta) {
            return Err(CliError::at("optics.internal_efficiency", "must lie in [0, 1]"));
        }
        Ok(Optics { stack, wave, grating, harmonics, target_layer: o.target_layer, internal_efficiency: eta })
    }

    pub fn optics_cfg(&self) -> Result<&OpticsCfg> {
        self.config.optics.as_ref().ok_or_else(|| missing("optics"))
    }

    pub fn spacer(&self) -> Result<(usize, (f64, f64), f64)> {
        let s = self.optics_cfg()?.spacer.as_ref().ok_or_else(|| missing("optics.spacer"))?;
        let (a, b, step) = range("optics.spacer", &s.start, &s.stop, &s.step, Dim::Length)?;
        Ok((s.layer, (a, b), step))
    }

    pub fn wavelength_scan(&self) -> Result<Option<Vec<f64>>> {
        let Some(s) = &self.optics_cfg()?.scan else { return Ok(None) };
        let (a, b, step) = range("optics.scan", &s.start, &s.stop, &s.step, Dim::Length)?;
        let n = ((b - a) / step * (1.0 + 1e-12)).floor() as usize + 1;
        Ok(Some((0..n).map(|i| a + i as f64 * step).collect()))
    }

    pub fn rejection(&self) -> Result<(f64, f64)> {
        let r = self.optics_cfg()?.rejection.as_ref().ok_or_else(|| missing("optics.rejection"))?;
        Ok((
            positive("optics.rejection.uv_wavelength", q("optics.rejection.uv_wavelength", &r.uv_wavelength, Dim::Length)?)?,
            positive("optics.rejection.ir_wavelength", q("optics.rejection.ir_wavelength", &r.ir_wavelength, Dim::Length)?)?,
        ))
    }

    pub fn meander(&self) -> Result<MeanderCouplingSpec> {
        let mut spec = MeanderCouplingSpec::default_device();
        let Some(m) = &self.config.meander else { return Ok(spec) };
        if let Some(n) = m.n_segments {
            if n == 0 {
                return Err(CliError::at("meander.n_segments", "must be >= 1"));
            }
            spec.n_segments = n;
            spec.c_meander = vec![spec.c_meander[0]; n + 1];
        }
        spec.l_total = positive("meander.l_total", q_opt("meander.l_total", &m.l_total, Dim::Inductance, spec.l_total)?)?;
        if let Some(p) = &m.plates {
            let eps = p.eps_r.unwrap_or(1.0);
            positive("meander.plates.eps_r", eps)?;
            let node = parallel_plate_capacitance(
                eps,
                positive("meander.plates.node_area", q("meander.plates.node_area", &p.node_area, Dim::Area)?)?,
                positive("meander.plates.node_gap", q("meander.plates.node_gap", &p.node_gap, Dim::Length)?)?,
            );
            let lead = parallel_plate_capacitance(
                eps,
                positive("meander.plates.lead_area", q("meander.plates.lead_area", &p.lead_area, Dim::Area)?)?,
                positive("meander.plates.lead_gap", q("meander.plates.lead_gap", &p.lead_gap, Dim::Length)?)?,
            );
            spec.c_meander = vec![node; spec.n_segments + 1];
            spec.left.coupling = lead;
            spec.right.coupling = lead;
        }
        if let Some(c) = &m.c_node {
            let c = non_negative("meander.c_node", q("meander.c_node", c, Dim::Capacitance)?)?;
            spec.c_meander = vec![c; spec.n_segments + 1];
        }
        if let Some(list) = &m.c_meander {
            if list.len() != spec.n_segments + 1 {
                return Err(CliError::at("meander.c_meander", format!("needs n_segments + 1 = {} entries, got {}", spec.n_segments + 1, list.len())));
            }
            spec.c_meander = list
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let at = format!("meander.c_meander[{i}]");
                    non_negative(&at, q(&at, c, Dim::Capacitance)?)
                })
                .collect::<Result<_>>()?;
        }
        for (side, cfg, lead) in [("left", &m.left, &mut spec.left), ("right", &m.right, &mut spec.right)] {
            if let Some(c) = cfg {
                *lead = resolve_lead(&format!("meander.{side}"), c, lead)?;
            }
        }
        spec.rf = RfSource {
            v_pk: q_opt("meander.v_pk", &m.v_pk, Dim::Voltage, spec.rf.v_pk)?,
            omega: 2.0
                * std::f64::consts::PI
                * positive(
                    "meander.rf_frequency",
                    q_opt("meander.rf_frequency", &m.rf_frequency, Dim::Frequency, spec.rf.omega / (2.0 * std::f64::consts::PI))?,
                )?,
        };
        spec.validate().map_err(|e| CliError::at("meander", e))?;
        Ok(spec)
    }

    pub fn tone_search(&self) -> Result<ToneSearch> {
        let mut s = ToneSearch::default();
        let Some(c) = &self.config.cancel else { return Ok(s) };
        s.attenuation_db = q_opt("cancel.attenuation", &c.attenuation, Dim::Attenuation, s.attenuation_db)?;
        if let Some(a) = &c.amplitude_max {
            s.amplitude_max = Some(positive("cancel.amplitude_max", q("cancel.amplitude_max", a, Dim::Voltage)?)?);
        }
        if let Some(n) = c.amplitude_points {
            if n < 2 {
                return Err(CliError::at("cancel.amplitude_points", "must be >= 2"));
            }
            s.amplitude_points = n;
        }
        if let Some(n) = c.phase_points {
            if n < 4 {
                return Err(CliError::at("cancel.phase_points", "must be >= 4"));
            }
            s.phase_points = n;
        }
        Ok(s)
    }

    pub fn detector_cfg(&self) -> Result<&DetectorCfg> {
        self.config.detector.as_ref().ok_or_else(|| missing("detector"))
    }

    pub fn sde_curve(&self) -> Result<SdeCurve> {
        let c = &self.detector_cfg()?.curve;
        let i_sw = positive("detector.curve.i_sw", q("detector.curve.i_sw", &c.i_sw, Dim::Current)?)?;
        let curve = match c.kind.as_str() {
            "parametric" => SdeCurve::Parametric {
                e_max: c.e_max.ok_or_else(|| missing("detector.curve.e_max"))?,
                i_mid: q("detector.curve.i_mid", c.i_mid.as_deref().ok_or_else(|| missing("detector.curve.i_mid"))?, Dim::Current)?,
                sigma: non_negative(
                    "detector.curve.sigma",
                    q("detector.curve.sigma", c.sigma.as_deref().ok_or_else(|| missing("detector.curve.sigma"))?, Dim::Current)?,
                )?,
                i_sw,
            },
            "table" => {
                let file = c.file.as_deref().ok_or_else(|| missing("detector.curve.file"))?;
                let (x, y) = csvio::read_sde_table(&self.file(file))?;
                SdeCurve::tabulated(x, y, i_sw).map_err(|e| CliError::at("detector.curve.file", e))?
            }
            other => return Err(CliError::at("detector.curve.kind", format!("`{other}` is not `parametric` or `table`"))),
        };
        curve.validate().map_err(|e| CliError::at("detector.curve", e))?;
        Ok(curve)
    }

    pub fn rf_omega(&self) -> Result<f64> {
        let d = self.detector_cfg()?;
        match &d.rf_frequency {
            Some(f) => Ok(2.0 * std::f64::consts::PI * positive("detector.rf_frequency", q("detector.rf_frequency", f, Dim::Frequency)?)?),
            None => Ok(self.meander()?.rf.omega),
        }
    }

    pub fn rf_bias(&self) -> Result<RfBias> {
        let d = self.detector_cfg()?;
        let i_dc = non_negative("detector.i_dc", q("detector.i_dc", d.i_dc.as_deref().ok_or_else(|| missing("detector.i_dc"))?, Dim::Current)?)?;
        let i_rf = non_negative("detector.i_rf", q_opt("detector.i_rf", &d.i_rf, Dim::Current, 0.0)?)?;
        let profile = match d.profile.as_deref().unwrap_or("uniform") {
            "uniform" => RfProfile::Uniform { i_rf },
            "gradient" => RfProfile::linear_gradient(i_rf, d.gradient.unwrap_or(0.0), d.segments.unwrap_or(8)),
            "meander" => {
                let induced = trapdet_core::circuit::induced_currents(&self.meander()?).map_err(CliError::solver)?;
                RfProfile::from_induced(&induced)
            }
            other => return Err(CliError::at("detector.profile", format!("`{other}` is not `uniform`, `gradient` or `meander`"))),
        };
        Ok(RfBias { i_dc, profile, omega: self.rf_omega()? })
    }

    pub fn samples(&self) -> Result<usize> {
        let n = self.detector_cfg()?.samples.unwrap_or(DEFAULT_SAMPLES);
        if n < trapdet_core::detector::MIN_SAMPLES {
            return Err(CliError::at("detector.samples", format!("must be >= {}", trapdet_core::detector::MIN_SAMPLES)));
        }
        Ok(n)
    }

    pub fn bcr(&self) -> Result<Option<BcrModel>> {
        let Some(b) = &self.detector_cfg()?.bcr else { return Ok(None) };
        Ok(Some(BcrModel {
            b0: non_negative("detector.bcr.b0", q("detector.bcr.b0", &b.b0, Dim::Rate)?)?,
            i_scale: positive("detector.bcr.i_scale", q("detector.bcr.i_scale", &b.i_scale, Dim::Current)?)?,
        }))
    }

    /// Kinetic inductance and whether it came from the nanowire geometry.
    pub fn inductance(&self) -> Result<(f64, Option<NanowireGeometry>)> {
        let d = self.detector_cfg()?;
        if let Some(l) = &d.inductance {
            return Ok((positive("detector.inductance", q("detector.inductance", l, Dim::Inductance)?)?, None));
        }
        let n = d.nanowire.as_ref().ok_or_else(|| CliError::at("detector", "give inductance or a [detector.nanowire] table"))?;
        let geom = NanowireGeometry {
            width: positive("detector.nanowire.width", q("detector.nanowire.width", &n.width, Dim::Length)?)?,
            length: positive("detector.nanowire.length", q("detector.nanowire.length", &n.length, Dim::Length)?)?,
            l_sq: positive("detector.nanowire.l_sq", q("detector.nanowire.l_sq", &n.l_sq, Dim::Inductance)?)?,
            t_c: q_opt("detector.nanowire.t_c", &n.t_c, Dim::Temperature, 0.0)?,
        };
        let l = trapdet_core::detector::kinetic_inductance(&geom).map_err(|e| CliError::at("detector.nanowire", e))?;
        Ok((l, Some(geom)))
    }

    pub fn z_load(&self) -> Result<(f64, f64)> {
        let d = self.detector_cfg()?;
        let z = positive("detector.z_load", q_opt("detector.z_load", &d.z_load, Dim::Resistance, 50.0)?)?;
        let k = positive("detector.recovery_factor", d.recovery_factor.unwrap_or(DEFAULT_RECOVERY_FACTOR))?;
        Ok((z, k))
    }

    pub fn fidelity_cfg(&self) -> Result<&FidelityCfg> {
        self.config.fidelity.as_ref().ok_or_else(|| missing("fidelity"))
    }

    pub fn fit_cfg(&self) -> FitCfg {
        self.config.fit.clone().unwrap_or_default()
    }

    pub fn fit_config(&self) -> Result<(FitConfig, f64)> {
        let f = self.fit_cfg();
        let mut c = FitConfig::default();
        let pair = |path: &str, v: &Option<[String; 2]>, default: (f64, f64)| -> Result<(f64, f64)> {
            match v {
                None => Ok(default),
                Some([a, b]) => {
                    let r = (q(path, a, Dim::Current)?, q(path, b, Dim::Current)?);
                    if !(r.0 <= r.1) {
                        return Err(CliError::at(path, "lower bound exceeds upper bound"));
                    }
                    Ok(r)
                }
            }
        };
        c.i_rf_range = pair("fit.i_rf_range", &f.i_rf_range, c.i_rf_range)?;
        c.delta_range = pair("fit.delta_range", &f.delta_range, c.delta_range)?;
        if let Some([a, b]) = f.gradient_range {
            c.gradient_range = (a, b);
        }
        c.grid = f.grid.unwrap_or(c.grid);
        c.samples = f.samples.unwrap_or(c.samples);
        c.max_iterations = f.max_iterations.unwrap_or(c.max_iterations);
        c.tolerance = positive("fit.tolerance", q_opt("fit.tolerance", &f.tolerance, Dim::Current, c.tolerance)?)?;
        c.segments = f.segments.unwrap_or(c.segments);
        let fraction = f.plateau_fraction.unwrap_or(DEFAULT_PLATEAU_FRACTION);
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(CliError::at("fit.plateau_fraction", "must lie in (0, 1]"));
        }
        Ok((c, fraction))
    }
}

/// Resolved optics inputs.
#[derive(Debug, Clone)]
pub struct Optics {
    pub stack: LayerStack,
    pub wave: PlaneWave,
    pub grating: Option<Grating1D>,
    pub harmonics: usize,
    pub target_layer: Option<usize>,
    pub internal_efficiency: f64,
}

impl Optics {
    /// Absorber for grating runs: the wires unless a layer is named.
    pub fn grating_target(&self) -> AbsorberTarget {
        self.target_layer.map_or(AbsorberTarget::Wire, AbsorberTarget::Layer)
    }

    /// Absorber for homogeneous runs: the named layer, else the grating
    /// host layer, else the top layer.
    pub fn stack_target(&self) -> AbsorberTarget {
        AbsorberTarget::Layer(self.target_layer.or(self.grating.as_ref().map(|g| g.layer)).unwrap_or(0))
    }
}

#[derive(Debug, Clone)]
pub enum DetectorShape {
    Rect(PlanarRect),
    Polygon(PlanarPolygon),
}

fn resolve_lead(path: &str, c: &LeadCfg, base: &LeadSpec) -> Result<LeadSpec> {
    let termination = match c.termination.as_deref() {
        None => base.termination,
        Some("short") => Termination::Short,
        Some("open") => Termination::Open,
        Some(r) => Termination::Resistor(positive(&format!("{path}.termination"), q(&format!("{path}.termination"), r, Dim::Resistance)?)?),
    };
    Ok(LeadSpec {
        z0: positive(&format!("{path}.z0"), q_opt(&format!("{path}.z0"), &c.z0, Dim::Resistance, base.z0)?)?,
        electrical_length: non_negative(
            &format!("{path}.electrical_length"),
            q_opt(&format!("{path}.electrical_length"), &c.electrical_length, Dim::Angle, base.electrical_length)?,
        )?,
        coupling: non_negative(&format!("{path}.coupling"), q_opt(&format!("{path}.coupling"), &c.coupling, Dim::Capacitance, base.coupling)?)?,
        termination,
    })
}

fn rect(path: &str, r: &[f64; 4]) -> Result<PlanarPolygon> {
    let um = 1e-6;
    PlanarPolygon::rectangle(r[0] * um, r[1] * um, r[2] * um, r[3] * um).map_err(|e| CliError::at(path, e))
}

fn polygon(path: &str, v: &[[f64; 2]]) -> Result<PlanarPolygon> {
    PlanarPolygon::new(v.iter().map(|p| [p[0] * 1e-6, p[1] * 1e-6]).collect()).map_err(|e| CliError::at(path, e))
}

fn range(path: &str, start: &str, stop: &str, step: &str, dim: Dim) -> Result<(f64, f64, f64)> {
    let a = positive(&format!("{path}.start"), q(&format!("{path}.start"), start, dim)?)?;
    let b = q(&format!("{path}.stop"), stop, dim)?;
    let s = positive(&format!("{path}.step"), q(&format!("{path}.step"), step, dim)?)?;
    if !(b >= a) {
        return Err(CliError::at(format!("{path}.stop"), "must not be below start"));
    }
    Ok((a, b, s))
}
