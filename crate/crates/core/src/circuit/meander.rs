//! Lumped model of rf pickup in a meandered nanowire next to a trap electrode.
//!
//! The meander is a chain of equal inductors. Every junction couples to the
//! rf electrode through a capacitor, and each lead is a transmission line cut
//! in two halves with a third of the lead coupling at the chip end, the
//! midpoint and the far end. The rf electrode is an ideal source.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

use super::{ac_solve, AcSolution, CircuitError, Element, Netlist, NodeId, GROUND};
use crate::constants::VACUUM_PERMITTIVITY;

/// `ε0 εr A / d`.
pub fn parallel_plate_capacitance(eps_r: f64, area: f64, gap: f64) -> f64 {
    VACUUM_PERMITTIVITY * eps_r * area / gap
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Termination {
    Short,
    Resistor(f64),
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LeadSpec {
    pub z0: f64,
    /// Electrical length of the whole lead at the drive frequency, radians.
    pub electrical_length: f64,
    /// Total lead-to-rf coupling, farads.
    pub coupling: f64,
    pub termination: Termination,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RfSource {
    pub v_pk: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeanderCouplingSpec {
    pub n_segments: usize,
    pub l_total: f64,
    /// Junction-to-rf capacitances, left to right, `n_segments + 1` entries.
    pub c_meander: Vec<f64>,
    /// Lead at junction 0. The default device shorts it.
    pub left: LeadSpec,
    /// Lead at junction `n_segments`, the detector output.
    pub right: LeadSpec,
    pub rf: RfSource,
}

// Plate estimates for the default capacitances. The rf electrode wall
// (7 µm electroplated gold) faces the meander and the leads across a gap.
const WALL_HEIGHT: f64 = 7e-6;
const MEANDER_FACING_LENGTH: f64 = 32e-6;
const MEANDER_GAP: f64 = 20e-6;
const LEAD_FACING_LENGTH: f64 = 1.45e-3;
const LEAD_GAP: f64 = 50e-6;
// about 1.6 cm of board trace at 46 MHz
const LEAD_ELECTRICAL_LENGTH: f64 = 0.03;

impl MeanderCouplingSpec {
    /// 550 nH meander in eight segments, 25 V at 46.23 MHz, left lead
    /// shorted and right lead into 50 Ω.
    pub fn default_device() -> Self {
        let n_segments = 8;
        let c_node = parallel_plate_capacitance(1.0, WALL_HEIGHT * MEANDER_FACING_LENGTH, MEANDER_GAP);
        let c_lead = parallel_plate_capacitance(1.0, WALL_HEIGHT * LEAD_FACING_LENGTH, LEAD_GAP);
        let lead = |termination| LeadSpec { z0: 50.0, electrical_length: LEAD_ELECTRICAL_LENGTH, coupling: c_lead, termination };
        Self {
            n_segments,
            l_total: 550e-9,
            c_meander: alloc::vec![c_node; n_segments + 1],
            left: lead(Termination::Short),
            right: lead(Termination::Resistor(50.0)),
            rf: RfSource { v_pk: 25.0, omega: 2.0 * PI * 46.23e6 },
        }
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        let bad = |m| Err(CircuitError::InvalidSpec(m));
        if self.n_segments == 0 {
            return bad("n_segments must be >= 1");
        }
        if !(self.l_total > 0.0) || !self.l_total.is_finite() {
            return bad("l_total must be positive");
        }
        if self.c_meander.len() != self.n_segments + 1 {
            return bad("c_meander needs n_segments + 1 entries");
        }
        if self.c_meander.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return bad("capacitances must be >= 0");
        }
        for lead in [&self.left, &self.right] {
            if !(lead.coupling >= 0.0) || !lead.coupling.is_finite() {
                return bad("capacitances must be >= 0");
            }
            if !(lead.z0 > 0.0) || !(lead.electrical_length >= 0.0) {
                return bad("lead lines need z0 > 0 and electrical length >= 0");
            }
            if let Termination::Resistor(r) = lead.termination {
                if !(r > 0.0) || !r.is_finite() {
                    return bad("termination resistance must be positive");
                }
            }
        }
        if !(self.rf.omega > 0.0) || !self.rf.v_pk.is_finite() {
            return bad("rf source needs omega > 0 and finite amplitude");
        }
        Ok(())
    }
}

/// A built meander netlist with the indices needed to read it back.
#[derive(Debug, Clone)]
pub struct MeanderNetwork {
    pub netlist: Netlist,
    pub rf_node: NodeId,
    /// Junctions `0..=n_segments`.
    pub junctions: Vec<NodeId>,
    /// Inductor element per segment, current read left to right.
    pub segments: Vec<usize>,
    pub rf_source: usize,
    /// Series source behind the output termination, if present.
    pub tone_source: Option<usize>,
}

pub fn build_meander_network(spec: &MeanderCouplingSpec) -> Result<MeanderNetwork, CircuitError> {
    build(spec, Complex64::new(spec.rf.v_pk, 0.0), None)
}

fn build(spec: &MeanderCouplingSpec, rf_volts: Complex64, tone: Option<Complex64>) -> Result<MeanderNetwork, CircuitError> {
    spec.validate()?;
    let mut n = Netlist::new();
    let rf_node = n.node();
    let rf_source = n.add(Element::VoltageSource { plus: rf_node, minus: GROUND, volts: rf_volts });
    let junctions: Vec<NodeId> = (0..=spec.n_segments).map(|_| n.node()).collect();
    let l_seg = spec.l_total / spec.n_segments as f64;
    let segments = junctions.windows(2).map(|w| n.add(Element::Inductor { a: w[0], b: w[1], henries: l_seg })).collect();
    let couple = |n: &mut Netlist, node: NodeId, c: f64| {
        if c > 0.0 {
            n.add(Element::Capacitor { a: node, b: rf_node, farads: c });
        }
    };
    for (&node, &c) in junctions.iter().zip(&spec.c_meander) {
        couple(&mut n, node, c);
    }

    let mut tone_source = None;
    for (lead, chip, is_output) in [(&spec.left, junctions[0], false), (&spec.right, junctions[spec.n_segments], true)] {
        let (mid, far) = (n.node(), n.node());
        let half = 0.5 * lead.electrical_length;
        n.add(Element::TransmissionLine { port1: (chip, GROUND), port2: (mid, GROUND), z0: lead.z0, electrical_length: half });
        n.add(Element::TransmissionLine { port1: (mid, GROUND), port2: (far, GROUND), z0: lead.z0, electrical_length: half });
        for node in [chip, mid, far] {
            couple(&mut n, node, lead.coupling / 3.0);
        }
        match (lead.termination, is_output.then_some(tone).flatten()) {
            (Termination::Short, None) => {
                n.add(Element::VoltageSource { plus: far, minus: GROUND, volts: Complex64::new(0.0, 0.0) });
            }
            (Termination::Resistor(ohms), None) => {
                n.add(Element::Resistor { a: far, b: GROUND, ohms });
            }
            (Termination::Resistor(ohms), Some(volts)) => {
                let src = n.node();
                n.add(Element::Resistor { a: far, b: src, ohms });
                tone_source = Some(n.add(Element::VoltageSource { plus: src, minus: GROUND, volts }));
            }
            (Termination::Open, None) => {}
            (_, Some(_)) => return Err(CircuitError::Unsupported("cancellation tone needs a resistive output termination")),
        }
    }
    Ok(MeanderNetwork { netlist: n, rf_node, junctions, segments, rf_source, tone_source })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InducedCurrentProfile {
    /// Segment currents, left (junction 0) to right.
    pub currents: Vec<Complex64>,
    pub min: f64,
    pub max: f64,
    /// Spread of the unwrapped segment phases, radians.
    pub phase_span: f64,
}

impl InducedCurrentProfile {
    pub fn from_currents(currents: Vec<Complex64>) -> Self {
        let mags = currents.iter().map(|c| c.norm());
        let min = mags.clone().fold(f64::INFINITY, f64::min);
        let max = mags.fold(0.0, f64::max);
        let mut phases: Vec<f64> = Vec::with_capacity(currents.len());
        for c in &currents {
            let mut p = c.arg();
            if let Some(&prev) = phases.last() {
                while p - prev > PI {
                    p -= 2.0 * PI;
                }
                while p - prev < -PI {
                    p += 2.0 * PI;
                }
            }
            phases.push(p);
        }
        let span = phases.iter().copied().fold(f64::NEG_INFINITY, f64::max) - phases.iter().copied().fold(f64::INFINITY, f64::min);
        Self { currents, min, max, phase_span: if max > 0.0 { span } else { 0.0 } }
    }

    /// Magnitude of the mean segment phasor.
    pub fn uniform_component(&self) -> f64 {
        let sum: Complex64 = self.currents.iter().sum();
        sum.norm() / self.currents.len() as f64
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.currents.iter().map(|c| c.norm()).collect()
    }

    pub fn phases(&self) -> Vec<f64> {
        self.currents.iter().map(|c| c.arg()).collect()
    }
}

fn profile(net: &MeanderNetwork, sol: &AcSolution) -> InducedCurrentProfile {
    InducedCurrentProfile::from_currents(net.segments.iter().map(|&e| sol.branch_currents[e].value()).collect())
}

pub fn induced_currents(spec: &MeanderCouplingSpec) -> Result<InducedCurrentProfile, CircuitError> {
    let net = build_meander_network(spec)?;
    Ok(profile(&net, &ac_solve(&net.netlist, spec.rf.omega)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CancellationTone {
    /// Amplitude at the generator, before the coupler.
    pub amplitude: f64,
    pub phase: f64,
    /// Equal to the output termination resistance.
    pub source_impedance: f64,
    pub attenuation_db: f64,
}

impl CancellationTone {
    /// Thevenin voltage behind the output termination.
    pub fn injected(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude * attenuation_factor(self.attenuation_db), self.phase)
    }
}

fn attenuation_factor(db: f64) -> f64 {
    10f64.powf(-db / 20.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ToneSearch {
    /// Upper amplitude bound at the generator; `None` picks twice the
    /// least-squares amplitude.
    pub amplitude_max: Option<f64>,
    pub amplitude_points: usize,
    pub phase_points: usize,
    pub attenuation_db: f64,
}

impl Default for ToneSearch {
    fn default() -> Self {
        Self { amplitude_max: None, amplitude_points: 41, phase_points: 72, attenuation_db: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CancellationResult {
    pub tone: CancellationTone,
    pub uncancelled: InducedCurrentProfile,
    pub residual: InducedCurrentProfile,
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Finds the tone that minimizes the largest segment current.
pub fn optimize_cancellation(spec: &MeanderCouplingSpec, search: &ToneSearch) -> Result<CancellationResult, CircuitError> {
    let source_impedance = match spec.right.termination {
        Termination::Resistor(r) => r,
        _ => return Err(CircuitError::Unsupported("cancellation tone needs a resistive output termination")),
    };
    if search.amplitude_points < 2 || search.phase_points < 2 || !search.attenuation_db.is_finite() {
        return Err(CircuitError::InvalidSpec("tone search needs at least two points per axis"));
    }
    let w = spec.rf.omega;
    let zero = Complex64::new(0.0, 0.0);
    let rf_net = build(spec, Complex64::new(spec.rf.v_pk, 0.0), Some(zero))?;
    let base = profile(&rf_net, &ac_solve(&rf_net.netlist, w)?);
    let unit_net = build(spec, zero, Some(Complex64::new(1.0, 0.0)))?;
    let unit = profile(&unit_net, &ac_solve(&unit_net.netlist, w)?).currents;

    let att = attenuation_factor(search.attenuation_db);
    let objective = |amp: f64, phase: f64| {
        let z = Complex64::from_polar(amp * att, phase);
        base.currents.iter().zip(&unit).map(|(i0, j)| (i0 + z * j).norm()).fold(0.0, f64::max)
    };
    let amp_max = match search.amplitude_max {
        Some(a) if a >= 0.0 && a.is_finite() => a,
        Some(_) => return Err(CircuitError::InvalidSpec("amplitude_max must be >= 0")),
        None => {
            let jj: f64 = unit.iter().map(|j| j.norm_sqr()).sum();
            let ji: Complex64 = unit.iter().zip(&base.currents).map(|(j, i)| j.conj() * i).sum();
            if jj > 0.0 { 2.0 * (ji / jj).norm() / att } else { 0.0 }
        }
    };

    let (mut best_a, mut best_p, mut best) = (0.0, 0.0, objective(0.0, 0.0));
    let da = amp_max / (search.amplitude_points - 1) as f64;
    let dp = 2.0 * PI / search.phase_points as f64;
    for i in 0..search.amplitude_points {
        for k in 0..search.phase_points {
            let (a, p) = (i as f64 * da, -PI + k as f64 * dp);
            let v = objective(a, p);
            if v < best {
                (best_a, best_p, best) = (a, p, v);
            }
        }
    }
    let (mut ha, mut hp) = (da, dp);
    for _ in 0..3 {
        let a = golden_min(|a| objective(a, best_p), (best_a - ha).max(0.0), (best_a + ha).min(amp_max));
        if objective(a, best_p) < best {
            best_a = a;
            best = objective(a, best_p);
        }
        let p = golden_min(|p| objective(best_a, p), best_p - hp, best_p + hp);
        if objective(best_a, p) < best {
            best_p = p;
            best = objective(best_a, p);
        }
        ha *= 0.5;
        hp *= 0.5;
    }
    let best_p = best_p - 2.0 * PI * ((best_p + PI) / (2.0 * PI)).floor();

    let tone = CancellationTone { amplitude: best_a, phase: best_p, source_impedance, attenuation_db: search.attenuation_db };
    let net = build(spec, Complex64::new(spec.rf.v_pk, 0.0), Some(tone.injected()))?;
    let residual = profile(&net, &ac_solve(&net.netlist, w)?);
    Ok(CancellationResult { tone, uncancelled: base, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    const UA: f64 = 1e-6;

    #[test]
    fn default_device_profile() {
        let p = induced_currents(&MeanderCouplingSpec::default_device()).unwrap();
        let mags = p.magnitudes();
        assert!(p.min >= 3.5 * UA && p.max <= 6.5 * UA, "{mags:?}");
        let excess = mags[0] - mags[7];
        assert!((excess - 1.2 * UA).abs() <= 0.4 * UA, "{excess}");
        let span = p.phase_span.to_degrees();
        assert!((40.0..=60.0).contains(&span), "{span}");
    }

    #[test]
    fn structure() {
        let spec = MeanderCouplingSpec::default_device();
        let net = build_meander_network(&spec).unwrap();
        assert_eq!(net.junctions.len(), 9);
        assert_eq!(net.segments.len(), 8);
        // rf node, junctions, two nodes per lead
        assert_eq!(net.netlist.node_count, 1 + 1 + 9 + 4);
        let inductors = net.netlist.elements.iter().filter(|e| matches!(e, Element::Inductor { .. })).count();
        assert_eq!(inductors, 8);
    }

    #[test]
    fn no_coupling_no_current() {
        let mut spec = MeanderCouplingSpec::default_device();
        spec.c_meander.iter_mut().for_each(|c| *c = 0.0);
        spec.left.coupling = 0.0;
        spec.right.coupling = 0.0;
        let p = induced_currents(&spec).unwrap();
        assert!(p.currents.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn symmetric_terminations_suppress_uniform_part() {
        let spec = MeanderCouplingSpec::default_device();
        let asym = induced_currents(&spec).unwrap().uniform_component();
        let mut sym = spec.clone();
        sym.left.termination = Termination::Resistor(50.0);
        let sym = induced_currents(&sym).unwrap().uniform_component();
        assert!(sym * 10.0 <= asym, "{sym} vs {asym}");
    }

    #[test]
    fn larger_inductance_lowers_peak_current() {
        let spec = MeanderCouplingSpec::default_device();
        let mut big = spec.clone();
        big.l_total *= 10.0;
        assert!(induced_currents(&big).unwrap().max < induced_currents(&spec).unwrap().max);
    }

    #[test]
    fn linear_in_drive() {
        let spec = MeanderCouplingSpec::default_device();
        let mut double = spec.clone();
        double.rf.v_pk *= 2.0;
        let (a, b) = (induced_currents(&spec).unwrap(), induced_currents(&double).unwrap());
        for (x, y) in a.currents.iter().zip(&b.currents) {
            assert!((y - x * 2.0).norm() <= 1e-12 * b.max);
        }
    }

    #[test]
    fn uniform_profile_cancels() {
        let mut spec = MeanderCouplingSpec::default_device();
        spec.c_meander.iter_mut().for_each(|c| *c = 0.0);
        spec.left.coupling = 0.0;
        let r = optimize_cancellation(&spec, &ToneSearch::default()).unwrap();
        assert!(r.uncancelled.max > 0.0);
        assert!(r.residual.max <= 1e-3 * r.uncancelled.max, "{} {}", r.residual.max, r.uncancelled.max);
    }

    #[test]
    fn default_device_partial_cancellation() {
        let spec = MeanderCouplingSpec::default_device();
        let r = optimize_cancellation(&spec, &ToneSearch::default()).unwrap();
        assert!(r.residual.max > 0.0);
        assert!(r.residual.max <= 0.45 * r.uncancelled.max, "{} {}", r.residual.max, r.uncancelled.max);
        let unshifted = induced_currents(&spec).unwrap();
        // the open tone port leaves the rf-only solution unchanged
        assert!((unshifted.max - r.uncancelled.max).abs() <= 1e-12 * unshifted.max);

        let mut flipped = r.tone;
        flipped.phase += PI;
        let net = build(&spec, Complex64::new(spec.rf.v_pk, 0.0), Some(flipped.injected())).unwrap();
        let anti = profile(&net, &ac_solve(&net.netlist, spec.rf.omega).unwrap());
        assert!(anti.max >= r.uncancelled.max);
    }

    #[test]
    fn cancellation_needs_resistive_output() {
        let mut spec = MeanderCouplingSpec::default_device();
        spec.right.termination = Termination::Open;
        assert!(matches!(optimize_cancellation(&spec, &ToneSearch::default()), Err(CircuitError::Unsupported(_))));
    }

    #[test]
    fn spec_validation() {
        let mut spec = MeanderCouplingSpec::default_device();
        spec.c_meander.pop();
        assert!(build_meander_network(&spec).is_err());
        let mut spec = MeanderCouplingSpec::default_device();
        spec.n_segments = 0;
        assert!(build_meander_network(&spec).is_err());
        let mut spec = MeanderCouplingSpec::default_device();
        spec.left.coupling = -1e-15;
        assert!(build_meander_network(&spec).is_err());
    }

    #[test]
    fn profile_summary() {
        let p = InducedCurrentProfile::from_currents(alloc::vec![
            Complex64::from_polar(1.0, 3.0),
            Complex64::from_polar(2.0, -3.0),
        ]);
        assert_eq!((p.min, p.max), (1.0, 2.0));
        assert!((p.phase_span - (2.0 * PI - 6.0)).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn optimizer_never_worse_than_baseline(scale in proptest::collection::vec(0.0..3.0f64, 9), lead in 0.0..3.0f64, r in 10.0..200.0f64) {
                let mut spec = MeanderCouplingSpec::default_device();
                for (c, s) in spec.c_meander.iter_mut().zip(&scale) {
                    *c *= s;
                }
                spec.right.coupling *= lead;
                spec.right.termination = Termination::Resistor(r);
                let out = optimize_cancellation(&spec, &ToneSearch { amplitude_points: 9, phase_points: 12, ..Default::default() }).unwrap();
                prop_assert!(out.residual.max <= out.uncancelled.max * (1.0 + 1e-12));
            }
        }
    }
}
