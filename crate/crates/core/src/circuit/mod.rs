//! Small-signal AC circuit analysis by modified nodal analysis (MNA).
//!
//! Phasors use the engineering convention `v(t) = Re(V e^{jωt})`. Node 0 is
//! ground. Two-port transmission lines enter as their ABCD equations, so
//! zero and half-wave electrical lengths need no special casing.

mod meander;

use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods need std
use num_traits::Float;

pub use meander::{
    build_meander_network, induced_currents, optimize_cancellation, parallel_plate_capacitance, CancellationResult,
    CancellationTone, InducedCurrentProfile, LeadSpec, MeanderCouplingSpec, MeanderNetwork, RfSource, Termination,
    ToneSearch,
};

use crate::linalg::{solve, CMatrix};

pub type NodeId = usize;
pub const GROUND: NodeId = 0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CircuitError {
    #[error("element {element} references node {node}, but the netlist has {nodes} nodes")]
    UnknownNode { element: usize, node: NodeId, nodes: usize },
    #[error("element {element}: {reason}")]
    InvalidElement { element: usize, reason: &'static str },
    #[error("analysis frequency must be positive and finite")]
    InvalidFrequency,
    #[error("nodes {nodes:?} have no path to ground")]
    FloatingSubcircuit { nodes: Vec<NodeId> },
    #[error("circuit matrix is singular (check for loops of ideal voltage sources)")]
    Singular,
    #[error("invalid specification: {0}")]
    InvalidSpec(&'static str),
    #[error("unsupported configuration: {0}")]
    Unsupported(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Element {
    Resistor { a: NodeId, b: NodeId, ohms: f64 },
    Capacitor { a: NodeId, b: NodeId, farads: f64 },
    Inductor { a: NodeId, b: NodeId, henries: f64 },
    /// Lossless line; each port is a (signal, reference) node pair.
    /// `electrical_length` is `βℓ` in radians at the analysis frequency.
    TransmissionLine { port1: (NodeId, NodeId), port2: (NodeId, NodeId), z0: f64, electrical_length: f64 },
    /// `V(plus) - V(minus) = volts`.
    VoltageSource { plus: NodeId, minus: NodeId, volts: Complex64 },
    /// Drives `amps` out of `from` and into `to`.
    CurrentSource { from: NodeId, to: NodeId, amps: Complex64 },
}

impl Element {
    fn nodes(&self) -> Vec<NodeId> {
        match *self {
            Self::Resistor { a, b, .. } | Self::Capacitor { a, b, .. } | Self::Inductor { a, b, .. } => alloc::vec![a, b],
            Self::TransmissionLine { port1, port2, .. } => alloc::vec![port1.0, port1.1, port2.0, port2.1],
            Self::VoltageSource { plus, minus, .. } => alloc::vec![plus, minus],
            Self::CurrentSource { from, to, .. } => alloc::vec![from, to],
        }
    }

    fn validate(&self, index: usize) -> Result<(), CircuitError> {
        let bad = |reason| Err(CircuitError::InvalidElement { element: index, reason });
        let positive = |v: f64| v > 0.0 && v.is_finite();
        match *self {
            Self::Resistor { ohms, .. } if !positive(ohms) => bad("resistance must be positive"),
            Self::Capacitor { farads, .. } if !positive(farads) => bad("capacitance must be positive"),
            Self::Inductor { henries, .. } if !positive(henries) => bad("inductance must be positive"),
            Self::TransmissionLine { z0, electrical_length, .. } if !positive(z0) || !(electrical_length >= 0.0) => {
                bad("line needs Z0 > 0 and electrical length >= 0")
            }
            Self::VoltageSource { volts: v, .. } | Self::CurrentSource { amps: v, .. } if !(v.re.is_finite() && v.im.is_finite()) => {
                bad("source value must be finite")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Netlist {
    /// Number of nodes including ground.
    pub node_count: usize,
    pub elements: Vec<Element>,
}

impl Netlist {
    pub fn new() -> Self {
        Self { node_count: 1, elements: Vec::new() }
    }

    /// Allocates a fresh node.
    pub fn node(&mut self) -> NodeId {
        self.node_count += 1;
        self.node_count - 1
    }

    /// Adds an element and returns its index.
    pub fn add(&mut self, element: Element) -> usize {
        self.elements.push(element);
        self.elements.len() - 1
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        for (i, e) in self.elements.iter().enumerate() {
            for node in e.nodes() {
                if node >= self.node_count {
                    return Err(CircuitError::UnknownNode { element: i, node, nodes: self.node_count });
                }
            }
            e.validate(i)?;
        }
        Ok(())
    }

    /// Nodes with no conducting or coupling path to ground, grouped.
    fn floating_groups(&self) -> Vec<Vec<NodeId>> {
        let mut parent: Vec<usize> = (0..self.node_count).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for e in &self.elements {
            if matches!(e, Element::CurrentSource { .. }) {
                continue;
            }
            let nodes = e.nodes();
            for pair in nodes.windows(2) {
                let (a, b) = (find(&mut parent, pair[0]), find(&mut parent, pair[1]));
                parent[a] = b;
            }
        }
        let ground = find(&mut parent, GROUND);
        let mut groups: alloc::collections::BTreeMap<usize, Vec<NodeId>> = Default::default();
        for node in 1..self.node_count {
            let root = find(&mut parent, node);
            if root != ground {
                groups.entry(root).or_default().push(node);
            }
        }
        groups.into_values().collect()
    }
}

/// Current through an element: two-terminal elements carry one current
/// (from `a` to `b`, or `plus` to `minus` through a source); lines report
/// the current entering port 1 and the current leaving port 2.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BranchCurrent {
    Single(Complex64),
    TwoPort(Complex64, Complex64),
}

impl BranchCurrent {
    pub fn value(&self) -> Complex64 {
        match *self {
            Self::Single(i) | Self::TwoPort(i, _) => i,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AcSolution {
    pub omega: f64,
    /// Indexed by node; entry 0 is ground.
    pub node_voltages: Vec<Complex64>,
    /// Indexed like the netlist elements.
    pub branch_currents: Vec<BranchCurrent>,
}

impl AcSolution {
    /// Net current leaving each node through the elements. Entry 0 (ground)
    /// is included.
    pub fn kcl_residuals(&self, netlist: &Netlist) -> Vec<Complex64> {
        let mut acc = alloc::vec![Complex64::new(0.0, 0.0); netlist.node_count];
        for (e, i) in netlist.elements.iter().zip(&self.branch_currents) {
            match (*e, *i) {
                (Element::Resistor { a, b, .. }, BranchCurrent::Single(c))
                | (Element::Capacitor { a, b, .. }, BranchCurrent::Single(c))
                | (Element::Inductor { a, b, .. }, BranchCurrent::Single(c))
                | (Element::VoltageSource { plus: a, minus: b, .. }, BranchCurrent::Single(c))
                | (Element::CurrentSource { from: a, to: b, .. }, BranchCurrent::Single(c)) => {
                    acc[a] += c;
                    acc[b] -= c;
                }
                (Element::TransmissionLine { port1, port2, .. }, BranchCurrent::TwoPort(i1, i2)) => {
                    acc[port1.0] += i1;
                    acc[port1.1] -= i1;
                    acc[port2.0] -= i2;
                    acc[port2.1] += i2;
                }
                _ => unreachable!("branch current kind matches element"),
            }
        }
        acc
    }

    pub fn max_branch_current(&self) -> f64 {
        self.branch_currents
            .iter()
            .flat_map(|b| match *b {
                BranchCurrent::Single(i) => [i.norm(), 0.0],
                BranchCurrent::TwoPort(i, j) => [i.norm(), j.norm()],
            })
            .fold(0.0, f64::max)
    }
}

/// Solves the netlist at angular frequency `omega`.
pub fn ac_solve(netlist: &Netlist, omega: f64) -> Result<AcSolution, CircuitError> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(CircuitError::InvalidFrequency);
    }
    netlist.validate()?;
    if let Some(nodes) = netlist.floating_groups().into_iter().next() {
        return Err(CircuitError::FloatingSubcircuit { nodes });
    }

    let nv = netlist.node_count - 1;
    // extra unknowns: one per voltage source, two per line
    let mut extra = Vec::with_capacity(netlist.elements.len());
    let mut size = nv;
    for e in &netlist.elements {
        extra.push(size);
        size += match e {
            Element::VoltageSource { .. } => 1,
            Element::TransmissionLine { .. } => 2,
            _ => 0,
        };
    }

    let zero = Complex64::new(0.0, 0.0);
    let mut a = CMatrix::zeros(size, size);
    let mut rhs = CMatrix::zeros(size, 1);
    let idx = |n: NodeId| (n != GROUND).then(|| n - 1);
    let stamp_admittance = |a: &mut CMatrix, p: NodeId, q: NodeId, y: Complex64| {
        if let Some(i) = idx(p) {
            a[(i, i)] += y;
        }
        if let Some(j) = idx(q) {
            a[(j, j)] += y;
        }
        if let (Some(i), Some(j)) = (idx(p), idx(q)) {
            a[(i, j)] -= y;
            a[(j, i)] -= y;
        }
    };
    // +coef * unknown `col` in the KCL row of `node`
    let stamp = |a: &mut CMatrix, node: NodeId, col: usize, coef: Complex64| {
        if let Some(i) = idx(node) {
            a[(i, col)] += coef;
        }
    };
    let j = Complex64::i();
    let one = Complex64::new(1.0, 0.0);
    for (k, e) in netlist.elements.iter().enumerate() {
        match *e {
            Element::Resistor { a: p, b: q, ohms } => stamp_admittance(&mut a, p, q, Complex64::new(1.0 / ohms, 0.0)),
            Element::Capacitor { a: p, b: q, farads } => stamp_admittance(&mut a, p, q, j * omega * farads),
            Element::Inductor { a: p, b: q, henries } => stamp_admittance(&mut a, p, q, (j * omega * henries).inv()),
            Element::CurrentSource { from, to, amps } => {
                if let Some(i) = idx(from) {
                    rhs[(i, 0)] -= amps;
                }
                if let Some(i) = idx(to) {
                    rhs[(i, 0)] += amps;
                }
            }
            Element::VoltageSource { plus, minus, volts } => {
                let row = extra[k];
                stamp(&mut a, plus, row, Complex64::new(1.0, 0.0));
                stamp(&mut a, minus, row, Complex64::new(-1.0, 0.0));
                if let Some(i) = idx(plus) {
                    a[(row, i)] += 1.0;
                }
                if let Some(i) = idx(minus) {
                    a[(row, i)] -= 1.0;
                }
                rhs[(row, 0)] = volts;
            }
            Element::TransmissionLine { port1, port2, z0, electrical_length } => {
                let (i1, i2) = (extra[k], extra[k] + 1);
                let (c, s) = (electrical_length.cos(), electrical_length.sin());
                let (aa, bb, cc, dd) = (Complex64::new(c, 0.0), j * z0 * s, j * s / z0, Complex64::new(c, 0.0));
                stamp(&mut a, port1.0, i1, Complex64::new(1.0, 0.0));
                stamp(&mut a, port1.1, i1, Complex64::new(-1.0, 0.0));
                stamp(&mut a, port2.0, i2, Complex64::new(-1.0, 0.0));
                stamp(&mut a, port2.1, i2, Complex64::new(1.0, 0.0));
                // V1 - A V2 - B I2 = 0
                for (node, coef) in [(port1.0, one), (port1.1, -one), (port2.0, -aa), (port2.1, aa)] {
                    if let Some(n) = idx(node) {
                        a[(i1, n)] += coef;
                    }
                }
                a[(i1, i2)] -= bb;
                // I1 - C V2 - D I2 = 0
                for (node, coef) in [(port2.0, -cc), (port2.1, cc)] {
                    if let Some(n) = idx(node) {
                        a[(i2, n)] += coef;
                    }
                }
                a[(i2, i1)] += 1.0;
                a[(i2, i2)] -= dd;
            }
        }
    }

    let x = solve(a, &rhs).map_err(|_| CircuitError::Singular)?;
    let mut node_voltages = alloc::vec![zero; netlist.node_count];
    for n in 1..netlist.node_count {
        node_voltages[n] = x[(n - 1, 0)];
    }
    let v = |n: NodeId| node_voltages[n];
    let branch_currents = netlist
        .elements
        .iter()
        .enumerate()
        .map(|(k, e)| match *e {
            Element::Resistor { a, b, ohms } => BranchCurrent::Single((v(a) - v(b)) / ohms),
            Element::Capacitor { a, b, farads } => BranchCurrent::Single((v(a) - v(b)) * j * omega * farads),
            Element::Inductor { a, b, henries } => BranchCurrent::Single((v(a) - v(b)) / (j * omega * henries)),
            Element::CurrentSource { amps, .. } => BranchCurrent::Single(amps),
            Element::VoltageSource { .. } => BranchCurrent::Single(x[(extra[k], 0)]),
            Element::TransmissionLine { .. } => BranchCurrent::TwoPort(x[(extra[k], 0)], x[(extra[k] + 1, 0)]),
        })
        .collect();
    Ok(AcSolution { omega, node_voltages, branch_currents })
}
