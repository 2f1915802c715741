//! Gate-list circuit representation shared by every backend.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Gates understood by every backend in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    H,
    X,
    Y,
    Z,
    S,
    T,
    RX,
    RY,
    RZ,
    CX,
    CZ,
}

impl GateKind {
    pub const ALL: [GateKind; 11] = [
        GateKind::H,
        GateKind::X,
        GateKind::Y,
        GateKind::Z,
        GateKind::S,
        GateKind::T,
        GateKind::RX,
        GateKind::RY,
        GateKind::RZ,
        GateKind::CX,
        GateKind::CZ,
    ];

    pub fn arity(self) -> usize {
        match self {
            GateKind::CX | GateKind::CZ => 2,
            _ => 1,
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, GateKind::RX | GateKind::RY | GateKind::RZ)
    }

    /// Lower-case QASM mnemonic.
    pub fn mnemonic(self) -> &'static str {
        match self {
            GateKind::H => "h",
            GateKind::X => "x",
            GateKind::Y => "y",
            GateKind::Z => "z",
            GateKind::S => "s",
            GateKind::T => "t",
            GateKind::RX => "rx",
            GateKind::RY => "ry",
            GateKind::RZ => "rz",
            GateKind::CX => "cx",
            GateKind::CZ => "cz",
        }
    }

    pub fn from_mnemonic(name: &str) -> Option<GateKind> {
        GateKind::ALL.into_iter().find(|k| k.mnemonic() == name)
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// One gate application. Fields are public so that malformed operations can be
/// constructed and reported by [`Circuit::validate`]; the constructors below
/// always produce well-formed ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOp {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    pub angle: Option<f64>,
}

impl GateOp {
    fn fixed(kind: GateKind, q: usize) -> Self {
        GateOp { kind, qubits: vec![q], angle: None }
    }

    pub fn h(q: usize) -> Self {
        Self::fixed(GateKind::H, q)
    }
    pub fn x(q: usize) -> Self {
        Self::fixed(GateKind::X, q)
    }
    pub fn y(q: usize) -> Self {
        Self::fixed(GateKind::Y, q)
    }
    pub fn z(q: usize) -> Self {
        Self::fixed(GateKind::Z, q)
    }
    pub fn s(q: usize) -> Self {
        Self::fixed(GateKind::S, q)
    }
    pub fn t(q: usize) -> Self {
        Self::fixed(GateKind::T, q)
    }
    pub fn rx(theta: f64, q: usize) -> Self {
        GateOp { kind: GateKind::RX, qubits: vec![q], angle: Some(theta) }
    }
    pub fn ry(theta: f64, q: usize) -> Self {
        GateOp { kind: GateKind::RY, qubits: vec![q], angle: Some(theta) }
    }
    pub fn rz(theta: f64, q: usize) -> Self {
        GateOp { kind: GateKind::RZ, qubits: vec![q], angle: Some(theta) }
    }
    pub fn cx(control: usize, target: usize) -> Self {
        GateOp { kind: GateKind::CX, qubits: vec![control, target], angle: None }
    }
    pub fn cz(a: usize, b: usize) -> Self {
        GateOp { kind: GateKind::CZ, qubits: vec![a, b], angle: None }
    }
}

impl fmt::Display for GateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if let Some(theta) = self.angle {
            write!(f, "[{theta}]")?;
        }
        let qs: Vec<String> = self.qubits.iter().map(|q| q.to_string()).collect();
        write!(f, "({})", qs.join(","))
    }
}

/// A single invariant violation found by [`Circuit::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Position of the offending gate, `None` for circuit-level problems.
    pub gate: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.gate {
            Some(i) => write!(f, "gate {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Quantum program as an ordered list of gates over `width` qubits, optionally
/// ending in a measurement of the whole register.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub name: String,
    pub width: usize,
    pub gates: Vec<GateOp>,
    pub measured: bool,
}

pub const DEFAULT_CIRCUIT_NAME: &str = "circuit";

impl Circuit {
    pub fn new(name: impl Into<String>, width: usize) -> Self {
        Circuit { name: name.into(), width, gates: Vec::new(), measured: false }
    }

    pub fn with_gates(mut self, gates: impl IntoIterator<Item = GateOp>) -> Self {
        self.gates.extend(gates);
        self
    }

    pub fn measure_all(mut self) -> Self {
        self.measured = true;
        self
    }

    pub fn push(&mut self, op: GateOp) -> &mut Self {
        self.gates.push(op);
        self
    }

    /// Two-qubit Bell-pair preparation with terminal measurement.
    pub fn bell() -> Self {
        Circuit::new("bell", 2).with_gates([GateOp::h(0), GateOp::cx(0, 1)]).measure_all()
    }

    /// `n`-qubit GHZ preparation with terminal measurement.
    pub fn ghz(n: usize) -> Self {
        let mut c = Circuit::new(format!("ghz{n}"), n);
        if n > 0 {
            c.push(GateOp::h(0));
            for q in 1..n {
                c.push(GateOp::cx(q - 1, q));
            }
        }
        c.measure_all()
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !is_identifier(&self.name) {
            out.push(Violation {
                gate: None,
                message: format!("circuit name {:?} is not an identifier", self.name),
            });
        }
        if self.width == 0 && !self.gates.is_empty() {
            out.push(Violation { gate: None, message: "zero-width circuit has gates".into() });
        }
        for (i, op) in self.gates.iter().enumerate() {
            let mut push = |message: String| out.push(Violation { gate: Some(i), message });
            if op.qubits.len() != op.kind.arity() {
                push(format!(
                    "arity mismatch: {} takes {} qubit(s), got {}",
                    op.kind,
                    op.kind.arity(),
                    op.qubits.len()
                ));
            }
            for (j, &q) in op.qubits.iter().enumerate() {
                if q >= self.width {
                    push(format!("index out of range: qubit {q} on width {}", self.width));
                }
                if op.qubits[..j].contains(&q) {
                    push(format!("duplicate qubit in gate: {q}"));
                }
            }
            match (op.kind.is_rotation(), op.angle) {
                (true, None) => push(format!("{} requires an angle", op.kind)),
                (false, Some(_)) => push(format!("{} takes no angle", op.kind)),
                (true, Some(theta)) if !theta.is_finite() => {
                    push(format!("angle must be finite, got {theta}"))
                }
                _ => {}
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Maps an arbitrary label (a file stem, say) onto a valid circuit name.
pub fn sanitize_name(raw: &str) -> String {
    let mut s: String =
        raw.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
    if !s.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_') {
        s.insert(0, '_');
    }
    s
}
