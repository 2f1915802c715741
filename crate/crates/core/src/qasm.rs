//! Reader and writer for the OpenQASM 2.0 subset used as the circuit exchange
//! format.
//!
//! Accepted programs look like
//!
//! ```text
//! OPENQASM 2.0;
//! include "qelib1.inc";
//! qreg q[2];
//! creg c[2];
//! h q[0];
//! cx q[0],q[1];
//! rz(3*pi/4) q[1];
//! measure q -> c;
//! ```
//!
//! Exactly one `qreg` is allowed, gates come from [`GateKind`], and the only
//! measurement is a terminal whole-register `measure q -> c`. Angles are
//! decimal literals or `pi` forms (`pi`, `pi/k`, `k*pi`, `k*pi/m`, optionally
//! negated). A comment of the form `// circuit: <name>` carries the circuit
//! name; any other comment is ignored.

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::circuit::{is_identifier, Circuit, GateKind, GateOp, DEFAULT_CIRCUIT_NAME};

const NAME_PRAGMA: &str = "circuit:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QasmErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unsupported OpenQASM version {0} (expected 2.0)")]
    Version(String),
    #[error("unknown gate `{0}`")]
    UnknownGate(String),
    #[error("qubit index out of range: {index} >= qreg size {size}")]
    QubitOutOfRange { index: usize, size: usize },
    #[error("multiple qreg declarations")]
    MultipleQreg,
    #[error("multiple creg declarations")]
    MultipleCreg,
    #[error("no qreg declared")]
    MissingQreg,
    #[error("unknown register `{0}`")]
    UnknownRegister(String),
    #[error("gate `{gate}` takes {expected} qubit(s), got {got}")]
    Arity { gate: GateKind, expected: usize, got: usize },
    #[error("duplicate qubit {0} in gate")]
    DuplicateQubit(usize),
    #[error("gate `{0}` requires an angle")]
    MissingAngle(GateKind),
    #[error("gate `{0}` takes no angle")]
    UnexpectedAngle(GateKind),
    #[error("statement after terminal measure")]
    AfterMeasure,
    #[error("measure target creg has size {creg}, qreg has size {qreg}")]
    CregSize { creg: usize, qreg: usize },
    #[error("invalid UTF-8 input")]
    Utf8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct QasmError {
    pub line: usize,
    pub column: usize,
    pub kind: QasmErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Str(String),
    Sym(&'static str),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::Number(s) => write!(f, "`{s}`"),
            Tok::Str(s) => write!(f, "{s:?}"),
            Tok::Sym(s) => write!(f, "`{s}`"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

struct Lexed {
    toks: Vec<Spanned>,
    name: Option<String>,
    end: (usize, usize),
}

fn lex(src: &str) -> Result<Lexed, QasmError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let mut name = None;
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    macro_rules! err {
        ($l:expr, $c:expr, $msg:expr) => {
            return Err(QasmError { line: $l, column: $c, kind: QasmErrorKind::Syntax($msg) })
        };
    }

    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            let start = i + 2;
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
                col += 1;
            }
            let body: String = chars[start..i].iter().collect();
            if let Some(rest) = body.trim().strip_prefix(NAME_PRAGMA) {
                let candidate = rest.trim();
                if is_identifier(candidate) {
                    name = Some(candidate.to_string());
                }
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            toks.push(Spanned {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: l0,
                column: c0,
            });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            col += i - start;
            toks.push(Spanned {
                tok: Tok::Number(chars[start..i].iter().collect()),
                line: l0,
                column: c0,
            });
            continue;
        }
        if c == '"' {
            let start = i + 1;
            i += 1;
            col += 1;
            while i < chars.len() && chars[i] != '"' {
                if chars[i] == '\n' {
                    err!(l0, c0, "unterminated string literal".into());
                }
                i += 1;
                col += 1;
            }
            if i >= chars.len() {
                err!(l0, c0, "unterminated string literal".into());
            }
            let s: String = chars[start..i].iter().collect();
            i += 1;
            col += 1;
            toks.push(Spanned { tok: Tok::Str(s), line: l0, column: c0 });
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'>') {
            toks.push(Spanned { tok: Tok::Sym("->"), line: l0, column: c0 });
            i += 2;
            col += 2;
            continue;
        }
        let sym = match c {
            ';' => ";",
            ',' => ",",
            '[' => "[",
            ']' => "]",
            '(' => "(",
            ')' => ")",
            '*' => "*",
            '/' => "/",
            '-' => "-",
            '+' => "+",
            other => err!(l0, c0, format!("unexpected character {other:?}")),
        };
        toks.push(Spanned { tok: Tok::Sym(sym), line: l0, column: c0 });
        i += 1;
        col += 1;
    }
    Ok(Lexed { toks, name, end: (line, col) })
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn here(&self) -> (usize, usize) {
        self.toks.get(self.pos).map(|t| (t.line, t.column)).unwrap_or(self.end)
    }

    fn fail<T>(&self, kind: QasmErrorKind) -> Result<T, QasmError> {
        let (line, column) = self.here();
        Err(QasmError { line, column, kind })
    }

    fn fail_at<T>(&self, at: (usize, usize), kind: QasmErrorKind) -> Result<T, QasmError> {
        Err(QasmError { line: at.0, column: at.1, kind })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn describe_next(&self) -> String {
        self.peek().map(|t| t.to_string()).unwrap_or_else(|| "end of input".into())
    }

    fn expect_sym(&mut self, sym: &'static str) -> Result<(), QasmError> {
        if self.peek() == Some(&Tok::Sym(sym)) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(QasmErrorKind::Syntax(format!(
                "expected `{sym}`, found {}",
                self.describe_next()
            )))
        }
    }

    fn eat_sym(&mut self, sym: &'static str) -> bool {
        if self.peek() == Some(&Tok::Sym(sym)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_ident(&mut self) -> Result<String, QasmError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.fail(QasmErrorKind::Syntax(format!(
                "expected identifier, found {}",
                self.describe_next()
            ))),
        }
    }

    fn expect_index(&mut self) -> Result<usize, QasmError> {
        let at = self.here();
        match self.next() {
            Some(Tok::Number(s)) if s.bytes().all(|b| b.is_ascii_digit()) => s
                .parse()
                .or_else(|_| self.fail_at(at, QasmErrorKind::Syntax(format!("index {s} too large")))),
            other => self.fail_at(
                at,
                QasmErrorKind::Syntax(format!(
                    "expected integer index, found {}",
                    other.map(|t| t.to_string()).unwrap_or_else(|| "end of input".into())
                )),
            ),
        }
    }

    fn number(&mut self) -> Result<f64, QasmError> {
        let at = self.here();
        match self.next() {
            Some(Tok::Number(s)) => s
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map_or_else(|| self.fail_at(at, QasmErrorKind::Syntax(format!("bad number {s}"))), Ok),
            other => self.fail_at(
                at,
                QasmErrorKind::Syntax(format!(
                    "expected number, found {}",
                    other.map(|t| t.to_string()).unwrap_or_else(|| "end of input".into())
                )),
            ),
        }
    }

    fn is_pi(&self) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == "pi")
    }

    /// `[-|+] ( pi [/ n] | n [* pi [/ m]] )`
    fn angle(&mut self) -> Result<f64, QasmError> {
        let sign = if self.eat_sym("-") {
            -1.0
        } else {
            self.eat_sym("+");
            1.0
        };
        let value = if self.is_pi() {
            self.pos += 1;
            if self.eat_sym("/") {
                std::f64::consts::PI / self.number()?
            } else {
                std::f64::consts::PI
            }
        } else {
            let k = self.number()?;
            if self.eat_sym("*") {
                if !self.is_pi() {
                    return self.fail(QasmErrorKind::Syntax(format!(
                        "expected `pi` after `*`, found {}",
                        self.describe_next()
                    )));
                }
                self.pos += 1;
                if self.eat_sym("/") {
                    k * std::f64::consts::PI / self.number()?
                } else {
                    k * std::f64::consts::PI
                }
            } else {
                k
            }
        };
        if !value.is_finite() {
            return self.fail(QasmErrorKind::Syntax("angle is not finite".into()));
        }
        Ok(sign * value)
    }
}

/// Parses a program in the supported subset. Never panics.
pub fn parse_qasm(text: &str) -> Result<Circuit, QasmError> {
    let Lexed { toks, name, end } = lex(text)?;
    let mut p = Parser { toks, pos: 0, end };

    match p.next() {
        Some(Tok::Ident(s)) if s == "OPENQASM" => {}
        _ => {
            p.pos = p.pos.saturating_sub(1);
            return p.fail(QasmErrorKind::Syntax("expected `OPENQASM 2.0;` header".into()));
        }
    }
    let at = p.here();
    match p.next() {
        Some(Tok::Number(v)) if v == "2.0" || v == "2" => {}
        Some(Tok::Number(v)) => return p.fail_at(at, QasmErrorKind::Version(v)),
        _ => return p.fail_at(at, QasmErrorKind::Syntax("expected version number".into())),
    }
    p.expect_sym(";")?;

    let mut qreg: Option<(String, usize)> = None;
    let mut creg: Option<(String, usize)> = None;
    let mut gates = Vec::new();
    let mut measured = false;

    while p.peek().is_some() {
        let stmt_at = p.here();
        if measured {
            return p.fail(QasmErrorKind::AfterMeasure);
        }
        let word = p.expect_ident()?;
        match word.as_str() {
            "include" => {
                match p.next() {
                    Some(Tok::Str(_)) => {}
                    _ => {
                        return p.fail(QasmErrorKind::Syntax("expected file name after include".into()))
                    }
                }
                p.expect_sym(";")?;
            }
            "qreg" | "creg" => {
                let reg = p.expect_ident()?;
                p.expect_sym("[")?;
                let size = p.expect_index()?;
                p.expect_sym("]")?;
                p.expect_sym(";")?;
                let slot = if word == "qreg" { &mut qreg } else { &mut creg };
                if slot.is_some() {
                    let kind = if word == "qreg" {
                        QasmErrorKind::MultipleQreg
                    } else {
                        QasmErrorKind::MultipleCreg
                    };
                    return p.fail_at(stmt_at, kind);
                }
                *slot = Some((reg, size));
            }
            "measure" => {
                let q_at = p.here();
                let q = p.expect_ident()?;
                if p.peek() == Some(&Tok::Sym("[")) {
                    return p.fail(QasmErrorKind::Syntax(
                        "only whole-register `measure q -> c;` is supported".into(),
                    ));
                }
                p.expect_sym("->")?;
                let c_at = p.here();
                let c = p.expect_ident()?;
                if p.peek() == Some(&Tok::Sym("[")) {
                    return p.fail(QasmErrorKind::Syntax(
                        "only whole-register `measure q -> c;` is supported".into(),
                    ));
                }
                p.expect_sym(";")?;
                let qsize = match &qreg {
                    Some((n, s)) if *n == q => *s,
                    _ => return p.fail_at(q_at, QasmErrorKind::UnknownRegister(q)),
                };
                match &creg {
                    Some((n, s)) if *n == c => {
                        if *s != qsize {
                            return p.fail_at(c_at, QasmErrorKind::CregSize { creg: *s, qreg: qsize });
                        }
                    }
                    _ => return p.fail_at(c_at, QasmErrorKind::UnknownRegister(c)),
                }
                measured = true;
            }
            "OPENQASM" => {
                return p.fail_at(stmt_at, QasmErrorKind::Syntax("duplicate header".into()));
            }
            gate_name => {
                let Some(kind) = GateKind::from_mnemonic(gate_name) else {
                    return p.fail_at(stmt_at, QasmErrorKind::UnknownGate(gate_name.to_string()));
                };
                let angle = if p.eat_sym("(") {
                    let theta = p.angle()?;
                    p.expect_sym(")")?;
                    Some(theta)
                } else {
                    None
                };
                match (kind.is_rotation(), angle) {
                    (true, None) => return p.fail(QasmErrorKind::MissingAngle(kind)),
                    (false, Some(_)) => return p.fail_at(stmt_at, QasmErrorKind::UnexpectedAngle(kind)),
                    _ => {}
                }
                let mut qubits = Vec::with_capacity(2);
                loop {
                    let arg_at = p.here();
                    let reg = p.expect_ident()?;
                    p.expect_sym("[")?;
                    let idx_at = p.here();
                    let idx = p.expect_index()?;
                    p.expect_sym("]")?;
                    let size = match &qreg {
                        Some((n, s)) if *n == reg => *s,
                        Some(_) => return p.fail_at(arg_at, QasmErrorKind::UnknownRegister(reg)),
                        None => return p.fail_at(arg_at, QasmErrorKind::MissingQreg),
                    };
                    if idx >= size {
                        return p.fail_at(idx_at, QasmErrorKind::QubitOutOfRange { index: idx, size });
                    }
                    if qubits.contains(&idx) {
                        return p.fail_at(idx_at, QasmErrorKind::DuplicateQubit(idx));
                    }
                    qubits.push(idx);
                    if !p.eat_sym(",") {
                        break;
                    }
                }
                p.expect_sym(";")?;
                if qubits.len() != kind.arity() {
                    return p.fail_at(
                        stmt_at,
                        QasmErrorKind::Arity { gate: kind, expected: kind.arity(), got: qubits.len() },
                    );
                }
                gates.push(GateOp { kind, qubits, angle });
            }
        }
    }

    let Some((_, width)) = qreg else {
        return p.fail(QasmErrorKind::MissingQreg);
    };
    Ok(Circuit {
        name: name.unwrap_or_else(|| DEFAULT_CIRCUIT_NAME.to_string()),
        width,
        gates,
        measured,
    })
}

/// Byte-level entry point; rejects invalid UTF-8 instead of panicking.
pub fn parse_qasm_bytes(bytes: &[u8]) -> Result<Circuit, QasmError> {
    match std::str::from_utf8(bytes) {
        Ok(s) => parse_qasm(s),
        Err(e) => {
            let prefix = &bytes[..e.valid_up_to()];
            let line = 1 + prefix.iter().filter(|&&b| b == b'\n').count();
            let column = 1 + prefix.iter().rev().take_while(|&&b| b != b'\n').count();
            Err(QasmError { line, column, kind: QasmErrorKind::Utf8 })
        }
    }
}

/// Canonical text for a circuit. The output of this function always parses
/// back to a structurally equal circuit.
pub fn serialize_qasm(circuit: &Circuit) -> String {
    let mut out = String::from("OPENQASM 2.0;\n");
    if circuit.name != DEFAULT_CIRCUIT_NAME {
        let _ = writeln!(out, "// {NAME_PRAGMA} {}", circuit.name);
    }
    let _ = writeln!(out, "qreg q[{}];", circuit.width);
    if circuit.measured {
        let _ = writeln!(out, "creg c[{}];", circuit.width);
    }
    for op in &circuit.gates {
        out.push_str(op.kind.mnemonic());
        if let Some(theta) = op.angle {
            let _ = write!(out, "({theta})");
        }
        out.push(' ');
        let args: Vec<String> = op.qubits.iter().map(|q| format!("q[{q}]")).collect();
        out.push_str(&args.join(","));
        out.push_str(";\n");
    }
    if circuit.measured {
        out.push_str("measure q -> c;\n");
    }
    out
}
