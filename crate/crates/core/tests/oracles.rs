//! Checks the simulator against a dense-matrix reference built from Kronecker
//! products, and the noisy sampler against exact enumeration of fault patterns.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64 as C;
use qexec_core::counts::bitstring;
use qexec_core::{Circuit, Counts, ExecMode, GateKind, GateOp, NoiseSpec, Simulator};

type Matrix = Vec<Vec<C>>;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (n, m) = (a.len(), b.len());
    let mut out = vec![vec![C::default(); n * m]; n * m];
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                for l in 0..m {
                    out[i * m + k][j * m + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

fn add(a: &Matrix, b: &Matrix) -> Matrix {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

fn mat_vec(m: &Matrix, v: &[C]) -> Vec<C> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn identity() -> Matrix {
    vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]]
}

fn single(kind: GateKind, theta: f64) -> Matrix {
    let (ch, sh) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let r = FRAC_1_SQRT_2;
    match kind {
        GateKind::H => vec![vec![c(r, 0.0), c(r, 0.0)], vec![c(r, 0.0), c(-r, 0.0)]],
        GateKind::X => vec![vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(1.0, 0.0), c(0.0, 0.0)]],
        GateKind::Y => vec![vec![c(0.0, 0.0), c(0.0, -1.0)], vec![c(0.0, 1.0), c(0.0, 0.0)]],
        GateKind::Z => vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(-1.0, 0.0)]],
        GateKind::S => vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(0.0, 1.0)]],
        GateKind::T => vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), C::from_polar(1.0, PI / 4.0)]],
        GateKind::RX => vec![vec![c(ch, 0.0), c(0.0, -sh)], vec![c(0.0, -sh), c(ch, 0.0)]],
        GateKind::RY => vec![vec![c(ch, 0.0), c(-sh, 0.0)], vec![c(sh, 0.0), c(ch, 0.0)]],
        GateKind::RZ => vec![vec![C::from_polar(1.0, -theta / 2.0), c(0.0, 0.0)], vec![c(0.0, 0.0), C::from_polar(1.0, theta / 2.0)]],
        GateKind::CX | GateKind::CZ => unreachable!(),
    }
}

/// Full-space operator; qubit 0 is the leftmost tensor factor.
fn embed(width: usize, factors: &BTreeMap<usize, Matrix>) -> Matrix {
    let mut out = vec![vec![c(1.0, 0.0)]];
    for q in 0..width {
        out = kron(&out, factors.get(&q).unwrap_or(&identity()));
    }
    out
}

fn operator(width: usize, op: &GateOp) -> Matrix {
    match op.kind {
        GateKind::CX | GateKind::CZ => {
            let (ctl, tgt) = (op.qubits[0], op.qubits[1]);
            let p0 = vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(0.0, 0.0)]];
            let p1 = vec![vec![c(0.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]];
            let flip = single(if op.kind == GateKind::CX { GateKind::X } else { GateKind::Z }, 0.0);
            let idle = embed(width, &BTreeMap::from([(ctl, p0)]));
            let active = embed(width, &BTreeMap::from([(ctl, p1), (tgt, flip)]));
            add(&idle, &active)
        }
        kind => embed(width, &BTreeMap::from([(op.qubits[0], single(kind, op.angle.unwrap_or(0.0)))])),
    }
}

fn reference_state(circuit: &Circuit, faults: &[Option<GateKind>]) -> Vec<C> {
    let mut v = vec![C::default(); 1 << circuit.width];
    v[0] = c(1.0, 0.0);
    let mut slot = 0;
    for op in &circuit.gates {
        v = mat_vec(&operator(circuit.width, op), &v);
        for &q in &op.qubits {
            if let Some(p) = faults.get(slot).copied().flatten() {
                v = mat_vec(&operator(circuit.width, &GateOp { kind: p, qubits: vec![q], angle: None }), &v);
            }
            slot += 1;
        }
    }
    v
}

/// Exact outcome distribution under the trajectory noise model, summing over
/// every assignment of {I, X, Y, Z} to the (gate, touched qubit) slots.
fn exact_noisy(circuit: &Circuit, p: f64) -> BTreeMap<String, f64> {
    let slots: usize = circuit.gates.iter().map(|g| g.qubits.len()).sum();
    let choices = [None, Some(GateKind::X), Some(GateKind::Y), Some(GateKind::Z)];
    let mut dist = BTreeMap::new();
    for code in 0..4usize.pow(slots as u32) {
        let mut pattern = Vec::with_capacity(slots);
        let mut rest = code;
        let mut weight = 1.0;
        for _ in 0..slots {
            let pick = choices[rest % 4];
            weight *= if pick.is_none() { 1.0 - p } else { p / 3.0 };
            pattern.push(pick);
            rest /= 4;
        }
        if weight == 0.0 {
            continue;
        }
        for (i, a) in reference_state(circuit, &pattern).iter().enumerate() {
            *dist.entry(bitstring(i, circuit.width)).or_insert(0.0) += weight * a.norm_sqr();
        }
    }
    dist.retain(|_, v| *v > 1e-15);
    dist
}

fn distance(counts: &Counts, exact: &BTreeMap<String, f64>) -> f64 {
    let shots = counts.total() as f64;
    let mut l1: f64 = exact.iter().map(|(b, p)| (counts.get(b) as f64 / shots - p).abs()).sum();
    l1 += counts.iter().filter(|(b, _)| !exact.contains_key(*b)).map(|(_, n)| n as f64 / shots).sum::<f64>();
    0.5 * l1
}

fn fidelity(a: &[C], b: &[C]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C>().norm_sqr()
}

fn mixed() -> Circuit {
    Circuit::new("mixed", 4).measure_all().with_gates([
        GateOp::h(0),
        GateOp::rx(0.7, 1),
        GateOp::cx(0, 2),
        GateOp::ry(-1.3, 3),
        GateOp::s(2),
        GateOp::t(1),
        GateOp::cz(3, 1),
        GateOp::rz(2.1, 0),
        GateOp::y(3),
        GateOp::cx(2, 3),
        GateOp::z(1),
        GateOp::x(0),
    ])
}

#[test]
fn statevectors_match_dense_reference() {
    let circuits = [Circuit::bell(), Circuit::ghz(3), Circuit::ghz(4), mixed()];
    for circuit in &circuits {
        let want = reference_state(circuit, &[]);
        for mode in [ExecMode::Sequential, ExecMode::Parallel] {
            let got = Simulator::new(20, mode).statevector(circuit).unwrap();
            assert!((fidelity(got.amplitudes(), &want) - 1.0).abs() < 1e-9, "{}", circuit.name);
        }
    }
}

#[test]
fn named_states_match_exactly() {
    let r = FRAC_1_SQRT_2;
    let bell = Simulator::default().statevector(&Circuit::bell()).unwrap();
    let want = [c(r, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(r, 0.0)];
    for (a, b) in bell.amplitudes().iter().zip(&want) {
        assert!((a - b).norm() < 1e-9);
    }
    let ghz = Simulator::default().statevector(&Circuit::ghz(3)).unwrap();
    for (i, a) in ghz.amplitudes().iter().enumerate() {
        let w = if i == 0 || i == 7 { r } else { 0.0 };
        assert!((a - c(w, 0.0)).norm() < 1e-9);
    }
}

#[test]
fn rotations_match_reference() {
    for kind in [GateKind::RX, GateKind::RY, GateKind::RZ] {
        for theta in [0.3, -1.1, PI, 2.5] {
            let circuit = Circuit::new("rot", 1).with_gates([GateOp::h(0), GateOp { kind, qubits: vec![0], angle: Some(theta) }]);
            let want = reference_state(&circuit, &[]);
            let got = Simulator::default().statevector(&circuit).unwrap();
            assert!((fidelity(got.amplitudes(), &want) - 1.0).abs() < 1e-9, "{kind:?} {theta}");
        }
    }
}

#[test]
fn full_depolarizing_on_x_gives_one_third() {
    let circuit = Circuit::new("flip", 1).measure_all().with_gates([GateOp::x(0)]);
    let exact = exact_noisy(&circuit, 1.0);
    assert!((exact["1"] - 1.0 / 3.0).abs() < 1e-12);
    assert!((exact["0"] - 2.0 / 3.0).abs() < 1e-12);
    let counts = Simulator::default().sample_noisy(&circuit, 30_000, NoiseSpec::new(1.0).unwrap(), 5).unwrap();
    assert!((counts.frequency("1") - 1.0 / 3.0).abs() < 0.02, "{}", counts.frequency("1"));
}

#[test]
fn noisy_bell_leaks_into_odd_parity() {
    let circuit = Circuit::bell();
    let exact = exact_noisy(&circuit, 0.05);
    let odd = exact.get("01").unwrap_or(&0.0) + exact.get("10").unwrap_or(&0.0);
    assert!(odd > 0.05, "exact odd-parity mass {odd}");
    let counts = Simulator::default().sample_noisy(&circuit, 50_000, NoiseSpec::new(0.05).unwrap(), 11).unwrap();
    assert!(counts.get("01") + counts.get("10") > 0);
    assert!(distance(&counts, &exact) < 0.015);
}

#[test]
fn noisy_sampler_matches_enumeration() {
    let circuit = Circuit::new("small", 3).measure_all().with_gates([
        GateOp::h(0),
        GateOp::ry(0.9, 2),
        GateOp::cx(0, 1),
        GateOp::t(2),
    ]);
    for (p, seed) in [(0.02, 1), (0.1, 2), (0.3, 3)] {
        let exact = exact_noisy(&circuit, p);
        assert!((exact.values().sum::<f64>() - 1.0).abs() < 1e-9);
        let counts = Simulator::default().sample_noisy(&circuit, 60_000, NoiseSpec::new(p).unwrap(), seed).unwrap();
        let d = distance(&counts, &exact);
        assert!(d < 0.015, "p={p} distance {d}");
    }
}

#[test]
fn zero_noise_is_the_ideal_distribution() {
    let full = mixed();
    let prefix = Circuit { gates: full.gates[..4].to_vec(), ..full };
    let exact = exact_noisy(&prefix, 0.0);
    let counts = Simulator::default().sample_noisy(&prefix, 60_000, NoiseSpec::new(0.0).unwrap(), 9).unwrap();
    assert!(distance(&counts, &exact) < 0.01);
    let ideal = Simulator::default().sample(&prefix, 60_000, 9).unwrap();
    assert!(distance(&ideal, &exact) < 0.01);
}
