//! Statevector kernels: exact evolution, shot sampling and depolarizing
//! trajectory sampling.
//!
//! Shot sampling is split into fixed-size chunks, each drawing from its own
//! ChaCha stream keyed by `(seed, chunk index)`. The histogram a seed produces
//! therefore does not depend on whether chunks run on one thread or many.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{Circuit, GateKind, GateOp};
use crate::counts::{bitstring, Counts};

pub const DEFAULT_MAX_WIDTH: usize = 20;

/// Shots drawn per RNG stream.
const SHOT_CHUNK: u64 = 1024;

/// Below this width gate kernels stay sequential even in parallel mode; the
/// per-gate work is too small to amortize task spawning.
#[cfg(feature = "parallel")]
const PAR_MIN_WIDTH: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),
    #[error("circuit width {width} exceeds simulator maximum {max}")]
    TooWide { width: usize, max: usize },
    #[error("shots must be at least 1")]
    ZeroShots,
    #[error("depolarizing probability must lie in [0, 1], got {0}")]
    InvalidNoise(f64),
}

/// How kernels use the machine's cores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Sequential,
    /// Data-parallel over amplitudes and shot chunks. Falls back to
    /// sequential when the crate is built without the `parallel` feature.
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

impl ExecMode {
    /// True when this mode runs data-parallel in the current build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub p_depolarizing: f64,
}

impl NoiseSpec {
    pub fn new(p_depolarizing: f64) -> Result<Self, SimError> {
        let spec = NoiseSpec { p_depolarizing };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<(), SimError> {
        if (0.0..=1.0).contains(&self.p_depolarizing) {
            Ok(())
        } else {
            Err(SimError::InvalidNoise(self.p_depolarizing))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    width: usize,
    amplitudes: Vec<Complex64>,
}

impl Statevector {
    /// `|0…0⟩` over `width` qubits.
    pub fn zero(width: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << width];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Statevector { width, amplitudes }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Amplitude of basis index `i`; qubit 0 is the most significant bit.
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Exact outcome distribution keyed by bitstring, zero entries dropped.
    pub fn distribution(&self) -> BTreeMap<String, f64> {
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.norm_sqr() > 0.0)
            .map(|(i, a)| (bitstring(i, self.width), a.norm_sqr()))
            .collect()
    }

    /// Applies one gate. The caller is responsible for the gate being valid on
    /// this width.
    pub fn apply(&mut self, op: &GateOp, mode: ExecMode) {
        apply_gate(&mut self.amplitudes, self.width, op, mode);
    }
}

type Mat2 = [[Complex64; 2]; 2];

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn single_qubit_matrix(kind: GateKind, angle: Option<f64>) -> Mat2 {
    let theta = angle.unwrap_or(0.0);
    let (ch, sh) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    match kind {
        GateKind::H => [[c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0)], [
            c(FRAC_1_SQRT_2, 0.0),
            c(-FRAC_1_SQRT_2, 0.0),
        ]],
        GateKind::X => [[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]],
        GateKind::Y => [[c(0.0, 0.0), c(0.0, -1.0)], [c(0.0, 1.0), c(0.0, 0.0)]],
        GateKind::Z => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]],
        GateKind::S => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 1.0)]],
        GateKind::T => [[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(FRAC_1_SQRT_2, FRAC_1_SQRT_2)]],
        GateKind::RX => [[c(ch, 0.0), c(0.0, -sh)], [c(0.0, -sh), c(ch, 0.0)]],
        GateKind::RY => [[c(ch, 0.0), c(-sh, 0.0)], [c(sh, 0.0), c(ch, 0.0)]],
        GateKind::RZ => [[c(ch, -sh), c(0.0, 0.0)], [c(0.0, 0.0), c(ch, sh)]],
        GateKind::CX | GateKind::CZ => unreachable!("two-qubit gate has no 2x2 matrix"),
    }
}

#[inline]
fn mix(m: &Mat2, a: &mut Complex64, b: &mut Complex64) {
    let (x, y) = (*a, *b);
    *a = m[0][0] * x + m[0][1] * y;
    *b = m[1][0] * x + m[1][1] * y;
}

fn bit_of(width: usize, qubit: usize) -> usize {
    1 << (width - 1 - qubit)
}

fn apply_gate(amps: &mut [Complex64], width: usize, op: &GateOp, mode: ExecMode) {
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && width >= PAR_MIN_WIDTH {
        return par::apply_gate(amps, width, op);
    }
    let _ = mode;
    match op.kind {
        GateKind::CX => {
            let cmask = bit_of(width, op.qubits[0]);
            let stride = bit_of(width, op.qubits[1]);
            for (k, chunk) in amps.chunks_mut(2 * stride).enumerate() {
                let base = k * 2 * stride;
                let (lo, hi) = chunk.split_at_mut(stride);
                for (j, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                    if (base + j) & cmask != 0 {
                        std::mem::swap(a, b);
                    }
                }
            }
        }
        GateKind::CZ => {
            let mask = bit_of(width, op.qubits[0]) | bit_of(width, op.qubits[1]);
            for (i, a) in amps.iter_mut().enumerate() {
                if i & mask == mask {
                    *a = -*a;
                }
            }
        }
        kind => {
            let m = single_qubit_matrix(kind, op.angle);
            let stride = bit_of(width, op.qubits[0]);
            for chunk in amps.chunks_mut(2 * stride) {
                let (lo, hi) = chunk.split_at_mut(stride);
                for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                    mix(&m, a, b);
                }
            }
        }
    }
}

#[cfg(feature = "parallel")]
mod par {
    use rayon::prelude::*;

    use super::*;

    pub(super) fn apply_gate(amps: &mut [Complex64], width: usize, op: &GateOp) {
        match op.kind {
            GateKind::CX => {
                let cmask = bit_of(width, op.qubits[0]);
                let stride = bit_of(width, op.qubits[1]);
                amps.par_chunks_mut(2 * stride).enumerate().for_each(|(k, chunk)| {
                    let base = k * 2 * stride;
                    let (lo, hi) = chunk.split_at_mut(stride);
                    lo.par_iter_mut().zip(hi.par_iter_mut()).enumerate().for_each(|(j, (a, b))| {
                        if (base + j) & cmask != 0 {
                            std::mem::swap(a, b);
                        }
                    });
                });
            }
            GateKind::CZ => {
                let mask = bit_of(width, op.qubits[0]) | bit_of(width, op.qubits[1]);
                amps.par_iter_mut().enumerate().for_each(|(i, a)| {
                    if i & mask == mask {
                        *a = -*a;
                    }
                });
            }
            kind => {
                let m = single_qubit_matrix(kind, op.angle);
                let stride = bit_of(width, op.qubits[0]);
                amps.par_chunks_mut(2 * stride).for_each(|chunk| {
                    let (lo, hi) = chunk.split_at_mut(stride);
                    lo.par_iter_mut().zip(hi.par_iter_mut()).for_each(|(a, b)| mix(&m, a, b));
                });
            }
        }
    }
}

/// Draws a basis index from a cumulative distribution.
fn draw(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total = *cdf.last().expect("non-empty cdf");
    let u = rng.random::<f64>() * total;
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn cumulative(state: &Statevector) -> Vec<f64> {
    let mut acc = 0.0;
    state
        .amplitudes
        .iter()
        .map(|a| {
            acc += a.norm_sqr();
            acc
        })
        .collect()
}

fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Splits `shots` into `(chunk index, shots in chunk)` pairs.
fn chunks(shots: u64) -> Vec<(u64, u64)> {
    (0..shots.div_ceil(SHOT_CHUNK))
        .map(|k| (k, SHOT_CHUNK.min(shots - k * SHOT_CHUNK)))
        .collect()
}

fn tally(width: usize, parts: Vec<BTreeMap<usize, u64>>) -> Counts {
    let mut merged: BTreeMap<usize, u64> = BTreeMap::new();
    for part in parts {
        for (i, n) in part {
            *merged.entry(i).or_insert(0) += n;
        }
    }
    merged.into_iter().map(|(i, n)| (bitstring(i, width), n)).collect()
}

fn map_chunks<F>(shots: u64, mode: ExecMode, f: F) -> Vec<BTreeMap<usize, u64>>
where
    F: Fn(u64, u64) -> BTreeMap<usize, u64> + Sync + Send,
{
    let work = chunks(shots);
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && work.len() > 1 {
        use rayon::prelude::*;
        return work.into_par_iter().map(|(k, n)| f(k, n)).collect();
    }
    let _ = mode;
    work.into_iter().map(|(k, n)| f(k, n)).collect()
}

/// Configured simulator. Cheap to copy; holds no state between calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Simulator {
    pub max_width: usize,
    pub mode: ExecMode,
}

impl Default for Simulator {
    fn default() -> Self {
        Simulator { max_width: DEFAULT_MAX_WIDTH, mode: ExecMode::default() }
    }
}

impl Simulator {
    pub fn new(max_width: usize, mode: ExecMode) -> Self {
        Simulator { max_width, mode }
    }

    pub fn sequential() -> Self {
        Simulator { mode: ExecMode::Sequential, ..Default::default() }
    }

    fn check(&self, circuit: &Circuit) -> Result<(), SimError> {
        let violations = circuit.validate();
        if !violations.is_empty() {
            let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(SimError::InvalidCircuit(msg.join("; ")));
        }
        if circuit.width > self.max_width {
            return Err(SimError::TooWide { width: circuit.width, max: self.max_width });
        }
        Ok(())
    }

    pub fn statevector(&self, circuit: &Circuit) -> Result<Statevector, SimError> {
        self.check(circuit)?;
        let mut state = Statevector::zero(circuit.width);
        for op in &circuit.gates {
            state.apply(op, self.mode);
        }
        Ok(state)
    }

    /// Ideal measure-all sampling of `shots` outcomes.
    pub fn sample(&self, circuit: &Circuit, shots: u64, seed: u64) -> Result<Counts, SimError> {
        if shots == 0 {
            return Err(SimError::ZeroShots);
        }
        let state = self.statevector(circuit)?;
        let cdf = cumulative(&state);
        let parts = map_chunks(shots, self.mode, |k, n| {
            let mut rng = chunk_rng(seed, k);
            let mut hist = BTreeMap::new();
            for _ in 0..n {
                *hist.entry(draw(&cdf, &mut rng)).or_insert(0) += 1;
            }
            hist
        });
        Ok(tally(circuit.width, parts))
    }

    /// Trajectory sampling under single-qubit depolarizing noise: after every
    /// gate, each qubit it touched independently suffers a uniformly chosen
    /// X, Y or Z with probability `p_depolarizing`.
    pub fn sample_noisy(
        &self,
        circuit: &Circuit,
        shots: u64,
        noise: NoiseSpec,
        seed: u64,
    ) -> Result<Counts, SimError> {
        if shots == 0 {
            return Err(SimError::ZeroShots);
        }
        noise.check()?;
        let ideal = self.statevector(circuit)?;
        let ideal_cdf = cumulative(&ideal);
        let p = noise.p_depolarizing;
        let parts = map_chunks(shots, self.mode, |k, n| {
            let mut rng = chunk_rng(seed, k);
            let mut hist = BTreeMap::new();
            let mut faults: Vec<(usize, usize, GateKind)> = Vec::new();
            for _ in 0..n {
                faults.clear();
                for (g, op) in circuit.gates.iter().enumerate() {
                    for &q in &op.qubits {
                        if rng.random::<f64>() < p {
                            let pauli = [GateKind::X, GateKind::Y, GateKind::Z][rng.random_range(0..3)];
                            faults.push((g, q, pauli));
                        }
                    }
                }
                let outcome = if faults.is_empty() {
                    draw(&ideal_cdf, &mut rng)
                } else {
                    let state = trajectory(circuit, &faults);
                    draw(&cumulative(&state), &mut rng)
                };
                *hist.entry(outcome).or_insert(0) += 1;
            }
            hist
        });
        Ok(tally(circuit.width, parts))
    }
}

/// Evolves `circuit` with Pauli faults `(after gate, on qubit, pauli)` already
/// sorted by gate position.
fn trajectory(circuit: &Circuit, faults: &[(usize, usize, GateKind)]) -> Statevector {
    let mut state = Statevector::zero(circuit.width);
    let mut pending = faults.iter().peekable();
    for (g, op) in circuit.gates.iter().enumerate() {
        state.apply(op, ExecMode::Sequential);
        while let Some(&&(fg, q, pauli)) = pending.peek() {
            if fg != g {
                break;
            }
            state.apply(&GateOp { kind: pauli, qubits: vec![q], angle: None }, ExecMode::Sequential);
            pending.next();
        }
    }
    state
}

pub fn statevector(circuit: &Circuit) -> Result<Statevector, SimError> {
    Simulator::default().statevector(circuit)
}

pub fn sample(circuit: &Circuit, shots: u64, seed: u64) -> Result<Counts, SimError> {
    Simulator::default().sample(circuit, shots, seed)
}

pub fn sample_noisy(
    circuit: &Circuit,
    shots: u64,
    noise: NoiseSpec,
    seed: u64,
) -> Result<Counts, SimError> {
    Simulator::default().sample_noisy(circuit, shots, noise, seed)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::circuit::DEFAULT_CIRCUIT_NAME;

    const S: f64 = FRAC_1_SQRT_2;

    fn assert_state(state: &Statevector, expected: &[Complex64]) {
        assert_eq!(state.amplitudes().len(), expected.len());
        for (a, e) in state.amplitudes().iter().zip(expected) {
            assert_abs_diff_eq!(a.re, e.re, epsilon = 1e-9);
            assert_abs_diff_eq!(a.im, e.im, epsilon = 1e-9);
        }
    }

    #[test]
    fn closed_forms() {
        let empty = Circuit::new(DEFAULT_CIRCUIT_NAME, 1);
        assert_state(&statevector(&empty).unwrap(), &[c(1.0, 0.0), c(0.0, 0.0)]);
        let h = Circuit::new("h", 1).with_gates([GateOp::h(0)]);
        assert_state(&statevector(&h).unwrap(), &[c(S, 0.0), c(S, 0.0)]);
        let bell = Circuit::bell();
        let z = c(0.0, 0.0);
        assert_state(&statevector(&bell).unwrap(), &[c(S, 0.0), z, z, c(S, 0.0)]);
    }

    #[test]
    fn qubit_zero_is_most_significant() {
        let x0 = Circuit::new("x0", 2).with_gates([GateOp::x(0)]);
        let sv = statevector(&x0).unwrap();
        assert_abs_diff_eq!(sv.amplitudes()[0b10].re, 1.0, epsilon = 1e-12);
        let counts = sample(&x0, 5, 1).unwrap();
        assert_eq!(counts.get("10"), 5);
    }

    #[test]
    fn rotation_matrices() {
        let theta = 0.7;
        let rx = Circuit::new("c", 1).with_gates([GateOp::rx(theta, 0)]);
        let sv = statevector(&rx).unwrap();
        assert_state(&sv, &[c((theta / 2.0).cos(), 0.0), c(0.0, -(theta / 2.0).sin())]);
        let ry = Circuit::new("c", 1).with_gates([GateOp::ry(theta, 0)]);
        assert_state(
            &statevector(&ry).unwrap(),
            &[c((theta / 2.0).cos(), 0.0), c((theta / 2.0).sin(), 0.0)],
        );
        // RZ on |+> gives relative phase e^{i theta}
        let rz = Circuit::new("c", 1).with_gates([GateOp::h(0), GateOp::rz(theta, 0)]);
        let sv = statevector(&rz).unwrap();
        let phase = sv.amplitudes()[1] / sv.amplitudes()[0];
        assert_abs_diff_eq!(phase.arg(), theta, epsilon = 1e-12);
        // S·S = Z, T·T = S
        let ss = Circuit::new("c", 1).with_gates([GateOp::h(0), GateOp::s(0), GateOp::s(0)]);
        let hz = Circuit::new("c", 1).with_gates([GateOp::h(0), GateOp::z(0)]);
        assert_state(&statevector(&ss).unwrap(), statevector(&hz).unwrap().amplitudes());
        let tt = Circuit::new("c", 1).with_gates([GateOp::h(0), GateOp::t(0), GateOp::t(0)]);
        let hs = Circuit::new("c", 1).with_gates([GateOp::h(0), GateOp::s(0)]);
        assert_state(&statevector(&tt).unwrap(), statevector(&hs).unwrap().amplitudes());
    }

    #[test]
    fn cz_phase() {
        let c2 = Circuit::new("c", 2).with_gates([GateOp::x(0), GateOp::x(1), GateOp::cz(0, 1)]);
        let sv = statevector(&c2).unwrap();
        assert_abs_diff_eq!(sv.amplitudes()[3].re, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn sample_examples() {
        let x = Circuit::new("x", 1).with_gates([GateOp::x(0)]);
        assert_eq!(sample(&x, 100, 99).unwrap(), [("1", 100)].into_iter().collect());
        let empty = Circuit::new("e", 2);
        assert_eq!(sample(&empty, 10, 0).unwrap(), [("00", 10)].into_iter().collect());
        let bell = sample(&Circuit::bell(), 2048, 7).unwrap();
        assert_eq!(bell.total(), 2048);
        assert!(bell.keys().all(|k| k == "00" || k == "11"));
    }

    #[test]
    fn errors() {
        let sim = Simulator::default();
        assert_eq!(sim.sample(&Circuit::bell(), 0, 0), Err(SimError::ZeroShots));
        let wide = Circuit::new("w", 21);
        assert_eq!(sim.sample(&wide, 1, 0), Err(SimError::TooWide { width: 21, max: 20 }));
        let bad = Circuit::new("b", 1).with_gates([GateOp::h(3)]);
        assert!(matches!(sim.statevector(&bad), Err(SimError::InvalidCircuit(_))));
        assert_eq!(NoiseSpec::new(1.5), Err(SimError::InvalidNoise(1.5)));
        assert!(NoiseSpec::new(-0.1).is_err());
    }

    #[test]
    fn zero_width() {
        let c0 = Circuit::new("z", 0);
        assert_eq!(sample(&c0, 3, 0).unwrap(), [("", 3)].into_iter().collect());
    }

    #[test]
    fn chunking_covers_all_shots() {
        assert_eq!(chunks(0), vec![]);
        assert_eq!(chunks(1), vec![(0, 1)]);
        assert_eq!(chunks(2049), vec![(0, 1024), (1, 1024), (2, 1)]);
    }

    #[test]
    fn modes_agree() {
        let c = Circuit::ghz(13).with_gates([GateOp::ry(0.3, 5), GateOp::cz(2, 9)]);
        let seq = Simulator::sequential();
        let par = Simulator::new(DEFAULT_MAX_WIDTH, ExecMode::Parallel);
        assert_eq!(seq.statevector(&c).unwrap(), par.statevector(&c).unwrap());
        assert_eq!(seq.sample(&c, 5000, 3).unwrap(), par.sample(&c, 5000, 3).unwrap());
        let noise = NoiseSpec::new(0.02).unwrap();
        let bell = Circuit::bell();
        assert_eq!(
            seq.sample_noisy(&bell, 5000, noise, 3).unwrap(),
            par.sample_noisy(&bell, 5000, noise, 3).unwrap()
        );
    }
}
