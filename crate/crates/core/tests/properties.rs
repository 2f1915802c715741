use std::sync::Arc;

use proptest::collection::{btree_map, vec};
use proptest::prelude::*;
use qexec_core::policy::{even_shares, merge_sum, split_even, split_multiplier};
use qexec_core::qasm::parse_qasm_bytes;
use qexec_core::{
    parse_qasm, serialize_qasm, tvd, Circuit, Counts, ExecMode, GateKind, GateOp, Params, ResultTree,
    Simulator, Statevector, Target,
};

const KINDS: [GateKind; 11] = [
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

fn gate(width: usize) -> impl Strategy<Value = GateOp> {
    (0..KINDS.len(), 0..width, 0..width, -10.0f64..10.0).prop_filter_map(
        "two-qubit gate needs distinct qubits",
        move |(k, a, b, theta)| {
            let kind = KINDS[k];
            if kind.arity() == 2 && (width < 2 || a == b) {
                return None;
            }
            let qubits = if kind.arity() == 2 { vec![a, b] } else { vec![a] };
            let angle = kind.is_rotation().then_some(theta);
            Some(GateOp { kind, qubits, angle })
        },
    )
}

fn circuit(max_width: usize, max_gates: usize) -> impl Strategy<Value = Circuit> {
    (1..=max_width, any::<bool>(), "[a-z][a-z0-9_]{0,8}").prop_flat_map(move |(w, measured, name)| {
        vec(gate(w), 0..max_gates).prop_map(move |gates| Circuit {
            name: name.clone(),
            width: w,
            gates,
            measured,
        })
    })
}

fn counts(width: usize) -> impl Strategy<Value = Counts> {
    btree_map(vec(prop_oneof![Just('0'), Just('1')], width), 1u64..1000, 1..6).prop_map(|m| {
        m.into_iter().map(|(k, v)| (k.into_iter().collect::<String>(), v)).collect()
    })
}

fn targets(max: usize) -> impl Strategy<Value = Vec<Target>> {
    proptest::collection::btree_set((0u8..8, 0u8..8), 1..=max)
        .prop_map(|s| s.into_iter().map(|(p, b)| Target::new(format!("p{p}"), format!("b{b}"))).collect())
}

fn overlap(a: &Statevector, b: &Statevector) -> f64 {
    a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| x.conj() * y).sum::<num_complex::Complex64>().norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn qasm_round_trip(c in circuit(6, 24)) {
        let text = serialize_qasm(&c);
        let back = parse_qasm(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(serialize_qasm(&back), text);
    }

    #[test]
    fn parser_is_total_on_bytes(bytes in vec(any::<u8>(), 0..256)) {
        let _ = parse_qasm_bytes(&bytes);
    }

    #[test]
    fn parser_is_total_on_qasm_like_text(s in "(OPENQASM 2\\.0;)?[ a-z0-9\\[\\]();,/*+\\->.\n]{0,120}") {
        let _ = parse_qasm(&s);
    }

    #[test]
    fn parser_survives_mutations(c in circuit(4, 8), cut in 0usize..400, junk in "[;()\\[\\]a-z0-9 ]{0,4}") {
        let mut text = serialize_qasm(&c);
        let at = cut.min(text.len());
        text.insert_str(at, &junk);
        let _ = parse_qasm(&text);
    }

    #[test]
    fn even_split_conserves_shots(shots in 1u64..=1_000_000, n in 1usize..=50, ncirc in 1usize..4) {
        let shares = even_shares(shots, n);
        prop_assert_eq!(shares.iter().sum::<u64>(), shots);
        prop_assert!(shares.iter().max().unwrap() - shares.iter().min().unwrap() <= 1);

        let ts: Vec<Target> = (0..n).map(|i| Target::new("p", format!("b{i:02}"))).collect();
        let circuits: Vec<Arc<Circuit>> = (0..ncirc).map(|_| Arc::new(Circuit::bell())).collect();
        let d = split_even(&circuits, shots, &ts, &Params::new()).unwrap();
        prop_assert_eq!(d.total_shots(), shots * ncirc as u64);
        prop_assert_eq!(d.total_jobs(), ncirc * n.min(shots as usize));
    }

    #[test]
    fn multiplier_total_is_product(shots in 1u64..=1_000_000, ts in targets(50), ncirc in 1usize..4) {
        let circuits: Vec<Arc<Circuit>> = (0..ncirc).map(|_| Arc::new(Circuit::ghz(2))).collect();
        let d = split_multiplier(&circuits, shots, &ts, &Params::new()).unwrap();
        prop_assert_eq!(d.total_jobs(), ncirc * ts.len());
        prop_assert_eq!(d.total_shots(), shots * (ncirc * ts.len()) as u64);
        prop_assert!(d.jobs().all(|(_, j)| j.shots == shots));
    }

    #[test]
    fn tvd_is_a_bounded_metric(p in counts(3), q in counts(3), r in counts(3)) {
        let pq = tvd(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&pq));
        prop_assert!(tvd(&p, &p).unwrap().abs() < 1e-12);
        prop_assert!((pq - tvd(&q, &p).unwrap()).abs() < 1e-12);
        prop_assert!(pq <= tvd(&p, &r).unwrap() + tvd(&r, &q).unwrap() + 1e-12);
    }

    #[test]
    fn tvd_is_scale_invariant(p in counts(2), k in 1u64..50) {
        let scaled: Counts = p.iter().map(|(b, n)| (b.to_string(), n * k)).collect();
        prop_assert!(tvd(&p, &scaled).unwrap() < 1e-12);
    }

    #[test]
    fn merge_sum_is_associative(a in counts(2), b in counts(2), c in counts(2)) {
        let tree = |leaves: &[&Counts]| {
            let mut t = ResultTree::new();
            for (i, l) in leaves.iter().enumerate() {
                t.push("p", format!("b{i}"), (*l).clone());
            }
            t
        };
        let ctx = Params::new();
        let (ab, _) = merge_sum(&tree(&[&a, &b]), &ctx).unwrap();
        let (ab_c, _) = merge_sum(&tree(&[&ab, &c]), &ctx).unwrap();
        let (bc, _) = merge_sum(&tree(&[&b, &c]), &ctx).unwrap();
        let (a_bc, _) = merge_sum(&tree(&[&a, &bc]), &ctx).unwrap();
        let (flat, meta) = merge_sum(&tree(&[&a, &b, &c]), &ctx).unwrap();
        prop_assert_eq!(&ab_c, &a_bc);
        prop_assert_eq!(&ab_c, &flat);
        prop_assert_eq!(flat.total(), a.total() + b.total() + c.total());
        prop_assert_eq!(meta["jobs"].as_u64(), Some(3));
    }

    #[test]
    fn statevector_stays_normalized(c in circuit(7, 40)) {
        let sv = Simulator::sequential().statevector(&c).unwrap();
        prop_assert!((sv.norm_sqr() - 1.0).abs() < 1e-9);
        let total: f64 = sv.probabilities().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn self_inverse_gates_restore_state(c in circuit(5, 20), q in 0usize..5, r in 0usize..5, which in 0usize..3) {
        let w = c.width;
        let (q, r) = (q % w, r % w);
        let op = match which {
            0 => GateOp::x(q),
            1 => GateOp::h(q),
            _ if w >= 2 && q != r => GateOp::cx(q, r),
            _ => GateOp::h(q),
        };
        let before = Simulator::sequential().statevector(&c).unwrap();
        let mut after = before.clone();
        after.apply(&op, ExecMode::Sequential);
        after.apply(&op, ExecMode::Sequential);
        prop_assert!((overlap(&before, &after) - 1.0).abs() < 1e-9);
        for (x, y) in before.amplitudes().iter().zip(after.amplitudes()) {
            prop_assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn sample_counts_sum_to_shots(c in circuit(4, 10), shots in 1u64..5000, seed in any::<u64>()) {
        let counts = Simulator::sequential().sample(&c, shots, seed).unwrap();
        prop_assert_eq!(counts.total(), shots);
        prop_assert!(counts.keys().all(|k| k.len() == c.width));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn sampling_matches_born_rule(c in circuit(4, 12), seed in any::<u64>()) {
        let shots = 100_000;
        let sv = Simulator::default().statevector(&c).unwrap();
        let counts = Simulator::default().sample(&c, shots, seed).unwrap();
        let l1: f64 = sv
            .distribution()
            .iter()
            .map(|(b, p)| (counts.get(b) as f64 / shots as f64 - p).abs())
            .sum::<f64>()
            + counts.iter().filter(|(b, _)| !sv.distribution().contains_key(*b)).map(|(_, n)| n as f64 / shots as f64).sum::<f64>();
        prop_assert!(0.5 * l1 < 0.01, "tvd {}", 0.5 * l1);
    }
}
