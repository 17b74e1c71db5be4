use std::f64::consts::PI;

use nalgebra::DVector;
use proptest::prelude::*;

use floquet_hb::hb::{self, ForwardProblem};
use floquet_hb::inverse::{assemble_stacked, eps_from_anharmonicity, StackedInverseProblem};
use floquet_hb::magnus::PolyVectorField;
use floquet_hb::models::{DriveModel, MathieuModel, TargetPotential};
use floquet_hb::oracles::monodromy;
use floquet_hb::runner::format_number;
use floquet_hb::{CoefficientTable, FrequencyPair, HarmonicIndexSet, MdftOperator, SamplingGrid};

fn index_set() -> impl Strategy<Value = HarmonicIndexSet> {
    (0u32..=4, 1u32..=5, any::<bool>()).prop_map(|(m, k, k0)| HarmonicIndexSet::build(m, k, k0, 0.0).unwrap())
}

fn poly_field() -> impl Strategy<Value = PolyVectorField> {
    prop::collection::vec((0usize..2, 0u32..=3, 0u32..=3, -3i32..=3), 0..6).prop_map(|terms| {
        let mut f = PolyVectorField::zero();
        for (c, pu, pv, a) in terms {
            f.add_term(c, pu, pv, a as f64);
        }
        f
    })
}

fn sum(a: &PolyVectorField, b: &PolyVectorField, c: &PolyVectorField) -> PolyVectorField {
    let mut s = a.clone();
    s.add_scaled(b, 1.0);
    s.add_scaled(c, 1.0);
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mdft_round_trip(set in index_set(), theta in -PI..PI, omega in 0.05f64..0.95, seed in any::<u64>()) {
        let grid = SamplingGrid::for_index_set(&set, 2);
        let Ok(op) = MdftOperator::build(&set, &grid, FrequencyPair::new(omega, 2.0).unwrap(), theta) else {
            return Ok(());
        };
        let mut s = seed;
        let amps: Vec<f64> = (0..set.len())
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        let table = CoefficientTable::new(set, amps.clone(), theta).unwrap();
        let back = op.analyze(&op.synthesize(&table).unwrap()).unwrap();
        let err = back.amplitudes.iter().zip(&amps).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-10, "round-trip error {err:e}");
    }

    #[test]
    fn forward_system_is_square(set in index_set(), q in 0.05f64..0.6, a01 in 0.01f64..0.3) {
        let mut m = MathieuModel::reference_trap();
        m.q = q;
        let p = ForwardProblem::new(Box::new(m), set.clone(), a01);
        prop_assert_eq!(p.unknown_count(), set.len());
        let x = p.initial_unknowns();
        prop_assert_eq!(x.len(), set.len());
        prop_assert_eq!(hb::assemble_residual(&p, &x).unwrap().len(), set.len());
        let j = hb::jacobian(&p, &x).unwrap();
        prop_assert_eq!((j.nrows(), j.ncols()), (set.len(), set.len()));
    }

    #[test]
    fn stacked_system_is_square(set in index_set(), nc in 1usize..=3) {
        let mut m = MathieuModel::reference_trap();
        m.q = 0.3;
        let controls: Vec<String> = ["alpha_dc_4", "alpha_dc_6", "alpha_dc_8"][..nc].iter().map(|s| s.to_string()).collect();
        m.set_controls(controls).unwrap();
        let target = eps_from_anharmonicity(&TargetPotential::from_anharmonicities([(4, 0.4)])).unwrap();
        let p = StackedInverseProblem::new(Box::new(m), set.clone(), target);
        prop_assert_eq!(p.blocks.len(), nc + 1);
        prop_assert_eq!(p.unknown_count(), (nc + 1) * set.len());
        prop_assert_eq!(p.equation_count(), (nc + 1) * set.len());
        let mut x = DVector::from_element(p.unknown_count(), 1e-3);
        let w = p.unknown_count() - nc - 1;
        x[w] = 0.3;
        prop_assert_eq!(assemble_stacked(&p, &x).unwrap().len(), p.equation_count());
    }

    #[test]
    fn forward_jacobian_matches_finite_differences(
        q in 0.1f64..0.6,
        a01 in 0.01f64..0.3,
        m in 1u32..=3,
        k in 1u32..=4,
    ) {
        let set = HarmonicIndexSet::build(m, k, false, 0.0).unwrap();
        let mut model = MathieuModel::reference_trap();
        model.q = q;
        let p = ForwardProblem::new(Box::new(model), set, a01);
        let mut x = p.initial_unknowns();
        for (i, v) in x.iter_mut().enumerate() {
            *v += 1e-3 * a01 * ((i as f64 * 0.7).sin());
        }
        let j = hb::jacobian(&p, &x).unwrap();
        let mut worst = 0.0f64;
        for c in 0..x.len() {
            let h = 1e-6 * x[c].abs().max(a01);
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[c] += h;
            xm[c] -= h;
            let fd = (hb::assemble_residual(&p, &xp).unwrap() - hb::assemble_residual(&p, &xm).unwrap()) / (2.0 * h);
            let col = j.column(c);
            worst = worst.max((col - &fd).amax() / col.amax().max(a01));
        }
        prop_assert!(worst <= 1e-5, "worst column error {worst:e}");
    }

    #[test]
    fn lie_bracket_is_antisymmetric(f in poly_field(), g in poly_field()) {
        let mut s = f.lie_bracket(&g);
        s.add_scaled(&g.lie_bracket(&f), 1.0);
        prop_assert!(s.is_zero());
    }

    #[test]
    fn lie_bracket_satisfies_jacobi(f in poly_field(), g in poly_field(), h in poly_field()) {
        let a = f.lie_bracket(&g.lie_bracket(&h));
        let b = g.lie_bracket(&h.lie_bracket(&f));
        let c = h.lie_bracket(&f.lie_bracket(&g));
        prop_assert!(sum(&a, &b, &c).is_zero());
    }

    #[test]
    fn monodromy_preserves_area(q in 0.0f64..0.9, a in -0.2f64..0.6) {
        let m = monodromy(q, a).unwrap();
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        prop_assert!((det - 1.0).abs() <= 1e-10, "det = {det}");
    }

    #[test]
    fn csv_numbers_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let s = format_number(v);
        let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
        prop_assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17);
        let back: f64 = s.parse().unwrap();
        prop_assert!(back == v);
    }

    #[test]
    fn model_parameters_round_trip(v in -10.0f64..10.0, i in 0usize..12) {
        let mut m = MathieuModel::new(0.1, 0.0);
        m.set_param(i, v).unwrap();
        prop_assert_eq!(m.param(i), Some(v));
    }
}
