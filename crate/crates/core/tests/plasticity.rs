#![allow(clippy::needless_range_loop)]

mod common;

use mushroom_core::net::Weights;
use mushroom_core::plasticity::{
    apply_rule, gmr, gur, lmsr, mcr, mor, nscor, nscr, slr, RuleId, RuleParams, SynapticInputs,
};
use proptest::prelude::*;

const TOL: f64 = 1e-12;

fn one(
    f: fn(&SynapticInputs<'_>, &RuleParams, &Weights) -> mushroom_core::Result<Weights>,
    x_e: f64,
    x_o: f64,
    x_m: f64,
    p: RuleParams,
    w: f64,
) -> f64 {
    let (e, o, m) = ([x_e], [x_o], [x_m]);
    let w = Weights::from_vec(1, 1, vec![w]).unwrap();
    f(&SynapticInputs::new(&e, &o, &m), &p, &w)
        .unwrap()
        .get(0, 0)
}

fn params(alpha: f64, b1: f64, b2: f64, b3: f64) -> RuleParams {
    RuleParams::new(alpha, b1, b2, b3)
}

#[test]
fn mcr_scalar() {
    let w = one(mcr, 1.0, 0.2, 1.0, params(0.1, 0.5, 0.0, 0.0), 0.0);
    assert!((w - 0.04).abs() < TOL);
}

#[test]
fn mcr_closed_gate_and_silence() {
    assert_eq!(
        one(mcr, 1.0, 0.9, 0.5, params(0.3, 0.2, 0.0, 0.0), 0.7),
        0.7
    );
    assert_eq!(
        one(mcr, 0.0, 0.0, 1.0, params(0.3, 0.2, 0.0, 0.0), 0.7),
        0.7
    );
}

#[test]
fn nscr_fixed_point_and_growth() {
    assert!((one(nscr, 1.0, 0.0, 1.0, params(1.0, 1.0, 0.0, 0.0), 1.0) - 1.0).abs() < TOL);
    assert!((one(nscr, 1.0, 0.0, 1.0, params(1.0, 0.5, 0.0, 0.0), 0.0) - 1.0).abs() < TOL);
    assert_eq!(
        one(nscr, 1.0, 0.6, 0.6, params(1.0, 0.5, 0.0, 0.0), 0.3),
        0.3
    );
}

#[test]
fn nscor_scalar() {
    let w = one(nscor, 1.0, 0.0, 1.0, params(0.5, 0.2, 0.0, 0.0), 1.0);
    assert!((w - 1.4).abs() < TOL);
    assert_eq!(
        one(nscor, 0.0, 0.0, 1.0, params(0.5, 0.2, 0.0, 0.0), 0.0),
        0.0
    );
}

#[test]
fn mor_scalar() {
    let w = one(mor, 1.0, 0.5, 1.0, params(1.0, 1.0, 0.0, 0.0), 1.0);
    assert!((w - 1.375).abs() < TOL);
    // no decay when the output is silent
    let w = one(mor, 1.0, 0.0, 1.0, params(0.2, 1.0, 0.0, 0.0), 0.5);
    assert!((w - 0.7).abs() < TOL);
    assert_eq!(
        one(mor, 1.0, 1.0, 0.5, params(0.2, 1.0, 0.0, 0.0), 0.5),
        0.5
    );
}

#[test]
fn lmsr_scalar() {
    let w = one(lmsr, 1.0, 0.2, 1.0, params(0.5, 0.0, 0.0, 0.0), 0.0);
    assert!((w - 0.4).abs() < TOL);
    assert_eq!(
        one(lmsr, 1.0, 0.3, 0.3, params(0.5, 0.0, 0.0, 0.0), 0.1),
        0.1
    );
    assert_eq!(
        one(lmsr, 0.0, 0.2, 1.0, params(0.5, 0.0, 0.0, 0.0), 0.1),
        0.1
    );
}

#[test]
fn slr_scalar() {
    assert!((one(slr, 1.0, 0.0, 1.0, params(1.0, 0.0, 0.0, 0.0), 0.0) - 0.5).abs() < TOL);
    assert_eq!(
        one(slr, 1.0, 0.0, 1.0, params(0.7, 0.0, 0.0, 0.0), 1.0),
        1.0
    );
    assert_eq!(
        one(slr, 1.0, 0.5, 0.5, params(0.7, 0.3, 0.0, 0.0), 0.25),
        0.25
    );
}

#[test]
fn gmr_scalar() {
    assert!((one(gmr, 1.0, 0.0, 1.0, params(1.0, 0.0, 0.0, 0.7), 0.0) - 0.7).abs() < TOL);
    assert_eq!(
        one(gmr, 1.0, 0.4, 0.0, params(1.0, 0.5, 0.5, 0.7), 0.2),
        0.2
    );
    // x_o = x_e removes the beta2 term
    let a = one(gmr, 0.5, 0.5, 1.0, params(0.3, 0.2, 0.9, 0.1), 0.0);
    let b = one(gmr, 0.5, 0.5, 1.0, params(0.3, 0.2, 0.0, 0.1), 0.0);
    assert!((a - b).abs() < TOL);
}

#[test]
fn gur_scalar() {
    assert!((one(gur, 0.0, 1.0, 0.0, params(0.1, 1.0, 1.0, 0.0), 0.0) - 0.2).abs() < TOL);
    assert_eq!(
        one(gur, 1.0, 0.3, 1.0, params(0.1, 0.0, 0.0, 0.0), 0.4),
        0.4
    );
    let a = one(gur, 1.0, 0.3, 0.0, params(0.1, 0.4, 0.2, 0.3), 0.4);
    let b = one(gur, 1.0, 0.3, 1.0, params(0.1, 0.4, 0.2, 0.3), 0.4);
    assert_eq!(a, b);
}

#[test]
fn dispatch_matches_operator() {
    let w = one(
        |s, p, w| apply_rule(RuleId::Mcr, s, p, w),
        1.0,
        0.2,
        1.0,
        params(0.1, 0.5, 0.0, 0.0),
        0.0,
    );
    assert!((w - 0.04).abs() < TOL);
}

#[test]
fn shape_mismatch_rejected() {
    let w = Weights::zeros(3, 2);
    let (e, o, m) = ([1.0, 0.0], [0.0, 0.0], [1.0, 0.0]);
    let s = SynapticInputs::new(&e, &o, &m);
    for r in RuleId::ALL {
        assert!(apply_rule(r, &s, &params(0.1, 0.1, 0.1, 0.1), &w).is_err());
    }
}

fn instance(
    n_hidden: usize,
    n_out: usize,
) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, RuleParams)> {
    (
        prop::collection::vec(
            prop::bool::ANY.prop_map(|b| if b { 1.0 } else { 0.0 }),
            n_hidden,
        ),
        prop::collection::vec(0.0..1.5f64, n_out),
        prop::collection::vec(0.0..1.0f64, n_out),
        prop::collection::vec(-1.0..1.0f64, n_hidden * n_out),
        (1e-3..1.0f64, 1e-5..1.0f64, 1e-5..1.0f64, 1e-5..1.0f64)
            .prop_map(|(a, b1, b2, b3)| RuleParams::new(a, b1, b2, b3)),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn every_rule_matches_synapse_formula((x_e, x_o, x_m, w, p) in instance(6, 3)) {
        let weights = Weights::from_vec(6, 3, w.clone()).unwrap();
        let nested: Vec<Vec<f64>> = w.chunks(3).map(<[f64]>::to_vec).collect();
        let s = SynapticInputs::new(&x_e, &x_o, &x_m);
        for r in RuleId::ALL {
            let got = apply_rule(r, &s, &p, &weights).unwrap();
            let want = common::naive_rule(r, &x_e, &x_o, &x_m, &p, &nested);
            for i in 0..6 {
                for j in 0..3 {
                    prop_assert!((got.get(i, j) - want[i][j]).abs() <= TOL * (1.0 + want[i][j].abs()),
                        "{r}: ({i},{j}) {} vs {}", got.get(i, j), want[i][j]);
                }
            }
        }
    }

    #[test]
    fn shape_is_preserved((x_e, x_o, x_m, w, p) in instance(5, 4)) {
        let weights = Weights::from_vec(5, 4, w).unwrap();
        let s = SynapticInputs::new(&x_e, &x_o, &x_m);
        for r in RuleId::ALL {
            prop_assert_eq!(apply_rule(r, &s, &p, &weights).unwrap().shape(), (5, 4));
        }
    }

    #[test]
    fn additive_rules_scale_with_alpha((x_e, x_o, x_m, w, p) in instance(4, 3), c in 0.1..3.0f64) {
        let weights = Weights::from_vec(4, 3, w).unwrap();
        let s = SynapticInputs::new(&x_e, &x_o, &x_m);
        let scaled = RuleParams { alpha: p.alpha * c, ..p };
        for r in RuleId::ALL.into_iter().filter(|r| r.is_additive()) {
            let d1 = apply_rule(r, &s, &p, &weights).unwrap();
            let d2 = apply_rule(r, &s, &scaled, &weights).unwrap();
            for (k, (&a, &b)) in d1.as_slice().iter().zip(d2.as_slice()).enumerate() {
                let base = weights.as_slice()[k];
                prop_assert!(((b - base) - c * (a - base)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn lmsr_ignores_betas((x_e, x_o, x_m, w, p) in instance(4, 3), b in 1e-5..1.0f64) {
        let weights = Weights::from_vec(4, 3, w).unwrap();
        let s = SynapticInputs::new(&x_e, &x_o, &x_m);
        let other = RuleParams::new(p.alpha, b, 1.0 - b / 2.0, b * b);
        prop_assert_eq!(apply_rule(RuleId::Lmsr, &s, &p, &weights).unwrap(),
            apply_rule(RuleId::Lmsr, &s, &other, &weights).unwrap());
    }
}

fn closed_gate() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 3).prop_map(|pairs| {
        let x_m: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let x_o: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
        (x_o, x_m)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn gated_rules_idle_when_gate_closed((x_e, _, _, w, p) in instance(5, 3), (x_o, x_m) in closed_gate()) {
        let weights = Weights::from_vec(5, 3, w).unwrap();
        let s = SynapticInputs::new(&x_e, &x_o, &x_m);
        for r in RuleId::ALL.into_iter().filter(|r| r.is_gated()) {
            prop_assert_eq!(apply_rule(r, &s, &p, &weights).unwrap(), weights.clone());
        }
    }

    #[test]
    fn silent_input_freezes_some_rules((_, x_o, x_m, w, p) in instance(5, 3)) {
        let weights = Weights::from_vec(5, 3, w).unwrap();
        let x_e = vec![0.0; 5];
        let s = SynapticInputs::new(&x_e, &x_o, &x_m);
        for r in [RuleId::Lmsr, RuleId::Mcr, RuleId::Nscr] {
            prop_assert_eq!(apply_rule(r, &s, &p, &weights).unwrap(), weights.clone());
        }
    }

    #[test]
    fn slr_stays_within_ceiling(
        (x_e, x_o, x_m, _, p) in instance(5, 3),
        w in prop::collection::vec(0.0..=1.0f64, 15),
    ) {
        let weights = Weights::from_vec(5, 3, w).unwrap();
        let s = SynapticInputs::new(&x_e, &x_o, &x_m);
        let out = apply_rule(RuleId::Slr, &s, &p, &weights).unwrap();
        prop_assert!(out.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
