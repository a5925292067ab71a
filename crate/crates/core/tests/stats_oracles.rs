//! Compares the tests against reference values produced by
//! `fixtures/oracles/stats_oracle.py` before the library existed.

mod common;

use pandora_core::stats::{chi_squared, fisher_exact, paired_t, permutation_mcc, permutation_test};
use serde::Deserialize;

const TOL: f64 = 1e-9;

#[derive(Deserialize)]
struct Oracle {
    fisher: FisherCase,
    chi_squared: Vec<TableCase>,
    paired_t: Vec<PairedCase>,
}

#[derive(Deserialize)]
struct FisherCase {
    table: [[u64; 2]; 2],
    p_enum: f64,
}

#[derive(Deserialize)]
struct TableCase {
    table: [[u64; 2]; 2],
    statistic: f64,
    p_value: f64,
    fisher_p: f64,
}

#[derive(Deserialize)]
struct PairedCase {
    a: Vec<f64>,
    b: Vec<f64>,
    statistic: f64,
    p_value: f64,
}

fn oracle() -> Oracle {
    serde_json::from_str(&std::fs::read_to_string(common::fixture("oracles/stats_oracle.json")).unwrap()).unwrap()
}

fn close(got: f64, want: f64) -> bool {
    (got - want).abs() <= TOL * want.abs().max(1.0)
}

#[test]
fn fisher_reference_table() {
    let o = oracle().fisher;
    let got = fisher_exact(o.table).p_value;
    assert!(close(got, o.p_enum), "{got} vs {}", o.p_enum);
    assert!((got - 0.002759).abs() < 1e-6);
}

#[test]
fn chi_squared_and_fisher_on_random_tables() {
    let cases = oracle().chi_squared;
    assert_eq!(cases.len(), 50);
    for c in cases {
        let r = chi_squared(c.table).unwrap();
        assert!(close(r.statistic, c.statistic), "{:?}: {} vs {}", c.table, r.statistic, c.statistic);
        assert!(close(r.p_value, c.p_value), "{:?}: {} vs {}", c.table, r.p_value, c.p_value);
        let f = fisher_exact(c.table).p_value;
        assert!(close(f, c.fisher_p), "{:?}: fisher {f} vs {}", c.table, c.fisher_p);
    }
}

#[test]
fn paired_t_on_random_vectors() {
    let cases = oracle().paired_t;
    assert_eq!(cases.len(), 50);
    for c in cases {
        let r = paired_t(&c.a, &c.b).unwrap();
        assert!(close(r.statistic, c.statistic), "{} vs {}", r.statistic, c.statistic);
        assert!(close(r.p_value, c.p_value), "{} vs {}", r.p_value, c.p_value);
        assert_eq!(r.n, c.a.len());
    }
}

#[test]
fn permutation_tests_repeat_exactly_for_a_seed() {
    let a: Vec<i8> = (0..40).map(|i| if i % 3 == 0 { -1 } else { 1 }).collect();
    let b: Vec<i8> = (0..40).map(|i| if i % 4 == 0 { -1 } else { 1 }).collect();
    let x = permutation_mcc(&a, &b, 2_000, 42).unwrap();
    let y = permutation_mcc(&a, &b, 2_000, 42).unwrap();
    assert_eq!(x, y);
    let xs: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
    let ys: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).cos()).collect();
    let diff = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u - v).sum::<f64>();
    assert_eq!(
        permutation_test(&xs, &ys, 1_000, 5, diff).unwrap(),
        permutation_test(&xs, &ys, 1_000, 5, diff).unwrap()
    );
}
