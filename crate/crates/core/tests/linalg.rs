mod common;

use common::{dense, random_spd, rng};
use nalgebra::DMatrix;
use proptest::prelude::*;
use skewinla::cholesky::{minimum_degree_order, SymbolicCholesky};
use skewinla::{CholeskyFactor, CscMatrix};
use std::sync::Arc;

fn factor_dense(f: &CholeskyFactor) -> DMatrix<f64> {
    let p = f.dim();
    let mut l = DMatrix::zeros(p, p);
    for j in 0..p {
        for (i, v) in f.l_col(j) {
            l[(i, j)] = v;
        }
    }
    l
}

fn permuted(a: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(perm[i], perm[j])])
}

#[test]
fn factor_reconstructs_permuted_matrix() {
    let mut r = rng(1);
    for p in [1, 2, 7, 40, 90] {
        let a = random_spd(&mut r, p, 0.08);
        let f = CholeskyFactor::new(&a).unwrap();
        let l = factor_dense(&f);
        let pa = permuted(&dense(&a), f.symbolic().perm());
        let err = (&l * l.transpose() - &pa).abs().max();
        assert!(err < 1e-10 * pa.abs().max(), "p = {p}: {err}");
    }
}

#[test]
fn solve_and_log_det_match_dense() {
    let mut r = rng(2);
    let a = random_spd(&mut r, 60, 0.1);
    let d = dense(&a);
    let f = CholeskyFactor::new(&a).unwrap();
    let b: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
    let x = f.solve(&b);
    let x_ref = d.clone().lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
    for (u, v) in x.iter().zip(x_ref.iter()) {
        assert!((u - v).abs() < 1e-10);
    }
    let ld = d.clone().cholesky().unwrap().l().diagonal().iter().map(|v| 2.0 * v.ln()).sum::<f64>();
    assert!((f.log_det() - ld).abs() < 1e-9);
    let quad = b.iter().zip(&x_ref).map(|(u, v)| u * v).sum::<f64>();
    assert!((f.inv_quad_form(&b) - quad).abs() < 1e-9);
}

#[test]
fn colour_inverts_whiten() {
    let mut r = rng(3);
    let a = random_spd(&mut r, 30, 0.2);
    let f = CholeskyFactor::new(&a).unwrap();
    let z: Vec<f64> = (0..30).map(|i| (i as f64).cos()).collect();
    let back = f.whiten(&a.mul_vec(&f.colour(&z)).unwrap());
    for (u, v) in back.iter().zip(&z) {
        assert!((u - v).abs() < 1e-10);
    }
}

#[test]
fn selected_inverse_matches_dense_inverse_on_pattern() {
    let mut r = rng(4);
    for p in [3, 25, 80] {
        let a = random_spd(&mut r, p, 0.1);
        let inv = dense(&a).try_inverse().unwrap();
        let sel = CholeskyFactor::new(&a).unwrap().selected_inverse();
        for (i, j, _) in a.triplets() {
            let v = sel.get(i, j).expect("pattern entry present");
            assert!((v - inv[(i, j)]).abs() < 1e-10, "({i}, {j})");
        }
        for (k, d) in sel.diagonal().iter().enumerate() {
            assert!((d - inv[(k, k)]).abs() < 1e-10);
        }
    }
}

#[test]
fn ordering_does_not_change_results() {
    let mut r = rng(5);
    let a = random_spd(&mut r, 50, 0.1);
    let natural = CholeskyFactor::with_symbolic(Arc::new(SymbolicCholesky::with_ordering(&a, (0..50).collect())), &a).unwrap();
    let amd = CholeskyFactor::new(&a).unwrap();
    assert!((natural.log_det() - amd.log_det()).abs() < 1e-10);
    let (s1, s2) = (natural.selected_inverse().diagonal(), amd.selected_inverse().diagonal());
    for (u, v) in s1.iter().zip(&s2) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn minimum_degree_is_a_permutation_and_reduces_fill_on_arrow() {
    let p = 40;
    let mut t = vec![];
    for i in 0..p {
        t.push((i, i, 4.0 * p as f64));
        if i > 0 {
            t.push((0, i, 1.0));
            t.push((i, 0, 1.0));
        }
    }
    let a = CscMatrix::from_triplets(p, p, &t).unwrap();
    let mut order = minimum_degree_order(&a);
    let sym = SymbolicCholesky::analyse(&a).unwrap();
    assert!(sym.factor_nnz() <= 2 * p, "{}", sym.factor_nnz());
    order.sort();
    assert_eq!(order, (0..p).collect::<Vec<_>>());
}

#[test]
fn indefinite_matrix_is_rejected() {
    let a = CscMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0), (0, 1, 2.0), (1, 0, 2.0)]).unwrap();
    assert!(matches!(CholeskyFactor::new(&a), Err(skewinla::Error::NotPositiveDefinite { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn selected_inverse_diagonal_is_inverse_diagonal(seed in 0u64..10_000, p in 2usize..40, fill in 0.01f64..0.3) {
        let mut r = rng(seed);
        let a = random_spd(&mut r, p, fill);
        let inv = dense(&a).try_inverse().unwrap();
        let diag = CholeskyFactor::new(&a).unwrap().selected_inverse().diagonal();
        for (k, d) in diag.iter().enumerate() {
            prop_assert!((d - inv[(k, k)]).abs() <= 1e-9 * inv[(k, k)].abs().max(1.0));
        }
    }

    #[test]
    fn transpose_and_products_agree_with_dense(seed in 0u64..10_000, n in 1usize..20, p in 1usize..20) {
        let mut r = rng(seed);
        let a = common::random_design(&mut r, n, p);
        let d = dense(&a);
        let x: Vec<f64> = (0..p).map(|i| i as f64 - 3.0).collect();
        let y = a.mul_vec(&x).unwrap();
        let yd = &d * nalgebra::DVector::from_vec(x);
        for (u, v) in y.iter().zip(yd.iter()) {
            prop_assert!((u - v).abs() < 1e-10);
        }
        prop_assert_eq!(dense(&a.transpose()), d.transpose());
    }
}
