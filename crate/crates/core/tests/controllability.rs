use nalgebra::DMatrix;
use proptest::prelude::*;
use qoct::controllability::{lie_closure, lie_rank, vectorize, NLevelControlSystem};
use qoct::C64;

fn commutator(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a * b - b * a
}

/// Rank of all right-nested brackets of the generators up to `depth`, without pruning.
fn brute_force_rank(gens: &[DMatrix<C64>], depth: usize) -> usize {
    let mut all: Vec<DMatrix<C64>> = gens.to_vec();
    let mut layer = gens.to_vec();
    for _ in 0..depth {
        let mut next = Vec::new();
        for g in gens {
            for x in &layer {
                let c = commutator(g, x);
                let n = c.norm();
                if n > 1e-12 {
                    next.push(c / C64::new(n, 0.0));
                }
            }
        }
        all.extend(next.iter().cloned());
        layer = next;
    }
    let n = gens[0].nrows();
    let dim = 2 * n * n;
    let w = DMatrix::from_fn(dim, all.len(), |r, c| {
        let z = all[c][(r / 2 / n, (r / 2) % n)];
        if r % 2 == 0 {
            z.re
        } else {
            z.im
        }
    });
    let sv = w.svd(false, false).singular_values;
    let top = sv.max();
    sv.iter().filter(|s| **s > 1e-9 * top).count()
}

fn hermitian(n: usize, vals: &[f64], mask: &[bool]) -> DMatrix<C64> {
    let mut m = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            let (re, im) = (vals[k], if i == j { 0.0 } else { vals[k + 1] });
            k += 2;
            if !mask[i * n + j] {
                continue;
            }
            m[(i, j)] = C64::new(re, im);
            m[(j, i)] = C64::new(re, -im);
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn rank_matches_brute_force_at_three_levels(
        v0 in proptest::collection::vec(-1.0f64..1.0, 12),
        v1 in proptest::collection::vec(-1.0f64..1.0, 12),
        m0 in proptest::collection::vec(any::<bool>(), 9),
        m1 in proptest::collection::vec(any::<bool>(), 9),
        traceless in any::<bool>(),
    ) {
        let mut h0 = hermitian(3, &v0, &m0);
        let mut h1 = hermitian(3, &v1, &m1);
        if traceless {
            let t0 = h0.trace() / C64::new(3.0, 0.0);
            let t1 = h1.trace() / C64::new(3.0, 0.0);
            for i in 0..3 {
                h0[(i, i)] -= t0;
                h1[(i, i)] -= t1;
            }
        }
        prop_assume!(h0.norm() > 1e-3 && h1.norm() > 1e-3);
        let sys = NLevelControlSystem::new(h0.clone(), vec![h1.clone()]).unwrap();
        let i = C64::i();
        let oracle = brute_force_rank(&[h0.map(|z| z * i), h1.map(|z| z * i)], 8);
        let (rank, full) = lie_rank(&sys, 1e-9).unwrap();
        prop_assert_eq!(rank, oracle);
        prop_assert_eq!(full, rank == 9);
        if traceless {
            prop_assert!(rank <= 8);
        }
    }
}

#[test]
fn vectorize_is_an_isometry() {
    let i = C64::i();
    let h = hermitian(3, &[0.3, 0.0, 0.5, -0.2, 0.1, 0.4, -0.7, 0.0, 0.9, 0.6, 0.2, 0.0], &[true; 9]);
    let x = h.map(|z| z * i);
    assert!((vectorize(&x).norm() - x.norm()).abs() < 1e-14);
}

#[test]
fn closure_elements_are_orthogonal_unit_directions() {
    let sys = NLevelControlSystem::two_level(0.0, 0.1568, 0.3921);
    let basis = lie_closure(&sys, 1e-9).unwrap();
    assert_eq!(basis.rank, 4);
    assert_eq!(basis.elements.len(), 4);
    for e in &basis.elements {
        assert!((e.norm() - 1.0).abs() < 1e-12);
        assert!((e + e.adjoint()).norm() < 1e-12);
    }
    let sv = basis.singular_values();
    assert_eq!(sv.len(), 4);
    assert!(sv.iter().all(|s| *s > 1e-3));
}

#[test]
fn uncoupled_and_diagonal_controls_are_not_controllable() {
    let h0 = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.5]);
    let diag = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.3]);
    assert_eq!(lie_rank(&NLevelControlSystem::from_real(&h0, &[diag]).unwrap(), 1e-9).unwrap(), (2, false));
    let chain = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.7, 0.0, 0.7, 0.0]);
    assert_eq!(lie_rank(&NLevelControlSystem::from_real(&h0, &[chain]).unwrap(), 1e-9).unwrap(), (9, true));
}

#[test]
fn rejects_non_hermitian_input() {
    let h0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    assert!(NLevelControlSystem::from_real(&h0, &[]).is_err());
    assert!(NLevelControlSystem::parse("0 1\n\n1 0\n0 0\n").is_err());
}
