use nalgebra::{DMatrix, SymmetricEigen};
use qoct::propagator::{imaginary_time_eigenstates, EigenOptions};
use qoct::qsystem::{braket, GridSystem, Potential, SpatialGrid};

/// `p²/2 + V` in the plane-wave basis of the periodic grid, mapped back to position space.
fn dense_hamiltonian(sys: &GridSystem) -> DMatrix<f64> {
    let g = sys.grid();
    let n = g.n_points();
    let k = g.momenta();
    let v = sys.potential();
    DMatrix::from_fn(n, n, |a, b| {
        let d = (a as f64 - b as f64) * g.dx();
        let t: f64 = k.iter().map(|km| 0.5 * km * km * (km * d).cos()).sum::<f64>() / n as f64;
        if a == b {
            t + v[a]
        } else {
            t
        }
    })
}

fn sorted_eigenvalues(h: DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

#[test]
fn double_well_matches_dense_diagonalization() {
    let g = SpatialGrid::new(30.0, 256).unwrap();
    let sys = GridSystem::new(g, &Potential::double_well());
    let eig = imaginary_time_eigenstates(&sys, 5, &EigenOptions::default()).unwrap();
    let dense = sorted_eigenvalues(dense_hamiltonian(&sys));
    for (k, (a, b)) in eig.energies.iter().zip(&dense).enumerate() {
        assert!((a - b).abs() < 1e-6, "state {k}: {a} vs dense {b}");
    }
}

#[test]
fn harmonic_levels_are_equally_spaced() {
    let g = SpatialGrid::new(15.0, 512).unwrap();
    let sys = GridSystem::new(g, &Potential::Harmonic { omega: 1.0 });
    let eig = imaginary_time_eigenstates(&sys, 4, &EigenOptions::default()).unwrap();
    for (k, e) in eig.energies.iter().enumerate() {
        assert!((e - (k as f64 + 0.5)).abs() < 1e-5, "E_{k} = {e}");
    }
    for w in eig.energies.windows(2) {
        assert!((w[1] - w[0] - 1.0).abs() < 1e-5);
    }
}

#[test]
fn eigenstates_are_orthonormal_with_alternating_parity() {
    let g = SpatialGrid::new(15.0, 512).unwrap();
    let sys = GridSystem::new(g, &Potential::Harmonic { omega: 1.0 });
    let eig = imaginary_time_eigenstates(&sys, 4, &EigenOptions::default()).unwrap();
    for a in 0..4 {
        for b in 0..4 {
            let s = braket(g.dx(), eig.states[a].amplitudes(), eig.states[b].amplitudes());
            let expected = if a == b { 1.0 } else { 0.0 };
            assert!((s.norm() - expected).abs() < 1e-8, "<{a}|{b}> = {s}");
        }
    }
    let x = g.positions();
    for (k, s) in eig.states.iter().enumerate() {
        let d: f64 = s.amplitudes().iter().zip(&x).map(|(z, x)| x * z.norm_sqr()).sum::<f64>() * g.dx();
        assert!(d.abs() < 1e-4, "state {k} has mean position {d}");
    }
}

#[test]
fn single_state_request() {
    let g = SpatialGrid::new(15.0, 256).unwrap();
    let sys = GridSystem::new(g, &Potential::Harmonic { omega: 1.0 });
    let eig = imaginary_time_eigenstates(&sys, 1, &EigenOptions::default()).unwrap();
    assert_eq!(eig.energies.len(), 1);
    assert!(imaginary_time_eigenstates(&sys, 0, &EigenOptions::default()).is_err());
    assert!(imaginary_time_eigenstates(&sys, 9, &EigenOptions::default()).is_err());
}
