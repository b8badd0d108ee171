use proptest::prelude::*;
use qoct::propagator::{Trajectory, TimeGrid};
use qoct::qsystem::{braket, NLevelSystem, SpatialGrid, Space, Wavefunction};
use qoct::targets::{
    evaluate_j1, FollowerCoefficients, FollowerPath, PathTable, TargetKind, TargetSpec, WeightFunction,
};
use qoct::{ControlField, C64};

const N: usize = 64;

fn grid() -> SpatialGrid {
    SpatialGrid::new(8.0, N).unwrap()
}

fn state(space: Space, re: &[f64], im: &[f64]) -> Wavefunction {
    let mut w = Wavefunction::new(space, re.iter().zip(im).map(|(a, b)| C64::new(*a, *b)).collect()).unwrap();
    w.normalize().unwrap();
    w
}

fn grid_kinds(phi: &Wavefunction) -> Vec<TargetKind> {
    let g = grid();
    let path = PathTable::new(vec![0.0, 10.0], vec![-2.0, 2.0]).unwrap();
    vec![
        TargetKind::Identity,
        TargetKind::Projection(phi.clone()),
        TargetKind::local_density(g, 1.0, Some(0.5)).unwrap(),
        TargetKind::moving_density(g, path, None).unwrap(),
        TargetKind::MultiObjective(vec![(0.3, TargetKind::Projection(phi.clone())), (0.7, TargetKind::local_density(g, -1.0, None).unwrap())]),
    ]
}

fn follower() -> TargetKind {
    let basis = (0..5).map(|k| Wavefunction::level(5, k).unwrap()).collect();
    let energies = vec![0.0, 0.1568, 0.7022, 1.0147, 1.5294];
    TargetKind::Follower(FollowerPath::new(basis, energies, FollowerCoefficients::OccupationPath, 800.0).unwrap())
}

fn hermiticity_defect(kind: &TargetKind, a: &Wavefunction, b: &Wavefunction, t: f64) -> f64 {
    let space = a.space();
    let m = space.measure();
    let mut oa = vec![C64::new(0.0, 0.0); space.dim()];
    let mut ob = oa.clone();
    kind.apply_into(space, a.amplitudes(), t, &mut oa).unwrap();
    kind.apply_into(space, b.amplitudes(), t, &mut ob).unwrap();
    (braket(m, a.amplitudes(), &ob) - braket(m, &oa, b.amplitudes())).norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grid_targets_are_hermitian(
        ar in proptest::collection::vec(-1.0f64..1.0, N), ai in proptest::collection::vec(-1.0f64..1.0, N),
        br in proptest::collection::vec(-1.0f64..1.0, N), bi in proptest::collection::vec(-1.0f64..1.0, N),
        t in 0.0f64..10.0,
    ) {
        let space = Space::Grid(grid());
        let (a, b) = (state(space, &ar, &ai), state(space, &br, &bi));
        let phi = state(space, &br, &ar);
        for kind in grid_kinds(&phi) {
            prop_assert!(kind.is_operator());
            let d = hermiticity_defect(&kind, &a, &b, t);
            prop_assert!(d < 1e-10, "{:?} defect {}", std::mem::discriminant(&kind), d);
        }
    }

    #[test]
    fn follower_is_hermitian_and_bounded(
        ar in proptest::collection::vec(-1.0f64..1.0, 5), ai in proptest::collection::vec(-1.0f64..1.0, 5),
        br in proptest::collection::vec(-1.0f64..1.0, 5), bi in proptest::collection::vec(-1.0f64..1.0, 5),
        t in 0.0f64..800.0,
    ) {
        let space = Space::Levels(5);
        let (a, b) = (state(space, &ar, &ai), state(space, &br, &bi));
        let kind = follower();
        prop_assert!(hermiticity_defect(&kind, &a, &b, t) < 1e-10);
        let y = kind.yield_at(space, a.amplitudes(), t).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&y));
        let mut oa = vec![C64::new(0.0, 0.0); 5];
        kind.apply_into(space, a.amplitudes(), t, &mut oa).unwrap();
        prop_assert!((braket(1.0, a.amplitudes(), &oa).re - y).abs() < 1e-12);
    }

    #[test]
    fn projection_yield_is_squared_overlap(
        ar in proptest::collection::vec(-1.0f64..1.0, N), ai in proptest::collection::vec(-1.0f64..1.0, N),
        br in proptest::collection::vec(-1.0f64..1.0, N),
    ) {
        let space = Space::Grid(grid());
        let a = state(space, &ar, &ai);
        let phi = state(space, &br, &ai);
        let y = TargetKind::Projection(phi.clone()).yield_at(space, a.amplitudes(), 0.0).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&y));
        let direct = braket(space.measure(), phi.amplitudes(), a.amplitudes()).norm_sqr();
        prop_assert!((y - direct).abs() < 1e-14);
    }
}

#[test]
fn non_operator_targets_are_flagged() {
    let phi = Wavefunction::level(2, 1).unwrap();
    assert!(!TargetKind::PhaseFixedOverlap(phi.clone()).is_operator());
    assert!(!TargetKind::DensityOverlap(vec![0.0; 2]).is_operator());
    assert!(!TargetKind::MultiObjective(vec![(1.0, TargetKind::DensityOverlap(vec![0.0; 2]))]).is_operator());
    let mut out = vec![C64::new(0.0, 0.0); 2];
    assert!(TargetKind::DensityOverlap(vec![0.0; 2]).apply_into(Space::Levels(2), phi.amplitudes(), 0.0, &mut out).is_err());
}

#[test]
fn identity_and_uniform_weight_yields() {
    let sys = NLevelSystem::two_level(0.0, 0.1568, 0.3921);
    let tg = TimeGrid::new(10.0, 0.1).unwrap();
    let psi0 = Wavefunction::level(2, 0).unwrap();
    let traj = Trajectory::record(&sys, &psi0, &ControlField::constant(&tg, 1, 0.1), &tg).unwrap();
    let id = TargetSpec::final_time(TargetKind::Identity);
    assert!((evaluate_j1(&id, &traj, &tg).unwrap() - 1.0).abs() < 1e-12);
    let avg = TargetSpec { kind: TargetKind::Identity, weight: WeightFunction::Uniform };
    assert!((evaluate_j1(&avg, &traj, &tg).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn follower_starts_in_ground_and_ends_in_first_excited() {
    let kind = follower();
    let g = Wavefunction::level(5, 0).unwrap();
    let e1 = Wavefunction::level(5, 1).unwrap();
    assert!((kind.yield_at(Space::Levels(5), g.amplitudes(), 0.0).unwrap() - 1.0).abs() < 1e-12);
    assert!((kind.yield_at(Space::Levels(5), e1.amplitudes(), 800.0).unwrap() - 1.0).abs() < 1e-12);
}
