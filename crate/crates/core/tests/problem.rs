use std::sync::Arc;

use hjbqvi::validate::{validate, Status, ValidationOptions};
use hjbqvi::{solve_elliptic, Domain, Error, Grid, Impulses, LevyModel, Problem, SolverOptions};

fn brownian() -> hjbqvi::problem::ProblemBuilder {
    Problem::builder(1, Domain::whole_space(vec![-1.0], vec![1.0]))
        .constant_vol(1.0)
        .running(|_, _, _| 1.0)
        .impulses(Impulses::jump_to(vec![vec![0.0]], 1.0, 0.0))
        .fixed_cost(1.0)
}

#[test]
fn constant_coefficients_pass_every_check() {
    let p = brownian().build().unwrap();
    let r = validate(&p, &LevyModel::none(), &ValidationOptions::default()).unwrap();
    assert!(r.passed(), "{r}");
    for c in &r.checks {
        assert_eq!(c.status, Status::Pass, "{r}");
    }
    for (_, l) in &r.lipschitz {
        assert_eq!(*l, 0.0);
    }
}

#[test]
fn empty_transaction_set_is_a_hard_error() {
    let imp = Impulses::new(
        Arc::new(|_, x: &[f64]| if x[0] > 0.0 { vec![] } else { vec![vec![0.0]] }),
        Arc::new(|_, _, z: &[f64], out: &mut [f64]| out.copy_from_slice(z)),
        Arc::new(|_, _, _| -1.0),
    );
    let p = brownian().impulses(imp).build().unwrap();
    match validate(&p, &LevyModel::none(), &ValidationOptions::default()) {
        Err(Error::EmptyTransactionSet { x, .. }) => assert!(x[0] > 0.0),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn square_root_drift_fails_lipschitz() {
    let p = brownian().drift(|_, x, _, out| out[0] = x[0].abs().sqrt()).build().unwrap();
    let r = validate(&p, &LevyModel::none(), &ValidationOptions::default()).unwrap();
    let c = r.get("lipschitz-mu").unwrap();
    assert_eq!(c.status, Status::Fail, "{r}");
    // the offending pair sits next to the kink
    assert!(c.point.as_ref().unwrap()[0].abs() < 0.01, "{r}");
    // refining the cloud keeps raising the estimate
    let small = validate(&p, &LevyModel::none(), &ValidationOptions { samples: 512, seed: 0 }).unwrap();
    assert!(r.lipschitz[0].1 > 2.0 * small.lipschitz[0].1);
}

#[test]
fn smooth_drift_has_stable_lipschitz_constant() {
    let p = brownian().drift(|_, x, _, out| out[0] = x[0] * x[0]).build().unwrap();
    let r = validate(&p, &LevyModel::none(), &ValidationOptions::default()).unwrap();
    assert_eq!(r.get("lipschitz-mu").unwrap().status, Status::Pass);
    assert!((r.lipschitz[0].1 - 2.0).abs() < 0.01, "{r}");
}

#[test]
fn validation_is_deterministic_given_seed() {
    let p = brownian().drift(|_, x, _, out| out[0] = x[0].sin()).build().unwrap();
    let o = ValidationOptions { samples: 256, seed: 9 };
    let a = validate(&p, &LevyModel::none(), &o).unwrap();
    let b = validate(&p, &LevyModel::none(), &o).unwrap();
    assert_eq!(a, b);
}

#[test]
fn non_finite_running_profit_is_flagged() {
    let p = brownian().running(|_, x, _| 1.0 / x[0]).build().unwrap();
    // a Halton point lands exactly on 0 for the unshifted cloud
    let r = validate(&p, &LevyModel::none(), &ValidationOptions { samples: 64, seed: 0 }).unwrap();
    assert_eq!(r.get("finite-coefficients").unwrap().status, Status::Fail);
}

#[test]
fn discounted_quadratic_transforms_to_elliptic() {
    let p = Problem::builder(1, Domain::whole_space(vec![-1.0], vec![1.0]))
        .parabolic(2.0)
        .discount(1.0)
        .time_homogeneous(true)
        .running(|_, x, _| x[0] * x[0])
        .build()
        .unwrap();
    let e = p.to_elliptic().unwrap();
    assert_eq!(e.horizon.rho(), Some(1.0));
    for x in [-0.7, 0.0, 0.4] {
        assert_eq!(e.running(0.0, &[x], &[0.0]), x * x);
        assert!((p.running(0.5, &[x], &[0.0]) - (-0.5f64).exp() * x * x).abs() < 1e-15);
    }
    let back = e.to_parabolic(2.0).unwrap();
    for x in [-0.7, 0.0, 0.4] {
        for t in [0.0, 0.3, 1.9] {
            assert!((back.running(t, &[x], &[0.0]) - p.running(t, &[x], &[0.0])).abs() <= 1e-12);
        }
    }
}

#[test]
fn zero_discount_rejected() {
    let p = Problem::builder(1, Domain::whole_space(vec![-1.0], vec![1.0]))
        .parabolic(1.0)
        .time_homogeneous(true)
        .build()
        .unwrap();
    assert!(p.to_elliptic().is_err());
}

#[test]
fn constant_running_profit_gives_c_over_rho() {
    let p = Problem::builder(1, Domain::whole_space(vec![-1.0], vec![1.0]))
        .parabolic(1.0)
        .discount(0.5)
        .time_homogeneous(true)
        .constant_vol(0.3)
        .running(|_, _, _| 2.0)
        .build()
        .unwrap();
    let e = p.to_elliptic().unwrap();
    let g = Grid::uniform(&e, &[21], None).unwrap();
    let s = solve_elliptic(&e, &LevyModel::none(), &g, &SolverOptions::default()).unwrap();
    for v in &s.value.values {
        assert!((v - 4.0).abs() < 1e-9);
    }
}
