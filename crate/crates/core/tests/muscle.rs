use std::f64::consts::PI;

use msk_balance::muscle::*;
use msk_balance::Error;
use proptest::prelude::*;
fn unit_muscle() -> MuscleParams {
    MuscleParams::new("m", 1000.0, 0.1, 0.0)
}

#[test]
fn force_length_values() {
    assert_eq!(active_force_length(1.0).unwrap(), 1.0);
    assert!((active_force_length(1.45).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
    assert!(active_force_length(3.0).unwrap() < 1e-6);
    assert!(matches!(active_force_length(0.0), Err(Error::Domain(_))));
    assert!(matches!(active_force_length(-0.2), Err(Error::Domain(_))));
}

#[test]
fn force_velocity_values() {
    assert_eq!(force_velocity(0.0), 1.0);
    assert_eq!(force_velocity(-1.0), 0.0);
    assert_eq!(force_velocity(-3.0), 0.0);
    let ecc = force_velocity(1.0);
    // 1.4 - 0.4 / (1 + 12.5)
    assert!((ecc - (1.4 - 0.4 / 13.5)).abs() < 1e-12);
    assert!(ecc > 1.0 && ecc <= FV_ECCENTRIC_PLATEAU);
    // dense monotonicity sweep
    let mut prev = force_velocity(-1.5);
    for i in 0..=40_000 {
        let v = -1.5 + i as f64 * 1e-4;
        let f = force_velocity(v);
        assert!(f >= prev - 1e-15, "F_V decreasing at {v}");
        assert!(f <= FV_ECCENTRIC_PLATEAU);
        prev = f;
    }
}

#[test]
fn force_velocity_slope_matches_finite_difference() {
    for &v in &[-0.9, -0.5, -0.1, 0.05, 0.3, 1.2] {
        let h = 1e-6;
        let fd = (force_velocity(v + h) - force_velocity(v - h)) / (2.0 * h);
        assert!((fd - force_velocity_slope(v)).abs() < 1e-6, "v = {v}");
    }
    // branches meet with equal slope
    assert!((force_velocity_slope(-1e-12) - force_velocity_slope(1e-12)).abs() < 1e-6);
}

#[test]
fn passive_values() {
    assert_eq!(passive_force(0.9).unwrap(), 0.0);
    assert_eq!(passive_force(1.0).unwrap(), 0.0);
    assert!((passive_force(1.6).unwrap() - 1.0).abs() < 1e-12);
    assert!(passive_force(1.3).unwrap() < passive_force(1.31).unwrap());
    assert!(passive_force(-1.0).is_err());
}

#[test]
fn muscle_force_cases() {
    let mut p = unit_muscle();
    let rest = MuscleState::at_rest(1.0);
    assert_eq!(muscle_force(&p, &rest).unwrap(), 0.0);
    let full = MuscleState { activation: 1.0, ..rest };
    assert!((muscle_force(&p, &full).unwrap() - 1000.0).abs() < 1e-9);
    p.pennation = PI / 3.0;
    assert!((muscle_force(&p, &full).unwrap() - 500.0).abs() < 1e-9);
}

#[test]
fn time_constant_branches() {
    assert!((time_constant(1.0, 1.0, 0.01, 0.04) - 0.02).abs() < 1e-15);
    assert!((time_constant(1.0, 0.0, 0.01, 0.04) - 0.005).abs() < 1e-15);
    assert!((time_constant(0.0, 0.0, 0.01, 0.04) - 0.08).abs() < 1e-15);
}

#[test]
fn activation_step_cases() {
    let p = unit_muscle();
    assert_eq!(step_activation(&p, 0.5, 0.5, 0.3), 0.5);
    let a1 = step_activation(&p, 0.0, 1.0, 1.0 / 600.0);
    assert!((a1 - (1.0 / 600.0) / 0.005).abs() < 1e-12);
    assert_eq!(step_activation(&p, 1.0, 1.0, 1.0), 1.0);
}

#[test]
fn validation_rejects_bad_params() {
    let mut p = unit_muscle();
    assert!(p.validate().is_ok());
    p.pennation = PI / 2.0;
    assert!(p.validate().is_err());
    let mut p = unit_muscle();
    p.strength_scale = 1.2;
    assert!(p.validate().is_err());
    let mut p = unit_muscle();
    p.tau_act = 0.0;
    assert!(p.validate().is_err());
}

proptest! {
    #[test]
    fn force_is_bounded(
        a in 0.0f64..=1.0,
        l in 0.2f64..2.0,
        v in -2.0f64..2.0,
        penn in 0.0f64..1.5,
        s in 0.0f64..=1.0,
    ) {
        let mut p = unit_muscle();
        p.pennation = penn;
        p.strength_scale = s;
        let st = MuscleState { activation: a, excitation: a, l_norm: l, v_norm: v };
        let f = muscle_force(&p, &st).unwrap();
        let fp = passive_force(l).unwrap();
        prop_assert!(f >= 0.0);
        prop_assert!(f <= s * p.f_max * (FV_ECCENTRIC_PLATEAU + fp) * penn.cos() + 1e-9);
    }

    #[test]
    fn force_is_affine_in_activation(a in 0.0f64..=1.0, l in 0.3f64..1.8, v in -1.0f64..1.0) {
        let p = unit_muscle();
        let c = force_coefficients(&p, l, v).unwrap();
        let st = MuscleState { activation: a, excitation: 0.0, l_norm: l, v_norm: v };
        let f = muscle_force(&p, &st).unwrap();
        prop_assert!(c.per_activation >= 0.0);
        prop_assert!((f - (c.per_activation * a + c.passive)).abs() < 1e-9);
    }

    #[test]
    fn activation_converges_monotonically(a0 in 0.0f64..=1.0, u in 0.0f64..=1.0) {
        let p = unit_muscle();
        let dt = 1.0 / 600.0;
        let mut a = a0;
        let mut gap = (u - a).abs();
        for _ in 0..600 {
            let next = step_activation(&p, a, u, dt);
            prop_assert!((0.0..=1.0).contains(&next));
            let g = (u - next).abs();
            prop_assert!(g <= gap + 1e-15);
            // never overshoots the target
            prop_assert!((u - a) * (u - next) >= -1e-15);
            gap = g;
            a = next;
        }
        prop_assert!(gap < 1e-3);
    }
}

/// Dense reference solution: classical RK4 on the unclamped dynamics.
fn rk4_activation(p: &MuscleParams, a0: f64, u: f64, t_end: f64, n: usize) -> f64 {
    let f = |a: f64| (u - a) / time_constant(u, a, p.tau_act, p.tau_deact);
    let h = t_end / n as f64;
    let mut a = a0;
    for _ in 0..n {
        let k1 = f(a);
        let k2 = f(a + 0.5 * h * k1);
        let k3 = f(a + 0.5 * h * k2);
        let k4 = f(a + h * k3);
        a += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    a
}

fn euler_activation(p: &MuscleParams, a0: f64, u: f64, t_end: f64, n: usize) -> f64 {
    let dt = t_end / n as f64;
    (0..n).fold(a0, |a, _| step_activation(p, a, u, dt))
}

#[test]
fn activation_euler_is_first_order() {
    let p = MuscleParams::new("m", 1000.0, 0.1, 0.0);
    let t_end = 0.05;
    for (a0, u) in [(0.1, 0.9), (0.8, 0.2), (0.0, 1.0), (1.0, 0.0)] {
        let exact = rk4_activation(&p, a0, u, t_end, 20_000);
        let n = (t_end * 600.0f64).round() as usize;
        let e1 = (euler_activation(&p, a0, u, t_end, n) - exact).abs();
        let e2 = (euler_activation(&p, a0, u, t_end, 2 * n) - exact).abs();
        let ratio = e1 / e2;
        assert!((ratio - 2.0).abs() <= 0.2, "a0 {a0} u {u}: ratio {ratio}");
    }
}
