use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;

use auv_nsb::analysis::{conditions_from_bounds, lookahead_lower_bound, RatioEnvelope};
use auv_nsb::autopilot::ssa;
use auv_nsb::guidance::{
    formation_task, los, nsb_combine, null_projector, pinv, ColavMode, Command, GuidanceParams,
};
use auv_nsb::model::{energy, rotation, state_derivative, Forces, VehicleParams, VehicleState};
use auv_nsb::path::Path;
use auv_nsb::sim::rk4_step;
use auv_nsb::telemetry::{Record, VehicleRecord};
use auv_nsb::{Scenario, SimLog};

fn matrix(max_r: usize, max_c: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_r, 1..=max_c).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0..5.0f64, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
    })
}

fn state() -> impl Strategy<Value = VehicleState> {
    (
        prop::array::uniform3(-50.0..50.0f64),
        -1.2..1.2f64,
        -3.0..3.0f64,
        -0.5..2.0f64,
        prop::array::uniform4(-0.4..0.4f64),
    )
        .prop_map(|(p, theta, psi, u, [v, w, q, r])| VehicleState {
            x: p[0],
            y: p[1],
            z: p[2],
            theta,
            psi,
            u,
            v,
            w,
            q,
            r,
        })
}

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol * (1.0 + a.amax().max(b.amax()))
}

proptest! {
    #[test]
    fn pinv_satisfies_penrose_identities(j in matrix(6, 9)) {
        let p = pinv(&j, 1e-10);
        prop_assert!(close(&(&j * &p * &j), &j, 1e-9));
        prop_assert!(close(&(&p * &j * &p), &p, 1e-9));
        let jp = &j * &p;
        let pj = &p * &j;
        prop_assert!(close(&jp, &jp.transpose(), 1e-9));
        prop_assert!(close(&pj, &pj.transpose(), 1e-9));
    }

    #[test]
    fn null_projector_is_orthogonal_projection(j in matrix(5, 9)) {
        let p = pinv(&j, 1e-10);
        let n = null_projector(&j, &p);
        prop_assert!(close(&(&n * &n), &n, 1e-9));
        prop_assert!(close(&n, &n.transpose(), 1e-9));
        prop_assert!((&j * &n).amax() < 1e-8 * (1.0 + j.amax()));
    }

    #[test]
    fn lower_priority_velocity_does_not_disturb_formation(
        pos in prop::collection::vec(prop::array::uniform3(-30.0..30.0f64), 3),
        v3 in prop::collection::vec(-2.0..2.0f64, 9),
        xi in 0.0..200.0f64,
        xi_dot in 0.0..2.0f64,
    ) {
        let sc = Scenario::default();
        let positions: Vec<Vector3<f64>> = pos.iter().map(|p| Vector3::from(*p)).collect();
        let pp = sc.path.eval(xi).unwrap();
        let f = formation_task(&positions, &sc.offsets(), &pp, xi_dot, &sc.guidance).unwrap();
        let v = nsb_combine(None, Some(&f), &DVector::from_vec(v3));
        let lhs = &f.jacobian * &v;
        let rhs = &f.jacobian * &f.velocity;
        prop_assert!((lhs - rhs).amax() < 1e-10);
    }

    #[test]
    fn colav_activation_is_monotone_in_distance(
        d in prop::collection::vec(0.0..20.0f64, 1..6),
        shrink in 0.0..5.0f64,
        prev in prop::collection::vec(any::<bool>(), 6),
    ) {
        let (d_colav, h) = (10.0, 0.5);
        let mode = ColavMode { active: prev[..d.len()].to_vec() };
        let far = mode.updated(&d, d_colav, h);
        let near: Vec<f64> = d.iter().map(|x| (x - shrink).max(0.0)).collect();
        let near = mode.updated(&near, d_colav, h);
        for (k, &dk) in d.iter().enumerate() {
            // Closer never releases a pair, and the band edges are respected.
            prop_assert!(!far.active[k] || near.active[k]);
            if dk < d_colav {
                prop_assert!(far.active[k]);
            }
            if dk > d_colav + h {
                prop_assert!(!far.active[k]);
            }
            if d_colav <= dk && dk <= d_colav + h {
                prop_assert_eq!(far.active[k], mode.active[k]);
            }
        }
    }

    #[test]
    fn stability_conditions_are_monotone_in_curvature(
        n in 1usize..6,
        ratio in 0.05..1.0f64,
        kappa in 0.0..0.1f64,
        iota in 0.0..0.1f64,
        dk in 0.0..0.05f64,
        di in 0.0..0.05f64,
        delta0 in 0.5..20.0f64,
    ) {
        let env = RatioEnvelope { ratio_v_min: ratio, ratio_w_min: ratio, y_v_max: -0.1, y_w_max: -0.1 };
        let a = conditions_from_bounds(n, &env, kappa, iota, 0.3, delta0);
        let b = conditions_from_bounds(n, &env, kappa + dk, iota + di, 0.3, delta0);
        prop_assert!(b.delta0_lower_bound >= a.delta0_lower_bound);
        prop_assert!(!b.overall_ok || a.overall_ok);
        let more = lookahead_lower_bound(n + 1, ratio, ratio, iota, kappa);
        prop_assert!(more <= a.delta0_lower_bound);
    }

    #[test]
    fn unforced_energy_never_increases(s in state()) {
        let p = VehicleParams::surrogate();
        let zero = Vector3::zeros();
        let mut x = s.as_array().to_vec();
        let mut e = energy(&p, &s);
        for _ in 0..200 {
            x = rk4_step(&x, 0.01, |y, out| {
                let d = state_derivative(&p, &VehicleState::from_slice(y), &Forces::default(), &zero);
                out.copy_from_slice(&d.as_array());
                Ok(())
            }).unwrap();
            let next = energy(&p, &VehicleState::from_slice(&x));
            prop_assert!(next <= e + 1e-10, "{next} > {e}");
            e = next;
        }
    }

    #[test]
    fn los_speed_and_on_path_angles(
        err in prop::array::uniform3(-50.0..50.0f64),
        xi in -300.0..300.0f64,
        u_los in 0.1..3.0f64,
        delta0 in 0.5..20.0f64,
    ) {
        let g = GuidanceParams { u_los, delta0, ..Default::default() };
        let pp = Path::spiral_default().eval(xi).unwrap();
        let l = los(&Vector3::from(err), &pp, &g);
        prop_assert!((l.velocity.norm() - u_los).abs() < 1e-12 * u_los.max(1.0));
        let on = los(&Vector3::zeros(), &pp, &g);
        prop_assert!((on.gamma - pp.theta_p).abs() < 1e-15);
        prop_assert!((on.chi - pp.psi_p).abs() < 1e-15);
    }

    #[test]
    fn ssa_wraps_into_principal_range(a in -100.0..100.0f64) {
        let w = ssa(a);
        prop_assert!((-std::f64::consts::PI..std::f64::consts::PI).contains(&w));
        prop_assert!((w.sin() - a.sin()).abs() < 1e-9 && (w.cos() - a.cos()).abs() < 1e-9);
    }

    #[test]
    fn rotation_is_orthonormal(theta in -1.5..1.5f64, psi in -7.0..7.0f64) {
        let r = rotation(theta, psi);
        prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).amax() < 1e-14);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn overrides_set_exact_values(dt in 1e-4..0.1f64, delta0 in 0.1..50.0f64, n in 2usize..5) {
        let offsets: Vec<String> = (0..n)
            .map(|i| {
                let y = if i + 1 == n { -((n - 1) as f64) } else { 1.0 };
                format!("[0.0, {y:?}, 0.0]")
            })
            .collect();
        let sc = Scenario::with_overrides(&[
            format!("dt={dt:?}"),
            format!("guidance.delta0={delta0:?}"),
            format!("formation.offsets=[{}]", offsets.join(",")),
        ]).unwrap();
        prop_assert_eq!(sc.dt, dt);
        prop_assert_eq!(sc.guidance.delta0, delta0);
        prop_assert_eq!(sc.n_vehicles(), n);
    }

    #[test]
    fn csv_roundtrip_is_exact(
        n in 1usize..4,
        rows in 1usize..5,
        seed in prop::collection::vec(-1e3..1e3f64, 64 * 5),
        flags in prop::collection::vec(any::<bool>(), 5),
    ) {
        let mut it = seed.into_iter().cycle();
        let mut next = || it.next().unwrap();
        let mut log = SimLog::new(n);
        for (k, &flag) in flags.iter().take(rows).enumerate() {
            let vehicles = (0..n)
                .map(|_| VehicleRecord {
                    state: VehicleState::from_slice(&(0..10).map(|_| next()).collect::<Vec<_>>()),
                    command: Command { u_d: next(), theta_d: next(), psi_d: next() },
                    forces: Forces { f_u: next(), t_q: next(), t_r: next() },
                    observer: None,
                })
                .collect();
            log.records.push(Record {
                t: k as f64 * 0.01,
                vehicles,
                xi: next(),
                xi_dot: next(),
                pbp: Vector3::new(next(), next(), next()),
                sigma2: (0..3 * (n - 1)).map(|_| next()).collect(),
                distances: (0..n * (n - 1) / 2).map(|_| next()).collect(),
                colav_active: flag,
            });
        }
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let back = SimLog::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, log);
    }
}
