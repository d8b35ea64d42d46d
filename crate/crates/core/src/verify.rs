//! Oracle suite behind the `verify` subcommand.

use nalgebra::{Matrix3, Vector3, Vector5};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{desired_rate_check, q_diagonal, ClosedLoopSample};
use crate::error::Result;
use crate::model::{acceleration_matrix_form, rotation, state_derivative, Forces, VehicleParams, VehicleState};
use crate::scenario::Scenario;
use crate::telemetry::SimLog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// `"<"` or `">"`: how `value` must compare with `threshold`.
    pub op: String,
    pub pass: bool,
}

impl OracleResult {
    fn below(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            op: "<".into(),
            pass: value < threshold,
        }
    }
}

pub fn random_state(rng: &mut ChaCha8Rng) -> VehicleState {
    VehicleState {
        x: rng.random_range(-100.0..100.0),
        y: rng.random_range(-100.0..100.0),
        z: rng.random_range(-100.0..100.0),
        theta: rng.random_range(-1.2..1.2),
        psi: rng.random_range(-3.1..3.1),
        u: rng.random_range(-0.5..2.5),
        v: rng.random_range(-0.5..0.5),
        w: rng.random_range(-0.5..0.5),
        q: rng.random_range(-0.5..0.5),
        r: rng.random_range(-0.5..0.5),
    }
}

/// Largest relative difference between the component and matrix forms of
/// the body accelerations.
pub fn model_equivalence(p: &VehicleParams, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let s = random_state(&mut rng);
        let f = Forces {
            f_u: rng.random_range(-1.0..1.0),
            t_q: rng.random_range(-1.0..1.0),
            t_r: rng.random_range(-1.0..1.0),
        };
        let vc = Vector3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        );
        let d = state_derivative(p, &s, &f, &vc);
        let a = acceleration_matrix_form(p, &s, &f, &vc);
        let c = Vector5::new(d.u, d.v, d.w, d.q, d.r);
        worst = worst.max((c - a).norm() / a.norm());
    }
    worst
}

/// `max ‖C + Cᵀ‖` and `max ‖RᵀR − I‖` over random states.
pub fn structure_residuals(p: &VehicleParams, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut skew, mut orth): (f64, f64) = (0.0, 0.0);
    for _ in 0..samples {
        let s = random_state(&mut rng);
        let c = p.coriolis(&s.nu());
        skew = skew.max((c + c.transpose()).amax());
        let r = rotation(s.theta, s.psi);
        orth = orth.max((r.transpose() * r - Matrix3::identity()).amax());
    }
    (skew, orth)
}

/// Random path-following sample: barycenter error, path angles and
/// curvatures, and per-vehicle offsets from the references.
pub fn random_closed_loop_sample(rng: &mut ChaCha8Rng, delta0: f64, k_xi: f64) -> ClosedLoopSample {
    let n = rng.random_range(1..6usize);
    let vehicles: Vec<_> = (0..n)
        .map(|_| {
            (
                rng.random_range(0.3..2.0),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            )
        })
        .collect();
    ClosedLoopSample::on_references(
        [
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
        ],
        rng.random_range(-0.7..0.7),
        rng.random_range(-3.1..3.1),
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
        delta0,
        k_xi,
        &vehicles,
    )
}

/// Residuals of the closed-loop barycenter form against the direct
/// kinematics over a random ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopResiduals {
    /// `ẋ` row.
    pub x: f64,
    /// `ẏ`, `ż` rows with the derived perturbation terms.
    pub yz: f64,
    /// Largest `residual / (1 + ‖state‖)`.
    pub relative: f64,
    /// `ẏ`, `ż` rows with the perturbation terms in their simplified form.
    pub yz_simplified: f64,
    /// `sup |G| / (‖X̃₂‖ (1 + ‖X̃₁‖))`.
    pub growth: f64,
}

pub fn closed_loop_residuals(samples: usize, seed: u64) -> ClosedLoopResiduals {
    let per: Vec<ClosedLoopResiduals> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let s = random_closed_loop_sample(&mut rng, 5.0, 1.0);
            let d = s.rates_direct();
            let c = s.rates_closed_loop();
            let p = s.rates_closed_loop_with(s.perturbations_simplified());
            let yz = (d[1] - c[1]).abs().max((d[2] - c[2]).abs());
            let g = s.perturbations();
            let x1 = nalgebra::Vector3::from(s.pbp).norm();
            let scale = 1.0 + x1 + s.x2_norm();
            ClosedLoopResiduals {
                x: (d[0] - c[0]).abs(),
                yz,
                relative: yz / scale,
                yz_simplified: (d[1] - p[1]).abs().max((d[2] - p[2]).abs()),
                growth: g.0.abs().max(g.1.abs()) / (s.x2_norm() * (1.0 + x1)),
            }
        })
        .collect();
    per.iter().fold(
        ClosedLoopResiduals {
            x: 0.0,
            yz: 0.0,
            relative: 0.0,
            yz_simplified: 0.0,
            growth: 0.0,
        },
        |a, b| ClosedLoopResiduals {
            x: a.x.max(b.x),
            yz: a.yz.max(b.yz),
            relative: a.relative.max(b.relative),
            yz_simplified: a.yz_simplified.max(b.yz_simplified),
            growth: a.growth.max(b.growth),
        },
    )
}

/// `max(|G_y|, |G_z|)` at `X̃₁ = 0`, `X̃₂ = 0` over random path angles and
/// vehicle velocities.
pub fn origin_perturbation(samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let n = rng.random_range(1..6usize);
        let veh: Vec<_> = (0..n)
            .map(|_| {
                (
                    rng.random_range(0.3..2.0),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    0.0,
                    0.0,
                    0.0,
                )
            })
            .collect();
        let s = ClosedLoopSample::on_references(
            [0.0; 3],
            rng.random_range(-0.7..0.7),
            rng.random_range(-3.1..3.1),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            5.0,
            1.0,
            &veh,
        );
        let g = s.perturbations();
        worst = worst.max(g.0.abs()).max(g.1.abs());
    }
    worst
}

/// Smallest diagonal entry of `Q` along a log, over records with
/// `|γ_LOS| < π/2`.
pub fn q_min_along(log: &SimLog, sc: &Scenario) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for r in &log.records {
        let pp = sc.path.eval(r.xi)?;
        let delta = (sc.guidance.delta0.powi(2) + r.pbp.norm_squared()).sqrt();
        let gamma_los = pp.theta_p + (r.pbp[2] / delta).atan();
        if gamma_los.abs() >= std::f64::consts::FRAC_PI_2 {
            continue;
        }
        let u_dd: Vec<f64> = r
            .vehicles
            .iter()
            .map(|v| (v.command.u_d.powi(2) + v.state.v.powi(2) + v.state.w.powi(2)).sqrt())
            .collect();
        let q = q_diagonal(&r.pbp, gamma_los, sc.guidance.delta0, sc.guidance.k_xi, &u_dd);
        worst = worst.min(q[0]).min(q[1]).min(q[2]);
    }
    Ok(worst)
}

/// Single-vehicle variant of a scenario used for the desired-rate check.
pub fn single_vehicle(sc: &Scenario) -> Scenario {
    let mut s = sc.clone();
    s.formation.offsets = vec![[0.0; 3]];
    s.initial.positions = None;
    let pp = s.path.eval(s.xi0).expect("validated path");
    let p0 = pp.p + pp.rotation() * Vector3::new(0.0, 5.0, 3.0);
    s.initial.p0 = [p0[0], p0[1], p0[2]];
    s
}

/// Largest `|q_d − θ̇_d|`, `|r_d − cos θ_d ψ̇_d|` along a single-vehicle run,
/// with the rates differenced at `h`.
pub fn desired_rate_residual(sc: &Scenario, h: f64) -> Result<f64> {
    let single = single_vehicle(sc);
    let times: Vec<f64> = (1..30).map(|k| k as f64 * single.t_end / 30.0).collect();
    let checks = desired_rate_check(&single, &times, h)?;
    Ok(checks
        .iter()
        .map(|c| (c.q_d - c.q_d_fd).abs().max((c.r_d - c.r_d_fd).abs()))
        .fold(0.0, f64::max))
}

/// Runs every oracle for a scenario. `log` is a completed run of `sc`.
pub fn suite(sc: &Scenario, log: &SimLog, samples: usize, seed: u64) -> Result<Vec<OracleResult>> {
    let p = &sc.vehicle;
    let (skew, orth) = structure_residuals(p, samples, seed);
    let cl = closed_loop_residuals(samples, seed);
    let q_min = q_min_along(log, sc)?;
    Ok(vec![
        OracleResult::below("model_equivalence_rel", model_equivalence(p, samples, seed), 1e-10),
        OracleResult::below("coriolis_skew", skew, 1e-12),
        OracleResult::below("rotation_orthonormal", orth, 1e-12),
        OracleResult::below("closed_loop_x", cl.x, 1e-9),
        OracleResult::below("closed_loop_yz", cl.yz, 1e-9),
        OracleResult::below("closed_loop_relative", cl.relative, 1e-11),
        OracleResult::below("perturbation_at_origin", origin_perturbation(samples, seed), 1e-12),
        OracleResult::below("perturbation_growth", cl.growth, 1e3),
        OracleResult::below("desired_rates", desired_rate_residual(sc, 1e-3)?, 1e-3),
        OracleResult {
            name: "q_min".into(),
            value: q_min,
            threshold: 0.0,
            op: ">".into(),
            pass: q_min > 0.0,
        },
    ])
}
