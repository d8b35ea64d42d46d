//! Null-space-based task hierarchy (COLAV > formation > path following),
//! 3D LOS guidance and decomposition into surge/pitch/yaw references.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::VehicleState;
use crate::path::PathPoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceParams {
    /// Desired path-following speed [m/s].
    pub u_los: f64,
    /// Constant part of the lookahead distance [m].
    pub delta0: f64,
    /// COLAV activation distance [m].
    pub d_colav: f64,
    /// A pair leaves the COLAV task once its distance exceeds
    /// `d_colav + colav_hysteresis`.
    pub colav_hysteresis: f64,
    pub lambda_colav: f64,
    pub lambda_formation: f64,
    pub k_xi: f64,
    /// Lower bound on `u_d` as a fraction of `U_NSB`.
    pub u_d_floor: f64,
    /// Pitch reference clamp [rad].
    pub theta_d_max: f64,
    /// Singular values below `pinv_rtol · σ_max` are dropped.
    pub pinv_rtol: f64,
}

impl Default for GuidanceParams {
    fn default() -> Self {
        Self {
            u_los: 1.0,
            delta0: 5.0,
            d_colav: 10.0,
            colav_hysteresis: 0.5,
            lambda_colav: 1.0,
            lambda_formation: 0.05,
            k_xi: 1.0,
            u_d_floor: 0.05,
            theta_d_max: 80f64.to_radians(),
            pinv_rtol: 1e-8,
        }
    }
}

impl GuidanceParams {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("u_los", self.u_los, true),
            ("delta0", self.delta0, false),
            ("d_colav", self.d_colav, true),
            ("colav_hysteresis", self.colav_hysteresis, true),
            ("lambda_colav", self.lambda_colav, false),
            ("lambda_formation", self.lambda_formation, false),
            ("k_xi", self.k_xi, false),
            ("u_d_floor", self.u_d_floor, true),
            ("pinv_rtol", self.pinv_rtol, false),
        ];
        for (name, v, zero_ok) in pos {
            if !v.is_finite() || v < 0.0 || (!zero_ok && v == 0.0) {
                return Err(Error::Config(format!("guidance.{name} = {v} is out of range")));
            }
        }
        if !(self.theta_d_max > 0.0 && self.theta_d_max < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Config("guidance.theta_d_max must be in (0, pi/2)".into()));
        }
        if self.u_d_floor > 1.0 {
            return Err(Error::Config("guidance.u_d_floor must be at most 1".into()));
        }
        Ok(())
    }
}

/// Moore-Penrose pseudoinverse through the SVD; singular values below
/// `rtol · σ_max` are treated as zero.
pub fn pinv(j: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let (r, c) = j.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = j.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DMatrix::zeros(c, r);
    }
    let tol = rtol * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            out += (vt.row(k).transpose() * u.column(k).transpose()) / s;
        }
    }
    out
}

/// `I − J⁺ J`
pub fn null_projector(j: &DMatrix<f64>, j_pinv: &DMatrix<f64>) -> DMatrix<f64> {
    let n = j.ncols();
    DMatrix::identity(n, n) - j_pinv * j
}

/// A task in CLIK form.
#[derive(Debug, Clone)]
pub struct Task {
    pub jacobian: DMatrix<f64>,
    pub jacobian_pinv: DMatrix<f64>,
    pub sigma_tilde: DVector<f64>,
    pub velocity: DVector<f64>,
}

/// `J⁺ (σ̇_d − Λ σ̃)`
pub fn clik(
    jacobian: DMatrix<f64>,
    sigma_tilde: DVector<f64>,
    sigma_d_dot: &DVector<f64>,
    lambda: f64,
    rtol: f64,
) -> Task {
    let jp = pinv(&jacobian, rtol);
    let velocity = &jp * (sigma_d_dot - &sigma_tilde * lambda);
    Task {
        jacobian,
        jacobian_pinv: jp,
        sigma_tilde,
        velocity,
    }
}

/// Index pairs `(i, j)`, `i < j`, in the order used everywhere (logs,
/// activation flags).
pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push((i, j));
        }
    }
    out
}

pub fn pair_distances(positions: &[Vector3<f64>]) -> Vec<f64> {
    pairs(positions.len())
        .into_iter()
        .map(|(i, j)| (positions[i] - positions[j]).norm())
        .collect()
}

/// Which pairs are currently inside the COLAV task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColavMode {
    pub active: Vec<bool>,
}

impl ColavMode {
    pub fn inactive(n_vehicles: usize) -> Self {
        Self {
            active: vec![false; n_vehicles * n_vehicles.saturating_sub(1) / 2],
        }
    }

    pub fn any(&self) -> bool {
        self.active.iter().any(|&a| a)
    }

    /// Activation below `d_colav`, release above `d_colav + h`.
    pub fn updated(&self, distances: &[f64], d_colav: f64, h: f64) -> Self {
        let active = self
            .active
            .iter()
            .zip(distances)
            .map(|(&a, &d)| if a { d <= d_colav + h } else { d < d_colav })
            .collect();
        Self { active }
    }
}

/// COLAV task over the active pairs; `None` when no pair is active.
pub fn colav_task(
    positions: &[Vector3<f64>],
    mode: &ColavMode,
    params: &GuidanceParams,
) -> Option<Task> {
    let n = positions.len();
    let act: Vec<(usize, usize)> = pairs(n)
        .into_iter()
        .zip(&mode.active)
        .filter(|(_, &a)| a)
        .map(|(p, _)| p)
        .collect();
    if act.is_empty() {
        return None;
    }
    let m = act.len();
    let mut jac = DMatrix::zeros(m, 3 * n);
    let mut sig = DVector::zeros(m);
    for (k, &(i, j)) in act.iter().enumerate() {
        let d = positions[i] - positions[j];
        let dist = d.norm();
        let e = if dist > 0.0 { d / dist } else { Vector3::x() };
        for a in 0..3 {
            jac[(k, 3 * i + a)] = e[a];
            jac[(k, 3 * j + a)] = -e[a];
        }
        sig[k] = dist - params.d_colav;
    }
    Some(clik(
        jac,
        sig,
        &DVector::zeros(m),
        params.lambda_colav,
        params.pinv_rtol,
    ))
}

pub fn barycenter(positions: &[Vector3<f64>]) -> Vector3<f64> {
    positions.iter().sum::<Vector3<f64>>() / positions.len() as f64
}

/// Formation-keeping Jacobian `∂(p_i − p_b)/∂p`, `i = 1..n−1`.
pub fn formation_jacobian(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(3 * (n - 1), 3 * n);
    let inv = 1.0 / n as f64;
    for i in 0..n - 1 {
        for k in 0..n {
            let c = if i == k { 1.0 - inv } else { -inv };
            for a in 0..3 {
                j[(3 * i + a, 3 * k + a)] = c;
            }
        }
    }
    j
}

/// Formation task. `offsets` are the desired positions relative to the
/// barycenter, in the path frame; the last vehicle's offset is implied.
pub fn formation_task(
    positions: &[Vector3<f64>],
    offsets: &[Vector3<f64>],
    pp: &PathPoint,
    xi_dot: f64,
    params: &GuidanceParams,
) -> Option<Task> {
    let n = positions.len();
    if n < 2 {
        return None;
    }
    let pb = barycenter(positions);
    let rot = pp.rotation();
    let omega = pp.frame_rate(xi_dot);
    let mut sig = DVector::zeros(3 * (n - 1));
    let mut sig_d_dot = DVector::zeros(3 * (n - 1));
    for i in 0..n - 1 {
        let e = positions[i] - pb - rot * offsets[i];
        let rate = rot * omega.cross(&offsets[i]);
        for a in 0..3 {
            sig[3 * i + a] = e[a];
            sig_d_dot[3 * i + a] = rate[a];
        }
    }
    Some(clik(
        formation_jacobian(n),
        sig,
        &sig_d_dot,
        params.lambda_formation,
        params.pinv_rtol,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Los {
    pub gamma: f64,
    pub chi: f64,
    pub delta: f64,
    pub velocity: Vector3<f64>,
}

/// LOS guidance for the barycenter with error `p_b^p` in the path frame.
pub fn los(pbp: &Vector3<f64>, pp: &PathPoint, params: &GuidanceParams) -> Los {
    let delta = (params.delta0 * params.delta0 + pbp.norm_squared()).sqrt();
    let gamma = pp.theta_p + (pbp[2] / delta).atan();
    let chi = pp.psi_p - (pbp[1] / delta).atan();
    let (sg, cg) = gamma.sin_cos();
    let (sc, cc) = chi.sin_cos();
    Los {
        gamma,
        chi,
        delta,
        velocity: Vector3::new(cc * cg, cg * sc, -sg) * params.u_los,
    }
}

/// Combines the task velocities. Without an active COLAV task this is
/// `v2 + (I − J2⁺J2) v3`.
pub fn nsb_combine(colav: Option<&Task>, formation: Option<&Task>, v3: &DVector<f64>) -> DVector<f64> {
    let inner = match formation {
        Some(f) => &f.velocity + null_projector(&f.jacobian, &f.jacobian_pinv) * v3,
        None => v3.clone(),
    };
    match colav {
        Some(c) => &c.velocity + null_projector(&c.jacobian, &c.jacobian_pinv) * inner,
        None => inner,
    }
}

/// Speed, flight-path angle and course of a vehicle.
///
/// The direction is taken from `ṗ + ε r_u` so that a vehicle at rest
/// reports its attitude instead of an undefined angle.
pub fn flight_angles(s: &VehicleState) -> (f64, f64, f64) {
    const EPS: f64 = 1e-6;
    let pdot = s.inertial_velocity();
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.psi.sin_cos();
    let d = pdot + Vector3::new(cp * ct, sp * ct, -st) * EPS;
    let n = d.norm();
    let gamma = (-d[2] / n).clamp(-1.0, 1.0).asin();
    let chi = d[1].atan2(d[0]);
    (pdot.norm(), gamma, chi)
}

/// Surge, pitch and yaw references for one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub u_d: f64,
    pub theta_d: f64,
    pub psi_d: f64,
}

/// Decomposes a desired inertial velocity into surge, pitch and yaw
/// references with angle-of-attack and sideslip compensation. A zero
/// desired velocity holds `previous`.
pub fn decompose(
    v: &Vector3<f64>,
    s: &VehicleState,
    previous: &Command,
    params: &GuidanceParams,
) -> Command {
    let u_nsb = v.norm();
    if !(u_nsb > 1e-9) {
        return *previous;
    }
    let gamma_nsb = (-v[2] / u_nsb).clamp(-1.0, 1.0).asin();
    let chi_nsb = v[1].atan2(v[0]);
    let (_, gamma, chi) = flight_angles(s);
    let blend = 0.5 * (1.0 + (gamma_nsb - gamma).cos() * (chi_nsb - chi).cos());
    let u_d = (u_nsb * blend).max(params.u_d_floor * u_nsb);
    let theta_d = (gamma_nsb + (s.w / u_d).atan()).clamp(-params.theta_d_max, params.theta_d_max);
    let u_dd = (u_d * u_d + s.v * s.v + s.w * s.w).sqrt();
    let psi_d = chi_nsb - (s.v / u_dd).asin();
    Command { u_d, theta_d, psi_d }
}

/// Path-parameter rate `ξ̇` driving the along-track error to zero.
pub fn path_parameter_rate(
    states: &[VehicleState],
    pp: &PathPoint,
    pbp: &Vector3<f64>,
    k_xi: f64,
) -> f64 {
    // U_i Ω_x,i is the projection of ṗ_i on the path tangent.
    let n = states.len() as f64;
    let tangent = pp.dp / pp.speed();
    let mean_tangential: f64 = states
        .iter()
        .map(|s| tangent.dot(&s.inertial_velocity()))
        .sum::<f64>()
        / n;
    let x = pbp[0];
    (mean_tangential + k_xi * x / (1.0 + x * x).sqrt()) / pp.speed()
}

/// `[Ω_x, Ω_y, Ω_z]`: the unit velocity direction `(γ, χ)` in the path frame.
pub fn omega_components(gamma: f64, chi: f64, pp: &PathPoint) -> Vector3<f64> {
    let (stp, ctp) = pp.theta_p.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    let (sd, cd) = (pp.psi_p - chi).sin_cos();
    Vector3::new(
        stp * sg + ctp * cg * cd,
        -cg * sd,
        -ctp * sg + cg * stp * cd,
    )
}

/// Time derivative of the path-following error `p_b^p`, given each
/// vehicle's speed, flight-path angle and course.
pub fn barycenter_rates(
    speeds_angles: &[(f64, f64, f64)],
    pp: &PathPoint,
    pbp: &Vector3<f64>,
    xi_dot: f64,
) -> Vector3<f64> {
    let n = speeds_angles.len() as f64;
    let mean: Vector3<f64> = speeds_angles
        .iter()
        .map(|&(u, g, c)| omega_components(g, c, pp) * u)
        .sum::<Vector3<f64>>()
        / n;
    let w = pp.frame_rate(xi_dot);
    let (x, y, z) = (pbp[0], pbp[1], pbp[2]);
    Vector3::new(
        mean[0] - pp.speed() * xi_dot + w[2] * y - w[1] * z,
        mean[1] + w[0] * z - w[2] * x,
        mean[2] + w[1] * x - w[0] * y,
    )
}

/// Everything the guidance layer produces at one instant.
#[derive(Debug, Clone)]
pub struct GuidanceOutput {
    pub commands: Vec<Command>,
    pub velocities: Vec<Vector3<f64>>,
    pub pbp: Vector3<f64>,
    pub xi_dot: f64,
    pub los: Los,
    pub sigma2_tilde: DVector<f64>,
    pub distances: Vec<f64>,
    pub colav_active: bool,
}

/// Full guidance pipeline for the fleet.
pub fn guidance(
    states: &[VehicleState],
    offsets: &[Vector3<f64>],
    pp: &PathPoint,
    mode: &ColavMode,
    previous: &[Command],
    params: &GuidanceParams,
) -> GuidanceOutput {
    let n = states.len();
    let positions: Vec<Vector3<f64>> = states.iter().map(|s| s.position()).collect();
    let pbp = pp.to_path_frame(&barycenter(&positions));
    let xi_dot = path_parameter_rate(states, pp, &pbp, params.k_xi);
    let los = los(&pbp, pp, params);

    let colav = colav_task(&positions, mode, params);
    let formation = formation_task(&positions, offsets, pp, xi_dot, params);
    let mut v3 = DVector::zeros(3 * n);
    for i in 0..n {
        v3.fixed_rows_mut::<3>(3 * i).copy_from(&los.velocity);
    }
    let v = nsb_combine(colav.as_ref(), formation.as_ref(), &v3);

    let velocities: Vec<Vector3<f64>> = (0..n).map(|i| v.fixed_rows::<3>(3 * i).into()).collect();
    let commands = velocities
        .iter()
        .zip(states)
        .zip(previous)
        .map(|((vi, s), prev)| decompose(vi, s, prev, params))
        .collect();
    GuidanceOutput {
        commands,
        velocities,
        pbp,
        xi_dot,
        los,
        sigma2_tilde: formation
            .map(|f| f.sigma_tilde)
            .unwrap_or_else(|| DVector::zeros(0)),
        distances: pair_distances(&positions),
        colav_active: colav.is_some(),
    }
}
