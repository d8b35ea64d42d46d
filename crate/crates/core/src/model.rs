//! Five-DOF underactuated vehicle (roll neglected) moving in a constant,
//! irrotational ocean current.
//!
//! The model is kept in two forms. The component form is what the
//! autopilots cancel against; the matrix form `M ν̇_r + C ν_r + D ν_r + g = M τ`
//! is the reference the component form is checked against.

use nalgebra::{Matrix3, Matrix5, SVector, Vector3, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec9 = SVector<f64, 9>;

/// Mass, damping and restoring coefficients of one vehicle.
///
/// Entries follow the sparsity of a slender, port/starboard symmetric hull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub m11: f64,
    pub m22: f64,
    pub m33: f64,
    pub m44: f64,
    pub m55: f64,
    pub m25: f64,
    pub m34: f64,
    pub d11: f64,
    pub d22: f64,
    pub d33: f64,
    pub d44: f64,
    pub d55: f64,
    pub d25: f64,
    pub d34: f64,
    pub d43: f64,
    pub d52: f64,
    /// Restoring moment coefficient `m g z_g` [N m].
    pub w_bg: f64,
    /// Hull length [m]. Only used for reporting.
    #[serde(default = "default_length")]
    pub length: f64,
}

fn default_length() -> f64 {
    2.4
}

impl VehicleParams {
    /// LAUV-sized surrogate.
    ///
    /// Heave/pitch coefficients mirror sway/yaw (body of revolution), and
    /// `d22` is set so that min |Y/X| over u in [0, 2.5] m/s and
    /// |u_c| <= 0.255 m/s is 0.26.
    pub fn surrogate() -> Self {
        Self {
            m11: 19.0,
            m22: 34.0,
            m33: 34.0,
            m44: 3.3,
            m55: 3.3,
            m25: -0.8,
            m34: 0.8,
            d11: 2.4,
            d22: 6.72,
            d33: 6.72,
            d44: 2.0,
            d55: 2.0,
            d25: 5.0,
            d34: -5.0,
            d43: 1.0,
            d52: -1.0,
            w_bg: 1.8,
            length: 2.4,
        }
    }

    pub fn delta_v(&self) -> f64 {
        self.m22 * self.m55 - self.m25 * self.m25
    }

    pub fn delta_q(&self) -> f64 {
        self.m33 * self.m44 - self.m34 * self.m34
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.m11, self.m22, self.m33, self.m44, self.m55, self.m25, self.m34, self.d11,
            self.d22, self.d33, self.d44, self.d55, self.d25, self.d34, self.d43, self.d52,
            self.w_bg, self.length,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("vehicle parameters must be finite".into()));
        }
        if [self.m11, self.m22, self.m33, self.m44, self.m55]
            .iter()
            .any(|&m| m <= 0.0)
        {
            return Err(Error::Config("diagonal mass entries must be positive".into()));
        }
        if self.delta_v() <= 0.0 || self.delta_q() <= 0.0 {
            return Err(Error::Config("mass matrix is not positive definite".into()));
        }
        Ok(())
    }

    pub fn mass_matrix(&self) -> Matrix5<f64> {
        let mut m = Matrix5::zeros();
        m[(0, 0)] = self.m11;
        m[(1, 1)] = self.m22;
        m[(2, 2)] = self.m33;
        m[(3, 3)] = self.m44;
        m[(4, 4)] = self.m55;
        m[(1, 4)] = self.m25;
        m[(4, 1)] = self.m25;
        m[(2, 3)] = self.m34;
        m[(3, 2)] = self.m34;
        m
    }

    pub fn damping_matrix(&self) -> Matrix5<f64> {
        let mut d = Matrix5::zeros();
        d[(0, 0)] = self.d11;
        d[(1, 1)] = self.d22;
        d[(2, 2)] = self.d33;
        d[(3, 3)] = self.d44;
        d[(4, 4)] = self.d55;
        d[(1, 4)] = self.d25;
        d[(4, 1)] = self.d52;
        d[(2, 3)] = self.d34;
        d[(3, 2)] = self.d43;
        d
    }

    /// Coriolis-centripetal matrix evaluated at the relative velocity.
    pub fn coriolis(&self, nu_r: &Vector5<f64>) -> Matrix5<f64> {
        let (ur, vr, wr, q, r) = (nu_r[0], nu_r[1], nu_r[2], nu_r[3], nu_r[4]);
        let c1 = self.m34 * q + self.m33 * wr;
        let c2 = self.m25 * r + self.m22 * vr;
        let c3 = self.m11 * ur;
        #[rustfmt::skip]
        let c = Matrix5::new(
            0.0, 0.0, 0.0, c1, -c2,
            0.0, 0.0, 0.0, 0.0, c3,
            0.0, 0.0, 0.0, -c3, 0.0,
            -c1, 0.0, c3, 0.0, 0.0,
            c2, -c3, 0.0, 0.0, 0.0,
        );
        c
    }
}

/// Position, attitude and body velocities of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta: f64,
    pub psi: f64,
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub q: f64,
    pub r: f64,
}

impl VehicleState {
    pub const DIM: usize = 10;

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn linear_velocity(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, self.w)
    }

    pub fn nu(&self) -> Vector5<f64> {
        Vector5::new(self.u, self.v, self.w, self.q, self.r)
    }

    pub fn as_array(&self) -> [f64; 10] {
        [
            self.x, self.y, self.z, self.theta, self.psi, self.u, self.v, self.w, self.q, self.r,
        ]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            x: s[0],
            y: s[1],
            z: s[2],
            theta: s[3],
            psi: s[4],
            u: s[5],
            v: s[6],
            w: s[7],
            q: s[8],
            r: s[9],
        }
    }

    /// Inertial velocity `R(θ, ψ) [u, v, w]`.
    pub fn inertial_velocity(&self) -> Vector3<f64> {
        rotation(self.theta, self.psi) * self.linear_velocity()
    }
}

/// Actuated inputs, already scaled by the inverse mass matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Forces {
    pub f_u: f64,
    pub t_q: f64,
    pub t_r: f64,
}

/// `R = Rz(ψ) Ry(θ)`. Columns are the body axes `r_u, r_v, r_w` in the
/// inertial frame.
pub fn rotation(theta: f64, psi: f64) -> Matrix3<f64> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    #[rustfmt::skip]
    let r = Matrix3::new(
        cp * ct, -sp, cp * st,
        sp * ct, cp, sp * st,
        -st, 0.0, ct,
    );
    r
}

/// Ocean current in the body frame, `(u_c, v_c, w_c) = Rᵀ V_c`.
pub fn current_in_body(theta: f64, psi: f64, vc: &Vector3<f64>) -> Vector3<f64> {
    rotation(theta, psi).transpose() * vc
}

/// Quadratic current features `[Vx, Vy, Vz, Vx², Vy², Vz², VxVy, VxVz, VyVz]`.
pub fn current_features(vc: &Vector3<f64>) -> Vec9 {
    let (x, y, z) = (vc[0], vc[1], vc[2]);
    Vec9::from_column_slice(&[x, y, z, x * x, y * y, z * z, x * y, x * z, y * z])
}

/// Regressor of a single relative velocity: `φ_iᵀ ϑ = i_r − i`.
fn regressor_single(ri: &Vector3<f64>) -> Vec9 {
    let mut out = Vec9::zeros();
    out[0] = -ri[0];
    out[1] = -ri[1];
    out[2] = -ri[2];
    out
}

/// Regressor of a product of relative velocities: `φ_ijᵀ ϑ = i_r j_r − i j`.
fn regressor_pair(i: f64, ri: &Vector3<f64>, j: f64, rj: &Vector3<f64>) -> Vec9 {
    Vec9::from_column_slice(&[
        -j * ri[0] - i * rj[0],
        -j * ri[1] - i * rj[1],
        -j * ri[2] - i * rj[2],
        ri[0] * rj[0],
        ri[1] * rj[1],
        ri[2] * rj[2],
        ri[0] * rj[1] + ri[1] * rj[0],
        ri[0] * rj[2] + ri[2] * rj[0],
        ri[1] * rj[2] + ri[2] * rj[1],
    ])
}

/// Terms of the component-form dynamics at one state.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub F_u: f64,
    pub phi_u: Vector3<f64>,
    pub X_v: f64,
    pub Y_v: f64,
    pub X_w: f64,
    pub Y_w: f64,
    pub G: f64,
    pub F_q: f64,
    pub phi_q: Vec9,
    pub F_r: f64,
    pub phi_r: Vec9,
}

/// Sway coefficients `(X_v, Y_v)` at surge `u` and body current `u_c`.
#[allow(non_snake_case)]
pub fn sway_coefficients(p: &VehicleParams, u: f64, uc: f64) -> (f64, f64) {
    let ur = u - uc;
    let dv = p.delta_v();
    let X = -uc - (p.m55 * (p.d25 + p.m11 * ur) - p.m25 * (p.d55 + p.m25 * ur)) / dv;
    let Y = -(p.d22 * p.m55 - p.m25 * (p.d52 - ur * (p.m11 - p.m22))) / dv;
    (X, Y)
}

/// Heave coefficients `(X_w, Y_w)` at surge `u` and body current `u_c`.
#[allow(non_snake_case)]
pub fn heave_coefficients(p: &VehicleParams, u: f64, uc: f64) -> (f64, f64) {
    let ur = u - uc;
    let dq = p.delta_q();
    let X = uc - (p.m44 * (p.d34 - p.m11 * ur) - p.m34 * (p.d44 - p.m34 * ur)) / dq;
    let Y = -(p.d33 * p.m44 - p.m34 * (p.d43 + ur * (p.m11 - p.m33))) / dq;
    (X, Y)
}

/// Evaluates the component-form terms.
///
/// `F_*` use absolute velocities; everything the current contributes sits
/// in the regressors `φ_*`, linear in `V_c` (surge) or in `ϑ(V_c)` (pitch, yaw).
/// The current enters `X_*`, `Y_*` only through `u_c`.
#[allow(non_snake_case)]
pub fn components(p: &VehicleParams, s: &VehicleState, vc: &Vector3<f64>) -> Components {
    let rot = rotation(s.theta, s.psi);
    let ru: Vector3<f64> = rot.column(0).into();
    let rv: Vector3<f64> = rot.column(1).into();
    let rw: Vector3<f64> = rot.column(2).into();
    let (u, v, w, q, r) = (s.u, s.v, s.w, s.q, s.r);
    let uc = ru.dot(vc);

    let F_u = -(p.d11 * u + q * (p.m34 * q + p.m33 * w) - r * (p.m25 * r + p.m22 * v)) / p.m11;
    let phi_u = rw * (q * (p.m33 / p.m11 - 1.0))
        + rv * (r * (1.0 - p.m22 / p.m11))
        + ru * (p.d11 / p.m11);

    let (X_v, Y_v) = sway_coefficients(p, u, uc);
    let (X_w, Y_w) = heave_coefficients(p, u, uc);

    let dq = p.delta_q();
    let dv = p.delta_v();
    let st = s.theta.sin();
    let G = p.m34 * p.w_bg * st / dq;

    let k_q = p.m11 - p.m33;
    let F_q = (p.m34 * (p.d34 * q + p.d33 * w - q * u * k_q)
        - p.m33 * (p.d44 * q + p.d43 * w + p.w_bg * st + u * w * k_q))
        / dq;
    let vphi_u = regressor_single(&ru);
    let vphi_v = regressor_single(&rv);
    let vphi_w = regressor_single(&rw);
    let vphi_uw = regressor_pair(u, &ru, w, &rw);
    let vphi_uv = regressor_pair(u, &ru, v, &rv);
    let phi_q = ((vphi_w * p.d33 - vphi_u * (q * k_q)) * p.m34
        - (vphi_w * p.d43 + vphi_uw * k_q) * p.m33)
        / dq;

    let k_r = p.m11 - p.m22;
    let F_r = (p.m25 * (p.d25 * r + p.d22 * v + r * u * k_r)
        - p.m22 * (p.d55 * r + p.d52 * v - u * v * k_r))
        / dv;
    let phi_r = ((vphi_v * p.d22 + vphi_u * (r * k_r)) * p.m25
        - (vphi_v * p.d52 - vphi_uv * k_r) * p.m22)
        / dv;

    Components {
        F_u,
        phi_u,
        X_v,
        Y_v,
        X_w,
        Y_w,
        G,
        F_q,
        phi_q,
        F_r,
        phi_r,
    }
}

/// Time derivative of the state, component form.
pub fn state_derivative(
    p: &VehicleParams,
    s: &VehicleState,
    f: &Forces,
    vc: &Vector3<f64>,
) -> VehicleState {
    let c = components(p, s, vc);
    let feat = current_features(vc);
    let cb = current_in_body(s.theta, s.psi, vc);
    let pos_dot = s.inertial_velocity();
    VehicleState {
        x: pos_dot[0],
        y: pos_dot[1],
        z: pos_dot[2],
        theta: s.q,
        psi: s.r / s.theta.cos(),
        u: f.f_u + c.F_u + c.phi_u.dot(vc),
        v: c.X_v * s.r + c.Y_v * (s.v - cb[1]),
        w: c.X_w * s.q + c.Y_w * (s.w - cb[2]) + c.G,
        q: f.t_q + c.F_q + c.phi_q.dot(&feat),
        r: f.t_r + c.F_r + c.phi_r.dot(&feat),
    }
}

/// Body accelerations from the matrix form
/// `M ν̇_r + C(ν_r) ν_r + D ν_r + g = M [f_u, 0, 0, t_q, t_r]`, with
/// `ν̇ = ν̇_r + ν̇_c` and `ν̇_c = −(0, q, r) × ν_c`.
pub fn acceleration_matrix_form(
    p: &VehicleParams,
    s: &VehicleState,
    f: &Forces,
    vc: &Vector3<f64>,
) -> Vector5<f64> {
    let cb = current_in_body(s.theta, s.psi, vc);
    let nu_r = s.nu() - Vector5::new(cb[0], cb[1], cb[2], 0.0, 0.0);
    let m = p.mass_matrix();
    let g = Vector5::new(0.0, 0.0, 0.0, p.w_bg * s.theta.sin(), 0.0);
    let rhs = m * Vector5::new(f.f_u, 0.0, 0.0, f.t_q, f.t_r)
        - p.coriolis(&nu_r) * nu_r
        - p.damping_matrix() * nu_r
        - g;
    let nu_r_dot = m
        .lu()
        .solve(&rhs)
        .expect("mass matrix is positive definite");
    let nu_c_dot = Vector5::new(
        s.r * cb[1] - s.q * cb[2],
        -s.r * cb[0],
        s.q * cb[0],
        0.0,
        0.0,
    );
    nu_r_dot + nu_c_dot
}

/// Kinetic plus restoring energy with zero current, `½ νᵀ M ν + W (1 − cos θ)`.
pub fn energy(p: &VehicleParams, s: &VehicleState) -> f64 {
    let nu = s.nu();
    0.5 * nu.dot(&(p.mass_matrix() * nu)) + p.w_bg * (1.0 - s.theta.cos())
}
