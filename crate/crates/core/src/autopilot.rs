//! Surge, pitch and yaw autopilots: output-linearizing sliding-mode
//! controllers with adaptive ocean-current observers.

use nalgebra::{Vector3, SVector};
use serde::{Deserialize, Serialize};

use crate::model::{components, Forces, Vec9, VehicleParams, VehicleState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutopilotGains {
    pub k_u: f64,
    pub k_c: f64,
    pub k_theta: f64,
    pub k_psi: f64,
    pub k_q: f64,
    pub k_r: f64,
    pub k_d: f64,
    pub lambda_q: f64,
    pub lambda_r: f64,
    pub c_u: f64,
    pub c_q: f64,
    pub c_r: f64,
    /// Boundary layer of `tanh(x/ε)` used in place of `sign(x)`.
    pub sign_epsilon: f64,
    /// Use the discontinuous `sign` instead of the smoothed one.
    pub exact_sign: bool,
    /// Optional radius of a projection keeping each estimate bounded.
    pub observer_cap: Option<f64>,
}

impl Default for AutopilotGains {
    fn default() -> Self {
        Self {
            k_u: 0.05,
            k_c: 0.1,
            k_theta: 0.0625,
            k_psi: 0.0625,
            k_q: 0.25,
            k_r: 0.25,
            k_d: 0.1,
            lambda_q: 0.75,
            lambda_r: 0.75,
            c_u: 5.0,
            c_q: 1.0,
            c_r: 1.0,
            sign_epsilon: 0.01,
            exact_sign: false,
            observer_cap: None,
        }
    }
}

impl AutopilotGains {
    pub fn validate(&self) -> crate::error::Result<()> {
        let g = [
            self.k_u,
            self.k_c,
            self.k_theta,
            self.k_psi,
            self.k_q,
            self.k_r,
            self.k_d,
            self.lambda_q,
            self.lambda_r,
            self.c_u,
            self.c_q,
            self.c_r,
        ];
        if g.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(crate::error::Error::Config(
                "autopilot gains must be finite and non-negative".into(),
            ));
        }
        if !(self.sign_epsilon > 0.0) {
            return Err(crate::error::Error::Config("sign_epsilon must be positive".into()));
        }
        if let Some(c) = self.observer_cap {
            if !(c > 0.0) {
                return Err(crate::error::Error::Config("observer_cap must be positive".into()));
            }
        }
        Ok(())
    }

    fn sgn(&self, x: f64) -> f64 {
        if self.exact_sign {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        } else {
            (x / self.sign_epsilon).tanh()
        }
    }
}

/// A reference signal with its first two time derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Reference {
    pub value: f64,
    pub rate: f64,
    pub accel: f64,
}

/// Observer estimates carried by one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverState {
    pub vc_hat: Vector3<f64>,
    pub theta_q_hat: Vec9,
    pub theta_r_hat: Vec9,
}

impl Default for ObserverState {
    fn default() -> Self {
        Self {
            vc_hat: Vector3::zeros(),
            theta_q_hat: Vec9::zeros(),
            theta_r_hat: Vec9::zeros(),
        }
    }
}

impl ObserverState {
    pub const DIM: usize = 21;

    pub fn write(&self, out: &mut [f64]) {
        out[..3].copy_from_slice(self.vc_hat.as_slice());
        out[3..12].copy_from_slice(self.theta_q_hat.as_slice());
        out[12..21].copy_from_slice(self.theta_r_hat.as_slice());
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            vc_hat: Vector3::from_column_slice(&s[..3]),
            theta_q_hat: Vec9::from_column_slice(&s[3..12]),
            theta_r_hat: Vec9::from_column_slice(&s[12..21]),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.vc_hat.norm_squared()
            + self.theta_q_hat.norm_squared()
            + self.theta_r_hat.norm_squared())
        .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutopilotOutput {
    pub forces: Forces,
    pub observer_rate: ObserverState,
    pub u_tilde: f64,
    pub theta_tilde: f64,
    pub psi_tilde: f64,
    pub s_q: f64,
    pub s_r: f64,
}

/// Smallest signed angle, in `[-π, π)`.
pub fn ssa(a: f64) -> f64 {
    use std::f64::consts::PI;
    (a + PI).rem_euclid(2.0 * PI) - PI
}

fn project<const D: usize>(
    est: &SVector<f64, D>,
    rate: SVector<f64, D>,
    cap: Option<f64>,
) -> SVector<f64, D> {
    match cap {
        Some(c) if est.norm() >= c => {
            let n = est / est.norm();
            let radial = rate.dot(&n);
            if radial > 0.0 {
                rate - n * radial
            } else {
                rate
            }
        }
        _ => rate,
    }
}

/// Evaluates all three autopilots. The ocean current is not an input:
/// `F_*` and `φ_*` do not depend on it.
pub fn autopilot(
    params: &VehicleParams,
    gains: &AutopilotGains,
    s: &VehicleState,
    obs: &ObserverState,
    u_ref: &Reference,
    theta_ref: &Reference,
    psi_ref: &Reference,
) -> AutopilotOutput {
    let g = gains;
    let c = components(params, s, &Vector3::zeros());

    let u_tilde = s.u - u_ref.value;
    let f_u = u_ref.rate - c.F_u - c.phi_u.dot(&obs.vc_hat) - g.k_u * u_tilde - g.k_c * g.sgn(u_tilde);
    let vc_rate = project(&obs.vc_hat, c.phi_u * (g.c_u * u_tilde), g.observer_cap);

    let theta_tilde = s.theta - theta_ref.value;
    let q_tilde = s.q - theta_ref.rate;
    let s_q = q_tilde + g.lambda_q * theta_tilde;
    let t_q = theta_ref.accel
        - c.F_q
        - c.phi_q.dot(&obs.theta_q_hat)
        - g.lambda_q * q_tilde
        - g.k_theta * theta_tilde
        - g.k_q * s_q
        - g.k_d * g.sgn(s_q);
    let th_q_rate = project(&obs.theta_q_hat, c.phi_q * (g.c_q * s_q), g.observer_cap);

    let (st, ct) = s.theta.sin_cos();
    let psi_tilde = ssa(s.psi - psi_ref.value);
    let psi_tilde_dot = s.r / ct - psi_ref.rate;
    let s_r = psi_tilde_dot + g.lambda_r * psi_tilde;
    let t_r = -c.F_r - c.phi_r.dot(&obs.theta_r_hat) - s.r * (st / ct) * s.q
        + ct * (psi_ref.accel
            - g.lambda_r * psi_tilde_dot
            - g.k_psi * psi_tilde
            - g.k_r * s_r
            - g.k_d * g.sgn(s_r));
    let th_r_rate = project(&obs.theta_r_hat, c.phi_r * (g.c_r * s_r), g.observer_cap);

    AutopilotOutput {
        forces: Forces { f_u, t_q, t_r },
        observer_rate: ObserverState {
            vc_hat: vc_rate,
            theta_q_hat: th_q_rate,
            theta_r_hat: th_r_rate,
        },
        u_tilde,
        theta_tilde,
        psi_tilde,
        s_q,
        s_r,
    }
}
