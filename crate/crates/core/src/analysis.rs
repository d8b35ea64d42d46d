//! Numerical checks of the closed-loop analysis: stability conditions,
//! closed-loop barycenter kinematics, desired pitch/yaw rates, the
//! Lyapunov matrix `Q`, exponential-rate fits and the USGES probe.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::guidance::{barycenter_rates, GuidanceParams};
use crate::model::{heave_coefficients, sway_coefficients, VehicleParams};
use crate::path::{Path, PathPoint};

/// Extremes of `|Y/X|` and `Y` over a speed/current envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEnvelope {
    pub ratio_v_min: f64,
    pub ratio_w_min: f64,
    pub y_v_max: f64,
    pub y_w_max: f64,
}

/// Grid search over `u ∈ [0, u_max]`, `u_c ∈ [−v_c, v_c]`.
pub fn ratio_envelope(p: &VehicleParams, vc_norm: f64, u_max: f64, grid: usize) -> RatioEnvelope {
    let grid = grid.max(2);
    let mut out = RatioEnvelope {
        ratio_v_min: f64::INFINITY,
        ratio_w_min: f64::INFINITY,
        y_v_max: f64::NEG_INFINITY,
        y_w_max: f64::NEG_INFINITY,
    };
    for a in 0..grid {
        let u = u_max * a as f64 / (grid - 1) as f64;
        for b in 0..grid {
            let uc = -vc_norm + 2.0 * vc_norm * b as f64 / (grid - 1) as f64;
            let (xv, yv) = sway_coefficients(p, u, uc);
            let (xw, yw) = heave_coefficients(p, u, uc);
            out.ratio_v_min = out.ratio_v_min.min((yv / xv).abs());
            out.ratio_w_min = out.ratio_w_min.min((yw / xw).abs());
            out.y_v_max = out.y_v_max.max(yv);
            out.y_w_max = out.y_w_max.max(yw);
        }
    }
    out
}

/// Smallest admissible constant lookahead distance. Infinite when a
/// curvature condition already fails.
pub fn lookahead_lower_bound(n: usize, ratio_v: f64, ratio_w: f64, iota_max: f64, kappa_max: f64) -> f64 {
    let n = n as f64;
    let a = n * ratio_v - 2.0 * iota_max.abs();
    let b = n * ratio_w - 2.0 * kappa_max.abs();
    if a <= 0.0 || b <= 0.0 {
        return f64::INFINITY;
    }
    (3.0 / a).max(3.0 / b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub n: usize,
    pub kappa_max: f64,
    pub iota_max: f64,
    pub theta_p_max: f64,
    pub ratio_v_min: f64,
    pub ratio_w_min: f64,
    pub y_v_max: f64,
    pub y_w_max: f64,
    pub damping_ok: bool,
    pub kappa_ok: bool,
    pub iota_ok: bool,
    pub theta_p_ok: bool,
    pub delta0: f64,
    pub delta0_lower_bound: f64,
    pub delta0_ok: bool,
    pub overall_ok: bool,
}

/// Sufficient conditions for the closed-loop result, from ratio and
/// curvature bounds.
pub fn conditions_from_bounds(
    n: usize,
    env: &RatioEnvelope,
    kappa_max: f64,
    iota_max: f64,
    theta_p_max: f64,
    delta0: f64,
) -> StabilityReport {
    let nf = n as f64;
    let damping_ok = env.y_v_max < 0.0 && env.y_w_max < 0.0;
    let kappa_ok = kappa_max < 0.5 * nf * env.ratio_w_min;
    let iota_ok = iota_max < 0.5 * nf * env.ratio_v_min;
    let theta_p_ok = theta_p_max < std::f64::consts::FRAC_PI_4;
    let bound = lookahead_lower_bound(n, env.ratio_v_min, env.ratio_w_min, iota_max, kappa_max);
    let delta0_ok = delta0 > bound;
    StabilityReport {
        n,
        kappa_max,
        iota_max,
        theta_p_max,
        ratio_v_min: env.ratio_v_min,
        ratio_w_min: env.ratio_w_min,
        y_v_max: env.y_v_max,
        y_w_max: env.y_w_max,
        damping_ok,
        kappa_ok,
        iota_ok,
        theta_p_ok,
        delta0,
        delta0_lower_bound: bound,
        delta0_ok,
        overall_ok: damping_ok && kappa_ok && iota_ok && theta_p_ok && delta0_ok,
    }
}

pub fn check_conditions(
    p: &VehicleParams,
    path: &Path,
    n: usize,
    vc_norm: f64,
    delta0: f64,
    u_max: f64,
) -> Result<StabilityReport> {
    let cb = path.curvature_bounds()?;
    let env = ratio_envelope(p, vc_norm, u_max, 100);
    Ok(conditions_from_bounds(
        n,
        &env,
        cb.kappa_max,
        cb.iota_max,
        cb.theta_p_max,
        delta0,
    ))
}

/// Per-vehicle quantities entering the closed-loop barycenter kinematics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleSample {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub theta: f64,
    pub psi: f64,
    pub u_d: f64,
}

/// A point of the path-following regime: every vehicle tracks the LOS
/// references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopSample {
    pub pbp: [f64; 3],
    pub theta_p: f64,
    pub psi_p: f64,
    pub kappa: f64,
    pub iota: f64,
    pub path_speed: f64,
    pub delta0: f64,
    pub k_xi: f64,
    pub vehicles: Vec<VehicleSample>,
}

/// Quantities derived from a sample; angle conventions
/// `γ = θ − atan(w/u)`, `χ = ψ + asin(v/U)`.
#[derive(Debug, Clone, Copy)]
struct Derived {
    speed: f64,
    gamma: f64,
    chi: f64,
    u_dd: f64,
    theta_tilde: f64,
    psi_tilde: f64,
    alpha: f64,
    alpha_d: f64,
}

impl ClosedLoopSample {
    fn pp(&self) -> PathPoint {
        PathPoint {
            xi: 0.0,
            p: Vector3::zeros(),
            dp: Vector3::new(self.path_speed, 0.0, 0.0),
            ddp: Vector3::zeros(),
            theta_p: self.theta_p,
            psi_p: self.psi_p,
            kappa: self.kappa,
            iota: self.iota,
        }
    }

    fn x1(&self) -> Vector3<f64> {
        Vector3::from(self.pbp)
    }

    pub fn delta(&self) -> f64 {
        (self.delta0 * self.delta0 + self.x1().norm_squared()).sqrt()
    }

    pub fn gamma_los(&self) -> f64 {
        self.theta_p + (self.pbp[2] / self.delta()).atan()
    }

    pub fn chi_los(&self) -> f64 {
        self.psi_p - (self.pbp[1] / self.delta()).atan()
    }

    fn derived(&self, s: &VehicleSample) -> Derived {
        let speed = (s.u * s.u + s.v * s.v + s.w * s.w).sqrt();
        let alpha = (s.w / s.u).atan();
        let alpha_d = (s.w / s.u_d).atan();
        let u_dd = (s.u_d * s.u_d + s.v * s.v + s.w * s.w).sqrt();
        let theta_d = self.gamma_los() + alpha_d;
        let psi_d = self.chi_los() - (s.v / u_dd).asin();
        Derived {
            speed,
            gamma: s.theta - alpha,
            chi: s.psi + (s.v / speed).asin(),
            u_dd,
            theta_tilde: s.theta - theta_d,
            psi_tilde: s.psi - psi_d,
            alpha,
            alpha_d,
        }
    }

    /// Path-parameter rate from the update law.
    pub fn xi_dot(&self) -> f64 {
        let pp = self.pp();
        let n = self.vehicles.len() as f64;
        let mean: f64 = self
            .vehicles
            .iter()
            .map(|s| {
                let d = self.derived(s);
                d.speed * crate::guidance::omega_components(d.gamma, d.chi, &pp)[0]
            })
            .sum::<f64>()
            / n;
        let x = self.pbp[0];
        (mean + self.k_xi * x / (1.0 + x * x).sqrt()) / self.path_speed
    }

    /// `ṗ_b^p` from the barycenter kinematics.
    pub fn rates_direct(&self) -> Vector3<f64> {
        let sa: Vec<(f64, f64, f64)> = self
            .vehicles
            .iter()
            .map(|s| {
                let d = self.derived(s);
                (d.speed, d.gamma, d.chi)
            })
            .collect();
        barycenter_rates(&sa, &self.pp(), &self.x1(), self.xi_dot())
    }

    /// Exact perturbation terms `(G_y, G_z)`, averaged over the fleet.
    pub fn perturbations(&self) -> (f64, f64) {
        let (y, z) = (self.pbp[1], self.pbp[2]);
        let delta = self.delta();
        let dy = (delta * delta + y * y).sqrt();
        let dz = (delta * delta + z * z).sqrt();
        let g_los = self.gamma_los();
        let n = self.vehicles.len() as f64;
        let (mut gy, mut gz) = (0.0, 0.0);
        for s in &self.vehicles {
            let d = self.derived(s);
            let cg = d.gamma.cos();
            let s_uw = (s.u * s.u + s.w * s.w).sqrt();
            let s_dw = (s.u_d * s.u_d + s.w * s.w).sqrt();
            gy += cg * (s.psi - self.psi_p).sin() * (s_uw - s_dw)
                + d.u_dd * cg * d.psi_tilde.sin() * delta / dy
                - d.u_dd * (cg * d.psi_tilde.cos() - g_los.cos()) * y / dy;
            let k = d.speed / s_uw;
            gz += -d.speed * (1.0 - (d.chi - self.psi_p).cos()) * cg * self.theta_p.sin()
                - k * (s.u - s.u_d) * (s.theta - self.theta_p).sin()
                - k * s_dw * d.theta_tilde.sin() * delta / dz
                - (k * s_dw * d.theta_tilde.cos() - d.u_dd) * z / dz;
        }
        (gy / n, gz / n)
    }

    /// Commonly quoted simplified closed form of the perturbation terms.
    /// Kept to quantify how far it is from the exact identity.
    pub fn perturbations_simplified(&self) -> (f64, f64) {
        let (y, z) = (self.pbp[1], self.pbp[2]);
        let delta = self.delta();
        let dy = (delta * delta + y * y).sqrt();
        let dz = (delta * delta + z * z).sqrt();
        let g_los = self.gamma_los();
        let n = self.vehicles.len() as f64;
        let (mut gy, mut gz) = (0.0, 0.0);
        for s in &self.vehicles {
            let d = self.derived(s);
            let cg = d.gamma.cos();
            let s_uw = (s.u * s.u + s.w * s.w).sqrt();
            let s_dw = (s.u_d * s.u_d + s.w * s.w).sqrt();
            let (st, ct) = d.theta_tilde.sin_cos();
            let (sa, ca) = (d.alpha_d - d.alpha).sin_cos();
            gy += cg * (s.psi - self.psi_p).sin() * (s_uw - s_dw)
                - d.u_dd * cg * d.psi_tilde.sin() * delta / dy
                + d.u_dd
                    * (g_los.sin() * (ct * sa + st * ca) - g_los.cos() * (ct * ca - 1.0))
                    * y
                    / dy;
            gz += -d.speed * (1.0 - (d.chi - self.psi_p).cos()) * cg * self.theta_p.sin()
                - (s.u - s.u_d) * (s.theta - self.theta_p).sin()
                - (1.0 - ct) * z / dz
                - d.u_dd * st * delta / dz;
        }
        (gy / n, gz / n)
    }

    /// `ṗ_b^p` in closed-loop form: nominal terms plus `(G_y, G_z)`.
    pub fn rates_closed_loop_with(&self, g: (f64, f64)) -> Vector3<f64> {
        let (x, y, z) = (self.pbp[0], self.pbp[1], self.pbp[2]);
        let delta = self.delta();
        let dy = (delta * delta + y * y).sqrt();
        let dz = (delta * delta + z * z).sqrt();
        let w = self.pp().frame_rate(self.xi_dot());
        let mean_ud: f64 = self
            .vehicles
            .iter()
            .map(|s| self.derived(s).u_dd)
            .sum::<f64>()
            / self.vehicles.len() as f64;
        Vector3::new(
            -self.k_xi * x / (1.0 + x * x).sqrt() + w[2] * y - w[1] * z,
            -mean_ud * self.gamma_los().cos() * y / dy + w[0] * z - w[2] * x + g.0,
            -mean_ud * z / dz + w[1] * x - w[0] * y + g.1,
        )
    }

    pub fn rates_closed_loop(&self) -> Vector3<f64> {
        self.rates_closed_loop_with(self.perturbations())
    }

    /// `‖X̃_2‖` restricted to the kinematic errors `(ũ, θ̃, ψ̃)`.
    pub fn x2_norm(&self) -> f64 {
        self.vehicles
            .iter()
            .map(|s| {
                let d = self.derived(s);
                (s.u - s.u_d).powi(2) + d.theta_tilde.powi(2) + d.psi_tilde.powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Builds a sample where each vehicle sits exactly on its references,
    /// then perturbs by `(ũ, θ̃, ψ̃)` per vehicle.
    #[allow(clippy::too_many_arguments)]
    pub fn on_references(
        pbp: [f64; 3],
        theta_p: f64,
        psi_p: f64,
        kappa: f64,
        iota: f64,
        delta0: f64,
        k_xi: f64,
        vehicles: &[(f64, f64, f64, f64, f64, f64)],
    ) -> Self {
        let mut sample = Self {
            pbp,
            theta_p,
            psi_p,
            kappa,
            iota,
            path_speed: 1.0,
            delta0,
            k_xi,
            vehicles: Vec::new(),
        };
        let g_los = sample.gamma_los();
        let c_los = sample.chi_los();
        for &(u_d, v, w, u_t, th_t, ps_t) in vehicles {
            let u_dd = (u_d * u_d + v * v + w * w).sqrt();
            sample.vehicles.push(VehicleSample {
                u: u_d + u_t,
                v,
                w,
                theta: g_los + (w / u_d).atan() + th_t,
                psi: c_los - (v / u_dd).asin() + ps_t,
                u_d,
            });
        }
        sample
    }
}

/// Diagonal of `Q` in `V̇ = −X̃_1ᵀ Q X̃_1` for the nominal barycenter
/// dynamics. `u_dd` holds `U_d,i = sqrt(u_d² + v² + w²)` per vehicle.
pub fn q_diagonal(pbp: &Vector3<f64>, gamma_los: f64, delta0: f64, k_xi: f64, u_dd: &[f64]) -> [f64; 3] {
    let (x, y, z) = (pbp[0], pbp[1], pbp[2]);
    let delta = (delta0 * delta0 + pbp.norm_squared()).sqrt();
    let mean = u_dd.iter().sum::<f64>() / u_dd.len() as f64;
    [
        k_xi / (1.0 + x * x).sqrt(),
        mean * gamma_los.cos() / (delta * delta + y * y).sqrt(),
        mean / (delta * delta + z * z).sqrt(),
    ]
}

/// Inputs to the closed-form desired pitch and yaw rates of one vehicle in
/// the path-following regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateInput {
    pub theta_p: f64,
    pub kappa: f64,
    pub iota: f64,
    pub xi_dot: f64,
    pub delta0: f64,
    pub pbp: Vector3<f64>,
    pub pbp_dot: Vector3<f64>,
    pub u_d: f64,
    pub u_d_dot: f64,
    pub v: f64,
    pub v_dot: f64,
    pub w: f64,
    pub w_dot: f64,
}

/// `(q_d, r_d)`: time derivatives of `θ_d = γ_LOS + atan(w/u_d)` and
/// `ψ_d = χ_LOS − asin(v/U_d)`, with `r_d = ψ̇_d cos θ_d`.
pub fn desired_rates(i: &RateInput) -> (f64, f64) {
    let (x, y, z) = (i.pbp[0], i.pbp[1], i.pbp[2]);
    let (xd, yd, zd) = (i.pbp_dot[0], i.pbp_dot[1], i.pbp_dot[2]);
    let delta = (i.delta0 * i.delta0 + i.pbp.norm_squared()).sqrt();
    let delta_dot = (x * xd + y * yd + z * zd) / delta;
    let gamma_los = i.theta_p + (z / delta).atan();
    let theta_d = gamma_los + (i.w / i.u_d).atan();

    let q_d = i.kappa * i.xi_dot
        + (delta * zd - z * delta_dot) / (delta * delta + z * z)
        + (i.u_d * i.w_dot - i.w * i.u_d_dot) / (i.u_d * i.u_d + i.w * i.w);

    let u_dd = (i.u_d * i.u_d + i.v * i.v + i.w * i.w).sqrt();
    let u_dd_dot = (i.u_d * i.u_d_dot + i.v * i.v_dot + i.w * i.w_dot) / u_dd;
    let psi_d_dot = i.iota * i.xi_dot
        - (delta * yd - y * delta_dot) / (delta * delta + y * y)
        - (i.v_dot * u_dd - i.v * u_dd_dot) / (u_dd * (u_dd * u_dd - i.v * i.v).sqrt());
    (q_d, psi_d_dot * theta_d.cos())
}

/// Rate input for vehicle `i` of a running fleet, assuming every vehicle
/// follows the LOS velocity (single vehicle, or formation at rest
/// relative to the path frame).
pub fn rate_input_from_system(
    sys: &crate::sim::System,
    x: &[f64],
    xdot: &[f64],
    i: usize,
    g: &GuidanceParams,
) -> Result<RateInput> {
    let states = sys.vehicles(x);
    let pp = sys.path.eval(sys.xi(x))?;
    let positions: Vec<Vector3<f64>> = states.iter().map(|s| s.position()).collect();
    let pbp = pp.to_path_frame(&crate::guidance::barycenter(&positions));
    let xi_dot = crate::guidance::path_parameter_rate(&states, &pp, &pbp, g.k_xi);
    let sa: Vec<(f64, f64, f64)> = states.iter().map(crate::guidance::flight_angles).collect();
    let pbp_dot = barycenter_rates(&sa, &pp, &pbp, xi_dot);

    let s = states[i];
    let ds = sys.vehicle(xdot, i);
    let los = crate::guidance::los(&pbp, &pp, g);
    let delta = los.delta;
    let delta_dot = pbp.dot(&pbp_dot) / delta;
    let gamma_los_dot = pp.kappa * xi_dot
        + (delta * pbp_dot[2] - pbp[2] * delta_dot) / (delta * delta + pbp[2] * pbp[2]);
    let chi_los_dot = pp.iota * xi_dot
        - (delta * pbp_dot[1] - pbp[1] * delta_dot) / (delta * delta + pbp[1] * pbp[1]);

    // Vehicle flight-path angle and course rates from ṗ and p̈.
    let rot = crate::model::rotation(s.theta, s.psi);
    let lin = s.linear_velocity();
    let lin_dot = Vector3::new(ds.u, ds.v, ds.w);
    let omega_b = Vector3::new(-s.r * s.theta.tan(), s.q, s.r);
    let pd = rot * lin;
    let pdd = rot * (omega_b.cross(&lin) + lin_dot);
    let speed = pd.norm();
    let speed_dot = pd.dot(&pdd) / speed;
    let gamma = (-pd[2] / speed).asin();
    let gamma_dot = -(pdd[2] * speed - pd[2] * speed_dot) / (speed * (speed * speed - pd[2] * pd[2]).sqrt());
    let chi = pd[1].atan2(pd[0]);
    let chi_dot = (pd[0] * pdd[1] - pd[1] * pdd[0]) / (pd[0] * pd[0] + pd[1] * pd[1]);

    let a = los.gamma - gamma;
    let b = los.chi - chi;
    let blend = 0.5 * (1.0 + a.cos() * b.cos());
    let (u_d, u_d_dot) = if blend >= g.u_d_floor {
        (
            g.u_los * blend,
            0.5 * g.u_los
                * (-a.sin() * (gamma_los_dot - gamma_dot) * b.cos()
                    - a.cos() * b.sin() * (chi_los_dot - chi_dot)),
        )
    } else {
        (g.u_los * g.u_d_floor, 0.0)
    };
    Ok(RateInput {
        theta_p: pp.theta_p,
        kappa: pp.kappa,
        iota: pp.iota,
        xi_dot,
        delta0: g.delta0,
        pbp,
        pbp_dot,
        u_d,
        u_d_dot,
        v: s.v,
        v_dot: ds.v,
        w: s.w,
        w_dot: ds.w,
    })
}

/// Least-squares fit of `ln e(t) = ln k − λ t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub rate: f64,
    pub k: f64,
    pub r2: f64,
    pub samples: usize,
}

/// Fits an exponential to `e(t)` on `[t0, t1]`. Returns `None` when the
/// signal changes sign in the window, or when fewer than three samples
/// lie above `floor`.
pub fn fit_exponential(t: &[f64], e: &[f64], t0: f64, t1: f64, floor: f64) -> Option<ExpFit> {
    let idx: Vec<usize> = (0..t.len()).filter(|&k| t[k] >= t0 && t[k] <= t1).collect();
    let pos = idx.iter().any(|&k| e[k] > 0.0);
    let neg = idx.iter().any(|&k| e[k] < 0.0);
    if pos && neg {
        return None;
    }
    let pts: Vec<(f64, f64)> = idx
        .iter()
        .filter(|&&k| e[k].abs() > floor)
        .map(|&k| (t[k], e[k].abs().ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(ExpFit {
        rate: -slope,
        k: (my - slope * mt).exp(),
        r2,
        samples: pts.len(),
    })
}

/// Autopilot channel excited by a reference step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Surge,
    Pitch,
    Yaw,
}

/// Closed-loop response of one vehicle to constant references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub t: Vec<f64>,
    /// Tracking error of the excited channel.
    pub error: Vec<f64>,
    /// `‖[v̂_c, θ̂_q, θ̂_r]‖`.
    pub observer_norm: Vec<f64>,
}

/// Reference step applied to a single vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSpec {
    pub channel: Channel,
    /// Initial surge speed relative to the water.
    pub u0: f64,
    pub step: f64,
    /// Pitch the vehicle starts at and the pitch loop holds when it is not
    /// the stepped channel.
    pub theta_hold: f64,
}

/// Starts a single vehicle at `u = u0` relative to the water, pitched at
/// `theta_hold`, heading north, drifting with `current`, with zero observer
/// estimates, and holds the references `u0 + du`, `theta_hold + dθ`, `dψ`,
/// where only the stepped channel has a nonzero increment.
pub fn step_response(
    params: &VehicleParams,
    gains: &crate::autopilot::AutopilotGains,
    current: &Vector3<f64>,
    spec: StepSpec,
    dt: f64,
    t_end: f64,
) -> Result<StepResponse> {
    use crate::autopilot::{autopilot, ObserverState, Reference};
    use crate::model::{current_in_body, state_derivative, VehicleState};

    let StepSpec {
        channel,
        u0,
        step,
        theta_hold,
    } = spec;
    let nu_c = current_in_body(theta_hold, 0.0, current);
    let s0 = VehicleState {
        theta: theta_hold,
        u: u0 + nu_c[0],
        v: nu_c[1],
        w: nu_c[2],
        ..Default::default()
    };
    let cst = |v: f64| Reference {
        value: v,
        rate: 0.0,
        accel: 0.0,
    };
    let (ur, tr, pr) = match channel {
        Channel::Surge => (cst(s0.u + step), cst(theta_hold), cst(0.0)),
        Channel::Pitch => (cst(s0.u), cst(theta_hold + step), cst(0.0)),
        Channel::Yaw => (cst(s0.u), cst(theta_hold), cst(step)),
    };
    const D: usize = VehicleState::DIM;
    let mut x = vec![0.0; D + ObserverState::DIM];
    x[..D].copy_from_slice(&s0.as_array());
    let err = |x: &[f64]| {
        let s = VehicleState::from_slice(&x[..D]);
        match channel {
            Channel::Surge => s.u - ur.value,
            Channel::Pitch => s.theta - tr.value,
            Channel::Yaw => crate::autopilot::ssa(s.psi - pr.value),
        }
    };
    let mut out = StepResponse {
        t: vec![0.0],
        error: vec![err(&x)],
        observer_norm: vec![0.0],
    };
    let steps = (t_end / dt).round() as usize;
    for k in 1..=steps {
        x = crate::sim::rk4_step(&x, dt, |y, dy| {
            let s = VehicleState::from_slice(&y[..D]);
            let obs = ObserverState::from_slice(&y[D..]);
            let ap = autopilot(params, gains, &s, &obs, &ur, &tr, &pr);
            dy[..D].copy_from_slice(&state_derivative(params, &s, &ap.forces, current).as_array());
            ap.observer_rate.write(&mut dy[D..]);
            Ok(())
        })?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(crate::error::Error::NonFinite { t: k as f64 * dt, step: k });
        }
        out.t.push(k as f64 * dt);
        out.error.push(err(&x));
        out.observer_norm.push(ObserverState::from_slice(&x[D..]).norm());
    }
    Ok(out)
}

/// Sample of a kinematic fleet run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicSample {
    pub t: f64,
    pub sigma2_norm: f64,
    pub pbp: [f64; 3],
    pub min_distance: f64,
    pub colav_active: bool,
}

/// Fleet with perfect velocity tracking, `ṗ_i = v_i` from the NSB
/// guidance. The COLAV activation set is updated once per step.
pub fn kinematic_run(
    path: &Path,
    offsets: &[Vector3<f64>],
    params: &GuidanceParams,
    positions: &[Vector3<f64>],
    xi0: f64,
    dt: f64,
    t_end: f64,
) -> Result<Vec<KinematicSample>> {
    use crate::guidance::{
        colav_task, formation_task, los, nsb_combine, pair_distances, ColavMode,
    };
    use nalgebra::DVector;

    let n = positions.len();
    let unpack = |x: &[f64]| -> Vec<Vector3<f64>> {
        (0..n).map(|i| Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])).collect()
    };
    // Returns (ẋ, σ̃₂, p_b^p).
    let field = |x: &[f64], mode: &ColavMode| -> Result<(Vec<f64>, f64, Vector3<f64>)> {
        let p = unpack(x);
        let pp = path.eval(x[3 * n])?;
        let pbp = pp.to_path_frame(&crate::guidance::barycenter(&p));
        let l = los(&pbp, &pp, params);
        // Task velocities above the LOS task have zero fleet mean, so the
        // barycenter moves with v_LOS.
        let tangent = pp.dp / pp.speed();
        let xi_dot = (tangent.dot(&l.velocity) + params.k_xi * pbp[0] / (1.0 + pbp[0] * pbp[0]).sqrt())
            / pp.speed();
        let colav = colav_task(&p, mode, params);
        let formation = formation_task(&p, offsets, &pp, xi_dot, params);
        let mut v3 = DVector::zeros(3 * n);
        for i in 0..n {
            v3.fixed_rows_mut::<3>(3 * i).copy_from(&l.velocity);
        }
        let v = nsb_combine(colav.as_ref(), formation.as_ref(), &v3);
        let mut dx: Vec<f64> = v.iter().copied().collect();
        dx.push(xi_dot);
        let s2 = formation.map(|f| f.sigma_tilde.norm()).unwrap_or(0.0);
        Ok((dx, s2, pbp))
    };

    let mut x: Vec<f64> = positions.iter().flat_map(|p| [p[0], p[1], p[2]]).collect();
    x.push(xi0);
    let mut mode = ColavMode::inactive(n).updated(&pair_distances(positions), params.d_colav, params.colav_hysteresis);
    let steps = (t_end / dt).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let (_, s2, pbp) = field(&x, &mode)?;
        let d = pair_distances(&unpack(&x));
        out.push(KinematicSample {
            t: k as f64 * dt,
            sigma2_norm: s2,
            pbp: [pbp[0], pbp[1], pbp[2]],
            min_distance: d.iter().copied().fold(f64::INFINITY, f64::min),
            colav_active: mode.any(),
        });
        if k == steps {
            break;
        }
        x = crate::sim::rk4_step(&x, dt, |y, dy| {
            dy.copy_from_slice(&field(y, &mode)?.0);
            Ok(())
        })?;
        mode = mode.updated(&pair_distances(&unpack(&x)), params.d_colav, params.colav_hysteresis);
    }
    Ok(out)
}

/// One run of the USGES probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub scale: f64,
    pub initial_error: f64,
    pub final_error: f64,
    /// Envelope fit of `‖p_b^p‖` over the window where it lies between
    /// half and one hundredth of its initial value.
    pub fit: Option<ExpFit>,
    pub error: Option<String>,
}

impl ProbeRun {
    pub fn converged(&self) -> bool {
        self.error.is_none() && self.fit.is_some_and(|f| f.rate > 0.0)
    }
}

/// Scenario of the probe family: the initial barycenter deviation from
/// `p_p(ξ0)` of `base` is multiplied by `scale`, and the horizon by
/// `max(scale, 1)`.
pub fn probe_scenario(base: &crate::scenario::Scenario, scale: f64) -> Result<crate::scenario::Scenario> {
    let mut sc = base.clone();
    let pp = sc.path.eval(sc.xi0)?;
    let dev = Vector3::from(sc.initial.p0) - pp.p;
    let p0 = pp.p + dev * scale;
    sc.initial.p0 = [p0[0], p0[1], p0[2]];
    if let Some(pos) = &mut sc.initial.positions {
        for q in pos.iter_mut() {
            for k in 0..3 {
                q[k] += (scale - 1.0) * dev[k];
            }
        }
    }
    sc.t_end = base.t_end * scale.max(1.0);
    sc.name = format!("{}_s{scale}", base.name);
    Ok(sc)
}

/// Upper envelope `sup_{s ≥ t} |e(s)|`.
pub fn upper_envelope(e: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; e.len()];
    let mut m: f64 = 0.0;
    for k in (0..e.len()).rev() {
        m = m.max(e[k].abs());
        out[k] = m;
    }
    out
}

/// Exponential fit of the upper envelope of `|e|` over the window where the
/// envelope lies between `hi·env(0)` and `lo·env(0)`.
pub fn envelope_fit(t: &[f64], e: &[f64], hi: f64, lo: f64) -> Option<ExpFit> {
    let e = upper_envelope(e);
    let e0 = *e.first()?;
    let ta = t.iter().zip(&e).find(|(_, &v)| v <= hi * e0).map(|(t, _)| *t)?;
    let tb = t
        .iter()
        .zip(&e)
        .find(|(&tt, &v)| tt >= ta && v <= lo * e0)
        .map(|(t, _)| *t)
        .unwrap_or(*t.last()?);
    fit_exponential(t, &e, ta, tb, 0.0)
}

pub fn usges_probe(base: &crate::scenario::Scenario, scales: &[f64]) -> Vec<ProbeRun> {
    use rayon::prelude::*;
    scales
        .par_iter()
        .map(|&scale| {
            let res = probe_scenario(base, scale).and_then(|sc| crate::sim::run(&sc));
            match res {
                Ok(log) => {
                    let t = log.times();
                    let e: Vec<f64> = log.records.iter().map(|r| r.pbp.norm()).collect();
                    ProbeRun {
                        scale,
                        initial_error: e[0],
                        final_error: *e.last().unwrap_or(&f64::NAN),
                        fit: envelope_fit(&t, &e, 0.5, 0.01),
                        error: None,
                    }
                }
                Err(err) => ProbeRun {
                    scale,
                    initial_error: f64::NAN,
                    final_error: f64::NAN,
                    fit: None,
                    error: Some(err.to_string()),
                },
            }
        })
        .collect()
}

/// Closed-form desired rates against central differences of the logged
/// references at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCheck {
    pub t: f64,
    pub q_d: f64,
    pub q_d_fd: f64,
    pub r_d: f64,
    pub r_d_fd: f64,
}

/// Runs a single-vehicle scenario and, at each of `times`, compares
/// `desired_rates` with `(θ_d(t+h) − θ_d(t−h))/2h` and
/// `cos θ_d (ψ_d(t+h) − ψ_d(t−h))/2h`.
pub fn desired_rate_check(sc: &crate::scenario::Scenario, times: &[f64], h: f64) -> Result<Vec<RateCheck>> {
    use crate::sim::{rk4_step, Simulation};
    if sc.n_vehicles() != 1 {
        return Err(crate::error::Error::Config(
            "desired-rate check needs a single vehicle".into(),
        ));
    }
    let mut sim = Simulation::new(sc)?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        while sim.time() + 0.5 * sc.dt < t {
            sim.step()?;
        }
        let sys = &sim.sys;
        let mode = sim.mode().clone();
        let x = sim.state().to_vec();
        let mut dx = vec![0.0; x.len()];
        let prev = sys.evaluate(&x, &mode, &[Default::default()])?.guidance.commands;
        sys.derivative(&x, &mode, &prev, &mut dx)?;
        let input = rate_input_from_system(sys, &x, &dx, 0, &sc.guidance)?;
        let (q_d, r_d) = desired_rates(&input);

        let cmd_at = |dt: f64| -> Result<crate::guidance::Command> {
            let y = rk4_step(&x, dt, |s, o| sys.derivative(s, &mode, &prev, o))?;
            Ok(sys.evaluate(&y, &mode, &prev)?.guidance.commands[0])
        };
        let (a, b) = (cmd_at(-h)?, cmd_at(h)?);
        let c = sys.evaluate(&x, &mode, &prev)?.guidance.commands[0];
        out.push(RateCheck {
            t: sim.time(),
            q_d,
            q_d_fd: (b.theta_d - a.theta_d) / (2.0 * h),
            r_d,
            r_d_fd: c.theta_d.cos() * crate::autopilot::ssa(b.psi_d - a.psi_d) / (2.0 * h),
        });
    }
    Ok(out)
}

/// Summary of a simulation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub t_final: f64,
    pub final_pbp_norm: f64,
    pub final_sigma2_norm: f64,
    pub min_distance: f64,
    pub min_distance_t: f64,
    /// `None` without a scenario.
    pub d_min_ok: Option<bool>,
    /// `[start, end)` of each logged COLAV-active interval; `end` is
    /// `None` when the run ends inside one.
    pub colav_intervals: Vec<(f64, Option<f64>)>,
    /// Decay of `‖σ̃₂‖` after the last COLAV deactivation, fitted until
    /// it has dropped by one decade.
    pub sigma2_fit: Option<ExpFit>,
    pub max_abs_pitch: f64,
}

impl Metrics {
    pub fn colav_activated(&self) -> bool {
        !self.colav_intervals.is_empty()
    }

    pub fn colav_deactivated(&self) -> bool {
        self.colav_intervals.iter().any(|iv| iv.1.is_some())
    }
}

pub fn compute_metrics(log: &crate::telemetry::SimLog, sc: Option<&crate::scenario::Scenario>) -> Metrics {
    let recs = &log.records;
    let last = recs.last();
    let mut min_d = f64::INFINITY;
    let mut min_t = f64::NAN;
    let mut max_pitch: f64 = 0.0;
    let mut intervals: Vec<(f64, Option<f64>)> = Vec::new();
    let mut active = false;
    for r in recs {
        let d = r.min_distance();
        if d < min_d {
            min_d = d;
            min_t = r.t;
        }
        for v in &r.vehicles {
            max_pitch = max_pitch.max(v.state.theta.abs());
        }
        if r.colav_active && !active {
            intervals.push((r.t, None));
        } else if !r.colav_active && active {
            if let Some(iv) = intervals.last_mut() {
                iv.1 = Some(r.t);
            }
        }
        active = r.colav_active;
    }
    let sigma2_fit = match intervals.last() {
        Some((_, Some(end))) => {
            let t: Vec<f64> = recs.iter().map(|r| r.t).collect();
            let e: Vec<f64> = recs.iter().map(|r| r.sigma2_norm()).collect();
            let k0 = t.iter().position(|&tt| tt >= *end);
            k0.and_then(|k0| {
                let e0 = e[k0];
                let t1 = (k0..t.len()).find(|&k| e[k] <= 0.1 * e0).map(|k| t[k])?;
                fit_exponential(&t, &e, t[k0], t1, 0.0)
            })
        }
        None if log.n > 1 => {
            let t: Vec<f64> = recs.iter().map(|r| r.t).collect();
            let e: Vec<f64> = recs.iter().map(|r| r.sigma2_norm()).collect();
            e.first().and_then(|&e0| {
                let t1 = e.iter().position(|&v| v <= 0.1 * e0).map(|k| t[k])?;
                fit_exponential(&t, &e, 0.0, t1, 0.0)
            })
        }
        _ => None,
    };
    Metrics {
        n: log.n,
        t_final: last.map_or(f64::NAN, |r| r.t),
        final_pbp_norm: last.map_or(f64::NAN, |r| r.pbp.norm()),
        final_sigma2_norm: last.map_or(f64::NAN, |r| r.sigma2_norm()),
        min_distance: min_d,
        min_distance_t: min_t,
        d_min_ok: sc.map(|s| min_d >= s.formation.d_min),
        colav_intervals: intervals,
        sigma2_fit,
        max_abs_pitch: max_pitch,
    }
}
