//! Parametrized 3D paths and their path-tangential frame.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::rotation;

/// A regular C² path `p_p(ξ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Path {
    /// `p(ξ) = origin + ξ · direction / |direction|`.
    Straight {
        origin: [f64; 3],
        direction: [f64; 3],
    },
    /// `p(ξ) = [ξ, a cos(ωξ), b sin(ωξ)]`.
    Spiral { a: f64, b: f64, omega: f64 },
}

/// Path geometry at one value of the parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub xi: f64,
    pub p: Vector3<f64>,
    pub dp: Vector3<f64>,
    pub ddp: Vector3<f64>,
    pub theta_p: f64,
    pub psi_p: f64,
    /// `dθ_p/dξ`
    pub kappa: f64,
    /// `dψ_p/dξ`
    pub iota: f64,
}

impl PathPoint {
    /// `|∂p/∂ξ|`
    pub fn speed(&self) -> f64 {
        self.dp.norm()
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation(self.theta_p, self.psi_p)
    }

    /// Angular velocity of the path frame, expressed in that frame, for a
    /// given `ξ̇`.
    pub fn frame_rate(&self, xi_dot: f64) -> Vector3<f64> {
        let (st, ct) = self.theta_p.sin_cos();
        Vector3::new(
            -self.iota * xi_dot * st,
            self.kappa * xi_dot,
            self.iota * xi_dot * ct,
        )
    }

    /// `Rᵀ(θ_p, ψ_p) (p − p_p(ξ))`
    pub fn to_path_frame(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().transpose() * (p - self.p)
    }
}

impl Path {
    pub fn spiral_default() -> Self {
        Path::Spiral {
            a: 40.0,
            b: 20.0,
            omega: PI / 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Path::Straight { origin, direction } => {
                let d = Vector3::from(*direction);
                if origin.iter().chain(direction.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::Config("straight path must be finite".into()));
                }
                if d.norm() < 1e-12 {
                    return Err(Error::Config("straight path direction is zero".into()));
                }
                let horiz = (d[0] * d[0] + d[1] * d[1]).sqrt();
                if horiz < 1e-9 * d.norm() {
                    return Err(Error::Config("straight path is vertical".into()));
                }
            }
            Path::Spiral { a, b, omega } => {
                if ![*a, *b, *omega].iter().all(|v| v.is_finite()) {
                    return Err(Error::Config("spiral parameters must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Position and its first two derivatives with respect to `ξ`.
    fn derivatives(&self, xi: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        match self {
            Path::Straight { origin, direction } => {
                let d = Vector3::from(*direction).normalize();
                (Vector3::from(*origin) + d * xi, d, Vector3::zeros())
            }
            Path::Spiral { a, b, omega } => {
                let (s, c) = (omega * xi).sin_cos();
                let w = *omega;
                (
                    Vector3::new(xi, a * c, b * s),
                    Vector3::new(1.0, -a * w * s, b * w * c),
                    Vector3::new(0.0, -a * w * w * c, -b * w * w * s),
                )
            }
        }
    }

    pub fn eval(&self, xi: f64) -> Result<PathPoint> {
        let (p, dp, ddp) = self.derivatives(xi);
        let h2 = dp[0] * dp[0] + dp[1] * dp[1];
        let n2 = h2 + dp[2] * dp[2];
        if !(n2 > 1e-18) || !(h2 > 1e-18) {
            return Err(Error::IrregularPath(xi));
        }
        let h = h2.sqrt();
        let dh = (dp[0] * ddp[0] + dp[1] * ddp[1]) / h;
        Ok(PathPoint {
            xi,
            p,
            dp,
            ddp,
            theta_p: (-dp[2]).atan2(h),
            psi_p: dp[1].atan2(dp[0]),
            kappa: (dp[2] * dh - h * ddp[2]) / n2,
            iota: (dp[0] * ddp[1] - dp[1] * ddp[0]) / h2,
        })
    }

    /// Sampled maxima of `|κ|`, `|ι|` and `|θ_p|` over one period (or over
    /// `[0, 1]` for a straight line).
    pub fn curvature_bounds(&self) -> Result<CurvatureBounds> {
        let (span, samples) = match self {
            Path::Straight { .. } => (1.0, 2),
            Path::Spiral { omega, .. } => (2.0 * PI / omega.abs().max(1e-12), 200_001),
        };
        let mut out = CurvatureBounds::default();
        for k in 0..samples {
            let xi = span * k as f64 / (samples - 1) as f64;
            let pt = self.eval(xi)?;
            out.kappa_max = out.kappa_max.max(pt.kappa.abs());
            out.iota_max = out.iota_max.max(pt.iota.abs());
            out.theta_p_max = out.theta_p_max.max(pt.theta_p.abs());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CurvatureBounds {
    pub kappa_max: f64,
    pub iota_max: f64,
    pub theta_p_max: f64,
}
