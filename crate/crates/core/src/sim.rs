//! Closed-loop simulation of the fleet as one ODE, integrated with
//! fixed-step RK4.
//!
//! Guidance and autopilots are evaluated inside every RK4 stage. The COLAV
//! activation set is the only discrete state; it is frozen over a step and a
//! step that would change it is split at the crossing, found by bisection.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autopilot::{autopilot, ssa, AutopilotGains, AutopilotOutput, ObserverState, Reference};
use crate::error::{Error, Result};
use crate::guidance::{guidance, pair_distances, ColavMode, Command, GuidanceOutput, GuidanceParams};
use crate::model::{state_derivative, VehicleParams, VehicleState};
use crate::path::Path;
use crate::scenario::Scenario;
use crate::telemetry::{Record, SimLog, VehicleRecord};

const VEH: usize = VehicleState::DIM + ObserverState::DIM + 6;
const OBS0: usize = VehicleState::DIM;
const FIL0: usize = VehicleState::DIM + ObserverState::DIM;

/// One classic RK4 step of `ẋ = f(x)`.
pub fn rk4_step<F>(x: &[f64], h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    f(x, &mut k1)?;
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    f(&tmp, &mut k2)?;
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    f(&tmp, &mut k3)?;
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    f(&tmp, &mut k4)?;
    Ok((0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Second-order critically damped reference filter output for one channel.
pub fn filter_reference(value: f64, rate: f64, input: f64, omega: f64) -> Reference {
    Reference {
        value,
        rate,
        accel: omega * omega * (input - value) - 2.0 * omega * rate,
    }
}

/// Closed-loop dynamics of the fleet.
#[derive(Debug, Clone)]
pub struct System {
    pub params: VehicleParams,
    pub gains: AutopilotGains,
    pub guidance: GuidanceParams,
    pub path: Path,
    pub current: Vector3<f64>,
    pub offsets: Vec<Vector3<f64>>,
    pub filter_omega: f64,
    pub n: usize,
}

/// Guidance and autopilot signals at one state.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub guidance: GuidanceOutput,
    pub references: Vec<[Reference; 3]>,
    pub autopilot: Vec<AutopilotOutput>,
}

impl System {
    pub fn from_scenario(sc: &Scenario) -> Result<Self> {
        sc.validate()?;
        Ok(Self {
            params: sc.vehicle.clone(),
            gains: sc.autopilot.clone(),
            guidance: sc.guidance.clone(),
            path: sc.path.clone(),
            current: sc.current_vec(),
            offsets: sc.offsets(),
            filter_omega: sc.reference_filter.omega,
            n: sc.n_vehicles(),
        })
    }

    pub fn dim(&self) -> usize {
        VEH * self.n + 1
    }

    pub fn vehicle(&self, x: &[f64], i: usize) -> VehicleState {
        VehicleState::from_slice(&x[VEH * i..])
    }

    pub fn observer(&self, x: &[f64], i: usize) -> ObserverState {
        ObserverState::from_slice(&x[VEH * i + OBS0..])
    }

    pub fn vehicles(&self, x: &[f64]) -> Vec<VehicleState> {
        (0..self.n).map(|i| self.vehicle(x, i)).collect()
    }

    pub fn xi(&self, x: &[f64]) -> f64 {
        x[VEH * self.n]
    }

    pub fn evaluate(&self, x: &[f64], mode: &ColavMode, previous: &[Command]) -> Result<Evaluation> {
        let states = self.vehicles(x);
        let pp = self.path.eval(self.xi(x))?;
        let g = guidance(&states, &self.offsets, &pp, mode, previous, &self.guidance);
        let w = self.filter_omega;
        let mut references = Vec::with_capacity(self.n);
        let mut outputs = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let f = &x[VEH * i + FIL0..VEH * i + FIL0 + 6];
            let cmd = &g.commands[i];
            let refs = [
                filter_reference(f[0], f[1], cmd.u_d, w),
                filter_reference(f[2], f[3], cmd.theta_d, w),
                filter_reference(f[4], f[5], f[4] + ssa(cmd.psi_d - f[4]), w),
            ];
            let obs = self.observer(x, i);
            outputs.push(autopilot(
                &self.params,
                &self.gains,
                &states[i],
                &obs,
                &refs[0],
                &refs[1],
                &refs[2],
            ));
            references.push(refs);
        }
        Ok(Evaluation {
            guidance: g,
            references,
            autopilot: outputs,
        })
    }

    pub fn derivative(
        &self,
        x: &[f64],
        mode: &ColavMode,
        previous: &[Command],
        out: &mut [f64],
    ) -> Result<()> {
        let ev = self.evaluate(x, mode, previous)?;
        for i in 0..self.n {
            let s = self.vehicle(x, i);
            let ap = &ev.autopilot[i];
            let d = state_derivative(&self.params, &s, &ap.forces, &self.current);
            let base = VEH * i;
            out[base..base + VehicleState::DIM].copy_from_slice(&d.as_array());
            ap.observer_rate.write(&mut out[base + OBS0..base + FIL0]);
            let r = &ev.references[i];
            for c in 0..3 {
                out[base + FIL0 + 2 * c] = r[c].rate;
                out[base + FIL0 + 2 * c + 1] = r[c].accel;
            }
        }
        out[VEH * self.n] = ev.guidance.xi_dot;
        Ok(())
    }

    fn distances(&self, x: &[f64]) -> Vec<f64> {
        let p: Vec<Vector3<f64>> = (0..self.n).map(|i| self.vehicle(x, i).position()).collect();
        pair_distances(&p)
    }

    fn next_mode(&self, x: &[f64], mode: &ColavMode) -> ColavMode {
        mode.updated(
            &self.distances(x),
            self.guidance.d_colav,
            self.guidance.colav_hysteresis,
        )
    }
}

/// Initial fleet state for a scenario.
pub fn initial_state(sc: &Scenario, sys: &System) -> Result<Vec<f64>> {
    let pp = sys.path.eval(sc.xi0)?;
    let rot = pp.rotation();
    let p0 = Vector3::from(sc.initial.p0);
    let mut positions: Vec<Vector3<f64>> = match &sc.initial.positions {
        Some(p) => p.iter().map(|q| Vector3::from(*q)).collect(),
        None => sys.offsets.iter().map(|o| p0 - rot * o).collect(),
    };
    if sc.initial.perturbation > 0.0 {
        use rand::RngExt;
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
        let a = sc.initial.perturbation;
        for p in positions.iter_mut() {
            for k in 0..3 {
                p[k] += rng.random_range(-a..a);
            }
        }
    }
    let theta = pp.theta_p + sc.initial.theta_offset;
    let psi = pp.psi_p + sc.initial.psi_offset;
    // At rest relative to the water: the vehicles start drifting with the
    // current, which keeps the flight angles well defined at t = 0.
    let nu_c = crate::model::current_in_body(theta, psi, &sys.current);
    let mut x = vec![0.0; sys.dim()];
    for (i, p) in positions.iter().enumerate() {
        let s = VehicleState {
            x: p[0],
            y: p[1],
            z: p[2],
            theta,
            psi,
            u: nu_c[0] + sc.initial.u0,
            v: nu_c[1],
            w: nu_c[2],
            ..Default::default()
        };
        let base = VEH * i;
        x[base..base + VehicleState::DIM].copy_from_slice(&s.as_array());
        let f = &mut x[base + FIL0..base + FIL0 + 6];
        f[0] = s.u;
        f[2] = s.theta;
        f[4] = s.psi;
    }
    x[VEH * sys.n] = sc.xi0;
    Ok(x)
}

/// A running simulation.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub sys: System,
    x: Vec<f64>,
    step: usize,
    dt: f64,
    mode: ColavMode,
    previous: Vec<Command>,
    pitch_limit: f64,
    /// Number of COLAV activation changes located so far.
    pub switches: usize,
}

impl Simulation {
    pub fn new(sc: &Scenario) -> Result<Self> {
        let sys = System::from_scenario(sc)?;
        let x = initial_state(sc, &sys)?;
        let mode = sys.next_mode(&x, &ColavMode::inactive(sys.n));
        let previous = sys
            .vehicles(&x)
            .iter()
            .map(|s| Command {
                u_d: s.u,
                theta_d: s.theta,
                psi_d: s.psi,
            })
            .collect();
        let mut sim = Self {
            sys,
            x,
            step: 0,
            dt: sc.dt,
            mode,
            previous,
            pitch_limit: std::f64::consts::FRAC_PI_2 - sc.pitch_margin,
            switches: 0,
        };
        sim.refresh_previous()?;
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn mode(&self) -> &ColavMode {
        &self.mode
    }

    fn refresh_previous(&mut self) -> Result<()> {
        let ev = self.sys.evaluate(&self.x, &self.mode, &self.previous)?;
        self.previous = ev.guidance.commands;
        Ok(())
    }

    fn rk4(&self, x: &[f64], h: f64, mode: &ColavMode) -> Result<Vec<f64>> {
        let sys = &self.sys;
        let prev = &self.previous;
        rk4_step(x, h, |s, out| sys.derivative(s, mode, prev, out))
    }

    /// Advances one `dt`, splitting the step at COLAV activation changes.
    pub fn step(&mut self) -> Result<()> {
        let mut remaining = self.dt;
        let mut splits = 0;
        loop {
            let trial = self.rk4(&self.x, remaining, &self.mode)?;
            let next = self.sys.next_mode(&trial, &self.mode);
            if next == self.mode || splits >= 16 {
                self.x = trial;
                self.mode = next;
                break;
            }
            let (mut lo, mut hi) = (0.0, remaining);
            while hi - lo > 1e-12 {
                let mid = 0.5 * (lo + hi);
                let s = self.rk4(&self.x, mid, &self.mode)?;
                if self.sys.next_mode(&s, &self.mode) != self.mode {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            self.x = self.rk4(&self.x, hi, &self.mode)?;
            self.mode = self.sys.next_mode(&self.x, &self.mode);
            self.switches += 1;
            remaining -= hi;
            splits += 1;
            if remaining <= 1e-12 {
                break;
            }
        }
        self.step += 1;
        self.check()?;
        self.refresh_previous()
    }

    fn check(&self) -> Result<()> {
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                t: self.time(),
                step: self.step,
            });
        }
        for i in 0..self.sys.n {
            let th = self.sys.vehicle(&self.x, i).theta;
            if th.abs() >= self.pitch_limit {
                return Err(Error::PitchDomain {
                    vehicle: i + 1,
                    theta: th,
                    t: self.time(),
                    step: self.step,
                });
            }
        }
        Ok(())
    }

    pub fn record(&self) -> Result<Record> {
        let ev = self.sys.evaluate(&self.x, &self.mode, &self.previous)?;
        let vehicles = (0..self.sys.n)
            .map(|i| VehicleRecord {
                state: self.sys.vehicle(&self.x, i),
                command: ev.guidance.commands[i],
                forces: ev.autopilot[i].forces,
                observer: Some(self.sys.observer(&self.x, i)),
            })
            .collect();
        Ok(Record {
            t: self.time(),
            vehicles,
            xi: self.sys.xi(&self.x),
            xi_dot: ev.guidance.xi_dot,
            pbp: ev.guidance.pbp,
            sigma2: ev.guidance.sigma2_tilde.iter().copied().collect(),
            distances: ev.guidance.distances,
            colav_active: self.mode.any(),
        })
    }
}

/// Runs a scenario to `t_end` and returns the log.
pub fn run(sc: &Scenario) -> Result<SimLog> {
    let mut sim = Simulation::new(sc)?;
    let steps = (sc.t_end / sc.dt).round() as usize;
    let mut log = SimLog::new(sim.sys.n);
    log.records.push(sim.record()?);
    for k in 1..=steps {
        sim.step()?;
        if k % sc.record_every == 0 || k == steps {
            log.records.push(sim.record()?);
        }
    }
    log.colav_switches = sim.switches;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_is_fourth_order_on_exponential() {
        let f = |x: &[f64], out: &mut [f64]| {
            out[0] = -x[0];
            Ok(())
        };
        let err = |h: f64| {
            let mut x = vec![1.0];
            let n = (1.0 / h).round() as usize;
            for _ in 0..n {
                x = rk4_step(&x, h, f).unwrap();
            }
            (x[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 16.0 * 0.1, "ratio {ratio}");
    }

    #[test]
    fn filter_has_unit_dc_gain() {
        let w = 2.0;
        let mut x = vec![0.0, 0.0];
        for _ in 0..2000 {
            x = rk4_step(&x, 0.01, |s, out| {
                let r = filter_reference(s[0], s[1], 1.5, w);
                out[0] = r.rate;
                out[1] = r.accel;
                Ok(())
            })
            .unwrap();
        }
        assert!((x[0] - 1.5).abs() < 1e-9);
    }
}
