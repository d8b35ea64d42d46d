//! Simulation log and its CSV form.
//!
//! Column order is fixed: `t`, sixteen columns per vehicle, path variables,
//! formation errors, pairwise distances, `colav_active`.

use nalgebra::Vector3;
use std::io::{Read, Write};

use crate::autopilot::ObserverState;
use crate::error::{Error, Result};
use crate::guidance::{pairs, Command};
use crate::model::{Forces, VehicleState};

pub const VEHICLE_FIELDS: [&str; 16] = [
    "x", "y", "z", "theta", "psi", "u", "v", "w", "q", "r", "u_d", "theta_d", "psi_d", "f_u",
    "t_q", "t_r",
];

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRecord {
    pub state: VehicleState,
    pub command: Command,
    pub forces: Forces,
    /// Not part of the CSV; `None` for logs read back from disk.
    pub observer: Option<ObserverState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    pub vehicles: Vec<VehicleRecord>,
    pub xi: f64,
    pub xi_dot: f64,
    pub pbp: Vector3<f64>,
    pub sigma2: Vec<f64>,
    pub distances: Vec<f64>,
    pub colav_active: bool,
}

impl Record {
    pub fn sigma2_norm(&self) -> f64 {
        self.sigma2.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn min_distance(&self) -> f64 {
        self.distances.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimLog {
    pub n: usize,
    pub records: Vec<Record>,
    /// COLAV activation changes located during the run (0 for logs read
    /// from CSV).
    pub colav_switches: usize,
}

pub fn header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for i in 1..=n {
        for f in VEHICLE_FIELDS {
            h.push(format!("{f}_{i}"));
        }
    }
    for f in ["xi", "xi_dot", "xbp", "ybp", "zbp"] {
        h.push(f.to_string());
    }
    for i in 1..n {
        for a in ["x", "y", "z"] {
            h.push(format!("sigma2_{i}_{a}"));
        }
    }
    for (i, j) in pairs(n) {
        h.push(format!("d_{}_{}", i + 1, j + 1));
    }
    h.push("colav_active".to_string());
    h
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

impl SimLog {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            records: Vec::new(),
            colav_switches: 0,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    /// Numeric row in CSV column order; `colav_active` is 0 or 1.
    pub fn row_values(r: &Record) -> Vec<f64> {
        let mut row = Vec::with_capacity(header(r.vehicles.len()).len());
        row.push(r.t);
        for v in &r.vehicles {
            let s = &v.state;
            row.extend_from_slice(&s.as_array());
            row.extend_from_slice(&[
                v.command.u_d,
                v.command.theta_d,
                v.command.psi_d,
                v.forces.f_u,
                v.forces.t_q,
                v.forces.t_r,
            ]);
        }
        row.extend_from_slice(&[r.xi, r.xi_dot, r.pbp[0], r.pbp[1], r.pbp[2]]);
        row.extend_from_slice(&r.sigma2);
        row.extend_from_slice(&r.distances);
        row.push(if r.colav_active { 1.0 } else { 0.0 });
        row
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(header(self.n))?;
        for r in &self.records {
            let vals = Self::row_values(r);
            let last = vals.len() - 1;
            let row = vals.iter().enumerate().map(|(k, &x)| {
                if k == last {
                    if r.colav_active { "1".to_string() } else { "0".to_string() }
                } else {
                    fmt(x)
                }
            });
            wr.write_record(row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let head: Vec<String> = rd.headers()?.iter().map(|s| s.to_string()).collect();
        let n = head
            .iter()
            .filter(|h| h.starts_with("x_") && h[2..].parse::<usize>().is_ok())
            .count();
        if n == 0 || head != header(n) {
            return Err(Error::LogFormat("unexpected CSV header".into()));
        }
        let np = n * (n - 1) / 2;
        let mut log = SimLog::new(n);
        for rec in rd.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::LogFormat(format!("bad number `{s}`: {e}")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != head.len() {
                return Err(Error::LogFormat("row length differs from header".into()));
            }
            let mut k = 1;
            let mut vehicles = Vec::with_capacity(n);
            for _ in 0..n {
                let c = &vals[k..k + 16];
                vehicles.push(VehicleRecord {
                    state: VehicleState::from_slice(&c[..10]),
                    command: Command {
                        u_d: c[10],
                        theta_d: c[11],
                        psi_d: c[12],
                    },
                    forces: Forces {
                        f_u: c[13],
                        t_q: c[14],
                        t_r: c[15],
                    },
                    observer: None,
                });
                k += 16;
            }
            let xi = vals[k];
            let xi_dot = vals[k + 1];
            let pbp = Vector3::new(vals[k + 2], vals[k + 3], vals[k + 4]);
            k += 5;
            let sigma2 = vals[k..k + 3 * (n - 1)].to_vec();
            k += 3 * (n - 1);
            let distances = vals[k..k + np].to_vec();
            k += np;
            log.records.push(Record {
                t: vals[0],
                vehicles,
                xi,
                xi_dot,
                pbp,
                sigma2,
                distances,
                colav_active: vals[k] != 0.0,
            });
        }
        Ok(log)
    }

    pub fn read_csv_file(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let h = header(3);
        assert_eq!(h.len(), 1 + 48 + 5 + 6 + 3 + 1);
        assert_eq!(h[1], "x_1");
        assert_eq!(h[17], "x_2");
        assert_eq!(h[49], "xi");
        assert_eq!(h[54], "sigma2_1_x");
        assert_eq!(h[60], "d_1_2");
        assert_eq!(h.last().unwrap(), "colav_active");
    }
}
