//! Point-mass trajectory following.
//!
//! The vehicle is a point mass driven by a saturated acceleration command,
//! integrated with semi-implicit Euler. Two controllers are provided:
//!
//! * `NonlinearL1`: lateral acceleration `2|v|^2/L * sin(eta)` toward a
//!   reference point one lookahead distance ahead of the nearest path point,
//!   where `L` is the distance to that point and `eta` the angle between the
//!   velocity and the line of sight to it, plus a proportional speed hold.
//! * `PidBaseline`: per-axis PID on the position error to a time-indexed
//!   reference, with the derivative acting on the velocity error (velocity
//!   feed-forward).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{Neu, PoseSample};

pub const DEFAULT_MAX_ACCEL_MPS2: f64 = 10.0;
pub const DEFAULT_TIMESTEP_S: f64 = 0.02;

/// Allowed distance between the initial position and the path start.
pub const MAX_START_OFFSET_M: f64 = 5.0;

/// Half-width of the arc window searched for the nearest path point.
const NEAREST_WINDOW_M: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Neu,
    pub velocity: Neu,
    pub max_accel_mps2: f64,
}

impl VehicleState {
    /// At the first path sample, moving along the first segment at the path
    /// speed.
    pub fn at_path_start(path: &[PoseSample], max_accel_mps2: f64) -> Result<Self> {
        let line = Polyline::new(path)?;
        Ok(Self {
            position: line.points[0],
            velocity: line.tangent_at(0.0) * line.speed_mps,
            max_accel_mps2,
        })
    }

    pub fn offset(mut self, delta: Neu) -> Self {
        self.position += delta;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Controller {
    NonlinearL1 {
        lookahead_m: f64,
        /// Speed-hold gain, 1/s.
        #[serde(default = "default_speed_gain")]
        speed_gain: f64,
    },
    PidBaseline {
        kp: f64,
        #[serde(default)]
        ki: f64,
        kd: f64,
    },
}

fn default_speed_gain() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowerConfig {
    pub controller: Controller,
    #[serde(default = "default_timestep")]
    pub timestep_s: f64,
    /// Standard deviation of Gaussian noise on the position fed to the
    /// controller. Zero disables it.
    #[serde(default)]
    pub position_noise_m: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

fn default_timestep() -> f64 {
    DEFAULT_TIMESTEP_S
}

impl FollowerConfig {
    pub fn l1(lookahead_m: f64) -> Self {
        Self::with(Controller::NonlinearL1 {
            lookahead_m,
            speed_gain: default_speed_gain(),
        })
    }

    pub fn pid(kp: f64, ki: f64, kd: f64) -> Self {
        Self::with(Controller::PidBaseline { kp, ki, kd })
    }

    fn with(controller: Controller) -> Self {
        Self {
            controller,
            timestep_s: DEFAULT_TIMESTEP_S,
            position_noise_m: 0.0,
            noise_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if !(self.timestep_s > 0.0 && self.timestep_s <= 0.1) {
            return bad(format!(
                "timestep must be in (0, 0.1] s, got {}",
                self.timestep_s
            ));
        }
        if !(self.position_noise_m.is_finite() && self.position_noise_m >= 0.0) {
            return bad(format!(
                "position noise must be non-negative, got {}",
                self.position_noise_m
            ));
        }
        match self.controller {
            Controller::NonlinearL1 {
                lookahead_m,
                speed_gain,
            } => {
                if !(lookahead_m.is_finite() && lookahead_m > 0.0) {
                    return bad(format!("lookahead must be positive, got {lookahead_m}"));
                }
                if !(speed_gain.is_finite() && speed_gain >= 0.0) {
                    return bad(format!("speed gain must be non-negative, got {speed_gain}"));
                }
            }
            Controller::PidBaseline { kp, ki, kd } => {
                if [kp, ki, kd].iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
                    return bad(format!(
                        "PID gains must be non-negative, got ({kp}, {ki}, {kd})"
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t_s: f64,
    pub position: Neu,
    pub velocity: Neu,
    /// Saturated acceleration command applied over the following step.
    pub accel_cmd: Neu,
    pub cross_track_m: f64,
}

pub fn rms_cross_track(trace: &[TraceStep]) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    (trace.iter().map(|s| s.cross_track_m.powi(2)).sum::<f64>() / trace.len() as f64).sqrt()
}

/// Path as a polyline with cumulative arc length.
struct Polyline {
    points: Vec<Neu>,
    times: Vec<f64>,
    cum: Vec<f64>,
    speed_mps: f64,
    divergence_limit_m: f64,
}

struct Nearest {
    s: f64,
    distance: f64,
}

impl Polyline {
    fn new(path: &[PoseSample]) -> Result<Self> {
        if path.len() < 2 {
            return Err(Error::Input(format!(
                "path needs at least 2 samples, got {}",
                path.len()
            )));
        }
        let points: Vec<Neu> = path.iter().map(PoseSample::position).collect();
        let times: Vec<f64> = path.iter().map(|p| p.t_s).collect();
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite()))
            || times.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::Input(
                "path samples must be finite with strictly increasing times".into(),
            ));
        }
        let mut cum = Vec::with_capacity(points.len());
        cum.push(0.0);
        for w in points.windows(2) {
            cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
        }
        let length = *cum.last().unwrap();
        if length <= 0.0 {
            return Err(Error::Input("path has zero length".into()));
        }
        let centroid = points.iter().sum::<Neu>() / points.len() as f64;
        let spread = points
            .iter()
            .map(|p| (p - centroid).norm())
            .fold(0.0, f64::max);
        Ok(Self {
            speed_mps: length / (times[times.len() - 1] - times[0]),
            divergence_limit_m: 10.0 * spread,
            points,
            times,
            cum,
        })
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    fn segment_at(&self, s: f64) -> usize {
        let idx = self.cum.partition_point(|&c| c <= s);
        idx.saturating_sub(1).min(self.points.len() - 2)
    }

    fn tangent_at(&self, s: f64) -> Neu {
        let seg = self.segment_at(s);
        // Skip zero-length segments.
        (seg..self.points.len() - 1)
            .chain((0..seg).rev())
            .map(|k| self.points[k + 1] - self.points[k])
            .find(|d| d.norm() > 0.0)
            .map(|d| d.normalize())
            .expect("path has positive length")
    }

    /// Point at arc length `s`, extrapolated along the end tangents outside
    /// `[0, length]`.
    fn point_at(&self, s: f64) -> Neu {
        if s <= 0.0 {
            return self.points[0] + self.tangent_at(0.0) * s;
        }
        if s >= self.length() {
            let last = self.points[self.points.len() - 1];
            return last + self.tangent_at(self.length()) * (s - self.length());
        }
        let seg = self.segment_at(s);
        let len = self.cum[seg + 1] - self.cum[seg];
        let f = if len > 0.0 {
            (s - self.cum[seg]) / len
        } else {
            0.0
        };
        self.points[seg] + (self.points[seg + 1] - self.points[seg]) * f
    }

    /// Reference position and velocity at elapsed time `t` (clamped to the
    /// path's time span).
    fn reference_at(&self, t: f64) -> (Neu, Neu) {
        let abs = (self.times[0] + t).clamp(self.times[0], self.times[self.times.len() - 1]);
        let k = self
            .times
            .partition_point(|&x| x <= abs)
            .saturating_sub(1)
            .min(self.points.len() - 2);
        let dt = self.times[k + 1] - self.times[k];
        let f = (abs - self.times[k]) / dt;
        let delta = self.points[k + 1] - self.points[k];
        (self.points[k] + delta * f, delta / dt)
    }

    fn project(&self, seg: usize, x: &Neu) -> (f64, f64) {
        let a = self.points[seg];
        let d = self.points[seg + 1] - a;
        let len2 = d.norm_squared();
        let f = if len2 > 0.0 {
            ((x - a).dot(&d) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let len = self.cum[seg + 1] - self.cum[seg];
        (self.cum[seg] + f * len, (a + d * f - x).norm())
    }

    /// Nearest point among segments whose arc range intersects
    /// `[lo_s, hi_s]`.
    fn nearest_in(&self, x: &Neu, lo_s: f64, hi_s: f64) -> Nearest {
        let first = self.segment_at(lo_s.max(0.0));
        let last = self.segment_at(hi_s.min(self.length()));
        let mut best = Nearest {
            s: 0.0,
            distance: f64::INFINITY,
        };
        for seg in first..=last {
            let (s, distance) = self.project(seg, x);
            if distance < best.distance {
                best = Nearest { s, distance };
            }
        }
        best
    }
}

/// Simulates the follower until the path duration has elapsed or the
/// vehicle passes the path end. The returned trace has one step per
/// timestep, starting at `t = 0`.
pub fn follow_trajectory(
    path: &[PoseSample],
    cfg: &FollowerConfig,
    initial: &VehicleState,
) -> Result<Vec<TraceStep>> {
    cfg.validate()?;
    if !(initial.max_accel_mps2.is_finite() && initial.max_accel_mps2 > 0.0) {
        return Err(Error::Parameter(format!(
            "max acceleration must be positive, got {}",
            initial.max_accel_mps2
        )));
    }
    let line = Polyline::new(path)?;
    let start_offset = (initial.position - line.points[0]).norm();
    if !(start_offset <= MAX_START_OFFSET_M) {
        return Err(Error::Input(format!(
            "initial position is {start_offset:.3} m from the path start (limit {MAX_START_OFFSET_M} m)"
        )));
    }

    let dt = cfg.timestep_s;
    let v_ref = line.speed_mps;
    let max_accel = initial.max_accel_mps2;
    let steps = (line.duration() / dt).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);

    let mut x = initial.position;
    let mut v = initial.velocity;
    let mut integral = Neu::zeros();
    let mut near = line.nearest_in(&x, 0.0, MAX_START_OFFSET_M + NEAREST_WINDOW_M);
    let mut trace = Vec::with_capacity(steps + 1);

    for k in 0..=steps {
        let t = k as f64 * dt;
        if k > 0 {
            near = line.nearest_in(&x, near.s - NEAREST_WINDOW_M, near.s + NEAREST_WINDOW_M);
        }
        if near.distance > line.divergence_limit_m {
            return Err(Error::Divergence {
                time_s: t,
                error_m: near.distance,
                limit_m: line.divergence_limit_m,
                partial: trace,
            });
        }

        let measured = if cfg.position_noise_m > 0.0 {
            x + Neu::from_fn(|_, _| {
                cfg.position_noise_m
                    * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
        } else {
            x
        };

        let mut a = match cfg.controller {
            Controller::NonlinearL1 {
                lookahead_m,
                speed_gain,
            } => {
                let speed = v.norm();
                let target = line.point_at(near.s + lookahead_m);
                let los = target - measured;
                let dist = los.norm();
                if speed > 1e-9 && dist > 1e-9 {
                    let vh = v / speed;
                    let dh = los / dist;
                    let lateral = (dh - vh * dh.dot(&vh)) * (2.0 * speed * speed / dist);
                    lateral + vh * (speed_gain * (v_ref - speed))
                } else {
                    // Stationary or on the target point: accelerate along the path.
                    line.tangent_at(near.s) * (speed_gain.max(1.0) * v_ref)
                }
            }
            Controller::PidBaseline { kp, ki, kd } => {
                let (r, vr) = line.reference_at(t);
                let e = r - measured;
                integral += e * dt;
                e * kp + integral * ki + (vr - v) * kd
            }
        };
        let norm = a.norm();
        if norm > max_accel {
            a *= max_accel / norm;
        }

        trace.push(TraceStep {
            t_s: t,
            position: x,
            velocity: v,
            accel_cmd: a,
            cross_track_m: near.distance,
        });
        if k == steps || (k > 0 && near.s >= line.length()) {
            break;
        }
        v += a * dt;
        x += v * dt;
    }
    Ok(trace)
}

/// Candidate grids for `tune_follower`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TuningSpace {
    NonlinearL1 {
        lookahead_m: Vec<f64>,
        #[serde(default = "default_speed_gain")]
        speed_gain: f64,
    },
    PidBaseline {
        kp: Vec<f64>,
        #[serde(default = "zero_grid")]
        ki: Vec<f64>,
        kd: Vec<f64>,
    },
}

fn zero_grid() -> Vec<f64> {
    vec![0.0]
}

impl TuningSpace {
    pub fn default_l1() -> Self {
        TuningSpace::NonlinearL1 {
            lookahead_m: vec![0.5, 1.0, 2.0, 3.0, 5.0, 8.0],
            speed_gain: default_speed_gain(),
        }
    }

    pub fn default_pid() -> Self {
        TuningSpace::PidBaseline {
            kp: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            ki: zero_grid(),
            kd: vec![0.5, 1.0, 2.0, 3.0],
        }
    }

    /// Candidate configs in a fixed order.
    pub fn candidates(&self, timestep_s: f64) -> Result<Vec<FollowerConfig>> {
        let controllers: Vec<Controller> = match self {
            TuningSpace::NonlinearL1 {
                lookahead_m,
                speed_gain,
            } => lookahead_m
                .iter()
                .map(|&l| Controller::NonlinearL1 {
                    lookahead_m: l,
                    speed_gain: *speed_gain,
                })
                .collect(),
            TuningSpace::PidBaseline { kp, ki, kd } => kp
                .iter()
                .flat_map(|&p| {
                    ki.iter().flat_map(move |&i| {
                        kd.iter().map(move |&d| Controller::PidBaseline {
                            kp: p,
                            ki: i,
                            kd: d,
                        })
                    })
                })
                .collect(),
        };
        if controllers.is_empty() {
            return Err(Error::Parameter("tuning space has no candidates".into()));
        }
        let configs: Vec<FollowerConfig> = controllers
            .into_iter()
            .map(|c| FollowerConfig {
                timestep_s,
                ..FollowerConfig::with(c)
            })
            .collect();
        for c in &configs {
            c.validate()?;
        }
        Ok(configs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningOutcome {
    pub config: FollowerConfig,
    pub rms_cross_track_m: f64,
    /// Every candidate with its RMS error, or the failure message.
    pub evaluated: Vec<(FollowerConfig, std::result::Result<f64, String>)>,
}

/// Grid search for the candidate with the smallest RMS cross-track error
/// among those that do not diverge. Ties keep the earlier candidate.
pub fn tune_follower(
    path: &[PoseSample],
    space: &TuningSpace,
    initial: &VehicleState,
    timestep_s: f64,
) -> Result<TuningOutcome> {
    let candidates = space.candidates(timestep_s)?;
    let runs: Vec<(FollowerConfig, Result<f64>)> = candidates
        .par_iter()
        .map(|cfg| {
            let rms = follow_trajectory(path, cfg, initial).map(|trace| rms_cross_track(&trace));
            (*cfg, rms)
        })
        .collect();
    let mut evaluated = Vec::with_capacity(runs.len());
    for (cfg, run) in runs {
        match run {
            Ok(rms) => evaluated.push((cfg, Ok(rms))),
            Err(e @ Error::Divergence { .. }) => evaluated.push((cfg, Err(e.to_string()))),
            Err(e) => return Err(e),
        }
    }
    let best = evaluated
        .iter()
        .filter_map(|(cfg, r)| r.as_ref().ok().map(|rms| (*cfg, *rms)))
        .fold(None::<(FollowerConfig, f64)>, |best, cand| match best {
            Some(b) if b.1 <= cand.1 => Some(b),
            _ => Some(cand),
        });
    match best {
        Some((config, rms)) => Ok(TuningOutcome {
            config,
            rms_cross_track_m: rms,
            evaluated,
        }),
        None => {
            let diagnostics: Vec<String> = evaluated
                .iter()
                .map(|(cfg, r)| format!("{:?}: {}", cfg.controller, r.as_ref().unwrap_err()))
                .collect();
            Err(Error::Tuning(format!(
                "all {} candidates diverged; {}",
                evaluated.len(),
                diagnostics.join("; ")
            )))
        }
    }
}

pub const TRACE_CSV_HEADER: &str = "t_s,north_m,east_m,up_m,vn,ve,vu,cross_track_m";

pub fn write_trace_csv(path: &Path, trace: &[TraceStep]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "{TRACE_CSV_HEADER}")?;
        for s in trace {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.t_s,
                s.position.x,
                s.position.y,
                s.position.z,
                s.velocity.x,
                s.velocity.y,
                s.velocity.z,
                s.cross_track_m
            )?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// One row of the trace CSV (the command column is not persisted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t_s: f64,
    pub north_m: f64,
    pub east_m: f64,
    pub up_m: f64,
    pub vn: f64,
    pub ve: f64,
    pub vu: f64,
    pub cross_track_m: f64,
}

impl From<&TraceStep> for TraceRow {
    fn from(s: &TraceStep) -> Self {
        Self {
            t_s: s.t_s,
            north_m: s.position.x,
            east_m: s.position.y,
            up_m: s.position.z,
            vn: s.velocity.x,
            ve: s.velocity.y,
            vu: s.velocity.z,
            cross_track_m: s.cross_track_m,
        }
    }
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let headers = reader.headers().map_err(|e| Error::format(path, e))?;
    if headers.iter().collect::<Vec<_>>().join(",") != TRACE_CSV_HEADER {
        return Err(Error::format(
            path,
            format!("expected header `{TRACE_CSV_HEADER}`"),
        ));
    }
    reader
        .deserialize::<TraceRow>()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::format(path, format!("row {}: {e}", i + 1))))
        .collect()
}
