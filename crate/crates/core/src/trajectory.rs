//! Spherical measurement trajectory around a transmitter at the sphere
//! centre, in a local North-East-Up frame.
//!
//! With `u = (U - Y) / R` the path is
//! `N = R*sqrt(1-u^2)*cos(n*pi*u)`, `E = R*sqrt(1-u^2)*sin(n*pi*u)` and the
//! time law `U(t) = (v/R)*t + Y - R`. That time law climbs at `v/R`, so
//! the constant-speed sampler re-parameterizes the same curve by arc length.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Neu = Vector3<f64>;

/// Default pose output rate, equal to the 10 Hz measurement rate.
pub const DEFAULT_POSE_RATE_HZ: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereTrajectoryParams {
    pub radius_m: f64,
    /// Up coordinate of the sphere centre.
    pub center_altitude_m: f64,
    pub turns: u32,
    pub path_velocity_mps: f64,
    /// Pose output rate.
    pub sample_rate_hz: f64,
}

impl Default for SphereTrajectoryParams {
    fn default() -> Self {
        Self {
            radius_m: 20.0,
            center_altitude_m: 65.0,
            turns: 8,
            path_velocity_mps: 1.5,
            sample_rate_hz: DEFAULT_POSE_RATE_HZ,
        }
    }
}

impl SphereTrajectoryParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.radius_m) {
            return Err(Error::Parameter(format!(
                "radius must be positive, got {}",
                self.radius_m
            )));
        }
        if !positive(self.path_velocity_mps) {
            return Err(Error::Parameter(format!(
                "path velocity must be positive, got {}",
                self.path_velocity_mps
            )));
        }
        if self.turns == 0 {
            return Err(Error::Parameter("turns must be at least 1".into()));
        }
        if !positive(self.sample_rate_hz) {
            return Err(Error::Parameter(format!(
                "pose sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if !(self.center_altitude_m.is_finite() && self.floor_altitude_m() > 0.0) {
            return Err(Error::Parameter(format!(
                "floor altitude {} m must be above ground",
                self.floor_altitude_m()
            )));
        }
        Ok(())
    }

    pub fn floor_altitude_m(&self) -> f64 {
        self.center_altitude_m - self.radius_m
    }

    pub fn ceiling_altitude_m(&self) -> f64 {
        self.center_altitude_m + self.radius_m
    }

    pub fn center(&self) -> Neu {
        Neu::new(0.0, 0.0, self.center_altitude_m)
    }

    /// Time for the parametric time law to climb from floor to ceiling.
    pub fn climb_duration_s(&self) -> f64 {
        2.0 * self.radius_m * self.radius_m / self.path_velocity_mps
    }

    /// Point on the sphere path for normalized height `u` in `[-1, 1]`.
    fn point_at_u(&self, u: f64) -> Neu {
        let horizontal = self.radius_m * (1.0 - u * u).max(0.0).sqrt();
        let azimuth = self.turns as f64 * PI * u;
        Neu::new(
            horizontal * azimuth.cos(),
            horizontal * azimuth.sin(),
            self.center_altitude_m + self.radius_m * u,
        )
    }

    /// Point for polar angle `theta` measured from the bottom pole
    /// (`u = -cos(theta)`).
    fn point_at_polar(&self, theta: f64) -> Neu {
        let u = -theta.cos();
        let azimuth = self.turns as f64 * PI * u;
        let horizontal = self.radius_m * theta.sin();
        Neu::new(
            horizontal * azimuth.cos(),
            horizontal * azimuth.sin(),
            self.center_altitude_m + self.radius_m * u,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub t_s: f64,
    pub north_m: f64,
    pub east_m: f64,
    pub up_m: f64,
    /// Yaw, 0 = north, positive toward east, in `[-pi, pi)`.
    pub heading_rad: f64,
}

impl PoseSample {
    pub fn new(t_s: f64, position: Neu, heading_rad: f64) -> Self {
        Self {
            t_s,
            north_m: position.x,
            east_m: position.y,
            up_m: position.z,
            heading_rad,
        }
    }

    pub fn position(&self) -> Neu {
        Neu::new(self.north_m, self.east_m, self.up_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heading {
    pub yaw_rad: f64,
    /// Set when the two positions coincide horizontally and the yaw was
    /// carried over (or defaulted to 0).
    pub degenerate: bool,
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped >= PI {
        -PI
    } else {
        wrapped
    }
}

/// Horizontal bearing from the receiver to the transmitter. At horizontally
/// coincident positions the previous yaw is held, or 0 if there is none.
pub fn assign_heading(rx: Neu, tx: Neu, previous: Option<f64>) -> Heading {
    let north = tx.x - rx.x;
    let east = tx.y - rx.y;
    let scale = rx.norm().max(tx.norm()).max(1.0);
    if north.hypot(east) <= 1e-12 * scale {
        return Heading {
            yaw_rad: previous.unwrap_or(0.0),
            degenerate: true,
        };
    }
    Heading {
        yaw_rad: wrap_angle(east.atan2(north)),
        degenerate: false,
    }
}

/// Constant-climb sampler: position at time `t` under the constant-climb time
/// law, heading toward the sphere centre.
pub fn sphere_point_parametric(t: f64, params: &SphereTrajectoryParams) -> Result<PoseSample> {
    params.validate()?;
    let duration = params.climb_duration_s();
    if !(t.is_finite() && (0.0..=duration).contains(&t)) {
        return Err(Error::Domain(format!(
            "t = {t} s is outside [0, {duration}] s"
        )));
    }
    // Same as (v/R)t + Y - R, written so both endpoints are exact.
    let u = 2.0 * (t / duration) - 1.0;
    let position = params.point_at_u(u);
    let heading = assign_heading(position, params.center(), None);
    Ok(PoseSample::new(t, position, heading.yaw_rad))
}

/// Samples the constant-climb time law at `params.sample_rate_hz`, including
/// the final pose at the ceiling.
pub fn sphere_path_parametric(params: &SphereTrajectoryParams) -> Result<Vec<PoseSample>> {
    params.validate()?;
    let duration = params.climb_duration_s();
    let times = sample_times(duration, params.sample_rate_hz);
    let mut previous = None;
    Ok(times
        .into_iter()
        .map(|t| {
            let u = 2.0 * (t / duration) - 1.0;
            let position = params.point_at_u(u);
            let heading = assign_heading(position, params.center(), previous);
            previous = Some(heading.yaw_rad);
            PoseSample::new(t, position, heading.yaw_rad)
        })
        .collect())
}

/// Sample instants `k / rate` strictly before `end`, followed by `end`.
fn sample_times(end: f64, rate_hz: f64) -> Vec<f64> {
    let mut times: Vec<f64> = (0..)
        .map(|k| k as f64 / rate_hz)
        .take_while(|&t| t < end)
        .collect();
    times.push(end);
    times
}

const GAUSS_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GAUSS_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

/// Arc-length table for the sphere path, indexed by polar angle.
///
/// `ds/dtheta = R*sqrt(1 + (n*pi)^2 * sin^4(theta))` is smooth on
/// `[0, pi]`, so panel-wise Gauss-Legendre quadrature is accurate to
/// machine precision with a modest panel count.
#[derive(Debug, Clone)]
pub struct SphereArcLength {
    params: SphereTrajectoryParams,
    panel_width: f64,
    cumulative: Vec<f64>,
}

impl SphereArcLength {
    pub fn new(params: &SphereTrajectoryParams) -> Result<Self> {
        params.validate()?;
        let panels = 512 * params.turns.max(1) as usize;
        let panel_width = PI / panels as f64;
        let mut cumulative = Vec::with_capacity(panels + 1);
        cumulative.push(0.0);
        let mut total = 0.0;
        for j in 0..panels {
            let a = j as f64 * panel_width;
            total += Self::integrate(params, a, a + panel_width);
            cumulative.push(total);
        }
        Ok(Self {
            params: *params,
            panel_width,
            cumulative,
        })
    }

    fn speed_factor(params: &SphereTrajectoryParams, theta: f64) -> f64 {
        let k = params.turns as f64 * PI;
        let s2 = theta.sin().powi(2);
        params.radius_m * (1.0 + k * k * s2 * s2).sqrt()
    }

    fn integrate(params: &SphereTrajectoryParams, a: f64, b: f64) -> f64 {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        GAUSS_NODES
            .iter()
            .zip(GAUSS_WEIGHTS)
            .map(|(x, w)| w * Self::speed_factor(params, mid + half * x))
            .sum::<f64>()
            * half
    }

    pub fn total_length_m(&self) -> f64 {
        *self.cumulative.last().expect("non-empty table")
    }

    /// Arc length from the bottom pole to polar angle `theta`.
    pub fn length_at(&self, theta: f64) -> f64 {
        let theta = theta.clamp(0.0, PI);
        let j = ((theta / self.panel_width) as usize).min(self.cumulative.len() - 2);
        let a = j as f64 * self.panel_width;
        self.cumulative[j] + Self::integrate(&self.params, a, theta)
    }

    /// Polar angle at which the accumulated arc length equals `s`.
    pub fn polar_at(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= self.total_length_m() {
            return PI;
        }
        let j = self.cumulative.partition_point(|&c| c <= s) - 1;
        let lo = j as f64 * self.panel_width;
        let hi = lo + self.panel_width;
        let mut theta = lo
            + self.panel_width * (s - self.cumulative[j])
                / (self.cumulative[j + 1] - self.cumulative[j]);
        for _ in 0..50 {
            let residual = self.length_at(theta) - s;
            let step = residual / Self::speed_factor(&self.params, theta);
            theta = (theta - step).clamp(lo, hi);
            if step.abs() < 1e-15 {
                break;
            }
        }
        theta
    }

    pub fn point_at_length(&self, s: f64) -> Neu {
        let theta = self.polar_at(s);
        self.params.point_at_polar(theta)
    }
}

/// Constant-speed sampler: the same geometric path traversed bottom-up at
/// `speed_mps`, emitted at `params.sample_rate_hz`. The final pose sits
/// exactly at the ceiling pole.
pub fn sphere_path_arclength(
    params: &SphereTrajectoryParams,
    speed_mps: f64,
) -> Result<Vec<PoseSample>> {
    if !(speed_mps.is_finite() && speed_mps > 0.0) {
        return Err(Error::Parameter(format!(
            "speed must be positive, got {speed_mps}"
        )));
    }
    let arc = SphereArcLength::new(params)?;
    let duration = arc.total_length_m() / speed_mps;
    let times = sample_times(duration, params.sample_rate_hz);
    let last = times.len() - 1;
    let mut previous = None;
    Ok(times
        .into_iter()
        .enumerate()
        .map(|(k, t)| {
            let position = if k == last {
                params.point_at_polar(PI)
            } else {
                arc.point_at_length(speed_mps * t)
            };
            let heading = assign_heading(position, params.center(), previous);
            previous = Some(heading.yaw_rad);
            PoseSample::new(t, position, heading.yaw_rad)
        })
        .collect())
}

/// `N^2 + E^2 + (U - Y)^2 - R^2` for a pose.
pub fn sphere_residual(pose: &PoseSample, params: &SphereTrajectoryParams) -> f64 {
    (pose.position() - params.center()).norm_squared() - params.radius_m.powi(2)
}

pub const POSE_CSV_HEADER: &str = "t_s,north_m,east_m,up_m,heading_rad";

pub fn write_pose_csv(path: &Path, poses: &[PoseSample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "{POSE_CSV_HEADER}")?;
        for p in poses {
            writeln!(
                out,
                "{},{},{},{},{}",
                p.t_s, p.north_m, p.east_m, p.up_m, p.heading_rad
            )?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_pose_csv(path: &Path) -> Result<Vec<PoseSample>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let headers = reader.headers().map_err(|e| Error::format(path, e))?;
    if headers.iter().collect::<Vec<_>>().join(",") != POSE_CSV_HEADER {
        return Err(Error::format(
            path,
            format!("expected header `{POSE_CSV_HEADER}`"),
        ));
    }
    reader
        .deserialize::<PoseSample>()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::format(path, format!("row {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1() -> SphereTrajectoryParams {
        SphereTrajectoryParams::default()
    }

    #[test]
    fn parametric_start_equator_and_ceiling() {
        let p = table1();
        let start = sphere_point_parametric(0.0, &p).unwrap();
        assert_eq!(start.position(), Neu::new(0.0, 0.0, 45.0));

        let mid = sphere_point_parametric(p.climb_duration_s() / 2.0, &p).unwrap();
        assert!((mid.position() - Neu::new(20.0, 0.0, 65.0)).norm() < 1e-12);

        let end = sphere_point_parametric(2.0 * 400.0 / 1.5, &p).unwrap();
        assert_eq!(end.up_m, 85.0);
        assert!(end.north_m.hypot(end.east_m) < 1e-12);
    }

    #[test]
    fn parametric_rejects_times_outside_domain() {
        let p = table1();
        assert!(matches!(
            sphere_point_parametric(-0.1, &p),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            sphere_point_parametric(p.climb_duration_s() + 1e-6, &p),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn parametric_climb_rate_is_v_over_r() {
        let p = table1();
        let path = sphere_path_parametric(&p).unwrap();
        for w in path.windows(2) {
            let rate = (w[1].up_m - w[0].up_m) / (w[1].t_s - w[0].t_s);
            assert!((rate - 0.075).abs() < 1e-9, "rate {rate}");
        }
    }

    #[test]
    fn heading_examples() {
        let tx = Neu::new(0.0, 0.0, 65.0);
        let north = assign_heading(Neu::new(-20.0, 0.0, 65.0), tx, None);
        assert_eq!(north.yaw_rad, 0.0);
        assert!(!north.degenerate);
        let east = assign_heading(Neu::new(0.0, -20.0, 65.0), tx, None);
        assert!((east.yaw_rad - PI / 2.0).abs() < 1e-15);
        let pole = assign_heading(Neu::new(0.0, 0.0, 45.0), tx, None);
        assert!(pole.degenerate);
        assert_eq!(pole.yaw_rad, 0.0);
        let held = assign_heading(Neu::new(0.0, 0.0, 85.0), tx, Some(1.25));
        assert!(held.degenerate);
        assert_eq!(held.yaw_rad, 1.25);
    }

    #[test]
    fn heading_south_wraps_to_minus_pi() {
        let h = assign_heading(Neu::new(10.0, 0.0, 0.0), Neu::zeros(), None);
        assert_eq!(h.yaw_rad, -PI);
    }

    #[test]
    fn arc_length_table_matches_fine_trapezoid() {
        let p = table1();
        let arc = SphereArcLength::new(&p).unwrap();
        let steps = 2_000_000;
        let h = PI / steps as f64;
        let mut total = 0.0;
        let mut prev = p.point_at_polar(0.0);
        for k in 1..=steps {
            let next = p.point_at_polar(k as f64 * h);
            total += (next - prev).norm();
            prev = next;
        }
        assert!(
            (arc.total_length_m() - total).abs() < 1e-4,
            "{} vs {total}",
            arc.total_length_m()
        );
        for s in [0.0, 1.0, 123.4, 400.0, arc.total_length_m() - 1e-3] {
            assert!((arc.length_at(arc.polar_at(s)) - s).abs() < 1e-9);
        }
    }

    #[test]
    fn pose_csv_round_trip_is_exact() {
        let p = SphereTrajectoryParams {
            turns: 2,
            ..table1()
        };
        let poses = sphere_path_arclength(&p, 1.5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.csv");
        write_pose_csv(&path, &poses).unwrap();
        assert_eq!(read_pose_csv(&path).unwrap(), poses);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t_s,north_m,east_m,up_m,heading_rad\n"));
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = table1();
        p.center_altitude_m = 15.0;
        assert!(p.validate().is_err());
        let mut p = table1();
        p.turns = 0;
        assert!(p.validate().is_err());
        assert!(sphere_path_arclength(&table1(), 0.0).is_err());
    }
}
