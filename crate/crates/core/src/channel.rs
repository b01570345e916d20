//! Geometric air-to-air multipath channel.
//!
//! A realization is a discrete tap set `h(tau) = sum_i a_i delta(tau - tau_i)`
//! built from a line-of-sight ray, an optional flat-ground specular
//! reflection (image method), and optional static point reflectors. Each ray
//! is weighted by the body-frame antenna gain at both ends, including the
//! airframe shadowing cone.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::delay_kernel;
use crate::error::{Error, Result};
use crate::sounder::SounderCapture;
use crate::trajectory::{Neu, PoseSample};
use crate::waveform::ProbeWaveform;

pub const SPEED_OF_LIGHT_MPS: f64 = 299_792_458.0;
pub const DEFAULT_CARRIER_HZ: f64 = 3.4e9;

pub fn wavelength_m(carrier_hz: f64) -> f64 {
    SPEED_OF_LIGHT_MPS / carrier_hz
}

/// Free-space path loss `20 log10(4 pi d / lambda)` in dB.
pub fn free_space_path_loss_db(distance_m: f64, carrier_hz: f64) -> f64 {
    20.0 * (4.0 * PI * distance_m / wavelength_m(carrier_hz)).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathOrigin {
    Los,
    GroundReflection,
    Reflector,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultipathComponent {
    /// Linear complex gain.
    pub amplitude: Complex64,
    pub delay_s: f64,
    pub origin: PathOrigin,
}

impl MultipathComponent {
    pub fn new(amplitude: Complex64, delay_s: f64, origin: PathOrigin) -> Result<Self> {
        if !(delay_s.is_finite() && delay_s >= 0.0) {
            return Err(Error::Parameter(format!(
                "tap delay must be finite and non-negative, got {delay_s}"
            )));
        }
        Ok(Self {
            amplitude,
            delay_s,
            origin,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// Sorted ascending by delay.
    pub components: Vec<MultipathComponent>,
    pub timestamp_s: f64,
    pub carrier_hz: f64,
    pub tx_pose: PoseSample,
    pub rx_pose: PoseSample,
}

impl ChannelRealization {
    /// Builds a realization from arbitrary taps (sorted here), e.g. for
    /// closed-loop tests of the extractor.
    pub fn synthetic(mut components: Vec<MultipathComponent>, carrier_hz: f64) -> Self {
        sort_by_delay(&mut components);
        let origin = PoseSample::new(0.0, Neu::zeros(), 0.0);
        Self {
            components,
            timestamp_s: 0.0,
            carrier_hz,
            tx_pose: origin,
            rx_pose: origin,
        }
    }

    pub fn strongest_amplitude(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.amplitude.norm())
            .fold(0.0, f64::max)
    }

    pub fn los(&self) -> Option<&MultipathComponent> {
        self.components.iter().find(|c| c.origin == PathOrigin::Los)
    }
}

fn sort_by_delay(components: &mut [MultipathComponent]) {
    components.sort_by(|a, b| a.delay_s.total_cmp(&b.delay_s));
}

/// Log-distance path-loss model with log-normal shadowing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    pub pl_d0_db: f64,
    pub d0_m: f64,
    pub gamma: f64,
    pub sigma_db: f64,
}

impl PathLossModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.d0_m.is_finite() && self.d0_m > 0.0) {
            return Err(Error::Parameter(format!(
                "reference distance must be positive, got {}",
                self.d0_m
            )));
        }
        if !(self.sigma_db >= 0.0) {
            return Err(Error::Parameter(format!(
                "shadowing sigma must be non-negative, got {}",
                self.sigma_db
            )));
        }
        Ok(())
    }

    /// Free-space model (`gamma = 2`) referenced to `d0_m`.
    pub fn free_space(carrier_hz: f64, d0_m: f64) -> Self {
        Self {
            pl_d0_db: free_space_path_loss_db(d0_m, carrier_hz),
            d0_m,
            gamma: 2.0,
            sigma_db: 0.0,
        }
    }
}

/// `PL(d) = PL(d0) + 10 gamma log10(d/d0) + sigma * z`, with `z` a
/// standard-normal draw (zero when absent).
pub fn path_loss_db(
    model: &PathLossModel,
    distance_m: f64,
    shadow_draw: Option<f64>,
) -> Result<f64> {
    model.validate()?;
    if !(distance_m.is_finite() && distance_m > 0.0) {
        return Err(Error::Domain(format!(
            "distance must be positive, got {distance_m}"
        )));
    }
    let shadow = shadow_draw.map_or(0.0, |z| model.sigma_db * z);
    Ok(model.pl_d0_db + 10.0 * model.gamma * (distance_m / model.d0_m).log10() + shadow)
}

/// Body-fixed obstruction cone applying a flat attenuation to rays whose
/// body-frame direction lies inside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameShadow {
    pub enabled: bool,
    /// Cone axis in the body frame (0 = nose, pi = tail).
    pub axis_azimuth_deg: f64,
    pub axis_elevation_deg: f64,
    pub half_angle_deg: f64,
    pub attenuation_db: f64,
}

impl Default for FrameShadow {
    fn default() -> Self {
        Self {
            enabled: true,
            axis_azimuth_deg: 180.0,
            axis_elevation_deg: 0.0,
            half_angle_deg: 45.0,
            attenuation_db: 15.0,
        }
    }
}

impl FrameShadow {
    fn axis(&self) -> Neu {
        let az = self.axis_azimuth_deg.to_radians();
        let el = self.axis_elevation_deg.to_radians();
        Neu::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }

    /// Whether a body-frame unit direction falls inside the cone.
    pub fn blocks(&self, body_dir: &Neu) -> bool {
        self.enabled && body_dir.dot(&self.axis()) > self.half_angle_deg.to_radians().cos()
    }
}

/// Parametric antenna: dipole-like `cos^2(elevation)` power pattern with a
/// configurable null floor, plus airframe shadowing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AntennaModel {
    pub peak_gain_dbi: f64,
    /// Depth of the pattern nulls relative to the peak (negative dB).
    pub null_floor_db: f64,
    pub frame_shadow: FrameShadow,
}

impl Default for AntennaModel {
    fn default() -> Self {
        Self {
            peak_gain_dbi: 2.15,
            null_floor_db: -20.0,
            frame_shadow: FrameShadow::default(),
        }
    }
}

pub const MAX_ABS_GAIN_DBI: f64 = 30.0;

impl AntennaModel {
    pub fn isotropic() -> Self {
        Self {
            peak_gain_dbi: 0.0,
            null_floor_db: 0.0,
            frame_shadow: FrameShadow {
                enabled: false,
                ..FrameShadow::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        // The bound applies to the pattern; shadowing is a separate loss.
        let lowest = self.peak_gain_dbi + self.null_floor_db.min(0.0);
        if !(self.peak_gain_dbi.abs() <= MAX_ABS_GAIN_DBI && lowest >= -MAX_ABS_GAIN_DBI) {
            return Err(Error::Parameter(format!(
                "antenna gain must stay within +/-{MAX_ABS_GAIN_DBI} dBi (peak {}, lowest {lowest})",
                self.peak_gain_dbi
            )));
        }
        if self.null_floor_db > 0.0 {
            return Err(Error::Parameter("null floor must be <= 0 dB".into()));
        }
        if !(self.frame_shadow.attenuation_db >= 0.0) {
            return Err(Error::Parameter(
                "frame-shadow attenuation must be >= 0 dB".into(),
            ));
        }
        if !(0.0..=180.0).contains(&self.frame_shadow.half_angle_deg) {
            return Err(Error::Parameter(
                "frame-shadow half angle must lie in [0, 180] degrees".into(),
            ));
        }
        Ok(())
    }

    /// Pattern gain in dBi for a body-frame direction, excluding shadowing.
    pub fn pattern_gain_dbi(&self, elevation_rad: f64) -> f64 {
        let floor = 10f64.powf(self.null_floor_db / 10.0);
        self.peak_gain_dbi + 10.0 * elevation_rad.cos().powi(2).max(floor).log10()
    }

    /// Total gain in dBi toward a world-frame direction for an antenna on a
    /// vehicle with the given yaw.
    pub fn gain_dbi(&self, world_dir: &Neu, heading_rad: f64) -> f64 {
        let body = world_to_body(world_dir, heading_rad);
        let elevation = body.z.clamp(-1.0, 1.0).asin();
        let mut gain = self.pattern_gain_dbi(elevation);
        if self.frame_shadow.blocks(&body) {
            gain -= self.frame_shadow.attenuation_db;
        }
        gain
    }

    fn amplitude_gain(&self, world_dir: &Neu, heading_rad: f64) -> f64 {
        10f64.powf(self.gain_dbi(world_dir, heading_rad) / 20.0)
    }
}

/// Rotates a world NEU direction into the yaw-only body frame
/// (x = nose, y = right wing, z = up) and normalizes it.
pub fn world_to_body(world_dir: &Neu, heading_rad: f64) -> Neu {
    let (s, c) = heading_rad.sin_cos();
    let v = world_dir.normalize();
    Neu::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundPlane {
    pub enabled: bool,
    pub reflection_coefficient: f64,
}

impl Default for GroundPlane {
    fn default() -> Self {
        Self {
            enabled: true,
            reflection_coefficient: -0.9,
        }
    }
}

/// Static point scatterer. `gain_db` is its amplitude gain relative to free
/// space over the unfolded path length `d1 + d2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointReflector {
    pub north_m: f64,
    pub east_m: f64,
    pub up_m: f64,
    pub gain_db: f64,
}

impl PointReflector {
    pub fn position(&self) -> Neu {
        Neu::new(self.north_m, self.east_m, self.up_m)
    }
}

/// Static propagation environment (antennas are passed separately).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Environment {
    pub ground: GroundPlane,
    pub reflectors: Vec<PointReflector>,
}

impl Default for Environment {
    fn default() -> Self {
        Self {
            ground: GroundPlane::default(),
            reflectors: vec![default_building_reflector()],
        }
    }
}

impl Environment {
    pub fn free_space() -> Self {
        Self {
            ground: GroundPlane {
                enabled: false,
                ..GroundPlane::default()
            },
            reflectors: Vec::new(),
        }
    }
}

/// Weak building-like scatterer 150 m east of the sphere centre.
pub fn default_building_reflector() -> PointReflector {
    PointReflector {
        north_m: 0.0,
        east_m: 150.0,
        up_m: 10.0,
        gain_db: -40.0,
    }
}

/// Environment section of a campaign config: propagation environment plus
/// both antennas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub ground: GroundPlane,
    pub reflectors: Vec<PointReflector>,
    pub tx_antenna: AntennaModel,
    pub rx_antenna: AntennaModel,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        let env = Environment::default();
        Self {
            ground: env.ground,
            reflectors: env.reflectors,
            tx_antenna: AntennaModel::default(),
            rx_antenna: AntennaModel::default(),
        }
    }
}

impl EnvironmentConfig {
    pub fn environment(&self) -> Environment {
        Environment {
            ground: self.ground,
            reflectors: self.reflectors.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tx_antenna.validate()?;
        self.rx_antenna.validate()?;
        let gamma = self.ground.reflection_coefficient;
        if !(gamma.is_finite() && gamma.abs() <= 1.0) {
            return Err(Error::Parameter(format!(
                "ground reflection coefficient must lie in [-1, 1], got {gamma}"
            )));
        }
        if let Some(r) = self.reflectors.iter().find(|r| {
            ![r.north_m, r.east_m, r.up_m, r.gain_db]
                .iter()
                .all(|v| v.is_finite())
        }) {
            return Err(Error::Parameter(format!(
                "reflector values must be finite: {r:?}"
            )));
        }
        Ok(())
    }
}

/// One geometric ray: path length and departure/arrival directions.
struct Ray {
    length_m: f64,
    departure: Neu,
    arrival_reversed: Neu,
}

#[allow(clippy::too_many_arguments)]
fn ray_component(
    ray: &Ray,
    scale: f64,
    origin: PathOrigin,
    tx: &PoseSample,
    rx: &PoseSample,
    ant_tx: &AntennaModel,
    ant_rx: &AntennaModel,
    lambda: f64,
) -> MultipathComponent {
    let free_space = lambda / (4.0 * PI * ray.length_m);
    let gains = ant_tx.amplitude_gain(&ray.departure, tx.heading_rad)
        * ant_rx.amplitude_gain(&ray.arrival_reversed, rx.heading_rad);
    let phase = Complex64::from_polar(1.0, -2.0 * PI * ray.length_m / lambda);
    MultipathComponent {
        amplitude: phase * (scale * free_space * gains),
        delay_s: ray.length_m / SPEED_OF_LIGHT_MPS,
        origin,
    }
}

/// Simulates the tap set between two poses.
pub fn simulate_channel(
    tx_pose: &PoseSample,
    rx_pose: &PoseSample,
    env: &Environment,
    ant_tx: &AntennaModel,
    ant_rx: &AntennaModel,
    carrier_hz: f64,
) -> Result<ChannelRealization> {
    if !(carrier_hz.is_finite() && carrier_hz > 0.0) {
        return Err(Error::Parameter(format!(
            "carrier must be positive, got {carrier_hz}"
        )));
    }
    let tx = tx_pose.position();
    let rx = rx_pose.position();
    let los = rx - tx;
    if los.norm() <= 1e-9 {
        return Err(Error::Geometry("transmitter and receiver coincide".into()));
    }
    let lambda = wavelength_m(carrier_hz);
    let component = |ray: Ray, scale: f64, origin| {
        ray_component(
            &ray, scale, origin, tx_pose, rx_pose, ant_tx, ant_rx, lambda,
        )
    };

    let mut components = vec![component(
        Ray {
            length_m: los.norm(),
            departure: los,
            arrival_reversed: -los,
        },
        1.0,
        PathOrigin::Los,
    )];

    if env.ground.enabled && tx.z > 0.0 && rx.z > 0.0 {
        let image = Neu::new(tx.x, tx.y, -tx.z);
        let fraction = tx.z / (tx.z + rx.z);
        let bounce = Neu::new(
            tx.x + (rx.x - tx.x) * fraction,
            tx.y + (rx.y - tx.y) * fraction,
            0.0,
        );
        components.push(component(
            Ray {
                length_m: (rx - image).norm(),
                departure: bounce - tx,
                arrival_reversed: bounce - rx,
            },
            env.ground.reflection_coefficient,
            PathOrigin::GroundReflection,
        ));
    }

    for reflector in &env.reflectors {
        let p = reflector.position();
        let (d1, d2) = ((p - tx).norm(), (p - rx).norm());
        if d1 <= 1e-9 || d2 <= 1e-9 {
            return Err(Error::Geometry(
                "reflector coincides with a link endpoint".into(),
            ));
        }
        components.push(component(
            Ray {
                length_m: d1 + d2,
                departure: p - tx,
                arrival_reversed: p - rx,
            },
            10f64.powf(reflector.gain_db / 20.0),
            PathOrigin::Reflector,
        ));
    }

    sort_by_delay(&mut components);
    Ok(ChannelRealization {
        components,
        timestamp_s: rx_pose.t_s,
        carrier_hz,
        tx_pose: *tx_pose,
        rx_pose: *rx_pose,
    })
}

/// Passes the periodic probe through the channel and adds complex white
/// Gaussian noise whose per-sample power sits `snr_db` below the strongest
/// tap's power. Fractional delays use the 64-tap windowed-sinc kernel over
/// the probe's periodic extension; `snr_db = +inf` disables noise.
pub fn apply_channel(
    channel: &ChannelRealization,
    probe: &ProbeWaveform,
    snr_db: f64,
    seed: u64,
) -> Result<SounderCapture> {
    let fs = probe.sample_rate_hz();
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::Parameter(
            "probe sample rate must be positive".into(),
        ));
    }
    if snr_db.is_nan() {
        return Err(Error::Parameter("SNR must not be NaN".into()));
    }
    let period = probe.period();
    let len = period.len() as i64;

    // Fold every tap's kernel into one circular filter.
    let mut filter = vec![Complex64::new(0.0, 0.0); period.len()];
    for c in &channel.components {
        for (lag, w) in delay_kernel(c.delay_s * fs) {
            filter[lag.rem_euclid(len) as usize] += c.amplitude * w;
        }
    }
    let taps: Vec<(usize, Complex64)> = filter
        .into_iter()
        .enumerate()
        .filter(|(_, w)| *w != Complex64::new(0.0, 0.0))
        .collect();
    let one_period: Vec<Complex64> = (0..period.len())
        .map(|n| {
            taps.iter()
                .map(|&(lag, w)| w * period[(n + period.len() - lag) % period.len()])
                .sum()
        })
        .collect();
    let mut iq: Vec<Complex64> = one_period
        .iter()
        .copied()
        .cycle()
        .take(probe.samples().len())
        .collect();

    if snr_db.is_finite() {
        let signal_power = channel.strongest_amplitude().powi(2);
        let noise_power = signal_power / 10f64.powf(snr_db / 10.0);
        add_complex_noise(&mut iq, noise_power, seed);
    }

    Ok(SounderCapture {
        iq,
        sample_rate_hz: fs,
        carrier_hz: channel.carrier_hz,
        timestamp_s: channel.timestamp_s,
        pose_ref: Some((channel.tx_pose, channel.rx_pose)),
    })
}

/// Adds circular complex Gaussian noise of the given mean power per sample.
pub fn add_complex_noise(iq: &mut [Complex64], noise_power: f64, seed: u64) {
    if noise_power <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = (noise_power / 2.0).sqrt();
    for s in iq {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *s += Complex64::new(re, im) * std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{generate_zc, ZcParams};
    use proptest::prelude::*;

    fn pose(n: f64, e: f64, u: f64, heading: f64) -> PoseSample {
        PoseSample::new(0.0, Neu::new(n, e, u), heading)
    }

    fn iso() -> AntennaModel {
        AntennaModel::isotropic()
    }

    #[test]
    fn free_space_los_delay() {
        let ch = simulate_channel(
            &pose(0.0, 0.0, 65.0, 0.0),
            &pose(20.0, 0.0, 65.0, PI),
            &Environment::free_space(),
            &iso(),
            &iso(),
            DEFAULT_CARRIER_HZ,
        )
        .unwrap();
        assert_eq!(ch.components.len(), 1);
        let los = ch.components[0];
        assert_eq!(los.origin, PathOrigin::Los);
        assert!((los.delay_s - 66.7128e-9).abs() < 1e-12);
        let fspl = -20.0 * los.amplitude.norm().log10();
        assert!((fspl - 69.094).abs() < 0.01, "{fspl}");
    }

    #[test]
    fn ground_reflection_excess_delay() {
        let env = Environment {
            ground: GroundPlane {
                enabled: true,
                reflection_coefficient: -1.0,
            },
            reflectors: vec![],
        };
        let ch = simulate_channel(
            &pose(0.0, 0.0, 65.0, 0.0),
            &pose(20.0, 0.0, 65.0, PI),
            &env,
            &iso(),
            &iso(),
            DEFAULT_CARRIER_HZ,
        )
        .unwrap();
        assert_eq!(ch.components.len(), 2);
        let ground = ch.components[1];
        assert_eq!(ground.origin, PathOrigin::GroundReflection);
        let path = ground.delay_s * SPEED_OF_LIGHT_MPS;
        assert!((path - 17_300f64.sqrt()).abs() < 1e-9);
        let excess_ns = (ground.delay_s - ch.components[0].delay_s) * 1e9;
        assert!((excess_ns - 372.01).abs() < 0.05, "{excess_ns}");
        // Coefficient -1 flips the sign relative to free space over 131.5 m.
        let expected = wavelength_m(DEFAULT_CARRIER_HZ) / (4.0 * PI * path);
        assert!((ground.amplitude.norm() - expected).abs() < 1e-15);
    }

    #[test]
    fn reflector_tap_arrives_after_los() {
        let env = Environment {
            ground: GroundPlane {
                enabled: false,
                ..GroundPlane::default()
            },
            reflectors: vec![PointReflector {
                north_m: 10.0,
                east_m: 150.0,
                up_m: 10.0,
                gain_db: -20.0,
            }],
        };
        let ch = simulate_channel(
            &pose(0.0, 0.0, 65.0, 0.0),
            &pose(20.0, 0.0, 65.0, PI),
            &env,
            &iso(),
            &iso(),
            DEFAULT_CARRIER_HZ,
        )
        .unwrap();
        assert_eq!(ch.components.len(), 2);
        assert_eq!(ch.components[0].origin, PathOrigin::Los);
        assert_eq!(ch.components[1].origin, PathOrigin::Reflector);
        assert!(ch.components[1].delay_s > ch.components[0].delay_s);
    }

    #[test]
    fn coincident_poses_are_a_geometry_error() {
        let p = pose(1.0, 2.0, 3.0, 0.0);
        assert!(matches!(
            simulate_channel(&p, &p, &Environment::default(), &iso(), &iso(), 1e9),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn path_loss_examples() {
        let model = PathLossModel {
            pl_d0_db: 40.0,
            d0_m: 1.0,
            gamma: 2.0,
            sigma_db: 3.0,
        };
        assert_eq!(path_loss_db(&model, 1.0, None).unwrap(), 40.0);
        let doubled = path_loss_db(&model, 2.0, None).unwrap() - 40.0;
        assert!((doubled - 6.0206).abs() < 1e-4);
        assert_eq!(path_loss_db(&model, 1.0, Some(-1.0)).unwrap(), 37.0);
        assert!(matches!(
            path_loss_db(&model, 0.0, None),
            Err(Error::Domain(_))
        ));

        let fs = PathLossModel::free_space(3.4e9, 1.0);
        let at20 = path_loss_db(&fs, 20.0, None).unwrap();
        assert!((at20 - 69.094).abs() < 0.01, "{at20}");
    }

    #[test]
    fn dipole_pattern_and_shadow_cone() {
        let ant = AntennaModel::default();
        assert!((ant.pattern_gain_dbi(0.0) - 2.15).abs() < 1e-12);
        assert!((ant.pattern_gain_dbi(PI / 2.0) - (2.15 - 20.0)).abs() < 1e-9);
        // Facing north, a ray leaving toward the south is behind the airframe.
        let south = Neu::new(-1.0, 0.0, 0.0);
        assert!((ant.gain_dbi(&south, 0.0) - (2.15 - 15.0)).abs() < 1e-9);
        let north = Neu::new(1.0, 0.0, 0.0);
        assert!((ant.gain_dbi(&north, 0.0) - 2.15).abs() < 1e-9);
        // Turning the vehicle around un-blocks the southward ray.
        assert!((ant.gain_dbi(&south, PI) - 2.15).abs() < 1e-9);
    }

    #[test]
    fn antenna_gain_bound_is_enforced() {
        let ant = AntennaModel {
            peak_gain_dbi: 35.0,
            ..AntennaModel::default()
        };
        assert!(ant.validate().is_err());
        let ant = AntennaModel {
            null_floor_db: -40.0,
            ..AntennaModel::default()
        };
        assert!(ant.validate().is_err());
        assert!(AntennaModel::default().validate().is_ok());
    }

    fn probe() -> ProbeWaveform {
        generate_zc(ZcParams::default()).unwrap()
    }

    #[test]
    fn identity_channel_reproduces_probe() {
        let probe = probe();
        let tap =
            MultipathComponent::new(Complex64::new(1.0, 0.0), 0.0, PathOrigin::Synthetic).unwrap();
        let ch = ChannelRealization::synthetic(vec![tap], DEFAULT_CARRIER_HZ);
        let cap = apply_channel(&ch, &probe, f64::INFINITY, 1).unwrap();
        assert_eq!(cap.iq, probe.samples());
    }

    #[test]
    fn integer_delay_shifts_and_scales() {
        let probe = probe();
        let fs = probe.sample_rate_hz();
        let tap =
            MultipathComponent::new(Complex64::new(0.5, 0.0), 3.0 / fs, PathOrigin::Synthetic)
                .unwrap();
        let ch = ChannelRealization::synthetic(vec![tap], DEFAULT_CARRIER_HZ);
        let cap = apply_channel(&ch, &probe, f64::INFINITY, 1).unwrap();
        let len = probe.samples().len();
        for n in 0..len {
            let expected = probe.samples()[(n + len - 3) % len] * 0.5;
            assert!((cap.iq[n] - expected).norm() < 1e-15);
        }
    }

    #[test]
    fn noise_power_matches_snr_and_is_reproducible() {
        let probe = probe();
        let tap =
            MultipathComponent::new(Complex64::new(0.1, 0.0), 0.0, PathOrigin::Synthetic).unwrap();
        let ch = ChannelRealization::synthetic(vec![tap], DEFAULT_CARRIER_HZ);
        let a = apply_channel(&ch, &probe, 10.0, 7).unwrap();
        let b = apply_channel(&ch, &probe, 10.0, 7).unwrap();
        assert_eq!(a.iq, b.iq);
        let noise_power =
            a.iq.iter()
                .zip(probe.samples())
                .map(|(y, x)| (y - x * 0.1).norm_sqr())
                .sum::<f64>()
                / a.iq.len() as f64;
        let expected = 0.01 / 10.0;
        assert!((noise_power / expected - 1.0).abs() < 0.05, "{noise_power}");
        let c = apply_channel(&ch, &probe, 10.0, 8).unwrap();
        assert_ne!(a.iq, c.iq);
    }

    fn arb_point() -> impl Strategy<Value = Neu> {
        (-60.0..60.0f64, -60.0..60.0f64, 5.0..120.0f64).prop_map(|(n, e, u)| Neu::new(n, e, u))
    }

    proptest! {
        #[test]
        fn los_amplitude_decreases_with_distance(d1 in 1.0..500.0f64, extra in 0.01..500.0f64) {
            let tx = pose(0.0, 0.0, 50.0, 0.0);
            let near = simulate_channel(&tx, &pose(d1, 0.0, 50.0, PI), &Environment::free_space(), &iso(), &iso(), 3.4e9).unwrap();
            let far = simulate_channel(&tx, &pose(d1 + extra, 0.0, 50.0, PI), &Environment::free_space(), &iso(), &iso(), 3.4e9).unwrap();
            prop_assert!(far.components[0].amplitude.norm() < near.components[0].amplitude.norm());
        }

        #[test]
        fn swapping_endpoints_preserves_delays_and_magnitudes(
            a in arb_point(), b in arb_point(), ha in -3.0..3.0f64, hb in -3.0..3.0f64,
        ) {
            prop_assume!((a - b).norm() > 0.5);
            let env = Environment::default();
            let ant_a = AntennaModel::default();
            let ant_b = AntennaModel { peak_gain_dbi: 5.0, null_floor_db: -10.0, ..AntennaModel::default() };
            let pa = PoseSample::new(0.0, a, ha);
            let pb = PoseSample::new(0.0, b, hb);
            let fwd = simulate_channel(&pa, &pb, &env, &ant_a, &ant_b, 3.4e9).unwrap();
            let rev = simulate_channel(&pb, &pa, &env, &ant_b, &ant_a, 3.4e9).unwrap();
            prop_assert_eq!(fwd.components.len(), rev.components.len());
            for (x, y) in fwd.components.iter().zip(&rev.components) {
                prop_assert!((x.delay_s - y.delay_s).abs() <= 1e-15 * x.delay_s.max(1e-9));
                prop_assert!((x.amplitude.norm() - y.amplitude.norm()).abs() <= 1e-12 * x.amplitude.norm());
            }
        }

        #[test]
        fn frame_shadow_only_attenuates(a in arb_point(), b in arb_point(), ha in -3.0..3.0f64, hb in -3.0..3.0f64) {
            prop_assume!((a - b).norm() > 0.5);
            let shadowed = AntennaModel::default();
            let clear = AntennaModel { frame_shadow: FrameShadow { enabled: false, ..FrameShadow::default() }, ..shadowed };
            let env = Environment::default();
            let pa = PoseSample::new(0.0, a, ha);
            let pb = PoseSample::new(0.0, b, hb);
            let with = simulate_channel(&pa, &pb, &env, &shadowed, &shadowed, 3.4e9).unwrap();
            let without = simulate_channel(&pa, &pb, &env, &clear, &clear, 3.4e9).unwrap();
            let power = |ch: &ChannelRealization| ch.components.iter().map(|c| c.amplitude.norm_sqr()).sum::<f64>();
            prop_assert!(power(&with) <= power(&without) * (1.0 + 1e-12));
            for (x, y) in with.components.iter().zip(&without.components) {
                prop_assert!(x.amplitude.norm() <= y.amplitude.norm() * (1.0 + 1e-12));
            }
        }
    }
}
