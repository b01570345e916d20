//! Campaign orchestration: TOML config, the plan / simulate / extract /
//! analyze stages, the in-memory end-to-end run, and the guidance study.
//!
//! Output layout under `--out`:
//!
//! ```text
//! probe.iq, probe.json          probe stage
//! poses.csv                     plan stage
//! captures/capture_NNNNNN.*     simulate stage
//! cirs.jsonl                    extract stage
//! stats/                        analyze stage (CSV/JSON exports)
//! guidance/                     guidance study
//! ```
//!
//! Captures are quantized to `f32` as soon as they are simulated, so the
//! in-memory pipeline sees exactly what a write/read cycle would yield and
//! `campaign` reproduces the stepwise outputs byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_channel, simulate_channel, EnvironmentConfig, DEFAULT_CARRIER_HZ};
use crate::error::{Error, Result};
use crate::guidance::{
    follow_trajectory, rms_cross_track, tune_follower, write_trace_csv, FollowerConfig, TraceStep,
    TuningOutcome, TuningSpace, VehicleState, DEFAULT_MAX_ACCEL_MPS2, DEFAULT_TIMESTEP_S,
};
use crate::iq::quantize_f32;
use crate::metrics::{
    aggregate_campaign, write_campaign_stats, AggregationConfig, CampaignStats, Snapshot,
};
use crate::sounder::{
    capture_stem, list_captures, read_capture, read_cir_jsonl, write_capture, write_cir_jsonl,
    CirRecord, Extractor, ExtractorConfig, SounderCapture,
};
use crate::trajectory::{
    read_pose_csv, sphere_path_arclength, write_pose_csv, Neu, PoseSample, SphereTrajectoryParams,
};
use crate::waveform::{generate_zc, write_probe, ProbeWaveform, ZcParams};

/// Snapshots simulated and extracted per parallel batch; bounds memory.
const BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub length: usize,
    pub root: usize,
    pub repetitions: usize,
    pub sample_rate_hz: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        let zc = ZcParams::default();
        Self {
            length: zc.length,
            root: zc.root,
            repetitions: zc.repetitions,
            sample_rate_hz: crate::waveform::DEFAULT_SAMPLE_RATE_HZ,
        }
    }
}

/// Sphere geometry. When both `floor_altitude_m` and `ceiling_altitude_m`
/// are given they define the sphere and override radius and centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub radius_m: f64,
    pub center_altitude_m: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub floor_altitude_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ceiling_altitude_m: Option<f64>,
    pub turns: u32,
    pub path_velocity_mps: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        let p = SphereTrajectoryParams::default();
        Self {
            radius_m: p.radius_m,
            center_altitude_m: p.center_altitude_m,
            floor_altitude_m: None,
            ceiling_altitude_m: None,
            turns: p.turns,
            path_velocity_mps: p.path_velocity_mps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub max_accel_mps2: f64,
    pub timestep_s: f64,
    /// Candidates for the nonlinear follower, tuned on the sphere path.
    pub l1: TuningSpace,
    /// Candidates for the PID baseline, tuned on a straight line.
    pub pid: TuningSpace,
    pub pid_tuning_line_m: f64,
    /// Initial lateral offset on the PID tuning line.
    pub pid_tuning_offset_m: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            max_accel_mps2: DEFAULT_MAX_ACCEL_MPS2,
            timestep_s: DEFAULT_TIMESTEP_S,
            l1: TuningSpace::default_l1(),
            pid: TuningSpace::default_pid(),
            pid_tuning_line_m: 150.0,
            pid_tuning_offset_m: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub seed: u64,
    pub carrier_hz: f64,
    pub measurement_rate_hz: f64,
    /// Per-sample SNR relative to the strongest tap.
    pub snr_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub probe: ProbeConfig,
    pub trajectory: TrajectoryConfig,
    pub environment: EnvironmentConfig,
    pub extractor: ExtractorConfig,
    pub aggregation: AggregationConfig,
    pub guidance: GuidanceConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            carrier_hz: DEFAULT_CARRIER_HZ,
            measurement_rate_hz: 10.0,
            snr_db: 40.0,
            output_dir: None,
            probe: ProbeConfig::default(),
            trajectory: TrajectoryConfig::default(),
            environment: EnvironmentConfig::default(),
            extractor: ExtractorConfig::default(),
            aggregation: AggregationConfig::default(),
            guidance: GuidanceConfig::default(),
        }
    }
}

/// Re-labels a validation error with the config field it came from.
fn at(field: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { .. } => e,
        other => Error::config(field, strip_class(&other)),
    }
}

fn strip_class(e: &Error) -> String {
    match e {
        Error::Parameter(m) | Error::Domain(m) | Error::Input(m) => m.clone(),
        other => other.to_string(),
    }
}

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| Error::config("document", e.message().trim()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." {
                "document".to_string()
            } else {
                path
            };
            Error::config(field, e.inner().message().trim())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive, got {v}")))
            }
        };
        positive("carrier_hz", self.carrier_hz)?;
        positive("measurement_rate_hz", self.measurement_rate_hz)?;
        if self.snr_db.is_nan() {
            return Err(Error::config("snr_db", "must be a number"));
        }
        positive("probe.sample_rate_hz", self.probe.sample_rate_hz)?;
        self.zc_params().map_err(at("probe"))?;
        self.sphere_params()?;
        self.environment.validate().map_err(at("environment"))?;
        self.extractor.validate().map_err(at("extractor"))?;
        self.aggregation.validate()?;

        let g = &self.guidance;
        positive("guidance.max_accel_mps2", g.max_accel_mps2)?;
        positive("guidance.pid_tuning_line_m", g.pid_tuning_line_m)?;
        if !(g.pid_tuning_offset_m.abs() <= crate::guidance::MAX_START_OFFSET_M) {
            return Err(Error::config(
                "guidance.pid_tuning_offset_m",
                format!("must be within {} m", crate::guidance::MAX_START_OFFSET_M),
            ));
        }
        if !matches!(g.l1, TuningSpace::NonlinearL1 { .. }) {
            return Err(Error::config(
                "guidance.l1.kind",
                "must be \"nonlinear_l1\"",
            ));
        }
        if !matches!(g.pid, TuningSpace::PidBaseline { .. }) {
            return Err(Error::config(
                "guidance.pid.kind",
                "must be \"pid_baseline\"",
            ));
        }
        g.l1.candidates(g.timestep_s).map_err(at("guidance.l1"))?;
        g.pid.candidates(g.timestep_s).map_err(at("guidance.pid"))?;
        Ok(())
    }

    pub fn zc_params(&self) -> Result<ZcParams> {
        ZcParams::new(self.probe.length, self.probe.root, self.probe.repetitions)
    }

    pub fn probe_waveform(&self) -> Result<ProbeWaveform> {
        generate_zc(self.zc_params().map_err(at("probe"))?)?
            .with_sample_rate(self.probe.sample_rate_hz)
            .map_err(at("probe.sample_rate_hz"))
    }

    pub fn sphere_params(&self) -> Result<SphereTrajectoryParams> {
        let t = &self.trajectory;
        let (radius_m, center_altitude_m) = match (t.floor_altitude_m, t.ceiling_altitude_m) {
            (Some(floor), Some(ceiling)) => {
                if !(floor < ceiling) {
                    return Err(Error::config(
                        "trajectory.floor_altitude_m, trajectory.ceiling_altitude_m",
                        format!("floor ({floor} m) must be below ceiling ({ceiling} m)"),
                    ));
                }
                ((ceiling - floor) / 2.0, (ceiling + floor) / 2.0)
            }
            (None, None) => (t.radius_m, t.center_altitude_m),
            (Some(_), None) => {
                return Err(Error::config(
                    "trajectory.ceiling_altitude_m",
                    "required when floor_altitude_m is given",
                ))
            }
            (None, Some(_)) => {
                return Err(Error::config(
                    "trajectory.floor_altitude_m",
                    "required when ceiling_altitude_m is given",
                ))
            }
        };
        let params = SphereTrajectoryParams {
            radius_m,
            center_altitude_m,
            turns: t.turns,
            path_velocity_mps: t.path_velocity_mps,
            sample_rate_hz: self.measurement_rate_hz,
        };
        params.validate().map_err(at("trajectory"))?;
        Ok(params)
    }

    /// Transmitter at the sphere centre, nose north.
    pub fn tx_pose(&self, t_s: f64) -> Result<PoseSample> {
        Ok(PoseSample::new(t_s, self.sphere_params()?.center(), 0.0))
    }

    /// Noise seed for snapshot `index`.
    pub fn snapshot_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }
}

/// File locations under an output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn probe_stem(&self) -> PathBuf {
        self.root.join("probe")
    }
    pub fn poses(&self) -> PathBuf {
        self.root.join("poses.csv")
    }
    pub fn captures(&self) -> PathBuf {
        self.root.join("captures")
    }
    pub fn cirs(&self) -> PathBuf {
        self.root.join("cirs.jsonl")
    }
    pub fn stats(&self) -> PathBuf {
        self.root.join("stats")
    }
    pub fn guidance(&self) -> PathBuf {
        self.root.join("guidance")
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Receiver poses along the constant-speed sphere path.
pub fn plan(cfg: &CampaignConfig) -> Result<Vec<PoseSample>> {
    let params = cfg.sphere_params()?;
    sphere_path_arclength(&params, params.path_velocity_mps)
}

/// Simulates snapshot `index`, quantized to `f32`.
pub fn simulate_snapshot(
    cfg: &CampaignConfig,
    probe: &ProbeWaveform,
    index: usize,
    rx_pose: &PoseSample,
) -> Result<SounderCapture> {
    let tx_pose = cfg.tx_pose(rx_pose.t_s)?;
    let env = &cfg.environment;
    let channel = simulate_channel(
        &tx_pose,
        rx_pose,
        &env.environment(),
        &env.tx_antenna,
        &env.rx_antenna,
        cfg.carrier_hz,
    )?;
    let mut capture = apply_channel(&channel, probe, cfg.snr_db, cfg.snapshot_seed(index))?;
    quantize_f32(&mut capture.iq);
    Ok(capture)
}

fn snapshot_from_record(
    record: &CirRecord,
    poses: Option<&[PoseSample]>,
    cfg: &CampaignConfig,
) -> Result<Snapshot> {
    let rx_pose = match (record.rx_pose, poses) {
        (Some(p), _) => p,
        (None, Some(poses)) => *poses
            .get(record.index)
            .ok_or_else(|| Error::Input(format!("no pose for snapshot {}", record.index)))?,
        (None, None) => {
            return Err(Error::Input(format!(
                "snapshot {} has no receiver pose",
                record.index
            )))
        }
    };
    let tx_pose = match record.tx_pose {
        Some(p) => p,
        None => cfg.tx_pose(rx_pose.t_s)?,
    };
    Ok(Snapshot {
        index: record.index,
        tx_pose,
        rx_pose,
        cir: record.cir.clone(),
    })
}

fn aggregate(
    cfg: &CampaignConfig,
    records: &[CirRecord],
    poses: Option<&[PoseSample]>,
) -> Result<CampaignStats> {
    let snapshots: Vec<Snapshot> = records
        .iter()
        .map(|r| snapshot_from_record(r, poses, cfg))
        .collect::<Result<_>>()?;
    aggregate_campaign(&snapshots, &cfg.aggregation)
}

pub fn run_probe(cfg: &CampaignConfig, out: &Path) -> Result<ProbeWaveform> {
    cfg.validate()?;
    let layout = Layout::new(out);
    create_dir(&layout.root)?;
    let probe = cfg.probe_waveform()?;
    write_probe(&layout.probe_stem(), &probe)?;
    Ok(probe)
}

pub fn run_plan(cfg: &CampaignConfig, out: &Path) -> Result<Vec<PoseSample>> {
    cfg.validate()?;
    let layout = Layout::new(out);
    create_dir(&layout.root)?;
    let poses = plan(cfg)?;
    write_pose_csv(&layout.poses(), &poses)?;
    Ok(poses)
}

/// Reads `poses.csv` and writes one capture per pose. Existing captures in
/// the directory are replaced. Returns the number of captures.
pub fn run_simulate(cfg: &CampaignConfig, out: &Path) -> Result<usize> {
    cfg.validate()?;
    let layout = Layout::new(out);
    let poses = read_pose_csv(&layout.poses())?;
    let dir = layout.captures();
    create_dir(&dir)?;
    for (_, stem) in list_captures(&dir)? {
        for ext in ["iq", "json"] {
            let p = stem.with_extension(ext);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    let probe = cfg.probe_waveform()?;
    for (b, chunk) in poses.chunks(BATCH).enumerate() {
        let captures: Vec<SounderCapture> = chunk
            .par_iter()
            .enumerate()
            .map(|(k, pose)| simulate_snapshot(cfg, &probe, b * BATCH + k, pose))
            .collect::<Result<_>>()?;
        for (k, capture) in captures.iter().enumerate() {
            write_capture(&capture_stem(&dir, b * BATCH + k), capture)?;
        }
    }
    Ok(poses.len())
}

pub fn run_extract(cfg: &CampaignConfig, out: &Path) -> Result<Vec<CirRecord>> {
    cfg.validate()?;
    let layout = Layout::new(out);
    let stems = list_captures(&layout.captures())?;
    if stems.is_empty() {
        return Err(Error::Input(format!(
            "no captures found in {}",
            layout.captures().display()
        )));
    }
    let extractor = Extractor::new(&cfg.probe_waveform()?, cfg.extractor)?;
    let mut records = Vec::with_capacity(stems.len());
    for chunk in stems.chunks(BATCH) {
        let batch: Vec<CirRecord> = chunk
            .par_iter()
            .map(|(index, stem)| {
                let capture = read_capture(stem)?;
                let cir = extractor.extract(&capture)?;
                Ok(CirRecord::new(*index, &capture, cir))
            })
            .collect::<Result<_>>()?;
        records.extend(batch);
    }
    write_cir_jsonl(&layout.cirs(), &records)?;
    Ok(records)
}

/// Aggregates `cirs.jsonl`; `poses.csv` is consulted only for records
/// without poses.
pub fn run_analyze(cfg: &CampaignConfig, out: &Path) -> Result<CampaignStats> {
    cfg.validate()?;
    let layout = Layout::new(out);
    let records = read_cir_jsonl(&layout.cirs())?;
    let poses = if records.iter().any(|r| r.rx_pose.is_none()) {
        Some(read_pose_csv(&layout.poses())?)
    } else {
        None
    };
    let stats = aggregate(cfg, &records, poses.as_deref())?;
    write_campaign_stats(&layout.stats(), &stats, &cfg.aggregation)?;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOutput {
    pub poses: Vec<PoseSample>,
    pub records: Vec<CirRecord>,
    pub stats: CampaignStats,
}

/// End-to-end run without intermediate capture files. With `out`, writes
/// `poses.csv`, `cirs.jsonl` and `stats/` exactly as the stepwise stages do.
pub fn run_campaign(cfg: &CampaignConfig, out: Option<&Path>) -> Result<CampaignOutput> {
    cfg.validate()?;
    let poses = plan(cfg)?;
    let probe = cfg.probe_waveform()?;
    let extractor = Extractor::new(&probe, cfg.extractor)?;
    let mut records = Vec::with_capacity(poses.len());
    for (b, chunk) in poses.chunks(BATCH).enumerate() {
        let batch: Vec<CirRecord> = chunk
            .par_iter()
            .enumerate()
            .map(|(k, pose)| {
                let index = b * BATCH + k;
                let capture = simulate_snapshot(cfg, &probe, index, pose)?;
                let cir = extractor.extract(&capture)?;
                Ok(CirRecord::new(index, &capture, cir))
            })
            .collect::<Result<_>>()?;
        records.extend(batch);
    }
    let stats = aggregate(cfg, &records, None)?;
    if let Some(out) = out {
        let layout = Layout::new(out);
        create_dir(&layout.root)?;
        write_pose_csv(&layout.poses(), &poses)?;
        write_cir_jsonl(&layout.cirs(), &records)?;
        write_campaign_stats(&layout.stats(), &stats, &cfg.aggregation)?;
    }
    Ok(CampaignOutput {
        poses,
        records,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceReport {
    /// Nonlinear follower tuned on the sphere path.
    pub l1_tuning: TuningOutcome,
    pub l1_trace: Vec<TraceStep>,
    /// PID gains tuned on the straight line.
    pub pid_tuning: TuningOutcome,
    /// The line-tuned PID flown on the sphere path (partial if it diverged).
    pub pid_trace: Vec<TraceStep>,
    pub pid_diverged: bool,
}

impl GuidanceReport {
    pub fn l1_rms_m(&self) -> f64 {
        rms_cross_track(&self.l1_trace)
    }

    pub fn pid_rms_m(&self) -> f64 {
        if self.pid_diverged {
            f64::INFINITY
        } else {
            rms_cross_track(&self.pid_trace)
        }
    }
}

#[derive(Serialize)]
struct GuidanceSummary {
    max_accel_mps2: f64,
    timestep_s: f64,
    l1: FollowerConfig,
    l1_rms_m: f64,
    pid: FollowerConfig,
    pid_line_rms_m: f64,
    pid_rms_m: Option<f64>,
    pid_diverged: bool,
}

/// Tunes the nonlinear follower on the sphere path and the PID baseline on
/// a straight line, then flies both on the sphere path.
pub fn run_guidance(cfg: &CampaignConfig, out: Option<&Path>) -> Result<GuidanceReport> {
    cfg.validate()?;
    let g = &cfg.guidance;
    let path = plan(cfg)?;
    let start = VehicleState::at_path_start(&path, g.max_accel_mps2)?;
    let l1_tuning = tune_follower(&path, &g.l1, &start, g.timestep_s)?;
    let l1_trace = follow_trajectory(&path, &l1_tuning.config, &start)?;

    let speed = cfg.trajectory.path_velocity_mps;
    let origin = path[0].position();
    let steps = (g.pid_tuning_line_m / speed * cfg.measurement_rate_hz).ceil() as usize;
    let line: Vec<PoseSample> = (0..=steps)
        .map(|k| {
            let t = k as f64 / cfg.measurement_rate_hz;
            PoseSample::new(t, origin + Neu::new(speed * t, 0.0, 0.0), 0.0)
        })
        .collect();
    let line_start = VehicleState::at_path_start(&line, g.max_accel_mps2)?.offset(Neu::new(
        0.0,
        g.pid_tuning_offset_m,
        0.0,
    ));
    let pid_tuning = tune_follower(&line, &g.pid, &line_start, g.timestep_s)?;
    let (pid_trace, pid_diverged) = match follow_trajectory(&path, &pid_tuning.config, &start) {
        Ok(trace) => (trace, false),
        Err(Error::Divergence { partial, .. }) => (partial, true),
        Err(e) => return Err(e),
    };
    let report = GuidanceReport {
        l1_tuning,
        l1_trace,
        pid_tuning,
        pid_trace,
        pid_diverged,
    };

    if let Some(out) = out {
        let dir = Layout::new(out).guidance();
        create_dir(&dir)?;
        write_trace_csv(&dir.join("l1_trace.csv"), &report.l1_trace)?;
        write_trace_csv(&dir.join("pid_trace.csv"), &report.pid_trace)?;
        let summary = GuidanceSummary {
            max_accel_mps2: g.max_accel_mps2,
            timestep_s: g.timestep_s,
            l1: report.l1_tuning.config,
            l1_rms_m: report.l1_rms_m(),
            pid: report.pid_tuning.config,
            pid_line_rms_m: report.pid_tuning.rms_cross_track_m,
            pid_rms_m: (!pid_diverged).then(|| report.pid_rms_m()),
            pid_diverged,
        };
        let path = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}
