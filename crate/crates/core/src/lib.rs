//! Desk-scale air-to-air channel sounding: Zadoff-Chu probes, a geometric
//! multipath channel between two UAVs, correlation-based CIR extraction,
//! delay-spread and path-loss statistics, spherical measurement trajectories,
//! and a point-mass trajectory-following simulator.

// Negated float comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod campaign;
pub mod channel;
pub mod dsp;
pub mod error;
pub mod guidance;
pub mod iq;
pub mod metrics;
pub mod sounder;
pub mod trajectory;
pub mod waveform;

pub use channel::{
    apply_channel, path_loss_db, simulate_channel, AntennaModel, ChannelRealization, Environment,
    EnvironmentConfig, MultipathComponent, PathLossModel, PathOrigin,
};
pub use error::{Error, Result};
pub use metrics::{
    aggregate_campaign, fit_path_loss, rms_delay_spread, CampaignStats, DelayMetrics, LinkMetrics,
};
pub use sounder::{
    estimate_noise_floor, extract_cir, received_power_db, ExtractedCir, Extractor, ExtractorConfig,
    SounderCapture,
};
pub use trajectory::{
    assign_heading, sphere_path_arclength, sphere_point_parametric, Neu, PoseSample,
    SphereTrajectoryParams,
};
pub use waveform::{autocorrelation_profile, generate_zc, ProbeWaveform, ZcParams};
