//! Per-snapshot and campaign-level statistics: RMS delay spread, log-distance
//! path-loss fitting, and the binned power / CDF / grid summaries.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::PathLossModel;
use crate::error::{Error, Result};
use crate::sounder::{received_power_db, ExtractedCir};
use crate::trajectory::PoseSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayMetrics {
    pub mean_delay_s: f64,
    pub rms_delay_spread_s: f64,
    pub component_count: usize,
    /// Linear component powers, in input order.
    pub powers: Vec<f64>,
}

/// Power-weighted mean delay and RMS delay spread of `(power, delay)` taps.
pub fn rms_delay_spread(taps: &[(f64, f64)]) -> Result<DelayMetrics> {
    if taps.is_empty() {
        return Err(Error::Input("delay spread of an empty tap set".into()));
    }
    if let Some((p, d)) = taps
        .iter()
        .find(|(p, d)| !(p.is_finite() && *p >= 0.0 && d.is_finite()))
    {
        return Err(Error::Input(format!(
            "invalid tap (power {p}, delay {d}): powers must be finite and non-negative"
        )));
    }
    let total: f64 = taps.iter().map(|(p, _)| p).sum();
    if total <= 0.0 {
        return Err(Error::Input("all tap powers are zero".into()));
    }
    // Moments about the first delay limit cancellation for large offsets.
    let origin = taps[0].1;
    let offset = taps.iter().map(|(p, d)| p * (d - origin)).sum::<f64>() / total;
    let mean = origin + offset;
    let second = taps
        .iter()
        .map(|(p, d)| p * (d - origin - offset).powi(2))
        .sum::<f64>()
        / total;
    Ok(DelayMetrics {
        mean_delay_s: mean,
        rms_delay_spread_s: second.sqrt(),
        component_count: taps.len(),
        powers: taps.iter().map(|(p, _)| *p).collect(),
    })
}

/// Least-squares fit of `PL = PL(d0) + 10 gamma log10(d/d0)` to
/// `(distance, path loss dB)` samples. `sigma` is the residual standard
/// deviation with `n - 2` degrees of freedom (0 for two samples).
pub fn fit_path_loss(samples: &[(f64, f64)], d0_m: f64) -> Result<PathLossModel> {
    if !(d0_m.is_finite() && d0_m > 0.0) {
        return Err(Error::Parameter(format!(
            "reference distance must be positive, got {d0_m}"
        )));
    }
    if samples.len() < 2 {
        return Err(Error::Fit(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if let Some((d, pl)) = samples
        .iter()
        .find(|(d, pl)| !(d.is_finite() && *d > 0.0 && pl.is_finite()))
    {
        return Err(Error::Input(format!("invalid sample (d = {d}, PL = {pl})")));
    }
    let (min_d, max_d) = samples
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), (d, _)| {
            (lo.min(*d), hi.max(*d))
        });
    if max_d / min_d < 1.5 {
        return Err(Error::Fit(format!(
            "distances span only a factor {:.3} ({min_d} to {max_d} m); need at least 1.5",
            max_d / min_d
        )));
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples
        .iter()
        .map(|(d, _)| 10.0 * (d / d0_m).log10())
        .collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = samples.iter().map(|(_, pl)| pl).sum::<f64>() / n;
    let (sxy, sxx) = xs
        .iter()
        .zip(samples)
        .fold((0.0, 0.0), |(sxy, sxx), (x, (_, y))| {
            let dx = x - x_mean;
            (sxy + dx * (y - y_mean), sxx + dx * dx)
        });
    let gamma = sxy / sxx;
    let pl_d0_db = y_mean - gamma * x_mean;
    let ssr: f64 = xs
        .iter()
        .zip(samples)
        .map(|(x, (_, y))| (y - pl_d0_db - gamma * x).powi(2))
        .sum();
    let sigma_db = if samples.len() > 2 {
        (ssr / (n - 2.0)).sqrt()
    } else {
        0.0
    };
    Ok(PathLossModel {
        pl_d0_db,
        d0_m,
        gamma,
        sigma_db,
    })
}

/// Empirical CDF `P(X <= x)`: one point per distinct sorted value.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in sorted.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = p,
            _ => out.push((*x, p)),
        }
    }
    out
}

/// Closed altitude interval `[lo, hi]` in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AltitudeBand {
    pub lo_m: f64,
    pub hi_m: f64,
}

impl AltitudeBand {
    pub fn label(&self) -> String {
        format!("{}-{}", self.lo_m, self.hi_m)
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo_m + self.hi_m)
    }

    fn contains(&self, up: f64, last: bool) -> bool {
        up >= self.lo_m && (up < self.hi_m || (last && up <= self.hi_m))
    }
}

fn uniform_bands(lo: f64, hi: f64, count: usize) -> Vec<AltitudeBand> {
    let width = (hi - lo) / count as f64;
    (0..count)
        .map(|k| AltitudeBand {
            lo_m: lo + width * k as f64,
            hi_m: if k + 1 == count {
                hi
            } else {
                lo + width * (k + 1) as f64
            },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationConfig {
    pub altitude_min_m: f64,
    pub altitude_max_m: f64,
    pub altitude_bin_m: f64,
    pub heading_bin_deg: f64,
    /// Bands for the delay-spread CDFs.
    pub delay_spread_bands: Vec<AltitudeBand>,
    /// Altitude slices for the East/North power grids.
    pub grid_slices: Vec<AltitudeBand>,
    pub grid_cell_m: f64,
    /// Reference distance for the path-loss fit.
    pub d0_m: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            altitude_min_m: 45.0,
            altitude_max_m: 85.0,
            altitude_bin_m: 2.0,
            heading_bin_deg: 10.0,
            delay_spread_bands: uniform_bands(45.0, 85.0, 4),
            grid_slices: uniform_bands(45.0, 85.0, 5),
            grid_cell_m: 4.0,
            d0_m: 1.0,
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(self.altitude_max_m > self.altitude_min_m) {
            return Err(Error::config(
                "aggregation.altitude_max_m",
                "must exceed altitude_min_m",
            ));
        }
        for (field, v) in [
            ("aggregation.altitude_bin_m", self.altitude_bin_m),
            ("aggregation.heading_bin_deg", self.heading_bin_deg),
            ("aggregation.grid_cell_m", self.grid_cell_m),
            ("aggregation.d0_m", self.d0_m),
        ] {
            if !positive(v) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        for (field, bands) in [
            ("aggregation.delay_spread_bands", &self.delay_spread_bands),
            ("aggregation.grid_slices", &self.grid_slices),
        ] {
            if bands.iter().any(|b| !(b.hi_m > b.lo_m)) {
                return Err(Error::config(field, "every band needs hi_m > lo_m"));
            }
        }
        Ok(())
    }

    pub fn altitude_bin_count(&self) -> usize {
        ((self.altitude_max_m - self.altitude_min_m) / self.altitude_bin_m)
            .ceil()
            .max(1.0) as usize
    }

    /// Altitude bin index; values outside the range go to the edge bins.
    pub fn altitude_bin(&self, up_m: f64) -> usize {
        let idx = ((up_m - self.altitude_min_m) / self.altitude_bin_m).floor();
        (idx.max(0.0) as usize).min(self.altitude_bin_count() - 1)
    }

    pub fn altitude_bin_center(&self, bin: usize) -> f64 {
        self.altitude_min_m + (bin as f64 + 0.5) * self.altitude_bin_m
    }

    /// Heading bin centre in degrees, bins centred on multiples of the
    /// width and wrapped into `[-180, 180)`.
    pub fn heading_bin_center(&self, heading_deg: f64) -> f64 {
        let centre = (heading_deg / self.heading_bin_deg).round() * self.heading_bin_deg;
        let wrapped = (centre + 180.0).rem_euclid(360.0) - 180.0;
        // Snap rounding noise so keys are stable.
        (wrapped * 1e9).round() / 1e9
    }
}

/// One snapshot to aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub index: usize,
    pub tx_pose: PoseSample,
    pub rx_pose: PoseSample,
    pub cir: ExtractedCir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub index: usize,
    pub t_s: f64,
    pub north_m: f64,
    pub east_m: f64,
    pub up_m: f64,
    pub heading_deg: f64,
    pub distance_m: f64,
    /// Elevation of the receiver as seen from the transmitter.
    pub elevation_deg: f64,
    pub tap_count: usize,
    /// `None` when no tap was detected.
    pub received_power_db: Option<f64>,
    pub mean_delay_s: Option<f64>,
    pub rms_delay_spread_s: Option<f64>,
}

impl LinkMetrics {
    pub fn from_snapshot(s: &Snapshot) -> Result<Self> {
        let link = s.rx_pose.position() - s.tx_pose.position();
        let distance = link.norm();
        let horizontal = link.x.hypot(link.y);
        let delay = if s.cir.taps.is_empty() {
            None
        } else {
            Some(rms_delay_spread(&s.cir.power_delay_profile())?)
        };
        Ok(Self {
            index: s.index,
            t_s: s.rx_pose.t_s,
            north_m: s.rx_pose.north_m,
            east_m: s.rx_pose.east_m,
            up_m: s.rx_pose.up_m,
            heading_deg: s.rx_pose.heading_rad.to_degrees(),
            distance_m: distance,
            elevation_deg: link.z.atan2(horizontal).to_degrees(),
            tap_count: s.cir.taps.len(),
            received_power_db: received_power_db(&s.cir).ok(),
            mean_delay_s: delay.as_ref().map(|d| d.mean_delay_s),
            rms_delay_spread_s: delay.map(|d| d.rms_delay_spread_s),
        })
    }
}

/// Mean of dB values in one bin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BinMean {
    pub count: usize,
    pub mean_db: f64,
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    count: usize,
    sum: f64,
}

impl Accumulator {
    fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
    }

    fn finish(&self) -> BinMean {
        BinMean {
            count: self.count,
            mean_db: self.sum / self.count as f64,
        }
    }
}

/// Ordered-float key for bin maps (values are snapped bin centres).
#[derive(Debug, Clone, Copy)]
struct Key(f64);
impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AltitudeBin {
    pub center_m: f64,
    /// Snapshots in the bin, including those without detected taps.
    pub snapshot_count: usize,
    pub power: Option<BinMean>,
    /// Per-heading-bin means: `(heading bin centre deg, mean)`.
    pub by_heading: Vec<(f64, BinMean)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySpreadCdf {
    pub band: AltitudeBand,
    /// `(tau_rms ns, P(X <= tau))`.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerGrid {
    pub slice: AltitudeBand,
    /// `(east cell centre m, north cell centre m, mean)`.
    pub cells: Vec<(f64, f64, BinMean)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub links: Vec<LinkMetrics>,
    pub altitude_bins: Vec<AltitudeBin>,
    pub heading_bins: Vec<(f64, BinMean)>,
    pub delay_spread_cdfs: Vec<DelaySpreadCdf>,
    pub power_grids: Vec<PowerGrid>,
    /// `Err` message when the link distances do not support a fit (e.g. a
    /// receiver orbiting the transmitter at a fixed radius).
    pub path_loss_fit: std::result::Result<PathLossModel, String>,
}

/// Aggregates snapshots into campaign statistics. Snapshots are processed in
/// index order, so the result does not depend on input order.
pub fn aggregate_campaign(
    snapshots: &[Snapshot],
    cfg: &AggregationConfig,
) -> Result<CampaignStats> {
    if snapshots.is_empty() {
        return Err(Error::Input("no snapshots to aggregate".into()));
    }
    cfg.validate()?;
    let mut ordered: Vec<&Snapshot> = snapshots.iter().collect();
    ordered.sort_by_key(|s| s.index);
    let links: Vec<LinkMetrics> = ordered
        .iter()
        .map(|s| LinkMetrics::from_snapshot(s))
        .collect::<Result<_>>()?;

    let bins = cfg.altitude_bin_count();
    let mut alt_counts = vec![0usize; bins];
    let mut alt_power = vec![Accumulator::default(); bins];
    let mut alt_heading: Vec<BTreeMap<Key, Accumulator>> = vec![BTreeMap::new(); bins];
    let mut heading: BTreeMap<Key, Accumulator> = BTreeMap::new();
    let mut grids: Vec<BTreeMap<(Key, Key), Accumulator>> =
        vec![BTreeMap::new(); cfg.grid_slices.len()];
    let mut spreads: Vec<Vec<f64>> = vec![Vec::new(); cfg.delay_spread_bands.len()];
    let mut pl_samples = Vec::new();

    let cell_center = |x: f64| ((x / cfg.grid_cell_m).floor() + 0.5) * cfg.grid_cell_m;
    for link in &links {
        let bin = cfg.altitude_bin(link.up_m);
        alt_counts[bin] += 1;
        if let Some(p) = link.received_power_db {
            let h = Key(cfg.heading_bin_center(link.heading_deg));
            alt_power[bin].push(p);
            alt_heading[bin].entry(h).or_default().push(p);
            heading.entry(h).or_default().push(p);
            let last = cfg.grid_slices.len().saturating_sub(1);
            for (k, slice) in cfg.grid_slices.iter().enumerate() {
                if slice.contains(link.up_m, k == last) {
                    grids[k]
                        .entry((
                            Key(cell_center(link.east_m)),
                            Key(cell_center(link.north_m)),
                        ))
                        .or_default()
                        .push(p);
                }
            }
            pl_samples.push((link.distance_m, -p));
        }
        if let Some(tau) = link.rms_delay_spread_s {
            let last = cfg.delay_spread_bands.len().saturating_sub(1);
            for (k, band) in cfg.delay_spread_bands.iter().enumerate() {
                if band.contains(link.up_m, k == last) {
                    spreads[k].push(tau * 1e9);
                }
            }
        }
    }

    let altitude_bins = (0..bins)
        .map(|b| AltitudeBin {
            center_m: cfg.altitude_bin_center(b),
            snapshot_count: alt_counts[b],
            power: (alt_power[b].count > 0).then(|| alt_power[b].finish()),
            by_heading: alt_heading[b]
                .iter()
                .map(|(k, acc)| (k.0, acc.finish()))
                .collect(),
        })
        .collect();
    let heading_bins = heading.iter().map(|(k, acc)| (k.0, acc.finish())).collect();
    let delay_spread_cdfs = cfg
        .delay_spread_bands
        .iter()
        .zip(&spreads)
        .map(|(band, values)| DelaySpreadCdf {
            band: *band,
            points: empirical_cdf(values),
        })
        .collect();
    let power_grids = cfg
        .grid_slices
        .iter()
        .zip(&grids)
        .map(|(slice, cells)| PowerGrid {
            slice: *slice,
            cells: cells
                .iter()
                .map(|((e, n), acc)| (e.0, n.0, acc.finish()))
                .collect(),
        })
        .collect();
    let path_loss_fit = fit_path_loss(&pl_samples, cfg.d0_m).map_err(|e| e.to_string());

    Ok(CampaignStats {
        links,
        altitude_bins,
        heading_bins,
        delay_spread_cdfs,
        power_grids,
        path_loss_fit,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn write_text(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct PathLossFitFile<'a> {
    pl_d0: Option<f64>,
    d0: f64,
    gamma: Option<f64>,
    sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

/// Writes the plot-ready exports into `dir`.
pub fn write_campaign_stats(
    dir: &Path,
    stats: &CampaignStats,
    cfg: &AggregationConfig,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut text = String::from("bin_center_m,mean_db,heading_bin_deg\n");
    for bin in &stats.altitude_bins {
        for (h, mean) in &bin.by_heading {
            text += &format!("{},{},{}\n", bin.center_m, mean.mean_db, h);
        }
    }
    write_text(&dir.join("power_vs_altitude.csv"), text)?;

    let mut text = String::from("heading_bin_deg,mean_db\n");
    for (h, mean) in &stats.heading_bins {
        text += &format!("{},{}\n", h, mean.mean_db);
    }
    write_text(&dir.join("power_vs_heading.csv"), text)?;

    for cdf in &stats.delay_spread_cdfs {
        let mut text = String::from("tau_ns,cdf\n");
        for (x, p) in &cdf.points {
            text += &format!("{x},{p}\n");
        }
        write_text(
            &dir.join(format!("delay_spread_cdf_{}.csv", cdf.band.label())),
            text,
        )?;
    }

    for grid in &stats.power_grids {
        let mut text = String::from("east_m,north_m,mean_db\n");
        for (e, n, mean) in &grid.cells {
            text += &format!("{e},{n},{}\n", mean.mean_db);
        }
        write_text(
            &dir.join(format!("power_grid_alt{}.csv", grid.slice.center())),
            text,
        )?;
    }

    let mut text = String::from(
        "index,t_s,north_m,east_m,up_m,heading_deg,distance_m,elevation_deg,tap_count,received_power_db,mean_delay_s,rms_delay_spread_s\n",
    );
    for l in &stats.links {
        text += &format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            l.index,
            l.t_s,
            l.north_m,
            l.east_m,
            l.up_m,
            l.heading_deg,
            l.distance_m,
            l.elevation_deg,
            l.tap_count,
            opt(l.received_power_db),
            opt(l.mean_delay_s),
            opt(l.rms_delay_spread_s)
        );
    }
    write_text(&dir.join("link_metrics.csv"), text)?;

    let fit = match &stats.path_loss_fit {
        Ok(m) => PathLossFitFile {
            pl_d0: Some(m.pl_d0_db),
            d0: m.d0_m,
            gamma: Some(m.gamma),
            sigma: Some(m.sigma_db),
            error: None,
        },
        Err(msg) => PathLossFitFile {
            pl_d0: None,
            d0: cfg.d0_m,
            gamma: None,
            sigma: None,
            error: Some(msg),
        },
    };
    let json = serde_json::to_string_pretty(&fit).expect("fit serializes");
    write_text(&dir.join("path_loss_fit.json"), json + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sounder::CirTap;
    use crate::trajectory::Neu;
    use num_complex::Complex64;
    use proptest::prelude::*;

    /// Independent route: pairwise form
    /// `var = sum_ij P_i P_j (t_i - t_j)^2 / (2 (sum P)^2)`, no mean needed.
    fn pairwise_spread(taps: &[(f64, f64)]) -> f64 {
        let total: f64 = taps.iter().map(|t| t.0).sum();
        let mut acc = 0.0;
        for (pi, ti) in taps {
            for (pj, tj) in taps {
                acc += pi * pj * (ti - tj) * (ti - tj);
            }
        }
        (acc / (2.0 * total * total)).sqrt()
    }

    #[test]
    fn delay_spread_examples() {
        let single = rms_delay_spread(&[(0.7, 12e-9)]).unwrap();
        assert_eq!(single.rms_delay_spread_s, 0.0);
        assert_eq!(single.mean_delay_s, 12e-9);

        let two = rms_delay_spread(&[(1.0, 5e-9), (1.0, 25e-9)]).unwrap();
        assert_eq!(two.rms_delay_spread_s, 10e-9);

        let m = rms_delay_spread(&[(1.0, 0.0), (0.25, 40e-9)]).unwrap();
        assert!((m.mean_delay_s - 8e-9).abs() < 1e-21);
        assert!((m.rms_delay_spread_s - 16e-9).abs() < 1e-21);
        assert_eq!(m.component_count, 2);
    }

    #[test]
    fn delay_spread_rejects_bad_input() {
        assert!(rms_delay_spread(&[]).is_err());
        assert!(rms_delay_spread(&[(0.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(rms_delay_spread(&[(-1.0, 1.0)]).is_err());
    }

    proptest! {
        #[test]
        fn spread_matches_pairwise_oracle(taps in prop::collection::vec((1e-6..10.0f64, 0.0..2e-6f64), 1..12)) {
            let fast = rms_delay_spread(&taps).unwrap().rms_delay_spread_s;
            let oracle = pairwise_spread(&taps);
            prop_assert!((fast - oracle).abs() <= 1e-12 * oracle.max(1e-18) + 1e-24);
        }

        #[test]
        fn spread_is_scale_and_shift_invariant(
            taps in prop::collection::vec((1e-3..10.0f64, 0.0..1e-6f64), 1..10),
            c in 1e-3..1e3f64, shift in -1e-6..1e-6f64,
        ) {
            let base = rms_delay_spread(&taps).unwrap().rms_delay_spread_s;
            let scaled: Vec<_> = taps.iter().map(|(p, d)| (p * c, *d)).collect();
            let shifted: Vec<_> = taps.iter().map(|(p, d)| (*p, d + shift)).collect();
            let tol = 1e-9 * base + 1e-21;
            prop_assert!((rms_delay_spread(&scaled).unwrap().rms_delay_spread_s - base).abs() <= tol);
            prop_assert!((rms_delay_spread(&shifted).unwrap().rms_delay_spread_s - base).abs() <= tol);
        }

        #[test]
        fn noiseless_fit_recovers_model(pl0 in 20.0..60.0f64, gamma in 1.5..4.0f64, d0 in 0.5..5.0f64) {
            let model = PathLossModel { pl_d0_db: pl0, d0_m: d0, gamma, sigma_db: 0.0 };
            let samples: Vec<_> = (0..20)
                .map(|k| {
                    let d = d0 * (1.0 + k as f64 * 0.7);
                    (d, crate::channel::path_loss_db(&model, d, None).unwrap())
                })
                .collect();
            let fit = fit_path_loss(&samples, d0).unwrap();
            prop_assert!((fit.gamma - gamma).abs() < 1e-9);
            prop_assert!((fit.pl_d0_db - pl0).abs() < 1e-9);
            prop_assert!(fit.sigma_db < 1e-9);
        }

        #[test]
        fn cdf_is_monotone_and_ends_at_one(values in prop::collection::vec(0.0..100.0f64, 1..200)) {
            let cdf = empirical_cdf(&values);
            prop_assert_eq!(cdf.last().unwrap().1, 1.0);
            for w in cdf.windows(2) {
                prop_assert!(w[0].0 < w[1].0);
                prop_assert!(w[0].1 < w[1].1);
            }
            // Right-continuous step: P(X <= x_k) counts every sample <= x_k.
            for (x, p) in &cdf {
                let count = values.iter().filter(|v| *v <= x).count() as f64;
                prop_assert_eq!(*p, count / values.len() as f64);
            }
        }
    }

    #[test]
    fn two_distance_fit_passes_through_both_points() {
        let fit = fit_path_loss(&[(2.0, 50.0), (8.0, 62.0)], 1.0).unwrap();
        let at = |d: f64| fit.pl_d0_db + 10.0 * fit.gamma * d.log10();
        assert!((at(2.0) - 50.0).abs() < 1e-12);
        assert!((at(8.0) - 62.0).abs() < 1e-12);
        assert_eq!(fit.sigma_db, 0.0);
    }

    #[test]
    fn degenerate_distances_fail_to_fit() {
        let samples: Vec<_> = (0..10).map(|k| (20.0, 60.0 + k as f64)).collect();
        assert!(matches!(fit_path_loss(&samples, 1.0), Err(Error::Fit(_))));
        assert!(matches!(
            fit_path_loss(&[(1.0, 1.0)], 1.0),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn constant_spread_cdf_is_a_single_step() {
        assert_eq!(empirical_cdf(&[2.0, 2.0, 2.0]), vec![(2.0, 1.0)]);
    }

    #[test]
    fn heading_bins_wrap() {
        let cfg = AggregationConfig::default();
        assert_eq!(cfg.heading_bin_center(178.0), -180.0);
        assert_eq!(cfg.heading_bin_center(-176.0), -180.0);
        assert_eq!(cfg.heading_bin_center(4.9), 0.0);
        assert_eq!(cfg.heading_bin_center(-15.1), -20.0);
        assert_eq!(cfg.altitude_bin(45.0), 0);
        assert_eq!(cfg.altitude_bin(85.0), 19);
        assert_eq!(cfg.altitude_bin(30.0), 0);
    }

    fn snapshot(index: usize, up: f64, heading: f64, gain: f64) -> Snapshot {
        let tap = |g: f64, d: f64| CirTap {
            delay_s: d,
            power_db: 0.0,
            gain: Complex64::new(g, 0.0),
        };
        Snapshot {
            index,
            tx_pose: PoseSample::new(0.0, Neu::new(0.0, 0.0, 65.0), 0.0),
            rx_pose: PoseSample::new(index as f64 * 0.1, Neu::new(-10.0, 3.0, up), heading),
            cir: ExtractedCir {
                taps: vec![tap(gain, 0.0), tap(gain * 0.1, 20e-9)],
                noise_floor_db: -70.0,
                detection_threshold_db: -57.0,
                reference_delay_samples: Some(3.0),
            },
        }
    }

    #[test]
    fn identical_snapshots_give_identical_bin_means() {
        let snaps: Vec<_> = (0..7).map(|i| snapshot(i, 60.3, 0.2, 1e-3)).collect();
        let stats = aggregate_campaign(&snaps, &AggregationConfig::default()).unwrap();
        let p = stats.links[0].received_power_db.unwrap();
        let tau = stats.links[0].rms_delay_spread_s.unwrap();
        assert!(stats.links.iter().all(|l| l.received_power_db == Some(p)));
        let occupied: Vec<_> = stats
            .altitude_bins
            .iter()
            .filter(|b| b.snapshot_count > 0)
            .collect();
        assert_eq!(occupied.len(), 1);
        assert!((occupied[0].power.unwrap().mean_db - p).abs() < 1e-12);
        assert_eq!(stats.heading_bins.len(), 1);
        assert!((stats.heading_bins[0].1.mean_db - p).abs() < 1e-12);
        let band = stats
            .delay_spread_cdfs
            .iter()
            .find(|c| !c.points.is_empty())
            .unwrap();
        assert_eq!(band.points, vec![(tau * 1e9, 1.0)]);
        assert!(stats.path_loss_fit.is_err());
    }

    #[test]
    fn every_snapshot_lands_in_one_altitude_bin_regardless_of_order() {
        let mut snaps: Vec<_> = (0..40)
            .map(|i| {
                snapshot(
                    i,
                    40.0 + i as f64 * 1.2,
                    i as f64 * 0.3 - 3.0,
                    1e-3 * (1.0 + i as f64),
                )
            })
            .collect();
        let cfg = AggregationConfig::default();
        let a = aggregate_campaign(&snaps, &cfg).unwrap();
        snaps.reverse();
        let b = aggregate_campaign(&snaps, &cfg).unwrap();
        assert_eq!(a, b);
        let total: usize = a.altitude_bins.iter().map(|b| b.snapshot_count).sum();
        assert_eq!(total, 40);
    }

    #[test]
    fn empty_campaign_is_an_error() {
        assert!(aggregate_campaign(&[], &AggregationConfig::default()).is_err());
    }
}
