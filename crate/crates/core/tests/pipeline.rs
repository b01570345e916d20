use a2a_sounder_core::campaign::{plan, simulate_snapshot, CampaignConfig};
use a2a_sounder_core::channel::SPEED_OF_LIGHT_MPS;
use a2a_sounder_core::{extract_cir, rms_delay_spread};

/// Ground-only scene: the extracted echo must sit at the image-path excess delay.
#[test]
fn ground_echo_lands_at_geometric_excess_delay() {
    let mut cfg = CampaignConfig::default();
    cfg.environment.reflectors.clear();
    cfg.snr_db = f64::INFINITY;
    let probe = cfg.probe_waveform().unwrap();
    let poses = plan(&cfg).unwrap();
    let fs = probe.sample_rate_hz();

    for index in [0, poses.len() / 3, poses.len() / 2, poses.len() - 1] {
        let rx = poses[index];
        let tx = cfg.tx_pose(rx.t_s).unwrap();
        let (a, b) = (tx.position(), rx.position());
        let direct = (b - a).norm();
        let mut image = a;
        image.z = -image.z;
        let excess_s = ((b - image).norm() - direct) / SPEED_OF_LIGHT_MPS;

        let capture = simulate_snapshot(&cfg, &probe, index, &rx).unwrap();
        let cir = extract_cir(&capture, &probe).unwrap();
        assert_eq!(cir.taps.len(), 2, "snapshot {index}: {:?}", cir.taps);
        let strongest = cir.taps.iter().find(|t| t.power_db == 0.0).unwrap();
        assert_eq!(strongest.delay_s, 0.0);
        let echo = cir.taps.iter().find(|t| t.delay_s > 0.0).unwrap();
        let err_samples = (echo.delay_s - excess_s).abs() * fs;
        assert!(
            err_samples < 0.05,
            "snapshot {index}: {err_samples} samples off"
        );

        let spread = rms_delay_spread(&cir.power_delay_profile()).unwrap();
        assert!(spread.rms_delay_spread_s > 0.0 && spread.rms_delay_spread_s < excess_s);
    }
}
