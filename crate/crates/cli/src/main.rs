use std::path::{Path, PathBuf};
use std::process::ExitCode;

use a2a_sounder_core::campaign::{
    run_analyze, run_campaign, run_extract, run_guidance, run_plan, run_probe, run_simulate,
    CampaignConfig, Layout,
};
use a2a_sounder_core::metrics::CampaignStats;
use a2a_sounder_core::Error;
use clap::{Args, Parser, Subcommand};

/// Air-to-air channel-sounding simulation and analysis.
#[derive(Parser)]
#[command(name = "a2a-sounder", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the probe waveform (probe.iq + probe.json).
    Probe(Common),
    /// Write the receiver pose schedule (poses.csv).
    Plan(Common),
    /// Simulate one capture per pose (captures/).
    Simulate(Common),
    /// Extract CIRs from the captures (cirs.jsonl).
    Extract(Common),
    /// Aggregate CIRs into campaign statistics (stats/).
    Analyze(Common),
    /// Run plan, simulate, extract and analyze in memory.
    Campaign(Common),
    /// Tune and compare the trajectory followers (guidance/).
    Guidance(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file; defaults apply to anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to `output_dir` in the config, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<(CampaignConfig, PathBuf), Error> {
        let mut cfg = match &self.config {
            Some(path) => CampaignConfig::load(path)?,
            None => CampaignConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok((cfg, out))
    }
}

fn print_stats(out: &Path, stats: &CampaignStats) {
    let detected = stats.links.iter().filter(|l| l.tap_count > 0).count();
    println!(
        "snapshots={} with_taps={} stats={}",
        stats.links.len(),
        detected,
        Layout::new(out).stats().display()
    );
}

fn run(command: &Command) -> Result<(), Error> {
    match command {
        Command::Probe(c) => {
            let (cfg, out) = c.resolve()?;
            let probe = run_probe(&cfg, &out)?;
            println!(
                "samples={} file={}",
                probe.samples().len(),
                Layout::new(&out)
                    .probe_stem()
                    .with_extension("iq")
                    .display()
            );
        }
        Command::Plan(c) => {
            let (cfg, out) = c.resolve()?;
            let poses = run_plan(&cfg, &out)?;
            println!(
                "poses={} file={}",
                poses.len(),
                Layout::new(&out).poses().display()
            );
        }
        Command::Simulate(c) => {
            let (cfg, out) = c.resolve()?;
            let n = run_simulate(&cfg, &out)?;
            println!(
                "captures={n} dir={}",
                Layout::new(&out).captures().display()
            );
        }
        Command::Extract(c) => {
            let (cfg, out) = c.resolve()?;
            let records = run_extract(&cfg, &out)?;
            println!(
                "cirs={} file={}",
                records.len(),
                Layout::new(&out).cirs().display()
            );
        }
        Command::Analyze(c) => {
            let (cfg, out) = c.resolve()?;
            print_stats(&out, &run_analyze(&cfg, &out)?);
        }
        Command::Campaign(c) => {
            let (cfg, out) = c.resolve()?;
            print_stats(&out, &run_campaign(&cfg, Some(&out))?.stats);
        }
        Command::Guidance(c) => {
            let (cfg, out) = c.resolve()?;
            let report = run_guidance(&cfg, Some(&out))?;
            println!(
                "l1_rms_m={} pid_rms_m={} pid_diverged={} dir={}",
                report.l1_rms_m(),
                report.pid_rms_m(),
                report.pid_diverged,
                Layout::new(&out).guidance().display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: class={} code={code} message={message:?}", e.class());
            ExitCode::from(code as u8)
        }
    }
}
