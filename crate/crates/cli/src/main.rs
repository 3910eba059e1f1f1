use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use iterlio_core::io::{self, StampedPose};
use iterlio_core::pipeline::{run_odometry, OdometryOutput};
use iterlio_core::simulator::generate_dataset;
use iterlio_core::trajectory::evaluate;
use iterlio_core::RunConfig;

#[derive(Parser)]
#[command(name = "iterlio", version, about = "LiDAR-IMU odometry with iterated scan undistortion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Sim {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate a trajectory from an IMU stream and a scan directory.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        imu: PathBuf,
        #[arg(long)]
        scans: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        one_pass: bool,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the final feature map as CSV.
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Compare an estimated trajectory against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        max_ate: Option<f64>,
    },
}

enum Outcome {
    Ok,
    ThresholdExceeded,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_sim(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<Outcome> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.sim.seed = seed;
        cfg.sim.imu.seed = seed;
    }
    let data = generate_dataset(&cfg.world(), &cfg.sim)?;
    let scan_dir = out.join("scans");
    fs::create_dir_all(&scan_dir).with_context(|| format!("creating {}", scan_dir.display()))?;
    write(&out.join("imu.csv"), &io::format_imu_csv(&data.imu))?;
    for (k, s) in data.scans.iter().enumerate() {
        write(&scan_dir.join(io::scan_file_name(k)), &io::format_scan_csv(&s.scan))?;
    }
    let gt: Vec<StampedPose> = data
        .truth
        .iter()
        .map(|x| StampedPose {
            t: x.t,
            position: x.position,
            rotation: x.rotation,
        })
        .collect();
    write(&out.join("gt_traj.txt"), &io::format_trajectory(&gt))?;
    write(&out.join("config.txt"), &cfg.dump())?;
    log::info!("wrote {} IMU samples and {} scans to {}", data.imu.len(), data.scans.len(), out.display());
    Ok(Outcome::Ok)
}

fn report_csv(output: &OdometryOutput, one_pass: bool) -> String {
    let mut out = format!("# one_pass={one_pass}\n");
    out.push_str(
        "scan,t,status,inner_iterations,outer_iterations,initial_cost,final_cost,converged,line_factors,plane_factors,final_rms,reintegrations\n",
    );
    for (k, s) in output.scans.iter().enumerate() {
        let _ = write!(out, "{k},{:.9},{}", s.state.t, s.status.name());
        match &s.report {
            Some(r) => {
                let _ = writeln!(
                    out,
                    ",{},{},{:.9e},{:.9e},{},{},{},{:.9e},{}",
                    r.inner_iterations,
                    r.outer_iterations,
                    r.initial_cost,
                    r.final_cost,
                    r.converged,
                    r.num_line_factors,
                    r.num_plane_factors,
                    r.final_rms,
                    r.reintegrations
                );
            }
            None => out.push_str(",,,,,,,,,\n"),
        }
    }
    out
}

fn cmd_run(
    config: Option<&Path>,
    imu: &Path,
    scans: &Path,
    out: &Path,
    one_pass: bool,
    report: Option<&Path>,
    map: Option<&Path>,
) -> Result<Outcome> {
    let mut cfg = load_config(config)?;
    if one_pass {
        cfg.pipeline.estimator.one_pass = true;
    }
    let samples = io::read_imu_csv(imu)?;
    let raw = io::read_scan_dir(scans)?;
    let output = run_odometry(&samples, &raw, &cfg.pipeline).context("odometry failed")?;
    for (k, s) in output.scans.iter().enumerate() {
        let p = s.state.position;
        match &s.report {
            Some(r) => log::info!(
                "scan {k} t={:.3} p=({:.4}, {:.4}, {:.4}) cost {:.3e} -> {:.3e} in {} iterations",
                s.state.t,
                p.x,
                p.y,
                p.z,
                r.initial_cost,
                r.final_cost,
                r.inner_iterations
            ),
            None => log::info!("scan {k} t={:.3} {}", s.state.t, s.status.name()),
        }
    }
    let est: Vec<StampedPose> = output
        .scans
        .iter()
        .map(|s| StampedPose {
            t: s.state.t,
            position: s.state.position,
            rotation: s.state.rotation,
        })
        .collect();
    write(out, &io::format_trajectory(&est))?;
    if let Some(path) = report {
        write(path, &report_csv(&output, cfg.pipeline.estimator.one_pass))?;
    }
    if let Some(path) = map {
        write(path, &output.map.dump_csv())?;
    }
    Ok(Outcome::Ok)
}

fn cmd_eval(gt: &Path, est: &Path, max_ate: Option<f64>) -> Result<Outcome> {
    let gt = io::read_trajectory(gt)?;
    let est = io::read_trajectory(est)?;
    if gt.is_empty() || est.is_empty() {
        bail!("trajectory files must be nonempty");
    }
    let m = evaluate(&gt, &est)?;
    println!("pairs {}", m.pairs);
    println!("ate_rmse {:.9}", m.ate_rmse);
    println!("rpe_translation {:.9}", m.rpe_translation);
    println!("rpe_rotation {:.9}", m.rpe_rotation);
    match max_ate {
        Some(limit) if !(m.ate_rmse <= limit) => {
            eprintln!("ATE-RMSE {:.6} exceeds {limit}", m.ate_rmse);
            Ok(Outcome::ThresholdExceeded)
        }
        _ => Ok(Outcome::Ok),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Sim { config, out, seed } => cmd_sim(config.as_deref(), out, *seed),
        Command::Run {
            config,
            imu,
            scans,
            out,
            one_pass,
            report,
            map,
        } => cmd_run(config.as_deref(), imu, scans, out, *one_pass, report.as_deref(), map.as_deref()),
        Command::Eval { gt, est, max_ate } => cmd_eval(gt, est, *max_ate),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ThresholdExceeded) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
