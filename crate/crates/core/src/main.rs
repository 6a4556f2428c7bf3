use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use deskew::camera::{ellipse_95, ellipsoid_95};
use deskew::io::{
    read_augmented_cloud, read_measurements, read_scan, read_truth, save_config, truth_to_string,
    write_augmented_cloud, write_measurements, write_report, write_scan, AugmentedPoint,
    TruthRecord,
};
use deskew::pipeline::{process_scan, score_cloud, PipelineOptions, RefTime, Space};
use deskew::simulation::{episode_rng, generate_episode, run_monte_carlo, SimConfig};
use deskew::{io::load_config, Error, Result};

/// Probabilistic motion correction of lidar scans.
#[derive(Parser)]
#[command(name = "deskew", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Correct a scan and write the augmented cloud with 3-D covariances.
    Correct(CorrectArgs),
    /// Correct a scan and project it into a camera.
    Project {
        #[command(flatten)]
        common: CorrectArgs,
        /// Camera id from the configuration file.
        #[arg(long)]
        camera: u32,
    },
    /// Run the Monte Carlo consistency experiment.
    Simulate(SimulateArgs),
    /// Score an augmented cloud against ground truth.
    Nees {
        #[arg(long)]
        cloud: PathBuf,
        /// `packet point x y z` (3d) or `packet point u v` (2d) per line.
        #[arg(long)]
        truth: PathBuf,
        /// `3d` or `2d`.
        #[arg(long, default_value = "3d")]
        space: Space,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write 95% confidence ellipses (2d) or ellipsoids (3d) for plotting.
    Ellipses {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long, default_value = "2d")]
        space: Space,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct CorrectArgs {
    #[arg(long)]
    scan: PathBuf,
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// `last-packet`, `image:<seconds>` or `<seconds>`.
    #[arg(long, default_value = "last-packet")]
    t_ref: RefTime,
    /// Skip per-point 3-D covariances.
    #[arg(long)]
    no_point_cov: bool,
    /// Write the binary format instead of text.
    #[arg(long)]
    binary: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML simulation settings; omitted keys use the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON consistency report.
    #[arg(long)]
    out: PathBuf,
    /// JSON overlay data of the first episode.
    #[arg(long)]
    figure: Option<PathBuf>,
    /// Write the first episode as CLI input files into this directory.
    #[arg(long)]
    export: Option<PathBuf>,
}

fn correct(args: &CorrectArgs, camera: Option<u32>) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let scan = read_scan(&args.scan)?;
    let measurements = read_measurements(&args.measurements)?;
    let opts = PipelineOptions {
        t_ref: args.t_ref,
        point_covariance: !args.no_point_cov,
        camera,
    };
    let out = process_scan(&scan, &measurements, &cfg, &opts)?;
    write_augmented_cloud(&out.points, &args.out, args.binary)?;
    let projected = out.points.iter().filter(|p| p.pixel.is_some()).count();
    eprintln!(
        "corrected {} points to t_ref = {:?}{}",
        out.points.len(),
        out.t_ref,
        match camera {
            Some(id) => format!(
                ", projected {projected} into camera {id} ({} dropped)",
                out.dropped
            ),
            None => String::new(),
        }
    );
    Ok(())
}

#[derive(Serialize)]
struct EpisodeInfo {
    v: f64,
    omega: f64,
    last_packet_timestamp: f64,
    image_timestamp: f64,
}

fn export_episode(cfg: &SimConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let ep = generate_episode(cfg, &mut episode_rng(cfg.rng_seed, 0))?;
    write_scan(&ep.scan, dir.join("scan.txt"))?;
    write_measurements(&ep.measurements, dir.join("measurements.txt"))?;
    save_config(&cfg.calibration_config()?, dir.join("config.toml"))?;
    let truth_3d: Vec<TruthRecord> = ep
        .truth_last
        .iter()
        .enumerate()
        .map(|(k, p)| TruthRecord {
            packet_index: k,
            point_index: 0,
            value: p.iter().copied().collect(),
        })
        .collect();
    let truth_2d: Vec<TruthRecord> = ep
        .truth_pixels
        .iter()
        .enumerate()
        .filter_map(|(k, px)| {
            px.map(|uv| TruthRecord {
                packet_index: k,
                point_index: 0,
                value: vec![uv.x, uv.y],
            })
        })
        .collect();
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
    };
    write("truth_3d.txt", truth_to_string(&truth_3d))?;
    write("truth_2d.txt", truth_to_string(&truth_2d))?;
    write_report(
        &EpisodeInfo {
            v: ep.v,
            omega: ep.omega,
            last_packet_timestamp: ep.last_packet_timestamp(),
            image_timestamp: ep.image_timestamp,
        },
        dir.join("episode.json"),
    )
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    }
    if let Some(seed) = args.seed {
        cfg.rng_seed = seed;
    }
    let out = run_monte_carlo(&cfg)?;
    write_report(&out.report, &args.out)?;
    if let Some(path) = &args.figure {
        write_report(&out.example, path)?;
    }
    if let Some(dir) = &args.export {
        export_episode(&cfg, dir)?;
    }
    let r = &out.report;
    println!(
        "3d: {} points, {:.2}% within bounds, mean NEES {:.3}",
        r.points_3d,
        100.0 * r.nees_3d.in_bound_rate,
        r.nees_3d.mean_nees
    );
    if let Some(s) = &r.nees_2d {
        println!(
            "2d: {} points, {:.2}% within bounds, mean NEES {:.3}",
            r.points_2d,
            100.0 * s.in_bound_rate,
            s.mean_nees
        );
    }
    Ok(())
}

fn nees(cloud: &Path, truth: &Path, space: Space, out: &Path) -> Result<()> {
    let cloud = read_augmented_cloud(cloud)?;
    let truth = read_truth(truth, space.dim())?;
    let score = score_cloud(&cloud, &truth, space)?;
    write_report(&score, out)?;
    println!(
        "{} matched, {} missing, {:.2}% within bounds",
        score.matched,
        score.missing,
        100.0 * score.summary.in_bound_rate
    );
    Ok(())
}

fn ellipses_to_string(cloud: &[AugmentedPoint], space: Space) -> String {
    let mut s = String::new();
    match space {
        Space::Pixel => {
            s.push_str("# packet point u v semi_major semi_minor orientation\n");
            for p in cloud {
                if let Some(px) = &p.pixel {
                    let e = ellipse_95(&px.cov);
                    writeln!(
                        s,
                        "{} {} {:?} {:?} {:?} {:?} {:?}",
                        p.packet_index,
                        p.point_index,
                        px.mean.x,
                        px.mean.y,
                        e.semi_major,
                        e.semi_minor,
                        e.orientation
                    )
                    .unwrap();
                }
            }
        }
        Space::Position => {
            s.push_str("# packet point x y z a b c axis_a(3) axis_b(3) axis_c(3)\n");
            for p in cloud {
                if let Some(c) = &p.position_cov {
                    let e = ellipsoid_95(c);
                    write!(s, "{} {}", p.packet_index, p.point_index).unwrap();
                    for v in p
                        .position
                        .iter()
                        .chain(e.semi_axes.iter())
                        .chain(e.axes.iter())
                    {
                        write!(s, " {v:?}").unwrap();
                    }
                    s.push('\n');
                }
            }
        }
    }
    s
}

fn ellipses(cloud: &Path, space: Space, out: &Path) -> Result<()> {
    let cloud = read_augmented_cloud(cloud)?;
    std::fs::write(out, ellipses_to_string(&cloud, space)).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("DESKEW_THREADS") else {
        return Ok(());
    };
    let n: usize = value.parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "DESKEW_THREADS=`{value}` is not a positive integer"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Correct(args) => correct(&args, None),
        Command::Project { common, camera } => correct(&common, Some(camera)),
        Command::Simulate(args) => simulate(&args),
        Command::Nees {
            cloud,
            truth,
            space,
            out,
        } => nees(&cloud, &truth, space, &out),
        Command::Ellipses { cloud, space, out } => ellipses(&cloud, space, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
