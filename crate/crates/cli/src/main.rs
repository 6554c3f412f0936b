//! `pseudocal` command-line front end.
//!
//! Every failure prints one line, `error: <CODE>: <message>`, to stderr and
//! exits with status 1 (2 for usage errors).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pseudocal::sample::{DecalibrationRange, Split};
use pseudocal::Error;

#[derive(Parser, Debug)]
#[command(
    name = "pseudocal",
    version,
    about = "Camera-LiDAR extrinsic self-calibration toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scenes: clouds, depth PNGs, calib files and a manifest.
    GenScenes(GenScenesArgs),
    /// Draw seeded decalibrations for every frame of a manifest.
    Decalibrate(DecalibrateArgs),
    /// Encode a Velodyne scan as a pillar image blob.
    Pillarize(PillarizeArgs),
    /// Run a cascade on a sample set and print the per-stage trace.
    Estimate(EstimateArgs),
    /// Train a toy regressor on decalibrated manifest frames.
    TrainToy(TrainToyArgs),
    /// Evaluate a cascade over a dataset and write a report.
    Eval(EvalArgs),
    /// Dump the occupancy channel of a pillar image.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct GenScenesArgs {
    /// Scene-set config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecalibrateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// `roll,pitch,yaw,cm` bounds or one of pseudo-pillars, unical-m,
    /// unical-s, unical-alpha.
    #[arg(long, value_parser = parse_range)]
    pub range: DecalibrationRange,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub per_frame: usize,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    /// Skip edge filtering when the samples are later materialized.
    #[arg(long)]
    pub no_canny: bool,
    /// Output sample set; defaults to `samples.toml` next to the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PillarizeArgs {
    /// Velodyne `.bin` scan.
    #[arg(long)]
    pub cloud: PathBuf,
    /// Pillar grid config (TOML); the default grid when omitted.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Sample set written by `decalibrate`.
    #[arg(long)]
    pub sample: PathBuf,
    /// Cascade config (TOML).
    #[arg(long)]
    pub cascade: PathBuf,
    /// Only run the sample with this id.
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainToyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = parse_range)]
    pub range: DecalibrationRange,
    /// Training config (TOML); defaults apply when omitted.
    #[arg(long)]
    pub hyper: Option<PathBuf>,
    /// Output weights blob.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Full experiment config (TOML). Replaces the dataset flags below.
    #[arg(long, conflicts_with_all = ["manifest", "cascade"])]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub cascade: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_range, default_value = "pseudo-pillars")]
    pub range: DecalibrationRange,
    #[arg(long, default_value_t = 1)]
    pub per_frame: usize,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    #[arg(long)]
    pub no_canny: bool,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub pillars: PathBuf,
    /// Also write the occupancy channel as a binary PGM.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    /// Maximum width of the text map in characters.
    #[arg(long, default_value_t = 100)]
    pub width: usize,
}

fn parse_range(s: &str) -> Result<DecalibrationRange, String> {
    let named = match s.to_ascii_lowercase().as_str() {
        "pseudo-pillars" => Some(DecalibrationRange::PSEUDO_PILLARS),
        "unical-m" => Some(DecalibrationRange::UNICAL_M),
        "unical-s" => Some(DecalibrationRange::UNICAL_S),
        "unical-alpha" => Some(DecalibrationRange::UNICAL_ALPHA),
        _ => None,
    };
    if let Some(r) = named {
        return Ok(r);
    }
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| format!("bad range `{s}`: {e}"))?;
    let [roll, pitch, yaw, cm] = v[..] else {
        return Err(format!("range `{s}` needs four values: roll,pitch,yaw,cm"));
    };
    let r = DecalibrationRange::new(roll, pitch, yaw, cm);
    r.validate().map_err(|e| e.to_string())?;
    Ok(r)
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split `{s}` (train, val or test)")),
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("PSEUDOCAL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("PSEUDOCAL_THREADS must be a count, got `{v}`")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    configure_threads()?;
    match cli.command {
        Command::GenScenes(a) => commands::gen_scenes(&a),
        Command::Decalibrate(a) => commands::decalibrate(&a),
        Command::Pillarize(a) => commands::pillarize(&a),
        Command::Estimate(a) => commands::estimate(&a),
        Command::TrainToy(a) => commands::train_toy(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Inspect(a) => commands::inspect(&a),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error: USAGE: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.code(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
