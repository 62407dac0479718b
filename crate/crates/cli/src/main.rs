//! `mtr`: synthesise puppet datasets, train, animate and evaluate.
//!
//! Configuration resolves as: preset defaults, then `--set` flags, then the
//! `--config` file, with later sources winning.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mtr_core::config::RunConfig;
use mtr_core::eval::{cross_video_pairs, evaluate, self_pairs_of, Oracle, Protocol};
use mtr_core::inference::Animator;
use mtr_core::iuv::dataset::{load_image_png, save_image_png, save_mask_png};
use mtr_core::iuv::{load_split, read_iuvz, synth_dataset, PuppetSpec};
use mtr_core::metrics::{MarkerEstimator, RandomProjection};
use mtr_core::trainer::train;
use mtr_core::Error;

#[derive(Parser)]
#[command(name = "mtr", version, about = "One-shot human motion transfer on synthetic puppet data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Full-size settings: 128 -> 256 with super-resolution.
    Paper,
    /// 64x64, narrow layers, 1/1000 schedule.
    Desk,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic puppet dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Puppet spec as JSON; defaults to the built-in puppet at `--size`.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 1)]
        videos: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value = "train")]
        split: String,
        /// Replace an existing dataset.
        #[arg(long)]
        force: bool,
    },
    /// Run the staged training schedule.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Paper)]
        preset: Preset,
        /// `dotted.key=value` override; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "train")]
        split: String,
        /// Stage checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Animate a source frame with a directory of driving IUV maps.
    Animate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source_image: PathBuf,
        #[arg(long)]
        source_iuv: PathBuf,
        /// `*.iuvz` files, used in file-name order.
        #[arg(long)]
        driving_iuv_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint (or `oracle`) under a protocol.
    Eval {
        /// Stage checkpoint directory, or `oracle` for the ground-truth copier.
        #[arg(long)]
        checkpoint: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "self-reconstruction")]
        protocol: String,
        /// Cross-video pair count.
        #[arg(long, default_value_t = 50)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        pair_seed: u64,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Format { .. } | Error::Io { .. } | Error::Validation(_) => 3,
        Error::NonFinite { .. } | Error::Numeric(_) => 4,
        _ => 1,
    }
}

fn resolve_config(preset: Preset, overrides: &[String], file: Option<&Path>) -> Result<RunConfig, Error> {
    let mut cfg = match preset {
        Preset::Paper => RunConfig::default(),
        Preset::Desk => RunConfig::desk(),
    };
    for o in overrides {
        cfg = cfg.set(o)?;
    }
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg = cfg.merge_toml(&text)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { out, spec, seed, frames, videos, size, split, force } => {
            let spec = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::io(p.display().to_string(), e))?;
                    serde_json::from_str::<PuppetSpec>(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                }
                None => PuppetSpec::default_for(size),
            };
            let manifest = synth_dataset(&out, &spec, &split, seed, videos, frames, force)?;
            println!("wrote {} frames in {videos} video(s) to {}", manifest.total_frames(), out.display());
        }
        Command::Train { data, out, config, preset, overrides, split, resume } => {
            let cfg = resolve_config(preset, &overrides, config.as_deref())?;
            let videos = load_split(&data, &split)?;
            if videos.is_empty() {
                return Err(Error::Data(format!("no videos in {}/{split}", data.display())));
            }
            let report = train(&cfg, &videos, &out, resume.as_deref())?;
            for s in &report.stages {
                println!(
                    "{:<8} {:>7} iters  probe rec {:.4} -> {:.4}  ({:.1}s)  {}",
                    s.name,
                    s.iterations,
                    s.probe_rec_start,
                    s.probe_rec_end,
                    s.seconds,
                    s.checkpoint.display()
                );
            }
            println!("loss log: {}", report.loss_log.display());
        }
        Command::Animate { checkpoint, source_image, source_iuv, driving_iuv_dir, out } => {
            let animator = Animator::from_checkpoint(&checkpoint)?;
            let src_img = load_image_png(&source_image)?;
            let src_iuv = read_iuvz(&source_iuv)?;
            let mut paths: Vec<PathBuf> = fs::read_dir(&driving_iuv_dir)
                .map_err(|e| Error::io(driving_iuv_dir.display().to_string(), e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "iuvz"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::Data(format!("no .iuvz files in {}", driving_iuv_dir.display())));
            }
            let driving = paths.iter().map(|p| read_iuvz(p)).collect::<Result<Vec<_>, _>>()?;
            let frames = animator.animate(&src_img, &src_iuv, &driving)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
            for (t, (img, mask)) in frames.iter().enumerate() {
                save_image_png(img, &out.join(format!("frame_{t:06}.png")))?;
                save_mask_png(mask, &out.join(format!("mask_{t:06}.png")))?;
            }
            println!("wrote {} frames to {}", frames.len(), out.display());
        }
        Command::Eval { checkpoint, data, protocol, pairs, pair_seed, split, out } => {
            let protocol = Protocol::parse(&protocol)?;
            let videos = load_split(&data, &split)?;
            if videos.is_empty() {
                return Err(Error::Data(format!("no videos in {}/{split}", data.display())));
            }
            let pair_list = match protocol {
                Protocol::SelfReconstruction => self_pairs_of(&videos),
                Protocol::CrossVideo => cross_video_pairs(&videos, pairs, pair_seed)?,
            };
            let (emb, est) = (RandomProjection::default(), MarkerEstimator::default());
            let report = if checkpoint == "oracle" {
                evaluate(&Oracle, &videos, protocol, &pair_list, &emb, &est)?
            } else {
                let animator = Animator::from_checkpoint(Path::new(&checkpoint))?;
                evaluate(&animator, &videos, protocol, &pair_list, &emb, &est)?
            };
            report.write(&out)?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
