//! Command-line interface for the dance synthesis pipeline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use groovesynth_core::audiofeat::{extract_features, AudioClip};
use groovesynth_core::dataset::{save_dataset_dir, synth_dataset, window_corpus, load_aist_dir};
use groovesynth_core::error::{Error, Result};
use groovesynth_core::pipeline::{
    evaluate, export_latents, generate, plot_beats_svg, train_bps, train_rps, train_traj,
    GenerateCheckpoints, PipelineConfig,
};
use groovesynth_core::skeleton::{export_bvh, load_motion, save_motion};

#[derive(Parser)]
#[command(name = "groovesynth", about = "Beat-hierarchical music-to-dance synthesis", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-key overrides, e.g. --set train.bps.epochs=5
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract MFCC, chroma, and beat features from a WAV file.
    Extract {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic click-track dance dataset.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        clips: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the beat pose stage.
    TrainBps {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the repletion stage (generator + discriminator).
    TrainRps {
        #[arg(long)]
        data: PathBuf,
        /// Beat-stage checkpoint (omit only with ablate.disable_bps).
        #[arg(long)]
        bps: Option<PathBuf>,
        #[arg(long)]
        out_gen: PathBuf,
        #[arg(long)]
        out_disc: PathBuf,
    },
    /// Train the root trajectory predictor.
    TrainTraj {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a dance for an audio file from a seed motion.
    Generate {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        seed_motion: PathBuf,
        #[arg(long)]
        bps: Option<PathBuf>,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a BVH file for viewers.
        #[arg(long)]
        bvh: Option<PathBuf>,
        /// Seed for the generation-time noise.
        #[arg(long, default_value_t = 0)]
        gen_seed: u64,
    },
    /// Compute the evaluation report for a generated corpus.
    Evaluate {
        #[arg(long, value_name = "DIR")]
        reference: PathBuf,
        #[arg(long, value_name = "DIR")]
        generated: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export per-segment latent vectors for external projection.
    ExportLatents {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render kinetic velocity with beat markers as SVG.
    PlotBeats {
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_corpus(
    cfg: &PipelineConfig,
    dir: &PathBuf,
) -> Result<(Vec<groovesynth_core::dataset::TrainingSample>, groovesynth_core::skeleton::SkeletonTopology)> {
    let clips = load_aist_dir(dir)?;
    if clips.is_empty() {
        return Err(Error::ManifestError(format!("{}: empty dataset", dir.display())));
    }
    let topo = clips[0].topo.clone();
    let (samples, dropped) = window_corpus(&clips, &cfg.data)?;
    if dropped > 0 {
        eprintln!("dropped {dropped} window(s) without a seed-region beat");
    }
    Ok((samples, topo))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = PipelineConfig::load(cli.common.config.as_deref(), &cli.common.sets)?;
    match cli.command {
        Command::Extract { audio, fps, out } => {
            let clip = AudioClip::load_wav(&audio)?;
            let fps = fps.unwrap_or(cfg.data.fps);
            let feats = extract_features(&clip, fps, cfg.data.n_mfcc, cfg.data.beat_cap)?;
            std::fs::write(&out, serde_json::to_string(&feats)?)?;
            println!("wrote {} ({} frames, {} beats)", out.display(), feats.num_frames(), feats.beats.len());
        }
        Command::SynthData { out, clips, seed } => {
            let seed = seed.unwrap_or(cfg.seed);
            let data = synth_dataset(clips, seed, &cfg.data);
            save_dataset_dir(&out, &data)?;
            println!("wrote {} clips to {}", data.len(), out.display());
        }
        Command::TrainBps { data, out, resume } => {
            let (samples, topo) = load_corpus(&cfg, &data)?;
            let report = train_bps(&cfg, &samples, &topo, &out, resume.as_deref())?;
            for log in &report.epochs {
                println!(
                    "epoch {:4}  pose_motion {:.6}  leg_motion {:.6}  total {:.6}",
                    log.epoch, log.pose_motion, log.leg_motion, log.total
                );
            }
            println!("saved {}", out.display());
        }
        Command::TrainRps { data, bps, out_gen, out_disc } => {
            let (samples, topo) = load_corpus(&cfg, &data)?;
            let report = train_rps(&cfg, &samples, &topo, bps.as_deref(), &out_gen, &out_disc)?;
            for log in &report.epochs {
                println!(
                    "epoch {:4}  pose_motion {:.6}  leg_motion {:.6}  adv {:.6}  rtc {:.6}  total {:.6}  disc {:.6}  rtc_skipped {}",
                    log.epoch, log.pose_motion, log.leg_motion, log.adversarial, log.rtc, log.total,
                    log.disc_loss, log.rtc_skipped
                );
            }
            println!("saved {} and {}", out_gen.display(), out_disc.display());
        }
        Command::TrainTraj { data, gen, out } => {
            let (samples, topo) = load_corpus(&cfg, &data)?;
            let report = train_traj(&cfg, &samples, &topo, &gen, &out)?;
            for log in &report.epochs {
                println!("epoch {:4}  root_translation {:.6}", log.epoch, log.root_translation);
            }
            println!("saved {}", out.display());
        }
        Command::Generate { audio, seed_motion, bps, gen, traj, out, bvh, gen_seed } => {
            let clip = AudioClip::load_wav(&audio)?;
            let (seed_pose, topo) = load_motion(&seed_motion)?;
            let ckpts = GenerateCheckpoints {
                bps: bps.as_deref(),
                generator: &gen,
                trajectory: &traj,
            };
            let pose = generate(&cfg, &clip, &seed_pose, &topo, &ckpts, gen_seed)?;
            save_motion(&out, &pose, &topo)?;
            if let Some(bvh_path) = bvh {
                export_bvh(&bvh_path, &pose, &topo)?;
            }
            println!("wrote {} ({} frames)", out.display(), pose.len());
        }
        Command::Evaluate { reference, generated, out } => {
            let report = evaluate(&cfg, &reference, &generated)?;
            std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            println!(
                "fid_k {:.4}  fid_g {:.4}  md_k {:.4}  md_g {:.4}  bas {:.4}  pfc {:.4}",
                report.fid_k, report.fid_g, report.md_k, report.md_g, report.bas, report.pfc
            );
            println!("wrote {}", out.display());
        }
        Command::ExportLatents { data, gen, out } => {
            let export = export_latents(&cfg, &data, &gen)?;
            std::fs::write(&out, serde_json::to_string(&export)?)?;
            match export.mean_intra_clip_abs_cossim {
                Some(v) => println!("{} segments, intra-clip |cossim| {:.4}", export.rows.len(), v),
                None => println!("{} segments, intra-clip |cossim| undefined", export.rows.len()),
            }
            println!("wrote {}", out.display());
        }
        Command::PlotBeats { motion, audio, out } => {
            let (pose, topo) = load_motion(&motion)?;
            let clip = AudioClip::load_wav(&audio)?;
            let beats = groovesynth_core::audiofeat::detect_beats(&clip, pose.fps, cfg.data.beat_cap)?;
            let svg = plot_beats_svg(&pose, &topo, &beats)?;
            std::fs::write(&out, svg)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
