//! Inference-side pipeline: dance generation from audio plus seed motion,
//! corpus evaluation, the latent-dispersion export, and the beat plot.

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audiofeat::{detect_beats, extract_features, AudioClip};
use crate::bps::{bps_forward, BpsInput};
use crate::dataset::{load_aist_dir, window_corpus, DanceClip};
use crate::error::{Error, Result};
use crate::losses::matrix_to_linevecs;
use crate::metrics::{
    beat_alignment_score, corpus_features, fid, kinetic_velocity_curve, latent_dispersion_export,
    motion_diversity, pfc, DispersionExport, FeatureKind, MetricsReport, DEFAULT_BAS_SIGMA,
    REPORT_NOTE,
};
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::train::{load_bps_model, load_rps_generator, load_trajectory};
use crate::rps::{draw_noise, predict_trajectory, rps_generate, RpsInput};
use crate::skeleton::{FrameIndexSets, PoseSequence, SkeletonTopology};

/// Checkpoint paths for generation. The beat stage is optional only when
/// the config disables beat conditioning.
#[derive(Debug, Clone)]
pub struct GenerateCheckpoints<'a> {
    pub bps: Option<&'a Path>,
    pub generator: &'a Path,
    pub trajectory: &'a Path,
}

/// Generates a dance for `audio`, seeded by the last `T_S` frames of
/// `seed_motion`. Audio longer than one window is processed in
/// consecutive windows, each seeded by the tail of the previous window's
/// output; a trailing remainder shorter than one window is dropped.
pub fn generate(
    cfg: &PipelineConfig,
    audio: &AudioClip,
    seed_motion: &PoseSequence,
    topo: &SkeletonTopology,
    ckpts: &GenerateCheckpoints<'_>,
    gen_seed: u64,
) -> Result<PoseSequence> {
    let t_s = cfg.data.seed_len;
    let wf = cfg.data.window_frames();
    if seed_motion.len() < t_s {
        return Err(Error::TooShortSeed { need: t_s, got: seed_motion.len() });
    }
    if (seed_motion.fps - cfg.data.fps).abs() > 1e-9 {
        return Err(Error::FormatError {
            file: "<seed motion>".into(),
            message: format!("fps {} does not match configured {}", seed_motion.fps, cfg.data.fps),
        });
    }
    let seed_root_full = seed_motion.root.as_ref().ok_or(Error::MissingRoot)?;
    if audio.duration() + 1e-9 < cfg.data.window_secs {
        return Err(Error::TooShortAudio { need: cfg.data.window_secs, got: audio.duration() });
    }

    let bps = match (cfg.ablate.disable_bps, ckpts.bps) {
        (true, _) => None,
        (false, Some(path)) => Some(load_bps_model(path, topo)?),
        (false, None) => {
            return Err(Error::MissingCheckpoint(
                "generation needs a beat-stage checkpoint (or disable_bps)".into(),
            ))
        }
    };
    let (gen, gen_store) = load_rps_generator(ckpts.generator, topo)?;
    let (tp, tp_store) = load_trajectory(ckpts.trajectory, topo)?;

    let n_windows = (audio.duration() / cfg.data.window_secs).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(gen_seed);
    let nb = topo.num_bones();

    // Rolling seed: the last T_S frames of context (poses + roots).
    let start = seed_motion.len() - t_s;
    let mut seed_lv = seed_motion
        .line_vectors
        .slice(ndarray::s![start.., .., ..])
        .to_owned();
    let mut seed_root = seed_root_full.slice(ndarray::s![start.., ..]).to_owned();

    let mut out_lv: Vec<Array3<f64>> = Vec::new();
    let mut out_root: Vec<Array2<f64>> = Vec::new();
    for w in 0..n_windows {
        let clip = audio.slice_seconds(
            w as f64 * cfg.data.window_secs,
            (w + 1) as f64 * cfg.data.window_secs,
        );
        let feats = extract_features(&clip, cfg.data.fps, cfg.data.n_mfcc, cfg.data.beat_cap)?;
        if !feats.beats.iter().any(|&b| b <= t_s) {
            return Err(Error::CoverageError(format!(
                "window {w}: no beat inside the {t_s}-frame seed region"
            )));
        }
        let sets = FrameIndexSets::new(wf, t_s, feats.beats.clone(), cfg.data.beat_cap)?;

        let (beat_poses, use_beats) = match &bps {
            None => (Array3::zeros((0, nb, 3)), false),
            Some((model, store)) => {
                let input = BpsInput::build(&feats, &sets, &seed_lv, nb)?;
                let poses = if input.gen_columns.is_empty() {
                    Array3::zeros((0, nb, 3))
                } else {
                    bps_forward(model, store, &input)?
                };
                (poses, true)
            }
        };
        let noise = draw_noise(gen.cfg.noise_dim, wf, &mut rng);
        let input = RpsInput::build(&feats, &sets, &seed_lv, &beat_poses, use_beats, noise, nb)?;
        let (rep, _z) = rps_generate(&gen, &gen_store, &input)?;
        let mut assembled = input.pose_channel.clone();
        for (i, &c) in input.repletion_columns.iter().enumerate() {
            for b in 0..nb {
                for a in 0..3 {
                    assembled[[3 * b + a, c]] = rep[[i, b, a]];
                }
            }
        }

        // Roots: seed frames keep their context roots; the non-seed tail
        // (beats + repletion, contiguous) is predicted autoregressively.
        let tail_len = wf - t_s;
        let tail_frames: Vec<usize> = (t_s + 1..=wf).collect();
        let tail_poses = assembled.slice(ndarray::s![.., t_s..]).to_owned();
        let tail_root = predict_trajectory(&tp, &tp_store, &tail_poses, &tail_frames)?;
        let mut root = Array2::zeros((wf, 3));
        for f in 0..t_s {
            for a in 0..3 {
                root[[f, a]] = seed_root[[f, a]];
            }
        }
        for c in 0..tail_len {
            for a in 0..3 {
                root[[t_s + c, a]] = tail_root[[a, c]];
            }
        }

        let lv = matrix_to_linevecs(&assembled);
        seed_lv = lv.slice(ndarray::s![wf - t_s.., .., ..]).to_owned();
        seed_root = root.slice(ndarray::s![wf - t_s.., ..]).to_owned();
        out_lv.push(lv);
        out_root.push(root);
    }

    let total = n_windows * wf;
    let mut lv = Array3::zeros((total, nb, 3));
    let mut root = Array2::zeros((total, 3));
    for (w, (wl, wr)) in out_lv.iter().zip(&out_root).enumerate() {
        for f in 0..wf {
            for b in 0..nb {
                for a in 0..3 {
                    lv[[w * wf + f, b, a]] = wl[[f, b, a]];
                }
            }
            for a in 0..3 {
                root[[w * wf + f, a]] = wr[[f, a]];
            }
        }
    }
    let pose = PoseSequence::new(cfg.data.fps, lv, Some(root))?;
    pose.validate(topo)?;
    Ok(pose)
}

/// Evaluates a generated corpus against a reference corpus (both in the
/// dataset directory layout).
pub fn evaluate(cfg: &PipelineConfig, ref_dir: &Path, gen_dir: &Path) -> Result<MetricsReport> {
    let ref_clips = load_aist_dir(ref_dir)?;
    let gen_clips = load_aist_dir(gen_dir)?;
    let pairs = |clips: &[DanceClip]| -> Vec<(PoseSequence, SkeletonTopology)> {
        clips.iter().map(|c| (c.pose.clone(), c.topo.clone())).collect()
    };
    let ref_pairs = pairs(&ref_clips);
    let gen_pairs = pairs(&gen_clips);
    let ref_k = corpus_features(&ref_pairs, FeatureKind::Kinetic)?;
    let gen_k = corpus_features(&gen_pairs, FeatureKind::Kinetic)?;
    let ref_g = corpus_features(&ref_pairs, FeatureKind::Geometric)?;
    let gen_g = corpus_features(&gen_pairs, FeatureKind::Geometric)?;

    let mut bas_sum = 0.0;
    let mut bas_count = 0usize;
    let mut bas_fallback = false;
    let mut pfc_sum = 0.0;
    for clip in &gen_clips {
        let beats = match detect_beats(&clip.audio, cfg.data.fps, cfg.data.beat_cap) {
            Ok(b) => b,
            Err(Error::NoBeatsFound) => {
                bas_fallback = true;
                continue;
            }
            Err(e) => return Err(e),
        };
        let r = beat_alignment_score(&clip.pose, &clip.topo, &beats, DEFAULT_BAS_SIGMA)?;
        bas_sum += r.score;
        bas_fallback |= r.used_fallback;
        bas_count += 1;
        pfc_sum += pfc(&clip.pose, &clip.topo)?;
    }
    if bas_count == 0 {
        return Err(Error::DegenerateCorpus("no generated clip had detectable beats".into()));
    }
    Ok(MetricsReport {
        note: REPORT_NOTE.to_string(),
        fid_k: fid(&ref_k, &gen_k)?,
        fid_g: fid(&ref_g, &gen_g)?,
        md_k: motion_diversity(&gen_k)?,
        md_g: motion_diversity(&gen_g)?,
        bas: bas_sum / bas_count as f64,
        bas_used_fallback: bas_fallback,
        pfc: pfc_sum / bas_count as f64,
        ref_clips: ref_clips.len(),
        gen_clips: gen_clips.len(),
    })
}

/// Runs the generator over every training window of a dataset and exports
/// the per-segment latent vectors (plus the intra-clip dispersion scalar).
pub fn export_latents(
    cfg: &PipelineConfig,
    data_dir: &Path,
    gen_checkpoint: &Path,
) -> Result<DispersionExport> {
    let clips = load_aist_dir(data_dir)?;
    let (samples, _) = window_corpus(&clips, &cfg.data)?;
    if samples.is_empty() {
        return Err(Error::ManifestError("no usable windows in dataset".into()));
    }
    let topo = clips[0].topo.clone();
    let (gen, gen_store) = load_rps_generator(gen_checkpoint, &topo)?;
    let plan = cfg.loss.plan()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut latents = Vec::with_capacity(samples.len());
    for s in &samples {
        let noise = draw_noise(gen.cfg.noise_dim, s.sets.t(), &mut rng);
        let (beats, use_beats) = if cfg.ablate.disable_bps {
            (Array3::zeros((0, topo.num_bones(), 3)), false)
        } else {
            (s.gt_beat_poses(), true)
        };
        let input = RpsInput::build(
            &s.feats,
            &s.sets,
            &s.seed_poses(),
            &beats,
            use_beats,
            noise,
            topo.num_bones(),
        )?;
        let (_, z) = rps_generate(&gen, &gen_store, &input)?;
        latents.push((format!("{}:{}", s.clip_id, s.window), z));
    }
    Ok(latent_dispersion_export(&latents, &plan))
}

/// Renders the kinetic-velocity curve with music-beat markers as an SVG
/// document.
pub fn plot_beats_svg(
    pose: &PoseSequence,
    topo: &SkeletonTopology,
    music_beats: &[usize],
) -> Result<String> {
    let kv = kinetic_velocity_curve(pose, topo)?;
    let (w, h, pad) = (720.0, 240.0, 30.0);
    let t = kv.len().max(2);
    let max_v = kv.iter().cloned().fold(1e-12f64, f64::max);
    let x = |f: f64| pad + f / (t as f64 - 1.0) * (w - 2.0 * pad);
    let y = |v: f64| h - pad - (v / max_v) * (h - 2.0 * pad);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<g stroke=\"#ccc\"><line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/></g>\n",
        h - pad,
        w - pad,
        h - pad
    ));
    for &b in music_beats {
        let xb = x((b - 1) as f64);
        svg.push_str(&format!(
            "<line x1=\"{xb:.2}\" y1=\"{pad}\" x2=\"{xb:.2}\" y2=\"{:.2}\" stroke=\"#d33\" stroke-dasharray=\"4 3\"/>\n",
            h - pad
        ));
    }
    let points: Vec<String> = kv
        .iter()
        .enumerate()
        .map(|(f, &v)| format!("{:.2},{:.2}", x(f as f64), y(v)))
        .collect();
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#236\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        points.join(" ")
    ));
    for &kb in &crate::metrics::kinematic_beats_of(pose, topo)? {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#269\"/>\n",
            x((kb - 1) as f64),
            y(kv[kb - 1])
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{pad}\" y=\"{:.2}\" font-size=\"11\" fill=\"#333\">kinetic velocity (m^2/s^2), dashes = music beats, dots = kinematic beats</text>\n",
        pad - 10.0
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}
