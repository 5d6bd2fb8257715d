//! Clip ingestion, windowing into training samples, the synthetic
//! desk-scale dataset, and the on-disk feature cache.
//!
//! Dataset directory layout:
//!
//! ```text
//! <dir>/motions/*.json    # motion interchange files
//! <dir>/audio/*.wav       # paired audio
//! <dir>/manifest.json     # {"entries": [{motion, audio, split, genre?}]}
//! ```
//!
//! Audio features per window are cached as JSON under a content-hash key;
//! the cache directory comes from the config (the CLI wires it to
//! `GROOVESYNTH_CACHE`).

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audiofeat::{extract_features, AudioClip, AudioFeatureSet};
use crate::error::{Error, Result};
use crate::losses::pose_matrix;
use crate::skeleton::{
    load_motion, save_motion, FrameIndexSets, PoseSequence, SkeletonTopology,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One motion clip paired with its audio.
#[derive(Debug, Clone)]
pub struct DanceClip {
    pub id: String,
    pub pose: PoseSequence,
    pub topo: SkeletonTopology,
    pub audio: AudioClip,
    pub genre: Option<String>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub fps: f64,
    pub window_secs: f64,
    /// Seed length T_S in frames.
    pub seed_len: usize,
    pub beat_cap: usize,
    pub n_mfcc: usize,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            fps: 10.0,
            window_secs: 7.0,
            seed_len: 20,
            beat_cap: 20,
            n_mfcc: 20,
            cache_dir: None,
        }
    }
}

impl DatasetConfig {
    pub fn window_frames(&self) -> usize {
        (self.window_secs * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.fps <= 0.0 || self.window_secs <= 0.0 {
            return Err(Error::Config("fps and window length must be positive".into()));
        }
        if self.seed_len == 0 || self.seed_len >= self.window_frames() {
            return Err(Error::Config(format!(
                "seed length {} must be in 1..{}",
                self.seed_len,
                self.window_frames()
            )));
        }
        Ok(())
    }
}

/// One training window: features, index sets, and the ground-truth poses
/// (with root) over the window.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub clip_id: String,
    pub window: usize,
    pub feats: AudioFeatureSet,
    pub sets: FrameIndexSets,
    pub pose: PoseSequence,
}

impl TrainingSample {
    /// Ground-truth seed poses `(T_S, nb, 3)`.
    pub fn seed_poses(&self) -> Array3<f64> {
        self.pose
            .line_vectors
            .slice(ndarray::s![..self.sets.t_s(), .., ..])
            .to_owned()
    }

    /// Ground-truth poses at the non-seed beat frames.
    pub fn gt_beat_poses(&self) -> Array3<f64> {
        self.frames_subset(&self.sets.non_seed_beats())
    }

    /// Ground-truth poses at the repletion frames.
    pub fn gt_repletion_poses(&self) -> Array3<f64> {
        self.frames_subset(&self.sets.repletion_frames())
    }

    fn frames_subset(&self, frames: &[usize]) -> Array3<f64> {
        let nb = self.pose.num_bones();
        let mut out = Array3::zeros((frames.len(), nb, 3));
        for (i, &f) in frames.iter().enumerate() {
            for b in 0..nb {
                for a in 0..3 {
                    out[[i, b, a]] = self.pose.line_vectors[[f - 1, b, a]];
                }
            }
        }
        out
    }

    /// Full ground-truth motion as the network's `(3 nb, T)` layout.
    pub fn gt_matrix(&self) -> Array2<f64> {
        pose_matrix(&self.pose.line_vectors)
    }

    /// Root trajectory as `(3, T)`.
    pub fn root_matrix(&self) -> Array2<f64> {
        let root = self.pose.root.as_ref().expect("training windows carry roots");
        let t = root.nrows();
        Array2::from_shape_fn((3, t), |(a, f)| root[[f, a]])
    }
}

/// Splits a clip into non-overlapping windows, extracting features per
/// window. Windows whose seed region contains no beat (or whose audio has
/// no detectable beats at all) are dropped; the second return value counts
/// them.
pub fn window_clip(clip: &DanceClip, cfg: &DatasetConfig) -> Result<(Vec<TrainingSample>, usize)> {
    cfg.validate()?;
    let wf = cfg.window_frames();
    let total = clip.pose.len().min(clip.audio.num_frames(cfg.fps));
    let n_windows = total / wf;
    let mut samples = Vec::new();
    let mut dropped = 0usize;
    for w in 0..n_windows {
        let f0 = w * wf;
        let audio_w = clip
            .audio
            .slice_seconds(f0 as f64 / cfg.fps, (f0 + wf) as f64 / cfg.fps);
        let feats = match cached_features(&audio_w, cfg, &clip.id, w) {
            Ok(f) => f,
            Err(Error::NoBeatsFound) => {
                dropped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let has_seed_beat = feats.beats.iter().any(|&b| b <= cfg.seed_len);
        if !has_seed_beat {
            dropped += 1;
            continue;
        }
        let sets = FrameIndexSets::new(wf, cfg.seed_len, feats.beats.clone(), cfg.beat_cap)?;
        samples.push(TrainingSample {
            clip_id: clip.id.clone(),
            window: w,
            feats,
            sets,
            pose: clip.pose.slice_frames(f0, f0 + wf),
        });
    }
    Ok((samples, dropped))
}

/// Windows a whole corpus; keeps clip order.
pub fn window_corpus(
    clips: &[DanceClip],
    cfg: &DatasetConfig,
) -> Result<(Vec<TrainingSample>, usize)> {
    let mut all = Vec::new();
    let mut dropped = 0;
    for clip in clips {
        let (mut s, d) = window_clip(clip, cfg)?;
        all.append(&mut s);
        dropped += d;
    }
    Ok((all, dropped))
}

fn cached_features(
    audio: &AudioClip,
    cfg: &DatasetConfig,
    clip_id: &str,
    window: usize,
) -> Result<AudioFeatureSet> {
    let Some(dir) = &cfg.cache_dir else {
        return extract_features(audio, cfg.fps, cfg.n_mfcc, cfg.beat_cap);
    };
    let mut hasher = Sha256::new();
    hasher.update(clip_id.as_bytes());
    hasher.update(window.to_le_bytes());
    hasher.update(cfg.fps.to_le_bytes());
    hasher.update((cfg.n_mfcc as u64).to_le_bytes());
    hasher.update((cfg.beat_cap as u64).to_le_bytes());
    hasher.update(audio.sample_rate.to_le_bytes());
    for s in &audio.samples {
        hasher.update(s.to_le_bytes());
    }
    let key: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    let path = dir.join(format!("{key}.json"));
    if path.exists() {
        let json = std::fs::read_to_string(&path)?;
        if let Ok(feats) = serde_json::from_str::<AudioFeatureSet>(&json) {
            return Ok(feats);
        }
        // Unreadable entry: fall through and rebuild it.
    }
    let feats = extract_features(audio, cfg.fps, cfg.n_mfcc, cfg.beat_cap)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(&path, serde_json::to_string(&feats)?)?;
    Ok(feats)
}

// ------------------------------------------------------- synthetic dataset

/// Procedural clip generator: click-track audio at a random tempo in
/// [80, 140] BPM over band-limited noise, paired with a dance whose bone
/// oscillations hit their extrema exactly on the beats (so kinematic beats
/// align with the audio by construction) plus a slow root orbit.
pub fn synth_dataset(n_clips: usize, seed: u64, cfg: &DatasetConfig) -> Vec<DanceClip> {
    let topo = SkeletonTopology::default_smpl24();
    let rest = topo.default_rest_directions();
    let nb = topo.num_bones();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clips = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let bpm = rng.random_range(80.0..140.0);
        let duration = cfg.window_secs;
        let audio = crate::audiofeat::click_track(bpm, duration, 0.02, rng.random());

        let t_frames = (duration * cfg.fps).round() as usize;
        // Per-bone oscillation: amplitude, direction, and a half-turn phase
        // flip; all bones share the beat-locked phase so the pose is
        // extremal (zero velocity) exactly on every beat.
        let amps: Vec<f64> = (0..nb).map(|_| rng.random_range(0.15..0.4)).collect();
        let signs: Vec<f64> = (0..nb).map(|_| if rng.random_range(0.0..1.0) < 0.5 { 1.0 } else { -1.0 }).collect();
        let wobble: Vec<[f64; 3]> = (0..nb)
            .map(|_| {
                let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let n = (v.iter().map(|x| x * x).sum::<f64>()).sqrt().max(1e-3);
                [v[0] / n, v[1] / n, v[2] / n]
            })
            .collect();
        let mut lv = Array3::zeros((t_frames, nb, 3));
        let mut root = Array2::zeros((t_frames, 3));
        let orbit_period = 20.0;
        for f in 0..t_frames {
            let t = f as f64 / cfg.fps;
            let phase = (std::f64::consts::PI * bpm / 60.0 * t).cos();
            for b in 0..nb {
                let mut v = [0.0; 3];
                let mut n2 = 0.0;
                for a in 0..3 {
                    v[a] = rest[[b, a]] + signs[b] * amps[b] * phase * wobble[b][a];
                    n2 += v[a] * v[a];
                }
                let n = n2.sqrt().max(1e-9);
                for a in 0..3 {
                    lv[[f, b, a]] = v[a] / n;
                }
            }
            let w = 2.0 * std::f64::consts::PI * t / orbit_period;
            root[[f, 0]] = 0.3 * w.cos();
            root[[f, 1]] = 0.95;
            root[[f, 2]] = 0.3 * w.sin();
        }
        let pose = PoseSequence::new(cfg.fps, lv, Some(root)).expect("constructed on manifold");
        clips.push(DanceClip {
            id: format!("synth{i:03}"),
            pose,
            topo: topo.clone(),
            audio,
            genre: None,
            split: Split::Train,
        });
    }
    clips
}

// ------------------------------------------------------------- directory IO

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    motion: String,
    audio: String,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    genre: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    entries: Vec<ManifestEntry>,
}

/// Loads a dataset directory (see module docs for the layout).
pub fn load_aist_dir(dir: &Path) -> Result<Vec<DanceClip>> {
    let manifest_path = dir.join("manifest.json");
    let json = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::ManifestError(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&json)
        .map_err(|e| Error::ManifestError(format!("{}: {e}", manifest_path.display())))?;
    let mut clips = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let motion_path = dir.join(&entry.motion);
        let audio_path = dir.join(&entry.audio);
        if !motion_path.exists() {
            return Err(Error::ManifestError(format!(
                "entry {:?}: missing motion file {}",
                entry.motion,
                motion_path.display()
            )));
        }
        if !audio_path.exists() {
            return Err(Error::ManifestError(format!(
                "entry {:?}: missing audio file {}",
                entry.audio,
                audio_path.display()
            )));
        }
        let (pose, topo) = load_motion(&motion_path)?;
        let audio = AudioClip::load_wav(&audio_path)?;
        let id = Path::new(&entry.motion)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| entry.motion.clone());
        clips.push(DanceClip {
            id,
            pose,
            topo,
            audio,
            genre: entry.genre.clone(),
            split: entry.split,
        });
    }
    Ok(clips)
}

/// Writes clips as a dataset directory (motions/, audio/, manifest.json).
pub fn save_dataset_dir(dir: &Path, clips: &[DanceClip]) -> Result<()> {
    std::fs::create_dir_all(dir.join("motions"))?;
    std::fs::create_dir_all(dir.join("audio"))?;
    let mut entries = Vec::with_capacity(clips.len());
    for clip in clips {
        let motion_rel = format!("motions/{}.json", clip.id);
        let audio_rel = format!("audio/{}.wav", clip.id);
        save_motion(&dir.join(&motion_rel), &clip.pose, &clip.topo)?;
        clip.audio.save_wav(&dir.join(&audio_rel))?;
        entries.push(ManifestEntry {
            motion: motion_rel,
            audio: audio_rel,
            split: clip.split,
            genre: clip.genre.clone(),
        });
    }
    let manifest = Manifest { entries };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
