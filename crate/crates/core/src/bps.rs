//! Beat pose synthesis: generate the poses at all non-seed beat frames in
//! a single forward pass.
//!
//! Audio features are gathered at the beat frames only, the seed beat
//! poses occupy their beat columns (everything else carries the pose
//! encoder's mask token), and a transformer encoder positioned by the
//! actual beat frame indices emits one pose per beat column. The non-seed
//! columns are the outputs.

use ndarray::{Array2, Array3};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audiofeat::AudioFeatureSet;
use crate::error::{Error, Result};
use crate::losses::{matrix_to_linevecs, pose_matrix};
use crate::netcore::{
    Binder, ConvEncoder, ConvEncoderConfig, GraphPoseEncoder, GraphPoseEncoderConfig, Linear,
    ParamStore, Tape, TransformerConfig, Var,
};
use crate::skeleton::{FrameIndexSets, SkeletonTopology};

/// Maximum number of seed beat poses fed to the generator.
pub const SEED_BEAT_CAP: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpsConfig {
    /// MFCC input channels (3 * n_mfcc).
    pub mfcc_channels: usize,
    /// Latent width of the MFCC encoder.
    pub mfcc_dim: usize,
    /// Latent width of the chroma encoder.
    pub chroma_dim: usize,
    /// Latent width of the pose encoder.
    pub pose_dim: usize,
    pub conv_hidden: usize,
    pub conv_kernels: Vec<usize>,
    pub pose_spatial: (usize, usize),
    pub pose_temporal_kernel: usize,
    pub pose_temporal_hidden: usize,
    pub generator: TransformerConfig,
}

impl Default for BpsConfig {
    fn default() -> Self {
        Self {
            mfcc_channels: 60,
            mfcc_dim: 32,
            chroma_dim: 4,
            pose_dim: 16,
            conv_hidden: 48,
            conv_kernels: vec![3, 3, 3],
            pose_spatial: (16, 16),
            pose_temporal_kernel: 5,
            pose_temporal_hidden: 48,
            generator: TransformerConfig {
                model_dim: 52,
                heads: 4,
                blocks: 6,
                feedforward_dim: 208,
                dropout: 0.0,
            },
        }
    }
}

impl BpsConfig {
    /// Desk-scale widths for fast tests and smoke training.
    pub fn reduced() -> Self {
        Self {
            mfcc_channels: 60,
            mfcc_dim: 12,
            chroma_dim: 4,
            pose_dim: 8,
            conv_hidden: 16,
            conv_kernels: vec![3, 3],
            pose_spatial: (6, 6),
            pose_temporal_kernel: 3,
            pose_temporal_hidden: 16,
            generator: TransformerConfig {
                model_dim: 24,
                heads: 4,
                blocks: 2,
                feedforward_dim: 48,
                dropout: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()
    }
}

/// The beat pose generator: MFCC/chroma conv encoders, graph pose encoder,
/// and a transformer encoder with cross-attention to the pose stream.
pub struct BpsModel {
    pub cfg: BpsConfig,
    pub bones: usize,
    mfcc_enc: ConvEncoder,
    chroma_enc: ConvEncoder,
    pose_enc: GraphPoseEncoder,
    generator: crate::netcore::TransformerEncoder,
    head: Linear,
}

impl BpsModel {
    pub fn new(cfg: BpsConfig, topo: &SkeletonTopology) -> Result<Self> {
        cfg.validate()?;
        let bones = topo.num_bones();
        let conv = |prefix: &str, cin: usize, cout: usize| {
            ConvEncoder::new(
                prefix,
                ConvEncoderConfig {
                    in_channels: cin,
                    out_channels: cout,
                    hidden_channels: cfg.conv_hidden,
                    kernel_sizes: cfg.conv_kernels.clone(),
                    strides: vec![1; cfg.conv_kernels.len()],
                },
            )
        };
        let mfcc_enc = conv("bps.mfcc", cfg.mfcc_channels, cfg.mfcc_dim)?;
        let chroma_enc = conv("bps.chroma", 12, cfg.chroma_dim)?;
        let pose_enc = GraphPoseEncoder::new(
            "bps.pose",
            GraphPoseEncoderConfig {
                bones,
                spatial_channels: cfg.pose_spatial,
                temporal_kernel: cfg.pose_temporal_kernel,
                temporal_hidden: cfg.pose_temporal_hidden,
                out_dim: cfg.pose_dim,
            },
            topo.bone_adjacency(),
        )?;
        let in_dim = cfg.mfcc_dim + cfg.chroma_dim + cfg.pose_dim;
        let generator = crate::netcore::TransformerEncoder::new(
            "bps.te",
            cfg.generator.clone(),
            in_dim,
            Some(cfg.pose_dim),
        )?;
        let head = Linear::new("bps.head", cfg.generator.model_dim, bones * 3);
        Ok(Self { cfg, bones, mfcc_enc, chroma_enc, pose_enc, generator, head })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.mfcc_enc.init(store, rng);
        self.chroma_enc.init(store, rng);
        self.pose_enc.init(store, rng);
        self.generator.init(store, rng);
        self.head.init(store, rng);
    }

    pub fn param_count(&self) -> usize {
        self.mfcc_enc.param_count()
            + self.chroma_enc.param_count()
            + self.pose_enc.param_count()
            + self.generator.param_count()
            + self.head.param_count()
    }

    /// Tape-level forward over all beat columns; returns unit-normalized
    /// bone directions `(3 * bones, |B|)`.
    pub fn forward_t(&self, b: &Binder, input: &BpsInput) -> Var {
        let t = b.tape();
        let mfcc = b.constant(input.mfcc_beats.clone());
        let chroma = b.constant(input.chroma_beats.clone());
        let poses = b.constant(input.seed_pose_channel.clone());
        let am = self.mfcc_enc.forward(b, mfcc);
        let ac = self.chroma_enc.forward(b, chroma);
        let q = self.pose_enc.forward(b, poses, &input.states);
        let cat = t.concat_rows(&[am, ac, q]);
        let enc = self.generator.forward(b, cat, &input.beat_frames, Some(q), None);
        let raw = self.head.forward(b, enc);
        t.normalize_groups3(raw)
    }
}

/// Inputs to one beat-pose forward pass.
#[derive(Debug, Clone)]
pub struct BpsInput {
    /// MFCC columns gathered at the beat frames, `(3 n_mfcc, |B|)`.
    pub mfcc_beats: Array2<f64>,
    /// Chroma columns gathered at the beat frames, `(12, |B|)`.
    pub chroma_beats: Array2<f64>,
    /// Seed beat poses at their beat columns, zero elsewhere, `(3 nb, |B|)`.
    pub seed_pose_channel: Array2<f64>,
    /// 1.0 where a seed pose is present, 0.0 (mask) otherwise.
    pub states: Vec<f64>,
    /// The 1-based beat frames (positional indices).
    pub beat_frames: Vec<usize>,
    /// Column indices (within B) of the non-seed beats to generate.
    pub gen_columns: Vec<usize>,
}

impl BpsInput {
    /// Assembles the input from frame-level features, index sets, and the
    /// ground-truth seed poses (`(T_S, nb, 3)` line vectors).
    ///
    /// At most [`SEED_BEAT_CAP`] seed beat poses are used; when more beats
    /// fall inside the seed window, the latest ones (closest to the
    /// generated region) are kept. At least one is required.
    pub fn build(
        feats: &AudioFeatureSet,
        sets: &FrameIndexSets,
        seed_poses: &Array3<f64>,
        bones: usize,
    ) -> Result<BpsInput> {
        if seed_poses.dim().0 < sets.t_s() {
            return Err(Error::ShapeMismatch {
                context: "seed poses".into(),
                expected: format!("{} frames", sets.t_s()),
                got: format!("{}", seed_poses.dim().0),
            });
        }
        let beats = sets.beats().to_vec();
        let mfcc_beats = gather_beat_features(&feats.mfcc, &beats)?;
        let chroma_beats = gather_beat_features(&feats.chroma, &beats)?;
        let seed_beats_all = sets.seed_beats();
        if seed_beats_all.is_empty() {
            return Err(Error::CoverageError(
                "no beat frames inside the seed window".into(),
            ));
        }
        let used: Vec<usize> = seed_beats_all
            .iter()
            .copied()
            .skip(seed_beats_all.len().saturating_sub(SEED_BEAT_CAP))
            .collect();
        let mut channel = Array2::zeros((3 * bones, beats.len()));
        let mut states = vec![0.0; beats.len()];
        for (col, &frame) in beats.iter().enumerate() {
            if used.contains(&frame) {
                states[col] = 1.0;
                for bone in 0..bones {
                    for a in 0..3 {
                        channel[[3 * bone + a, col]] = seed_poses[[frame - 1, bone, a]];
                    }
                }
            }
        }
        let gen_columns: Vec<usize> = beats
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > sets.t_s())
            .map(|(c, _)| c)
            .collect();
        Ok(BpsInput {
            mfcc_beats,
            chroma_beats,
            seed_pose_channel: channel,
            states,
            beat_frames: beats,
            gen_columns,
        })
    }
}

/// Gathers feature columns at 1-based frame indices.
pub fn gather_beat_features(feats: &Array2<f64>, beats: &[usize]) -> Result<Array2<f64>> {
    let t = feats.ncols();
    let mut out = Array2::zeros((feats.nrows(), beats.len()));
    for (col, &frame) in beats.iter().enumerate() {
        if frame < 1 || frame > t {
            return Err(Error::IndexOutOfRange(format!(
                "beat frame {frame} outside 1..={t}"
            )));
        }
        out.column_mut(col).assign(&feats.column(frame - 1));
    }
    Ok(out)
}

/// Runs the generator and returns the non-seed beat poses,
/// `(|B| - |B_S|, nb, 3)` unit line vectors.
pub fn bps_forward(model: &BpsModel, store: &ParamStore, input: &BpsInput) -> Result<Array3<f64>> {
    if input.gen_columns.is_empty() {
        return Err(Error::EmptyBeats);
    }
    let tape = Tape::new();
    let binder = Binder::new(&tape, store);
    let full = model.forward_t(&binder, input);
    let gen = tape.gather_cols(full, &input.gen_columns);
    Ok(matrix_to_linevecs(&tape.value(gen)))
}

/// Convenience: full-pass matrix output for training (all beat columns).
pub fn bps_forward_matrix(model: &BpsModel, store: &ParamStore, input: &BpsInput) -> Array2<f64> {
    let tape = Tape::new();
    let binder = Binder::new(&tape, store);
    let full = model.forward_t(&binder, input);
    tape.value(full)
}

/// Ground-truth beat poses for the generated columns, as a matrix
/// `(3 nb, |gen_columns|)`; used as the training target.
pub fn gather_gt_beat_matrix(
    full_motion: &Array3<f64>,
    sets: &FrameIndexSets,
) -> Array2<f64> {
    let frames = sets.non_seed_beats();
    let m = pose_matrix(full_motion);
    let mut out = Array2::zeros((m.nrows(), frames.len()));
    for (c, &f) in frames.iter().enumerate() {
        out.column_mut(c).assign(&m.column(f - 1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn topo() -> SkeletonTopology {
        SkeletonTopology::default_smpl24()
    }

    fn rand_feats(rng: &mut ChaCha8Rng, t: usize) -> AudioFeatureSet {
        AudioFeatureSet {
            mfcc: Array2::from_shape_fn((60, t), |_| rng.random_range(-1.0..1.0)),
            chroma: Array2::from_shape_fn((12, t), |_| rng.random_range(0.0..1.0)),
            beats: vec![],
            fps: 10.0,
        }
    }

    fn rand_seed_poses(rng: &mut ChaCha8Rng, t: usize, nb: usize) -> Array3<f64> {
        let mut lv = Array3::zeros((t, nb, 3));
        for f in 0..t {
            for b in 0..nb {
                let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let n = (v.iter().map(|x| x * x).sum::<f64>()).sqrt().max(1e-3);
                for a in 0..3 {
                    lv[[f, b, a]] = v[a] / n;
                }
            }
        }
        lv
    }

    fn paper_scale_sets() -> FrameIndexSets {
        // 3 seed beats and 17 later ones, 20 total.
        let mut beats = vec![2, 9, 16];
        beats.extend((0..17).map(|i| 21 + 2 * i)); // 21, 23, ..., 53
        FrameIndexSets::new(70, 20, beats, 20).unwrap()
    }

    fn setup(cfg: BpsConfig) -> (BpsModel, ParamStore, BpsInput) {
        let topo = topo();
        let model = BpsModel::new(cfg, &topo).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        model.init(&mut store, &mut rng);
        let sets = paper_scale_sets();
        let feats = rand_feats(&mut rng, 70);
        let seed = rand_seed_poses(&mut rng, 20, topo.num_bones());
        let input = BpsInput::build(&feats, &sets, &seed, topo.num_bones()).unwrap();
        (model, store, input)
    }

    #[test]
    fn param_count_matches_store() {
        let (model, store, _) = setup(BpsConfig::reduced());
        assert_eq!(store.total_params(), model.param_count());
    }

    #[test]
    fn twenty_beats_three_seeds_give_seventeen_poses() {
        let (model, store, input) = setup(BpsConfig::reduced());
        let out = bps_forward(&model, &store, &input).unwrap();
        assert_eq!(out.dim(), (17, 23, 3));
        for f in 0..17 {
            for b in 0..23 {
                let n: f64 = (0..3).map(|a| out[[f, b, a]].powi(2)).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn all_seed_beats_is_empty_beats() {
        let topo = topo();
        let model = BpsModel::new(BpsConfig::reduced(), &topo).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        model.init(&mut store, &mut rng);
        let sets = FrameIndexSets::new(70, 20, vec![3, 11, 19], 20).unwrap();
        let feats = rand_feats(&mut rng, 70);
        let seed = rand_seed_poses(&mut rng, 20, topo.num_bones());
        let input = BpsInput::build(&feats, &sets, &seed, topo.num_bones()).unwrap();
        assert!(matches!(bps_forward(&model, &store, &input), Err(Error::EmptyBeats)));
    }

    #[test]
    fn gather_beat_features_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let feats = Array2::from_shape_fn((4, 30), |_| rng.random_range(-1.0..1.0));
        let one = gather_beat_features(&feats, &[1]).unwrap();
        assert_eq!(one.column(0).to_vec(), feats.column(0).to_vec());
        let idx: Vec<usize> = (1..=20).collect();
        let twenty = gather_beat_features(&feats, &idx).unwrap();
        assert_eq!(twenty.ncols(), 20);
        // Perturbing a non-beat frame leaves the gather unchanged.
        let mut feats2 = feats.clone();
        feats2[[0, 25]] += 10.0;
        let twenty2 = gather_beat_features(&feats2, &idx).unwrap();
        assert_eq!(twenty, twenty2);
        assert!(matches!(
            gather_beat_features(&feats, &[31]),
            Err(Error::IndexOutOfRange(_))
        ));
        assert!(matches!(
            gather_beat_features(&feats, &[0]),
            Err(Error::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn moving_a_beat_frame_changes_output() {
        let (model, store, input) = setup(BpsConfig::reduced());
        let mut moved = input.clone();
        // Shift the last beat from frame 53 to frame 60 (same features).
        *moved.beat_frames.last_mut().unwrap() = 60;
        let a = bps_forward(&model, &store, &input).unwrap();
        let b = bps_forward(&model, &store, &moved).unwrap();
        let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-9, "beat position had no effect");
    }

    #[test]
    fn seed_poses_matter() {
        let (model, store, input) = setup(BpsConfig::reduced());
        let mut masked = input.clone();
        masked.states = vec![0.0; masked.states.len()];
        let a = bps_forward(&model, &store, &input).unwrap();
        let b = bps_forward(&model, &store, &masked).unwrap();
        let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-9, "seed mask had no effect");
    }

    #[test]
    fn forward_is_deterministic() {
        let (model, store, input) = setup(BpsConfig::reduced());
        let a = bps_forward(&model, &store, &input).unwrap();
        let b = bps_forward(&model, &store, &input).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn seed_cap_keeps_latest_beats() {
        let topo = topo();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        // Five beats inside the seed window.
        let beats = vec![1, 5, 9, 13, 17, 30, 40];
        let sets = FrameIndexSets::new(70, 20, beats, 20).unwrap();
        let feats = rand_feats(&mut rng, 70);
        let seed = rand_seed_poses(&mut rng, 20, topo.num_bones());
        let input = BpsInput::build(&feats, &sets, &seed, topo.num_bones()).unwrap();
        let active: Vec<usize> = input
            .states
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 0.0)
            .map(|(c, _)| input.beat_frames[c])
            .collect();
        assert_eq!(active, vec![9, 13, 17]);
        assert_eq!(input.gen_columns.len(), 2);
    }
}
