//! Repletion pose synthesis: an adversarial generator filling every frame
//! that is neither seed nor beat, a sequence discriminator, and the
//! autoregressive root-trajectory predictor.
//!
//! The generator runs over all T frames: its pose channel carries seed
//! poses, beat poses, or the mask token per frame (with a 3-state
//! indicator row), per-frame Gaussian noise joins the encoder input, and
//! the latent decoder output `z` spans the full sequence so contrastive
//! segments can be planned over the assembled dance. Only the repletion
//! columns of the motion decoder are returned as generated poses.

use ndarray::{Array2, Array3};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audiofeat::AudioFeatureSet;
use crate::error::{Error, Result};
use crate::losses::{matrix_to_linevecs, pose_matrix};
use crate::netcore::{
    normal_sample, Binder, BiGru, ConvEncoder, ConvEncoderConfig, DecodeMode, GraphPoseEncoder,
    GraphPoseEncoderConfig, Linear, ParamStore, Tape, TransformerConfig, TransformerDecoder,
    TransformerEncoder, Var,
};
use crate::skeleton::{FrameIndexSets, PoseSequence, SkeletonTopology};

/// Pose-channel state codes for the generator input.
pub const STATE_MASKED: f64 = 0.0;
pub const STATE_BEAT: f64 = 0.5;
pub const STATE_SEED: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpsConfig {
    pub mfcc_channels: usize,
    pub mfcc_dim: usize,
    pub chroma_dim: usize,
    pub pose_dim: usize,
    pub noise_dim: usize,
    pub latent_dim: usize,
    pub conv_hidden: usize,
    pub conv_kernels: Vec<usize>,
    pub pose_spatial: (usize, usize),
    pub pose_temporal_kernel: usize,
    pub pose_temporal_hidden: usize,
    pub encoder: TransformerConfig,
    pub latent_decoder: TransformerConfig,
    pub motion_decoder: TransformerConfig,
    pub disc_hidden: usize,
    pub disc_fc: usize,
}

impl Default for RpsConfig {
    fn default() -> Self {
        Self {
            mfcc_channels: 60,
            mfcc_dim: 32,
            chroma_dim: 6,
            pose_dim: 16,
            noise_dim: 8,
            latent_dim: 32,
            conv_hidden: 48,
            conv_kernels: vec![3, 3, 3],
            pose_spatial: (16, 16),
            pose_temporal_kernel: 5,
            pose_temporal_hidden: 48,
            encoder: TransformerConfig {
                model_dim: 64,
                heads: 8,
                blocks: 6,
                feedforward_dim: 256,
                dropout: 0.0,
            },
            latent_decoder: TransformerConfig {
                model_dim: 48,
                heads: 3,
                blocks: 8,
                feedforward_dim: 192,
                dropout: 0.0,
            },
            motion_decoder: TransformerConfig {
                model_dim: 48,
                heads: 3,
                blocks: 4,
                feedforward_dim: 192,
                dropout: 0.0,
            },
            disc_hidden: 64,
            disc_fc: 32,
        }
    }
}

impl RpsConfig {
    /// Desk-scale widths for fast tests and smoke training.
    pub fn reduced() -> Self {
        Self {
            mfcc_channels: 60,
            mfcc_dim: 12,
            chroma_dim: 4,
            pose_dim: 8,
            noise_dim: 4,
            latent_dim: 8,
            conv_hidden: 16,
            conv_kernels: vec![3, 3],
            pose_spatial: (6, 6),
            pose_temporal_kernel: 3,
            pose_temporal_hidden: 16,
            encoder: TransformerConfig {
                model_dim: 28,
                heads: 4,
                blocks: 2,
                feedforward_dim: 56,
                dropout: 0.0,
            },
            latent_decoder: TransformerConfig {
                model_dim: 24,
                heads: 3,
                blocks: 2,
                feedforward_dim: 48,
                dropout: 0.0,
            },
            motion_decoder: TransformerConfig {
                model_dim: 24,
                heads: 3,
                blocks: 2,
                feedforward_dim: 48,
                dropout: 0.0,
            },
            disc_hidden: 16,
            disc_fc: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.latent_decoder.validate()?;
        self.motion_decoder.validate()
    }
}

// ---------------------------------------------------------------- generator

pub struct RpsGenerator {
    pub cfg: RpsConfig,
    pub bones: usize,
    mfcc_enc: ConvEncoder,
    chroma_enc: ConvEncoder,
    pose_enc: GraphPoseEncoder,
    encoder: TransformerEncoder,
    latent_decoder: TransformerDecoder,
    motion_decoder: TransformerDecoder,
}

impl RpsGenerator {
    pub fn new(cfg: RpsConfig, topo: &SkeletonTopology) -> Result<Self> {
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
        let mfcc_enc = conv("rps.gen.mfcc", cfg.mfcc_channels, cfg.mfcc_dim)?;
        let chroma_enc = conv("rps.gen.chroma", 12, cfg.chroma_dim)?;
        let pose_enc = GraphPoseEncoder::new(
            "rps.gen.pose",
            GraphPoseEncoderConfig {
                bones,
                spatial_channels: cfg.pose_spatial,
                temporal_kernel: cfg.pose_temporal_kernel,
                temporal_hidden: cfg.pose_temporal_hidden,
                out_dim: cfg.pose_dim,
            },
            topo.bone_adjacency(),
        )?;
        let in_dim = cfg.mfcc_dim + cfg.chroma_dim + cfg.pose_dim + cfg.noise_dim;
        let encoder =
            TransformerEncoder::new("rps.gen.te", cfg.encoder.clone(), in_dim, Some(cfg.pose_dim))?;
        let latent_decoder = TransformerDecoder::new(
            "rps.gen.tdz",
            cfg.latent_decoder.clone(),
            cfg.encoder.model_dim,
            cfg.latent_dim,
        )?;
        let motion_decoder = TransformerDecoder::new(
            "rps.gen.tdu",
            cfg.motion_decoder.clone(),
            cfg.latent_dim,
            bones * 3,
        )?;
        Ok(Self { cfg, bones, mfcc_enc, chroma_enc, pose_enc, encoder, latent_decoder, motion_decoder })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.mfcc_enc.init(store, rng);
        self.chroma_enc.init(store, rng);
        self.pose_enc.init(store, rng);
        self.encoder.init(store, rng);
        self.latent_decoder.init(store, rng);
        self.motion_decoder.init(store, rng);
    }

    pub fn param_count(&self) -> usize {
        self.mfcc_enc.param_count()
            + self.chroma_enc.param_count()
            + self.pose_enc.param_count()
            + self.encoder.param_count()
            + self.latent_decoder.param_count()
            + self.motion_decoder.param_count()
    }

    /// Full-sequence forward: returns `(motion, z)` where `motion` is
    /// `(3 nb, T)` unit bone directions for every frame and `z` is
    /// `(latent_dim, T)`.
    pub fn forward_t(&self, b: &Binder, input: &RpsInput) -> (Var, Var) {
        let t = b.tape();
        let mfcc = b.constant(input.mfcc.clone());
        let chroma = b.constant(input.chroma.clone());
        let poses = b.constant(input.pose_channel.clone());
        let noise = b.constant(input.noise.clone());
        let am = self.mfcc_enc.forward(b, mfcc);
        let ac = self.chroma_enc.forward(b, chroma);
        let q = self.pose_enc.forward(b, poses, &input.states);
        let cat = t.concat_rows(&[am, ac, q, noise]);
        let enc = self.encoder.forward(b, cat, &input.frames, Some(q), None);
        let z = self
            .latent_decoder
            .forward(b, enc, &input.frames, DecodeMode::OneShot, None);
        let raw = self
            .motion_decoder
            .forward(b, z, &input.frames, DecodeMode::OneShot, None);
        (t.normalize_groups3(raw), z)
    }
}

/// Inputs to one generator pass, spanning all T frames.
#[derive(Debug, Clone)]
pub struct RpsInput {
    pub mfcc: Array2<f64>,
    pub chroma: Array2<f64>,
    /// `(3 nb, T)`: seed poses on S, beat poses on B - B_S, zero elsewhere.
    pub pose_channel: Array2<f64>,
    /// Per-frame state codes (seed / beat / masked).
    pub states: Vec<f64>,
    /// Per-frame Gaussian noise, `(noise_dim, T)`.
    pub noise: Array2<f64>,
    /// 1-based frame indices 1..=T.
    pub frames: Vec<usize>,
    /// 0-based column indices of the repletion frames.
    pub repletion_columns: Vec<usize>,
}

impl RpsInput {
    /// Builds the generator input. `beat_poses` must cover exactly the
    /// non-seed beats of `sets` (pass an empty array with `beat_frames`
    /// empty for the no-beat-conditioning ablation).
    pub fn build(
        feats: &AudioFeatureSet,
        sets: &FrameIndexSets,
        seed_poses: &Array3<f64>,
        beat_poses: &Array3<f64>,
        use_beats: bool,
        noise: Array2<f64>,
        bones: usize,
    ) -> Result<RpsInput> {
        let t = sets.t();
        if feats.mfcc.ncols() != t || feats.chroma.ncols() != t {
            return Err(Error::ShapeMismatch {
                context: "rps features".into(),
                expected: format!("{t} columns"),
                got: format!("{} / {}", feats.mfcc.ncols(), feats.chroma.ncols()),
            });
        }
        if seed_poses.dim().0 < sets.t_s() {
            return Err(Error::CoverageError(format!(
                "seed poses cover {} frames, need {}",
                seed_poses.dim().0,
                sets.t_s()
            )));
        }
        let non_seed_beats = sets.non_seed_beats();
        if use_beats && beat_poses.dim().0 != non_seed_beats.len() {
            return Err(Error::CoverageError(format!(
                "beat poses cover {} frames, sets have {} non-seed beats",
                beat_poses.dim().0,
                non_seed_beats.len()
            )));
        }
        if noise.ncols() != t {
            return Err(Error::ShapeMismatch {
                context: "rps noise".into(),
                expected: format!("{t} columns"),
                got: format!("{}", noise.ncols()),
            });
        }
        let mut channel = Array2::zeros((3 * bones, t));
        let mut states = vec![STATE_MASKED; t];
        for f in 1..=sets.t_s() {
            states[f - 1] = STATE_SEED;
            for bone in 0..bones {
                for a in 0..3 {
                    channel[[3 * bone + a, f - 1]] = seed_poses[[f - 1, bone, a]];
                }
            }
        }
        if use_beats {
            for (i, &f) in non_seed_beats.iter().enumerate() {
                states[f - 1] = STATE_BEAT;
                for bone in 0..bones {
                    for a in 0..3 {
                        channel[[3 * bone + a, f - 1]] = beat_poses[[i, bone, a]];
                    }
                }
            }
        }
        let repletion_columns: Vec<usize> = (0..t)
            .filter(|&c| states[c] == STATE_MASKED)
            .collect();
        Ok(RpsInput {
            mfcc: feats.mfcc.clone(),
            chroma: feats.chroma.clone(),
            pose_channel: channel,
            states,
            noise,
            frames: (1..=t).collect(),
            repletion_columns,
        })
    }
}

/// Per-frame standard Gaussian noise block.
pub fn draw_noise(dim: usize, t: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((dim, t), |_| normal_sample(rng))
}

/// Runs the generator; returns the repletion poses `(|R|, nb, 3)` and the
/// full-length latent sequence `(latent_dim, T)`.
pub fn rps_generate(
    gen: &RpsGenerator,
    store: &ParamStore,
    input: &RpsInput,
) -> Result<(Array3<f64>, Array2<f64>)> {
    let tape = Tape::new();
    let binder = Binder::new(&tape, store);
    let (motion, z) = gen.forward_t(&binder, input);
    let rep = tape.gather_cols(motion, &input.repletion_columns);
    Ok((matrix_to_linevecs(&tape.value(rep)), tape.value(z)))
}

/// Assembles seed, beat, and repletion poses into the full T-frame dance.
/// Every frame must be covered by exactly one source.
pub fn assemble_full_dance(
    seed_poses: &Array3<f64>,
    beat_poses: &Array3<f64>,
    repletion: &Array3<f64>,
    sets: &FrameIndexSets,
    fps: f64,
) -> Result<PoseSequence> {
    let t = sets.t();
    let non_seed_beats = sets.non_seed_beats();
    let repletion_frames = sets.repletion_frames();
    if seed_poses.dim().0 < sets.t_s() {
        return Err(Error::CoverageError(format!(
            "seed covers {} frames, need {}",
            seed_poses.dim().0,
            sets.t_s()
        )));
    }
    if beat_poses.dim().0 != non_seed_beats.len() {
        return Err(Error::CoverageError(format!(
            "beat poses cover {}, need {}",
            beat_poses.dim().0,
            non_seed_beats.len()
        )));
    }
    if repletion.dim().0 != repletion_frames.len() {
        return Err(Error::CoverageError(format!(
            "repletion covers {}, need {}",
            repletion.dim().0,
            repletion_frames.len()
        )));
    }
    let nb = seed_poses.dim().1;
    let mut filled = vec![false; t];
    let mut lv = Array3::zeros((t, nb, 3));
    let mut put = |frame: usize, src: ndarray::ArrayView2<f64>| {
        let c = frame - 1;
        assert!(!filled[c], "frame {frame} filled twice");
        filled[c] = true;
        for b in 0..nb {
            for a in 0..3 {
                lv[[c, b, a]] = src[[b, a]];
            }
        }
    };
    for f in 1..=sets.t_s() {
        put(f, seed_poses.index_axis(ndarray::Axis(0), f - 1));
    }
    for (i, &f) in non_seed_beats.iter().enumerate() {
        put(f, beat_poses.index_axis(ndarray::Axis(0), i));
    }
    for (i, &f) in repletion_frames.iter().enumerate() {
        put(f, repletion.index_axis(ndarray::Axis(0), i));
    }
    if let Some(gap) = filled.iter().position(|&f| !f) {
        return Err(Error::CoverageError(format!("frame {} left unfilled", gap + 1)));
    }
    PoseSequence::new(fps, lv, None)
}

// ------------------------------------------------------------ discriminator

pub struct RpsDiscriminator {
    pub cfg: RpsConfig,
    pub bones: usize,
    pose_enc: GraphPoseEncoder,
    bigru: BiGru,
    fc1: Linear,
    fc2: Linear,
}

impl RpsDiscriminator {
    pub fn new(cfg: RpsConfig, topo: &SkeletonTopology) -> Result<Self> {
        cfg.validate()?;
        let bones = topo.num_bones();
        let pose_enc = GraphPoseEncoder::new(
            "rps.disc.pose",
            GraphPoseEncoderConfig {
                bones,
                spatial_channels: cfg.pose_spatial,
                temporal_kernel: cfg.pose_temporal_kernel,
                temporal_hidden: cfg.pose_temporal_hidden,
                out_dim: cfg.pose_dim,
            },
            topo.bone_adjacency(),
        )?;
        let bigru = BiGru::new("rps.disc.gru", cfg.pose_dim, cfg.disc_hidden);
        let fc1 = Linear::new("rps.disc.fc1", 2 * cfg.disc_hidden, cfg.disc_fc);
        let fc2 = Linear::new("rps.disc.fc2", cfg.disc_fc, 1);
        Ok(Self { cfg, bones, pose_enc, bigru, fc1, fc2 })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.pose_enc.init(store, rng);
        self.bigru.init(store, rng);
        self.fc1.init(store, rng);
        self.fc2.init(store, rng);
    }

    pub fn param_count(&self) -> usize {
        self.pose_enc.param_count()
            + self.bigru.param_count()
            + self.fc1.param_count()
            + self.fc2.param_count()
    }

    /// Probability that `poses` (`(3 nb, T)`) is a real dance, as a
    /// `1 x 1` var strictly inside (0, 1).
    pub fn forward_t(&self, b: &Binder, poses: Var) -> Var {
        let t = b.tape();
        let l = t.shape(poses).1;
        let states = vec![1.0; l];
        let q = self.pose_enc.forward(b, poses, &states);
        let h = self.bigru.forward(b, q);
        let pooled = t.mean_cols(h);
        let f1 = t.leaky_relu(self.fc1.forward(b, pooled), 0.2);
        t.sigmoid(self.fc2.forward(b, f1))
    }
}

/// Discriminator probability for a pose sequence.
pub fn disc_forward(
    disc: &RpsDiscriminator,
    store: &ParamStore,
    poses: &PoseSequence,
) -> Result<f64> {
    if poses.num_bones() != disc.bones {
        return Err(Error::ShapeMismatch {
            context: "disc_forward".into(),
            expected: format!("{} bones", disc.bones),
            got: format!("{}", poses.num_bones()),
        });
    }
    let tape = Tape::new();
    let binder = Binder::new(&tape, store);
    let m = binder.constant(pose_matrix(&poses.line_vectors));
    let p = disc.forward_t(&binder, m);
    Ok(tape.scalar(p))
}

// ------------------------------------------------------- trajectory predictor

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub pose_dim: usize,
    pub encoder: TransformerConfig,
    pub decoder: TransformerConfig,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            pose_dim: 16,
            encoder: TransformerConfig {
                model_dim: 16,
                heads: 4,
                blocks: 6,
                feedforward_dim: 64,
                dropout: 0.0,
            },
            decoder: TransformerConfig {
                model_dim: 16,
                heads: 1,
                blocks: 8,
                feedforward_dim: 64,
                dropout: 0.0,
            },
        }
    }
}

impl TrajectoryConfig {
    pub fn reduced() -> Self {
        Self {
            pose_dim: 8,
            encoder: TransformerConfig {
                model_dim: 8,
                heads: 2,
                blocks: 2,
                feedforward_dim: 16,
                dropout: 0.0,
            },
            decoder: TransformerConfig {
                model_dim: 8,
                heads: 1,
                blocks: 2,
                feedforward_dim: 16,
                dropout: 0.0,
            },
        }
    }
}

/// Sequence-to-sequence root predictor: a transformer encoder over the
/// generated poses and a causal transformer decoder emitting one 3-D root
/// position per frame.
pub struct TrajectoryPredictor {
    pub cfg: TrajectoryConfig,
    pub bones: usize,
    encoder: TransformerEncoder,
    decoder: TransformerDecoder,
}

impl TrajectoryPredictor {
    pub fn new(cfg: TrajectoryConfig, topo: &SkeletonTopology) -> Result<Self> {
        cfg.encoder.validate()?;
        cfg.decoder.validate()?;
        let bones = topo.num_bones();
        if cfg.encoder.model_dim != cfg.pose_dim {
            return Err(Error::Config(
                "trajectory encoder model_dim must equal pose_dim".into(),
            ));
        }
        let encoder =
            TransformerEncoder::new("traj.te", cfg.encoder.clone(), bones * 3, None)?;
        let decoder = TransformerDecoder::new("traj.td", cfg.decoder.clone(), cfg.pose_dim, 3)?;
        Ok(Self { cfg, bones, encoder, decoder })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.encoder.init(store, rng);
        self.decoder.init(store, rng);
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    /// Teacher-forced training pass: `gt_prev` column `t` is the root fed
    /// back when predicting column `t + 1`.
    pub fn forward_teacher_t(
        &self,
        b: &Binder,
        poses: &Array2<f64>,
        frames: &[usize],
        gt_prev: &Array2<f64>,
    ) -> Var {
        let mem = self.encoder.forward(b, b.constant(poses.clone()), frames, None, None);
        self.decoder.forward(
            b,
            mem,
            frames,
            DecodeMode::Autoregressive { feedback: Some(gt_prev) },
            None,
        )
    }
}

/// Autoregressive root prediction for a (usually generated) pose matrix
/// `(3 nb, L)` at the given frame indices; returns `(3, L)`.
pub fn predict_trajectory(
    tp: &TrajectoryPredictor,
    store: &ParamStore,
    poses: &Array2<f64>,
    frames: &[usize],
) -> Result<Array2<f64>> {
    if poses.nrows() != 3 * tp.bones {
        return Err(Error::ShapeMismatch {
            context: "predict_trajectory".into(),
            expected: format!("{} rows", 3 * tp.bones),
            got: format!("{}", poses.nrows()),
        });
    }
    if poses.ncols() != frames.len() || frames.is_empty() {
        return Err(Error::ShapeMismatch {
            context: "predict_trajectory frames".into(),
            expected: format!("{} frame indices (>= 1)", poses.ncols()),
            got: format!("{}", frames.len()),
        });
    }
    let tape = Tape::new();
    let binder = Binder::new(&tape, store);
    let mem = tp.encoder.forward(&binder, binder.constant(poses.clone()), frames, None, None);
    let out = tp.decoder.forward(
        &binder,
        mem,
        frames,
        DecodeMode::Autoregressive { feedback: None },
        None,
    );
    Ok(tape.value(out))
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

    fn rand_poses(rng: &mut ChaCha8Rng, t: usize, nb: usize) -> Array3<f64> {
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
        let mut beats = vec![2, 9, 16];
        beats.extend((0..17).map(|i| 21 + 2 * i));
        FrameIndexSets::new(70, 20, beats, 20).unwrap()
    }

    struct Setup {
        gen: RpsGenerator,
        store: ParamStore,
        sets: FrameIndexSets,
        seed: Array3<f64>,
        beats: Array3<f64>,
        feats: AudioFeatureSet,
    }

    fn setup() -> Setup {
        let topo = topo();
        let gen = RpsGenerator::new(RpsConfig::reduced(), &topo).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        gen.init(&mut store, &mut rng);
        let sets = paper_scale_sets();
        let seed = rand_poses(&mut rng, 20, topo.num_bones());
        let beats = rand_poses(&mut rng, sets.non_seed_beats().len(), topo.num_bones());
        let feats = rand_feats(&mut rng, 70);
        Setup { gen, store, sets, seed, beats, feats }
    }

    #[test]
    fn repletion_count_is_partition_remainder() {
        let s = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = draw_noise(s.gen.cfg.noise_dim, 70, &mut rng);
        let input =
            RpsInput::build(&s.feats, &s.sets, &s.seed, &s.beats, true, noise, s.gen.bones).unwrap();
        let (rep, z) = rps_generate(&s.gen, &s.store, &input).unwrap();
        assert_eq!(rep.dim(), (70 - 20 - 17, 23, 3));
        assert_eq!(z.dim(), (s.gen.cfg.latent_dim, 70));
        for f in 0..rep.dim().0 {
            for b in 0..23 {
                let n: f64 = (0..3).map(|a| rep[[f, b, a]].powi(2)).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn different_noise_changes_output() {
        let s = setup();
        let mut rng1 = ChaCha8Rng::seed_from_u64(2);
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        let n1 = draw_noise(s.gen.cfg.noise_dim, 70, &mut rng1);
        let n2 = draw_noise(s.gen.cfg.noise_dim, 70, &mut rng2);
        let i1 = RpsInput::build(&s.feats, &s.sets, &s.seed, &s.beats, true, n1, s.gen.bones).unwrap();
        let i2 = RpsInput::build(&s.feats, &s.sets, &s.seed, &s.beats, true, n2, s.gen.bones).unwrap();
        let (a, _) = rps_generate(&s.gen, &s.store, &i1).unwrap();
        let (b, _) = rps_generate(&s.gen, &s.store, &i2).unwrap();
        let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-9);
    }

    #[test]
    fn noise_sensitivity_over_sixteen_draws() {
        let s = setup();
        let mut outputs = Vec::new();
        for k in 0..16u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + k);
            let noise = draw_noise(s.gen.cfg.noise_dim, 70, &mut rng);
            let input =
                RpsInput::build(&s.feats, &s.sets, &s.seed, &s.beats, true, noise, s.gen.bones)
                    .unwrap();
            let (rep, _) = rps_generate(&s.gen, &s.store, &input).unwrap();
            outputs.push(rep);
        }
        let mut distinct = 0;
        let mut total = 0;
        for i in 0..16 {
            for j in (i + 1)..16 {
                total += 1;
                let d: f64 = outputs[i]
                    .iter()
                    .zip(outputs[j].iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if d > 0.0 {
                    distinct += 1;
                }
            }
        }
        assert!(distinct >= total * 15 / 16, "only {distinct}/{total} pairs distinct");
    }

    #[test]
    fn coverage_mismatch_is_rejected() {
        let s = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = draw_noise(s.gen.cfg.noise_dim, 70, &mut rng);
        let wrong_beats = rand_poses(&mut rng, 5, s.gen.bones);
        assert!(matches!(
            RpsInput::build(&s.feats, &s.sets, &s.seed, &wrong_beats, true, noise, s.gen.bones),
            Err(Error::CoverageError(_))
        ));
    }

    #[test]
    fn assemble_covers_every_frame_once() {
        let s = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rep = rand_poses(&mut rng, s.sets.repletion_frames().len(), s.gen.bones);
        let dance = assemble_full_dance(&s.seed, &s.beats, &rep, &s.sets, 10.0).unwrap();
        assert_eq!(dance.len(), 70);
        // Dropping one repletion frame leaves a gap.
        let short = rand_poses(&mut rng, s.sets.repletion_frames().len() - 1, s.gen.bones);
        assert!(matches!(
            assemble_full_dance(&s.seed, &s.beats, &short, &s.sets, 10.0),
            Err(Error::CoverageError(_))
        ));
    }

    #[test]
    fn assemble_ground_truth_parts_is_identity() {
        let s = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let full = rand_poses(&mut rng, 70, s.gen.bones);
        let seed = full.slice(ndarray::s![..20, .., ..]).to_owned();
        let beat_frames = s.sets.non_seed_beats();
        let mut beats = Array3::zeros((beat_frames.len(), s.gen.bones, 3));
        for (i, &f) in beat_frames.iter().enumerate() {
            for b in 0..s.gen.bones {
                for a in 0..3 {
                    beats[[i, b, a]] = full[[f - 1, b, a]];
                }
            }
        }
        let rep_frames = s.sets.repletion_frames();
        let mut rep = Array3::zeros((rep_frames.len(), s.gen.bones, 3));
        for (i, &f) in rep_frames.iter().enumerate() {
            for b in 0..s.gen.bones {
                for a in 0..3 {
                    rep[[i, b, a]] = full[[f - 1, b, a]];
                }
            }
        }
        let dance = assemble_full_dance(&seed, &beats, &rep, &s.sets, 10.0).unwrap();
        assert_eq!(dance.line_vectors, full);
    }

    #[test]
    fn discriminator_output_in_open_interval_and_init_sane() {
        let topo = topo();
        let disc = RpsDiscriminator::new(RpsConfig::reduced(), &topo).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        disc.init(&mut store, &mut rng);
        assert_eq!(store.total_params(), disc.param_count());
        let mut acc = 0.0;
        let n = 12;
        for _ in 0..n {
            let poses = rand_poses(&mut rng, 30, topo.num_bones());
            let seq = PoseSequence::new(10.0, poses, None).unwrap();
            let p = disc_forward(&disc, &store, &seq).unwrap();
            assert!(p > 0.0 && p < 1.0, "p = {p}");
            acc += p;
        }
        let mean = acc / n as f64;
        assert!((0.3..0.7).contains(&mean), "untrained disc mean {mean}");
    }

    #[test]
    fn discriminator_fd_gradient_on_tiny_skeleton() {
        // 4-joint chain: 3 bones, 2 frames.
        let topo = SkeletonTopology::new(
            vec!["root".into(), "a".into(), "b".into(), "c".into()],
            vec![-1, 0, 1, 2],
            vec![1.0, 1.0, 1.0],
            [[0, 1, 2], [0, 1, 2]],
            [3, 3],
        )
        .unwrap();
        let mut cfg = RpsConfig::reduced();
        cfg.pose_spatial = (4, 4);
        cfg.pose_temporal_kernel = 3;
        cfg.pose_temporal_hidden = 8;
        cfg.pose_dim = 6;
        cfg.disc_hidden = 6;
        cfg.disc_fc = 6;
        let disc = RpsDiscriminator::new(cfg, &topo).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        disc.init(&mut store, &mut rng);
        let poses = Array2::from_shape_fn((9, 2), |_| rng.random_range(-1.0..1.0));
        let loss_fn = |s: &ParamStore| {
            let tape = Tape::new();
            let binder = Binder::new(&tape, s);
            let p = disc.forward_t(&binder, binder.constant(poses.clone()));
            tape.scalar(tape.ln_clamped(p, 1e-7))
        };
        let tape = Tape::new();
        let binder = Binder::new(&tape, &store);
        let p = disc.forward_t(&binder, binder.constant(poses.clone()));
        let out = tape.ln_clamped(p, 1e-7);
        let grads = tape.backward(out);
        let analytic = binder.collect_grads(&grads);
        let err = crate::netcore::fd_max_rel_err(&store, &analytic, loss_fn, 1e-5, 6);
        assert!(err < 1e-4, "disc fd err {err}");
    }

    #[test]
    fn trajectory_lengths_and_causality() {
        let topo = topo();
        let tp = TrajectoryPredictor::new(TrajectoryConfig::reduced(), &topo).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        tp.init(&mut store, &mut rng);
        assert_eq!(store.total_params(), tp.param_count());
        let poses1 = Array2::from_shape_fn((69, 1), |_| rng.random_range(-1.0..1.0));
        let r1 = predict_trajectory(&tp, &store, &poses1, &[21]).unwrap();
        assert_eq!(r1.dim(), (3, 1));
        let poses = Array2::from_shape_fn((69, 6), |_| rng.random_range(-1.0..1.0));
        let frames: Vec<usize> = (21..27).collect();
        let r = predict_trajectory(&tp, &store, &poses, &frames).unwrap();
        assert_eq!(r.dim(), (3, 6));

        // Causality: perturbing the decode-step-k feedback leaves earlier
        // outputs untouched (teacher-forced replay of the same outputs).
        let tape = Tape::new();
        let binder = Binder::new(&tape, &store);
        let y1 = tape.value(tp.forward_teacher_t(&binder, &poses, &frames, &r));
        let mut fb = r.clone();
        fb[[0, 3]] += 1.0;
        let y2 = tape.value(tp.forward_teacher_t(&binder, &poses, &frames, &fb));
        for c in 0..=3 {
            for row in 0..3 {
                assert_eq!(y1[[row, c]], y2[[row, c]], "leak at {c}");
            }
        }
        // Teacher-forced replay of the model's own outputs reproduces them.
        let max_err = y1
            .iter()
            .zip(r.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-9, "sequential vs teacher replay {max_err}");
    }

    #[test]
    fn generator_param_count_matches_store() {
        let s = setup();
        assert_eq!(s.store.total_params(), s.gen.param_count());
    }
}
