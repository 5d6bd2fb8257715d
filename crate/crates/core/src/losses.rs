//! Training objectives: pose motion, leg motion, adversarial, root
//! translation, their weighted totals, and the randomized temporal
//! contrastive (RTC) term that drives segment diversity.
//!
//! Every loss exists twice: a tape-level function (`*_t`) used inside
//! training graphs, and a plain wrapper evaluating the same graph on
//! constants. Velocities use forward differences with last-value padding
//! throughout, matching the kinematics in [`crate::skeleton`].

use ndarray::{s, Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::netcore::{Tape, Var};
use crate::skeleton::{PoseSequence, SkeletonTopology};

/// Smooth-l1 transition point.
pub const HUBER_BETA: f64 = 1.0;
/// Probability floor inside adversarial logs.
pub const LOG_FLOOR: f64 = 1e-7;

/// Loss weights; position/velocity weights apply inside each motion loss,
/// the lambda_* weights combine losses into stage totals.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda_pose: f64,
    pub lambda_vel: f64,
    pub lambda_pm: f64,
    pub lambda_lm: f64,
    pub lambda_gen: f64,
    pub lambda_rtc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_pose: 1.0,
            lambda_vel: 1.0,
            lambda_pm: 5.0,
            lambda_lm: 3e-3,
            lambda_gen: 5e-2,
            lambda_rtc: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_pose,
            self.lambda_vel,
            self.lambda_pm,
            self.lambda_lm,
            self.lambda_gen,
            self.lambda_rtc,
        ];
        if all.iter().any(|&l| l < 0.0 || !l.is_finite()) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Leg-angle weights from the leg motion loss definition.
pub const LEG_POSE_WEIGHT: f64 = 0.3;
pub const LEG_VEL_WEIGHT: f64 = 0.7;

/// Distance metric selector for the pose motion loss: mean squared error
/// for the beat stage, smooth-l1 for the repletion stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    Mse,
    SmoothL1,
}

fn mse_mean_t(t: &Tape, a: Var, b: Var) -> Var {
    let d = t.sub(a, b);
    t.mean_all(t.mul(d, d))
}

fn distance_t(t: &Tape, a: Var, b: Var, kind: DistanceKind) -> Var {
    match kind {
        DistanceKind::Mse => mse_mean_t(t, a, b),
        DistanceKind::SmoothL1 => t.huber_mean(a, b, HUBER_BETA),
    }
}

// ------------------------------------------------------------ pose motion

/// `lambda_pose * d(gt, pred) + lambda_vel * d(diff gt, diff pred)` on
/// `(features, T)` matrices.
pub fn pose_motion_loss_t(t: &Tape, gt: Var, pred: Var, kind: DistanceKind, w: &LossWeights) -> Var {
    let pos = distance_t(t, gt, pred, kind);
    let vel = distance_t(t, t.time_diff_padded(gt), t.time_diff_padded(pred), kind);
    t.add(t.scale(pos, w.lambda_pose), t.scale(vel, w.lambda_vel))
}

pub fn pose_motion_loss(
    gt: &Array2<f64>,
    pred: &Array2<f64>,
    kind: DistanceKind,
    w: &LossWeights,
) -> Result<f64> {
    if gt.dim() != pred.dim() {
        return Err(Error::ShapeMismatch {
            context: "pose_motion_loss".into(),
            expected: format!("{:?}", gt.dim()),
            got: format!("{:?}", pred.dim()),
        });
    }
    let t = Tape::new();
    let g = t.constant(gt.clone());
    let p = t.constant(pred.clone());
    Ok(t.scalar(pose_motion_loss_t(&t, g, p, kind, w)))
}

// ------------------------------------------------------------- leg motion

/// Smooth-l1 on femur-shin angles (weight 0.3) and their angular
/// velocities (weight 0.7). Inputs are `(3 * nb, T)` bone-direction
/// matrices; `pairs` holds the (femur, shin) bone indices per leg.
pub fn leg_motion_loss_t(t: &Tape, gt: Var, pred: Var, pairs: &[(usize, usize)]) -> Var {
    let theta_gt = t.bone_angles(gt, pairs);
    let theta_pred = t.bone_angles(pred, pairs);
    let omega_gt = t.time_diff_padded(theta_gt);
    let omega_pred = t.time_diff_padded(theta_pred);
    let pos = t.huber_mean(theta_gt, theta_pred, HUBER_BETA);
    let vel = t.huber_mean(omega_gt, omega_pred, HUBER_BETA);
    t.add(t.scale(pos, LEG_POSE_WEIGHT), t.scale(vel, LEG_VEL_WEIGHT))
}

pub fn leg_motion_loss(
    gt: &PoseSequence,
    pred: &PoseSequence,
    topo: &SkeletonTopology,
) -> Result<f64> {
    if gt.line_vectors.dim() != pred.line_vectors.dim() {
        return Err(Error::ShapeMismatch {
            context: "leg_motion_loss".into(),
            expected: format!("{:?}", gt.line_vectors.dim()),
            got: format!("{:?}", pred.line_vectors.dim()),
        });
    }
    let pairs = leg_bone_pairs(topo);
    let t = Tape::new();
    let g = t.constant(pose_matrix(&gt.line_vectors));
    let p = t.constant(pose_matrix(&pred.line_vectors));
    Ok(t.scalar(leg_motion_loss_t(&t, g, p, &pairs)))
}

/// (femur, shin) bone indices for both legs.
pub fn leg_bone_pairs(topo: &SkeletonTopology) -> Vec<(usize, usize)> {
    topo.leg_chains()
        .iter()
        .map(|&[_, knee, ankle]| {
            (
                topo.bone_of_joint(knee).expect("validated chain"),
                topo.bone_of_joint(ankle).expect("validated chain"),
            )
        })
        .collect()
}

/// `(T, nb, 3)` line vectors to the network's `(3 * nb, T)` layout
/// (bone-major rows, one column per frame).
pub fn pose_matrix(lv: &Array3<f64>) -> Array2<f64> {
    let (t, nb, _) = lv.dim();
    let mut m = Array2::zeros((3 * nb, t));
    for f in 0..t {
        for b in 0..nb {
            for a in 0..3 {
                m[[3 * b + a, f]] = lv[[f, b, a]];
            }
        }
    }
    m
}

/// Inverse of [`pose_matrix`].
pub fn matrix_to_linevecs(m: &Array2<f64>) -> Array3<f64> {
    let (rows, t) = m.dim();
    let nb = rows / 3;
    let mut lv = Array3::zeros((t, nb, 3));
    for f in 0..t {
        for b in 0..nb {
            for a in 0..3 {
                lv[[f, b, a]] = m[[3 * b + a, f]];
            }
        }
    }
    lv
}

// ------------------------------------------------------------ adversarial

/// Generator loss `-E[log D(fake)]` over per-sample probability vars.
pub fn adversarial_gen_loss_t(t: &Tape, p_fake: &[Var]) -> Var {
    let logs: Vec<Var> = p_fake.iter().map(|&p| t.ln_clamped(p, LOG_FLOOR)).collect();
    let cat = t.concat_rows(&logs);
    t.scale(t.mean_all(cat), -1.0)
}

/// Discriminator loss `-E[log D(real)] - E[log(1 - D(fake))]`.
pub fn adversarial_disc_loss_t(t: &Tape, p_real: &[Var], p_fake: &[Var]) -> Var {
    let real_logs: Vec<Var> = p_real.iter().map(|&p| t.ln_clamped(p, LOG_FLOOR)).collect();
    let fake_logs: Vec<Var> = p_fake
        .iter()
        .map(|&p| {
            let one_minus = t.add_scalar(t.scale(p, -1.0), 1.0);
            t.ln_clamped(one_minus, LOG_FLOOR)
        })
        .collect();
    let real_term = t.scale(t.mean_all(t.concat_rows(&real_logs)), -1.0);
    let fake_term = t.scale(t.mean_all(t.concat_rows(&fake_logs)), -1.0);
    t.add(real_term, fake_term)
}

/// `(gen_loss, disc_loss)` from discriminator probabilities.
pub fn adversarial_losses(p_real: &[f64], p_fake: &[f64]) -> (f64, f64) {
    let t = Tape::new();
    let vr: Vec<Var> = p_real
        .iter()
        .map(|&p| t.constant(Array2::from_elem((1, 1), p)))
        .collect();
    let vf: Vec<Var> = p_fake
        .iter()
        .map(|&p| t.constant(Array2::from_elem((1, 1), p)))
        .collect();
    (
        t.scalar(adversarial_gen_loss_t(&t, &vf)),
        t.scalar(adversarial_disc_loss_t(&t, &vr, &vf)),
    )
}

// -------------------------------------------------------- root translation

/// MSE on positions plus smooth-l1 on velocity differences, over `(3, T)`
/// root trajectories.
pub fn root_translation_loss_t(t: &Tape, gt: Var, pred: Var, w: &LossWeights) -> Var {
    let pos = mse_mean_t(t, gt, pred);
    let vel = t.huber_mean(t.time_diff_padded(gt), t.time_diff_padded(pred), HUBER_BETA);
    t.add(t.scale(pos, w.lambda_pose), t.scale(vel, w.lambda_vel))
}

pub fn root_translation_loss(gt: &Array2<f64>, pred: &Array2<f64>, w: &LossWeights) -> Result<f64> {
    if gt.dim() != pred.dim() {
        return Err(Error::ShapeMismatch {
            context: "root_translation_loss".into(),
            expected: format!("{:?}", gt.dim()),
            got: format!("{:?}", pred.dim()),
        });
    }
    let t = Tape::new();
    let g = t.constant(gt.clone());
    let p = t.constant(pred.clone());
    Ok(t.scalar(root_translation_loss_t(&t, g, p, w)))
}

// --------------------------------------------------------------- segments

/// Overlapping segment plan: segment `i` covers columns
/// `[i * slide, i * slide + length)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SegmentPlan {
    pub length: usize,
    pub slide: usize,
}

impl SegmentPlan {
    pub fn new(length: usize, slide: usize) -> Result<Self> {
        if length == 0 || slide == 0 {
            return Err(Error::Config("segment length and slide must be >= 1".into()));
        }
        Ok(Self { length, slide })
    }

    /// `ceil((len - length) / slide)` segments; zero if the sequence is not
    /// strictly longer than one segment.
    pub fn segment_count(&self, seq_len: usize) -> usize {
        if seq_len <= self.length {
            return 0;
        }
        (seq_len - self.length).div_ceil(self.slide)
    }

    pub fn segment_range(&self, i: usize) -> (usize, usize) {
        (i * self.slide, i * self.slide + self.length)
    }

    /// Segments overlap iff their starts are closer than one length.
    pub fn non_overlapping(&self, i: usize, j: usize) -> bool {
        i.abs_diff(j) * self.slide >= self.length
    }
}

fn segment_cossim(seq: &Array2<f64>, plan: &SegmentPlan, i: usize, j: usize) -> f64 {
    let (a0, a1) = plan.segment_range(i);
    let (b0, b1) = plan.segment_range(j);
    let a = seq.slice(s![.., a0..a1]);
    let b = seq.slice(s![.., b0..b1]);
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = (na.sqrt() * nb.sqrt()).max(1e-12);
    dot / denom
}

/// The non-overlapping peer of segment `n` with the minimum absolute
/// cosine similarity (ties to the smallest index); None when every other
/// segment overlaps `n`.
pub fn min_abs_cossim_peer(seq: &Array2<f64>, plan: &SegmentPlan, n: usize) -> Option<usize> {
    let n_seg = plan.segment_count(seq.ncols());
    let mut best: Option<(usize, f64)> = None;
    for x in 0..n_seg {
        if !plan.non_overlapping(n, x) {
            continue;
        }
        let sim = segment_cossim(seq, plan, n, x).abs();
        match best {
            Some((_, b)) if sim >= b => {}
            _ => best = Some((x, sim)),
        }
    }
    best.map(|(x, _)| x)
}

/// Picks a random segment `n` (uniform over segments that have at least one
/// non-overlapping peer) and its most-dissimilar non-overlapping peer
/// `n_bar` (minimum absolute cosine similarity, ties to the smallest
/// index). `seq` is any `(features, L)` sequence; the caller decides what
/// it contains.
pub fn select_contrast_segment(
    seq: &Array2<f64>,
    plan: &SegmentPlan,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, usize)> {
    let n_seg = plan.segment_count(seq.ncols());
    if n_seg < 2 {
        return Err(Error::TooFewSegments(format!(
            "{n_seg} segment(s) for length {} (need >= 2)",
            seq.ncols()
        )));
    }
    let eligible: Vec<usize> = (0..n_seg)
        .filter(|&i| (0..n_seg).any(|j| plan.non_overlapping(i, j)))
        .collect();
    if eligible.is_empty() {
        return Err(Error::TooFewSegments(format!(
            "all {n_seg} segments mutually overlap (length {}, slide {})",
            plan.length, plan.slide
        )));
    }
    let n = eligible[rng.random_range(0..eligible.len())];
    let n_bar = min_abs_cossim_peer(seq, plan, n).expect("eligible n has a non-overlapping peer");
    Ok((n, n_bar))
}

// -------------------------------------------------------------------- rtc

/// Absolute cosine similarity between two latent segments of `z`
/// (`(d_z, L)`), flattened; in `[0, 1]`.
pub fn rtc_loss_t(t: &Tape, z: Var, n: usize, n_bar: usize, plan: &SegmentPlan) -> Result<Var> {
    let l = t.shape(z).1;
    for &i in &[n, n_bar] {
        let (_, end) = plan.segment_range(i);
        if end > l {
            return Err(Error::IndexOutOfRange(format!(
                "segment {i} ends at {end} but z has {l} columns"
            )));
        }
    }
    let (a0, a1) = plan.segment_range(n);
    let (b0, b1) = plan.segment_range(n_bar);
    let a = t.slice_cols(z, a0, a1);
    let b = t.slice_cols(z, b0, b1);
    let dot = t.sum_all(t.mul(a, b));
    let na = t.sqrt_guard(t.sum_all(t.mul(a, a)), 1e-12);
    let nb = t.sqrt_guard(t.sum_all(t.mul(b, b)), 1e-12);
    Ok(t.abs(t.div(dot, t.mul(na, nb))))
}

pub fn rtc_loss(z: &Array2<f64>, n: usize, n_bar: usize, plan: &SegmentPlan) -> Result<f64> {
    let t = Tape::new();
    let zv = t.constant(z.clone());
    Ok(t.scalar(rtc_loss_t(&t, zv, n, n_bar, plan)?))
}

/// Flattens a segment in frame-major order (frame, then bone, then
/// coordinate), the documented layout for exported latent vectors.
pub fn flatten_segment_frame_major(seq: &Array2<f64>, plan: &SegmentPlan, i: usize) -> Vec<f64> {
    let (c0, c1) = plan.segment_range(i);
    let mut out = Vec::with_capacity((c1 - c0) * seq.nrows());
    for c in c0..c1 {
        for r in 0..seq.nrows() {
            out.push(seq[[r, c]]);
        }
    }
    out
}

// ------------------------------------------------------------------ totals

/// Per-batch component losses (already scalars).
#[derive(Debug, Clone, Copy, Default)]
pub struct LossComponents {
    pub pose_motion: f64,
    pub leg_motion: f64,
    pub generator: f64,
    pub rtc: f64,
}

/// Weighted totals: the beat-stage loss ignores the adversarial and RTC
/// terms entirely.
pub fn total_losses(c: &LossComponents, w: &LossWeights) -> Result<(f64, f64)> {
    let vals = [c.pose_motion, c.leg_motion, c.generator, c.rtc];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss(format!("components {c:?}")));
    }
    let bps = w.lambda_pm * c.pose_motion + w.lambda_lm * c.leg_motion;
    let rps_gen = bps + w.lambda_gen * c.generator + w.lambda_rtc * c.rtc;
    Ok((bps, rps_gen))
}
