//! Evaluation suite: kinetic and geometric motion features, Frechet
//! distance between feature distributions, motion diversity, beat
//! alignment, physical foot contact, and the latent-dispersion export.
//!
//! The kinetic/geometric feature extractors are fixed, documented
//! stand-ins for the feature families used in prior evaluation protocols;
//! absolute scores are comparable only within this implementation. Every
//! report carries that caveat in its `note` field.

mod dispersion;
mod fid;
mod scores;

pub use dispersion::{latent_dispersion_export, DispersionExport, LatentRow};
pub use fid::{fid, motion_diversity};
pub use scores::{
    beat_alignment_score, kinematic_beats, kinematic_beats_of, kinetic_velocity_curve, pfc,
    BasResult, DEFAULT_BAS_SIGMA,
};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::skeleton::{
    femur_shin_angles, forward_diff_padded, linevecs_to_positions, PoseSequence, SkeletonTopology,
};

/// Feature family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Kinetic,
    Geometric,
}

/// Fixed-width per-clip feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

/// Corpus-level evaluation summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub note: String,
    pub fid_k: f64,
    pub fid_g: f64,
    pub md_k: f64,
    pub md_g: f64,
    pub bas: f64,
    pub bas_used_fallback: bool,
    pub pfc: f64,
    pub ref_clips: usize,
    pub gen_clips: usize,
}

pub const REPORT_NOTE: &str = "kinetic/geometric features are fixed stand-ins; \
compare scores only against values produced by this implementation";

/// Per-joint, per-axis mean squared velocity (units m^2/s^2), width `3 * J`.
pub fn kinetic_features(pose: &PoseSequence, topo: &SkeletonTopology) -> Result<FeatureVector> {
    let pos = linevecs_to_positions(pose, topo)?;
    let (t, j, _) = pos.dim();
    let fps2 = pose.fps * pose.fps;
    let mut values = vec![0.0; 3 * j];
    if t >= 2 {
        for jt in 0..j {
            for a in 0..3 {
                let mut acc = 0.0;
                for f in 0..t - 1 {
                    let d = pos[[f + 1, jt, a]] - pos[[f, jt, a]];
                    acc += d * d;
                }
                values[3 * jt + a] = acc * fps2 / (t - 1) as f64;
            }
        }
    }
    Ok(FeatureVector { kind: FeatureKind::Kinetic, values })
}

/// Names of the 16 boolean relational features, in output order.
pub const GEOMETRIC_FEATURE_NAMES: [&str; 16] = [
    "left_hand_above_head",
    "right_hand_above_head",
    "left_hand_above_shoulder",
    "right_hand_above_shoulder",
    "left_knee_bent_past_90",
    "right_knee_bent_past_90",
    "left_elbow_bent_past_90",
    "right_elbow_bent_past_90",
    "hands_within_shoulder_width",
    "hands_crossed",
    "feet_crossed",
    "feet_wider_than_shoulders",
    "left_foot_above_right",
    "right_foot_above_left",
    "hands_below_root",
    "torso_tilted_past_30deg",
];

/// Time-averaged boolean relational features, width 16, each in `[0, 1]`.
/// Joints are resolved by the standard names; y is the vertical axis.
pub fn geometric_features(pose: &PoseSequence, topo: &SkeletonTopology) -> Result<FeatureVector> {
    let pos = linevecs_to_positions(pose, topo)?;
    let t = pos.dim().0;
    let get = |name: &str| topo.joint_index(name);
    // Hands fall back to wrists for skeletons without hand tips.
    let l_hand = get("left_hand").or_else(|_| get("left_wrist"))?;
    let r_hand = get("right_hand").or_else(|_| get("right_wrist"))?;
    let head = get("head")?;
    let l_shoulder = get("left_shoulder")?;
    let r_shoulder = get("right_shoulder")?;
    let l_elbow = get("left_elbow")?;
    let r_elbow = get("right_elbow")?;
    let l_wrist = get("left_wrist")?;
    let r_wrist = get("right_wrist")?;
    let l_hip = get("left_hip")?;
    let r_hip = get("right_hip")?;
    let root = topo.root();
    let [l_foot, r_foot] = *topo.foot_joints();

    let (theta, _) = femur_shin_angles(pose, topo);

    let p = |f: usize, j: usize| [pos[[f, j, 0]], pos[[f, j, 1]], pos[[f, j, 2]]];
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let norm = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];

    let mut acc = [0.0f64; 16];
    for f in 0..t {
        // Lateral axis: right hip toward left hip, horizontal components.
        let hip_vec = sub(p(f, l_hip), p(f, r_hip));
        let mut lateral = [hip_vec[0], 0.0, hip_vec[2]];
        let ln = norm(lateral);
        if ln < 1e-9 {
            lateral = [1.0, 0.0, 0.0];
        } else {
            lateral = [lateral[0] / ln, 0.0, lateral[2] / ln];
        }
        let shoulder_width = norm(sub(p(f, l_shoulder), p(f, r_shoulder)));

        let elbow_angle = |shoulder: usize, elbow: usize, wrist: usize| -> f64 {
            let upper = sub(p(f, elbow), p(f, shoulder));
            let fore = sub(p(f, wrist), p(f, elbow));
            let nu = norm(upper).max(1e-12);
            let nf = norm(fore).max(1e-12);
            (dot(upper, fore) / (nu * nf)).clamp(-1.0, 1.0).acos()
        };

        let half_pi = std::f64::consts::FRAC_PI_2;
        let checks = [
            p(f, l_hand)[1] > p(f, head)[1],
            p(f, r_hand)[1] > p(f, head)[1],
            p(f, l_hand)[1] > p(f, l_shoulder)[1],
            p(f, r_hand)[1] > p(f, r_shoulder)[1],
            theta[[f, 0]] > half_pi,
            theta[[f, 1]] > half_pi,
            elbow_angle(l_shoulder, l_elbow, l_wrist) > half_pi,
            elbow_angle(r_shoulder, r_elbow, r_wrist) > half_pi,
            norm(sub(p(f, l_hand), p(f, r_hand))) < shoulder_width,
            dot(sub(p(f, l_hand), p(f, r_hand)), lateral) < 0.0,
            dot(sub(p(f, l_foot), p(f, r_foot)), lateral) < 0.0,
            dot(sub(p(f, l_foot), p(f, r_foot)), lateral).abs() > shoulder_width,
            p(f, l_foot)[1] > p(f, r_foot)[1] + 0.05,
            p(f, r_foot)[1] > p(f, l_foot)[1] + 0.05,
            p(f, l_hand)[1] < p(f, root)[1] && p(f, r_hand)[1] < p(f, root)[1],
            {
                let spine = sub(p(f, head), p(f, root));
                let n = norm(spine).max(1e-12);
                (spine[1] / n) < (30f64).to_radians().cos()
            },
        ];
        for (i, &c) in checks.iter().enumerate() {
            if c {
                acc[i] += 1.0;
            }
        }
    }
    let values = acc.iter().map(|&v| v / t as f64).collect();
    Ok(FeatureVector { kind: FeatureKind::Geometric, values })
}

/// Extracts one feature vector per clip.
pub fn corpus_features(
    clips: &[(PoseSequence, SkeletonTopology)],
    kind: FeatureKind,
) -> Result<Vec<FeatureVector>> {
    clips
        .iter()
        .map(|(pose, topo)| match kind {
            FeatureKind::Kinetic => kinetic_features(pose, topo),
            FeatureKind::Geometric => geometric_features(pose, topo),
        })
        .collect()
}

/// Velocity magnitudes (m/s) per frame for a position track `(T, 3)`,
/// forward differences with last-value padding.
pub(crate) fn velocity_rows(track: &ndarray::Array2<f64>, fps: f64) -> ndarray::Array2<f64> {
    forward_diff_padded(track).mapv(|v| v * fps)
}

/// Positions of one joint as `(T, 3)`.
pub(crate) fn joint_track(pos: &Array3<f64>, joint: usize) -> ndarray::Array2<f64> {
    let t = pos.dim().0;
    ndarray::Array2::from_shape_fn((t, 3), |(f, a)| pos[[f, joint, a]])
}
