//! Motion file I/O.
//!
//! The canonical interchange format is a single JSON document:
//!
//! ```json
//! {
//!   "fps": 10.0,
//!   "joint_names": ["pelvis", ...],
//!   "parents": [-1, 0, ...],
//!   "bone_lengths": [0.11, ...],
//!   "root": [[x, y, z], ...],
//!   "line_vectors": [[[x, y, z] x (J-1)] x T]
//! }
//! ```
//!
//! Leg chains and foot joints are resolved from the standard joint names on
//! load; a standalone topology file may instead spell them out explicitly.

use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{PoseSequence, SkeletonTopology};

#[derive(Serialize, Deserialize)]
struct MotionFile {
    fps: f64,
    joint_names: Vec<String>,
    parents: Vec<i32>,
    bone_lengths: Vec<f64>,
    root: Vec<[f64; 3]>,
    line_vectors: Vec<Vec<[f64; 3]>>,
}

/// Standalone topology file with explicit leg chains and foot joints.
#[derive(Serialize, Deserialize)]
struct TopologyFile {
    joint_names: Vec<String>,
    parents: Vec<i32>,
    bone_lengths: Vec<f64>,
    leg_chains: [[usize; 3]; 2],
    foot_joints: [usize; 2],
}

fn resolve_legs_and_feet(
    joint_names: &[String],
    parents: &[i32],
) -> Result<([[usize; 3]; 2], [usize; 2])> {
    let find = |name: &str| -> Result<usize> {
        joint_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingJoint(name.to_string()))
    };
    let chains = [
        [find("left_hip")?, find("left_knee")?, find("left_ankle")?],
        [find("right_hip")?, find("right_knee")?, find("right_ankle")?],
    ];
    // Prefer toe joints when present, else the ankles.
    let feet = match (find("left_foot"), find("right_foot")) {
        (Ok(l), Ok(r)) => [l, r],
        _ => [chains[0][2], chains[1][2]],
    };
    let _ = parents;
    Ok((chains, feet))
}

/// Serializes a pose sequence (root required) to the motion JSON string.
pub fn motion_to_json(pose: &PoseSequence, topo: &SkeletonTopology) -> Result<String> {
    let root = pose.root.as_ref().ok_or(Error::MissingRoot)?;
    let t = pose.len();
    let nb = pose.num_bones();
    let file = MotionFile {
        fps: pose.fps,
        joint_names: topo.joint_names().to_vec(),
        parents: topo.parent().to_vec(),
        bone_lengths: topo.bone_lengths().to_vec(),
        root: (0..t).map(|f| [root[[f, 0]], root[[f, 1]], root[[f, 2]]]).collect(),
        line_vectors: (0..t)
            .map(|f| {
                (0..nb)
                    .map(|b| {
                        [
                            pose.line_vectors[[f, b, 0]],
                            pose.line_vectors[[f, b, 1]],
                            pose.line_vectors[[f, b, 2]],
                        ]
                    })
                    .collect()
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

/// Parses the motion JSON format.
pub fn motion_from_json(json: &str) -> Result<(PoseSequence, SkeletonTopology)> {
    let file: MotionFile = serde_json::from_str(json)?;
    let (leg_chains, foot_joints) = resolve_legs_and_feet(&file.joint_names, &file.parents)?;
    let topo = SkeletonTopology::new(
        file.joint_names,
        file.parents,
        file.bone_lengths,
        leg_chains,
        foot_joints,
    )?;
    let t = file.line_vectors.len();
    if t == 0 || file.root.len() != t {
        return Err(Error::FormatError {
            file: "<motion json>".into(),
            message: format!("root frames {} != motion frames {t}", file.root.len()),
        });
    }
    let nb = topo.num_bones();
    let mut lv = Array3::zeros((t, nb, 3));
    let mut root = Array2::zeros((t, 3));
    for (f, frame) in file.line_vectors.iter().enumerate() {
        if frame.len() != nb {
            return Err(Error::FormatError {
                file: "<motion json>".into(),
                message: format!("frame {f} has {} bones, expected {nb}", frame.len()),
            });
        }
        for (b, v) in frame.iter().enumerate() {
            for a in 0..3 {
                lv[[f, b, a]] = v[a];
            }
        }
        for a in 0..3 {
            root[[f, a]] = file.root[f][a];
        }
    }
    let pose = PoseSequence::new(file.fps, lv, Some(root))?;
    Ok((pose, topo))
}

pub fn save_motion(path: &Path, pose: &PoseSequence, topo: &SkeletonTopology) -> Result<()> {
    let json = motion_to_json(pose, topo)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_motion(path: &Path) -> Result<(PoseSequence, SkeletonTopology)> {
    let json = std::fs::read_to_string(path)?;
    motion_from_json(&json).map_err(|e| match e {
        Error::FormatError { message, .. } => Error::FormatError {
            file: path.display().to_string(),
            message,
        },
        Error::Json(e) => Error::FormatError {
            file: path.display().to_string(),
            message: e.to_string(),
        },
        other => other,
    })
}

/// Loads a standalone topology file (explicit leg chains and foot joints).
pub fn load_topology(path: &Path) -> Result<SkeletonTopology> {
    let json = std::fs::read_to_string(path)?;
    let file: TopologyFile = serde_json::from_str(&json).map_err(|e| Error::FormatError {
        file: path.display().to_string(),
        message: e.to_string(),
    })?;
    SkeletonTopology::new(
        file.joint_names,
        file.parents,
        file.bone_lengths,
        file.leg_chains,
        file.foot_joints,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn motion_json_round_trip_is_bit_exact() {
        let topo = SkeletonTopology::default_smpl24();
        let t = 3;
        let dirs = topo.default_rest_directions();
        let mut lv = Array3::zeros((t, topo.num_bones(), 3));
        for f in 0..t {
            for b in 0..topo.num_bones() {
                for a in 0..3 {
                    lv[[f, b, a]] = dirs[[b, a]];
                }
            }
        }
        let mut root = Array2::zeros((t, 3));
        root[[1, 0]] = 0.123456789123456789;
        let pose = PoseSequence::new(10.0, lv, Some(root)).unwrap();
        let json = motion_to_json(&pose, &topo).unwrap();
        let (pose2, topo2) = motion_from_json(&json).unwrap();
        assert_eq!(pose, pose2);
        assert_eq!(topo.joint_names(), topo2.joint_names());
        // Serializing again reproduces the same bytes.
        let json2 = motion_to_json(&pose2, &topo2).unwrap();
        assert_eq!(json, json2);
    }

    #[test]
    fn missing_root_rejected_on_save() {
        let topo = SkeletonTopology::default_smpl24();
        let mut lv = Array3::zeros((1, topo.num_bones(), 3));
        for b in 0..topo.num_bones() {
            lv[[0, b, 1]] = 1.0;
        }
        let pose = PoseSequence::new(10.0, lv, None).unwrap();
        assert!(matches!(motion_to_json(&pose, &topo), Err(Error::MissingRoot)));
    }
}
