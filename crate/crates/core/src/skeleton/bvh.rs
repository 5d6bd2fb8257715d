//! BVH export for viewers.
//!
//! Line vectors carry no twist, so exact joint rotations are not
//! recoverable; instead each joint gets the rotation that best aligns the
//! rest directions of its child bones with the current directions (minimal
//! rotation for one child, a least-squares orientation fit for several).
//! Joints whose children disagree (e.g. the pelvis) are therefore
//! approximate; this exporter targets visual inspection, not round trips.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Rotation3, Vector3};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::skeleton::{PoseSequence, SkeletonTopology};

/// Rest directions used for rotation recovery: the canonical T-pose for the
/// default skeleton, otherwise the first frame of the motion itself.
fn rest_directions(pose: &PoseSequence, topo: &SkeletonTopology) -> Array2<f64> {
    let default = SkeletonTopology::default_smpl24();
    if topo.joint_names() == default.joint_names() && topo.parent() == default.parent() {
        topo.default_rest_directions()
    } else {
        let nb = topo.num_bones();
        let mut dirs = Array2::zeros((nb, 3));
        for b in 0..nb {
            for a in 0..3 {
                dirs[[b, a]] = pose.line_vectors[[0, b, a]];
            }
        }
        dirs
    }
}

/// Minimal rotation taking unit vector `from` to unit vector `to`.
fn minimal_rotation(from: Vector3<f64>, to: Vector3<f64>) -> Matrix3<f64> {
    let dot = from.dot(&to).clamp(-1.0, 1.0);
    let cross = from.cross(&to);
    let s = cross.norm();
    if s < 1e-12 {
        if dot > 0.0 {
            return Matrix3::identity();
        }
        // Opposite vectors: rotate pi about any axis perpendicular to `from`.
        let mut axis = from.cross(&Vector3::new(1.0, 0.0, 0.0));
        if axis.norm() < 1e-6 {
            axis = from.cross(&Vector3::new(0.0, 1.0, 0.0));
        }
        let axis = axis.normalize();
        return Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(axis), std::f64::consts::PI).into_inner();
    }
    let axis = nalgebra::Unit::new_unchecked(cross / s);
    Rotation3::from_axis_angle(&axis, s.atan2(dot)).into_inner()
}

/// Least-squares orientation fit (quaternion method): finds R minimizing
/// sum_i ||R b_i - a_i||^2 over rotations.
fn fit_rotation(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Matrix3<f64> {
    if pairs.len() == 1 {
        return minimal_rotation(pairs[0].0, pairs[0].1);
    }
    let mut b = Matrix3::zeros();
    for (rest, cur) in pairs {
        b += rest * cur.transpose();
    }
    let k = DMatrix::from_row_slice(
        4,
        4,
        &[
            b[(0, 0)] + b[(1, 1)] + b[(2, 2)],
            b[(1, 2)] - b[(2, 1)],
            b[(2, 0)] - b[(0, 2)],
            b[(0, 1)] - b[(1, 0)],
            b[(1, 2)] - b[(2, 1)],
            b[(0, 0)] - b[(1, 1)] - b[(2, 2)],
            b[(0, 1)] + b[(1, 0)],
            b[(0, 2)] + b[(2, 0)],
            b[(2, 0)] - b[(0, 2)],
            b[(0, 1)] + b[(1, 0)],
            -b[(0, 0)] + b[(1, 1)] - b[(2, 2)],
            b[(1, 2)] + b[(2, 1)],
            b[(0, 1)] - b[(1, 0)],
            b[(0, 2)] + b[(2, 0)],
            b[(1, 2)] + b[(2, 1)],
            -b[(0, 0)] - b[(1, 1)] + b[(2, 2)],
        ],
    );
    let eig = nalgebra::SymmetricEigen::new(k);
    let mut best = 0;
    for i in 1..4 {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    let q = eig.eigenvectors.column(best);
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// World rotation per joint for one frame.
pub(crate) fn solve_world_rotations(
    frame_dirs: &Array2<f64>,
    rest_dirs: &Array2<f64>,
    topo: &SkeletonTopology,
) -> Vec<Matrix3<f64>> {
    let j = topo.num_joints();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); j];
    for (i, &p) in topo.parent().iter().enumerate() {
        if p != -1 {
            children[p as usize].push(i);
        }
    }
    let mut rots = vec![Matrix3::identity(); j];
    for joint in 0..j {
        if children[joint].is_empty() {
            continue;
        }
        let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = children[joint]
            .iter()
            .map(|&c| {
                let bone = topo.bone_of_joint(c).expect("child joint");
                (
                    Vector3::new(rest_dirs[[bone, 0]], rest_dirs[[bone, 1]], rest_dirs[[bone, 2]]),
                    Vector3::new(
                        frame_dirs[[bone, 0]],
                        frame_dirs[[bone, 1]],
                        frame_dirs[[bone, 2]],
                    ),
                )
            })
            .collect();
        rots[joint] = fit_rotation(&pairs);
    }
    rots
}

/// Euler angles (degrees) for channel order Zrotation Xrotation Yrotation,
/// i.e. R = Rz * Rx * Ry.
fn euler_zxy_degrees(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let sx = r[(2, 1)].clamp(-1.0, 1.0);
    let x = sx.asin();
    let (z, y) = if sx.abs() > 1.0 - 1e-9 {
        (r[(1, 0)].atan2(r[(0, 0)]), 0.0)
    } else {
        ((-r[(0, 1)]).atan2(r[(1, 1)]), (-r[(2, 0)]).atan2(r[(2, 2)]))
    };
    let d = 180.0 / std::f64::consts::PI;
    (z * d, x * d, y * d)
}

fn write_joint(
    out: &mut String,
    topo: &SkeletonTopology,
    rest_dirs: &Array2<f64>,
    children: &[Vec<usize>],
    joint: usize,
    depth: usize,
    order: &mut Vec<usize>,
) {
    let pad = "  ".repeat(depth);
    let name = &topo.joint_names()[joint];
    if depth == 0 {
        let _ = writeln!(out, "ROOT {name}");
    } else {
        let _ = writeln!(out, "{pad}JOINT {name}");
    }
    let _ = writeln!(out, "{pad}{{");
    let inner = "  ".repeat(depth + 1);
    let offset = if depth == 0 {
        [0.0, 0.0, 0.0]
    } else {
        let bone = topo.bone_of_joint(joint).expect("non-root");
        let len = topo.bone_lengths()[bone];
        [
            rest_dirs[[bone, 0]] * len,
            rest_dirs[[bone, 1]] * len,
            rest_dirs[[bone, 2]] * len,
        ]
    };
    let _ = writeln!(out, "{inner}OFFSET {:.6} {:.6} {:.6}", offset[0], offset[1], offset[2]);
    if depth == 0 {
        let _ = writeln!(
            out,
            "{inner}CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation"
        );
    } else {
        let _ = writeln!(out, "{inner}CHANNELS 3 Zrotation Xrotation Yrotation");
    }
    order.push(joint);
    if children[joint].is_empty() {
        let bone = topo.bone_of_joint(joint).expect("leaf");
        let len = topo.bone_lengths()[bone] * 0.3;
        let _ = writeln!(out, "{inner}End Site");
        let _ = writeln!(out, "{inner}{{");
        let _ = writeln!(
            out,
            "{inner}  OFFSET {:.6} {:.6} {:.6}",
            rest_dirs[[bone, 0]] * len,
            rest_dirs[[bone, 1]] * len,
            rest_dirs[[bone, 2]] * len
        );
        let _ = writeln!(out, "{inner}}}");
    } else {
        for &c in &children[joint] {
            write_joint(out, topo, rest_dirs, children, c, depth + 1, order);
        }
    }
    let _ = writeln!(out, "{pad}}}");
}

/// Writes the pose sequence as a BVH file. Requires a root trajectory.
pub fn export_bvh(path: &Path, pose: &PoseSequence, topo: &SkeletonTopology) -> Result<()> {
    let root_traj = pose.root.as_ref().ok_or(Error::MissingRoot)?;
    let rest_dirs = rest_directions(pose, topo);
    let j = topo.num_joints();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); j];
    for (i, &p) in topo.parent().iter().enumerate() {
        if p != -1 {
            children[p as usize].push(i);
        }
    }

    let mut out = String::new();
    out.push_str("HIERARCHY\n");
    let mut order = Vec::new();
    write_joint(&mut out, topo, &rest_dirs, &children, topo.root(), 0, &mut order);
    let t = pose.len();
    let _ = writeln!(out, "MOTION");
    let _ = writeln!(out, "Frames: {t}");
    let _ = writeln!(out, "Frame Time: {:.8}", 1.0 / pose.fps);

    let nb = topo.num_bones();
    for f in 0..t {
        let mut frame_dirs = Array2::zeros((nb, 3));
        for b in 0..nb {
            for a in 0..3 {
                frame_dirs[[b, a]] = pose.line_vectors[[f, b, a]];
            }
        }
        let world = solve_world_rotations(&frame_dirs, &rest_dirs, topo);
        let mut fields: Vec<String> = Vec::with_capacity(3 + order.len() * 3);
        fields.push(format!("{:.6}", root_traj[[f, 0]]));
        fields.push(format!("{:.6}", root_traj[[f, 1]]));
        fields.push(format!("{:.6}", root_traj[[f, 2]]));
        for &joint in &order {
            let local = if joint == topo.root() {
                world[joint]
            } else {
                let parent = topo.parent()[joint] as usize;
                world[parent].transpose() * world[joint]
            };
            let (z, x, y) = euler_zxy_degrees(&local);
            fields.push(format!("{z:.6}"));
            fields.push(format!("{x:.6}"));
            fields.push(format!("{y:.6}"));
        }
        let _ = writeln!(out, "{}", fields.join(" "));
    }
    std::fs::write(path, out)?;
    Ok(())
}
