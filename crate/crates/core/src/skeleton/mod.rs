//! Skeleton topology, the unit line-vector pose representation, and the
//! kinematic quantities derived from it.
//!
//! A pose at one frame is the set of `J-1` unit vectors pointing from each
//! parent joint to its child. Together with per-bone lengths and a root
//! trajectory this is a complete, rotation-free motion representation:
//! positions are recovered by walking the tree and adding
//! `length * direction` per bone.
//!
//! All operations here are pure functions on immutable inputs and are safe
//! to call concurrently.

mod bvh;
mod io;

pub use bvh::export_bvh;
pub use io::{load_motion, load_topology, motion_from_json, motion_to_json, save_motion};

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};

/// Tolerance for the unit-norm invariant on line vectors.
pub const UNIT_NORM_TOL: f64 = 1e-4;

/// A rooted joint tree with fixed bone lengths.
///
/// Bones are indexed by their child joint in joint order: bone `b`
/// corresponds to the `b`-th non-root joint (see [`SkeletonTopology::bone_child`]).
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    joint_names: Vec<String>,
    parent: Vec<i32>,
    bone_lengths: Vec<f64>,
    leg_chains: [[usize; 3]; 2],
    foot_joints: [usize; 2],
    // derived
    root: usize,
    bone_child: Vec<usize>,
    bone_of_joint: Vec<Option<usize>>,
    topo_order: Vec<usize>,
}

impl SkeletonTopology {
    /// Validates the tree structure and builds the derived index tables.
    ///
    /// `leg_chains` holds two `(hip, knee, ankle)` joint triples; the femur
    /// bone is `hip -> knee` and the shin bone is `knee -> ankle`, which is
    /// checked against the parent array.
    pub fn new(
        joint_names: Vec<String>,
        parent: Vec<i32>,
        bone_lengths: Vec<f64>,
        leg_chains: [[usize; 3]; 2],
        foot_joints: [usize; 2],
    ) -> Result<Self> {
        let j = joint_names.len();
        if j < 2 {
            return Err(Error::Topology("need at least 2 joints".into()));
        }
        if parent.len() != j {
            return Err(Error::Topology(format!(
                "parent array length {} != joint count {}",
                parent.len(),
                j
            )));
        }
        let roots: Vec<usize> = (0..j).filter(|&i| parent[i] == -1).collect();
        if roots.len() != 1 {
            return Err(Error::Topology(format!(
                "expected exactly one root sentinel, found {}",
                roots.len()
            )));
        }
        let root = roots[0];
        for (i, &p) in parent.iter().enumerate() {
            if p != -1 && (p < 0 || p as usize >= j) {
                return Err(Error::Topology(format!("joint {i} has invalid parent {p}")));
            }
            if p == i as i32 {
                return Err(Error::Topology(format!("joint {i} is its own parent")));
            }
        }
        // Cycle check: every joint must reach the root in at most J hops.
        for mut i in 0..j {
            let mut hops = 0;
            while parent[i] != -1 {
                i = parent[i] as usize;
                hops += 1;
                if hops > j {
                    return Err(Error::Topology("parent array contains a cycle".into()));
                }
            }
        }
        if bone_lengths.len() != j - 1 {
            return Err(Error::Topology(format!(
                "expected {} bone lengths, got {}",
                j - 1,
                bone_lengths.len()
            )));
        }
        if let Some(l) = bone_lengths.iter().find(|&&l| !(l > 0.0)) {
            return Err(Error::Topology(format!("non-positive bone length {l}")));
        }

        let bone_child: Vec<usize> = (0..j).filter(|&i| i != root).collect();
        let mut bone_of_joint = vec![None; j];
        for (b, &c) in bone_child.iter().enumerate() {
            bone_of_joint[c] = Some(b);
        }

        // Parent-before-child traversal order.
        let mut topo_order = Vec::with_capacity(j);
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); j];
        for (i, &p) in parent.iter().enumerate() {
            if p != -1 {
                children[p as usize].push(i);
            }
        }
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            topo_order.push(i);
            for &c in children[i].iter().rev() {
                stack.push(c);
            }
        }
        if topo_order.len() != j {
            return Err(Error::Topology("tree does not cover all joints".into()));
        }

        for chain in &leg_chains {
            let [hip, knee, ankle] = *chain;
            for &jt in chain {
                if jt >= j {
                    return Err(Error::Topology(format!("leg chain joint {jt} out of range")));
                }
            }
            if parent[knee] != hip as i32 || parent[ankle] != knee as i32 {
                return Err(Error::Topology(format!(
                    "leg chain ({hip},{knee},{ankle}) is not a parent chain"
                )));
            }
        }
        for &f in &foot_joints {
            if f >= j {
                return Err(Error::Topology(format!("foot joint {f} out of range")));
            }
        }

        Ok(Self {
            joint_names,
            parent,
            bone_lengths,
            leg_chains,
            foot_joints,
            root,
            bone_child,
            bone_of_joint,
            topo_order,
        })
    }

    /// 24-joint SMPL-style skeleton in the AIST++ joint order, T-pose rest,
    /// y-up, x pointing to the character's left.
    pub fn default_smpl24() -> Self {
        let names = [
            "pelvis",
            "left_hip",
            "right_hip",
            "spine1",
            "left_knee",
            "right_knee",
            "spine2",
            "left_ankle",
            "right_ankle",
            "spine3",
            "left_foot",
            "right_foot",
            "neck",
            "left_collar",
            "right_collar",
            "head",
            "left_shoulder",
            "right_shoulder",
            "left_elbow",
            "right_elbow",
            "left_wrist",
            "right_wrist",
            "left_hand",
            "right_hand",
        ];
        let parent: Vec<i32> = vec![
            -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
        ];
        let offsets = Self::default_rest_offsets();
        let bone_lengths: Vec<f64> = (1..24)
            .map(|c| {
                let o = offsets[c];
                (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt()
            })
            .collect();
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            parent,
            bone_lengths,
            [[1, 4, 7], [2, 5, 8]],
            [10, 11],
        )
        .expect("default skeleton is valid")
    }

    /// Rest-pose offsets (meters, parent to child) for the default skeleton.
    /// Index 0 (the root) is zero.
    pub(crate) fn default_rest_offsets() -> [[f64; 3]; 24] {
        [
            [0.0, 0.0, 0.0],      // pelvis
            [0.10, -0.05, 0.0],   // left_hip
            [-0.10, -0.05, 0.0],  // right_hip
            [0.0, 0.12, 0.0],     // spine1
            [0.0, -0.40, 0.0],    // left_knee
            [0.0, -0.40, 0.0],    // right_knee
            [0.0, 0.14, 0.0],     // spine2
            [0.0, -0.42, 0.0],    // left_ankle
            [0.0, -0.42, 0.0],    // right_ankle
            [0.0, 0.06, 0.0],     // spine3
            [0.0, -0.06, 0.13],   // left_foot
            [0.0, -0.06, 0.13],   // right_foot
            [0.0, 0.22, 0.0],     // neck
            [0.07, 0.11, 0.0],    // left_collar
            [-0.07, 0.11, 0.0],   // right_collar
            [0.0, 0.21, 0.0],     // head
            [0.10, 0.02, 0.0],    // left_shoulder
            [-0.10, 0.02, 0.0],   // right_shoulder
            [0.26, 0.0, 0.0],     // left_elbow
            [-0.26, 0.0, 0.0],    // right_elbow
            [0.25, 0.0, 0.0],     // left_wrist
            [-0.25, 0.0, 0.0],    // right_wrist
            [0.08, 0.0, 0.0],     // left_hand
            [-0.08, 0.0, 0.0],    // right_hand
        ]
    }

    /// Unit rest direction of each bone for the default skeleton, used by
    /// the BVH exporter and the synthetic dataset.
    pub fn default_rest_directions(&self) -> Array2<f64> {
        let offsets = Self::default_rest_offsets();
        let mut dirs = Array2::zeros((self.num_bones(), 3));
        for (b, &c) in self.bone_child.iter().enumerate() {
            let o = offsets[c];
            let n = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt();
            for a in 0..3 {
                dirs[[b, a]] = o[a] / n;
            }
        }
        dirs
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn num_bones(&self) -> usize {
        self.joint_names.len() - 1
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn parent(&self) -> &[i32] {
        &self.parent
    }

    pub fn bone_lengths(&self) -> &[f64] {
        &self.bone_lengths
    }

    pub fn leg_chains(&self) -> &[[usize; 3]; 2] {
        &self.leg_chains
    }

    pub fn foot_joints(&self) -> &[usize; 2] {
        &self.foot_joints
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Child joint of bone `b`.
    pub fn bone_child(&self, b: usize) -> usize {
        self.bone_child[b]
    }

    /// Bone index whose child is `joint`, or None for the root.
    pub fn bone_of_joint(&self, joint: usize) -> Option<usize> {
        self.bone_of_joint[joint]
    }

    /// Joint index by name.
    pub fn joint_index(&self, name: &str) -> Result<usize> {
        self.joint_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingJoint(name.to_string()))
    }

    /// Parent-before-child joint order.
    pub fn traversal_order(&self) -> &[usize] {
        &self.topo_order
    }

    /// Bone adjacency (bones sharing a joint), with self loops, row-normalized.
    pub fn bone_adjacency(&self) -> Array2<f64> {
        let nb = self.num_bones();
        let mut adj = Array2::zeros((nb, nb));
        for b1 in 0..nb {
            adj[[b1, b1]] = 1.0;
            let c1 = self.bone_child[b1];
            let p1 = self.parent[c1];
            for b2 in (b1 + 1)..nb {
                let c2 = self.bone_child[b2];
                let p2 = self.parent[c2];
                let shares = p1 == p2
                    || c1 as i32 == p2
                    || c2 as i32 == p1
                    || c1 == c2;
                if shares {
                    adj[[b1, b2]] = 1.0;
                    adj[[b2, b1]] = 1.0;
                }
            }
        }
        for mut row in adj.rows_mut() {
            let s: f64 = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        adj
    }
}

/// A motion clip in line-vector form.
///
/// `line_vectors` has shape `(T, J-1, 3)`; `root` (if present) has shape
/// `(T, 3)` and holds world coordinates of the root joint in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub fps: f64,
    pub line_vectors: Array3<f64>,
    pub root: Option<Array2<f64>>,
}

impl PoseSequence {
    pub fn new(fps: f64, line_vectors: Array3<f64>, root: Option<Array2<f64>>) -> Result<Self> {
        let seq = Self { fps, line_vectors, root };
        seq.validate_shape()?;
        Ok(seq)
    }

    fn validate_shape(&self) -> Result<()> {
        let (t, _, c) = self.line_vectors.dim();
        if t == 0 {
            return Err(Error::ShapeMismatch {
                context: "PoseSequence".into(),
                expected: "T >= 1".into(),
                got: "T = 0".into(),
            });
        }
        if c != 3 {
            return Err(Error::ShapeMismatch {
                context: "PoseSequence".into(),
                expected: "3 coordinates".into(),
                got: format!("{c}"),
            });
        }
        if let Some(r) = &self.root {
            if r.dim() != (t, 3) {
                return Err(Error::ShapeMismatch {
                    context: "PoseSequence root".into(),
                    expected: format!("({t}, 3)"),
                    got: format!("{:?}", r.dim()),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.line_vectors.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_bones(&self) -> usize {
        self.line_vectors.dim().1
    }

    /// Checks the unit-norm invariant and shape consistency with `topo`.
    pub fn validate(&self, topo: &SkeletonTopology) -> Result<()> {
        self.validate_shape()?;
        if self.num_bones() != topo.num_bones() {
            return Err(Error::ShapeMismatch {
                context: "PoseSequence bones".into(),
                expected: format!("{}", topo.num_bones()),
                got: format!("{}", self.num_bones()),
            });
        }
        for (f, frame) in self.line_vectors.outer_iter().enumerate() {
            for (b, v) in frame.outer_iter().enumerate() {
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::ShapeMismatch {
                        context: format!("line vector norm at frame {f}, bone {b}"),
                        expected: "1.0 +- 1e-4".into(),
                        got: format!("{n}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Sub-sequence over the half-open frame range `[start, end)`.
    pub fn slice_frames(&self, start: usize, end: usize) -> PoseSequence {
        PoseSequence {
            fps: self.fps,
            line_vectors: self
                .line_vectors
                .slice(ndarray::s![start..end, .., ..])
                .to_owned(),
            root: self
                .root
                .as_ref()
                .map(|r| r.slice(ndarray::s![start..end, ..]).to_owned()),
        }
    }
}

/// Converts joint positions `(T, J, 3)` to unit line vectors.
///
/// The root trajectory is the root joint's positions. Fails with
/// [`Error::DegenerateBone`] if any parent-child pair (nearly) coincides.
pub fn positions_to_linevecs(
    positions: &Array3<f64>,
    fps: f64,
    topo: &SkeletonTopology,
) -> Result<PoseSequence> {
    let (t, j, c) = positions.dim();
    if j != topo.num_joints() || c != 3 || t == 0 {
        return Err(Error::ShapeMismatch {
            context: "positions_to_linevecs".into(),
            expected: format!("(T>=1, {}, 3)", topo.num_joints()),
            got: format!("{:?}", positions.dim()),
        });
    }
    let nb = topo.num_bones();
    let mut lv = Array3::zeros((t, nb, 3));
    let mut root = Array2::zeros((t, 3));
    for f in 0..t {
        for a in 0..3 {
            root[[f, a]] = positions[[f, topo.root(), a]];
        }
        for b in 0..nb {
            let child = topo.bone_child(b);
            let parent = topo.parent()[child] as usize;
            let d = [
                positions[[f, child, 0]] - positions[[f, parent, 0]],
                positions[[f, child, 1]] - positions[[f, parent, 1]],
                positions[[f, child, 2]] - positions[[f, parent, 2]],
            ];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if n <= 1e-8 {
                return Err(Error::DegenerateBone { frame: f, bone: b, length: n });
            }
            for a in 0..3 {
                lv[[f, b, a]] = d[a] / n;
            }
        }
    }
    PoseSequence::new(fps, lv, Some(root))
}

/// Forward kinematics: recovers joint positions `(T, J, 3)` from line
/// vectors, the topology's bone lengths, and the root trajectory.
pub fn linevecs_to_positions(pose: &PoseSequence, topo: &SkeletonTopology) -> Result<Array3<f64>> {
    let root = pose.root.as_ref().ok_or(Error::MissingRoot)?;
    if pose.num_bones() != topo.num_bones() {
        return Err(Error::ShapeMismatch {
            context: "linevecs_to_positions".into(),
            expected: format!("{} bones", topo.num_bones()),
            got: format!("{}", pose.num_bones()),
        });
    }
    let t = pose.len();
    let j = topo.num_joints();
    let mut pos = Array3::zeros((t, j, 3));
    for f in 0..t {
        for a in 0..3 {
            pos[[f, topo.root(), a]] = root[[f, a]];
        }
        for &joint in topo.traversal_order() {
            if joint == topo.root() {
                continue;
            }
            let b = topo.bone_of_joint(joint).expect("non-root joint has a bone");
            let parent = topo.parent()[joint] as usize;
            let len = topo.bone_lengths()[b];
            for a in 0..3 {
                pos[[f, joint, a]] = pos[[f, parent, a]] + len * pose.line_vectors[[f, b, a]];
            }
        }
    }
    Ok(pos)
}

/// Femur-shin angles per leg, in radians, and their angular velocities in
/// rad/frame (forward differences, last frame repeating the previous one).
///
/// The angle at a straight knee is 0; a right-angle bend is pi/2.
pub fn femur_shin_angles(
    pose: &PoseSequence,
    topo: &SkeletonTopology,
) -> (Array2<f64>, Array2<f64>) {
    let t = pose.len();
    let mut theta = Array2::zeros((t, 2));
    for (leg, chain) in topo.leg_chains().iter().enumerate() {
        let [_, knee, ankle] = *chain;
        let femur = topo.bone_of_joint(knee).expect("validated chain");
        let shin = topo.bone_of_joint(ankle).expect("validated chain");
        for f in 0..t {
            let mut dot = 0.0;
            for a in 0..3 {
                dot += pose.line_vectors[[f, femur, a]] * pose.line_vectors[[f, shin, a]];
            }
            theta[[f, leg]] = dot.clamp(-1.0, 1.0).acos();
        }
    }
    let omega = forward_diff_padded(&theta);
    (theta, omega)
}

/// Forward differences along axis 0, with the last row repeating the
/// previous difference (all-zero for single-row inputs).
pub fn forward_diff_padded(x: &Array2<f64>) -> Array2<f64> {
    let (t, d) = x.dim();
    let mut out = Array2::zeros((t, d));
    if t < 2 {
        return out;
    }
    for f in 0..t - 1 {
        for c in 0..d {
            out[[f, c]] = x[[f + 1, c]] - x[[f, c]];
        }
    }
    for c in 0..d {
        out[[t - 1, c]] = out[[t - 2, c]];
    }
    out
}

/// Per-frame kinetic velocity: the mean over joints of the squared forward
/// position difference, scaled by fps^2 (units m^2/s^2). Length T, with the
/// last frame repeating the previous value.
pub fn kinetic_velocity(pose: &PoseSequence, topo: &SkeletonTopology) -> Result<Array1<f64>> {
    let pos = linevecs_to_positions(pose, topo)?;
    let (t, j, _) = pos.dim();
    let mut kv = Array1::zeros(t);
    if t < 2 {
        return Ok(kv);
    }
    let fps2 = pose.fps * pose.fps;
    for f in 0..t - 1 {
        let mut acc = 0.0;
        for jt in 0..j {
            for a in 0..3 {
                let d = pos[[f + 1, jt, a]] - pos[[f, jt, a]];
                acc += d * d;
            }
        }
        kv[f] = acc * fps2 / j as f64;
    }
    kv[t - 1] = kv[t - 2];
    Ok(kv)
}

/// The frame-index bookkeeping for one training window.
///
/// Frames are 1-based. `S = {1..T_S}` is the seed region, `B` the beat
/// frames, `B_S = B intersect S`, and `R = {1..T} - (B union S)` the
/// repletion frames. `R`, `B - B_S`, and `S` together cover `{1..T}`
/// exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameIndexSets {
    t: usize,
    t_s: usize,
    beats: Vec<usize>,
}

impl FrameIndexSets {
    pub fn new(t: usize, t_s: usize, beats: Vec<usize>, cap: usize) -> Result<Self> {
        if t == 0 || t_s == 0 || t_s > t {
            return Err(Error::CoverageError(format!(
                "invalid frame counts T={t}, T_S={t_s}"
            )));
        }
        if beats.len() > cap {
            return Err(Error::CoverageError(format!(
                "{} beats exceed cap {cap}",
                beats.len()
            )));
        }
        let mut prev = 0usize;
        for &b in &beats {
            if b < 1 || b > t {
                return Err(Error::CoverageError(format!("beat frame {b} outside 1..={t}")));
            }
            if b <= prev {
                return Err(Error::CoverageError(format!(
                    "beat frames not strictly increasing at {b}"
                )));
            }
            prev = b;
        }
        Ok(Self { t, t_s, beats })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn t_s(&self) -> usize {
        self.t_s
    }

    /// All beat frames B (1-based, strictly increasing).
    pub fn beats(&self) -> &[usize] {
        &self.beats
    }

    /// B_S: beat frames inside the seed region.
    pub fn seed_beats(&self) -> Vec<usize> {
        self.beats.iter().copied().filter(|&b| b <= self.t_s).collect()
    }

    /// B - B_S: beat frames after the seed region.
    pub fn non_seed_beats(&self) -> Vec<usize> {
        self.beats.iter().copied().filter(|&b| b > self.t_s).collect()
    }

    /// S: seed frames {1..T_S}.
    pub fn seed_frames(&self) -> Vec<usize> {
        (1..=self.t_s).collect()
    }

    /// R: all frames that are neither seed nor beat frames.
    pub fn repletion_frames(&self) -> Vec<usize> {
        (1..=self.t)
            .filter(|&f| f > self.t_s && !self.beats.contains(&f))
            .collect()
    }

    /// |R| + |B - B_S| + T_S must equal T.
    pub fn check_partition(&self) -> bool {
        self.repletion_frames().len() + self.non_seed_beats().len() + self.t_s == self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain3() -> SkeletonTopology {
        // root -> a -> b -> c, all length 1. Leg chain is the only chain,
        // reused for both sides to satisfy the two-chain contract.
        SkeletonTopology::new(
            vec!["root".into(), "a".into(), "b".into(), "c".into()],
            vec![-1, 0, 1, 2],
            vec![1.0, 1.0, 1.0],
            [[0, 1, 2], [0, 1, 2]],
            [3, 3],
        )
        .unwrap()
    }

    #[test]
    fn axis_aligned_offset_gives_unit_vector() {
        let topo = chain3();
        let mut pos = Array3::zeros((1, 4, 3));
        pos[[0, 1, 1]] = 1.0; // a = root + (0,1,0)
        pos[[0, 2, 1]] = 1.0;
        pos[[0, 2, 0]] = 3.0; // b = a + (3,0,0) -> renormalized
        pos[[0, 3, 1]] = 1.0;
        pos[[0, 3, 0]] = 6.0;
        pos[[0, 3, 2]] = 4.0; // c = b + (3,0,4) -> 3-4-5
        let seq = positions_to_linevecs(&pos, 10.0, &topo).unwrap();
        assert_eq!(seq.line_vectors.slice(ndarray::s![0, 0, ..]).to_vec(), vec![0.0, 1.0, 0.0]);
        assert_eq!(seq.line_vectors.slice(ndarray::s![0, 1, ..]).to_vec(), vec![1.0, 0.0, 0.0]);
        let v = seq.line_vectors.slice(ndarray::s![0, 2, ..]).to_vec();
        assert!((v[0] - 0.6).abs() < 1e-12 && v[1].abs() < 1e-12 && (v[2] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn identity_chain_fk() {
        let topo = chain3();
        let mut lv = Array3::zeros((1, 3, 3));
        for b in 0..3 {
            lv[[0, b, 2]] = 1.0;
        }
        let pose = PoseSequence::new(10.0, lv, Some(Array2::zeros((1, 3)))).unwrap();
        let pos = linevecs_to_positions(&pose, &topo).unwrap();
        for j in 0..4 {
            assert!((pos[[0, j, 2]] - j as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_bone_is_reported() {
        let topo = chain3();
        let pos = Array3::zeros((1, 4, 3)); // all joints coincide
        match positions_to_linevecs(&pos, 10.0, &topo) {
            Err(Error::DegenerateBone { frame: 0, bone: 0, .. }) => {}
            other => panic!("expected DegenerateBone, got {other:?}"),
        }
    }

    #[test]
    fn fk_missing_root_errors() {
        let topo = chain3();
        let mut lv = Array3::zeros((1, 3, 3));
        for b in 0..3 {
            lv[[0, b, 0]] = 1.0;
        }
        let pose = PoseSequence::new(10.0, lv, None).unwrap();
        assert!(matches!(linevecs_to_positions(&pose, &topo), Err(Error::MissingRoot)));
    }

    /// Random poses on the bone-length manifold must round trip through
    /// the line-vector representation within 1e-6 m.
    #[test]
    fn round_trip_positions_linevecs() {
        let topo = SkeletonTopology::default_smpl24();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = 10;
        let mut lv = Array3::zeros((t, topo.num_bones(), 3));
        let mut root = Array2::zeros((t, 3));
        for f in 0..t {
            for a in 0..3 {
                root[[f, a]] = rng.random_range(-1.0..1.0);
            }
            for b in 0..topo.num_bones() {
                let v: [f64; 3] = [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-3);
                for a in 0..3 {
                    lv[[f, b, a]] = v[a] / n;
                }
            }
        }
        let pose = PoseSequence::new(10.0, lv, Some(root)).unwrap();
        let pos = linevecs_to_positions(&pose, &topo).unwrap();
        let back = positions_to_linevecs(&pos, 10.0, &topo).unwrap();
        let pos2 = linevecs_to_positions(&back, &topo).unwrap();
        let max_err = pos
            .iter()
            .zip(pos2.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-6, "round-trip error {max_err}");
    }

    #[test]
    fn femur_shin_angle_cases() {
        let topo = chain3();
        // Straight leg: both bones along -y.
        let mut lv = Array3::zeros((2, 3, 3));
        for f in 0..2 {
            for b in 0..3 {
                lv[[f, b, 1]] = -1.0;
            }
        }
        let pose = PoseSequence::new(10.0, lv.clone(), None).unwrap();
        let (theta, omega) = femur_shin_angles(&pose, &topo);
        assert!(theta[[0, 0]].abs() < 1e-12);
        assert!(omega.iter().all(|&w| w.abs() < 1e-12));

        // Perpendicular shin (bone 1 = knee -> ankle for leg chain (0,1,2)).
        lv[[0, 1, 1]] = 0.0;
        lv[[0, 1, 0]] = 1.0;
        let pose = PoseSequence::new(10.0, lv, None).unwrap();
        let (theta, _) = femur_shin_angles(&pose, &topo);
        assert!((theta[[0, 0]] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn kinetic_velocity_frozen_and_moving() {
        let topo = chain3();
        let mut lv = Array3::zeros((5, 3, 3));
        for f in 0..5 {
            for b in 0..3 {
                lv[[f, b, 2]] = 1.0;
            }
        }
        let pose = PoseSequence::new(10.0, lv.clone(), Some(Array2::zeros((5, 3)))).unwrap();
        let kv = kinetic_velocity(&pose, &topo).unwrap();
        assert_eq!(kv.len(), 5);
        assert!(kv.iter().all(|&v| v == 0.0));

        // Rigid translation: every joint moves 0.1 m/frame at 10 fps.
        let mut root = Array2::zeros((5, 3));
        for f in 0..5 {
            root[[f, 0]] = 0.1 * f as f64;
        }
        let pose = PoseSequence::new(10.0, lv, Some(root)).unwrap();
        let kv = kinetic_velocity(&pose, &topo).unwrap();
        // 0.01 m^2/frame^2 * 100 frame^2/s^2, same for every joint.
        for &v in kv.iter() {
            assert!((v - 1.0).abs() < 1e-9, "kv = {v}");
        }
    }

    #[test]
    fn frame_index_sets_partition() {
        let sets = FrameIndexSets::new(70, 20, vec![1, 6, 11, 23, 30, 42, 55, 69], 20).unwrap();
        assert_eq!(sets.seed_beats(), vec![1, 6, 11]);
        assert_eq!(sets.non_seed_beats(), vec![23, 30, 42, 55, 69]);
        assert!(sets.check_partition());
        assert_eq!(sets.repletion_frames().len(), 70 - 20 - 5);
    }

    #[test]
    fn frame_index_sets_rejects_bad_beats() {
        assert!(FrameIndexSets::new(70, 20, vec![5, 5], 20).is_err());
        assert!(FrameIndexSets::new(70, 20, vec![0], 20).is_err());
        assert!(FrameIndexSets::new(70, 20, vec![71], 20).is_err());
        assert!(FrameIndexSets::new(70, 20, (1..=25).collect(), 20).is_err());
    }

    #[test]
    fn bone_adjacency_rows_sum_to_one() {
        let topo = SkeletonTopology::default_smpl24();
        let adj = topo.bone_adjacency();
        for row in adj.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        // Femur and shin share the knee joint.
        let femur = topo.bone_of_joint(4).unwrap();
        let shin = topo.bone_of_joint(7).unwrap();
        assert!(adj[[femur, shin]] > 0.0);
    }

    #[test]
    fn rejects_cyclic_parents() {
        let r = SkeletonTopology::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![-1, 2, 1],
            vec![1.0, 1.0],
            [[0, 1, 2], [0, 1, 2]],
            [0, 0],
        );
        assert!(r.is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            /// Any valid (T, T_S, B) triple partitions {1..T} exactly.
            #[test]
            fn frame_sets_partition(t in 2usize..120, seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let t_s = rng.random_range(1..t);
                let mut frames: Vec<usize> = (1..=t).collect();
                for i in (1..frames.len()).rev() {
                    let j = rng.random_range(0..=i);
                    frames.swap(i, j);
                }
                let n = rng.random_range(0..=20usize.min(t));
                let mut beats: Vec<usize> = frames.into_iter().take(n).collect();
                beats.sort_unstable();
                let sets = FrameIndexSets::new(t, t_s, beats, 20).unwrap();
                prop_assert!(sets.check_partition());
                // R is disjoint from both S and B.
                for f in sets.repletion_frames() {
                    prop_assert!(f > sets.t_s());
                    prop_assert!(!sets.beats().contains(&f));
                }
            }

            /// positions -> line vectors always lands on the unit sphere,
            /// and the round trip through FK is the identity.
            #[test]
            fn linevec_round_trip(seed in 0u64..1000, t in 1usize..12) {
                let topo = SkeletonTopology::default_smpl24();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut lv = Array3::zeros((t, topo.num_bones(), 3));
                for f in 0..t {
                    for b in 0..topo.num_bones() {
                        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                        let n = (v.iter().map(|x| x * x).sum::<f64>()).sqrt().max(1e-3);
                        for a in 0..3 {
                            lv[[f, b, a]] = v[a] / n;
                        }
                    }
                }
                let pose = PoseSequence::new(10.0, lv, Some(Array2::zeros((t, 3)))).unwrap();
                let pos = linevecs_to_positions(&pose, &topo).unwrap();
                let back = positions_to_linevecs(&pos, 10.0, &topo).unwrap();
                for v in back.line_vectors.outer_iter() {
                    for bone in v.outer_iter() {
                        let n = (bone[0] * bone[0] + bone[1] * bone[1] + bone[2] * bone[2]).sqrt();
                        prop_assert!((n - 1.0).abs() < 1e-6);
                    }
                }
                let pos2 = linevecs_to_positions(&back, &topo).unwrap();
                let worst = pos
                    .iter()
                    .zip(pos2.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                prop_assert!(worst < 1e-6);
            }
        }
    }

    #[test]
    fn angles_and_kv_ranges() {
        let topo = SkeletonTopology::default_smpl24();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = 8;
        let mut lv = Array3::zeros((t, topo.num_bones(), 3));
        for f in 0..t {
            for b in 0..topo.num_bones() {
                let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let n = (v.iter().map(|x| x * x).sum::<f64>()).sqrt().max(1e-3);
                for a in 0..3 {
                    lv[[f, b, a]] = v[a] / n;
                }
            }
        }
        let pose = PoseSequence::new(10.0, lv, Some(array![[0.0, 1.0, 0.0]].broadcast((t, 3)).unwrap().to_owned())).unwrap();
        let (theta, _) = femur_shin_angles(&pose, &topo);
        assert!(theta.iter().all(|&a| (0.0..=std::f64::consts::PI).contains(&a)));
        let kv = kinetic_velocity(&pose, &topo).unwrap();
        assert!(kv.iter().all(|&v| v >= 0.0));
    }
}
