//! Python bindings: motion I/O and kinematics, audio feature extraction,
//! the evaluation metrics, the synthetic dataset generator, and
//! checkpoint-driven generation. Training runs through the `groovesynth`
//! CLI.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use groovesynth_core::audiofeat::{self, AudioClip};
use groovesynth_core::dataset;
use groovesynth_core::error::Error;
use groovesynth_core::metrics;
use groovesynth_core::pipeline;
use groovesynth_core::skeleton::{self, PoseSequence, SkeletonTopology};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A motion clip: unit line vectors per bone plus a root trajectory,
/// bound to its skeleton.
#[pyclass]
struct Motion {
    pose: PoseSequence,
    topo: SkeletonTopology,
}

#[pymethods]
impl Motion {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (pose, topo) = skeleton::load_motion(&path).map_err(py_err)?;
        Ok(Self { pose, topo })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let (pose, topo) = skeleton::motion_from_json(text).map_err(py_err)?;
        Ok(Self { pose, topo })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        skeleton::save_motion(&path, &self.pose, &self.topo).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        skeleton::motion_to_json(&self.pose, &self.topo).map_err(py_err)
    }

    fn export_bvh(&self, path: PathBuf) -> PyResult<()> {
        skeleton::export_bvh(&path, &self.pose, &self.topo).map_err(py_err)
    }

    #[getter]
    fn fps(&self) -> f64 {
        self.pose.fps
    }

    #[getter]
    fn num_frames(&self) -> usize {
        self.pose.len()
    }

    #[getter]
    fn num_bones(&self) -> usize {
        self.pose.num_bones()
    }

    #[getter]
    fn joint_names(&self) -> Vec<String> {
        self.topo.joint_names().to_vec()
    }

    /// Line vectors as nested lists `[frame][bone][xyz]`.
    fn line_vectors(&self) -> Vec<Vec<[f64; 3]>> {
        let (t, nb, _) = self.pose.line_vectors.dim();
        (0..t)
            .map(|f| {
                (0..nb)
                    .map(|b| {
                        [
                            self.pose.line_vectors[[f, b, 0]],
                            self.pose.line_vectors[[f, b, 1]],
                            self.pose.line_vectors[[f, b, 2]],
                        ]
                    })
                    .collect()
            })
            .collect()
    }

    /// Root trajectory as `[frame][xyz]`.
    fn root(&self) -> PyResult<Vec<[f64; 3]>> {
        let root = self.pose.root.as_ref().ok_or(Error::MissingRoot).map_err(py_err)?;
        Ok((0..root.nrows()).map(|f| [root[[f, 0]], root[[f, 1]], root[[f, 2]]]).collect())
    }

    /// Joint positions `[frame][joint][xyz]` via forward kinematics.
    fn positions(&self) -> PyResult<Vec<Vec<[f64; 3]>>> {
        let pos = skeleton::linevecs_to_positions(&self.pose, &self.topo).map_err(py_err)?;
        let (t, j, _) = pos.dim();
        Ok((0..t)
            .map(|f| (0..j).map(|jt| [pos[[f, jt, 0]], pos[[f, jt, 1]], pos[[f, jt, 2]]]).collect())
            .collect())
    }

    fn kinetic_velocity(&self) -> PyResult<Vec<f64>> {
        Ok(skeleton::kinetic_velocity(&self.pose, &self.topo)
            .map_err(py_err)?
            .to_vec())
    }

    /// Kinematic beat frames (1-based local minima of kinetic velocity).
    fn kinematic_beats(&self) -> PyResult<Vec<usize>> {
        metrics::kinematic_beats_of(&self.pose, &self.topo).map_err(py_err)
    }

    fn kinetic_features(&self) -> PyResult<Vec<f64>> {
        Ok(metrics::kinetic_features(&self.pose, &self.topo).map_err(py_err)?.values)
    }

    fn geometric_features(&self) -> PyResult<Vec<f64>> {
        Ok(metrics::geometric_features(&self.pose, &self.topo).map_err(py_err)?.values)
    }

    fn pfc(&self) -> PyResult<f64> {
        metrics::pfc(&self.pose, &self.topo).map_err(py_err)
    }

    /// Beat alignment score against music beat frames (1-based).
    #[pyo3(signature = (music_beats, sigma = 3.0))]
    fn beat_alignment(&self, music_beats: Vec<usize>, sigma: f64) -> PyResult<f64> {
        Ok(metrics::beat_alignment_score(&self.pose, &self.topo, &music_beats, sigma)
            .map_err(py_err)?
            .score)
    }
}

/// Detected beat frames (1-based) of a WAV file at the motion frame rate.
#[pyfunction]
#[pyo3(signature = (path, fps = 10.0, cap = 20))]
fn detect_beats(path: PathBuf, fps: f64, cap: usize) -> PyResult<Vec<usize>> {
    let clip = AudioClip::load_wav(&path).map_err(py_err)?;
    audiofeat::detect_beats(&clip, fps, cap).map_err(py_err)
}

/// MFCC (+deltas) matrix as `[row][frame]`.
#[pyfunction]
#[pyo3(signature = (path, fps = 10.0, n_mfcc = 20))]
fn extract_mfcc(path: PathBuf, fps: f64, n_mfcc: usize) -> PyResult<Vec<Vec<f64>>> {
    let clip = AudioClip::load_wav(&path).map_err(py_err)?;
    let m = audiofeat::extract_mfcc(&clip, fps, n_mfcc).map_err(py_err)?;
    Ok(m.rows().into_iter().map(|r| r.to_vec()).collect())
}

/// Chroma CENS matrix as `[pitch_class][frame]`.
#[pyfunction]
#[pyo3(signature = (path, fps = 10.0))]
fn extract_chroma(path: PathBuf, fps: f64) -> PyResult<Vec<Vec<f64>>> {
    let clip = AudioClip::load_wav(&path).map_err(py_err)?;
    let m = audiofeat::extract_chroma(&clip, fps).map_err(py_err)?;
    Ok(m.rows().into_iter().map(|r| r.to_vec()).collect())
}

/// Mean pairwise distance between per-clip kinetic feature vectors.
#[pyfunction]
fn motion_diversity(features: Vec<Vec<f64>>) -> PyResult<f64> {
    let fv: Vec<metrics::FeatureVector> = features
        .into_iter()
        .map(|values| metrics::FeatureVector { kind: metrics::FeatureKind::Kinetic, values })
        .collect();
    metrics::motion_diversity(&fv).map_err(py_err)
}

/// Frechet distance between two feature corpora.
#[pyfunction]
fn fid(reference: Vec<Vec<f64>>, generated: Vec<Vec<f64>>) -> PyResult<f64> {
    let wrap = |vs: Vec<Vec<f64>>| -> Vec<metrics::FeatureVector> {
        vs.into_iter()
            .map(|values| metrics::FeatureVector { kind: metrics::FeatureKind::Kinetic, values })
            .collect()
    };
    metrics::fid(&wrap(reference), &wrap(generated)).map_err(py_err)
}

/// Writes a synthetic click-track dance dataset and returns the clip ids.
#[pyfunction]
#[pyo3(signature = (out_dir, clips = 4, seed = 7))]
fn synth_dataset(out_dir: PathBuf, clips: usize, seed: u64) -> PyResult<Vec<String>> {
    let cfg = dataset::DatasetConfig::default();
    let data = dataset::synth_dataset(clips, seed, &cfg);
    dataset::save_dataset_dir(&out_dir, &data).map_err(py_err)?;
    Ok(data.into_iter().map(|c| c.id).collect())
}

/// Generates a dance from audio plus a seed motion, using trained
/// checkpoints (see the `groovesynth` CLI for training).
#[pyfunction]
#[pyo3(signature = (audio, seed_motion, generator, trajectory, bps = None, gen_seed = 0, reduced = false))]
#[allow(clippy::too_many_arguments)]
fn generate(
    audio: PathBuf,
    seed_motion: PathBuf,
    generator: PathBuf,
    trajectory: PathBuf,
    bps: Option<PathBuf>,
    gen_seed: u64,
    reduced: bool,
) -> PyResult<Motion> {
    let overrides: Vec<String> = if reduced {
        vec!["model.scale=reduced".to_string()]
    } else {
        Vec::new()
    };
    let cfg = pipeline::PipelineConfig::load(None, &overrides).map_err(py_err)?;
    let clip = AudioClip::load_wav(&audio).map_err(py_err)?;
    let (seed_pose, topo) = skeleton::load_motion(&seed_motion).map_err(py_err)?;
    let ckpts = pipeline::GenerateCheckpoints {
        bps: bps.as_deref().map(Path::new),
        generator: &generator,
        trajectory: &trajectory,
    };
    let pose = pipeline::generate(&cfg, &clip, &seed_pose, &topo, &ckpts, gen_seed).map_err(py_err)?;
    Ok(Motion { pose, topo })
}

#[pymodule]
fn groovesynth_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Motion>()?;
    m.add_function(wrap_pyfunction!(detect_beats, m)?)?;
    m.add_function(wrap_pyfunction!(extract_mfcc, m)?)?;
    m.add_function(wrap_pyfunction!(extract_chroma, m)?)?;
    m.add_function(wrap_pyfunction!(motion_diversity, m)?)?;
    m.add_function(wrap_pyfunction!(fid, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    Ok(())
}
