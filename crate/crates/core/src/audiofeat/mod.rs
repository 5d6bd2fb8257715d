//! Audio analysis: raw waveform to frame-aligned MFCC(+delta,+delta-delta),
//! Chroma CENS, and beat frames, all at the motion frame rate.
//!
//! Every extractor resamples to a fixed 16 kHz mono analysis rate so the
//! filterbanks are identical regardless of input format, and emits exactly
//! one feature column per motion frame (`T = round(duration * fps)`).
//! Everything here is stateless and deterministic.

mod beats;
mod chroma;
mod mfcc;

pub use beats::{click_track, detect_beats};
pub use chroma::extract_chroma;
pub use mfcc::{delta_features, extract_mfcc};

use std::path::Path;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed analysis sample rate (Hz). All input audio is resampled to this.
pub const ANALYSIS_SR: u32 = 16_000;

/// Number of MFCC base coefficients kept by default (60 channels with
/// first- and second-order derivatives stacked).
pub const DEFAULT_N_MFCC: usize = 20;

/// Mono audio in [-1, 1].
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::FormatError {
                file: "<audio>".into(),
                message: "zero sample rate".into(),
            });
        }
        if samples.is_empty() {
            return Err(Error::TooShortClip("empty sample buffer".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Number of motion frames this clip spans at `fps`.
    pub fn num_frames(&self, fps: f64) -> usize {
        (self.duration() * fps).round() as usize
    }

    /// Linear-interpolation resampling; returns self unchanged if the rate
    /// already matches.
    pub fn resampled(&self, target_sr: u32) -> AudioClip {
        if self.sample_rate == target_sr {
            return self.clone();
        }
        let ratio = self.sample_rate as f64 / target_sr as f64;
        let n_out = (self.samples.len() as f64 / ratio).round() as usize;
        let mut out = Vec::with_capacity(n_out.max(1));
        for i in 0..n_out.max(1) {
            let pos = i as f64 * ratio;
            let i0 = pos.floor() as usize;
            let frac = pos - i0 as f64;
            let a = *self.samples.get(i0).unwrap_or(&0.0);
            let b = *self.samples.get(i0 + 1).unwrap_or(&a);
            out.push(a + frac * (b - a));
        }
        AudioClip { samples: out, sample_rate: target_sr }
    }

    /// Time slice `[start, end)` in seconds.
    pub fn slice_seconds(&self, start: f64, end: f64) -> AudioClip {
        let i0 = ((start * self.sample_rate as f64).round() as usize).min(self.samples.len());
        let i1 = ((end * self.sample_rate as f64).round() as usize).clamp(i0, self.samples.len());
        AudioClip {
            samples: self.samples[i0..i1].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    /// Reads a RIFF WAV file (16-bit PCM or 32-bit float), averaging
    /// channels to mono.
    pub fn load_wav(path: &Path) -> Result<AudioClip> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        let channels = spec.channels as usize;
        let mono: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Int, 16) => {
                let samples: std::result::Result<Vec<i16>, _> =
                    reader.samples::<i16>().collect();
                to_mono(&samples?.iter().map(|&s| s as f64 / 32768.0).collect::<Vec<_>>(), channels)
            }
            (hound::SampleFormat::Float, 32) => {
                let samples: std::result::Result<Vec<f32>, _> =
                    reader.samples::<f32>().collect();
                to_mono(&samples?.iter().map(|&s| s as f64).collect::<Vec<_>>(), channels)
            }
            (fmt, bits) => {
                return Err(Error::FormatError {
                    file: path.display().to_string(),
                    message: format!("unsupported WAV format {fmt:?}/{bits} bits (need PCM16 or float32)"),
                })
            }
        };
        AudioClip::new(mono, spec.sample_rate)
    }

    /// Writes the clip as 16-bit PCM WAV.
    pub fn save_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
        }
        writer.finalize()?;
        Ok(())
    }
}

fn to_mono(interleaved: &[f64], channels: usize) -> Vec<f64> {
    if channels <= 1 {
        return interleaved.to_vec();
    }
    interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect()
}

/// Frame-aligned audio features for one clip.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AudioFeatureSet {
    /// `3*n_mfcc x T`: coefficients, deltas, delta-deltas.
    #[serde(with = "mat_serde")]
    pub mfcc: Array2<f64>,
    /// `12 x T`, each column l2-normalized.
    #[serde(with = "mat_serde")]
    pub chroma: Array2<f64>,
    /// 1-based motion frame indices, strictly increasing.
    pub beats: Vec<usize>,
    pub fps: f64,
}

impl AudioFeatureSet {
    pub fn num_frames(&self) -> usize {
        self.mfcc.ncols()
    }

    pub fn validate(&self, beat_cap: usize) -> Result<()> {
        let t = self.mfcc.ncols();
        if self.chroma.ncols() != t {
            return Err(Error::ShapeMismatch {
                context: "AudioFeatureSet".into(),
                expected: format!("chroma with {t} columns"),
                got: format!("{}", self.chroma.ncols()),
            });
        }
        if self.beats.len() > beat_cap {
            return Err(Error::CoverageError(format!(
                "{} beats exceed cap {beat_cap}",
                self.beats.len()
            )));
        }
        let mut prev = 0;
        for &b in &self.beats {
            if b < 1 || b > t || b <= prev {
                return Err(Error::CoverageError(format!("bad beat frame {b}")));
            }
            prev = b;
        }
        Ok(())
    }
}

/// Runs all three extractors on one clip.
pub fn extract_features(
    clip: &AudioClip,
    fps: f64,
    n_mfcc: usize,
    beat_cap: usize,
) -> Result<AudioFeatureSet> {
    let mfcc = extract_mfcc(clip, fps, n_mfcc)?;
    let chroma = extract_chroma(clip, fps)?;
    let beats = detect_beats(clip, fps, beat_cap)?;
    Ok(AudioFeatureSet { mfcc, chroma, beats, fps })
}

/// Serialize an `Array2<f64>` as nested JSON arrays (row-major).
mod mat_serde {
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut m = Array2::zeros((nrows, ncols));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(serde::de::Error::custom("ragged matrix"));
            }
            for (j, &v) in row.iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        Ok(m)
    }
}

/// Sample indices of motion-frame centers: the i-th frame is centered at
/// `(i + 0.5) / fps` seconds.
pub(crate) fn frame_centers(n_samples: usize, sr: u32, fps: f64) -> Vec<usize> {
    let t = (n_samples as f64 / sr as f64 * fps).round() as usize;
    (0..t)
        .map(|i| ((i as f64 + 0.5) / fps * sr as f64).round() as usize)
        .collect()
}

/// Hann-windowed power spectra at the given center samples.
/// Returns `(win_len/2 + 1) x len(centers)`.
pub(crate) fn power_spectra_at(
    samples: &[f64],
    centers: &[usize],
    win_len: usize,
) -> Array2<f64> {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(win_len);
    let window: Vec<f64> = (0..win_len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win_len as f64).cos())
        .collect();
    let n_bins = win_len / 2 + 1;
    let mut out = Array2::zeros((n_bins, centers.len()));
    let mut buf = vec![Complex::new(0.0, 0.0); win_len];
    for (col, &center) in centers.iter().enumerate() {
        let start = center as i64 - (win_len / 2) as i64;
        for n in 0..win_len {
            let idx = start + n as i64;
            let s = if idx >= 0 && (idx as usize) < samples.len() {
                samples[idx as usize]
            } else {
                0.0
            };
            buf[n] = Complex::new(s * window[n], 0.0);
        }
        fft.process(&mut buf);
        for (bin, v) in buf.iter().take(n_bins).enumerate() {
            out[[bin, col]] = v.norm_sqr();
        }
    }
    out
}

#[cfg(test)]
pub(crate) fn sine_clip(freq: f64, duration: f64, sr: u32) -> AudioClip {
    let n = (duration * sr as f64) as usize;
    let samples = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin() * 0.8)
        .collect();
    AudioClip::new(samples, sr).unwrap()
}
