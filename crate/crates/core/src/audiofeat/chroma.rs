//! Chroma CENS features.
//!
//! Per motion frame: fold STFT power (4096-point window at 16 kHz, pitch
//! range C2..C7) into 12 pitch classes, l1-normalize, quantize onto the
//! CENS staircase {0, 0.25, 0.5, 0.75, 1} with energy thresholds
//! {0.05, 0.1, 0.2, 0.4}, smooth over time with a Hann window, and
//! l2-normalize each column. Silent columns fall back to the uniform
//! vector 1/sqrt(12).

use ndarray::Array2;

use super::{frame_centers, power_spectra_at, AudioClip, ANALYSIS_SR};
use crate::error::{Error, Result};

const FFT_LEN: usize = 4096;
const F_MIN: f64 = 65.0;
const F_MAX: f64 = 2100.0;
const QUANT_THRESHOLDS: [f64; 4] = [0.05, 0.1, 0.2, 0.4];
/// Length of the temporal Hann smoothing window (frames).
const SMOOTH_LEN: usize = 11;

/// Extracts `12 x T` Chroma CENS, one column per motion frame.
/// Pitch class 0 is C; A4 (440 Hz) lands in class 9.
pub fn extract_chroma(clip: &AudioClip, fps: f64) -> Result<Array2<f64>> {
    if clip.duration() < 1.0 / fps {
        return Err(Error::TooShortClip(format!(
            "{:.4} s is below one motion frame at {fps} fps",
            clip.duration()
        )));
    }
    let clip = clip.resampled(ANALYSIS_SR);
    let centers = frame_centers(clip.samples.len(), ANALYSIS_SR, fps);
    if centers.is_empty() {
        return Err(Error::TooShortClip("zero motion frames".into()));
    }
    let power = power_spectra_at(&clip.samples, &centers, FFT_LEN);
    let t = centers.len();
    let bin_hz = ANALYSIS_SR as f64 / FFT_LEN as f64;

    // Pitch-class folding.
    let mut energy = Array2::zeros((12, t));
    for bin in 1..power.nrows() {
        let f = bin as f64 * bin_hz;
        if !(F_MIN..=F_MAX).contains(&f) {
            continue;
        }
        let midi = 69.0 + 12.0 * (f / 440.0).log2();
        let class = (midi.round() as i64).rem_euclid(12) as usize;
        for c in 0..t {
            energy[[class, c]] += power[[bin, c]];
        }
    }

    // l1 normalization with uniform fallback for silent columns.
    for c in 0..t {
        let sum: f64 = (0..12).map(|r| energy[[r, c]]).sum();
        if sum < 1e-12 {
            for r in 0..12 {
                energy[[r, c]] = 1.0 / 12.0;
            }
        } else {
            for r in 0..12 {
                energy[[r, c]] /= sum;
            }
        }
    }

    // CENS staircase quantization.
    let mut quant = Array2::zeros((12, t));
    for r in 0..12 {
        for c in 0..t {
            let e = energy[[r, c]];
            quant[[r, c]] = 0.25 * QUANT_THRESHOLDS.iter().filter(|&&th| e > th).count() as f64;
        }
    }

    // Temporal Hann smoothing (zero-padded; the final l2 normalization
    // absorbs the edge scaling).
    let window: Vec<f64> = (0..SMOOTH_LEN)
        .map(|n| {
            0.5 - 0.5
                * (2.0 * std::f64::consts::PI * n as f64 / (SMOOTH_LEN as f64 - 1.0)).cos()
        })
        .collect();
    let half = SMOOTH_LEN as i64 / 2;
    let mut smooth = Array2::zeros((12, t));
    for r in 0..12 {
        for c in 0..t {
            let mut acc = 0.0;
            for (n, &w) in window.iter().enumerate() {
                let idx = c as i64 + n as i64 - half;
                if idx >= 0 && (idx as usize) < t {
                    acc += w * quant[[r, idx as usize]];
                }
            }
            smooth[[r, c]] = acc;
        }
    }

    // Per-column l2 normalization with uniform fallback.
    for c in 0..t {
        let norm: f64 = (0..12).map(|r| smooth[[r, c]] * smooth[[r, c]]).sum::<f64>().sqrt();
        if norm < 1e-12 {
            for r in 0..12 {
                smooth[[r, c]] = 1.0 / 12f64.sqrt();
            }
        } else {
            for r in 0..12 {
                smooth[[r, c]] /= norm;
            }
        }
    }
    Ok(smooth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiofeat::sine_clip;

    #[test]
    fn a440_peaks_in_class_a() {
        let clip = sine_clip(440.0, 2.0, ANALYSIS_SR);
        let ch = extract_chroma(&clip, 10.0).unwrap();
        assert_eq!(ch.dim(), (12, 20));
        for c in 0..ch.ncols() {
            let col: Vec<f64> = (0..12).map(|r| ch[[r, c]]).collect();
            let argmax = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, 9, "column {c}: {col:?}");
        }
    }

    #[test]
    fn silence_gives_uniform_columns() {
        let clip = AudioClip::new(vec![0.0; 2 * ANALYSIS_SR as usize], ANALYSIS_SR).unwrap();
        let ch = extract_chroma(&clip, 10.0).unwrap();
        let expect = 1.0 / 12f64.sqrt();
        for v in ch.iter() {
            assert!((v - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn columns_are_l2_normalized() {
        let clip = sine_clip(523.25, 3.0, ANALYSIS_SR);
        let ch = extract_chroma(&clip, 10.0).unwrap();
        for c in 0..ch.ncols() {
            let norm: f64 = (0..12).map(|r| ch[[r, c]] * ch[[r, c]]).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }
}
