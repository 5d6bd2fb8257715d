//! MFCCs with first- and second-order derivatives.
//!
//! Pipeline: resample to 16 kHz, Hann-window 1024-sample frames centered at
//! the motion-frame times, 64-band mel filterbank (HTK mel scale), log
//! energies, orthonormal DCT-II, keep `n_mfcc` coefficients. Derivatives
//! use a centered difference over a 2-frame half-window with edge
//! replication.

use ndarray::Array2;

use super::{frame_centers, power_spectra_at, AudioClip, ANALYSIS_SR};
use crate::error::{Error, Result};

const FFT_LEN: usize = 1024;
const N_MELS: usize = 64;
const LOG_FLOOR: f64 = 1e-10;
/// Half-window of the centered-difference delta operator.
const DELTA_HALF: usize = 2;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels x n_bins`.
fn mel_filterbank(n_mels: usize, n_bins: usize, sr: f64, win_len: usize) -> Array2<f64> {
    let f_max = sr / 2.0;
    let m_max = hz_to_mel(f_max);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sr / win_len as f64;
    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for bin in 0..n_bins {
            let f = bin as f64 * bin_hz;
            let w = if f >= lo && f <= mid && mid > lo {
                (f - lo) / (mid - lo)
            } else if f > mid && f <= hi && hi > mid {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[[m, bin]] = w;
        }
    }
    fb
}

/// Orthonormal DCT-II matrix, `n_out x n_in`.
fn dct_matrix(n_out: usize, n_in: usize) -> Array2<f64> {
    let mut d = Array2::zeros((n_out, n_in));
    let norm0 = (1.0 / n_in as f64).sqrt();
    let norm = (2.0 / n_in as f64).sqrt();
    for k in 0..n_out {
        for n in 0..n_in {
            let c = (std::f64::consts::PI / n_in as f64 * (n as f64 + 0.5) * k as f64).cos();
            d[[k, n]] = if k == 0 { norm0 * c } else { norm * c };
        }
    }
    d
}

/// Centered-difference deltas along time with edge replication:
/// `d[t] = sum_n n*(x[t+n] - x[t-n]) / (2 * sum_n n^2)`, n = 1..=half.
pub fn delta_features(x: &Array2<f64>, half: usize) -> Array2<f64> {
    let (rows, t) = x.dim();
    let denom: f64 = 2.0 * (1..=half).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = Array2::zeros((rows, t));
    let clamp = |i: i64| -> usize { i.clamp(0, t as i64 - 1) as usize };
    for r in 0..rows {
        for c in 0..t {
            let mut acc = 0.0;
            for n in 1..=half as i64 {
                acc += n as f64 * (x[[r, clamp(c as i64 + n)]] - x[[r, clamp(c as i64 - n)]]);
            }
            out[[r, c]] = acc / denom;
        }
    }
    out
}

/// Extracts `3*n_mfcc x T` MFCC features (coefficients, deltas,
/// delta-deltas), one column per motion frame.
pub fn extract_mfcc(clip: &AudioClip, fps: f64, n_mfcc: usize) -> Result<Array2<f64>> {
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
    let fb = mel_filterbank(N_MELS, power.nrows(), ANALYSIS_SR as f64, FFT_LEN);
    let mel = fb.dot(&power).mapv(|e| e.max(LOG_FLOOR).ln());
    let dct = dct_matrix(n_mfcc, N_MELS);
    let mfcc = dct.dot(&mel);
    let d1 = delta_features(&mfcc, DELTA_HALF);
    let d2 = delta_features(&d1, DELTA_HALF);
    let t = mfcc.ncols();
    let mut out = Array2::zeros((3 * n_mfcc, t));
    for (block, src) in [&mfcc, &d1, &d2].iter().enumerate() {
        for r in 0..n_mfcc {
            for c in 0..t {
                out[[block * n_mfcc + r, c]] = src[[r, c]];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiofeat::sine_clip;

    #[test]
    fn silence_has_constant_mfcc_and_zero_deltas() {
        let clip = AudioClip::new(vec![0.0; 2 * ANALYSIS_SR as usize], ANALYSIS_SR).unwrap();
        let n_mfcc = 20;
        let m = extract_mfcc(&clip, 10.0, n_mfcc).unwrap();
        assert_eq!(m.dim(), (60, 20));
        for r in 0..n_mfcc {
            let first = m[[r, 0]];
            assert!((0..20).all(|c| (m[[r, c]] - first).abs() < 1e-9));
        }
        for r in n_mfcc..3 * n_mfcc {
            assert!((0..20).all(|c| m[[r, c]].abs() < 1e-9));
        }
    }

    #[test]
    fn seven_seconds_gives_seventy_columns() {
        let clip = sine_clip(440.0, 7.0, ANALYSIS_SR);
        let m = extract_mfcc(&clip, 10.0, 20).unwrap();
        assert_eq!(m.ncols(), 70);
    }

    #[test]
    fn different_tones_give_different_mfcc() {
        let a = extract_mfcc(&sine_clip(440.0, 1.0, ANALYSIS_SR), 10.0, 20).unwrap();
        let b = extract_mfcc(&sine_clip(880.0, 1.0, ANALYSIS_SR), 10.0, 20).unwrap();
        let dist: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        assert!(dist > 1.0, "l2 distance {dist}");
    }

    #[test]
    fn delta_rows_match_recomputation() {
        let clip = sine_clip(300.0, 2.0, ANALYSIS_SR);
        let n_mfcc = 20;
        let m = extract_mfcc(&clip, 10.0, n_mfcc).unwrap();
        let base = m.slice(ndarray::s![0..n_mfcc, ..]).to_owned();
        let d1 = delta_features(&base, DELTA_HALF);
        for r in 0..n_mfcc {
            for c in 0..m.ncols() {
                assert!((m[[n_mfcc + r, c]] - d1[[r, c]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn too_short_clip_rejected() {
        let clip = AudioClip::new(vec![0.1; 100], ANALYSIS_SR).unwrap();
        assert!(matches!(extract_mfcc(&clip, 10.0, 20), Err(Error::TooShortClip(_))));
    }
}
