//! Beat detection: log-mel spectral flux onset envelope, autocorrelation
//! tempo estimate (60-180 BPM, log-Gaussian preference around 120 BPM),
//! and dynamic-programming beat tracking with transition cost
//! `lambda * ln^2(interval / period)`.
//!
//! The waveform is peak-normalized first, so the result is invariant to
//! uniform gain. Detected beats keep their tracked spacing ("may or may
//! not be equidistant"); they are only converted to 1-based motion frames
//! and truncated to the first `cap` entries.

use ndarray::Array2;

use super::{power_spectra_at, AudioClip, ANALYSIS_SR};
use crate::error::{Error, Result};

/// Envelope hop in samples at 16 kHz: 10 ms, i.e. 100 envelope frames/s.
const ENV_HOP: usize = 160;
const ENV_FPS: f64 = ANALYSIS_SR as f64 / ENV_HOP as f64;
const ENV_WIN: usize = 1024;
const N_MELS: usize = 64;
const MIN_BPM: f64 = 60.0;
const MAX_BPM: f64 = 180.0;
/// Center of the log-Gaussian tempo preference.
const PREF_BPM: f64 = 120.0;
/// DP transition-cost weight.
const LAMBDA: f64 = 100.0;

fn mel_filterbank(n_bins: usize) -> Array2<f64> {
    let hz_to_mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let mel_to_hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let sr = ANALYSIS_SR as f64;
    let m_max = hz_to_mel(sr / 2.0);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(m_max * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let bin_hz = sr / ENV_WIN as f64;
    let mut fb = Array2::zeros((N_MELS, n_bins));
    for m in 0..N_MELS {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for bin in 0..n_bins {
            let f = bin as f64 * bin_hz;
            fb[[m, bin]] = if f >= lo && f <= mid && mid > lo {
                (f - lo) / (mid - lo)
            } else if f > mid && f <= hi && hi > mid {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
        }
    }
    fb
}

/// Half-wave-rectified log-mel spectral flux at 100 frames/s.
fn onset_envelope(samples: &[f64]) -> Vec<f64> {
    let n_env = samples.len() / ENV_HOP;
    let centers: Vec<usize> = (0..n_env).map(|i| i * ENV_HOP).collect();
    let power = power_spectra_at(samples, &centers, ENV_WIN);
    let fb = mel_filterbank(power.nrows());
    let logmel = fb.dot(&power).mapv(|e| (e + 1e-10).ln());
    let mut flux = vec![0.0; n_env];
    for t in 1..n_env {
        let mut acc = 0.0;
        for m in 0..N_MELS {
            acc += (logmel[[m, t]] - logmel[[m, t - 1]]).max(0.0);
        }
        flux[t] = acc;
    }
    // Light smoothing keeps the DP from splitting one onset across bins.
    let mut smooth = vec![0.0; n_env];
    for t in 0..n_env {
        let prev = if t > 0 { flux[t - 1] } else { 0.0 };
        let next = if t + 1 < n_env { flux[t + 1] } else { 0.0 };
        smooth[t] = 0.25 * prev + 0.5 * flux[t] + 0.25 * next;
    }
    smooth
}

/// Autocorrelation tempo estimate; returns the period in envelope frames.
///
/// The raw argmax is weighted by a log-Gaussian preference around 120 BPM;
/// afterwards the estimate drops an octave toward the faster tempo while
/// the half-period autocorrelation stays comparable, so fast click grids
/// are not halved by the preference window.
fn estimate_period(env: &[f64]) -> usize {
    let lag_min = (ENV_FPS * 60.0 / MAX_BPM).round() as usize;
    let lag_max = ((ENV_FPS * 60.0 / MIN_BPM).round() as usize).min(env.len().saturating_sub(1));
    let pref_lag = ENV_FPS * 60.0 / PREF_BPM;
    let autocorr = |lag: usize| -> f64 {
        let mut r = 0.0;
        for t in lag..env.len() {
            r += env[t] * env[t - lag];
        }
        r
    };
    let raw: Vec<f64> = (0..=lag_max).map(|l| if l < lag_min { 0.0 } else { autocorr(l) }).collect();
    let mut best = lag_min;
    let mut best_score = f64::NEG_INFINITY;
    for lag in lag_min..=lag_max {
        let w = (-0.5 * ((lag as f64 / pref_lag).log2()).powi(2)).exp();
        let score = raw[lag] * w;
        if score > best_score {
            best_score = score;
            best = lag;
        }
    }
    loop {
        let half = best / 2;
        if half < lag_min {
            break;
        }
        let r_half = (half.saturating_sub(1)..=(half + 1).min(lag_max))
            .map(|l| raw[l])
            .fold(f64::NEG_INFINITY, f64::max);
        if r_half >= 0.7 * raw[best] {
            best = half;
        } else {
            break;
        }
    }
    best
}

/// Dynamic-programming beat tracking (envelope-frame indices, ascending).
fn track_beats(env: &[f64], period: usize) -> Vec<usize> {
    let n = env.len();
    let tau_min = (period as f64 * 0.5).round() as usize;
    let tau_max = ((period as f64 * 2.0).round() as usize).min(n.saturating_sub(1));
    let mut score = vec![0.0f64; n];
    let mut back: Vec<i64> = vec![-1; n];
    for t in 0..n {
        let mut best = 0.0f64;
        let mut best_tau: i64 = -1;
        for tau in tau_min..=tau_max.min(t) {
            let interval_cost = LAMBDA * (tau as f64 / period as f64).ln().powi(2);
            let cand = score[t - tau] - interval_cost;
            if cand > best {
                best = cand;
                best_tau = tau as i64;
            }
        }
        score[t] = env[t] + best;
        if best_tau >= 0 {
            back[t] = t as i64 - best_tau;
        }
    }
    // Best chain ending within the final period.
    let tail_start = n.saturating_sub(period.max(1));
    let mut end = tail_start;
    for t in tail_start..n {
        if score[t] > score[end] {
            end = t;
        }
    }
    let mut beats = vec![end];
    let mut cur = end;
    while back[cur] >= 0 {
        cur = back[cur] as usize;
        beats.push(cur);
    }
    beats.reverse();
    beats
}

/// Detects beat frames (1-based motion-frame indices at `fps`), truncated
/// to the first `cap` beats.
pub fn detect_beats(clip: &AudioClip, fps: f64, cap: usize) -> Result<Vec<usize>> {
    if clip.duration() < 1.0 {
        return Err(Error::TooShortClip(format!(
            "{:.3} s is below the 1 s beat-tracking minimum",
            clip.duration()
        )));
    }
    let clip = clip.resampled(ANALYSIS_SR);
    let peak = clip.samples.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    if peak < 1e-9 {
        return Err(Error::NoBeatsFound);
    }
    let normalized: Vec<f64> = clip.samples.iter().map(|&s| s / peak).collect();
    let env = onset_envelope(&normalized);
    let env_peak = env.iter().fold(0.0f64, |m, &v| m.max(v));
    if env_peak < 1e-9 {
        return Err(Error::NoBeatsFound);
    }
    let env: Vec<f64> = env.iter().map(|&v| v / env_peak).collect();
    let period = estimate_period(&env);
    let beats_env = track_beats(&env, period);

    let t_motion = clip.num_frames(fps);
    let mut frames: Vec<usize> = Vec::new();
    for &b in &beats_env {
        let sec = b as f64 / ENV_FPS;
        let frame = ((sec * fps).floor() as usize + 1).clamp(1, t_motion.max(1));
        if frames.last() != Some(&frame) {
            frames.push(frame);
        }
    }
    frames.truncate(cap);
    if frames.is_empty() {
        return Err(Error::NoBeatsFound);
    }
    Ok(frames)
}

/// Synthesizes a click track: short decaying sine bursts at each beat of
/// the given tempo, over band-limited background noise. Used by the
/// synthetic dataset and tests.
pub fn click_track(bpm: f64, duration: f64, noise_amp: f64, noise_seed: u64) -> AudioClip {
    use rand::Rng;
    use rand::SeedableRng;
    let sr = ANALYSIS_SR;
    let n = (duration * sr as f64) as usize;
    let mut samples = vec![0.0f64; n];
    if noise_amp > 0.0 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(noise_seed);
        let mut state = 0.0f64;
        for s in samples.iter_mut() {
            // One-pole lowpass on white noise.
            state = 0.95 * state + 0.05 * rng.random_range(-1.0..1.0);
            *s = state * noise_amp;
        }
    }
    let period = 60.0 / bpm;
    let click_len = (0.03 * sr as f64) as usize;
    let mut beat_t = 0.0;
    while beat_t < duration {
        let start = (beat_t * sr as f64) as usize;
        for k in 0..click_len.min(n.saturating_sub(start)) {
            let t = k as f64 / sr as f64;
            samples[start + k] +=
                0.9 * (2.0 * std::f64::consts::PI * 1500.0 * t).sin() * (-t / 0.008).exp();
        }
        beat_t += period;
    }
    for s in samples.iter_mut() {
        *s = s.clamp(-1.0, 1.0);
    }
    AudioClip::new(samples, sr).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn click_track_120_bpm_lands_on_expected_frames() {
        let clip = click_track(120.0, 7.0, 0.02, 1);
        let beats = detect_beats(&clip, 10.0, 20).unwrap();
        // Clicks every 0.5 s -> frames 1, 6, 11, ...
        let expected: Vec<usize> = (0..14).map(|k| 1 + 5 * k).collect();
        let mut hits = 0;
        for &e in &expected {
            if beats.iter().any(|&b| (b as i64 - e as i64).abs() <= 1) {
                hits += 1;
            }
        }
        assert!(
            hits as f64 >= 0.9 * expected.len() as f64,
            "only {hits}/{} clicks matched: {beats:?}",
            expected.len()
        );
    }

    #[test]
    fn cap_truncates_beat_list() {
        // 180 BPM over 7 s yields 21 clicks; the tracker should keep the
        // first 20 after capping.
        let clip = click_track(180.0, 7.0, 0.02, 2);
        let beats = detect_beats(&clip, 10.0, 20).unwrap();
        assert_eq!(beats.len(), 20, "{beats:?}");
        let uncapped = detect_beats(&clip, 10.0, 100).unwrap();
        assert!(uncapped.len() > 20, "{uncapped:?}");
        assert_eq!(&uncapped[..20], &beats[..]);
    }

    #[test]
    fn silence_has_no_beats() {
        let clip = AudioClip::new(vec![0.0; 2 * ANALYSIS_SR as usize], ANALYSIS_SR).unwrap();
        assert!(matches!(detect_beats(&clip, 10.0, 20), Err(Error::NoBeatsFound)));
    }

    #[test]
    fn gain_invariance() {
        let clip = click_track(97.0, 7.0, 0.02, 3);
        let beats = detect_beats(&clip, 10.0, 20).unwrap();
        let half = AudioClip::new(
            clip.samples.iter().map(|&s| s * 0.5).collect(),
            clip.sample_rate,
        )
        .unwrap();
        let beats_half = detect_beats(&half, 10.0, 20).unwrap();
        assert_eq!(beats, beats_half);
    }

    #[test]
    fn beats_are_strictly_increasing_and_in_range() {
        let clip = click_track(133.0, 7.0, 0.02, 4);
        let beats = detect_beats(&clip, 10.0, 20).unwrap();
        for w in beats.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert!(*beats.first().unwrap() >= 1);
        assert!(*beats.last().unwrap() <= 70);
    }

    #[test]
    fn too_short_clip_rejected() {
        let clip = AudioClip::new(vec![0.1; ANALYSIS_SR as usize / 2], ANALYSIS_SR).unwrap();
        assert!(matches!(detect_beats(&clip, 10.0, 20), Err(Error::TooShortClip(_))));
    }
}
