//! STFT magnitude / log-mel front ends and the spectral distances built on
//! them. Frames are center-padded (reflect), so `frames = len/hop + 1`.
//!
//! The DFT is evaluated from precomputed cosine/sine tables; plans are cached
//! per (fft, win, hop) triple. The same plan also provides the adjoint pass
//! used by reverse-mode differentiation in the loss graphs.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dsp::window::hann_periodic;
use crate::dsp::DspError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowShape {
    Hann,
}

/// Front-end settings. `n_mels == 0` selects the linear spectrogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub win_length: usize,
    pub window: WindowShape,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
    /// Magnitude smoothing: cells become sqrt(power + mag_eps^2) instead of
    /// |X|, which keeps gradients bounded at spectral zeros. Zero (the
    /// default) recovers the exact magnitude.
    #[serde(default)]
    pub mag_eps: f64,
}

impl SpectrogramConfig {
    /// Conventional vocoder mel settings for a 16 kHz stream.
    pub fn mel_16k() -> Self {
        Self {
            fft_size: 1024,
            hop: 256,
            win_length: 1024,
            window: WindowShape::Hann,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
            mag_eps: 0.0,
        }
    }

    /// Conventional vocoder mel settings for a 48 kHz stream.
    pub fn mel_48k() -> Self {
        Self {
            fft_size: 2048,
            hop: 512,
            win_length: 2048,
            window: WindowShape::Hann,
            n_mels: 80,
            fmin: 0.0,
            fmax: 24000.0,
            log_floor: 1e-5,
            mag_eps: 0.0,
        }
    }

    pub fn linear(mut self) -> Self {
        self.n_mels = 0;
        self
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), DspError> {
        if !(self.hop <= self.win_length && self.win_length <= self.fft_size) {
            return Err(DspError::BadConfig(format!(
                "need hop <= win <= fft, got hop {} win {} fft {}",
                self.hop, self.win_length, self.fft_size
            )));
        }
        if self.hop == 0 {
            return Err(DspError::BadConfig("hop must be positive".into()));
        }
        let nyq = sample_rate as f64 / 2.0;
        if !(self.fmin < self.fmax && self.fmax <= nyq) {
            return Err(DspError::BadConfig(format!(
                "need fmin < fmax <= {} Hz, got [{}, {}]",
                nyq, self.fmin, self.fmax
            )));
        }
        Ok(())
    }
}

pub struct StftPlan {
    pub fft_size: usize,
    pub win_length: usize,
    pub hop: usize,
    pub bins: usize,
    window: Vec<f64>,
    cos: Vec<f64>, // bins x win, row-major
    sin: Vec<f64>,
}

static PLAN_CACHE: Lazy<Mutex<HashMap<(usize, usize, usize), Arc<StftPlan>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

pub fn stft_plan(fft_size: usize, win_length: usize, hop: usize) -> Arc<StftPlan> {
    let mut cache = PLAN_CACHE.lock().unwrap();
    cache
        .entry((fft_size, win_length, hop))
        .or_insert_with(|| Arc::new(StftPlan::new(fft_size, win_length, hop)))
        .clone()
}

fn reflect(idx: isize, len: usize) -> usize {
    let len = len as isize;
    let mut i = idx;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= len {
            i = 2 * len - 2 - i;
        } else {
            return i as usize;
        }
    }
}

impl StftPlan {
    fn new(fft_size: usize, win_length: usize, hop: usize) -> Self {
        let bins = fft_size / 2 + 1;
        let mut cos = vec![0.0; bins * win_length];
        let mut sin = vec![0.0; bins * win_length];
        for b in 0..bins {
            let w = 2.0 * std::f64::consts::PI * b as f64 / fft_size as f64;
            for n in 0..win_length {
                cos[b * win_length + n] = (w * n as f64).cos();
                sin[b * win_length + n] = (w * n as f64).sin();
            }
        }
        Self { fft_size, win_length, hop, bins, window: hann_periodic(win_length), cos, sin }
    }

    pub fn frame_count(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    fn windowed_frame(&self, x: &[f64], frame: usize, out: &mut [f64]) {
        let pad = self.win_length as isize / 2;
        let start = frame as isize * self.hop as isize - pad;
        for (n, o) in out.iter_mut().enumerate() {
            *o = self.window[n] * x[reflect(start + n as isize, x.len())];
        }
    }

    /// Magnitude spectrogram with the real/imaginary parts kept for the
    /// adjoint pass. Layout: bins x frames, row-major.
    pub fn magnitudes(&self, x: &[f64]) -> StftOutput {
        let frames = self.frame_count(x.len());
        let bins = self.bins;
        let mut mag = vec![0.0; bins * frames];
        let mut re = vec![0.0; bins * frames];
        let mut im = vec![0.0; bins * frames];
        let mut wx = vec![0.0; self.win_length];
        for f in 0..frames {
            self.windowed_frame(x, f, &mut wx);
            for b in 0..bins {
                let crow = &self.cos[b * self.win_length..(b + 1) * self.win_length];
                let srow = &self.sin[b * self.win_length..(b + 1) * self.win_length];
                let mut r = 0.0;
                let mut i = 0.0;
                for ((&w, &c), &s) in wx.iter().zip(crow).zip(srow) {
                    r += w * c;
                    i -= w * s;
                }
                let idx = b * frames + f;
                re[idx] = r;
                im[idx] = i;
                mag[idx] = (r * r + i * i).sqrt();
            }
        }
        StftOutput { bins, frames, mag, re, im }
    }

    /// Chain-rule pass: gradient with respect to the waveform given the
    /// gradient with respect to the magnitudes.
    pub fn magnitudes_adjoint(&self, out: &StftOutput, grad_mag: &[f64], x_len: usize) -> Vec<f64> {
        let mut grad_x = vec![0.0; x_len];
        let mut dwx = vec![0.0; self.win_length];
        let pad = self.win_length as isize / 2;
        for f in 0..out.frames {
            dwx.iter_mut().for_each(|v| *v = 0.0);
            for b in 0..out.bins {
                let idx = b * out.frames + f;
                let m = out.mag[idx];
                let g = grad_mag[idx];
                if m <= 0.0 || g == 0.0 {
                    continue;
                }
                let gr = g * out.re[idx] / m;
                let gi = g * out.im[idx] / m;
                let crow = &self.cos[b * self.win_length..(b + 1) * self.win_length];
                let srow = &self.sin[b * self.win_length..(b + 1) * self.win_length];
                for ((d, &c), &s) in dwx.iter_mut().zip(crow).zip(srow) {
                    *d += gr * c - gi * s;
                }
            }
            let start = f as isize * self.hop as isize - pad;
            for (n, &d) in dwx.iter().enumerate() {
                grad_x[reflect(start + n as isize, x_len)] += self.window[n] * d;
            }
        }
        grad_x
    }
}

/// Replace |X| with sqrt(power + eps^2) in place.
pub fn smooth_magnitudes(out: &mut StftOutput, eps: f64) {
    for ((m, &r), &i) in out.mag.iter_mut().zip(&out.re).zip(&out.im) {
        *m = (r * r + i * i + eps * eps).sqrt();
    }
}

pub struct StftOutput {
    pub bins: usize,
    pub frames: usize,
    pub mag: Vec<f64>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels x bins`, row-major, HTK mel scale.
pub fn mel_filterbank(
    n_mels: usize,
    fft_size: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> Vec<f64> {
    let bins = fft_size / 2 + 1;
    let mut fb = vec![0.0; n_mels * bins];
    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..bins {
            let f = b as f64 * sample_rate as f64 / fft_size as f64;
            let w = if f >= lo && f <= center && center > lo {
                (f - lo) / (center - lo)
            } else if f > center && f <= hi && hi > center {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            fb[m * bins + b] = w;
        }
    }
    fb
}

fn check_pair(a: &AudioClip, b: &AudioClip) -> Result<(), DspError> {
    if a.sample_rate != b.sample_rate {
        return Err(DspError::OperandMismatch(format!(
            "sample rates {} vs {}",
            a.sample_rate, b.sample_rate
        )));
    }
    if a.len() != b.len() {
        return Err(DspError::OperandMismatch(format!("lengths {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// Log spectrogram, time x bins. Linear magnitude when `n_mels == 0`,
/// mel otherwise; cells are `ln(max(value, log_floor))`.
pub fn spectrogram(clip: &AudioClip, cfg: &SpectrogramConfig) -> Result<Vec<Vec<f64>>, DspError> {
    cfg.validate(clip.sample_rate)?;
    if clip.len() < cfg.win_length {
        return Err(DspError::TooShort { len: clip.len(), win: cfg.win_length });
    }
    let plan = stft_plan(cfg.fft_size, cfg.win_length, cfg.hop);
    let mut out = plan.magnitudes(&clip.samples);
    if cfg.mag_eps > 0.0 {
        smooth_magnitudes(&mut out, cfg.mag_eps);
    }
    let (rows, data) = if cfg.n_mels > 0 {
        let fb = mel_filterbank(cfg.n_mels, cfg.fft_size, clip.sample_rate, cfg.fmin, cfg.fmax);
        let mut mel = vec![0.0; cfg.n_mels * out.frames];
        for m in 0..cfg.n_mels {
            for b in 0..out.bins {
                let w = fb[m * out.bins + b];
                if w == 0.0 {
                    continue;
                }
                for f in 0..out.frames {
                    mel[m * out.frames + f] += w * out.mag[b * out.frames + f];
                }
            }
        }
        (cfg.n_mels, mel)
    } else {
        (out.bins, out.mag)
    };
    let mut result = vec![vec![0.0; rows]; out.frames];
    for (f, frame) in result.iter_mut().enumerate() {
        for (r, cell) in frame.iter_mut().enumerate() {
            *cell = data[r * out.frames + f].max(cfg.log_floor).ln();
        }
    }
    Ok(result)
}

/// Mean absolute difference of the two log-mel (or log-linear) matrices.
pub fn mel_l1(a: &AudioClip, b: &AudioClip, cfg: &SpectrogramConfig) -> Result<f64, DspError> {
    check_pair(a, b)?;
    let sa = spectrogram(a, cfg)?;
    let sb = spectrogram(b, cfg)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (fa, fb) in sa.iter().zip(&sb) {
        for (x, y) in fa.iter().zip(fb) {
            sum += (x - y).abs();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Log-spectral distance in dB: mean over frames of the RMS (over bins) of the
/// 20 log10 magnitude difference.
pub fn log_spectral_distance(
    reference: &AudioClip,
    estimate: &AudioClip,
    cfg: &SpectrogramConfig,
) -> Result<f64, DspError> {
    check_pair(reference, estimate)?;
    let cfg = cfg.clone().linear();
    cfg.validate(reference.sample_rate)?;
    if reference.len() < cfg.win_length {
        return Err(DspError::TooShort { len: reference.len(), win: cfg.win_length });
    }
    let plan = stft_plan(cfg.fft_size, cfg.win_length, cfg.hop);
    let sa = plan.magnitudes(&reference.samples);
    let sb = plan.magnitudes(&estimate.samples);
    let mut total = 0.0;
    for f in 0..sa.frames {
        let mut acc = 0.0;
        for b in 0..sa.bins {
            let la = 20.0 * sa.mag[b * sa.frames + f].max(cfg.log_floor).log10();
            let lb = 20.0 * sb.mag[b * sb.frames + f].max(cfg.log_floor).log10();
            acc += (la - lb) * (la - lb);
        }
        total += (acc / sa.bins as f64).sqrt();
    }
    Ok(total / sa.frames as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, len: usize) -> AudioClip {
        let w = 2.0 * std::f64::consts::PI * freq / rate as f64;
        AudioClip {
            samples: (0..len).map(|n| (w * n as f64).sin()).collect(),
            sample_rate: rate,
        }
    }

    #[test]
    fn zero_clip_hits_log_floor() {
        let clip = AudioClip { samples: vec![0.0; 4096], sample_rate: 16000 };
        let cfg = SpectrogramConfig::mel_16k();
        let s = spectrogram(&clip, &cfg).unwrap();
        assert_eq!(s.len(), 4096 / cfg.hop + 1);
        for frame in &s {
            for &v in frame {
                assert_eq!(v, cfg.log_floor.ln());
            }
        }
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        // 1 kHz at fft 1024 / 16 kHz falls on bin 64 exactly
        let clip = sine(1000.0, 16000, 16000);
        let cfg = SpectrogramConfig::mel_16k().linear();
        let s = spectrogram(&clip, &cfg).unwrap();
        for frame in &s[4..s.len() - 4] {
            let argmax = frame
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, 64);
        }
    }

    #[test]
    fn too_short_clip_rejected() {
        let clip = sine(100.0, 16000, 512);
        assert!(matches!(
            spectrogram(&clip, &SpectrogramConfig::mel_16k()),
            Err(DspError::TooShort { .. })
        ));
    }

    #[test]
    fn mel_l1_identity_and_symmetry() {
        let a = sine(440.0, 16000, 4096);
        let b = sine(880.0, 16000, 4096);
        let cfg = SpectrogramConfig::mel_16k();
        assert_eq!(mel_l1(&a, &a, &cfg).unwrap(), 0.0);
        let ab = mel_l1(&a, &b, &cfg).unwrap();
        let ba = mel_l1(&b, &a, &cfg).unwrap();
        assert!(ab > 0.0);
        assert_eq!(ab, ba);
    }

    #[test]
    fn mel_l1_rejects_mismatch() {
        let a = sine(440.0, 16000, 4096);
        let b = sine(440.0, 48000, 4096);
        let cfg = SpectrogramConfig::mel_16k();
        assert!(mel_l1(&a, &b, &cfg).is_err());
        let c = sine(440.0, 16000, 2048);
        assert!(mel_l1(&a, &c, &cfg).is_err());
    }

    #[test]
    fn mel_l1_sign_flip_invariant() {
        let a = sine(500.0, 16000, 4096);
        let b = sine(1500.0, 16000, 4096);
        let na = AudioClip { samples: a.samples.iter().map(|v| -v).collect(), sample_rate: 16000 };
        let nb = AudioClip { samples: b.samples.iter().map(|v| -v).collect(), sample_rate: 16000 };
        let cfg = SpectrogramConfig::mel_16k();
        let d1 = mel_l1(&a, &b, &cfg).unwrap();
        let d2 = mel_l1(&na, &nb, &cfg).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn lsd_of_half_amplitude_noise_is_6db() {
        // constant log-ratio forces the per-frame value to 20 log10(2)
        let mut state = 0x243F6A8885A308D3u64;
        let mut noise = Vec::with_capacity(8192);
        for _ in 0..8192 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            noise.push(((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5);
        }
        let a = AudioClip { samples: noise.clone(), sample_rate: 16000 };
        let b = AudioClip {
            samples: noise.iter().map(|v| v * 0.5).collect(),
            sample_rate: 16000,
        };
        let mut cfg = SpectrogramConfig::mel_16k().linear();
        cfg.log_floor = 1e-12;
        let lsd = log_spectral_distance(&a, &b, &cfg).unwrap();
        assert!((lsd - 20.0 * 2f64.log10()).abs() < 1e-6, "lsd {lsd}");
        assert_eq!(log_spectral_distance(&a, &a, &cfg).unwrap(), 0.0);
        let sym = log_spectral_distance(&b, &a, &cfg).unwrap();
        assert!((lsd - sym).abs() < 1e-12);
    }

    #[test]
    fn spectral_distances_satisfy_triangle_inequality() {
        let a = sine(300.0, 16000, 4096);
        let b = sine(700.0, 16000, 4096);
        let c = sine(1100.0, 16000, 4096);
        let cfg = SpectrogramConfig::mel_16k();
        let ab = mel_l1(&a, &b, &cfg).unwrap();
        let bc = mel_l1(&b, &c, &cfg).unwrap();
        let ac = mel_l1(&a, &c, &cfg).unwrap();
        assert!(ac <= ab + bc + 1e-12);
    }
}
