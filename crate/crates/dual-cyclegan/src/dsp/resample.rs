//! Windowed-sinc resampling between 16 kHz and 48 kHz (3:1 ratios) plus the
//! rational resampler used to bring 22.05 kHz corpora down to 16 kHz.
//!
//! The 3:1 kernel is a 151-tap Kaiser-windowed sinc (beta 8.0) designed at the
//! higher rate with cutoff 0.9x the lower Nyquist. Each polyphase branch is
//! normalized to unit DC gain so constants pass through exactly.

use crate::audio::AudioClip;
use crate::dsp::window::{bessel_i0, kaiser, sinc};
use crate::dsp::DspError;

pub const RESAMPLE_TAPS: usize = 151;
const KAISER_BETA: f64 = 8.0;
/// Cutoff at the higher rate, in cycles per sample: 0.9 x (lower Nyquist).
const CUTOFF_HIGH_RATE: f64 = 0.9 * 0.5 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleDirection {
    Up3,
    Down3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelWindow {
    Kaiser,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResampleSpec {
    pub from_rate: u32,
    pub to_rate: u32,
    pub taps: usize,
    pub window: KernelWindow,
    pub kaiser_beta: f64,
}

impl ResampleSpec {
    pub fn up3(from_rate: u32) -> Self {
        Self {
            from_rate,
            to_rate: from_rate * 3,
            taps: RESAMPLE_TAPS,
            window: KernelWindow::Kaiser,
            kaiser_beta: KAISER_BETA,
        }
    }

    pub fn down3(from_rate: u32) -> Self {
        Self {
            from_rate,
            to_rate: from_rate / 3,
            taps: RESAMPLE_TAPS,
            window: KernelWindow::Kaiser,
            kaiser_beta: KAISER_BETA,
        }
    }

    pub fn direction(&self) -> Result<ResampleDirection, DspError> {
        if self.to_rate == self.from_rate * 3 {
            Ok(ResampleDirection::Up3)
        } else if self.from_rate == self.to_rate * 3 {
            Ok(ResampleDirection::Down3)
        } else {
            Err(DspError::UnsupportedRatio { from: self.from_rate, to: self.to_rate })
        }
    }
}

/// Normalized 3:1 kernel. For upsampling each polyphase branch sums to one;
/// for decimation the whole kernel sums to one.
pub fn resample_kernel(direction: ResampleDirection, taps: usize, beta: f64) -> Vec<f64> {
    assert!(taps % 2 == 1, "kernel taps must be odd");
    let center = (taps / 2) as f64;
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let u = i as f64 - center;
            2.0 * CUTOFF_HIGH_RATE * sinc(2.0 * CUTOFF_HIGH_RATE * u) * kaiser(i, taps, beta)
        })
        .collect();
    match direction {
        ResampleDirection::Up3 => {
            let mut phase_sum = [0.0f64; 3];
            for (i, v) in h.iter().enumerate() {
                phase_sum[i % 3] += v;
            }
            for (i, v) in h.iter_mut().enumerate() {
                *v /= phase_sum[i % 3];
            }
        }
        ResampleDirection::Down3 => {
            let sum: f64 = h.iter().sum();
            for v in h.iter_mut() {
                *v /= sum;
            }
        }
    }
    h
}

/// out[j] = sum_n h[j + c - 3n] x[n], zero-padded at the edges.
pub fn upsample3(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    let taps = kernel.len();
    let c = taps / 2;
    let mut out = vec![0.0; n_in * 3];
    for (j, o) in out.iter_mut().enumerate() {
        let base = j + c;
        // taps m = base - 3n with 0 <= m < taps and 0 <= n < n_in
        let n_lo = (base + 3).saturating_sub(taps).div_ceil(3);
        let n_hi = ((base / 3) + 1).min(n_in);
        let mut acc = 0.0;
        for n in n_lo..n_hi {
            acc += kernel[base - 3 * n] * x[n];
        }
        *o = acc;
    }
    out
}

/// out[n] = sum_m h[m] x[3n + c - m], zero-padded at the edges.
pub fn downsample3(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    let taps = kernel.len();
    let c = taps / 2;
    let n_out = n_in / 3;
    let mut out = vec![0.0; n_out];
    for (n, o) in out.iter_mut().enumerate() {
        let base = 3 * n + c;
        let m_lo = (base + 1).saturating_sub(n_in);
        let m_hi = taps.min(base + 1);
        let mut acc = 0.0;
        for m in m_lo..m_hi {
            acc += kernel[m] * x[base - m];
        }
        *o = acc;
    }
    out
}

/// Adjoint of the forward maps, used by reverse-mode differentiation.
/// `grad_out` has the output length of the forward pass; the result has the
/// forward pass's input length `in_len`.
pub fn sinc_resample_adjoint(
    direction: ResampleDirection,
    grad_out: &[f64],
    in_len: usize,
    kernel: &[f64],
) -> Vec<f64> {
    let taps = kernel.len();
    let c = taps / 2;
    let mut grad_in = vec![0.0; in_len];
    match direction {
        ResampleDirection::Up3 => {
            // forward: out[j] += k[j + c - 3n] x[n]
            for (j, &g) in grad_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let base = j + c;
                let n_lo = (base + 3).saturating_sub(taps).div_ceil(3);
                let n_hi = ((base / 3) + 1).min(in_len);
                for n in n_lo..n_hi {
                    grad_in[n] += kernel[base - 3 * n] * g;
                }
            }
        }
        ResampleDirection::Down3 => {
            for (n, &g) in grad_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let base = 3 * n + c;
                let m_lo = (base + 1).saturating_sub(in_len);
                let m_hi = taps.min(base + 1);
                for m in m_lo..m_hi {
                    grad_in[base - m] += kernel[m] * g;
                }
            }
        }
    }
    grad_in
}

/// 3:1 / 1:3 windowed-sinc resampling with the length contracts
/// `out_len == in_len * to/from` (decimation requires divisibility by 3).
pub fn sinc_resample(clip: &AudioClip, spec: &ResampleSpec) -> Result<AudioClip, DspError> {
    if clip.sample_rate != spec.from_rate {
        return Err(DspError::RateMismatch { got: clip.sample_rate, want: spec.from_rate });
    }
    let dir = spec.direction()?;
    let kernel = resample_kernel(dir, spec.taps, spec.kaiser_beta);
    let samples = match dir {
        ResampleDirection::Up3 => upsample3(&clip.samples, &kernel),
        ResampleDirection::Down3 => {
            if clip.samples.len() % 3 != 0 {
                return Err(DspError::LengthNotDivisible { len: clip.samples.len(), div: 3 });
            }
            downsample3(&clip.samples, &kernel)
        }
    };
    Ok(AudioClip { samples, sample_rate: spec.to_rate })
}

fn kaiser_continuous(r: f64, beta: f64) -> f64 {
    if r.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - r * r).sqrt()) / bessel_i0(beta)
}

/// Rational-ratio windowed-sinc resampling (e.g. 22.05 kHz -> 16 kHz) with the
/// same 151-tap Kaiser design evaluated at fractional offsets. Output length is
/// `round(len * to/from)`. Each output is normalized by its local kernel mass.
pub fn resample_rational(clip: &AudioClip, to_rate: u32) -> Result<AudioClip, DspError> {
    let from_rate = clip.sample_rate;
    if from_rate == to_rate {
        return Ok(clip.clone());
    }
    let ratio = to_rate as f64 / from_rate as f64;
    // anti-alias at 0.9x the lower Nyquist, in cycles per input sample
    let fc = 0.9 * 0.5 * ratio.min(1.0);
    let half_width = (RESAMPLE_TAPS / 2) as f64;
    let n_in = clip.samples.len();
    let n_out = (n_in as f64 * ratio).round() as usize;
    let mut out = vec![0.0; n_out];
    for (j, o) in out.iter_mut().enumerate() {
        let t = j as f64 / ratio;
        let n_lo = ((t - half_width).ceil().max(0.0)) as usize;
        let n_hi = (((t + half_width).floor() as usize) + 1).min(n_in);
        let mut acc = 0.0;
        let mut mass = 0.0;
        for n in n_lo..n_hi {
            let u = t - n as f64;
            let w = 2.0 * fc * sinc(2.0 * fc * u) * kaiser_continuous(u / half_width, KAISER_BETA);
            acc += w * clip.samples[n];
            mass += w;
        }
        *o = if mass.abs() > 1e-12 { acc / mass } else { 0.0 };
    }
    Ok(AudioClip { samples: out, sample_rate: to_rate })
}
