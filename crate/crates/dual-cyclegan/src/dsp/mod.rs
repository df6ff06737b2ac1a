//! Deterministic signal-processing primitives: windowed-sinc resampling,
//! zero-phase high-pass filtering, loudness normalization, spectrogram front
//! ends and the spectral distances used by losses and evaluation.

mod filter;
mod resample;
mod spectrogram;
pub mod window;

pub use filter::{highpass, highpass_response_db};
pub use resample::{
    downsample3, resample_kernel, resample_rational, sinc_resample, sinc_resample_adjoint,
    upsample3, KernelWindow, ResampleDirection, ResampleSpec, RESAMPLE_TAPS,
};
pub use spectrogram::{
    log_spectral_distance, mel_filterbank, mel_l1, smooth_magnitudes, spectrogram, stft_plan,
    SpectrogramConfig,
    StftOutput, StftPlan, WindowShape,
};

use crate::audio::AudioClip;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("unsupported resampling ratio {from} -> {to} (only 3:1 and 1:3)")]
    UnsupportedRatio { from: u32, to: u32 },
    #[error("input length {len} not divisible by {div} for decimation")]
    LengthNotDivisible { len: usize, div: usize },
    #[error("clip sample rate {got} does not match spec rate {want}")]
    RateMismatch { got: u32, want: u32 },
    #[error("cutoff {cutoff} Hz out of range (0, {nyquist})")]
    CutoffOutOfRange { cutoff: f64, nyquist: f64 },
    #[error("cannot normalize silent (all-zero) input")]
    SilentInput,
    #[error("clip of {len} samples shorter than one window ({win})")]
    TooShort { len: usize, win: usize },
    #[error("operands mismatch: {0}")]
    OperandMismatch(String),
    #[error("invalid spectrogram config: {0}")]
    BadConfig(String),
}

/// Scales the clip so its RMS level in dBFS equals `target_db`.
pub fn normalize_loudness(clip: &AudioClip, target_db: f64) -> Result<AudioClip, DspError> {
    let rms = clip.rms();
    if rms <= 0.0 {
        return Err(DspError::SilentInput);
    }
    let target_rms = 10f64.powf(target_db / 20.0);
    let gain = target_rms / rms;
    Ok(AudioClip {
        samples: clip.samples.iter().map(|s| s * gain).collect(),
        sample_rate: clip.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, len: usize, amp: f64) -> AudioClip {
        let w = 2.0 * std::f64::consts::PI * freq / rate as f64;
        AudioClip {
            samples: (0..len).map(|n| amp * (w * n as f64).sin()).collect(),
            sample_rate: rate,
        }
    }

    #[test]
    fn normalize_hits_target_exactly() {
        // unit-amplitude sine has RMS 1/sqrt(2); required gain is 10^(-26/20)*sqrt(2)
        let clip = sine(440.0, 16000, 16000, 1.0);
        let out = normalize_loudness(&clip, -26.0).unwrap();
        let db = 20.0 * out.rms().log10();
        assert!((db + 26.0).abs() < 1e-6, "got {db}");
        let expected_gain = 10f64.powf(-26.0 / 20.0) * 2f64.sqrt();
        let gain = out.samples[100] / clip.samples[100];
        assert!((gain - expected_gain).abs() < 1e-3);
    }

    #[test]
    fn normalize_is_fixed_point_at_target() {
        let mut clip = sine(200.0, 16000, 8000, 0.3);
        clip = normalize_loudness(&clip, -26.0).unwrap();
        let again = normalize_loudness(&clip, -26.0).unwrap();
        for (a, b) in clip.samples.iter().zip(&again.samples) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_silence() {
        let clip = AudioClip { samples: vec![0.0; 100], sample_rate: 16000 };
        assert!(matches!(normalize_loudness(&clip, -26.0), Err(DspError::SilentInput)));
    }
}
