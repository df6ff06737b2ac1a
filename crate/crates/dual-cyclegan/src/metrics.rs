//! Objective evaluation metrics: log-spectral distance and time-domain SNR.

use crate::audio::AudioClip;
use crate::dsp::{log_spectral_distance, DspError, SpectrogramConfig};

/// SNR values above this are reported as the cap (identical signals would be
/// +inf otherwise).
pub const SNR_CAP_DB: f64 = 99.0;

/// Time-domain signal-to-noise ratio in dB, capped at [`SNR_CAP_DB`].
pub fn snr_db(reference: &AudioClip, estimate: &AudioClip) -> Result<f64, DspError> {
    if reference.sample_rate != estimate.sample_rate {
        return Err(DspError::OperandMismatch(format!(
            "sample rates {} vs {}",
            reference.sample_rate, estimate.sample_rate
        )));
    }
    if reference.len() != estimate.len() {
        return Err(DspError::OperandMismatch(format!(
            "lengths {} vs {}",
            reference.len(),
            estimate.len()
        )));
    }
    let sig: f64 = reference.samples.iter().map(|v| v * v).sum();
    let err: f64 = reference
        .samples
        .iter()
        .zip(&estimate.samples)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if err == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (sig / err).log10()).min(SNR_CAP_DB))
}

/// LSD config for evaluation: linear spectrogram with a deep floor so quiet
/// bins do not clamp the comparison.
pub fn eval_lsd_config(sample_rate: u32) -> SpectrogramConfig {
    let mut cfg = if sample_rate >= 32000 {
        SpectrogramConfig::mel_48k()
    } else {
        SpectrogramConfig::mel_16k()
    }
    .linear();
    cfg.log_floor = 1e-8;
    cfg
}

/// LSD between reference and estimate using the evaluation config.
pub fn lsd_db(reference: &AudioClip, estimate: &AudioClip) -> Result<f64, DspError> {
    log_spectral_distance(reference, estimate, &eval_lsd_config(reference.sample_rate))
}
