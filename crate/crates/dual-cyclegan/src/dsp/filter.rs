//! Zero-phase high-pass filtering: a 4th-order Butterworth (two biquad
//! sections from the bilinear transform) applied forward and backward.

use std::f64::consts::PI;

use crate::audio::AudioClip;
use crate::dsp::DspError;

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    /// High-pass section with quality factor `q`, prewarped bilinear design.
    fn highpass(cutoff_hz: f64, sample_rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate;
        let alpha = w0.sin() / (2.0 * q);
        let cosw = w0.cos();
        let a0 = 1.0 + alpha;
        Biquad {
            b0: (1.0 + cosw) / 2.0 / a0,
            b1: -(1.0 + cosw) / a0,
            b2: (1.0 + cosw) / 2.0 / a0,
            a1: -2.0 * cosw / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    fn process(&self, x: &mut [f64]) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for v in x.iter_mut() {
            let x0 = *v;
            let y0 = self.b0 * x0 + self.b1 * x1 + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
            x2 = x1;
            x1 = x0;
            y2 = y1;
            y1 = y0;
            *v = y0;
        }
    }

    /// |H(e^{jw})|^2 at normalized angular frequency `w`.
    fn mag_sq(&self, w: f64) -> f64 {
        let (c1, s1) = (w.cos(), w.sin());
        let (c2, s2) = ((2.0 * w).cos(), (2.0 * w).sin());
        let nr = self.b0 + self.b1 * c1 + self.b2 * c2;
        let ni = -self.b1 * s1 - self.b2 * s2;
        let dr = 1.0 + self.a1 * c1 + self.a2 * c2;
        let di = -self.a1 * s1 - self.a2 * s2;
        (nr * nr + ni * ni) / (dr * dr + di * di)
    }
}

// Butterworth pole quality factors for order 4: 1/(2 cos(pi/8)), 1/(2 cos(3 pi/8))
fn sections(cutoff_hz: f64, sample_rate: f64) -> [Biquad; 2] {
    let q1 = 1.0 / (2.0 * (PI / 8.0).cos());
    let q2 = 1.0 / (2.0 * (3.0 * PI / 8.0).cos());
    [
        Biquad::highpass(cutoff_hz, sample_rate, q1),
        Biquad::highpass(cutoff_hz, sample_rate, q2),
    ]
}

/// Forward-backward 4th-order Butterworth high-pass. Zero phase, same length.
pub fn highpass(clip: &AudioClip, cutoff_hz: f64) -> Result<AudioClip, DspError> {
    let nyquist = clip.sample_rate as f64 / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(DspError::CutoffOutOfRange { cutoff: cutoff_hz, nyquist });
    }
    let secs = sections(cutoff_hz, clip.sample_rate as f64);
    let mut x = clip.samples.clone();
    for s in &secs {
        s.process(&mut x);
    }
    x.reverse();
    for s in &secs {
        s.process(&mut x);
    }
    x.reverse();
    Ok(AudioClip { samples: x, sample_rate: clip.sample_rate })
}

/// Magnitude response of the forward-backward filter at `freq_hz`, in dB.
pub fn highpass_response_db(cutoff_hz: f64, sample_rate: u32, freq_hz: f64) -> f64 {
    let w = 2.0 * PI * freq_hz / sample_rate as f64;
    let mag_sq: f64 = sections(cutoff_hz, sample_rate as f64)
        .iter()
        .map(|s| s.mag_sq(w))
        .product();
    // forward-backward squares the magnitude
    10.0 * (mag_sq * mag_sq).log10()
}
