use std::time::Instant;

use dual_cyclegan::audio::AudioClip;
use dual_cyclegan::losses::Batch;
use dual_cyclegan::trainer::{train_step, TrainConfig, TrainState};

fn tone(freq: f64, rate: u32, len: usize) -> AudioClip {
    let w = 2.0 * std::f64::consts::PI * freq / rate as f64;
    AudioClip { samples: (0..len).map(|n| 0.4 * (w * n as f64).sin()).collect(), sample_rate: rate }
}

fn main() {
    let mut config = TrainConfig::desk();
    config.clip_len = 300;
    config.batch = 1;
    let batch = Batch {
        x: vec![tone(440.0, 16000, config.clip_len)],
        z: vec![tone(330.0, 16000, config.clip_len)],
        y: vec![tone(330.0, 48000, 3 * config.clip_len)],
    };
    let mut state = TrainState::new(&config);
    for _ in 0..3 {
        train_step(&mut state, &batch, &config).unwrap();
    }
    let iters = 30;
    let t0 = Instant::now();
    for _ in 0..iters {
        train_step(&mut state, &batch, &config).unwrap();
    }
    println!("{:.1} ms/iter", t0.elapsed().as_secs_f64() * 1000.0 / iters as f64);
}
