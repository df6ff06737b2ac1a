//! End-to-end tests of the command-line binary: exit-code contract,
//! preprocessing idempotence, training/resume plumbing, inference I/O
//! contracts, and the evaluation report format.

mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dual_cyclegan::audio::AudioClip;
use dual_cyclegan::wav::{read_wav, write_wav, SampleFormat};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dual-cyclegan"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Preprocess a tiny fixture corpus through the binary; returns the corpus
/// directory (containing manifest.jsonl).
fn cli_corpus(dir: &Path, valid: usize, test: usize) -> PathBuf {
    let raw_s = dir.join("raw_s");
    let raw_t = dir.join("raw_t");
    std::fs::create_dir_all(&raw_s).unwrap();
    std::fs::create_dir_all(&raw_t).unwrap();
    for i in 0..3u64 {
        let s = common::utterance(i, 16000, 1.0);
        write_wav(&raw_s.join(format!("s{i}.wav")), &s, SampleFormat::Float32).unwrap();
        let t = common::utterance(10 + i, 48000, 1.0);
        write_wav(&raw_t.join(format!("t{i}.wav")), &t, SampleFormat::Float32).unwrap();
    }
    let corpus = dir.join("corpus");
    let out = run(&[
        "preprocess",
        "--s-lr",
        raw_s.to_str().unwrap(),
        "--t-hr",
        raw_t.to_str().unwrap(),
        "--out",
        corpus.to_str().unwrap(),
        "--valid",
        &valid.to_string(),
        "--test",
        &test.to_string(),
    ]);
    assert_eq!(code(&out), 0, "preprocess failed: {}", stderr(&out));
    corpus
}

/// Train a tiny model with the micro preset; returns the final checkpoint.
fn quick_checkpoint(dir: &Path, corpus: &Path) -> PathBuf {
    let run_dir = dir.join("run");
    let out = run(&[
        "train",
        "--manifest",
        corpus.join("manifest.jsonl").to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--preset",
        "micro",
        "--set",
        "pretrain_iters=2",
        "--set",
        "finetune_iters=1",
        "--set",
        "idt_cutoff=1",
        "--set",
        "checkpoint_every=2",
    ]);
    assert_eq!(code(&out), 0, "train failed: {}", stderr(&out));
    run_dir.join("final.ckpt")
}

#[test]
fn preprocess_is_idempotent_and_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = cli_corpus(dir.path(), 1, 1);
    let manifest = std::fs::read(corpus.join("manifest.jsonl")).unwrap();
    // rerun into the same output: identical manifest bytes
    let out = run(&[
        "preprocess",
        "--s-lr",
        dir.path().join("raw_s").to_str().unwrap(),
        "--t-hr",
        dir.path().join("raw_t").to_str().unwrap(),
        "--out",
        corpus.to_str().unwrap(),
        "--valid",
        "1",
        "--test",
        "1",
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("t_hr: 1 train / 1 valid / 1 test"));
    let manifest2 = std::fs::read(corpus.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest, manifest2);
}

#[test]
fn preprocess_missing_and_empty_dirs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&[
        "preprocess",
        "--s-lr",
        dir.path().join("nope").to_str().unwrap(),
        "--t-hr",
        dir.path().join("nope").to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&missing), 2);
    assert!(stderr(&missing).contains("does not exist"));

    // directories exist but the target domain has no usable recordings
    let raw_s = dir.path().join("raw_s");
    let raw_t = dir.path().join("raw_t");
    std::fs::create_dir_all(&raw_s).unwrap();
    std::fs::create_dir_all(&raw_t).unwrap();
    let s = common::utterance(0, 16000, 0.5);
    write_wav(&raw_s.join("s0.wav"), &s, SampleFormat::Float32).unwrap();
    let empty = run(&[
        "preprocess",
        "--s-lr",
        raw_s.to_str().unwrap(),
        "--t-hr",
        raw_t.to_str().unwrap(),
        "--out",
        dir.path().join("o2").to_str().unwrap(),
        "--valid",
        "0",
    ]);
    assert_eq!(code(&empty), 2);
}

#[test]
fn train_rejects_unknown_keys_and_resumes_iteration_count() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = cli_corpus(dir.path(), 0, 0);
    let manifest = corpus.join("manifest.jsonl");

    let bad = run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().join("runx").to_str().unwrap(),
        "--preset",
        "micro",
        "--set",
        "not_a_key=1",
    ]);
    assert_eq!(code(&bad), 2);
    assert!(stderr(&bad).contains("unknown config key"));

    let bad_file = dir.path().join("bad.json");
    std::fs::write(&bad_file, r#"{"learning_rate": 0.1}"#).unwrap();
    let bad2 = run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().join("runy").to_str().unwrap(),
        "--preset",
        "micro",
        "--config",
        bad_file.to_str().unwrap(),
    ]);
    assert_eq!(code(&bad2), 2);

    // short run, then resume with a longer schedule: iters continue
    let run1 = dir.path().join("run1");
    let short = run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        run1.to_str().unwrap(),
        "--preset",
        "micro",
        "--set",
        "pretrain_iters=4",
        "--set",
        "finetune_iters=2",
        "--set",
        "idt_cutoff=2",
        "--set",
        "checkpoint_every=3",
    ]);
    assert_eq!(code(&short), 0, "{}", stderr(&short));
    assert!(run1.join("config.json").exists());
    let log = std::fs::read_to_string(run1.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);

    let run2 = dir.path().join("run2");
    let resumed = run(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        run2.to_str().unwrap(),
        "--preset",
        "micro",
        "--set",
        "pretrain_iters=4",
        "--set",
        "finetune_iters=4",
        "--set",
        "idt_cutoff=2",
        "--set",
        "checkpoint_every=10",
        "--resume",
        run1.join("final.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(code(&resumed), 0, "{}", stderr(&resumed));
    let log2 = std::fs::read_to_string(run2.join("train_log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log2.lines().next().unwrap()).unwrap();
    assert_eq!(first["iter"], 6, "resumed run should continue at the saved iteration");
    assert_eq!(log2.lines().count(), 2);
}

#[test]
fn infer_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = cli_corpus(dir.path(), 0, 0);
    let ckpt = quick_checkpoint(dir.path(), &corpus);

    let input = dir.path().join("in.wav");
    write_wav(&input, &common::utterance(3, 16000, 1.0), SampleFormat::Float32).unwrap();
    let out_wav = dir.path().join("out.wav");
    let ok = run(&[
        "infer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        out_wav.to_str().unwrap(),
    ]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    let produced = read_wav(&out_wav).unwrap();
    assert_eq!(produced.sample_rate, 48000);
    assert_eq!(produced.len(), 3 * 16000);

    // determinism: same checkpoint and input give bit-identical output bytes
    let out_wav2 = dir.path().join("out2.wav");
    let again = run(&[
        "infer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        out_wav2.to_str().unwrap(),
    ]);
    assert_eq!(code(&again), 0);
    assert_eq!(std::fs::read(&out_wav).unwrap(), std::fs::read(&out_wav2).unwrap());

    // wrong sample rate
    let hr_in = dir.path().join("hr.wav");
    write_wav(&hr_in, &common::utterance(4, 48000, 0.5), SampleFormat::Float32).unwrap();
    let wrong = run(&[
        "infer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        hr_in.to_str().unwrap(),
        "--output",
        dir.path().join("x.wav").to_str().unwrap(),
    ]);
    assert_eq!(code(&wrong), 2);
    assert!(stderr(&wrong).contains("expected 16000 Hz"));

    // stereo input is rejected by the reader
    let stereo = dir.path().join("stereo.wav");
    write_stereo_wav(&stereo);
    let st = run(&[
        "infer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        stereo.to_str().unwrap(),
        "--output",
        dir.path().join("y.wav").to_str().unwrap(),
    ]);
    assert_eq!(code(&st), 2);

    // too short for the receptive field
    let short = dir.path().join("short.wav");
    let tiny = AudioClip { samples: vec![0.1; 8], sample_rate: 16000 };
    write_wav(&short, &tiny, SampleFormat::Float32).unwrap();
    let sh = run(&[
        "infer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        short.to_str().unwrap(),
        "--output",
        dir.path().join("z.wav").to_str().unwrap(),
    ]);
    assert_eq!(code(&sh), 2);
    assert!(stderr(&sh).contains("too short"));
}

/// Minimal 2-channel PCM16 WAV, handwritten since the library is mono-only.
fn write_stereo_wav(path: &Path) {
    let frames: u32 = 64;
    let data_len = frames * 4;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVEfmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
    bytes.extend_from_slice(&2u16.to_le_bytes()); // stereo
    bytes.extend_from_slice(&16000u32.to_le_bytes());
    bytes.extend_from_slice(&64000u32.to_le_bytes());
    bytes.extend_from_slice(&4u16.to_le_bytes());
    bytes.extend_from_slice(&16u16.to_le_bytes());
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    bytes.resize(bytes.len() + data_len as usize, 0);
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn evaluate_report_and_empty_split() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = cli_corpus(dir.path(), 0, 2);
    let ckpt = quick_checkpoint(dir.path(), &corpus);
    let manifest = corpus.join("manifest.jsonl");

    let ok = run(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--split",
        "test",
    ]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    let text = stdout(&ok);
    let lines: Vec<serde_json::Value> =
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3, "two per-file lines plus a mean line");
    let mean = lines.last().unwrap()["mean"].clone();
    assert_eq!(mean["files"], 2);
    for key in ["lsd_db", "snr_db", "lsd_composite_db", "snr_composite_db"] {
        let avg: f64 =
            lines[..2].iter().map(|l| l[key].as_f64().unwrap()).sum::<f64>() / 2.0;
        let reported = mean[key].as_f64().unwrap();
        assert!((avg - reported).abs() < 1e-12, "{key}: {reported} vs {avg}");
        assert!(reported <= 99.0 + 1e-12);
    }

    // the valid split holds no pairs in this corpus
    let empty = run(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--split",
        "valid",
    ]);
    assert_eq!(code(&empty), 2);
    assert!(stderr(&empty).contains("no parallel pairs"));
}

#[test]
fn help_lists_every_config_key_with_defaults() {
    let out = run(&["train", "--help"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for needle in [
        "pretrain_iters = 400000",
        "finetune_iters = 200000",
        "idt_cutoff = 100000",
        "batch = 4",
        "clip_len = 12000",
        "lr_g = 0.0002",
        "lr_d = 0.0001",
        "lr_half_every = 200000",
        "adam_eps = 1e-8",
        "adam_betas = [0.5,0.999]",
        "grad_clip_norm = 10.0",
        "weights.w_adv = 1.0",
        "weights.w_cyc = 10.0",
        "weights.w_idt = 10.0",
        "seed = 1",
        "checkpoint_every = 10000",
        "loss_cfg.lr_rate = 16000",
        "loss_cfg.mel_lr.fft_size = 1024",
        "loss_cfg.mel_hr.fft_size = 2048",
        "arch.channels = 128",
        "arch.blocks = 6",
    ] {
        assert!(text.contains(needle), "train --help is missing `{needle}`\n{text}");
    }
}
