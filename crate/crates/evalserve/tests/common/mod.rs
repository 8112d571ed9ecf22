#![allow(dead_code)]

use std::path::Path;

use polyvox_core::mushra::TestMode;
use polyvox_evalserve::{SentenceSpec, TestConfig};

pub fn write_tiny_wav(path: &Path, value: i16) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 24_000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for _ in 0..8 {
        w.write_sample(value).unwrap();
    }
    w.finalize().unwrap();
}

pub fn sentences(n: usize) -> Vec<SentenceSpec> {
    (0..n)
        .map(|i| SentenceSpec {
            id: format!("s{i:03}"),
            text: format!("this is test sentence number {i}"),
        })
        .collect()
}

/// Writes a stimulus for every (system, sentence), plus references.
pub fn stimuli(dir: &Path, systems: &[&str], sentences: &[SentenceSpec]) {
    for (k, system) in systems.iter().chain(["recording", "reference"].iter()).enumerate() {
        for s in sentences {
            write_tiny_wav(&dir.join(system).join(format!("{}.wav", s.id)), k as i16);
        }
    }
}

pub fn config(dir: &Path, systems: &[&str], n_sentences: usize, quota: usize, mode: TestMode) -> TestConfig {
    let sentences = sentences(n_sentences);
    stimuli(dir, systems, &sentences);
    TestConfig {
        name: "fixture".into(),
        systems: systems.iter().map(|s| s.to_string()).collect(),
        sentences,
        stimuli_dir: dir.to_path_buf(),
        quota,
        mode,
        seed: 17,
    }
}
