#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polyvox_core::audio::write_wav;
use polyvox_core::manifest::{CorpusManifest, Gender, ManifestRecord};
use polyvox_core::melspec::{AudioClip, SAMPLE_RATE};

pub fn polyvox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyvox"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn polyvox")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(o),
        stderr(o)
    );
}

/// Seven speakers (f1..f4 female, m1..m3 male), `per_speaker` text-only records each.
pub fn synthetic_corpus(per_speaker: usize) -> CorpusManifest {
    let speakers = [
        ("f1", Gender::Female),
        ("f2", Gender::Female),
        ("f3", Gender::Female),
        ("f4", Gender::Female),
        ("m1", Gender::Male),
        ("m2", Gender::Male),
        ("m3", Gender::Male),
    ];
    let mut records = Vec::with_capacity(per_speaker * speakers.len());
    for (spk, g) in speakers {
        for i in 0..per_speaker {
            records.push(ManifestRecord {
                utterance_id: format!("{spk}_{i:05}"),
                speaker_id: spk.into(),
                gender: g,
                audio_path: PathBuf::from(format!("wav/{spk}/{i:05}.wav")),
                text: format!("sentence {i} of {spk}"),
            });
        }
    }
    CorpusManifest::new(records)
}

pub const LEXICON: &str = "\
SEE  S IY1
THE  DH AH0
CAT  K AE1 T
DOG  D AO1 G
RUN  R AH1 N
SIT  S IH1 T
";

const WORDS: [&str; 6] = ["see", "the", "cat", "dog", "run", "sit"];

/// Two speakers with short tonal clips and sentences over `LEXICON`.
/// Returns the corpus manifest path.
pub fn audio_corpus(dir: &Path, per_speaker: usize) -> PathBuf {
    let mut records = Vec::new();
    for (s, (spk, g)) in [("ann", Gender::Female), ("bob", Gender::Male)].into_iter().enumerate() {
        std::fs::create_dir_all(dir.join("wav").join(spk)).unwrap();
        for i in 0..per_speaker {
            let n = SAMPLE_RATE as usize * (4 + i % 3) / 10;
            let f0 = 110.0 + 60.0 * s as f64 + 7.0 * i as f64;
            let samples: Vec<f64> = (0..n)
                .map(|k| {
                    let t = k as f64 / SAMPLE_RATE as f64;
                    0.3 * (2.0 * std::f64::consts::PI * f0 * t).sin()
                })
                .collect();
            let rel = PathBuf::from(format!("wav/{spk}/{i:03}.wav"));
            write_wav(&dir.join(&rel), &AudioClip::new(samples, SAMPLE_RATE).unwrap()).unwrap();
            let text: Vec<&str> = (0..3).map(|w| WORDS[(i + w * (s + 1)) % WORDS.len()]).collect();
            records.push(ManifestRecord {
                utterance_id: format!("{spk}{i:03}"),
                speaker_id: spk.into(),
                gender: g,
                audio_path: rel,
                text: format!("{}.", text.join(" ")),
            });
        }
    }
    let path = dir.join("corpus.tsv");
    CorpusManifest::new(records).save(&path).unwrap();
    std::fs::write(dir.join("lexicon.dict"), LEXICON).unwrap();
    path
}
