use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// `<root>/<blend>/{data,features,ckpt,synth,reports}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentDir {
    pub dir: PathBuf,
}

impl ExperimentDir {
    pub const SUBDIRS: [&'static str; 5] = ["data", "features", "ckpt", "synth", "reports"];

    pub fn new(root: &Path, blend: &str) -> Self {
        Self { dir: root.join(blend) }
    }

    pub fn create(&self) -> Result<()> {
        for sub in Self::SUBDIRS {
            let p = self.dir.join(sub);
            std::fs::create_dir_all(&p).with_context(|| format!("create {}", p.display()))?;
        }
        Ok(())
    }

    /// Fails unless `prepare-blend` has populated the directory.
    pub fn require_data(&self) -> Result<()> {
        if !self.train_manifest().is_file() {
            bail!("{} has no data/train.tsv; run prepare-blend first", self.dir.display());
        }
        self.create()
    }

    pub fn data(&self) -> PathBuf {
        self.dir.join("data")
    }

    pub fn features(&self) -> PathBuf {
        self.dir.join("features")
    }

    pub fn ckpt(&self) -> PathBuf {
        self.dir.join("ckpt")
    }

    pub fn synth(&self) -> PathBuf {
        self.dir.join("synth")
    }

    pub fn reports(&self) -> PathBuf {
        self.dir.join("reports")
    }

    pub fn train_manifest(&self) -> PathBuf {
        self.data().join("train.tsv")
    }

    pub fn dev_manifest(&self) -> PathBuf {
        self.data().join("dev.tsv")
    }

    pub fn feature_index(&self) -> PathBuf {
        self.features().join("index.tsv")
    }

    pub fn mel_path(&self, utterance_id: &str) -> PathBuf {
        self.features().join(format!("{utterance_id}.mel"))
    }

    pub fn acoustic_ckpt(&self) -> PathBuf {
        self.ckpt().join("acoustic.ckpt")
    }

    pub fn vocoder_ckpt(&self) -> PathBuf {
        self.ckpt().join("vocoder.ckpt")
    }

    pub fn lexicon(&self) -> PathBuf {
        self.ckpt().join("lexicon.dict")
    }
}

/// Utterance ids become file names.
pub fn check_file_stem(utterance_id: &str) -> Result<()> {
    let ok = !utterance_id.is_empty()
        && utterance_id != "."
        && utterance_id != ".."
        && !utterance_id.contains(['/', '\\', '\0']);
    if !ok {
        bail!("utterance id {utterance_id:?} cannot be used as a file name");
    }
    Ok(())
}
