//! Artifact writing and the per-directory manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use texturekit::FeatureMap;

use crate::Failure;

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Artifact {
    name: String,
    stage: String,
    shape: Option<[usize; 3]>,
    sha256: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    artifacts: Vec<Artifact>,
}

/// Collects files for one stage and merges them into the directory's `manifest.json`.
pub struct OutputDir {
    dir: PathBuf,
    stage: &'static str,
    artifacts: Vec<Artifact>,
}

impl OutputDir {
    pub fn create(dir: &Path, stage: &'static str) -> Result<Self, Failure> {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            stage,
            artifacts: Vec::new(),
        })
    }

    fn write_bytes(&mut self, name: String, bytes: &[u8], shape: Option<[usize; 3]>) -> Result<(), Failure> {
        let path = self.dir.join(&name);
        fs::write(&path, bytes).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))?;
        self.artifacts.push(Artifact {
            name,
            stage: self.stage.to_string(),
            shape,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    /// Writes `<stage>_<name>.txk`.
    pub fn tensor(&mut self, name: &str, map: &FeatureMap) -> Result<(), Failure> {
        let (c, h, w) = map.dims();
        self.write_bytes(format!("{}_{name}.txk", self.stage), &map.to_bytes(), Some([c, h, w]))
    }

    /// Writes `<stage>_<name>.json`.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable record");
        text.push('\n');
        self.write_bytes(format!("{}_{name}.json", self.stage), text.as_bytes(), None)
    }

    /// Replaces this stage's entries in the manifest, keeping other stages' entries.
    pub fn finish(self) -> Result<(), Failure> {
        let path = self.dir.join(MANIFEST);
        let mut manifest = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| Failure::Io(format!("corrupt manifest {}: {e}", path.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Manifest::default(),
            Err(e) => return Err(Failure::Io(format!("cannot read {}: {e}", path.display()))),
        };
        manifest.artifacts.retain(|a| a.stage != self.stage);
        manifest.artifacts.extend(self.artifacts);
        manifest.artifacts.sort_by(|a, b| a.name.cmp(&b.name));
        let mut text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
    }
}
