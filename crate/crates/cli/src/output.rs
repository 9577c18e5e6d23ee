use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use gfm_bess::SystemParams;

/// Hex SHA-256 of the resolved parameters' JSON form.
pub fn config_digest(params: &SystemParams) -> String {
    let text = serde_json::to_string(params).expect("parameters serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Writes one file through `f` and remembers its name.
    pub fn write<F>(&mut self, name: &str, f: F) -> std::io::Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let path = self.root.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.written.push(name.to_string());
        Ok(path)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> std::io::Result<PathBuf> {
        self.write(name, |w| w.write_all(text.as_bytes()))
    }

    /// `manifest.json`: command, parameter digest, scenario and settings,
    /// tool version and output names. No timestamps.
    pub fn finish(
        mut self,
        command: &str,
        params: &SystemParams,
        settings: Value,
    ) -> std::io::Result<()> {
        let mut outputs = self.written.clone();
        outputs.push("manifest.json".into());
        let manifest = json!({
            "command": command,
            "config_digest": config_digest(params),
            "settings": settings,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "outputs": outputs,
        });
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        self.write_text("manifest.json", &(text + "\n"))?;
        Ok(())
    }
}
