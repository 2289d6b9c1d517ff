use std::fs;
use std::path::{Path, PathBuf};

use hessix::data::Dataset;
use hessix::interactions::ReportMeta;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::MissingFile {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_dataset(path: &Path, target: Option<&str>) -> CliResult<Dataset> {
    let text = read_text(path)?;
    Dataset::from_csv_reader(text.as_bytes(), target)
        .map_err(|e| CliError::Core(hessix::Error::Malformed(format!("{}: {e}", path.display()))))
}

/// Output directory with provenance for everything written into it.
pub struct Output {
    pub dir: PathBuf,
    pub meta: ReportMeta,
}

impl Output {
    pub fn new(dir: &Path, meta: ReportMeta) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> CliResult<PathBuf> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    /// CSV body prefixed with a `#` provenance line.
    pub fn write_csv(&self, name: &str, body: &str) -> CliResult<PathBuf> {
        self.write_text(name, &format!("{}\n{body}", self.meta.csv_comment()))
    }

    /// JSON object with a `meta` member added.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut v = serde_json::to_value(value).map_err(hessix::Error::from)?;
        if let Value::Object(map) = &mut v {
            map.insert("meta".into(), serde_json::to_value(&self.meta).map_err(hessix::Error::from)?);
        }
        self.write_text(name, &(serde_json::to_string_pretty(&v).map_err(hessix::Error::from)? + "\n"))
    }

    pub fn write_dataset(&self, name: &str, data: &Dataset) -> CliResult<PathBuf> {
        let mut buf = Vec::new();
        data.to_csv_writer(&mut buf, None)?;
        self.write_csv(name, &String::from_utf8(buf).expect("utf-8 csv"))
    }
}
