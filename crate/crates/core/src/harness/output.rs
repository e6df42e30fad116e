//! Result tables (CSV or JSON lines) and metadata sidecars.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OutputFormat};
use crate::error::Result;

/// NaN is written as an empty field (CSV) or `null` (JSON) and read back as NaN.
pub(crate) mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Naming of the files belonging to one command invocation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputFiles {
    pub dir: PathBuf,
    pub name: String,
    pub format: OutputFormat,
}

impl OutputFiles {
    pub fn new(dir: impl Into<PathBuf>, name: impl Into<String>, format: OutputFormat) -> Self {
        Self {
            dir: dir.into(),
            name: name.into(),
            format,
        }
    }

    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self::new(config.output.dir.clone(), config.output.name.clone(), config.output.format)
    }

    /// `{dir}/{name}{suffix}.csv` or `.jsonl`.
    pub fn table(&self, suffix: &str) -> PathBuf {
        let ext = match self.format {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "jsonl",
        };
        self.dir.join(format!("{}{suffix}.{ext}", self.name))
    }

    /// CSV regardless of format, for matrix-shaped outputs.
    pub fn csv(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}{suffix}.csv", self.name))
    }

    pub fn metadata(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}{suffix}.meta.json", self.name))
    }

    pub fn create_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        Ok(())
    }

    pub fn write_table<T: Serialize>(&self, path: &Path, rows: &[T]) -> Result<()> {
        let file = File::create(path)?;
        self.write_rows(file, rows, true)
    }

    /// Appends and flushes; a header is written only to an empty file.
    pub fn append_table<T: Serialize>(&self, path: &Path, rows: &[T]) -> Result<()> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let fresh = file.metadata()?.len() == 0;
        self.write_rows(file, rows, fresh)
    }

    fn write_rows<T: Serialize>(&self, file: File, rows: &[T], header: bool) -> Result<()> {
        match self.format {
            OutputFormat::Csv => {
                let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(file);
                for r in rows {
                    w.serialize(r)?;
                }
                w.flush()?;
            }
            OutputFormat::Json => {
                let mut w = BufWriter::new(file);
                for r in rows {
                    serde_json::to_writer(&mut w, r)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
        }
        Ok(())
    }

    /// Rows of an existing table. A final line without its newline is a torn
    /// write and is dropped, as are unparsable rows. A missing file reads as
    /// empty.
    pub fn read_table<T: DeserializeOwned>(&self, path: &Path) -> Result<Vec<T>> {
        if !path.exists() {
            return Ok(vec![]);
        }
        let mut text = std::fs::read_to_string(path)?;
        text.truncate(text.rfind('\n').map_or(0, |i| i + 1));
        Ok(match self.format {
            OutputFormat::Csv => csv::Reader::from_reader(text.as_bytes()).deserialize().filter_map(|r| r.ok()).collect(),
            OutputFormat::Json => text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect(),
        })
    }
}

/// JSON sidecar describing how a table was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    pub observables: usize,
    pub virtual_nodes: usize,
    pub feature_columns: usize,
    pub design: BTreeMap<String, String>,
    pub files: Vec<String>,
    #[serde(default)]
    pub extra: serde_json::Value,
    pub created_unix: u64,
}

impl Metadata {
    pub fn new(command: &str, config: &ExperimentConfig, config_hash: &str, seeds: BTreeMap<String, u64>) -> Self {
        let sites = config.lattice.sites;
        let observables = sites * (sites + 1);
        let v = config.dynamics.virtual_nodes;
        let flag = |k: &str, v: String| (k.to_string(), v);
        let design = BTreeMap::from([
            flag("features", "raw, no standardization".into()),
            flag("bias", "regularized with the other weights".into()),
            flag("delay_summary", "largest index before the first capacity below threshold".into()),
            flag("dt_selection", format!("{:?}; ties by capacity sum, then smallest dt", config.task.objective)),
            flag("parity_sum", "j = 0..tau".into()),
            flag("narma_initial", "y = s = 0 before the first step".into()),
            flag("capacity_headline", "test segment".into()),
            flag("realizations", "configured count for disorder or finite shots, else 1".into()),
            flag("input_stream", "shared across hopping, dt, cutoff and noise".into()),
            flag("positivity_interval", config.dynamics.positivity_interval.to_string()),
            flag("injection_site", config.lattice.injection_site.to_string()),
            flag("d1_amplitude_basis", format!("{:?}", config.spectral.window.amplitude_basis)),
        ]);
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash.into(),
            config: config.clone(),
            seeds,
            observables,
            virtual_nodes: v,
            feature_columns: observables * v + 1,
            design,
            files: vec![],
            extra: serde_json::Value::Null,
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}
