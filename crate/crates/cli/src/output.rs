use std::fs;
use std::io::Write;
use std::path::PathBuf;

use gwlab::{fmt_f64, BranchingModel, GwError, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

/// A CSV table whose numeric cells are already formatted.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table { header: header.iter().map(|h| h.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",") + "\n";
        for r in &self.rows {
            out += &r.join(",");
            out.push('\n');
        }
        out
    }
}

pub fn num(x: f64) -> String {
    fmt_f64(x)
}

pub fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), fmt_f64)
}

pub fn ints(x: &[u32]) -> Vec<String> {
    x.iter().map(|c| c.to_string()).collect()
}

pub fn coord_names(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

/// Canonical hash of a model: SHA-256 of its normalised JSON form.
pub fn model_hash(model: &BranchingModel) -> String {
    let digest = Sha256::digest(model.to_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Manifest {
    fields: Map<String, Value>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut fields = Map::new();
        fields.insert("command_line".into(), json!(std::env::args().collect::<Vec<_>>()));
        fields.insert("command".into(), json!(command));
        fields.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        fields.insert("tolerances".into(), json!({}));
        fields.insert("seeds".into(), json!([]));
        Manifest { fields }
    }

    pub fn model(&mut self, model: &BranchingModel) -> &mut Self {
        self.fields.insert("model_hash".into(), json!(model_hash(model)));
        self
    }

    pub fn tolerance(&mut self, name: &str, value: f64) -> &mut Self {
        self.fields.get_mut("tolerances").unwrap().as_object_mut().unwrap().insert(name.into(), json!(value));
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.fields.get_mut("seeds").unwrap().as_array_mut().unwrap().push(json!(seed));
        self
    }

    pub fn summary<T: Serialize>(&mut self, key: &str, value: &T) -> &mut Self {
        self.fields.insert(key.into(), serde_json::to_value(value).expect("summary serializes"));
        self
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Value::Object(self.fields.clone())).expect("manifest serializes")
    }
}

/// Where results go: a directory (`<name>.csv` + `<name>.manifest.json`) or
/// stdout, with the manifest on stderr.
pub struct Sink {
    pub dir: Option<PathBuf>,
}

impl Sink {
    fn io(e: std::io::Error) -> GwError {
        GwError::Inconsistent(format!("cannot write output: {e}"))
    }

    pub fn emit(&self, name: &str, ext: &str, body: &str, manifest: &Manifest) -> Result<()> {
        match &self.dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(Self::io)?;
                fs::write(dir.join(format!("{name}.{ext}")), body).map_err(Self::io)?;
                fs::write(dir.join(format!("{name}.manifest.json")), manifest.to_json()).map_err(Self::io)?;
            }
            None => {
                std::io::stdout().write_all(body.as_bytes()).map_err(Self::io)?;
                let compact = serde_json::to_string(&Value::Object(manifest.fields.clone())).unwrap();
                eprintln!("manifest {compact}");
            }
        }
        Ok(())
    }

    pub fn csv(&self, name: &str, table: &Table, manifest: &Manifest) -> Result<()> {
        self.emit(name, "csv", &table.to_csv(), manifest)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T, manifest: &Manifest) -> Result<()> {
        let body = serde_json::to_string_pretty(value).expect("output serializes") + "\n";
        self.emit(name, "json", &body, manifest)
    }
}
