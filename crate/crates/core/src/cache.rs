//! Append-only, content-addressed store of cost breakdowns.
//!
//! Each record is one JSON line `{"key": <sha256 hex>, "breakdown": {...}}`.
//! The key hashes the canonical JSON of the operator, accelerator config,
//! tiling and cost constants. Lines that fail to parse are skipped with a
//! warning and their entries are recomputed on demand.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accel::AcceleratorConfig;
use crate::costmodel::{CostBreakdown, CostConstants, TilingPlan};
use crate::error::Result;
use crate::workload::OperatorDescriptor;

#[derive(Serialize)]
struct KeyMaterial<'a> {
    op: &'a OperatorDescriptor,
    cfg: &'a AcceleratorConfig,
    tiling: &'a TilingPlan,
    constants: &'a CostConstants,
}

#[derive(Serialize, Deserialize)]
struct Record {
    key: String,
    breakdown: CostBreakdown,
}

pub fn cache_key(op: &OperatorDescriptor, cfg: &AcceleratorConfig, tiling: &TilingPlan, constants: &CostConstants) -> String {
    let material = serde_json::to_vec(&KeyMaterial {
        op,
        cfg,
        tiling,
        constants,
    })
    .expect("key material serializes");
    hex::encode(Sha256::digest(&material))
}

#[derive(Debug)]
pub struct ResultCache {
    path: PathBuf,
    entries: HashMap<String, CostBreakdown>,
    /// The file ends without a newline (e.g. a truncated write).
    needs_newline: bool,
    pub hits: usize,
    pub misses: usize,
    pub warnings: Vec<String>,
}

impl ResultCache {
    /// Load `path`, creating nothing until the first insert.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        let mut warnings = Vec::new();
        let mut needs_newline = false;
        if path.exists() {
            let mut f = File::open(&path)?;
            let len = f.metadata()?.len();
            if len > 0 {
                f.seek(SeekFrom::End(-1))?;
                let mut last = [0u8; 1];
                f.read_exact(&mut last)?;
                needs_newline = last[0] != b'\n';
                f.seek(SeekFrom::Start(0))?;
            }
            for (n, line) in BufReader::new(f).split(b'\n').enumerate() {
                let line = line?;
                if line.iter().all(u8::is_ascii_whitespace) {
                    continue;
                }
                match serde_json::from_slice::<Record>(&line) {
                    Ok(r) => {
                        entries.insert(r.key, r.breakdown);
                    }
                    Err(e) => warnings.push(format!("{}: ignoring corrupt record on line {}: {e}", path.display(), n + 1)),
                }
            }
        }
        Ok(ResultCache {
            path,
            entries,
            needs_newline,
            hits: 0,
            misses: 0,
            warnings,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&mut self, key: &str) -> Option<CostBreakdown> {
        let hit = self.entries.get(key).copied();
        match hit {
            Some(_) => self.hits += 1,
            None => self.misses += 1,
        }
        hit
    }

    pub fn insert(&mut self, key: String, breakdown: CostBreakdown) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let mut line = serde_json::to_string(&Record {
            key: key.clone(),
            breakdown,
        })
        .expect("record serializes");
        line.push('\n');
        if self.needs_newline {
            line.insert(0, '\n');
            self.needs_newline = false;
        }
        f.write_all(line.as_bytes())?;
        self.entries.insert(key, breakdown);
        Ok(())
    }

    /// Stored breakdown for `key`, or compute, append and return it.
    pub fn get_or_compute(&mut self, key: String, compute: impl FnOnce() -> Result<CostBreakdown>) -> Result<CostBreakdown> {
        if let Some(b) = self.get(&key) {
            return Ok(b);
        }
        let b = compute()?;
        self.insert(key, b)?;
        Ok(b)
    }
}
