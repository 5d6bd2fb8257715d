//! Checkpoint container: one file holding a JSON manifest (configs, step
//! count, RNG state, array table) followed by little-endian float32 flat
//! arrays keyed by parameter path.
//!
//! Layout:
//! ```text
//! b"GSCK" | u32 version | u64 manifest_len | manifest JSON | arrays...
//! ```
//! Arrays appear in manifest-table order, row-major. Values are stored in
//! f32; loading widens back to f64, so trainers round their live state to
//! f32 when saving to keep resumed runs bit-identical to continued ones.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GSCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    key: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    /// Free-form configuration blob (model + training configs).
    configs: serde_json::Value,
    step: u64,
    rng_seed_hex: String,
    rng_word_pos: String,
    arrays: Vec<ArrayEntry>,
}

/// In-memory checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub configs: serde_json::Value,
    pub step: u64,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    pub arrays: BTreeMap<String, Array2<f64>>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<ArrayEntry> = self
            .arrays
            .iter()
            .map(|(k, v)| ArrayEntry { key: k.clone(), rows: v.nrows(), cols: v.ncols() })
            .collect();
        let manifest = Manifest {
            version: VERSION,
            configs: self.configs.clone(),
            step: self.step,
            rng_seed_hex: self.rng_seed.iter().map(|b| format!("{b:02x}")).collect(),
            rng_word_pos: self.rng_word_pos.to_string(),
            arrays: entries,
        };
        let manifest_bytes = serde_json::to_vec(&manifest)?;
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(MAGIC)?;
        f.write_all(&VERSION.to_le_bytes())?;
        f.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&manifest_bytes)?;
        for value in self.arrays.values() {
            let mut buf = Vec::with_capacity(value.len() * 4);
            for &x in value.iter() {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
            f.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut f = std::fs::File::open(path).map_err(|e| {
            Error::MissingCheckpoint(format!("{}: {e}", path.display()))
        })?;
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
        }
        let mut word = [0u8; 4];
        f.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut len8 = [0u8; 8];
        f.read_exact(&mut len8)?;
        let mlen = u64::from_le_bytes(len8) as usize;
        let mut mbytes = vec![0u8; mlen];
        f.read_exact(&mut mbytes)?;
        let manifest: Manifest = serde_json::from_slice(&mbytes)?;
        let mut arrays = BTreeMap::new();
        for entry in &manifest.arrays {
            let n = entry.rows * entry.cols;
            let mut buf = vec![0u8; n * 4];
            f.read_exact(&mut buf)?;
            let mut arr = Array2::zeros((entry.rows, entry.cols));
            for (i, chunk) in buf.chunks_exact(4).enumerate() {
                arr[[i / entry.cols, i % entry.cols]] =
                    f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
            }
            arrays.insert(entry.key.clone(), arr);
        }
        let seed_bytes: Vec<u8> = (0..manifest.rng_seed_hex.len() / 2)
            .map(|i| u8::from_str_radix(&manifest.rng_seed_hex[2 * i..2 * i + 2], 16))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Checkpoint(format!("bad rng seed hex: {e}")))?;
        let mut rng_seed = [0u8; 32];
        if seed_bytes.len() != 32 {
            return Err(Error::Checkpoint("rng seed must be 32 bytes".into()));
        }
        rng_seed.copy_from_slice(&seed_bytes);
        let rng_word_pos: u128 = manifest
            .rng_word_pos
            .parse()
            .map_err(|e| Error::Checkpoint(format!("bad rng word pos: {e}")))?;
        Ok(Checkpoint {
            configs: manifest.configs,
            step: manifest.step,
            rng_seed,
            rng_word_pos,
            arrays,
        })
    }
}
