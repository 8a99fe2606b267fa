//! Immutable parameter snapshots and the checkpoint file.
//!
//! ```text
//! magic "RPCK" | format version u32 | config hash u64 | snapshot version u64
//! | param count u64 | params f64[count]
//! ```
//! All little-endian; the header is 32 bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::ModelError;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RPCK";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_HEADER_BYTES: usize = 32;

/// Versioned, shareable copy of a model's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSnapshot {
    version: u64,
    config_hash: u64,
    params: Arc<[f64]>,
}

impl ModelSnapshot {
    pub fn new(version: u64, config_hash: u64, params: Vec<f64>) -> Self {
        Self {
            version,
            config_hash,
            params: params.into(),
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn config_hash(&self) -> u64 {
        self.config_hash
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn byte_size(&self) -> usize {
        CHECKPOINT_HEADER_BYTES + 8 * self.params.len()
    }
}

pub fn write_checkpoint(w: &mut impl Write, snap: &ModelSnapshot) -> Result<(), ModelError> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&snap.config_hash.to_le_bytes())?;
    w.write_all(&snap.version.to_le_bytes())?;
    w.write_all(&(snap.params.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * snap.params.len());
    for p in snap.params.iter() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<ModelSnapshot, ModelError> {
    let mut header = [0u8; CHECKPOINT_HEADER_BYTES];
    r.read_exact(&mut header)?;
    if header[..4] != CHECKPOINT_MAGIC {
        return Err(ModelError::Format(format!("bad magic {:?}", &header[..4])));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Format(format!(
            "unsupported format version {version}"
        )));
    }
    let word = |i: usize| u64::from_le_bytes(header[i..i + 8].try_into().expect("8 bytes"));
    let (config_hash, snap_version, count) = (word(8), word(16), word(24));
    let count = usize::try_from(count)
        .ok()
        .filter(|c| *c <= (1 << 32))
        .ok_or_else(|| ModelError::Format(format!("implausible parameter count {count}")))?;
    let mut bytes = vec![0u8; 8 * count];
    r.read_exact(&mut bytes)?;
    let params = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(ModelError::Format("trailing bytes after parameters".into()));
    }
    Ok(ModelSnapshot::new(snap_version, config_hash, params))
}

pub fn write_checkpoint_file(path: &Path, snap: &ModelSnapshot) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, snap)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint_file(path: &Path) -> Result<ModelSnapshot, ModelError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
