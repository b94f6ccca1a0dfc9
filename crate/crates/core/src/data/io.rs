//! Dataset directory layout:
//!
//! - `manifest.json`: dimensions, record count and the ordered
//!   instance/speaker id table (with optional tags);
//! - `faces.f32le`, `voices.f32le`: row-major little-endian `f32`, one row
//!   per record in manifest order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, EmbeddingRecord};
use crate::digest_hex;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FACES_FILE: &str = "faces.f32le";
pub const VOICES_FILE: &str = "voices.f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub instance: String,
    pub speaker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub face_dim: usize,
    pub voice_dim: usize,
    pub n_records: usize,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn of(dataset: &Dataset) -> Self {
        Manifest {
            face_dim: dataset.face_dim(),
            voice_dim: dataset.voice_dim(),
            n_records: dataset.len(),
            records: dataset
                .records()
                .iter()
                .map(|r| ManifestRecord {
                    instance: r.instance_id.clone(),
                    speaker: r.speaker_id.clone(),
                    tag: r.tag.clone(),
                })
                .collect(),
        }
    }
}

fn encode_rows<'a>(rows: impl Iterator<Item = &'a [f32]>) -> Vec<u8> {
    rows.flat_map(|r| r.iter().flat_map(|x| x.to_le_bytes()))
        .collect()
}

fn encode(dataset: &Dataset) -> Result<[Vec<u8>; 3]> {
    let manifest = serde_json::to_vec_pretty(&Manifest::of(dataset))?;
    let faces = encode_rows(dataset.records().iter().map(|r| r.face.as_slice()));
    let voices = encode_rows(dataset.records().iter().map(|r| r.voice.as_slice()));
    Ok([manifest, faces, voices])
}

/// SHA-256 of the manifest JSON.
pub fn manifest_digest(dataset: &Dataset) -> Result<String> {
    Ok(digest_hex(&serde_json::to_vec_pretty(&Manifest::of(
        dataset,
    ))?))
}

/// SHA-256 over the on-disk encoding: manifest, faces, voices.
pub fn dataset_digest(dataset: &Dataset) -> Result<String> {
    let mut hasher = Sha256::new();
    for part in encode(dataset)? {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(&part);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let [manifest, faces, voices] = encode(dataset)?;
    for (name, bytes) in [
        (FACES_FILE, &faces),
        (VOICES_FILE, &voices),
        (MANIFEST_FILE, &manifest),
    ] {
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
        f.write_all(bytes)?;
        f.flush()?;
    }
    Ok(())
}

fn decode_rows(bytes: &[u8], dim: usize, manifest: &Manifest, file: &str) -> Result<Vec<Vec<f32>>> {
    let row_bytes = dim * 4;
    let expected = manifest.n_records * row_bytes;
    if bytes.len() != expected {
        let short_row = (bytes.len() / row_bytes.max(1)).min(manifest.n_records.saturating_sub(1));
        let id = manifest
            .records
            .get(short_row)
            .map(|r| r.instance.as_str())
            .unwrap_or("?");
        return Err(Error::Format(format!(
            "{file}: {} bytes, expected {expected} ({} records x {dim} floats); record {short_row} ({id}) does not match",
            bytes.len(),
            manifest.n_records
        )));
    }
    let mut rows = Vec::with_capacity(manifest.n_records);
    for (i, chunk) in bytes
        .chunks_exact(row_bytes.max(1))
        .enumerate()
        .take(manifest.n_records)
    {
        let row: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some(j) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::Format(format!(
                "{file}: record {i} ({}) has a non-finite value at position {j}",
                manifest.records[i].instance
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE))?)
        .map_err(|e| Error::Format(format!("{MANIFEST_FILE}: {e}")))?;
    if manifest.n_records != manifest.records.len() {
        return Err(Error::Format(format!(
            "{MANIFEST_FILE}: n_records is {} but the id table has {} entries",
            manifest.n_records,
            manifest.records.len()
        )));
    }
    if manifest.face_dim == 0 || manifest.voice_dim == 0 {
        return Err(Error::Format(format!(
            "{MANIFEST_FILE}: dimensions must be positive"
        )));
    }
    let faces = decode_rows(
        &std::fs::read(dir.join(FACES_FILE))?,
        manifest.face_dim,
        &manifest,
        FACES_FILE,
    )?;
    let voices = decode_rows(
        &std::fs::read(dir.join(VOICES_FILE))?,
        manifest.voice_dim,
        &manifest,
        VOICES_FILE,
    )?;
    let records = manifest
        .records
        .iter()
        .zip(faces.into_iter().zip(voices))
        .map(|(m, (face, voice))| EmbeddingRecord {
            instance_id: m.instance.clone(),
            speaker_id: m.speaker.clone(),
            face,
            voice,
            tag: m.tag.clone(),
        })
        .collect();
    Dataset::new(manifest.face_dim, manifest.voice_dim, records)
}
