//! Parameter serialization: an 8-byte little-endian header length, a JSON
//! header listing `{name, shape, offset}` per parameter, then raw
//! little-endian f32 data. Round trips are bit-exact.

use super::ParamStore;
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint at byte {offset}: {detail}")]
    Corrupt { offset: u64, detail: String },
}

#[derive(serde::Serialize, serde::Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset of this parameter inside the data section.
    offset: u64,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    params: Vec<HeaderEntry>,
}

pub fn save(store: &ParamStore<f32>, path: &Path) -> Result<(), CheckpointError> {
    let mut entries = Vec::with_capacity(store.len());
    let mut offset = 0u64;
    for (name, p) in store.iter() {
        entries.push(HeaderEntry {
            name: name.clone(),
            shape: p.shape.clone(),
            offset,
        });
        offset += (p.data.len() * 4) as u64;
    }
    let header = serde_json::to_vec(&Header { params: entries }).expect("header serialization");

    let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, p) in store.iter() {
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore<f32>, CheckpointError> {
    let bytes = std::fs::read(path)?;
    let corrupt = |offset: u64, detail: String| CheckpointError::Corrupt { offset, detail };

    if bytes.len() < 8 {
        return Err(corrupt(0, format!("file is {} bytes, need 8 for the header length", bytes.len())));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let data_start = 8 + header_len;
    if data_start > bytes.len() {
        return Err(corrupt(
            0,
            format!("header length {header_len} exceeds file size {}", bytes.len()),
        ));
    }
    let header: Header = serde_json::from_slice(&bytes[8..data_start])
        .map_err(|e| corrupt(8, format!("header is not valid JSON: {e}")))?;
    let data = &bytes[data_start..];

    let mut store = ParamStore::new();
    for entry in header.params {
        let numel: usize = entry.shape.iter().product();
        if entry.shape.iter().any(|&d| d == 0) || numel == 0 {
            return Err(corrupt(
                8,
                format!("parameter {} has empty shape {:?}", entry.name, entry.shape),
            ));
        }
        let start = entry.offset as usize;
        let end = start + numel * 4;
        if end > data.len() {
            return Err(corrupt(
                (data_start + start) as u64,
                format!(
                    "parameter {} needs bytes {start}..{end} but the data section has {}",
                    entry.name,
                    data.len()
                ),
            ));
        }
        if store.contains(&entry.name) {
            return Err(corrupt(8, format!("duplicate parameter {}", entry.name)));
        }
        let values: Vec<f32> = data[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        store.insert(&entry.name, entry.shape, values);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn sample_store() -> ParamStore<f32> {
        let mut rng = StdRng::seed_from_u64(21);
        let mut store = ParamStore::new();
        store.insert(
            "layer.w",
            vec![3, 4],
            (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        );
        store.insert("layer.b", vec![4], vec![1.0e-30, -0.0, 3.5, f32::MIN_POSITIVE]);
        store.insert("head.w", vec![2, 2, 1, 2], (0..8).map(|_| rng.gen()).collect());
        store
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        let store = sample_store();
        save(&store, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.names(), store.names());
        for (name, p) in store.iter() {
            let l = loaded.get(name).unwrap();
            assert_eq!(l.shape, p.shape);
            let bits: Vec<u32> = p.data.iter().map(|v| v.to_bits()).collect();
            let lbits: Vec<u32> = l.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, lbits);
        }
    }

    #[test]
    fn truncated_data_reports_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        save(&sample_store(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 6]).unwrap();
        match load(&path) {
            Err(CheckpointError::Corrupt { offset, detail }) => {
                assert!(offset > 8);
                assert!(detail.contains("data section"));
            }
            other => panic!("expected corrupt error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        let mut bytes = 12u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"not-json-at-all");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load(&path),
            Err(CheckpointError::Corrupt { offset: 8, .. })
        ));
    }

    #[test]
    fn header_length_beyond_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        std::fs::write(&path, 1_000_000u64.to_le_bytes()).unwrap();
        assert!(matches!(
            load(&path),
            Err(CheckpointError::Corrupt { offset: 0, .. })
        ));
    }
}
