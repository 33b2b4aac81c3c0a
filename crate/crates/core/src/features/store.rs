//! File-backed feature store for externally precomputed crop features.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SITF" | u32 version | u32 dim | u64 count
//! count x { u32 id_len | id bytes (UTF-8) | 4 x i32 quantized params | u64 byte offset }
//! count x dim x f32 blob
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{FeatureError, FeatureProvider};
use crate::geometry::{to_params, BoxParams, ImageDims, PixelBox};

pub const STORE_MAGIC: &[u8; 4] = b"SITF";
pub const STORE_VERSION: u32 = 1;
const CENTER_STEPS: f64 = 64.0;
const LOG_STEPS: f64 = 16.0;

/// Quantized `(cx, cy, ln area_ratio, ln aspect_ratio)`.
pub type QuantKey = [i32; 4];

fn continuous_key(p: &BoxParams) -> [f64; 4] {
    [
        p.cx * CENTER_STEPS,
        p.cy * CENTER_STEPS,
        p.area_ratio.ln() * LOG_STEPS,
        p.aspect_ratio.ln() * LOG_STEPS,
    ]
}

pub fn quantize(p: &BoxParams) -> QuantKey {
    continuous_key(p).map(|v| v.round() as i32)
}

/// Parameters at the center of a quantization cell.
pub fn dequantize(k: &QuantKey) -> BoxParams {
    BoxParams {
        cx: f64::from(k[0]) / CENTER_STEPS,
        cy: f64::from(k[1]) / CENTER_STEPS,
        area_ratio: (f64::from(k[2]) / LOG_STEPS).exp(),
        aspect_ratio: (f64::from(k[3]) / LOG_STEPS).exp(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct IndexEntry {
    image_id: String,
    key: QuantKey,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    entries: Vec<IndexEntry>,
    blob: Vec<f32>,
    /// Image dimensions needed to parameterize query boxes.
    dims: HashMap<String, ImageDims>,
    lookup: HashMap<String, HashMap<QuantKey, usize>>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            blob: Vec::new(),
            dims: HashMap::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Registers an image's frame size; lookups need it to normalize boxes.
    pub fn set_image_dims(&mut self, image_id: &str, dims: ImageDims) {
        self.dims.insert(image_id.to_string(), dims);
    }

    /// Inserts a feature under a quantized key. An existing key is overwritten in place.
    pub fn insert_key(&mut self, image_id: &str, key: QuantKey, feature: &[f64]) -> Result<(), FeatureError> {
        if feature.len() != self.dim {
            return Err(FeatureError::DimMismatch {
                expected: self.dim,
                found: feature.len(),
            });
        }
        let values = feature.iter().map(|v| *v as f32);
        if let Some(&slot) = self.lookup.get(image_id).and_then(|m| m.get(&key)) {
            let start = slot * self.dim;
            for (dst, v) in self.blob[start..start + self.dim].iter_mut().zip(values) {
                *dst = v;
            }
            return Ok(());
        }
        let slot = self.entries.len();
        self.entries.push(IndexEntry {
            image_id: image_id.to_string(),
            key,
            offset: (slot * self.dim * 4) as u64,
        });
        self.blob.extend(values);
        self.lookup.entry(image_id.to_string()).or_default().insert(key, slot);
        Ok(())
    }

    pub fn insert_box(&mut self, image_id: &str, dims: ImageDims, b: &PixelBox, feature: &[f64]) -> Result<(), FeatureError> {
        self.set_image_dims(image_id, dims);
        let key = quantize(&to_params(b, dims)?);
        self.insert_key(image_id, key, feature)
    }

    fn slot_vector(&self, slot: usize) -> Vec<f64> {
        let start = slot * self.dim;
        self.blob[start..start + self.dim].iter().map(|v| f64::from(*v)).collect()
    }

    /// Feature at the nearest stored key within one quantization step per axis.
    pub fn lookup_params(&self, image_id: &str, p: &BoxParams) -> Result<Vec<f64>, FeatureError> {
        let keys = self
            .lookup
            .get(image_id)
            .ok_or_else(|| FeatureError::UnknownImage(image_id.to_string()))?;
        let exact = quantize(p);
        if let Some(&slot) = keys.get(&exact) {
            return Ok(self.slot_vector(slot));
        }
        let cont = continuous_key(p);
        let mut best: Option<(f64, usize)> = None;
        for d0 in -1..=1 {
            for d1 in -1..=1 {
                for d2 in -1..=1 {
                    for d3 in -1..=1 {
                        let k = [exact[0] + d0, exact[1] + d1, exact[2] + d2, exact[3] + d3];
                        if let Some(&slot) = keys.get(&k) {
                            let dist: f64 = k.iter().zip(cont).map(|(a, b)| (f64::from(*a) - b).powi(2)).sum();
                            // ties broken by insertion order for determinism
                            if best.is_none_or(|(bd, bs)| dist < bd || (dist == bd && slot < bs)) {
                                best = Some((dist, slot));
                            }
                        }
                    }
                }
            }
        }
        best.map(|(_, slot)| self.slot_vector(slot))
            .ok_or_else(|| FeatureError::NoNearbyKey(image_id.to_string()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), FeatureError> {
        w.write_all(STORE_MAGIC)?;
        w.write_all(&STORE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            let id = e.image_id.as_bytes();
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id)?;
            for q in e.key {
                w.write_all(&q.to_le_bytes())?;
            }
            w.write_all(&e.offset.to_le_bytes())?;
        }
        for v in &self.blob {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, FeatureError> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != STORE_MAGIC {
            return Err(FeatureError::Format(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != STORE_VERSION {
            return Err(FeatureError::Format(format!("unsupported version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)?;
        let mut store = FeatureStore::new(dim);
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut id = vec![0u8; len];
            read_exact(&mut r, &mut id)?;
            let image_id = String::from_utf8(id).map_err(|_| FeatureError::Format("image id is not UTF-8".into()))?;
            let mut key = [0i32; 4];
            for q in &mut key {
                *q = read_u32(&mut r)? as i32;
            }
            let offset = read_u64(&mut r)?;
            entries.push(IndexEntry { image_id, key, offset });
        }
        let blob_len = (count as usize)
            .checked_mul(dim)
            .ok_or_else(|| FeatureError::Format("blob size overflows".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != blob_len * 4 {
            return Err(FeatureError::Truncated {
                expected: blob_len * 4,
                found: bytes.len(),
            });
        }
        store.blob = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        for (slot, e) in entries.iter().enumerate() {
            let floats = e.offset / 4;
            if e.offset % 4 != 0 || floats as usize + dim > blob_len || (dim > 0 && floats as usize % dim != 0) {
                return Err(FeatureError::Format(format!("index entry {slot} points outside the blob")));
            }
            store
                .lookup
                .entry(e.image_id.clone())
                .or_default()
                .insert(e.key, floats as usize / dim.max(1));
        }
        store.entries = entries;
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), FeatureError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => FeatureError::Format("unexpected end of header".into()),
        _ => FeatureError::Io(e.to_string()),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, FeatureError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, FeatureError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

impl FeatureProvider for FeatureStore {
    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn features(&self, image_id: &str, b: &PixelBox) -> Result<Vec<f64>, FeatureError> {
        let dims = self
            .dims
            .get(image_id)
            .ok_or_else(|| FeatureError::UnknownImage(image_id.to_string()))?;
        self.lookup_params(image_id, &to_params(b, *dims)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bytes(store: &FeatureStore) -> Vec<u8> {
        let mut out = Vec::new();
        store.write_to(&mut out).unwrap();
        out
    }

    #[test]
    fn empty_round_trip() {
        let s = FeatureStore::new(8);
        let back = FeatureStore::read_from(bytes(&s).as_slice()).unwrap();
        assert_eq!(back.dim(), 8);
        assert!(back.is_empty());
    }

    #[test]
    fn random_entries_round_trip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = FeatureStore::new(12);
        for i in 0..1000 {
            let key = [
                rng.random_range(0..64),
                rng.random_range(0..64),
                rng.random_range(-80..0),
                rng.random_range(-30..30),
            ];
            let f: Vec<f64> = (0..12).map(|_| rng.random::<f32>() as f64).collect();
            s.insert_key(&format!("img{}", i % 37), key, &f).unwrap();
        }
        let raw = bytes(&s);
        let back = FeatureStore::read_from(raw.as_slice()).unwrap();
        assert_eq!(back.entries, s.entries);
        assert_eq!(
            back.blob.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            s.blob.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(bytes(&back), raw);
    }

    #[test]
    fn exact_and_near_lookups() {
        let dims = ImageDims::new(256, 128).unwrap();
        let mut s = FeatureStore::new(3);
        s.set_image_dims("a", dims);
        let key = [20, 30, -40, 5];
        let f = [0.25, -1.5, 3.0];
        s.insert_key("a", key, &f).unwrap();

        let center = dequantize(&key);
        assert_eq!(s.lookup_params("a", &center).unwrap(), f.to_vec());
        let nudged = BoxParams {
            cx: center.cx + 0.4 / CENTER_STEPS,
            cy: center.cy - 0.4 / CENTER_STEPS,
            area_ratio: center.area_ratio * (0.4 / LOG_STEPS).exp(),
            aspect_ratio: center.aspect_ratio,
        };
        assert_eq!(s.lookup_params("a", &nudged).unwrap(), f.to_vec());
        // one step away still resolves to the nearest neighbour
        let step = BoxParams {
            cx: center.cx + 1.0 / CENTER_STEPS,
            ..center
        };
        assert_eq!(s.lookup_params("a", &step).unwrap(), f.to_vec());
        let far = BoxParams {
            cx: center.cx + 5.0 / CENTER_STEPS,
            ..center
        };
        assert!(matches!(s.lookup_params("a", &far), Err(FeatureError::NoNearbyKey(_))));
        assert!(matches!(s.lookup_params("zz", &center), Err(FeatureError::UnknownImage(_))));
    }

    #[test]
    fn format_errors() {
        let mut s = FeatureStore::new(2);
        s.insert_key("a", [0, 0, 0, 0], &[1.0, 2.0]).unwrap();
        let mut raw = bytes(&s);
        let mut bad = raw.clone();
        bad[0] = b'X';
        assert!(matches!(FeatureStore::read_from(bad.as_slice()), Err(FeatureError::Format(_))));
        raw.truncate(raw.len() - 3);
        assert!(matches!(FeatureStore::read_from(raw.as_slice()), Err(FeatureError::Truncated { .. })));
        assert!(matches!(
            s.insert_key("a", [1, 0, 0, 0], &[1.0]),
            Err(FeatureError::DimMismatch { .. })
        ));
    }
}
