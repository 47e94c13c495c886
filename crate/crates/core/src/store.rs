//! Binary persistence for descriptors, vocabularies and feature vectors.
//! All integers and floats are little-endian. Files are written to a
//! temporary sibling and renamed into place.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::bow::{l2_normalize, Approach};
use crate::error::{Error, Result};
use crate::global_features::{FeatureBlock, FeatureKind};
use crate::keypoints::{Descriptor, Keypoint, LocalFeatures, DESCRIPTOR_LEN};
use crate::vocabulary::{Vocabulary, VocabularyKind};

pub const VOCAB_MAGIC: &[u8; 4] = b"VOCB";
pub const VOCAB_VERSION: u16 = 1;
pub const FEATURE_MAGIC: &[u8; 4] = b"FSTR";
pub const FEATURE_VERSION: u16 = 1;
pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"DESC";
pub const DESCRIPTOR_VERSION: u16 = 1;

/// Store tag used for concept-occurrence vectors, after the approach tags.
pub const COV_TAG: u8 = 15;

/// Writes `bytes` to `path` through a temporary file. Returns `false`
/// without touching the file when it already holds exactly these bytes.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<bool> {
    if let Ok(existing) = fs::read(path) {
        if existing == bytes {
            return Ok(false);
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(true)
}

struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) -> Result<()> {
        let len = u16::try_from(s.len()).map_err(|_| Error::Format(format!("string too long: {s}")))?;
        self.u16(len);
        self.bytes(s.as_bytes());
        Ok(())
    }
    fn len_u32(&mut self, n: usize) -> Result<()> {
        self.u32(u32::try_from(n).map_err(|_| Error::Format(format!("count {n} overflows u32")))?);
        Ok(())
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
    fn magic(&mut self, magic: &[u8; 4], version: u16) -> Result<()> {
        if &self.array::<4>()? != magic {
            return Err(Error::Format(format!(
                "bad magic, expected {}",
                String::from_utf8_lossy(magic)
            )));
        }
        let v = self.u16()?;
        if v != version {
            return Err(Error::Format(format!("unsupported version {v}")));
        }
        Ok(())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.data.len() - self.pos)));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// `(kind tag u8, dim u32, dim × f64)`.
pub fn encode_block(block: &FeatureBlock) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::with_capacity(5 + 8 * block.values.len()));
    w.u8(block.kind.tag());
    w.len_u32(block.values.len())?;
    block.values.iter().for_each(|&v| w.f64(v));
    Ok(w.0)
}

/// Decodes one block record, returning it and the bytes consumed.
pub fn decode_block(bytes: &[u8]) -> Result<(FeatureBlock, usize)> {
    let mut r = Reader::new(bytes);
    let tag = r.u8()?;
    let kind = FeatureKind::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown block tag {tag}")))?;
    let dim = r.u32()? as usize;
    let values = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    Ok((FeatureBlock { kind, values }, r.pos))
}

/// One image's keypoints and descriptors.
pub fn encode_descriptors(image_id: &str, features: &LocalFeatures) -> Result<Vec<u8>> {
    if features.keypoints.len() != features.descriptors.len() {
        return Err(Error::Format("keypoint/descriptor count mismatch".into()));
    }
    let n = features.keypoints.len();
    let mut w = Writer(Vec::with_capacity(16 + image_id.len() + n * (16 + 4 * DESCRIPTOR_LEN)));
    w.bytes(DESCRIPTOR_MAGIC);
    w.u16(DESCRIPTOR_VERSION);
    w.str(image_id)?;
    w.len_u32(n)?;
    for k in &features.keypoints {
        [k.x, k.y, k.scale, k.orientation].into_iter().for_each(|v| w.f32(v));
    }
    for d in &features.descriptors {
        d.0.iter().for_each(|&v| w.f32(v));
    }
    Ok(w.0)
}

pub fn decode_descriptors(bytes: &[u8]) -> Result<(String, LocalFeatures)> {
    let mut r = Reader::new(bytes);
    r.magic(DESCRIPTOR_MAGIC, DESCRIPTOR_VERSION)?;
    let id = r.str()?;
    let n = r.u32()? as usize;
    let mut keypoints = Vec::with_capacity(n);
    for _ in 0..n {
        keypoints.push(Keypoint {
            x: r.f32()?,
            y: r.f32()?,
            scale: r.f32()?,
            orientation: r.f32()?,
        });
    }
    let mut descriptors = Vec::with_capacity(n);
    for _ in 0..n {
        let mut d = [0f32; DESCRIPTOR_LEN];
        for v in d.iter_mut() {
            *v = r.f32()?;
        }
        descriptors.push(Descriptor(d));
    }
    r.finish()?;
    Ok((id, LocalFeatures { keypoints, descriptors }))
}

pub fn save_descriptors(path: &Path, image_id: &str, features: &LocalFeatures) -> Result<bool> {
    write_atomic(path, &encode_descriptors(image_id, features)?)
}

pub fn load_descriptors(path: &Path) -> Result<(String, LocalFeatures)> {
    decode_descriptors(&read_file(path)?)
}

/// Header `(magic, version u16, kind u8, K u32, M u32, dim u32, names)` then
/// centroids as f64, row-major.
pub fn encode_vocabulary(v: &Vocabulary) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::with_capacity(32 + 8 * v.centroids().len()));
    w.bytes(VOCAB_MAGIC);
    w.u16(VOCAB_VERSION);
    w.u8(v.kind().tag());
    w.len_u32(v.words_per_category())?;
    w.len_u32(v.categories().len())?;
    w.len_u32(v.dim())?;
    for name in v.categories() {
        w.str(name)?;
    }
    v.centroids().iter().for_each(|&c| w.f64(c));
    Ok(w.0)
}

pub fn decode_vocabulary(bytes: &[u8]) -> Result<Vocabulary> {
    let mut r = Reader::new(bytes);
    r.magic(VOCAB_MAGIC, VOCAB_VERSION)?;
    let tag = r.u8()?;
    let kind = VocabularyKind::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown vocabulary kind {tag}")))?;
    let k = r.u32()? as usize;
    let m = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let names = (0..m).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let count = m.max(1).checked_mul(k).and_then(|n| n.checked_mul(dim));
    let count = count.ok_or_else(|| Error::Format("vocabulary size overflows".into()))?;
    if count.saturating_mul(8) > bytes.len() {
        return Err(Error::Format("truncated vocabulary".into()));
    }
    let centroids = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Vocabulary::new(kind, k, names, dim, centroids)
}

pub fn save_vocabulary(path: &Path, v: &Vocabulary) -> Result<bool> {
    write_atomic(path, &encode_vocabulary(v)?)
}

pub fn load_vocabulary(path: &Path) -> Result<Vocabulary> {
    decode_vocabulary(&read_file(path)?)
}

fn widen(raw: &[f32], tag: u8) -> Vec<f64> {
    let mut v: Vec<f64> = raw.iter().map(|&x| f64::from(x)).collect();
    if tag != COV_TAG {
        l2_normalize(&mut v);
    }
    v
}

/// `values` as a store with `tag` would return them after a save and load,
/// so freshly computed query vectors compare bit-exactly with stored ones.
pub fn at_storage_precision(values: &[f64], tag: u8) -> Vec<f64> {
    let raw: Vec<f32> = values.iter().map(|&v| v as f32).collect();
    widen(&raw, tag)
}

/// Vectors of one representation (an approach or COVs) keyed by image id,
/// held at storage precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub tag: u8,
    pub dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
}

impl FeatureStore {
    pub fn new(tag: u8, dim: usize) -> Self {
        FeatureStore {
            tag,
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn approach(&self) -> Option<Approach> {
        Approach::from_tag(self.tag)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.vectors.contains_key(image_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    /// The stored vector widened to f64. Approach vectors are renormalised
    /// to unit length in double precision; COVs are returned as stored.
    pub fn get(&self, image_id: &str) -> Option<Vec<f64>> {
        self.vectors.get(image_id).map(|raw| widen(raw, self.tag))
    }

    /// All vectors as returned by [`FeatureStore::get`].
    pub fn to_map(&self) -> HashMap<String, Vec<f64>> {
        self.ids()
            .map(|id| (id.to_string(), self.get(id).expect("id from keys")))
            .collect()
    }

    pub fn insert(&mut self, image_id: String, values: &[f64]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: values.len(),
            });
        }
        self.vectors
            .insert(image_id, values.iter().map(|&v| v as f32).collect());
        Ok(())
    }

    /// Header `(magic, version, tag, dim, count)`, an index of
    /// `(image_id, offset)` pairs, then `(image_id, tag, dim, f32 values)`
    /// records in image_id order.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let header_len = 4 + 2 + 1 + 4 + 4 + self.vectors.keys().map(|id| 2 + id.len() + 8).sum::<usize>();
        let mut offsets = Vec::with_capacity(self.vectors.len());
        let mut offset = header_len;
        for id in self.vectors.keys() {
            offsets.push(offset as u64);
            offset += 2 + id.len() + 1 + 4 + 4 * self.dim;
        }
        let mut w = Writer(Vec::with_capacity(offset));
        w.bytes(FEATURE_MAGIC);
        w.u16(FEATURE_VERSION);
        w.u8(self.tag);
        w.len_u32(self.dim)?;
        w.len_u32(self.vectors.len())?;
        for (id, off) in self.vectors.keys().zip(&offsets) {
            w.str(id)?;
            w.u64(*off);
        }
        for (id, values) in &self.vectors {
            w.str(id)?;
            w.u8(self.tag);
            w.len_u32(values.len())?;
            values.iter().for_each(|&v| w.f32(v));
        }
        debug_assert_eq!(w.0.len(), offset);
        Ok(w.0)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(FEATURE_MAGIC, FEATURE_VERSION)?;
        let tag = r.u8()?;
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut index = Vec::with_capacity(count.min(bytes.len()));
        for _ in 0..count {
            index.push((r.str()?, r.u64()?));
        }
        let mut store = FeatureStore::new(tag, dim);
        for (id, offset) in index {
            if r.pos as u64 != offset {
                return Err(Error::Format(format!("record for {id} not at indexed offset {offset}")));
            }
            let rid = r.str()?;
            let rtag = r.u8()?;
            let rdim = r.u32()? as usize;
            if rid != id || rtag != tag || rdim != dim {
                return Err(Error::Format(format!("record header mismatch for {id}")));
            }
            let values = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            store.vectors.insert(id, values);
        }
        r.finish()?;
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<bool> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }
}
