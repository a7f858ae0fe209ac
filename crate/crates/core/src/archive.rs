//! Binary tensor archive.
//!
//! Layout: an 8-byte little-endian `u64` manifest length `N`, then `N` bytes
//! of UTF-8 JSON mapping each tensor name to
//! `{"dtype":"F32","shape":[..],"data_offsets":[begin,end]}` (plus an
//! optional `"__metadata__"` string map), then the concatenated
//! little-endian `f32` payloads. Offsets are relative to the end of the
//! manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const METADATA_KEY: &str = "__metadata__";
const DTYPE_F32: &str = "F32";

/// Ordered collection of named `f32` tensors plus a string metadata map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    tensors: Vec<Tensor<f32>>,
    pub metadata: BTreeMap<String, String>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds an archive, rejecting duplicate names.
    pub fn from_tensors(tensors: Vec<Tensor<f32>>) -> Result<Self> {
        let mut a = Self::new();
        for t in tensors {
            a.push(t)?;
        }
        Ok(a)
    }

    pub fn push(&mut self, tensor: Tensor<f32>) -> Result<()> {
        if self.get(tensor.name()).is_some() {
            return Err(Error::DuplicateName(tensor.name().to_string()));
        }
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn tensors(&self) -> &[Tensor<f32>] {
        &self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor<f32>> {
        self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|t| t.name() == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for t in &self.tensors {
            if !seen.insert(t.name()) {
                return Err(Error::DuplicateName(t.name().to_string()));
            }
            if t.name() == METADATA_KEY {
                return Err(Error::InvalidArgument(format!(
                    "{METADATA_KEY:?} is reserved"
                )));
            }
            t.check_finite()?;
        }
        Ok(())
    }

    /// Serialises to the on-disk byte layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut manifest = Map::new();
        if !self.metadata.is_empty() {
            manifest.insert(METADATA_KEY.to_string(), json!(self.metadata));
        }
        let mut offset = 0usize;
        for t in &self.tensors {
            let end = offset + 4 * t.numel();
            manifest.insert(
                t.name().to_string(),
                json!({"dtype": DTYPE_F32, "shape": t.shape(), "data_offsets": [offset, end]}),
            );
            offset = end;
        }
        let header = serde_json::to_vec(&Value::Object(manifest))?;
        let mut out = Vec::with_capacity(8 + header.len() + offset);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::MalformedHeader(format!(
                "file is {} bytes, shorter than the length prefix",
                bytes.len()
            )));
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        let available = (bytes.len() - 8) as u64;
        if n > available {
            return Err(Error::MalformedHeader(format!(
                "manifest length {n} exceeds remaining {available} bytes"
            )));
        }
        let n = n as usize;
        let header = std::str::from_utf8(&bytes[8..8 + n])
            .map_err(|e| Error::MalformedHeader(format!("manifest is not UTF-8: {e}")))?;
        let Manifest(entries) = serde_json::from_str(header)
            .map_err(|e| Error::MalformedHeader(format!("manifest JSON: {e}")))?;
        let payload = &bytes[8 + n..];

        let mut metadata = BTreeMap::new();
        let mut specs = Vec::new();
        for (name, value) in entries {
            if name == METADATA_KEY {
                let Value::Object(m) = value else {
                    return Err(Error::MalformedHeader("__metadata__ is not an object".into()));
                };
                for (k, v) in m {
                    let Value::String(s) = v else {
                        return Err(Error::MalformedHeader(format!(
                            "metadata value for {k:?} is not a string"
                        )));
                    };
                    metadata.insert(k, s);
                }
                continue;
            }
            let entry: EntrySpec = serde_json::from_value(value)
                .map_err(|e| Error::MalformedHeader(format!("entry {name:?}: {e}")))?;
            if entry.dtype != DTYPE_F32 {
                return Err(Error::UnsupportedDtype { name, dtype: entry.dtype });
            }
            let [begin, end] = entry.data_offsets;
            if begin > end {
                return Err(Error::MalformedHeader(format!(
                    "entry {name:?}: begin {begin} > end {end}"
                )));
            }
            let numel: usize = entry.shape.iter().product();
            if end - begin != 4 * numel {
                return Err(Error::MalformedHeader(format!(
                    "entry {name:?}: {} bytes for shape {:?}",
                    end - begin,
                    entry.shape
                )));
            }
            specs.push((name, entry.shape, begin, end));
        }

        check_contiguous(&specs, payload.len())?;

        let mut tensors = Vec::with_capacity(specs.len());
        for (name, shape, begin, end) in specs {
            let data: Vec<f32> = payload[begin..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let t = Tensor::new(name, shape, data)
                .map_err(|e| Error::MalformedHeader(e.to_string()))?;
            t.check_finite()?;
            tensors.push(t);
        }
        Ok(Self { tensors, metadata })
    }
}

fn check_contiguous(specs: &[(String, Vec<usize>, usize, usize)], payload_len: usize) -> Result<()> {
    let mut ranges: Vec<(usize, usize, &str)> =
        specs.iter().map(|(n, _, b, e)| (*b, *e, n.as_str())).collect();
    ranges.sort();
    let mut cursor = 0usize;
    for (b, e, name) in ranges {
        if b < cursor {
            return Err(Error::OffsetOverlap(format!(
                "{name:?} starts at {b}, inside the previous tensor ending at {cursor}"
            )));
        }
        if b > cursor {
            return Err(Error::OffsetOverlap(format!(
                "gap of {} bytes before {name:?}",
                b - cursor
            )));
        }
        cursor = e;
    }
    if cursor != payload_len {
        return Err(Error::OffsetOverlap(format!(
            "tensors cover {cursor} bytes, payload has {payload_len}"
        )));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntrySpec {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// Manifest entries in file order; duplicate keys are an error rather than
/// last-one-wins.
struct Manifest(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for Manifest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Manifest;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Manifest, A::Error> {
                let mut out: Vec<(String, Value)> = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Value>()? {
                    if out.iter().any(|(name, _)| *name == k) {
                        return Err(de::Error::custom(format!("duplicate tensor name {k:?}")));
                    }
                    out.push((k, v));
                }
                Ok(Manifest(out))
            }
        }
        d.deserialize_map(V)
    }
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<TensorArchive> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    TensorArchive::from_bytes(&bytes)
}

/// Writes atomically: bytes go to a temporary file in the target directory
/// which is then renamed over `path`. Invariant violations are reported
/// before anything touches the disk.
pub fn write_archive(archive: &TensorArchive, path: impl AsRef<Path>) -> Result<()> {
    let bytes = archive.to_bytes()?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(name: &str, shape: Vec<usize>, data: Vec<f32>) -> Tensor<f32> {
        Tensor::new(name, shape, data).unwrap()
    }

    #[test]
    fn identity_round_trip() {
        let a = TensorArchive::from_tensors(vec![t("eye", vec![2, 2], vec![1., 0., 0., 1.])]).unwrap();
        let b = TensorArchive::from_bytes(&a.to_bytes().unwrap()).unwrap();
        let eye = b.get("eye").unwrap();
        assert_eq!(eye.shape(), &[2, 2]);
        assert_eq!(eye.data(), &[1., 0., 0., 1.]);
    }

    #[test]
    fn empty_archive_is_valid() {
        let bytes = TensorArchive::new().to_bytes().unwrap();
        assert_eq!(&bytes[..8], &2u64.to_le_bytes());
        assert_eq!(&bytes[8..], b"{}");
        assert!(TensorArchive::from_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn scalar_payload_is_le_f32() {
        let a = TensorArchive::from_tensors(vec![t("x", vec![1, 1], vec![3.5])]).unwrap();
        let bytes = a.to_bytes().unwrap();
        assert_eq!(&bytes[bytes.len() - 4..], &3.5f32.to_le_bytes());
        assert_eq!(&bytes[bytes.len() - 4..], &[0x00, 0x00, 0x60, 0x40]);
    }

    #[test]
    fn duplicate_names_rejected_before_writing() {
        let err = TensorArchive::from_tensors(vec![
            t("w", vec![1], vec![1.]),
            t("w", vec![1], vec![2.]),
        ]);
        assert!(matches!(err, Err(Error::DuplicateName(_))));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.st");
        let mut a = TensorArchive::new();
        a.push(t("w", vec![1], vec![1.])).unwrap();
        // bypass push to force an invalid archive
        a.tensors.push(t("w", vec![1], vec![2.]));
        assert!(write_archive(&a, &path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn header_longer_than_file_is_malformed() {
        let mut bytes = 1000u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{}");
        let err = TensorArchive::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("malformed header"), "{err}");
    }

    fn raw(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut b = (header.len() as u64).to_le_bytes().to_vec();
        b.extend_from_slice(header.as_bytes());
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn rejects_unknown_dtype() {
        let b = raw(r#"{"x":{"dtype":"F16","shape":[2],"data_offsets":[0,4]}}"#, &[0; 4]);
        assert!(matches!(TensorArchive::from_bytes(&b), Err(Error::UnsupportedDtype { .. })));
    }

    #[test]
    fn rejects_overlap_and_gaps() {
        let overlap = raw(
            r#"{"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}}"#,
            &[0; 8],
        );
        assert!(matches!(TensorArchive::from_bytes(&overlap), Err(Error::OffsetOverlap(_))));
        let gap = raw(r#"{"a":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}}"#, &[0; 8]);
        assert!(matches!(TensorArchive::from_bytes(&gap), Err(Error::OffsetOverlap(_))));
    }

    #[test]
    fn rejects_non_finite_payload() {
        let b = raw(
            r#"{"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}}"#,
            &f32::INFINITY.to_le_bytes(),
        );
        assert!(matches!(TensorArchive::from_bytes(&b), Err(Error::NonFinite(_))));
    }

    #[test]
    fn rejects_duplicate_manifest_keys() {
        let b = raw(
            r#"{"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},"a":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}}"#,
            &[0; 8],
        );
        assert!(matches!(TensorArchive::from_bytes(&b), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn metadata_round_trips() {
        let a = TensorArchive::from_tensors(vec![t("w", vec![3], vec![1., 2., 3.])])
            .unwrap()
            .with_metadata("model_id", "a")
            .with_metadata("vocab_size", "10");
        let b = TensorArchive::from_bytes(&a.to_bytes().unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
