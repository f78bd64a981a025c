//! Binary model container shared by the segmentation, eigen and SVM model
//! files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TSM1"
//! 4       4     header length H (u32)
//! 8       H     UTF-8 JSON header
//! 8+H     ...   blobs, concatenated in header order
//! ```
//!
//! The header is a JSON object with at least `format` (string), `version`
//! (integer) and `blobs`: an array of `{ "name", "dtype", "len" }` where
//! `dtype` is `"f32"` or `"f64"` and `len` counts elements. Blob bytes are
//! the IEEE-754 little-endian encodings of the elements.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TSM1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BlobInfo {
    name: String,
    dtype: DType,
    len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub name: String,
    pub dtype: DType,
    /// Values are held as f64; `F32` blobs are narrowed on write.
    pub data: Vec<f64>,
}

/// An in-memory model file: a JSON header plus named numeric blobs.
#[derive(Clone, Debug)]
pub struct Container {
    pub format: String,
    pub version: u32,
    pub header: Map<String, Value>,
    pub blobs: Vec<Blob>,
}

impl Container {
    pub fn new(format: &str, version: u32) -> Self {
        Container {
            format: format.to_string(),
            version,
            header: Map::new(),
            blobs: Vec::new(),
        }
    }

    pub fn set<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.header
            .insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn push_blob(&mut self, name: &str, dtype: DType, data: Vec<f64>) {
        self.blobs.push(Blob {
            name: name.to_string(),
            dtype,
            data,
        });
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = self.header.clone();
        header.insert("format".into(), Value::String(self.format.clone()));
        header.insert("version".into(), Value::from(self.version));
        let infos: Vec<BlobInfo> = self
            .blobs
            .iter()
            .map(|b| BlobInfo {
                name: b.name.clone(),
                dtype: b.dtype,
                len: b.data.len(),
            })
            .collect();
        header.insert("blobs".into(), serde_json::to_value(infos)?);
        let header_bytes = serde_json::to_vec(&Value::Object(header))?;
        let header_len = u32::try_from(header_bytes.len())
            .map_err(|_| Error::Data("container header too large".into()))?;

        let payload: usize = self
            .blobs
            .iter()
            .map(|b| b.data.len() * b.dtype.width())
            .sum();
        let mut out = Vec::with_capacity(8 + header_bytes.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&header_bytes);
        for blob in &self.blobs {
            match blob.dtype {
                DType::F32 => {
                    for &v in &blob.data {
                        out.extend_from_slice(&(v as f32).to_le_bytes());
                    }
                }
                DType::F64 => {
                    for &v in &blob.data {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::malformed(path, "missing model file magic"));
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header_end = 8usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::malformed(path, "truncated header"))?;
        let header: Value = serde_json::from_slice(&bytes[8..header_end])
            .map_err(|e| Error::malformed(path, format!("header: {e}")))?;
        let Value::Object(mut header) = header else {
            return Err(Error::malformed(path, "header is not a JSON object"));
        };
        let format = header
            .remove("format")
            .and_then(|v| v.as_str().map(str::to_string))
            .ok_or_else(|| Error::malformed(path, "header lacks `format`"))?;
        let version = header
            .remove("version")
            .and_then(|v| v.as_u64())
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| Error::malformed(path, "header lacks `version`"))?;
        let infos: Vec<BlobInfo> = header
            .remove("blobs")
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| Error::malformed(path, format!("blob table: {e}")))?
            .ok_or_else(|| Error::malformed(path, "header lacks `blobs`"))?;

        let mut offset = header_end;
        let mut blobs = Vec::with_capacity(infos.len());
        for info in infos {
            let width = info.dtype.width();
            let end = info
                .len
                .checked_mul(width)
                .and_then(|n| n.checked_add(offset))
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| Error::malformed(path, format!("blob `{}` truncated", info.name)))?;
            let data = bytes[offset..end]
                .chunks_exact(width)
                .map(|c| match info.dtype {
                    DType::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                    DType::F64 => f64::from_le_bytes(c.try_into().unwrap()),
                })
                .collect();
            blobs.push(Blob {
                name: info.name,
                dtype: info.dtype,
                data,
            });
            offset = end;
        }
        if offset != bytes.len() {
            return Err(Error::malformed(path, "trailing bytes after last blob"));
        }
        Ok(Container {
            format,
            version,
            header,
            blobs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Checks format name and version; `path` is used for diagnostics.
    pub fn expect(&self, format: &str, version: u32, path: &Path) -> Result<()> {
        if self.format != format {
            return Err(Error::malformed(
                path,
                format!("expected format `{format}`, found `{}`", self.format),
            ));
        }
        if self.version != version {
            return Err(Error::malformed(
                path,
                format!(
                    "incompatible {format} version {} (this build reads {version})",
                    self.version
                ),
            ));
        }
        Ok(())
    }

    pub fn get<T: for<'de> Deserialize<'de>>(&self, key: &str, path: &Path) -> Result<T> {
        let value = self
            .header
            .get(key)
            .ok_or_else(|| Error::malformed(path, format!("header lacks `{key}`")))?;
        serde_json::from_value(value.clone())
            .map_err(|e| Error::malformed(path, format!("header field `{key}`: {e}")))
    }

    /// Removes and returns the next blob, which must be named `name`.
    pub fn take_blob(&mut self, name: &str, len: usize, path: &Path) -> Result<Vec<f64>> {
        let idx = self
            .blobs
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Error::malformed(path, format!("missing blob `{name}`")))?;
        let blob = self.blobs.remove(idx);
        if blob.data.len() != len {
            return Err(Error::malformed(
                path,
                format!("blob `{name}` has {} values, expected {len}", blob.data.len()),
            ));
        }
        Ok(blob.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_header_and_blobs() {
        let mut c = Container::new("test.model", 3);
        c.set("dims", &[4usize, 2]).unwrap();
        c.push_blob("a", DType::F64, vec![0.1, -2.5, f64::MIN_POSITIVE]);
        c.push_blob("b", DType::F32, vec![0.5, 1.0]);
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.format, "test.model");
        assert_eq!(back.version, 3);
        assert_eq!(back.header["dims"], serde_json::json!([4, 2]));
        assert_eq!(back.blobs, c.blobs);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut c = Container::new("t", 1);
        c.push_blob("a", DType::F64, vec![1.0; 4]);
        let bytes = c.to_bytes().unwrap();
        let err = Container::from_bytes(&bytes[..bytes.len() - 3], Path::new("x.model"))
            .unwrap_err();
        assert!(err.to_string().contains("x.model"), "{err}");
    }

    #[test]
    fn wrong_version_is_reported() {
        let c = Container::new("seg", 2);
        let err = c.expect("seg", 1, Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("incompatible"));
    }
}
