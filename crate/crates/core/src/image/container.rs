//! LLMIMG container: `b"LLMIMG01"`, a little-endian `u32` header length, a
//! UTF-8 JSON header, then `m * v` little-endian `f64` values in column-major
//! order.

use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};

use super::ModelImage;
use crate::error::{Error, Result};
use crate::io::{sha256_hex, write_atomic};

pub const MAGIC: &[u8; 8] = b"LLMIMG01";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub version: u32,
    pub v: usize,
    pub m: usize,
    pub d_estimate: usize,
    pub tolerance: f64,
    pub source_id: String,
    pub created_at: String,
    /// SHA-256 of the prompts joined with `\n`.
    pub prompts_digest: String,
    pub space: String,
    pub prompts: Vec<String>,
}

fn prompts_digest(prompts: &[String]) -> String {
    sha256_hex(prompts.join("\n").as_bytes())
}

impl ModelImage {
    pub fn header(&self) -> ContainerHeader {
        ContainerHeader {
            version: VERSION,
            v: self.vocab_size(),
            m: self.columns(),
            d_estimate: self.d_estimate(),
            tolerance: self.tolerance(),
            source_id: self.source_id().to_string(),
            created_at: self.created_at().to_string(),
            prompts_digest: prompts_digest(self.prompts()),
            space: "clr".into(),
            prompts: self.prompts().to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let (v, m) = (self.vocab_size(), self.columns());
        let mut out = Vec::with_capacity(12 + header.len() + 8 * v * m);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for j in 0..m {
            for i in 0..v {
                out.extend_from_slice(&self.matrix()[(i, j)].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not an LLMIMG01 container".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: ContainerHeader =
            serde_json::from_slice(body).map_err(|e| Error::Format(format!("bad header: {e}")))?;
        if header.version != VERSION || header.space != "clr" {
            return Err(Error::Format(format!(
                "unsupported container version {} / space {:?}",
                header.version, header.space
            )));
        }
        if header.prompts.len() != header.m || prompts_digest(&header.prompts) != header.prompts_digest {
            return Err(Error::Format("prompt list does not match its digest".into()));
        }
        let data = &bytes[12 + hlen..];
        let expected = header
            .v
            .checked_mul(header.m)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
        if data.len() != expected {
            return Err(Error::Format(format!(
                "expected {expected} bytes of matrix data, found {}",
                data.len()
            )));
        }
        let value = |i: usize, j: usize| {
            let at = 8 * (j * header.v + i);
            f64::from_le_bytes(data[at..at + 8].try_into().unwrap())
        };
        let matrix = Mat::from_fn(header.v, header.m, value);
        let image = ModelImage::new(
            matrix,
            header.prompts,
            header.tolerance,
            header.source_id,
            header.created_at,
        )?;
        if image.d_estimate() != header.d_estimate {
            return Err(Error::Format(format!(
                "stored d_estimate {} but the matrix has rank {}",
                header.d_estimate,
                image.d_estimate()
            )));
        }
        Ok(image)
    }
}

pub fn write_image(path: &Path, image: &ModelImage) -> Result<()> {
    write_atomic(path, &image.to_bytes())
}

pub fn read_image(path: &Path) -> Result<ModelImage> {
    ModelImage::from_bytes(&std::fs::read(path)?)
}
