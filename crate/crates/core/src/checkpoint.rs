//! Embedder checkpoints.
//!
//! Layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `b"KTE1"` |
//! | 4     | `u32` input dim |
//! | 4     | `u32` hidden dim (0 for identity / affine) |
//! | 4     | `u32` output dim |
//! | 8     | `u64` seed |
//! | 4     | `u32` adaptation round (0 for a source model) |
//! | 8     | `u64` parameter count |
//! | 8 * n | `f64` parameters |
//!
//! A zero parameter count with equal input and output dims is the identity map.

use std::path::Path;

use crate::embed::{AnyEmbedder, Architecture, Embedder};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KTE1";
const HEADER_LEN: usize = 36;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub embedder: AnyEmbedder,
    pub seed: u64,
    pub round: u32,
}

impl Checkpoint {
    pub fn new(embedder: AnyEmbedder, seed: u64, round: u32) -> Self {
        Checkpoint { embedder, seed, round }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(&self.embedder, self.seed, self.round)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err("missing KTE1 header".into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let (input, hidden, output) = (u32_at(4), u32_at(8), u32_at(12));
        let seed = u64_at(16);
        let round = u32_at(24) as u32;
        let count = u64_at(28) as usize;

        let body = &bytes[HEADER_LEN..];
        if Some(body.len()) != count.checked_mul(8) {
            return Err(format!(
                "header declares {count} parameters, body holds {} bytes",
                body.len()
            ));
        }
        let params: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let arch = if hidden > 0 {
            Architecture::Mlp { input, hidden, output }
        } else if count == 0 && input == output {
            Architecture::Identity { dim: input }
        } else {
            Architecture::Affine { input, output }
        };
        let embedder = AnyEmbedder::from_parts(arch, params).map_err(|e| e.to_string())?;
        Ok(Checkpoint { embedder, seed, round })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|msg| Error::format(path, msg))
    }
}

fn encode<E: Embedder + ?Sized>(e: &E, seed: u64, round: u32) -> Vec<u8> {
    let arch = e.architecture();
    let params = e.params();
    let mut out = Vec::with_capacity(HEADER_LEN + params.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for dim in [arch.input_dim(), arch.hidden_dim(), arch.output_dim()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&seed.to_le_bytes());
    out.extend_from_slice(&round.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}
