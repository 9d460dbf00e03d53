//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "URMCKPT1" | u32 version | u64 len + config text | u64 step
//! rng: 32-byte seed, u64 stream, u128 word position
//! three tensor sections (parameters, optimizer buffers, EMA shadow):
//!   u32 count, then per tensor: u32 name len, name, u32 rank, u64 dims, f32 data
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use urm_tensor::Tensor;

use crate::error::{CoreError, Result};
use crate::model::Urm;
use crate::optim::Optimizer;

pub const MAGIC: &[u8; 8] = b"URMCKPT1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// Position of a ChaCha8 stream, enough to resume it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Opaque configuration record, normally the run configuration file.
    pub config: String,
    pub step: u64,
    pub rng: RngState,
    pub params: Vec<NamedTensor>,
    pub optimizer: Vec<NamedTensor>,
    pub ema: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn capture(config: String, model: &Urm<f32>, opt: &Optimizer<f32>, rng: &ChaCha8Rng) -> Self {
        let params = model
            .params
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                dims: p.value.shape().to_vec(),
                data: p.value.to_vec(),
            })
            .collect();
        let optimizer = opt
            .buffers(&model.params)
            .into_iter()
            .map(|(name, data)| NamedTensor {
                name,
                dims: vec![data.len()],
                data: data.to_vec(),
            })
            .collect();
        let ema = model
            .params
            .iter()
            .zip(&opt.ema.shadow)
            .map(|(p, sh)| NamedTensor {
                name: p.name.clone(),
                dims: p.value.shape().to_vec(),
                data: sh.clone(),
            })
            .collect();
        Self {
            config,
            step: opt.step,
            rng: RngState::capture(rng),
            params,
            optimizer,
            ema,
        }
    }

    /// Writes parameters, optimizer buffers and EMA into an existing model
    /// and optimizer built from the same configuration.
    pub fn restore_into(&self, model: &mut Urm<f32>, opt: &mut Optimizer<f32>) -> Result<()> {
        if self.params.len() != model.params.len() || self.ema.len() != model.params.len() {
            return Err(CoreError::Checkpoint("parameter count does not match the model".into()));
        }
        for ((nt, ema), p) in self.params.iter().zip(&self.ema).zip(model.params.iter_mut()) {
            if nt.name != p.name || nt.dims != p.value.shape() || ema.name != p.name {
                return Err(CoreError::Checkpoint(format!("tensor `{}` does not match `{}`", nt.name, p.name)));
            }
            p.value = Tensor::new(nt.dims.clone(), nt.data.clone())?;
        }
        opt.load_buffers(
            &model.params,
            self.optimizer.iter().map(|t| (t.name.clone(), t.data.clone())).collect(),
        )?;
        opt.ema.shadow = self.ema.iter().map(|t| t.data.clone()).collect();
        opt.step = self.step;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        for section in [&self.params, &self.optimizer, &self.ema] {
            out.extend_from_slice(&(section.len() as u32).to_le_bytes());
            for t in section {
                out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
                out.extend_from_slice(t.name.as_bytes());
                out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
                for &d in &t.dims {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for &v in &t.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(CoreError::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CoreError::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.u64()? as usize;
        let config = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| CoreError::Checkpoint("config record is not UTF-8".into()))?;
        let step = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let mut sections = Vec::with_capacity(3);
        for _ in 0..3 {
            let count = r.u32()? as usize;
            let mut section = Vec::with_capacity(count.min(4096));
            for _ in 0..count {
                let name_len = r.u32()? as usize;
                let name = String::from_utf8(r.take(name_len)?.to_vec())
                    .map_err(|_| CoreError::Checkpoint("tensor name is not UTF-8".into()))?;
                let rank = r.u32()? as usize;
                let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                let numel = dims
                    .iter()
                    .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                    .ok_or_else(|| CoreError::Checkpoint(format!("dims of `{name}` overflow")))?;
                let raw = r.take(numel.checked_mul(4).ok_or_else(|| CoreError::Checkpoint("tensor too large".into()))?)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                section.push(NamedTensor { name, dims, data });
            }
            sections.push(section);
        }
        if r.at != bytes.len() {
            return Err(CoreError::Checkpoint("trailing bytes".into()));
        }
        let ema = sections.pop().expect("three sections");
        let optimizer = sections.pop().expect("three sections");
        let params = sections.pop().expect("three sections");
        Ok(Self {
            config,
            step,
            rng: RngState { seed, stream, word_pos },
            params,
            optimizer,
            ema,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::File::create(&tmp)?.write_all(&self.to_bytes())?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CoreError::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn rng_state_resumes_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        rng.set_stream(7);
        rng.next_u64();
        let state = RngState::capture(&rng);
        let mut back = state.restore();
        assert_eq!(rng.next_u64(), back.next_u64());
    }

    #[test]
    fn truncated_and_foreign_files_are_rejected() {
        assert!(Checkpoint::from_bytes(b"URMCKPT1").is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPTxxxxxxxxxx").is_err());
    }
}
