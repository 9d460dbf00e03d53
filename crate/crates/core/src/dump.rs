//! Attention-matrix dumps for offline visualisation.
//!
//! The binary file holds a u64 rank, the u64 dims
//! `[layers, loops, heads, T, T]` and the f32 weights, all little-endian.
//! A JSON summary carries the per-row entropies.

use std::path::Path;

use serde::{Deserialize, Serialize};
use urm_tensor::{Scalar, Tensor};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionDump {
    /// `[layers, loops, heads, T, T]`.
    pub dims: [usize; 5],
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropySummary {
    pub dims: [usize; 5],
    /// `row_entropy[layer][loop][head][query]` in nats.
    pub row_entropy: Vec<Vec<Vec<Vec<f64>>>>,
    /// Mean over queries, `[layer][loop][head]`.
    pub mean_entropy: Vec<Vec<Vec<f64>>>,
}

impl AttentionDump {
    /// Rearranges the attention record of a single-sequence forward pass,
    /// which is ordered loop-major then layer, into layer-major order.
    pub fn from_record<S: Scalar>(record: &[Tensor<S>], layers: usize) -> Result<Self> {
        if layers == 0 || record.is_empty() || !record.len().is_multiple_of(layers) {
            return Err(CoreError::Batch(format!("{} attention maps for {layers} layers", record.len())));
        }
        let shape = record[0].shape();
        if shape.len() != 4 || shape[0] != 1 {
            return Err(CoreError::Batch("attention dumps need a batch of one sequence".into()));
        }
        let (heads, t) = (shape[1], shape[2]);
        let loops = record.len() / layers;
        let mut data = Vec::with_capacity(record.len() * heads * t * t);
        for l in 0..layers {
            for lp in 0..loops {
                data.extend(record[lp * layers + l].data().iter().map(|v| v.as_f64() as f32));
            }
        }
        Ok(Self {
            dims: [layers, loops, heads, t, t],
            data,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + self.data.len() * 4);
        out.extend_from_slice(&(self.dims.len() as u64).to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Result<u64> {
            bytes
                .get(i * 8..i * 8 + 8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                .ok_or_else(|| CoreError::Checkpoint("truncated attention dump".into()))
        };
        if word(0)? != 5 {
            return Err(CoreError::Checkpoint("attention dump must have rank 5".into()));
        }
        let mut dims = [0usize; 5];
        for (i, d) in dims.iter_mut().enumerate() {
            *d = word(i + 1)? as usize;
        }
        let body = &bytes[48..];
        if body.len() != dims.iter().product::<usize>() * 4 {
            return Err(CoreError::Checkpoint("attention dump size does not match its dims".into()));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn write(&self, bin: &Path, summary: &Path) -> Result<()> {
        std::fs::write(bin, self.to_bytes())?;
        std::fs::write(summary, serde_json::to_string_pretty(&self.entropy())?)?;
        Ok(())
    }

    /// Shannon entropy of every attention row.
    pub fn entropy(&self) -> EntropySummary {
        let [layers, loops, heads, t, _] = self.dims;
        let mut rows = self.data.chunks_exact(t.max(1));
        let mut row_entropy = Vec::with_capacity(layers);
        let mut mean_entropy = Vec::with_capacity(layers);
        for _ in 0..layers {
            let mut per_loop = Vec::with_capacity(loops);
            let mut per_loop_mean = Vec::with_capacity(loops);
            for _ in 0..loops {
                let mut per_head = Vec::with_capacity(heads);
                let mut per_head_mean = Vec::with_capacity(heads);
                for _ in 0..heads {
                    let ents: Vec<f64> = (0..t)
                        .map(|_| {
                            let row = rows.next().expect("dims match data");
                            row.iter()
                                .map(|&p| p as f64)
                                .filter(|&p| p > 0.0)
                                .map(|p| -p * p.ln())
                                .sum()
                        })
                        .collect();
                    per_head_mean.push(ents.iter().sum::<f64>() / t.max(1) as f64);
                    per_head.push(ents);
                }
                per_loop.push(per_head);
                per_loop_mean.push(per_head_mean);
            }
            row_entropy.push(per_loop);
            mean_entropy.push(per_loop_mean);
        }
        EntropySummary {
            dims: self.dims,
            row_entropy,
            mean_entropy,
        }
    }
}
