//! Dataset file format.
//!
//! Little-endian throughout: magic `DPHI`, format version `u32 = 1`,
//! `num_samples u32`, `height u32`, `width u32`, `input_channels u32`,
//! `output_channels u32`, then per sample the input values followed by the
//! output values as `f64` in channel-major row-major order. No padding, no
//! compression. Round-trips are bit-exact.

use super::{Dataset, DatagenError, Result, TrajectorySample};
use crate::field::{GridField, GridShape};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 4] = b"DPHI";
const VERSION: u32 = 1;

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let in_shape = dataset.input_shape();
    let out_shape = dataset.output_shape();
    let mut bytes = Vec::with_capacity(
        28 + dataset.len() * 8 * (in_shape.len() + out_shape.len()),
    );
    bytes.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        dataset.len() as u32,
        in_shape.height as u32,
        in_shape.width as u32,
        in_shape.channels as u32,
        out_shape.channels as u32,
    ] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for sample in dataset.samples() {
        for &v in sample.input.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for &v in sample.output.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + len > self.bytes.len() {
            return Err(DatagenError::Parse {
                offset: self.offset,
                reason: format!(
                    "truncated while reading {what}: need {len} bytes, {} left",
                    self.bytes.len() - self.offset
                ),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + len];
        self.offset += len;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("length checked")))
    }

    fn f64_block(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.take(count * 8, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("length checked")))
            .collect())
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor {
        bytes: &bytes,
        offset: 0,
    };

    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(DatagenError::Parse {
            offset: 0,
            reason: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(DatagenError::Parse {
            offset: 4,
            reason: format!("unsupported format version {version}"),
        });
    }
    let num_samples = cur.u32("num_samples")? as usize;
    let height = cur.u32("height")? as usize;
    let width = cur.u32("width")? as usize;
    let in_channels = cur.u32("input_channels")? as usize;
    let out_channels = cur.u32("output_channels")? as usize;
    if num_samples == 0 {
        return Err(DatagenError::Parse {
            offset: 8,
            reason: "dataset declares zero samples".into(),
        });
    }
    let in_shape = GridShape::new(height, width, in_channels).map_err(|e| DatagenError::Parse {
        offset: 12,
        reason: format!("bad input shape: {e}"),
    })?;
    let out_shape =
        GridShape::new(height, width, out_channels).map_err(|e| DatagenError::Parse {
            offset: 24,
            reason: format!("bad output shape: {e}"),
        })?;

    let mut samples = Vec::with_capacity(num_samples);
    for id in 0..num_samples {
        let value_offset = cur.offset;
        let input = cur.f64_block(in_shape.len(), "sample input values")?;
        let output = cur.f64_block(out_shape.len(), "sample output values")?;
        let build = |shape, values| {
            GridField::new(shape, values).map_err(|e| DatagenError::Parse {
                offset: value_offset,
                reason: format!("sample {id}: {e}"),
            })
        };
        samples.push(TrajectorySample {
            input: build(in_shape, input)?,
            output: build(out_shape, output)?,
            id,
        });
    }
    if cur.offset != bytes.len() {
        return Err(DatagenError::Parse {
            offset: cur.offset,
            reason: format!("{} trailing bytes", bytes.len() - cur.offset),
        });
    }
    Ok(Dataset::new(samples))
}
