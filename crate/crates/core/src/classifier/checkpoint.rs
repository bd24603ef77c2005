//! Model checkpoint: version byte, a config echo, then every layer's weights
//! and bias as little-endian `f32`.
//!
//! Config echo layout: `u32` layer count, `u32` sizes (input, hidden..., output),
//! `u64` seed, `u32` epochs, `u32` min_updates, `f64` learning rate,
//! `u32` minibatch size, `u32` epochs run, `f64` final loss.

use std::io::{Read, Write};

use super::mlp::{Dense, Mlp};
use super::{ClassifierError, ClassifierModel, ModelConfig, Result};

pub const CHECKPOINT_VERSION: u8 = 1;

pub fn write_checkpoint<W: Write>(model: &ClassifierModel, mut w: W) -> Result<()> {
    let layers = &model.net.layers;
    w.write_all(&[CHECKPOINT_VERSION])?;
    w.write_all(&(layers.len() as u32).to_le_bytes())?;
    w.write_all(&(layers[0].inputs as u32).to_le_bytes())?;
    for l in layers {
        w.write_all(&(l.outputs as u32).to_le_bytes())?;
    }
    let c = &model.config;
    w.write_all(&c.seed.to_le_bytes())?;
    w.write_all(&(c.epochs as u32).to_le_bytes())?;
    w.write_all(&(c.min_updates as u32).to_le_bytes())?;
    w.write_all(&c.learning_rate.to_le_bytes())?;
    w.write_all(&(c.minibatch_size as u32).to_le_bytes())?;
    w.write_all(&(model.epochs_run as u32).to_le_bytes())?;
    w.write_all(&model.final_loss.to_le_bytes())?;
    for l in layers {
        for v in l.weights.iter().chain(&l.bias) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn u32_le<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn u64_le<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Restores a model; parameters come back rounded to `f32`.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ClassifierModel> {
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != CHECKPOINT_VERSION {
        return Err(ClassifierError::Checkpoint(format!("unsupported version {}", version[0])));
    }
    let count = u32_le(&mut r)? as usize;
    if count != 3 {
        return Err(ClassifierError::Checkpoint(format!("expected 3 layers, found {count}")));
    }
    let mut sizes = vec![u32_le(&mut r)? as usize];
    for _ in 0..count {
        sizes.push(u32_le(&mut r)? as usize);
    }
    let config = ModelConfig {
        hidden_sizes: [sizes[1], sizes[2]],
        seed: u64_le(&mut r)?,
        epochs: u32_le(&mut r)? as usize,
        min_updates: u32_le(&mut r)? as usize,
        learning_rate: f64::from_bits(u64_le(&mut r)?),
        minibatch_size: u32_le(&mut r)? as usize,
    };
    let epochs_run = u32_le(&mut r)? as usize;
    let final_loss = f64::from_bits(u64_le(&mut r)?);
    let mut layers = Vec::with_capacity(count);
    for w in sizes.windows(2) {
        let mut read_block = |len: usize| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; len * 4];
            r.read_exact(&mut bytes)?;
            Ok(bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect())
        };
        let weights = read_block(w[0] * w[1])?;
        let bias = read_block(w[1])?;
        layers.push(Dense {
            inputs: w[0],
            outputs: w[1],
            weights,
            bias,
        });
    }
    Ok(ClassifierModel {
        net: Mlp { layers },
        config,
        epochs_run,
        final_loss,
    })
}
