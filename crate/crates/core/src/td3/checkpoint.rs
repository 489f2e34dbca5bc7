//! Binary policy checkpoints.
//!
//! Layout, little-endian: magic, `u32` version, length-prefixed config hash,
//! `u32` network count, then per network a `u32` layer count and per layer
//! `u8` activation, `u32` fan-in, `u32` fan-out, weights row-major, biases.
//! Optimizer moments are not stored.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::io::write_atomic;

use super::mlp::{Activation, Layer, Mlp};
use super::AgentNets;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSRLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub nets: AgentNets,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn encode_net(out: &mut Vec<u8>, net: &Mlp) {
    put_u32(out, net.layers.len() as u32);
    for l in &net.layers {
        out.push(l.activation.code());
        put_u32(out, l.input_dim() as u32);
        put_u32(out, l.output_dim() as u32);
        for v in l.weights.iter().chain(l.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, ckpt.config_hash.len() as u32);
    out.extend_from_slice(ckpt.config_hash.as_bytes());
    let nets = ckpt.nets.all();
    put_u32(&mut out, nets.len() as u32);
    for net in nets {
        encode_net(&mut out, net);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(corrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| corrupt("layer too large".into()))?;
        Ok(self.take(len)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn corrupt(detail: String) -> Error {
    Error::Parse { what: "checkpoint", detail }
}

fn decode_net(r: &mut Reader) -> Result<Mlp> {
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let code = r.u8()?;
        let activation = Activation::from_code(code).ok_or_else(|| corrupt(format!("unknown activation {code}")))?;
        let fan_in = r.u32()? as usize;
        let fan_out = r.u32()? as usize;
        let w = r.f64s(fan_in.checked_mul(fan_out).ok_or_else(|| corrupt("layer too large".into()))?)?;
        let b = r.f64s(fan_out)?;
        layers.push(Layer {
            weights: Array2::from_shape_vec((fan_in, fan_out), w).map_err(|e| corrupt(e.to_string()))?,
            bias: Array1::from(b),
            activation,
        });
    }
    let net = Mlp { layers };
    net.validate()?;
    Ok(net)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(corrupt("not a policy checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let hash_len = r.u32()? as usize;
    let config_hash = String::from_utf8(r.take(hash_len)?.to_vec()).map_err(|e| corrupt(e.to_string()))?;
    let count = r.u32()?;
    if count != 6 {
        return Err(corrupt(format!("expected 6 networks, found {count}")));
    }
    let mut nets = (0..6).map(|_| decode_net(&mut r)).collect::<Result<Vec<_>>>()?.into_iter();
    let mut next = || nets.next().unwrap();
    let nets = AgentNets {
        actor: next(),
        critic1: next(),
        critic2: next(),
        actor_target: next(),
        critic1_target: next(),
        critic2_target: next(),
    };
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    nets.validate()?;
    Ok(Checkpoint { config_hash, nets })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
