//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "PTALNET1"
//! extra   u32      consumer tag (mask length T_s for mapper nets, else 0)
//! seed    u64      RNG seed the network was initialized from
//! meta    u32 len + UTF-8 JSON bytes (run configuration provenance)
//! layers  u32 count, then per layer:
//!         kind u8, activation u8, trainable u8, in_dim u32, out_dim u32, kernel u32
//! params  u64 count, then count f64 values
//! ```
//!
//! Multi-network artifacts concatenate blocks; `load_network` insists the
//! file holds exactly one block, `read_network` consumes one block from a
//! stream. Wrong magic and any size mismatch are rejected.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{PtalError, Result};
use crate::nn::{Activation, LayerKind, LayerSpec, Network};

pub const MAGIC: &[u8; 8] = b"PTALNET1";

#[derive(Debug, Clone, Default)]
pub struct CheckpointMeta {
    /// Consumer-defined tag; the mapper records its mask length here.
    pub extra: u32,
    /// JSON blob with the run configuration that produced the artifact.
    pub config_json: String,
}

fn act_code(a: Activation) -> u8 {
    match a {
        Activation::None => 0,
        Activation::Relu => 1,
        Activation::Sigmoid => 2,
        Activation::Softmax => 3,
    }
}

fn act_from(code: u8, path: &str) -> Result<Activation> {
    Ok(match code {
        0 => Activation::None,
        1 => Activation::Relu,
        2 => Activation::Sigmoid,
        3 => Activation::Softmax,
        _ => return Err(PtalError::format(path, format!("unknown activation code {code}"))),
    })
}

pub fn write_network(w: &mut impl Write, net: &Network, meta: &CheckpointMeta) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&meta.extra.to_le_bytes())?;
    w.write_all(&net.rng_seed().to_le_bytes())?;
    let cfg = meta.config_json.as_bytes();
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(cfg)?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for l in net.layers() {
        let (kind, kernel) = match l.kind {
            LayerKind::Dense => (0u8, 0u32),
            LayerKind::Conv1d { kernel } => (1u8, kernel as u32),
        };
        w.write_all(&[kind, act_code(l.activation), l.trainable as u8])?;
        w.write_all(&(l.in_dim as u32).to_le_bytes())?;
        w.write_all(&(l.out_dim as u32).to_le_bytes())?;
        w.write_all(&kernel.to_le_bytes())?;
    }
    w.write_all(&(net.param_count() as u64).to_le_bytes())?;
    for p in net.params() {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| PtalError::format(path, "truncated checkpoint"))
}

fn read_u32(r: &mut impl Read, path: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, path: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, path)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads one network block from a stream.
pub fn read_network(r: &mut impl Read, path: &str) -> Result<(Network, CheckpointMeta)> {
    let mut magic = [0u8; 8];
    read_exact(r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(PtalError::format(path, "bad magic, not a model checkpoint"));
    }
    let extra = read_u32(r, path)?;
    let seed = read_u64(r, path)?;
    let cfg_len = read_u32(r, path)? as usize;
    if cfg_len > 16 * 1024 * 1024 {
        return Err(PtalError::format(path, "unreasonable config blob size"));
    }
    let mut cfg = vec![0u8; cfg_len];
    read_exact(r, &mut cfg, path)?;
    let config_json = String::from_utf8(cfg)
        .map_err(|_| PtalError::format(path, "config blob is not UTF-8"))?;
    let n_layers = read_u32(r, path)? as usize;
    if n_layers == 0 || n_layers > 1024 {
        return Err(PtalError::format(path, format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let mut head = [0u8; 3];
        read_exact(r, &mut head, path)?;
        let in_dim = read_u32(r, path)? as usize;
        let out_dim = read_u32(r, path)? as usize;
        let kernel = read_u32(r, path)? as usize;
        let kind = match head[0] {
            0 => LayerKind::Dense,
            1 => LayerKind::Conv1d { kernel },
            k => return Err(PtalError::format(path, format!("unknown layer kind {k}"))),
        };
        layers.push(LayerSpec {
            kind,
            in_dim,
            out_dim,
            activation: act_from(head[1], path)?,
            trainable: head[2] != 0,
        });
    }
    let expected: usize = layers.iter().map(|l| l.param_count()).sum();
    let param_count = read_u64(r, path)? as usize;
    if param_count != expected {
        return Err(PtalError::format(
            path,
            format!("param count {param_count} does not match layer specs ({expected})"),
        ));
    }
    let mut params = Vec::with_capacity(param_count);
    let mut b = [0u8; 8];
    for _ in 0..param_count {
        read_exact(r, &mut b, path)?;
        params.push(f64::from_le_bytes(b));
    }
    let net = Network::from_parts(layers, params, seed)
        .map_err(|e| PtalError::format(path, e.to_string()))?;
    Ok((net, CheckpointMeta { extra, config_json }))
}

/// Saves exactly one network to `path`.
pub fn save_network(path: &Path, net: &Network, meta: &CheckpointMeta) -> Result<()> {
    let file = File::create(path).map_err(|e| PtalError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    write_network(&mut w, net, meta).map_err(|e| PtalError::io(path.display().to_string(), e))?;
    w.flush().map_err(|e| PtalError::io(path.display().to_string(), e))?;
    Ok(())
}

/// Loads a single-network checkpoint, rejecting trailing bytes.
pub fn load_network(path: &Path) -> Result<(Network, CheckpointMeta)> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|e| PtalError::io(p.clone(), e))?;
    let mut r = BufReader::new(file);
    let out = read_network(&mut r, &p)?;
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(out),
        Ok(_) => Err(PtalError::format(p, "trailing bytes after checkpoint")),
        Err(e) => Err(PtalError::io(p, e)),
    }
}
