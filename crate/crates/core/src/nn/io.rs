//! Self-describing binary container for parameter arrays.
//!
//! Layout: magic `NDCK`, u32 version, u64 header length, a JSON header
//! (`meta` plus the name and shape of every array), then each array as
//! little-endian f64 in header order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{LayerSpec, Mode, Network};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NDCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub meta: Value,
    pub arrays: Vec<(ArrayHeader, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Value,
    arrays: Vec<ArrayHeader>,
}

impl Container {
    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.arrays
            .iter()
            .find(|(h, _)| h.name == name)
            .map(|(_, d)| &d[..])
    }
}

pub fn write_container<W: Write>(mut out: W, c: &Container) -> Result<()> {
    let header = Header {
        meta: c.meta.clone(),
        arrays: c.arrays.iter().map(|(h, _)| h.clone()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for (h, data) in &c.arrays {
        if h.shape.iter().product::<usize>() != data.len() {
            return Err(Error::input(format!("array {} does not match its shape", h.name)));
        }
        let mut buf = Vec::with_capacity(data.len() * 8);
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_container<R: Read>(mut input: R) -> Result<Container> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format(0, "not an NDCK container"));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported container version {version}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut offset = 16 + json.len() as u64;
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for h in header.arrays {
        let n: usize = h.shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        input
            .read_exact(&mut raw)
            .map_err(|_| Error::format(offset, format!("truncated array {}", h.name)))?;
        offset += raw.len() as u64;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        arrays.push((h, data));
    }
    Ok(Container {
        meta: header.meta,
        arrays,
    })
}

#[derive(Serialize, Deserialize)]
struct NetworkMeta {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    taps: Vec<(String, usize)>,
}

impl Network {
    /// Describes the architecture and appends this network's parameter arrays
    /// (named `{prefix}.{layer}.weight` / `.bias`) to `arrays`.
    pub fn export(&self, prefix: &str, arrays: &mut Vec<(ArrayHeader, Vec<f64>)>) -> Value {
        for (i, l) in self.layers.iter().enumerate() {
            if !l.has_params() {
                continue;
            }
            let wshape = match l.spec() {
                LayerSpec::Conv2d { filters, kernel, .. } => {
                    vec![*kernel, *kernel, l.in_shape()[2], *filters]
                }
                _ => vec![l.in_shape()[0], l.bias.len()],
            };
            arrays.push((
                ArrayHeader { name: format!("{prefix}.{i}.weight"), shape: wshape },
                l.weight.clone(),
            ));
            arrays.push((
                ArrayHeader { name: format!("{prefix}.{i}.bias"), shape: vec![l.bias.len()] },
                l.bias.clone(),
            ));
        }
        serde_json::to_value(NetworkMeta {
            input_shape: self.input_shape.clone(),
            layers: self.specs(),
            taps: self.taps.clone(),
        })
        .expect("network metadata serializes")
    }

    /// Rebuilds a network from [`Network::export`] output.
    pub fn import(meta: &Value, prefix: &str, container: &Container) -> Result<Self> {
        let meta: NetworkMeta = serde_json::from_value(meta.clone())?;
        // parameters are overwritten below; the init stream is irrelevant
        let mut rng = crate::rng::stream(0, crate::rng::Stream::CnnInit);
        let mut net = Network::new(&meta.input_shape, meta.layers, &mut rng)?;
        net.taps = meta.taps;
        for i in 0..net.layers.len() {
            if !net.layers[i].has_params() {
                continue;
            }
            let load = |suffix: &str, dst: &mut Vec<f64>| -> Result<()> {
                let name = format!("{prefix}.{i}.{suffix}");
                let src = container
                    .array(&name)
                    .ok_or_else(|| Error::format(0, format!("missing array {name}")))?;
                if src.len() != dst.len() {
                    return Err(Error::format(0, format!("array {name} has wrong length")));
                }
                dst.copy_from_slice(src);
                Ok(())
            };
            let layer = &mut net.layers[i];
            load("weight", &mut layer.weight)?;
            load("bias", &mut layer.bias)?;
        }
        net.mode = Mode::Train;
        Ok(net)
    }
}
