//! Binary model files: magic bytes, format version, a JSON header with the
//! configuration and scaling statistics, then the parameters as
//! little-endian doubles, layer by layer (weights row-major, then biases).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HeadSpec, Mlp, NetConfig, NetModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DISTAGG\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    layer_sizes: Vec<usize>,
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
    target_mean: f64,
    target_scale: f64,
    hen_edges: Vec<f64>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

impl NetModel {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            config: self.config.clone(),
            layer_sizes: self.mlp.sizes().to_vec(),
            feature_mean: self.feature_mean.clone(),
            feature_scale: self.feature_scale.clone(),
            target_mean: self.head.target_mean,
            target_scale: self.head.target_scale,
            hen_edges: self.head.hen_edges.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for p in self.mlp.params() {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| format_err("file too short"))?;
        if &magic != MAGIC {
            return Err(format_err("not a model file (bad magic bytes)"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| format_err("truncated version"))?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(format_err(format!("unsupported model format version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| format_err("truncated header length"))?;
        let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| format_err("header too large"))?;
        let mut json = Vec::new();
        r.by_ref().take(len as u64).read_to_end(&mut json)?;
        if json.len() != len {
            return Err(format_err("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&json).map_err(|e| format_err(format!("bad header: {e}")))?;
        header
            .config
            .validate()
            .map_err(|e| format_err(format!("bad header configuration: {e}")))?;

        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() % 8 != 0 {
            return Err(format_err("parameter block is not a whole number of doubles"));
        }
        let params: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let mlp = Mlp::from_params(header.layer_sizes.clone(), header.config.activation, params)
            .ok_or_else(|| format_err("parameter count does not match the layer sizes"))?;
        let k = mlp.n_inputs();
        if header.feature_mean.len() != k || header.feature_scale.len() != k {
            return Err(format_err("scaling statistics do not match the input width"));
        }
        if header.config.hidden_sizes[..] != header.layer_sizes[1..header.layer_sizes.len() - 1] {
            return Err(format_err("layer sizes disagree with the configured hidden sizes"));
        }
        let head = HeadSpec::new(
            header.config.head,
            header.target_mean,
            header.target_scale,
            header.config.bqn_degree,
            header.config.bqn_levels,
            header.hen_edges,
        );
        if head.output_dim() != mlp.n_outputs() {
            return Err(format_err("output width does not match the head"));
        }
        Ok(Self {
            config: header.config,
            feature_mean: header.feature_mean,
            feature_scale: header.feature_scale,
            head,
            mlp,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
