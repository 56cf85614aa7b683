//! Model parameters, the flat-vector layout, and checkpoint I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::math::Mat;
use crate::seed;
use crate::{Error, Result};

/// Network shape: scalar input, stacked GRU hidden sizes, scalar dense
/// head. Gate biases are off by default; `use_bias` switches in
/// standard zero-initialized biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub input_size: usize,
    pub hidden_sizes: Vec<usize>,
    pub use_bias: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_size: 1,
            hidden_sizes: vec![64, 128, 256],
            use_bias: false,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 {
            return Err(Error::Config("input_size must be >= 1".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden_sizes must be non-empty, all >= 1".into()));
        }
        Ok(())
    }
}

/// One GRU layer: update (z), reset (r), and candidate (c) gate weights
/// for the current input (W) and the previous hidden state (U).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruLayerParams {
    pub wz: Mat,
    pub uz: Mat,
    pub wr: Mat,
    pub ur: Mat,
    pub wc: Mat,
    pub uc: Mat,
    pub bz: Option<Vec<f64>>,
    pub br: Option<Vec<f64>>,
    pub bc: Option<Vec<f64>>,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl GruLayerParams {
    pub fn zeros(input_size: usize, hidden_size: usize, use_bias: bool) -> Self {
        let b = || {
            if use_bias {
                Some(vec![0.0; hidden_size])
            } else {
                None
            }
        };
        Self {
            wz: Mat::zeros(hidden_size, input_size),
            uz: Mat::zeros(hidden_size, hidden_size),
            wr: Mat::zeros(hidden_size, input_size),
            ur: Mat::zeros(hidden_size, hidden_size),
            wc: Mat::zeros(hidden_size, input_size),
            uc: Mat::zeros(hidden_size, hidden_size),
            bz: b(),
            br: b(),
            bc: b(),
            input_size,
            hidden_size,
        }
    }

    fn param_count(&self) -> usize {
        let bias = self.bz.as_ref().map_or(0, |b| b.len()) * 3;
        self.wz.len() + self.uz.len() + self.wr.len() + self.ur.len() + self.wc.len()
            + self.uc.len()
            + bias
    }
}

/// Complete model: stacked GRU layers plus the scalar dense head, with a
/// fixed flat layout shared by all federation participants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<GruLayerParams>,
    pub dense_w: Vec<f64>,
    pub dense_b: f64,
    pub net: NetConfig,
}

impl ModelParams {
    pub fn zeros(net: &NetConfig) -> Self {
        let mut layers = Vec::with_capacity(net.hidden_sizes.len());
        let mut in_size = net.input_size;
        for &h in &net.hidden_sizes {
            layers.push(GruLayerParams::zeros(in_size, h, net.use_bias));
            in_size = h;
        }
        Self {
            layers,
            dense_w: vec![0.0; in_size],
            dense_b: 0.0,
            net: net.clone(),
        }
    }

    /// Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization per
    /// matrix; biases start at zero.
    pub fn init(net: &NetConfig, init_seed: u64) -> Self {
        let mut model = Self::zeros(net);
        let mut rng = seed::rng_for(init_seed, &[seed::tag("init")]);
        let mut fill = |m: &mut Mat| {
            let bound = 1.0 / (m.cols as f64).sqrt();
            for v in m.data.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        };
        for layer in model.layers.iter_mut() {
            fill(&mut layer.wz);
            fill(&mut layer.uz);
            fill(&mut layer.wr);
            fill(&mut layer.ur);
            fill(&mut layer.wc);
            fill(&mut layer.uc);
        }
        let bound = 1.0 / (model.dense_w.len() as f64).sqrt();
        for v in model.dense_w.iter_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        model
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum::<usize>() + self.dense_w.len() + 1
    }

    /// Named segments of the flat layout, in order.
    pub fn layout(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{}.wz", i), l.wz.len()));
            out.push((format!("layer{}.uz", i), l.uz.len()));
            out.push((format!("layer{}.wr", i), l.wr.len()));
            out.push((format!("layer{}.ur", i), l.ur.len()));
            out.push((format!("layer{}.wc", i), l.wc.len()));
            out.push((format!("layer{}.uc", i), l.uc.len()));
            if let Some(b) = &l.bz {
                out.push((format!("layer{}.bz", i), b.len()));
                out.push((format!("layer{}.br", i), b.len()));
                out.push((format!("layer{}.bc", i), b.len()));
            }
        }
        out.push(("dense.w".into(), self.dense_w.len()));
        out.push(("dense.b".into(), 1));
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.wz.data);
            out.extend_from_slice(&l.uz.data);
            out.extend_from_slice(&l.wr.data);
            out.extend_from_slice(&l.ur.data);
            out.extend_from_slice(&l.wc.data);
            out.extend_from_slice(&l.uc.data);
            if let Some(b) = &l.bz {
                out.extend_from_slice(b);
            }
            if let Some(b) = &l.br {
                out.extend_from_slice(b);
            }
            if let Some(b) = &l.bc {
                out.extend_from_slice(b);
            }
        }
        out.extend_from_slice(&self.dense_w);
        out.push(self.dense_b);
        out
    }

    pub fn unflatten(net: &NetConfig, flat: &[f64]) -> Result<Self> {
        let mut model = Self::zeros(net);
        if flat.len() != model.param_count() {
            return Err(Error::Shape(format!(
                "flat vector length {} does not match layout size {}",
                flat.len(),
                model.param_count()
            )));
        }
        let mut pos = 0usize;
        let take = |dst: &mut [f64], pos: &mut usize| {
            dst.copy_from_slice(&flat[*pos..*pos + dst.len()]);
            *pos += dst.len();
        };
        for l in model.layers.iter_mut() {
            take(&mut l.wz.data, &mut pos);
            take(&mut l.uz.data, &mut pos);
            take(&mut l.wr.data, &mut pos);
            take(&mut l.ur.data, &mut pos);
            take(&mut l.wc.data, &mut pos);
            take(&mut l.uc.data, &mut pos);
            if let Some(b) = l.bz.as_mut() {
                take(b, &mut pos);
            }
            if let Some(b) = l.br.as_mut() {
                take(b, &mut pos);
            }
            if let Some(b) = l.bc.as_mut() {
                take(b, &mut pos);
            }
        }
        take(&mut model.dense_w, &mut pos);
        model.dense_b = flat[pos];
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    net: NetConfig,
    layout: Vec<(String, usize)>,
    params: Vec<f64>,
}

/// Write a versioned JSON checkpoint. JSON floats use shortest
/// round-trip formatting, so reloading is lossless at f64 precision.
pub fn save_checkpoint(model: &ModelParams, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        version: 1,
        net: model.net.clone(),
        layout: model.layout(),
        params: model.flatten(),
    };
    let file = File::create(path)?;
    serde_json::to_writer(BufWriter::new(file), &ckpt)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = File::open(path)?;
    let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
    if ckpt.version != 1 {
        return Err(Error::Serde(format!(
            "unsupported checkpoint version {}",
            ckpt.version
        )));
    }
    ModelParams::unflatten(&ckpt.net, &ckpt.params)
}
