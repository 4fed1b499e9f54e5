use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::Real;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Rows of the embedded input (label length + length slack).
    pub input_len: usize,
    /// Predicted sequence length.
    pub output_len: usize,
    pub d_model: usize,
    /// One depthwise-separable branch per (odd) kernel width.
    pub kernel_sizes: Vec<usize>,
    /// Depthwise filters per input letter channel.
    pub depth_multiplier: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_len: 128,
            output_len: 120,
            d_model: 128,
            kernel_sizes: vec![3, 5, 7, 9],
            depth_multiplier: 8,
            n_blocks: 4,
            n_heads: 4,
            d_ff: 256,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.kernel_sizes.is_empty() {
            return fail("at least one kernel size is required".into());
        }
        if let Some(k) = self.kernel_sizes.iter().find(|&&k| k % 2 == 0) {
            return fail(format!("kernel size {k} is not odd"));
        }
        if self.output_len == 0 || self.output_len > self.input_len {
            return fail(format!(
                "need 0 < output_len ({}) <= input_len ({})",
                self.output_len, self.input_len
            ));
        }
        if self.d_ff == 0 || self.depth_multiplier == 0 {
            return fail("d_ff and depth_multiplier must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Depthwise output channels per branch.
    pub fn stem_channels(&self) -> usize {
        4 * self.depth_multiplier
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BranchSlots {
    pub kernel: usize,
    /// `[channels, kernel]`
    pub dw_w: Range<usize>,
    pub dw_b: Range<usize>,
    /// `[channels, d_model]`
    pub pw_w: Range<usize>,
    pub pw_b: Range<usize>,
}

#[derive(Clone, Debug)]
pub(crate) struct BlockSlots {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    /// `[d_model, 3 * d_model]`: query, key and value projections side by side.
    pub qkv_w: Range<usize>,
    pub qkv_b: Range<usize>,
    pub out_w: Range<usize>,
    pub out_b: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub ff1_w: Range<usize>,
    pub ff1_b: Range<usize>,
    pub ff2_w: Range<usize>,
    pub ff2_b: Range<usize>,
}

/// Flat parameter layout: named tensors packed back to back.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub specs: Vec<ParamSpec>,
    pub(crate) branches: Vec<BranchSlots>,
    pub(crate) merge_w: Range<usize>,
    pub(crate) merge_b: Range<usize>,
    pub(crate) blocks: Vec<BlockSlots>,
    pub(crate) lnf_g: Range<usize>,
    pub(crate) lnf_b: Range<usize>,
    pub(crate) head_w: Range<usize>,
    pub(crate) head_b: Range<usize>,
    pub total: usize,
}

struct Builder {
    specs: Vec<ParamSpec>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize]) -> Range<usize> {
        let spec = ParamSpec {
            name,
            shape: shape.to_vec(),
            offset: self.total,
        };
        self.total += spec.len();
        let r = spec.range();
        self.specs.push(spec);
        r
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let ch = cfg.stem_channels();
        let mut b = Builder {
            specs: Vec::new(),
            total: 0,
        };
        let branches = cfg
            .kernel_sizes
            .iter()
            .map(|&k| BranchSlots {
                kernel: k,
                dw_w: b.add(format!("stem.k{k}.depthwise.weight"), &[ch, k]),
                dw_b: b.add(format!("stem.k{k}.depthwise.bias"), &[ch]),
                pw_w: b.add(format!("stem.k{k}.pointwise.weight"), &[ch, d]),
                pw_b: b.add(format!("stem.k{k}.pointwise.bias"), &[d]),
            })
            .collect();
        let merge_w = b.add("stem.merge.weight".into(), &[d, d]);
        let merge_b = b.add("stem.merge.bias".into(), &[d]);
        let blocks = (0..cfg.n_blocks)
            .map(|i| BlockSlots {
                ln1_g: b.add(format!("blocks.{i}.ln1.gain"), &[d]),
                ln1_b: b.add(format!("blocks.{i}.ln1.bias"), &[d]),
                qkv_w: b.add(format!("blocks.{i}.attn.qkv.weight"), &[d, 3 * d]),
                qkv_b: b.add(format!("blocks.{i}.attn.qkv.bias"), &[3 * d]),
                out_w: b.add(format!("blocks.{i}.attn.out.weight"), &[d, d]),
                out_b: b.add(format!("blocks.{i}.attn.out.bias"), &[d]),
                ln2_g: b.add(format!("blocks.{i}.ln2.gain"), &[d]),
                ln2_b: b.add(format!("blocks.{i}.ln2.bias"), &[d]),
                ff1_w: b.add(format!("blocks.{i}.mlp.fc1.weight"), &[d, cfg.d_ff]),
                ff1_b: b.add(format!("blocks.{i}.mlp.fc1.bias"), &[cfg.d_ff]),
                ff2_w: b.add(format!("blocks.{i}.mlp.fc2.weight"), &[cfg.d_ff, d]),
                ff2_b: b.add(format!("blocks.{i}.mlp.fc2.bias"), &[d]),
            })
            .collect();
        let lnf_g = b.add("final_ln.gain".into(), &[d]);
        let lnf_b = b.add("final_ln.bias".into(), &[d]);
        let head_w = b.add("head.weight".into(), &[d, 4]);
        let head_b = b.add("head.bias".into(), &[4]);
        Self {
            specs: b.specs,
            branches,
            merge_w,
            merge_b,
            blocks,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
            total: b.total,
        }
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Name of the tensor containing flat index `i`.
    pub fn name_of(&self, i: usize) -> &str {
        self.specs
            .iter()
            .find(|s| s.range().contains(&i))
            .map(|s| s.name.as_str())
            .unwrap_or("?")
    }
}

/// All learnable weights, flat, in [`ParamLayout`] order.
#[derive(Clone, Debug)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub data: Vec<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let data = vec![T::zero(); layout.total];
        Ok(Self { config, layout, data })
    }

    /// Fan-in scaled uniform initialization, deterministic in `config.seed`.
    /// Layer-norm gains start at 1 and biases at 0; residual output
    /// projections are shrunk by `1/sqrt(2 * n_blocks)`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = rng::stream(p.config.seed, "init", 0);
        let residual_scale = 1.0 / ((2 * p.config.n_blocks.max(1)) as f64).sqrt();
        let specs = p.layout.specs.clone();
        for spec in &specs {
            let slot = &mut p.data[spec.range()];
            let name = spec.name.as_str();
            if name.ends_with(".gain") {
                slot.fill(T::one());
                continue;
            }
            if name.ends_with(".bias") {
                continue;
            }
            let fan_in = if name.contains("depthwise") {
                spec.shape[1]
            } else {
                spec.shape[0]
            };
            let mut bound = (3.0 / fan_in as f64).sqrt();
            if name.ends_with("attn.out.weight") || name.ends_with("fc2.weight") {
                bound *= residual_scale;
            }
            for v in slot.iter_mut() {
                *v = T::lit(rng.random_range(-bound..bound));
            }
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.spec(name).map(|s| &self.data[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let r = self.layout.spec(name)?.range();
        Some(&mut self.data[r])
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }

    pub(crate) fn slot(&self, r: &Range<usize>) -> &[T] {
        &self.data[r.clone()]
    }
}

pub fn init_model<T: Real>(config: ModelConfig) -> Result<ModelParams<T>> {
    ModelParams::init(config)
}
