//! Vision-transformer regression model with manually derived gradients.
//!
//! Parameters live in one flat buffer addressed through a named, ordered
//! [`Layout`]; forward and backward walk structured views over that
//! buffer. The same code runs in f32 (training) and f64 (finite-difference
//! gradient verification) through the [`Real`] abstraction. Loss
//! arithmetic is always performed in f64.

pub mod adam;
pub mod backward;
pub mod check;
pub mod forward;
pub mod io;
pub mod linalg;
pub mod loss;
pub mod train;

pub use io::{export_params, import_params, ImportedParams};
pub use loss::LossSpec;
pub use train::{train, train_from, window_offsets, EpochRow, TrainConfig, TrainOutcome, TrainStart};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Scalar type the model is generic over: f32 in production, f64 when
/// verifying gradients.
pub trait Real: Copy + Default + PartialOrd + std::fmt::Debug + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn zero() -> Self;
    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn div(self, o: Self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn max(self, o: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn zero() -> Self {
                0.0
            }
            #[inline(always)]
            fn add(self, o: Self) -> Self {
                self + o
            }
            #[inline(always)]
            fn sub(self, o: Self) -> Self {
                self - o
            }
            #[inline(always)]
            fn mul(self, o: Self) -> Self {
                self * o
            }
            #[inline(always)]
            fn div(self, o: Self) -> Self {
                self / o
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline(always)]
            fn tanh(self) -> Self {
                self.tanh()
            }
            #[inline(always)]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline(always)]
            fn max(self, o: Self) -> Self {
                if self > o {
                    self
                } else {
                    o
                }
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}
impl_real!(f32);
impl_real!(f64);

/// Input channels fed to the patch embedding; the one-channel spectrogram
/// is replicated across all three.
pub const INPUT_CHANNELS: usize = 3;

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    /// Regression head widths; the final width is the output length.
    pub head_dims: [usize; 3],
    pub output_points: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::base()
    }
}

impl ModelConfig {
    /// Full-scale configuration.
    pub fn base() -> Self {
        ModelConfig {
            image_size: 224,
            patch_size: 32,
            embed_dim: 768,
            depth: 12,
            n_heads: 12,
            mlp_ratio: 4,
            head_dims: [512, 1024, 2048],
            output_points: 2048,
        }
    }

    /// Desk-scale preset: same image geometry, thin encoder.
    pub fn desk() -> Self {
        ModelConfig { embed_dim: 64, depth: 2, n_heads: 4, ..Self::base() }
    }

    /// Minimal configuration for gradient verification.
    pub fn tiny() -> Self {
        ModelConfig {
            image_size: 64,
            patch_size: 32,
            embed_dim: 16,
            depth: 1,
            n_heads: 2,
            mlp_ratio: 4,
            head_dims: [512, 1024, 2048],
            output_points: 2048,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::InvalidArg(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.embed_dim == 0 || self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            return Err(Error::InvalidArg(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.n_heads
            )));
        }
        if self.depth == 0 || self.mlp_ratio == 0 {
            return Err(Error::InvalidArg("depth and mlp_ratio must be at least 1".into()));
        }
        if self.head_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArg("head widths must be nonzero".into()));
        }
        if self.head_dims[2] != self.output_points {
            return Err(Error::InvalidArg(format!(
                "final head width {} must equal output length {}",
                self.head_dims[2], self.output_points
            )));
        }
        Ok(())
    }

    /// Patches per image side times itself.
    pub fn n_patches(&self) -> usize {
        let per_side = self.image_size / self.patch_size;
        per_side * per_side
    }

    /// Token count: patches plus the class token.
    pub fn seq_len(&self) -> usize {
        self.n_patches() + 1
    }

    /// Flattened patch vector length across replicated channels.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * INPUT_CHANNELS
    }
}

/// One named tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Ordered tensor map for a configuration; the serialization manifest and
/// every optimizer/gradient walk follow this order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub total_len: usize,
}

/// Marks weight matrices (random init) apart from biases, norms, and the
/// class token (zero or identity init).
fn is_projection(name: &str) -> bool {
    name.ends_with(".weight") || name == "pos_embed"
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let mut tensors = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            tensors.push(TensorInfo { name, shape, offset, len });
            offset += len;
        };

        push("patch_embed.weight".into(), vec![cfg.patch_dim(), d]);
        push("patch_embed.bias".into(), vec![d]);
        push("class_token".into(), vec![d]);
        push("pos_embed".into(), vec![cfg.seq_len(), d]);
        for i in 0..cfg.depth {
            let b = |s: &str| format!("block{i}.{s}");
            push(b("ln1.scale"), vec![d]);
            push(b("ln1.bias"), vec![d]);
            push(b("attn.q.weight"), vec![d, d]);
            push(b("attn.q.bias"), vec![d]);
            push(b("attn.k.weight"), vec![d, d]);
            push(b("attn.k.bias"), vec![d]);
            push(b("attn.v.weight"), vec![d, d]);
            push(b("attn.v.bias"), vec![d]);
            push(b("attn.out.weight"), vec![d, d]);
            push(b("attn.out.bias"), vec![d]);
            push(b("ln2.scale"), vec![d]);
            push(b("ln2.bias"), vec![d]);
            push(b("mlp.fc_in.weight"), vec![d, cfg.mlp_ratio * d]);
            push(b("mlp.fc_in.bias"), vec![cfg.mlp_ratio * d]);
            push(b("mlp.fc_out.weight"), vec![cfg.mlp_ratio * d, d]);
            push(b("mlp.fc_out.bias"), vec![d]);
        }
        push("final_norm.scale".into(), vec![d]);
        push("final_norm.bias".into(), vec![d]);
        let head_in = [d, cfg.head_dims[0], cfg.head_dims[1]];
        for (j, (&fan_in, &fan_out)) in head_in.iter().zip(&cfg.head_dims).enumerate() {
            push(format!("head.fc{j}.weight"), vec![fan_in, fan_out]);
            push(format!("head.fc{j}.bias"), vec![fan_out]);
        }

        Ok(Layout { tensors, total_len: offset })
    }

    pub fn find(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Slice of one tensor within a flat buffer.
    pub fn tensor_slice<'a, T>(&self, data: &'a [T], name: &str) -> Option<&'a [T]> {
        self.find(name).map(|t| &data[t.offset..t.offset + t.len])
    }
}

/// Model instance: a configuration plus its derived parameter layout.
#[derive(Debug, Clone)]
pub struct Vit {
    pub cfg: ModelConfig,
    pub layout: Layout,
}

impl Vit {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let layout = Layout::new(&cfg)?;
        Ok(Vit { cfg, layout })
    }
}

/// Flat parameter (or gradient, or moment) buffer tied to a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBuf<T> {
    pub data: Vec<T>,
}

impl<T: Real> ParamBuf<T> {
    pub fn zeros(layout: &Layout) -> Self {
        ParamBuf { data: vec![T::zero(); layout.total_len] }
    }

    /// Paper initialization: truncated normal (std 0.02, clipped at two
    /// standard deviations) for projection matrices and the positional
    /// embedding, zeros for biases and the class token, ones for
    /// layer-norm scales.
    pub fn init(layout: &Layout, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let mut data = vec![T::zero(); layout.total_len];
        for t in &layout.tensors {
            let slice = &mut data[t.offset..t.offset + t.len];
            if is_projection(&t.name) {
                for v in slice.iter_mut() {
                    let z = loop {
                        let z = rng.normal();
                        if z.abs() <= 2.0 {
                            break z;
                        }
                    };
                    *v = T::from_f64(z * 0.02);
                }
            } else if t.name.ends_with(".scale") {
                for v in slice.iter_mut() {
                    *v = T::from_f64(1.0);
                }
            }
        }
        ParamBuf { data }
    }

    /// Casts every element; used to lift f32 parameters to f64 for
    /// gradient checks.
    pub fn cast<U: Real>(&self) -> ParamBuf<U> {
        ParamBuf { data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_layout_matches_published_dimensions() {
        let cfg = ModelConfig::base();
        assert_eq!(cfg.n_patches(), 49);
        assert_eq!(cfg.patch_dim(), 3072);
        let layout = Layout::new(&cfg).unwrap();
        let pe = layout.find("patch_embed.weight").unwrap();
        assert_eq!(pe.shape, vec![3072, 768]);
        let pos = layout.find("pos_embed").unwrap();
        assert_eq!(pos.shape, vec![50, 768]);
        let h2 = layout.find("head.fc2.weight").unwrap();
        assert_eq!(h2.shape, vec![1024, 2048]);
        // Offsets tile the buffer exactly, in declaration order.
        let mut expected = 0usize;
        for t in &layout.tensors {
            assert_eq!(t.offset, expected, "{}", t.name);
            expected += t.len;
        }
        assert_eq!(layout.total_len, expected);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ModelConfig::base();
        cfg.patch_size = 33;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::base();
        cfg.n_heads = 7;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::base();
        cfg.head_dims = [512, 1024, 1000];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_zeroes_biases_and_scales_norms() {
        let cfg = ModelConfig::tiny();
        let layout = Layout::new(&cfg).unwrap();
        let params: ParamBuf<f32> = ParamBuf::init(&layout, 7);
        let bias = layout.tensor_slice(&params.data, "patch_embed.bias").unwrap();
        assert!(bias.iter().all(|&v| v == 0.0));
        let cls = layout.tensor_slice(&params.data, "class_token").unwrap();
        assert!(cls.iter().all(|&v| v == 0.0));
        let scale = layout.tensor_slice(&params.data, "block0.ln1.scale").unwrap();
        assert!(scale.iter().all(|&v| v == 1.0));
        let w = layout.tensor_slice(&params.data, "attn_missing");
        assert!(w.is_none());
        let w = layout.tensor_slice(&params.data, "block0.attn.q.weight").unwrap();
        // Truncated normal: nonzero, bounded by two standard deviations.
        assert!(w.iter().any(|&v| v != 0.0));
        assert!(w.iter().all(|&v| v.abs() <= 0.04 + 1e-9));
        // Same seed, same init.
        let again: ParamBuf<f32> = ParamBuf::init(&layout, 7);
        assert_eq!(params, again);
    }
}
