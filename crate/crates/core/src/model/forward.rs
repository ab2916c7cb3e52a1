//! Forward pass with full activation caching for reverse-mode
//! differentiation.
//!
//! Every intermediate the backward pass needs is recorded in [`Trace`];
//! nothing is recomputed during backpropagation. Reductions inside
//! layer norm run in f64 for accuracy; everything else stays in the
//! model's scalar type.

use super::linalg::{add_bias_rows, mul_abt_into, mul_into, MatRef};
use super::{ParamBuf, Real, Vit, INPUT_CHANNELS};
use crate::error::{Error, Result};

/// Layer-norm variance guard.
pub(crate) const LN_EPS: f64 = 1e-6;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-form GELU; its derivative has a closed form, which is why the
/// tanh approximation is used rather than the erf definition.
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    let one = T::from_f64(1.0);
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let s = c.mul(x.add(a.mul(x).mul(x).mul(x)));
    half.mul(x).mul(one.add(s.tanh()))
}

pub(crate) fn gelu_prime<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    let one = T::from_f64(1.0);
    let three = T::from_f64(3.0);
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let s = c.mul(x.add(a.mul(x).mul(x).mul(x)));
    let t = s.tanh();
    let sech2 = one.sub(t.mul(t));
    let ds = c.mul(one.add(three.mul(a).mul(x).mul(x)));
    half.mul(one.add(t)).add(half.mul(x).mul(sech2).mul(ds))
}

/// Row-wise layer norm. Writes the normalized activations to `out`,
/// and caches the unit-variance values (`xhat`) and reciprocal standard
/// deviations (`rstd`) for the backward pass.
pub(crate) fn layer_norm_rows<T: Real>(
    x: &[T],
    rows: usize,
    d: usize,
    scale: &[T],
    bias: &[T],
    out: &mut [T],
    xhat: &mut [T],
    rstd: &mut [T],
) {
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mut mean = 0.0f64;
        for &v in row {
            mean += v.to_f64();
        }
        mean /= d as f64;
        let mut var = 0.0f64;
        for &v in row {
            let c = v.to_f64() - mean;
            var += c * c;
        }
        var /= d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = T::from_f64(rs);
        let mean_t = T::from_f64(mean);
        let rs_t = T::from_f64(rs);
        for j in 0..d {
            let h = row[j].sub(mean_t).mul(rs_t);
            xhat[r * d + j] = h;
            out[r * d + j] = scale[j].mul(h).add(bias[j]);
        }
    }
}

/// In-place row-wise softmax with max subtraction for stability.
pub(crate) fn softmax_rows<T: Real>(m: &mut [T], rows: usize, cols: usize) {
    for r in 0..rows {
        let row = &mut m[r * cols..(r + 1) * cols];
        let mut mx = row[0];
        for &v in row.iter() {
            mx = mx.max(v);
        }
        let mut denom = T::zero();
        for v in row.iter_mut() {
            *v = v.sub(mx).exp();
            denom = denom.add(*v);
        }
        for v in row.iter_mut() {
            *v = v.div(denom);
        }
    }
}

/// Copies head `h` columns (width `dh`) out of a seq-by-d matrix.
pub(crate) fn gather_head<T: Real>(src: &[T], seq: usize, d: usize, h: usize, dh: usize, dst: &mut [T]) {
    for r in 0..seq {
        let from = r * d + h * dh;
        dst[r * dh..(r + 1) * dh].copy_from_slice(&src[from..from + dh]);
    }
}

/// Adds head `h` columns back into a seq-by-d matrix.
pub(crate) fn scatter_head<T: Real>(dst: &mut [T], seq: usize, d: usize, h: usize, dh: usize, src: &[T]) {
    for r in 0..seq {
        let to = r * d + h * dh;
        for j in 0..dh {
            dst[to + j] = dst[to + j].add(src[r * dh + j]);
        }
    }
}

/// Cached activations of one encoder block.
#[derive(Debug, Clone)]
pub struct BlockTrace<T> {
    pub x_in: Vec<T>,
    pub ln1_xhat: Vec<T>,
    pub ln1_rstd: Vec<T>,
    pub ln1_out: Vec<T>,
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    /// Attention probabilities, heads-by-seq-by-seq.
    pub attn: Vec<T>,
    pub ctx: Vec<T>,
    /// Residual stream after attention (input to the MLP branch).
    pub h: Vec<T>,
    pub ln2_xhat: Vec<T>,
    pub ln2_rstd: Vec<T>,
    pub ln2_out: Vec<T>,
    pub mlp_pre: Vec<T>,
    pub mlp_act: Vec<T>,
}

/// Cached activations of one full forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub patches: Vec<T>,
    pub blocks: Vec<BlockTrace<T>>,
    /// Encoder output, all tokens.
    pub x_final: Vec<T>,
    pub fln_xhat: Vec<T>,
    pub fln_rstd: T,
    /// Normalized class-token embedding handed to the head.
    pub fln_out: Vec<T>,
    pub head_pre: [Vec<T>; 2],
    pub head_act: [Vec<T>; 2],
    pub output: Vec<T>,
}

impl<T: Real> Trace<T> {
    pub fn output_f64(&self) -> Vec<f64> {
        self.output.iter().map(|v| v.to_f64()).collect()
    }
}

impl Vit {
    /// Splits a square single-channel image into flattened patch rows.
    ///
    /// Within each patch vector the layout is planar: channel-major, then
    /// patch row, then patch column; the single input channel is
    /// replicated across all three channel planes.
    pub fn patchify<T: Real>(&self, pixels: &[f64]) -> Result<Vec<T>> {
        let s = self.cfg.image_size;
        let p = self.cfg.patch_size;
        if pixels.len() != s * s {
            return Err(Error::LengthMismatch {
                context: "image pixels",
                left: pixels.len(),
                right: s * s,
            });
        }
        let grid = s / p;
        let pdim = self.cfg.patch_dim();
        let plane = p * p;
        let mut patches = vec![T::zero(); grid * grid * pdim];
        for pr in 0..grid {
            for pc in 0..grid {
                let base = (pr * grid + pc) * pdim;
                for py in 0..p {
                    for px in 0..p {
                        let v = T::from_f64(pixels[(pr * p + py) * s + (pc * p + px)]);
                        for c in 0..INPUT_CHANNELS {
                            patches[base + c * plane + py * p + px] = v;
                        }
                    }
                }
            }
        }
        Ok(patches)
    }

    pub fn forward<T: Real>(&self, params: &ParamBuf<T>, pixels: &[f64]) -> Result<Trace<T>> {
        let patches = self.patchify::<T>(pixels)?;
        self.forward_patches(params, patches)
    }

    /// Forward pass from pre-extracted patch vectors.
    pub fn forward_patches<T: Real>(&self, params: &ParamBuf<T>, patches: Vec<T>) -> Result<Trace<T>> {
        if params.data.len() != self.layout.total_len {
            return Err(Error::ShapeMismatch {
                tensor: "parameter buffer".into(),
                expected: vec![self.layout.total_len],
                found: vec![params.data.len()],
            });
        }
        let cfg = &self.cfg;
        let (seq, d) = (cfg.seq_len(), cfg.embed_dim);
        let n_patches = cfg.n_patches();
        let pdim = cfg.patch_dim();
        let heads = cfg.n_heads;
        let dh = d / heads;
        let m = cfg.mlp_ratio * d;
        let t = |name: &str| self.layout.tensor_slice(&params.data, name).expect("tensor in layout");

        // Embedding: class token, patch projections, positional offsets.
        let mut x = vec![T::zero(); seq * d];
        x[..d].copy_from_slice(t("class_token"));
        mul_into(
            &mut x[d..],
            MatRef::new(&patches, n_patches, pdim),
            MatRef::new(t("patch_embed.weight"), pdim, d),
        );
        add_bias_rows(&mut x[d..], t("patch_embed.bias"));
        for (xi, &pi) in x.iter_mut().zip(t("pos_embed")) {
            *xi = xi.add(pi);
        }

        let inv_sqrt_dh = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut blocks = Vec::with_capacity(cfg.depth);
        let mut qh = vec![T::zero(); seq * dh];
        let mut kh = vec![T::zero(); seq * dh];
        let mut vh = vec![T::zero(); seq * dh];
        let mut ctx_h = vec![T::zero(); seq * dh];

        for b in 0..cfg.depth {
            let name = |s: &str| format!("block{b}.{s}");
            let x_in = x;

            let mut ln1_out = vec![T::zero(); seq * d];
            let mut ln1_xhat = vec![T::zero(); seq * d];
            let mut ln1_rstd = vec![T::zero(); seq];
            layer_norm_rows(
                &x_in,
                seq,
                d,
                t(&name("ln1.scale")),
                t(&name("ln1.bias")),
                &mut ln1_out,
                &mut ln1_xhat,
                &mut ln1_rstd,
            );

            let mut q = vec![T::zero(); seq * d];
            let mut k = vec![T::zero(); seq * d];
            let mut v = vec![T::zero(); seq * d];
            let ln1_ref = MatRef::new(&ln1_out, seq, d);
            mul_into(&mut q, ln1_ref, MatRef::new(t(&name("attn.q.weight")), d, d));
            add_bias_rows(&mut q, t(&name("attn.q.bias")));
            mul_into(&mut k, ln1_ref, MatRef::new(t(&name("attn.k.weight")), d, d));
            add_bias_rows(&mut k, t(&name("attn.k.bias")));
            mul_into(&mut v, ln1_ref, MatRef::new(t(&name("attn.v.weight")), d, d));
            add_bias_rows(&mut v, t(&name("attn.v.bias")));

            let mut attn = vec![T::zero(); heads * seq * seq];
            let mut ctx = vec![T::zero(); seq * d];
            for h in 0..heads {
                gather_head(&q, seq, d, h, dh, &mut qh);
                gather_head(&k, seq, d, h, dh, &mut kh);
                gather_head(&v, seq, d, h, dh, &mut vh);
                let scores = &mut attn[h * seq * seq..(h + 1) * seq * seq];
                mul_abt_into(scores, MatRef::new(&qh, seq, dh), MatRef::new(&kh, seq, dh));
                for s in scores.iter_mut() {
                    *s = s.mul(inv_sqrt_dh);
                }
                softmax_rows(scores, seq, seq);
                ctx_h.iter_mut().for_each(|z| *z = T::zero());
                mul_into(&mut ctx_h, MatRef::new(scores, seq, seq), MatRef::new(&vh, seq, dh));
                scatter_head(&mut ctx, seq, d, h, dh, &ctx_h);
            }

            let mut h_res = vec![T::zero(); seq * d];
            mul_into(
                &mut h_res,
                MatRef::new(&ctx, seq, d),
                MatRef::new(t(&name("attn.out.weight")), d, d),
            );
            add_bias_rows(&mut h_res, t(&name("attn.out.bias")));
            for (hi, &xi) in h_res.iter_mut().zip(&x_in) {
                *hi = hi.add(xi);
            }

            let mut ln2_out = vec![T::zero(); seq * d];
            let mut ln2_xhat = vec![T::zero(); seq * d];
            let mut ln2_rstd = vec![T::zero(); seq];
            layer_norm_rows(
                &h_res,
                seq,
                d,
                t(&name("ln2.scale")),
                t(&name("ln2.bias")),
                &mut ln2_out,
                &mut ln2_xhat,
                &mut ln2_rstd,
            );

            let mut mlp_pre = vec![T::zero(); seq * m];
            mul_into(
                &mut mlp_pre,
                MatRef::new(&ln2_out, seq, d),
                MatRef::new(t(&name("mlp.fc_in.weight")), d, m),
            );
            add_bias_rows(&mut mlp_pre, t(&name("mlp.fc_in.bias")));
            let mlp_act: Vec<T> = mlp_pre.iter().map(|&u| gelu(u)).collect();

            let mut x_out = vec![T::zero(); seq * d];
            mul_into(
                &mut x_out,
                MatRef::new(&mlp_act, seq, m),
                MatRef::new(t(&name("mlp.fc_out.weight")), m, d),
            );
            add_bias_rows(&mut x_out, t(&name("mlp.fc_out.bias")));
            for (xo, &hi) in x_out.iter_mut().zip(&h_res) {
                *xo = xo.add(hi);
            }

            blocks.push(BlockTrace {
                x_in,
                ln1_xhat,
                ln1_rstd,
                ln1_out,
                q,
                k,
                v,
                attn,
                ctx,
                h: h_res,
                ln2_xhat,
                ln2_rstd,
                ln2_out,
                mlp_pre,
                mlp_act,
            });
            x = x_out;
        }

        // Final norm touches only the class token; the head never sees
        // the patch tokens.
        let x_final = x;
        let mut fln_out = vec![T::zero(); d];
        let mut fln_xhat = vec![T::zero(); d];
        let mut fln_rstd = vec![T::zero(); 1];
        layer_norm_rows(
            &x_final[..d],
            1,
            d,
            t("final_norm.scale"),
            t("final_norm.bias"),
            &mut fln_out,
            &mut fln_xhat,
            &mut fln_rstd,
        );

        let dims = cfg.head_dims;
        let mut a0 = vec![T::zero(); dims[0]];
        mul_into(
            &mut a0,
            MatRef::new(&fln_out, 1, d),
            MatRef::new(t("head.fc0.weight"), d, dims[0]),
        );
        add_bias_rows(&mut a0, t("head.fc0.bias"));
        let r0: Vec<T> = a0.iter().map(|&v| v.max(T::zero())).collect();

        let mut a1 = vec![T::zero(); dims[1]];
        mul_into(
            &mut a1,
            MatRef::new(&r0, 1, dims[0]),
            MatRef::new(t("head.fc1.weight"), dims[0], dims[1]),
        );
        add_bias_rows(&mut a1, t("head.fc1.bias"));
        let r1: Vec<T> = a1.iter().map(|&v| v.max(T::zero())).collect();

        let mut output = vec![T::zero(); dims[2]];
        mul_into(
            &mut output,
            MatRef::new(&r1, 1, dims[1]),
            MatRef::new(t("head.fc2.weight"), dims[1], dims[2]),
        );
        add_bias_rows(&mut output, t("head.fc2.bias"));

        Ok(Trace {
            patches,
            blocks,
            x_final,
            fln_xhat,
            fln_rstd: fln_rstd[0],
            fln_out,
            head_pre: [a0, a1],
            head_act: [r0, r1],
            output,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::ModelConfig;
    use super::*;
    use crate::rng::Rng;

    fn random_pixels(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()
    }

    #[test]
    fn patchify_partitions_base_image() {
        let vit = Vit::new(ModelConfig::base()).unwrap();
        let s = 224;
        let pixels: Vec<f64> = (0..s * s).map(|i| (i % 97) as f64 / 97.0).collect();
        let patches: Vec<f64> = vit.patchify(&pixels).unwrap();
        assert_eq!(patches.len(), 49 * 3072);
        // All three channel planes replicate the image values.
        let plane = 32 * 32;
        for p in 0..49 {
            let row = &patches[p * 3072..(p + 1) * 3072];
            assert_eq!(&row[..plane], &row[plane..2 * plane]);
            assert_eq!(&row[..plane], &row[2 * plane..]);
        }
        // Reassembling channel 0 of every patch reproduces the image.
        let mut rebuilt = vec![0.0f64; s * s];
        for pr in 0..7 {
            for pc in 0..7 {
                let row = &patches[(pr * 7 + pc) * 3072..];
                for py in 0..32 {
                    for px in 0..32 {
                        rebuilt[(pr * 32 + py) * s + pc * 32 + px] = row[py * 32 + px];
                    }
                }
            }
        }
        assert_eq!(rebuilt, pixels);
    }

    #[test]
    fn patchify_constant_image_gives_identical_patches() {
        let vit = Vit::new(ModelConfig::tiny()).unwrap();
        let pixels = vec![0.25f64; 64 * 64];
        let patches: Vec<f64> = vit.patchify(&pixels).unwrap();
        let pdim = vit.cfg.patch_dim();
        let first = &patches[..pdim];
        for p in 1..vit.cfg.n_patches() {
            assert_eq!(&patches[p * pdim..(p + 1) * pdim], first);
        }
    }

    #[test]
    fn patchify_rejects_wrong_pixel_count() {
        let vit = Vit::new(ModelConfig::tiny()).unwrap();
        assert!(vit.patchify::<f64>(&vec![0.0; 63 * 64]).is_err());
    }

    #[test]
    fn zero_params_give_zero_output() {
        let vit = Vit::new(ModelConfig::tiny()).unwrap();
        let params = super::super::ParamBuf::<f64>::zeros(&vit.layout);
        let pixels = random_pixels(64 * 64, 1);
        let trace = vit.forward(&params, &pixels).unwrap();
        assert_eq!(trace.output.len(), 2048);
        assert!(trace.output.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_length_is_fixed_across_presets() {
        for cfg in [ModelConfig::tiny(), ModelConfig::desk()] {
            let vit = Vit::new(cfg).unwrap();
            let params = super::super::ParamBuf::<f32>::init(&vit.layout, 5);
            let pixels = random_pixels(cfg.image_size * cfg.image_size, 2);
            let trace = vit.forward(&params, &pixels).unwrap();
            assert_eq!(trace.output.len(), 2048);
            assert!(trace.output.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn attention_rows_are_probability_distributions() {
        let vit = Vit::new(ModelConfig::tiny()).unwrap();
        let params = super::super::ParamBuf::<f64>::init(&vit.layout, 9);
        let pixels = random_pixels(64 * 64, 3);
        let trace = vit.forward(&params, &pixels).unwrap();
        let seq = vit.cfg.seq_len();
        for block in &trace.blocks {
            for row in block.attn.chunks_exact(seq) {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn wrong_param_buffer_length_is_rejected() {
        let vit = Vit::new(ModelConfig::tiny()).unwrap();
        let params = super::super::ParamBuf::<f64> { data: vec![0.0; 10] };
        let err = vit.forward(&params, &random_pixels(64 * 64, 4)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn permuting_patches_and_positions_together_is_invisible() {
        let cfg = ModelConfig::tiny();
        let vit = Vit::new(cfg).unwrap();
        let params = super::super::ParamBuf::<f32>::init(&vit.layout, 11);
        let pixels = random_pixels(64 * 64, 5);
        let base = vit.forward(&params, &pixels).unwrap();

        let n = cfg.n_patches();
        let pdim = cfg.patch_dim();
        let d = cfg.embed_dim;
        // A fixed cyclic shift of the patch rows.
        let perm: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
        let patches: Vec<f32> = vit.patchify(&pixels).unwrap();
        let mut shuffled = vec![0.0f32; patches.len()];
        for (dst, &src) in perm.iter().enumerate() {
            shuffled[dst * pdim..(dst + 1) * pdim]
                .copy_from_slice(&patches[src * pdim..(src + 1) * pdim]);
        }
        let mut permuted_params = params.clone();
        let pos = vit.layout.find("pos_embed").unwrap();
        let pos_data = params.data[pos.offset..pos.offset + pos.len].to_vec();
        for (dst, &src) in perm.iter().enumerate() {
            // Row 0 is the class position; patch rows start at 1.
            let to = pos.offset + (dst + 1) * d;
            permuted_params.data[to..to + d]
                .copy_from_slice(&pos_data[(src + 1) * d..(src + 2) * d]);
        }
        let permuted = vit.forward_patches(&permuted_params, shuffled).unwrap();
        for (a, b) in base.output.iter().zip(&permuted.output) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
}
