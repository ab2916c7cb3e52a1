//! Reverse-mode gradients, hand-derived per layer.
//!
//! Gradients accumulate (`+=`) into the caller's buffer so that batch
//! averaging is a single scale at the end. Only parameter gradients are
//! produced; input-pixel gradients are never needed.

use super::forward::{gather_head, gelu_prime, scatter_head, Trace};
use super::linalg::{mul_abt_into, mul_atb_into, mul_into, sum_rows_into, MatRef};
use super::{ParamBuf, Real, Vit};
use crate::error::{Error, Result};

/// Backward through one layer norm over `rows` rows.
///
/// With xhat the normalized input and r the reciprocal std, the input
/// gradient per row is r·(dxhat − mean(dxhat) − xhat·mean(dxhat ⊙ xhat)),
/// where dxhat = d_out ⊙ scale. Scale/bias gradients are row sums.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward_rows<T: Real>(
    d_out: &[T],
    xhat: &[T],
    rstd: &[T],
    scale: &[T],
    rows: usize,
    d: usize,
    d_scale: &mut [T],
    d_bias: &mut [T],
    d_x: &mut [T],
) {
    let inv_d = 1.0 / d as f64;
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let o = r * d;
        let mut m1 = 0.0f64;
        let mut m2 = 0.0f64;
        for j in 0..d {
            let g = d_out[o + j];
            d_bias[j] = d_bias[j].add(g);
            d_scale[j] = d_scale[j].add(g.mul(xhat[o + j]));
            let dh = g.mul(scale[j]);
            dxhat[j] = dh;
            m1 += dh.to_f64();
            m2 += dh.to_f64() * xhat[o + j].to_f64();
        }
        m1 *= inv_d;
        m2 *= inv_d;
        let m1t = T::from_f64(m1);
        let m2t = T::from_f64(m2);
        for j in 0..d {
            let term = dxhat[j].sub(m1t).sub(xhat[o + j].mul(m2t));
            d_x[o + j] = d_x[o + j].add(rstd[r].mul(term));
        }
    }
}

/// Backward through a row-wise softmax: ds = a ⊙ (da − Σ da ⊙ a),
/// in place on `da`.
fn softmax_backward_rows<T: Real>(da: &mut [T], a: &[T], rows: usize, cols: usize) {
    for r in 0..rows {
        let o = r * cols;
        let mut dot = 0.0f64;
        for j in 0..cols {
            dot += da[o + j].to_f64() * a[o + j].to_f64();
        }
        let dot = T::from_f64(dot);
        for j in 0..cols {
            da[o + j] = a[o + j].mul(da[o + j].sub(dot));
        }
    }
}

impl Vit {
    /// Accumulates d(loss)/d(params) into `grads`, given the output
    /// gradient `d_output` and the trace of the forward pass that
    /// produced it.
    pub fn backward<T: Real>(
        &self,
        params: &ParamBuf<T>,
        trace: &Trace<T>,
        d_output: &[T],
        grads: &mut ParamBuf<T>,
    ) -> Result<()> {
        if grads.data.len() != self.layout.total_len || params.data.len() != self.layout.total_len
        {
            return Err(Error::ShapeMismatch {
                tensor: "parameter buffer".into(),
                expected: vec![self.layout.total_len],
                found: vec![grads.data.len()],
            });
        }
        if d_output.len() != self.cfg.output_points {
            return Err(Error::LengthMismatch {
                context: "output gradient",
                left: d_output.len(),
                right: self.cfg.output_points,
            });
        }
        let cfg = &self.cfg;
        let (seq, d) = (cfg.seq_len(), cfg.embed_dim);
        let n_patches = cfg.n_patches();
        let pdim = cfg.patch_dim();
        let heads = cfg.n_heads;
        let dh = d / heads;
        let m = cfg.mlp_ratio * d;
        let dims = cfg.head_dims;
        let t = |name: &str| self.layout.tensor_slice(&params.data, name).expect("tensor in layout");
        // Tensors never overlap, so a gradient slice can be carved out by
        // offset without aliasing any other tensor's slice.
        macro_rules! g {
            ($name:expr) => {{
                let info = self.layout.find($name).expect("tensor in layout");
                &mut grads.data[info.offset..info.offset + info.len]
            }};
        }
        // Layer-norm scale and bias are adjacent in the layout; borrowing
        // both at once means splitting their combined region.
        macro_rules! g_pair {
            ($scale:expr, $bias:expr) => {{
                let a = self.layout.find($scale).expect("tensor in layout");
                let b = self.layout.find($bias).expect("tensor in layout");
                debug_assert_eq!(a.offset + a.len, b.offset);
                grads.data[a.offset..b.offset + b.len].split_at_mut(a.len)
            }};
        }

        // Head, last layer first. ReLU passes gradient only through
        // strictly positive pre-activations.
        mul_atb_into(
            g!("head.fc2.weight"),
            MatRef::new(&trace.head_act[1], 1, dims[1]),
            MatRef::new(d_output, 1, dims[2]),
        );
        sum_rows_into(g!("head.fc2.bias"), d_output);
        let mut d_r1 = vec![T::zero(); dims[1]];
        mul_abt_into(
            &mut d_r1,
            MatRef::new(d_output, 1, dims[2]),
            MatRef::new(t("head.fc2.weight"), dims[1], dims[2]),
        );
        for (gr, &pre) in d_r1.iter_mut().zip(&trace.head_pre[1]) {
            if pre.to_f64() <= 0.0 {
                *gr = T::zero();
            }
        }
        mul_atb_into(
            g!("head.fc1.weight"),
            MatRef::new(&trace.head_act[0], 1, dims[0]),
            MatRef::new(&d_r1, 1, dims[1]),
        );
        sum_rows_into(g!("head.fc1.bias"), &d_r1);
        let mut d_r0 = vec![T::zero(); dims[0]];
        mul_abt_into(
            &mut d_r0,
            MatRef::new(&d_r1, 1, dims[1]),
            MatRef::new(t("head.fc1.weight"), dims[0], dims[1]),
        );
        for (gr, &pre) in d_r0.iter_mut().zip(&trace.head_pre[0]) {
            if pre.to_f64() <= 0.0 {
                *gr = T::zero();
            }
        }
        mul_atb_into(
            g!("head.fc0.weight"),
            MatRef::new(&trace.fln_out, 1, d),
            MatRef::new(&d_r0, 1, dims[0]),
        );
        sum_rows_into(g!("head.fc0.bias"), &d_r0);
        let mut d_z = vec![T::zero(); d];
        mul_abt_into(
            &mut d_z,
            MatRef::new(&d_r0, 1, dims[0]),
            MatRef::new(t("head.fc0.weight"), d, dims[0]),
        );

        // Final norm saw only the class-token row.
        let mut d_x = vec![T::zero(); seq * d];
        {
            let (d_scale, d_bias) = g_pair!("final_norm.scale", "final_norm.bias");
            layer_norm_backward_rows(
                &d_z,
                &trace.fln_xhat,
                &[trace.fln_rstd],
                t("final_norm.scale"),
                1,
                d,
                d_scale,
                d_bias,
                &mut d_x[..d],
            );
        }

        let inv_sqrt_dh = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut d_ctx_h = vec![T::zero(); seq * dh];
        let mut head_buf = vec![T::zero(); seq * dh];
        let mut d_head_buf = vec![T::zero(); seq * dh];
        let mut d_a = vec![T::zero(); seq * seq];

        for b in (0..cfg.depth).rev() {
            let name = |s: &str| format!("block{b}.{s}");
            let bt = &trace.blocks[b];

            // x_out = h + mlp(ln2(h)); both summands receive d_x.
            let mut d_h = d_x.clone();
            mul_atb_into(
                g!(&name("mlp.fc_out.weight")),
                MatRef::new(&bt.mlp_act, seq, m),
                MatRef::new(&d_x, seq, d),
            );
            sum_rows_into(g!(&name("mlp.fc_out.bias")), &d_x);
            let mut d_u = vec![T::zero(); seq * m];
            mul_abt_into(
                &mut d_u,
                MatRef::new(&d_x, seq, d),
                MatRef::new(t(&name("mlp.fc_out.weight")), m, d),
            );
            for (du, &u) in d_u.iter_mut().zip(&bt.mlp_pre) {
                *du = du.mul(gelu_prime(u));
            }
            mul_atb_into(
                g!(&name("mlp.fc_in.weight")),
                MatRef::new(&bt.ln2_out, seq, d),
                MatRef::new(&d_u, seq, m),
            );
            sum_rows_into(g!(&name("mlp.fc_in.bias")), &d_u);
            let mut d_ln2_out = vec![T::zero(); seq * d];
            mul_abt_into(
                &mut d_ln2_out,
                MatRef::new(&d_u, seq, m),
                MatRef::new(t(&name("mlp.fc_in.weight")), d, m),
            );
            {
                let (d_scale, d_bias) = g_pair!(&name("ln2.scale"), &name("ln2.bias"));
                layer_norm_backward_rows(
                    &d_ln2_out,
                    &bt.ln2_xhat,
                    &bt.ln2_rstd,
                    t(&name("ln2.scale")),
                    seq,
                    d,
                    d_scale,
                    d_bias,
                    &mut d_h,
                );
            }

            // h = x_in + attn_out(ln1(x_in)).
            let mut d_x_in = d_h.clone();
            mul_atb_into(
                g!(&name("attn.out.weight")),
                MatRef::new(&bt.ctx, seq, d),
                MatRef::new(&d_h, seq, d),
            );
            sum_rows_into(g!(&name("attn.out.bias")), &d_h);
            let mut d_ctx = vec![T::zero(); seq * d];
            mul_abt_into(
                &mut d_ctx,
                MatRef::new(&d_h, seq, d),
                MatRef::new(t(&name("attn.out.weight")), d, d),
            );

            let mut d_q = vec![T::zero(); seq * d];
            let mut d_k = vec![T::zero(); seq * d];
            let mut d_v = vec![T::zero(); seq * d];
            for h in 0..heads {
                gather_head(&d_ctx, seq, d, h, dh, &mut d_ctx_h);
                let a_h = &bt.attn[h * seq * seq..(h + 1) * seq * seq];

                // ctx_h = A V_h.
                gather_head(&bt.v, seq, d, h, dh, &mut head_buf);
                d_a.iter_mut().for_each(|z| *z = T::zero());
                mul_abt_into(
                    &mut d_a,
                    MatRef::new(&d_ctx_h, seq, dh),
                    MatRef::new(&head_buf, seq, dh),
                );
                d_head_buf.iter_mut().for_each(|z| *z = T::zero());
                mul_atb_into(
                    &mut d_head_buf,
                    MatRef::new(a_h, seq, seq),
                    MatRef::new(&d_ctx_h, seq, dh),
                );
                scatter_head(&mut d_v, seq, d, h, dh, &d_head_buf);

                // A = softmax(Q_h K_hᵀ / sqrt(dh)).
                softmax_backward_rows(&mut d_a, a_h, seq, seq);
                for s in d_a.iter_mut() {
                    *s = s.mul(inv_sqrt_dh);
                }
                gather_head(&bt.k, seq, d, h, dh, &mut head_buf);
                d_head_buf.iter_mut().for_each(|z| *z = T::zero());
                mul_into(
                    &mut d_head_buf,
                    MatRef::new(&d_a, seq, seq),
                    MatRef::new(&head_buf, seq, dh),
                );
                scatter_head(&mut d_q, seq, d, h, dh, &d_head_buf);
                gather_head(&bt.q, seq, d, h, dh, &mut head_buf);
                d_head_buf.iter_mut().for_each(|z| *z = T::zero());
                mul_atb_into(
                    &mut d_head_buf,
                    MatRef::new(&d_a, seq, seq),
                    MatRef::new(&head_buf, seq, dh),
                );
                scatter_head(&mut d_k, seq, d, h, dh, &d_head_buf);
            }

            let mut d_ln1_out = vec![T::zero(); seq * d];
            for (proj, d_proj) in [("attn.q", &d_q), ("attn.k", &d_k), ("attn.v", &d_v)] {
                mul_atb_into(
                    g!(&name(&format!("{proj}.weight"))),
                    MatRef::new(&bt.ln1_out, seq, d),
                    MatRef::new(d_proj, seq, d),
                );
                sum_rows_into(g!(&name(&format!("{proj}.bias"))), d_proj);
                mul_abt_into(
                    &mut d_ln1_out,
                    MatRef::new(d_proj, seq, d),
                    MatRef::new(t(&name(&format!("{proj}.weight"))), d, d),
                );
            }
            {
                let (d_scale, d_bias) = g_pair!(&name("ln1.scale"), &name("ln1.bias"));
                layer_norm_backward_rows(
                    &d_ln1_out,
                    &bt.ln1_xhat,
                    &bt.ln1_rstd,
                    t(&name("ln1.scale")),
                    seq,
                    d,
                    d_scale,
                    d_bias,
                    &mut d_x_in,
                );
            }
            d_x = d_x_in;
        }

        // Embedding: tokens = [class; patches·W + b] + pos.
        sum_rows_into(g!("pos_embed"), &d_x);
        sum_rows_into(g!("class_token"), &d_x[..d]);
        sum_rows_into(g!("patch_embed.bias"), &d_x[d..]);
        mul_atb_into(
            g!("patch_embed.weight"),
            MatRef::new(&trace.patches, n_patches, pdim),
            MatRef::new(&d_x[d..], n_patches, d),
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    
    use super::super::{ModelConfig, ParamBuf};
    use super::*;
    use crate::rng::Rng;
    

    #[test]
    fn analytic_gradients_match_finite_differences_on_sampled_indices() {
        // A different seed from the check-module test, so two independent
        // random models are covered by default test runs.
        let report = super::super::check::gradcheck(ModelConfig::tiny(), 21, 2).unwrap();
        assert!(report.passed(), "worst relative error {}", report.worst());
    }

    #[test]
    fn zero_output_gradient_yields_zero_parameter_gradients() {
        let vit = Vit::new(ModelConfig::tiny()).unwrap();
        let params = ParamBuf::<f64>::init(&vit.layout, 31);
        let mut rng = Rng::new(32);
        let pixels: Vec<f64> = (0..64 * 64).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let trace = vit.forward(&params, &pixels).unwrap();
        let mut grads = ParamBuf::<f64>::zeros(&vit.layout);
        vit.backward(&params, &trace, &vec![0.0; 2048], &mut grads).unwrap();
        assert!(grads.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dead_relu_units_block_all_upstream_gradients() {
        let vit = Vit::new(ModelConfig::tiny()).unwrap();
        let mut params = ParamBuf::<f64>::init(&vit.layout, 41);
        // Forcing every first-head-layer pre-activation negative kills
        // the only path from the encoder to the output.
        let b0 = vit.layout.find("head.fc0.bias").unwrap();
        for v in &mut params.data[b0.offset..b0.offset + b0.len] {
            *v = -1e3;
        }
        let mut rng = Rng::new(42);
        let pixels: Vec<f64> = (0..64 * 64).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let trace = vit.forward(&params, &pixels).unwrap();
        assert!(trace.head_pre[0].iter().all(|&a| a < 0.0));
        let mut grads = ParamBuf::<f64>::zeros(&vit.layout);
        let d_out: Vec<f64> = (0..2048).map(|_| rng.normal()).collect();
        vit.backward(&params, &trace, &d_out, &mut grads).unwrap();
        let bias2 = vit.layout.find("head.fc2.bias").unwrap();
        for info in &vit.layout.tensors {
            let slice = &grads.data[info.offset..info.offset + info.len];
            if info.name == bias2.name {
                assert!(slice.iter().any(|&g| g != 0.0));
            } else {
                assert!(
                    slice.iter().all(|&g| g == 0.0),
                    "{} should be gradient-dead",
                    info.name
                );
            }
        }
    }
}
