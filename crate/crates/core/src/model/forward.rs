use crate::error::{Error, Result};
use crate::model::{names, Model};
use crate::tensor::ops::{self, AttentionCache, LayerNormCache};
use crate::tensor::{ParamTree, Tensor};

struct FfnCache {
    input: Tensor,
    pre_act: Tensor,
    act: Tensor,
}

/// Rows of the layer handled by one expert, in position order.
struct ExpertBatch {
    domain: usize,
    expert: usize,
    rows: Vec<usize>,
    cache: FfnCache,
}

enum FfnBlockCache {
    Dense(FfnCache),
    Routed(Vec<ExpertBatch>),
}

struct LayerCache {
    ln1: LayerNormCache,
    normed: Tensor,
    q_input: Option<Tensor>,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    attn: AttentionCache,
    ctx: Tensor,
    ln2: LayerNormCache,
    ffn: FfnBlockCache,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    tokens: Vec<u32>,
    slot: usize,
    layers: Vec<LayerCache>,
    final_ln: LayerNormCache,
    final_h: Tensor,
}

/// Next-token targets for a sequence. Position `t` predicts `tokens[t+1]`;
/// the last position and any position whose target is `pad` are masked.
pub fn next_token_targets(tokens: &[u32], pad: Option<u32>) -> (Vec<usize>, Vec<bool>) {
    let n = tokens.len();
    let mut targets = vec![0usize; n];
    let mut mask = vec![false; n];
    for t in 0..n.saturating_sub(1) {
        let next = tokens[t + 1];
        targets[t] = next as usize;
        mask[t] = Some(next) != pad;
    }
    (targets, mask)
}

fn ffn_forward(params: &ParamTree, prefix: &dyn Fn(&str) -> String, x: Tensor) -> Result<(Tensor, FfnCache)> {
    let pre_act = ops::affine(&x, params.tensor(&prefix("w1"))?, params.tensor(&prefix("b1"))?)?;
    let act = ops::gelu(&pre_act);
    let out = ops::affine(&act, params.tensor(&prefix("w2"))?, params.tensor(&prefix("b2"))?)?;
    Ok((out, FfnCache { input: x, pre_act, act }))
}

/// Accumulates FFN parameter gradients into `grads`; returns `d input`.
fn ffn_backward(
    params: &ParamTree,
    grads: &mut ParamTree,
    prefix: &dyn Fn(&str) -> String,
    cache: &FfnCache,
    d_out: &Tensor,
) -> Result<Tensor> {
    let w2 = params.tensor(&prefix("w2"))?;
    let g2 = ops::affine_backward(&cache.act, w2, d_out)?;
    let d_pre = ops::gelu_backward(&cache.pre_act, &g2.dx)?;
    let w1 = params.tensor(&prefix("w1"))?;
    let g1 = ops::affine_backward(&cache.input, w1, &d_pre)?;
    grads.tensor_mut(&prefix("w2"))?.add_assign(&g2.dw)?;
    grads.tensor_mut(&prefix("b2"))?.add_assign(&g2.db)?;
    grads.tensor_mut(&prefix("w1"))?.add_assign(&g1.dw)?;
    grads.tensor_mut(&prefix("b1"))?.add_assign(&g1.db)?;
    Ok(g1.dx)
}

impl Model {
    /// Logits `(len, vocab)` for a token sequence of `domain`.
    pub fn forward(&self, domain: usize, tokens: &[u32]) -> Result<Tensor> {
        Ok(self.forward_cached(domain, tokens)?.0)
    }

    pub fn forward_cached(&self, domain: usize, tokens: &[u32]) -> Result<(Tensor, ForwardCache)> {
        let c = &self.config;
        if domain >= c.num_domains {
            return Err(Error::out_of_range("domain", domain, c.num_domains));
        }
        if tokens.is_empty() {
            return Err(Error::Shape("empty token sequence".into()));
        }
        let slot = c.slot_of(domain)?;
        let p = &self.params;
        let n = tokens.len();
        let mut h = self.embed(domain, tokens)?;
        let mut layers = Vec::with_capacity(c.total_layers());

        for layer in 0..c.total_layers() {
            let w = |leaf: &str| p.tensor(&names::layer(layer, leaf));
            let (normed, ln1) = ops::layer_norm(&h, w("ln1.gamma")?, w("ln1.beta")?)?;
            let q_input = if c.is_query_layer(layer) {
                let qp = p.tensor(&names::query_pos(layer))?;
                Some(qp.gather_rows(&(0..n).collect::<Vec<_>>()))
            } else {
                None
            };
            let q = ops::affine(q_input.as_ref().unwrap_or(&normed), w("attn.wq")?, w("attn.bq")?)?;
            let k = ops::affine(&normed, w("attn.wk")?, w("attn.bk")?)?;
            let v = ops::affine(&normed, w("attn.wv")?, w("attn.bv")?)?;
            let (ctx, attn) = ops::attention(&q, &k, &v, c.heads, true)?;
            let o = ops::affine(&ctx, w("attn.wo")?, w("attn.bo")?)?;
            h.add_assign(&o)?;

            let (ffn_in, ln2) = ops::layer_norm(&h, w("ln2.gamma")?, w("ln2.beta")?)?;
            let ffn = if c.is_rre_layer(layer) {
                let rre_layer = layer - c.dense_layers;
                let table = self
                    .routing
                    .as_ref()
                    .ok_or_else(|| Error::Config("missing routing table".into()))?;
                let route = table.row(domain, rre_layer)?;
                let e = c.experts_per_domain;
                let mut groups: Vec<Vec<usize>> = vec![Vec::new(); e];
                for (t, &tok) in tokens.iter().enumerate() {
                    let global = route[tok as usize] as usize;
                    groups[global - domain * e].push(t);
                }
                let mut batches = Vec::new();
                let mut out = Tensor::zeros(&[n, c.hidden]);
                for (expert, rows) in groups.into_iter().enumerate() {
                    if rows.is_empty() {
                        continue;
                    }
                    let prefix = |leaf: &str| names::expert(layer, domain, expert, leaf);
                    let (y, cache) = ffn_forward(p, &prefix, ffn_in.gather_rows(&rows))?;
                    for (i, &r) in rows.iter().enumerate() {
                        out.row_mut(r).copy_from_slice(y.row(i));
                    }
                    batches.push(ExpertBatch {
                        domain,
                        expert,
                        rows,
                        cache,
                    });
                }
                h.add_assign(&out)?;
                FfnBlockCache::Routed(batches)
            } else {
                let prefix = |leaf: &str| names::dense_ffn(layer, leaf);
                let (y, cache) = ffn_forward(p, &prefix, ffn_in)?;
                h.add_assign(&y)?;
                FfnBlockCache::Dense(cache)
            };

            layers.push(LayerCache {
                ln1,
                normed,
                q_input,
                q,
                k,
                v,
                attn,
                ctx,
                ln2,
                ffn,
            });
        }

        let (final_h, final_ln) =
            ops::layer_norm(&h, p.tensor(names::FINAL_LN_GAMMA)?, p.tensor(names::FINAL_LN_BETA)?)?;
        let logits = ops::matmul_nt(&final_h, p.tensor(&names::word_embedding(slot))?)?;
        let cache = ForwardCache {
            tokens: tokens.to_vec(),
            slot,
            layers,
            final_ln,
            final_h,
        };
        Ok((logits, cache))
    }

    /// Masked mean cross entropy of `logits` against `targets`.
    pub fn loss(logits: &Tensor, targets: &[usize], mask: &[bool]) -> Result<f64> {
        ops::cross_entropy(logits, targets, mask)
    }

    /// Loss and full gradient tree for one sequence.
    pub fn loss_and_grad(
        &self,
        domain: usize,
        tokens: &[u32],
        targets: &[usize],
        mask: &[bool],
    ) -> Result<(f64, ParamTree)> {
        let (logits, cache) = self.forward_cached(domain, tokens)?;
        let loss = ops::cross_entropy(&logits, targets, mask)?;
        let d_logits = ops::cross_entropy_backward(&logits, targets, mask)?;
        let grads = self.backward(&cache, &d_logits)?;
        Ok((loss, grads))
    }

    /// Next-token loss and gradients of a sequence.
    pub fn lm_loss_and_grad(&self, domain: usize, tokens: &[u32], pad: Option<u32>) -> Result<(f64, ParamTree)> {
        let (targets, mask) = next_token_targets(tokens, pad);
        self.loss_and_grad(domain, tokens, &targets, &mask)
    }

    pub fn lm_loss(&self, domain: usize, tokens: &[u32], pad: Option<u32>) -> Result<f64> {
        let (targets, mask) = next_token_targets(tokens, pad);
        let logits = self.forward(domain, tokens)?;
        ops::cross_entropy(&logits, &targets, &mask)
    }

    /// Back-propagates `d_logits` through the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &Tensor) -> Result<ParamTree> {
        let c = &self.config;
        let p = &self.params;
        let mut grads = p.zeros_like();
        let n = cache.tokens.len();
        let word_name = names::word_embedding(cache.slot);

        let (d_final, d_word_out) = ops::matmul_nt_backward(&cache.final_h, p.tensor(&word_name)?, d_logits)?;
        grads.tensor_mut(&word_name)?.add_assign(&d_word_out)?;
        let (mut dh, dg, db) = ops::layer_norm_backward(&cache.final_ln, p.tensor(names::FINAL_LN_GAMMA)?, &d_final)?;
        grads.tensor_mut(names::FINAL_LN_GAMMA)?.add_assign(&dg)?;
        grads.tensor_mut(names::FINAL_LN_BETA)?.add_assign(&db)?;

        for layer in (0..c.total_layers()).rev() {
            let lc = &cache.layers[layer];
            let w = |leaf: &str| p.tensor(&names::layer(layer, leaf));
            let gname = |leaf: &str| names::layer(layer, leaf);

            // h_out = h_mid + ffn(ln2(h_mid))
            let d_ffn_in = match &lc.ffn {
                FfnBlockCache::Dense(fc) => {
                    let prefix = |leaf: &str| names::dense_ffn(layer, leaf);
                    ffn_backward(p, &mut grads, &prefix, fc, &dh)?
                }
                FfnBlockCache::Routed(batches) => {
                    let mut d_in = Tensor::zeros(&[n, c.hidden]);
                    for b in batches {
                        let prefix = |leaf: &str| names::expert(layer, b.domain, b.expert, leaf);
                        let d_sub = ffn_backward(p, &mut grads, &prefix, &b.cache, &dh.gather_rows(&b.rows))?;
                        for (i, &r) in b.rows.iter().enumerate() {
                            d_in.row_mut(r).copy_from_slice(d_sub.row(i));
                        }
                    }
                    d_in
                }
            };
            let (d_mid, dg2, db2) = ops::layer_norm_backward(&lc.ln2, w("ln2.gamma")?, &d_ffn_in)?;
            grads.tensor_mut(&gname("ln2.gamma"))?.add_assign(&dg2)?;
            grads.tensor_mut(&gname("ln2.beta"))?.add_assign(&db2)?;
            dh.add_assign(&d_mid)?;

            // h_mid = h_in + attn(ln1(h_in))
            let go = ops::affine_backward(&lc.ctx, w("attn.wo")?, &dh)?;
            grads.tensor_mut(&gname("attn.wo"))?.add_assign(&go.dw)?;
            grads.tensor_mut(&gname("attn.bo"))?.add_assign(&go.db)?;
            let (dq, dk, dv) = ops::attention_backward(&lc.q, &lc.k, &lc.v, &lc.attn, &go.dx)?;
            let gk = ops::affine_backward(&lc.normed, w("attn.wk")?, &dk)?;
            let gv = ops::affine_backward(&lc.normed, w("attn.wv")?, &dv)?;
            let q_in = lc.q_input.as_ref().unwrap_or(&lc.normed);
            let gq = ops::affine_backward(q_in, w("attn.wq")?, &dq)?;
            for (leaf, g) in [
                ("attn.wk", &gk.dw),
                ("attn.bk", &gk.db),
                ("attn.wv", &gv.dw),
                ("attn.bv", &gv.db),
                ("attn.wq", &gq.dw),
                ("attn.bq", &gq.db),
            ] {
                grads.tensor_mut(&gname(leaf))?.add_assign(g)?;
            }
            let mut d_normed = gk.dx;
            d_normed.add_assign(&gv.dx)?;
            if lc.q_input.is_some() {
                let qp = grads.tensor_mut(&names::query_pos(layer))?;
                for t in 0..n {
                    for (a, &b) in qp.row_mut(t).iter_mut().zip(gq.dx.row(t)) {
                        *a += b;
                    }
                }
            } else {
                d_normed.add_assign(&gq.dx)?;
            }
            let (d_in, dg1, db1) = ops::layer_norm_backward(&lc.ln1, w("ln1.gamma")?, &d_normed)?;
            grads.tensor_mut(&gname("ln1.gamma"))?.add_assign(&dg1)?;
            grads.tensor_mut(&gname("ln1.beta"))?.add_assign(&db1)?;
            dh.add_assign(&d_in)?;
        }

        // Embedding lookup.
        let mut d_word = Tensor::zeros(&[c.vocab, c.hidden]);
        let mut d_pos = Tensor::zeros(&[c.max_seq_len, c.hidden]);
        for (t, &tok) in cache.tokens.iter().enumerate() {
            for (a, &b) in d_word.row_mut(tok as usize).iter_mut().zip(dh.row(t)) {
                *a += b;
            }
            d_pos.row_mut(t).copy_from_slice(dh.row(t));
        }
        grads.tensor_mut(&word_name)?.add_assign(&d_word)?;
        grads.tensor_mut(names::POSITION_EMBEDDING)?.add_assign(&d_pos)?;
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn toy() -> ModelConfig {
        ModelConfig {
            dense_layers: 1,
            rre_layers: 2,
            heads: 2,
            hidden: 8,
            ffn: 12,
            vocab: 20,
            embedding_slots: 2,
            num_domains: 3,
            experts_per_domain: 2,
            max_seq_len: 6,
            domain_slots: vec![0, 1, 0],
            init_seed: 17,
            routing_seed: 1,
        }
    }

    #[test]
    fn logits_shape_for_every_length() {
        let m = Model::init(toy()).unwrap();
        for len in 1..=6 {
            let toks: Vec<u32> = (0..len as u32).collect();
            let l = m.forward(1, &toks).unwrap();
            assert_eq!(l.shape(), &[len, 20]);
            assert!(l.is_finite());
        }
        assert!(m.forward(3, &[1]).is_err());
        assert!(m.forward(0, &[0; 7]).is_err());
    }

    #[test]
    fn targets_mask_last_and_pad() {
        let (t, m) = next_token_targets(&[5, 6, 9, 9], Some(9));
        assert_eq!(t, vec![6, 9, 9, 0]);
        assert_eq!(m, vec![true, false, false, false]);
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let logits = Tensor::zeros(&[3, 20]);
        let l = Model::loss(&logits, &[1, 2, 3], &[true; 3]).unwrap();
        assert!((l - 20f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_token_sequence_is_degenerate() {
        let m = Model::init(toy()).unwrap();
        assert!(matches!(m.lm_loss_and_grad(0, &[3], None), Err(Error::DegenerateBatch)));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = Model::init(toy()).unwrap();
        let toks = [3u32, 7, 1, 19, 4];
        let (_, grads) = m.lm_loss_and_grad(1, &toks, None).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (name, p) in m.params.iter() {
            let g = grads.tensor(name).unwrap();
            for i in (0..p.tensor.numel()).step_by(7) {
                let mut plus = m.clone();
                plus.params.tensor_mut(name).unwrap().data_mut()[i] += h;
                let mut minus = m.clone();
                minus.params.tensor_mut(name).unwrap().data_mut()[i] -= h;
                let num = (plus.lm_loss(1, &toks, None).unwrap() - minus.lm_loss(1, &toks, None).unwrap()) / (2.0 * h);
                let a = g.data()[i];
                worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-6));
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }
}
