use crate::error::Result;
use crate::model::Model;
use crate::rng::PrngState;
use crate::tensor::ParamTag;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub max_coords_per_tensor: usize,
    pub step: f64,
    /// Denominator floor of the relative error, so that coordinates whose
    /// true gradient is (near) zero are judged on absolute error.
    pub rel_floor: f64,
    pub seed: u64,
    pub pad: Option<u32>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            max_coords_per_tensor: 200,
            step: 1e-4,
            rel_floor: 1e-6,
            seed: 0,
            pad: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub dense_grad_norm: f64,
    pub rre_grad_norm: f64,
    pub embedding_grad_norm: f64,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "loss {:.6}", self.loss)?;
        writeln!(f, "coordinates checked {}", self.coords_checked)?;
        writeln!(f, "max relative error {:.3e}", self.max_rel_error)?;
        if let Some((name, idx)) = &self.worst {
            writeln!(f, "worst coordinate {name}[{idx}]")?;
        }
        writeln!(f, "dense grad norm {:.6e}", self.dense_grad_norm)?;
        writeln!(f, "rre grad norm {:.6e}", self.rre_grad_norm)?;
        write!(f, "embedding grad norm {:.6e}", self.embedding_grad_norm)
    }
}

/// Compares analytic gradients of the next-token loss against central
/// differences on up to `max_coords_per_tensor` random coordinates of
/// every tensor.
pub fn grad_check(model: &Model, domain: usize, tokens: &[u32], opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let (loss, grads) = model.lm_loss_and_grad(domain, tokens, opts.pad)?;
    let mut probe = model.clone();
    let mut rng = PrngState::new(opts.seed);
    let mut coords_checked = 0;
    let mut max_rel_error: f64 = 0.0;
    let mut worst = None;

    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    for name in &names {
        let n = model.params.tensor(name)?.numel();
        let mut idx: Vec<usize> = (0..n).collect();
        if n > opts.max_coords_per_tensor {
            rng.shuffle_in_place(&mut idx);
            idx.truncate(opts.max_coords_per_tensor);
            idx.sort_unstable();
        }
        let analytic = grads.tensor(name)?;
        for i in idx {
            let orig = probe.params.tensor(name)?.data()[i];
            probe.params.tensor_mut(name)?.data_mut()[i] = orig + opts.step;
            let plus = probe.lm_loss(domain, tokens, opts.pad)?;
            probe.params.tensor_mut(name)?.data_mut()[i] = orig - opts.step;
            let minus = probe.lm_loss(domain, tokens, opts.pad)?;
            probe.params.tensor_mut(name)?.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.rel_floor);
            coords_checked += 1;
            if rel > max_rel_error {
                max_rel_error = rel;
                worst = Some((name.clone(), i));
            }
        }
    }

    Ok(GradCheckReport {
        loss,
        coords_checked,
        max_rel_error,
        worst,
        dense_grad_norm: grads.norm_where(|t| matches!(t, ParamTag::Dense)),
        rre_grad_norm: grads.norm_where(ParamTag::is_rre),
        embedding_grad_norm: grads.norm_where(|t| matches!(t, ParamTag::Embedding { .. })),
    })
}
