use crate::error::{Error, Result};
use crate::tensor::{ParamTag, ParamTree};

/// Adam hyper-parameters with a separate epsilon for RRE expert tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    /// Epsilon for dense and embedding tensors.
    pub eps_dense: f64,
    /// Epsilon for RRE expert tensors; at most `eps_dense`.
    pub eps_rre: f64,
    pub peak_lr: f64,
    pub end_lr: f64,
    pub warmup_steps: u64,
    pub decay_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.8,
            beta2: 0.95,
            eps_dense: 1e-8,
            eps_rre: 1e-20,
            peak_lr: 1e-3,
            end_lr: 2e-5,
            warmup_steps: 5_000,
            decay_steps: 180_000,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} = {b} must lie in [0, 1)")));
            }
        }
        if !(self.eps_rre >= 0.0 && self.eps_rre <= self.eps_dense) {
            return Err(Error::Config(format!(
                "eps_rre {} must be within [0, eps_dense {}]",
                self.eps_rre, self.eps_dense
            )));
        }
        if self.warmup_steps > self.decay_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} exceeds decay_steps {}",
                self.warmup_steps, self.decay_steps
            )));
        }
        if !(self.peak_lr >= 0.0 && self.end_lr >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        Ok(())
    }

    /// Epsilon a tensor with `tag` receives.
    pub fn eps_for(&self, tag: &ParamTag) -> f64 {
        if tag.is_rre() {
            self.eps_rre
        } else {
            self.eps_dense
        }
    }
}

/// Linear warmup `0 -> peak` over `warmup_steps`, linear decay to `end_lr`
/// at `decay_steps`, then constant.
pub fn lr_at(config: &AdamConfig, step: u64) -> f64 {
    let (w, d) = (config.warmup_steps, config.decay_steps);
    if step < w {
        config.peak_lr * step as f64 / w as f64
    } else if step < d {
        let frac = (step - w) as f64 / (d - w) as f64;
        config.peak_lr + (config.end_lr - config.peak_lr) * frac
    } else {
        config.end_lr
    }
}

/// First and second moments mirroring the parameter tree.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamTree,
    pub v: ParamTree,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamTree) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Epsilon that was used in the denominator of one tensor's update.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsRecord {
    pub name: String,
    pub tag: ParamTag,
    pub eps: f64,
}

/// One bias-corrected Adam update, `p -= lr * m_hat / (sqrt(v_hat) + eps)`
/// with `eps` picked per tensor by its tag. Returns the epsilon applied to
/// each tensor.
pub fn adam_step(
    params: &mut ParamTree,
    grads: &ParamTree,
    state: &mut AdamState,
    config: &AdamConfig,
    lr: f64,
) -> Result<Vec<EpsRecord>> {
    params.check_aligned(grads)?;
    params.check_aligned(&state.m)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let (b1, b2) = (config.beta1, config.beta2);
    let mut records = Vec::with_capacity(params.len());

    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((name, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        let eps = config.eps_for(&p.tag);
        let pd = p.tensor.data_mut();
        let md = m.tensor.data_mut();
        let vd = v.tensor.data_mut();
        for (i, &gi) in g.tensor.data().iter().enumerate() {
            md[i] = b1 * md[i] + (1.0 - b1) * gi;
            vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        records.push(EpsRecord {
            name: name.to_string(),
            tag: p.tag,
            eps,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_tree(value: f64, tag: ParamTag) -> ParamTree {
        let mut t = ParamTree::new();
        t.insert("p", Tensor::vector(vec![value]), tag).unwrap();
        t
    }

    #[test]
    fn defaults_validate() {
        AdamConfig::default().validate().unwrap();
        let bad = AdamConfig {
            eps_rre: 1e-6,
            ..AdamConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let c = AdamConfig {
            peak_lr: 1.0,
            end_lr: 0.1,
            warmup_steps: 10,
            decay_steps: 100,
            ..AdamConfig::default()
        };
        assert_eq!(lr_at(&c, 0), 0.0);
        assert_eq!(lr_at(&c, 5), 0.5);
        assert_eq!(lr_at(&c, 10), 1.0);
        assert!((lr_at(&c, 55) - 0.55).abs() < 1e-15);
        assert_eq!(lr_at(&c, 100), 0.1);
        assert_eq!(lr_at(&c, 10_000), 0.1);
        assert_eq!(lr_at(&AdamConfig::default(), 180_000), 2e-5);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_tree(3.0, ParamTag::Dense);
        let mut s = AdamState::new(&p);
        s.m.tensor_mut("p").unwrap().data_mut()[0] = 0.5;
        let g = scalar_tree(0.0, ParamTag::Dense);
        let cfg = AdamConfig::default();
        // With a non-zero first moment the parameter moves; from a fresh
        // state it must not.
        let mut fresh = AdamState::new(&p);
        let before = p.clone();
        adam_step(&mut p, &g, &mut fresh, &cfg, 0.1).unwrap();
        assert_eq!(p, before);
        adam_step(&mut p, &g, &mut s, &cfg, 0.1).unwrap();
        assert_eq!(s.m.tensor("p").unwrap().data()[0], 0.4);
    }

    #[test]
    fn closed_form_single_step() {
        let mut p = scalar_tree(0.0, ParamTag::Dense);
        let mut s = AdamState::new(&p);
        let g = scalar_tree(1.0, ParamTag::Dense);
        let rec = adam_step(&mut p, &g, &mut s, &AdamConfig::default(), 0.1).unwrap();
        assert!((s.m.tensor("p").unwrap().data()[0] - 0.2).abs() < 1e-15);
        assert!((s.v.tensor("p").unwrap().data()[0] - 0.05).abs() < 1e-15);
        assert!((p.tensor("p").unwrap().data()[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(rec[0].eps, 1e-8);
    }

    #[test]
    fn small_eps_dominates_tiny_second_moment() {
        let rre = ParamTag::Rre {
            domain: 0,
            layer: 0,
            expert: 0,
        };
        let cfg = AdamConfig::default();
        let mut moved = Vec::new();
        for tag in [ParamTag::Dense, rre] {
            let mut p = scalar_tree(0.0, tag);
            let mut s = AdamState::new(&p);
            // v_hat = g^2 = 1e-30 after one step.
            let g = scalar_tree(1e-15, tag);
            let rec = adam_step(&mut p, &g, &mut s, &cfg, 1e-3).unwrap();
            assert_eq!(rec[0].eps, cfg.eps_for(&tag));
            moved.push(-p.tensor("p").unwrap().data()[0]);
        }
        assert!(moved[1] > moved[0], "{moved:?}");
    }

    #[test]
    fn tree_mismatch_rejected() {
        let mut p = scalar_tree(1.0, ParamTag::Dense);
        let mut s = AdamState::new(&p);
        let mut g = ParamTree::new();
        g.insert("q", Tensor::vector(vec![1.0]), ParamTag::Dense).unwrap();
        assert!(matches!(
            adam_step(&mut p, &g, &mut s, &AdamConfig::default(), 0.1),
            Err(Error::TreeMismatch(_))
        ));
    }
}
