//! The mixed dense/sparse decoder.
//!
//! Bottom `M` layers are shared dense transformer layers. The top `N` layers
//! keep a dense attention sub-layer but replace the FFN with per-domain
//! experts chosen by the routing table from each position's input token ID.
//! The final layer is a query layer whose attention queries come from a
//! learned next-position embedding. Word embeddings are split into slots;
//! each domain reads (and projects its output through) one slot.

mod config;
mod forward;

pub use config::{count_params, detect_mode, ArchMode, ModelConfig};
pub use forward::{next_token_targets, ForwardCache};

use crate::error::{Error, Result};
use crate::rng::PrngState;
use crate::routing::{RoutingSpec, RoutingTable};
use crate::tensor::{ParamTag, ParamTree, Tensor};

/// Parameter names used by the decoder.
pub mod names {
    pub fn word_embedding(slot: usize) -> String {
        format!("embed.word.slot{slot}")
    }

    pub const POSITION_EMBEDDING: &str = "embed.pos";
    pub const FINAL_LN_GAMMA: &str = "final_ln.gamma";
    pub const FINAL_LN_BETA: &str = "final_ln.beta";

    pub fn layer(layer: usize, leaf: &str) -> String {
        format!("layer{layer}.{leaf}")
    }

    pub fn query_pos(layer: usize) -> String {
        format!("layer{layer}.query_pos")
    }

    pub fn dense_ffn(layer: usize, leaf: &str) -> String {
        format!("layer{layer}.ffn.{leaf}")
    }

    pub fn expert(layer: usize, domain: usize, expert: usize, leaf: &str) -> String {
        format!("layer{layer}.rre.domain{domain}.expert{expert}.{leaf}")
    }

    pub const ATTENTION_LEAVES: [&str; 12] = [
        "ln1.gamma",
        "ln1.beta",
        "attn.wq",
        "attn.bq",
        "attn.wk",
        "attn.bk",
        "attn.wv",
        "attn.bv",
        "attn.wo",
        "attn.bo",
        "ln2.gamma",
        "ln2.beta",
    ];

    pub const FFN_LEAVES: [&str; 4] = ["w1", "b1", "w2", "b2"];
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamTree,
    /// `None` exactly when the config has no RRE layers.
    pub routing: Option<RoutingTable>,
}

/// Shapes of one FFN block keyed by leaf name.
fn ffn_shapes(c: &ModelConfig) -> [(&'static str, Vec<usize>); 4] {
    [
        ("w1", vec![c.hidden, c.ffn]),
        ("b1", vec![c.ffn]),
        ("w2", vec![c.ffn, c.hidden]),
        ("b2", vec![c.hidden]),
    ]
}

fn attention_shape(c: &ModelConfig, leaf: &str) -> Vec<usize> {
    let d = c.hidden;
    if leaf.starts_with("attn.w") {
        vec![d, d]
    } else {
        vec![d]
    }
}

/// Kind of initial value a leaf receives.
#[derive(Clone, Copy)]
enum Init {
    Normal,
    Zero,
    One,
}

fn init_kind(name: &str) -> Init {
    if name.ends_with("gamma") {
        Init::One
    } else if name.ends_with("beta") || name.rsplit('.').next().is_some_and(|l| l.starts_with('b')) {
        Init::Zero
    } else {
        Init::Normal
    }
}

/// Walks the parameter layout in canonical order.
fn layout(c: &ModelConfig) -> Vec<(String, Vec<usize>, ParamTag)> {
    let d = c.hidden;
    let mut out = Vec::new();
    for s in 0..c.embedding_slots {
        out.push((
            names::word_embedding(s),
            vec![c.vocab, d],
            ParamTag::Embedding { slot: s },
        ));
    }
    out.push((
        names::POSITION_EMBEDDING.into(),
        vec![c.max_seq_len, d],
        ParamTag::Dense,
    ));
    for layer in 0..c.total_layers() {
        if c.is_query_layer(layer) {
            out.push((names::query_pos(layer), vec![c.max_seq_len, d], ParamTag::Dense));
        }
        for leaf in names::ATTENTION_LEAVES {
            out.push((names::layer(layer, leaf), attention_shape(c, leaf), ParamTag::Dense));
        }
        if c.is_rre_layer(layer) {
            let rre_layer = layer - c.dense_layers;
            for domain in 0..c.num_domains {
                for expert in 0..c.experts_per_domain {
                    let tag = ParamTag::Rre {
                        domain,
                        layer: rre_layer,
                        expert,
                    };
                    for (leaf, shape) in ffn_shapes(c) {
                        out.push((names::expert(layer, domain, expert, leaf), shape, tag));
                    }
                }
            }
        } else {
            for (leaf, shape) in ffn_shapes(c) {
                out.push((names::dense_ffn(layer, leaf), shape, ParamTag::Dense));
            }
        }
    }
    out.push((names::FINAL_LN_GAMMA.into(), vec![d], ParamTag::Dense));
    out.push((names::FINAL_LN_BETA.into(), vec![d], ParamTag::Dense));
    out
}

impl Model {
    /// Fresh model: weights `N(0, 1) / sqrt(hidden)`, biases zero, norm
    /// gains one, drawn in layout order from one stream seeded by
    /// `init_seed`.
    pub fn init(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let mut rng = PrngState::new(config.init_seed);
        let scale = 1.0 / (config.hidden as f64).sqrt();
        let mut params = ParamTree::new();
        for (name, shape, tag) in layout(&config) {
            let n: usize = shape.iter().product();
            let data = match init_kind(&name) {
                Init::Normal => (0..n).map(|_| rng.next_normal() * scale).collect(),
                Init::Zero => vec![0.0; n],
                Init::One => vec![1.0; n],
            };
            params.insert(name, Tensor::new(shape, data)?, tag)?;
        }
        let routing = Self::build_routing(&config)?;
        Ok(Model {
            config,
            params,
            routing,
        })
    }

    pub fn routing_spec(config: &ModelConfig) -> Option<RoutingSpec> {
        (config.rre_layers > 0).then(|| {
            RoutingSpec::new(
                config.num_domains,
                config.rre_layers,
                config.experts_per_domain,
                config.vocab,
            )
            .with_seed(config.routing_seed)
        })
    }

    pub fn build_routing(config: &ModelConfig) -> Result<Option<RoutingTable>> {
        Self::routing_spec(config).map(RoutingTable::build).transpose()
    }

    /// Assembles a model from parts and checks that they fit together.
    pub fn from_parts(config: ModelConfig, params: ParamTree, routing: Option<RoutingTable>) -> Result<Model> {
        let m = Model {
            config,
            params,
            routing,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let expected = layout(c);
        if expected.len() != self.params.len() {
            return Err(Error::TreeMismatch(format!(
                "config implies {} tensors, tree has {}",
                expected.len(),
                self.params.len()
            )));
        }
        for ((name, shape, tag), (have_name, p)) in expected.iter().zip(self.params.iter()) {
            if name != have_name || shape.as_slice() != p.tensor.shape() || *tag != p.tag {
                return Err(Error::TreeMismatch(format!(
                    "expected {name} {shape:?} {tag:?}, found {have_name} {:?} {:?}",
                    p.tensor.shape(),
                    p.tag
                )));
            }
        }
        match (&self.routing, Self::routing_spec(c)) {
            (None, None) => Ok(()),
            (Some(t), Some(spec)) => {
                let s = t.spec();
                if (s.num_domains, s.num_rre_layers, s.experts_per_domain, s.vocab_size)
                    != (
                        spec.num_domains,
                        spec.num_rre_layers,
                        spec.experts_per_domain,
                        spec.vocab_size,
                    )
                {
                    return Err(Error::Config(format!(
                        "routing table {s:?} does not match model config"
                    )));
                }
                Ok(())
            }
            (Some(_), None) => Err(Error::Config("dense model carries a routing table".into())),
            (None, Some(_)) => Err(Error::Config("model with RRE layers lacks a routing table".into())),
        }
    }

    pub fn mode(&self) -> ArchMode {
        self.config.mode()
    }

    /// Input hidden states: word row of the domain's slot plus the learned
    /// position embedding.
    pub fn embed(&self, domain: usize, token_ids: &[u32]) -> Result<Tensor> {
        let c = &self.config;
        let slot = c.slot_of(domain)?;
        if token_ids.len() > c.max_seq_len {
            return Err(Error::Shape(format!(
                "sequence length {} exceeds max_seq_len {}",
                token_ids.len(),
                c.max_seq_len
            )));
        }
        let word = self.params.tensor(&names::word_embedding(slot))?;
        let pos = self.params.tensor(names::POSITION_EMBEDDING)?;
        let mut x = Tensor::zeros(&[token_ids.len(), c.hidden]);
        for (t, &tok) in token_ids.iter().enumerate() {
            let tok = tok as usize;
            if tok >= c.vocab {
                return Err(Error::out_of_range("token", tok, c.vocab));
            }
            let row = x.row_mut(t);
            for ((o, &w), &p) in row.iter_mut().zip(word.row(tok)).zip(pos.row(t)) {
                *o = w + p;
            }
        }
        Ok(x)
    }

    /// Row of the stacked `(slots * vocab) x hidden` embedding matrix that a
    /// token of `domain` reads.
    pub fn embedding_row_index(&self, domain: usize, token_id: usize) -> Result<usize> {
        Ok(token_id + self.config.slot_of(domain)? * self.config.vocab)
    }

    /// Names of every parameter owned by one expert of one RRE layer.
    pub fn expert_param_names(&self, rre_layer: usize, domain: usize, expert: usize) -> Vec<String> {
        let layer = self.config.dense_layers + rre_layer;
        names::FFN_LEAVES
            .iter()
            .map(|leaf| names::expert(layer, domain, expert, leaf))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelConfig {
        ModelConfig {
            dense_layers: 1,
            rre_layers: 1,
            heads: 2,
            hidden: 8,
            ffn: 16,
            vocab: 32,
            embedding_slots: 1,
            num_domains: 2,
            experts_per_domain: 2,
            max_seq_len: 8,
            domain_slots: vec![0, 0],
            init_seed: 3,
            routing_seed: 0,
        }
    }

    #[test]
    fn init_is_deterministic_and_counted() {
        let a = Model::init(toy()).unwrap();
        let b = Model::init(toy()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params.num_elements(), toy().count_params());
        a.validate().unwrap();
    }

    #[test]
    fn single_expert_per_domain() {
        let c = ModelConfig {
            experts_per_domain: 1,
            ..toy()
        };
        let m = Model::init(c).unwrap();
        let experts: Vec<_> = m
            .params
            .iter()
            .filter_map(|(_, p)| match p.tag {
                ParamTag::Rre { domain, expert, .. } => Some((domain, expert)),
                _ => None,
            })
            .collect();
        assert_eq!(experts.len(), 2 * 4);
        assert!(experts.iter().all(|&(_, e)| e == 0));
    }

    #[test]
    fn slot_rows() {
        let c = ModelConfig {
            embedding_slots: 2,
            domain_slots: ModelConfig::code_slot_map(2, 2, &[1]),
            ..toy()
        };
        let m = Model::init(c).unwrap();
        assert_eq!(m.embedding_row_index(1, 5).unwrap(), 37);
        assert_eq!(m.embedding_row_index(0, 5).unwrap(), 5);

        let shared = Model::init(toy()).unwrap();
        let a = shared.embed(0, &[4]).unwrap();
        let b = shared.embed(1, &[4]).unwrap();
        assert_eq!(a, b);
        assert!(shared.embed(0, &[32]).is_err());
    }

    #[test]
    fn dense_model_has_no_routing() {
        let c = ModelConfig {
            dense_layers: 2,
            rre_layers: 0,
            ..toy()
        };
        let m = Model::init(c).unwrap();
        assert!(m.routing.is_none());
        assert!(m.params.iter().all(|(_, p)| !p.tag.is_rre()));
        assert_eq!(m.mode(), ArchMode::Dense);
    }

    #[test]
    fn bad_config_rejected() {
        let c = ModelConfig { hidden: 9, ..toy() };
        assert!(matches!(Model::init(c), Err(Error::Config(_))));
        let c = ModelConfig {
            domain_slots: vec![0],
            ..toy()
        };
        assert!(Model::init(c).is_err());
    }
}
