//! Model surgery: growing a sparse model from a dense donor, and cutting a
//! single-domain sub-model out of a sparse one.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{names, ArchMode, Model, ModelConfig};
use crate::rng::PrngState;
use crate::tensor::{ParamTag, ParamTree, Tensor};

/// Ordered, duplicate-free token list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab::default();
        for t in tokens {
            let t = t.into();
            if v.index.contains_key(&t) {
                return Err(Error::Config(format!("duplicate vocab entry {t:?}")));
            }
            v.push(t);
        }
        Ok(v)
    }

    /// Placeholder vocabulary `#0 .. #n-1` for when only sizes are known.
    pub fn numbered(n: usize) -> Self {
        Vocab::new((0..n).map(|i| format!("#{i}"))).expect("distinct")
    }

    fn push(&mut self, token: String) {
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per non-empty line.
    pub fn from_lines(text: &str) -> Result<Self> {
        Vocab::new(text.lines().filter(|l| !l.is_empty()))
    }
}

/// Donor tokens first in donor order, then unseen addition tokens in
/// addition order. Donor IDs are unchanged.
pub fn merge_vocab(donor: &Vocab, addition: &Vocab) -> Vocab {
    let mut merged = donor.clone();
    for t in &addition.tokens {
        if merged.id(t).is_none() {
            merged.push(t.clone());
        }
    }
    merged
}

/// Embedding for `merged_vocab`: rows of tokens known to the donor are
/// copied, new rows are drawn from `N(0, 1)` in merged order.
pub fn inherit_embeddings(donor_emb: &Tensor, donor_vocab: &Vocab, merged_vocab: &Vocab, seed: u64) -> Result<Tensor> {
    if donor_emb.shape().len() != 2 || donor_emb.rows() != donor_vocab.len() {
        return Err(Error::Shape(format!(
            "donor embedding {:?} does not match donor vocab of {}",
            donor_emb.shape(),
            donor_vocab.len()
        )));
    }
    let h = donor_emb.cols();
    let mut rng = PrngState::new(seed);
    let mut out = Tensor::zeros(&[merged_vocab.len(), h]);
    for (i, tok) in merged_vocab.tokens().iter().enumerate() {
        match donor_vocab.id(tok) {
            Some(j) => out.row_mut(i).copy_from_slice(donor_emb.row(j)),
            None => out.row_mut(i).iter_mut().for_each(|x| *x = rng.next_normal()),
        }
    }
    Ok(out)
}

/// Doubles a single-slot embedding: rows `[v, 2v)` start as a copy of
/// rows `[0, v)`. `current_slots` must be 1.
pub fn extend_embedding_slots(emb: &Tensor, current_slots: usize) -> Result<Tensor> {
    if current_slots != 1 {
        return Err(Error::Config(format!(
            "embedding already has {current_slots} slots; only a single slot can be extended"
        )));
    }
    let mut data = emb.data().to_vec();
    data.extend_from_slice(emb.data());
    Tensor::new(vec![2 * emb.rows(), emb.cols()], data)
}

/// Dense model used as the initialization source.
#[derive(Debug, Clone)]
pub struct DonorModel {
    pub model: Model,
    pub vocab: Vocab,
}

impl DonorModel {
    pub fn new(model: Model, vocab: Vocab) -> Result<Self> {
        if model.mode() != ArchMode::Dense {
            return Err(Error::Config(format!(
                "donor must be a dense model, got {:?}",
                model.mode()
            )));
        }
        if model.config.embedding_slots != 1 {
            return Err(Error::Config("donor must have a single embedding slot".into()));
        }
        if model.config.vocab != vocab.len() {
            return Err(Error::Shape(format!(
                "donor vocab has {} tokens, model has {} rows",
                vocab.len(),
                model.config.vocab
            )));
        }
        Ok(Self { model, vocab })
    }

    /// FFN leaf of layer `layer`, whether stored as a dense FFN or as the
    /// single expert of a one-expert RRE layer.
    fn ffn_leaf(&self, layer: usize, leaf: &str) -> Result<&Tensor> {
        let p = &self.model.params;
        let dense = names::dense_ffn(layer, leaf);
        if p.contains(&dense) {
            p.tensor(&dense)
        } else {
            p.tensor(&names::expert(layer, 0, 0, leaf))
        }
    }
}

/// Builds `target` from a dense donor: attention, norms and positions are
/// copied layer by layer; every expert of every domain in an RRE layer is a
/// copy of the donor's FFN for that layer; word embeddings are inherited
/// over `merged_vocab` and doubled when `target` has two slots. The routing
/// table is built fresh from `target`.
pub fn inherit_model(donor: &DonorModel, merged_vocab: &Vocab, target: ModelConfig, seed: u64) -> Result<Model> {
    let dc = &donor.model.config;
    let checks = [
        ("layer count", dc.total_layers(), target.total_layers()),
        ("hidden", dc.hidden, target.hidden),
        ("ffn", dc.ffn, target.ffn),
        ("heads", dc.heads, target.heads),
        ("max_seq_len", dc.max_seq_len, target.max_seq_len),
        ("vocab", merged_vocab.len(), target.vocab),
    ];
    for (what, have, want) in checks {
        if have != want {
            return Err(Error::Shape(format!("{what}: donor/merged {have} vs target {want}")));
        }
    }
    if target.embedding_slots > 2 {
        return Err(Error::Config("inheritance supports one or two embedding slots".into()));
    }
    target.validate()?;

    let word = inherit_embeddings(
        donor.model.params.tensor(&names::word_embedding(0))?,
        &donor.vocab,
        merged_vocab,
        seed,
    )?;
    let slot_tensors = if target.embedding_slots == 2 {
        let doubled = extend_embedding_slots(&word, 1)?;
        let v = target.vocab;
        let all: Vec<usize> = (0..2 * v).collect();
        vec![doubled.gather_rows(&all[..v]), doubled.gather_rows(&all[v..])]
    } else {
        vec![word]
    };

    let skeleton = Model::init(target)?;
    let mut params = ParamTree::new();
    for (name, p) in skeleton.params.iter() {
        let tensor = match p.tag {
            ParamTag::Embedding { slot } => slot_tensors[slot].clone(),
            ParamTag::Rre { .. } => {
                let (layer, leaf) = split_expert_name(name)?;
                donor.ffn_leaf(layer, leaf)?.clone()
            }
            ParamTag::Dense => match dense_ffn_parts(name) {
                Some((layer, leaf)) => donor.ffn_leaf(layer, leaf)?.clone(),
                None => donor.model.params.tensor(name)?.clone(),
            },
        };
        if tensor.shape() != p.tensor.shape() {
            return Err(Error::Shape(format!(
                "{name}: donor {:?} vs target {:?}",
                tensor.shape(),
                p.tensor.shape()
            )));
        }
        params.insert(name, tensor, p.tag)?;
    }
    Model::from_parts(skeleton.config, params, skeleton.routing)
}

fn layer_of(name: &str) -> Option<usize> {
    name.strip_prefix("layer")?.split('.').next()?.parse().ok()
}

fn split_expert_name(name: &str) -> Result<(usize, &str)> {
    let layer = layer_of(name).ok_or_else(|| Error::TreeMismatch(format!("bad expert name {name}")))?;
    let leaf = name
        .rsplit('.')
        .next()
        .ok_or_else(|| Error::TreeMismatch(format!("bad expert name {name}")))?;
    Ok((layer, leaf))
}

fn dense_ffn_parts(name: &str) -> Option<(usize, &str)> {
    let layer = layer_of(name)?;
    let rest = name.split_once('.')?.1;
    rest.strip_prefix("ffn.").map(|leaf| (layer, leaf))
}

/// Which domain to cut out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubModelSpec {
    pub domain: usize,
}

/// Single-domain model holding the shared parameters, the target domain's
/// experts (re-indexed to `[0, e)`) and its embedding slot. Its forward on
/// any instance of that domain is bit-identical to the full model's.
pub fn extract_submodel(model: &Model, spec: SubModelSpec) -> Result<Model> {
    let c = &model.config;
    let domain = spec.domain;
    if domain >= c.num_domains {
        return Err(Error::out_of_range("domain", domain, c.num_domains));
    }
    let slot = c.slot_of(domain)?;
    let mut params = ParamTree::new();
    for (name, p) in model.params.iter() {
        match p.tag {
            ParamTag::Dense => params.insert(name, p.tensor.clone(), p.tag)?,
            ParamTag::Embedding { slot: s } if s == slot => params.insert(
                names::word_embedding(0),
                p.tensor.clone(),
                ParamTag::Embedding { slot: 0 },
            )?,
            ParamTag::Rre {
                domain: d,
                layer,
                expert,
            } if d == domain => {
                let (full_layer, leaf) = split_expert_name(name)?;
                params.insert(
                    names::expert(full_layer, 0, expert, leaf),
                    p.tensor.clone(),
                    ParamTag::Rre {
                        domain: 0,
                        layer,
                        expert,
                    },
                )?
            }
            _ => {}
        }
    }
    let config = ModelConfig {
        num_domains: 1,
        embedding_slots: 1,
        domain_slots: vec![0],
        ..c.clone()
    };
    let routing = model
        .routing
        .as_ref()
        .map(|t| t.restrict_to_domain(domain))
        .transpose()?;
    Model::from_parts(config, params, routing)
}
