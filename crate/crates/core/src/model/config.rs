use crate::error::{Error, Result};

/// Decoder hyper-parameters.
///
/// Layers `0..dense_layers` are shared dense layers; the following
/// `rre_layers` layers dispatch their FFN sub-layer to random-routed experts.
/// The topmost layer of the stack is always the query layer, so when
/// `rre_layers > 0` the query layer is itself an RRE layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dense_layers: usize,
    pub rre_layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn: usize,
    /// Rows per embedding slot; also the output vocabulary.
    pub vocab: usize,
    pub embedding_slots: usize,
    pub num_domains: usize,
    pub experts_per_domain: usize,
    pub max_seq_len: usize,
    /// Embedding slot used by each domain.
    pub domain_slots: Vec<usize>,
    pub init_seed: u64,
    pub routing_seed: u64,
}

/// Architecture regime implied by `(M, N, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchMode {
    Mixed,
    Dense,
    Sparse,
}

impl ArchMode {
    /// Dense wins when both the dense and sparse predicates hold.
    pub fn detect(dense_layers: usize, rre_layers: usize, total_experts: usize) -> ArchMode {
        if rre_layers == 0 || total_experts == 1 {
            ArchMode::Dense
        } else if dense_layers == 0 {
            ArchMode::Sparse
        } else {
            ArchMode::Mixed
        }
    }
}

impl ModelConfig {
    /// Slot map that sends every domain in `code_domains` to slot 1 when two
    /// slots exist, and everything else to slot 0.
    pub fn code_slot_map(num_domains: usize, embedding_slots: usize, code_domains: &[usize]) -> Vec<usize> {
        (0..num_domains)
            .map(|d| usize::from(embedding_slots > 1 && code_domains.contains(&d)))
            .collect()
    }

    pub fn total_layers(&self) -> usize {
        self.dense_layers + self.rre_layers
    }

    pub fn total_experts(&self) -> usize {
        self.num_domains * self.experts_per_domain
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn mode(&self) -> ArchMode {
        ArchMode::detect(self.dense_layers, self.rre_layers, self.total_experts())
    }

    pub fn is_rre_layer(&self, layer: usize) -> bool {
        layer >= self.dense_layers && layer < self.total_layers()
    }

    pub fn is_query_layer(&self, layer: usize) -> bool {
        layer + 1 == self.total_layers()
    }

    pub fn slot_of(&self, domain: usize) -> Result<usize> {
        self.domain_slots
            .get(domain)
            .copied()
            .ok_or_else(|| Error::out_of_range("domain", domain, self.num_domains))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("ffn", self.ffn),
            ("vocab", self.vocab),
            ("embedding_slots", self.embedding_slots),
            ("num_domains", self.num_domains),
            ("experts_per_domain", self.experts_per_domain),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.total_layers() == 0 {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.rre_layers > 0 && self.experts_per_domain > self.vocab {
            return Err(Error::Config(format!(
                "experts_per_domain {} exceeds vocab {}",
                self.experts_per_domain, self.vocab
            )));
        }
        if self.domain_slots.len() != self.num_domains {
            return Err(Error::Config(format!(
                "domain_slots has {} entries for {} domains",
                self.domain_slots.len(),
                self.num_domains
            )));
        }
        if let Some(&s) = self.domain_slots.iter().find(|&&s| s >= self.embedding_slots) {
            return Err(Error::Config(format!(
                "slot {s} out of range for {} embedding slots",
                self.embedding_slots
            )));
        }
        Ok(())
    }

    /// Parameters of one FFN block (`w1, b1, w2, b2`).
    pub fn ffn_block_size(&self) -> usize {
        2 * self.hidden * self.ffn + self.ffn + self.hidden
    }

    /// Layer norms plus the four attention projections.
    pub fn attention_block_size(&self) -> usize {
        let d = self.hidden;
        2 * d + 4 * (d * d + d) + 2 * d
    }

    /// Exact parameter count of the model this config builds.
    pub fn count_params(&self) -> usize {
        let d = self.hidden;
        let embeddings = self.embedding_slots * self.vocab * d + self.max_seq_len * d;
        let attention = self.total_layers() * self.attention_block_size();
        let ffn =
            self.dense_layers * self.ffn_block_size() + self.rre_layers * self.total_experts() * self.ffn_block_size();
        let query = self.max_seq_len * d;
        let final_ln = 2 * d;
        embeddings + attention + ffn + query + final_ln
    }
}

pub fn count_params(config: &ModelConfig) -> usize {
    config.count_params()
}

pub fn detect_mode(config: &ModelConfig) -> ArchMode {
    config.mode()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy() -> ModelConfig {
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
            init_seed: 0,
            routing_seed: 0,
        }
    }

    #[test]
    fn modes() {
        assert_eq!(ArchMode::detect(32, 8, 640), ArchMode::Mixed);
        assert_eq!(ArchMode::detect(40, 0, 640), ArchMode::Dense);
        assert_eq!(ArchMode::detect(0, 8, 8), ArchMode::Sparse);
        assert_eq!(ArchMode::detect(0, 4, 1), ArchMode::Dense);
        assert_eq!(ArchMode::detect(3, 4, 1), ArchMode::Dense);
    }

    #[test]
    fn ffn_block_closed_form() {
        let mut c = toy();
        c.hidden = 64;
        c.ffn = 256;
        assert_eq!(c.ffn_block_size(), 33_088);
    }

    #[test]
    fn mixed_minus_dense_is_extra_experts() {
        let mixed = ModelConfig {
            dense_layers: 2,
            rre_layers: 3,
            num_domains: 3,
            experts_per_domain: 2,
            domain_slots: vec![0; 3],
            ..toy()
        };
        let dense = ModelConfig {
            dense_layers: 5,
            rre_layers: 0,
            ..mixed.clone()
        };
        let k = mixed.total_experts();
        assert_eq!(
            mixed.count_params() - dense.count_params(),
            3 * (k - 1) * mixed.ffn_block_size()
        );
        let single = ModelConfig {
            num_domains: 1,
            experts_per_domain: 1,
            domain_slots: vec![0],
            ..mixed.clone()
        };
        assert_eq!(single.mode(), ArchMode::Dense);
        let dense_single = ModelConfig {
            domain_slots: vec![0],
            num_domains: 1,
            ..dense
        };
        assert_eq!(single.count_params(), dense_single.count_params());
    }
}
