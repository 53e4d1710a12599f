//! Random Routed Experts routing tables.
//!
//! A routing table fixes, before training, which expert processes each token
//! ID in every (domain, RRE layer) cell. The first routing level is the
//! domain: domain `i` owns the contiguous global expert range
//! `[i*e, (i+1)*e)`. The second level is a balanced random token-to-expert
//! map drawn independently for each layer and domain.
//!
//! Construction:
//!
//! ```text
//! q  = floor(V / e),  V' = q * e
//! u[k]      = floor(k / q)   for k < V'
//! u[V' + r] = r              for r < V - V'
//! for j in layers:
//!     for i in domains:
//!         v = shuffle([0, .., V-1])
//!         T[i][j][v[k]] = u[k] + i*e
//! ```
//!
//! All permutations come from a single SplitMix64 stream seeded once.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::PrngState;

const MAGIC: &[u8; 4] = b"RRET";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingSpec {
    pub num_domains: usize,
    pub num_rre_layers: usize,
    pub experts_per_domain: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl RoutingSpec {
    pub fn new(num_domains: usize, num_rre_layers: usize, experts_per_domain: usize, vocab_size: usize) -> Self {
        Self {
            num_domains,
            num_rre_layers,
            experts_per_domain,
            vocab_size,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Total experts per RRE layer (`d * e`).
    pub fn total_experts(&self) -> usize {
        self.num_domains * self.experts_per_domain
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("num_domains", self.num_domains),
            ("num_rre_layers", self.num_rre_layers),
            ("experts_per_domain", self.experts_per_domain),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidSpec(format!("{name} must be positive")));
            }
            if v > u32::MAX as usize {
                return Err(Error::InvalidSpec(format!("{name} exceeds u32 range")));
            }
        }
        if self.experts_per_domain > self.vocab_size {
            return Err(Error::InvalidSpec(format!(
                "experts_per_domain {} exceeds vocab_size {}",
                self.experts_per_domain, self.vocab_size
            )));
        }
        if self.total_experts() > u32::MAX as usize {
            return Err(Error::InvalidSpec("total expert count exceeds u32".into()));
        }
        Ok(())
    }
}

/// Balanced within-domain expert assignment of length `vocab`, before
/// shuffling. Each value in `[0, experts)` occurs `q` or `q + 1` times,
/// remainder slots going one each to the lowest experts.
pub fn build_base_assignment(vocab: usize, experts: usize) -> Result<Vec<u32>> {
    if experts == 0 || vocab == 0 {
        return Err(Error::InvalidSpec("vocab and experts must be positive".into()));
    }
    if experts > vocab {
        return Err(Error::InvalidSpec(format!(
            "experts_per_domain {experts} exceeds vocab_size {vocab}"
        )));
    }
    let q = vocab / experts;
    let truncated = q * experts;
    let mut u = Vec::with_capacity(vocab);
    u.extend((0..truncated).map(|k| (k / q) as u32));
    u.extend((0..vocab - truncated).map(|r| r as u32));
    Ok(u)
}

/// Immutable (domains, layers, vocab) lookup of global expert indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingTable {
    spec: RoutingSpec,
    entries: Vec<u32>,
}

impl RoutingTable {
    pub fn build(spec: RoutingSpec) -> Result<Self> {
        spec.validate()?;
        let RoutingSpec {
            num_domains: d,
            num_rre_layers: l,
            experts_per_domain: e,
            vocab_size: v,
            seed,
        } = spec;
        let base = build_base_assignment(v, e)?;
        let mut entries = vec![0u32; d * l * v];
        let mut rng = PrngState::new(seed);
        let mut perm: Vec<u32> = Vec::with_capacity(v);
        for j in 0..l {
            for i in 0..d {
                perm.clear();
                perm.extend(0..v as u32);
                rng.shuffle_in_place(&mut perm);
                let offset = (i * e) as u32;
                let row = &mut entries[(i * l + j) * v..(i * l + j + 1) * v];
                for (k, &tok) in perm.iter().enumerate() {
                    row[tok as usize] = base[k] + offset;
                }
            }
        }
        Ok(Self { spec, entries })
    }

    /// Wraps raw entries (laid out domain-major, then layer, then token),
    /// checking shape and domain confinement.
    pub fn from_entries(spec: RoutingSpec, entries: Vec<u32>) -> Result<Self> {
        spec.validate()?;
        let (d, l, e, v) = (
            spec.num_domains,
            spec.num_rre_layers,
            spec.experts_per_domain,
            spec.vocab_size,
        );
        if entries.len() != d * l * v {
            return Err(Error::Format(format!(
                "routing table holds {} entries, spec needs {}",
                entries.len(),
                d * l * v
            )));
        }
        for i in 0..d {
            let lo = (i * e) as u32;
            let hi = ((i + 1) * e) as u32;
            let block = &entries[i * l * v..(i + 1) * l * v];
            if let Some(bad) = block.iter().find(|&&x| x < lo || x >= hi) {
                return Err(Error::Format(format!(
                    "domain {i} routes to expert {bad}, outside [{lo}, {hi})"
                )));
            }
        }
        Ok(Self { spec, entries })
    }

    pub fn spec(&self) -> &RoutingSpec {
        &self.spec
    }

    pub fn entries(&self) -> &[u32] {
        &self.entries
    }

    fn check(&self, domain: usize, layer: usize) -> Result<()> {
        if domain >= self.spec.num_domains {
            return Err(Error::out_of_range("domain", domain, self.spec.num_domains));
        }
        if layer >= self.spec.num_rre_layers {
            return Err(Error::out_of_range("layer", layer, self.spec.num_rre_layers));
        }
        Ok(())
    }

    /// Token-indexed expert row for one (domain, layer) cell.
    pub fn row(&self, domain: usize, layer: usize) -> Result<&[u32]> {
        self.check(domain, layer)?;
        let v = self.spec.vocab_size;
        let start = (domain * self.spec.num_rre_layers + layer) * v;
        Ok(&self.entries[start..start + v])
    }

    pub fn route(&self, domain: usize, layer: usize, token_id: usize) -> Result<usize> {
        let row = self.row(domain, layer)?;
        row.get(token_id)
            .map(|&x| x as usize)
            .ok_or_else(|| Error::out_of_range("token", token_id, self.spec.vocab_size))
    }

    /// Tokens per expert of the domain's group, indexed by local expert.
    pub fn load_histogram(&self, domain: usize, layer: usize) -> Result<Vec<usize>> {
        let row = self.row(domain, layer)?;
        let e = self.spec.experts_per_domain;
        let base = domain * e;
        let mut counts = vec![0usize; e];
        for &x in row {
            counts[x as usize - base] += 1;
        }
        Ok(counts)
    }

    /// Restricts the table to one domain and re-indexes its experts to
    /// `[0, e)`.
    pub fn restrict_to_domain(&self, domain: usize) -> Result<RoutingTable> {
        if domain >= self.spec.num_domains {
            return Err(Error::out_of_range("domain", domain, self.spec.num_domains));
        }
        let (l, v, e) = (
            self.spec.num_rre_layers,
            self.spec.vocab_size,
            self.spec.experts_per_domain,
        );
        let offset = (domain * e) as u32;
        let entries = self.entries[domain * l * v..(domain + 1) * l * v]
            .iter()
            .map(|&x| x - offset)
            .collect();
        let spec = RoutingSpec {
            num_domains: 1,
            ..self.spec
        };
        RoutingTable::from_entries(spec, entries)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for x in [
            self.spec.num_domains,
            self.spec.num_rre_layers,
            self.spec.experts_per_domain,
            self.spec.vocab_size,
        ] {
            w.write_all(&(x as u32).to_le_bytes())?;
        }
        w.write_all(&self.spec.seed.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.entries.len() * 4);
        for &x in &self.entries {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 4 + 4 + 16 + 8;
        if bytes.len() < HEADER {
            return Err(Error::Format("routing table file truncated".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("bad routing table magic".into()));
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported routing table version {version}")));
        }
        let spec = RoutingSpec {
            num_domains: u32_at(8) as usize,
            num_rre_layers: u32_at(12) as usize,
            experts_per_domain: u32_at(16) as usize,
            vocab_size: u32_at(20) as usize,
            seed: u64::from_le_bytes(bytes[24..32].try_into().unwrap()),
        };
        spec.validate()?;
        let n = spec.num_domains * spec.num_rre_layers * spec.vocab_size;
        let body = &bytes[HEADER..];
        if body.len() != n * 4 {
            return Err(Error::Format(format!(
                "routing table body is {} bytes, expected {}",
                body.len(),
                n * 4
            )));
        }
        let entries = body
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_entries(spec, entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

/// Convenience wrapper matching the table-construction operation.
pub fn build_routing_table(spec: RoutingSpec) -> Result<RoutingTable> {
    RoutingTable::build(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_assignment_examples() {
        assert_eq!(
            build_base_assignment(10, 3).unwrap(),
            vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 0]
        );
        assert_eq!(
            build_base_assignment(10, 2).unwrap(),
            vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]
        );
        assert_eq!(build_base_assignment(4, 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(matches!(build_base_assignment(3, 4), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn frozen_small_table() {
        // Values from an independent re-execution of the construction.
        let t = RoutingTable::build(RoutingSpec::new(2, 1, 3, 10)).unwrap();
        assert_eq!(t.row(0, 0).unwrap(), &[2, 1, 0, 0, 2, 0, 0, 2, 1, 1]);
        assert_eq!(t.row(1, 0).unwrap(), &[3, 5, 4, 4, 3, 4, 5, 3, 5, 3]);

        let t = RoutingTable::build(RoutingSpec::new(2, 2, 2, 6).with_seed(7)).unwrap();
        assert_eq!(t.row(0, 0).unwrap(), &[0, 0, 1, 1, 1, 0]);
        assert_eq!(t.row(0, 1).unwrap(), &[0, 1, 1, 0, 0, 1]);
        assert_eq!(t.row(1, 0).unwrap(), &[2, 2, 3, 3, 2, 3]);
        assert_eq!(t.row(1, 1).unwrap(), &[3, 2, 3, 3, 2, 2]);
    }

    #[test]
    fn histogram_examples() {
        let t = RoutingTable::build(RoutingSpec::new(2, 1, 3, 10)).unwrap();
        let mut h = t.load_histogram(1, 0).unwrap();
        h.sort_unstable();
        assert_eq!(h, vec![3, 3, 4]);
        let t = RoutingTable::build(RoutingSpec::new(1, 1, 2, 10)).unwrap();
        assert_eq!(t.load_histogram(0, 0).unwrap(), vec![5, 5]);
        let t = RoutingTable::build(RoutingSpec::new(3, 2, 7, 7)).unwrap();
        assert_eq!(t.load_histogram(2, 1).unwrap(), vec![1; 7]);
    }

    #[test]
    fn route_by_brute_force_matches_histogram() {
        let t = RoutingTable::build(RoutingSpec::new(2, 1, 3, 10)).unwrap();
        let mut counts = [0usize; 3];
        for tok in 0..10 {
            counts[t.route(0, 0, tok).unwrap()] += 1;
        }
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![3, 3, 4]);
    }

    #[test]
    fn single_expert_always_zero() {
        let t = RoutingTable::build(RoutingSpec::new(1, 2, 1, 5)).unwrap();
        assert!(t.entries().iter().all(|&x| x == 0));
        assert_eq!(t.route(0, 1, 4).unwrap(), 0);
    }

    #[test]
    fn bounds_errors() {
        let t = RoutingTable::build(RoutingSpec::new(2, 1, 3, 10)).unwrap();
        assert!(matches!(t.route(2, 0, 0), Err(Error::OutOfRange { .. })));
        assert!(matches!(t.route(0, 1, 0), Err(Error::OutOfRange { .. })));
        assert!(matches!(t.route(0, 0, 10), Err(Error::OutOfRange { .. })));
        assert!(t.load_histogram(5, 0).is_err());
    }

    #[test]
    fn layers_get_distinct_permutations() {
        let t = RoutingTable::build(RoutingSpec::new(1, 2, 4, 64)).unwrap();
        assert_ne!(t.row(0, 0).unwrap(), t.row(0, 1).unwrap());
    }

    #[test]
    fn restriction_reindexes() {
        let t = RoutingTable::build(RoutingSpec::new(3, 2, 2, 16)).unwrap();
        let r = t.restrict_to_domain(2).unwrap();
        for layer in 0..2 {
            for tok in 0..16 {
                assert_eq!(r.route(0, layer, tok).unwrap() + 4, t.route(2, layer, tok).unwrap());
            }
        }
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let t = RoutingTable::build(RoutingSpec::new(2, 3, 2, 9).with_seed(5)).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 2 * 3 * 9 * 4);
        assert_eq!(&buf[..4], b"RRET");
        assert_eq!(RoutingTable::decode(&buf).unwrap(), t);

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(RoutingTable::decode(&bad).is_err());
        assert!(RoutingTable::decode(&buf[..buf.len() - 1]).is_err());
        // An entry pointing outside its domain range is rejected.
        let mut bad = buf.clone();
        bad[32..36].copy_from_slice(&3u32.to_le_bytes());
        assert!(RoutingTable::decode(&bad).is_err());
    }
}
