//! Multi-domain corpus formatting, fixed-length packing, pad/truncate and
//! the binary instance file.
//!
//! Instance file layout (little-endian):
//!
//! ```text
//! "PGSI" | version u32 | seq_len u32 | domain_count u32 | instance_count u64
//! then per instance: domain_id u16 | reserved u16 | seq_len x u32 token IDs
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::PrngState;

const MAGIC: &[u8; 4] = b"PGSI";
const VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 + 4 + 4 + 8;

/// Number of reserved control tokens.
pub const NUM_SPECIALS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub eot: u32,
    pub en: u32,
    pub cn: u32,
    pub python: u32,
    pub java: u32,
    pub pad: u32,
}

impl SpecialTokens {
    /// Places the six control tokens in the top six IDs of a `vocab`-sized
    /// vocabulary: EOT, EN, CN, PYTHON, JAVA, PAD in ascending order.
    pub fn reserved_top(vocab: usize) -> Result<Self> {
        if vocab < NUM_SPECIALS || vocab > u32::MAX as usize {
            return Err(Error::Config(format!(
                "vocab {vocab} cannot hold {NUM_SPECIALS} special tokens"
            )));
        }
        let base = (vocab - NUM_SPECIALS) as u32;
        Ok(Self {
            eot: base,
            en: base + 1,
            cn: base + 2,
            python: base + 3,
            java: base + 4,
            pad: base + 5,
        })
    }

    pub fn all(&self) -> [u32; NUM_SPECIALS] {
        [self.eot, self.en, self.cn, self.python, self.java, self.pad]
    }

    pub fn validate(&self, vocab: usize) -> Result<()> {
        let ids = self.all();
        for (i, a) in ids.iter().enumerate() {
            if *a as usize >= vocab {
                return Err(Error::Config(format!("special token {a} outside vocab {vocab}")));
            }
            if ids[i + 1..].contains(a) {
                return Err(Error::Config(format!("special token {a} used twice")));
            }
        }
        Ok(())
    }
}

/// How a domain's documents are framed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    /// Chinese, English and other single-source domains.
    Mono,
    Bilingual,
    Code,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubTag {
    None,
    En,
    Cn,
    Python,
    Java,
}

impl std::str::FromStr for DomainKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mono" => Ok(DomainKind::Mono),
            "bilingual" => Ok(DomainKind::Bilingual),
            "code" => Ok(DomainKind::Code),
            other => Err(Error::Config(format!("unknown domain kind {other:?}"))),
        }
    }
}

impl std::str::FromStr for SubTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SubTag::None),
            "en" => Ok(SubTag::En),
            "cn" => Ok(SubTag::Cn),
            "python" => Ok(SubTag::Python),
            "java" => Ok(SubTag::Java),
            other => Err(Error::Config(format!("unknown sub-tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusDoc {
    pub domain: usize,
    pub kind: DomainKind,
    pub sub_tag: SubTag,
    pub tokens: Vec<u32>,
}

/// Fixed-length token sequence tagged with its domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingInstance {
    pub domain: usize,
    pub tokens: Vec<u32>,
}

/// Frames a document: mono → body + EOT; bilingual → EN|CN + body + EOT;
/// code → PYTHON|JAVA + body + EOT.
pub fn format_doc(doc: &CorpusDoc, specials: &SpecialTokens) -> Result<Vec<u32>> {
    let head = match (doc.kind, doc.sub_tag) {
        (DomainKind::Mono, SubTag::None) => None,
        (DomainKind::Bilingual, SubTag::En) => Some(specials.en),
        (DomainKind::Bilingual, SubTag::Cn) => Some(specials.cn),
        (DomainKind::Code, SubTag::Python) => Some(specials.python),
        (DomainKind::Code, SubTag::Java) => Some(specials.java),
        (kind, tag) => {
            return Err(Error::Format(format!(
                "sub-tag {tag:?} not allowed for {kind:?} domain"
            )));
        }
    };
    let mut out = Vec::with_capacity(doc.tokens.len() + 2);
    out.extend(head);
    out.extend_from_slice(&doc.tokens);
    out.push(specials.eot);
    Ok(out)
}

/// Streaming packer: concatenates formatted documents of one domain and
/// emits consecutive windows of exactly `len` tokens.
#[derive(Debug)]
pub struct Packer {
    domain: usize,
    len: usize,
    buffer: Vec<u32>,
    emitted: Vec<TrainingInstance>,
    total_tokens: usize,
}

impl Packer {
    pub fn new(domain: usize, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("sequence length must be positive".into()));
        }
        Ok(Self {
            domain,
            len,
            buffer: Vec::with_capacity(len),
            emitted: Vec::new(),
            total_tokens: 0,
        })
    }

    pub fn push(&mut self, formatted: &[u32]) {
        self.total_tokens += formatted.len();
        for &tok in formatted {
            self.buffer.push(tok);
            if self.buffer.len() == self.len {
                let tokens = std::mem::replace(&mut self.buffer, Vec::with_capacity(self.len));
                self.emitted.push(TrainingInstance {
                    domain: self.domain,
                    tokens,
                });
            }
        }
    }

    /// Takes the full windows produced so far.
    pub fn drain(&mut self) -> Vec<TrainingInstance> {
        std::mem::take(&mut self.emitted)
    }

    /// Finishes the stream, dropping the trailing partial window.
    pub fn finish(mut self) -> PackOutput {
        PackOutput {
            instances: self.drain(),
            dropped: self.buffer.len(),
            total_tokens: self.total_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackOutput {
    pub instances: Vec<TrainingInstance>,
    /// Tokens in the discarded trailing partial window (`< len`).
    pub dropped: usize,
    pub total_tokens: usize,
}

/// Packs already-formatted documents of one domain.
pub fn pack_pretrain<I, D>(domain: usize, formatted_docs: I, len: usize) -> Result<PackOutput>
where
    I: IntoIterator<Item = D>,
    D: AsRef<[u32]>,
{
    let mut packer = Packer::new(domain, len)?;
    for doc in formatted_docs {
        packer.push(doc.as_ref());
    }
    Ok(packer.finish())
}

/// Fine-tuning framing: pad with PAD up to `len`, or keep the first `len`.
pub fn pad_or_truncate(domain: usize, formatted: &[u32], len: usize, specials: &SpecialTokens) -> TrainingInstance {
    let mut tokens: Vec<u32> = formatted.iter().copied().take(len).collect();
    tokens.resize(len, specials.pad);
    TrainingInstance { domain, tokens }
}

/// Contents of an instance file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceSet {
    pub seq_len: usize,
    pub num_domains: usize,
    pub instances: Vec<TrainingInstance>,
}

impl InstanceSet {
    pub fn new(seq_len: usize, num_domains: usize, instances: Vec<TrainingInstance>) -> Result<Self> {
        let set = Self {
            seq_len,
            num_domains,
            instances,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_domains > u16::MAX as usize + 1 {
            return Err(Error::Format("domain count exceeds u16 range".into()));
        }
        for (i, inst) in self.instances.iter().enumerate() {
            if inst.tokens.len() != self.seq_len {
                return Err(Error::Format(format!(
                    "instance {i} has length {}, expected {}",
                    inst.tokens.len(),
                    self.seq_len
                )));
            }
            if inst.domain >= self.num_domains {
                return Err(Error::Format(format!(
                    "instance {i} has domain {} but file declares {} domains",
                    inst.domain, self.num_domains
                )));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::with_capacity(HEADER_BYTES + self.instances.len() * (4 + 4 * self.seq_len));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.seq_len as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_domains as u32).to_le_bytes());
        out.extend_from_slice(&(self.instances.len() as u64).to_le_bytes());
        for inst in &self.instances {
            out.extend_from_slice(&(inst.domain as u16).to_le_bytes());
            out.extend_from_slice(&0u16.to_le_bytes());
            for &t in &inst.tokens {
                out.extend_from_slice(&t.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(Error::Format("instance file truncated in header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("bad instance file magic".into()));
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported instance file version {version}")));
        }
        let seq_len = u32_at(8) as usize;
        let num_domains = u32_at(12) as usize;
        let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let record = 4 + 4 * seq_len;
        let body = &bytes[HEADER_BYTES..];
        if Some(body.len()) != count.checked_mul(record) {
            return Err(Error::Format(format!(
                "instance file body is {} bytes, expected {count} records of {record}",
                body.len()
            )));
        }
        let instances = body
            .chunks_exact(record)
            .map(|r| TrainingInstance {
                domain: u16::from_le_bytes([r[0], r[1]]) as usize,
                tokens: r[4..]
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            })
            .collect();
        Self::new(seq_len, num_domains, instances)
    }

    /// Instances grouped by domain, preserving file order.
    pub fn by_domain(&self) -> Vec<Vec<&TrainingInstance>> {
        let mut out = vec![Vec::new(); self.num_domains];
        for inst in &self.instances {
            out[inst.domain].push(inst);
        }
        out
    }

    pub fn stats(&self, pad: Option<u32>) -> InstanceStats {
        let mut per_domain = vec![0usize; self.num_domains];
        let mut pad_tokens = 0;
        for inst in &self.instances {
            per_domain[inst.domain] += 1;
            if let Some(p) = pad {
                pad_tokens += inst.tokens.iter().filter(|&&t| t == p).count();
            }
        }
        InstanceStats {
            seq_len: self.seq_len,
            instances: self.instances.len(),
            per_domain,
            tokens: self.instances.len() * self.seq_len,
            pad_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceStats {
    pub seq_len: usize,
    pub instances: usize,
    pub per_domain: Vec<usize>,
    pub tokens: usize,
    pub pad_tokens: usize,
}

pub fn write_instances(path: impl AsRef<Path>, set: &InstanceSet) -> Result<()> {
    std::fs::write(path, set.encode()?)?;
    Ok(())
}

pub fn read_instances(path: impl AsRef<Path>) -> Result<InstanceSet> {
    InstanceSet::decode(&std::fs::read(path)?)
}

/// Byte-level demo tokenizer: byte `b` is token `b`; the six control tokens
/// sit directly above the byte range.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub const VOCAB: usize = 256 + NUM_SPECIALS;

    pub fn specials(&self) -> SpecialTokens {
        SpecialTokens::reserved_top(Self::VOCAB).expect("vocab holds specials")
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }

    /// Lossy decode; control tokens are rendered as `<NAME>`.
    pub fn decode(&self, tokens: &[u32]) -> String {
        let s = self.specials();
        let mut bytes = Vec::new();
        for &t in tokens {
            match t {
                b if b < 256 => bytes.push(b as u8),
                t if t == s.eot => bytes.extend_from_slice(b"<EOT>"),
                t if t == s.en => bytes.extend_from_slice(b"<EN>"),
                t if t == s.cn => bytes.extend_from_slice(b"<CN>"),
                t if t == s.python => bytes.extend_from_slice(b"<Python>"),
                t if t == s.java => bytes.extend_from_slice(b"<Java>"),
                t if t == s.pad => bytes.extend_from_slice(b"<Pad>"),
                _ => bytes.extend_from_slice(b"<?>"),
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

/// Synthetic multi-domain corpus with a distinct deterministic pattern per
/// domain. Domain `k` uses its own band of `vocab / num_domains` token IDs
/// and steps through it with stride `2k + 1`, so the next token is a
/// function of the current token and the domain.
pub fn synthetic_instances(
    num_domains: usize,
    vocab: usize,
    seq_len: usize,
    per_domain: usize,
    seed: u64,
) -> Result<InstanceSet> {
    if num_domains == 0 || vocab < num_domains * 2 {
        return Err(Error::Config(format!(
            "vocab {vocab} too small for {num_domains} synthetic domains"
        )));
    }
    let band = vocab / num_domains;
    let mut rng = PrngState::new(seed);
    let mut instances = Vec::with_capacity(num_domains * per_domain);
    for _ in 0..per_domain {
        for domain in 0..num_domains {
            let base = domain * band;
            let stride = 2 * domain + 1;
            let mut x = rng.below(band);
            let tokens = (0..seq_len)
                .map(|_| {
                    let tok = (base + x) as u32;
                    x = (x + stride) % band;
                    tok
                })
                .collect();
            instances.push(TrainingInstance { domain, tokens });
        }
    }
    InstanceSet::new(seq_len, num_domains, instances)
}
