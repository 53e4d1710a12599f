use std::path::PathBuf;

use clap::Args;
use sigma_core::data::{
    format_doc, pack_pretrain, pad_or_truncate, read_instances, synthetic_instances, write_instances, ByteTokenizer,
    CorpusDoc, DomainKind, InstanceSet, SpecialTokens, SubTag,
};
use sigma_core::{Error, Result};

use crate::io::{output, read_token_lines, write_token_lines};

#[derive(Args)]
pub struct FormatArgs {
    /// UTF-8 text, one document per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    domain: usize,
    /// mono, bilingual or code.
    #[arg(long, default_value = "mono")]
    kind: String,
    /// none, en, cn, python or java.
    #[arg(long, default_value = "none")]
    sub_tag: String,
    /// Formatted token IDs, one document per line; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PackArgs {
    /// `DOMAIN=PATH` of a formatted token file; repeatable.
    #[arg(long = "input", required = true, value_parser = parse_domain_path)]
    inputs: Vec<(usize, PathBuf)>,
    #[arg(long, default_value_t = 1024)]
    len: usize,
    /// Domain count recorded in the file; defaults to the largest input domain + 1.
    #[arg(long)]
    num_domains: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct PadArgs {
    /// `DOMAIN=PATH` of a formatted token file; repeatable.
    #[arg(long = "input", required = true, value_parser = parse_domain_path)]
    inputs: Vec<(usize, PathBuf)>,
    #[arg(long)]
    len: usize,
    /// Vocabulary size whose top IDs hold the control tokens.
    #[arg(long, default_value_t = ByteTokenizer::VOCAB)]
    vocab: usize,
    #[arg(long)]
    num_domains: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
    /// Count occurrences of this PAD token.
    #[arg(long)]
    pad: Option<u32>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    domains: usize,
    #[arg(long)]
    vocab: usize,
    #[arg(long)]
    len: usize,
    #[arg(long)]
    per_domain: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_domain_path(s: &str) -> std::result::Result<(usize, PathBuf), String> {
    let (d, p) = s
        .split_once('=')
        .ok_or_else(|| format!("expected DOMAIN=PATH, got {s:?}"))?;
    let d = d.parse().map_err(|_| format!("bad domain {d:?}"))?;
    Ok((d, PathBuf::from(p)))
}

fn domain_count(inputs: &[(usize, PathBuf)], given: Option<usize>) -> usize {
    given.unwrap_or_else(|| inputs.iter().map(|(d, _)| d + 1).max().unwrap_or(0))
}

pub fn format(a: FormatArgs) -> Result<()> {
    let kind: DomainKind = a.kind.parse()?;
    let sub_tag: SubTag = a.sub_tag.parse()?;
    let tok = ByteTokenizer;
    let specials = tok.specials();
    let text = std::fs::read_to_string(&a.input)?;
    let docs = text
        .lines()
        .map(|line| {
            let doc = CorpusDoc {
                domain: a.domain,
                kind,
                sub_tag,
                tokens: tok.encode(line),
            };
            format_doc(&doc, &specials)
        })
        .collect::<Result<Vec<_>>>()?;
    write_token_lines(output(a.out.as_deref())?, &docs)
}

pub fn pack(a: PackArgs) -> Result<()> {
    let num_domains = domain_count(&a.inputs, a.num_domains);
    let mut instances = Vec::new();
    for (domain, path) in &a.inputs {
        let out = pack_pretrain(*domain, read_token_lines(path)?, a.len)?;
        eprintln!(
            "domain {domain}: {} tokens, {} instances, {} dropped",
            out.total_tokens,
            out.instances.len(),
            out.dropped
        );
        instances.extend(out.instances);
    }
    write_instances(&a.out, &InstanceSet::new(a.len, num_domains, instances)?)
}

pub fn pad(a: PadArgs) -> Result<()> {
    if a.len == 0 {
        return Err(Error::Config("--len must be positive".into()));
    }
    let specials = SpecialTokens::reserved_top(a.vocab)?;
    let num_domains = domain_count(&a.inputs, a.num_domains);
    let mut instances = Vec::new();
    for (domain, path) in &a.inputs {
        for doc in read_token_lines(path)? {
            instances.push(pad_or_truncate(*domain, &doc, a.len, &specials));
        }
    }
    write_instances(&a.out, &InstanceSet::new(a.len, num_domains, instances)?)
}

pub fn stats(a: StatsArgs) -> Result<()> {
    let s = read_instances(&a.input)?.stats(a.pad);
    println!("seq_len {}", s.seq_len);
    println!("instances {}", s.instances);
    println!("tokens {}", s.tokens);
    if a.pad.is_some() {
        println!("pad_tokens {}", s.pad_tokens);
    }
    for (d, n) in s.per_domain.iter().enumerate() {
        println!("domain {d} {n}");
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let set = synthetic_instances(a.domains, a.vocab, a.len, a.per_domain, a.seed)?;
    write_instances(&a.out, &set)
}
