use std::path::PathBuf;

use clap::{Args, ValueEnum};
use sigma_core::sim::{
    all_to_all_volume, place_experts, round_robin_upload, write_traffic_csv, write_upload_csv, ClusterSpec,
};
use sigma_core::{Error, Result};

use crate::io::{output, read_numbers};

#[derive(Clone, Copy, ValueEnum)]
pub enum Method {
    Analytic,
    Simulated,
    Both,
}

#[derive(Args)]
pub struct VolumeArgs {
    #[arg(long)]
    devices: usize,
    #[arg(long)]
    groups: usize,
    /// Total tokens, split evenly over the groups' domains.
    #[arg(long, default_value_t = 100_000)]
    tokens: u64,
    /// Per-domain token counts, overriding `--tokens`.
    #[arg(long)]
    hist: Option<PathBuf>,
    /// Experts per domain; defaults to the devices per group.
    #[arg(long)]
    experts: Option<usize>,
    #[arg(long, default_value_t = 1024)]
    hidden: usize,
    #[arg(long, default_value_t = 2)]
    elem_bytes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "both")]
    mode: Method,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct UploadArgs {
    /// Shard sizes, one or more per line.
    #[arg(long)]
    shards: PathBuf,
    /// Maximum simultaneous uploads.
    #[arg(long)]
    limit: usize,
    /// Size units per time unit for each stream.
    #[arg(long, default_value_t = 1.0)]
    bandwidth: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn volume(a: VolumeArgs) -> Result<()> {
    let cluster = ClusterSpec::new(a.devices, a.groups, a.hidden, a.elem_bytes)?;
    let experts = a.experts.unwrap_or(cluster.devices_per_group());
    let placement = place_experts(&cluster, a.groups, experts)?;
    let hist = match &a.hist {
        Some(p) => read_numbers(p)?,
        None => {
            let g = a.groups as u64;
            (0..g).map(|i| a.tokens / g + u64::from(i < a.tokens % g)).collect()
        }
    };
    if hist.len() > a.groups {
        return Err(Error::Config(format!(
            "histogram lists {} domains but there are {} groups",
            hist.len(),
            a.groups
        )));
    }
    let mut rows = Vec::new();
    if matches!(a.mode, Method::Analytic | Method::Both) {
        rows.push(("analytic", all_to_all_volume(&cluster, &placement, &hist, None)?));
    }
    if matches!(a.mode, Method::Simulated | Method::Both) {
        rows.push((
            "simulated",
            all_to_all_volume(&cluster, &placement, &hist, Some(a.seed))?,
        ));
    }
    let mut w = output(a.out.as_deref())?;
    write_traffic_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}

pub fn upload(a: UploadArgs) -> Result<()> {
    if a.limit == 0 {
        return Err(Error::Config("--limit must be at least 1".into()));
    }
    let sizes: Vec<f64> = read_numbers(&a.shards)?;
    let plan = round_robin_upload(&sizes, a.bandwidth, a.limit)?;
    let mut w = output(a.out.as_deref())?;
    write_upload_csv(&mut w, &plan)?;
    w.flush()?;
    Ok(())
}
