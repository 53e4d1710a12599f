use std::path::PathBuf;

use clap::Args;
use sigma_core::routing::{RoutingSpec, RoutingTable};
use sigma_core::Result;

#[derive(Args)]
pub struct TableArgs {
    #[arg(long)]
    domains: usize,
    /// Number of RRE layers.
    #[arg(long)]
    layers: usize,
    /// Experts per domain.
    #[arg(long)]
    experts: usize,
    #[arg(long)]
    vocab: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct RouteArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    domain: usize,
    #[arg(long)]
    layer: usize,
    #[arg(long)]
    token: usize,
}

pub fn table(a: TableArgs) -> Result<()> {
    let spec = RoutingSpec::new(a.domains, a.layers, a.experts, a.vocab).with_seed(a.seed);
    let table = RoutingTable::build(spec)?;
    table.save(&a.out)?;
    Ok(())
}

pub fn route(a: RouteArgs) -> Result<()> {
    let table = RoutingTable::load(&a.table)?;
    println!("{}", table.route(a.domain, a.layer, a.token)?);
    Ok(())
}
