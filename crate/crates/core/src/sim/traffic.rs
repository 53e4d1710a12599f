use std::io::Write;

use super::{ClusterSpec, Placement};
use crate::error::{Error, Result};
use crate::rng::PrngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommMode {
    /// Tokens originate uniformly on any device.
    Global,
    /// Tokens originate uniformly on the devices hosting their domain.
    Grouped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficReport {
    pub bytes_global: f64,
    pub bytes_grouped: f64,
    pub ratio: f64,
}

impl TrafficReport {
    fn new(bytes_global: f64, bytes_grouped: f64) -> Self {
        let ratio = if bytes_global == 0.0 {
            1.0
        } else {
            bytes_grouped / bytes_global
        };
        Self {
            bytes_global,
            bytes_grouped,
            ratio,
        }
    }
}

/// Simulated traffic, total and per device (bytes sent plus received).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub bytes: u64,
    pub per_device: Vec<u64>,
}

fn check(cluster: &ClusterSpec, placement: &Placement, histogram: &[u64]) -> Result<()> {
    cluster.validate()?;
    if histogram.len() > placement.num_domains {
        return Err(Error::Layout(format!(
            "histogram has {} domains, placement {}",
            histogram.len(),
            placement.num_domains
        )));
    }
    if let Some(&d) = placement.devices.iter().find(|&&d| d >= cluster.devices) {
        return Err(Error::Layout(format!(
            "placement uses device {d} of {}",
            cluster.devices
        )));
    }
    Ok(())
}

fn sources(cluster: &ClusterSpec, placement: &Placement, domain: usize, mode: CommMode) -> Vec<usize> {
    match mode {
        CommMode::Global => (0..cluster.devices).collect(),
        CommMode::Grouped => placement.domain_devices(domain),
    }
}

/// Expected bytes when every token picks its domain's experts uniformly and
/// makes a round trip to the expert's device.
pub fn expected_volume(cluster: &ClusterSpec, placement: &Placement, histogram: &[u64], mode: CommMode) -> Result<f64> {
    check(cluster, placement, histogram)?;
    let hop = cluster.token_bytes() as f64;
    let e = placement.experts_per_domain;
    let mut total = 0.0;
    for (domain, &count) in histogram.iter().enumerate() {
        let src = sources(cluster, placement, domain, mode);
        let remote: f64 = (0..e)
            .map(|x| {
                let dev = placement.device_of(domain, x);
                src.iter().filter(|&&s| s != dev).count() as f64 / src.len() as f64
            })
            .sum::<f64>()
            / e as f64;
        total += count as f64 * 2.0 * hop * remote;
    }
    Ok(total)
}

/// Seeded token-by-token simulation of the same traffic model.
pub fn simulate_volume(
    cluster: &ClusterSpec,
    placement: &Placement,
    histogram: &[u64],
    mode: CommMode,
    seed: u64,
) -> Result<Volume> {
    check(cluster, placement, histogram)?;
    let hop = cluster.token_bytes() as u64;
    let mut rng = PrngState::new(seed);
    let mut per_device = vec![0u64; cluster.devices];
    let mut bytes = 0;
    for (domain, &count) in histogram.iter().enumerate() {
        let src = sources(cluster, placement, domain, mode);
        for _ in 0..count {
            let dev = placement.device_of(domain, rng.below(placement.experts_per_domain));
            let s = src[rng.below(src.len())];
            if s != dev {
                bytes += 2 * hop;
                per_device[s] += 2 * hop;
                per_device[dev] += 2 * hop;
            }
        }
    }
    Ok(Volume { bytes, per_device })
}

/// Global vs grouped traffic, analytic when `seed` is `None`, otherwise
/// simulated with the same seed for both modes.
pub fn all_to_all_volume(
    cluster: &ClusterSpec,
    placement: &Placement,
    histogram: &[u64],
    seed: Option<u64>,
) -> Result<TrafficReport> {
    let (g, r) = match seed {
        None => (
            expected_volume(cluster, placement, histogram, CommMode::Global)?,
            expected_volume(cluster, placement, histogram, CommMode::Grouped)?,
        ),
        Some(seed) => (
            simulate_volume(cluster, placement, histogram, CommMode::Global, seed)?.bytes as f64,
            simulate_volume(cluster, placement, histogram, CommMode::Grouped, seed)?.bytes as f64,
        ),
    };
    Ok(TrafficReport::new(g, r))
}

/// Rows `method,bytes_global,bytes_grouped,ratio`.
pub fn write_traffic_csv<W: Write>(mut w: W, rows: &[(&str, TrafficReport)]) -> Result<()> {
    writeln!(w, "method,bytes_global,bytes_grouped,ratio")?;
    for (method, r) in rows {
        writeln!(w, "{method},{},{},{:.6}", r.bytes_global, r.bytes_grouped, r.ratio)?;
    }
    Ok(())
}
