//! Expert placement, all-to-all traffic volume and bounded-concurrency
//! checkpoint upload scheduling. Time and traffic are logical; nothing here
//! touches a network.

mod traffic;
mod upload;

pub use traffic::{
    all_to_all_volume, expected_volume, simulate_volume, write_traffic_csv, CommMode, TrafficReport, Volume,
};
pub use upload::{max_overlap, round_robin_upload, write_upload_csv, UploadEntry, UploadPlan};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterSpec {
    pub devices: usize,
    pub groups: usize,
    pub hidden: usize,
    pub elem_bytes: usize,
}

impl ClusterSpec {
    pub fn new(devices: usize, groups: usize, hidden: usize, elem_bytes: usize) -> Result<Self> {
        let c = Self {
            devices,
            groups,
            hidden,
            elem_bytes,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.devices < self.groups || !self.devices.is_multiple_of(self.groups) {
            return Err(Error::Layout(format!(
                "{} devices cannot be split into {} equal groups",
                self.devices, self.groups
            )));
        }
        Ok(())
    }

    pub fn devices_per_group(&self) -> usize {
        self.devices / self.groups
    }

    /// Payload bytes of one token crossing one link.
    pub fn token_bytes(&self) -> usize {
        self.hidden * self.elem_bytes
    }
}

/// Device hosting each global expert index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub num_domains: usize,
    pub experts_per_domain: usize,
    pub devices: Vec<usize>,
}

impl Placement {
    pub fn device_of(&self, domain: usize, expert: usize) -> usize {
        self.devices[domain * self.experts_per_domain + expert]
    }

    /// Distinct devices hosting a domain's experts, ascending.
    pub fn domain_devices(&self, domain: usize) -> Vec<usize> {
        let start = domain * self.experts_per_domain;
        let mut d: Vec<usize> = self.devices[start..start + self.experts_per_domain].to_vec();
        d.sort_unstable();
        d.dedup();
        d
    }

    /// Number of experts on each device.
    pub fn experts_per_device(&self, devices: usize) -> Vec<usize> {
        let mut counts = vec![0; devices];
        for &d in &self.devices {
            counts[d] += 1;
        }
        counts
    }
}

/// One domain per group; domain `i`'s experts go cyclically over the
/// devices of group `i`.
pub fn place_experts(cluster: &ClusterSpec, num_domains: usize, experts_per_domain: usize) -> Result<Placement> {
    cluster.validate()?;
    if num_domains != cluster.groups {
        return Err(Error::Layout(format!(
            "{num_domains} domains cannot map one-to-one onto {} groups",
            cluster.groups
        )));
    }
    let g = cluster.devices_per_group();
    if experts_per_domain == 0 || !experts_per_domain.is_multiple_of(g) {
        return Err(Error::Layout(format!(
            "{experts_per_domain} experts per domain do not spread evenly over {g} devices per group"
        )));
    }
    let devices = (0..num_domains)
        .flat_map(|i| (0..experts_per_domain).map(move |x| i * g + x % g))
        .collect();
    Ok(Placement {
        num_domains,
        experts_per_domain,
        devices,
    })
}

/// Global expert `k` on device `k mod D`. Fits layouts where the domain
/// count does not match a device grouping, e.g. 640 experts on 64 workers:
/// each worker then holds ten experts from ten different domains.
pub fn place_experts_striped(devices: usize, num_domains: usize, experts_per_domain: usize) -> Result<Placement> {
    let total = num_domains * experts_per_domain;
    if devices == 0 || total == 0 || !total.is_multiple_of(devices) {
        return Err(Error::Layout(format!(
            "{total} experts do not spread evenly over {devices} devices"
        )));
    }
    Ok(Placement {
        num_domains,
        experts_per_domain,
        devices: (0..total).map(|k| k % devices).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouped_placement() {
        let c = ClusterSpec::new(8, 4, 16, 4).unwrap();
        let p = place_experts(&c, 4, 2).unwrap();
        assert_eq!(p.experts_per_device(8), vec![1; 8]);
        assert_eq!(p.domain_devices(2), vec![4, 5]);
        let p = place_experts(&c, 4, 4).unwrap();
        assert_eq!(p.devices[8..12], [4, 5, 4, 5]);
    }

    #[test]
    fn single_group_spans_all_devices() {
        let c = ClusterSpec::new(8, 1, 16, 4).unwrap();
        let p = place_experts(&c, 1, 8).unwrap();
        assert_eq!(p.domain_devices(0), (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn layout_errors() {
        assert!(ClusterSpec::new(8, 3, 1, 1).is_err());
        assert!(ClusterSpec::new(2, 4, 1, 1).is_err());
        let c = ClusterSpec::new(8, 4, 1, 1).unwrap();
        assert!(matches!(place_experts(&c, 4, 3), Err(Error::Layout(_))));
        assert!(matches!(place_experts(&c, 3, 2), Err(Error::Layout(_))));
        assert!(place_experts_striped(64, 40, 15).is_err());
    }

    #[test]
    fn sixty_four_workers_hold_ten_experts_each() {
        let p = place_experts_striped(64, 40, 16).unwrap();
        let per = p.experts_per_device(64);
        assert!(per.iter().all(|&n| n == 10));
        for dev in 0..64 {
            let mut doms: Vec<usize> = (0..640).filter(|&k| p.devices[k] == dev).map(|k| k / 16).collect();
            doms.dedup();
            assert_eq!(doms.len(), 10);
        }
    }
}
