use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UploadEntry {
    pub shard: usize,
    pub slot: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UploadPlan {
    pub entries: Vec<UploadEntry>,
    pub max_concurrent: usize,
    pub bandwidth: f64,
    pub makespan: f64,
}

/// Starts shards in index order, each on the slot that frees up first
/// (lowest slot on ties), with at most `max_concurrent` streams running.
pub fn round_robin_upload(sizes: &[f64], bandwidth: f64, max_concurrent: usize) -> Result<UploadPlan> {
    if max_concurrent == 0 {
        return Err(Error::Config("max_concurrent must be at least 1".into()));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Config(format!("bandwidth {bandwidth} must be positive")));
    }
    if let Some(s) = sizes.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::Config(format!("shard size {s} must be non-negative")));
    }
    let mut free_at = vec![0.0f64; max_concurrent.min(sizes.len()).max(1)];
    let mut entries = Vec::with_capacity(sizes.len());
    for (shard, &size) in sizes.iter().enumerate() {
        let (slot, &start) = free_at
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .expect("at least one slot");
        let end = start + size / bandwidth;
        free_at[slot] = end;
        entries.push(UploadEntry {
            shard,
            slot,
            start,
            end,
        });
    }
    let makespan = entries.iter().map(|e| e.end).fold(0.0, f64::max);
    Ok(UploadPlan {
        entries,
        max_concurrent,
        bandwidth,
        makespan,
    })
}

/// Largest number of uploads running at any instant. An upload occupies
/// `[start, end)`, so ends are processed before starts at equal times.
pub fn max_overlap(entries: &[UploadEntry]) -> usize {
    let mut events: Vec<(f64, i32)> = entries
        .iter()
        .filter(|e| e.end > e.start)
        .flat_map(|e| [(e.start, 1), (e.end, -1)])
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut running = 0i32;
    let mut peak = 0;
    for (_, delta) in events {
        running += delta;
        peak = peak.max(running);
    }
    peak as usize
}

pub fn write_upload_csv<W: Write>(mut w: W, plan: &UploadPlan) -> Result<()> {
    writeln!(w, "shard,slot,start,end")?;
    for e in &plan.entries {
        writeln!(w, "{},{},{},{}", e.shard, e.slot, e.start, e.end)?;
    }
    writeln!(w, "# makespan,{}", plan.makespan)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_schedules() {
        assert_eq!(round_robin_upload(&[1.0; 4], 1.0, 2).unwrap().makespan, 2.0);
        assert_eq!(round_robin_upload(&[2.0, 5.0, 1.0], 1.0, 8).unwrap().makespan, 5.0);
        let plan = round_robin_upload(&[3.0, 1.0, 1.0, 1.0], 1.0, 2).unwrap();
        assert_eq!(plan.makespan, 3.0);
        let slots: Vec<usize> = plan.entries.iter().map(|e| e.slot).collect();
        assert_eq!(slots, [0, 1, 1, 1]);
        assert_eq!(max_overlap(&plan.entries), 2);
    }

    #[test]
    fn bandwidth_scales_time() {
        let plan = round_robin_upload(&[4.0, 4.0], 2.0, 1).unwrap();
        assert_eq!(plan.entries[1].start, 2.0);
        assert_eq!(plan.makespan, 4.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(round_robin_upload(&[1.0], 1.0, 0).is_err());
        assert!(round_robin_upload(&[1.0], 0.0, 1).is_err());
        assert!(round_robin_upload(&[-1.0], 1.0, 1).is_err());
        assert_eq!(round_robin_upload(&[], 1.0, 3).unwrap().makespan, 0.0);
    }
}
