use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Steps `[start, end)` during which only `domains` feed the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub start: u64,
    pub end: u64,
    pub domains: BTreeSet<usize>,
}

/// Contiguous, non-overlapping stages starting at step 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSchedule {
    stages: Vec<Stage>,
}

impl StageSchedule {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Schedule("schedule has no stages".into()));
        }
        let mut expected = 0;
        for (i, s) in stages.iter().enumerate() {
            if s.start != expected {
                return Err(Error::Schedule(format!(
                    "stage {i} starts at {} but previous stage ends at {expected}",
                    s.start
                )));
            }
            if s.end <= s.start {
                return Err(Error::Schedule(format!("stage {i} is empty")));
            }
            if s.domains.is_empty() {
                return Err(Error::Schedule(format!("stage {i} activates no domain")));
            }
            expected = s.end;
        }
        Ok(Self { stages })
    }

    /// One stage covering `[0, steps)` with every domain active.
    pub fn single(steps: u64, num_domains: usize) -> Result<Self> {
        Self::new(vec![Stage {
            start: 0,
            end: steps,
            domains: (0..num_domains).collect(),
        }])
    }

    /// Parses `start..end:d,d,...` entries separated by `;` or newlines.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut stages = Vec::new();
        for raw in text.lines().flat_map(|l| l.split(';')) {
            let entry = raw.split('#').next().unwrap_or("").trim();
            if entry.is_empty() {
                continue;
            }
            let bad = || Error::Schedule(format!("malformed stage {entry:?}, want start..end:d,d"));
            let (range, doms) = entry.split_once(':').ok_or_else(bad)?;
            let (a, b) = range.split_once("..").ok_or_else(bad)?;
            let start = a.trim().parse().map_err(|_| bad())?;
            let end = b.trim().parse().map_err(|_| bad())?;
            let domains = doms
                .split(',')
                .map(|d| d.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            stages.push(Stage { start, end, domains });
        }
        Self::new(stages)
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn end(&self) -> u64 {
        self.stages.last().map_or(0, |s| s.end)
    }

    pub fn stage_at(&self, step: u64) -> Option<(usize, &Stage)> {
        self.stages
            .iter()
            .enumerate()
            .find(|(_, s)| step >= s.start && step < s.end)
    }
}

impl std::fmt::Display for StageSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, s) in self.stages.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            let doms: Vec<String> = s.domains.iter().map(ToString::to_string).collect();
            write!(f, "{}..{}:{}", s.start, s.end, doms.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_lookup() {
        let s = StageSchedule::parse("0..250:0,1\n# later\n250..500:0,1,2").unwrap();
        assert_eq!(s.stages().len(), 2);
        assert_eq!(s.stage_at(249).unwrap().0, 0);
        assert_eq!(s.stage_at(250).unwrap().0, 1);
        assert!(s.stage_at(500).is_none());
        assert_eq!(s.to_string(), "0..250:0,1;250..500:0,1,2");
        assert_eq!(StageSchedule::parse(&s.to_string()).unwrap(), s);
    }

    #[test]
    fn rejects_gaps_and_overlaps() {
        assert!(StageSchedule::parse("0..10:0;11..20:1").is_err());
        assert!(StageSchedule::parse("0..10:0;5..20:1").is_err());
        assert!(StageSchedule::parse("1..10:0").is_err());
        assert!(StageSchedule::parse("0..10:").is_err());
        assert!(StageSchedule::parse("").is_err());
    }
}
