use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cost::SimTime;
use crate::dataflow::StageKind;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub op: String,
    /// `None` for controller ops.
    pub model: Option<String>,
    pub pool: Option<usize>,
    pub stage: StageKind,
    pub start: SimTime,
    pub end: SimTime,
    /// Global devices the op occupies.
    pub devices: Vec<u32>,
    /// Bytes moved onto these devices from elsewhere.
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpan {
    pub stage: StageKind,
    pub start: SimTime,
    pub end: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub events: Vec<TraceEvent>,
    pub stages: Vec<StageSpan>,
    pub makespan: SimTime,
}

/// Two events that share a device and overlap in time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Overlap {
    pub device: u32,
    pub first: String,
    pub second: String,
}

impl ExecutionTrace {
    /// One JSON object per event.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    /// Events with nonzero duration never overlap on a device.
    pub fn check_mutual_exclusion(&self) -> Result<(), Overlap> {
        let mut by_device: BTreeMap<u32, Vec<&TraceEvent>> = BTreeMap::new();
        for e in self.events.iter().filter(|e| e.end > e.start) {
            for &d in &e.devices {
                by_device.entry(d).or_default().push(e);
            }
        }
        for (device, mut events) in by_device {
            events.sort_by_key(|e| (e.start, e.end));
            for w in events.windows(2) {
                if w[1].start < w[0].end {
                    return Err(Overlap {
                        device,
                        first: w[0].op.clone(),
                        second: w[1].op.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Largest number of pools busy at the same instant within `stage`.
    pub fn max_concurrency(&self, stage: StageKind) -> usize {
        let events: Vec<&TraceEvent> = self
            .events
            .iter()
            .filter(|e| e.stage == stage && e.end > e.start && e.pool.is_some())
            .collect();
        events
            .iter()
            .map(|a| events.iter().filter(|b| b.start <= a.start && a.start < b.end).count())
            .max()
            .unwrap_or(0)
    }

    /// Text timeline, one row per event, bars scaled to the makespan.
    pub fn gantt(&self, width: usize) -> String {
        let mut out = String::new();
        let span = self.makespan.0.max(1) as f64;
        let _ = writeln!(
            out,
            "{:<12} {:<26} {:<6} {:>12} {:>12}  timeline",
            "stage", "op", "pool", "start(s)", "end(s)"
        );
        for e in &self.events {
            let lo = (e.start.0 as f64 / span * width as f64).round() as usize;
            let hi = ((e.end.0 as f64 / span * width as f64).round() as usize).max(lo);
            let mut bar = " ".repeat(lo);
            bar.push_str(&if hi > lo { "#".repeat(hi - lo) } else { "|".to_string() });
            let pool = e.pool.map_or("ctl".to_string(), |p| p.to_string());
            let _ = writeln!(
                out,
                "{:<12} {:<26} {:<6} {:>12.6} {:>12.6}  {}",
                e.stage.to_string(),
                e.op,
                pool,
                e.start.as_secs(),
                e.end.as_secs(),
                bar
            );
        }
        let _ = writeln!(out, "makespan {:.6} s", self.makespan.as_secs());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(op: &str, pool: usize, start: u64, end: u64, devices: Vec<u32>) -> TraceEvent {
        TraceEvent {
            op: op.into(),
            model: None,
            pool: Some(pool),
            stage: StageKind::Preparation,
            start: SimTime(start),
            end: SimTime(end),
            devices,
            bytes: 0,
        }
    }

    #[test]
    fn overlap_on_shared_device_is_found() {
        let t = ExecutionTrace {
            events: vec![ev("a", 0, 0, 10, vec![0, 1]), ev("b", 0, 5, 12, vec![1, 2])],
            stages: vec![],
            makespan: SimTime(12),
        };
        let o = t.check_mutual_exclusion().unwrap_err();
        assert_eq!(o.device, 1);
        assert_eq!(t.max_concurrency(StageKind::Preparation), 2);
    }

    #[test]
    fn disjoint_devices_may_overlap() {
        let t = ExecutionTrace {
            events: vec![ev("a", 0, 0, 10, vec![0]), ev("b", 1, 0, 10, vec![1]), ev("c", 0, 10, 11, vec![0])],
            stages: vec![],
            makespan: SimTime(11),
        };
        t.check_mutual_exclusion().unwrap();
        assert_eq!(t.to_jsonl().lines().count(), 3);
        assert!(t.gantt(20).contains("makespan"));
    }
}
