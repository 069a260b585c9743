//! Activation lifespans, the per-device bound and exact memory traces.
//!
//! An activation is allocated when its `F` starts and released when its
//! `W` (or `BW`) ends. Releases sort before allocations at the same time.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BuildingBlock, GridSchedule, PassId, PassIndex, PassKind};

/// Lifespan of one stage activation within a block instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lifespan {
    pub stage: usize,
    pub slot: usize,
    pub device: usize,
    /// Cell where `F` starts.
    pub alloc: i64,
    /// Cell where the releasing pass ends.
    pub release: i64,
    pub mem: f64,
}

impl Lifespan {
    pub fn length(&self) -> i64 {
        self.release - self.alloc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifespanTable {
    pub entries: Vec<Lifespan>,
    /// Stages hosted by each device, 1-based device order.
    pub stages_by_device: Vec<Vec<usize>>,
}

impl LifespanTable {
    pub fn on_device(&self, device: usize) -> impl Iterator<Item = &Lifespan> {
        self.entries.iter().filter(move |l| l.device == device)
    }
}

pub fn lifespans(block: &BuildingBlock) -> LifespanTable {
    let topo = &block.topology;
    let mut entries = Vec::new();
    for f in block.passes.iter().filter(|p| p.kind == PassKind::F) {
        let release = block
            .passes
            .iter()
            .filter(|p| p.stage == f.stage && p.slot == f.slot && p.kind.releases_activation())
            .map(|p| p.end())
            .max()
            .unwrap_or(f.end());
        entries.push(Lifespan {
            stage: f.stage,
            slot: f.slot,
            device: block.device_of(f),
            alloc: f.offset,
            release,
            mem: topo.stage_mem(f.stage),
        });
    }
    entries.sort_by_key(|l| (l.device, l.slot, l.stage));
    let mut stages_by_device = vec![Vec::new(); topo.devices()];
    for l in &entries {
        if !stages_by_device[l.device - 1].contains(&l.stage) {
            stages_by_device[l.device - 1].push(l.stage);
        }
    }
    LifespanTable { entries, stages_by_device }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakBound {
    pub per_device: Vec<f64>,
    pub max: f64,
}

/// `Σ ⌈l/T⌉·m` over the activations each device hosts.
///
/// Explicit repeat patterns are bounded through their uniform equivalent,
/// one block per period.
pub fn peak_bound(block: &BuildingBlock) -> Result<PeakBound> {
    let block = uniform(block)?;
    let t = block.interval().expect("uniform block") as i64;
    let mut per_device = vec![0.0; block.topology.devices()];
    for l in lifespans(&block).entries {
        per_device[l.device - 1] += ceil_div(l.length(), t) as f64 * l.mem;
    }
    let max = per_device.iter().copied().fold(0.0, f64::max);
    Ok(PeakBound { per_device, max })
}

fn uniform(block: &BuildingBlock) -> Result<BuildingBlock> {
    block.as_uniform().ok_or_else(|| {
        Error::Unsupported(format!("`{}` has no uniform equivalent; use the exact trace", block.name))
    })
}

fn ceil_div(a: i64, b: i64) -> i64 {
    (a + b - 1).div_euclid(b)
}

/// Stable-phase peak per device of an infinitely repeated uniform block.
pub fn periodic_peak(block: &BuildingBlock) -> Result<Vec<f64>> {
    let block = uniform(block)?;
    let t = block.interval().expect("uniform block") as i64;
    let table = lifespans(&block);
    Ok((1..=block.topology.devices())
        .map(|dev| {
            (0..t)
                .map(|x| {
                    table
                        .on_device(dev)
                        .map(|l| ((x - l.alloc).div_euclid(t) - (x - l.release).div_euclid(t)) as f64 * l.mem)
                        .sum::<f64>()
                })
                .fold(0.0, f64::max)
        })
        .collect())
}

/// Allocated activation memory over time on every device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryTrace {
    /// Per device, `(time, allocated)` after each change point.
    pub steps: Vec<Vec<(f64, f64)>>,
    pub per_device: Vec<f64>,
    pub peak: f64,
}

impl MemoryTrace {
    /// Builds a trace from `(device, alloc_time, release_time, mem)` intervals.
    pub fn from_intervals(devices: usize, intervals: impl IntoIterator<Item = (usize, f64, f64, f64)>) -> Self {
        let mut events: Vec<Vec<(f64, f64)>> = vec![Vec::new(); devices];
        for (dev, a, r, m) in intervals {
            events[dev - 1].push((a, m));
            events[dev - 1].push((r, -m));
        }
        let mut steps = Vec::with_capacity(devices);
        let mut per_device = Vec::with_capacity(devices);
        for mut ev in events {
            ev.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
            let mut cur = 0.0;
            let mut peak: f64 = 0.0;
            let mut trace: Vec<(f64, f64)> = Vec::new();
            for (t, dm) in ev {
                cur += dm;
                if cur.abs() < 1e-12 {
                    cur = 0.0;
                }
                peak = peak.max(cur);
                match trace.last_mut() {
                    Some(last) if last.0 == t => last.1 = cur,
                    _ => trace.push((t, cur)),
                }
            }
            steps.push(trace);
            per_device.push(peak);
        }
        let peak = per_device.iter().copied().fold(0.0, f64::max);
        Self { steps, per_device, peak }
    }

    /// Writes `time_cell,device,allocated_units` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time_cell,device,allocated_units")?;
        for (d, steps) in self.steps.iter().enumerate() {
            for (t, v) in steps {
                writeln!(out, "{t},{},{v}", d + 1)?;
            }
        }
        Ok(())
    }
}

/// Exact per-device peak from an event sweep over the grid schedule.
pub fn exact_peak(schedule: &GridSchedule) -> MemoryTrace {
    let topo = &schedule.topology;
    let index = PassIndex::new(topo.num_stages());
    let timing = schedule.timing_table();
    let makespan = schedule.makespan();
    let intervals = schedule.passes().filter(|p| p.id.kind == PassKind::F).map(|p| {
        let release = [PassKind::W, PassKind::BW]
            .iter()
            .filter_map(|&k| timing[index.of(PassId::new(p.id.stage, k, p.id.microbatch))])
            .map(|(_, e)| e)
            .max()
            .unwrap_or(makespan);
        (p.device, p.start as f64, release as f64, topo.stage_mem(p.id.stage))
    });
    MemoryTrace::from_intervals(topo.devices(), intervals)
}

/// Exact peak against the lifespan bound on one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub device: usize,
    pub exact: f64,
    pub bound: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub devices: Vec<BoundCheck>,
    pub violations: Vec<usize>,
}

impl BoundReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_bound(schedule: &GridSchedule, block: &BuildingBlock) -> Result<BoundReport> {
    let bound = peak_bound(block)?;
    let exact = exact_peak(schedule);
    let devices: Vec<BoundCheck> = exact
        .per_device
        .iter()
        .zip(&bound.per_device)
        .enumerate()
        .map(|(i, (&e, &b))| BoundCheck { device: i + 1, exact: e, bound: b, slack: b - e })
        .collect();
    let violations = devices.iter().filter(|c| c.slack < -1e-9).map(|c| c.device).collect();
    Ok(BoundReport { devices, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::assemble;
    use crate::gallery::{build_gallery, build_v_block, GalleryParams, VVariant};
    use crate::model::{BlockPass, RepeatPattern, Topology};

    #[test]
    fn one_f_one_b_first_stage_lives_whole_block() {
        let b = build_gallery("1f1b", 4, GalleryParams::default()).unwrap();
        let t = lifespans(&b);
        let first = t.entries.iter().find(|l| l.stage == 1).unwrap();
        assert_eq!(first.length(), b.span());
        assert_eq!(peak_bound(&b).unwrap().per_device[0], 4.0);
    }

    #[test]
    fn single_stage_lifespan_is_three_cells() {
        let b = BuildingBlock {
            name: "one".into(),
            topology: Topology::sequential(1),
            passes: vec![
                BlockPass::new(1, PassKind::F, 0, 0),
                BlockPass::new(1, PassKind::B, 1, 0),
                BlockPass::new(1, PassKind::W, 2, 0),
            ],
            microbatches_per_block: 1,
            repeat: RepeatPattern::Uniform(3),
        };
        assert_eq!(lifespans(&b).entries[0].length(), 3);
        assert_eq!(peak_bound(&b).unwrap().max, 1.0);
    }

    #[test]
    fn explicit_pattern_bounded_per_period() {
        let b = build_gallery("interleaved-1f1b", 4, GalleryParams::default()).unwrap();
        let s = assemble(&b, 16).unwrap();
        let report = check_bound(&s, &b).unwrap();
        assert!(report.ok(), "{report:?}");
        assert_eq!(periodic_peak(&b).unwrap().len(), 4);
    }

    #[test]
    fn v_min_d4_exact_peak_is_half() {
        let b = build_v_block(4, VVariant::Min).unwrap();
        let s = assemble(&b, 16).unwrap();
        let trace = exact_peak(&s);
        assert_eq!(trace.per_device, vec![4.0; 4]);
        assert_eq!(trace.peak / b.topology.total_mem(), 0.5);
    }

    #[test]
    fn v_half_d5_exact_peak() {
        let b = build_v_block(5, VVariant::Half).unwrap();
        let s = assemble(&b, 20).unwrap();
        assert_eq!(exact_peak(&s).peak, 6.0);
    }

    #[test]
    fn gpipe_stores_every_microbatch() {
        let b = build_gallery("gpipe", 4, GalleryParams::for_microbatches(8)).unwrap();
        let s = assemble(&b, 8).unwrap();
        assert_eq!(exact_peak(&s).per_device, vec![8.0; 4]);
        assert!(check_bound(&s, &b).unwrap().ok());
    }

    #[test]
    fn one_f_one_b_bound_is_tight() {
        let b = build_gallery("1f1b", 4, GalleryParams::default()).unwrap();
        let s = assemble(&b, 16).unwrap();
        let r = check_bound(&s, &b).unwrap();
        assert_eq!(r.devices[0].slack, 0.0);
    }

    #[test]
    fn trace_returns_to_zero() {
        let b = build_v_block(4, VVariant::Half).unwrap();
        let s = assemble(&b, 8).unwrap();
        let trace = exact_peak(&s);
        for steps in &trace.steps {
            assert_eq!(steps.last().unwrap().1, 0.0);
        }
        let mut csv = Vec::new();
        trace.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("time_cell,device,allocated_units\n"));
    }

    #[test]
    fn single_microbatch_peak_is_device_stage_sum() {
        let b = build_v_block(4, VVariant::Zb).unwrap();
        let s = assemble(&b, 1).unwrap();
        assert!(exact_peak(&s).per_device.iter().all(|&p| p <= 2.0));
    }
}
