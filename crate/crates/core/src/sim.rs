//! Replays a grid schedule under real pass durations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assemble::assemble;
use crate::error::{Error, Result};
use crate::gallery::{build_gallery, GalleryParams};
use crate::memory::{exact_peak, MemoryTrace};
use crate::model::{for_each_dependency, GridSchedule, PassId, PassIndex, PassKind, RunTimeProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPass {
    pub id: PassId,
    pub device: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub makespan: f64,
    pub busy: Vec<f64>,
    /// Idle time inside `[0, makespan]` per device.
    pub idle: Vec<f64>,
    /// Idle time between each device's first start and last end.
    pub span_idle: Vec<f64>,
    pub bubble_rate: f64,
    pub passes: Vec<SimPass>,
    pub memory: MemoryTrace,
}

impl SimResult {
    pub fn peak_per_device(&self) -> &[f64] {
        &self.memory.per_device
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Starts every pass as soon as its device is free and its inputs arrived.
///
/// Cross-device inputs arrive `comm` after they finish. Device pass order is
/// the grid order.
pub fn simulate(schedule: &GridSchedule, profile: &RunTimeProfile) -> Result<SimResult> {
    profile.check()?;
    if schedule.is_empty() {
        return Err(Error::InvalidSchedule("schedule has no passes".into()));
    }
    let topo = &schedule.topology;
    let stages = topo.num_stages();
    let index = PassIndex::new(stages);
    let mut ends: Vec<Option<(f64, usize)>> = vec![None; index.size(schedule.microbatches)];
    let mut order: Vec<(i64, usize, usize)> = Vec::with_capacity(schedule.len());
    for (d, lane) in schedule.lanes().iter().enumerate() {
        for (k, p) in lane.iter().enumerate() {
            order.push((p.start, d, k));
        }
    }
    order.sort_unstable();
    let mut free = vec![0.0_f64; schedule.devices()];
    let mut passes = Vec::with_capacity(order.len());
    for (_, d, k) in order {
        let p = schedule.lanes()[d][k];
        let mut start = free[d];
        let mut missing = None;
        for_each_dependency(p.id, stages, |dep| match ends[index.of(dep)] {
            Some((e, dev)) => {
                let lag = if dev != p.device { profile.comm } else { 0.0 };
                start = start.max(e + lag);
            }
            None => missing = Some(dep),
        });
        if let Some(dep) = missing {
            return Err(Error::InvalidSchedule(format!(
                "{} is ordered before its dependency {dep}",
                p.id
            )));
        }
        let end = start + profile.duration(p.id.kind);
        free[d] = end;
        ends[index.of(p.id)] = Some((end, p.device));
        passes.push(SimPass { id: p.id, device: p.device, start, end });
    }
    passes.sort_by(|a, b| a.device.cmp(&b.device).then(a.start.total_cmp(&b.start)));

    let devices = schedule.devices();
    let makespan = passes.iter().map(|p| p.end).fold(0.0, f64::max);
    let mut busy = vec![0.0; devices];
    let mut first = vec![f64::INFINITY; devices];
    let mut last = vec![0.0_f64; devices];
    for p in &passes {
        busy[p.device - 1] += p.end - p.start;
        first[p.device - 1] = first[p.device - 1].min(p.start);
        last[p.device - 1] = last[p.device - 1].max(p.end);
    }
    let idle = busy.iter().map(|b| makespan - b).collect();
    let span_idle = (0..devices)
        .map(|d| if first[d].is_finite() { last[d] - first[d] - busy[d] } else { 0.0 })
        .collect();
    let total: f64 = busy.iter().sum();
    let bubble_rate = if makespan > 0.0 { 1.0 - total / (devices as f64 * makespan) } else { 0.0 };

    let mut release = vec![None; index.size(schedule.microbatches)];
    for p in &passes {
        if p.id.kind.releases_activation() {
            release[index.of(PassId::new(p.id.stage, PassKind::F, p.id.microbatch))] = Some(p.end);
        }
    }
    let memory = MemoryTrace::from_intervals(
        devices,
        passes.iter().filter(|p| p.id.kind == PassKind::F).map(|p| {
            let r = release[index.of(p.id)].unwrap_or(makespan);
            (p.device, p.start, r, topo.stage_mem(p.id.stage))
        }),
    );
    Ok(SimResult { makespan, busy, idle, span_idle, bubble_rate, passes, memory })
}

/// One row of a schedule comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub block: String,
    pub devices: usize,
    pub microbatches: usize,
    pub bubble_rate: Option<f64>,
    pub makespan: Option<f64>,
    /// Exact grid peak in units of per-stage memory.
    pub peak: Option<f64>,
    /// Exact grid peak as a fraction of one microbatch's activations.
    pub peak_fraction: Option<f64>,
    pub error: Option<String>,
}

/// Name of the analytic recomputation row in [`compare`].
pub const RECOMPUTE_ROW: &str = "1f1b-r";

/// Assembles, simulates and measures each named block; failures stay per row.
///
/// [`RECOMPUTE_ROW`] runs 1F1B with the forward pass repeated inside each
/// grouped backward and reports no activation peak.
pub fn compare(blocks: &[&str], d: usize, n: usize, profile: &RunTimeProfile) -> Vec<CompareRow> {
    blocks
        .par_iter()
        .map(|&name| {
            let mut row = CompareRow {
                block: name.to_string(),
                devices: d,
                microbatches: n,
                bubble_rate: None,
                makespan: None,
                peak: None,
                peak_fraction: None,
                error: None,
            };
            let mut run = || -> Result<()> {
                let (id, profile) = if name == RECOMPUTE_ROW {
                    let grouped = profile.duration(PassKind::BW) + profile.t_f;
                    ("1f1b", profile.with_grouped(grouped)?)
                } else {
                    (name, *profile)
                };
                let block = build_gallery(id, d, GalleryParams::for_microbatches(n))?;
                let mb = n.div_ceil(block.microbatches_per_block) * block.microbatches_per_block;
                let schedule = assemble(&block, mb)?;
                let sim = simulate(&schedule, &profile)?;
                row.bubble_rate = Some(sim.bubble_rate);
                row.makespan = Some(sim.makespan);
                if name != RECOMPUTE_ROW {
                    let peak = exact_peak(&schedule).peak;
                    row.peak = Some(peak);
                    row.peak_fraction = Some(peak / block.topology.total_mem());
                }
                Ok(())
            };
            if let Err(e) = run() {
                row.error = Some(e.to_string());
            }
            row
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::assemble_squeezed;
    use crate::gallery::{build_v_block, VVariant};

    #[test]
    fn one_f_one_b_bubble_rate() {
        let b = build_gallery("1f1b", 4, GalleryParams::default()).unwrap();
        let s = assemble(&b, 8).unwrap();
        let p = RunTimeProfile::new(1.0, 1.0, 1.0).unwrap().with_grouped(2.0).unwrap();
        let r = simulate(&s, &p).unwrap();
        assert!((r.bubble_rate - 3.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn v_zb_unit_profile_has_no_span_idle() {
        let b = build_v_block(4, VVariant::Zb).unwrap();
        let r = simulate(&assemble(&b, 8).unwrap(), &RunTimeProfile::unit()).unwrap();
        assert!(r.span_idle.iter().all(|&x| x == 0.0), "{:?}", r.span_idle);
    }

    #[test]
    fn single_device_has_no_bubble() {
        let one = crate::model::BuildingBlock {
            name: "one".into(),
            topology: crate::model::Topology::sequential(1),
            passes: vec![
                crate::model::BlockPass::new(1, PassKind::F, 0, 0),
                crate::model::BlockPass::new(1, PassKind::B, 1, 0),
                crate::model::BlockPass::new(1, PassKind::W, 2, 0),
            ],
            microbatches_per_block: 1,
            repeat: crate::model::RepeatPattern::Uniform(3),
        };
        let s = assemble(&one, 5).unwrap();
        let r = simulate(&s, &RunTimeProfile::new(3.0, 1.5, 0.25).unwrap()).unwrap();
        assert_eq!(r.bubble_rate, 0.0);
    }

    #[test]
    fn unit_makespan_equals_grid_makespan() {
        let b = build_v_block(5, VVariant::Half).unwrap();
        let s = assemble_squeezed(&b, 10).unwrap();
        let r = simulate(&s, &RunTimeProfile::unit()).unwrap();
        assert_eq!(r.makespan, s.makespan() as f64);
    }

    #[test]
    fn compare_keeps_failures_per_row() {
        let rows = compare(&["v-min", "bogus"], 4, 8, &RunTimeProfile::unit());
        assert_eq!(rows.len(), 2);
        assert!(rows[0].error.is_none());
        assert!(rows[1].error.is_some());
        assert!(compare(&[], 4, 8, &RunTimeProfile::unit()).is_empty());
    }

    #[test]
    fn recompute_row_matches_analytic_rate() {
        let rows = compare(&[RECOMPUTE_ROW], 4, 8, &RunTimeProfile::unit());
        assert!((rows[0].bubble_rate.unwrap() - 3.0 / 11.0).abs() < 1e-12);
        assert!(rows[0].peak.is_none());
    }

    #[test]
    fn empty_schedule_is_rejected() {
        let s = GridSchedule::from_passes(crate::model::Topology::sequential(2), 1, vec![], Default::default());
        assert!(simulate(&s, &RunTimeProfile::unit()).is_err());
    }
}
