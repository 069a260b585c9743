//! Repeat a block into a pipeline, then squeeze and reorder it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory;
use crate::model::{
    for_each_dependency, BuildingBlock, GridSchedule, PassId, PassIndex, PassKind, Provenance,
    ScheduledPass,
};

/// Two passes that claim the same cell on one device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub device: usize,
    pub cell: i64,
    pub first: PassId,
    pub second: PassId,
}

impl fmt::Display for CollisionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "collision on device {} at cell {}: {} and {}",
            self.device, self.cell, self.first, self.second
        )
    }
}

/// Translates block instances in time without any compaction.
///
/// Collisions are reported for the lowest device first, then the lowest cell.
pub fn repeat(block: &BuildingBlock, n: usize) -> Result<GridSchedule> {
    let mpb = block.microbatches_per_block;
    if n == 0 || mpb == 0 || !n.is_multiple_of(mpb) {
        return Err(Error::InvalidSchedule(format!(
            "{n} microbatches is not a positive multiple of {mpb} per block"
        )));
    }
    let instances = n / mpb;
    let mut passes = Vec::with_capacity(instances * block.passes.len());
    for j in 0..instances {
        let origin = block.repeat.start_of(j);
        for p in &block.passes {
            let microbatch = j * mpb + p.slot;
            passes.push(ScheduledPass {
                id: PassId::new(p.stage, p.kind, microbatch),
                device: block.topology.device_of(p.stage, microbatch),
                start: origin + p.offset,
                cells: p.kind.cells(),
            });
        }
    }
    let schedule = GridSchedule::from_passes(
        block.topology.clone(),
        n,
        passes,
        Provenance { block: block.name.clone(), steps: vec!["repeat".into()] },
    );
    if let Some(c) = first_collision(&schedule) {
        return Err(Error::Collision(Box::new(c)));
    }
    Ok(schedule)
}

/// First overlap in device-major, cell-minor order.
pub fn first_collision(schedule: &GridSchedule) -> Option<CollisionReport> {
    for (dev, lane) in schedule.lanes().iter().enumerate() {
        let mut best: Option<CollisionReport> = None;
        let mut reach: Option<&ScheduledPass> = None;
        for p in lane {
            if let Some(r) = reach {
                if p.start < r.end() && best.as_ref().is_none_or(|b| p.start < b.cell) {
                    best = Some(CollisionReport { device: dev + 1, cell: p.start, first: r.id, second: p.id });
                }
            }
            if reach.is_none_or(|r| p.end() > r.end()) {
                reach = Some(p);
            }
        }
        if best.is_some() {
            return best;
        }
    }
    None
}

/// Earliest start of every pass keeping each device's pass order.
///
/// Passes are visited by their original start, which is a topological
/// order for any dependency-valid schedule.
pub fn squeeze(schedule: &GridSchedule) -> GridSchedule {
    let lanes = squeeze_lanes(schedule, schedule.lanes().to_vec());
    schedule.with_lanes(lanes, "squeeze")
}

fn squeeze_lanes(schedule: &GridSchedule, lanes: Vec<Vec<ScheduledPass>>) -> Vec<Vec<ScheduledPass>> {
    let stages = schedule.topology.num_stages();
    let index = PassIndex::new(stages);
    let mut ends: Vec<Option<i64>> = vec![None; index.size(schedule.microbatches)];
    let mut order: Vec<(i64, usize, usize)> = Vec::new();
    for (d, lane) in lanes.iter().enumerate() {
        for (k, p) in lane.iter().enumerate() {
            order.push((p.start, d, k));
        }
    }
    order.sort_unstable();
    let mut out = lanes;
    let mut free = vec![i64::MIN; out.len()];
    let origin = order.first().map_or(0, |o| o.0).min(0);
    for (_, d, k) in order {
        let p = out[d][k];
        let mut start = free[d].max(origin);
        for_each_dependency(p.id, stages, |dep| {
            if let Some(e) = ends[index.of(dep)] {
                start = start.max(e);
            }
        });
        out[d][k].start = start;
        free[d] = start + p.cells as i64;
        ends[index.of(p.id)] = Some(start + p.cells as i64);
    }
    out
}

/// Greedy warm-up filling and cool-down redistribution of `W` passes.
///
/// Falls back to the warm-up-only result, then to the input, if a phase
/// would raise the makespan or any device's peak memory.
pub fn reorder(schedule: &GridSchedule) -> GridSchedule {
    let base_span = schedule.makespan();
    let base_peak = memory::exact_peak(schedule).per_device;
    let acceptable = |s: &GridSchedule| {
        s.makespan() <= base_span
            && memory::exact_peak(s).per_device.iter().zip(&base_peak).all(|(a, b)| a <= b)
            && s.validate().is_empty()
    };
    let warm = schedule.with_lanes(squeeze_lanes(schedule, warm_up_fill(schedule, &base_peak)), "reorder-warmup");
    let warm = if acceptable(&warm) { warm } else { schedule.clone() };
    let cool = cool_down(&warm);
    let mut out = if acceptable(&cool) { cool } else { warm };
    out.provenance.steps.retain(|s| !s.starts_with("reorder-"));
    out.provenance.steps.push("reorder".into());
    out
}

fn warm_up_fill(schedule: &GridSchedule, peak: &[f64]) -> Vec<Vec<ScheduledPass>> {
    let topo = &schedule.topology;
    let stages = topo.num_stages();
    let index = PassIndex::new(stages);
    let mut lanes = schedule.lanes().to_vec();
    let mut timing = schedule.timing_table();
    let origin = schedule.start().min(0);
    let horizon = (schedule.makespan() - origin + 1).max(1) as usize;

    for d in 0..lanes.len() {
        let Some(boundary) = lanes[d].iter().filter(|p| p.id.kind.is_backward()).map(|p| p.start).min() else {
            continue;
        };
        let Some(first) = lanes[d].first().map(|p| p.start) else { continue };
        let mut busy = vec![false; horizon];
        for p in &lanes[d] {
            for c in p.start..p.end() {
                busy[(c - origin) as usize] = true;
            }
        }
        let mut trace = DeviceTrace::new(&lanes[d], schedule, topo);
        for cell in first..boundary {
            if busy[(cell - origin) as usize] {
                continue;
            }
            let pick = lanes[d].iter().position(|p| {
                if p.start <= cell {
                    return false;
                }
                let room = (cell..cell + p.cells as i64)
                    .all(|c| !busy[(c - origin) as usize] || (c >= p.start && c < p.end()));
                if !room {
                    return false;
                }
                let mut ready = true;
                for_each_dependency(p.id, stages, |dep| {
                    ready &= matches!(timing[index.of(dep)], Some((_, e)) if e <= cell);
                });
                ready
                    && (p.id.kind != PassKind::F
                        || trace.max_with(cell, p.start, topo.stage_mem(p.id.stage)) <= peak[d] + 1e-9)
            });
            let Some(k) = pick else { continue };
            let p = lanes[d][k];
            let mem = topo.stage_mem(p.id.stage);
            if p.id.kind == PassKind::F {
                trace.add(cell, p.start, mem);
            } else if p.id.kind.releases_activation() {
                trace.add(cell + p.cells as i64, p.end(), -mem);
            }
            for c in p.start..p.end() {
                busy[(c - origin) as usize] = false;
            }
            for c in cell..cell + p.cells as i64 {
                busy[(c - origin) as usize] = true;
            }
            lanes[d][k].start = cell;
            timing[index.of(p.id)] = Some((cell, cell + p.cells as i64));
            lanes[d].sort_by_key(|q| (q.start, q.id));
        }
    }
    lanes
}

/// Allocation per cell of one device, for memory checks during warm-up moves.
struct DeviceTrace {
    origin: i64,
    load: Vec<f64>,
}

impl DeviceTrace {
    fn new(lane: &[ScheduledPass], schedule: &GridSchedule, topo: &crate::model::Topology) -> Self {
        let origin = schedule.start().min(0);
        let len = (schedule.makespan() - origin + 1).max(1) as usize;
        let mut t = Self { origin, load: vec![0.0; len] };
        let timing = schedule.timing_table();
        let index = PassIndex::new(topo.num_stages());
        for p in lane.iter().filter(|p| p.id.kind == PassKind::F) {
            let release = [PassKind::W, PassKind::BW]
                .iter()
                .filter_map(|&k| timing[index.of(PassId::new(p.id.stage, k, p.id.microbatch))])
                .map(|(_, e)| e)
                .max()
                .unwrap_or(schedule.makespan());
            t.add(p.start, release, topo.stage_mem(p.id.stage));
        }
        t
    }

    fn span(&self, from: i64, to: i64) -> std::ops::Range<usize> {
        let lo = (from - self.origin).clamp(0, self.load.len() as i64) as usize;
        let hi = (to - self.origin).clamp(0, self.load.len() as i64) as usize;
        lo..hi.max(lo)
    }

    fn add(&mut self, from: i64, to: i64, v: f64) {
        let r = self.span(from, to);
        for x in &mut self.load[r] {
            *x += v;
        }
    }

    /// Highest load over `[from, to)` if `v` were added there.
    fn max_with(&self, from: i64, to: i64, v: f64) -> f64 {
        self.load[self.span(from, to)].iter().fold(f64::MIN, |a, &b| a.max(b + v))
    }
}

fn cool_down(schedule: &GridSchedule) -> GridSchedule {
    let mut kept: Vec<Vec<ScheduledPass>> = Vec::with_capacity(schedule.devices());
    let mut moved: Vec<Vec<ScheduledPass>> = Vec::with_capacity(schedule.devices());
    for lane in schedule.lanes() {
        let last_f = lane.iter().filter(|p| p.id.kind == PassKind::F).map(ScheduledPass::end).max();
        let (w, rest): (Vec<_>, Vec<_>) = lane
            .iter()
            .partition(|p| p.id.kind == PassKind::W && last_f.is_none_or(|e| p.start >= e));
        kept.push(rest);
        moved.push(w);
    }
    if moved.iter().all(Vec::is_empty) {
        return schedule.clone();
    }
    let stripped = squeeze_lanes(schedule, kept);
    let stages = schedule.topology.num_stages();
    let index = PassIndex::new(stages);
    let mut b_end = vec![None; index.size(schedule.microbatches)];
    for p in stripped.iter().flatten() {
        b_end[index.of(p.id)] = Some(p.end());
    }
    let mut lanes = stripped;
    for (d, ws) in moved.into_iter().enumerate() {
        if ws.is_empty() {
            continue;
        }
        let ready = |w: &ScheduledPass| b_end[index.of(PassId::new(w.id.stage, PassKind::B, w.id.microbatch))].unwrap_or(i64::MAX);
        let mut pending: Vec<ScheduledPass> = ws;
        pending.sort_by_key(|w| (ready(w), w.id));
        let from = lanes[d].iter().filter(|p| p.id.kind == PassKind::F).map(ScheduledPass::end).max().unwrap_or(0);
        let to = lanes[d].iter().map(ScheduledPass::end).max().unwrap_or(from);
        let mut busy: Vec<bool> = vec![false; (to - from).max(0) as usize];
        for p in &lanes[d] {
            for c in p.start.max(from)..p.end().min(to) {
                busy[(c - from) as usize] = true;
            }
        }
        for c in from..to {
            if busy[(c - from) as usize] {
                continue;
            }
            if let Some(k) = pending.iter().position(|w| ready(w) <= c) {
                let mut w = pending.remove(k);
                w.start = c;
                lanes[d].push(w);
            }
        }
        let mut tail = to.max(lanes[d].iter().map(ScheduledPass::end).max().unwrap_or(to));
        for mut w in pending {
            w.start = tail.max(ready(&w));
            tail = w.end();
            lanes[d].push(w);
        }
        lanes[d].sort_by_key(|q| (q.start, q.id));
    }
    schedule.with_lanes(lanes, "reorder-cooldown")
}

/// `repeat`, `squeeze`, then `reorder`.
pub fn assemble(block: &BuildingBlock, n: usize) -> Result<GridSchedule> {
    let repeated = repeat(block, n)?;
    Ok(reorder(&squeeze(&repeated)))
}

/// `repeat` then `squeeze`, without boundary reordering.
pub fn assemble_squeezed(block: &BuildingBlock, n: usize) -> Result<GridSchedule> {
    Ok(squeeze(&repeat(block, n)?))
}
