//! Devices, stages and passes on the integer design grid.
//!
//! Stages and devices are 1-based, microbatches are 0-based. Every `F`, `B`
//! and `W` pass occupies one grid cell; a grouped `BW` pass occupies two.
//! Real durations only enter through [`RunTimeProfile`] in the simulator.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind of pipeline work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PassKind {
    /// Forward.
    F,
    /// Backward for activation gradients.
    B,
    /// Backward for weight gradients.
    W,
    /// Grouped backward (B and W fused).
    BW,
}

impl PassKind {
    pub const ALL: [PassKind; 4] = [PassKind::F, PassKind::B, PassKind::W, PassKind::BW];

    /// Width on the design grid.
    pub fn cells(self) -> u32 {
        match self {
            PassKind::BW => 2,
            _ => 1,
        }
    }

    pub(crate) fn index(self) -> usize {
        match self {
            PassKind::F => 0,
            PassKind::B => 1,
            PassKind::W => 2,
            PassKind::BW => 3,
        }
    }

    /// True for the pass whose completion frees the stage activation.
    pub fn releases_activation(self) -> bool {
        matches!(self, PassKind::W | PassKind::BW)
    }

    pub fn is_backward(self) -> bool {
        matches!(self, PassKind::B | PassKind::BW)
    }

    pub fn label(self) -> &'static str {
        match self {
            PassKind::F => "F",
            PassKind::B => "B",
            PassKind::W => "W",
            PassKind::BW => "BW",
        }
    }

    pub fn parse(s: &str) -> Option<PassKind> {
        match s {
            "F" | "f" => Some(PassKind::F),
            "B" | "b" => Some(PassKind::B),
            "W" | "w" => Some(PassKind::W),
            "BW" | "bw" => Some(PassKind::BW),
            _ => None,
        }
    }
}

impl fmt::Display for PassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One pass of one microbatch through one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PassId {
    pub stage: usize,
    pub kind: PassKind,
    pub microbatch: usize,
}

impl PassId {
    pub fn new(stage: usize, kind: PassKind, microbatch: usize) -> Self {
        Self { stage, kind, microbatch }
    }
}

impl fmt::Display for PassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(stage {}, mb {})", self.kind, self.stage, self.microbatch)
    }
}

/// Model partitioning and device placement.
///
/// A topology may carry several model replicas (GEMS, Chimera). Microbatch
/// `k` runs on replica `k % replicas`, each replica with its own
/// stage-to-device map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    devices: usize,
    num_stages: usize,
    placements: Vec<Vec<usize>>,
    stage_mem: Vec<f64>,
}

impl Topology {
    pub fn new(devices: usize, placements: Vec<Vec<usize>>, stage_mem: Vec<f64>) -> Result<Self> {
        if devices == 0 {
            return Err(Error::InvalidTopology("device count must be positive".into()));
        }
        let num_stages = placements.first().map_or(0, Vec::len);
        if num_stages == 0 {
            return Err(Error::InvalidTopology("at least one stage is required".into()));
        }
        if placements.iter().any(|p| p.len() != num_stages) {
            return Err(Error::InvalidTopology("replica placements differ in stage count".into()));
        }
        if let Some(&bad) = placements.iter().flatten().find(|&&dev| dev == 0 || dev > devices) {
            return Err(Error::InvalidTopology(format!("device index {bad} outside 1..={devices}")));
        }
        if stage_mem.len() != num_stages {
            return Err(Error::InvalidTopology(format!(
                "{} stage memory entries for {num_stages} stages",
                stage_mem.len()
            )));
        }
        if stage_mem.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidTopology("stage memory must be finite and nonnegative".into()));
        }
        Ok(Self { devices, num_stages, placements, stage_mem })
    }

    fn with_unit_memory(devices: usize, placements: Vec<Vec<usize>>) -> Self {
        let stages = placements[0].len();
        Self::new(devices, placements, vec![1.0; stages]).expect("built-in placement is valid")
    }

    /// Stage `i` on device `i`.
    pub fn sequential(devices: usize) -> Self {
        Self::with_unit_memory(devices, vec![(1..=devices).collect()])
    }

    /// `2d` stages; the second half runs back up the devices in reverse order.
    pub fn v_shape(devices: usize) -> Self {
        let placement = (1..=devices).chain((1..=devices).rev()).collect();
        Self::with_unit_memory(devices, vec![placement])
    }

    /// `chunks * d` stages placed round-robin, as in interleaved 1F1B.
    pub fn interleaved(devices: usize, chunks: usize) -> Self {
        let placement = (0..devices * chunks).map(|s| s % devices + 1).collect();
        Self::with_unit_memory(devices, vec![placement])
    }

    /// Two replicas, the second placed in reverse device order.
    pub fn mirrored(devices: usize) -> Self {
        Self::with_unit_memory(
            devices,
            vec![(1..=devices).collect(), (1..=devices).rev().collect()],
        )
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn num_stages(&self) -> usize {
        self.num_stages
    }

    pub fn replicas(&self) -> usize {
        self.placements.len()
    }

    pub fn placements(&self) -> &[Vec<usize>] {
        &self.placements
    }

    pub fn stage_mem(&self, stage: usize) -> f64 {
        self.stage_mem[stage - 1]
    }

    pub fn stage_mems(&self) -> &[f64] {
        &self.stage_mem
    }

    /// Total activation memory of one microbatch, `M`.
    pub fn total_mem(&self) -> f64 {
        self.stage_mem.iter().sum()
    }

    /// Replaces the per-stage memory; `M` becomes the sum.
    pub fn set_stage_mem(&mut self, stage_mem: Vec<f64>) -> Result<()> {
        *self = Self::new(self.devices, std::mem::take(&mut self.placements), stage_mem)?;
        Ok(())
    }

    pub fn replica_of(&self, microbatch: usize) -> usize {
        microbatch % self.placements.len()
    }

    pub fn device_of(&self, stage: usize, microbatch: usize) -> usize {
        self.placements[self.replica_of(microbatch)][stage - 1]
    }

    pub fn check_stage(&self, stage: usize) -> Result<()> {
        if stage == 0 || stage > self.num_stages {
            Err(Error::InvalidStage { stage, num_stages: self.num_stages })
        } else {
            Ok(())
        }
    }
}

/// Passes that must complete before `pass` may start.
///
/// `F(s)` waits on `F(s-1)`; `B(s)` on `F(s)` and `B(s+1)`; `W(s)` on `B(s)`;
/// `BW(s)` on `F(s)` and `BW(s+1)`.
pub fn dependencies(pass: PassId, topology: &Topology) -> Result<Vec<PassId>> {
    topology.check_stage(pass.stage)?;
    let mut deps = Vec::with_capacity(2);
    for_each_dependency(pass, topology.num_stages(), |d| deps.push(d));
    Ok(deps)
}

#[inline]
pub(crate) fn for_each_dependency(pass: PassId, num_stages: usize, mut f: impl FnMut(PassId)) {
    let PassId { stage, kind, microbatch } = pass;
    let at = |stage, kind| PassId { stage, kind, microbatch };
    match kind {
        PassKind::F => {
            if stage > 1 {
                f(at(stage - 1, PassKind::F));
            }
        }
        PassKind::B | PassKind::BW => {
            f(at(stage, PassKind::F));
            if stage < num_stages {
                f(at(stage + 1, kind));
            }
        }
        PassKind::W => f(at(stage, PassKind::B)),
    }
}

/// Dense numbering of `(microbatch, stage, kind)` for array-backed lookups.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PassIndex {
    num_stages: usize,
}

impl PassIndex {
    pub fn new(num_stages: usize) -> Self {
        Self { num_stages }
    }

    pub fn size(&self, microbatches: usize) -> usize {
        microbatches * self.num_stages * 4
    }

    #[inline]
    pub fn of(&self, id: PassId) -> usize {
        (id.microbatch * self.num_stages + id.stage - 1) * 4 + id.kind.index()
    }
}

/// A pass positioned inside a building block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPass {
    pub stage: usize,
    pub kind: PassKind,
    /// Cell relative to the block origin.
    pub offset: i64,
    /// Microbatch within the block, for blocks covering several.
    pub slot: usize,
}

impl BlockPass {
    pub fn new(stage: usize, kind: PassKind, offset: i64, slot: usize) -> Self {
        Self { stage, kind, offset, slot }
    }

    pub fn end(&self) -> i64 {
        self.offset + self.kind.cells() as i64
    }
}

/// How block instances are laid out in time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepeatPattern {
    /// Instance `j` starts at `j * interval`.
    Uniform(u32),
    /// Instance `j` starts at `starts[j % len] + (j / len) * period`.
    Explicit { starts: Vec<i64>, period: i64 },
}

impl RepeatPattern {
    pub fn start_of(&self, instance: usize) -> i64 {
        match self {
            RepeatPattern::Uniform(t) => instance as i64 * *t as i64,
            RepeatPattern::Explicit { starts, period } => {
                let len = starts.len();
                starts[instance % len] + (instance / len) as i64 * period
            }
        }
    }
}

/// The layout of all passes of one (occasionally several) microbatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingBlock {
    pub name: String,
    pub topology: Topology,
    pub passes: Vec<BlockPass>,
    pub microbatches_per_block: usize,
    pub repeat: RepeatPattern,
}

impl BuildingBlock {
    /// Uniform repeating interval, `None` for explicit patterns.
    pub fn interval(&self) -> Option<u32> {
        match self.repeat {
            RepeatPattern::Uniform(t) => Some(t),
            RepeatPattern::Explicit { .. } => None,
        }
    }

    pub fn is_uniform(&self) -> bool {
        self.interval().is_some()
    }

    pub fn device_of(&self, pass: &BlockPass) -> usize {
        self.topology.device_of(pass.stage, pass.slot)
    }

    /// Grid cells each device executes per block instance.
    pub fn cells_per_device(&self) -> Vec<u32> {
        let mut cells = vec![0; self.topology.devices()];
        for p in &self.passes {
            cells[self.device_of(p) - 1] += p.kind.cells();
        }
        cells
    }

    /// Cells between the first block pass start and the last pass end.
    pub fn span(&self) -> i64 {
        let lo = self.passes.iter().map(|p| p.offset).min().unwrap_or(0);
        let hi = self.passes.iter().map(BlockPass::end).max().unwrap_or(0);
        hi - lo
    }

    pub fn uses_grouped_backward(&self) -> bool {
        self.passes.iter().any(|p| p.kind == PassKind::BW)
    }

    pub fn find(&self, stage: usize, kind: PassKind, slot: usize) -> Option<&BlockPass> {
        self.passes.iter().find(|p| p.stage == stage && p.kind == kind && p.slot == slot)
    }

    /// The same schedule as a block with a uniform interval.
    ///
    /// An explicit pattern of `L` starts becomes one block of `L` instances
    /// repeating every `period` cells. `None` if replica assignment would
    /// differ between periods.
    pub fn as_uniform(&self) -> Option<BuildingBlock> {
        let (starts, period) = match &self.repeat {
            RepeatPattern::Uniform(_) => return Some(self.clone()),
            RepeatPattern::Explicit { starts, period } => (starts, *period),
        };
        let mpb = self.microbatches_per_block;
        let per_period = starts.len() * mpb;
        if period <= 0 || !per_period.is_multiple_of(self.topology.replicas()) {
            return None;
        }
        let passes = starts
            .iter()
            .enumerate()
            .flat_map(|(k, &origin)| {
                self.passes.iter().map(move |p| BlockPass::new(p.stage, p.kind, origin + p.offset, k * mpb + p.slot))
            })
            .collect();
        Some(BuildingBlock {
            name: self.name.clone(),
            topology: self.topology.clone(),
            passes,
            microbatches_per_block: per_period,
            repeat: RepeatPattern::Uniform(period as u32),
        })
    }
}

/// A defect found by [`validate_block`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BlockViolation {
    MissingPass { stage: usize, slot: usize, kind: PassKind },
    MixedBackward { stage: usize, slot: usize },
    DuplicatePass { stage: usize, slot: usize, kind: PassKind },
    NegativeOffset { stage: usize, slot: usize, kind: PassKind },
    OrderViolation { pass: PassId, depends_on: PassId },
    Overlap { device: usize, cell: i64, first: PassId, second: PassId },
    BadSlot { slot: usize },
    InvalidStage { stage: usize },
}

impl fmt::Display for BlockViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockViolation::MissingPass { stage, slot, kind } => {
                write!(f, "missing {kind} for stage {stage} (slot {slot})")
            }
            BlockViolation::MixedBackward { stage, slot } => {
                write!(f, "stage {stage} (slot {slot}) mixes BW with split B/W")
            }
            BlockViolation::DuplicatePass { stage, slot, kind } => {
                write!(f, "duplicate {kind} for stage {stage} (slot {slot})")
            }
            BlockViolation::NegativeOffset { stage, slot, kind } => {
                write!(f, "{kind} of stage {stage} (slot {slot}) has a negative offset")
            }
            BlockViolation::OrderViolation { pass, depends_on } => {
                write!(f, "{pass} starts before {depends_on} ends")
            }
            BlockViolation::Overlap { device, cell, first, second } => {
                write!(f, "device {device} cell {cell}: {first} overlaps {second}")
            }
            BlockViolation::BadSlot { slot } => write!(f, "slot {slot} outside the block"),
            BlockViolation::InvalidStage { stage } => write!(f, "stage {stage} does not exist"),
        }
    }
}

/// Checks coverage, intra-block dependency order and per-device overlap.
///
/// Never fails; an empty list means the block is valid.
pub fn validate_block(block: &BuildingBlock) -> Vec<BlockViolation> {
    let topo = &block.topology;
    let stages = topo.num_stages();
    let slots = block.microbatches_per_block;
    let mut out = Vec::new();
    let mut present = vec![[0u8; 4]; stages * slots.max(1)];
    let mut offsets = vec![[None::<i64>; 4]; stages * slots.max(1)];

    for p in &block.passes {
        if p.stage == 0 || p.stage > stages {
            out.push(BlockViolation::InvalidStage { stage: p.stage });
            continue;
        }
        if p.slot >= slots {
            out.push(BlockViolation::BadSlot { slot: p.slot });
            continue;
        }
        if p.offset < 0 {
            out.push(BlockViolation::NegativeOffset { stage: p.stage, slot: p.slot, kind: p.kind });
        }
        let at = p.slot * stages + p.stage - 1;
        present[at][p.kind.index()] += 1;
        if present[at][p.kind.index()] > 1 {
            out.push(BlockViolation::DuplicatePass { stage: p.stage, slot: p.slot, kind: p.kind });
        }
        offsets[at][p.kind.index()] = Some(p.offset);
    }
    if !out.is_empty() {
        return out;
    }

    let grouped = block.uses_grouped_backward();
    for slot in 0..slots {
        for stage in 1..=stages {
            let has = present[slot * stages + stage - 1];
            let mut need = |kind: PassKind| {
                if has[kind.index()] == 0 {
                    out.push(BlockViolation::MissingPass { stage, slot, kind });
                }
            };
            need(PassKind::F);
            if grouped {
                need(PassKind::BW);
            } else {
                need(PassKind::B);
                need(PassKind::W);
            }
            if has[PassKind::BW.index()] > 0
                && (has[PassKind::B.index()] > 0 || has[PassKind::W.index()] > 0)
            {
                out.push(BlockViolation::MixedBackward { stage, slot });
            }
        }
    }
    if !out.is_empty() {
        return out;
    }

    for p in &block.passes {
        let id = PassId::new(p.stage, p.kind, p.slot);
        for_each_dependency(id, stages, |dep| {
            let at = dep.microbatch * stages + dep.stage - 1;
            if let Some(dep_offset) = offsets[at][dep.kind.index()] {
                if dep_offset + dep.kind.cells() as i64 > p.offset {
                    out.push(BlockViolation::OrderViolation { pass: id, depends_on: dep });
                }
            }
        });
    }

    let mut lanes: Vec<Vec<(i64, i64, PassId)>> = vec![Vec::new(); topo.devices()];
    for p in &block.passes {
        lanes[block.device_of(p) - 1].push((p.offset, p.end(), PassId::new(p.stage, p.kind, p.slot)));
    }
    for (dev, lane) in lanes.iter_mut().enumerate() {
        lane.sort();
        for w in lane.windows(2) {
            if w[1].0 < w[0].1 {
                out.push(BlockViolation::Overlap { device: dev + 1, cell: w[1].0, first: w[0].2, second: w[1].2 });
            }
        }
    }
    out
}

/// A pass placed on the grid of a full schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledPass {
    pub id: PassId,
    pub device: usize,
    pub start: i64,
    pub cells: u32,
}

impl ScheduledPass {
    pub fn end(&self) -> i64 {
        self.start + self.cells as i64
    }
}

/// Which block and which framework steps produced a schedule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub block: String,
    pub steps: Vec<String>,
}

/// All passes of `n` microbatches on the device x time grid.
///
/// Each lane holds one device's passes sorted by start cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSchedule {
    pub topology: Topology,
    pub microbatches: usize,
    lanes: Vec<Vec<ScheduledPass>>,
    pub provenance: Provenance,
}

/// A defect in a full schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScheduleViolation {
    Overlap { device: usize, cell: i64, first: PassId, second: PassId },
    Dependency { pass: PassId, depends_on: PassId },
    MissingDependency { pass: PassId, depends_on: PassId },
    WrongDevice { pass: PassId, device: usize, expected: usize },
    Duplicate { pass: PassId },
    BadMicrobatch { pass: PassId },
    BadStage { pass: PassId },
    WrongWidth { pass: PassId, cells: u32 },
}

impl fmt::Display for ScheduleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleViolation::Overlap { device, cell, first, second } => {
                write!(f, "collision on device {device} at cell {cell}: {first} and {second}")
            }
            ScheduleViolation::Dependency { pass, depends_on } => {
                write!(f, "{pass} starts before its dependency {depends_on} ends")
            }
            ScheduleViolation::MissingDependency { pass, depends_on } => {
                write!(f, "{pass} depends on {depends_on}, which is not scheduled")
            }
            ScheduleViolation::WrongDevice { pass, device, expected } => {
                write!(f, "{pass} placed on device {device}, topology says {expected}")
            }
            ScheduleViolation::Duplicate { pass } => write!(f, "{pass} scheduled twice"),
            ScheduleViolation::BadMicrobatch { pass } => write!(f, "{pass} has an out-of-range microbatch"),
            ScheduleViolation::BadStage { pass } => write!(f, "{pass} has an out-of-range stage"),
            ScheduleViolation::WrongWidth { pass, cells } => {
                write!(f, "{pass} occupies {cells} cells")
            }
        }
    }
}

impl GridSchedule {
    /// Builds a schedule, sorting each device lane by start.
    pub fn from_passes(
        topology: Topology,
        microbatches: usize,
        passes: impl IntoIterator<Item = ScheduledPass>,
        provenance: Provenance,
    ) -> Self {
        let mut lanes = vec![Vec::new(); topology.devices()];
        for p in passes {
            lanes[p.device - 1].push(p);
        }
        for lane in &mut lanes {
            lane.sort_by_key(|p| (p.start, p.id));
        }
        Self { topology, microbatches, lanes, provenance }
    }

    pub fn lanes(&self) -> &[Vec<ScheduledPass>] {
        &self.lanes
    }

    pub fn lane(&self, device: usize) -> &[ScheduledPass] {
        &self.lanes[device - 1]
    }

    pub fn passes(&self) -> impl Iterator<Item = &ScheduledPass> {
        self.lanes.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.lanes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn devices(&self) -> usize {
        self.topology.devices()
    }

    pub fn start(&self) -> i64 {
        self.passes().map(|p| p.start).min().unwrap_or(0)
    }

    /// Last end cell over all devices.
    pub fn makespan(&self) -> i64 {
        self.passes().map(ScheduledPass::end).max().unwrap_or(0)
    }

    /// Occupied cells per device.
    pub fn busy_cells(&self) -> Vec<i64> {
        self.lanes.iter().map(|l| l.iter().map(|p| p.cells as i64).sum()).collect()
    }

    /// Vacant cells between each device's first start and last end.
    pub fn span_idle(&self) -> Vec<i64> {
        self.lanes
            .iter()
            .map(|lane| match (lane.first(), lane.iter().map(ScheduledPass::end).max()) {
                (Some(first), Some(last)) => {
                    last - first.start - lane.iter().map(|p| p.cells as i64).sum::<i64>()
                }
                _ => 0,
            })
            .collect()
    }

    pub(crate) fn with_lanes(&self, lanes: Vec<Vec<ScheduledPass>>, step: &str) -> Self {
        let mut provenance = self.provenance.clone();
        provenance.steps.push(step.to_string());
        let mut lanes = lanes;
        for lane in &mut lanes {
            lane.sort_by_key(|p| (p.start, p.id));
        }
        Self { topology: self.topology.clone(), microbatches: self.microbatches, lanes, provenance }
    }

    /// Per-pass `(start, end)` in cells, indexed by [`PassIndex`].
    pub(crate) fn timing_table(&self) -> Vec<Option<(i64, i64)>> {
        let index = PassIndex::new(self.topology.num_stages());
        let mut table = vec![None; index.size(self.microbatches)];
        for p in self.passes() {
            if p.id.microbatch < self.microbatches && p.id.stage >= 1 && p.id.stage <= self.topology.num_stages() {
                table[index.of(p.id)] = Some((p.start, p.end()));
            }
        }
        table
    }

    /// Checks collision-freedom, dependency order, placement and widths.
    pub fn validate(&self) -> Vec<ScheduleViolation> {
        let mut out = Vec::new();
        let stages = self.topology.num_stages();
        let index = PassIndex::new(stages);
        let mut seen = vec![false; index.size(self.microbatches)];
        for p in self.passes() {
            if p.id.stage == 0 || p.id.stage > stages {
                out.push(ScheduleViolation::BadStage { pass: p.id });
                continue;
            }
            if p.id.microbatch >= self.microbatches {
                out.push(ScheduleViolation::BadMicrobatch { pass: p.id });
                continue;
            }
            let slot = index.of(p.id);
            if seen[slot] {
                out.push(ScheduleViolation::Duplicate { pass: p.id });
            }
            seen[slot] = true;
            let expected = self.topology.device_of(p.id.stage, p.id.microbatch);
            if expected != p.device {
                out.push(ScheduleViolation::WrongDevice { pass: p.id, device: p.device, expected });
            }
            if p.cells != p.id.kind.cells() {
                out.push(ScheduleViolation::WrongWidth { pass: p.id, cells: p.cells });
            }
        }
        for (dev, lane) in self.lanes.iter().enumerate() {
            for w in lane.windows(2) {
                if w[1].start < w[0].end() {
                    out.push(ScheduleViolation::Overlap {
                        device: dev + 1,
                        cell: w[1].start,
                        first: w[0].id,
                        second: w[1].id,
                    });
                }
            }
        }
        if !out.is_empty() {
            return out;
        }
        let timing = self.timing_table();
        for p in self.passes() {
            for_each_dependency(p.id, stages, |dep| match timing[index.of(dep)] {
                Some((_, end)) if end > p.start => {
                    out.push(ScheduleViolation::Dependency { pass: p.id, depends_on: dep })
                }
                Some(_) => {}
                None => out.push(ScheduleViolation::MissingDependency { pass: p.id, depends_on: dep }),
            });
        }
        out
    }

    /// Counts `(forward, backward-work)` passes, a `BW` counting as one of each half.
    pub fn coverage(&self) -> (usize, usize, usize) {
        let mut f = 0;
        let mut b = 0;
        let mut w = 0;
        for p in self.passes() {
            match p.id.kind {
                PassKind::F => f += 1,
                PassKind::B => b += 1,
                PassKind::W => w += 1,
                PassKind::BW => {
                    b += 1;
                    w += 1;
                }
            }
        }
        (f, b, w)
    }
}

/// Per-kind pass durations for replaying a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunTimeProfile {
    pub t_f: f64,
    pub t_b: f64,
    pub t_w: f64,
    /// Grouped backward duration; defaults to `t_b + t_w`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_bw: Option<f64>,
    /// Latency added to every cross-device dependency.
    #[serde(default)]
    pub comm: f64,
}

impl RunTimeProfile {
    pub fn new(t_f: f64, t_b: f64, t_w: f64) -> Result<Self> {
        let p = Self { t_f, t_b, t_w, t_bw: None, comm: 0.0 };
        p.check()?;
        Ok(p)
    }

    /// Every pass takes one unit, `BW` two.
    pub fn unit() -> Self {
        Self { t_f: 1.0, t_b: 1.0, t_w: 1.0, t_bw: None, comm: 0.0 }
    }

    pub fn with_comm(mut self, comm: f64) -> Result<Self> {
        self.comm = comm;
        self.check()?;
        Ok(self)
    }

    pub fn with_grouped(mut self, t_bw: f64) -> Result<Self> {
        self.t_bw = Some(t_bw);
        self.check()?;
        Ok(self)
    }

    pub fn check(&self) -> Result<()> {
        let all = [self.t_f, self.t_b, self.t_w, self.t_bw.unwrap_or(0.0), self.comm];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidProfile("durations must be finite and nonnegative".into()));
        }
        if self.t_f + self.t_b + self.t_w <= 0.0 {
            return Err(Error::InvalidProfile("t_f + t_b + t_w must be positive".into()));
        }
        Ok(())
    }

    pub fn duration(&self, kind: PassKind) -> f64 {
        match kind {
            PassKind::F => self.t_f,
            PassKind::B => self.t_b,
            PassKind::W => self.t_w,
            PassKind::BW => self.t_bw.unwrap_or(self.t_b + self.t_w),
        }
    }

    /// Multiplies every duration and the latency by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            t_f: self.t_f * c,
            t_b: self.t_b * c,
            t_w: self.t_w * c,
            t_bw: self.t_bw.map(|v| v * c),
            comm: self.comm * c,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_stage_forward_has_no_dependency() {
        let topo = Topology::v_shape(4);
        assert!(dependencies(PassId::new(1, PassKind::F, 0), &topo).unwrap().is_empty());
    }

    #[test]
    fn last_stage_backward_turns_around() {
        let topo = Topology::v_shape(4);
        let deps = dependencies(PassId::new(8, PassKind::B, 0), &topo).unwrap();
        assert_eq!(deps, vec![PassId::new(8, PassKind::F, 0)]);
    }

    #[test]
    fn weight_pass_follows_its_backward() {
        let topo = Topology::v_shape(4);
        let deps = dependencies(PassId::new(3, PassKind::W, 5), &topo).unwrap();
        assert_eq!(deps, vec![PassId::new(3, PassKind::B, 5)]);
    }

    #[test]
    fn grouped_backward_chains_down() {
        let topo = Topology::sequential(4);
        let deps = dependencies(PassId::new(2, PassKind::BW, 1), &topo).unwrap();
        assert_eq!(deps, vec![PassId::new(2, PassKind::F, 1), PassId::new(3, PassKind::BW, 1)]);
    }

    #[test]
    fn invalid_stage_is_rejected() {
        let topo = Topology::sequential(4);
        assert!(matches!(
            dependencies(PassId::new(5, PassKind::F, 0), &topo),
            Err(Error::InvalidStage { stage: 5, .. })
        ));
        assert!(dependencies(PassId::new(0, PassKind::F, 0), &topo).is_err());
    }

    #[test]
    fn v_shape_places_second_half_in_reverse() {
        let topo = Topology::v_shape(4);
        let devs: Vec<_> = (1..=8).map(|s| topo.device_of(s, 0)).collect();
        assert_eq!(devs, vec![1, 2, 3, 4, 4, 3, 2, 1]);
        assert_eq!(topo.total_mem(), 8.0);
    }

    #[test]
    fn mirrored_replicas_alternate_by_microbatch() {
        let topo = Topology::mirrored(3);
        assert_eq!(topo.device_of(1, 0), 1);
        assert_eq!(topo.device_of(1, 1), 3);
        assert_eq!(topo.device_of(3, 2), 3);
    }

    #[test]
    fn topology_rejects_bad_device() {
        assert!(Topology::new(2, vec![vec![1, 3]], vec![1.0, 1.0]).is_err());
        assert!(Topology::new(2, vec![vec![1, 2]], vec![1.0]).is_err());
        assert!(Topology::new(0, vec![vec![1]], vec![1.0]).is_err());
    }

    #[test]
    fn profile_validation() {
        assert!(RunTimeProfile::new(0.0, 0.0, 0.0).is_err());
        assert!(RunTimeProfile::new(-1.0, 1.0, 1.0).is_err());
        let p = RunTimeProfile::new(1.0, 2.0, 3.0).unwrap();
        assert_eq!(p.duration(PassKind::BW), 5.0);
        assert_eq!(p.with_grouped(4.0).unwrap().duration(PassKind::BW), 4.0);
    }

    fn tiny_block(passes: Vec<BlockPass>) -> BuildingBlock {
        BuildingBlock {
            name: "tiny".into(),
            topology: Topology::sequential(1),
            passes,
            microbatches_per_block: 1,
            repeat: RepeatPattern::Uniform(3),
        }
    }

    #[test]
    fn weight_before_backward_is_an_order_violation() {
        let block = tiny_block(vec![
            BlockPass::new(1, PassKind::F, 0, 0),
            BlockPass::new(1, PassKind::W, 1, 0),
            BlockPass::new(1, PassKind::B, 2, 0),
        ]);
        let v = validate_block(&block);
        assert!(v.iter().any(|v| matches!(v, BlockViolation::OrderViolation { pass, .. } if pass.kind == PassKind::W)));
    }

    #[test]
    fn missing_and_overlapping_passes_are_reported() {
        let block = tiny_block(vec![BlockPass::new(1, PassKind::F, 0, 0), BlockPass::new(1, PassKind::B, 1, 0)]);
        assert_eq!(
            validate_block(&block),
            vec![BlockViolation::MissingPass { stage: 1, slot: 0, kind: PassKind::W }]
        );
        let block = tiny_block(vec![
            BlockPass::new(1, PassKind::F, 0, 0),
            BlockPass::new(1, PassKind::B, 1, 0),
            BlockPass::new(1, PassKind::W, 1, 0),
        ]);
        assert!(validate_block(&block).iter().any(|v| matches!(v, BlockViolation::Overlap { device: 1, cell: 1, .. })));
    }

    #[test]
    fn explicit_pattern_wraps_by_period() {
        let r = RepeatPattern::Explicit { starts: vec![0, 1, 5], period: 12 };
        let s: Vec<_> = (0..6).map(|j| r.start_of(j)).collect();
        assert_eq!(s, vec![0, 1, 5, 12, 13, 17]);
    }
}
