//! Building blocks for the V-shape family and the known schedule gallery.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory;
use crate::model::{
    validate_block, BlockPass, BuildingBlock, PassKind, RepeatPattern, Topology,
};

/// Interval of every V-shape block: two F, two B and two W per device.
pub const V_INTERVAL: u32 = 6;

/// Cross-device and turning offsets of a V-shape block.
///
/// Index conventions, for `d` devices:
/// * `f0[i-1]` is the offset from `F_i^0` to `F_{i+1}^0`, `1 <= i < d`;
/// * `f1[j-2]` is the offset from `F_j^1` to `F_{j-1}^1`, `1 < j <= d`;
/// * `b1[i-1]` is the offset from `B_i^1` to `B_{i+1}^1`;
/// * `b0[j-2]` is the offset from `B_j^0` to `B_{j-1}^0`.
///
/// `F_i^0` is stage `i` and `F_i^1` is stage `2d+1-i`, both on device `i`.
/// Turns that are `None` are chosen by brute force.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VOffsets {
    pub f0: Vec<i64>,
    pub f1: Vec<i64>,
    pub b1: Vec<i64>,
    pub b0: Vec<i64>,
    /// `F_d^0` to `F_d^1`.
    pub turn_f: Option<i64>,
    /// `F_1^1` to `B_1^1`.
    pub turn_fb: Option<i64>,
    /// `B_d^1` to `B_d^0`.
    pub turn_b: Option<i64>,
}

impl VOffsets {
    /// `δ⁰` on the first-half forward and second-half backward edges, `δ¹` on the rest.
    pub fn uniform(d: usize, delta0: i64, delta1: i64) -> Self {
        let e = d.saturating_sub(1);
        Self {
            f0: vec![delta0; e],
            f1: vec![delta1; e],
            b1: vec![delta0; e],
            b0: vec![delta1; e],
            turn_f: None,
            turn_fb: None,
            turn_b: None,
        }
    }

    /// Two uniform parts split at device `k`.
    ///
    /// Edges leaving devices `i < k` use `d0_lt`, the rest `d0_ge`;
    /// second-half edges entering from `j <= k` use `d1_le`, the rest `d1_gt`.
    pub fn two_part(d: usize, k: usize, d0_lt: i64, d1_le: i64, d0_ge: i64, d1_gt: i64) -> Self {
        let first: Vec<i64> = (1..d).map(|i| if i < k { d0_lt } else { d0_ge }).collect();
        let second: Vec<i64> = (2..=d).map(|j| if j <= k { d1_le } else { d1_gt }).collect();
        Self {
            f0: first.clone(),
            f1: second.clone(),
            b1: first,
            b0: second,
            turn_f: None,
            turn_fb: None,
            turn_b: None,
        }
    }

    pub fn with_turns(mut self, turn_f: i64, turn_fb: i64, turn_b: i64) -> Self {
        self.turn_f = Some(turn_f);
        self.turn_fb = Some(turn_fb);
        self.turn_b = Some(turn_b);
        self
    }

    pub fn devices(&self) -> usize {
        self.f0.len() + 1
    }

    fn check(&self, d: usize) -> Result<()> {
        if d < 2 {
            return Err(Error::UnsupportedDevices { name: "v-shape".into(), devices: d });
        }
        let lens = [self.f0.len(), self.f1.len(), self.b1.len(), self.b0.len()];
        if lens.iter().any(|&l| l != d - 1) {
            return Err(Error::Infeasible(format!("offset vectors must have {} entries", d - 1)));
        }
        let all = self.f0.iter().chain(&self.f1).chain(&self.b1).chain(&self.b0);
        if let Some(bad) = all.copied().find(|&o| o < 1) {
            return Err(Error::Infeasible(format!(
                "cross-device offset {bad} violates dependency order (must be >= 1)"
            )));
        }
        for t in [self.turn_f, self.turn_fb, self.turn_b].into_iter().flatten() {
            if t < 1 {
                return Err(Error::Infeasible(format!("turn offset {t} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// Named members of the V-shape family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VVariant {
    Min,
    Half,
    Zb,
}

impl VVariant {
    pub fn offsets(self, d: usize) -> VOffsets {
        match self {
            VVariant::Min => {
                let fb = if d.is_multiple_of(3) { 3 } else { 1 };
                VOffsets::uniform(d, 1, 1).with_turns(1, fb, 1)
            }
            VVariant::Half => {
                let fb = if d.is_multiple_of(2) { 4 } else { 1 };
                VOffsets::uniform(d, 2, 1).with_turns(2, fb, 1)
            }
            VVariant::Zb => VOffsets::uniform(d, 4, 2),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            VVariant::Min => "v-min",
            VVariant::Half => "v-half",
            VVariant::Zb => "v-zb",
        }
    }
}

/// Builds a named V-shape block.
pub fn build_v_block(d: usize, variant: VVariant) -> Result<BuildingBlock> {
    let mut block = build_v_block_with(d, &variant.offsets(d))?;
    block.name = variant.id().to_string();
    Ok(block)
}

/// Builds a V-shape block from explicit offsets.
///
/// Missing turn offsets are brute-forced over `[1, 5]`, minimizing the
/// largest per-device memory bound, ties broken lexicographically.
pub fn build_v_block_with(d: usize, offsets: &VOffsets) -> Result<BuildingBlock> {
    offsets.check(d)?;
    let fixed = (offsets.turn_f, offsets.turn_fb, offsets.turn_b);
    if let (Some(tf), Some(tfb), Some(tb)) = fixed {
        return v_layout(d, offsets, [tf, tfb, tb])
            .ok_or_else(|| Error::Infeasible("offsets collide on the repeating grid".into()));
    }
    let options = |t: Option<i64>| t.map_or_else(|| (1..=5).collect::<Vec<_>>(), |v| vec![v]);
    let mut best: Option<(f64, [i64; 3], BuildingBlock)> = None;
    for &tf in &options(offsets.turn_f) {
        for &tfb in &options(offsets.turn_fb) {
            for &tb in &options(offsets.turn_b) {
                let Some(block) = v_layout(d, offsets, [tf, tfb, tb]) else { continue };
                let bound = memory::peak_bound(&block)?.max;
                if best.as_ref().is_none_or(|(b, _, _)| bound < *b) {
                    best = Some((bound, [tf, tfb, tb], block));
                }
            }
        }
    }
    best.map(|(_, _, b)| b)
        .ok_or_else(|| Error::Infeasible("no turn offsets in [1, 5] avoid collisions".into()))
}

/// Absolute start cells of `F^0, F^1, B^1, B^0` on each device, 1-based.
pub(crate) fn v_positions(d: usize, o: &VOffsets, turns: [i64; 3]) -> [Vec<i64>; 4] {
    let mut f0 = vec![0; d + 1];
    let mut f1 = vec![0; d + 1];
    let mut b1 = vec![0; d + 1];
    let mut b0 = vec![0; d + 1];
    for i in 1..d {
        f0[i + 1] = f0[i] + o.f0[i - 1];
    }
    f1[d] = f0[d] + turns[0];
    for j in (2..=d).rev() {
        f1[j - 1] = f1[j] + o.f1[j - 2];
    }
    b1[1] = f1[1] + turns[1];
    for i in 1..d {
        b1[i + 1] = b1[i] + o.b1[i - 1];
    }
    b0[d] = b1[d] + turns[2];
    for j in (2..=d).rev() {
        b0[j - 1] = b0[j] + o.b0[j - 2];
    }
    [f0, f1, b1, b0]
}

fn v_layout(d: usize, o: &VOffsets, turns: [i64; 3]) -> Option<BuildingBlock> {
    let t = V_INTERVAL as i64;
    let [f0, f1, b1, b0] = v_positions(d, o, turns);
    let stages = 2 * d;
    let mut passes = Vec::with_capacity(6 * d);
    for i in 1..=d {
        let mut occ = [false; V_INTERVAL as usize];
        for c in [f0[i], f1[i], b1[i], b0[i]] {
            let r = c.rem_euclid(t) as usize;
            if occ[r] {
                return None;
            }
            occ[r] = true;
        }
        let (s0, s1) = (i, stages + 1 - i);
        passes.push(BlockPass::new(s0, PassKind::F, f0[i], 0));
        passes.push(BlockPass::new(s1, PassKind::F, f1[i], 0));
        passes.push(BlockPass::new(s1, PassKind::B, b1[i], 0));
        passes.push(BlockPass::new(s0, PassKind::B, b0[i], 0));
        let mut ws = [(b1[i], s1), (b0[i], s0)];
        ws.sort();
        for (b, s) in ws {
            let c = greedy_cell(&mut occ, b + 1, t);
            passes.push(BlockPass::new(s, PassKind::W, c, 0));
        }
    }
    Some(BuildingBlock {
        name: "v-custom".into(),
        topology: Topology::v_shape(d),
        passes,
        microbatches_per_block: 1,
        repeat: RepeatPattern::Uniform(V_INTERVAL),
    })
}

fn greedy_cell(occ: &mut [bool], from: i64, t: i64) -> i64 {
    let mut c = from;
    while occ[c.rem_euclid(t) as usize] {
        c += 1;
    }
    occ[c.rem_euclid(t) as usize] = true;
    c
}

/// How the synthesizer may place one pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Anchor {
    /// Any cell from the earliest legal one, smallest first.
    Search,
    /// Like `Search`, but not before `start(pass) + gap`.
    After { pass: usize, gap: i64 },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Req {
    pub stage: usize,
    pub kind: PassKind,
    pub slot: usize,
    pub anchor: Anchor,
}

impl Req {
    pub fn search(stage: usize, kind: PassKind, slot: usize) -> Self {
        Self { stage, kind, slot, anchor: Anchor::Search }
    }
}

const SYNTH_BUDGET: u64 = 2_000_000;

/// Places passes in the given order by depth-first search.
///
/// A placement is legal when every in-block dependency has ended and the
/// pass's cells fall on residues (mod `interval`) still free on its device,
/// so the block repeats without collision. The first solution is the
/// lexicographically smallest offset vector in placement order.
pub(crate) fn synthesize(
    name: &str,
    topology: Topology,
    interval: u32,
    slots: usize,
    reqs: &[Req],
) -> Result<BuildingBlock> {
    let t = interval as i64;
    let stages = topology.num_stages();
    let mut pos: Vec<Option<usize>> = vec![None; stages * slots * 4];
    for (k, r) in reqs.iter().enumerate() {
        pos[(r.slot * stages + r.stage - 1) * 4 + r.kind.index()] = Some(k);
    }
    let mut deps: Vec<Vec<usize>> = Vec::with_capacity(reqs.len());
    for (k, r) in reqs.iter().enumerate() {
        let mut dk = Vec::new();
        let id = crate::model::PassId::new(r.stage, r.kind, r.slot);
        crate::model::for_each_dependency(id, stages, |dep| {
            if let Some(p) = pos[(dep.microbatch * stages + dep.stage - 1) * 4 + dep.kind.index()] {
                dk.push(p);
            }
        });
        if let Anchor::After { pass, .. } = r.anchor {
            dk.push(pass);
        }
        if dk.iter().any(|&p| p >= k) {
            return Err(Error::Infeasible(format!("{name}: placement order violates dependencies")));
        }
        deps.push(dk);
    }
    let devices: Vec<usize> = reqs.iter().map(|r| topology.device_of(r.stage, r.slot)).collect();
    let mut st = SynthState {
        reqs,
        deps: &deps,
        devices: &devices,
        t,
        occ: vec![vec![false; interval as usize]; topology.devices()],
        offsets: vec![0; reqs.len()],
        nodes: 0,
    };
    if !st.dfs(0)? {
        return Err(Error::Infeasible(format!("{name}: no collision-free layout at interval {interval}")));
    }
    let passes = reqs
        .iter()
        .zip(&st.offsets)
        .map(|(r, &o)| BlockPass::new(r.stage, r.kind, o, r.slot))
        .collect();
    Ok(BuildingBlock {
        name: name.to_string(),
        topology,
        passes,
        microbatches_per_block: slots,
        repeat: RepeatPattern::Uniform(interval),
    })
}

struct SynthState<'a> {
    reqs: &'a [Req],
    deps: &'a [Vec<usize>],
    devices: &'a [usize],
    t: i64,
    occ: Vec<Vec<bool>>,
    offsets: Vec<i64>,
    nodes: u64,
}

impl SynthState<'_> {
    fn free(&self, dev: usize, start: i64, cells: u32) -> bool {
        (0..cells as i64).all(|c| !self.occ[dev - 1][(start + c).rem_euclid(self.t) as usize])
            && (cells as i64) <= self.t
    }

    fn mark(&mut self, dev: usize, start: i64, cells: u32, v: bool) {
        for c in 0..cells as i64 {
            self.occ[dev - 1][(start + c).rem_euclid(self.t) as usize] = v;
        }
    }

    fn dfs(&mut self, k: usize) -> Result<bool> {
        if k == self.reqs.len() {
            return Ok(true);
        }
        self.nodes += 1;
        if self.nodes > SYNTH_BUDGET {
            return Err(Error::Infeasible("block synthesis exceeded its search budget".into()));
        }
        let r = self.reqs[k];
        let cells = r.kind.cells();
        let mut earliest = 0;
        for &p in &self.deps[k] {
            earliest = earliest.max(self.offsets[p] + self.reqs[p].kind.cells() as i64);
        }
        let candidates: Vec<i64> = match r.anchor {
            Anchor::Search => (earliest..earliest + self.t).collect(),
            Anchor::After { pass, gap } => {
                let lo = earliest.max(self.offsets[pass] + gap);
                (lo..lo + self.t).collect()
            }
        };
        let dev = self.devices[k];
        for c in candidates {
            if !self.free(dev, c, cells) {
                continue;
            }
            self.mark(dev, c, cells, true);
            self.offsets[k] = c;
            if self.dfs(k + 1)? {
                return Ok(true);
            }
            self.mark(dev, c, cells, false);
        }
        Ok(false)
    }
}

/// Static description of a gallery schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GalleryEntry {
    /// Stable lowercase identifier.
    pub id: &'static str,
    pub name: &'static str,
    pub description: &'static str,
    /// Holds two model replicas; only activation memory is modeled.
    pub replicated_weights: bool,
    /// Instances repeat with a non-uniform pattern.
    pub non_uniform_repeat: bool,
    pub grouped_backward: bool,
    pub min_devices: usize,
}

/// Optional builder parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GalleryParams {
    /// Extra forward spacing for eager 1F1B; defaults to 1.
    pub eagerness: Option<usize>,
    /// Microbatches the GPipe block holds before its first backward; defaults to `d`.
    pub microbatches: Option<usize>,
}

impl GalleryParams {
    pub fn for_microbatches(n: usize) -> Self {
        Self { microbatches: Some(n), ..Self::default() }
    }
}

const fn entry(
    id: &'static str,
    name: &'static str,
    description: &'static str,
    replicated_weights: bool,
    non_uniform_repeat: bool,
    grouped_backward: bool,
) -> GalleryEntry {
    GalleryEntry { id, name, description, replicated_weights, non_uniform_repeat, grouped_backward, min_devices: 2 }
}

const GALLERY: [GalleryEntry; 15] = [
    entry("1f1b", "1F1B", "one forward one backward, stage i on device i", false, false, true),
    entry("eager-1f1b", "Eager1F1B", "1F1B with enlarged forward offsets", false, false, true),
    entry("gpipe", "GPipe", "all forwards before all backwards", false, false, true),
    entry("gems", "GEMS", "two mirrored replicas, one in flight at a time", true, false, true),
    entry("chimera", "Chimera", "two mirrored replicas running concurrently", true, false, true),
    entry("interleaved-1f1b", "Interleaved1F1B", "two chunks per device, non-uniform repeat", false, true, true),
    entry("interleaved-1f1b-uniform", "Interleaved1F1BUniform", "two chunks per device, uniform repeat", false, false, true),
    entry("zb-h1", "ZB-H1", "split backward, 1F1B memory", false, false, false),
    entry("zb-h2", "ZB-H2", "split backward, doubled forward spacing", false, false, false),
    entry("1f1b-v", "1F1B-V", "V-shape placement with grouped backward", false, false, true),
    entry("zb-2-3", "ZB-2/3", "two microbatches per block, split backward", false, false, false),
    entry("interleaved-low-mem", "InterleavedLowMem", "two chunks per device, split backward", false, false, false),
    entry("v-min", "V-Min", "V-shape, minimal offsets", false, false, false),
    entry("v-half", "V-Half", "V-shape, half of 1F1B memory", false, false, false),
    entry("v-zb", "V-ZB", "V-shape, zero bubble", false, false, false),
];

/// All gallery entries in a fixed order.
pub fn list_gallery() -> Vec<GalleryEntry> {
    GALLERY.to_vec()
}

pub fn gallery_entry(id: &str) -> Option<&'static GalleryEntry> {
    let key = id.to_ascii_lowercase();
    GALLERY.iter().find(|e| e.id == key || e.name.eq_ignore_ascii_case(&key))
}

/// Builds a gallery block for `d` devices.
pub fn build_gallery(id: &str, d: usize, params: GalleryParams) -> Result<BuildingBlock> {
    let entry = gallery_entry(id).ok_or_else(|| Error::UnknownBlock(id.to_string()))?;
    if d < entry.min_devices {
        return Err(Error::UnsupportedDevices { name: entry.id.to_string(), devices: d });
    }
    let mut block = match entry.id {
        "1f1b" => eager_1f1b(d, 0),
        "eager-1f1b" => eager_1f1b(d, params.eagerness.unwrap_or(1)),
        "gpipe" => gpipe(d, params.microbatches.unwrap_or(d).max(1)),
        "zb-h1" => zb_h1(d),
        "zb-h2" => zb_h2(d),
        "gems" => gems(d)?,
        "chimera" => chimera(d)?,
        "interleaved-1f1b" => interleaved_explicit(d)?,
        "interleaved-1f1b-uniform" => interleaved_uniform(d)?,
        "1f1b-v" => one_f_one_b_v(d)?,
        "zb-2-3" => zb_two_thirds(d)?,
        "interleaved-low-mem" => interleaved_low_mem(d)?,
        "v-min" => build_v_block(d, VVariant::Min)?,
        "v-half" => build_v_block(d, VVariant::Half)?,
        "v-zb" => build_v_block(d, VVariant::Zb)?,
        other => return Err(Error::UnknownBlock(other.to_string())),
    };
    block.name = entry.id.to_string();
    let violations = validate_block(&block);
    if let Some(v) = violations.first() {
        return Err(Error::Infeasible(format!("{}: {v}", entry.id)));
    }
    Ok(block)
}

fn sequential_block(name: &str, d: usize, interval: u32, passes: Vec<BlockPass>) -> BuildingBlock {
    BuildingBlock {
        name: name.into(),
        topology: Topology::sequential(d),
        passes,
        microbatches_per_block: 1,
        repeat: RepeatPattern::Uniform(interval),
    }
}

/// Forward spacing `1 + g`, grouped backward right after the last forward.
fn eager_1f1b(d: usize, g: usize) -> BuildingBlock {
    let h = 1 + g as i64;
    let d64 = d as i64;
    let bw_last = (d64 - 1) * h + 1;
    let mut passes = Vec::with_capacity(2 * d);
    for i in 1..=d {
        let i64_ = i as i64;
        passes.push(BlockPass::new(i, PassKind::F, (i64_ - 1) * h, 0));
        passes.push(BlockPass::new(i, PassKind::BW, bw_last + 2 * h * (d64 - i64_), 0));
    }
    sequential_block("1f1b", d, 3, passes)
}

/// 1F1B layout whose first backward waits for `n` forwards.
fn gpipe(d: usize, n: usize) -> BuildingBlock {
    let d64 = d as i64;
    let bw_last = d64 + 3 * (n as i64 - 1);
    let mut passes = Vec::with_capacity(2 * d);
    for i in 1..=d {
        passes.push(BlockPass::new(i, PassKind::F, i as i64 - 1, 0));
        passes.push(BlockPass::new(i, PassKind::BW, bw_last + 2 * (d64 - i as i64), 0));
    }
    sequential_block("gpipe", d, 3, passes)
}

fn zb_h1(d: usize) -> BuildingBlock {
    let d64 = d as i64;
    let mut passes = Vec::with_capacity(3 * d);
    for i in 1..=d {
        let b = d64 + 2 * (d64 - i as i64);
        passes.push(BlockPass::new(i, PassKind::F, i as i64 - 1, 0));
        passes.push(BlockPass::new(i, PassKind::B, b, 0));
        passes.push(BlockPass::new(i, PassKind::W, b + 1, 0));
    }
    sequential_block("zb-h1", d, 3, passes)
}

fn zb_h2(d: usize) -> BuildingBlock {
    let d64 = d as i64;
    let b_last = 2 * (d64 - 1) + 1;
    let mut passes = Vec::with_capacity(3 * d);
    for i in 1..=d {
        let b = b_last + 4 * (d64 - i as i64);
        passes.push(BlockPass::new(i, PassKind::F, 2 * (i as i64 - 1), 0));
        passes.push(BlockPass::new(i, PassKind::B, b, 0));
        passes.push(BlockPass::new(i, PassKind::W, b + 1, 0));
    }
    sequential_block("zb-h2", d, 3, passes)
}

fn forward_chain(stages: usize, slot: usize) -> impl Iterator<Item = Req> {
    (1..=stages).map(move |s| Req::search(s, PassKind::F, slot))
}

fn backward_chain(stages: usize, kind: PassKind, slot: usize) -> impl Iterator<Item = Req> {
    (1..=stages).rev().map(move |s| Req::search(s, kind, slot))
}

fn one_f_one_b_v(d: usize) -> Result<BuildingBlock> {
    let s = 2 * d;
    let reqs: Vec<Req> = forward_chain(s, 0).chain(backward_chain(s, PassKind::BW, 0)).collect();
    synthesize("1f1b-v", Topology::v_shape(d), 6, 1, &reqs)
}

fn zb_two_thirds(d: usize) -> Result<BuildingBlock> {
    let mut reqs = Vec::with_capacity(6 * d);
    for slot in 0..2 {
        reqs.extend(forward_chain(d, slot));
        reqs.extend(backward_chain(d, PassKind::B, slot));
    }
    for slot in 0..2 {
        reqs.extend(backward_chain(d, PassKind::W, slot));
    }
    synthesize("zb-2-3", Topology::sequential(d), 6, 2, &reqs)
}

/// Every chain advances three cells per device, so each pass keeps a fixed
/// residue relative to `3(device - 1)` and the four passes of a device tile
/// the interval.
fn chimera(d: usize) -> Result<BuildingBlock> {
    let d64 = d as i64;
    let c = (3 * d64 + 3).rem_euclid(6);
    let x1 = (1 - c).rem_euclid(6);
    let first_at = |lo: i64, residue: i64| lo + (residue - lo).rem_euclid(6);
    let y0 = first_at(3 * d64 - 2, (2 - c).rem_euclid(6));
    let y1 = first_at(x1 + 3 * d64 - 2, 4);
    let mut passes = Vec::with_capacity(4 * d);
    for s in 1..=d {
        let up = 3 * (s as i64 - 1);
        let down = 3 * (d64 - s as i64);
        passes.push(BlockPass::new(s, PassKind::F, up, 0));
        passes.push(BlockPass::new(s, PassKind::BW, y0 + down, 0));
        passes.push(BlockPass::new(s, PassKind::F, x1 + up, 1));
        passes.push(BlockPass::new(s, PassKind::BW, y1 + down, 1));
    }
    Ok(BuildingBlock {
        name: "chimera".into(),
        topology: Topology::mirrored(d),
        passes,
        microbatches_per_block: 2,
        repeat: RepeatPattern::Uniform(V_INTERVAL),
    })
}

/// The second replica starts only after the first finishes its forward.
fn gems(d: usize) -> Result<BuildingBlock> {
    let mut reqs: Vec<Req> = forward_chain(d, 0).chain(backward_chain(d, PassKind::BW, 0)).collect();
    let last_f = d - 1;
    reqs.push(Req { stage: 1, kind: PassKind::F, slot: 1, anchor: Anchor::After { pass: last_f, gap: 1 } });
    reqs.extend((2..=d).map(|s| Req::search(s, PassKind::F, 1)));
    reqs.extend(backward_chain(d, PassKind::BW, 1));
    let mut last = None;
    for interval in 6..=(12 * d as u32 + 12) {
        match synthesize("gems", Topology::mirrored(d), interval, 2, &reqs) {
            Ok(b) => return Ok(b),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Infeasible("gems: no interval found".into())))
}

/// Forwards back to back, with the second chunk delayed so each device's
/// two forwards sit three residues apart. The grouped backwards then
/// alternate between the two free cell pairs, two cells per hop.
fn interleaved_uniform(d: usize) -> Result<BuildingBlock> {
    let d64 = d as i64;
    let s = 2 * d;
    let x = (3 - d64).rem_euclid(6);
    let first_at = |lo: i64, residue: i64| lo + (residue - lo).rem_euclid(6);
    let mut passes = Vec::with_capacity(2 * s);
    for i in 1..=d {
        passes.push(BlockPass::new(i, PassKind::F, i as i64 - 1, 0));
        passes.push(BlockPass::new(d + i, PassKind::F, d64 + x + i as i64 - 1, 0));
    }
    // Residues below are relative to `device - 1`.
    let mut o = first_at(2 * d64 + x, (d64 - 1 + 1).rem_euclid(6));
    for i in (1..=d).rev() {
        passes.push(BlockPass::new(d + i, PassKind::BW, o, 0));
        o += 2;
    }
    let mut o = first_at(o, (d64 - 1 + 4).rem_euclid(6));
    for i in (1..=d).rev() {
        passes.push(BlockPass::new(i, PassKind::BW, o, 0));
        o += 2;
    }
    Ok(BuildingBlock {
        name: "interleaved-1f1b-uniform".into(),
        topology: Topology::interleaved(d, 2),
        passes,
        microbatches_per_block: 1,
        repeat: RepeatPattern::Uniform(V_INTERVAL),
    })
}

fn interleaved_low_mem(d: usize) -> Result<BuildingBlock> {
    let s = 2 * d;
    let reqs: Vec<Req> = forward_chain(s, 0)
        .chain(backward_chain(s, PassKind::B, 0))
        .chain(backward_chain(s, PassKind::W, 0))
        .collect();
    synthesize("interleaved-low-mem", Topology::interleaved(d, 2), 6, 1, &reqs)
}

/// Tight interleaved layout, `d` instances per period `6d` placed greedily.
fn interleaved_explicit(d: usize) -> Result<BuildingBlock> {
    let s = 2 * d;
    let topology = Topology::interleaved(d, 2);
    let mut passes = Vec::with_capacity(2 * s);
    for st in 1..=s {
        passes.push(BlockPass::new(st, PassKind::F, st as i64 - 1, 0));
    }
    for st in (1..=s).rev() {
        passes.push(BlockPass::new(st, PassKind::BW, s as i64 + 2 * (s - st) as i64, 0));
    }
    let period = 6 * d as i64;
    let mut occ = vec![vec![false; period as usize]; d];
    let fits = |occ: &Vec<Vec<bool>>, start: i64| {
        passes.iter().all(|p| {
            let dev = topology.device_of(p.stage, 0) - 1;
            (0..p.kind.cells() as i64).all(|c| !occ[dev][(start + p.offset + c).rem_euclid(period) as usize])
        })
    };
    let mut starts = Vec::with_capacity(d);
    let mut next = 0;
    for _ in 0..d {
        let Some(start) = (next..next + period).find(|&st| fits(&occ, st)) else { break };
        for p in &passes {
            let dev = topology.device_of(p.stage, 0) - 1;
            for c in 0..p.kind.cells() as i64 {
                occ[dev][(start + p.offset + c).rem_euclid(period) as usize] = true;
            }
        }
        starts.push(start);
        next = start + 1;
    }
    if starts.len() == d {
        return Ok(BuildingBlock {
            name: "interleaved-1f1b".into(),
            topology,
            passes,
            microbatches_per_block: 1,
            repeat: RepeatPattern::Explicit { starts, period },
        });
    }
    let mut block = interleaved_uniform(d)?;
    block.repeat = RepeatPattern::Explicit { starts: (0..d as i64).map(|k| 6 * k).collect(), period };
    Ok(block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_block;

    fn offsets_of(block: &BuildingBlock, stage: usize, kind: PassKind) -> i64 {
        block.find(stage, kind, 0).unwrap().offset
    }

    #[test]
    fn v_zb_uses_four_and_two() {
        let b = build_v_block(4, VVariant::Zb).unwrap();
        assert!(validate_block(&b).is_empty());
        assert_eq!(offsets_of(&b, 2, PassKind::F) - offsets_of(&b, 1, PassKind::F), 4);
        assert_eq!(offsets_of(&b, 7, PassKind::F) - offsets_of(&b, 6, PassKind::F), 2);
        assert_eq!(offsets_of(&b, 7, PassKind::B) - offsets_of(&b, 8, PassKind::B), 4);
        assert_eq!(offsets_of(&b, 1, PassKind::B) - offsets_of(&b, 2, PassKind::B), 2);
    }

    #[test]
    fn v_min_turn_depends_on_d_mod_3() {
        let b = build_v_block(6, VVariant::Min).unwrap();
        assert_eq!(offsets_of(&b, 12, PassKind::B) - offsets_of(&b, 12, PassKind::F), 3);
        let b = build_v_block(4, VVariant::Min).unwrap();
        assert_eq!(offsets_of(&b, 8, PassKind::B) - offsets_of(&b, 8, PassKind::F), 1);
    }

    #[test]
    fn zero_offset_is_infeasible() {
        let o = VOffsets::uniform(2, 0, 1);
        assert!(matches!(build_v_block_with(2, &o), Err(Error::Infeasible(_))));
    }

    #[test]
    fn v_family_validates_for_small_d() {
        for d in 2..=16 {
            for v in [VVariant::Min, VVariant::Half, VVariant::Zb] {
                let b = build_v_block(d, v).unwrap();
                assert!(validate_block(&b).is_empty(), "{v:?} d={d}");
                assert_eq!(b.cells_per_device(), vec![6; d]);
            }
        }
    }

    #[test]
    fn one_f_one_b_layout() {
        let b = build_gallery("1f1b", 4, GalleryParams::default()).unwrap();
        assert_eq!(b.interval(), Some(3));
        for i in 1..=4 {
            assert_eq!(b.topology.device_of(i, 0), i);
            assert!(offsets_of(&b, i, PassKind::F) < offsets_of(&b, i, PassKind::BW));
        }
    }

    #[test]
    fn eager_enlarges_forward_offsets() {
        let b = build_gallery("eager-1f1b", 4, GalleryParams::default()).unwrap();
        assert_eq!(offsets_of(&b, 2, PassKind::F) - offsets_of(&b, 1, PassKind::F), 2);
    }

    #[test]
    fn every_entry_builds() {
        for e in list_gallery() {
            for d in [2, 3, 4, 7] {
                let b = build_gallery(e.id, d, GalleryParams::default())
                    .unwrap_or_else(|err| panic!("{} d={d}: {err}", e.id));
                assert!(validate_block(&b).is_empty());
                assert_eq!(b.is_uniform(), !e.non_uniform_repeat, "{}", e.id);
            }
        }
    }

    #[test]
    fn gallery_listing() {
        let all = list_gallery();
        assert_eq!(all.len(), 15);
        assert!(all.iter().find(|e| e.id == "gems").unwrap().replicated_weights);
        assert!(all.iter().find(|e| e.id == "interleaved-1f1b").unwrap().non_uniform_repeat);
        assert!(build_gallery("nope", 4, GalleryParams::default()).is_err());
        assert!(build_gallery("v-min", 1, GalleryParams::default()).is_err());
    }

    #[test]
    fn zb_two_thirds_has_two_slots() {
        let b = build_gallery("zb-2-3", 4, GalleryParams::default()).unwrap();
        assert_eq!(b.microbatches_per_block, 2);
        assert_eq!(b.passes.len(), 24);
    }

    #[test]
    fn closed_form_layouts_tile_the_interval() {
        for d in 2..=16 {
            for id in ["chimera", "interleaved-1f1b-uniform"] {
                let b = build_gallery(id, d, GalleryParams::default()).unwrap();
                assert!(validate_block(&b).is_empty(), "{id} d={d}");
                assert!(b.cells_per_device().iter().all(|&c| c == V_INTERVAL), "{id} d={d}");
                assert!(crate::assemble::repeat(&b, 4).is_ok(), "{id} d={d}");
            }
        }
    }
}
