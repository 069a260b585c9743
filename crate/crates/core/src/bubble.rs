//! Stable-phase growth rate, bubble classification and lower bounds.

use serde::{Deserialize, Serialize};

use crate::assemble::repeat;
use crate::error::{Error, Result};
use crate::model::{
    for_each_dependency, BuildingBlock, PassId, PassIndex, RunTimeProfile, ScheduledPass,
};

/// Asymptotic bubble growth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BubbleClass {
    /// Bubbles bounded by the pipeline depth.
    #[serde(rename = "O(d)")]
    OD,
    /// Bubbles that recur every period.
    #[serde(rename = "O(n)")]
    ON,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    /// Microbatches per period; `slot` in the witness counts within it.
    pub microbatches_per_period: usize,
    /// Passes per device per period.
    pub cycle_length: Vec<usize>,
    /// Makespan increase per block instance.
    pub g: f64,
    /// Busy time per device per period.
    pub work_per_period: Vec<f64>,
    pub repeating_bubble: f64,
    pub classification: BubbleClass,
    /// `g` equals the heaviest device load within rounding.
    pub tie: bool,
    /// Heaviest chain from a pass to its next-period copy; offsets are instances.
    pub witness: Vec<WitnessStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessStep {
    pub stage: usize,
    pub kind: crate::model::PassKind,
    pub slot: usize,
    /// Instance relative to the chain's origin.
    pub instance: i64,
    pub device: usize,
}

struct Unrolled {
    passes: Vec<ScheduledPass>,
    succ: Vec<Vec<(usize, f64)>>,
    origin: usize,
    mpb: usize,
}

fn uniform(block: &BuildingBlock) -> Result<BuildingBlock> {
    block
        .as_uniform()
        .ok_or_else(|| Error::Unsupported(format!("`{}` has no uniform repeating equivalent", block.name)))
}

fn unroll(block: &BuildingBlock, profile: &RunTimeProfile, periods: usize) -> Result<Unrolled> {
    let t = block.interval().expect("uniform block") as i64;
    profile.check()?;
    let reach = (block.span() + t - 1) / t + 1;
    let origin = reach as usize;
    let instances = origin + periods + 1;
    let mpb = block.microbatches_per_block;
    let schedule = repeat(block, instances * mpb)?;
    let stages = block.topology.num_stages();
    let index = PassIndex::new(stages);
    let mut passes: Vec<ScheduledPass> = schedule.passes().copied().collect();
    passes.sort_by_key(|p| (p.start, p.device, p.id));
    let mut node = vec![usize::MAX; index.size(schedule.microbatches)];
    for (k, p) in passes.iter().enumerate() {
        node[index.of(p.id)] = k;
    }
    let mut succ: Vec<Vec<(usize, f64)>> = vec![Vec::new(); passes.len()];
    for lane in schedule.lanes() {
        for w in lane.windows(2) {
            let (a, b) = (node[index.of(w[0].id)], node[index.of(w[1].id)]);
            succ[a].push((b, profile.duration(w[0].id.kind)));
        }
    }
    for (k, p) in passes.iter().enumerate() {
        for_each_dependency(p.id, stages, |dep| {
            let u = node[index.of(dep)];
            let lag = if passes[u].device != p.device { profile.comm } else { 0.0 };
            succ[u].push((k, profile.duration(dep.kind) + lag));
        });
    }
    Ok(Unrolled { passes, succ, origin, mpb })
}

impl Unrolled {
    fn instance(&self, k: usize) -> usize {
        self.passes[k].id.microbatch / self.mpb
    }

    fn node_of(&self, id: PassId) -> Option<usize> {
        self.passes.iter().position(|p| p.id == id)
    }

    /// Longest path from `src` to `dst`, with predecessors for the witness.
    fn longest(&self, src: usize, dst: usize) -> (f64, Vec<usize>) {
        let mut dist = vec![f64::NEG_INFINITY; self.passes.len()];
        let mut pred = vec![usize::MAX; self.passes.len()];
        dist[src] = 0.0;
        for u in src..=dst {
            if dist[u] == f64::NEG_INFINITY {
                continue;
            }
            for &(v, w) in &self.succ[u] {
                if v <= dst && dist[u] + w > dist[v] {
                    dist[v] = dist[u] + w;
                    pred[v] = u;
                }
            }
        }
        let mut chain = vec![dst];
        let mut cur = dst;
        while cur != src && pred[cur] != usize::MAX {
            cur = pred[cur];
            chain.push(cur);
        }
        chain.reverse();
        (dist[dst], chain)
    }

    /// Heaviest chain from every origin-instance pass to its copy `periods` later.
    fn heaviest(&self, block: &BuildingBlock, periods: usize) -> (f64, Vec<usize>) {
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for bp in &block.passes {
            let at = |inst: usize| PassId::new(bp.stage, bp.kind, inst * self.mpb + bp.slot);
            let (Some(src), Some(dst)) = (self.node_of(at(self.origin)), self.node_of(at(self.origin + periods)))
            else {
                continue;
            };
            let (w, chain) = self.longest(src, dst);
            if w > best.0 {
                best = (w, chain);
            }
        }
        best
    }
}

/// Growth of the makespan per block instance in the stable phase.
///
/// Unrolls the repeated (unsqueezed) schedule and takes, over every pass,
/// the heaviest dependency-and-device-order chain to the same pass one
/// period later. A chain's weight counts every pass on it except the final
/// copy, plus `comm` on each cross-device dependency.
pub fn growth_rate(block: &BuildingBlock, profile: &RunTimeProfile) -> Result<GrowthReport> {
    let block = &uniform(block)?;
    let un = unroll(block, profile, 1)?;
    let (g, chain) = un.heaviest(block, 1);
    let devices = block.topology.devices();
    let mut work = vec![0.0; devices];
    let mut cycle = vec![0; devices];
    for p in &block.passes {
        let d = block.device_of(p) - 1;
        work[d] += profile.duration(p.kind);
        cycle[d] += 1;
    }
    let heaviest = work.iter().copied().fold(0.0, f64::max);
    let tol = 1e-9 * heaviest.max(1.0);
    let repeating_bubble = if g - heaviest > tol { g - heaviest } else { 0.0 };
    let witness = chain
        .iter()
        .map(|&k| {
            let p = &un.passes[k];
            WitnessStep {
                stage: p.id.stage,
                kind: p.id.kind,
                slot: p.id.microbatch % un.mpb,
                instance: un.instance(k) as i64 - un.origin as i64,
                device: p.device,
            }
        })
        .collect();
    Ok(GrowthReport {
        microbatches_per_period: un.mpb,
        cycle_length: cycle,
        g,
        work_per_period: work,
        repeating_bubble,
        classification: if repeating_bubble > 0.0 { BubbleClass::ON } else { BubbleClass::OD },
        tie: (g - heaviest).abs() <= tol,
        witness,
    })
}

/// Heaviest chain spanning `periods` instances, divided by `periods`.
pub fn growth_rate_over(block: &BuildingBlock, profile: &RunTimeProfile, periods: usize) -> Result<f64> {
    let block = &uniform(block)?;
    let un = unroll(block, profile, periods.max(1))?;
    Ok(un.heaviest(block, periods.max(1)).0 / periods.max(1) as f64)
}

/// Profiles under which the half-memory V schedule keeps bubbles bounded.
pub fn vhalf_condition(profile: &RunTimeProfile) -> bool {
    let (f, b, w) = (profile.t_f, profile.t_b, profile.t_w);
    w + 2.0 * b >= 2.0 * f && w + 2.0 * f >= 2.0 * b
}

/// `max(6n, 6n + 6d − 3k − 1)` for unit passes and peak memory `k·m`.
pub fn lower_bound(n: usize, d: usize, k: usize) -> Result<i64> {
    if k == 0 || k > 2 * d {
        return Err(Error::InvalidProfile(format!("peak {k} outside 1..={}", 2 * d)));
    }
    let (n, d, k) = (n as i64, d as i64, k as i64);
    Ok((6 * n).max(6 * n + 6 * d - 3 * k - 1))
}

/// Memory, in units of `m`, any V schedule needs to stay bubble-bounded for all profiles.
pub fn min_memory_for_od_bubble(d: usize) -> usize {
    2 * d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::{build_v_block, VVariant};

    #[test]
    fn v_min_unit_profile_is_bounded() {
        let b = build_v_block(4, VVariant::Min).unwrap();
        let r = growth_rate(&b, &RunTimeProfile::unit()).unwrap();
        assert_eq!(r.g, 6.0);
        assert_eq!(r.classification, BubbleClass::OD);
        assert!(r.tie);
    }

    #[test]
    fn v_min_short_weight_pass_repeats_bubbles() {
        let b = build_v_block(4, VVariant::Min).unwrap();
        let r = growth_rate(&b, &RunTimeProfile::new(1.0, 1.0, 0.2).unwrap()).unwrap();
        assert!(r.repeating_bubble > 0.0);
        assert_eq!(r.classification, BubbleClass::ON);
        let total: f64 = r
            .witness
            .windows(2)
            .map(|w| RunTimeProfile::new(1.0, 1.0, 0.2).unwrap().duration(w[0].kind))
            .sum();
        assert!((total - r.g).abs() < 1e-9);
    }

    #[test]
    fn v_half_measured_profile_is_bounded() {
        let b = build_v_block(4, VVariant::Half).unwrap();
        let p = RunTimeProfile::new(12.96, 13.22, 9.76).unwrap();
        assert!(vhalf_condition(&p));
        assert_eq!(growth_rate(&b, &p).unwrap().repeating_bubble, 0.0);
    }

    #[test]
    fn three_period_unrolling_agrees() {
        let b = build_v_block(4, VVariant::Half).unwrap();
        for p in [(1.0, 1.0, 1.0), (2.0, 1.0, 0.5), (1.0, 3.0, 0.1)] {
            let p = RunTimeProfile::new(p.0, p.1, p.2).unwrap();
            let one = growth_rate(&b, &p).unwrap().g;
            let two = growth_rate_over(&b, &p, 2).unwrap();
            assert!((one - two).abs() < 1e-9, "{one} vs {two}");
        }
    }

    #[test]
    fn condition_cases() {
        assert!(vhalf_condition(&RunTimeProfile::unit()));
        assert!(!vhalf_condition(&RunTimeProfile::new(10.0, 1.0, 1.0).unwrap()));
    }

    #[test]
    fn lower_bound_cases() {
        assert_eq!(lower_bound(8, 4, 8).unwrap(), 48);
        assert_eq!(lower_bound(8, 4, 4).unwrap(), 59);
        assert!(lower_bound(8, 4, 9).is_err());
        assert!(lower_bound(8, 4, 0).is_err());
    }

    #[test]
    fn robust_memory() {
        assert_eq!(min_memory_for_od_bubble(4), 8);
        assert_eq!(min_memory_for_od_bubble(1), 2);
    }
}
