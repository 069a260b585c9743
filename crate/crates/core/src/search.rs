//! Memory-constrained search over two-part uniform V-shape offsets.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assemble::assemble;
use crate::error::{Error, Result};
use crate::gallery::{build_v_block_with, VOffsets};
use crate::memory::{exact_peak, periodic_peak};
use crate::model::{BuildingBlock, GridSchedule, RunTimeProfile};
use crate::sim::simulate;

/// Activation memory limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MemoryLimit {
    /// Units of per-stage memory `m`.
    Units(f64),
    /// Fraction of one microbatch's total activations `M`.
    Fraction(f64),
}

impl MemoryLimit {
    /// The limit in units of `m` for a V-shape over `d` devices, where `M = 2dm`.
    pub fn units(self, d: usize) -> f64 {
        match self {
            MemoryLimit::Units(u) => u,
            MemoryLimit::Fraction(f) => f * 2.0 * d as f64,
        }
    }
}

impl FromStr for MemoryLimit {
    type Err = Error;

    /// Accepts `0.5M`, `12m` or a bare number of `m` units.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidProfile(format!("cannot parse memory limit `{s}`"));
        let (num, frac) = match s.strip_suffix('M') {
            Some(n) => (n, true),
            None => (s.strip_suffix('m').unwrap_or(s), false),
        };
        let v: f64 = num.trim().parse().map_err(|_| bad())?;
        if !v.is_finite() || v < 0.0 {
            return Err(bad());
        }
        Ok(if frac { MemoryLimit::Fraction(v) } else { MemoryLimit::Units(v) })
    }
}

impl fmt::Display for MemoryLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MemoryLimit::Units(u) => write!(f, "{u}m"),
            MemoryLimit::Fraction(x) => write!(f, "{x}M"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    pub devices: usize,
    /// Microbatches per evaluation; defaults to `3d`.
    pub microbatches: Option<usize>,
    pub profile: RunTimeProfile,
    pub memory_limit: MemoryLimit,
    /// Inclusive range of split rows `K`; defaults to `1..=d`.
    pub k_range: Option<(usize, usize)>,
    /// Largest uniform offset tried.
    pub delta_max: i64,
}

impl SearchSpec {
    pub fn new(devices: usize, profile: RunTimeProfile, memory_limit: MemoryLimit) -> Self {
        Self { devices, microbatches: None, profile, memory_limit, k_range: None, delta_max: 6 }
    }

    pub fn microbatches(&self) -> usize {
        self.microbatches.unwrap_or(3 * self.devices)
    }

    fn check(&self) -> Result<()> {
        if self.devices < 2 {
            return Err(Error::UnsupportedDevices { name: "search".into(), devices: self.devices });
        }
        if self.delta_max < 1 {
            return Err(Error::InvalidProfile("delta_max must be at least 1".into()));
        }
        if let Some((lo, hi)) = self.k_range {
            if lo < 1 || hi > self.devices || lo > hi {
                return Err(Error::InvalidProfile(format!("K range {lo}..={hi} outside 1..={}", self.devices)));
            }
        }
        self.profile.check()
    }
}

/// One point of the searched family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub k: usize,
    pub d0_lt: i64,
    pub d1_le: i64,
    pub d0_ge: i64,
    pub d1_gt: i64,
    /// `F_d^0→F_d^1`, `F_1^1→B_1^1`, `B_d^1→B_d^0`.
    pub turns: [i64; 3],
}

impl Candidate {
    pub fn offsets(&self, d: usize) -> VOffsets {
        VOffsets::two_part(d, self.k, self.d0_lt, self.d1_le, self.d0_ge, self.d1_gt)
            .with_turns(self.turns[0], self.turns[1], self.turns[2])
    }

    pub fn block(&self, d: usize) -> Result<BuildingBlock> {
        let mut b = build_v_block_with(d, &self.offsets(d))?;
        b.name = format!(
            "v-search(K={},{},{},{},{},turns={:?})",
            self.k, self.d0_lt, self.d1_le, self.d0_ge, self.d1_gt, self.turns
        );
        Ok(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub candidate: Candidate,
    pub bubble_rate: f64,
    pub makespan: f64,
    /// Exact grid peak, units of `m`.
    pub peak: f64,
    /// Stable-phase peak, units of `m`.
    pub periodic_peak: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Evaluation,
    pub peak_fraction: f64,
    pub limit_units: f64,
    pub evaluated: usize,
    pub feasible: usize,
    /// Candidates sharing the best bubble rate, in tie-break order.
    pub ties: Vec<Candidate>,
    #[serde(skip)]
    pub block: Option<BuildingBlock>,
    #[serde(skip)]
    pub schedule: Option<GridSchedule>,
}

/// Distinct offset families, each with its lowest-memory collision-free turns.
///
/// Candidates whose stable-phase peak exceeds `cap` are dropped.
pub fn enumerate(spec: &SearchSpec, cap: f64) -> Vec<(Candidate, f64)> {
    let d = spec.devices;
    let (lo, hi) = spec.k_range.unwrap_or((1, d));
    let dm = spec.delta_max;
    let mut seen = HashSet::new();
    let mut families = Vec::new();
    for k in lo..=hi {
        for d0_lt in 1..=dm {
            for d1_le in 1..=dm {
                for d0_ge in 1..=dm {
                    for d1_gt in 1..=dm {
                        let o = VOffsets::two_part(d, k, d0_lt, d1_le, d0_ge, d1_gt);
                        if seen.insert((o.f0.clone(), o.f1.clone())) {
                            families.push(Candidate { k, d0_lt, d1_le, d0_ge, d1_gt, turns: [0; 3] });
                        }
                    }
                }
            }
        }
    }
    families
        .into_par_iter()
        .flat_map_iter(|c| {
            // Lowest turns for each distinct stable-phase peak.
            let mut levels: Vec<(f64, Candidate)> = Vec::new();
            for tf in 1..=5 {
                for tfb in 1..=5 {
                    for tb in 1..=5 {
                        let cand = Candidate { turns: [tf, tfb, tb], ..c };
                        let Ok(block) = build_v_block_with(d, &cand.offsets(d)) else { continue };
                        let Ok(peaks) = periodic_peak(&block) else { continue };
                        let peak = peaks.into_iter().fold(0.0, f64::max);
                        if peak <= cap + 1e-9 && !levels.iter().any(|(p, _)| *p == peak) {
                            levels.push((peak, cand));
                        }
                    }
                }
            }
            levels.into_iter().map(|(p, c)| (c, p))
        })
        .collect()
}

fn evaluate(spec: &SearchSpec, c: Candidate, periodic: f64) -> Option<Evaluation> {
    let d = spec.devices;
    let block = c.block(d).ok()?;
    let schedule = assemble(&block, spec.microbatches()).ok()?;
    let sim = simulate(&schedule, &spec.profile).ok()?;
    Some(Evaluation {
        candidate: c,
        bubble_rate: sim.bubble_rate,
        makespan: sim.makespan,
        peak: exact_peak(&schedule).peak,
        periodic_peak: periodic,
    })
}

/// Evaluates every candidate that might fit under `cap`.
pub fn evaluate_all(spec: &SearchSpec, cap: f64) -> Result<Vec<Evaluation>> {
    spec.check()?;
    let mut evals: Vec<Evaluation> = enumerate(spec, cap)
        .into_par_iter()
        .filter_map(|(c, p)| evaluate(spec, c, p))
        .collect();
    evals.sort_by_key(|a| a.candidate);
    Ok(evals)
}

fn pick(evals: &[Evaluation], limit: f64) -> Option<(&Evaluation, Vec<Candidate>, usize)> {
    let feasible: Vec<&Evaluation> = evals.iter().filter(|e| e.peak <= limit + 1e-9).collect();
    let best = feasible
        .iter()
        .copied()
        .min_by(|a, b| a.bubble_rate.total_cmp(&b.bubble_rate).then(a.candidate.cmp(&b.candidate)))?;
    let tol = 1e-12;
    let ties = feasible
        .iter()
        .filter(|e| (e.bubble_rate - best.bubble_rate).abs() <= tol)
        .map(|e| e.candidate)
        .collect();
    Some((best, ties, feasible.len()))
}

/// Lowest bubble rate whose exact peak fits the memory limit.
///
/// Ties go to the lexicographically smallest `(K, δ⁰<K, δ¹≤K, δ⁰≥K, δ¹>K, turns)`.
pub fn search(spec: &SearchSpec) -> Result<SearchResult> {
    let limit = spec.memory_limit.units(spec.devices);
    let evals = evaluate_all(spec, limit)?;
    let (best, ties, feasible) = pick(&evals, limit).ok_or_else(|| {
        Error::Infeasible(format!(
            "no schedule in the searched family fits {} ({limit} units of m)",
            spec.memory_limit
        ))
    })?;
    let block = best.candidate.block(spec.devices)?;
    let schedule = assemble(&block, spec.microbatches())?;
    Ok(SearchResult {
        best: best.clone(),
        peak_fraction: best.peak / block.topology.total_mem(),
        limit_units: limit,
        evaluated: evals.len(),
        feasible,
        ties,
        block: Some(block),
        schedule: Some(schedule),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub limit: MemoryLimit,
    pub limit_units: f64,
    pub best: Option<Evaluation>,
    pub error: Option<String>,
}

impl FrontierPoint {
    pub fn bubble_rate(&self) -> Option<f64> {
        self.best.as_ref().map(|e| e.bubble_rate)
    }
}

/// Best bubble rate for each limit, from one shared pass over the family.
pub fn frontier(spec: &SearchSpec, limits: &[MemoryLimit]) -> Result<Vec<FrontierPoint>> {
    let d = spec.devices;
    let cap = limits.iter().map(|l| l.units(d)).fold(0.0, f64::max);
    let evals = evaluate_all(spec, cap)?;
    Ok(limits
        .iter()
        .map(|&limit| {
            let units = limit.units(d);
            match pick(&evals, units) {
                Some((best, _, _)) => FrontierPoint { limit, limit_units: units, best: Some(best.clone()), error: None },
                None => FrontierPoint {
                    limit,
                    limit_units: units,
                    best: None,
                    error: Some(format!("infeasible: nothing fits {limit}")),
                },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_limits() {
        assert_eq!("0.5M".parse::<MemoryLimit>().unwrap(), MemoryLimit::Fraction(0.5));
        assert_eq!("12m".parse::<MemoryLimit>().unwrap(), MemoryLimit::Units(12.0));
        assert_eq!("7".parse::<MemoryLimit>().unwrap(), MemoryLimit::Units(7.0));
        assert!("abc".parse::<MemoryLimit>().is_err());
        assert_eq!(MemoryLimit::Fraction(0.5).units(4), 4.0);
    }

    #[test]
    fn tiny_limit_is_infeasible() {
        let spec = SearchSpec::new(4, RunTimeProfile::unit(), MemoryLimit::Fraction(0.1));
        assert!(matches!(search(&spec), Err(Error::Infeasible(_))));
    }

    #[test]
    fn full_memory_finds_zero_bubble_class() {
        let mut spec = SearchSpec::new(4, RunTimeProfile::unit(), MemoryLimit::Fraction(1.0));
        spec.delta_max = 4;
        let r = search(&spec).unwrap();
        assert!(r.best.peak <= 8.0);
        let g = crate::bubble::growth_rate(r.block.as_ref().unwrap(), &RunTimeProfile::unit()).unwrap();
        assert_eq!(g.repeating_bubble, 0.0);
    }

    #[test]
    fn search_is_deterministic() {
        let mut spec = SearchSpec::new(3, RunTimeProfile::new(1.0, 1.2, 0.6).unwrap(), MemoryLimit::Fraction(0.8));
        spec.delta_max = 3;
        let a = search(&spec).unwrap();
        let b = search(&spec).unwrap();
        assert_eq!(a.best, b.best);
    }

    #[test]
    fn frontier_is_monotone() {
        let mut spec = SearchSpec::new(4, RunTimeProfile::unit(), MemoryLimit::Fraction(1.0));
        spec.delta_max = 4;
        let limits: Vec<_> = [1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0].iter().map(|&f| MemoryLimit::Fraction(f)).collect();
        let pts = frontier(&spec, &limits).unwrap();
        let rates: Vec<f64> = pts.iter().filter_map(FrontierPoint::bubble_rate).collect();
        assert!(rates.windows(2).all(|w| w[1] <= w[0]));
    }
}
