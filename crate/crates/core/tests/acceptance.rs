//! End-to-end acceptance checks, one test per criterion.
//!
//! Each test prints a single `criterion N: PASS|FAIL ...` line (visible with
//! `--nocapture`) and fails if the criterion does not hold.

use pipeblock::bubble::{growth_rate, lower_bound, vhalf_condition, BubbleClass};
use pipeblock::memory::{check_bound, exact_peak};
use pipeblock::search::{frontier, MemoryLimit, SearchSpec};
use pipeblock::sim::{compare, simulate};
use pipeblock::{
    assemble, build_gallery, build_v_block, list_gallery, reorder, repeat, squeeze, BuildingBlock, GalleryParams,
    RunTimeProfile, VVariant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const V_FAMILY: [VVariant; 3] = [VVariant::Min, VVariant::Half, VVariant::Zb];

fn measured() -> RunTimeProfile {
    RunTimeProfile::new(12.96, 13.22, 9.76).unwrap()
}

fn verdict(n: usize, failures: &[String], detail: &str) {
    if failures.is_empty() {
        println!("criterion {n}: PASS {detail}");
    } else {
        println!("criterion {n}: FAIL {detail}");
        for f in failures {
            println!("  - {f}");
        }
        panic!("criterion {n} failed with {} violation(s): {}", failures.len(), failures.join("; "));
    }
}

fn gallery_block(id: &str, d: usize, n: usize) -> Result<(BuildingBlock, usize), String> {
    let b = build_gallery(id, d, GalleryParams::for_microbatches(n)).map_err(|e| format!("{id} d={d}: {e}"))?;
    let mpb = b.microbatches_per_block;
    Ok((b, n.div_ceil(mpb) * mpb))
}

#[test]
fn criterion_01_exact_peak_memory() {
    let mut failures = Vec::new();
    for d in 3..=16usize {
        let m_total = 2.0 * d as f64;
        for (variant, units) in [(VVariant::Min, (d + 2).div_ceil(3)), (VVariant::Half, (d + 1).div_ceil(2))] {
            let want = units as f64 * m_total / d as f64;
            let s = assemble(&build_v_block(d, variant).unwrap(), 4 * d).unwrap();
            let got = exact_peak(&s).per_device;
            if got.iter().any(|&p| p != want) {
                failures.push(format!("{} d={d}: expected {want} on every device, got {got:?}", variant.id()));
            }
        }
    }
    verdict(1, &failures, "exact peaks of V-Min and V-Half, d in 3..=16, n = 4d");
}

#[test]
fn criterion_02_v_family_summary() {
    let unit = RunTimeProfile::unit();
    let mut failures = Vec::new();
    let mut seen = Vec::new();
    for d in [4usize, 8, 16] {
        let n = 4 * d;
        let (b, n1) = gallery_block("1f1b", d, n).unwrap();
        let peak = exact_peak(&assemble(&b, n1).unwrap()).peak;
        if peak != b.topology.total_mem() {
            failures.push(format!("1f1b d={d}: peak {peak} != M"));
        }
        let zb = assemble(&build_v_block(d, VVariant::Zb).unwrap(), n).unwrap();
        let zb_sim = simulate(&zb, &unit).unwrap();
        if exact_peak(&zb).peak != 2.0 * d as f64 {
            failures.push(format!("v-zb d={d}: peak {} != M", exact_peak(&zb).peak));
        }
        if zb_sim.span_idle.iter().any(|&x| x != 0.0) {
            failures.push(format!("v-zb d={d}: per-device idle {:?}", zb_sim.span_idle));
        }
        for (variant, lo, hi) in [(VVariant::Min, 3 * d, 5 * d), (VVariant::Half, 2 * d, 4 * d)] {
            let s = assemble(&build_v_block(d, variant).unwrap(), n).unwrap();
            let sim = simulate(&s, &unit).unwrap();
            let bubble = sim.makespan - 6.0 * n as f64;
            seen.push(format!("{}@{d}={bubble}", variant.id()));
            if bubble < lo as f64 || bubble > hi as f64 {
                failures.push(format!("{} d={d}: bubble {bubble} cells outside [{lo}, {hi}]", variant.id()));
            }
        }
    }
    verdict(2, &failures, &format!("1F1B/V-ZB peaks, V-ZB idle, V bubbles ({})", seen.join(" ")));
}

#[test]
fn criterion_03_one_f_one_b_rate() {
    let mut failures = Vec::new();
    let profile = RunTimeProfile::new(1.0, 1.0, 1.0).unwrap().with_grouped(2.0).unwrap();
    for d in [4usize, 8] {
        for n in [8usize, 16, 32] {
            let (b, _) = gallery_block("1f1b", d, n).unwrap();
            let r = simulate(&assemble(&b, n).unwrap(), &profile).unwrap();
            let want = (d - 1) as f64 / (n + d - 1) as f64;
            if (r.bubble_rate - want).abs() > 1e-12 {
                failures.push(format!("d={d} n={n}: {} != {want}", r.bubble_rate));
            }
        }
    }
    verdict(3, &failures, "1F1B bubble rate (d-1)/(n+d-1)");
}

#[test]
fn criterion_04_lifespan_bound() {
    let mut failures = Vec::new();
    let mut checked = 0;
    for e in list_gallery() {
        for d in 3..=8usize {
            let (b, n) = match gallery_block(e.id, d, 4 * d) {
                Ok(v) => v,
                Err(err) => {
                    failures.push(err);
                    continue;
                }
            };
            let s = assemble(&b, n).unwrap();
            match check_bound(&s, &b) {
                Ok(r) if r.ok() => checked += 1,
                Ok(r) => failures.push(format!("{} d={d}: devices {:?} exceed the bound", e.id, r.violations)),
                Err(err) => failures.push(format!("{} d={d}: {err}", e.id)),
            }
        }
    }
    verdict(4, &failures, &format!("exact peak <= lifespan bound on {checked} gallery schedules"));
}

#[test]
fn criterion_05_repeating_bubble_classification() {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut inside, mut outside) = (0, 0);
    let blocks: Vec<_> = [4usize, 6].iter().map(|&d| build_v_block(d, VVariant::Half).unwrap()).collect();
    while inside + outside < 100 {
        let (f, b, w): (f64, f64, f64) = (rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0), rng.gen_range(0.05..3.0));
        let margin = 0.05 * (f + b + w);
        let slack = (w + 2.0 * b - 2.0 * f).min(w + 2.0 * f - 2.0 * b);
        if slack.abs() <= margin {
            continue;
        }
        let cond = slack > 0.0;
        if (cond && inside >= 50) || (!cond && outside >= 50) {
            continue;
        }
        if cond {
            inside += 1;
        } else {
            outside += 1;
        }
        let p = RunTimeProfile::new(f, b, w).unwrap();
        assert_eq!(vhalf_condition(&p), cond);
        for block in &blocks {
            let r = growth_rate(block, &p).unwrap();
            if (r.classification == BubbleClass::OD) != cond {
                failures.push(format!(
                    "d={} profile ({f:.3}, {b:.3}, {w:.3}): condition {cond}, growth {:?} (g={}, heaviest={})",
                    block.topology.devices(),
                    r.classification,
                    r.g,
                    r.work_per_period.iter().copied().fold(0.0, f64::max)
                ));
            }
        }
    }
    let vmin = build_v_block(4, VVariant::Min).unwrap();
    let slow = growth_rate(&vmin, &RunTimeProfile::new(1.0, 1.0, 0.2).unwrap()).unwrap();
    if slow.classification != BubbleClass::ON || slow.repeating_bubble <= 0.0 {
        failures.push(format!("v-min (1,1,0.2): {:?}, repeating {}", slow.classification, slow.repeating_bubble));
    }
    let even = growth_rate(&vmin, &RunTimeProfile::unit()).unwrap();
    if even.classification != BubbleClass::OD {
        failures.push(format!("v-min (1,1,1): {:?}", even.classification));
    }
    verdict(5, &failures, "V-Half classification vs condition on 100 profiles (d=4,6); V-Min cases");
}

#[test]
fn criterion_06_growth_rate_increments() {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = 4;
    for _ in 0..20 {
        let p = RunTimeProfile::new(rng.gen_range(0.2..3.0), rng.gen_range(0.2..3.0), rng.gen_range(0.05..3.0)).unwrap();
        for variant in V_FAMILY {
            let b = build_v_block(d, variant).unwrap();
            let g = growth_rate(&b, &p).unwrap().g;
            let spans: Vec<f64> = (2 * d..=2 * d + 8)
                .map(|n| simulate(&assemble(&b, n).unwrap(), &p).unwrap().makespan)
                .collect();
            for (k, w) in spans.windows(2).enumerate() {
                let inc = w[1] - w[0];
                if (inc - g).abs() > 1e-9 * g.abs().max(1.0) {
                    failures.push(format!(
                        "{} ({:.3},{:.3},{:.3}) n={}: increment {inc} vs g {g}",
                        variant.id(),
                        p.t_f,
                        p.t_b,
                        p.t_w,
                        2 * d + k
                    ));
                }
            }
        }
    }
    verdict(6, &failures, "makespan increments equal g for n >= 2d, 20 profiles");
}

#[test]
fn criterion_07_lower_bound() {
    let mut failures = Vec::new();
    let unit = RunTimeProfile::unit();
    let mut checked = 0;
    for d in 3..=8usize {
        for n in [2 * d, 4 * d] {
            for variant in V_FAMILY {
                let s = assemble(&build_v_block(d, variant).unwrap(), n).unwrap();
                let k = exact_peak(&s).peak as usize;
                let bound = lower_bound(n, d, k).unwrap() as f64;
                let span = simulate(&s, &unit).unwrap().makespan;
                checked += 1;
                if span < bound {
                    failures.push(format!("{} d={d} n={n} k={k}: makespan {span} < {bound}", variant.id()));
                }
            }
        }
    }
    verdict(7, &failures, &format!("makespan >= max(6n, 6n+6d-3k-1) on {checked} schedules"));
}

#[test]
fn criterion_08_measured_profile_comparison() {
    let mut failures = Vec::new();
    let names = ["v-zb", "v-half", "v-min", "1f1b"];
    let rate = |n: usize| -> Vec<f64> {
        compare(&names, 16, n, &measured()).iter().map(|r| r.bubble_rate.expect("row simulates")).collect()
    };
    let short = rate(16);
    let long = rate(256);
    let [zb, half, min, one] = [short[0], short[1], short[2], short[3]];
    if !(zb < half && half < min) {
        failures.push(format!("ordering at n=16: v-zb {zb:.4}, v-half {half:.4}, v-min {min:.4}"));
    }
    if (min - 0.50).abs() > 0.05 {
        failures.push(format!("v-min at n=16: {:.2}% not within 5pp of 50%", 100.0 * min));
    }
    if (one - 0.484).abs() > 0.03 {
        failures.push(format!("1f1b at n=16: {:.2}% not within 3pp of 48.4%", 100.0 * one));
    }
    for (k, name) in names.iter().enumerate() {
        if long[k] >= short[k] {
            failures.push(format!("{name}: n=256 rate {:.4} not below n=16 rate {:.4}", long[k], short[k]));
        }
    }
    if long[0] >= 0.03 {
        failures.push(format!("v-zb at n=256: {:.2}% not below 3%", 100.0 * long[0]));
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{:.2}%", 100.0 * x)).collect::<Vec<_>>().join(" ");
    verdict(8, &failures, &format!("d=16 [v-zb v-half v-min 1f1b] n=16: {} n=256: {}", fmt(&short), fmt(&long)));
}

#[test]
fn criterion_09_adaptive_search() {
    let mut failures = Vec::new();
    let d = 8;
    let limits: Vec<MemoryLimit> = [0.45, 0.5, 0.55, 0.6, 0.65, 0.75, 1.0].iter().map(|&f| MemoryLimit::Fraction(f)).collect();
    let mut lines = Vec::new();
    for (label, profile) in [("unit", RunTimeProfile::unit()), ("measured", measured())] {
        let spec = SearchSpec::new(d, profile, MemoryLimit::Fraction(1.0));
        let points = frontier(&spec, &limits).unwrap();
        let rates: Vec<Option<f64>> = points.iter().map(|p| p.bubble_rate()).collect();
        lines.push(format!(
            "{label}: {}",
            rates.iter().map(|r| r.map_or("infeasible".into(), |x| format!("{x:.4}"))).collect::<Vec<_>>().join(" ")
        ));
        let feasible: Vec<f64> = rates.iter().flatten().copied().collect();
        if rates.iter().skip_while(|r| r.is_none()).any(Option::is_none) || feasible.windows(2).any(|w| w[1] > w[0] + 1e-12) {
            failures.push(format!("{label} frontier not non-increasing: {rates:?}"));
        }
        if label == "unit" {
            let best = points.last().and_then(|p| p.best.as_ref()).expect("a schedule fits M");
            let report = growth_rate(&best.candidate.block(d).unwrap(), &profile).unwrap();
            let idle: Vec<f64> = report.work_per_period.iter().map(|w| report.g - w).collect();
            if idle.iter().any(|&x| x.abs() > 1e-9) {
                failures.push(format!("limit M, unit profile: stable-phase idle per device {idle:?}"));
            }
        } else {
            match (rates[0], rates[2], rates[4]) {
                (Some(a), Some(b), Some(c)) if a - b > b - c => {}
                (a, b, c) => failures.push(format!(
                    "measured sudden drop: rates at 0.45M/0.55M/0.65M = {a:?}/{b:?}/{c:?}; the 0.45M->0.55M drop must exceed the 0.55M->0.65M drop"
                )),
            }
        }
    }
    verdict(9, &failures, &format!("d={d} frontiers [{}]", lines.join("; ")));
}

#[test]
fn criterion_10_framework_mechanics() {
    let mut failures = Vec::new();
    let mut checked = 0;
    for e in list_gallery() {
        for d in 2..=12usize {
            let (b, n) = match gallery_block(e.id, d, 2 * d) {
                Ok(v) => v,
                Err(err) => {
                    failures.push(err);
                    continue;
                }
            };
            let raw = match repeat(&b, n) {
                Ok(s) => s,
                Err(err) => {
                    failures.push(format!("{} d={d}: {err}", e.id));
                    continue;
                }
            };
            let once = squeeze(&raw);
            if squeeze(&once).lanes() != once.lanes() {
                failures.push(format!("{} d={d}: squeeze is not idempotent", e.id));
            }
            let r = reorder(&once);
            if !r.validate().is_empty() || r.len() != once.len() {
                failures.push(format!("{} d={d}: reorder broke the schedule: {:?}", e.id, r.validate().first()));
            }
            if r.makespan() > once.makespan() {
                failures.push(format!("{} d={d}: reorder lengthened {} -> {}", e.id, once.makespan(), r.makespan()));
            }
            checked += 1;
        }
    }
    verdict(10, &failures, &format!("repeat/squeeze/reorder on {checked} gallery schedules, d in 2..=12"));
}
