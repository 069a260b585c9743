use pipeblock::{
    assemble, build_gallery, build_v_block_with, check_bound, exact_peak, growth_rate, list_gallery, reorder, repeat,
    simulate, squeeze, BuildingBlock, GalleryParams, RunTimeProfile, ScheduleDocument, VOffsets,
};
use proptest::prelude::*;

fn gallery_case() -> impl Strategy<Value = (BuildingBlock, usize)> {
    let ids: Vec<&'static str> = list_gallery().iter().map(|e| e.id).collect();
    (prop::sample::select(ids), 2usize..=7, 1usize..=3).prop_filter_map("block unavailable", |(id, d, k)| {
        let n = k * d;
        let b = build_gallery(id, d, GalleryParams::for_microbatches(n)).ok()?;
        let mpb = b.microbatches_per_block;
        Some((b, n.div_ceil(mpb) * mpb))
    })
}

fn profile() -> impl Strategy<Value = RunTimeProfile> {
    (0.1f64..4.0, 0.1f64..4.0, 0.05f64..4.0).prop_map(|(f, b, w)| RunTimeProfile::new(f, b, w).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn squeeze_is_idempotent((block, n) in gallery_case()) {
        let once = squeeze(&repeat(&block, n).unwrap());
        let twice = squeeze(&once);
        prop_assert_eq!(twice.lanes(), once.lanes());
    }

    #[test]
    fn reorder_keeps_schedules_valid_and_no_longer((block, n) in gallery_case()) {
        let squeezed = squeeze(&repeat(&block, n).unwrap());
        let reordered = reorder(&squeezed);
        prop_assert!(reordered.validate().is_empty());
        prop_assert!(reordered.makespan() <= squeezed.makespan());
        prop_assert_eq!(reordered.len(), squeezed.len());
    }

    #[test]
    fn simulation_conserves_work((block, n) in gallery_case(), p in profile()) {
        let schedule = assemble(&block, n).unwrap();
        let sim = simulate(&schedule, &p).unwrap();
        for (device, busy) in sim.busy.iter().enumerate() {
            let want: f64 = schedule.lane(device + 1).iter().map(|s| p.duration(s.id.kind)).sum();
            prop_assert!((busy - want).abs() <= 1e-9 * want.max(1.0));
            prop_assert!((busy + sim.idle[device] - sim.makespan).abs() <= 1e-9 * sim.makespan);
        }
        prop_assert!((0.0..1.0).contains(&sim.bubble_rate));
    }

    #[test]
    fn scaling_durations_scales_makespan((block, n) in gallery_case(), p in profile(), c in 0.1f64..10.0) {
        let schedule = assemble(&block, n).unwrap();
        let base = simulate(&schedule, &p).unwrap();
        let scaled = simulate(&schedule, &p.scaled(c)).unwrap();
        prop_assert!((scaled.makespan - c * base.makespan).abs() <= 1e-9 * scaled.makespan);
        prop_assert!((scaled.bubble_rate - base.bubble_rate).abs() <= 1e-9);
    }

    #[test]
    fn documents_round_trip((block, n) in gallery_case()) {
        let schedule = assemble(&block, n).unwrap();
        let doc = ScheduleDocument::from_schedule(&schedule).with_block(&block);
        let back = ScheduleDocument::parse(&doc.to_json().unwrap(), true).unwrap();
        prop_assert_eq!(&back, &doc);
        let regridded = back.to_schedule().unwrap();
        prop_assert_eq!(regridded.lanes(), schedule.lanes());
    }

    #[test]
    fn uniform_v_blocks_respect_the_lifespan_bound(d in 3usize..=10, d0 in 1i64..=5, d1 in 1i64..=5) {
        let Ok(block) = build_v_block_with(d, &VOffsets::uniform(d, d0, d1)) else { return Ok(()) };
        let schedule = assemble(&block, 4 * d).unwrap();
        prop_assert!(check_bound(&schedule, &block).unwrap().ok());
        // Peak tracks 2d(d0 + d1) / 6 stages up to a constant independent of d.
        // V-Min at d = 5 already needs 16 and d = 3 with offsets (1, 4) needs 18.
        let cap = (2.0 * d as f64 * (d0 + d1) as f64 + 18.0) / 6.0;
        prop_assert!(exact_peak(&schedule).peak <= cap);
    }

    #[test]
    fn growth_never_beats_device_work(d in 3usize..=6, d0 in 1i64..=4, d1 in 1i64..=4, p in profile()) {
        let Ok(block) = build_v_block_with(d, &VOffsets::uniform(d, d0, d1)) else { return Ok(()) };
        let r = growth_rate(&block, &p).unwrap();
        let heaviest = r.work_per_period.iter().copied().fold(0.0, f64::max);
        prop_assert!(r.g >= heaviest - 1e-9);
        prop_assert!((r.repeating_bubble - (r.g - heaviest)).abs() <= 1e-9 * r.g);
    }
}
