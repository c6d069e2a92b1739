use lidar_ae::metrics::{false_negatives, false_positives, mse_expectation};
use lidar_ae::preprocess::{normalize_ranges, scan_to_local_image, ImageConfig};
use lidar_ae::rng::seeded;
use lidar_ae::world::{
    cast_scan, generate_main_room, generate_simple_room, sample_spawn_pose, MainRoomConfig, Pose, SensorSpec,
    SimpleRoomConfig,
};
use proptest::prelude::*;

fn clean(beams: usize) -> SensorSpec {
    SensorSpec {
        beam_count: beams,
        ..Default::default()
    }
    .noise_free()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn simple_rooms_keep_pole_clearance(seed in any::<u64>()) {
        let cfg = SimpleRoomConfig::default();
        let w = generate_simple_room(&mut seeded(seed), &cfg).unwrap();
        w.validate(None).unwrap();
        prop_assert_eq!(w.poles.len(), 1);
        let c = w.poles[0].center();
        for wall in &w.walls {
            prop_assert!(wall.distance_to_point(c) >= cfg.wall_clearance);
        }
    }

    #[test]
    fn main_rooms_respect_density_and_sizes(seed in any::<u64>()) {
        let w = generate_main_room(&mut seeded(seed), &MainRoomConfig::default()).unwrap();
        w.validate(Some(0.25)).unwrap();
        prop_assert!(w.poles.len() <= (0.25 * w.area()).floor() as usize);
        for p in &w.poles {
            prop_assert!((0.1..=0.4).contains(&p.size()));
        }
    }

    #[test]
    fn spawn_poses_are_clear(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let w = generate_main_room(&mut rng, &MainRoomConfig::default()).unwrap();
        let p = sample_spawn_pose(&w, &mut rng, 0.15, 10_000).unwrap();
        prop_assert!(!w.is_inside_obstacle(p.position()));
        prop_assert!(w.clearance(p.position(), true) >= 0.15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cast_scan_is_rotation_equivariant(seed in any::<u64>(), theta in -10.0f64..10.0) {
        let mut rng = seeded(seed);
        let w = generate_simple_room(&mut rng, &SimpleRoomConfig::default()).unwrap();
        let pose = sample_spawn_pose(&w, &mut rng, 0.15, 10_000).unwrap();
        let spec = clean(360);
        let a = cast_scan(&w, pose, &spec, &mut rng).unwrap();
        let moved = pose.position().rotated(theta);
        let b = cast_scan(&w.rotated(theta), Pose::new(moved.x, moved.y, pose.heading + theta), &spec, &mut rng).unwrap();
        prop_assert_eq!(&a.valid, &b.valid);
        for (x, y) in a.ranges.iter().zip(&b.ranges).filter(|(x, _)| x.is_finite()) {
            prop_assert!((x - y).abs() <= 1e-9, "{} vs {}", x, y);
        }
    }

    #[test]
    fn occupied_cells_never_exceed_positive_beams(seed in any::<u64>(), px in prop::sample::select(vec![32usize, 128, 320])) {
        let mut rng = seeded(seed);
        let w = generate_main_room(&mut rng, &MainRoomConfig::default()).unwrap();
        let pose = sample_spawn_pose(&w, &mut rng, 0.15, 10_000).unwrap();
        let scan = cast_scan(&w, pose, &SensorSpec::default(), &mut rng).unwrap();
        let cfg = ImageConfig { resolution_px: px, ..ImageConfig::full() };
        let norm = normalize_ranges(&scan, cfg.max_range);
        let img = scan_to_local_image(&norm, &cfg).unwrap();
        let positive = norm.values.iter().filter(|v| **v > 0.0).count();
        prop_assert!(img.occupied_count() <= positive);
        prop_assert!(img.pixels.iter().all(|p| *p <= 1));
    }

    #[test]
    fn coarse_scan_image_is_subset_of_fine(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let w = generate_main_room(&mut rng, &MainRoomConfig::default()).unwrap();
        let pose = sample_spawn_pose(&w, &mut rng, 0.15, 10_000).unwrap();
        let cfg = ImageConfig::full();
        let image = |beams: usize, rng: &mut _| {
            let scan = cast_scan(&w, pose, &clean(beams), rng).unwrap();
            scan_to_local_image(&normalize_ranges(&scan, cfg.max_range), &cfg).unwrap()
        };
        let coarse = image(360, &mut rng);
        let fine = image(1440, &mut rng);
        for (c, f) in coarse.pixels.iter().zip(&fine.pixels) {
            prop_assert!(*c <= *f);
        }
        // Every pixel in the symmetric difference is one the fine scan adds.
        let diff = coarse.pixels.iter().zip(&fine.pixels).filter(|(c, f)| c != f).count();
        prop_assert_eq!(diff, fine.occupied_count() - coarse.occupied_count());
    }

    #[test]
    fn metrics_are_permutation_invariant(
        cells in prop::collection::vec((0u8..2, 0u8..2, 0.0f64..1.0), 1..200),
        key in any::<u64>(),
    ) {
        let recon: Vec<u8> = cells.iter().map(|c| c.0).collect();
        let target: Vec<u8> = cells.iter().map(|c| c.1).collect();
        let mean: Vec<f64> = cells.iter().map(|c| c.2).collect();
        let mut order: Vec<usize> = (0..cells.len()).collect();
        order.sort_by_key(|i| (*i as u64).wrapping_mul(key | 1).rotate_left(17));
        let perm = |v: &[u8]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pr = perm(&recon);
        let pt = perm(&target);
        let pm: Vec<f64> = order.iter().map(|&i| mean[i]).collect();

        let fp = false_positives(&recon, &target).unwrap();
        let fn_ = false_negatives(&recon, &target).unwrap();
        prop_assert_eq!(fp, false_positives(&pr, &pt).unwrap());
        prop_assert_eq!(fn_, false_negatives(&pr, &pt).unwrap());
        let hamming = recon.iter().zip(&target).filter(|(r, t)| r != t).count();
        prop_assert_eq!(fp + fn_, hamming);
        let m = mse_expectation(&mean, &target).unwrap();
        prop_assert!((m - mse_expectation(&pm, &pt).unwrap()).abs() <= 1e-9 * (1.0 + m));
    }
}
