use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use lidar_ae::autoencoders::arch::image_encoder;
use lidar_ae::nn::{Mode, Network, Tensor};
use lidar_ae::preprocess::{normalize_ranges, scan_to_local_image, ImageConfig};
use lidar_ae::rl::{td3_update, Action, ReplayBuffer, Td3Agent, Td3Config, Transition};
use lidar_ae::rng::seeded;
use lidar_ae::world::{cast_scan, generate_main_room, MainRoomConfig, Pose, SensorSpec};

fn world_kernels(c: &mut Criterion) {
    let world = generate_main_room(&mut seeded(1), &MainRoomConfig::default()).unwrap();
    let c0 = world.bounds.min + (world.bounds.max - world.bounds.min) * 0.5;
    let pose = Pose::new(c0.x, c0.y, 0.3);
    let spec = SensorSpec::default();
    c.bench_function("cast_scan/720", |b| {
        let mut rng = seeded(2);
        b.iter(|| cast_scan(black_box(&world), pose, &spec, &mut rng).unwrap())
    });
    let scan = cast_scan(&world, pose, &spec, &mut seeded(3)).unwrap();
    for cfg in [ImageConfig::desk(), ImageConfig::full()] {
        c.bench_function(&format!("rasterize/{}", cfg.resolution_px), |b| {
            b.iter(|| scan_to_local_image(&normalize_ranges(black_box(&scan), cfg.max_range), &cfg).unwrap())
        });
    }
}

fn conv_kernels(c: &mut Criterion) {
    let mut net = Network::<f32>::new(image_encoder(128, 16, false).unwrap(), "e.", &mut seeded(4)).unwrap();
    let x = Tensor::filled(&[8, 1, 128, 128], 0.05f32);
    c.bench_function("image_encoder/forward/8", |b| b.iter(|| net.infer(black_box(&x)).unwrap()));
    let g = Tensor::filled(&[8, 32], 1e-3f32);
    c.bench_function("image_encoder/forward_backward/8", |b| {
        b.iter(|| {
            net.forward(&x, Mode::Train).unwrap();
            net.backward(&g).unwrap();
            net.zero_grad();
        })
    });
}

fn td3_kernels(c: &mut Criterion) {
    let mut rng = seeded(5);
    let mut agent: Td3Agent<f32> = Td3Agent::new(16, 128, 2.0, &mut rng).unwrap();
    let mut buf = ReplayBuffer::new(1024).unwrap();
    for i in 0..1024 {
        let v = (i as f32 * 0.37).sin();
        buf.push(Transition {
            state: vec![v; 16],
            action: Action::new(v as f64, -v as f64),
            reward: if i % 50 == 0 { 1.0 } else { 0.0 },
            next_state: vec![-v; 16],
            done: i % 50 == 0,
        });
    }
    let cfg = Td3Config::default();
    c.bench_function("td3_update/128", |b| {
        b.iter(|| {
            let batch = buf.sample(cfg.batch_size, &mut rng).unwrap();
            td3_update(&mut agent, &batch, &cfg, &mut rng).unwrap()
        })
    });
}

criterion_group!(benches, world_kernels, conv_kernels, td3_kernels);
criterion_main!(benches);
