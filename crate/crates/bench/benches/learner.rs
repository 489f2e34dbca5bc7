use criterion::{criterion_group, criterion_main, Criterion};
use msr_core::td3::{Activation, Hyperparams, Mlp, ReplayBuffer, Td3Agent, Transition};
use msr_core::SimRng;
use ndarray::Array2;
use rand::{Rng, SeedableRng};

const OBS: usize = 85;
const ACT: usize = 2;

fn mlp(c: &mut Criterion) {
    let mut rng = SimRng::seed_from_u64(0);
    let net = Mlp::new(&[OBS, 256, 256, ACT], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
    let x = Array2::from_shape_fn((256, OBS), |_| rng.random_range(-1.0..1.0));
    let g = Array2::ones((256, ACT));
    c.bench_function("mlp_forward_256", |b| b.iter(|| net.forward(x.view()).unwrap()));
    c.bench_function("mlp_backward_256", |b| {
        b.iter(|| {
            let tape = net.forward_tape(x.view()).unwrap();
            net.backward(&tape, g.view()).unwrap()
        })
    });
}

fn train_iteration(c: &mut Criterion) {
    let mut rng = SimRng::seed_from_u64(1);
    let hp = Hyperparams::default();
    let mut agent = Td3Agent::new(OBS, ACT, hp.clone(), &mut rng).unwrap();
    let mut buffer = ReplayBuffer::new(10_000, OBS, ACT).unwrap();
    for _ in 0..2_000 {
        let v = |rng: &mut SimRng, n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let t = Transition {
            observation: v(&mut rng, OBS),
            action: v(&mut rng, ACT),
            reward: rng.random_range(-1.0..1.0),
            next_observation: v(&mut rng, OBS),
        };
        buffer.push(t).unwrap();
    }
    c.bench_function("td3_iteration_batch256", |b| {
        b.iter(|| {
            let batch = buffer.sample(hp.batch_size, &mut rng).unwrap();
            agent.train_iteration(&batch, &mut rng).unwrap()
        })
    });
}

criterion_group!(benches, mlp, train_iteration);
criterion_main!(benches);
