use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use latent_demand::losses::{censored_tilted_loss, tobit_loss};
use latent_demand::model::{tgcn_forward_batch, ParamVars, TgcnParams, WindowBatch};
use latent_demand::queue::{run_counterfactual, QueuePolicy, SimParams};
use latent_demand::tensor::Tape;
use latent_demand::training::{batch_loss, ModelKind, TrainConfig};
use latent_demand_bench::{fleet_fixture, window_fixture};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simulation(c: &mut Criterion) {
    let f = fleet_fixture(200, 14);
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    for policy in QueuePolicy::ALL {
        g.bench_function(policy.as_str(), |b| {
            b.iter(|| run_counterfactual(&f.trips, &f.fleet, &f.stations, policy, &SimParams::default(), 1).unwrap())
        });
    }
    g.finish();
}

fn training_step(c: &mut Criterion) {
    let cfg = TrainConfig {
        window: 24,
        hidden: 16,
        ..TrainConfig::default()
    };
    let data = window_fixture(&cfg);
    let starts: Vec<usize> = data.train[..64].to_vec();
    let targets = data.targets(&starts);
    let batch = WindowBatch {
        starts,
        len: cfg.window,
    };
    let mut g = c.benchmark_group("tgcn_batch64");
    g.sample_size(20);
    for kind in [ModelKind::Tobit, ModelKind::CensoredQr] {
        let model = cfg.model_config(data.k(), kind);
        let params = TgcnParams::init(&model, 0).unwrap();
        g.bench_function(format!("forward_{kind}"), |b| {
            b.iter(|| {
                let tape = Tape::new();
                let pv = ParamVars::constants(&tape, &params);
                let heads = tgcn_forward_batch(&tape, &pv, &data.a_hat, &data.features, &batch, &model).unwrap();
                batch_loss(&tape, kind, &heads, &targets).unwrap().item()
            })
        });
        g.bench_function(format!("forward_backward_{kind}"), |b| {
            b.iter(|| {
                let tape = Tape::new();
                let pv = ParamVars::leaves(&tape, &params);
                let heads = tgcn_forward_batch(&tape, &pv, &data.a_hat, &data.features, &batch, &model).unwrap();
                let loss = batch_loss(&tape, kind, &heads, &targets).unwrap();
                tape.backward(loss).unwrap()
            })
        });
    }
    g.finish();
}

fn losses(c: &mut Criterion) {
    let n = 4096;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let mu: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.5)).collect();
    let flags: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    let levels = [0.05, 0.5, 0.95];
    let f: Vec<Vec<f64>> = levels.iter().map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    c.bench_function("tobit_4096", |b| b.iter(|| tobit_loss(black_box(&y), &mu, &sigma, &flags).unwrap()));
    c.bench_function("censored_tilted_4096x3", |b| {
        b.iter_batched(
            || y.clone(),
            |y| censored_tilted_loss(&y, &f, &y, &flags, &levels).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, simulation, training_step, losses);
criterion_main!(benches);
