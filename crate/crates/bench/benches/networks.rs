use adazero::autoencoder::{AutoencoderConfig, StateAutoencoder};
use adazero::env::{Action, Cell, GridSpec};
use adazero::mastery::{EvaluatorConfig, MasteryEvaluator};
use adazero::ppo::{PolicyConfig, PolicyNet};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn grids() -> [(&'static str, GridSpec); 2] {
    [("four_rooms", GridSpec::four_rooms()), ("dark_chamber", GridSpec::dark_chamber())]
}

fn inference(c: &mut Criterion) {
    for (name, spec) in grids() {
        let shape = [1, spec.height, spec.width];
        let obs = spec.render(spec.start).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ae = StateAutoencoder::new(&shape, &AutoencoderConfig::default(), &mut rng).unwrap();
        let ev = MasteryEvaluator::new(&shape, &EvaluatorConfig::default(), &mut rng).unwrap();
        let policy = PolicyNet::new(&shape, Action::COUNT, &PolicyConfig::default(), &mut rng).unwrap();

        c.bench_function(&format!("{name}/reconstruct"), |b| b.iter(|| ae.reconstruct(black_box(&obs)).unwrap()));
        let rec = ae.reconstruct(&obs).unwrap();
        c.bench_function(&format!("{name}/score"), |b| b.iter(|| ev.score(black_box(&rec.obs_hat)).unwrap()));
        c.bench_function(&format!("{name}/policy"), |b| b.iter(|| policy.evaluate(black_box(&obs)).unwrap()));
    }
}

fn training(c: &mut Criterion) {
    for (name, spec) in grids() {
        let shape = [1, spec.height, spec.width];
        let open: Vec<Cell> = (0..spec.height)
            .flat_map(|r| (0..spec.width).map(move |c| Cell::new(r, c)))
            .filter(|c| spec.is_open(*c))
            .collect();
        let batch: Vec<_> = open.iter().cycle().take(64).map(|c| spec.render(*c).unwrap()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ae = StateAutoencoder::new(&shape, &AutoencoderConfig::default(), &mut rng).unwrap();
        let ev = MasteryEvaluator::new(&shape, &EvaluatorConfig::default(), &mut rng).unwrap();
        let fake: Vec<_> = batch.iter().map(|o| ae.reconstruct(o).unwrap().obs_hat).collect();

        c.bench_function(&format!("{name}/autoencoder_step_64"), |b| {
            b.iter_batched(|| ae.clone(), |mut ae| ae.train_step(&batch).unwrap(), BatchSize::LargeInput)
        });
        c.bench_function(&format!("{name}/evaluator_step_64"), |b| {
            b.iter_batched(|| ev.clone(), |mut ev| ev.train_step(&batch, &fake).unwrap(), BatchSize::LargeInput)
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = inference, training
}
criterion_main!(benches);
