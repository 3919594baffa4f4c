use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use latentmap::autodiff::Tape;
use latentmap::reversibility::{estimate_bounds, EstimationBudget, Region};
use latentmap::training::{lipschitz_project, record_loss, LipschitzConfig, RegularizerWeights};
use latentmap::{ActionMap, Family};
use latentmap_bench::{actions, model, planar_split};
use ndarray::{s, Array2};
use std::hint::black_box;

fn forward_backward(c: &mut Criterion) {
    let split = planar_split();
    let states = split.train.states.slice(s![..256, ..]).to_owned();
    let velocities = split.train.velocities.slice(s![..256, ..]).to_owned();
    let mut group = c.benchmark_group("loss_forward_backward_256");
    for family in [Family::Ae, Family::HyperLinear, Family::Scn] {
        let m = model(family, &split);
        for reg in [false, true] {
            let weights = RegularizerWeights::default();
            let name = format!("{family}{}", if reg { "-reg" } else { "" });
            group.bench_function(name, |b| {
                b.iter(|| {
                    let mut tape = Tape::new(&m.params);
                    let vars = record_loss(&m, &mut tape, &states, &velocities, reg.then_some(&weights)).unwrap();
                    black_box(tape.backward(vars.total, &Array2::ones((1, 1))).unwrap())
                })
            });
        }
    }
    group.finish();
}

fn projection(c: &mut Criterion) {
    let split = planar_split();
    let base = model(Family::Scn, &split);
    let cfg = LipschitzConfig::new(0.125);
    c.bench_function("lipschitz_project_scn", |b| {
        b.iter_batched(
            || base.clone(),
            |mut m| black_box(lipschitz_project(&mut m, &cfg).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

fn decode(c: &mut Criterion) {
    let split = planar_split();
    let x = split.test.states.row(0).to_vec();
    let acts = actions(256, 2, 3);
    let mut group = c.benchmark_group("decode_at_256");
    for family in [Family::Ae, Family::HyperLinear, Family::Scn] {
        let m = model(family, &split);
        group.bench_function(family.name(), |b| b.iter(|| black_box(m.decode_at(&x, &acts).unwrap())));
        let d = m.deployed();
        group.bench_function(format!("{}-deployed", family.name()), |b| {
            b.iter(|| black_box(d.decode_at(&x, &acts).unwrap()))
        });
    }
    group.finish();
}

fn estimate(c: &mut Criterion) {
    let split = planar_split();
    let m = model(Family::Scn, &split);
    let region = Region::from_states(&split.train.states, 0.0).unwrap();
    let budget = EstimationBudget { restarts: 4, steps: 20, candidates: 128, ..EstimationBudget::default() };
    let mut group = c.benchmark_group("estimate_bounds");
    group.sample_size(10);
    group.bench_function("scn_small_budget", |b| {
        b.iter(|| black_box(estimate_bounds(&m, &region, m.action_space(), &budget).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, forward_backward, projection, decode, estimate);
criterion_main!(benches);
