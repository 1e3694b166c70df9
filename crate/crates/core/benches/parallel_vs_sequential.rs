//! Data-parallel kernels, labelled by execution mode.
//!
//! Compare the two modes with criterion baselines:
//!
//! ```text
//! cargo bench -p alrom --bench parallel_vs_sequential -- --save-baseline parallel
//! cargo bench -p alrom --bench parallel_vs_sequential --no-default-features -- --baseline parallel
//! ```

use std::hint::black_box;

use alrom::active::build_pool;
use alrom::estimator::{GprModel, RbfKernelParams};
use alrom::fom::sps_sample;
use alrom::reduction::pod;
use alrom::rom::{train_eenn, TrainingConfig};
use alrom::{
    FullOrderModel, HeatModel, HeatModelConfig, PacDesign, PacValidator, ParameterSchedule, ParameterSpace,
    ReducedBox, SnapshotMatrix, TrainingSet, TrimLimits,
};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODE: &str = if cfg!(feature = "parallel") { "parallel" } else { "sequential" };

struct Fixture {
    model: HeatModel,
    space: ParameterSpace,
    y: SnapshotMatrix,
    basis: alrom::ReducedBasis,
    bx: ReducedBox,
}

fn fixture() -> Fixture {
    let model = HeatModel::new(HeatModelConfig {
        grid: 24,
        steps: 40,
        ..Default::default()
    })
    .unwrap();
    let space = ParameterSpace::cube(4, 20.0, 1000.0).unwrap();
    let grid = model.time_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut y = SnapshotMatrix::new(model.state_dim());
    for mu in sps_sample(&space, 8, &mut rng) {
        let s = ParameterSchedule::constant(grid.t0, grid.t_end(), mu).unwrap();
        y.extend(&model.solve_ivp(&s).unwrap()).unwrap();
    }
    let basis = pod(&y, 10).unwrap();
    let bx = ReducedBox::estimate(&y, &basis).unwrap().loosen(0.1).unwrap();
    Fixture {
        model,
        space,
        y,
        basis,
        bx,
    }
}

fn benches(c: &mut Criterion) {
    let f = fixture();
    let limits = TrimLimits::unbounded();
    let mut g = c.benchmark_group(MODE);
    g.sample_size(10);

    g.bench_function("pod", |b| b.iter(|| pod(black_box(&f.y), 10).unwrap()));

    let design = PacDesign::with_samples(0.1, 0.1, 400).unwrap();
    g.bench_function("validator_build_400", |b| {
        b.iter(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            PacValidator::build(&f.model, &f.space, &f.bx, &limits, &f.basis, design, &mut rng, 100_000).unwrap()
        })
    });

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (validator, _) =
        PacValidator::build(&f.model, &f.space, &f.bx, &limits, &f.basis, design, &mut rng, 100_000).unwrap();
    let mut set = TrainingSet::new(f.model.state_dim());
    for (k, s) in validator.samples.iter().enumerate() {
        set.push(validator.inputs.column(k), s.mu.clone(), validator.references.column(k)).unwrap();
    }
    let cfg = TrainingConfig {
        hidden_layers: vec![32, 32],
        max_epochs: 20,
        ..Default::default()
    };
    let (rom, _) = train_eenn(&f.basis, &set, &f.space, f.model.time_grid().dt, &cfg).unwrap();
    g.bench_function("validator_errors_400", |b| b.iter(|| validator.errors(black_box(&rom)).unwrap()));

    g.bench_function("pool_2000", |b| {
        b.iter(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            build_pool(&f.bx, &f.space, &f.basis, &limits, 2000, &mut rng).unwrap()
        })
    });

    let dim = 14;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<f64> = (0..300 * dim).map(|_| rng.random_range(0.0..1.0)).collect();
    let vals: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..0.05)).collect();
    let queries: Vec<f64> = (0..5000 * dim).map(|_| rng.random_range(0.0..1.0)).collect();
    g.bench_function("gp_fit_300", |b| {
        b.iter(|| GprModel::fit(&pts, dim, &vals, RbfKernelParams::new(0.02, 0.5).unwrap()).unwrap())
    });
    let gp = GprModel::fit(&pts, dim, &vals, RbfKernelParams::new(0.02, 0.5).unwrap()).unwrap();
    g.bench_function("gp_predict_5000", |b| b.iter(|| gp.predict_batch(black_box(&queries)).unwrap()));

    g.finish();
}

criterion_group!(parallel_vs_sequential, benches);
criterion_main!(parallel_vs_sequential);
