use criterion::{criterion_group, criterion_main, Criterion};
use msm_bench::desk_problem;
use msm_core::random_field::{local_kle, sample_prior_theta};
use msm_core::{CovarianceParams, EllipticProblem, Field, FieldRole, Grid, SubdomainPartition};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn solve_pressure(c: &mut Criterion) {
    let grid = Grid::new(32).unwrap();
    let problem = EllipticProblem::new(grid);
    let kappa = Field::new(
        FieldRole::Permeability,
        (0..grid.cell_count())
            .map(|k| (grid.center(k)[0] * 3.0).sin().exp())
            .collect(),
    );
    c.bench_function("solve_pressure 32x32", |b| {
        b.iter(|| problem.solve(&kappa).unwrap())
    });
}

fn kle(c: &mut Criterion) {
    let part = SubdomainPartition::new(Grid::new(16).unwrap(), 2, 2, 1).unwrap();
    let params = CovarianceParams::new(1.0, 0.25, 0.25).unwrap();
    c.bench_function("local_kle 8x8 subdomain", |b| {
        b.iter(|| local_kle(&part, 0, &params, 4).unwrap())
    });
}

fn msm_cycle(c: &mut Criterion) {
    let problem = desk_problem();
    let sampler = problem.sampler().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut state = sampler
        .init(sample_prior_theta(
            &mut rng,
            sampler.blocks(),
            sampler.n_c(),
        ))
        .unwrap();
    c.bench_function("msm_cycle 16x16 two-stage", |b| {
        b.iter(|| sampler.cycle(&mut state, &mut rng).unwrap())
    });
}

criterion_group!(benches, solve_pressure, kle, msm_cycle);
criterion_main!(benches);
