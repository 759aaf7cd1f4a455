use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use headgen::hair::PoissonSolver;
use headgen::silhouette::{render_mesh_labels, render_mesh_labels_backward, LabeledMeshScene, DEFAULT_SOFTNESS};
use headgen::CameraPose;
use headgen_bench::{hair_pair, poisson_problem, topology};

fn poisson(c: &mut Criterion) {
    let (template, _) = hair_pair(12, 24);
    c.bench_function("poisson_factor_12x24", |b| b.iter(|| PoissonSolver::new(black_box(&template)).unwrap()));
    let (solver, field) = poisson_problem(12, 24);
    c.bench_function("poisson_solve_12x24", |b| b.iter(|| solver.solve(black_box(&field)).unwrap()));
    c.bench_function("poisson_adjoint_12x24", |b| {
        let d = solver.solve(&field).unwrap();
        b.iter(|| solver.solve_backward(black_box(&d)).unwrap())
    });
}

fn silhouette(c: &mut Criterion) {
    let (_, mesh) = hair_pair(12, 24);
    let topo = topology(&mesh);
    let camera = CameraPose::orbit(30.0, 15.0, 160.0, 1.4);
    let scene = LabeledMeshScene::new().with_part(&mesh.vertices, &topo, 2.0);
    c.bench_function("silhouette_256", |b| {
        b.iter(|| render_mesh_labels(black_box(&scene), &camera, 256, 256, DEFAULT_SOFTNESS).unwrap())
    });
    let up = vec![1.0 / (256.0 * 256.0); 256 * 256];
    c.bench_function("silhouette_backward_256", |b| {
        b.iter(|| render_mesh_labels_backward(black_box(&scene), &camera, 256, 256, DEFAULT_SOFTNESS, &up).unwrap())
    });
}

criterion_group!(benches, poisson, silhouette);
criterion_main!(benches);
