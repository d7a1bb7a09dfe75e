use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dem_bench::{beam, loss_fixture, neo_hookean, tip_load};
use dem_core::assembly::GradientMode;
use dem_core::diffengine::value_and_parameter_gradient;
use dem_core::graph::{build_graph, chebyshev_basis, EdgeWeighting, Radius};
use dem_core::models::{DirichletSpec, NetworkKind};
use dem_core::reference::{direct_minimize, OracleSettings};
use dem_core::Tensor;

fn loss_and_gradient(c: &mut Criterion) {
    let mesh = beam([19, 6, 6]);
    let mut group = c.benchmark_group("loss_and_gradient");
    group.sample_size(20);
    for (name, kind, order) in [("mlp", NetworkKind::Mlp, 1), ("gcn_k2", NetworkKind::Gcn, 2)] {
        for mode in [GradientMode::Sf, GradientMode::Ad] {
            let (loss, theta) = loss_fixture(&mesh, kind, order, mode);
            group.bench_function(BenchmarkId::new(name, mode), |b| {
                b.iter(|| value_and_parameter_gradient(&loss, black_box(&theta)).unwrap())
            });
        }
    }
    group.finish();
}

fn chebyshev(c: &mut Criterion) {
    let mesh = beam([37, 10, 10]);
    let g = build_graph(mesh.grid(), Radius::Auto, EdgeWeighting::Binary).unwrap();
    let x = Tensor::from_fn(g.n_nodes(), 16, |r, c| ((r * 7 + c) % 11) as f64 - 5.0);
    let mut group = c.benchmark_group("chebyshev_basis");
    for order in [1, 2, 4] {
        group.bench_with_input(BenchmarkId::from_parameter(order), &order, |b, &k| {
            b.iter(|| chebyshev_basis(g.scaled_laplacian(), black_box(&x), k).unwrap())
        });
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let mesh = beam([13, 4, 4]);
    let mut group = c.benchmark_group("oracle");
    group.sample_size(10);
    group.bench_function("neo_hookean_13x4x4", |b| {
        b.iter(|| {
            direct_minimize(&mesh, &neo_hookean(), &tip_load(-15.0), &DirichletSpec::default(), &OracleSettings::default())
                .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, loss_and_gradient, chebyshev, oracle);
criterion_main!(benches);
