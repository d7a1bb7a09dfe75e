//! Property tests for cross-module invariants.

use dem_core::assembly::{
    external_work, internal_energy_ad, internal_energy_sf, nodal_gradients_ad, shape_gradients, DemLoss,
    GradientMode, GradientOperator, LossConfig, NodalScheme, QuadratureRule, TractionSpec, VolumeRule, WorkMode,
};
use dem_core::graph::{graph_from_edges, EdgeWeighting};
use dem_core::grid::{build_grid, build_hex_mesh, Face, HexMesh};
use dem_core::materials::MaterialModel;
use dem_core::models::{apply_dirichlet, init_params, DirichletSpec, Network, NetworkKind, NetworkSpec};
use dem_core::reference::assemble_tangent;
use dem_core::training::{lbfgs_minimize, TrainConfig};
use dem_core::Tensor;
use proptest::prelude::*;

const LE: MaterialModel = MaterialModel::LinearElastic { e: 1000.0, nu: 0.3 };

fn arb_dims(max: usize) -> impl Strategy<Value = [usize; 3]> {
    [2..=max, 2..=max, 2..=max]
}

fn arb_lengths() -> impl Strategy<Value = [f64; 3]> {
    [0.1f64..5.0, 0.1f64..5.0, 0.1f64..5.0]
}

fn field(n: usize, seed: u64, amp: f64) -> Tensor {
    Tensor::from_fn(n, 3, |r, c| {
        let h = (r as u64 * 2654435761 + c as u64 * 40503 + seed * 97) % 1000;
        amp * (h as f64 / 500.0 - 1.0)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn element_volumes_and_end_facets_tile_the_box(dims in arb_dims(6), l in arb_lengths()) {
        let mesh = build_hex_mesh(build_grid(dims, l).unwrap());
        let q = QuadratureRule::volume(VolumeRule::Gauss2x2x2);
        let vol: f64 = (0..mesh.elements().len())
            .flat_map(|e| shape_gradients(&mesh, e, &q).unwrap())
            .map(|p| p.det_j)
            .sum();
        let box_vol = l[0] * l[1] * l[2];
        prop_assert!((vol - box_vol).abs() <= 1e-12 * box_vol);
        let area: f64 = mesh.facets_on(Face::X1).map(|f| mesh.facet_area_and_normal(f).unwrap().0).sum();
        prop_assert!((area - l[1] * l[2]).abs() <= 1e-13 * l[1] * l[2]);
    }

    #[test]
    fn node_ordering_is_reproducible(dims in arb_dims(7), l in arb_lengths()) {
        let a = build_grid(dims, l).unwrap();
        let b = build_grid(dims, l).unwrap();
        prop_assert_eq!(a.coords_flat(), b.coords_flat());
        for n in 0..a.n_nodes() {
            let [i, j, k] = a.node_ijk(n);
            prop_assert_eq!(a.node_index(i, j, k), n);
        }
    }

    #[test]
    fn dirichlet_output_vanishes_on_clamped_plane(seed in 0u64..500, face in prop::sample::select(vec![Face::X0, Face::Y1, Face::Z0])) {
        let grid = build_grid([4, 3, 3], [4.0, 1.0, 1.0]).unwrap();
        let x = Tensor::from_vec(grid.n_nodes(), 3, grid.coords_flat());
        let spec = NetworkSpec::new(NetworkKind::Mlp).with_seed(seed);
        let theta = init_params(&spec).unwrap().theta;
        let bc = DirichletSpec { face };
        let net = Network::mlp(&spec).unwrap().with_dirichlet(bc, grid.lengths());
        let u = net.evaluate(&theta, &x).unwrap();
        let raw = Network::mlp(&spec).unwrap().evaluate(&theta, &x).unwrap();
        prop_assert_eq!(&apply_dirichlet(&raw, &x, &bc, grid.lengths()).unwrap(), &u);
        for n in 0..grid.n_nodes() {
            let ijk = grid.node_ijk(n);
            let on_plane = if face.is_max() { ijk[face.axis()] == grid.dims()[face.axis()] - 1 } else { ijk[face.axis()] == 0 };
            if on_plane {
                prop_assert!(u.row(n).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn first_order_gcn_ignores_edges(seed in 0u64..500, edges in proptest::collection::vec((0usize..18, 0usize..18), 0..40)) {
        let grid = build_grid([3, 3, 2], [1.0, 1.0, 1.0]).unwrap();
        let x = Tensor::from_vec(grid.n_nodes(), 3, grid.coords_flat());
        let edges: Vec<_> = edges.into_iter().filter(|(a, b)| a != b).collect::<std::collections::BTreeSet<_>>()
            .into_iter().map(|(a, b): (usize, usize)| (a.min(b), a.max(b))).collect::<std::collections::BTreeSet<_>>()
            .into_iter().collect();
        let g = graph_from_edges(18, &edges, &vec![1.0; edges.len()], EdgeWeighting::Binary).unwrap();
        let empty = graph_from_edges(18, &[], &[], EdgeWeighting::Binary).unwrap();
        let spec = NetworkSpec::new(NetworkKind::Gcn).with_seed(seed);
        let theta = init_params(&spec).unwrap().theta;
        let a = Network::gcn(&spec, &g).unwrap().evaluate(&theta, &x).unwrap();
        let b = Network::gcn(&spec, &empty).unwrap().evaluate(&theta, &x).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn work_is_linear_in_displacement(seed in 0u64..1000, alpha in -5.0f64..5.0, ty in -30.0f64..30.0) {
        let mesh = build_hex_mesh(build_grid([5, 3, 3], [4.0, 1.0, 1.0]).unwrap());
        let t = [TractionSpec { face: Face::X1, traction: [0.3, ty, -0.1] }];
        let u = field(mesh.n_nodes(), seed, 0.1);
        for mode in [WorkMode::Sf, WorkMode::AdTrapezoid] {
            let w = external_work(&u, &mesh, &t, mode).unwrap();
            let wa = external_work(&u.map(|v| alpha * v), &mesh, &t, mode).unwrap();
            prop_assert!((wa - alpha * w).abs() <= 1e-12 * (1.0 + w.abs() * alpha.abs()));
        }
    }

    #[test]
    fn linear_sf_energy_is_half_u_k_u(dims in arb_dims(5), seed in 0u64..1000) {
        let mesh = build_hex_mesh(build_grid(dims, [1.0, 1.0, 1.0]).unwrap());
        let op = GradientOperator::new(&mesh, VolumeRule::Gauss2x2x2).unwrap();
        let u = field(mesh.n_nodes(), seed, 0.01);
        let k = assemble_tangent(&Tensor::zeros(mesh.n_nodes(), 3), &op, &LE).unwrap();
        let mut ku = vec![0.0; u.len()];
        k.mul_vec(u.data(), &mut ku);
        let quad = 0.5 * u.data().iter().zip(&ku).map(|(a, b)| a * b).sum::<f64>();
        let e = internal_energy_sf(&u, &mesh, &LE, VolumeRule::Gauss2x2x2).unwrap();
        prop_assert!((e - quad).abs() <= 1e-12 * e.abs(), "{} vs {}", e, quad);
    }
}

fn beam_loss(mesh: &HexMesh, mode: GradientMode) -> (DemLoss, Vec<f64>) {
    let spec = NetworkSpec::new(NetworkKind::Mlp).with_seed(4);
    let cfg = LossConfig {
        mode,
        material: LE,
        volume_rule: VolumeRule::Gauss2x2x2,
        nodal_scheme: NodalScheme::Trapezoid,
        tractions: vec![TractionSpec { face: Face::X1, traction: [0.0, -2.5, 0.0] }],
        dirichlet: DirichletSpec::default(),
    };
    (DemLoss::new(mesh, Network::mlp(&spec).unwrap(), &cfg).unwrap(), init_params(&spec).unwrap().theta)
}

#[test]
fn training_is_bitwise_deterministic_and_monotone() {
    let mesh = build_hex_mesh(build_grid([7, 3, 3], [4.0, 1.0, 1.0]).unwrap());
    let cfg = TrainConfig { max_epochs: 2, inner_iters_per_epoch: 10, ..TrainConfig::default() };
    for mode in [GradientMode::Sf, GradientMode::Ad] {
        let (loss, theta) = beam_loss(&mesh, mode);
        let a = lbfgs_minimize(&loss, &theta, &cfg).unwrap();
        let b = lbfgs_minimize(&loss, &theta, &cfg).unwrap();
        let bits = |h: &[f64]| h.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.loss_history), bits(&b.loss_history));
        assert!(a.loss_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(a.updates > 0);
    }
}

/// Internal energies of a smooth network field computed from nodal input
/// derivatives and from element shape functions both carry O(h^2) error, so
/// their gap shrinks about fourfold per halving of the spacing.
#[test]
fn ad_and_sf_energies_converge_at_second_order() {
    let spec = NetworkSpec { kind: NetworkKind::Mlp, layer_widths: vec![3, 8, 3], cheb_order: 1, seed: 11 };
    let net = Network::mlp(&spec).unwrap();
    let theta: Vec<f64> = init_params(&spec).unwrap().theta.iter().map(|v| 0.05 * v).collect();
    let gaps: Vec<f64> = [5, 9, 17]
        .iter()
        .map(|&n| {
            let mesh = build_hex_mesh(build_grid([n, n, n], [1.0, 1.0, 1.0]).unwrap());
            let grid = mesh.grid();
            let x = Tensor::from_vec(grid.n_nodes(), 3, grid.coords_flat());
            let u = net.evaluate(&theta, &x).unwrap();
            let g = nodal_gradients_ad(&net, &theta, &x).unwrap();
            let ad = internal_energy_ad(&g, &LE, grid, NodalScheme::Trapezoid).unwrap().0;
            let sf = internal_energy_sf(&u, &mesh, &LE, VolumeRule::Gauss2x2x2).unwrap();
            (ad - sf).abs()
        })
        .collect();
    for w in gaps.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.0..5.5).contains(&ratio), "gaps {gaps:?}");
    }
}
