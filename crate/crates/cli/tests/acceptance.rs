//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion to stderr (bypassing output capture) and fails
//! if any criterion fails. Training runs are cached and shared between
//! criteria. Expect a long runtime on one core.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use dem_cli::commands::{cmd_demo1d, cmd_sweep, Selection};
use dem_cli::experiment::{build_loss, build_mesh, execute, solve_oracle, variant};
use dem_cli::report::RunReport;
use dem_cli::ExperimentConfig;
use dem_core::assembly::{GradientMode, GradientOperator, VolumeRule};
use dem_core::graph::{build_graph, chebyshev_basis, graph_from_edges, EdgeWeighting, Radius};
use dem_core::grid::{build_grid, build_hex_mesh, Face};
use dem_core::materials::{energy_neohookean, pk1_stress};
use dem_core::models::{init_params, NetworkKind};
use dem_core::reference::{fd_gradient_audit, OracleSolution};
use dem_core::Tensor;
use nalgebra::{DMatrix, Matrix3, SymmetricEigen};

const COARSE: [usize; 3] = [37, 10, 10];
const REFINED: [[usize; 3]; 3] = [[37, 10, 10], [44, 13, 13], [67, 18, 18]];
const LOADS: [f64; 6] = [-2.5, -5.0, -7.5, -10.0, -15.0, -25.0];
const SEEDS: [u64; 3] = [0, 1, 2];
const BACKBONES: [NetworkKind; 2] = [NetworkKind::Gcn, NetworkKind::Mlp];

fn say(line: &str) {
    let mut e = std::io::stderr().lock();
    let _ = writeln!(e, "{line}");
    let _ = e.flush();
}

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).expect("shipped config")
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Mat {
    Le,
    Nh,
}

type RunKey = (NetworkKind, GradientMode, Mat, u64, [usize; 3], u64);
type OracleKey = (Mat, u64, [usize; 3]);

/// Shared cache of oracle solutions and training reports.
struct Cache {
    le: ExperimentConfig,
    nh: ExperimentConfig,
    oracles: HashMap<OracleKey, Result<OracleSolution, String>>,
    runs: HashMap<RunKey, Result<RunReport, String>>,
}

impl Cache {
    fn new() -> Self {
        Self { le: config("beam_le.json"), nh: config("beam_nh.json"), oracles: HashMap::new(), runs: HashMap::new() }
    }

    fn base(&self, mat: Mat, load: f64, dims: [usize; 3]) -> ExperimentConfig {
        let mut cfg = match mat {
            Mat::Le => self.le.clone(),
            Mat::Nh => self.nh.clone(),
        }
        .with_load(load);
        cfg.geometry.dims = dims;
        cfg
    }

    fn oracle(&mut self, mat: Mat, load: f64, dims: [usize; 3]) -> Result<&OracleSolution, String> {
        let key = (mat, load.to_bits(), dims);
        if !self.oracles.contains_key(&key) {
            let cfg = self.base(mat, load, dims);
            let t = Instant::now();
            let sol = build_mesh(&cfg).and_then(|m| solve_oracle(&cfg, &m)).map_err(|e| e.to_string());
            say(&format!("  oracle {mat:?} t={load} {dims:?}: {:.1}s", t.elapsed().as_secs_f64()));
            self.oracles.insert(key, sol);
        }
        self.oracles[&key].as_ref().map_err(Clone::clone)
    }

    /// Trains one variant; runs on the coarse grid carry the oracle comparison.
    fn run(&mut self, kind: NetworkKind, mode: GradientMode, mat: Mat, load: f64, dims: [usize; 3], seed: u64) -> Result<RunReport, String> {
        let key = (kind, mode, mat, load.to_bits(), dims, seed);
        if let Some(r) = self.runs.get(&key) {
            return r.clone();
        }
        let cfg = variant(&self.base(mat, load, dims), kind, mode, seed);
        let oracle = if dims == COARSE { Some(self.oracle(mat, load, dims)?.clone()) } else { None };
        let r = execute(&cfg, oracle.as_ref()).map(|o| o.report).map_err(|e| e.to_string());
        match &r {
            Ok(rep) => say(&format!("  {} t={load} time={:.1}s", rep.summary(), rep.wall_time)),
            Err(e) => say(&format!("  {kind}-{mode} {mat:?} t={load} {dims:?} seed={seed}: error {e}")),
        }
        self.runs.insert(key, r.clone());
        r
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target.abs()
}

fn c1_demo() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let rows = cmd_demo1d(2.0, 200, dir.path()).unwrap();
    let elapsed = t.elapsed().as_secs_f64();
    let at = |du: f64| rows.iter().find(|r| (r[0] - du).abs() < 1e-12).copied().unwrap();
    let r0 = at(0.0);
    let r5 = at(0.5);
    let exact0 = r0[1] == -0.5 && r0[2] == -0.5;
    let half = (r5[1] + 1.0).abs() <= 1e-6 && (r5[2] + 0.375).abs() <= 1e-6;
    let sf_bounded = rows.iter().all(|r| r[2] >= -0.5);
    let ad_decreasing = rows.windows(2).all(|w| w[1][1] < w[0][1]);
    Outcome {
        pass: exact0 && half && sf_bounded && ad_decreasing && elapsed < 1.0,
        detail: format!(
            "psi(0)=({}, {}), psi(0.5)=({:.7}, {:.7}), sf>=-0.5: {sf_bounded}, ad decreasing: {ad_decreasing}, {elapsed:.3}s",
            r0[1], r0[2], r5[1], r5[2]
        ),
    }
}

fn energy_check(cache: &mut Cache, mat: Mat, targets: &[(f64, f64)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for &(load, target) in targets {
        for kind in BACKBONES {
            let v = cache.run(kind, GradientMode::Sf, mat, load, COARSE, 0).map(|r| r.final_loss).unwrap_or(f64::NAN);
            let ok = within(v, target, 0.05);
            pass &= ok;
            parts.push(format!("{kind} t={load}: {v:.4} vs {target} ({:+.2}%)", 100.0 * (v - target) / target.abs()));
        }
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn c4_accuracy(cache: &mut Cache) -> Outcome {
    let mut pass = true;
    let mut worst = (0.0f64, String::new());
    let cases = LOADS.iter().map(|&l| (Mat::Le, l)).chain(LOADS.iter().filter(|&&l| l >= -15.0).map(|&l| (Mat::Nh, l)));
    for (mat, load) in cases.collect::<Vec<_>>() {
        for kind in BACKBONES {
            let rd = cache.run(kind, GradientMode::Sf, mat, load, COARSE, 0).ok().and_then(|r| r.mean_rd()).unwrap_or(f64::NAN);
            pass &= rd < 7.0;
            if !(rd <= worst.0) {
                worst = (rd, format!("{kind} {mat:?} t={load}"));
            }
        }
    }
    Outcome { pass, detail: format!("worst mean RD {:.2}% ({}), bound 7%", worst.0, worst.1) }
}

fn c5_instability(cache: &mut Cache) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in BACKBONES {
        let mut hits = Vec::new();
        for (mat, load) in [(Mat::Le, -25.0), (Mat::Nh, -15.0)] {
            let sf = cache.run(kind, GradientMode::Sf, mat, load, COARSE, 0).map(|r| r.final_loss).unwrap_or(f64::NAN);
            for seed in SEEDS {
                if let Ok(r) = cache.run(kind, GradientMode::Ad, mat, load, COARSE, seed) {
                    if r.localization_flag || r.final_loss < 2.0 * sf {
                        hits.push(format!("{mat:?} s{seed} (loss {:.1}, metric {:.1})", r.final_loss, r.localization_metric));
                    }
                }
            }
        }
        pass &= !hits.is_empty();
        parts.push(format!("{kind}-ad signatures: [{}]", hits.join(", ")));
    }
    // Stable runs: no localization, no non-finite stop, loss not below twice the oracle energy.
    let mut flagged = Vec::new();
    let mut n_sf = 0;
    for mat in [Mat::Le, Mat::Nh] {
        for load in LOADS {
            let energy = cache.oracle(mat, load, COARSE).map(|o| o.energy).unwrap_or(f64::NAN);
            for kind in BACKBONES {
                n_sf += 1;
                match cache.run(kind, GradientMode::Sf, mat, load, COARSE, 0) {
                    Ok(r) if !r.localization_flag && !r.diverged && !(r.final_loss < 2.0 * energy) => {}
                    _ => flagged.push(format!("{kind} {mat:?} t={load}")),
                }
            }
        }
    }
    pass &= flagged.is_empty();
    parts.push(format!("sf runs flagged: {}/{n_sf} {flagged:?}", flagged.len()));
    Outcome { pass, detail: parts.join("; ") }
}

fn c6_refinement(cache: &mut Cache) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in BACKBONES {
        let fractions: Vec<f64> = REFINED
            .iter()
            .map(|&d| {
                let n = SEEDS
                    .iter()
                    .filter(|&&s| cache.run(kind, GradientMode::Ad, Mat::Nh, -15.0, d, s).map_or(true, |r| r.diverged))
                    .count();
                n as f64 / SEEDS.len() as f64
            })
            .collect();
        let monotone = fractions.windows(2).all(|w| w[1] <= w[0]);
        let sf_flags = REFINED
            .iter()
            .filter(|&&d| cache.run(kind, GradientMode::Sf, Mat::Nh, -15.0, d, 0).map_or(true, |r| r.diverged))
            .count();
        pass &= monotone && sf_flags == 0;
        parts.push(format!("{kind}: ad diverged fractions {fractions:.2?}, sf flagged {sf_flags}/3"));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn small_config(mode: GradientMode, kind: NetworkKind, dims: [usize; 3]) -> ExperimentConfig {
    let mut cfg = variant(&config("beam_nh.json"), kind, mode, 5);
    cfg.geometry.dims = dims;
    cfg
}

fn c7_audits() -> Outcome {
    let mut worst_sf = 0.0f64;
    let mut worst_ad = 0.0f64;
    for kind in BACKBONES {
        for mode in [GradientMode::Sf, GradientMode::Ad] {
            let cfg = small_config(mode, kind, [3, 3, 3]);
            let mesh = build_mesh(&cfg).unwrap();
            let loss = build_loss(&cfg, &mesh).unwrap();
            let theta = init_params(&cfg.network).unwrap().theta;
            let e = fd_gradient_audit(&loss, &theta, 6, 9).unwrap();
            match mode {
                GradientMode::Sf => worst_sf = worst_sf.max(e),
                GradientMode::Ad => worst_ad = worst_ad.max(e),
            }
        }
    }
    // First Piola-Kirchhoff stress against central differences of the energy.
    let (c10, d1) = (192.31, 0.0024);
    let mut worst_p = 0.0f64;
    let mut state = 12345u64;
    let mut rnd = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    for _ in 0..50 {
        let f = Matrix3::identity() + Matrix3::from_fn(|_, _| 0.4 * rnd());
        let p = pk1_stress(&f, c10, d1).unwrap();
        let h = 1e-6;
        let fd = Matrix3::from_fn(|i, j| {
            let mut a = f;
            let mut b = f;
            a[(i, j)] += h;
            b[(i, j)] -= h;
            (energy_neohookean(&a, c10, d1).unwrap() - energy_neohookean(&b, c10, d1).unwrap()) / (2.0 * h)
        });
        worst_p = worst_p.max((p - fd).norm() / p.norm().max(1.0));
    }
    // Shape-function gradients on affine fields.
    let mesh = build_hex_mesh(build_grid([3, 3, 3], [1.0, 1.0, 1.0]).unwrap());
    let op = GradientOperator::new(&mesh, VolumeRule::Gauss2x2x2).unwrap();
    let a = Matrix3::from_fn(|_, _| rnd());
    let u: Vec<f64> = mesh.grid().coords().iter().flat_map(|x| {
        let v = a * x;
        [v[0], v[1], v[2]]
    }).collect();
    let worst_b = (0..op.n_points()).map(|g| (op.gradient_at(&u, g) - a).abs().max()).fold(0.0, f64::max);
    Outcome {
        pass: worst_sf < 1e-5 && worst_ad < 1e-4 && worst_p < 1e-6 && worst_b < 1e-12,
        detail: format!(
            "fd audit sf {worst_sf:.2e} (<1e-5), ad {worst_ad:.2e} (<1e-4); pk1 {worst_p:.2e} (<1e-6); affine gradients {worst_b:.1e} (<1e-12)"
        ),
    }
}

fn c8_oracle(cache: &mut Cache) -> Outcome {
    let le = cache.oracle(Mat::Le, -2.5, COARSE).cloned();
    let (residual, tip) = match &le {
        Ok(o) => {
            let mesh = build_hex_mesh(build_grid(COARSE, [4.0, 1.0, 1.0]).unwrap());
            let nodes = mesh.face_nodes(Face::X1);
            let tip = nodes.iter().map(|&n| o.u_ref.get(n, 1)).sum::<f64>() / nodes.len() as f64;
            (o.residual_norm, tip)
        }
        Err(_) => (f64::NAN, f64::NAN),
    };
    let steps: Vec<f64> = cache
        .oracle(Mat::Nh, -15.0, COARSE)
        .map(|o| o.load_steps.iter().map(|s| s.energy).collect())
        .unwrap_or_default();
    let monotone = steps.len() > 1 && steps.windows(2).all(|w| w[1] < w[0]);
    Outcome {
        pass: residual < 1e-8 && within(tip.abs(), 0.67, 0.15) && monotone,
        detail: format!(
            "LE residual {residual:.2e} (<1e-8); tip deflection {:.4} vs 0.67 ({:+.1}%); NH energies over {} steps monotone: {monotone}",
            tip.abs(),
            100.0 * (tip.abs() - 0.67) / 0.67,
            steps.len()
        ),
    }
}

fn c9_structure() -> Outcome {
    let cube = build_graph(&build_grid([3, 3, 3], [1.0, 1.0, 1.0]).unwrap(), Radius::Auto, EdgeWeighting::Binary).unwrap();
    let counts = (cube.n_nodes(), cube.edges().len());

    let mut state = 99u64;
    let mut next = |m: u64| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) % m
    };
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = 2 + next(49) as usize;
        let mut edges = std::collections::BTreeSet::new();
        for _ in 0..2 * n {
            let (a, b) = (next(n as u64) as usize, next(n as u64) as usize);
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let edges: Vec<_> = edges.into_iter().collect();
        let g = graph_from_edges(n, &edges, &vec![1.0; edges.len()], EdgeWeighting::Binary).unwrap();
        let x = Tensor::from_fn(n, 2, |_, _| next(2001) as f64 / 1000.0 - 1.0);
        let basis = chebyshev_basis(g.scaled_laplacian(), &x, 5).unwrap();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for &(i, j) in &edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        let d: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
        let l = DMatrix::from_fn(n, n, |i, j| if d[i] > 0.0 && d[j] > 0.0 { -a[(i, j)] / (d[i] * d[j]).sqrt() } else { 0.0 });
        let eig = SymmetricEigen::new(l);
        let xm = DMatrix::from_row_slice(n, 2, x.data());
        for (k, z) in basis.iter().enumerate() {
            let t = eig.eigenvalues.map(|v| (k as f64 * v.clamp(-1.0, 1.0).acos()).cos());
            let expect = &eig.eigenvectors * DMatrix::from_diagonal(&t) * eig.eigenvectors.transpose() * &xm;
            let zm = DMatrix::from_row_slice(n, 2, z.data());
            worst = worst.max((zm - &expect).amax() / expect.amax().max(1.0));
        }
    }

    // Same seed, different worker counts: identical loss histories bit for bit.
    let mut cfg = small_config(GradientMode::Sf, NetworkKind::Gcn, [7, 3, 3]);
    cfg.train.max_epochs = 2;
    cfg.train.inner_iters_per_epoch = 5;
    cfg.oracle.enabled = false;
    cfg.seeds = vec![3, 4];
    let histories = |threads: usize| {
        let dir = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let rows = cmd_sweep(&cfg, &[-2.5, -5.0], &Selection::default(), dir.path(), &pool).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path().join("metrics.csv")).unwrap()))
            .collect();
        files.sort();
        (rows.iter().map(|r| r.final_loss.to_bits()).collect::<Vec<_>>(), files)
    };
    let one = histories(1);
    let bitwise = one == histories(3) && one == histories(1) && one.1.len() == 16;
    Outcome {
        pass: counts == (27, 54) && worst < 1e-12 && bitwise,
        detail: format!("unit cube graph {counts:?}; chebyshev vs dense {worst:.1e}; reproducible across 1/3 workers: {bitwise}"),
    }
}

#[test]
fn acceptance_criteria() {
    // DEM_ACCEPTANCE_ONLY="1,7" restricts a local run to some criteria; the default is all.
    let only: Option<Vec<usize>> =
        std::env::var("DEM_ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let selected = |id: usize| only.as_ref().is_none_or(|o| o.contains(&id));
    let mut cache = Cache::new();
    let mut failed = Vec::new();
    let mut report = |id: usize, name: &str, o: &dyn Fn(&mut Cache) -> Outcome| {
        if !selected(id) {
            say(&format!("[SKIP] criterion {id} {name}"));
            return;
        }
        let o = o(&mut cache);
        let tag = if o.pass { "PASS" } else { "FAIL" };
        say(&format!("[{tag}] criterion {id} {name}: {}", o.detail));
        if !o.pass {
            failed.push(id);
        }
    };
    report(1, "1D instability demo", &|_| c1_demo());
    report(7, "gradient audits", &|_| c7_audits());
    report(9, "structure checks", &|_| c9_structure());
    report(8, "oracle physics", &c8_oracle);
    report(2, "linear elastic energies", &|c| energy_check(c, Mat::Le, &[(-2.5, -0.81), (-25.0, -81.1)]));
    report(3, "neo-hookean energies", &|c| energy_check(c, Mat::Nh, &[(-2.5, -0.80), (-15.0, -22.7)]));
    report(4, "accuracy vs oracle", &c4_accuracy);
    report(5, "instability signature", &c5_instability);
    report(6, "grid refinement", &c6_refinement);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
