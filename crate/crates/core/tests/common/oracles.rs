//! Brute-force and hand-computed oracles. Each check returns a short
//! description of what matched, or what diverged.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svcgraph_core::gae::{adam_step, decode, reconstruction_loss, AdamState, ModelConfig, ModelParams};
use svcgraph_core::graph::{build_snapshot, normalize_weights, propagation_matrix};
use svcgraph_core::scoring::{cosine_scores, fanout_diff, fanout_ratios, pca_project, Cosine, EdgeChange, Ratio};
use svcgraph_core::{Matrix, Profile, ServiceRegistry};

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_edges(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<(String, String, f64)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen::<f64>() < p {
                edges.push((format!("s{i}"), format!("s{j}"), rng.gen_range(0.5..500.0)));
            }
        }
    }
    if edges.is_empty() {
        edges.push(("s0".into(), "s1".into(), 1.0));
    }
    edges
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

/// Dense target is `tps / max`, and P matches an explicit triple loop.
pub fn normalization() -> Check {
    let mut worst_p = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 10;
        let mut reg = ServiceRegistry::new();
        for i in 0..n {
            reg.register(&format!("s{i}")).unwrap();
        }
        let edges = random_edges(&mut rng, n, 0.3);
        let snap = build_snapshot(
            &mut reg,
            seed as i64,
            Profile::Baseline,
            edges.iter().map(|(a, b, w)| (a.as_str(), b.as_str(), *w)),
        )
        .unwrap();
        let norm = normalize_weights(&snap, n).unwrap();
        let max = edges.iter().map(|e| e.2).fold(0.0, f64::max);
        let mut dense = vec![vec![0.0; n]; n];
        for (a, b, w) in &edges {
            let (i, j) = (reg.id(a).unwrap().0, reg.id(b).unwrap().0);
            dense[i][j] = w / max;
        }
        for (i, row) in dense.iter().enumerate() {
            for (j, &want) in row.iter().enumerate() {
                ensure(norm.adjacency[(i, j)] == want, || {
                    format!("seed {seed}: A[{i}][{j}] = {} expected {want}", norm.adjacency[(i, j)])
                })?;
            }
        }
        let s_tilde = |i: usize, j: usize| (dense[i][j] + dense[j][i]) / 2.0 + if i == j { 1.0 } else { 0.0 };
        let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| s_tilde(i, j)).sum()).collect();
        let p = norm.propagation();
        for i in 0..n {
            for j in 0..n {
                let expected = s_tilde(i, j) / (deg[i] * deg[j]).sqrt();
                worst_p = worst_p.max((p[(i, j)] - expected).abs());
            }
        }
        // Spectral radius from a dense symmetric eigensolver.
        let radius = to_na(&p).symmetric_eigen().eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        ensure(radius <= 1.0 + 1e-9, || format!("seed {seed}: spectral radius {radius}"))?;
    }
    ensure(worst_p < 1e-12, || format!("P deviates from the loop oracle by {worst_p:e}"))?;
    let two = propagation_matrix(&Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]));
    let hand = [[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]];
    for i in 0..2 {
        for j in 0..2 {
            ensure((two[(i, j)] - hand[i][j]).abs() < 1e-4, || format!("2-node P[{i}][{j}] = {}", two[(i, j)]))?;
        }
    }
    Ok(format!("A exact, P within {worst_p:.1e} of loop oracle, spectral radius <= 1"))
}

/// Off-diagonal MSE against a double loop.
pub fn loss() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..12);
        let z = Matrix::from_fn(n, 4, |_, _| rng.gen_range(-1.0..1.0));
        let t = Matrix::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0));
        let recon = decode(&z);
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let zz: f64 = (0..4).map(|k| z[(i, k)] * z[(j, k)]).sum();
                    sum += (zz - t[(i, j)]).powi(2);
                }
            }
        }
        let expected = sum / (n * n - n) as f64;
        let got = reconstruction_loss(&recon, &t);
        worst = worst.max((got - expected).abs() / expected.max(1e-300));
    }
    ensure(worst < 1e-12, || format!("loss relative error {worst:e}"))?;
    let hand = reconstruction_loss(
        &Matrix::from_rows(&[vec![0.0, 0.5], vec![0.5, 0.0]]),
        &Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]),
    );
    ensure((hand - 0.25).abs() < 1e-15, || format!("2-node hand loss {hand}"))?;
    Ok(format!("double-loop MSE within {worst:.1e} relative"))
}

pub fn cosine() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Matrix::from_fn(30, 16, |_, _| rng.gen_range(-1.0..1.0));
    let b = Matrix::from_fn(30, 16, |_, _| rng.gen_range(-1.0..1.0));
    let mut worst = 0.0f64;
    for (i, c) in cosine_scores(&a, &b).unwrap().into_iter().enumerate() {
        let Cosine::Score(s) = c else {
            return Err(format!("row {i} unexpectedly degenerate"));
        };
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for k in 0..16 {
            ab += a[(i, k)] * b[(i, k)];
            aa += a[(i, k)] * a[(i, k)];
            bb += b[(i, k)] * b[(i, k)];
        }
        worst = worst.max((s - ab / (aa.sqrt() * bb.sqrt())).abs());
    }
    ensure(worst < 1e-12, || format!("cosine error {worst:e}"))?;
    let hand = cosine_scores(
        &Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 2.0]]),
        &Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 4.0]]),
    )
    .unwrap();
    ensure(hand[0] == Cosine::Score(0.0), || format!("orthogonal rows scored {:?}", hand[0]))?;
    ensure(matches!(hand[1], Cosine::Score(s) if (s - 1.0).abs() < 1e-12), || {
        format!("colinear rows scored {:?}", hand[1])
    })?;
    Ok(format!("naive formula within {worst:.1e}"))
}

pub fn fanout() -> Check {
    let mut reg = ServiceRegistry::new();
    let a = build_snapshot(
        &mut reg,
        0,
        Profile::Baseline,
        [("A", "B", 60.0), ("C", "B", 40.0), ("B", "D", 30.0)],
    )
    .unwrap();
    let b_id = reg.id("B").unwrap();
    let r = fanout_ratios(&a, b_id);
    ensure(r.outgoing == vec![(reg.id("D").unwrap(), Ratio::Value(0.3))], || format!("ratio {:?}", r.outgoing))?;
    let b = build_snapshot(
        &mut reg,
        1,
        Profile::Baseline,
        [("A", "B", 60.0), ("C", "B", 40.0), ("B", "D", 40.0)],
    )
    .unwrap();
    let d = fanout_diff(&a, &b, b_id);
    let EdgeChange::Compared { abs_pct_diff, .. } = d.edges[0].1 else {
        return Err(format!("unexpected change {:?}", d.edges[0].1));
    };
    ensure((abs_pct_diff - 100.0 / 3.0).abs() < 0.1, || format!("pct diff {abs_pct_diff}"))?;
    Ok(format!("ratio 0.3, diff {abs_pct_diff:.1}%"))
}

pub fn adam() -> Check {
    let config = ModelConfig::for_registry(1);
    let scalar = |x: f64| ModelParams {
        w0: Matrix::from_rows(&[vec![x]]),
        w1: Matrix::from_rows(&[vec![0.0]]),
    };
    let mut p = scalar(1.0);
    let mut state = AdamState::new(&p);
    adam_step(&mut p, &mut state, &scalar(1.0), &config);
    let got = p.w0[(0, 0)];
    ensure((got - 0.99).abs() < 1e-8, || format!("first step gave {got}"))?;
    Ok(format!("first step {got:.8}"))
}

/// Projections match a dense eigensolver up to per-component sign.
pub fn pca() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Matrix::from_fn(20, 16, |_, _| rng.gen_range(-1.0..1.0));
        let proj = pca_project(&z, 2).map_err(|e| e.to_string())?;

        let zn = to_na(&z);
        let mean = zn.row_mean();
        let centred = DMatrix::from_fn(20, 16, |i, j| zn[(i, j)] - mean[j]);
        let cov = centred.transpose() * &centred / 19.0;
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..16).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (c, &col) in order.iter().take(2).enumerate() {
            let v = eig.eigenvectors.column(col);
            let x = &centred * v;
            let sign = if (0..20).map(|i| x[i] * proj.coords[(i, c)]).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            for i in 0..20 {
                worst = worst.max((sign * x[i] - proj.coords[(i, c)]).abs());
            }
        }
    }
    ensure(worst < 1e-6, || format!("PCA deviates by {worst:e}"))?;
    Ok(format!("projections within {worst:.1e} of dense eigensolver"))
}

pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("normalization", normalization()),
        ("loss", loss()),
        ("cosine", cosine()),
        ("fan-out", fanout()),
        ("adam", adam()),
        ("pca", pca()),
    ]
}
