//! Identifiability metrics: correlation-based latent matching, Jacobian
//! support versus intimate-neighbor sets, adjacency structure recovery, and
//! the independent-latents baseline comparison.

use std::io::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::graph::{intimate_neighbors, moralize, Dag, MarkovNet, Permutation};
use crate::semgen::Dataset;
use crate::train::{fit, FitResult, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sample count mismatch: {0} vs {1}")]
    SampleMismatch(usize, usize),
    #[error("latent dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("need at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialize: {0}")]
    Json(#[from] serde_json::Error),
}

fn column(t: &Tensor, j: usize) -> Vec<f64> {
    (0..t.rows).map(|r| t.get(r, j)).collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va.sqrt() * vb.sqrt())
    }
}

/// Average ranks (ties share the mean rank), then Pearson on the ranks.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut out = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut j = k;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[k]] {
            j += 1;
        }
        let mean_rank = (k + j) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=j] {
            out[i] = mean_rank;
        }
        k = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchReport {
    /// `perm.apply(i)` is the estimated-latent column matched to true `Z_i`.
    pub perm: Vec<usize>,
    /// `pearson[j][i] = |corr(Ẑ_j, Z_i)|`.
    pub pearson_abs: Vec<Vec<f64>>,
    pub spearman_abs: Vec<Vec<f64>>,
    /// Matched |Spearman| per true latent.
    pub matched: Vec<f64>,
    /// Mean matched |Spearman|.
    pub mcc: f64,
    pub degenerate_est: Vec<usize>,
    pub degenerate_true: Vec<usize>,
}

fn is_degenerate(v: &[f64]) -> bool {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() == 0.0
}

/// Exhaustive assignment for n <= 8 (lexicographically smallest maximizer),
/// Hungarian assignment above that.
fn best_assignment(score: &[Vec<f64>]) -> Vec<usize> {
    let n = score.len();
    if n <= 8 {
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut perm: Vec<usize> = Vec::with_capacity(n);
        let mut used = vec![false; n];
        fn rec(
            i: usize,
            n: usize,
            score: &[Vec<f64>],
            perm: &mut Vec<usize>,
            used: &mut [bool],
            acc: f64,
            best: &mut Option<(f64, Vec<usize>)>,
        ) {
            if i == n {
                let better = match best {
                    None => true,
                    // Strict improvement only: earlier (lexicographically
                    // smaller) permutations win ties.
                    Some((b, _)) => acc > *b + 1e-15,
                };
                if better {
                    *best = Some((acc, perm.clone()));
                }
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    perm.push(j);
                    rec(i + 1, n, score, perm, used, acc + score[j][i], best);
                    perm.pop();
                    used[j] = false;
                }
            }
        }
        rec(0, n, score, &mut perm, &mut used, 0.0, &mut best);
        best.unwrap().1
    } else {
        hungarian_max(score)
    }
}

/// Kuhn–Munkres on the negated score (maximum assignment), O(n^3).
fn hungarian_max(score: &[Vec<f64>]) -> Vec<usize> {
    let n = score.len();
    let inf = f64::INFINITY;
    // 1-indexed potentials; cost[j][i] = -score, assign column i (true) a row
    // j (estimated).
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = -score[j - 1][i0 - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Matches estimated latents (columns of `zhat`) against true latents
/// (columns of `z`) by maximizing the summed matched |Spearman|.
pub fn match_latents(zhat: &Tensor, z: &Tensor) -> Result<MatchReport, EvalError> {
    if zhat.rows != z.rows {
        return Err(EvalError::SampleMismatch(zhat.rows, z.rows));
    }
    if zhat.cols != z.cols {
        return Err(EvalError::DimMismatch(zhat.cols, z.cols));
    }
    if z.rows < 3 {
        return Err(EvalError::TooFewSamples(z.rows));
    }
    let n = z.cols;
    let zhat_cols: Vec<Vec<f64>> = (0..n).map(|j| column(zhat, j)).collect();
    let z_cols: Vec<Vec<f64>> = (0..n).map(|j| column(z, j)).collect();
    let degenerate_est: Vec<usize> =
        (0..n).filter(|&j| is_degenerate(&zhat_cols[j])).collect();
    let degenerate_true: Vec<usize> = (0..n).filter(|&j| is_degenerate(&z_cols[j])).collect();

    let mut pearson_abs = vec![vec![0.0; n]; n];
    let mut spearman_abs = vec![vec![0.0; n]; n];
    for j in 0..n {
        for i in 0..n {
            pearson_abs[j][i] = pearson(&zhat_cols[j], &z_cols[i]).abs();
            spearman_abs[j][i] = spearman(&zhat_cols[j], &z_cols[i]).abs();
        }
    }
    let perm = best_assignment(&spearman_abs);
    let matched: Vec<f64> = (0..n).map(|i| spearman_abs[perm[i]][i]).collect();
    let mcc = matched.iter().sum::<f64>() / n as f64;
    Ok(MatchReport {
        perm,
        pearson_abs,
        spearman_abs,
        matched,
        mcc,
        degenerate_est,
        degenerate_true,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct JacobianSupportReport {
    /// Row-max-normalized mean |∂Ẑ_{π(i)}/∂Z_j| over the evaluation points.
    pub magnitudes: Vec<Vec<f64>>,
    pub support: Vec<Vec<bool>>,
    /// Allowed pattern {i} ∪ Ψ_i from the Markov network.
    pub allowed: Vec<Vec<bool>>,
    pub pass: Vec<bool>,
    pub all_pass: bool,
    pub tau: f64,
}

/// Central-difference Jacobian support of the map `z -> ẑ`, aligned by `perm`
/// (`perm.apply(i)` = estimated column for true `Z_i`), checked against the
/// intimate-neighbor pattern of `net`.
pub fn jacobian_support<F: Fn(&[f64]) -> Vec<f64>>(
    map: F,
    points: &[Vec<f64>],
    perm: &Permutation,
    net: &MarkovNet,
    h: f64,
    tau: f64,
) -> JacobianSupportReport {
    let n = net.n();
    let mut mean_abs = vec![vec![0.0; n]; n];
    for p in points {
        for j in 0..n {
            let mut zp = p.clone();
            let mut zm = p.clone();
            zp[j] += h;
            zm[j] -= h;
            let (fp, fm) = (map(&zp), map(&zm));
            for i in 0..n {
                let est = perm.apply(i);
                mean_abs[i][j] += ((fp[est] - fm[est]) / (2.0 * h)).abs();
            }
        }
    }
    let scale = 1.0 / points.len() as f64;
    let mut magnitudes = vec![vec![0.0; n]; n];
    for i in 0..n {
        let row_max = (0..n).map(|j| mean_abs[i][j] * scale).fold(0.0f64, f64::max);
        for j in 0..n {
            magnitudes[i][j] =
                if row_max > 0.0 { mean_abs[i][j] * scale / row_max } else { 0.0 };
        }
    }
    let support: Vec<Vec<bool>> =
        magnitudes.iter().map(|row| row.iter().map(|&v| v > tau).collect()).collect();
    let mut allowed = vec![vec![false; n]; n];
    for i in 0..n {
        allowed[i][i] = true;
        for j in intimate_neighbors(net, i) {
            allowed[i][j] = true;
        }
    }
    let pass: Vec<bool> = (0..n)
        .map(|i| (0..n).all(|j| !support[i][j] || allowed[i][j]))
        .collect();
    let all_pass = pass.iter().all(|&p| p);
    JacobianSupportReport { magnitudes, support, allowed, pass, all_pass, tau }
}

#[derive(Debug, Clone, Serialize)]
pub struct StructureReport {
    pub estimated_edges: Vec<(usize, usize)>,
    pub true_edges: Vec<(usize, usize)>,
    /// Directed structural Hamming distance (ordering-aligned).
    pub shd: usize,
    /// SHD between the moralizations.
    pub moral_shd: usize,
    pub threshold: f64,
}

/// Thresholds |Â| and compares the implied DAG (entry (i,j) ⇒ edge j→i) with
/// the true DAG, directly and after moralization.
///
/// The comparison is ordering-aligned: when `perm` is given (with `perm[i]`
/// the estimated column matched to true `Z_i`, as in [`MatchReport`]), the
/// estimated edges are relabeled into true-variable indices first.
pub fn structure_metrics(
    adj: &Tensor,
    threshold: f64,
    true_dag: &Dag,
    perm: Option<&[usize]>,
) -> StructureReport {
    let n = true_dag.n();
    // inv[est column] = true variable index
    let inv: Vec<usize> = match perm {
        Some(p) => {
            let mut inv = vec![0; n];
            for (t, &e) in p.iter().enumerate() {
                inv[e] = t;
            }
            inv
        }
        None => (0..n).collect(),
    };
    let mut estimated_edges = Vec::new();
    for i in 0..n {
        for j in 0..i {
            if adj.get(i, j).abs() > threshold {
                estimated_edges.push((inv[j], inv[i]));
            }
        }
    }
    estimated_edges.sort_unstable();
    let true_edges = true_dag.edges();
    let est: std::collections::BTreeSet<_> = estimated_edges.iter().copied().collect();
    let tru: std::collections::BTreeSet<_> = true_edges.iter().copied().collect();
    let shd = est.symmetric_difference(&tru).count();

    let est_dag = Dag::from_edges(n, &estimated_edges).expect("relabeled lower-triangular is acyclic");
    let (m_est, m_true) = (moralize(&est_dag), moralize(true_dag));
    let es: std::collections::BTreeSet<_> = m_est.edges().collect();
    let ts: std::collections::BTreeSet<_> = m_true.edges().collect();
    let moral_shd = es.symmetric_difference(&ts).count();

    StructureReport { estimated_edges, true_edges, shd, moral_shd, threshold }
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineGap {
    /// heldout_ELBO(dependent) − heldout_ELBO(Â ≡ 0 baseline); positive means
    /// modeling the dependence helps.
    pub gap: f64,
    pub dependent_heldout_elbo: f64,
    pub independent_heldout_elbo: f64,
}

/// Trains the model twice with identical config and seed, once with the
/// adjacency frozen at zero, and compares held-out ELBOs.
pub fn independence_baseline_gap(
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(BaselineGap, FitResult, FitResult), TrainError> {
    let dependent = fit(dataset, cfg, None)?;
    let frozen = TrainConfig { freeze_adjacency: true, ..cfg.clone() };
    let independent = fit(dataset, &frozen, None)?;
    let dep_elbo = -dependent.heldout_neg_elbo;
    let ind_elbo = -independent.heldout_neg_elbo;
    Ok((
        BaselineGap {
            gap: dep_elbo - ind_elbo,
            dependent_heldout_elbo: dep_elbo,
            independent_heldout_elbo: ind_elbo,
        },
        dependent,
        independent,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub match_report: Option<MatchReport>,
    pub jacobian: Option<JacobianSupportReport>,
    pub structure: Option<StructureReport>,
    pub baseline: Option<BaselineGap>,
}

fn write_atomic(path: &Path, content: &str) -> Result<(), EvalError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(content.as_bytes())?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn matrix_csv(m: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for row in m {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Writes the report set under `dir` with a `tag` prefix (seed/config hash).
/// Always emits `summary.json`; matrices and per-pair scatter data when the
/// corresponding reports are present. All writes are atomic overwrites.
pub fn emit_report(
    report: &EvalReport,
    scatter: Option<(&Tensor, &Tensor)>,
    dir: &Path,
    tag: &str,
) -> Result<Vec<std::path::PathBuf>, EvalError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: String, content: String| -> Result<(), EvalError> {
        let path = dir.join(name);
        write_atomic(&path, &content)?;
        written.push(path);
        Ok(())
    };

    emit(format!("{tag}_summary.json"), serde_json::to_string_pretty(report)?)?;
    if let Some(m) = &report.match_report {
        emit(format!("{tag}_pearson_abs.csv"), matrix_csv(&m.pearson_abs))?;
        emit(format!("{tag}_spearman_abs.csv"), matrix_csv(&m.spearman_abs))?;
    }
    if let Some(j) = &report.jacobian {
        emit(format!("{tag}_jacobian_magnitudes.csv"), matrix_csv(&j.magnitudes))?;
    }
    if let Some((zhat, z)) = scatter {
        // Scatter-grid data replicating the qualitative figures: one file
        // per (estimated, true) pair, capped at 500 points.
        let rows = zhat.rows.min(500);
        for i in 0..zhat.cols {
            for j in 0..z.cols {
                let mut s = String::from("zhat,z\n");
                for r in 0..rows {
                    s.push_str(&format!("{:.6},{:.6}\n", zhat.get(r, i), z.get(r, j)));
                }
                emit(format!("{tag}_scatter_{i}_{j}.csv"), s)?;
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::presets;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        crate::model::sample_eta(rng, rows, cols)
    }

    #[test]
    fn matches_swapped_scaled_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = randn_matrix(&mut rng, 500, 3);
        // zhat = columns (2, 0, 1) of z, scaled.
        let mut zhat = Tensor::zeros(500, 3);
        for r in 0..500 {
            zhat.set(r, 0, 3.0 * z.get(r, 2));
            zhat.set(r, 1, -0.5 * z.get(r, 0));
            zhat.set(r, 2, 2.0 * z.get(r, 1));
        }
        let rep = match_latents(&zhat, &z).unwrap();
        // True Z_0 lives in estimated column 1, etc.
        assert_eq!(rep.perm, vec![1, 2, 0]);
        assert!((rep.mcc - 1.0).abs() < 1e-12);
        assert!(rep.degenerate_est.is_empty());
    }

    #[test]
    fn monotone_transform_preserves_spearman() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = randn_matrix(&mut rng, 400, 2);
        let zhat = Tensor::from_vec(400, 2, z.data.iter().map(|&v| (2.0 * v).tanh()).collect());
        let rep = match_latents(&zhat, &z).unwrap();
        assert_eq!(rep.perm, vec![0, 1]);
        for i in 0..2 {
            assert!((rep.matched[i] - 1.0).abs() < 1e-12);
            assert!(rep.pearson_abs[i][i] < 1.0);
        }
    }

    #[test]
    fn independent_noise_has_near_zero_mcc() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = randn_matrix(&mut rng, 10_000, 3);
        let zhat = randn_matrix(&mut rng, 10_000, 3);
        let rep = match_latents(&zhat, &z).unwrap();
        assert!(rep.mcc < 0.1, "mcc = {}", rep.mcc);
    }

    #[test]
    fn degenerate_column_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = randn_matrix(&mut rng, 100, 2);
        let mut zhat = randn_matrix(&mut rng, 100, 2);
        for r in 0..100 {
            zhat.set(r, 1, 7.0);
        }
        let rep = match_latents(&zhat, &z).unwrap();
        assert_eq!(rep.degenerate_est, vec![1]);
    }

    #[test]
    fn shape_errors() {
        let a = Tensor::zeros(10, 2);
        let b = Tensor::zeros(9, 2);
        assert!(matches!(match_latents(&a, &b), Err(EvalError::SampleMismatch(10, 9))));
        let c = Tensor::zeros(10, 3);
        assert!(matches!(match_latents(&a, &c), Err(EvalError::DimMismatch(2, 3))));
    }

    #[test]
    fn hungarian_agrees_with_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.gen_range(2..=6);
            let score: Vec<Vec<f64>> =
                (0..n).map(|_| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
            let ex = best_assignment(&score);
            let hu = hungarian_max(&score);
            let val = |p: &[usize]| -> f64 { (0..n).map(|i| score[p[i]][i]).sum() };
            assert!((val(&ex) - val(&hu)).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_map_jacobian_is_diagonal() {
        let net = moralize(&presets::fig1());
        let points: Vec<Vec<f64>> = (0..5).map(|k| vec![0.1 * k as f64; 5]).collect();
        let rep = jacobian_support(
            |z| z.to_vec(),
            &points,
            &Permutation::identity(5),
            &net,
            1e-3,
            0.1,
        );
        assert!(rep.all_pass);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(rep.support[i][j], i == j);
            }
        }
    }

    #[test]
    fn planted_violation_fails_row() {
        // Under the five-variable net, Z_4 is not in {Z_0} ∪ Ψ_0 = {0, 1}.
        let net = moralize(&presets::fig1());
        let points: Vec<Vec<f64>> = (0..5).map(|k| vec![0.3 * k as f64 - 0.5; 5]).collect();
        let rep = jacobian_support(
            |z| {
                let mut out = z.to_vec();
                out[0] = z[0] + z[4];
                out
            },
            &points,
            &Permutation::identity(5),
            &net,
            1e-3,
            0.1,
        );
        assert!(!rep.pass[0]);
        assert!(rep.pass[1..].iter().all(|&p| p));
        assert!(!rep.all_pass);
        // Allowed pattern has the diagonal.
        assert!((0..5).all(|i| rep.allowed[i][i]));
    }

    #[test]
    fn structure_shd_examples() {
        let dag = presets::y4();
        // Exactly the true adjacency (entries (2,0), (2,1), (3,2)).
        let mut adj = Tensor::zeros(4, 4);
        adj.set(2, 0, 0.8);
        adj.set(2, 1, -0.5);
        adj.set(3, 2, 0.4);
        let rep = structure_metrics(&adj, 0.1, &dag, None);
        assert_eq!(rep.shd, 0);
        assert_eq!(rep.moral_shd, 0);
        assert_eq!(rep.estimated_edges, vec![(0, 2), (1, 2), (2, 3)]);

        // One extra edge.
        adj.set(1, 0, 0.3);
        let rep = structure_metrics(&adj, 0.1, &dag, None);
        assert_eq!(rep.shd, 1);

        // Permutation-aligned comparison: encoder learned (Z1, Z0, Z2, Z3),
        // i.e. perm[i] = est column for true Z_i is [1, 0, 2, 3].
        let mut padj = Tensor::zeros(4, 4);
        padj.set(2, 0, -0.7); // est 0→2 ⇒ true 1→2
        padj.set(2, 1, 0.6); // est 1→2 ⇒ true 0→2
        padj.set(3, 2, 0.5);
        let rep = structure_metrics(&padj, 0.1, &dag, Some(&[1, 0, 2, 3]));
        assert_eq!(rep.shd, 0);
        assert_eq!(rep.estimated_edges, vec![(0, 2), (1, 2), (2, 3)]);

        // Raising the threshold never adds edges.
        let mut prev = usize::MAX;
        for t in [0.05, 0.1, 0.35, 0.45, 0.9] {
            let count = structure_metrics(&adj, t, &dag, None).estimated_edges.len();
            assert!(count <= prev);
            prev = count;
        }
    }

    #[test]
    fn emit_report_writes_and_overwrites() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = randn_matrix(&mut rng, 50, 2);
        let zhat = randn_matrix(&mut rng, 50, 2);
        let m = match_latents(&zhat, &z).unwrap();
        let report = EvalReport {
            match_report: Some(m),
            jacobian: None,
            structure: None,
            baseline: None,
        };
        let files =
            emit_report(&report, Some((&zhat, &z)), dir.path(), "s1_abcd").unwrap();
        assert!(files.len() >= 3);
        assert!(dir.path().join("s1_abcd_summary.json").exists());
        // Rerun overwrites without error.
        let files2 = emit_report(&report, Some((&zhat, &z)), dir.path(), "s1_abcd").unwrap();
        assert_eq!(files.len(), files2.len());

        // Empty report -> summary only.
        let empty =
            EvalReport { match_report: None, jacobian: None, structure: None, baseline: None };
        let files3 = emit_report(&empty, None, dir.path(), "s2_ffff").unwrap();
        assert_eq!(files3.len(), 1);
    }
}
