//! Analytic and numerical oracles for the latent density: log-density,
//! first and cross second derivatives, the cross-derivative Markov network,
//! the sufficient-change rank verifier, and faithfulness (SAF/SUCF) checks.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::{moralize, unshielded_colliders, Dag, MarkovNet};
use crate::par;
use crate::semgen::{DomainParams, LinearSemSpec, NoiseFamily};

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("non-positive noise scale S[{0}] = {1}")]
    NonPositiveScale(usize, f64),
    #[error("analytic derivatives are only available for the Gaussian family")]
    AnalyticUnsupported,
}

/// The known simulator density of `Z` under one domain's mechanisms.
#[derive(Debug, Clone)]
pub struct LatentDensity {
    pub spec: LinearSemSpec,
    pub params: DomainParams,
}

#[derive(Debug, Clone, Copy)]
pub enum HessianMethod {
    /// Gaussian family only: the cross-Hessian is minus the precision matrix.
    Analytic,
    /// Central second differences with per-coordinate step `h * max(1, |z_i|)`.
    CentralFd { h: f64 },
}

impl Default for HessianMethod {
    fn default() -> Self {
        HessianMethod::CentralFd { h: 1e-4 }
    }
}

impl LatentDensity {
    pub fn new(spec: LinearSemSpec, params: DomainParams) -> Result<Self, DensityError> {
        for (i, &s) in params.s.iter().enumerate() {
            if s <= 0.0 {
                return Err(DensityError::NonPositiveScale(i, s));
            }
        }
        Ok(LatentDensity { spec, params })
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    /// Masked edge-coefficient matrix `W = A o C`.
    pub fn coeff_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| self.params.c_entry(i, j))
    }

    /// Residuals `eps_i = (z_i - B_i - (C z)_i) / S_i`.
    pub fn residuals(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|i| {
                let mut v = z[i] - self.params.b[i];
                for &j in self.spec.dag.parents(i) {
                    v -= self.params.c_entry(i, j) * z[j];
                }
                v / self.params.s[i]
            })
            .collect()
    }

    /// `log p(z)`; the linear SEM part contributes a unit Jacobian, so this is
    /// the sum of per-node conditional log densities.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let eps = self.residuals(z);
        let mut lp = 0.0;
        for (i, &e) in eps.iter().enumerate() {
            lp += match self.spec.noise {
                NoiseFamily::Gaussian => {
                    -0.5 * e * e - 0.5 * (2.0 * std::f64::consts::PI).ln()
                }
                NoiseFamily::Laplace => -e.abs() - std::f64::consts::LN_2,
            };
            lp -= self.params.s[i].ln();
        }
        lp
    }

    /// Gaussian precision matrix `Theta = (I - W)^T D^{-1} (I - W)`.
    pub fn precision(&self) -> Result<DMatrix<f64>, DensityError> {
        if self.spec.noise != NoiseFamily::Gaussian {
            return Err(DensityError::AnalyticUnsupported);
        }
        let n = self.n();
        let iw = DMatrix::identity(n, n) - self.coeff_matrix();
        let d_inv = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0 / (self.params.s[i] * self.params.s[i])
            } else {
                0.0
            }
        });
        Ok(iw.transpose() * d_inv * iw)
    }

    /// Gaussian mean `(I - W)^{-1} B`.
    pub fn mean(&self) -> Result<DVector<f64>, DensityError> {
        if self.spec.noise != NoiseFamily::Gaussian {
            return Err(DensityError::AnalyticUnsupported);
        }
        let n = self.n();
        let iw = DMatrix::identity(n, n) - self.coeff_matrix();
        let b = DVector::from_column_slice(&self.params.b);
        Ok(iw.lu().solve(&b).expect("I - W is unit lower triangular"))
    }

    /// Gradient of the log density. Analytic for Gaussian, central finite
    /// differences otherwise.
    pub fn grad_log_density(&self, z: &[f64], method: HessianMethod) -> Vec<f64> {
        match (method, self.spec.noise) {
            (HessianMethod::Analytic, NoiseFamily::Gaussian) => {
                let theta = self.precision().expect("gaussian");
                let mu = self.mean().expect("gaussian");
                let zv = DVector::from_column_slice(z);
                (-(theta * (zv - mu))).as_slice().to_vec()
            }
            (HessianMethod::Analytic, _) => panic!("{}", DensityError::AnalyticUnsupported),
            (HessianMethod::CentralFd { h }, _) => {
                let n = self.n();
                (0..n)
                    .map(|i| {
                        let hi = h * z[i].abs().max(1.0);
                        let mut zp = z.to_vec();
                        let mut zm = z.to_vec();
                        zp[i] += hi;
                        zm[i] -= hi;
                        (self.log_density(&zp) - self.log_density(&zm)) / (2.0 * hi)
                    })
                    .collect()
            }
        }
    }

    /// Matrix of cross second derivatives of the log density.
    pub fn cross_hessian(
        &self,
        z: &[f64],
        method: HessianMethod,
    ) -> Result<DMatrix<f64>, DensityError> {
        match method {
            HessianMethod::Analytic => Ok(-self.precision()?),
            HessianMethod::CentralFd { h } => {
                let n = self.n();
                let steps: Vec<f64> = (0..n).map(|i| h * z[i].abs().max(1.0)).collect();
                let mut hess = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in i..n {
                        let v = if i == j {
                            let mut zp = z.to_vec();
                            let mut zm = z.to_vec();
                            zp[i] += steps[i];
                            zm[i] -= steps[i];
                            (self.log_density(&zp) - 2.0 * self.log_density(z)
                                + self.log_density(&zm))
                                / (steps[i] * steps[i])
                        } else {
                            let mut zpp = z.to_vec();
                            let mut zpm = z.to_vec();
                            let mut zmp = z.to_vec();
                            let mut zmm = z.to_vec();
                            zpp[i] += steps[i];
                            zpp[j] += steps[j];
                            zpm[i] += steps[i];
                            zpm[j] -= steps[j];
                            zmp[i] -= steps[i];
                            zmp[j] += steps[j];
                            zmm[i] -= steps[i];
                            zmm[j] -= steps[j];
                            (self.log_density(&zpp) - self.log_density(&zpm)
                                - self.log_density(&zmp)
                                + self.log_density(&zmm))
                                / (4.0 * steps[i] * steps[j])
                        };
                        hess[(i, j)] = v;
                        hess[(j, i)] = v;
                    }
                }
                Ok(hess)
            }
        }
    }
}

/// Edge `{i, j}` iff the mean `|H[i][j]|` over points and domains exceeds
/// `tau`. Per-point Hessians evaluate in parallel; the reduction order is
/// deterministic (position-ordered pairwise accumulation).
pub fn markov_net_from_density(
    densities: &[LatentDensity],
    points: &[Vec<f64>],
    tau: f64,
    method: HessianMethod,
) -> Result<MarkovNet, DensityError> {
    markov_net_from_density_with(densities, points, tau, method, false)
}

/// Sequential twin of [`markov_net_from_density`]; used by the benches.
pub fn markov_net_from_density_seq(
    densities: &[LatentDensity],
    points: &[Vec<f64>],
    tau: f64,
    method: HessianMethod,
) -> Result<MarkovNet, DensityError> {
    markov_net_from_density_with(densities, points, tau, method, true)
}

fn markov_net_from_density_with(
    densities: &[LatentDensity],
    points: &[Vec<f64>],
    tau: f64,
    method: HessianMethod,
    force_seq: bool,
) -> Result<MarkovNet, DensityError> {
    assert!(!densities.is_empty() && !points.is_empty());
    let n = densities[0].n();
    let per_point = |p: usize| -> Result<DMatrix<f64>, DensityError> {
        let mut acc = DMatrix::zeros(n, n);
        for ld in densities {
            acc += ld.cross_hessian(&points[p], method)?.abs();
        }
        Ok(acc)
    };
    let partials = if force_seq {
        par::map_indexed_seq(points.len(), per_point)
    } else {
        par::map_indexed(points.len(), per_point)
    };
    let mut total = DMatrix::zeros(n, n);
    for p in partials {
        total += p?;
    }
    let count = (points.len() * densities.len()) as f64;
    let mut net = MarkovNet::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            if total[(i, j)] / count > tau {
                net.add_edge(i, j);
            }
        }
    }
    Ok(net)
}

/// First derivatives, diagonal second derivatives, and cross derivatives on
/// the Markov-network edges (lexicographic `i < j`), evaluated at one point.
#[derive(Debug, Clone)]
pub struct ChangeVector {
    pub w: Vec<f64>,
    pub edges: Vec<(usize, usize)>,
}

/// Evaluates the change vector `w(z, u)` of length `2n + |M_Z|` against the
/// Markov network `net` (normally `moralize(dag)`).
pub fn change_vector(ld: &LatentDensity, z: &[f64], net: &MarkovNet) -> ChangeVector {
    let n = ld.n();
    let method = if ld.spec.noise == NoiseFamily::Gaussian {
        HessianMethod::Analytic
    } else {
        HessianMethod::CentralFd { h: 1e-4 }
    };
    let grad = ld.grad_log_density(z, method);
    let hess = ld.cross_hessian(z, method).expect("method chosen per family");
    let edges: Vec<(usize, usize)> = net.edges().collect();
    let mut w = Vec::with_capacity(2 * n + edges.len());
    w.extend_from_slice(&grad);
    for i in 0..n {
        w.push(hess[(i, i)]);
    }
    for &(i, j) in &edges {
        w.push(hess[(i, j)]);
    }
    ChangeVector { w, edges }
}

/// Stacks `w(z,u) - w(z,0)` for `u = 1..m` and returns `(numerical rank,
/// required rank 2n + |M_Z|)`. Rank via SVD with relative tolerance 1e-8.
pub fn sufficient_change_rank(densities: &[LatentDensity], z: &[f64]) -> (usize, usize) {
    assert!(densities.len() >= 2, "need a baseline plus at least one changed domain");
    let net = moralize(&densities[0].spec.dag);
    let base = change_vector(&densities[0], z, &net);
    let rows: Vec<Vec<f64>> = densities[1..]
        .iter()
        .map(|ld| {
            let w = change_vector(ld, z, &net).w;
            w.iter().zip(&base.w).map(|(a, b)| a - b).collect()
        })
        .collect();
    let dim = base.w.len();
    let mat = DMatrix::from_fn(rows.len(), dim, |r, c| rows[r][c]);
    let svd = mat.svd(false, false);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-8 * smax).count();
    (rank, dim)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaithfulnessViolation {
    /// DAG-adjacent pair found conditionally independent given the rest.
    Saf { i: usize, j: usize },
    /// Unshielded-collider spouse pair found conditionally independent.
    Sucf { i: usize, collider: usize, j: usize },
}

#[derive(Debug, Clone)]
pub struct FaithfulnessReport {
    pub saf_ok: bool,
    pub sucf_ok: bool,
    pub violations: Vec<FaithfulnessViolation>,
}

/// Checks single adjacency-faithfulness and single
/// unshielded-collider-faithfulness against a conditional-independence oracle
/// (`ci(i, j)` true iff `Z_i` and `Z_j` are independent given the rest).
pub fn check_saf_sucf<F: Fn(usize, usize) -> bool>(g: &Dag, ci: F) -> FaithfulnessReport {
    let mut violations = Vec::new();
    for (from, to) in g.edges() {
        if ci(from, to) {
            violations.push(FaithfulnessViolation::Saf { i: from.min(to), j: from.max(to) });
        }
    }
    let saf_ok = violations.is_empty();
    for (i, k, j) in unshielded_colliders(g) {
        if ci(i, j) {
            violations.push(FaithfulnessViolation::Sucf { i, collider: k, j });
        }
    }
    let sucf_ok = violations.iter().all(|v| matches!(v, FaithfulnessViolation::Saf { .. }));
    FaithfulnessReport { saf_ok, sucf_ok, violations }
}

/// Conditional-independence oracle from a Gaussian precision matrix:
/// independent given the rest iff the precision entry is (numerically) zero.
pub fn gaussian_ci_oracle(theta: &DMatrix<f64>, tol: f64) -> impl Fn(usize, usize) -> bool + '_ {
    move |i, j| theta[(i, j)].abs() < tol
}

/// A triangle SEM `Z1 -> Z2 -> Z3`, `Z1 -> Z3` whose direct effect on `Z2`
/// exactly cancels the collider-induced precision term, so the DAG-adjacent
/// pair `(Z1, Z2)` is conditionally independent given `Z3`: a SAF violation.
///
/// The cancellation solves `Theta_{01} = -C_{10}/S_1^2 + C_{20} C_{21}/S_2^2 = 0`.
pub fn path_cancellation_instance() -> (LinearSemSpec, DomainParams) {
    let dag = Dag::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
    let spec = LinearSemSpec::new(dag, NoiseFamily::Gaussian);
    let n = 3;
    let (c20, c21) = (1.2, 0.8);
    let (s1, s2) = (1.1, 0.9);
    let c10 = c20 * c21 * (s1 * s1) / (s2 * s2);
    let mut c = vec![0.0; n * n];
    c[n + 0] = c10;
    c[2 * n + 0] = c20;
    c[2 * n + 1] = c21;
    let params = DomainParams { c, s: vec![1.0, s1, s2], b: vec![0.3, -0.5, 1.0], u: 0 };
    (spec, params)
}

/// Composite-Simpson quadrature of `exp(f)` over `[lo, hi]` with `2k+1` nodes.
pub fn simpson_1d<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, nodes: usize) -> f64 {
    assert!(nodes >= 3 && nodes % 2 == 1);
    let h = (hi - lo) / (nodes - 1) as f64;
    let mut acc = 0.0;
    for k in 0..nodes {
        let w = if k == 0 || k == nodes - 1 {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * f(lo + k as f64 * h);
    }
    acc * h / 3.0
}

pub fn simpson_2d<F: Fn(f64, f64) -> f64>(f: F, lo: f64, hi: f64, nodes: usize) -> f64 {
    simpson_1d(|x| simpson_1d(|y| f(x, y), lo, hi, nodes), lo, hi, nodes)
}

/// A point where every Laplace residual is away from the kink set, so finite
/// differences of the log density are valid.
pub fn is_generic_point(ld: &LatentDensity, z: &[f64], margin: f64) -> bool {
    ld.spec.noise == NoiseFamily::Gaussian
        || ld.residuals(z).iter().all(|e| e.abs() > margin)
}
