//! Multi-domain data generation from a linear latent SEM with modular
//! scale/shift mechanism changes and an invertible orthogonal-LeakyReLU
//! mixing function.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Dag;
use crate::par;

#[derive(Debug, Error)]
pub enum SemError {
    #[error("invalid dimensions: n={0}, d={1} (need d >= n >= 1)")]
    InvalidDims(usize, usize),
    #[error("need at least one {0}")]
    Empty(&'static str),
    #[error("point is outside the mixing image (embedding residual {0:.3e})")]
    OutOfImage(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    Laplace,
}

impl NoiseFamily {
    /// Zero-location, unit-scale draw (Laplace scale parameter 1, variance 2).
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseFamily::Gaussian => {
                // Box-Muller; one draw per call keeps the stream contract simple.
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen::<f64>();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            }
            NoiseFamily::Laplace => {
                let u: f64 = rng.gen_range(-0.5..0.5);
                -u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
            }
        }
    }
}

/// The generative family: a DAG plus the exogenous noise family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearSemSpec {
    #[serde(with = "dag_serde")]
    pub dag: Dag,
    pub noise: NoiseFamily,
}

mod dag_serde {
    use super::Dag;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(dag: &Dag, s: S) -> Result<S::Ok, S::Error> {
        (dag.n(), dag.edges()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Dag, D::Error> {
        let (n, edges): (usize, Vec<(usize, usize)>) = Deserialize::deserialize(d)?;
        Dag::from_edges(n, &edges).map_err(serde::de::Error::custom)
    }
}

impl LinearSemSpec {
    pub fn new(dag: Dag, noise: NoiseFamily) -> Self {
        LinearSemSpec { dag, noise }
    }

    pub fn n(&self) -> usize {
        self.dag.n()
    }
}

/// Per-domain mechanism parameters: edge scalings `C` (supported on DAG
/// edges), noise scales `S`, and shifts `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainParams {
    /// Row-major n x n; `c[i*n+j]` scales the edge `j -> i`.
    pub c: Vec<f64>,
    pub s: Vec<f64>,
    pub b: Vec<f64>,
    pub u: usize,
}

impl DomainParams {
    pub fn c_entry(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.s.len() + j]
    }
}

fn domain_rng(seed: u64, u: usize) -> ChaCha8Rng {
    // Splittable-seed contract: independent stream per domain index.
    ChaCha8Rng::seed_from_u64(seed ^ (u as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Independent per-domain draws: `C ~ Unif[0.5,2]` on DAG edges,
/// `S ~ Unif[0.5,2]`, `B ~ Unif[-2,2]`. Deterministic given the seed.
pub fn sample_domain_params(
    spec: &LinearSemSpec,
    num_domains: usize,
    rng_seed: u64,
) -> Result<Vec<DomainParams>, SemError> {
    if num_domains == 0 {
        return Err(SemError::Empty("domain"));
    }
    let n = spec.n();
    let mut out = Vec::with_capacity(num_domains);
    for u in 0..num_domains {
        let mut rng = domain_rng(rng_seed, u);
        let mut c = vec![0.0; n * n];
        for i in 0..n {
            for &j in spec.dag.parents(i) {
                c[i * n + j] = rng.gen_range(0.5..2.0);
            }
        }
        let s = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let b = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        out.push(DomainParams { c, s, b, u });
    }
    Ok(out)
}

/// Draws noise and solves `Z = (A o C) Z + S eps + B` by forward substitution
/// in topological order. Returns `m` row-major samples of length `n`.
pub fn simulate_latents(
    spec: &LinearSemSpec,
    params: &DomainParams,
    m: usize,
    rng_seed: u64,
) -> Result<Vec<Vec<f64>>, SemError> {
    if m == 0 {
        return Err(SemError::Empty("sample"));
    }
    let n = spec.n();
    let order = spec.dag.topological_order().expect("Dag invariant");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let eps: Vec<f64> = (0..n).map(|_| spec.noise.sample(&mut rng)).collect();
        out.push(latents_from_noise(spec, params, &eps, &order));
    }
    Ok(out)
}

/// Forward substitution for one noise vector.
pub fn latents_from_noise(
    spec: &LinearSemSpec,
    params: &DomainParams,
    eps: &[f64],
    topo_order: &[usize],
) -> Vec<f64> {
    let n = spec.n();
    let mut z = vec![0.0; n];
    for &i in topo_order {
        let mut v = params.b[i] + params.s[i] * eps[i];
        for &j in spec.dag.parents(i) {
            v += params.c[i * n + j] * z[j];
        }
        z[i] = v;
    }
    z
}

/// Invertible mixing: orthogonal linear layers with LeakyReLU between them.
/// The final layer is linear. With `d > n` the first layer is an injective
/// embedding (the first `n` columns of a random `d x d` orthogonal matrix).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixingFunction {
    /// Each layer is a weight matrix with its LeakyReLU slope.
    layers: Vec<(MatrixData, f64)>,
    n: usize,
    d: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixData {
    fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        MatrixData {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

fn leaky(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        alpha * x
    }
}

fn leaky_inv(y: f64, alpha: f64) -> f64 {
    if y >= 0.0 {
        y
    } else {
        y / alpha
    }
}

fn random_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let gauss = DMatrix::from_fn(dim, dim, |_, _| {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    });
    let qr = gauss.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Sign-fix columns so the distribution is Haar and the factor unique.
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

impl MixingFunction {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Identity map (single identity layer), mostly for tests.
    pub fn identity(n: usize) -> Self {
        MixingFunction {
            layers: vec![(MatrixData::from_dmatrix(&DMatrix::identity(n, n)), 0.2)],
            n,
            d: n,
        }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut x = DMatrix::from_column_slice(z.len(), 1, z);
        for (idx, (w, alpha)) in self.layers.iter().enumerate() {
            x = w.to_dmatrix() * x;
            if idx < last {
                x.apply(|v| *v = leaky(*v, *alpha));
            }
        }
        x.as_slice().to_vec()
    }

    /// Inverts the map layer by layer: LeakyReLU analytically, orthogonal
    /// layers by transpose. With `d > n` the embedding layer is inverted by
    /// its pseudo-inverse and the reconstruction residual is checked.
    pub fn invert(&self, x: &[f64]) -> Result<Vec<f64>, SemError> {
        let last = self.layers.len() - 1;
        let mut y = DMatrix::from_column_slice(x.len(), 1, x);
        for (idx, (w, alpha)) in self.layers.iter().enumerate().rev() {
            let wm = w.to_dmatrix();
            if idx < last {
                // The activation ran after this layer on the forward pass.
                y.apply(|v| *v = leaky_inv(*v, *alpha));
            }
            if wm.nrows() == wm.ncols() {
                y = wm.transpose() * y;
            } else {
                // Injective embedding: W^T W = I, residual flags points
                // outside the image.
                let z = wm.transpose() * &y;
                let residual = (&wm * &z - &y).norm();
                if residual > 1e-6 {
                    return Err(SemError::OutOfImage(residual));
                }
                y = z;
            }
        }
        Ok(y.as_slice().to_vec())
    }

    /// Analytic Jacobian at `z`: product of weight matrices and LeakyReLU
    /// slope diagonals along the forward pass.
    pub fn jacobian(&self, z: &[f64]) -> DMatrix<f64> {
        let last = self.layers.len() - 1;
        let mut x = DMatrix::from_column_slice(z.len(), 1, z);
        let mut jac = DMatrix::identity(self.n, self.n);
        for (idx, (w, alpha)) in self.layers.iter().enumerate() {
            let wm = w.to_dmatrix();
            x = &wm * x;
            jac = &wm * jac;
            if idx < last {
                for r in 0..x.nrows() {
                    let slope = if x[(r, 0)] >= 0.0 { 1.0 } else { *alpha };
                    x[(r, 0)] = leaky(x[(r, 0)], *alpha);
                    for c in 0..jac.ncols() {
                        jac[(r, c)] *= slope;
                    }
                }
            }
        }
        jac
    }

    /// `|det J_g|` at `z`; for `d = n` only.
    pub fn abs_det_jacobian(&self, z: &[f64]) -> f64 {
        assert_eq!(self.n, self.d);
        self.jacobian(z).determinant().abs()
    }
}

/// Builds a mixing with QR-orthogonalized Gaussian square layers; if `d > n`
/// the first layer embeds injectively.
pub fn make_mixing(
    n: usize,
    d: usize,
    num_layers: usize,
    alpha: f64,
    rng_seed: u64,
) -> Result<MixingFunction, SemError> {
    if n == 0 || d < n || num_layers == 0 {
        return Err(SemError::InvalidDims(n, d));
    }
    assert!(alpha > 0.0 && alpha <= 1.0, "LeakyReLU slope must be in (0, 1]");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut layers = Vec::with_capacity(num_layers);
    for idx in 0..num_layers {
        let w = if idx == 0 && d > n {
            random_orthogonal(d, &mut rng).columns(0, n).into_owned()
        } else {
            let dim = if idx == 0 { n } else { d };
            random_orthogonal(dim, &mut rng)
        };
        layers.push((MatrixData::from_dmatrix(&w), alpha));
    }
    Ok(MixingFunction { layers, n, d })
}

/// One observation: domain index, observed vector, ground-truth latents.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub u: usize,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub spec: LinearSemSpec,
    pub domains: Vec<DomainParams>,
    pub mixing: MixingFunction,
    pub samples_per_domain: usize,
    pub seed: u64,
}

/// Per-domain samples of observed `X`, ground-truth `Z`, and domain index,
/// with full generation provenance.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.meta.spec.n()
    }

    pub fn d(&self) -> usize {
        self.meta.mixing.d()
    }

    pub fn num_domains(&self) -> usize {
        self.meta.domains.len()
    }

    /// Indices of records belonging to domain `u`.
    pub fn domain_indices(&self, u: usize) -> Vec<usize> {
        (0..self.records.len()).filter(|&r| self.records[r].u == u).collect()
    }
}

/// Composes parameter sampling, latent simulation, and mixing. Domains are
/// generated under independent derived seeds, so the result is identical
/// regardless of parallelism.
pub fn generate_dataset(
    spec: &LinearSemSpec,
    num_domains: usize,
    samples_per_domain: usize,
    mixing: &MixingFunction,
    seed: u64,
) -> Result<Dataset, SemError> {
    generate_dataset_with(spec, num_domains, samples_per_domain, mixing, seed, false)
}

/// Sequential twin of [`generate_dataset`]; used by the benches.
pub fn generate_dataset_seq(
    spec: &LinearSemSpec,
    num_domains: usize,
    samples_per_domain: usize,
    mixing: &MixingFunction,
    seed: u64,
) -> Result<Dataset, SemError> {
    generate_dataset_with(spec, num_domains, samples_per_domain, mixing, seed, true)
}

fn generate_dataset_with(
    spec: &LinearSemSpec,
    num_domains: usize,
    samples_per_domain: usize,
    mixing: &MixingFunction,
    seed: u64,
    force_seq: bool,
) -> Result<Dataset, SemError> {
    if samples_per_domain == 0 {
        return Err(SemError::Empty("sample"));
    }
    if mixing.n() != spec.n() {
        return Err(SemError::InvalidDims(spec.n(), mixing.n()));
    }
    let domains = sample_domain_params(spec, num_domains, seed)?;
    let gen_domain = |u: usize| -> Vec<Record> {
        // Latent draws use a separate derived stream from the parameter draws.
        let z_seed = seed ^ 0x5851_F42D_4C95_7F2D ^ ((u as u64 + 1) << 32);
        let zs = simulate_latents(spec, &domains[u], samples_per_domain, z_seed)
            .expect("samples_per_domain >= 1");
        zs.into_iter().map(|z| Record { u, x: mixing.apply(&z), z }).collect()
    };
    let per_domain: Vec<Vec<Record>> = if force_seq {
        par::map_indexed_seq(num_domains, gen_domain)
    } else {
        par::map_indexed(num_domains, gen_domain)
    };
    let records = per_domain.into_iter().flatten().collect();
    Ok(Dataset {
        records,
        meta: DatasetMeta {
            spec: spec.clone(),
            domains,
            mixing: mixing.clone(),
            samples_per_domain,
            seed,
        },
    })
}

/// 17 significant digits; round-trip exact for f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

impl Dataset {
    /// CSV with header `domain,x_1..x_d,z_1..z_n`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SemError> {
        let d = self.d();
        let n = self.n();
        let mut header = String::from("domain");
        for i in 1..=d {
            header.push_str(&format!(",x_{i}"));
        }
        for i in 1..=n {
            header.push_str(&format!(",z_{i}"));
        }
        writeln!(w, "{header}")?;
        for rec in &self.records {
            let mut line = rec.u.to_string();
            for v in rec.x.iter().chain(rec.z.iter()) {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, meta: DatasetMeta) -> Result<Dataset, SemError> {
        let d = meta.mixing.d();
        let n = meta.spec.n();
        let mut lines = r.lines();
        let _header = lines.next().ok_or_else(|| SemError::Parse("empty csv".into()))??;
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 1 + d + n {
                return Err(SemError::Parse(format!(
                    "expected {} fields, got {}",
                    1 + d + n,
                    fields.len()
                )));
            }
            let u: usize =
                fields[0].parse().map_err(|e| SemError::Parse(format!("bad domain: {e}")))?;
            let parse = |s: &str| -> Result<f64, SemError> {
                s.parse().map_err(|e| SemError::Parse(format!("bad float `{s}`: {e}")))
            };
            let x = fields[1..1 + d].iter().map(|s| parse(s)).collect::<Result<_, _>>()?;
            let z = fields[1 + d..].iter().map(|s| parse(s)).collect::<Result<_, _>>()?;
            records.push(Record { u, x, z });
        }
        Ok(Dataset { records, meta })
    }

    /// Writes `<stem>.csv` and the `<stem>.meta.json` sidecar.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), SemError> {
        std::fs::create_dir_all(dir)?;
        let mut csv = Vec::new();
        self.write_csv(&mut csv)?;
        std::fs::write(dir.join(format!("{stem}.csv")), csv)?;
        let meta = serde_json::to_string_pretty(&self.meta)
            .map_err(|e| SemError::Parse(e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}.meta.json")), meta)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Dataset, SemError> {
        let meta_text = std::fs::read_to_string(dir.join(format!("{stem}.meta.json")))?;
        let meta: DatasetMeta =
            serde_json::from_str(&meta_text).map_err(|e| SemError::Parse(e.to_string()))?;
        let file = std::fs::File::open(dir.join(format!("{stem}.csv")))?;
        Dataset::read_csv(std::io::BufReader::new(file), meta)
    }
}
