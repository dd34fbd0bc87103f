//! The change-encoding network: Gaussian encoder q(Z|X,u), Gaussian decoder
//! with fixed variance, a strictly-lower-triangular learnable adjacency, and
//! two priors over the latents — a conditional affine flow and a per-domain
//! parametric scale-shift — combined into the negative-ELBO + L1 objective.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Graph, NodeId, Tensor};
use crate::semgen::NoiseFamily;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("domain index {u} out of range for {m} domains")]
    DomainOutOfRange { u: usize, m: usize },
    #[error("batch has {got} columns, model expects d = {want}")]
    BadInputDim { got: usize, want: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint is for a different configuration")]
    ConfigMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Flow,
    Parametric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Latent dimension.
    pub n: usize,
    /// Observed dimension.
    pub d: usize,
    /// Number of domains (one-hot embedding size).
    pub num_domains: usize,
    pub prior: PriorKind,
    /// Base density of the prior residuals.
    pub base_noise: NoiseFamily,
    pub hidden: usize,
    /// Stacked affine flow layers per latent.
    pub flow_layers: usize,
    pub sigma2_dec: f64,
    pub leaky_alpha: f64,
}

impl ModelConfig {
    pub fn new(n: usize, d: usize, num_domains: usize, prior: PriorKind) -> Self {
        ModelConfig {
            n,
            d,
            num_domains,
            prior,
            base_noise: NoiseFamily::Gaussian,
            hidden: 64,
            flow_layers: 1,
            sigma2_dec: 0.01,
            leaky_alpha: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Parameterized model. Parameters live in a flat named list so the
/// optimizer can treat them uniformly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: Vec<Param>,
    /// Per-column input standardization baked in by the trainer; empty means
    /// identity. Applied before the encoder and to the reconstruction target,
    /// which shifts the ELBO by a data-constant only.
    #[serde(default)]
    pub x_shift: Vec<f64>,
    #[serde(default)]
    pub x_scale: Vec<f64>,
}

/// Scalar components of one loss evaluation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossParts {
    pub neg_elbo: f64,
    pub kl: f64,
    pub recon: f64,
    pub sparsity: f64,
    pub full: f64,
}

/// Graph node handles for the loss components.
pub struct LossNodes {
    pub full: NodeId,
    pub neg_elbo: NodeId,
    pub kl: NodeId,
    pub recon: NodeId,
    pub sparsity: NodeId,
    pub zhat: NodeId,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect())
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_DEAD_BEEF);
        let (n, d, m, h) = (cfg.n, cfg.d, cfg.num_domains, cfg.hidden);
        let mut params = Vec::new();
        let mut push = |name: String, t: Tensor| params.push(Param { name, value: t });

        push("enc_w1".into(), xavier(&mut rng, d + m, h));
        push("enc_b1".into(), Tensor::zeros(1, h));
        push("enc_w2".into(), xavier(&mut rng, h, h));
        push("enc_b2".into(), Tensor::zeros(1, h));
        push("enc_mu_w".into(), xavier(&mut rng, h, n));
        push("enc_mu_b".into(), Tensor::zeros(1, n));
        push("enc_s_w".into(), xavier(&mut rng, h, n));
        push("enc_s_b".into(), Tensor::zeros(1, n));

        push("dec_w1".into(), xavier(&mut rng, n, h));
        push("dec_b1".into(), Tensor::zeros(1, h));
        push("dec_w2".into(), xavier(&mut rng, h, h));
        push("dec_b2".into(), Tensor::zeros(1, h));
        push("dec_out_w".into(), xavier(&mut rng, h, d));
        push("dec_out_b".into(), Tensor::zeros(1, d));

        // Raw adjacency; only the strict lower triangle is effective.
        push("adj_raw".into(), {
            let mut t = Tensor::zeros(n, n);
            for i in 0..n {
                for j in 0..i {
                    t.set(i, j, rng.gen_range(-0.3..0.3));
                }
            }
            t
        });

        match cfg.prior {
            PriorKind::Flow => {
                for k in 0..cfg.flow_layers {
                    for i in 0..n {
                        push(format!("flow{k}_w1_{i}"), xavier(&mut rng, n + m, h));
                        push(format!("flow{k}_b1_{i}"), Tensor::zeros(1, h));
                        push(format!("flow{k}_w2_{i}"), xavier(&mut rng, h, 2));
                        push(format!("flow{k}_b2_{i}"), Tensor::zeros(1, 2));
                    }
                }
            }
            PriorKind::Parametric => {
                for u in 0..m {
                    push(format!("prior_c_{u}"), xavier(&mut rng, n, n));
                    push(format!("prior_s_raw_{u}"), {
                        // softplus(0.5413...) ~= 1: start near unit scales.
                        let v = (std::f64::consts::E - 1.0f64).ln();
                        Tensor::from_vec(1, n, vec![v; n])
                    });
                    push(format!("prior_b_{u}"), Tensor::zeros(1, n));
                }
            }
        }
        Model { cfg, params, x_shift: Vec::new(), x_scale: Vec::new() }
    }

    pub fn param(&self, name: &str) -> &Tensor {
        &self
            .params
            .iter()
            .find(|p| p.name == name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
            .value
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
            .value
    }

    /// Effective adjacency: raw masked to the strict lower triangle.
    pub fn adjacency(&self) -> Tensor {
        let n = self.cfg.n;
        let raw = self.param("adj_raw");
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                t.set(i, j, raw.get(i, j));
            }
        }
        t
    }

    fn one_hot(&self, rows: usize, u: usize) -> Result<Tensor, ModelError> {
        let m = self.cfg.num_domains;
        if u >= m {
            return Err(ModelError::DomainOutOfRange { u, m });
        }
        let mut t = Tensor::zeros(rows, m);
        for r in 0..rows {
            t.set(r, u, 1.0);
        }
        Ok(t)
    }

    fn strict_lower_mask(&self) -> Tensor {
        let n = self.cfg.n;
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                t.set(i, j, 1.0);
            }
        }
        t
    }

    /// Builds the full loss graph for one single-domain batch. `eta` is the
    /// reparameterization noise, `[B, n]`. Returns the graph, a name → leaf
    /// map for the parameters, and the loss component nodes.
    pub fn loss_graph(
        &self,
        x: &Tensor,
        u: usize,
        eta: &Tensor,
        lambda: f64,
    ) -> Result<(Graph, HashMap<String, NodeId>, LossNodes), ModelError> {
        let (n, d) = (self.cfg.n, self.cfg.d);
        if x.cols != d {
            return Err(ModelError::BadInputDim { got: x.cols, want: d });
        }
        let batch = x.rows;
        let bf = batch as f64;
        let alpha = self.cfg.leaky_alpha;

        let mut g = Graph::new();
        let mut ids = HashMap::new();
        for p in &self.params {
            ids.insert(p.name.clone(), g.leaf(p.value.clone()));
        }
        let pid = |ids: &HashMap<String, NodeId>, name: &str| -> NodeId {
            *ids.get(name).expect("parameter leaf")
        };

        let x_id = g.constant(self.standardize(x));
        let onehot = g.constant(self.one_hot(batch, u)?);
        let eta_id = g.constant(eta.clone());

        // Encoder: (x ++ onehot) -> mu_q, sigma_q.
        let enc_in = g.concat_cols(x_id, onehot)?;
        let h1 = self.linear(&mut g, enc_in, pid(&ids, "enc_w1"), pid(&ids, "enc_b1"))?;
        let h1 = g.leaky_relu(h1, alpha);
        let h2 = self.linear(&mut g, h1, pid(&ids, "enc_w2"), pid(&ids, "enc_b2"))?;
        let h2 = g.leaky_relu(h2, alpha);
        let mu_q = self.linear(&mut g, h2, pid(&ids, "enc_mu_w"), pid(&ids, "enc_mu_b"))?;
        let s_raw = self.linear(&mut g, h2, pid(&ids, "enc_s_w"), pid(&ids, "enc_s_b"))?;
        let sigma_q = g.softplus(s_raw);
        let sigma_q = g.add_scalar(sigma_q, 1e-6);

        // Reparameterized sample.
        let noise = g.mul(sigma_q, eta_id)?;
        let zhat = g.add(mu_q, noise)?;

        // log q(zhat | x, u) per batch: with zhat = mu + sigma*eta the
        // residual is exactly eta, so only the -log sigma term carries grads.
        let log_sigma = g.log(sigma_q)?;
        let sum_log_sigma = g.sum(log_sigma);
        let eta_sq = g.square(eta_id);
        let sum_eta_sq = g.sum(eta_sq);
        let neg_half_eta = g.scale(sum_eta_sq, -0.5);
        let neg_sigma = g.neg(sum_log_sigma);
        let logq = g.add(neg_half_eta, neg_sigma)?;
        let logq = g.add_scalar(
            logq,
            -0.5 * (2.0 * std::f64::consts::PI).ln() * bf * n as f64,
        );

        // Prior log density of zhat (summed over batch).
        let mask = g.constant(self.strict_lower_mask());
        let adj_raw = pid(&ids, "adj_raw");
        let adj_eff = g.mul(adj_raw, mask)?;
        let logp = match self.cfg.prior {
            PriorKind::Flow => self.flow_log_density(&mut g, &ids, adj_eff, zhat, onehot, batch)?,
            PriorKind::Parametric => {
                self.parametric_log_density(&mut g, &ids, adj_eff, zhat, u, batch)?
            }
        };

        // KL (single-sample MC) and reconstruction, both per-sample means.
        let kl_sum = g.sub(logq, logp)?;
        let kl = g.scale(kl_sum, 1.0 / bf);

        let d1 = self.linear(&mut g, zhat, pid(&ids, "dec_w1"), pid(&ids, "dec_b1"))?;
        let d1 = g.leaky_relu(d1, alpha);
        let d2 = self.linear(&mut g, d1, pid(&ids, "dec_w2"), pid(&ids, "dec_b2"))?;
        let d2 = g.leaky_relu(d2, alpha);
        let xhat = self.linear(&mut g, d2, pid(&ids, "dec_out_w"), pid(&ids, "dec_out_b"))?;
        let resid = g.sub(x_id, xhat)?;
        let resid_sq = g.square(resid);
        let sse = g.sum(resid_sq);
        let recon = g.scale(sse, 1.0 / (2.0 * self.cfg.sigma2_dec * bf));
        let recon = g.add_scalar(
            recon,
            0.5 * d as f64 * (2.0 * std::f64::consts::PI * self.cfg.sigma2_dec).ln(),
        );

        let neg_elbo = g.add(kl, recon)?;
        let adj_abs = g.abs(adj_eff);
        let sparsity = g.sum(adj_abs);
        let weighted = g.scale(sparsity, lambda);
        let full = g.add(neg_elbo, weighted)?;

        Ok((g, ids, LossNodes { full, neg_elbo, kl, recon, sparsity, zhat }))
    }

    fn linear(
        &self,
        g: &mut Graph,
        input: NodeId,
        w: NodeId,
        b: NodeId,
    ) -> Result<NodeId, ModelError> {
        let wx = g.matmul(input, w)?;
        Ok(g.add_row(wx, b)?)
    }

    /// Per-element base log density summed into a scalar, given residuals
    /// `eps` of any shape. Returns the graph node for `sum log p_eps`.
    fn base_log_density(&self, g: &mut Graph, eps: NodeId, count: f64) -> NodeId {
        match self.cfg.base_noise {
            NoiseFamily::Gaussian => {
                let sq = g.square(eps);
                let s = g.sum(sq);
                let s = g.scale(s, -0.5);
                g.add_scalar(s, -0.5 * (2.0 * std::f64::consts::PI).ln() * count)
            }
            NoiseFamily::Laplace => {
                let a = g.abs(eps);
                let s = g.sum(a);
                let s = g.neg(s);
                g.add_scalar(s, -std::f64::consts::LN_2 * count)
            }
        }
    }

    /// Σ_i [ log p_eps(eps_i) + logdet_i ] over the batch, with K stacked
    /// affine layers per latent: eps <- (eps - mu_k) * exp(-s_k), each
    /// conditioner seeing only the adjacency-gated latents and the domain.
    fn flow_log_density(
        &self,
        g: &mut Graph,
        ids: &HashMap<String, NodeId>,
        adj_eff: NodeId,
        zhat: NodeId,
        onehot: NodeId,
        batch: usize,
    ) -> Result<NodeId, ModelError> {
        let n = self.cfg.n;
        let alpha = self.cfg.leaky_alpha;
        let adj_t = g.transpose(adj_eff);
        let mut total: Option<NodeId> = None;
        for i in 0..n {
            // Row i of the adjacency as a [1, n] gate.
            let col = g.slice_cols(adj_t, i, i + 1)?;
            let row = g.transpose(col);
            let gated = g.mul_row(zhat, row)?;
            let cond_in = g.concat_cols(gated, onehot)?;

            let mut y = g.slice_cols(zhat, i, i + 1)?;
            let mut logdet: Option<NodeId> = None;
            for k in 0..self.cfg.flow_layers {
                let w1 = ids[&format!("flow{k}_w1_{i}")];
                let b1 = ids[&format!("flow{k}_b1_{i}")];
                let w2 = ids[&format!("flow{k}_w2_{i}")];
                let b2 = ids[&format!("flow{k}_b2_{i}")];
                let h = self.linear(g, cond_in, w1, b1)?;
                let h = g.leaky_relu(h, alpha);
                let out = self.linear(g, h, w2, b2)?;
                let mu = g.slice_cols(out, 0, 1)?;
                let s = g.slice_cols(out, 1, 2)?;
                let neg_s = g.neg(s);
                let inv_scale = g.exp(neg_s);
                let shifted = g.sub(y, mu)?;
                y = g.mul(shifted, inv_scale)?;
                let ld = g.sum(neg_s);
                logdet = Some(match logdet {
                    Some(acc) => g.add(acc, ld)?,
                    None => ld,
                });
            }
            let base = self.base_log_density(g, y, batch as f64);
            let mut term = base;
            if let Some(ld) = logdet {
                term = g.add(term, ld)?;
            }
            total = Some(match total {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
        Ok(total.expect("n >= 1"))
    }

    /// Σ_i [ log p_eps(eps_i) - log S_i ] over the batch with
    /// eps = (zhat - B_u - (A∘C_u) zhat) / S_u.
    fn parametric_log_density(
        &self,
        g: &mut Graph,
        ids: &HashMap<String, NodeId>,
        adj_eff: NodeId,
        zhat: NodeId,
        u: usize,
        batch: usize,
    ) -> Result<NodeId, ModelError> {
        let n = self.cfg.n;
        let c = ids[&format!("prior_c_{u}")];
        let s_raw = ids[&format!("prior_s_raw_{u}")];
        let b = ids[&format!("prior_b_{u}")];

        let w = g.mul(adj_eff, c)?;
        let wt = g.transpose(w);
        let pred = g.matmul(zhat, wt)?;
        let centered = g.sub(zhat, pred)?;
        let neg_b = g.neg(b);
        let centered = g.add_row(centered, neg_b)?;

        let s = g.softplus(s_raw);
        let s = g.add_scalar(s, 1e-6);
        let ones = g.constant(Tensor::from_vec(1, n, vec![1.0; n]));
        let inv_s = g.div(ones, s)?;
        let eps = g.mul_row(centered, inv_s)?;

        let base = self.base_log_density(g, eps, (batch * n) as f64);
        let log_s = g.log(s)?;
        let sum_log_s = g.sum(log_s);
        let jac = g.scale(sum_log_s, -(batch as f64));
        Ok(g.add(base, jac)?)
    }

    /// Loss components plus gradients aligned with `self.params`.
    pub fn loss_and_grads(
        &self,
        x: &Tensor,
        u: usize,
        eta: &Tensor,
        lambda: f64,
    ) -> Result<(LossParts, Vec<Tensor>), ModelError> {
        let (g, ids, nodes) = self.loss_graph(x, u, eta, lambda)?;
        let grads = g.backward(nodes.full)?;
        let out = self
            .params
            .iter()
            .map(|p| {
                grads
                    .get(ids[&p.name])
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.value.rows, p.value.cols))
            })
            .collect();
        Ok((Self::parts(&g, &nodes), out))
    }

    /// Loss components only (no backward pass).
    pub fn loss_parts(
        &self,
        x: &Tensor,
        u: usize,
        eta: &Tensor,
        lambda: f64,
    ) -> Result<LossParts, ModelError> {
        let (g, _, nodes) = self.loss_graph(x, u, eta, lambda)?;
        Ok(Self::parts(&g, &nodes))
    }

    fn parts(g: &Graph, nodes: &LossNodes) -> LossParts {
        LossParts {
            neg_elbo: g.value(nodes.neg_elbo).item(),
            kl: g.value(nodes.kl).item(),
            recon: g.value(nodes.recon).item(),
            sparsity: g.value(nodes.sparsity).item(),
            full: g.value(nodes.full).item(),
        }
    }

    /// Posterior mean and scale for a batch, as plain values.
    /// Applies the baked-in input standardization (identity when unset).
    fn standardize(&self, x: &Tensor) -> Tensor {
        if self.x_shift.len() != x.cols || self.x_scale.len() != x.cols {
            return x.clone();
        }
        let mut out = x.clone();
        for r in 0..out.rows {
            for c in 0..out.cols {
                let v = (out.get(r, c) - self.x_shift[c]) / self.x_scale[c];
                out.set(r, c, v);
            }
        }
        out
    }

    pub fn encode(&self, x: &Tensor, u: usize) -> Result<(Tensor, Tensor), ModelError> {
        let eta = Tensor::zeros(x.rows, self.cfg.n);
        let (g, _, nodes) = self.loss_graph(x, u, &eta, 0.0)?;
        // With eta = 0 the sample equals the posterior mean.
        let mu = g.value(nodes.zhat).clone();
        // Re-derive sigma via a second forward with eta = 1.
        let ones = Tensor::from_vec(x.rows, self.cfg.n, vec![1.0; x.rows * self.cfg.n]);
        let (g1, _, nodes1) = self.loss_graph(x, u, &ones, 0.0)?;
        let z1 = g1.value(nodes1.zhat);
        let sigma = Tensor::from_vec(
            mu.rows,
            mu.cols,
            z1.data.iter().zip(&mu.data).map(|(a, b)| a - b).collect(),
        );
        Ok((mu, sigma))
    }

    /// Prior log density of a single latent vector under domain `u`.
    pub fn prior_log_density(&self, z: &[f64], u: usize) -> Result<f64, ModelError> {
        assert_eq!(z.len(), self.cfg.n);
        let mut g = Graph::new();
        let mut ids = HashMap::new();
        for p in &self.params {
            ids.insert(p.name.clone(), g.constant(p.value.clone()));
        }
        let zhat = g.constant(Tensor::from_vec(1, self.cfg.n, z.to_vec()));
        let onehot = g.constant(self.one_hot(1, u)?);
        let mask = g.constant(self.strict_lower_mask());
        let adj_eff = g.mul(ids["adj_raw"], mask)?;
        let logp = match self.cfg.prior {
            PriorKind::Flow => self.flow_log_density(&mut g, &ids, adj_eff, zhat, onehot, 1)?,
            PriorKind::Parametric => {
                self.parametric_log_density(&mut g, &ids, adj_eff, zhat, u, 1)?
            }
        };
        Ok(g.value(logp).item())
    }

    /// Exact-serialization checkpoint (JSON float round-trip is lossless).
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            serde_json::to_writer(&mut f, self)?;
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model, ModelError> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

/// Standard-normal draws shaped `[rows, cols]` (Box-Muller).
pub fn sample_eta(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let count = rows * cols;
    let mut data = Vec::with_capacity(count);
    while data.len() < count {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let t = 2.0 * std::f64::consts::PI * u2;
        data.push(r * t.cos());
        if data.len() < count {
            data.push(r * t.sin());
        }
    }
    Tensor::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{simpson_1d, simpson_2d};

    fn zero_params_matching(m: &mut Model, prefix: &str) {
        for p in &mut m.params {
            if p.name.starts_with(prefix) {
                p.value = Tensor::zeros(p.value.rows, p.value.cols);
            }
        }
    }

    fn inv_softplus(y: f64) -> f64 {
        (y.exp() - 1.0).ln()
    }

    fn small_cfg(prior: PriorKind) -> ModelConfig {
        let mut cfg = ModelConfig::new(3, 3, 2, prior);
        cfg.hidden = 8;
        cfg
    }

    #[test]
    fn reparam_with_zero_eta_is_posterior_mean() {
        let model = Model::new(small_cfg(PriorKind::Flow), 7);
        let x = Tensor::from_vec(2, 3, vec![0.1, -0.2, 0.5, 1.0, 0.0, -1.0]);
        let (mu, sigma) = model.encode(&x, 1).unwrap();
        let eta = Tensor::zeros(2, 3);
        let (g, _, nodes) = model.loss_graph(&x, 1, &eta, 0.0).unwrap();
        assert_eq!(g.value(nodes.zhat).data, mu.data);
        assert!(sigma.data.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn identity_flow_prior_is_standard_base() {
        let mut model = Model::new(small_cfg(PriorKind::Flow), 7);
        zero_params_matching(&mut model, "flow");
        let z = [0.4, -1.1, 2.0];
        let lp = model.prior_log_density(&z, 0).unwrap();
        let expected: f64 = z
            .iter()
            .map(|&v| -0.5 * (v * v + (2.0 * std::f64::consts::PI).ln()))
            .sum();
        assert!((lp - expected).abs() < 1e-12);
    }

    #[test]
    fn affine_flow_arithmetic() {
        // n = 1: conditioner forced to output mu = 1, s = ln 2 via biases.
        let mut cfg = ModelConfig::new(1, 1, 1, PriorKind::Flow);
        cfg.hidden = 4;
        let mut model = Model::new(cfg, 3);
        zero_params_matching(&mut model, "flow");
        let b2 = model.param_mut("flow0_b2_0");
        b2.data = vec![1.0, std::f64::consts::LN_2];
        // eps = (2 - 1) * exp(-ln 2) = 0.5, logdet = -ln 2.
        let lp = model.prior_log_density(&[2.0], 0).unwrap();
        let expected = -0.5 * (0.25 + (2.0 * std::f64::consts::PI).ln()) - std::f64::consts::LN_2;
        assert!((lp - expected).abs() < 1e-12);
    }

    #[test]
    fn parametric_prior_pointwise() {
        let mut cfg = ModelConfig::new(1, 1, 1, PriorKind::Parametric);
        cfg.hidden = 4;
        let mut model = Model::new(cfg, 5);
        // S = 1, B = 0 -> standard normal.
        model.param_mut("prior_s_raw_0").data = vec![inv_softplus(1.0 - 1e-6)];
        model.param_mut("prior_b_0").data = vec![0.0];
        let lp = model.prior_log_density(&[0.7], 0).unwrap();
        let expected = -0.5 * (0.49 + (2.0 * std::f64::consts::PI).ln());
        assert!((lp - expected).abs() < 1e-9);

        // S = 2, B = 0.3 -> N(0.3, 4).
        model.param_mut("prior_s_raw_0").data = vec![inv_softplus(2.0 - 1e-6)];
        model.param_mut("prior_b_0").data = vec![0.3];
        let total =
            simpson_1d(|z| model.prior_log_density(&[z], 0).unwrap().exp(), -14.0, 14.0, 4001);
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn random_priors_are_normalized() {
        // 1D and 2D quadrature across both prior kinds with random weights.
        for seed in 0..5u64 {
            for prior in [PriorKind::Flow, PriorKind::Parametric] {
                let mut cfg = ModelConfig::new(1, 1, 2, prior);
                cfg.hidden = 8;
                let model = Model::new(cfg, seed);
                let total = simpson_1d(
                    |z| model.prior_log_density(&[z], 1).unwrap().exp(),
                    -14.0,
                    14.0,
                    2001,
                );
                assert!((total - 1.0).abs() < 1e-3, "{prior:?} seed {seed}: {total}");

                let mut cfg = ModelConfig::new(2, 2, 2, prior);
                cfg.hidden = 8;
                let model = Model::new(cfg, seed);
                let total = simpson_2d(
                    |a, b| model.prior_log_density(&[a, b], 0).unwrap().exp(),
                    -14.0,
                    14.0,
                    301,
                );
                assert!((total - 1.0).abs() < 1e-3, "{prior:?} 2d seed {seed}: {total}");
            }
        }
    }

    #[test]
    fn upper_triangle_gradient_is_zero() {
        for prior in [PriorKind::Flow, PriorKind::Parametric] {
            let model = Model::new(small_cfg(prior), 11);
            let x = Tensor::from_vec(4, 3, (0..12).map(|k| (k as f64) * 0.1 - 0.5).collect());
            let eta = sample_eta(&mut ChaCha8Rng::seed_from_u64(1), 4, 3);
            let (_, grads) = model.loss_and_grads(&x, 0, &eta, 1e-2).unwrap();
            let idx = model.params.iter().position(|p| p.name == "adj_raw").unwrap();
            let ga = &grads[idx];
            for i in 0..3 {
                for j in i..3 {
                    assert_eq!(ga.get(i, j), 0.0, "grad leaked to adj[{i}][{j}]");
                }
            }
            // Some lower-triangle gradient must flow.
            assert!(ga.data.iter().any(|&v| v != 0.0), "{prior:?}: adjacency got no gradient");
        }
    }

    #[test]
    fn zero_gate_blocks_latent_pathway() {
        // With A[2][0] = 0, changing z_0 must not move eps_2.
        let mut model = Model::new(small_cfg(PriorKind::Flow), 13);
        model.param_mut("adj_raw").set(2, 0, 0.0);
        let probe = |z0: f64, model: &Model| {
            // Isolate latent 2's contribution: difference of prior log
            // densities as z_2 varies is unaffected by z_0 iff eps_2 is.
            let a = model.prior_log_density(&[z0, 0.3, 0.9], 0).unwrap();
            let b = model.prior_log_density(&[z0, 0.3, -0.4], 0).unwrap();
            a - b
        };
        let d1 = probe(0.0, &model);
        let d2 = probe(5.0, &model);
        assert!((d1 - d2).abs() < 1e-12);

        let mut model = Model::new(small_cfg(PriorKind::Parametric), 13);
        model.param_mut("adj_raw").set(2, 0, 0.0);
        let probe = |z0: f64, model: &Model| {
            let a = model.prior_log_density(&[z0, 0.3, 0.9], 0).unwrap();
            let b = model.prior_log_density(&[z0, 0.3, -0.4], 0).unwrap();
            a - b
        };
        assert!((probe(0.0, &model) - probe(5.0, &model)).abs() < 1e-12);
    }

    #[test]
    fn kl_zero_when_prior_equals_posterior() {
        // Encoder forced to q = N(0, I); identity flow gives p = N(0, I).
        let mut model = Model::new(small_cfg(PriorKind::Flow), 17);
        zero_params_matching(&mut model, "flow");
        zero_params_matching(&mut model, "enc_");
        model.param_mut("enc_s_b").data = vec![inv_softplus(1.0 - 1e-6); 3];
        let x = Tensor::from_vec(2, 3, vec![0.5; 6]);
        let eta = sample_eta(&mut ChaCha8Rng::seed_from_u64(5), 2, 3);
        let parts = model.loss_parts(&x, 0, &eta, 0.0).unwrap();
        assert!(parts.kl.abs() < 1e-9, "kl = {}", parts.kl);
    }

    #[test]
    fn lambda_scales_sparsity_exactly() {
        let model = Model::new(small_cfg(PriorKind::Parametric), 19);
        let x = Tensor::from_vec(2, 3, vec![0.2; 6]);
        let eta = Tensor::zeros(2, 3);
        let p1 = model.loss_parts(&x, 0, &eta, 0.01).unwrap();
        let p2 = model.loss_parts(&x, 0, &eta, 0.02).unwrap();
        assert!((p1.full - p1.neg_elbo - 0.01 * p1.sparsity).abs() < 1e-12);
        assert!(
            ((p2.full - p2.neg_elbo) - 2.0 * (p1.full - p1.neg_elbo)).abs() < 1e-12
        );
        assert_eq!(p1.neg_elbo, p2.neg_elbo);
    }

    #[test]
    fn whole_model_gradcheck() {
        for prior in [PriorKind::Flow, PriorKind::Parametric] {
            let model = Model::new(small_cfg(prior), 23);
            let x = Tensor::from_vec(3, 3, vec![0.3, -0.7, 1.2, 0.0, 0.4, -0.2, 0.8, 0.1, -1.0]);
            let eta = sample_eta(&mut ChaCha8Rng::seed_from_u64(9), 3, 3);
            let (_, grads) = model.loss_and_grads(&x, 1, &eta, 1e-2).unwrap();
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for (pi, p) in model.params.iter().enumerate() {
                for e in 0..p.value.data.len() {
                    let mut mp = model.clone();
                    mp.params[pi].value.data[e] += h;
                    let mut mm = model.clone();
                    mm.params[pi].value.data[e] -= h;
                    let fp = mp.loss_parts(&x, 1, &eta, 1e-2).unwrap().full;
                    let fm = mm.loss_parts(&x, 1, &eta, 1e-2).unwrap().full;
                    let fd = (fp - fm) / (2.0 * h);
                    let ga = grads[pi].data[e];
                    let rel = (ga - fd).abs() / ga.abs().max(fd.abs()).max(1.0);
                    worst = worst.max(rel);
                }
            }
            assert!(worst < 1e-4, "{prior:?}: worst rel grad err {worst}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = Model::new(small_cfg(PriorKind::Flow), 29);
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        for (a, b) in model.params.iter().zip(&loaded.params) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.data, b.value.data);
        }
        let x = Tensor::from_vec(2, 3, vec![0.1; 6]);
        let eta = sample_eta(&mut ChaCha8Rng::seed_from_u64(2), 2, 3);
        let l1 = model.loss_parts(&x, 0, &eta, 1e-2).unwrap().full;
        let l2 = loaded.loss_parts(&x, 0, &eta, 1e-2).unwrap().full;
        assert_eq!(l1.to_bits(), l2.to_bits());
    }

    #[test]
    fn domain_out_of_range_rejected() {
        let model = Model::new(small_cfg(PriorKind::Flow), 31);
        let x = Tensor::from_vec(1, 3, vec![0.0; 3]);
        let eta = Tensor::zeros(1, 3);
        assert!(matches!(
            model.loss_parts(&x, 9, &eta, 0.0),
            Err(ModelError::DomainOutOfRange { u: 9, m: 2 })
        ));
    }
}
