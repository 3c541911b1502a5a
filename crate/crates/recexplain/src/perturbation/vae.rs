//! Sequence VAE over concatenated item embeddings.
//!
//! A length-n history is embedded as the concatenation of its n item vectors
//! (input dim n*d). The encoder is a 2-hidden-layer tanh MLP with linear
//! (mu, log_var) heads; the decoder mirrors it back to n*d. Reconstruction
//! loss is, per position, a softmax cross-entropy over all items with logits
//! = dot(decoded position vector, item embedding); the item embedding table
//! stays fixed. Plus the usual KL(q(z|x) || N(0, I)) term.

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::checkpoint;
use crate::data::ItemId;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub kl_weight: f64,
    pub batch_size: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent_dim: 16,
            hidden_dim: 1024,
            epochs: 200,
            learning_rate: 1e-3,
            kl_weight: 1.0,
            batch_size: 128,
        }
    }
}

/// Weights of the encoder/decoder MLPs. Biases are stored as 1-row matrices
/// so they broadcast over the batch axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    /// Sequence length n of every input history.
    pub n: usize,
    /// Item embedding dimension d; input dim = n * d.
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    // encoder
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
    pub wm: Array2<f64>,
    pub bm: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    // decoder
    pub u1: Array2<f64>,
    pub c1: Array2<f64>,
    pub u2: Array2<f64>,
    pub c2: Array2<f64>,
    pub uo: Array2<f64>,
    pub co: Array2<f64>,
}

/// Gradients in the same shapes as the model weights.
pub struct VaeGrads {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
    pub wm: Array2<f64>,
    pub bm: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    pub u1: Array2<f64>,
    pub c1: Array2<f64>,
    pub u2: Array2<f64>,
    pub c2: Array2<f64>,
    pub uo: Array2<f64>,
    pub co: Array2<f64>,
}

impl VaeModel {
    pub fn input_dim(&self) -> usize {
        self.n * self.embed_dim
    }

    fn init(n: usize, embed_dim: usize, cfg: &VaeConfig, rng: &mut ChaCha8Rng) -> VaeModel {
        let d = n * embed_dim;
        let h = cfg.hidden_dim;
        let l = cfg.latent_dim;
        // Xavier-style uniform init scaled by fan-in + fan-out
        let mut mat = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let mut arr = Array2::zeros((rows, cols));
            for r in 0..rows {
                for c in 0..cols {
                    arr[[r, c]] = rng.random_range(-bound..bound);
                }
            }
            arr
        };
        VaeModel {
            n,
            embed_dim,
            latent_dim: l,
            hidden_dim: h,
            seed: 0,
            w1: mat(d, h),
            b1: Array2::zeros((1, h)),
            w2: mat(h, h),
            b2: Array2::zeros((1, h)),
            wm: mat(h, l),
            bm: Array2::zeros((1, l)),
            wv: mat(h, l),
            bv: Array2::zeros((1, l)),
            u1: mat(l, h),
            c1: Array2::zeros((1, h)),
            u2: mat(h, h),
            c2: Array2::zeros((1, h)),
            uo: mat(h, d),
            co: Array2::zeros((1, d)),
        }
    }

    /// Encoder forward pass: (mu, log_var), each batch x latent_dim.
    pub fn encode(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let a1 = (x.dot(&self.w1) + &self.b1).mapv(f64::tanh);
        let a2 = (a1.dot(&self.w2) + &self.b2).mapv(f64::tanh);
        let mu = a2.dot(&self.wm) + &self.bm;
        let lv = a2.dot(&self.wv) + &self.bv;
        (mu, lv)
    }

    /// Decoder forward pass: batch x (n * embed_dim).
    pub fn decode(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        let c1 = (z.dot(&self.u1) + &self.c1).mapv(f64::tanh);
        let c2 = (c1.dot(&self.u2) + &self.c2).mapv(f64::tanh);
        c2.dot(&self.uo) + &self.co
    }

    /// Deterministic reconstruction (z = mu, the temperature -> 0 limit),
    /// snapping each decoded position vector to its nearest item.
    pub fn reconstruct(&self, history: &[ItemId], table: &EmbeddingTable) -> Result<Vec<ItemId>> {
        let x = embed_histories(std::slice::from_ref(&history.to_vec()), table, self.n)?;
        let (mu, _) = self.encode(x.view());
        let v = self.decode(mu.view());
        Ok(decode_rows_to_items(&v, table, self.n)[0].clone())
    }

    /// Total loss (summed over the batch) and its analytic gradients, with
    /// the reparameterization z = mu + std (*) eps, std = exp(log_var / 2).
    ///
    /// loss = sum over samples/positions of softmax cross-entropy
    ///      + kl_weight * KL(q(z|x) || N(0, I))
    #[allow(clippy::needless_range_loop, clippy::op_ref)] // indices address several buffers at once
    pub fn loss_and_grads(
        &self,
        x: ArrayView2<'_, f64>,
        targets: &[Vec<ItemId>],
        eps: ArrayView2<'_, f64>,
        table: &EmbeddingTable,
        kl_weight: f64,
    ) -> (f64, VaeGrads) {
        let b = x.nrows();
        let d = self.embed_dim;
        let n = self.n;

        // forward
        let a1 = (x.dot(&self.w1) + &self.b1).mapv(f64::tanh);
        let a2 = (a1.dot(&self.w2) + &self.b2).mapv(f64::tanh);
        let mu = a2.dot(&self.wm) + &self.bm;
        let lv = a2.dot(&self.wv) + &self.bv;
        let std = lv.mapv(|v| (0.5 * v).exp());
        let z = &mu + &(&std * &eps);
        let c1 = (z.dot(&self.u1) + &self.c1).mapv(f64::tanh);
        let c2 = (c1.dot(&self.u2) + &self.c2).mapv(f64::tanh);
        let v = c2.dot(&self.uo) + &self.co;

        // reconstruction loss and dL/dv, position by position
        let e = &table.item_vectors; // n_items x d
        let mut recon = 0.0;
        let mut dv = Array2::<f64>::zeros((b, n * d));
        for p in 0..n {
            let vp = v.slice(s![.., p * d..(p + 1) * d]);
            let mut dlogits = vp.dot(&e.t()); // b x n_items, logits for now
            for bi in 0..b {
                let target = targets[bi][p] as usize;
                let mut row = dlogits.row_mut(bi);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for val in row.iter_mut() {
                    *val = (*val - max).exp();
                    sum += *val;
                }
                // cross-entropy = logsumexp - logit[target]
                recon += sum.ln() + max - (row[target].ln() + max);
                // softmax - onehot, in place
                for val in row.iter_mut() {
                    *val /= sum;
                }
                row[target] -= 1.0;
            }
            let dvp = dlogits.dot(e);
            dv.slice_mut(s![.., p * d..(p + 1) * d]).assign(&dvp);
        }

        // KL(q || N(0,I)) = -1/2 sum (1 + lv - mu^2 - exp(lv))
        let kl = -0.5
            * (1.0 + &lv - &mu.mapv(|m| m * m) - &lv.mapv(f64::exp))
                .sum();
        let loss = recon + kl_weight * kl;

        // decoder backward
        let duo = c2.t().dot(&dv);
        let dco = colsum(&dv);
        let dc2 = dv.dot(&self.uo.t()) * c2.mapv(|t| 1.0 - t * t);
        let du2 = c1.t().dot(&dc2);
        let dc2b = colsum(&dc2);
        let dc1 = dc2.dot(&self.u2.t()) * c1.mapv(|t| 1.0 - t * t);
        let du1 = z.t().dot(&dc1);
        let dc1b = colsum(&dc1);
        let dz = dc1.dot(&self.u1.t());

        // reparameterization + KL backward
        let dmu = &dz + &(kl_weight * &mu);
        let dlv = &dz * &(0.5 * &std * &eps) + kl_weight * 0.5 * (lv.mapv(f64::exp) - 1.0);

        // encoder backward
        let dwm = a2.t().dot(&dmu);
        let dbm = colsum(&dmu);
        let dwv = a2.t().dot(&dlv);
        let dbv = colsum(&dlv);
        let da2 = dmu.dot(&self.wm.t()) + dlv.dot(&self.wv.t());
        let dpre2 = da2 * a2.mapv(|t| 1.0 - t * t);
        let dw2 = a1.t().dot(&dpre2);
        let db2 = colsum(&dpre2);
        let da1 = dpre2.dot(&self.w2.t());
        let dpre1 = da1 * a1.mapv(|t| 1.0 - t * t);
        let dw1 = x.t().dot(&dpre1);
        let db1 = colsum(&dpre1);

        (
            loss,
            VaeGrads {
                w1: dw1,
                b1: db1,
                w2: dw2,
                b2: db2,
                wm: dwm,
                bm: dbm,
                wv: dwv,
                bv: dbv,
                u1: du1,
                c1: dc1b,
                u2: du2,
                c2: dc2b,
                uo: duo,
                co: dco,
            },
        )
    }
}

fn colsum(a: &Array2<f64>) -> Array2<f64> {
    a.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// Concatenate item embeddings into VAE input rows (one row per history).
pub fn embed_histories(
    histories: &[Vec<ItemId>],
    table: &EmbeddingTable,
    n: usize,
) -> Result<Array2<f64>> {
    let d = table.dim;
    let mut x = Array2::zeros((histories.len(), n * d));
    for (row, h) in histories.iter().enumerate() {
        if h.len() != n {
            return Err(Error::Data(format!(
                "history length {} != expected n {n}",
                h.len()
            )));
        }
        for (p, &item) in h.iter().enumerate() {
            if item as usize >= table.n_items() {
                return Err(Error::Data(format!("item {item} outside embedding table")));
            }
            x.slice_mut(s![row, p * d..(p + 1) * d])
                .assign(&table.item(item));
        }
    }
    Ok(x)
}

/// Snap each decoded position vector to the item with the largest dot
/// product (ties toward the smaller item id) — batched nearest_item.
#[allow(clippy::needless_range_loop)] // `bi` addresses both the logit rows and `out`
pub fn decode_rows_to_items(
    decoded: &Array2<f64>,
    table: &EmbeddingTable,
    n: usize,
) -> Vec<Vec<ItemId>> {
    let d = table.dim;
    let b = decoded.nrows();
    let mut out = vec![Vec::with_capacity(n); b];
    for p in 0..n {
        let vp = decoded.slice(s![.., p * d..(p + 1) * d]);
        let logits = vp.dot(&table.item_vectors.t()); // b x n_items
        for bi in 0..b {
            let row = logits.row(bi);
            let mut best = 0usize;
            let mut best_val = f64::NEG_INFINITY;
            for (i, &val) in row.iter().enumerate() {
                if val > best_val {
                    best_val = val;
                    best = i;
                }
            }
            out[bi].push(best as ItemId);
        }
    }
    out
}

struct Adam {
    m: Array2<f64>,
    v: Array2<f64>,
}

impl Adam {
    fn new(shape: (usize, usize)) -> Adam {
        Adam {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
        }
    }

    fn step(&mut self, param: &mut Array2<f64>, grad: &Array2<f64>, lr: f64, t: usize) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.m = B1 * &self.m + (1.0 - B1) * grad;
        self.v = B2 * &self.v + (1.0 - B2) * &grad.mapv(|g| g * g);
        let bc1 = 1.0 - B1.powi(t as i32);
        let bc2 = 1.0 - B2.powi(t as i32);
        let update = self.m.mapv(|m| m / bc1)
            / (self.v.mapv(|v| (v / bc2).sqrt()) + EPS);
        *param = &*param - &(lr * update);
    }
}

/// Train the VAE on the length-n input histories with Adam over shuffled
/// minibatches. Deterministic given `seed`; aborts on a non-finite loss.
pub fn train_vae(
    histories: &[Vec<ItemId>],
    table: &EmbeddingTable,
    config: &VaeConfig,
    seed: u64,
) -> Result<VaeModel> {
    if config.latent_dim == 0 {
        return Err(Error::Config("vae latent_dim must be at least 1".into()));
    }
    if config.hidden_dim == 0 || config.batch_size == 0 {
        return Err(Error::Config("vae hidden_dim/batch_size must be at least 1".into()));
    }
    let n = match histories.first() {
        Some(h) => h.len(),
        None => return Err(Error::Data("no histories to train the vae on".into())),
    };
    let x = embed_histories(histories, table, n)?;
    let n_samples = histories.len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = VaeModel::init(n, table.dim, config, &mut rng);
    model.seed = seed;

    let mut opt: Vec<Adam> = model
        .matrices()
        .iter()
        .map(|m| Adam::new((m.nrows(), m.ncols())))
        .collect();

    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut t = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let tb: Vec<Vec<ItemId>> = chunk.iter().map(|&i| histories[i].clone()).collect();
            let eps = Array2::from_shape_fn((chunk.len(), config.latent_dim), |_| {
                rng.sample::<f64, _>(StandardNormal)
            });
            let (loss, grads) =
                model.loss_and_grads(xb.view(), &tb, eps.view(), table, config.kl_weight);
            if !loss.is_finite() {
                return Err(Error::Model(format!(
                    "vae training diverged at epoch {epoch}: loss = {loss}"
                )));
            }
            epoch_loss += loss;
            t += 1;
            let scale = 1.0 / chunk.len() as f64;
            for (opt_state, (param, grad)) in opt
                .iter_mut()
                .zip(model.matrices_mut().into_iter().zip(grads.into_vec()))
            {
                opt_state.step(param, &(grad * scale), config.learning_rate, t);
            }
        }
        if epoch % 50 == 0 || epoch + 1 == config.epochs {
            log::debug!(
                "vae epoch {epoch}: mean loss {:.4}",
                epoch_loss / n_samples as f64
            );
        }
    }
    Ok(model)
}

/// Fraction of positions across `histories` that the deterministic
/// reconstruction (z = mu) maps back to the original item.
pub fn reconstruction_accuracy(
    model: &VaeModel,
    histories: &[Vec<ItemId>],
    table: &EmbeddingTable,
) -> Result<f64> {
    if histories.is_empty() {
        return Err(Error::Data("no histories to evaluate".into()));
    }
    let x = embed_histories(histories, table, model.n)?;
    let (mu, _) = model.encode(x.view());
    let v = model.decode(mu.view());
    let decoded = decode_rows_to_items(&v, table, model.n);
    let mut hits = 0usize;
    let mut total = 0usize;
    for (orig, dec) in histories.iter().zip(&decoded) {
        for (a, b) in orig.iter().zip(dec) {
            hits += usize::from(a == b);
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

impl VaeModel {
    /// All weight matrices in the fixed checkpoint order (also the order of
    /// `VaeGrads::into_vec`); exposed for external gradient validation.
    pub fn matrices(&self) -> Vec<&Array2<f64>> {
        vec![
            &self.w1, &self.b1, &self.w2, &self.b2, &self.wm, &self.bm, &self.wv, &self.bv,
            &self.u1, &self.c1, &self.u2, &self.c2, &self.uo, &self.co,
        ]
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![
            &mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.wm, &mut self.bm,
            &mut self.wv, &mut self.bv, &mut self.u1, &mut self.c1, &mut self.u2, &mut self.c2,
            &mut self.uo, &mut self.co,
        ]
    }
}

impl VaeGrads {
    /// Gradients in the same order as `VaeModel::matrices`.
    pub fn into_vec(self) -> Vec<Array2<f64>> {
        vec![
            self.w1, self.b1, self.w2, self.b2, self.wm, self.bm, self.wv, self.bv, self.u1,
            self.c1, self.u2, self.c2, self.uo, self.co,
        ]
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct VaeHeader {
    n: usize,
    embed_dim: usize,
    latent_dim: usize,
    hidden_dim: usize,
    seed: u64,
}

impl VaeModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let header = VaeHeader {
            n: self.n,
            embed_dim: self.embed_dim,
            latent_dim: self.latent_dim,
            hidden_dim: self.hidden_dim,
            seed: self.seed,
        };
        fs::write(
            dir.join("header.json"),
            serde_json::to_string_pretty(&header)?,
        )?;
        checkpoint::write_matrices(&dir.join("weights.bin"), &self.matrices())
    }

    pub fn load(dir: &Path) -> Result<VaeModel> {
        let header: VaeHeader =
            serde_json::from_str(&fs::read_to_string(dir.join("header.json"))?)?;
        let d = header.n * header.embed_dim;
        let h = header.hidden_dim;
        let l = header.latent_dim;
        let shapes = [
            (d, h), (1, h), (h, h), (1, h), (h, l), (1, l), (h, l), (1, l),
            (l, h), (1, h), (h, h), (1, h), (h, d), (1, d),
        ];
        let mut mats = checkpoint::read_matrices(&dir.join("weights.bin"), &shapes)?;
        let co = mats.pop().unwrap();
        let uo = mats.pop().unwrap();
        let c2 = mats.pop().unwrap();
        let u2 = mats.pop().unwrap();
        let c1 = mats.pop().unwrap();
        let u1 = mats.pop().unwrap();
        let bv = mats.pop().unwrap();
        let wv = mats.pop().unwrap();
        let bm = mats.pop().unwrap();
        let wm = mats.pop().unwrap();
        let b2 = mats.pop().unwrap();
        let w2 = mats.pop().unwrap();
        let b1 = mats.pop().unwrap();
        let w1 = mats.pop().unwrap();
        Ok(VaeModel {
            n: header.n,
            embed_dim: header.embed_dim,
            latent_dim: header.latent_dim,
            hidden_dim: header.hidden_dim,
            seed: header.seed,
            w1, b1, w2, b2, wm, bm, wv, bv, u1, c1, u2, c2, uo, co,
        })
    }
}
