//! Feed-forward networks with probabilistic output heads, trained from
//! random initialization to form deep ensembles.

/// Defines method `$name`, which runs method `$body` compiled for the widest
/// vector extension the CPU offers. The wide variants only change register
/// width: there is no FMA contraction, so every path gives bit-identical
/// results.
macro_rules! simd_variants {
    ($ty:ty; $name:ident => $body:ident ( $($arg:ident : $argty:ty),* ) $(-> $ret:ty)?) => {
        fn $name(&self, $($arg: $argty),*) $(-> $ret)? {
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx512f")]
                unsafe fn wide512(m: &$ty, $($arg: $argty),*) $(-> $ret)? {
                    m.$body($($arg),*)
                }
                #[target_feature(enable = "avx2")]
                unsafe fn wide256(m: &$ty, $($arg: $argty),*) $(-> $ret)? {
                    m.$body($($arg),*)
                }
                if std::is_x86_feature_detected!("avx512f") {
                    // SAFETY: the CPU supports AVX-512F, checked just above.
                    return unsafe { wide512(self, $($arg),*) };
                }
                if std::is_x86_feature_detected!("avx2") {
                    // SAFETY: the CPU supports AVX2, checked just above.
                    return unsafe { wide256(self, $($arg),*) };
                }
            }
            self.$body($($arg),*)
        }
    };
}

mod heads;
mod io;
mod mlp;

pub use heads::{HeadKind, HeadSpec, SIGMA_FLOOR};
pub use mlp::{Activation, BatchWorkspace, Mlp, Workspace};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::EnsembleForecast;
use crate::distributions::ForecastDist;
use crate::error::{Error, Result};
use crate::numeric::{empirical_quantile, seeded_rng};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Network architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub head: HeadKind,
    pub bqn_degree: usize,
    /// Number of equidistant interior levels in the BQN pinball loss.
    pub bqn_levels: usize,
    /// Fixed HEN bin edges; when empty they are derived from the training
    /// targets with [`hen_edges_from_targets`] using `hen_bins` bins.
    pub hen_edges: Vec<f64>,
    pub hen_bins: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![64, 32],
            activation: Activation::Softplus,
            head: HeadKind::DRN,
            bqn_degree: 12,
            bqn_levels: 99,
            hen_edges: Vec::new(),
            hen_bins: 50,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 150,
            patience: 10,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn with_head(head: HeadKind) -> Self {
        Self {
            head,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(key, msg));
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return bad("hidden_sizes", "must be a nonempty list of positive widths");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate", "must be positive");
        }
        if self.bqn_degree < 1 {
            return bad("bqn_degree", "must be at least 1");
        }
        if self.bqn_levels < 1 {
            return bad("bqn_levels", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be positive");
        }
        if !self.hen_edges.is_empty() {
            if self.hen_edges.len() < 2
                || self.hen_edges.iter().any(|e| !e.is_finite())
                || self.hen_edges.windows(2).any(|w| w[0] >= w[1])
            {
                return bad("hen_edges", "must be at least two finite, strictly increasing values");
            }
        } else if self.hen_bins == 0 {
            return bad("hen_bins", "must be positive");
        }
        Ok(())
    }
}

/// Cases by predictors, row-major, with one target per case.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    n_features: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(n_features: usize, features: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::shape("datasets need at least one feature"));
        }
        if features.len() != n_features * targets.len() {
            return Err(Error::shape(format!(
                "{} feature values do not form {} rows of width {n_features}",
                features.len(),
                targets.len()
            )));
        }
        Ok(Self {
            n_features,
            features,
            targets,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::shape("feature rows differ in width"));
        }
        Self::new(width, rows.concat(), targets)
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.features.chunks_exact(self.n_features)
    }
}

/// Histogram edges at the empirical `j / n_bins` quantiles of `targets`,
/// rounded to two decimals and deduplicated.
pub fn hen_edges_from_targets(targets: &[f64], n_bins: usize) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Err(Error::domain("cannot derive bin edges from an empty target set"));
    }
    let mut sorted = targets.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (0..=n_bins)
        .map(|j| (empirical_quantile(&sorted, j as f64 / n_bins as f64) * 100.0).round() / 100.0)
        .collect();
    edges.dedup();
    if edges.len() < 2 {
        return Err(Error::domain("training targets are constant to two decimals; no bins"));
    }
    Ok(edges)
}

/// Loss curves of one training run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss over each epoch's mini-batches.
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
    /// Zero-based epoch whose weights were kept.
    pub best_epoch: usize,
    /// Training cases whose HEN target fell outside the bin range.
    pub clamped_targets: usize,
}

/// A trained network with its input and output scaling.
#[derive(Debug, Clone)]
pub struct NetModel {
    config: NetConfig,
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
    head: HeadSpec,
    mlp: Mlp,
}

impl PartialEq for NetModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.feature_mean == other.feature_mean
            && self.feature_scale == other.feature_scale
            && self.head.target_mean == other.head.target_mean
            && self.head.target_scale == other.head.target_scale
            && self.head.hen_edges == other.head.hen_edges
            && self.mlp == other.mlp
    }
}

fn mean_and_scale(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 0.0 && sd.is_finite() { sd } else { 1.0 })
}

impl NetModel {
    /// Untrained model: Glorot-initialized weights from `config.seed`, with
    /// scaling statistics taken from `train`.
    pub fn initialize(config: &NetConfig, train: &Dataset) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::domain("training set is empty"));
        }
        let k = train.n_features();
        let (feature_mean, feature_scale) = (0..k)
            .map(|j| mean_and_scale(&train.rows().map(|r| r[j]).collect::<Vec<_>>()))
            .unzip();
        let (target_mean, target_scale) = mean_and_scale(train.targets());
        let hen_edges = match config.head {
            HeadKind::HEN if config.hen_edges.is_empty() => {
                hen_edges_from_targets(train.targets(), config.hen_bins)?
            }
            _ => config.hen_edges.clone(),
        };
        let head = HeadSpec::new(
            config.head,
            target_mean,
            target_scale,
            config.bqn_degree,
            config.bqn_levels,
            hen_edges,
        );
        let mut sizes = vec![k];
        sizes.extend(&config.hidden_sizes);
        sizes.push(head.output_dim());
        let mut rng = seeded_rng(config.seed);
        let mlp = Mlp::new(sizes, config.activation, &mut rng);
        Ok(Self {
            config: config.clone(),
            feature_mean,
            feature_scale,
            head,
            mlp,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn head(&self) -> &HeadSpec {
        &self.head
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn n_features(&self) -> usize {
        self.mlp.n_inputs()
    }

    fn standardize(&self, row: &[f64], out: &mut [f64]) {
        for (((o, x), m), s) in out.iter_mut().zip(row).zip(&self.feature_mean).zip(&self.feature_scale) {
            *o = (x - m) / s;
        }
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.n_features() {
            return Err(Error::shape(format!(
                "model expects {} features, got {width}",
                self.n_features()
            )));
        }
        Ok(())
    }

    /// Raw head outputs for one feature row.
    pub fn raw_output(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_width(row.len())?;
        let mut ws = self.mlp.workspace();
        let mut x = vec![0.0; row.len()];
        self.standardize(row, &mut x);
        Ok(self.mlp.forward(&x, &mut ws).to_vec())
    }

    /// Standardizes the listed rows of `features` into `x` and runs the
    /// network on them; returns the raw outputs, row-major.
    fn forward_rows<'s>(
        &self,
        features: &[f64],
        rows: impl Iterator<Item = usize>,
        x: &mut Vec<f64>,
        ws: &'s mut BatchWorkspace,
    ) -> &'s [f64] {
        let k = self.n_features();
        x.clear();
        for i in rows {
            let row = &features[i * k..(i + 1) * k];
            x.extend(
                row.iter()
                    .zip(&self.feature_mean)
                    .zip(&self.feature_scale)
                    .map(|((x, m), s)| (x - m) / s),
            );
        }
        let n = x.len() / k;
        self.mlp.forward_batch(x, n, ws)
    }

    /// Forecast distribution for each row of a row-major feature matrix of width `n_features`.
    pub fn forward(&self, features: &[f64], n_features: usize) -> Result<Vec<ForecastDist>> {
        self.check_width(n_features)?;
        if features.len() % n_features != 0 {
            return Err(Error::shape("feature matrix length is not a multiple of its width"));
        }
        let n = features.len() / n_features;
        let out_dim = self.mlp.n_outputs();
        let mut scratch = Scratch::default();
        let mut dists = Vec::with_capacity(n);
        for start in (0..n).step_by(EVAL_BLOCK) {
            let raw = self.forward_rows(
                features,
                start..(start + EVAL_BLOCK).min(n),
                &mut scratch.x,
                &mut scratch.ws,
            );
            for r in raw.chunks_exact(out_dim) {
                dists.push(self.head.distribution(r)?);
            }
        }
        Ok(dists)
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<ForecastDist>> {
        self.forward(data.features(), data.n_features())
    }

    /// Mean loss over `data`.
    pub fn mean_loss(&self, data: &Dataset) -> Result<f64> {
        self.check_width(data.n_features())?;
        let n = data.len();
        let out_dim = self.mlp.n_outputs();
        let mut scratch = Scratch::default();
        let mut total = 0.0;
        for start in (0..n).step_by(EVAL_BLOCK) {
            let end = (start + EVAL_BLOCK).min(n);
            let raw = self.forward_rows(data.features(), start..end, &mut scratch.x, &mut scratch.ws);
            for (r, &y) in raw.chunks_exact(out_dim).zip(&data.targets()[start..end]) {
                total += self.head.loss(r, y);
            }
        }
        Ok(total / n as f64)
    }

    /// Mean loss over the listed cases of `data` and its gradient with
    /// respect to every network parameter. Returns `(loss, clamped)`.
    pub fn loss_and_grad(&self, data: &Dataset, cases: &[usize], grad: &mut [f64]) -> (f64, usize) {
        self.loss_and_grad_with(data, cases, grad, &mut Scratch::default())
    }

    fn loss_and_grad_with(
        &self,
        data: &Dataset,
        cases: &[usize],
        grad: &mut [f64],
        scratch: &mut Scratch,
    ) -> (f64, usize) {
        let out_dim = self.mlp.n_outputs();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let Scratch { x, d_out, ws } = scratch;
        let raw = self.forward_rows(data.features(), cases.iter().copied(), x, ws);
        d_out.resize(cases.len() * out_dim, 0.0);
        let mut total = 0.0;
        let mut clamped = 0;
        for ((r, d), &i) in raw
            .chunks_exact(out_dim)
            .zip(d_out.chunks_exact_mut(out_dim))
            .zip(cases)
        {
            let (loss, c) = self.head.loss_and_grad(r, data.targets()[i], d);
            total += loss;
            clamped += c as usize;
        }
        self.mlp.backward_batch(ws, d_out, cases.len(), grad);
        let scale = 1.0 / cases.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        (total * scale, clamped)
    }
}

const EVAL_BLOCK: usize = 256;

#[derive(Debug, Default)]
struct Scratch {
    x: Vec<f64>,
    d_out: Vec<f64>,
    ws: BatchWorkspace,
}

/// Trains one network; see [`train_member_logged`].
pub fn train_member(config: &NetConfig, train: &Dataset, valid: &Dataset) -> Result<NetModel> {
    train_member_logged(config, train, valid).map(|(m, _)| m)
}

/// Mini-batch Adam training from a seeded initialization with early
/// stopping on the validation loss; the best validation weights are kept.
pub fn train_member_logged(
    config: &NetConfig,
    train: &Dataset,
    valid: &Dataset,
) -> Result<(NetModel, TrainHistory)> {
    let mut model = NetModel::initialize(config, train)?;
    if valid.is_empty() {
        return Err(Error::domain("validation set is empty"));
    }
    model.check_width(valid.n_features())?;

    // Separate stream from the initialization so batch order does not
    // depend on the architecture.
    let mut rng = seeded_rng(config.seed ^ 0x5DEE_CE66_D1CE_4E5B);
    let n_params = model.mlp.n_params();
    let mut grad = vec![0.0; n_params];
    let mut scratch = Scratch::default();
    let mut m1 = vec![0.0; n_params];
    let mut m2 = vec![0.0; n_params];
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut history = TrainHistory::default();
    let mut best_loss = f64::INFINITY;
    let mut best_params = model.mlp.params().to_vec();
    let mut since_best = 0;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, clamped) = model.loss_and_grad_with(train, batch, &mut grad, &mut scratch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    message: format!("non-finite training loss ({loss})"),
                });
            }
            if epoch == 0 {
                history.clamped_targets += clamped;
            }
            epoch_loss += loss * batch.len() as f64;

            step += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(step);
            let c2 = 1.0 - ADAM_BETA2.powi(step);
            let lr = config.learning_rate;
            for (((p, g), a), b) in model
                .mlp
                .params_mut()
                .iter_mut()
                .zip(&grad)
                .zip(&mut m1)
                .zip(&mut m2)
            {
                *a = ADAM_BETA1 * *a + (1.0 - ADAM_BETA1) * g;
                *b = ADAM_BETA2 * *b + (1.0 - ADAM_BETA2) * g * g;
                *p -= lr * (*a / c1) / ((*b / c2).sqrt() + ADAM_EPS);
            }
        }
        history.train_loss.push(epoch_loss / train.len() as f64);

        let valid_loss = model.mean_loss(valid)?;
        if !valid_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("non-finite validation loss ({valid_loss})"),
            });
        }
        history.valid_loss.push(valid_loss);
        if valid_loss < best_loss {
            best_loss = valid_loss;
            best_params.copy_from_slice(model.mlp.params());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    if history.clamped_targets > 0 {
        log::warn!(
            "{} training targets fell outside the histogram bins and were clamped to the outer bins",
            history.clamped_targets
        );
    }
    model.mlp.params_mut().copy_from_slice(&best_params);
    log::debug!(
        "trained {} member (seed {}) in {} epochs, best epoch {}, validation loss {best_loss:.5}",
        config.head,
        config.seed,
        history.train_loss.len(),
        history.best_epoch
    );
    Ok((model, history))
}

/// Trained members in a fixed order.
#[derive(Debug, Clone)]
pub struct DeepEnsemble {
    members: Vec<NetModel>,
}

impl DeepEnsemble {
    pub fn new(members: Vec<NetModel>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::domain("an ensemble needs at least one member"));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[NetModel] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Ensemble forecast of the first `n` members for every case of `data`.
    pub fn forecasts(&self, data: &Dataset, n: usize) -> Result<Vec<EnsembleForecast>> {
        if n == 0 || n > self.members.len() {
            return Err(Error::domain(format!(
                "cannot take {n} of {} members",
                self.members.len()
            )));
        }
        let per_member: Vec<Vec<ForecastDist>> = self.members[..n]
            .par_iter()
            .map(|m| m.predict(data))
            .collect::<Result<_>>()?;
        (0..data.len())
            .map(|i| EnsembleForecast::new(per_member.iter().map(|p| p[i].clone()).collect()))
            .collect()
    }
}

/// Trains `n` members with seeds `config.seed + k` for `k = 0..n`.
pub fn train_ensemble(config: &NetConfig, train: &Dataset, valid: &Dataset, n: usize) -> Result<DeepEnsemble> {
    if n == 0 {
        return Err(Error::domain("ensemble size must be at least 1"));
    }
    let members = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let cfg = NetConfig {
                seed: config.seed.wrapping_add(k),
                ..config.clone()
            };
            train_member(&cfg, train, valid)
        })
        .collect::<Result<Vec<_>>>()?;
    DeepEnsemble::new(members)
}
