//! Self-supervised training: batch assembly, the composed pipeline
//! (encode -> score -> cost -> transport -> soft permute -> hierarchy ->
//! contrastive loss), AdamW with decoupled weight decay, and a cosine
//! learning-rate schedule.
//!
//! Everything is deterministic in the configured seed: initialization draws
//! from a seeded stream, and each epoch's shuffle derives its own stream
//! from (seed, epoch), so a run can resume from any completed epoch and
//! reproduce the uninterrupted trajectory exactly.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(not(feature = "std"))]
use num_traits::Float as _;

use crate::backbone::{bind_mlp, embed, encode, MlpNodes, MlpParams};
use crate::data::{DataError, LabeledDataset};
use crate::graph::{EngineError, Graph, NodeId};
use crate::hcl::{hierarchy_sizes, total_loss_node, HclConfig, HclError};
use crate::scorer::{scores_node, ScorerConfig};
use crate::sorter::{
    build_cost_node, hard_ordering, sinkhorn_node, soft_permute_node, SinkhornConfig, SorterError,
};
use crate::tensor::Tensor2;

/// Network shape shared by the scorer and loss paths.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Hidden widths of the per-point encoder (input is always 3).
    pub hidden: Vec<usize>,
    /// Output width D of the encoder.
    pub feature_dim: usize,
    /// Hidden width of the 2-layer projection head.
    pub head_hidden: usize,
    /// Output width of the projection head.
    pub embed_dim: usize,
    /// One backbone for both paths (default) or an independent copy for the
    /// loss path.
    pub share_weights: bool,
    /// Unit-normalize embeddings before the contrastive inner products.
    pub normalize_embed: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: alloc::vec![64, 128],
            feature_dim: 256,
            head_hidden: 128,
            embed_dim: 128,
            share_weights: true,
            normalize_embed: true,
        }
    }
}

impl ModelConfig {
    pub fn encoder_widths(&self) -> Vec<usize> {
        let mut w = alloc::vec![3];
        w.extend_from_slice(&self.hidden);
        w.push(self.feature_dim);
        w
    }

    pub fn head_widths(&self) -> Vec<usize> {
        alloc::vec![self.feature_dim, self.head_hidden, self.embed_dim]
    }
}

/// Full training configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub model: ModelConfig,
    pub scorer: ScorerConfig,
    pub sinkhorn: SinkhornConfig,
    pub hcl: HclConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 60,
            lr0: 1e-4,
            weight_decay: 1e-5,
            seed: 0,
            model: ModelConfig::default(),
            scorer: ScorerConfig::default(),
            sinkhorn: SinkhornConfig::default(),
            hcl: HclConfig::default(),
        }
    }
}

impl TrainConfig {
    /// The full-scale regime: batch 128 for 250 epochs with a 2048-wide
    /// feature dimension. Not desk-sized; provided as a named preset.
    pub fn paper() -> Self {
        Self {
            batch_size: 128,
            epochs: 250,
            model: ModelConfig { feature_dim: 2048, ..ModelConfig::default() },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::Config("batch_size must be >= 2 (the loss needs negatives)"));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1"));
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(TrainError::Config("lr0 must be positive and finite"));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(TrainError::Config("weight_decay must be nonnegative"));
        }
        self.scorer.validate().map_err(TrainError::Engine)?;
        self.sinkhorn.validate().map_err(TrainError::Sorter)?;
        if self.hcl.theta < 2 {
            return Err(TrainError::Config("theta must be >= 2"));
        }
        if !(self.hcl.phi > 0.0) || !self.hcl.phi.is_finite() {
            return Err(TrainError::Config("phi must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    Config(&'static str),
    /// Clouds in one batch must share a point count.
    MixedCloudSizes { first: usize, other: usize },
    /// Loss became NaN or infinite; nothing was committed.
    NonFiniteLoss { batch_index: usize, value: f64 },
    ShapeMismatch { name: String },
    MissingTensor { name: String },
    DatasetTooSmall { need: usize, got: usize },
    Engine(EngineError),
    Sorter(SorterError),
    Hcl(HclError),
    Data(DataError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Config(m) => write!(f, "config: {m}"),
            TrainError::MixedCloudSizes { first, other } => {
                write!(f, "batch mixes cloud sizes {first} and {other}")
            }
            TrainError::NonFiniteLoss { batch_index, value } => {
                write!(f, "non-finite loss {value} at batch {batch_index}")
            }
            TrainError::ShapeMismatch { name } => write!(f, "tensor {name}: shape mismatch"),
            TrainError::MissingTensor { name } => write!(f, "tensor {name}: missing"),
            TrainError::DatasetTooSmall { need, got } => {
                write!(f, "dataset has {got} clouds, need at least {need}")
            }
            TrainError::Engine(e) => write!(f, "{e}"),
            TrainError::Sorter(e) => write!(f, "{e}"),
            TrainError::Hcl(e) => write!(f, "{e}"),
            TrainError::Data(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<EngineError> for TrainError {
    fn from(e: EngineError) -> Self {
        TrainError::Engine(e)
    }
}
impl From<SorterError> for TrainError {
    fn from(e: SorterError) -> Self {
        TrainError::Sorter(e)
    }
}
impl From<HclError> for TrainError {
    fn from(e: HclError) -> Self {
        TrainError::Hcl(e)
    }
}
impl From<DataError> for TrainError {
    fn from(e: DataError) -> Self {
        TrainError::Data(e)
    }
}

/// Trainable parameters: the scorer backbone, an optional independent loss
/// backbone (when weights are not shared), and the projection head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub scorer_encoder: MlpParams,
    pub loss_encoder: Option<MlpParams>,
    pub head: MlpParams,
}

impl Model {
    pub fn init(config: ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let scorer_encoder = MlpParams::init(&config.encoder_widths(), rng);
        let loss_encoder = if config.share_weights {
            None
        } else {
            Some(MlpParams::init(&config.encoder_widths(), rng))
        };
        let head = MlpParams::init(&config.head_widths(), rng);
        Self { config, scorer_encoder, loss_encoder, head }
    }

    /// The encoder the contrastive path uses (the scorer's when shared).
    pub fn loss_encoder(&self) -> &MlpParams {
        self.loss_encoder.as_ref().unwrap_or(&self.scorer_encoder)
    }

    fn mlp_names(prefix: &str, mlp: &MlpParams) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..mlp.layers.len() {
            names.push(format!("{prefix}.{i}.w"));
            names.push(format!("{prefix}.{i}.b"));
        }
        names
    }

    /// Stable (name, tensor) listing of every trainable tensor.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor2)> {
        let mut out = Vec::new();
        for (name, layer) in
            Self::mlp_names("encoder", &self.scorer_encoder).chunks(2).zip(&self.scorer_encoder.layers)
        {
            out.push((name[0].clone(), &layer.w));
            out.push((name[1].clone(), &layer.b));
        }
        if let Some(lossenc) = &self.loss_encoder {
            for (name, layer) in
                Self::mlp_names("loss_encoder", lossenc).chunks(2).zip(&lossenc.layers)
            {
                out.push((name[0].clone(), &layer.w));
                out.push((name[1].clone(), &layer.b));
            }
        }
        for (name, layer) in Self::mlp_names("head", &self.head).chunks(2).zip(&self.head.layers) {
            out.push((name[0].clone(), &layer.w));
            out.push((name[1].clone(), &layer.b));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor2)> {
        let mut out = Vec::new();
        for (i, layer) in self.scorer_encoder.layers.iter_mut().enumerate() {
            out.push((format!("encoder.{i}.w"), &mut layer.w));
            out.push((format!("encoder.{i}.b"), &mut layer.b));
        }
        if let Some(lossenc) = &mut self.loss_encoder {
            for (i, layer) in lossenc.layers.iter_mut().enumerate() {
                out.push((format!("loss_encoder.{i}.w"), &mut layer.w));
                out.push((format!("loss_encoder.{i}.b"), &mut layer.b));
            }
        }
        for (i, layer) in self.head.layers.iter_mut().enumerate() {
            out.push((format!("head.{i}.w"), &mut layer.w));
            out.push((format!("head.{i}.b"), &mut layer.b));
        }
        out
    }

    /// Rebuild a model from (name, tensor) pairs, e.g. a loaded checkpoint.
    /// Every expected tensor must be present with the right shape.
    pub fn from_named_tensors(
        config: ModelConfig,
        tensors: &BTreeMap<String, Tensor2>,
    ) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::init(config, &mut rng);
        for (name, slot) in model.named_tensors_mut() {
            let Some(t) = tensors.get(&name) else {
                return Err(TrainError::MissingTensor { name });
            };
            if t.shape() != slot.shape() {
                return Err(TrainError::ShapeMismatch { name });
            }
            *slot = t.clone();
        }
        Ok(model)
    }
}

/// A model bound into a graph for one batch.
pub struct ModelNodes {
    pub scorer_encoder: MlpNodes,
    pub loss_encoder: MlpNodes,
    pub head: MlpNodes,
    /// (name, node) pairs in `named_tensors` order, for gradient readout.
    pub names: Vec<(String, NodeId)>,
}

/// Register every model tensor as a trainable graph parameter. When weights
/// are shared, the scorer and loss paths refer to the same nodes.
pub fn bind_model(g: &mut Graph, model: &Model) -> ModelNodes {
    let scorer_encoder = bind_mlp(g, &model.scorer_encoder);
    let loss_encoder = match &model.loss_encoder {
        Some(p) => bind_mlp(g, p),
        None => scorer_encoder.clone(),
    };
    let head = bind_mlp(g, &model.head);

    let mut names = Vec::new();
    for (i, &(w, b)) in scorer_encoder.layers.iter().enumerate() {
        names.push((format!("encoder.{i}.w"), w));
        names.push((format!("encoder.{i}.b"), b));
    }
    if model.loss_encoder.is_some() {
        for (i, &(w, b)) in loss_encoder.layers.iter().enumerate() {
            names.push((format!("loss_encoder.{i}.w"), w));
            names.push((format!("loss_encoder.{i}.b"), b));
        }
    }
    for (i, &(w, b)) in head.layers.iter().enumerate() {
        names.push((format!("head.{i}.w"), w));
        names.push((format!("head.{i}.b"), b));
    }
    ModelNodes { scorer_encoder, loss_encoder, head, names }
}

/// Build the full batch loss. All clouds in the batch must share a point
/// count (the hierarchy must be identical across the batch).
pub fn build_batch_loss(
    g: &mut Graph,
    nodes: &ModelNodes,
    clouds: &[&Tensor2],
    cfg: &TrainConfig,
) -> Result<NodeId, TrainError> {
    if clouds.len() < 2 {
        return Err(TrainError::Config("a batch needs at least 2 clouds"));
    }
    let n = clouds[0].rows();
    for c in clouds {
        if c.rows() != n {
            return Err(TrainError::MixedCloudSizes { first: n, other: c.rows() });
        }
    }
    let sizes = hierarchy_sizes(n, cfg.hcl.theta)?;

    let mut anchors = Vec::with_capacity(clouds.len());
    let mut level_embeds: Vec<Vec<NodeId>> =
        core::iter::repeat_with(Vec::new).take(sizes.len()).collect();

    for cloud in clouds {
        let p = g.constant((*cloud).clone());
        let f = encode(g, p, &nodes.scorer_encoder)?;
        let s = scores_node(g, f, &cfg.scorer)?;

        let ordered = if cfg.hcl.hard_forward {
            // discrete ordering; gradients stop at the permutation
            let ord = hard_ordering(g.value(s).data(), &cfg.sinkhorn)?;
            let by_rank = ord.by_rank();
            let permuted = Tensor2::from_fn(n, 3, |r, j| cloud.get(by_rank[r], j));
            g.constant(permuted)
        } else {
            let c = build_cost_node(g, s)?;
            let (gamma, _stats) = sinkhorn_node(g, c, &cfg.sinkhorn)?;
            soft_permute_node(g, p, gamma)?
        };

        let anchor = embed(
            g,
            ordered,
            &nodes.loss_encoder,
            &nodes.head,
            cfg.model.normalize_embed,
        )?;
        anchors.push(anchor);

        for (k, &size) in sizes.iter().enumerate() {
            let subset = g.slice_rows(ordered, 0, size)?;
            let e = embed(
                g,
                subset,
                &nodes.loss_encoder,
                &nodes.head,
                cfg.model.normalize_embed,
            )?;
            level_embeds[k].push(e);
        }
    }

    let anchor_mat = g.concat_rows(&anchors)?;
    let mut level_mats = Vec::with_capacity(level_embeds.len());
    for level in &level_embeds {
        level_mats.push(g.concat_rows(level)?);
    }
    Ok(total_loss_node(g, anchor_mat, &level_mats, cfg.hcl.phi, cfg.hcl.positives)?)
}

/// AdamW hyperparameters beyond the learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One AdamW step on a single tensor: decoupled decay applied directly to
/// the parameters, then a bias-corrected moment step.
#[allow(clippy::too_many_arguments)]
pub fn adamw_step(
    param: &mut Tensor2,
    grad: &Tensor2,
    m: &mut Tensor2,
    v: &mut Tensor2,
    step: u64,
    lr: f64,
    weight_decay: f64,
    hyper: &AdamWHyper,
) -> Result<(), TrainError> {
    if param.shape() != grad.shape() || param.shape() != m.shape() || param.shape() != v.shape() {
        return Err(TrainError::ShapeMismatch { name: String::from("adamw operand") });
    }
    if lr < 0.0 {
        return Err(TrainError::Config("learning rate must be nonnegative"));
    }
    let b1 = hyper.beta1;
    let b2 = hyper.beta2;
    let bias1 = 1.0 - b1.powi(step as i32);
    let bias2 = 1.0 - b2.powi(step as i32);
    for (((p, &gv), mv), vv) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.data_mut().iter_mut())
        .zip(v.data_mut().iter_mut())
    {
        *p -= lr * weight_decay * *p;
        *mv = b1 * *mv + (1.0 - b1) * gv;
        *vv = b2 * *vv + (1.0 - b2) * gv * gv;
        let m_hat = *mv / bias1;
        let v_hat = *vv / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

/// Optimizer state: first/second moments per named tensor plus the shared
/// step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub moments: BTreeMap<String, (Tensor2, Tensor2)>,
}

impl AdamWState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Step every model tensor with its gradient. Missing gradients are
    /// treated as zero (the tensor still decays).
    pub fn update_model(
        &mut self,
        model: &mut Model,
        grads: &BTreeMap<String, Tensor2>,
        lr: f64,
        weight_decay: f64,
        hyper: &AdamWHyper,
    ) -> Result<(), TrainError> {
        self.update_tensors(model.named_tensors_mut(), grads, lr, weight_decay, hyper)
    }

    /// Same, over an explicit (name, tensor) listing; used by the task
    /// networks, which are not [`Model`]s.
    pub fn update_tensors(
        &mut self,
        tensors: Vec<(String, &mut Tensor2)>,
        grads: &BTreeMap<String, Tensor2>,
        lr: f64,
        weight_decay: f64,
        hyper: &AdamWHyper,
    ) -> Result<(), TrainError> {
        self.step += 1;
        let step = self.step;
        for (name, param) in tensors {
            let (r, c) = param.shape();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor2::zeros(r, c), Tensor2::zeros(r, c)));
            match grads.get(&name) {
                Some(grad) => adamw_step(param, grad, m, v, step, lr, weight_decay, hyper)?,
                None => {
                    let zero = Tensor2::zeros(r, c);
                    adamw_step(param, &zero, m, v, step, lr, weight_decay, hyper)?;
                }
            }
        }
        Ok(())
    }
}

/// Cosine decay from `lr0` at step 0 to zero at step `total`; steps past
/// `total` clamp to zero.
pub fn cosine_lr(step: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 || step >= total {
        return 0.0;
    }
    lr0 * 0.5 * (1.0 + (core::f64::consts::PI * step as f64 / total as f64).cos())
}

/// Batches per epoch: full chunks plus a trailing chunk when it still holds
/// the 2 clouds the loss needs.
pub fn batches_per_epoch(dataset_len: usize, batch_size: usize) -> usize {
    let full = dataset_len / batch_size;
    let rem = dataset_len % batch_size;
    full + usize::from(rem >= 2)
}

/// Per-epoch summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate used for the last step of the epoch.
    pub lr: f64,
    pub batches: usize,
}

/// Shuffle order for one epoch, derived from (seed, epoch) alone so resumed
/// runs reproduce it without replaying earlier epochs.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::mix_seed(seed, 1 + epoch as u64));
    let mut idx: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Run one epoch: shuffle, batch, forward/backward, AdamW. Returns the mean
/// batch loss. The learning rate follows the cosine schedule over
/// `cfg.epochs * batches_per_epoch` total steps, indexed by the optimizer's
/// global step counter.
pub fn train_epoch(
    model: &mut Model,
    opt: &mut AdamWState,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats, TrainError> {
    cfg.validate()?;
    if data.len() < cfg.batch_size.min(2) {
        return Err(TrainError::DatasetTooSmall { need: cfg.batch_size.min(2), got: data.len() });
    }
    let order = epoch_order(data.len(), cfg.seed, epoch);
    let total_steps = cfg.epochs * batches_per_epoch(data.len(), cfg.batch_size);
    let hyper = AdamWHyper::default();

    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    let mut last_lr = 0.0;
    for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
        if chunk.len() < 2 {
            continue;
        }
        let clouds: Vec<&Tensor2> = chunk.iter().map(|&i| data.clouds[i].points()).collect();

        let mut g = Graph::new();
        let nodes = bind_model(&mut g, model);
        let loss = build_batch_loss(&mut g, &nodes, &clouds, cfg)?;
        let loss_value = g.value(loss).item();
        if !loss_value.is_finite() {
            return Err(TrainError::NonFiniteLoss { batch_index, value: loss_value });
        }
        g.backward(loss)?;

        let mut grads = BTreeMap::new();
        for (name, id) in &nodes.names {
            grads.insert(name.clone(), g.grad_or_zeros(*id));
        }

        let lr = cosine_lr(opt.step as usize, total_steps, cfg.lr0);
        opt.update_model(model, &grads, lr, cfg.weight_decay, &hyper)?;

        loss_sum += loss_value;
        batches += 1;
        last_lr = lr;
    }
    if batches == 0 {
        return Err(TrainError::DatasetTooSmall { need: 2, got: data.len() });
    }
    Ok(EpochStats { epoch, mean_loss: loss_sum / batches as f64, lr: last_lr, batches })
}

/// Model plus everything needed to resume training deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Epochs completed so far.
    pub epoch: u64,
    pub opt_step: u64,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    /// Model parameters and optimizer moments, stable order.
    pub tensors: Vec<(String, Tensor2)>,
}

impl Snapshot {
    pub fn capture(model: &Model, opt: &AdamWState, epoch: u64, rng: &ChaCha8Rng) -> Self {
        let mut tensors: Vec<(String, Tensor2)> = Vec::new();
        for (name, t) in model.named_tensors() {
            tensors.push((name, t.clone()));
        }
        for (name, (m, v)) in &opt.moments {
            tensors.push((format!("opt.m.{name}"), m.clone()));
            tensors.push((format!("opt.v.{name}"), v.clone()));
        }
        Self {
            epoch,
            opt_step: opt.step,
            rng_seed: seed_of(rng),
            rng_word_pos: rng.get_word_pos(),
            tensors,
        }
    }

    /// Rebuild the model and optimizer. The snapshot must contain every
    /// model tensor for the given shape config; moments are optional (a
    /// fresh optimizer starts at zero).
    pub fn restore(&self, config: ModelConfig) -> Result<(Model, AdamWState, ChaCha8Rng), TrainError> {
        let map: BTreeMap<String, Tensor2> = self.tensors.iter().cloned().collect();
        let model = Model::from_named_tensors(config, &map)?;
        let mut opt = AdamWState { step: self.opt_step, ..Default::default() };
        for (name, t) in model.named_tensors() {
            let m = map.get(&format!("opt.m.{name}"));
            let v = map.get(&format!("opt.v.{name}"));
            if let (Some(m), Some(v)) = (m, v) {
                if m.shape() != t.shape() || v.shape() != t.shape() {
                    return Err(TrainError::ShapeMismatch { name });
                }
                opt.moments.insert(name, (m.clone(), v.clone()));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_word_pos(self.rng_word_pos);
        Ok((model, opt, rng))
    }
}

fn seed_of(rng: &ChaCha8Rng) -> u64 {
    let seed = rng.get_seed();
    u64::from_le_bytes(seed[..8].try_into().expect("8 bytes"))
}

/// The master stream for a run: seeds expand to 32 bytes with the seed in
/// the first word, so [`Snapshot`] can store it compactly.
pub fn master_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
