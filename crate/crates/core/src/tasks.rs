//! Desk-scale task networks for downstream evaluation: a point-cloud
//! classifier (encoder + linear head) and a small autoencoder trained with
//! Chamfer loss. Orderings are judged by feeding their top-n subsets to
//! these networks after they have been trained on full clouds and frozen.
//!
//! Both networks pool over points, so they accept any subset size and are
//! invariant to point order; feeding the full cloud in any order reproduces
//! the full-cloud metric exactly.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{bind_mlp, bind_mlp_frozen, encode, mlp_forward, MlpParams};
use crate::data::LabeledDataset;
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor2;
use crate::train::{
    batches_per_epoch, cosine_lr, epoch_order, AdamWHyper, AdamWState, TrainError,
};

/// Settings for the supervised classifier stand-in.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: alloc::vec![64, 128],
            feature_dim: 128,
            num_classes: 8,
            epochs: 40,
            batch_size: 16,
            lr0: 1e-3,
            weight_decay: 1e-5,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    fn encoder_widths(&self) -> Vec<usize> {
        let mut w = alloc::vec![3];
        w.extend_from_slice(&self.hidden);
        w.push(self.feature_dim);
        w
    }
}

/// Encoder + max-pool + linear logits. The pooled feature doubles as the
/// retrieval embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub encoder: MlpParams,
    pub head: MlpParams,
    pub num_classes: usize,
}

impl Classifier {
    /// Class logits for a cloud or subset (1 x num_classes).
    pub fn logits(&self, points: &Tensor2) -> Result<Tensor2, TrainError> {
        let mut g = Graph::new();
        let p = g.constant(points.clone());
        let enc = bind_mlp_frozen(&mut g, &self.encoder);
        let head = bind_mlp_frozen(&mut g, &self.head);
        let f = encode(&mut g, p, &enc)?;
        let pooled = g.maxpool_cols(f)?;
        let logits = mlp_forward(&mut g, pooled, &head)?;
        Ok(g.value(logits).clone())
    }

    /// Predicted class id (first argmax on ties).
    pub fn predict(&self, points: &Tensor2) -> Result<usize, TrainError> {
        let logits = self.logits(points)?;
        let (_, _, j) = logits.max_entry();
        Ok(j)
    }

    /// Penultimate pooled feature (1 x feature_dim), the retrieval
    /// embedding.
    pub fn pooled_feature(&self, points: &Tensor2) -> Result<Tensor2, TrainError> {
        let mut g = Graph::new();
        let p = g.constant(points.clone());
        let enc = bind_mlp_frozen(&mut g, &self.encoder);
        let f = encode(&mut g, p, &enc)?;
        let pooled = g.maxpool_cols(f)?;
        Ok(g.value(pooled).clone())
    }
}

/// Stable cross-entropy over a logit matrix: mean_i of LSE(z_i) - z_i[y_i].
fn cross_entropy_node(
    g: &mut Graph,
    logits: NodeId,
    labels: &[usize],
) -> Result<NodeId, TrainError> {
    let (b, k) = g.value(logits).shape();
    let lt = g.transpose(logits)?;
    let row_max_t = g.maxpool_cols(lt)?;
    let row_max = g.transpose(row_max_t)?;
    let ones_k = g.constant(Tensor2::ones(1, k));
    let max_mat = g.matmul(row_max, ones_k)?;
    let shifted = g.sub(logits, max_mat)?;
    let e = g.exp(shifted)?;
    let ones_col = g.constant(Tensor2::ones(k, 1));
    let sums = g.matmul(e, ones_col)?;
    let log_sums = g.log(sums)?;
    let lse = g.add(log_sums, row_max)?;

    let onehot = g.constant(Tensor2::from_fn(b, k, |i, j| {
        if labels[i] == j {
            1.0
        } else {
            0.0
        }
    }));
    let picked_mat = g.mul(logits, onehot)?;
    let picked = g.matmul(picked_mat, ones_col)?;
    let diff = g.sub(lse, picked)?;
    Ok(g.mean(diff)?)
}

/// Train the classifier on full clouds with cross-entropy, AdamW, and the
/// cosine schedule. Deterministic in the config seed.
pub fn train_classifier(
    data: &LabeledDataset,
    cfg: &ClassifierConfig,
) -> Result<Classifier, TrainError> {
    if data.len() < 2 {
        return Err(TrainError::DatasetTooSmall { need: 2, got: data.len() });
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= cfg.num_classes) {
        let _ = bad;
        return Err(TrainError::Config("label outside num_classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Classifier {
        encoder: MlpParams::init(&cfg.encoder_widths(), &mut rng),
        head: MlpParams::init(&[cfg.feature_dim, cfg.num_classes], &mut rng),
        num_classes: cfg.num_classes,
    };
    let mut opt = AdamWState::new();
    let hyper = AdamWHyper::default();
    let total_steps = cfg.epochs * batches_per_epoch(data.len(), cfg.batch_size);

    for epoch in 0..cfg.epochs {
        let order = epoch_order(data.len(), cfg.seed, epoch);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.is_empty() {
                continue;
            }
            let mut g = Graph::new();
            let enc = bind_mlp(&mut g, &net.encoder);
            let head = bind_mlp(&mut g, &net.head);

            let mut pooled_rows = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let p = g.constant(data.clouds[i].points().clone());
                let f = encode(&mut g, p, &enc)?;
                pooled_rows.push(g.maxpool_cols(f)?);
                labels.push(data.labels[i]);
            }
            let pooled = g.concat_rows(&pooled_rows)?;
            let logits = mlp_forward(&mut g, pooled, &head)?;
            let loss = cross_entropy_node(&mut g, logits, &labels)?;
            let loss_value = g.value(loss).item();
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss { batch_index: epoch, value: loss_value });
            }
            g.backward(loss)?;

            let mut grads = BTreeMap::new();
            for (i, &(w, b)) in enc.layers.iter().enumerate() {
                grads.insert(format!("encoder.{i}.w"), g.grad_or_zeros(w));
                grads.insert(format!("encoder.{i}.b"), g.grad_or_zeros(b));
            }
            for (i, &(w, b)) in head.layers.iter().enumerate() {
                grads.insert(format!("head.{i}.w"), g.grad_or_zeros(w));
                grads.insert(format!("head.{i}.b"), g.grad_or_zeros(b));
            }

            let lr = cosine_lr(opt.step as usize, total_steps, cfg.lr0);
            let mut tensors: Vec<(String, &mut Tensor2)> = Vec::new();
            for (i, layer) in net.encoder.layers.iter_mut().enumerate() {
                tensors.push((format!("encoder.{i}.w"), &mut layer.w));
                tensors.push((format!("encoder.{i}.b"), &mut layer.b));
            }
            for (i, layer) in net.head.layers.iter_mut().enumerate() {
                tensors.push((format!("head.{i}.w"), &mut layer.w));
                tensors.push((format!("head.{i}.b"), &mut layer.b));
            }
            opt.update_tensors(tensors, &grads, lr, cfg.weight_decay, &hyper)?;
        }
    }
    Ok(net)
}

/// Settings for the reconstruction stand-in.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub decoder_hidden: usize,
    /// Number of points the decoder emits.
    pub decoder_points: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            hidden: alloc::vec![64, 128],
            feature_dim: 128,
            decoder_hidden: 128,
            decoder_points: 64,
            epochs: 40,
            batch_size: 16,
            lr0: 1e-3,
            weight_decay: 1e-5,
            seed: 0,
        }
    }
}

impl AutoencoderConfig {
    fn encoder_widths(&self) -> Vec<usize> {
        let mut w = alloc::vec![3];
        w.extend_from_slice(&self.hidden);
        w.push(self.feature_dim);
        w
    }

    fn decoder_widths(&self) -> Vec<usize> {
        alloc::vec![self.feature_dim, self.decoder_hidden, 3 * self.decoder_points]
    }
}

/// Pooled-feature autoencoder: encoder + max-pool down to one feature row,
/// decoder MLP back out to `decoder_points` x 3.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub decoder_points: usize,
}

impl Autoencoder {
    /// Decode a cloud or subset back to a fixed-size reconstruction.
    pub fn reconstruct(&self, points: &Tensor2) -> Result<Tensor2, TrainError> {
        let mut g = Graph::new();
        let p = g.constant(points.clone());
        let enc = bind_mlp_frozen(&mut g, &self.encoder);
        let dec = bind_mlp_frozen(&mut g, &self.decoder);
        let f = encode(&mut g, p, &enc)?;
        let pooled = g.maxpool_cols(f)?;
        let flat = mlp_forward(&mut g, pooled, &dec)?;
        let out = g.reshape(flat, self.decoder_points, 3)?;
        Ok(g.value(out).clone())
    }
}

/// Symmetric squared Chamfer between two point nodes, built from pairwise
/// squared distances and per-row/per-column minima.
pub fn chamfer_node(g: &mut Graph, x: NodeId, y: NodeId) -> Result<NodeId, TrainError> {
    let (nx, _) = g.value(x).shape();
    let (ny, _) = g.value(y).shape();

    let xx = g.mul(x, x)?;
    let ones3 = g.constant(Tensor2::ones(3, 1));
    let xn = g.matmul(xx, ones3)?; // nx x 1
    let yy = g.mul(y, y)?;
    let yn = g.matmul(yy, ones3)?; // ny x 1

    let yt = g.transpose(y)?;
    let cross = g.matmul(x, yt)?; // nx x ny
    let ones_row = g.constant(Tensor2::ones(1, ny));
    let xn_mat = g.matmul(xn, ones_row)?;
    let ones_col = g.constant(Tensor2::ones(nx, 1));
    let ynt = g.transpose(yn)?;
    let yn_mat = g.matmul(ones_col, ynt)?;
    let cross2 = g.scale(cross, -2.0)?;
    let partial = g.add(xn_mat, yn_mat)?;
    let dists = g.add(partial, cross2)?; // squared distances

    // row minima: min over y for each x
    let neg = g.scale(dists, -1.0)?;
    let negt = g.transpose(neg)?;
    let row_max_neg = g.maxpool_cols(negt)?; // 1 x nx
    let row_min = g.scale(row_max_neg, -1.0)?;
    let mean_x = g.mean(row_min)?;

    // column minima: min over x for each y
    let col_max_neg = g.maxpool_cols(neg)?; // 1 x ny
    let col_min = g.scale(col_max_neg, -1.0)?;
    let mean_y = g.mean(col_min)?;

    Ok(g.add(mean_x, mean_y)?)
}

/// Train encoder and decoder end to end on full clouds with Chamfer loss.
pub fn train_autoencoder(
    data: &LabeledDataset,
    cfg: &AutoencoderConfig,
) -> Result<Autoencoder, TrainError> {
    if data.is_empty() {
        return Err(TrainError::DatasetTooSmall { need: 1, got: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Autoencoder {
        encoder: MlpParams::init(&cfg.encoder_widths(), &mut rng),
        decoder: MlpParams::init(&cfg.decoder_widths(), &mut rng),
        decoder_points: cfg.decoder_points,
    };
    let mut opt = AdamWState::new();
    let hyper = AdamWHyper::default();
    let total_steps = cfg.epochs * batches_per_epoch(data.len(), cfg.batch_size);

    for epoch in 0..cfg.epochs {
        let order = epoch_order(data.len(), cfg.seed, epoch);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.is_empty() {
                continue;
            }
            let mut g = Graph::new();
            let enc = bind_mlp(&mut g, &net.encoder);
            let dec = bind_mlp(&mut g, &net.decoder);

            let mut total: Option<NodeId> = None;
            for &i in chunk {
                let target = g.constant(data.clouds[i].points().clone());
                let f = encode(&mut g, target, &enc)?;
                let pooled = g.maxpool_cols(f)?;
                let flat = mlp_forward(&mut g, pooled, &dec)?;
                let decoded = g.reshape(flat, cfg.decoder_points, 3)?;
                let ch = chamfer_node(&mut g, decoded, target)?;
                total = Some(match total {
                    Some(t) => g.add(t, ch)?,
                    None => ch,
                });
            }
            let sum = total.expect("non-empty chunk");
            let loss = g.scale(sum, 1.0 / chunk.len() as f64)?;
            let loss_value = g.value(loss).item();
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss { batch_index: epoch, value: loss_value });
            }
            g.backward(loss)?;

            let mut grads = BTreeMap::new();
            for (i, &(w, b)) in enc.layers.iter().enumerate() {
                grads.insert(format!("encoder.{i}.w"), g.grad_or_zeros(w));
                grads.insert(format!("encoder.{i}.b"), g.grad_or_zeros(b));
            }
            for (i, &(w, b)) in dec.layers.iter().enumerate() {
                grads.insert(format!("decoder.{i}.w"), g.grad_or_zeros(w));
                grads.insert(format!("decoder.{i}.b"), g.grad_or_zeros(b));
            }

            let lr = cosine_lr(opt.step as usize, total_steps, cfg.lr0);
            let mut tensors: Vec<(String, &mut Tensor2)> = Vec::new();
            for (i, layer) in net.encoder.layers.iter_mut().enumerate() {
                tensors.push((format!("encoder.{i}.w"), &mut layer.w));
                tensors.push((format!("encoder.{i}.b"), &mut layer.b));
            }
            for (i, layer) in net.decoder.layers.iter_mut().enumerate() {
                tensors.push((format!("decoder.{i}.w"), &mut layer.w));
                tensors.push((format!("decoder.{i}.b"), &mut layer.b));
            }
            opt.update_tensors(tensors, &grads, lr, cfg.weight_decay, &hyper)?;
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_dataset, ShapeClass};
    use crate::eval::chamfer;

    fn tiny_classifier_cfg() -> ClassifierConfig {
        ClassifierConfig {
            hidden: alloc::vec![8, 16],
            feature_dim: 16,
            num_classes: 2,
            epochs: 30,
            batch_size: 4,
            lr0: 3e-3,
            ..ClassifierConfig::default()
        }
    }

    #[test]
    fn classifier_learns_two_easy_classes() {
        let classes = [ShapeClass::Sphere, ShapeClass::Helix];
        let mut data = make_dataset(&classes, 8, 32, 3).unwrap();
        // labels must be 0-based class indices for the head
        data.labels = data.labels.iter().map(|&l| usize::from(l == ShapeClass::Helix.id())).collect();

        let net = train_classifier(&data, &tiny_classifier_cfg()).unwrap();
        let mut correct = 0;
        for (cloud, &label) in data.clouds.iter().zip(&data.labels) {
            if net.predict(cloud.points()).unwrap() == label {
                correct += 1;
            }
        }
        assert!(correct >= 14, "train accuracy {correct}/16");
    }

    #[test]
    fn classifier_is_order_invariant_and_size_agnostic() {
        let classes = [ShapeClass::Sphere, ShapeClass::Cube];
        let mut data = make_dataset(&classes, 2, 16, 5).unwrap();
        data.labels = data.labels.iter().map(|&l| usize::from(l == ShapeClass::Cube.id())).collect();
        let cfg = ClassifierConfig { epochs: 2, ..tiny_classifier_cfg() };
        let net = train_classifier(&data, &cfg).unwrap();

        let cloud = data.clouds[0].points();
        let n = cloud.rows();
        let reversed = Tensor2::from_fn(n, 3, |i, j| cloud.get(n - 1 - i, j));
        assert_eq!(net.logits(cloud).unwrap(), net.logits(&reversed).unwrap());

        let subset = cloud.slice_rows(0, 5);
        assert_eq!(net.logits(&subset).unwrap().shape(), (1, 2));
    }

    #[test]
    fn classifier_training_is_deterministic() {
        let classes = [ShapeClass::Sphere, ShapeClass::Cube];
        let mut data = make_dataset(&classes, 3, 16, 7).unwrap();
        data.labels = data.labels.iter().map(|&l| usize::from(l == ShapeClass::Cube.id())).collect();
        let cfg = ClassifierConfig { epochs: 3, ..tiny_classifier_cfg() };
        let a = train_classifier(&data, &cfg).unwrap();
        let b = train_classifier(&data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn classifier_rejects_out_of_range_labels() {
        let mut data = make_dataset(&[ShapeClass::Sphere], 2, 16, 7).unwrap();
        data.labels[0] = 9;
        assert!(train_classifier(&data, &tiny_classifier_cfg()).is_err());
    }

    #[test]
    fn chamfer_node_matches_value_chamfer() {
        let x = Tensor2::from_fn(5, 3, |i, j| (i as f64 * 0.3 - j as f64 * 0.7).sin());
        let y = Tensor2::from_fn(7, 3, |i, j| (i as f64 * 0.9 + j as f64 * 0.2).cos());
        let mut g = Graph::new();
        let xid = g.constant(x.clone());
        let yid = g.constant(y.clone());
        let c = chamfer_node(&mut g, xid, yid).unwrap();
        let expected = chamfer(&x, &y).unwrap();
        assert!((g.value(c).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn autoencoder_reduces_reconstruction_error() {
        let classes = [ShapeClass::Sphere, ShapeClass::Cube];
        let data = make_dataset(&classes, 4, 32, 11).unwrap();
        let cfg = AutoencoderConfig {
            hidden: alloc::vec![8, 16],
            feature_dim: 16,
            decoder_hidden: 32,
            decoder_points: 16,
            epochs: 25,
            batch_size: 4,
            lr0: 3e-3,
            ..AutoencoderConfig::default()
        };

        // error of the untrained net
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let untrained = Autoencoder {
            encoder: MlpParams::init(&cfg.encoder_widths(), &mut rng),
            decoder: MlpParams::init(&cfg.decoder_widths(), &mut rng),
            decoder_points: cfg.decoder_points,
        };
        let err_of = |net: &Autoencoder| -> f64 {
            data.clouds
                .iter()
                .map(|c| {
                    let rec = net.reconstruct(c.points()).unwrap();
                    chamfer(&rec, c.points()).unwrap()
                })
                .sum::<f64>()
                / data.len() as f64
        };
        let before = err_of(&untrained);
        let net = train_autoencoder(&data, &cfg).unwrap();
        let after = err_of(&net);
        assert!(after < before * 0.8, "chamfer {before} -> {after}");
        assert_eq!(net.reconstruct(data.clouds[0].points()).unwrap().shape(), (16, 3));
    }
}
