//! Shared per-point MLP encoder, max-pooled global descriptor, and the
//! projection-head embedding used by both the scorer and the contrastive
//! loss.
//!
//! The encoder applies the same affine+relu stack to every point row, so it
//! is permutation-equivariant by construction and accepts any number of
//! points regardless of the size it was trained on. Pooling over rows makes
//! every downstream quantity permutation-invariant.

use alloc::vec::Vec;

use rand::Rng;

#[cfg(not(feature = "std"))]
use num_traits::Float as _;

use crate::graph::{EngineError, Graph, NodeId};
use crate::tensor::Tensor2;

/// One affine layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: Tensor2,
    pub b: Tensor2,
}

/// A stack of affine layers with relu between them (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// Initialize with uniform weights in +-sqrt(6 / (fan_in + fan_out))
    /// and zero biases. `widths` lists every layer width including the
    /// input, e.g. `[3, 64, 128, 256]`.
    pub fn init(widths: &[usize], rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Tensor2::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..bound));
            layers.push(Layer { w, b: Tensor2::zeros(1, fan_out) });
        }
        Self { layers }
    }

    /// Layer widths including the input width.
    pub fn widths(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.layers.len() + 1);
        out.push(self.layers[0].w.rows());
        for layer in &self.layers {
            out.push(layer.w.cols());
        }
        out
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].w.rows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").w.cols()
    }
}

/// An [`MlpParams`] bound into a graph, either as trainable parameters or
/// as frozen constants.
#[derive(Clone, Debug)]
pub struct MlpNodes {
    pub layers: Vec<(NodeId, NodeId)>,
}

/// Register all layer tensors as trainable parameter nodes.
pub fn bind_mlp(g: &mut Graph, p: &MlpParams) -> MlpNodes {
    let layers = p
        .layers
        .iter()
        .map(|l| (g.param(l.w.clone()), g.param(l.b.clone())))
        .collect();
    MlpNodes { layers }
}

/// Register all layer tensors as constants (no gradients).
pub fn bind_mlp_frozen(g: &mut Graph, p: &MlpParams) -> MlpNodes {
    let layers = p
        .layers
        .iter()
        .map(|l| (g.constant(l.w.clone()), g.constant(l.b.clone())))
        .collect();
    MlpNodes { layers }
}

/// Run the affine+relu stack on every row of `x`.
pub fn mlp_forward(g: &mut Graph, x: NodeId, mlp: &MlpNodes) -> Result<NodeId, EngineError> {
    let last = mlp.layers.len() - 1;
    let mut h = x;
    for (i, &(w, b)) in mlp.layers.iter().enumerate() {
        h = g.matmul(h, w)?;
        h = g.add_bias_row(h, b)?;
        if i < last {
            h = g.relu(h)?;
        }
    }
    Ok(h)
}

/// Per-point feature map: Nx3 points to NxD features through the shared
/// encoder. Rejects empty clouds.
pub fn encode(g: &mut Graph, points: NodeId, encoder: &MlpNodes) -> Result<NodeId, EngineError> {
    if g.value(points).rows() == 0 {
        return Err(EngineError::EmptyInput { op: "encode" });
    }
    mlp_forward(g, points, encoder)
}

/// Column-wise maxima of the feature map: the order-invariant global
/// descriptor (1xD).
pub fn global_feature(g: &mut Graph, features: NodeId) -> Result<NodeId, EngineError> {
    g.maxpool_cols(features)
}

/// Encoder -> max-pool -> projection head -> (optionally) unit-norm row.
///
/// Normalizing makes the inner products in the contrastive loss cosine
/// similarities; `normalize` exists so the raw-inner-product variant stays
/// measurable.
pub fn embed(
    g: &mut Graph,
    points: NodeId,
    encoder: &MlpNodes,
    head: &MlpNodes,
    normalize: bool,
) -> Result<NodeId, EngineError> {
    let f = encode(g, points, encoder)?;
    let pooled = g.maxpool_cols(f)?;
    let z = mlp_forward(g, pooled, head)?;
    if normalize {
        g.l2_normalize_rows(z)
    } else {
        Ok(z)
    }
}

/// Value-only feature map through a frozen encoder.
pub fn encode_value(encoder: &MlpParams, points: &Tensor2) -> Result<Tensor2, EngineError> {
    let mut g = Graph::new();
    let p = g.constant(points.clone());
    let nodes = bind_mlp_frozen(&mut g, encoder);
    let f = encode(&mut g, p, &nodes)?;
    Ok(g.value(f).clone())
}

/// Value-only global descriptor (column maxima).
pub fn global_feature_value(features: &Tensor2) -> Tensor2 {
    features.col_max().0
}

/// Value-only embedding through frozen encoder and head.
pub fn embed_value(
    encoder: &MlpParams,
    head: &MlpParams,
    points: &Tensor2,
    normalize: bool,
) -> Result<Tensor2, EngineError> {
    let mut g = Graph::new();
    let p = g.constant(points.clone());
    let enc = bind_mlp_frozen(&mut g, encoder);
    let hd = bind_mlp_frozen(&mut g, head);
    let z = embed(&mut g, p, &enc, &hd, normalize)?;
    Ok(g.value(z).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_encoder(seed: u64, widths: &[usize]) -> MlpParams {
        MlpParams::init(widths, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn permute_rows(t: &Tensor2, perm: &[usize]) -> Tensor2 {
        Tensor2::from_fn(t.rows(), t.cols(), |i, j| t.get(perm[i], j))
    }

    #[test]
    fn init_respects_bounds_and_zero_biases() {
        let p = test_encoder(1, &[3, 16, 8]);
        for layer in &p.layers {
            let bound = (6.0 / (layer.w.rows() + layer.w.cols()) as f64).sqrt();
            assert!(layer.w.data().iter().all(|v| v.abs() < bound));
            assert!(layer.b.data().iter().all(|&v| v == 0.0));
        }
        assert_eq!(p.widths(), vec![3, 16, 8]);
    }

    #[test]
    fn encode_output_shape() {
        let enc = test_encoder(2, &[3, 6, 8]);
        let cloud = Tensor2::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        let f = encode_value(&enc, &cloud).unwrap();
        assert_eq!(f.shape(), (4, 8));
    }

    #[test]
    fn encode_rejects_empty_cloud() {
        let enc = test_encoder(2, &[3, 4]);
        let empty = Tensor2::zeros(0, 3);
        assert!(matches!(
            encode_value(&enc, &empty),
            Err(EngineError::EmptyInput { .. })
        ));
    }

    #[test]
    fn encode_is_permutation_equivariant_bit_exactly() {
        let enc = test_encoder(3, &[3, 10, 6]);
        let cloud = Tensor2::from_fn(5, 3, |i, j| ((i * 7 + j * 13) % 11) as f64 * 0.21 - 1.0);
        let perm = [4, 0, 3, 1, 2];
        let f = encode_value(&enc, &cloud).unwrap();
        let f_perm = encode_value(&enc, &permute_rows(&cloud, &perm)).unwrap();
        assert_eq!(f_perm, permute_rows(&f, &perm));
    }

    #[test]
    fn zero_weight_network_yields_constant_bias_features() {
        let mut enc = test_encoder(4, &[3, 5]);
        for v in enc.layers[0].w.data_mut() {
            *v = 0.0;
        }
        enc.layers[0].b = Tensor2::from_vec(1, 5, vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let cloud = Tensor2::from_fn(6, 3, |i, j| (i + j) as f64);
        let f = encode_value(&enc, &cloud).unwrap();
        for i in 0..6 {
            assert_eq!(f.row(i), &[0.1, 0.2, 0.3, 0.4, 0.5]);
        }
    }

    #[test]
    fn global_feature_examples() {
        let f = Tensor2::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(global_feature_value(&f).data(), &[1.0, 1.0]);

        let single = Tensor2::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(global_feature_value(&single).data(), &[0.5, -1.0, 2.0]);

        let shuffled = Tensor2::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(global_feature_value(&shuffled), global_feature_value(&f));
    }

    #[test]
    fn embed_is_unit_length_and_permutation_invariant() {
        let enc = test_encoder(5, &[3, 8, 6]);
        let head = test_encoder(6, &[6, 8, 4]);
        let cloud = Tensor2::from_fn(7, 3, |i, j| ((i * 5 + j * 3) % 13) as f64 * 0.17 - 1.0);

        let z = embed_value(&enc, &head, &cloud, true).unwrap();
        assert_eq!(z.shape(), (1, 4));
        let norm: f64 = z.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);

        let perm = [6, 2, 0, 5, 1, 4, 3];
        let z_perm = embed_value(&enc, &head, &permute_rows(&cloud, &perm), true).unwrap();
        assert_eq!(z, z_perm);
    }

    #[test]
    fn embed_ignores_duplicated_points() {
        let enc = test_encoder(7, &[3, 8, 6]);
        let head = test_encoder(8, &[6, 8, 4]);
        let cloud = Tensor2::from_fn(4, 3, |i, j| (i as f64 - 1.5) * 0.4 + j as f64 * 0.2);
        let doubled = Tensor2::from_fn(8, 3, |i, j| cloud.get(i / 2, j));

        let z = embed_value(&enc, &head, &cloud, true).unwrap();
        let z2 = embed_value(&enc, &head, &doubled, true).unwrap();
        assert_eq!(z, z2);
    }

    #[test]
    fn encode_accepts_any_cloud_size() {
        let enc = test_encoder(9, &[3, 6, 4]);
        for n in [1usize, 2, 17, 50] {
            let cloud = Tensor2::from_fn(n, 3, |i, j| (i + j) as f64 * 0.05);
            let f = encode_value(&enc, &cloud).unwrap();
            assert_eq!(f.shape(), (n, 4));
        }
    }
}
