//! The bag classifier: an MLP feature encoder with optional batch
//! normalization, and a non-gated attention pooling head.
//!
//! The pooling head scores each instance feature `z_i` with
//! `e_i = w' tanh(V z_i)`, turns the scores into weights with a softmax
//! over the bag, forms the bag embedding `m = sum_i a_i z_i`, and predicts
//! `y' = sigmoid(c' m + b)`. This is the standard tanh/softmax non-gated
//! attention formulation; no extra layers sit between the pooled embedding
//! and the classifier head.
//!
//! Every forward exists in two flavors that share the same arithmetic
//! kernels: a tape-free one returning plain values, and a recording one
//! returning tape nodes. Tests pin bitwise equality between the two.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{LeafKind, NodeId, Scope, Tape};
use crate::tensor::{self, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Architecture of a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Hidden widths; the last entry is the feature dimension M.
    pub hidden: Vec<usize>,
    /// Attention dimension L.
    pub attention_dim: usize,
    /// Batch-normalize hidden layers (those followed by an activation).
    pub bn_enabled: bool,
}

impl ModelConfig {
    pub fn new(input_dim: usize) -> Self {
        ModelConfig {
            input_dim,
            hidden: vec![64, 32],
            attention_dim: 16,
            bn_enabled: false,
        }
    }

    pub fn feature_dim(&self) -> usize {
        *self.hidden.last().expect("at least one layer")
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend_from_slice(&self.hidden);
        w
    }
}

/// Whether a forward uses batch statistics (and updates the running ones)
/// or the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor, // [in, out]
    pub bias: Tensor,   // [out]
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnLayer {
    pub gamma: Tensor,        // [out]
    pub beta: Tensor,         // [out]
    pub running_mean: Tensor, // [out], buffer
    pub running_var: Tensor,  // [out], buffer
}

/// Encoder parameters (the θ group).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<Linear>,
    /// One entry per hidden layer when batch normalization is enabled.
    pub bn: Option<Vec<BnLayer>>,
}

/// Attention-pooling classifier parameters (the φ group).
#[derive(Debug, Clone, PartialEq)]
pub struct PoolerParams {
    pub attn_v: Tensor, // [L, M]
    pub attn_w: Tensor, // [L, 1]
    pub head_w: Tensor, // [M, 1]
    pub head_b: Tensor, // [1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub pooler: PoolerParams,
}

/// Output of one full bag forward.
#[derive(Debug, Clone)]
pub struct BagForwardResult {
    /// Predicted bag score in (0, 1).
    pub bag_score: f64,
    /// Normalized attention weight per instance.
    pub attention: Vec<f64>,
    /// Instance features, shape [n, M].
    pub features: Tensor,
}

fn init_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.gen_range(-bound..=bound);
    }
    t
}

impl ParamSet {
    /// Fresh parameters, uniform in ±1/sqrt(fan_in).
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Self {
        let widths = config.widths();
        let mut layers = Vec::new();
        for k in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[k], widths[k + 1]);
            layers.push(Linear {
                weight: init_uniform(rng, &[fan_in, fan_out], fan_in),
                bias: init_uniform(rng, &[fan_out], fan_in),
            });
        }
        let bn = config.bn_enabled.then(|| {
            (0..widths.len() - 2)
                .map(|k| {
                    let out = widths[k + 1];
                    BnLayer {
                        gamma: Tensor::filled(&[out], 1.0),
                        beta: Tensor::zeros(&[out]),
                        running_mean: Tensor::zeros(&[out]),
                        running_var: Tensor::filled(&[out], 1.0),
                    }
                })
                .collect()
        });
        let (l, m) = (config.attention_dim, config.feature_dim());
        let pooler = PoolerParams {
            attn_v: init_uniform(rng, &[l, m], m),
            attn_w: init_uniform(rng, &[l, 1], l),
            head_w: init_uniform(rng, &[m, 1], m),
            head_b: init_uniform(rng, &[1], m),
        };
        ParamSet {
            config: config.clone(),
            encoder: EncoderParams { layers, bn },
            pooler,
        }
    }

    /// Trainable tensors in canonical declaration order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for (k, layer) in self.encoder.layers.iter().enumerate() {
            out.push(&layer.weight);
            out.push(&layer.bias);
            if let Some(bn) = &self.encoder.bn {
                if k < bn.len() {
                    out.push(&bn[k].gamma);
                    out.push(&bn[k].beta);
                }
            }
        }
        out.push(&self.pooler.attn_v);
        out.push(&self.pooler.attn_w);
        out.push(&self.pooler.head_w);
        out.push(&self.pooler.head_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        let bn_count = self.encoder.bn.as_ref().map_or(0, |b| b.len());
        let mut bn_iter = self.encoder.bn.as_mut().map(|b| b.iter_mut());
        for (k, layer) in self.encoder.layers.iter_mut().enumerate() {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
            if k < bn_count {
                if let Some(iter) = bn_iter.as_mut() {
                    let bn = iter.next().expect("bn layer");
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                }
            }
        }
        out.push(&mut self.pooler.attn_v);
        out.push(&mut self.pooler.attn_w);
        out.push(&mut self.pooler.head_w);
        out.push(&mut self.pooler.head_b);
        out
    }

    /// Names aligned with [`ParamSet::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (k, _) in self.encoder.layers.iter().enumerate() {
            out.push(format!("enc.l{k}.weight"));
            out.push(format!("enc.l{k}.bias"));
            if let Some(bn) = &self.encoder.bn {
                if k < bn.len() {
                    out.push(format!("enc.l{k}.bn_gamma"));
                    out.push(format!("enc.l{k}.bn_beta"));
                }
            }
        }
        out.push("pool.attn_v".into());
        out.push("pool.attn_w".into());
        out.push("pool.head_w".into());
        out.push("pool.head_b".into());
        out
    }

    /// Number of trainable encoder tensors (prefix of the canonical order).
    pub fn encoder_tensor_count(&self) -> usize {
        let bn = self.encoder.bn.as_ref().map_or(0, |b| b.len());
        self.encoder.layers.len() * 2 + bn * 2
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// All trainable scalars, flattened in canonical order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }
}

// ── Encoder forward ─────────────────────────────────────────────────

fn check_encoder_input(config: &ModelConfig, x: &Tensor) -> Result<()> {
    if x.shape().len() != 2 || x.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if x.cols() != config.input_dim {
        return Err(Error::Shape {
            op: "encode",
            lhs: x.shape().to_vec(),
            rhs: vec![config.input_dim],
        });
    }
    Ok(())
}

fn update_running(bn: &mut BnLayer, mean: &[f64], var: &[f64]) {
    for (r, &m) in bn.running_mean.data_mut().iter_mut().zip(mean) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
    }
    // Biased batch variance, so a one-row chunk stays well defined.
    for (r, &v) in bn.running_var.data_mut().iter_mut().zip(var) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
    }
}

/// Per-column (mean, variance) pairs, one per batch-normalized layer.
type BnStats = (Vec<f64>, Vec<f64>);

fn encode_impl(params: &ParamSet, x: &Tensor, mode: Mode) -> Result<(Tensor, Vec<BnStats>)> {
    check_encoder_input(&params.config, x)?;
    let n_layers = params.encoder.layers.len();
    let mut h = x.clone();
    let mut batch_stats = Vec::new();
    for k in 0..n_layers {
        let layer = &params.encoder.layers[k];
        h = tensor::matmul(&h, &layer.weight)?;
        h = tensor::add(&h, &layer.bias)?;
        let is_hidden = k + 1 < n_layers;
        if is_hidden {
            if let Some(bn) = &params.encoder.bn {
                let (mean, var) = bn_stats_for(&bn[k], &h, mode);
                let (out, _, _) =
                    tensor::bn_apply(&h, &mean, &var, &bn[k].gamma, &bn[k].beta, BN_EPSILON);
                h = out;
                if mode == Mode::Train {
                    batch_stats.push((mean, var));
                }
            }
            h = tensor::relu(&h);
        }
    }
    Ok((h, batch_stats))
}

/// Tape-free encoder forward. In `Train` mode with batch normalization the
/// running statistics are updated in place; otherwise the parameters are
/// untouched and `Train` and `Infer` agree bitwise.
pub fn encode(params: &mut ParamSet, x: &Tensor, mode: Mode) -> Result<Tensor> {
    let (z, batch_stats) = encode_impl(params, x, mode)?;
    if mode == Mode::Train {
        if let Some(bn) = &mut params.encoder.bn {
            for (layer, (mean, var)) in bn.iter_mut().zip(&batch_stats) {
                update_running(layer, mean, var);
            }
        }
    }
    Ok(z)
}

/// Inference-mode encode; never touches the parameters.
pub fn encode_infer(params: &ParamSet, x: &Tensor) -> Result<Tensor> {
    Ok(encode_impl(params, x, Mode::Infer)?.0)
}

fn bn_stats_for(bn: &BnLayer, h: &Tensor, mode: Mode) -> (Vec<f64>, Vec<f64>) {
    match mode {
        Mode::Train => tensor::column_stats(h),
        Mode::Infer => (
            bn.running_mean.data().to_vec(),
            bn.running_var.data().to_vec(),
        ),
    }
}

/// Encoder forward recorded on a tape (under [`Scope::Encoder`]).
///
/// Returns the feature node and the encoder's trainable leaves in canonical
/// order, registered with `theta_kind` (parameters for a gradient pass,
/// constants to freeze the encoder).
pub fn encode_taped(
    params: &mut ParamSet,
    x: &Tensor,
    mode: Mode,
    tape: &mut Tape,
    theta_kind: LeafKind,
) -> Result<(NodeId, Vec<NodeId>)> {
    check_encoder_input(&params.config, x)?;
    let prev = tape.set_scope(Scope::Encoder);
    let n_layers = params.encoder.layers.len();
    let mut leaves = Vec::new();
    let mut h = tape.constant(x.clone());
    for k in 0..n_layers {
        let (w, b) = {
            let layer = &params.encoder.layers[k];
            (
                tape.leaf(layer.weight.clone(), theta_kind),
                tape.leaf(layer.bias.clone(), theta_kind),
            )
        };
        leaves.push(w);
        leaves.push(b);
        h = tape.matmul(h, w)?;
        h = tape.add(h, b)?;
        let is_hidden = k + 1 < n_layers;
        if is_hidden {
            let bn_info = params.encoder.bn.as_ref().map(|bn| {
                let (mean, var) = bn_stats_for(&bn[k], tape.value(h), mode);
                (bn[k].gamma.clone(), bn[k].beta.clone(), mean, var)
            });
            if let Some((gamma_v, beta_v, mean, var)) = bn_info {
                let gamma = tape.leaf(gamma_v, theta_kind);
                let beta = tape.leaf(beta_v, theta_kind);
                leaves.push(gamma);
                leaves.push(beta);
                h = match mode {
                    Mode::Train => {
                        let node =
                            tape.batch_norm_train(h, gamma, beta, &mean, &var, BN_EPSILON)?;
                        if let Some(bn) = &mut params.encoder.bn {
                            update_running(&mut bn[k], &mean, &var);
                        }
                        node
                    }
                    Mode::Infer => {
                        tape.batch_norm_infer(h, gamma, beta, &mean, &var, BN_EPSILON)?
                    }
                };
            }
            h = tape.relu(h);
        }
    }
    tape.set_scope(prev);
    Ok((h, leaves))
}

// ── Attention pooling ───────────────────────────────────────────────

fn check_pooler_input(pooler: &PoolerParams, z: &Tensor) -> Result<()> {
    if z.shape().len() != 2 || z.cols() != pooler.attn_v.cols() {
        return Err(Error::Shape {
            op: "attention_pool",
            lhs: z.shape().to_vec(),
            rhs: pooler.attn_v.shape().to_vec(),
        });
    }
    Ok(())
}

/// Tape-free attention pooling over instance features.
pub fn attention_pool(pooler: &PoolerParams, z: &Tensor) -> Result<BagForwardResult> {
    check_pooler_input(pooler, z)?;
    let vt = tensor::transpose(&pooler.attn_v)?;
    let t = tensor::tanh(&tensor::matmul(z, &vt)?);
    let e = tensor::matmul(&t, &pooler.attn_w)?;
    let a = tensor::softmax_axis(&e, 0)?;
    let at = tensor::transpose(&a)?;
    let m = tensor::matmul(&at, z)?;
    let s = tensor::matmul(&m, &pooler.head_w)?;
    let s = tensor::add(&s, &pooler.head_b)?;
    let y = tensor::sigmoid(&s);
    Ok(BagForwardResult {
        bag_score: y.item(),
        attention: a.data().to_vec(),
        features: z.clone(),
    })
}

/// Nodes produced by a taped pooling pass.
pub struct TapedPool {
    pub score: NodeId,
    pub attention: NodeId,
    /// φ leaves in canonical order (attn_v, attn_w, head_w, head_b).
    pub leaves: Vec<NodeId>,
}

/// Attention pooling recorded on a tape; `phi_kind` picks whether the
/// pooler weights participate in the gradient or are frozen constants.
pub fn attention_pool_taped(
    pooler: &PoolerParams,
    z: NodeId,
    tape: &mut Tape,
    phi_kind: LeafKind,
) -> Result<TapedPool> {
    check_pooler_input(pooler, tape.value(z))?;
    let v = tape.leaf(pooler.attn_v.clone(), phi_kind);
    let w = tape.leaf(pooler.attn_w.clone(), phi_kind);
    let c = tape.leaf(pooler.head_w.clone(), phi_kind);
    let b = tape.leaf(pooler.head_b.clone(), phi_kind);
    let vt = tape.transpose(v)?;
    let zv = tape.matmul(z, vt)?;
    let t = tape.tanh(zv);
    let e = tape.matmul(t, w)?;
    let a = tape.softmax(e, 0)?;
    let at = tape.transpose(a)?;
    let m = tape.matmul(at, z)?;
    let s = tape.matmul(m, c)?;
    let s = tape.add(s, b)?;
    let y = tape.sigmoid(s);
    Ok(TapedPool {
        score: y,
        attention: a,
        leaves: vec![v, w, c, b],
    })
}

/// Full inference-mode bag forward without a tape.
pub fn forward_bag(params: &ParamSet, instances: &Tensor) -> Result<BagForwardResult> {
    let z = encode_infer(params, instances)?;
    attention_pool(&params.pooler, &z)
}

// ── Loss and labels ─────────────────────────────────────────────────

/// Binary cross-entropy of a bag score against a {0,1} label.
pub fn bce_loss(y_prime: f64, label: u8) -> f64 {
    tensor::bce(y_prime, label)
}

/// A bag is positive iff any instance label is positive.
pub fn bag_label(instance_labels: &[u8]) -> Result<u8> {
    if instance_labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(instance_labels.iter().any(|&l| l != 0) as u8)
}

// ── Serialization ───────────────────────────────────────────────────
//
// Flat binary layout, little-endian:
//   u32 bn_flag, u32 layer_count, then per layer u32 in / u32 out,
//   then u32 attention_dim, then the f64 payloads in declaration order:
//   per layer weight, bias, and with bn on each hidden layer gamma, beta,
//   running_mean, running_var; finally attn_v, attn_w, head_w, head_b.

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.clone(),
                offset: self.offset,
                needed: self.offset + n - self.bytes.len(),
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape.to_vec(), data)
    }
}

impl ParamSet {
    /// Writes the binary checkpoint plus a `<path>.shapes.txt` manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        push_u32(&mut buf, self.config.bn_enabled as u32);
        push_u32(&mut buf, self.encoder.layers.len() as u32);
        for layer in &self.encoder.layers {
            push_u32(&mut buf, layer.weight.rows() as u32);
            push_u32(&mut buf, layer.weight.cols() as u32);
        }
        push_u32(&mut buf, self.config.attention_dim as u32);
        for (k, layer) in self.encoder.layers.iter().enumerate() {
            push_tensor(&mut buf, &layer.weight);
            push_tensor(&mut buf, &layer.bias);
            if let Some(bn) = &self.encoder.bn {
                if k < bn.len() {
                    push_tensor(&mut buf, &bn[k].gamma);
                    push_tensor(&mut buf, &bn[k].beta);
                    push_tensor(&mut buf, &bn[k].running_mean);
                    push_tensor(&mut buf, &bn[k].running_var);
                }
            }
        }
        push_tensor(&mut buf, &self.pooler.attn_v);
        push_tensor(&mut buf, &self.pooler.attn_w);
        push_tensor(&mut buf, &self.pooler.head_w);
        push_tensor(&mut buf, &self.pooler.head_b);
        fs::write(path, &buf)?;

        let mut manifest = fs::File::create(manifest_path(path))?;
        for (name, t) in self.tensor_names().iter().zip(self.tensors()) {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            writeln!(manifest, "{} {}", name, dims.join("x"))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut r = Reader {
            bytes: &bytes,
            offset: 0,
            path: path.display().to_string(),
        };
        let bn_enabled = match r.u32()? {
            0 => false,
            1 => true,
            v => return Err(Error::Format(format!("bad bn flag {v}"))),
        };
        let layer_count = r.u32()? as usize;
        if layer_count == 0 || layer_count > 64 {
            return Err(Error::Format(format!(
                "implausible layer count {layer_count}"
            )));
        }
        let mut dims = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let i = r.u32()? as usize;
            let o = r.u32()? as usize;
            dims.push((i, o));
        }
        let attention_dim = r.u32()? as usize;
        let mut layers = Vec::new();
        let mut bn_layers = Vec::new();
        for (k, &(i, o)) in dims.iter().enumerate() {
            let weight = r.tensor(&[i, o])?;
            let bias = r.tensor(&[o])?;
            layers.push(Linear { weight, bias });
            if bn_enabled && k + 1 < layer_count {
                bn_layers.push(BnLayer {
                    gamma: r.tensor(&[o])?,
                    beta: r.tensor(&[o])?,
                    running_mean: r.tensor(&[o])?,
                    running_var: r.tensor(&[o])?,
                });
            }
        }
        let m = dims.last().unwrap().1;
        let pooler = PoolerParams {
            attn_v: r.tensor(&[attention_dim, m])?,
            attn_w: r.tensor(&[attention_dim, 1])?,
            head_w: r.tensor(&[m, 1])?,
            head_b: r.tensor(&[1])?,
        };
        if r.offset != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint payload",
                bytes.len() - r.offset
            )));
        }
        let config = ModelConfig {
            input_dim: dims[0].0,
            hidden: dims.iter().map(|&(_, o)| o).collect(),
            attention_dim,
            bn_enabled,
        };
        Ok(ParamSet {
            config,
            encoder: EncoderParams {
                layers,
                bn: bn_enabled.then_some(bn_layers),
            },
            pooler,
        })
    }
}

fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".shapes.txt");
    std::path::PathBuf::from(s)
}
