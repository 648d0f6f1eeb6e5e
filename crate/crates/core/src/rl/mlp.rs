//! Feed-forward networks with tanh hidden layers, optional batch
//! normalization in front of each hidden layer, and hand-written exact
//! backpropagation.
//!
//! Parameters live in one flat vector so the optimizer and the
//! finite-difference checks can treat a network as a point in R^P. Batch
//! normalization runs on minibatch statistics during gradient steps and on
//! frozen running statistics everywhere else.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrackerError};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    Exp,
}

/// Architecture of one network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub output_activation: OutputActivation,
    pub batch_norm: bool,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|h| *h == 0) {
            return Err(TrackerError::Config(format!(
                "network dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Range {
    start: usize,
    len: usize,
}

impl Range {
    fn slice<'a>(&self, buf: &'a [f64]) -> &'a [f64] {
        &buf[self.start..self.start + self.len]
    }
    fn slice_mut<'a>(&self, buf: &'a mut [f64]) -> &'a mut [f64] {
        &mut buf[self.start..self.start + self.len]
    }
}

#[derive(Debug, Clone)]
struct BlockLayout {
    in_dim: usize,
    out_dim: usize,
    gamma: Option<Range>,
    beta: Option<Range>,
    w: Range,
    b: Range,
}

/// One dense network. `params` holds, in block order, the batch-norm scale
/// and shift (when enabled) followed by the weight matrix (row-major,
/// out x in) and bias of every layer including the output layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
    pub running_mean: Vec<Vec<f64>>,
    pub running_var: Vec<Vec<f64>>,
    #[serde(skip)]
    layout: Vec<BlockLayout>,
}

impl Mlp {
    fn build_layout(spec: &MlpSpec) -> (Vec<BlockLayout>, usize) {
        let mut layout = Vec::new();
        let mut cursor = 0usize;
        let mut take = |len: usize| {
            let r = Range { start: cursor, len };
            cursor += len;
            r
        };
        let mut in_dim = spec.input_dim;
        for &h in &spec.hidden {
            let (gamma, beta) = if spec.batch_norm {
                (Some(take(in_dim)), Some(take(in_dim)))
            } else {
                (None, None)
            };
            let w = take(h * in_dim);
            let b = take(h);
            layout.push(BlockLayout {
                in_dim,
                out_dim: h,
                gamma,
                beta,
                w,
                b,
            });
            in_dim = h;
        }
        let w = take(spec.output_dim * in_dim);
        let b = take(spec.output_dim);
        layout.push(BlockLayout {
            in_dim,
            out_dim: spec.output_dim,
            gamma: None,
            beta: None,
            w,
            b,
        });
        (layout, cursor)
    }

    /// Fresh network: weights uniform in +-1/sqrt(fan_in), biases zero,
    /// batch-norm scale one / shift zero, running stats at the identity.
    pub fn new(spec: MlpSpec, rng: &mut impl Rng) -> Result<Mlp> {
        spec.validate()?;
        let (layout, n_params) = Mlp::build_layout(&spec);
        let mut params = vec![0.0; n_params];
        for block in &layout {
            if let Some(g) = &block.gamma {
                g.slice_mut(&mut params).fill(1.0);
            }
            let bound = 1.0 / (block.in_dim as f64).sqrt();
            for w in block.w.slice_mut(&mut params) {
                *w = rng.gen_range(-bound..bound);
            }
        }
        let n_bn = if spec.batch_norm { spec.hidden.len() } else { 0 };
        let running_mean = (0..n_bn).map(|i| vec![0.0; layout[i].in_dim]).collect();
        let running_var = (0..n_bn).map(|i| vec![1.0; layout[i].in_dim]).collect();
        Ok(Mlp {
            spec,
            params,
            running_mean,
            running_var,
            layout,
        })
    }

    /// Rebuild the derived index layout (needed after deserialization).
    pub fn rebuild_layout(&mut self) -> Result<()> {
        self.spec.validate()?;
        let (layout, n_params) = Mlp::build_layout(&self.spec);
        if self.params.len() != n_params {
            return Err(TrackerError::Config(format!(
                "parameter vector of length {} does not match spec ({n_params} expected)",
                self.params.len()
            )));
        }
        self.layout = layout;
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Eval-mode forward for a single input using frozen running statistics.
    pub fn eval_forward(&self, input: &[f64]) -> Vec<f64> {
        let mut sink = NoCache;
        self.forward_with(input, 1, Mode::Eval, &mut sink, None)
    }

    /// Eval-mode forward over a batch, cached for backprop (used by the
    /// frozen-statistics gradient checks).
    pub fn eval_forward_cached(&self, inputs: &[f64], m: usize) -> (Vec<f64>, Cache) {
        let mut cache = Cache::new(m, false);
        let out = self.forward_with(inputs, m, Mode::Eval, &mut cache, None);
        (out, cache)
    }

    /// Train-mode forward over a batch: batch-norm uses minibatch statistics
    /// and, when `update_running` is set, folds them into the running stats.
    pub fn train_forward_cached(
        &mut self,
        inputs: &[f64],
        m: usize,
        update_running: bool,
    ) -> (Vec<f64>, Cache) {
        let mut cache = Cache::new(m, true);
        let mut new_mean = self.running_mean.clone();
        let mut new_var = self.running_var.clone();
        let out = {
            let mut sink = StatSink {
                mean: &mut new_mean,
                var: &mut new_var,
            };
            self.forward_with(
                inputs,
                m,
                Mode::Train { update_running },
                &mut cache,
                Some(&mut sink),
            )
        };
        if update_running {
            self.running_mean = new_mean;
            self.running_var = new_var;
        }
        (out, cache)
    }

    /// Forward with frozen (running-statistic) normalization that still
    /// folds the minibatch statistics into the running averages. Keeps the
    /// density a fixed function of the parameters inside one update phase,
    /// which the PPO ratio requires, while the normalizers keep learning the
    /// state distribution.
    pub fn frozen_forward_cached(&mut self, inputs: &[f64], m: usize) -> (Vec<f64>, Cache) {
        let mut cache = Cache::new(m, false);
        let mut new_mean = self.running_mean.clone();
        let mut new_var = self.running_var.clone();
        let out = {
            let mut sink = StatSink {
                mean: &mut new_mean,
                var: &mut new_var,
            };
            self.forward_with(
                inputs,
                m,
                Mode::Frozen { update_running: true },
                &mut cache,
                Some(&mut sink),
            )
        };
        self.running_mean = new_mean;
        self.running_var = new_var;
        (out, cache)
    }

    fn forward_with(
        &self,
        inputs: &[f64],
        m: usize,
        mode: Mode,
        cache: &mut impl CacheSink,
        mut stats: Option<&mut StatSink>,
    ) -> Vec<f64> {
        assert_eq!(
            inputs.len(),
            m * self.spec.input_dim,
            "input batch shape mismatch"
        );
        let n_blocks = self.layout.len();
        let mut x = inputs.to_vec();
        for (bi, block) in self.layout.iter().enumerate() {
            let d = block.in_dim;
            let is_output = bi == n_blocks - 1;

            let y = if let (Some(gr), Some(br)) = (&block.gamma, &block.beta) {
                let gamma = gr.slice(&self.params);
                let beta = br.slice(&self.params);
                let update_running = match mode {
                    Mode::Train { update_running } | Mode::Frozen { update_running } => {
                        update_running
                    }
                    Mode::Eval => false,
                };
                let batch_stats = if update_running || matches!(mode, Mode::Train { .. }) {
                    let mut mean = vec![0.0; d];
                    let mut var = vec![0.0; d];
                    for s in 0..m {
                        for c in 0..d {
                            mean[c] += x[s * d + c];
                        }
                    }
                    mean.iter_mut().for_each(|v| *v /= m as f64);
                    for s in 0..m {
                        for c in 0..d {
                            let diff = x[s * d + c] - mean[c];
                            var[c] += diff * diff;
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= m as f64);
                    Some((mean, var))
                } else {
                    None
                };
                if update_running {
                    if let (Some(sink), Some((bm, bv))) = (stats.as_deref_mut(), &batch_stats) {
                        for c in 0..d {
                            sink.mean[bi][c] =
                                BN_MOMENTUM * sink.mean[bi][c] + (1.0 - BN_MOMENTUM) * bm[c];
                            sink.var[bi][c] =
                                BN_MOMENTUM * sink.var[bi][c] + (1.0 - BN_MOMENTUM) * bv[c];
                        }
                    }
                }
                let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
                    Mode::Train { .. } => batch_stats.expect("batch stats computed"),
                    Mode::Frozen { .. } | Mode::Eval => (
                        self.running_mean[bi].clone(),
                        self.running_var[bi].clone(),
                    ),
                };
                let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut xhat = vec![0.0; m * d];
                let mut y = vec![0.0; m * d];
                for s in 0..m {
                    for c in 0..d {
                        let xh = (x[s * d + c] - mean[c]) * inv[c];
                        xhat[s * d + c] = xh;
                        y[s * d + c] = gamma[c] * xh + beta[c];
                    }
                }
                cache.record_bn(bi, xhat, inv);
                y
            } else {
                x.clone()
            };

            let h = block.out_dim;
            let w = block.w.slice(&self.params);
            let b = block.b.slice(&self.params);
            let mut z = vec![0.0; m * h];
            for s in 0..m {
                for j in 0..h {
                    let mut acc = b[j];
                    let row = &w[j * d..(j + 1) * d];
                    let input_row = &y[s * d..(s + 1) * d];
                    for c in 0..d {
                        acc += row[c] * input_row[c];
                    }
                    z[s * h + j] = acc;
                }
            }

            let a = if is_output {
                match self.spec.output_activation {
                    OutputActivation::Linear => z,
                    OutputActivation::Exp => z.iter().map(|v| v.exp()).collect(),
                }
            } else {
                z.iter().map(|v| v.tanh()).collect()
            };

            cache.record_layer(bi, y, a.clone());
            x = a;
        }
        x
    }

    /// Accumulate parameter gradients for a batch given `dL/d(output)` rows.
    /// The cache decides whether batch-norm backprop couples the samples
    /// (train mode) or treats the normalization as a frozen affine map.
    pub fn backward(&self, cache: &Cache, dout: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        let m = cache.m;
        let n_blocks = self.layout.len();
        assert_eq!(dout.len(), m * self.spec.output_dim);

        let mut da: Vec<f64> = match self.spec.output_activation {
            OutputActivation::Linear => dout.to_vec(),
            OutputActivation::Exp => dout
                .iter()
                .zip(&cache.layers[n_blocks - 1].a)
                .map(|(g, out)| g * out)
                .collect(),
        };

        for bi in (0..n_blocks).rev() {
            let block = &self.layout[bi];
            let d = block.in_dim;
            let h = block.out_dim;
            let layer = &cache.layers[bi];

            let dz: Vec<f64> = if bi == n_blocks - 1 {
                da.clone()
            } else {
                da.iter()
                    .zip(&layer.a)
                    .map(|(g, a)| g * (1.0 - a * a))
                    .collect()
            };

            let w = block.w.slice(&self.params);
            let mut dy = vec![0.0; m * d];
            {
                let gw = block.w.start;
                let gb = block.b.start;
                for s in 0..m {
                    let y_row = &layer.y[s * d..(s + 1) * d];
                    for j in 0..h {
                        let g = dz[s * h + j];
                        if g == 0.0 {
                            continue;
                        }
                        grad[gb + j] += g;
                        let wrow = &w[j * d..(j + 1) * d];
                        let gwrow = gw + j * d;
                        for c in 0..d {
                            grad[gwrow + c] += g * y_row[c];
                            dy[s * d + c] += g * wrow[c];
                        }
                    }
                }
            }

            da = if let (Some(gr), Some(br)) = (&block.gamma, &block.beta) {
                let gamma = gr.slice(&self.params);
                let xhat = layer.xhat.as_ref().expect("bn cache present");
                let inv = layer.inv.as_ref().expect("bn cache present");
                let gg = gr.start;
                let gbeta = br.start;
                let mut dx = vec![0.0; m * d];
                if cache.train_bn {
                    // Exact minibatch backprop: the batch mean and variance
                    // depend on every sample.
                    for c in 0..d {
                        let mut sum_dyhat = 0.0;
                        let mut sum_dyhat_xhat = 0.0;
                        for s in 0..m {
                            let dyv = dy[s * d + c];
                            grad[gg + c] += dyv * xhat[s * d + c];
                            grad[gbeta + c] += dyv;
                            let dyhat = dyv * gamma[c];
                            sum_dyhat += dyhat;
                            sum_dyhat_xhat += dyhat * xhat[s * d + c];
                        }
                        let mf = m as f64;
                        for s in 0..m {
                            let dyhat = dy[s * d + c] * gamma[c];
                            dx[s * d + c] = inv[c] / mf
                                * (mf * dyhat - sum_dyhat - xhat[s * d + c] * sum_dyhat_xhat);
                        }
                    }
                } else {
                    // Frozen statistics: the normalization is a constant
                    // affine transform.
                    for s in 0..m {
                        for c in 0..d {
                            let dyv = dy[s * d + c];
                            grad[gg + c] += dyv * xhat[s * d + c];
                            grad[gbeta + c] += dyv;
                            dx[s * d + c] = dyv * gamma[c] * inv[c];
                        }
                    }
                }
                dx
            } else {
                dy
            };
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Mode {
    /// Minibatch-statistic normalization.
    Train { update_running: bool },
    /// Running-statistic normalization, optionally still recording batch
    /// statistics.
    Frozen { update_running: bool },
    /// Pure inference on running statistics.
    Eval,
}

struct StatSink<'a> {
    mean: &'a mut Vec<Vec<f64>>,
    var: &'a mut Vec<Vec<f64>>,
}

trait CacheSink {
    fn record_bn(&mut self, block: usize, xhat: Vec<f64>, inv: Vec<f64>);
    fn record_layer(&mut self, block: usize, y: Vec<f64>, a: Vec<f64>);
}

/// Discards activations; used for plain inference.
struct NoCache;

impl CacheSink for NoCache {
    fn record_bn(&mut self, _: usize, _: Vec<f64>, _: Vec<f64>) {}
    fn record_layer(&mut self, _: usize, _: Vec<f64>, _: Vec<f64>) {}
}

#[derive(Debug, Clone, Default)]
struct LayerCache {
    xhat: Option<Vec<f64>>,
    inv: Option<Vec<f64>>,
    /// Input to the dense layer (post batch-norm).
    y: Vec<f64>,
    /// Layer output (post activation).
    a: Vec<f64>,
}

/// Activations of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    m: usize,
    train_bn: bool,
    layers: Vec<LayerCache>,
}

impl Cache {
    fn new(m: usize, train_bn: bool) -> Cache {
        Cache {
            m,
            train_bn,
            layers: Vec::new(),
        }
    }
}

impl CacheSink for Cache {
    fn record_bn(&mut self, block: usize, xhat: Vec<f64>, inv: Vec<f64>) {
        if self.layers.len() <= block {
            self.layers.resize(block + 1, LayerCache::default());
        }
        self.layers[block].xhat = Some(xhat);
        self.layers[block].inv = Some(inv);
    }

    fn record_layer(&mut self, block: usize, y: Vec<f64>, a: Vec<f64>) {
        if self.layers.len() <= block {
            self.layers.resize(block + 1, LayerCache::default());
        }
        self.layers[block].y = y;
        self.layers[block].a = a;
    }
}
