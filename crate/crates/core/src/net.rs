//! Feed-forward networks on `(t, x)` with the activation applied on every
//! layer including the output. Evaluation carries a second-order jet
//! (value, ∂_t, ∂_x, ∂_xx) through each layer, so input derivatives are
//! exact; a reverse sweep over the stored jet states accumulates parameter
//! gradients of any scalar built from those jets.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    /// Value and first three derivatives at `z`, expressed through σ(z).
    #[inline]
    fn jets(self, z: f64) -> (f64, f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let s = z.tanh();
                let s1 = 1.0 - s * s;
                let s2 = -2.0 * s * s1;
                let s3 = s1 * (6.0 * s * s - 2.0);
                (s, s1, s2, s3)
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                let s1 = s * (1.0 - s);
                let s2 = s1 * (1.0 - 2.0 * s);
                let s3 = s2 * (1.0 - 2.0 * s) - 2.0 * s1 * s1;
                (s, s1, s2, s3)
            }
        }
    }

    #[inline]
    fn value(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

/// Value and input derivatives of one network output at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalJet {
    pub value: f64,
    pub dt: f64,
    pub dx: f64,
    pub dxx: f64,
}

impl EvalJet {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.dt.is_finite() && self.dx.is_finite() && self.dxx.is_finite()
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint holds {found} parameters, layer sizes require {expected}")]
    ParamCount { expected: usize, found: usize },
}

/// Feed-forward network. Layer `l` maps `n_{l-1} -> n_l` with row-major
/// weights; the input dimension is fixed at 2 for `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights (bound `sqrt(6/(n_in+n_out))`), zero biases.
    /// Deterministic for a fixed seed.
    pub fn init(sizes: &[usize], activation: Activation, seed: u64) -> Self {
        let mut net = Self::zeros(sizes, activation);
        let mut rng = rng_for(seed, 0);
        for l in 0..net.n_layers() {
            let (n_out, n_in) = (net.sizes[l + 1], net.sizes[l]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            for w in net.weights[l].iter_mut() {
                *w = rng.gen_range(-bound..bound);
            }
        }
        net
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "need at least one layer");
        assert_eq!(sizes[0], 2, "input must be (t, x)");
        assert!(sizes.iter().all(|&n| n >= 1), "layer widths must be >= 1");
        let weights = (1..sizes.len())
            .map(|l| vec![0.0; sizes[l] * sizes[l - 1]])
            .collect();
        let biases = (1..sizes.len()).map(|l| vec![0.0; sizes[l]]).collect();
        Self {
            sizes: sizes.to_vec(),
            activation,
            weights,
            biases,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Number of weight/bias layers.
    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers())
            .map(|l| self.sizes[l + 1] * (self.sizes[l] + 1))
            .collect::<Vec<_>>()
            .iter()
            .sum()
    }

    /// Mutable access for hand-built test networks.
    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights[l], &mut self.biases[l])
    }

    /// Plain forward pass (values only) into `out` (resized to the output
    /// dimension).
    pub fn forward_into(&self, t: f64, x: f64, out: &mut Vec<f64>) {
        let mut cur = vec![t, x];
        let mut next = Vec::new();
        for l in 0..self.n_layers() {
            let (n_out, n_in) = (self.sizes[l + 1], self.sizes[l]);
            next.clear();
            next.resize(n_out, 0.0);
            for i in 0..n_out {
                let row = &self.weights[l][i * n_in..(i + 1) * n_in];
                let mut acc = self.biases[l][i];
                for j in 0..n_in {
                    acc += row[j] * cur[j];
                }
                next[i] = self.activation.value(acc);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        *out = cur;
    }

    /// Forward value of a single output.
    pub fn forward(&self, t: f64, x: f64, output: usize) -> f64 {
        let mut out = Vec::new();
        self.forward_into(t, x, &mut out);
        out[output]
    }

    /// Flattened parameter vector: for each layer, row-major weights then
    /// biases. This ordering is the contract for optimizer state and
    /// checkpoints.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.n_layers() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    pub fn load_flat(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.param_count(), "parameter count mismatch");
        let mut off = 0;
        for l in 0..self.n_layers() {
            let nw = self.weights[l].len();
            self.weights[l].copy_from_slice(&theta[off..off + nw]);
            off += nw;
            let nb = self.biases[l].len();
            self.biases[l].copy_from_slice(&theta[off..off + nb]);
            off += nb;
        }
    }

    pub fn from_flat(sizes: &[usize], activation: Activation, theta: &[f64]) -> Self {
        let mut net = Self::zeros(sizes, activation);
        net.load_flat(theta);
        net
    }

    /// Writes a checkpoint: one JSON header line (layer sizes + activation)
    /// followed by the flat parameters as little-endian f64 bytes.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = std::fs::File::create(path)?;
        let header = serde_json::json!({
            "layers": self.sizes,
            "activation": self.activation,
        });
        writeln!(f, "{header}")?;
        for v in self.flatten() {
            f.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| CheckpointError::Header("missing newline".into()))?;
        #[derive(Deserialize)]
        struct Header {
            layers: Vec<usize>,
            activation: Activation,
        }
        let header: Header = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        let body = &bytes[nl + 1..];
        if body.len() % 8 != 0 {
            return Err(CheckpointError::Header("truncated parameter block".into()));
        }
        let mut theta = Vec::with_capacity(body.len() / 8);
        for chunk in body.chunks_exact(8) {
            let mut raw = [0u8; 8];
            raw.copy_from_slice(chunk);
            theta.push(f64::from_le_bytes(raw));
        }
        let expected = Self::zeros(&header.layers, header.activation).param_count();
        if theta.len() != expected {
            return Err(CheckpointError::ParamCount {
                expected,
                found: theta.len(),
            });
        }
        Ok(Self::from_flat(&header.layers, header.activation, &theta))
    }
}

/// Convenience jet evaluation (allocates a scratch; batch code should reuse
/// a [`JetScratch`]).
pub fn eval_jet(mlp: &Mlp, t: f64, x: f64, output: usize) -> EvalJet {
    let mut scratch = JetScratch::new(mlp);
    scratch.forward(mlp, t, x);
    scratch.jet(output)
}

/// Per-point forward/backward state. Channels are stored structure-of-arrays
/// per layer: `[value; n][dt; n][dx; n][dxx; n]`.
#[derive(Debug, Clone)]
pub struct JetScratch {
    sizes: Vec<usize>,
    /// Post-activation channels per layer, index 0 = network input.
    act: Vec<Vec<f64>>,
    /// Pre-activation channels for layers 1..=L (index l-1).
    pre: Vec<Vec<f64>>,
    /// Ping-pong adjoint buffers for the backward sweep.
    adj_a: Vec<f64>,
    adj_b: Vec<f64>,
}

impl JetScratch {
    pub fn new(mlp: &Mlp) -> Self {
        let sizes = mlp.sizes.clone();
        let act = sizes.iter().map(|&n| vec![0.0; 4 * n]).collect();
        let pre = sizes[1..].iter().map(|&n| vec![0.0; 4 * n]).collect();
        let max = *sizes.iter().max().unwrap();
        Self {
            sizes,
            act,
            pre,
            adj_a: vec![0.0; 4 * max],
            adj_b: vec![0.0; 4 * max],
        }
    }

    /// Propagates the jet of the identity input `(t, x)` through every layer.
    pub fn forward(&mut self, mlp: &Mlp, t: f64, x: f64) {
        debug_assert_eq!(self.sizes, mlp.sizes);
        // Input jet: value (t, x); d/dt (1, 0); d/dx (0, 1); d²/dx² (0, 0).
        let a0 = &mut self.act[0];
        a0.copy_from_slice(&[t, x, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);

        for l in 0..mlp.n_layers() {
            let (n_out, n_in) = (self.sizes[l + 1], self.sizes[l]);
            let (head, tail) = self.act.split_at_mut(l + 1);
            let prev = &head[l];
            let post = &mut tail[0];
            let pre = &mut self.pre[l];
            let w = &mlp.weights[l];
            let b = &mlp.biases[l];

            for i in 0..n_out {
                let row = &w[i * n_in..(i + 1) * n_in];
                let mut v = b[i];
                let (mut vt, mut vx, mut vxx) = (0.0, 0.0, 0.0);
                for j in 0..n_in {
                    let wj = row[j];
                    v += wj * prev[j];
                    vt += wj * prev[n_in + j];
                    vx += wj * prev[2 * n_in + j];
                    vxx += wj * prev[3 * n_in + j];
                }
                pre[i] = v;
                pre[n_out + i] = vt;
                pre[2 * n_out + i] = vx;
                pre[3 * n_out + i] = vxx;

                let (s, s1, s2, _s3) = mlp.activation.jets(v);
                post[i] = s;
                post[n_out + i] = s1 * vt;
                post[2 * n_out + i] = s1 * vx;
                post[3 * n_out + i] = s2 * vx * vx + s1 * vxx;
            }
        }
    }

    /// Jet of output `idx` after [`JetScratch::forward`].
    pub fn jet(&self, idx: usize) -> EvalJet {
        let last = self.act.last().unwrap();
        let n = *self.sizes.last().unwrap();
        EvalJet {
            value: last[idx],
            dt: last[n + idx],
            dx: last[2 * n + idx],
            dxx: last[3 * n + idx],
        }
    }

    /// Reverse sweep: given adjoints of one output's jet channels, adds the
    /// parameter gradient of the seeded scalar into `grad` (flat layout as in
    /// [`Mlp::flatten`]). Must follow a `forward` at the same point.
    pub fn backward(&mut self, mlp: &Mlp, output: usize, seed: &EvalJet, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), mlp.param_count());
        let n_last = *self.sizes.last().unwrap();
        self.adj_a[..4 * n_last].fill(0.0);
        self.adj_a[output] = seed.value;
        self.adj_a[n_last + output] = seed.dt;
        self.adj_a[2 * n_last + output] = seed.dx;
        self.adj_a[3 * n_last + output] = seed.dxx;
        self.backward_sweep(mlp, grad);
    }

    /// As [`JetScratch::backward`] with one adjoint jet per output.
    pub fn backward_all(&mut self, mlp: &Mlp, seeds: &[EvalJet], grad: &mut [f64]) {
        let n_last = *self.sizes.last().unwrap();
        debug_assert_eq!(seeds.len(), n_last);
        for (i, s) in seeds.iter().enumerate() {
            self.adj_a[i] = s.value;
            self.adj_a[n_last + i] = s.dt;
            self.adj_a[2 * n_last + i] = s.dx;
            self.adj_a[3 * n_last + i] = s.dxx;
        }
        self.backward_sweep(mlp, grad);
    }

    fn backward_sweep(&mut self, mlp: &Mlp, grad: &mut [f64]) {
        // Parameter offsets of the last layer first.
        let mut offsets = Vec::with_capacity(mlp.n_layers());
        let mut off = 0;
        for l in 0..mlp.n_layers() {
            offsets.push(off);
            off += self.sizes[l + 1] * (self.sizes[l] + 1);
        }

        for l in (0..mlp.n_layers()).rev() {
            let (n_out, n_in) = (self.sizes[l + 1], self.sizes[l]);
            let pre = &self.pre[l];
            let prev = &self.act[l];
            let w = &mlp.weights[l];

            // Adjoints of the pre-activation channels from the stored jet
            // state. With a = σ(z), a_t = σ'z_t, a_x = σ'z_x,
            // a_xx = σ''z_x² + σ'z_xx:
            //   z̄    = ā σ' + ā_t σ'' z_t + ā_x σ'' z_x + ā_xx (σ''' z_x² + σ'' z_xx)
            //   z̄_t  = ā_t σ'
            //   z̄_x  = ā_x σ' + 2 ā_xx σ'' z_x
            //   z̄_xx = ā_xx σ'
            for i in 0..n_out {
                let (_, s1, s2, s3) = mlp.activation.jets(pre[i]);
                let (zt, zx, zxx) = (pre[n_out + i], pre[2 * n_out + i], pre[3 * n_out + i]);
                let a = self.adj_a[i];
                let at = self.adj_a[n_out + i];
                let ax = self.adj_a[2 * n_out + i];
                let axx = self.adj_a[3 * n_out + i];
                self.adj_b[i] = a * s1 + at * s2 * zt + ax * s2 * zx + axx * (s3 * zx * zx + s2 * zxx);
                self.adj_b[n_out + i] = at * s1;
                self.adj_b[2 * n_out + i] = ax * s1 + 2.0 * axx * s2 * zx;
                self.adj_b[3 * n_out + i] = axx * s1;
            }

            // Parameter gradients and the previous layer's adjoints.
            let goff = offsets[l];
            let (gw, gb) = grad[goff..goff + n_out * (n_in + 1)].split_at_mut(n_out * n_in);
            self.adj_a[..4 * n_in].fill(0.0);
            for i in 0..n_out {
                let zb = self.adj_b[i];
                let zbt = self.adj_b[n_out + i];
                let zbx = self.adj_b[2 * n_out + i];
                let zbxx = self.adj_b[3 * n_out + i];
                gb[i] += zb;
                let grow = &mut gw[i * n_in..(i + 1) * n_in];
                let wrow = &w[i * n_in..(i + 1) * n_in];
                for j in 0..n_in {
                    grow[j] += zb * prev[j]
                        + zbt * prev[n_in + j]
                        + zbx * prev[2 * n_in + j]
                        + zbxx * prev[3 * n_in + j];
                    let wij = wrow[j];
                    self.adj_a[j] += wij * zb;
                    self.adj_a[n_in + j] += wij * zbt;
                    self.adj_a[2 * n_in + j] += wij * zbx;
                    self.adj_a[3 * n_in + j] += wij * zbxx;
                }
            }
        }
    }
}
