//! The compact scorer network and its training math.
//!
//! Architecture: a two-layer tanh encoder maps the 9 features to a latent
//! code, a linear head turns the code into a scalar score, and a two-layer
//! decoder (tanh then linear) reconstructs the input. Only the encoder and
//! head run at bid time; the decoder exists to regularize training.
//! Backpropagation is written out by hand and checked against central
//! finite differences in the tests.

use std::cell::Cell;

use thiserror::Error;

use crate::domain::FEATURE_DIM;
use crate::rng::Stream;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("bad model format: {0}")]
    Format(String),
}

/// Dense layer, row-major weights (rows = outputs, cols = inputs).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    /// Uniform init in +-1/sqrt(fan_in).
    pub fn init(rows: usize, cols: usize, stream: &mut Stream) -> Self {
        let bound = 1.0 / (cols as f64).sqrt();
        let mut layer = Self::zeros(rows, cols);
        for w in &mut layer.w {
            *w = stream.symmetric(bound);
        }
        layer
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = self.b.clone();
        for (out, row) in y.iter_mut().zip(self.w.chunks_exact(self.cols)) {
            *out += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        y
    }

    /// Accumulates dW += dy * x^T, db += dy; returns dL/dx.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.cols];
        for (((&dy_r, row), grow), gb) in dy
            .iter()
            .zip(self.w.chunks_exact(self.cols))
            .zip(grad.w.chunks_exact_mut(self.cols))
            .zip(&mut grad.b)
        {
            for (((g, &w_rc), &x_c), dx_c) in
                grow.iter_mut().zip(row).zip(x).zip(&mut dx)
            {
                *g += dy_r * x_c;
                *dx_c += w_rc * dy_r;
            }
            *gb += dy_r;
        }
        dx
    }

    fn step(&mut self, grad: &Dense, lr: f64) {
        for (w, g) in self.w.iter_mut().zip(&grad.w) {
            *w -= lr * g;
        }
        for (b, g) in self.b.iter_mut().zip(&grad.b) {
            *b -= lr * g;
        }
    }
}

fn tanh_vec(mut y: Vec<f64>) -> Vec<f64> {
    for v in &mut y {
        *v = v.tanh();
    }
    y
}

// dL/dpre = dL/dpost * (1 - post^2)
fn tanh_back(post: &[f64], dpost: &[f64]) -> Vec<f64> {
    post.iter()
        .zip(dpost)
        .map(|(a, d)| d * (1.0 - a * a))
        .collect()
}

/// Encoder, scoring head, and decoder weights.
#[derive(Debug, Clone)]
pub struct ScorerParams {
    pub enc1: Dense,
    pub enc2: Dense,
    pub head: Dense,
    pub dec1: Dense,
    pub dec2: Dense,
    encoder_evals: Cell<u64>,
    decoder_evals: Cell<u64>,
}

impl PartialEq for ScorerParams {
    fn eq(&self, other: &Self) -> bool {
        self.enc1 == other.enc1
            && self.enc2 == other.enc2
            && self.head == other.head
            && self.dec1 == other.dec1
            && self.dec2 == other.dec2
    }
}

struct EncodeTrace {
    a1: Vec<f64>,
    z: Vec<f64>,
}

struct DecodeTrace {
    d1: Vec<f64>,
    xhat: Vec<f64>,
}

impl ScorerParams {
    /// Random encoder/decoder, zero head: a fresh scorer returns exactly 0
    /// for every input until the first training round moves the head.
    pub fn init(hidden: usize, latent: usize, stream: &mut Stream) -> Self {
        Self {
            enc1: Dense::init(hidden, FEATURE_DIM, stream),
            enc2: Dense::init(latent, hidden, stream),
            head: Dense::zeros(1, latent),
            dec1: Dense::init(hidden, latent, stream),
            dec2: Dense::init(FEATURE_DIM, hidden, stream),
            encoder_evals: Cell::new(0),
            decoder_evals: Cell::new(0),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.enc1.rows
    }

    pub fn latent_dim(&self) -> usize {
        self.enc2.rows
    }

    pub fn encoder_evals(&self) -> u64 {
        self.encoder_evals.get()
    }

    pub fn decoder_evals(&self) -> u64 {
        self.decoder_evals.get()
    }

    fn encode(&self, x: &[f64; FEATURE_DIM]) -> EncodeTrace {
        self.encoder_evals.set(self.encoder_evals.get() + 1);
        let a1 = tanh_vec(self.enc1.forward(x));
        let z = tanh_vec(self.enc2.forward(&a1));
        EncodeTrace { a1, z }
    }

    fn decode(&self, z: &[f64]) -> DecodeTrace {
        self.decoder_evals.set(self.decoder_evals.get() + 1);
        let d1 = tanh_vec(self.dec1.forward(z));
        let xhat = self.dec2.forward(&d1);
        DecodeTrace { d1, xhat }
    }

    /// Score of a (normalized) feature vector: one encoder pass plus the
    /// linear head. The decoder is never touched here.
    pub fn score(&self, x: &[f64; FEATURE_DIM]) -> f64 {
        assert!(
            x.iter().all(|v| v.is_finite()),
            "scorer input must be finite"
        );
        let trace = self.encode(x);
        self.head.forward(&trace.z)[0]
    }

    fn layers(&self) -> [&Dense; 5] {
        [&self.enc1, &self.enc2, &self.head, &self.dec1, &self.dec2]
    }

    fn layers_mut(&mut self) -> [&mut Dense; 5] {
        [
            &mut self.enc1,
            &mut self.enc2,
            &mut self.head,
            &mut self.dec1,
            &mut self.dec2,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.w.len() + l.b.len())
            .sum()
    }

    pub fn get_param(&self, mut i: usize) -> f64 {
        for layer in self.layers() {
            if i < layer.w.len() {
                return layer.w[i];
            }
            i -= layer.w.len();
            if i < layer.b.len() {
                return layer.b[i];
            }
            i -= layer.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut i: usize, v: f64) {
        for layer in self.layers_mut() {
            if i < layer.w.len() {
                layer.w[i] = v;
                return;
            }
            i -= layer.w.len();
            if i < layer.b.len() {
                layer.b[i] = v;
                return;
            }
            i -= layer.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn apply_step(&mut self, grads: &Grads, lr: f64) {
        self.enc1.step(&grads.enc1, lr);
        self.enc2.step(&grads.enc2, lr);
        self.head.step(&grads.head, lr);
        self.dec1.step(&grads.dec1, lr);
        self.dec2.step(&grads.dec2, lr);
    }
}

/// Gradient accumulator, same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct Grads {
    pub enc1: Dense,
    pub enc2: Dense,
    pub head: Dense,
    pub dec1: Dense,
    pub dec2: Dense,
}

impl Grads {
    pub fn zeros_like(p: &ScorerParams) -> Self {
        Self {
            enc1: Dense::zeros(p.enc1.rows, p.enc1.cols),
            enc2: Dense::zeros(p.enc2.rows, p.enc2.cols),
            head: Dense::zeros(p.head.rows, p.head.cols),
            dec1: Dense::zeros(p.dec1.rows, p.dec1.cols),
            dec2: Dense::zeros(p.dec2.rows, p.dec2.cols),
        }
    }

    pub fn get_param(&self, mut i: usize) -> f64 {
        for layer in [&self.enc1, &self.enc2, &self.head, &self.dec1, &self.dec2] {
            if i < layer.w.len() {
                return layer.w[i];
            }
            i -= layer.w.len();
            if i < layer.b.len() {
                return layer.b[i];
            }
            i -= layer.b.len();
        }
        panic!("parameter index out of range");
    }
}

/// Numerically safe softplus: log(1 + exp(z)).
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Pairwise ranking loss for a preferred over b: log(1 + exp(f_a - f_b)).
/// Minimal when the preferred candidate scores far below the other.
pub fn pairwise_loss(f_a: f64, f_b: f64) -> f64 {
    softplus(f_a - f_b)
}

/// Backprop of `coeff * score(x)` into the encoder and head.
pub(crate) fn backprop_score(p: &ScorerParams, x: &[f64; FEATURE_DIM], coeff: f64, g: &mut Grads) -> f64 {
    let t = p.encode(x);
    let score = p.head.forward(&t.z)[0];
    let dz = p.head.backward(&t.z, &[coeff], &mut g.head);
    let dpre2 = tanh_back(&t.z, &dz);
    let da1 = p.enc2.backward(&t.a1, &dpre2, &mut g.enc2);
    let dpre1 = tanh_back(&t.a1, &da1);
    p.enc1.backward(x, &dpre1, &mut g.enc1);
    score
}

/// Reconstruction error of one vector (mean squared over components) and
/// backprop of `coeff` times it through decoder and encoder.
pub(crate) fn backprop_recon(p: &ScorerParams, x: &[f64; FEATURE_DIM], coeff: f64, g: &mut Grads) -> f64 {
    let t = p.encode(x);
    let d = p.decode(&t.z);
    let n = FEATURE_DIM as f64;
    let mut loss = 0.0;
    let mut dxhat = vec![0.0; FEATURE_DIM];
    for i in 0..FEATURE_DIM {
        let diff = d.xhat[i] - x[i];
        loss += diff * diff / n;
        dxhat[i] = coeff * 2.0 * diff / n;
    }
    let dd1 = p.dec2.backward(&d.d1, &dxhat, &mut g.dec2);
    let dpre_d1 = tanh_back(&d.d1, &dd1);
    let dz = p.dec1.backward(&t.z, &dpre_d1, &mut g.dec1);
    let dpre2 = tanh_back(&t.z, &dz);
    let da1 = p.enc2.backward(&t.a1, &dpre2, &mut g.enc2);
    let dpre1 = tanh_back(&t.a1, &da1);
    p.enc1.backward(x, &dpre1, &mut g.enc1);
    loss
}

/// Reconstruction error only (no gradients), for loss evaluation.
pub fn recon_loss(p: &ScorerParams, x: &[f64; FEATURE_DIM]) -> f64 {
    let t = p.encode(x);
    let d = p.decode(&t.z);
    let n = FEATURE_DIM as f64;
    d.xhat
        .iter()
        .zip(x)
        .map(|(xh, xv)| (xh - xv) * (xh - xv) / n)
        .sum()
}

/// Batch ranking objective:
/// mean pairwise loss + recon_weight * mean reconstruction error over the
/// 2 |pairs| involved vectors. Returns (total, pairwise mean, recon mean).
pub fn ranking_loss(
    p: &ScorerParams,
    xs: &[[f64; FEATURE_DIM]],
    pairs: &[(usize, usize)],
    recon_weight: f64,
) -> (f64, f64, f64) {
    assert!(!pairs.is_empty());
    let mut pw = 0.0;
    let mut rc = 0.0;
    for &(a, b) in pairs {
        pw += pairwise_loss(p.score(&xs[a]), p.score(&xs[b]));
        rc += recon_loss(p, &xs[a]) + recon_loss(p, &xs[b]);
    }
    let pw_mean = pw / pairs.len() as f64;
    let rc_mean = rc / (2 * pairs.len()) as f64;
    (pw_mean + recon_weight * rc_mean, pw_mean, rc_mean)
}

/// Gradients of [`ranking_loss`]; same return values plus the accumulated
/// gradient buffer.
pub fn ranking_loss_and_grads(
    p: &ScorerParams,
    xs: &[[f64; FEATURE_DIM]],
    pairs: &[(usize, usize)],
    recon_weight: f64,
) -> (f64, f64, f64, Grads) {
    assert!(!pairs.is_empty());
    let mut g = Grads::zeros_like(p);
    let n_pairs = pairs.len() as f64;
    let n_vecs = (2 * pairs.len()) as f64;
    let mut pw = 0.0;
    let mut rc = 0.0;
    for &(a, b) in pairs {
        // Two probe passes to read the scores, then the weighted backprop.
        let f_a = p.score(&xs[a]);
        let f_b = p.score(&xs[b]);
        pw += pairwise_loss(f_a, f_b);
        let s = sigmoid(f_a - f_b) / n_pairs;
        backprop_score(p, &xs[a], s, &mut g);
        backprop_score(p, &xs[b], -s, &mut g);
        rc += backprop_recon(p, &xs[a], recon_weight / n_vecs, &mut g);
        rc += backprop_recon(p, &xs[b], recon_weight / n_vecs, &mut g);
    }
    let pw_mean = pw / n_pairs;
    let rc_mean = rc / n_vecs;
    (pw_mean + recon_weight * rc_mean, pw_mean, rc_mean, g)
}

/// Batch regression objective: mean squared error of score vs target plus
/// recon_weight * mean reconstruction error over the same vectors.
pub fn regression_loss(
    p: &ScorerParams,
    xs: &[[f64; FEATURE_DIM]],
    targets: &[f64],
    recon_weight: f64,
) -> (f64, f64, f64) {
    assert_eq!(xs.len(), targets.len());
    assert!(!xs.is_empty());
    let mut mse = 0.0;
    let mut rc = 0.0;
    for (x, &o) in xs.iter().zip(targets) {
        let diff = p.score(x) - o;
        mse += diff * diff;
        rc += recon_loss(p, x);
    }
    let n = xs.len() as f64;
    (mse / n + recon_weight * rc / n, mse / n, rc / n)
}

pub fn regression_loss_and_grads(
    p: &ScorerParams,
    xs: &[[f64; FEATURE_DIM]],
    targets: &[f64],
    recon_weight: f64,
) -> (f64, f64, f64, Grads) {
    assert_eq!(xs.len(), targets.len());
    assert!(!xs.is_empty());
    let mut g = Grads::zeros_like(p);
    let n = xs.len() as f64;
    let mut mse = 0.0;
    let mut rc = 0.0;
    for (x, &o) in xs.iter().zip(targets) {
        let f = p.score(x);
        let diff = f - o;
        mse += diff * diff;
        backprop_score(p, x, 2.0 * diff / n, &mut g);
        rc += backprop_recon(p, x, recon_weight / n, &mut g);
    }
    (mse / n + recon_weight * rc / n, mse / n, rc / n, g)
}

/// Frozen per-feature standardization used at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: [f64; FEATURE_DIM],
    pub std: [f64; FEATURE_DIM],
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; FEATURE_DIM],
            std: [1.0; FEATURE_DIM],
        }
    }

    pub fn apply(&self, x: &[f64; FEATURE_DIM]) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_DIM {
            out[i] = (x[i] - self.mean[i]) / self.std[i];
        }
        out
    }
}

/// Welford accumulator over observed feature vectors.
#[derive(Debug, Clone, Default)]
pub struct RunningStats {
    count: u64,
    mean: [f64; FEATURE_DIM],
    m2: [f64; FEATURE_DIM],
}

impl RunningStats {
    pub fn update(&mut self, x: &[f64; FEATURE_DIM]) {
        self.count += 1;
        let n = self.count as f64;
        for ((&v, mean), m2) in x.iter().zip(&mut self.mean).zip(&mut self.m2) {
            let d = v - *mean;
            *mean += d / n;
            *m2 += d * (v - *mean);
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Snapshot as a frozen normalizer; degenerate features keep unit scale.
    pub fn snapshot(&self) -> Normalizer {
        if self.count < 2 {
            return Normalizer::identity();
        }
        let mut norm = Normalizer {
            mean: self.mean,
            std: [1.0; FEATURE_DIM],
        };
        for i in 0..FEATURE_DIM {
            let var = self.m2[i] / (self.count - 1) as f64;
            if var > 1e-12 {
                norm.std[i] = var.sqrt();
            }
        }
        norm
    }
}

/// Deployable model: parameters plus the normalizer frozen at the most
/// recent training round.
#[derive(Debug, Clone, PartialEq)]
pub struct Scorer {
    pub params: ScorerParams,
    pub norm: Normalizer,
}

impl Scorer {
    pub fn init(hidden: usize, latent: usize, stream: &mut Stream) -> Self {
        Self {
            params: ScorerParams::init(hidden, latent, stream),
            norm: Normalizer::identity(),
        }
    }

    pub fn score(&self, raw: &[f64; FEATURE_DIM]) -> f64 {
        self.params.score(&self.norm.apply(raw))
    }

    /// Flat text serialization: shapes, normalizer, then row-major weights.
    /// f64 round-trips exactly through the shortest decimal representation.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("allocsim-model v1\n");
        out.push_str(&format!(
            "dims {} {}\n",
            self.params.hidden_dim(),
            self.params.latent_dim()
        ));
        let fmt = |xs: &[f64]| {
            xs.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        out.push_str(&format!("norm_mean {}\n", fmt(&self.norm.mean)));
        out.push_str(&format!("norm_std {}\n", fmt(&self.norm.std)));
        for (name, layer) in [
            ("enc1", &self.params.enc1),
            ("enc2", &self.params.enc2),
            ("head", &self.params.head),
            ("dec1", &self.params.dec1),
            ("dec2", &self.params.dec2),
        ] {
            out.push_str(&format!("layer {name} {} {}\n", layer.rows, layer.cols));
            out.push_str(&format!("w {}\n", fmt(&layer.w)));
            out.push_str(&format!("b {}\n", fmt(&layer.b)));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ModelIoError> {
        let bad = |msg: &str| ModelIoError::Format(msg.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("allocsim-model v1") {
            return Err(bad("missing or unsupported header"));
        }
        let parse_floats = |line: &str, tag: &str| -> Result<Vec<f64>, ModelIoError> {
            let rest = line
                .strip_prefix(tag)
                .ok_or_else(|| bad(&format!("expected `{tag}` line")))?;
            rest.split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| bad(&format!("bad float {t}: {e}")))
                })
                .collect()
        };
        let dims_line = lines.next().ok_or_else(|| bad("missing dims"))?;
        let dims = parse_floats(dims_line, "dims ")?;
        if dims.len() != 2 {
            return Err(bad("dims must have two entries"));
        }
        let (hidden, latent) = (dims[0] as usize, dims[1] as usize);

        let to_arr = |v: Vec<f64>| -> Result<[f64; FEATURE_DIM], ModelIoError> {
            v.try_into()
                .map_err(|_| bad("normalizer must have 9 entries"))
        };
        let mean = to_arr(parse_floats(
            lines.next().ok_or_else(|| bad("missing norm_mean"))?,
            "norm_mean ",
        )?)?;
        let std = to_arr(parse_floats(
            lines.next().ok_or_else(|| bad("missing norm_std"))?,
            "norm_std ",
        )?)?;

        let mut read_layer = |name: &str, rows: usize, cols: usize| -> Result<Dense, ModelIoError> {
            let header = lines.next().ok_or_else(|| bad("missing layer header"))?;
            if header != format!("layer {name} {rows} {cols}") {
                return Err(bad(&format!("unexpected layer header: {header}")));
            }
            let w = parse_floats(lines.next().ok_or_else(|| bad("missing weights"))?, "w ")?;
            let b = parse_floats(lines.next().ok_or_else(|| bad("missing biases"))?, "b ")?;
            if w.len() != rows * cols || b.len() != rows {
                return Err(bad(&format!("layer {name} has wrong element count")));
            }
            Ok(Dense { rows, cols, w, b })
        };
        let enc1 = read_layer("enc1", hidden, FEATURE_DIM)?;
        let enc2 = read_layer("enc2", latent, hidden)?;
        let head = read_layer("head", 1, latent)?;
        let dec1 = read_layer("dec1", hidden, latent)?;
        let dec2 = read_layer("dec2", FEATURE_DIM, hidden)?;
        Ok(Self {
            params: ScorerParams {
                enc1,
                enc2,
                head,
                dec1,
                dec2,
                encoder_evals: Cell::new(0),
                decoder_evals: Cell::new(0),
            },
            norm: Normalizer { mean, std },
        })
    }
}
