//! Stacked (optionally bidirectional) LSTM encoder with a classification head
//! and a regression head sharing one representation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{backward_direction, run_direction, CellTrace, LstmLayerWeights};
use super::matrix::{dot, Matrix};
use super::{multitask_loss, sigmoid, Parameters, PROB_CLAMP};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Two stacked LSTM layers feeding the heads directly.
    Simple,
    /// Three stacked bidirectional LSTM layers, then two rectified dense layers.
    #[serde(alias = "bidi")]
    Bidirectional,
}

impl Architecture {
    pub fn lstm_layers(self) -> usize {
        match self {
            Architecture::Simple => 2,
            Architecture::Bidirectional => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Simple => "simple",
            Architecture::Bidirectional => "bidi",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "simple" => Ok(Architecture::Simple),
            "bidi" | "bidirectional" => Ok(Architecture::Bidirectional),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub window_len: usize,
    /// Hidden units per LSTM layer (per direction).
    pub units: Vec<usize>,
    pub dense_units: Vec<usize>,
    pub dropout_rate: f64,
}

impl ModelConfig {
    /// Builds a config for `arch`; the bidirectional dense layers take the
    /// width of the last recurrent layer.
    pub fn new(arch: Architecture, window_len: usize, units: &[usize], dropout_rate: f64) -> Result<Self> {
        let dense_units = match arch {
            Architecture::Simple => vec![],
            Architecture::Bidirectional => {
                let last = *units.last().unwrap_or(&0);
                vec![last, last]
            }
        };
        let cfg = Self {
            arch,
            window_len,
            units: units.to_vec(),
            dense_units,
            dropout_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let want = self.arch.lstm_layers();
        if self.units.len() != want {
            return Err(Error::Config(format!(
                "{} architecture needs {want} unit counts, got {}",
                self.arch,
                self.units.len()
            )));
        }
        let want_dense = match self.arch {
            Architecture::Simple => 0,
            Architecture::Bidirectional => 2,
        };
        if self.dense_units.len() != want_dense {
            return Err(Error::Config(format!(
                "{} architecture needs {want_dense} dense layers",
                self.arch
            )));
        }
        if self.window_len == 0 || self.units.iter().chain(&self.dense_units).any(|&u| u == 0) {
            return Err(Error::Config("window length and layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        match self.arch {
            Architecture::Simple => 1,
            Architecture::Bidirectional => 2,
        }
    }

    /// Width of the vector read out of the last recurrent layer.
    pub fn readout_size(&self) -> usize {
        self.units.last().copied().unwrap_or(0) * self.directions()
    }

    pub fn repr_size(&self) -> usize {
        self.dense_units.last().copied().unwrap_or_else(|| self.readout_size())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentLayer {
    pub forward: LstmLayerWeights,
    pub backward: Option<LstmLayerWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub w: Vec<f64>,
    pub b: f64,
}

/// All trainable weights. Gradients and optimizer moments use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layers: Vec<RecurrentLayer>,
    pub dense: Vec<DenseLayer>,
    pub head_clf: Head,
    pub head_reg: Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active; masks are drawn from this seed.
    Train { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Output {
    pub p_outbreak: f64,
    /// Regression output on the normalized scale.
    pub y_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub y_clf: u8,
    pub y_reg: f64,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    forward: Vec<CellTrace>,
    backward: Option<Vec<CellTrace>>,
    /// Dropout on this layer's output sequence, present for all but the last layer.
    out_mask: Option<Vec<Vec<f64>>>,
}

/// Forward-pass cache for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    training: bool,
    layers: Vec<LayerTrace>,
    readout_mask: Option<Vec<f64>>,
    /// (input, pre-activation) per dense layer
    dense: Vec<(Vec<f64>, Vec<f64>)>,
    repr: Vec<f64>,
    pub output: Output,
}

impl ForwardTrace {
    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Smallest |pre-activation| over the ReLU dense layers, `None` without
    /// dense layers. Near zero the output is not differentiable.
    pub fn relu_margin(&self) -> Option<f64> {
        self.dense
            .iter()
            .flat_map(|(_, z)| z.iter())
            .map(|v| v.abs())
            .reduce(f64::min)
    }
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> impl FnMut(usize, usize) -> f64 + '_ {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    move |_, _| rng.random_range(-limit..=limit)
}

fn init_lstm(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> LstmLayerWeights {
    let w_x = Matrix::from_fn(4 * hidden, input, glorot(rng, input, 4 * hidden));
    let w_h = Matrix::from_fn(4 * hidden, hidden, glorot(rng, hidden, 4 * hidden));
    let mut b = vec![0.0; 4 * hidden];
    b[hidden..2 * hidden].fill(1.0);
    LstmLayerWeights { w_x, w_h, b }
}

/// Uniform fan-in/fan-out initialization with forget-gate bias 1.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs = config.directions();
    let mut input = 1;
    let mut layers = Vec::with_capacity(config.units.len());
    for &h in &config.units {
        let forward = init_lstm(&mut rng, input, h);
        let backward = (dirs == 2).then(|| init_lstm(&mut rng, input, h));
        layers.push(RecurrentLayer { forward, backward });
        input = h * dirs;
    }
    let mut dense = Vec::new();
    let mut width = config.readout_size();
    for &u in &config.dense_units {
        dense.push(DenseLayer {
            w: Matrix::from_fn(u, width, glorot(&mut rng, width, u)),
            b: vec![0.0; u],
        });
        width = u;
    }
    let head = |rng: &mut ChaCha8Rng| {
        let mut f = glorot(rng, width, 1);
        Head {
            w: (0..width).map(|k| f(k, 0)).collect(),
            b: 0.0,
        }
    };
    let head_clf = head(&mut rng);
    let head_reg = head(&mut rng);
    Ok(ModelParams {
        config: config.clone(),
        layers,
        dense,
        head_clf,
        head_reg,
    })
}

fn dropout_mask(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    (0..n)
        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
        .collect()
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

impl ModelParams {
    /// Same structure with every weight zero.
    pub fn zeros_like(&self) -> ModelParams {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Checks every tensor against the declared configuration.
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        if self.layers.len() != cfg.units.len() || self.dense.len() != cfg.dense_units.len() {
            return Err(Error::Shape("layer count does not match configuration".into()));
        }
        let mut input = 1;
        for (k, (layer, &h)) in self.layers.iter().zip(&cfg.units).enumerate() {
            let dirs: Vec<&LstmLayerWeights> =
                std::iter::once(&layer.forward).chain(layer.backward.as_ref()).collect();
            if dirs.len() != cfg.directions() {
                return Err(Error::Shape(format!("layer {k}: wrong number of directions")));
            }
            for w in dirs {
                w.check_shapes()?;
                if w.hidden_size() != h || w.input_size() != input {
                    return Err(Error::Shape(format!(
                        "layer {k}: expected {input}→{h}, found {}→{}",
                        w.input_size(),
                        w.hidden_size()
                    )));
                }
            }
            input = h * cfg.directions();
        }
        let mut width = cfg.readout_size();
        for (k, (d, &u)) in self.dense.iter().zip(&cfg.dense_units).enumerate() {
            if d.w.rows != u || d.w.cols != width || d.b.len() != u || d.w.data.len() != u * width {
                return Err(Error::Shape(format!("dense layer {k}")));
            }
            width = u;
        }
        if self.head_clf.w.len() != width || self.head_reg.w.len() != width {
            return Err(Error::Shape("head width".into()));
        }
        if let Some((name, _)) = self
            .tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite(name));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64], mode: Mode) -> Result<ForwardTrace> {
        let cfg = &self.config;
        if x.len() != cfg.window_len {
            return Err(Error::Shape(format!(
                "model expects a window of {}, got {}",
                cfg.window_len,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model input window".into()));
        }
        let (training, mut rng) = match mode {
            Mode::Train { seed } => (true, Some(ChaCha8Rng::seed_from_u64(seed))),
            Mode::Eval => (false, None),
        };
        let rate = cfg.dropout_rate;
        let mut mask_rng = rng.as_mut().filter(|_| rate > 0.0);

        let mut seq: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
        let n_layers = self.layers.len();
        let mut traces = Vec::with_capacity(n_layers);
        let mut readout = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            let (fh, ft) = run_direction(&layer.forward, &seq, false)?;
            let (out, bt, read) = match &layer.backward {
                Some(bw) => {
                    let (bh, bt) = run_direction(bw, &seq, true)?;
                    let read = concat(&fh[fh.len() - 1], &bh[0]);
                    let out: Vec<Vec<f64>> = fh.iter().zip(&bh).map(|(a, b)| concat(a, b)).collect();
                    (out, Some(bt), read)
                }
                None => {
                    let read = fh[fh.len() - 1].clone();
                    (fh, None, read)
                }
            };
            let last = k + 1 == n_layers;
            let out_mask = match (&mut mask_rng, last) {
                (Some(r), false) => Some(
                    out.iter()
                        .map(|h| dropout_mask(r, h.len(), rate))
                        .collect::<Vec<_>>(),
                ),
                _ => None,
            };
            if last {
                readout = read;
            } else {
                seq = match &out_mask {
                    Some(m) => out.iter().zip(m).map(|(h, mk)| hadamard(h, mk)).collect(),
                    None => out,
                };
            }
            traces.push(LayerTrace {
                forward: ft,
                backward: bt,
                out_mask,
            });
        }

        let readout_mask = mask_rng.as_mut().map(|r| dropout_mask(r, readout.len(), rate));
        let mut a = match &readout_mask {
            Some(m) => hadamard(&readout, m),
            None => readout,
        };
        let mut dense = Vec::with_capacity(self.dense.len());
        for d in &self.dense {
            let mut z = d.b.clone();
            d.w.matvec_add(&a, &mut z);
            let next = z.iter().map(|v| v.max(0.0)).collect();
            dense.push((std::mem::replace(&mut a, next), z));
        }
        let logit = dot(&self.head_clf.w, &a) + self.head_clf.b;
        let y_hat = dot(&self.head_reg.w, &a) + self.head_reg.b;
        Ok(ForwardTrace {
            training,
            layers: traces,
            readout_mask,
            dense,
            repr: a,

            output: Output {
                p_outbreak: sigmoid(logit),
                y_hat,
            },
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<Output> {
        Ok(self.forward(x, Mode::Eval)?.output)
    }

    pub fn loss(&self, x: &[f64], target: Target, mode: Mode) -> Result<f64> {
        let out = self.forward(x, mode)?.output;
        Ok(multitask_loss(out.p_outbreak, out.y_hat, target.y_clf, target.y_reg))
    }

    /// Exact gradient of the per-sample multitask loss.
    pub fn backward(&self, trace: &ForwardTrace, target: Target) -> Result<ModelParams> {
        let mut grad = self.zeros_like();
        self.backward_into(trace, target, &mut grad)?;
        Ok(grad)
    }

    /// Accumulates the per-sample gradient into `grad`.
    pub fn backward_into(&self, trace: &ForwardTrace, target: Target, grad: &mut ModelParams) -> Result<()> {
        let cfg = &self.config;
        if !trace.training && cfg.dropout_rate > 0.0 {
            return Err(Error::Data(
                "trace has no dropout masks; run forward in train mode".into(),
            ));
        }
        if trace.layers.len() != self.layers.len() || trace.dense.len() != self.dense.len() {
            return Err(Error::Shape("trace does not belong to these parameters".into()));
        }

        let p = trace.output.p_outbreak;
        let clamped = !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p);
        let d_logit = if clamped { 0.0 } else { p - f64::from(target.y_clf) };
        let d_yhat = 2.0 * (trace.output.y_hat - target.y_reg);

        let width = trace.repr.len();
        for k in 0..width {
            grad.head_clf.w[k] += d_logit * trace.repr[k];
            grad.head_reg.w[k] += d_yhat * trace.repr[k];
        }
        grad.head_clf.b += d_logit;
        grad.head_reg.b += d_yhat;
        let mut da: Vec<f64> = (0..width)
            .map(|k| d_logit * self.head_clf.w[k] + d_yhat * self.head_reg.w[k])
            .collect();

        for (j, d) in self.dense.iter().enumerate().rev() {
            let (a_in, z) = &trace.dense[j];
            let dz: Vec<f64> = da
                .iter()
                .zip(z)
                .map(|(g, &zv)| if zv > 0.0 { *g } else { 0.0 })
                .collect();
            grad.dense[j].w.add_outer(&dz, a_in);
            for (gb, v) in grad.dense[j].b.iter_mut().zip(&dz) {
                *gb += v;
            }
            let mut next = vec![0.0; a_in.len()];
            d.w.t_matvec_add(&dz, &mut next);
            da = next;
        }
        if let Some(m) = &trace.readout_mask {
            da = hadamard(&da, m);
        }

        // Seed the last layer's per-timestep output gradients from the readout.
        let n = cfg.window_len;
        let last = self.layers.len() - 1;
        let h_last = cfg.units[last];
        let mut d_fwd = vec![vec![0.0; h_last]; n];
        let mut d_bwd = self.layers[last].backward.as_ref().map(|_| vec![vec![0.0; h_last]; n]);
        d_fwd[n - 1].copy_from_slice(&da[..h_last]);
        if let Some(db) = &mut d_bwd {
            db[0].copy_from_slice(&da[h_last..]);
        }

        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let lt = &trace.layers[k];
            let gl = &mut grad.layers[k];
            let mut d_in = backward_direction(&layer.forward, &lt.forward, &d_fwd, false, &mut gl.forward);
            if let (Some(bw), Some(bt), Some(db), Some(gb)) =
                (&layer.backward, &lt.backward, &d_bwd, gl.backward.as_mut())
            {
                let d_in_b = backward_direction(bw, bt, db, true, gb);
                for (a, b) in d_in.iter_mut().zip(&d_in_b) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
            }
            if k == 0 {
                break;
            }
            // d_in is the gradient w.r.t. the (masked) output of layer k-1
            let below = &trace.layers[k - 1];
            if let Some(mask) = &below.out_mask {
                for (g, m) in d_in.iter_mut().zip(mask) {
                    for (x, y) in g.iter_mut().zip(m) {
                        *x *= y;
                    }
                }
            }
            let h = cfg.units[k - 1];
            if self.layers[k - 1].backward.is_some() {
                d_fwd = d_in.iter().map(|g| g[..h].to_vec()).collect();
                d_bwd = Some(d_in.iter().map(|g| g[h..].to_vec()).collect());
            } else {
                d_fwd = d_in;
                d_bwd = None;
            }
        }
        Ok(())
    }

    /// Adds `other` into `self`, tensor by tensor.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= s;
            }
        }
    }
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            let dirs = std::iter::once(("fwd", &layer.forward))
                .chain(layer.backward.as_ref().map(|b| ("bwd", b)));
            for (tag, w) in dirs {
                out.push((format!("lstm.{k}.{tag}.w_x"), &w.w_x.data));
                out.push((format!("lstm.{k}.{tag}.w_h"), &w.w_h.data));
                out.push((format!("lstm.{k}.{tag}.b"), &w.b));
            }
        }
        for (k, d) in self.dense.iter().enumerate() {
            out.push((format!("dense.{k}.w"), &d.w.data));
            out.push((format!("dense.{k}.b"), &d.b));
        }
        out.push(("head_clf.w".into(), &self.head_clf.w));
        out.push(("head_clf.b".into(), std::slice::from_ref(&self.head_clf.b)));
        out.push(("head_reg.w".into(), &self.head_reg.w));
        out.push(("head_reg.b".into(), std::slice::from_ref(&self.head_reg.b)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (k, layer) in self.layers.iter_mut().enumerate() {
            let dirs = std::iter::once(("fwd", &mut layer.forward))
                .chain(layer.backward.as_mut().map(|b| ("bwd", b)));
            for (tag, w) in dirs {
                out.push((format!("lstm.{k}.{tag}.w_x"), &mut w.w_x.data));
                out.push((format!("lstm.{k}.{tag}.w_h"), &mut w.w_h.data));
                out.push((format!("lstm.{k}.{tag}.b"), &mut w.b));
            }
        }
        for (k, d) in self.dense.iter_mut().enumerate() {
            out.push((format!("dense.{k}.w"), &mut d.w.data));
            out.push((format!("dense.{k}.b"), &mut d.b));
        }
        out.push(("head_clf.w".into(), &mut self.head_clf.w));
        out.push(("head_clf.b".into(), std::slice::from_mut(&mut self.head_clf.b)));
        out.push(("head_reg.w".into(), &mut self.head_reg.w));
        out.push(("head_reg.b".into(), std::slice::from_mut(&mut self.head_reg.b)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(arch: Architecture, dropout: f64, seed: u64) -> ModelParams {
        let units: &[usize] = match arch {
            Architecture::Simple => &[4, 4],
            Architecture::Bidirectional => &[4, 4, 4],
        };
        init_params(&ModelConfig::new(arch, 5, units, dropout).unwrap(), seed).unwrap()
    }

    const X: [f64; 5] = [0.1, 0.5, -0.3, 0.8, 0.2];

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(Architecture::Simple, 5, &[4], 0.0).is_err());
        assert!(ModelConfig::new(Architecture::Bidirectional, 5, &[4, 4], 0.0).is_err());
        assert!(ModelConfig::new(Architecture::Simple, 5, &[4, 0], 0.0).is_err());
        assert!(ModelConfig::new(Architecture::Simple, 5, &[4, 4], 1.0).is_err());
        let c = ModelConfig::new(Architecture::Bidirectional, 5, &[3, 4, 6], 0.2).unwrap();
        assert_eq!(c.dense_units, vec![6, 6]);
        assert_eq!(c.readout_size(), 12);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = toy(Architecture::Bidirectional, 0.2, 1);
        assert_eq!(a, toy(Architecture::Bidirectional, 0.2, 1));
        assert_ne!(a, toy(Architecture::Bidirectional, 0.2, 2));
        a.validate().unwrap();
        for layer in &a.layers {
            for w in std::iter::once(&layer.forward).chain(layer.backward.as_ref()) {
                let h = w.hidden_size();
                assert!(w.b[h..2 * h].iter().all(|&v| v == 1.0));
                assert!(w.b[..h].iter().chain(&w.b[2 * h..]).all(|&v| v == 0.0));
                let lim_x = (6.0 / (w.input_size() + 4 * h) as f64).sqrt();
                let lim_h = (6.0 / (5 * h) as f64).sqrt();
                assert!(w.w_x.data.iter().all(|v| v.abs() <= lim_x));
                assert!(w.w_h.data.iter().all(|v| v.abs() <= lim_h));
            }
        }
    }

    #[test]
    fn eval_is_deterministic_and_dropout_free() {
        let m = toy(Architecture::Simple, 0.3, 4);
        let a = m.forward(&X, Mode::Eval).unwrap().output;
        let b = m.forward(&X, Mode::Eval).unwrap().output;
        assert_eq!(a.p_outbreak.to_bits(), b.p_outbreak.to_bits());
        assert_eq!(a.y_hat.to_bits(), b.y_hat.to_bits());
        assert!(a.p_outbreak > 0.0 && a.p_outbreak < 1.0);

        let m0 = toy(Architecture::Simple, 0.0, 4);
        assert_eq!(
            m0.forward(&X, Mode::Train { seed: 9 }).unwrap().output,
            m0.forward(&X, Mode::Eval).unwrap().output
        );
    }

    #[test]
    fn train_mode_is_seeded() {
        let m = toy(Architecture::Bidirectional, 0.5, 4);
        let a = m.forward(&X, Mode::Train { seed: 1 }).unwrap().output;
        assert_eq!(a, m.forward(&X, Mode::Train { seed: 1 }).unwrap().output);
        assert_ne!(a, m.forward(&X, Mode::Train { seed: 2 }).unwrap().output);
    }

    #[test]
    fn bidirectional_readout_is_two_pass() {
        // single-layer oracle: first layer readout == [fwd(x)_T ; fwd_bw(reverse x)_T]
        let m = toy(Architecture::Bidirectional, 0.0, 8);
        let seq: Vec<Vec<f64>> = X.iter().map(|&v| vec![v]).collect();
        let rev: Vec<Vec<f64>> = seq.iter().rev().cloned().collect();
        let l0 = &m.layers[0];
        let (f, _) = run_direction(&l0.forward, &seq, false).unwrap();
        let (b, _) = run_direction(l0.backward.as_ref().unwrap(), &rev, false).unwrap();
        let layer1_in: Vec<Vec<f64>> = (0..5).map(|t| concat(&f[t], &b[4 - t])).collect();

        // carry the oracle through the remaining layers, dense stack and heads
        let mut seq = layer1_in;
        let mut read = vec![];
        for layer in &m.layers[1..] {
            let rev: Vec<Vec<f64>> = seq.iter().rev().cloned().collect();
            let (f, _) = run_direction(&layer.forward, &seq, false).unwrap();
            let (b, _) = run_direction(layer.backward.as_ref().unwrap(), &rev, false).unwrap();
            read = concat(&f[4], &b[4]);
            seq = (0..5).map(|t| concat(&f[t], &b[4 - t])).collect();
        }
        let mut a = read;
        for d in &m.dense {
            let mut z = d.b.clone();
            d.w.matvec_add(&a, &mut z);
            a = z.into_iter().map(|v| v.max(0.0)).collect();
        }
        let y = dot(&m.head_reg.w, &a) + m.head_reg.b;
        let p = sigmoid(dot(&m.head_clf.w, &a) + m.head_clf.b);
        let out = m.predict(&X).unwrap();
        assert!((out.y_hat - y).abs() < 1e-14);
        assert!((out.p_outbreak - p).abs() < 1e-14);
    }

    #[test]
    fn shape_errors() {
        let m = toy(Architecture::Simple, 0.0, 1);
        assert!(matches!(m.forward(&[0.0; 4], Mode::Eval), Err(Error::Shape(_))));
        let mut bad = m.clone();
        bad.head_reg.w.pop();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn backward_needs_train_trace_when_dropping_out() {
        let m = toy(Architecture::Simple, 0.2, 1);
        let tr = m.forward(&X, Mode::Eval).unwrap();
        let t = Target { y_clf: 1, y_reg: 0.5 };
        assert!(m.backward(&tr, t).is_err());
        let tr = m.forward(&X, Mode::Train { seed: 3 }).unwrap();
        assert!(m.backward(&tr, t).is_ok());
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let mut m = toy(Architecture::Simple, 0.0, 2);
        m.head_clf.w.fill(0.0);
        m.head_clf.b = 50.0; // p saturates past the clamp
        m.head_reg.w.fill(0.0);
        m.head_reg.b = 0.37;
        let tr = m.forward(&X, Mode::Train { seed: 0 }).unwrap();
        let g = m.backward(&tr, Target { y_clf: 1, y_reg: 0.37 }).unwrap();
        assert!(g.norm() < 1e-6);
    }

    #[test]
    fn residual_scaling() {
        let m = toy(Architecture::Simple, 0.0, 6);
        let tr = m.forward(&X, Mode::Eval).unwrap();
        let y = tr.output.y_hat;
        let g1 = m.backward(&tr, Target { y_clf: 0, y_reg: y - 0.1 }).unwrap();
        let g2 = m.backward(&tr, Target { y_clf: 0, y_reg: y - 0.2 }).unwrap();
        let g0 = m.backward(&tr, Target { y_clf: 0, y_reg: y }).unwrap();
        // regression contribution doubles with the residual
        assert!((g2.head_reg.b - 2.0 * g1.head_reg.b).abs() < 1e-12);
        for ((_, a), ((_, b), (_, c))) in g1.tensors().iter().zip(g2.tensors().iter().zip(g0.tensors().iter())) {
            for ((x1, x2), x0) in a.iter().zip(b.iter()).zip(c.iter()) {
                assert!(((x2 - x0) - 2.0 * (x1 - x0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tensor_views_are_consistent() {
        let mut m = toy(Architecture::Bidirectional, 0.1, 3);
        let n = m.num_params();
        let names: Vec<String> = m.tensors().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = m.tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        assert_eq!(m.zeros_like().num_params(), n);
        assert_eq!(m.zeros_like().norm(), 0.0);
    }
}
