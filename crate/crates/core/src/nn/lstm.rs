//! LSTM cell and single-direction layer with exact backpropagation through time.
//!
//! Gate rows are stacked in the order input, forget, cell candidate, output:
//! rows `0..H` drive `i`, `H..2H` drive `f`, `2H..3H` drive `g`, `3H..4H` drive `o`.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::sigmoid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerWeights {
    /// 4H × D
    pub w_x: Matrix,
    /// 4H × H
    pub w_h: Matrix,
    /// 4H
    pub b: Vec<f64>,
}

impl LstmLayerWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: Matrix::zeros(4 * hidden, input),
            w_h: Matrix::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_x.cols
    }

    pub fn hidden_size(&self) -> usize {
        self.w_h.cols
    }

    pub fn check_shapes(&self) -> Result<()> {
        let h = self.hidden_size();
        if self.w_x.rows != 4 * h || self.w_h.rows != 4 * h || self.b.len() != 4 * h {
            return Err(Error::Shape(format!(
                "LSTM weights: w_x {}x{}, w_h {}x{}, b {} do not describe hidden size {h}",
                self.w_x.rows,
                self.w_x.cols,
                self.w_h.rows,
                self.w_h.cols,
                self.b.len()
            )));
        }
        if self.w_x.data.len() != self.w_x.rows * self.w_x.cols
            || self.w_h.data.len() != self.w_h.rows * self.w_h.cols
        {
            return Err(Error::Shape("LSTM weight buffer length".into()));
        }
        Ok(())
    }
}

/// Everything one cell step needs for its backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTrace {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// One LSTM step: returns `(h_t, c_t, trace)`.
pub fn lstm_cell_forward(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    w: &LstmLayerWeights,
) -> Result<(Vec<f64>, Vec<f64>, CellTrace)> {
    let h = w.hidden_size();
    if x.len() != w.input_size() || h_prev.len() != h || c_prev.len() != h {
        return Err(Error::Shape(format!(
            "cell expects x[{}], h[{h}], c[{h}]; got x[{}], h[{}], c[{}]",
            w.input_size(),
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    if x.iter().chain(h_prev).chain(c_prev).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LSTM cell input".into()));
    }
    Ok(cell_step(x, h_prev, c_prev, w))
}

fn cell_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    w: &LstmLayerWeights,
) -> (Vec<f64>, Vec<f64>, CellTrace) {
    let h = w.hidden_size();
    let mut z = w.b.clone();
    w.w_x.matvec_add(x, &mut z);
    w.w_h.matvec_add(h_prev, &mut z);

    let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| v.tanh()).collect();
    let o: Vec<f64> = z[3 * h..].iter().map(|&v| sigmoid(v)).collect();
    let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h_t: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
    let trace = CellTrace {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        c: c.clone(),
        tanh_c,
    };
    (h_t, c, trace)
}

/// Backward through one cell step. Accumulates weight gradients into `grad`
/// and returns `(dx, dh_prev, dc_prev)`.
fn cell_backward(
    w: &LstmLayerWeights,
    tr: &CellTrace,
    dh: &[f64],
    dc_next: &[f64],
    grad: &mut LstmLayerWeights,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let h = w.hidden_size();
    let mut dz = vec![0.0; 4 * h];
    let mut dc_prev = vec![0.0; h];
    for k in 0..h {
        let (i, f, g, o, tc) = (tr.i[k], tr.f[k], tr.g[k], tr.o[k], tr.tanh_c[k]);
        let d_o = dh[k] * tc;
        let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
        let d_i = dc * g;
        let d_g = dc * i;
        let d_f = dc * tr.c_prev[k];
        dc_prev[k] = dc * f;
        dz[k] = d_i * i * (1.0 - i);
        dz[h + k] = d_f * f * (1.0 - f);
        dz[2 * h + k] = d_g * (1.0 - g * g);
        dz[3 * h + k] = d_o * o * (1.0 - o);
    }
    grad.w_x.add_outer(&dz, &tr.x);
    grad.w_h.add_outer(&dz, &tr.h_prev);
    for (gb, d) in grad.b.iter_mut().zip(&dz) {
        *gb += d;
    }
    let mut dx = vec![0.0; w.input_size()];
    w.w_x.t_matvec_add(&dz, &mut dx);
    let mut dh_prev = vec![0.0; h];
    w.w_h.t_matvec_add(&dz, &mut dh_prev);
    (dx, dh_prev, dc_prev)
}

/// Forward pass of one direction over a sequence.
///
/// Returns hidden states aligned with input time (so for `reverse` the state
/// at index 0 is the last one computed) and step traces in processing order.
pub fn run_direction(
    w: &LstmLayerWeights,
    xs: &[Vec<f64>],
    reverse: bool,
) -> Result<(Vec<Vec<f64>>, Vec<CellTrace>)> {
    let h = w.hidden_size();
    let n = xs.len();
    let mut hs = vec![Vec::new(); n];
    let mut traces = Vec::with_capacity(n);
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    for step in 0..n {
        let t = if reverse { n - 1 - step } else { step };
        let x = &xs[t];
        if x.len() != w.input_size() {
            return Err(Error::Shape(format!(
                "layer expects inputs of width {}, got {}",
                w.input_size(),
                x.len()
            )));
        }
        let (h_t, c_t, tr) = cell_step(x, &h_prev, &c_prev, w);
        hs[t] = h_t.clone();
        traces.push(tr);
        h_prev = h_t;
        c_prev = c_t;
    }
    Ok((hs, traces))
}

/// BPTT for one direction. `dhs` is aligned with input time like the output
/// of [`run_direction`]; the returned input gradients are too.
pub fn backward_direction(
    w: &LstmLayerWeights,
    traces: &[CellTrace],
    dhs: &[Vec<f64>],
    reverse: bool,
    grad: &mut LstmLayerWeights,
) -> Vec<Vec<f64>> {
    let h = w.hidden_size();
    let n = traces.len();
    let mut dxs = vec![Vec::new(); n];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for step in (0..n).rev() {
        let t = if reverse { n - 1 - step } else { step };
        let dh: Vec<f64> = dhs[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
        let (dx, dh_prev, dc_prev) = cell_backward(w, &traces[step], &dh, &dc_next, grad);
        dxs[t] = dx;
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    dxs
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_weights(d: usize, h: usize, seed: u64) -> LstmLayerWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = || rng.random_range(-0.8..0.8);
        LstmLayerWeights {
            w_x: Matrix::from_fn(4 * h, d, |_, _| u()),
            w_h: Matrix::from_fn(4 * h, h, |_, _| u()),
            b: (0..4 * h).map(|_| u()).collect(),
        }
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let w = LstmLayerWeights::zeros(2, 3);
        let (h, c, tr) = lstm_cell_forward(&[0.0; 2], &[0.0; 3], &[0.0; 3], &w).unwrap();
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);
        assert!(tr.i.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut w = random_weights(2, 3, 5);
        for k in 0..3 {
            w.b[k] = -50.0; // input gate closed
            w.b[3 + k] = 50.0; // forget gate open
        }
        let c_prev = [0.7, -1.3, 2.0];
        let (_, c, _) = lstm_cell_forward(&[0.0; 2], &[0.0; 3], &c_prev, &w).unwrap();
        for (a, b) in c.iter().zip(&c_prev) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_straight_line_cell() {
        let (d, h) = (2, 3);
        let w = random_weights(d, h, 17);
        let x = [0.3, -1.1];
        let h_prev = [0.2, -0.5, 0.9];
        let c_prev = [1.0, 0.1, -0.4];
        let (h_t, c_t, _) = lstm_cell_forward(&x, &h_prev, &c_prev, &w).unwrap();

        // independent evaluation of the four gate equations
        let logistic = |v: f64| 1.0 / (1.0 + (-v).exp());
        let affine = |row: usize| {
            let mut s = w.b[row];
            for j in 0..d {
                s += w.w_x.data[row * d + j] * x[j];
            }
            for j in 0..h {
                s += w.w_h.data[row * h + j] * h_prev[j];
            }
            s
        };
        for k in 0..h {
            let ig = logistic(affine(k));
            let fg = logistic(affine(h + k));
            let gg = affine(2 * h + k).tanh();
            let og = logistic(affine(3 * h + k));
            let c = fg * c_prev[k] + ig * gg;
            assert!((c_t[k] - c).abs() < 1e-14);
            assert!((h_t[k] - og * c.tanh()).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        let w = LstmLayerWeights::zeros(2, 3);
        assert!(matches!(
            lstm_cell_forward(&[0.0; 3], &[0.0; 3], &[0.0; 3], &w),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            lstm_cell_forward(&[f64::NAN, 0.0], &[0.0; 3], &[0.0; 3], &w),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn hidden_state_bounded() {
        let w = random_weights(1, 4, 3);
        let xs: Vec<Vec<f64>> = (0..30).map(|t| vec![(t as f64 * 0.7).sin() * 20.0]).collect();
        let (hs, traces) = run_direction(&w, &xs, false).unwrap();
        for (h, tr) in hs.iter().zip(&traces) {
            assert!(h.iter().all(|v| v.abs() < 1.0));
            assert!(tr.tanh_c.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn reverse_direction_is_forward_on_reversed_input() {
        let w = random_weights(2, 3, 9);
        let xs: Vec<Vec<f64>> = (0..6).map(|t| vec![t as f64 * 0.1, -(t as f64) * 0.2]).collect();
        let (rev, _) = run_direction(&w, &xs, true).unwrap();
        let flipped: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let (fwd, _) = run_direction(&w, &flipped, false).unwrap();
        for t in 0..6 {
            assert_eq!(rev[t], fwd[5 - t]);
        }
    }
}
