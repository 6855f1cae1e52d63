//! A single LSTM cell with manual forward/backward.
//!
//! Gate order in the stacked weight matrices is input, forget, cell, output.

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LstmWeights {
    /// 4H × input_dim
    pub w_x: Array2<f64>,
    /// 4H × H
    pub w_h: Array2<f64>,
    /// 4H
    pub b: Array1<f64>,
}

impl LstmWeights {
    /// Biases start at zero except the forget gate, which starts at one.
    pub fn new(w_x: Array2<f64>, w_h: Array2<f64>) -> Self {
        let four_h = w_x.nrows();
        let h = four_h / 4;
        let mut b = Array1::zeros(four_h);
        b.slice_mut(s![h..2 * h]).fill(1.0);
        Self { w_x, w_h, b }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.ncols()
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub x: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub c_prev: Array1<f64>,
    pub i: Array1<f64>,
    pub f: Array1<f64>,
    pub g: Array1<f64>,
    pub o: Array1<f64>,
    pub c: Array1<f64>,
    pub tanh_c: Array1<f64>,
    pub h: Array1<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn lstm_step(
    w: &LstmWeights,
    x: &Array1<f64>,
    h_prev: &Array1<f64>,
    c_prev: &Array1<f64>,
) -> LstmCache {
    let h_dim = w.hidden();
    let z = w.w_x.dot(x) + w.w_h.dot(h_prev) + &w.b;
    let i = z.slice(s![0..h_dim]).mapv(sigmoid);
    let f = z.slice(s![h_dim..2 * h_dim]).mapv(sigmoid);
    let g = z.slice(s![2 * h_dim..3 * h_dim]).mapv(f64::tanh);
    let o = z.slice(s![3 * h_dim..4 * h_dim]).mapv(sigmoid);
    let c = &f * c_prev + &i * &g;
    let tanh_c = c.mapv(f64::tanh);
    let h = &o * &tanh_c;
    LstmCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        i,
        f,
        g,
        o,
        c,
        tanh_c,
        h,
    }
}

/// Backward through one step. `dh`/`dc_in` are gradients flowing into this
/// step's outputs; returns gradients for the input and the previous state,
/// and accumulates weight gradients into `grads`.
pub fn lstm_back(
    w: &LstmWeights,
    cache: &LstmCache,
    dh: &Array1<f64>,
    dc_in: &Array1<f64>,
    grads: &mut LstmWeights,
) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    let h_dim = w.hidden();
    let d_o = dh * &cache.tanh_c;
    let dc = dc_in + &(dh * &cache.o * cache.tanh_c.mapv(|t| 1.0 - t * t));
    let d_f = &dc * &cache.c_prev;
    let dc_prev = &dc * &cache.f;
    let d_i = &dc * &cache.g;
    let d_g = &dc * &cache.i;

    let mut dz = Array1::zeros(4 * h_dim);
    dz.slice_mut(s![0..h_dim])
        .assign(&(&d_i * &cache.i * cache.i.mapv(|v| 1.0 - v)));
    dz.slice_mut(s![h_dim..2 * h_dim])
        .assign(&(&d_f * &cache.f * cache.f.mapv(|v| 1.0 - v)));
    dz.slice_mut(s![2 * h_dim..3 * h_dim])
        .assign(&(&d_g * cache.g.mapv(|v| 1.0 - v * v)));
    dz.slice_mut(s![3 * h_dim..4 * h_dim])
        .assign(&(&d_o * &cache.o * cache.o.mapv(|v| 1.0 - v)));

    accumulate_outer(&mut grads.w_x, &dz, &cache.x);
    accumulate_outer(&mut grads.w_h, &dz, &cache.h_prev);
    grads.b += &dz;

    let dx = w.w_x.t().dot(&dz);
    let dh_prev = w.w_h.t().dot(&dz);
    (dx, dh_prev, dc_prev)
}

/// `target += a ⊗ b`
pub fn accumulate_outer(target: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (mut row, &av) in target.rows_mut().into_iter().zip(a.iter()) {
        if av != 0.0 {
            row.scaled_add(av, b);
        }
    }
}
