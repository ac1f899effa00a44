//! LSTM and GRU cells with hand-derived backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

/// Hidden state after one step. `c` is empty for GRU cells.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(kind: CellKind, hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: match kind {
                CellKind::Lstm => vec![0.0; hidden],
                CellKind::Gru => Vec::new(),
            },
        }
    }
}

/// Gate stacks: LSTM rows are `[input; forget; candidate; output]`, GRU rows
/// are `[reset; update; candidate]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub kind: CellKind,
    /// Input weights, `gates*hidden x input`.
    pub w: Tensor,
    /// Recurrent weights, `gates*hidden x hidden`.
    pub u: Tensor,
    /// Bias, `gates*hidden x 1`.
    pub b: Tensor,
}

/// Activations saved by a forward step for the backward pass.
#[derive(Clone, Debug)]
pub struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-nonlinearity gate values, laid out like the gate stack.
    gates: Vec<f64>,
    /// LSTM: tanh(c). GRU: U_n h_prev (pre-reset).
    aux: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl CellParams {
    pub fn uniform<R: Rng>(kind: CellKind, prefix: &str, input: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        let g = kind.gates() * hidden;
        Self {
            kind,
            w: Tensor::uniform(format!("{prefix}.w"), g, input, scale, rng),
            u: Tensor::uniform(format!("{prefix}.u"), g, hidden, scale, rng),
            b: Tensor::uniform(format!("{prefix}.b"), g, 1, scale, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            kind: self.kind,
            w: self.w.zeros_like(),
            u: self.u.zeros_like(),
            b: self.b.zeros_like(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.cols
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols
    }

    pub fn tensors(&self) -> [&Tensor; 3] {
        [&self.w, &self.u, &self.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.w, &mut self.u, &mut self.b]
    }

    fn check(&self, x: &[f64], prev: &RecurrentState) -> Result<()> {
        let h = self.hidden_dim();
        let g = self.kind.gates() * h;
        let consistent = self.w.rows == g && self.u.rows == g && self.b.rows == g && self.b.cols == 1;
        if !consistent {
            return Err(Error::ShapeMismatch("cell weight stacks disagree".into()));
        }
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!("input width {} != {}", x.len(), self.input_dim())));
        }
        let c_ok = match self.kind {
            CellKind::Lstm => prev.c.len() == h,
            CellKind::Gru => prev.c.is_empty() || prev.c.len() == h,
        };
        if prev.h.len() != h || !c_ok {
            return Err(Error::ShapeMismatch(format!("state width {} != {h}", prev.h.len())));
        }
        Ok(())
    }

    /// One forward step, returning the new state and the backward cache.
    pub fn step(&self, x: &[f64], prev: &RecurrentState) -> Result<(RecurrentState, StepCache)> {
        self.check(x, prev)?;
        Ok(match self.kind {
            CellKind::Lstm => self.lstm_forward(x, prev),
            CellKind::Gru => self.gru_forward(x, prev),
        })
    }

    fn lstm_forward(&self, x: &[f64], prev: &RecurrentState) -> (RecurrentState, StepCache) {
        let n = self.hidden_dim();
        let mut z = self.b.data.clone();
        self.w.matvec_acc(x, &mut z);
        self.u.matvec_acc(&prev.h, &mut z);
        for (k, v) in z.iter_mut().enumerate() {
            *v = if k / n == 2 { v.tanh() } else { sigmoid(*v) };
        }
        let mut c = vec![0.0; n];
        let mut tc = vec![0.0; n];
        let mut h = vec![0.0; n];
        for j in 0..n {
            let (i, f, g, o) = (z[j], z[n + j], z[2 * n + j], z[3 * n + j]);
            c[j] = f * prev.c[j] + i * g;
            tc[j] = c[j].tanh();
            h[j] = o * tc[j];
        }
        let cache = StepCache {
            x: x.to_vec(),
            h_prev: prev.h.clone(),
            c_prev: prev.c.clone(),
            gates: z,
            aux: tc,
        };
        (RecurrentState { h, c }, cache)
    }

    fn gru_forward(&self, x: &[f64], prev: &RecurrentState) -> (RecurrentState, StepCache) {
        let n = self.hidden_dim();
        let mut zx = self.b.data.clone();
        self.w.matvec_acc(x, &mut zx);
        let mut zh = vec![0.0; 3 * n];
        self.u.matvec_acc(&prev.h, &mut zh);
        let mut gates = vec![0.0; 3 * n];
        let mut h = vec![0.0; n];
        for j in 0..n {
            let r = sigmoid(zx[j] + zh[j]);
            let u = sigmoid(zx[n + j] + zh[n + j]);
            let cand = (zx[2 * n + j] + r * zh[2 * n + j]).tanh();
            gates[j] = r;
            gates[n + j] = u;
            gates[2 * n + j] = cand;
            h[j] = (1.0 - u) * cand + u * prev.h[j];
        }
        let cache = StepCache {
            x: x.to_vec(),
            h_prev: prev.h.clone(),
            c_prev: Vec::new(),
            gates,
            aux: zh[2 * n..].to_vec(),
        };
        (RecurrentState { h, c: Vec::new() }, cache)
    }

    /// Backpropagates one step.
    ///
    /// `dh`/`dc` are the loss gradients w.r.t. the step's output state (`dc`
    /// is ignored for GRU). Parameter gradients accumulate into `grad`, the
    /// input gradient into `dx`. Returns gradients w.r.t. the previous state.
    pub fn step_backward(
        &self,
        cache: &StepCache,
        dh: &[f64],
        dc: &[f64],
        grad: &mut CellParams,
        dx: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        match self.kind {
            CellKind::Lstm => self.lstm_backward(cache, dh, dc, grad, dx),
            CellKind::Gru => self.gru_backward(cache, dh, grad, dx),
        }
    }

    fn lstm_backward(
        &self,
        cache: &StepCache,
        dh: &[f64],
        dc_in: &[f64],
        grad: &mut CellParams,
        dx: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let n = self.hidden_dim();
        let z = &cache.gates;
        let mut dz = vec![0.0; 4 * n];
        let mut dc_prev = vec![0.0; n];
        for j in 0..n {
            let (i, f, g, o) = (z[j], z[n + j], z[2 * n + j], z[3 * n + j]);
            let tc = cache.aux[j];
            let dcj = dc_in.get(j).copied().unwrap_or(0.0) + dh[j] * o * (1.0 - tc * tc);
            dz[j] = dcj * g * i * (1.0 - i);
            dz[n + j] = dcj * cache.c_prev[j] * f * (1.0 - f);
            dz[2 * n + j] = dcj * i * (1.0 - g * g);
            dz[3 * n + j] = dh[j] * tc * o * (1.0 - o);
            dc_prev[j] = dcj * f;
        }
        grad.w.outer_acc(&dz, &cache.x);
        grad.u.outer_acc(&dz, &cache.h_prev);
        for (gb, d) in grad.b.data.iter_mut().zip(&dz) {
            *gb += d;
        }
        self.w.matvec_t_acc(&dz, dx);
        let mut dh_prev = vec![0.0; n];
        self.u.matvec_t_acc(&dz, &mut dh_prev);
        (dh_prev, dc_prev)
    }

    fn gru_backward(
        &self,
        cache: &StepCache,
        dh: &[f64],
        grad: &mut CellParams,
        dx: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let n = self.hidden_dim();
        let g = &cache.gates;
        // Input-side pre-activation grads and recurrent-side (U h) grads.
        let mut dzx = vec![0.0; 3 * n];
        let mut dzh = vec![0.0; 3 * n];
        let mut dh_prev = vec![0.0; n];
        for j in 0..n {
            let (r, u, cand) = (g[j], g[n + j], g[2 * n + j]);
            let dcand = dh[j] * (1.0 - u) * (1.0 - cand * cand);
            let du = dh[j] * (cache.h_prev[j] - cand) * u * (1.0 - u);
            let dr = dcand * cache.aux[j] * r * (1.0 - r);
            dzx[j] = dr;
            dzx[n + j] = du;
            dzx[2 * n + j] = dcand;
            dzh[j] = dr;
            dzh[n + j] = du;
            dzh[2 * n + j] = dcand * r;
            dh_prev[j] = dh[j] * u;
        }
        grad.w.outer_acc(&dzx, &cache.x);
        grad.u.outer_acc(&dzh, &cache.h_prev);
        for (gb, d) in grad.b.data.iter_mut().zip(&dzx) {
            *gb += d;
        }
        self.w.matvec_t_acc(&dzx, dx);
        self.u.matvec_t_acc(&dzh, &mut dh_prev);
        (dh_prev, Vec::new())
    }
}

/// One LSTM step.
pub fn lstm_step(params: &CellParams, x: &[f64], prev: &RecurrentState) -> Result<RecurrentState> {
    if params.kind != CellKind::Lstm {
        return Err(Error::ShapeMismatch("expected LSTM parameters".into()));
    }
    Ok(params.step(x, prev)?.0)
}

/// One GRU step.
pub fn gru_step(params: &CellParams, x: &[f64], prev: &RecurrentState) -> Result<RecurrentState> {
    if params.kind != CellKind::Gru {
        return Err(Error::ShapeMismatch("expected GRU parameters".into()));
    }
    Ok(params.step(x, prev)?.0)
}
