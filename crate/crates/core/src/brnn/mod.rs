//! Bidirectional LSTM with multiplicative integration and a linear output.
//!
//! Each gate's pre-activation combines the input projection `Wx` and the
//! recurrent projection `Uh` as
//!
//! ```text
//! a = alpha * Wx * Uh + beta1 * Uh + beta2 * Wx + b
//! ```
//!
//! (elementwise). Input, forget and output gates use the logistic function,
//! the candidate uses tanh, and the cell follows the usual LSTM update. One
//! direction reads the sequence forwards, the other backwards, and the
//! prediction at each step is `v . [h_fwd; h_bwd] + c`.

mod file;
mod train;

pub use file::{read_model, write_model, ModelFile};
pub use train::{train, train_from, EpochLog, Rmsprop, TrainConfig, TrainLog};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Result};

pub const DEFAULT_HIDDEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Forward, Direction::Backward];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "fwd",
            Direction::Backward => "bwd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Output,
    Candidate,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Candidate];

    pub fn name(self) -> &'static str {
        match self {
            Gate::Input => "input",
            Gate::Forget => "forget",
            Gate::Output => "output",
            Gate::Candidate => "candidate",
        }
    }
}

/// Offsets of one gate's tensors inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct GateSlots {
    w: usize,
    u: usize,
    alpha: usize,
    beta1: usize,
    beta2: usize,
    b: usize,
}

/// Shape bookkeeping for the flat parameter vector. Per direction, per gate:
/// `W` (hidden x input, row-major), `U` (hidden x hidden), `alpha`, `beta1`,
/// `beta2`, `b`; then the output weights `v` (2 * hidden) and bias `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub input_dim: usize,
    pub hidden: usize,
}

impl Layout {
    fn gate_size(&self) -> usize {
        let h = self.hidden;
        h * self.input_dim + h * h + 4 * h
    }

    fn slots(&self, dir: Direction, gate: Gate) -> GateSlots {
        let h = self.hidden;
        let base = (dir.index() * 4 + gate as usize) * self.gate_size();
        let w = base;
        let u = w + h * self.input_dim;
        let alpha = u + h * h;
        GateSlots { w, u, alpha, beta1: alpha + h, beta2: alpha + 2 * h, b: alpha + 3 * h }
    }

    fn v(&self) -> usize {
        8 * self.gate_size()
    }

    fn c(&self) -> usize {
        self.v() + 2 * self.hidden
    }

    pub fn len(&self) -> usize {
        self.c() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Named tensors as (name, offset, rows, cols), in storage order.
    pub fn tensors(&self) -> Vec<(String, usize, usize, usize)> {
        let (h, d) = (self.hidden, self.input_dim);
        let mut out = Vec::new();
        for dir in Direction::BOTH {
            for gate in Gate::ALL {
                let s = self.slots(dir, gate);
                let p = format!("{}.{}", dir.name(), gate.name());
                out.push((format!("{p}.W"), s.w, h, d));
                out.push((format!("{p}.U"), s.u, h, h));
                out.push((format!("{p}.alpha"), s.alpha, 1, h));
                out.push((format!("{p}.beta1"), s.beta1, 1, h));
                out.push((format!("{p}.beta2"), s.beta2, 1, h));
                out.push((format!("{p}.b"), s.b, 1, h));
            }
        }
        out.push(("out.v".into(), self.v(), 1, 2 * h));
        out.push(("out.c".into(), self.c(), 1, 1));
        out
    }
}

/// All model weights in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layout: Layout,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let layout = Layout { input_dim, hidden };
        Self { layout, values: vec![0.0; layout.len()] }
    }

    /// Rebuilds parameters from a flat vector produced by [`flatten`](Self::flatten).
    pub fn unflatten(input_dim: usize, hidden: usize, values: Vec<f64>) -> Result<Self> {
        let layout = Layout { input_dim, hidden };
        if values.len() != layout.len() {
            return Err(domain(format!("expected {} parameters, got {}", layout.len(), values.len())));
        }
        Ok(Self { layout, values })
    }

    pub fn flatten(&self) -> &[f64] {
        &self.values
    }

    pub fn flatten_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.layout.hidden
    }

    pub fn output_weights(&self) -> &[f64] {
        let v = self.layout.v();
        &self.values[v..v + 2 * self.layout.hidden]
    }

    pub fn output_weights_mut(&mut self) -> &mut [f64] {
        let v = self.layout.v();
        let h = self.layout.hidden;
        &mut self.values[v..v + 2 * h]
    }

    pub fn output_bias(&self) -> f64 {
        self.values[self.layout.c()]
    }

    pub fn set_output_bias(&mut self, c: f64) {
        let i = self.layout.c();
        self.values[i] = c;
    }

    /// Mutable view of one named tensor, e.g. `fwd.forget.b`.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let (_, off, r, c) = self.layout.tensors().into_iter().find(|t| t.0 == name)?;
        Some(&mut self.values[off..off + r * c])
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let (_, off, r, c) = self.layout.tensors().into_iter().find(|t| t.0 == name)?;
        Some(&self.values[off..off + r * c])
    }

    /// Swaps the forward and backward direction blocks.
    pub fn swap_directions(&self) -> ModelParams {
        let mut out = self.clone();
        let block = 4 * self.layout.gate_size();
        let (dirs, _) = out.values.split_at_mut(2 * block);
        let (f, b) = dirs.split_at_mut(block);
        f.swap_with_slice(b);
        let h = self.layout.hidden;
        out.output_weights_mut().rotate_left(h);
        out
    }
}

/// Glorot-uniform `W` and `U`, `alpha = 1`, `beta1 = beta2 = 0.5`, zero biases
/// except a forget-gate bias of 1, Glorot-uniform output weights, zero output
/// bias.
pub fn init_model(input_dim: usize, hidden: usize, seed: u64) -> ModelParams {
    let mut p = ModelParams::zeros(input_dim, hidden);
    let layout = p.layout;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = hidden;
    let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
    for dir in Direction::BOTH {
        for gate in Gate::ALL {
            let s = layout.slots(dir, gate);
            let sw = glorot(input_dim, h);
            for x in &mut p.values[s.w..s.u] {
                *x = rng.random_range(-sw..=sw);
            }
            let su = glorot(h, h);
            for x in &mut p.values[s.u..s.alpha] {
                *x = rng.random_range(-su..=su);
            }
            p.values[s.alpha..s.beta1].fill(1.0);
            p.values[s.beta1..s.b].fill(0.5);
            let bias = if gate == Gate::Forget { 1.0 } else { 0.0 };
            p.values[s.b..s.b + h].fill(bias);
        }
    }
    let sv = glorot(2 * h, 1);
    for x in p.output_weights_mut() {
        *x = rng.random_range(-sv..=sv);
    }
    p
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one direction over a sequence, in processing order.
struct DirTrace {
    /// Per step, per gate: input projection Wx.
    wx: Vec<[Vec<f64>; 4]>,
    /// Per step, per gate: recurrent projection Uh.
    uh: Vec<[Vec<f64>; 4]>,
    /// Per step, per gate: activation after the nonlinearity.
    act: Vec<[Vec<f64>; 4]>,
    cell: Vec<Vec<f64>>,
    tanh_cell: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

fn matvec(m: &[f64], x: &[f64], rows: usize, out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = m[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

fn run_direction(p: &ModelParams, dir: Direction, xs: &[&[f64]]) -> DirTrace {
    let h = p.layout.hidden;
    let vals = &p.values;
    let steps = xs.len();
    let mut tr = DirTrace {
        wx: Vec::with_capacity(steps),
        uh: Vec::with_capacity(steps),
        act: Vec::with_capacity(steps),
        cell: Vec::with_capacity(steps),
        tanh_cell: Vec::with_capacity(steps),
        h: Vec::with_capacity(steps),
    };
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    for x in xs {
        let mut wx: [Vec<f64>; 4] = Default::default();
        let mut uh: [Vec<f64>; 4] = Default::default();
        let mut act: [Vec<f64>; 4] = Default::default();
        for gate in Gate::ALL {
            let s = p.layout.slots(dir, gate);
            let g = gate as usize;
            wx[g] = vec![0.0; h];
            uh[g] = vec![0.0; h];
            matvec(&vals[s.w..s.u], x, h, &mut wx[g]);
            matvec(&vals[s.u..s.alpha], &h_prev, h, &mut uh[g]);
            act[g] = (0..h)
                .map(|j| {
                    let a = vals[s.alpha + j] * wx[g][j] * uh[g][j]
                        + vals[s.beta1 + j] * uh[g][j]
                        + vals[s.beta2 + j] * wx[g][j]
                        + vals[s.b + j];
                    if gate == Gate::Candidate {
                        a.tanh()
                    } else {
                        sigmoid(a)
                    }
                })
                .collect();
        }
        let cell: Vec<f64> = (0..h).map(|j| act[1][j] * c_prev[j] + act[0][j] * act[3][j]).collect();
        let tanh_cell: Vec<f64> = cell.iter().map(|c| c.tanh()).collect();
        let hid: Vec<f64> = (0..h).map(|j| act[2][j] * tanh_cell[j]).collect();
        h_prev.clone_from(&hid);
        c_prev.clone_from(&cell);
        tr.wx.push(wx);
        tr.uh.push(uh);
        tr.act.push(act);
        tr.cell.push(cell);
        tr.tanh_cell.push(tanh_cell);
        tr.h.push(hid);
    }
    tr
}

/// One cell update of `dir` without keeping intermediate activations.
pub(crate) fn cell_step(
    p: &ModelParams,
    dir: Direction,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    h_out: &mut [f64],
    c_out: &mut [f64],
) {
    let h = p.layout.hidden;
    let d = p.layout.input_dim;
    let vals = &p.values;
    let slots = Gate::ALL.map(|g| p.layout.slots(dir, g));
    for j in 0..h {
        let mut act = [0.0; 4];
        for (gi, s) in slots.iter().enumerate() {
            let wx: f64 = vals[s.w + j * d..s.w + (j + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum();
            let uh: f64 = vals[s.u + j * h..s.u + (j + 1) * h].iter().zip(h_prev).map(|(a, b)| a * b).sum();
            let a = vals[s.alpha + j] * wx * uh + vals[s.beta1 + j] * uh + vals[s.beta2 + j] * wx + vals[s.b + j];
            act[gi] = if gi == Gate::Candidate as usize { a.tanh() } else { sigmoid(a) };
        }
        let c = act[1] * c_prev[j] + act[0] * act[3];
        c_out[j] = c;
        h_out[j] = act[2] * c.tanh();
    }
}

/// Hidden and cell states of one direction, indexed by sequence position.
pub(crate) fn direction_states(p: &ModelParams, dir: Direction, seq: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let h = p.layout.hidden;
    let n = seq.len();
    let mut hs = vec![vec![0.0; h]; n];
    let mut cs = vec![vec![0.0; h]; n];
    let zeros = vec![0.0; h];
    let order: Vec<usize> = match dir {
        Direction::Forward => (0..n).collect(),
        Direction::Backward => (0..n).rev().collect(),
    };
    let mut prev: Option<usize> = None;
    for t in order {
        let (hp, cp) = match prev {
            Some(q) => (hs[q].clone(), cs[q].clone()),
            None => (zeros.clone(), zeros.clone()),
        };
        let (mut ho, mut co) = (vec![0.0; h], vec![0.0; h]);
        cell_step(p, dir, &seq[t], &hp, &cp, &mut ho, &mut co);
        hs[t] = ho;
        cs[t] = co;
        prev = Some(t);
    }
    (hs, cs)
}

/// Output at one step from the two directions' hidden states.
pub(crate) fn readout(p: &ModelParams, h_fwd: &[f64], h_bwd: &[f64]) -> f64 {
    let h = p.layout.hidden;
    let v = p.output_weights();
    p.output_bias() + (0..h).map(|j| v[j] * h_fwd[j] + v[h + j] * h_bwd[j]).sum::<f64>()
}

struct Trace {
    fwd: DirTrace,
    bwd: DirTrace,
    y: Vec<f64>,
}

fn check_inputs(p: &ModelParams, seq: &[Vec<f64>]) -> Result<()> {
    for (t, row) in seq.iter().enumerate() {
        if row.len() != p.layout.input_dim {
            return Err(domain(format!("frame {t}: expected {} inputs, got {}", p.layout.input_dim, row.len())));
        }
    }
    Ok(())
}

fn run(p: &ModelParams, seq: &[Vec<f64>]) -> Trace {
    let fwd_in: Vec<&[f64]> = seq.iter().map(Vec::as_slice).collect();
    let bwd_in: Vec<&[f64]> = seq.iter().rev().map(Vec::as_slice).collect();
    let fwd = run_direction(p, Direction::Forward, &fwd_in);
    let bwd = run_direction(p, Direction::Backward, &bwd_in);
    let n = seq.len();
    let y = (0..n).map(|t| readout(p, &fwd.h[t], &bwd.h[n - 1 - t])).collect();
    Trace { fwd, bwd, y }
}

/// One prediction per time step. Hidden and cell states start at zero.
pub fn forward(p: &ModelParams, seq: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_inputs(p, seq)?;
    let (hf, _) = direction_states(p, Direction::Forward, seq);
    let (hb, _) = direction_states(p, Direction::Backward, seq);
    Ok(hf.iter().zip(&hb).map(|(a, b)| readout(p, a, b)).collect())
}

/// [`forward`] with rejection of non-finite inputs.
pub fn predict(p: &ModelParams, seq: &[Vec<f64>]) -> Result<Vec<f64>> {
    for (t, row) in seq.iter().enumerate() {
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(domain(format!("non-finite input at frame {t}, feature {j}")));
        }
    }
    forward(p, seq)
}

/// Backpropagates `dh` (gradient w.r.t. each step's hidden output, in
/// processing order) through one direction, accumulating into `grad`.
fn backprop_direction(
    p: &ModelParams,
    dir: Direction,
    xs: &[&[f64]],
    tr: &DirTrace,
    dh_out: &[Vec<f64>],
    grad: &mut [f64],
) {
    let h = p.layout.hidden;
    let d = p.layout.input_dim;
    let vals = &p.values;
    let slots: Vec<GateSlots> = Gate::ALL.iter().map(|&g| p.layout.slots(dir, g)).collect();
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let zeros = vec![0.0; h];
    let mut da: [Vec<f64>; 4] = Default::default();
    for s in (0..xs.len()).rev() {
        let act = &tr.act[s];
        let c_prev = if s > 0 { &tr.cell[s - 1] } else { &zeros };
        let h_prev = if s > 0 { &tr.h[s - 1] } else { &zeros };
        for g in &mut da {
            g.clear();
            g.resize(h, 0.0);
        }
        for j in 0..h {
            let dh = dh_out[s][j] + dh_next[j];
            let (i, f, o, g) = (act[0][j], act[1][j], act[2][j], act[3][j]);
            let tc = tr.tanh_cell[s][j];
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            da[0][j] = dc * g * i * (1.0 - i);
            da[1][j] = dc * c_prev[j] * f * (1.0 - f);
            da[2][j] = dh * tc * o * (1.0 - o);
            da[3][j] = dc * i * (1.0 - g * g);
            dc_next[j] = dc * f;
        }
        dh_next.fill(0.0);
        for (gi, sl) in slots.iter().enumerate() {
            let wx = &tr.wx[s][gi];
            let uh = &tr.uh[s][gi];
            for j in 0..h {
                let a = da[gi][j];
                if a == 0.0 {
                    continue;
                }
                let alpha = vals[sl.alpha + j];
                grad[sl.alpha + j] += a * wx[j] * uh[j];
                grad[sl.beta1 + j] += a * uh[j];
                grad[sl.beta2 + j] += a * wx[j];
                grad[sl.b + j] += a;
                let dwx = a * (alpha * uh[j] + vals[sl.beta2 + j]);
                let duh = a * (alpha * wx[j] + vals[sl.beta1 + j]);
                let x = xs[s];
                let wrow = sl.w + j * d;
                for k in 0..d {
                    grad[wrow + k] += dwx * x[k];
                }
                let urow = sl.u + j * h;
                for k in 0..h {
                    grad[urow + k] += duh * h_prev[k];
                    dh_next[k] += duh * vals[urow + k];
                }
            }
        }
    }
}

/// A training example: one input row and one target per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

/// Mean squared error over every time step of every example, and its exact
/// gradient with respect to the flattened parameters.
pub fn loss_and_gradient(p: &ModelParams, batch: &[&Example]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(domain("empty batch"));
    }
    let total: usize = batch.iter().map(|e| e.targets.len()).sum();
    let mut grad = vec![0.0; p.values.len()];
    let mut sse = 0.0;
    let h = p.layout.hidden;
    let v_off = p.layout.v();
    let c_off = p.layout.c();
    for ex in batch {
        if ex.inputs.len() != ex.targets.len() {
            return Err(domain(format!("{} input rows but {} targets", ex.inputs.len(), ex.targets.len())));
        }
        check_inputs(p, &ex.inputs)?;
        let n = ex.inputs.len();
        if n == 0 {
            continue;
        }
        let tr = run(p, &ex.inputs);
        let v = p.output_weights();
        let mut dh_f = vec![vec![0.0; h]; n];
        let mut dh_b = vec![vec![0.0; h]; n];
        for t in 0..n {
            let err = tr.y[t] - ex.targets[t];
            sse += err * err;
            let gy = 2.0 * err / total as f64;
            grad[c_off] += gy;
            let hf = &tr.fwd.h[t];
            let hb = &tr.bwd.h[n - 1 - t];
            for j in 0..h {
                grad[v_off + j] += gy * hf[j];
                grad[v_off + h + j] += gy * hb[j];
                dh_f[t][j] = gy * v[j];
                dh_b[n - 1 - t][j] = gy * v[h + j];
            }
        }
        let fwd_in: Vec<&[f64]> = ex.inputs.iter().map(Vec::as_slice).collect();
        let bwd_in: Vec<&[f64]> = ex.inputs.iter().rev().map(Vec::as_slice).collect();
        backprop_direction(p, Direction::Forward, &fwd_in, &tr.fwd, &dh_f, &mut grad);
        backprop_direction(p, Direction::Backward, &bwd_in, &tr.bwd, &dh_b, &mut grad);
    }
    if total == 0 {
        return Err(domain("batch has no time steps"));
    }
    Ok((sse / total as f64, grad))
}

/// Mean squared error only.
pub fn mse(p: &ModelParams, batch: &[&Example]) -> Result<f64> {
    let mut sse = 0.0;
    let mut total = 0usize;
    for ex in batch {
        let y = forward(p, &ex.inputs)?;
        sse += y.iter().zip(&ex.targets).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        total += y.len();
    }
    if total == 0 {
        return Err(domain("no time steps to score"));
    }
    Ok(sse / total as f64)
}
