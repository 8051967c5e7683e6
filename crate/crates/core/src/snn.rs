//! Discrete-time LIF dynamics and forward simulation of dense layers.
//!
//! Per layer, with `k_m = 1 - 1/tau_m` and `k_s = 1 - 1/tau_s`:
//!
//! ```text
//! U[t+1] = k_m * (1 - S[t]) * U[t] + W a_in[t]
//! S[t+1] = H(U[t+1] - theta)
//! a[t+1] = k_s * a[t] + S[t+1] / tau_s
//! ```
//!
//! with `U[0] = S[0] = a[0] = 0`. Input at step `t` reaches the membrane at
//! step `t + 1`. Layer `l + 1` is driven by the filtered trace `a` of layer
//! `l`; the first layer is driven by the filtered input spike train.

use crate::error::{dim_err, Error, Result};
use crate::matrix::Matrix;

/// Neuron constants shared by every neuron of a layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifParams {
    /// Membrane time constant, in steps.
    pub tau_m: f64,
    /// Synaptic time constant, in steps.
    pub tau_s: f64,
    /// Firing threshold.
    pub theta: f64,
    /// Surrogate sigmoid temperature.
    pub temp: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau_m: 6.0,
            tau_s: 2.0,
            theta: 1.0,
            temp: 0.3,
        }
    }
}

impl LifParams {
    pub fn new(tau_m: f64, tau_s: f64, theta: f64, temp: f64) -> Result<Self> {
        let p = Self {
            tau_m,
            tau_s,
            theta,
            temp,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_m > 1.0 && self.tau_m.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau_m must be > 1, got {}", self.tau_m)));
        }
        if !(self.tau_s > 1.0 && self.tau_s.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau_s must be > 1, got {}", self.tau_s)));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("theta must be > 0, got {}", self.theta)));
        }
        if !(self.temp > 0.0 && self.temp.is_finite()) {
            return Err(Error::InvalidParameter(format!("temp must be > 0, got {}", self.temp)));
        }
        Ok(())
    }

    /// Membrane decay factor `1 - 1/tau_m`.
    #[inline]
    pub fn membrane_decay(&self) -> f64 {
        1.0 - 1.0 / self.tau_m
    }

    /// Synaptic decay factor `1 - 1/tau_s`.
    #[inline]
    pub fn synaptic_decay(&self) -> f64 {
        1.0 - 1.0 / self.tau_s
    }
}

/// Binary spike raster, `n_neurons x n_steps`, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpikeTrain {
    n_neurons: usize,
    n_steps: usize,
    data: Vec<u8>,
}

impl SpikeTrain {
    pub fn zeros(n_neurons: usize, n_steps: usize) -> Self {
        Self {
            n_neurons,
            n_steps,
            data: vec![0; n_neurons * n_steps],
        }
    }

    /// Builds a train from row-major 0/1 data.
    pub fn from_vec(n_neurons: usize, n_steps: usize, data: Vec<u8>) -> Result<Self> {
        if n_neurons == 0 || n_steps == 0 {
            return Err(Error::InvalidParameter(format!(
                "spike train must be non-empty, got {n_neurons}x{n_steps}"
            )));
        }
        if data.len() != n_neurons * n_steps {
            return Err(dim_err("SpikeTrain::from_vec", n_neurons * n_steps, data.len()));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidParameter(format!("spike entries must be 0 or 1, found {bad}")));
        }
        Ok(Self {
            n_neurons,
            n_steps,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n_neurons = rows.len();
        let n_steps = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_steps) {
            return Err(Error::InvalidParameter("ragged spike rows".into()));
        }
        Self::from_vec(n_neurons, n_steps, rows.concat())
    }

    #[inline]
    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn get(&self, neuron: usize, step: usize) -> u8 {
        self.data[neuron * self.n_steps + step]
    }

    #[inline]
    pub fn set(&mut self, neuron: usize, step: usize, spike: bool) {
        self.data[neuron * self.n_steps + step] = u8::from(spike);
    }

    pub fn row(&self, neuron: usize) -> &[u8] {
        &self.data[neuron * self.n_steps..(neuron + 1) * self.n_steps]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn row_counts(&self) -> Vec<usize> {
        (0..self.n_neurons)
            .map(|i| self.row(i).iter().map(|&v| v as usize).sum())
            .collect()
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.n_neurons, self.n_steps, |i, t| f64::from(self.get(i, t)))
    }
}

/// Time series of one layer retained for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub u: Matrix,
    pub s: SpikeTrain,
    pub a: Matrix,
}

impl LayerTrace {
    pub fn n_neurons(&self) -> usize {
        self.u.rows()
    }

    pub fn n_steps(&self) -> usize {
        self.u.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLifLayer {
    /// `n_out x n_in`.
    pub weights: Matrix,
    pub params: LifParams,
}

impl DenseLifLayer {
    pub fn new(weights: Matrix, params: LifParams) -> Result<Self> {
        params.validate()?;
        if !weights.is_finite() {
            return Err(Error::InvalidParameter("weights contain NaN or Inf".into()));
        }
        Ok(Self { weights, params })
    }

    pub fn n_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<DenseLifLayer>,
}

impl Network {
    pub fn new(layers: Vec<DenseLifLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("network needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].n_out() != pair[1].n_in() {
                return Err(Error::Dimension {
                    context: "Network::new",
                    expected: format!("layer {} n_in = {}", l + 1, pair[0].n_out()),
                    got: pair[1].n_in().to_string(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Single-layer convenience constructor.
    pub fn single(weights: Matrix, params: LifParams) -> Result<Self> {
        Self::new(vec![DenseLifLayer::new(weights, params)?])
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    pub fn weights(&self) -> Vec<&Matrix> {
        self.layers.iter().map(|l| &l.weights).collect()
    }

    pub fn n_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len()).sum()
    }

    /// Parameters of the input filter, taken from the first layer.
    pub fn input_params(&self) -> &LifParams {
        &self.layers[0].params
    }
}

/// Step function with `H(0) = 0`: only strictly supra-threshold input fires.
#[inline]
pub fn heaviside(x: f64) -> u8 {
    u8::from(x > 0.0)
}

/// One membrane update. `drive` is `(W a_in)[i]` from the previous step.
#[inline]
pub fn lif_step(u_prev: f64, s_prev: u8, drive: f64, params: &LifParams) -> f64 {
    u_prev * params.membrane_decay() * (1.0 - f64::from(s_prev)) + drive
}

/// One synaptic trace update.
#[inline]
pub fn filter_step(a_prev: f64, s_next: u8, tau_s: f64) -> f64 {
    a_prev * (1.0 - 1.0 / tau_s) + f64::from(s_next) / tau_s
}

/// Causal first-order filtering of every row, zero initial state.
///
/// `out[i][0] = s[i][0] / tau_s`, then the [`filter_step`] recurrence.
pub fn filter_spike_train(s: &SpikeTrain, tau_s: f64) -> Matrix {
    let mut out = Matrix::zeros(s.n_neurons(), s.n_steps());
    for i in 0..s.n_neurons() {
        let mut acc = 0.0;
        let row = out.row_mut(i);
        for (t, &spike) in s.row(i).iter().enumerate() {
            acc = filter_step(acc, spike, tau_s);
            row[t] = acc;
        }
    }
    out
}

pub fn simulate_layer(layer: &DenseLifLayer, a_in: &Matrix) -> Result<LayerTrace> {
    if a_in.rows() != layer.n_in() {
        return Err(dim_err("simulate_layer (a_in rows vs W cols)", layer.n_in(), a_in.rows()));
    }
    let n_out = layer.n_out();
    let n_steps = a_in.cols();
    if n_steps == 0 {
        return Err(Error::InvalidParameter("input has zero steps".into()));
    }
    let p = &layer.params;

    let mut u = Matrix::zeros(n_out, n_steps);
    let mut s = SpikeTrain::zeros(n_out, n_steps);
    let mut a = Matrix::zeros(n_out, n_steps);

    let mut drive = vec![0.0; n_out];
    let mut u_now = vec![0.0; n_out];
    let mut s_now = vec![0u8; n_out];
    let mut a_now = vec![0.0; n_out];
    for t in 0..n_steps - 1 {
        layer.weights.matvec_into(&a_in.column(t), &mut drive);
        for i in 0..n_out {
            let u_next = lif_step(u_now[i], s_now[i], drive[i], p);
            let s_next = heaviside(u_next - p.theta);
            a_now[i] = filter_step(a_now[i], s_next, p.tau_s);
            u_now[i] = u_next;
            s_now[i] = s_next;
            u.set(i, t + 1, u_next);
            s.set(i, t + 1, s_next == 1);
            a.set(i, t + 1, a_now[i]);
        }
    }
    Ok(LayerTrace { u, s, a })
}

/// Runs every layer in order and returns all traces.
pub fn simulate_network(net: &Network, input: &SpikeTrain) -> Result<Vec<LayerTrace>> {
    if input.n_neurons() != net.n_in() {
        return Err(dim_err("simulate_network (input neurons)", net.n_in(), input.n_neurons()));
    }
    let input_filtered = filter_spike_train(input, net.input_params().tau_s);
    simulate_filtered(net, &input_filtered)
}

/// Same as [`simulate_network`] but starting from an already filtered input.
pub fn simulate_filtered(net: &Network, input_filtered: &Matrix) -> Result<Vec<LayerTrace>> {
    let mut traces: Vec<LayerTrace> = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let a_in = traces.last().map_or(input_filtered, |tr| &tr.a);
        let trace = simulate_layer(layer, a_in)?;
        traces.push(trace);
    }
    Ok(traces)
}
