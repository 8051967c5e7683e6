//! Van Rossum loss and surrogate-gradient BPTT.
//!
//! The backward pass walks each layer from the last step to the first:
//!
//! ```text
//! da[t] = dL/da[t] + k_s * da[t+1] + W_next^T dU_next[t+1]
//! dU[t] = da[t] * sigma'_T(U[t] - theta) / tau_s        (spatial)
//!       + dU[t+1] * J[t]                                 (temporal)
//! J[t]  = k_m * [(1 - S[t]) - U[t] * sigma'_T(U[t] - theta)]
//! ```
//!
//! The `- U[t] * sigma'` part of `J` is the derivative of the reset factor
//! `(1 - H(U[t] - theta))` and is switched by [`GradConfig::with_reset_term`].
//! The loss kernel is the synaptic filter itself, so the filtered output
//! spike train is the output layer's `a` trace.

use crate::error::{dim_err, Error, Result};
use crate::matrix::Matrix;
use crate::snn::{filter_spike_train, LayerTrace, LifParams, Network, SpikeTrain};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradConfig {
    /// Include the reset-dependency term in the temporal Jacobian.
    pub with_reset_term: bool,
    /// Surrogate temperature.
    pub temp: f64,
}

impl Default for GradConfig {
    fn default() -> Self {
        Self {
            with_reset_term: true,
            temp: 0.3,
        }
    }
}

impl GradConfig {
    pub fn new(with_reset_term: bool, temp: f64) -> Result<Self> {
        if !(temp > 0.0 && temp.is_finite()) {
            return Err(Error::InvalidParameter(format!("temp must be > 0, got {temp}")));
        }
        Ok(Self {
            with_reset_term,
            temp,
        })
    }
}

/// Weight gradients plus the output layer's backward phases, each
/// `n_out x n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    /// `dL/dW` per layer, same shapes as the weights.
    pub weight_grads: Vec<Matrix>,
    /// Filtered output minus filtered target.
    pub phase_a: Matrix,
    /// Gradient at the filtered-trace level after the trace recurrence.
    pub phase_b: Matrix,
    /// Spatial-only potential gradient.
    pub phase_c: Matrix,
    /// Full potential gradient including the temporal term.
    pub phase_d: Matrix,
}

impl GradientReport {
    pub fn is_finite(&self) -> bool {
        self.weight_grads.iter().all(Matrix::is_finite)
            && [&self.phase_a, &self.phase_b, &self.phase_c, &self.phase_d]
                .iter()
                .all(|m| m.is_finite())
    }

    /// All weight gradients flattened layer by layer, row-major.
    pub fn flat_grads(&self) -> Vec<f64> {
        self.weight_grads
            .iter()
            .flat_map(|g| g.as_slice().iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub per_step: Vec<f64>,
}

/// `1 / (1 + exp(-x / temp))`, evaluated without overflow.
#[inline]
pub fn sigmoid_t(x: f64, temp: f64) -> f64 {
    let z = x / temp;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `(1/temp) * sigma_T(x) * (1 - sigma_T(x))`, accurate in both tails.
#[inline]
pub fn sigmoid_t_deriv(x: f64, temp: f64) -> f64 {
    let e = (-(x / temp).abs()).exp();
    e / ((1.0 + e) * (1.0 + e)) / temp
}

fn check_same_shape(context: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err(context, format!("{:?}", b.shape()), format!("{:?}", a.shape())));
    }
    Ok(())
}

/// Half squared distance between filtered trains, summed over neurons per
/// step and then over all steps.
pub fn van_rossum_loss(out_filtered: &Matrix, target_filtered: &Matrix) -> Result<LossValue> {
    check_same_shape("van_rossum_loss", out_filtered, target_filtered)?;
    let (n, steps) = out_filtered.shape();
    let mut per_step = vec![0.0; steps];
    for i in 0..n {
        let o = out_filtered.row(i);
        let d = target_filtered.row(i);
        for t in 0..steps {
            let diff = d[t] - o[t];
            per_step[t] += 0.5 * diff * diff;
        }
    }
    Ok(LossValue {
        total: per_step.iter().sum(),
        per_step,
    })
}

/// `dL/d(out_filtered) = out_filtered - target_filtered`.
pub fn loss_grad_filtered(out_filtered: &Matrix, target_filtered: &Matrix) -> Result<Matrix> {
    check_same_shape("loss_grad_filtered", out_filtered, target_filtered)?;
    out_filtered.sub(target_filtered)
}

/// `dU[t+1]/dU[t]` for one neuron with a hard spike `s`.
pub fn temporal_jacobian(u: f64, s: u8, params: &LifParams, cfg: &GradConfig) -> f64 {
    temporal_factor(u, f64::from(s), params, cfg.temp, cfg.with_reset_term)
}

/// Shared by the hard model (binary `s`) and the smoothed model (soft `s`).
#[inline]
pub(crate) fn temporal_factor(u: f64, s: f64, params: &LifParams, temp: f64, reset_term: bool) -> f64 {
    let mut j = 1.0 - s;
    if reset_term {
        j -= u * sigmoid_t_deriv(u - params.theta, temp);
    }
    params.membrane_decay() * j
}

/// Per-layer state the backward kernel needs.
pub(crate) struct BackwardLayer<'a> {
    pub weights: &'a Matrix,
    pub params: &'a LifParams,
    pub u: &'a Matrix,
    /// Spike values, binary or soft, `n_out x n_steps`.
    pub s: Matrix,
    pub a_in: &'a Matrix,
}

pub(crate) struct BackwardResult {
    pub weight_grads: Vec<Matrix>,
    /// `dL/dU` of every layer, input side first.
    pub du_layers: Vec<Matrix>,
    pub phase_b: Matrix,
    pub phase_c: Matrix,
    pub phase_d: Matrix,
}

/// Runs the backward recurrences given `dL/da` of the output layer.
pub(crate) fn backward(layers: &[BackwardLayer<'_>], output_seed: &Matrix, temp: f64, reset_term: bool) -> BackwardResult {
    let n_layers = layers.len();
    let n_steps = output_seed.cols();
    let mut weight_grads: Vec<Matrix> = layers
        .iter()
        .map(|l| Matrix::zeros(l.weights.rows(), l.weights.cols()))
        .collect();

    let mut phase_b = Matrix::zeros(0, 0);
    let mut phase_c = Matrix::zeros(0, 0);
    // dU of the layer above, consumed by the current (lower) layer.
    let mut upper_du: Option<Matrix> = None;
    let mut output_du = Matrix::zeros(0, 0);
    let mut du_layers: Vec<Matrix> = Vec::with_capacity(n_layers);

    for l in (0..n_layers).rev() {
        let layer = &layers[l];
        let p = layer.params;
        let n = layer.weights.rows();
        let k_s = p.synaptic_decay();
        let inv_tau_s = 1.0 / p.tau_s;

        let mut da = Matrix::zeros(n, n_steps);
        let mut spatial = Matrix::zeros(n, n_steps);
        let mut du = Matrix::zeros(n, n_steps);
        let mut da_next = vec![0.0; n];
        let mut du_next = vec![0.0; n];
        let mut da_now = vec![0.0; n];

        for t in (0..n_steps).rev() {
            da_now.iter_mut().for_each(|v| *v = 0.0);
            if l == n_layers - 1 {
                for (i, v) in da_now.iter_mut().enumerate() {
                    *v = output_seed.get(i, t);
                }
            }
            if t + 1 < n_steps {
                for i in 0..n {
                    da_now[i] += k_s * da_next[i];
                }
                if let (Some(up_du), Some(up)) = (upper_du.as_ref(), layers.get(l + 1)) {
                    up.weights.matvec_transpose_acc(&up_du.column(t + 1), &mut da_now);
                }
            }
            for i in 0..n {
                let u = layer.u.get(i, t);
                let sp = da_now[i] * inv_tau_s * sigmoid_t_deriv(u - p.theta, temp);
                let mut total = sp;
                if t + 1 < n_steps {
                    total += du_next[i] * temporal_factor(u, layer.s.get(i, t), p, temp, reset_term);
                }
                da.set(i, t, da_now[i]);
                spatial.set(i, t, sp);
                du.set(i, t, total);
                du_next[i] = total;
            }
            std::mem::swap(&mut da_next, &mut da_now);
            // da_next now holds da[t]
        }

        let grad = &mut weight_grads[l];
        for t in 0..n_steps.saturating_sub(1) {
            grad.add_outer(&du.column(t + 1), &layer.a_in.column(t));
        }

        if l == n_layers - 1 {
            phase_b = da;
            phase_c = spatial;
            output_du = du.clone();
        }
        if let Some(prev) = upper_du.replace(du) {
            du_layers.push(prev);
        }
    }
    du_layers.extend(upper_du);
    du_layers.reverse();

    BackwardResult {
        weight_grads,
        du_layers,
        phase_b,
        phase_c,
        phase_d: output_du,
    }
}

fn check_traces(net: &Network, traces: &[LayerTrace], input_filtered: &Matrix) -> Result<usize> {
    if traces.len() != net.layers.len() {
        return Err(Error::Consistency(format!(
            "{} traces for {} layers",
            traces.len(),
            net.layers.len()
        )));
    }
    if input_filtered.rows() != net.n_in() {
        return Err(Error::Consistency(format!(
            "filtered input has {} rows, network expects {}",
            input_filtered.rows(),
            net.n_in()
        )));
    }
    let n_steps = input_filtered.cols();
    for (l, (layer, tr)) in net.layers.iter().zip(traces).enumerate() {
        if tr.u.shape() != (layer.n_out(), n_steps)
            || tr.a.shape() != (layer.n_out(), n_steps)
            || tr.s.n_neurons() != layer.n_out()
            || tr.s.n_steps() != n_steps
        {
            return Err(Error::Consistency(format!(
                "trace of layer {l} does not match a {}x{n_steps} layer",
                layer.n_out()
            )));
        }
    }
    Ok(n_steps)
}

/// Backward pass from an arbitrary `dL/da` at the output layer.
pub fn bptt_from_output_grad(
    net: &Network,
    traces: &[LayerTrace],
    input_filtered: &Matrix,
    output_grad: &Matrix,
    cfg: &GradConfig,
) -> Result<GradientReport> {
    let n_steps = check_traces(net, traces, input_filtered)?;
    if output_grad.shape() != (net.n_out(), n_steps) {
        return Err(Error::Consistency(format!(
            "output gradient is {:?}, expected {:?}",
            output_grad.shape(),
            (net.n_out(), n_steps)
        )));
    }
    let layers: Vec<BackwardLayer<'_>> = net
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| BackwardLayer {
            weights: &layer.weights,
            params: &layer.params,
            u: &traces[l].u,
            s: traces[l].s.to_matrix(),
            a_in: if l == 0 { input_filtered } else { &traces[l - 1].a },
        })
        .collect();
    let res = backward(&layers, output_grad, cfg.temp, cfg.with_reset_term);
    Ok(GradientReport {
        weight_grads: res.weight_grads,
        phase_a: output_grad.clone(),
        phase_b: res.phase_b,
        phase_c: res.phase_c,
        phase_d: res.phase_d,
    })
}

/// Gradient of the Van Rossum loss between the network output and `target`.
pub fn bptt(
    net: &Network,
    traces: &[LayerTrace],
    input_filtered: &Matrix,
    target: &SpikeTrain,
    cfg: &GradConfig,
) -> Result<GradientReport> {
    let out = traces
        .last()
        .ok_or_else(|| Error::Consistency("no traces".into()))?;
    if target.n_neurons() != out.n_neurons() || target.n_steps() != out.n_steps() {
        return Err(Error::Consistency(format!(
            "target is {}x{}, output is {}x{}",
            target.n_neurons(),
            target.n_steps(),
            out.n_neurons(),
            out.n_steps()
        )));
    }
    let tau_s = net.layers[net.layers.len() - 1].params.tau_s;
    let target_filtered = filter_spike_train(target, tau_s);
    let seed = loss_grad_filtered(&out.a, &target_filtered)?;
    bptt_from_output_grad(net, traces, input_filtered, &seed, cfg)
}

/// Loss of a simulated network against a target spike train.
pub fn network_loss(net: &Network, traces: &[LayerTrace], target: &SpikeTrain) -> Result<LossValue> {
    let out = traces
        .last()
        .ok_or_else(|| Error::Consistency("no traces".into()))?;
    let tau_s = net.layers[net.layers.len() - 1].params.tau_s;
    van_rossum_loss(&out.a, &filter_spike_train(target, tau_s))
}
