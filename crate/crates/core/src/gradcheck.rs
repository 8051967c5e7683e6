//! Finite-difference verification of the backward recurrences.
//!
//! The hard-spike network is piecewise constant in its weights, so finite
//! differences say nothing about it. Replacing every `H(U - theta)` in the
//! forward pass (reset factor and trace injection) by `sigma_T(U - theta)`
//! yields a smooth model whose exact gradient is given by the same backward
//! recurrences, provided the reset-dependency term is kept. That gradient is
//! checked here against central differences of the smooth model's loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::bernoulli_train;
use crate::error::{dim_err, Error, Result};
use crate::gradients::{backward, loss_grad_filtered, sigmoid_t, BackwardLayer};
use crate::matrix::Matrix;
use crate::snn::{filter_spike_train, DenseLifLayer, LifParams, Network, SpikeTrain};

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Floor of the relative-error denominator.
pub const REL_ERR_FLOOR: f64 = 1e-12;

/// Smoothed counterpart of [`crate::snn::LayerTrace`].
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTrace {
    pub u: Matrix,
    /// `sigma_T(U - theta)`.
    pub s_soft: Matrix,
    pub a: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(layer, row, col)` of the coordinate with the largest relative error.
    pub worst_coordinate: (usize, usize, usize),
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

fn soft_layer(layer: &DenseLifLayer, a_in: &Matrix, temp: f64) -> Result<SoftTrace> {
    if a_in.rows() != layer.n_in() {
        return Err(dim_err("soft_forward (a_in rows vs W cols)", layer.n_in(), a_in.rows()));
    }
    let p = &layer.params;
    let (n, steps) = (layer.n_out(), a_in.cols());
    let k_m = p.membrane_decay();
    let k_s = p.synaptic_decay();

    let mut u = Matrix::zeros(n, steps);
    let mut s_soft = Matrix::zeros(n, steps);
    let mut a = Matrix::zeros(n, steps);
    let s0 = sigmoid_t(-p.theta, temp);
    for i in 0..n {
        s_soft.set(i, 0, s0);
    }
    let mut drive = vec![0.0; n];
    for t in 0..steps.saturating_sub(1) {
        layer.weights.matvec_into(&a_in.column(t), &mut drive);
        for i in 0..n {
            let u_next = k_m * (1.0 - s_soft.get(i, t)) * u.get(i, t) + drive[i];
            let s_next = sigmoid_t(u_next - p.theta, temp);
            u.set(i, t + 1, u_next);
            s_soft.set(i, t + 1, s_next);
            a.set(i, t + 1, k_s * a.get(i, t) + s_next / p.tau_s);
        }
    }
    Ok(SoftTrace { u, s_soft, a })
}

/// Forward pass of the smoothed model.
pub fn soft_forward(net: &Network, input: &SpikeTrain, temp: f64) -> Result<Vec<SoftTrace>> {
    if !(temp > 0.0) {
        return Err(Error::InvalidParameter(format!("temp must be > 0, got {temp}")));
    }
    if input.n_neurons() != net.n_in() {
        return Err(dim_err("soft_forward (input neurons)", net.n_in(), input.n_neurons()));
    }
    let input_filtered = filter_spike_train(input, net.input_params().tau_s);
    let mut traces: Vec<SoftTrace> = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let a_in = traces.last().map_or(&input_filtered, |tr| &tr.a);
        let tr = soft_layer(layer, a_in, temp)?;
        traces.push(tr);
    }
    Ok(traces)
}

fn output_tau_s(net: &Network) -> f64 {
    net.layers[net.layers.len() - 1].params.tau_s
}

/// Van Rossum loss of the smoothed model.
pub fn soft_loss(net: &Network, input: &SpikeTrain, target: &SpikeTrain, temp: f64) -> Result<f64> {
    let traces = soft_forward(net, input, temp)?;
    let out = &traces[traces.len() - 1].a;
    let target_filtered = filter_spike_train(target, output_tau_s(net));
    Ok(crate::gradients::van_rossum_loss(out, &target_filtered)?.total)
}

struct SoftBackward {
    grads: Vec<f64>,
    du_layers: Vec<Matrix>,
}

fn soft_backward(
    net: &Network,
    traces: &[SoftTrace],
    input: &SpikeTrain,
    target: &SpikeTrain,
    temp: f64,
    reset_term: bool,
) -> Result<SoftBackward> {
    if traces.len() != net.layers.len() {
        return Err(Error::Consistency(format!(
            "{} soft traces for {} layers",
            traces.len(),
            net.layers.len()
        )));
    }
    if input.n_neurons() != net.n_in() {
        return Err(Error::Consistency("input does not match network".into()));
    }
    let steps = input.n_steps();
    for (layer, tr) in net.layers.iter().zip(traces) {
        if tr.u.shape() != (layer.n_out(), steps) {
            return Err(Error::Consistency("soft trace does not match network".into()));
        }
    }
    let out = &traces[traces.len() - 1];
    if target.n_neurons() != net.n_out() || target.n_steps() != steps {
        return Err(Error::Consistency("target does not match network output".into()));
    }
    let input_filtered = filter_spike_train(input, net.input_params().tau_s);
    let seed = loss_grad_filtered(&out.a, &filter_spike_train(target, output_tau_s(net)))?;
    let layers: Vec<BackwardLayer<'_>> = net
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| BackwardLayer {
            weights: &layer.weights,
            params: &layer.params,
            u: &traces[l].u,
            s: traces[l].s_soft.clone(),
            a_in: if l == 0 { &input_filtered } else { &traces[l - 1].a },
        })
        .collect();
    let res = backward(&layers, &seed, temp, reset_term);
    Ok(SoftBackward {
        grads: res
            .weight_grads
            .iter()
            .flat_map(|g| g.as_slice().iter().copied())
            .collect(),
        du_layers: res.du_layers,
    })
}

/// Exact gradient of the smoothed model's loss, flattened layer by layer.
pub fn soft_bptt(
    net: &Network,
    soft_traces: &[SoftTrace],
    input: &SpikeTrain,
    target: &SpikeTrain,
    temp: f64,
) -> Result<Vec<f64>> {
    Ok(soft_backward(net, soft_traces, input, target, temp, true)?.grads)
}

/// [`soft_bptt`] with the reset-dependency term dropped. Diagnostic only:
/// this is no longer the gradient of anything.
pub fn soft_bptt_without_reset_term(
    net: &Network,
    soft_traces: &[SoftTrace],
    input: &SpikeTrain,
    target: &SpikeTrain,
    temp: f64,
) -> Result<Vec<f64>> {
    Ok(soft_backward(net, soft_traces, input, target, temp, false)?.grads)
}

/// `sigma_T(zm + dz) - sigma_T(zm)` from `zm` and `dz` without subtracting
/// nearly equal numbers, via `s(x) - s(y) = s(x) (1 - s(y)) (1 - e^(y - x))`.
#[inline]
fn sigmoid_difference(zm: f64, dz: f64) -> f64 {
    let sp = sigmoid_t(zm + dz, 1.0);
    let one_minus_sm = sigmoid_t(-zm, 1.0);
    sp * one_minus_sm * -(-dz).exp_m1()
}

/// Smoothed-model loss difference `L(plus) - L(minus)`.
///
/// Both forward passes are run in lockstep and the difference of every
/// state variable is carried explicitly (`dU`, `ds`, `da`), each updated
/// from exact product-difference identities. The loss difference is then
/// `sum 0.5 * da_out * (o+ + o- - 2 d)`. This is the same quantity as
/// subtracting two loss values, minus the cancellation noise that would
/// otherwise swamp gradients below roughly 1e-8.
fn soft_loss_difference(
    plus: &Network,
    minus: &Network,
    input_filtered: &Matrix,
    target_filtered: &Matrix,
    temp: f64,
) -> Result<f64> {
    let mut a_in_minus = input_filtered.clone();
    let mut da_in = Matrix::zeros(input_filtered.rows(), input_filtered.cols());
    let steps = input_filtered.cols();
    for (lp, lm) in plus.layers.iter().zip(&minus.layers) {
        let p = &lm.params;
        let (k_m, k_s) = (p.membrane_decay(), p.synaptic_decay());
        let n = lm.n_out();
        let dw = lp.weights.sub(&lm.weights)?;
        let mut um = vec![0.0; n];
        let mut sm = vec![sigmoid_t(-p.theta, temp); n];
        let mut du = vec![0.0; n];
        let mut ds = vec![0.0; n];
        let mut a_out = Matrix::zeros(n, steps);
        let mut da_out = Matrix::zeros(n, steps);
        let mut drive_m = vec![0.0; n];
        let mut d_drive = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        for t in 0..steps.saturating_sub(1) {
            let am_col = a_in_minus.column(t);
            let da_col = da_in.column(t);
            lm.weights.matvec_into(&am_col, &mut drive_m);
            // W+ a+ - W- a- = W+ da + dW a-
            lp.weights.matvec_into(&da_col, &mut d_drive);
            dw.matvec_into(&am_col, &mut tmp);
            for i in 0..n {
                d_drive[i] += tmp[i];
            }
            for i in 0..n {
                // (1 - s+) U+ - (1 - s-) U- = (1 - s+) dU - ds U-
                let sp = sm[i] + ds[i];
                let du_next = k_m * ((1.0 - sp) * du[i] - ds[i] * um[i]) + d_drive[i];
                let um_next = k_m * (1.0 - sm[i]) * um[i] + drive_m[i];
                let zm = (um_next - p.theta) / temp;
                let ds_next = sigmoid_difference(zm, du_next / temp);
                let sm_next = sigmoid_t(zm, 1.0);
                a_out.set(i, t + 1, k_s * a_out.get(i, t) + sm_next / p.tau_s);
                da_out.set(i, t + 1, k_s * da_out.get(i, t) + ds_next / p.tau_s);
                um[i] = um_next;
                sm[i] = sm_next;
                du[i] = du_next;
                ds[i] = ds_next;
            }
        }
        a_in_minus = a_out;
        da_in = da_out;
    }
    let mut diff = 0.0;
    for ((om, dao), d) in a_in_minus
        .as_slice()
        .iter()
        .zip(da_in.as_slice())
        .zip(target_filtered.as_slice())
    {
        let op = om + dao;
        diff += 0.5 * dao * (op + om - 2.0 * d);
    }
    Ok(diff)
}

/// Central differences `(L(w + h) - L(w - h)) / 2h` for every weight.
///
/// Perturbations are applied to private copies, so `net` is untouched.
pub fn central_fd(net: &Network, input: &SpikeTrain, target: &SpikeTrain, temp: f64, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("fd step must be > 0, got {h}")));
    }
    if target.n_neurons() != net.n_out() || target.n_steps() != input.n_steps() {
        return Err(Error::Consistency("target does not match network output".into()));
    }
    if input.n_neurons() != net.n_in() {
        return Err(dim_err("central_fd (input neurons)", net.n_in(), input.n_neurons()));
    }
    let input_filtered = filter_spike_train(input, net.input_params().tau_s);
    let target_filtered = filter_spike_train(target, output_tau_s(net));
    let mut grads = Vec::with_capacity(net.n_weights());
    let mut plus = net.clone();
    let mut minus = net.clone();
    for l in 0..net.layers.len() {
        for k in 0..net.layers[l].weights.as_slice().len() {
            let w = net.layers[l].weights.as_slice()[k];
            let (wp, wm) = (w + h, w - h);
            plus.layers[l].weights.as_mut_slice()[k] = wp;
            minus.layers[l].weights.as_mut_slice()[k] = wm;
            let dl = soft_loss_difference(&plus, &minus, &input_filtered, &target_filtered, temp)?;
            grads.push(dl / (wp - wm));
            plus.layers[l].weights.as_mut_slice()[k] = w;
            minus.layers[l].weights.as_mut_slice()[k] = w;
        }
    }
    Ok(grads)
}

/// Per-coordinate relative error `|a - n| / max(|a|, |n|, 1e-12)`.
///
/// `shapes` are the weight shapes in flattening order and are used to
/// locate the worst coordinate.
pub fn compare(analytic: &[f64], numeric: &[f64], shapes: &[(usize, usize)]) -> Result<CheckReport> {
    if analytic.len() != numeric.len() {
        return Err(dim_err("compare", analytic.len(), numeric.len()));
    }
    let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
    if total != analytic.len() {
        return Err(dim_err("compare (shapes)", analytic.len(), total));
    }
    let mut max_rel = 0.0;
    let mut max_abs = 0.0;
    let mut worst = 0;
    for (k, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(REL_ERR_FLOOR);
        if rel > max_rel {
            max_rel = rel;
            worst = k;
        }
        if abs > max_abs {
            max_abs = abs;
        }
    }
    Ok(CheckReport {
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        worst_coordinate: locate(worst, shapes),
        analytic: analytic.to_vec(),
        numeric: numeric.to_vec(),
    })
}

fn locate(mut index: usize, shapes: &[(usize, usize)]) -> (usize, usize, usize) {
    for (l, &(r, c)) in shapes.iter().enumerate() {
        if index < r * c {
            return (l, index / c, index % c);
        }
        index -= r * c;
    }
    (0, 0, 0)
}

pub fn weight_shapes(net: &Network) -> Vec<(usize, usize)> {
    net.layers.iter().map(|l| l.weights.shape()).collect()
}

/// A seeded random network, input and target for the oracle suite.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub seed: u64,
    pub net: Network,
    pub input: SpikeTrain,
    pub target: SpikeTrain,
    pub temp: f64,
}

/// Distribution of random oracle instances.
#[derive(Debug, Clone, Copy)]
pub struct InstanceSpec {
    pub max_layers: usize,
    pub max_neurons: usize,
    pub min_steps: usize,
    pub max_steps: usize,
    pub weight_std: f64,
    pub input_p: f64,
    pub target_p: f64,
    pub temp: f64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            max_layers: 3,
            max_neurons: 8,
            min_steps: 5,
            max_steps: 20,
            weight_std: 0.5,
            input_p: 0.3,
            target_p: 0.2,
            temp: 0.3,
        }
    }
}

impl RandomInstance {
    /// Draw order: layer count, input width, step count, per-layer widths,
    /// weights (layer by layer, row-major), input train, target train.
    pub fn generate(seed: u64, spec: &InstanceSpec) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = rng.random_range(1..=spec.max_layers);
        let n_in = rng.random_range(1..=spec.max_neurons);
        let steps = rng.random_range(spec.min_steps..=spec.max_steps);
        let widths: Vec<usize> = (0..n_layers).map(|_| rng.random_range(1..=spec.max_neurons)).collect();
        let normal = Normal::new(0.0, spec.weight_std)
            .map_err(|e| Error::InvalidParameter(format!("weight std: {e}")))?;
        let params = LifParams {
            temp: spec.temp,
            ..LifParams::default()
        };
        let mut layers = Vec::with_capacity(n_layers);
        let mut fan_in = n_in;
        for &w in &widths {
            let weights = Matrix::from_fn(w, fan_in, |_, _| normal.sample(&mut rng));
            layers.push(DenseLifLayer::new(weights, params)?);
            fan_in = w;
        }
        let net = Network::new(layers)?;
        let input = bernoulli_train(n_in, steps, spec.input_p, &mut rng)?;
        let target = bernoulli_train(fan_in, steps, spec.target_p, &mut rng)?;
        Ok(Self {
            seed,
            net,
            input,
            target,
            temp: spec.temp,
        })
    }
}

/// Outcome of checking one random instance.
#[derive(Debug, Clone)]
pub struct InstanceCheck {
    pub instance_id: usize,
    pub seed: u64,
    pub layers: usize,
    pub n_weights: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Same comparison with the reset-dependency term dropped.
    pub no_reset_max_rel_err: f64,
    /// Some soft spike lies in (0.1, 0.9) at a step whose successor
    /// potential carries a nonzero gradient.
    pub reset_term_active: bool,
}

pub fn check_instance(instance_id: usize, inst: &RandomInstance, h: f64) -> Result<InstanceCheck> {
    let traces = soft_forward(&inst.net, &inst.input, inst.temp)?;
    let full = soft_backward(&inst.net, &traces, &inst.input, &inst.target, inst.temp, true)?;
    let dropped = soft_bptt_without_reset_term(&inst.net, &traces, &inst.input, &inst.target, inst.temp)?;
    let numeric = central_fd(&inst.net, &inst.input, &inst.target, inst.temp, h)?;
    let shapes = weight_shapes(&inst.net);
    let rep = compare(&full.grads, &numeric, &shapes)?;
    let rep_dropped = compare(&dropped, &numeric, &shapes)?;

    let mut active = false;
    for (tr, du) in traces.iter().zip(&full.du_layers) {
        let (n, steps) = tr.s_soft.shape();
        for i in 0..n {
            for t in 0..steps.saturating_sub(1) {
                let s = tr.s_soft.get(i, t);
                if s > 0.1 && s < 0.9 && du.get(i, t + 1) != 0.0 {
                    active = true;
                }
            }
        }
    }

    Ok(InstanceCheck {
        instance_id,
        seed: inst.seed,
        layers: inst.net.layers.len(),
        n_weights: inst.net.n_weights(),
        max_rel_err: rep.max_rel_err,
        max_abs_err: rep.max_abs_err,
        no_reset_max_rel_err: rep_dropped.max_rel_err,
        reset_term_active: active,
    })
}

/// Checks `n_instances` instances with seeds `base_seed, base_seed + 1, ...`.
/// Results come back in instance order regardless of scheduling.
pub fn run_oracle_suite(n_instances: usize, base_seed: u64, spec: &InstanceSpec, h: f64) -> Result<Vec<InstanceCheck>> {
    (0..n_instances)
        .into_par_iter()
        .map(|k| {
            let seed = base_seed.wrapping_add(k as u64);
            let inst = RandomInstance::generate(seed, spec)?;
            check_instance(k, &inst, h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> Network {
        Network::single(Matrix::from_vec(1, 1, vec![w]).unwrap(), LifParams::default()).unwrap()
    }

    #[test]
    fn zero_weights_soft_fixpoint() {
        let net = Network::single(Matrix::zeros(2, 3), LifParams::default()).unwrap();
        let input = SpikeTrain::from_rows(&[vec![1, 0, 1, 1, 0, 0, 0, 0], vec![0; 8], vec![1; 8]]).unwrap();
        let tr = &soft_forward(&net, &input, 0.3).unwrap()[0];
        let s0 = sigmoid_t(-1.0, 0.3);
        assert!(tr.u.as_slice().iter().all(|&u| u == 0.0));
        assert!(tr.s_soft.as_slice().iter().all(|&s| s == s0));
        let row = tr.a.row(0);
        for t in 1..8 {
            assert!(row[t] > row[t - 1] && row[t] < s0);
        }
    }

    #[test]
    fn single_neuron_soft_value() {
        let input = SpikeTrain::from_rows(&[vec![1, 0]]).unwrap();
        let tr = &soft_forward(&single(3.0), &input, 0.3).unwrap()[0];
        assert_eq!(tr.u.get(0, 1), 1.5);
        assert!((tr.s_soft.get(0, 1) - 0.841_13).abs() < 1e-5);
    }

    #[test]
    fn compare_examples() {
        let r = compare(&[1.0, 2.0], &[1.0, 2.0], &[(1, 2)]).unwrap();
        assert_eq!(r.max_rel_err, 0.0);
        let r = compare(&[1.0], &[1.00001], &[(1, 1)]).unwrap();
        assert!((r.max_rel_err - 1e-5).abs() < 1e-9);
        let r = compare(&[0.0], &[0.0], &[(1, 1)]).unwrap();
        assert_eq!(r.max_rel_err, 0.0);
        assert!(compare(&[0.0], &[0.0, 1.0], &[(1, 1)]).is_err());
    }

    #[test]
    fn compare_locates_worst_coordinate() {
        let a = [1.0, 1.0, 1.0, 1.0, 1.0];
        let n = [1.0, 1.0, 1.0, 1.0, 2.0];
        let r = compare(&a, &n, &[(2, 2), (1, 1)]).unwrap();
        assert_eq!(r.worst_coordinate, (1, 0, 0));
        let n = [1.0, 1.0, 1.5, 1.0, 1.0];
        let r = compare(&a, &n, &[(2, 2), (1, 1)]).unwrap();
        assert_eq!(r.worst_coordinate, (0, 1, 0));
    }

    #[test]
    fn zero_activity_fd_is_zero() {
        let net = Network::single(Matrix::zeros(2, 3), LifParams::default()).unwrap();
        let input = SpikeTrain::zeros(3, 6);
        let fd = central_fd(&net, &input, &SpikeTrain::zeros(2, 6), 0.3, 1e-5).unwrap();
        assert!(fd.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_target_zero_weights_soft_gradient_only_from_resting_output() {
        // Zero weights still leave a soft resting output sigma_T(-theta), so
        // the gradient is nonzero only through weights fed by active inputs.
        let net = Network::single(Matrix::zeros(1, 2), LifParams::default()).unwrap();
        let input = SpikeTrain::zeros(2, 5);
        let tr = soft_forward(&net, &input, 0.3).unwrap();
        let g = soft_bptt(&net, &tr, &input, &SpikeTrain::zeros(1, 5), 0.3).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn fd_leaves_network_untouched() {
        let inst = RandomInstance::generate(3, &InstanceSpec::default()).unwrap();
        let before = inst.net.clone();
        central_fd(&inst.net, &inst.input, &inst.target, inst.temp, 1e-5).unwrap();
        assert_eq!(before, inst.net);
    }

    #[test]
    fn instances_are_reproducible() {
        let spec = InstanceSpec::default();
        let a = RandomInstance::generate(11, &spec).unwrap();
        let b = RandomInstance::generate(11, &spec).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.input, b.input);
        assert_eq!(a.target, b.target);
    }

    #[test]
    fn bad_step_rejected() {
        let inst = RandomInstance::generate(0, &InstanceSpec::default()).unwrap();
        assert!(central_fd(&inst.net, &inst.input, &inst.target, 0.3, 0.0).is_err());
    }
}
