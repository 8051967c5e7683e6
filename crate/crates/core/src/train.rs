//! Plain SGD training: the single-neuron experiment, multi-seed statistics,
//! learning-rate sweeps and the dense rate-coded classifier.
//!
//! Every trial owns its RNG and weights, so trials run in parallel and are
//! reduced in seed order; scheduling cannot change any result.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::{bernoulli_train, class_target_train, decode_spike_count, rate_encode_image, rng_from_seed, LabeledImages, SpikeRng};
use crate::error::{dim_err, Error, Result};
use crate::gradients::{bptt, network_loss, GradConfig, GradientReport};
use crate::matrix::Matrix;
use crate::snn::{filter_spike_train, simulate_filtered, DenseLifLayer, LifParams, Network, SpikeTrain};

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    /// Uniform in `[0, max)`.
    Uniform { max: f64 },
    /// Zero-mean Gaussian.
    Gaussian { std: f64 },
    /// Gaussian with `std = 1 / sqrt(fan_in)`.
    ScaledGaussian,
}

impl WeightInit {
    /// Uniform init whose mean steady-state potential sits at threshold:
    /// `max = 2 * theta / (n_in * p_in * tau_m)`.
    pub fn toy_uniform(params: &LifParams, n_in: usize, p_in: f64) -> Self {
        WeightInit::Uniform {
            max: 2.0 * params.theta / (n_in as f64 * p_in * params.tau_m),
        }
    }

    /// Draws an `n_out x n_in` matrix, row-major.
    pub fn sample<R: Rng + ?Sized>(&self, n_out: usize, n_in: usize, rng: &mut R) -> Result<Matrix> {
        match *self {
            WeightInit::Uniform { max } => {
                if !(max >= 0.0 && max.is_finite()) {
                    return Err(Error::InvalidParameter(format!("uniform init max {max}")));
                }
                Ok(Matrix::from_fn(n_out, n_in, |_, _| rng.random::<f64>() * max))
            }
            WeightInit::Gaussian { std } => gaussian(n_out, n_in, std, rng),
            WeightInit::ScaledGaussian => gaussian(n_out, n_in, 1.0 / (n_in as f64).sqrt(), rng),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            WeightInit::Uniform { max } => format!("uniform(0,{max})"),
            WeightInit::Gaussian { std } => format!("gaussian(0,{std})"),
            WeightInit::ScaledGaussian => "gaussian(0,1/sqrt(fan_in))".to_string(),
        }
    }
}

fn gaussian<R: Rng + ?Sized>(n_out: usize, n_in: usize, std: f64, rng: &mut R) -> Result<Matrix> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidParameter(format!("gaussian init: {e}")))?;
    Ok(Matrix::from_fn(n_out, n_in, |_, _| normal.sample(rng)))
}

/// Shape of the single-neuron experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySetup {
    pub n_inputs: usize,
    pub n_steps: usize,
    pub input_p: f64,
    pub target_p: f64,
}

impl Default for ToySetup {
    fn default() -> Self {
        Self {
            n_inputs: 50,
            n_steps: 100,
            input_p: 0.1,
            target_p: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub iterations: usize,
    pub lif: LifParams,
    pub grad: GradConfig,
    pub seed: u64,
    /// `None` selects [`WeightInit::toy_uniform`].
    pub weight_init: Option<WeightInit>,
    pub toy: ToySetup,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let lif = LifParams::default();
        Self {
            lr: 0.005,
            iterations: 200,
            lif,
            grad: GradConfig {
                with_reset_term: true,
                temp: lif.temp,
            },
            seed: 0,
            weight_init: None,
            toy: ToySetup::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParameter(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be >= 1".into()));
        }
        self.lif.validate()?;
        GradConfig::new(self.grad.with_reset_term, self.grad.temp)?;
        Ok(())
    }

    pub fn resolved_init(&self) -> WeightInit {
        self.weight_init
            .unwrap_or_else(|| WeightInit::toy_uniform(&self.lif, self.toy.n_inputs, self.toy.input_p))
    }

    pub fn with_reset_term(mut self, on: bool) -> Self {
        self.grad.with_reset_term = on;
        self
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    pub with_reset_term: bool,
    /// Loss before the update of each iteration.
    pub losses: Vec<f64>,
    /// First iteration whose output equals the target exactly.
    pub converged_at: Option<usize>,
    pub final_weights: Vec<Matrix>,
    /// Gradient report of the last iteration.
    pub last_report: GradientReport,
}

impl TrialResult {
    pub fn final_loss(&self) -> f64 {
        self.losses[self.losses.len() - 1]
    }
}

/// `w <- w - lr * g` for every layer.
pub fn sgd_step(weights: &mut [Matrix], grads: &[Matrix], lr: f64) -> Result<()> {
    if weights.len() != grads.len() {
        return Err(dim_err("sgd_step (layer count)", weights.len(), grads.len()));
    }
    for (w, g) in weights.iter_mut().zip(grads) {
        w.axpy(-lr, g)?;
    }
    Ok(())
}

fn apply_sgd(net: &mut Network, grads: &[Matrix], lr: f64) -> Result<()> {
    if net.layers.len() != grads.len() {
        return Err(dim_err("sgd_step (layer count)", net.layers.len(), grads.len()));
    }
    for (layer, g) in net.layers.iter_mut().zip(grads) {
        layer.weights.axpy(-lr, g)?;
    }
    Ok(())
}

/// The fixed data of one toy trial, drawn once from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyProblem {
    pub input: SpikeTrain,
    pub target: SpikeTrain,
    pub net: Network,
}

/// Draw order: input train, target train, weights.
pub fn toy_problem(cfg: &TrainConfig) -> Result<ToyProblem> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let toy = &cfg.toy;
    let input = bernoulli_train(toy.n_inputs, toy.n_steps, toy.input_p, &mut rng)?;
    let target = bernoulli_train(1, toy.n_steps, toy.target_p, &mut rng)?;
    let weights = cfg.resolved_init().sample(1, toy.n_inputs, &mut rng)?;
    let net = Network::single(weights, cfg.lif)?;
    Ok(ToyProblem { input, target, net })
}

/// Trains a fixed network on a fixed input/target pair.
pub fn train_on_pair(
    mut net: Network,
    input: &SpikeTrain,
    target: &SpikeTrain,
    cfg: &TrainConfig,
) -> Result<TrialResult> {
    let input_filtered = filter_spike_train(input, net.input_params().tau_s);
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut converged_at = None;
    let mut last_report = None;
    for it in 0..cfg.iterations {
        let traces = simulate_filtered(&net, &input_filtered)?;
        losses.push(network_loss(&net, &traces, target)?.total);
        if converged_at.is_none() && traces[traces.len() - 1].s == *target {
            converged_at = Some(it);
        }
        let report = bptt(&net, &traces, &input_filtered, target, &cfg.grad)?;
        apply_sgd(&mut net, &report.weight_grads, cfg.lr)?;
        last_report = Some(report);
    }
    Ok(TrialResult {
        seed: cfg.seed,
        with_reset_term: cfg.grad.with_reset_term,
        losses,
        converged_at,
        final_weights: net.layers.into_iter().map(|l| l.weights).collect(),
        last_report: last_report.expect("iterations >= 1"),
    })
}

/// Single neuron, fixed random input and target, trained by SGD.
pub fn run_toy_trial(cfg: &TrainConfig) -> Result<TrialResult> {
    let problem = toy_problem(cfg)?;
    train_on_pair(problem.net, &problem.input, &problem.target, cfg)
}

/// Mean and population standard deviation per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn curve_stats(curves: &[&[f64]]) -> Result<CurveStats> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidParameter("no curves to aggregate".into()))?;
    let len = first.len();
    if curves.iter().any(|c| c.len() != len) {
        return Err(Error::InvalidParameter("curves differ in length".into()));
    }
    let n = curves.len() as f64;
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for k in 0..len {
        let m = curves.iter().map(|c| c[k]).sum::<f64>() / n;
        let var = curves.iter().map(|c| (c[k] - m).powi(2)).sum::<f64>() / n;
        mean[k] = m;
        std[k] = var.sqrt();
    }
    Ok(CurveStats { mean, std })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialsSummary {
    pub stats: CurveStats,
    pub trials: Vec<TrialResult>,
}

/// Runs the toy trial for each seed (template seed ignored).
pub fn run_trials(template: &TrainConfig, seeds: &[u64]) -> Result<TrialsSummary> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("seed list is empty".into()));
    }
    let trials: Vec<TrialResult> = seeds
        .par_iter()
        .map(|&s| run_toy_trial(&template.clone().with_seed(s)))
        .collect::<Result<_>>()?;
    let curves: Vec<&[f64]> = trials.iter().map(|t| t.losses.as_slice()).collect();
    Ok(TrialsSummary {
        stats: curve_stats(&curves)?,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub lr: f64,
    pub with_reset_term: bool,
    pub stats: CurveStats,
    pub final_losses: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepCell {
    pub fn mean_final(&self) -> f64 {
        self.stats.mean[self.stats.mean.len() - 1]
    }

    pub fn std_final(&self) -> f64 {
        self.stats.std[self.stats.std.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Ordered by lr, then reset term on before off.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, lr: f64, with_reset_term: bool) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.lr == lr && c.with_reset_term == with_reset_term)
    }

    /// `sqrt((std_on^2 + std_off^2) / 2)` of the final losses at `lr`.
    pub fn pooled_std(&self, lr: f64) -> Option<f64> {
        let on = self.cell(lr, true)?.std_final();
        let off = self.cell(lr, false)?.std_final();
        Some(((on * on + off * off) / 2.0).sqrt())
    }
}

/// Median first-convergence iteration, counting unconverged trials as
/// never converging. `None` if the median trial did not converge.
pub fn median_convergence(trials: &[TrialResult]) -> Option<f64> {
    if trials.is_empty() {
        return None;
    }
    let mut its: Vec<Option<usize>> = trials.iter().map(|t| t.converged_at).collect();
    its.sort_by_key(|c| c.unwrap_or(usize::MAX));
    let n = its.len();
    let (lo, hi) = (its[(n - 1) / 2]?, its[n / 2]?);
    Some((lo + hi) as f64 / 2.0)
}

/// Full cross `lrs x {on, off} x seeds`; on/off cells share seeds, hence
/// data and initial weights.
pub fn lr_sweep(template: &TrainConfig, lrs: &[f64], seeds: &[u64]) -> Result<SweepResult> {
    if lrs.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidParameter("sweep grid is empty".into()));
    }
    let jobs: Vec<(f64, bool, u64)> = lrs
        .iter()
        .flat_map(|&lr| [true, false].into_iter().flat_map(move |on| seeds.iter().map(move |&s| (lr, on, s))))
        .collect();
    let trials: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(lr, on, s)| run_toy_trial(&template.clone().with_lr(lr).with_reset_term(on).with_seed(s)))
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(lrs.len() * 2);
    for (chunk, cell_jobs) in trials.chunks(seeds.len()).zip(jobs.chunks(seeds.len())) {
        let curves: Vec<&[f64]> = chunk.iter().map(|t| t.losses.as_slice()).collect();
        cells.push(SweepCell {
            lr: cell_jobs[0].0,
            with_reset_term: cell_jobs[0].1,
            stats: curve_stats(&curves)?,
            final_losses: chunk.iter().map(TrialResult::final_loss).collect(),
            seeds: seeds.to_vec(),
        });
    }
    Ok(SweepResult { cells })
}

/// Dense rate-coded classifier trained with the Van Rossum loss against
/// regular class target trains.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub n_classes: usize,
    pub n_steps: usize,
    pub p_max: f64,
    pub target_period: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub lif: LifParams,
    pub grad: GradConfig,
    pub weight_init: WeightInit,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let lif = LifParams::default();
        Self {
            hidden: vec![100],
            n_classes: 10,
            n_steps: 30,
            p_max: 0.5,
            target_period: 5,
            epochs: 10,
            batch: 32,
            lr: 0.01,
            seed: 0,
            lif,
            grad: GradConfig {
                with_reset_term: true,
                temp: lif.temp,
            },
            weight_init: WeightInit::ScaledGaussian,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        self.lif.validate()?;
        GradConfig::new(self.grad.with_reset_term, self.grad.temp)?;
        if self.batch == 0 || self.n_steps == 0 || self.n_classes == 0 {
            return Err(Error::InvalidParameter("batch, steps and classes must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParameter(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidParameter("hidden layers must be non-empty".into()));
        }
        Ok(())
    }

    pub fn with_reset_term(mut self, on: bool) -> Self {
        self.grad.with_reset_term = on;
        self
    }
}

/// Accuracy after `epoch` training epochs (epoch 0 = untrained).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Mean per-sample loss over the epoch's training pass (0 for epoch 0).
    pub train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct ClassifierResult {
    pub seed: u64,
    pub with_reset_term: bool,
    pub epochs: Vec<EpochRecord>,
    pub net: Network,
}

// Independent ChaCha streams of one seed.
const STREAM_INIT: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_EVAL: u64 = 2;

fn stream(seed: u64, id: u64) -> SpikeRng {
    let mut rng = rng_from_seed(seed);
    rng.set_stream(id);
    rng
}

pub fn init_classifier(n_in: usize, cfg: &ClassifierConfig) -> Result<Network> {
    let mut rng = stream(cfg.seed, STREAM_INIT);
    let mut layers = Vec::new();
    let mut fan_in = n_in;
    for &w in cfg.hidden.iter().chain(std::iter::once(&cfg.n_classes)) {
        layers.push(DenseLifLayer::new(cfg.weight_init.sample(w, fan_in, &mut rng)?, cfg.lif)?);
        fan_in = w;
    }
    Network::new(layers)
}

/// Fraction of images whose spike-count decode matches the label.
pub fn evaluate(net: &Network, data: &LabeledImages, cfg: &ClassifierConfig, rng: &mut SpikeRng) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let encoded: Vec<SpikeTrain> = (0..data.len())
        .map(|i| rate_encode_image(data.image(i), cfg.n_steps, cfg.p_max, rng))
        .collect::<Result<_>>()?;
    let tau_s = net.input_params().tau_s;
    let correct: usize = encoded
        .par_iter()
        .zip(data.labels.par_iter())
        .map(|(input, &label)| -> Result<usize> {
            let traces = simulate_filtered(net, &filter_spike_train(input, tau_s))?;
            Ok(usize::from(decode_spike_count(&traces[traces.len() - 1].s) == label as usize))
        })
        .sum::<Result<usize>>()?;
    Ok(correct as f64 / data.len() as f64)
}

/// Trains one variant; epoch records start with the untrained network.
pub fn train_classifier(train: &LabeledImages, test: &LabeledImages, cfg: &ClassifierConfig) -> Result<ClassifierResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    if train.image_size() != test.image_size() {
        return Err(dim_err("train_classifier (image size)", train.image_size(), test.image_size()));
    }
    let mut net = init_classifier(train.image_size(), cfg)?;
    let targets: Vec<SpikeTrain> = (0..cfg.n_classes)
        .map(|c| class_target_train(c, cfg.n_classes, cfg.n_steps, cfg.target_period))
        .collect::<Result<_>>()?;
    let tau_s = net.input_params().tau_s;
    let mut train_rng = stream(cfg.seed, STREAM_TRAIN);

    let eval = |net: &Network| -> Result<(f64, f64)> {
        // Fresh evaluation stream each time: identical encodings every epoch.
        let mut rng = stream(cfg.seed, STREAM_EVAL);
        let tr = evaluate(net, train, cfg, &mut rng)?;
        let te = evaluate(net, test, cfg, &mut rng)?;
        Ok((tr, te))
    };

    let (tr0, te0) = eval(&net)?;
    let mut epochs = vec![EpochRecord {
        epoch: 0,
        train_acc: tr0,
        test_acc: te0,
        train_loss: 0.0,
    }];

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut train_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch) {
            let inputs: Vec<SpikeTrain> = batch
                .iter()
                .map(|&i| rate_encode_image(train.image(i), cfg.n_steps, cfg.p_max, &mut train_rng))
                .collect::<Result<_>>()?;
            let per_sample: Vec<(f64, Vec<Matrix>)> = inputs
                .par_iter()
                .zip(batch.par_iter())
                .map(|(input, &i)| -> Result<(f64, Vec<Matrix>)> {
                    let target = &targets[train.labels[i] as usize];
                    let input_filtered = filter_spike_train(input, tau_s);
                    let traces = simulate_filtered(&net, &input_filtered)?;
                    let loss = network_loss(&net, &traces, target)?.total;
                    let rep = bptt(&net, &traces, &input_filtered, target, &cfg.grad)?;
                    Ok((loss, rep.weight_grads))
                })
                .collect::<Result<_>>()?;
            let mut grads: Vec<Matrix> = net.layers.iter().map(|l| Matrix::zeros(l.n_out(), l.n_in())).collect();
            for (loss, g) in &per_sample {
                loss_sum += loss;
                for (acc, gl) in grads.iter_mut().zip(g) {
                    acc.axpy(1.0, gl)?;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale(scale));
            apply_sgd(&mut net, &grads, cfg.lr)?;
        }
        let (tr, te) = eval(&net)?;
        epochs.push(EpochRecord {
            epoch,
            train_acc: tr,
            test_acc: te,
            train_loss: loss_sum / train.len() as f64,
        });
    }
    Ok(ClassifierResult {
        seed: cfg.seed,
        with_reset_term: cfg.grad.with_reset_term,
        epochs,
        net,
    })
}

/// Both reset-term variants from the same seed: `(on, off)`.
pub fn compare_classifier(
    train: &LabeledImages,
    test: &LabeledImages,
    cfg: &ClassifierConfig,
) -> Result<(ClassifierResult, ClassifierResult)> {
    let on = train_classifier(train, test, &cfg.clone().with_reset_term(true))?;
    let off = train_classifier(train, test, &cfg.clone().with_reset_term(false))?;
    Ok((on, off))
}
