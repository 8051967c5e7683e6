use std::path::Path;

use clap::Parser;
use spikegrad::checkpoint::Checkpoint;
use spikegrad::data::load_idx;
use spikegrad::gradcheck::{run_oracle_suite, InstanceSpec, DEFAULT_FD_STEP};
use spikegrad::gradients::GradConfig;
use spikegrad::train::{
    curve_stats, lr_sweep, median_convergence, run_trials, train_classifier, ClassifierConfig, TrainConfig,
};

use crate::args::{num, Cli, Command, GradcheckArgs, MnistArgs, ReplayArgs, Resolved, Setting, SweepArgs, ToyArgs};
use crate::manifest::RunManifest;
use crate::output::{LinePlot, RunDir, Series};
use crate::CliError;

/// Result of a command that ran to completion.
pub struct Outcome {
    pub passed: bool,
    pub summary: Vec<(String, String)>,
}

pub fn variant_name(with_reset_term: bool) -> &'static str {
    if with_reset_term {
        "reset_on"
    } else {
        "reset_off"
    }
}

fn variants(no_reset_term: bool) -> Vec<bool> {
    if no_reset_term {
        vec![false]
    } else {
        vec![true, false]
    }
}

/// Runs a command; `Ok(false)` means it completed but its check failed.
pub fn execute(cmd: &Command) -> Result<bool, CliError> {
    let (name, out, resolved, seeds, vars): (&str, &Path, Resolved, Vec<u64>, Vec<bool>) = match cmd {
        Command::Replay(r) => return replay(r),
        Command::Gradcheck(a) => {
            let seeds = (0..a.instances).map(|k| a.seed.wrapping_add(k)).collect();
            ("gradcheck", &a.common.out, a.resolved(), seeds, vec![true, false])
        }
        Command::Toy(a) => ("toy", &a.common.out, a.resolved(), a.seed_list(), variants(a.no_reset_term)),
        Command::Sweep(a) => ("sweep", &a.common.out, a.resolved(), a.seeds.0.clone(), vec![true, false]),
        Command::Mnist(a) => ("mnist", &a.common.out, a.resolved(), a.seed_list(), variants(a.no_reset_term)),
    };
    let mut dir = RunDir::create(out)?;
    let variant_names = vars.iter().map(|&v| variant_name(v).to_string()).collect();
    let mut manifest = RunManifest::new(name, out, &resolved, seeds, variant_names);
    manifest.write(dir.root())?;

    let result = match cmd {
        Command::Gradcheck(a) => gradcheck(a, &mut dir),
        Command::Toy(a) => toy(a, &resolved, &mut dir),
        Command::Sweep(a) => sweep(a, &mut dir),
        Command::Mnist(a) => mnist(a, &resolved, &mut dir),
        Command::Replay(_) => unreachable!(),
    };
    manifest.artifacts = dir.artifacts().to_vec();
    match result {
        Ok(outcome) => {
            manifest.status = if outcome.passed { "ok" } else { "check-failed" }.into();
            manifest.summary = outcome.summary.into_iter().collect();
            manifest.write(dir.root())?;
            Ok(outcome.passed)
        }
        Err(e) => {
            manifest.status = "error".into();
            manifest.summary.insert("error".into(), e.to_string());
            let _ = manifest.write(dir.root());
            Err(e)
        }
    }
}

fn replay(r: &ReplayArgs) -> Result<bool, CliError> {
    let m = RunManifest::load(&r.manifest)?;
    let out = r.out.clone().unwrap_or_else(|| m.out.clone().into());
    let argv = ["spikegrad".to_string(), m.command.clone()]
        .into_iter()
        .chain(m.args.iter().cloned())
        .chain(["--out".to_string(), out.display().to_string()]);
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Usage(format!("manifest arguments: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Usage("a manifest cannot replay another replay".into()));
    }
    execute(&cli.command)
}

fn checkpoint_config(resolved: &Resolved, seed: u64, on: bool) -> Vec<(String, String)> {
    let mut cfg: Vec<(String, String)> = resolved
        .0
        .iter()
        .map(|(k, v)| {
            let v = match v {
                Setting::Value(s) => s.clone(),
                Setting::Flag(b) => b.to_string(),
            };
            (k.clone(), v)
        })
        .collect();
    cfg.push(("seed".into(), seed.to_string()));
    cfg.push(("variant".into(), variant_name(on).into()));
    cfg
}

fn gradcheck(a: &GradcheckArgs, dir: &mut RunDir) -> Result<Outcome, CliError> {
    let spec = InstanceSpec {
        temp: a.temp,
        ..InstanceSpec::default()
    };
    let checks = run_oracle_suite(a.instances as usize, a.seed, &spec, DEFAULT_FD_STEP)?;
    dir.csv(
        "gradcheck.csv",
        &["instance_id", "seed", "layers", "max_rel_err"],
        checks
            .iter()
            .map(|c| vec![c.instance_id.to_string(), c.seed.to_string(), c.layers.to_string(), num(c.max_rel_err)]),
    )?;
    dir.csv(
        "gradcheck_reset.csv",
        &["instance_id", "seed", "reset_term_active", "no_reset_max_rel_err"],
        checks.iter().map(|c| {
            vec![
                c.instance_id.to_string(),
                c.seed.to_string(),
                c.reset_term_active.to_string(),
                num(c.no_reset_max_rel_err),
            ]
        }),
    )?;
    let max = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    let active: Vec<f64> = checks
        .iter()
        .filter(|c| c.reset_term_active)
        .map(|c| c.no_reset_max_rel_err)
        .collect();
    let min_dropped = active.iter().copied().fold(f64::INFINITY, f64::min);
    let passed = max <= a.tol;
    println!("instances: {}", checks.len());
    println!("suite max relative error: {max:e} (tol {:e}) {}", a.tol, if passed { "PASS" } else { "FAIL" });
    println!(
        "without reset term: {} instances with active reset, min max relative error {min_dropped:e}",
        active.len()
    );
    Ok(Outcome {
        passed,
        summary: vec![
            ("max_rel_err".into(), num(max)),
            ("reset_active_instances".into(), active.len().to_string()),
            ("no_reset_min_max_rel_err".into(), num(min_dropped)),
        ],
    })
}

fn toy_template(neuron: &crate::args::Neuron, lr: f64, iterations: u64) -> Result<TrainConfig, CliError> {
    let lif = neuron.params()?;
    let mut t = TrainConfig {
        lr,
        iterations: iterations as usize,
        lif,
        grad: GradConfig::new(true, lif.temp)?,
        ..TrainConfig::default()
    };
    t.validate()?;
    t.weight_init = Some(t.resolved_init());
    Ok(t)
}

fn toy(a: &ToyArgs, resolved: &Resolved, dir: &mut RunDir) -> Result<Outcome, CliError> {
    let template = toy_template(&a.neuron, a.lr, a.iterations)?;
    let seeds = a.seed_list();
    let mut loss_rows = Vec::new();
    let mut conv_rows = Vec::new();
    let mut series = Vec::new();
    let mut summary = Vec::new();
    for on in variants(a.no_reset_term) {
        let name = variant_name(on);
        let res = run_trials(&template.clone().with_reset_term(on), &seeds)?;
        for t in &res.trials {
            for (it, l) in t.losses.iter().enumerate() {
                loss_rows.push(vec![it.to_string(), t.seed.to_string(), name.into(), num(*l)]);
            }
            let conv = t.converged_at.map(|c| c.to_string()).unwrap_or_default();
            conv_rows.push(vec![t.seed.to_string(), name.into(), conv, num(t.final_loss())]);
            if a.phases {
                let r = &t.last_report;
                dir.csv(
                    &format!("toy_phases_seed{}_{name}.csv", t.seed),
                    &["step", "phase_a", "phase_b", "phase_c", "phase_d"],
                    (0..r.phase_a.cols()).map(|s| {
                        vec![
                            s.to_string(),
                            num(r.phase_a.get(0, s)),
                            num(r.phase_b.get(0, s)),
                            num(r.phase_c.get(0, s)),
                            num(r.phase_d.get(0, s)),
                        ]
                    }),
                )?;
            }
            if a.checkpoints {
                let ck = Checkpoint {
                    config: checkpoint_config(resolved, t.seed, on),
                    weights: t.final_weights.clone(),
                };
                dir.text(&format!("toy_seed{}_{name}.ckpt", t.seed), &ck.to_text()?)?;
            }
        }
        let converged = res.trials.iter().filter(|t| t.converged_at.is_some()).count();
        let median = median_convergence(&res.trials);
        let median_s = median.map(num).unwrap_or_else(|| "none".into());
        println!(
            "{name}: {converged}/{} converged, median convergence iteration {median_s}, mean final loss {}",
            seeds.len(),
            num(res.stats.mean[res.stats.mean.len() - 1])
        );
        summary.push((format!("{name}_converged"), converged.to_string()));
        summary.push((format!("{name}_median_convergence"), median_s));
        series.push(Series {
            label: name.into(),
            x: (0..res.stats.mean.len()).map(|i| i as f64).collect(),
            mean: res.stats.mean.clone(),
            std: res.stats.std.clone(),
        });
    }
    dir.csv("toy.csv", &["iteration", "seed", "variant", "loss"], loss_rows)?;
    dir.csv("toy_convergence.csv", &["seed", "variant", "converged_at", "final_loss"], conv_rows)?;
    if a.svg {
        dir.plot(
            "toy.svg",
            &LinePlot {
                title: format!("Toy problem, lr {}", num(a.lr)),
                x_label: "iteration".into(),
                y_label: "Van Rossum loss".into(),
                series,
            },
        )?;
    }
    Ok(Outcome { passed: true, summary })
}

fn sweep(a: &SweepArgs, dir: &mut RunDir) -> Result<Outcome, CliError> {
    let template = toy_template(&a.neuron, 0.0, a.iterations)?;
    let res = lr_sweep(&template, &a.lrs.0, &a.seeds.0)?;
    let mut rows = Vec::new();
    let mut finals = Vec::new();
    for c in &res.cells {
        let name = variant_name(c.with_reset_term);
        for (it, (m, s)) in c.stats.mean.iter().zip(&c.stats.std).enumerate() {
            rows.push(vec![num(c.lr), it.to_string(), name.into(), num(*m), num(*s)]);
        }
        for (seed, l) in c.seeds.iter().zip(&c.final_losses) {
            finals.push(vec![num(c.lr), name.into(), seed.to_string(), num(*l)]);
        }
    }
    dir.csv("sweep.csv", &["lr", "iteration", "variant", "mean_loss", "std_loss"], rows)?;
    dir.csv("sweep_final.csv", &["lr", "variant", "seed", "final_loss"], finals)?;
    let mut summary = Vec::new();
    for &lr in &a.lrs.0 {
        let (on, off) = (res.cell(lr, true).unwrap(), res.cell(lr, false).unwrap());
        let pooled = res.pooled_std(lr).unwrap();
        println!(
            "lr {}: mean final loss reset_on {} reset_off {} (pooled std {})",
            num(lr),
            num(on.mean_final()),
            num(off.mean_final()),
            num(pooled)
        );
        summary.push((format!("lr_{}_reset_on", num(lr)), num(on.mean_final())));
        summary.push((format!("lr_{}_reset_off", num(lr)), num(off.mean_final())));
        summary.push((format!("lr_{}_pooled_std", num(lr)), num(pooled)));
        if a.svg {
            let series = [on, off]
                .iter()
                .map(|c| Series {
                    label: variant_name(c.with_reset_term).into(),
                    x: (0..c.stats.mean.len()).map(|i| i as f64).collect(),
                    mean: c.stats.mean.clone(),
                    std: c.stats.std.clone(),
                })
                .collect();
            dir.plot(
                &format!("sweep_lr{}.svg", num(lr)),
                &LinePlot {
                    title: format!("lr {} over {} seeds", num(lr), a.seeds.0.len()),
                    x_label: "iteration".into(),
                    y_label: "Van Rossum loss".into(),
                    series,
                },
            )?;
        }
    }
    Ok(Outcome { passed: true, summary })
}

fn mnist(a: &MnistArgs, resolved: &Resolved, dir: &mut RunDir) -> Result<Outcome, CliError> {
    let lif = a.neuron.params()?;
    let data = load_idx(&a.mnist_images, &a.mnist_labels)?;
    let n = a.subset as usize;
    if data.len() < 2 * n {
        return Err(CliError::Usage(format!(
            "--subset {n} needs {} images, the dataset has {}",
            2 * n,
            data.len()
        )));
    }
    let train = data.slice(0, n)?;
    let test = data.slice(n, 2 * n)?;
    let seeds = a.seed_list();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut series = Vec::new();
    for on in variants(a.no_reset_term) {
        let name = variant_name(on);
        let mut curves: Vec<Vec<f64>> = Vec::new();
        for &seed in &seeds {
            let cfg = ClassifierConfig {
                hidden: a.hidden.0.clone(),
                epochs: a.epochs,
                batch: a.batch as usize,
                lr: a.lr,
                seed,
                lif,
                grad: GradConfig::new(on, lif.temp)?,
                ..ClassifierConfig::default()
            };
            let res = train_classifier(&train, &test, &cfg)?;
            for e in &res.epochs {
                rows.push(vec![e.epoch.to_string(), seed.to_string(), name.into(), num(e.train_acc), num(e.test_acc)]);
            }
            let last = res.epochs.last().expect("epoch 0 is always recorded");
            println!("{name} seed {seed}: train {} test {}", num(last.train_acc), num(last.test_acc));
            let ck = Checkpoint::from_network(&res.net, checkpoint_config(resolved, seed, on));
            dir.text(&format!("mnist_seed{seed}_{name}.ckpt"), &ck.to_text()?)?;
            curves.push(res.epochs.iter().map(|e| e.test_acc).collect());
        }
        let refs: Vec<&[f64]> = curves.iter().map(Vec::as_slice).collect();
        let stats = curve_stats(&refs)?;
        let mean_final = stats.mean[stats.mean.len() - 1];
        println!("{name}: mean final test accuracy {}", num(mean_final));
        summary.push((format!("{name}_mean_test_acc"), num(mean_final)));
        series.push(Series {
            label: name.into(),
            x: (0..stats.mean.len()).map(|i| i as f64).collect(),
            mean: stats.mean,
            std: stats.std,
        });
    }
    dir.csv("mnist.csv", &["epoch", "seed", "variant", "train_acc", "test_acc"], rows)?;
    if a.svg {
        dir.plot(
            "mnist.svg",
            &LinePlot {
                title: format!("MNIST subset {n}/{n}"),
                x_label: "epoch".into(),
                y_label: "test accuracy".into(),
                series,
            },
        )?;
    }
    Ok(Outcome { passed: true, summary })
}
