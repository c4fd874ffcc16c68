use super::config::ExperimentConfig;
use super::metrics::{sample_parameters, Evaluator, MetricsRecord};
use super::objective::{build_samples, network_for, LossPath, TrainingObjective};
use super::svg::loss_plot;
use crate::error::Result;
use crate::nn::{write_checkpoint, Checkpoint, Network};
use crate::optim::{
    ngd_step, sgd_step, Adam, AdamConfig, CosineSchedule, Lbfgs, LbfgsConfig, NgdConfig, Objective, OptimizerKind,
};
use crate::precision::{Half, Real, ScalarKind};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Offsets keeping the training, test and initialization streams disjoint.
const TRAIN_STREAM: u64 = 0x7472_6169;
const TEST_STREAM: u64 = 0x7465_7374;

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub param_count: usize,
    pub records: Vec<MetricsRecord>,
    pub diverged: bool,
    pub line_search_failures: usize,
    pub fallbacks: usize,
    pub overflow_events: usize,
    /// Final parameters widened to binary64.
    pub theta: Vec<f64>,
}

impl RunReport {
    pub fn last(&self) -> &MetricsRecord {
        self.records.last().expect("initial metrics are always recorded")
    }
}

pub fn run_training(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let report = match config.precision {
        ScalarKind::Binary16 => train::<Half>(config)?,
        ScalarKind::Binary32 => train::<f32>(config)?,
        ScalarKind::Binary64 => train::<f64>(config)?,
    };
    if let Some(dir) = &config.output_dir {
        write_outputs(dir, &report)?;
    }
    Ok(report)
}

enum Optimizer<T> {
    Sgd(CosineSchedule),
    Adam(Adam<T>, CosineSchedule),
    Lbfgs(Lbfgs<T>),
    Ngd(NgdConfig),
}

fn optimizer<T: Real>(config: &ExperimentConfig, len: usize) -> Optimizer<T> {
    let kind = config.precision;
    let h = &config.hyper;
    let mut schedule = CosineSchedule::for_precision(kind);
    schedule.eta0 = h.eta0.unwrap_or(schedule.eta0);
    schedule.eta_min = h.eta_min.unwrap_or(schedule.eta_min);
    schedule.t_max = h.t_max.unwrap_or(schedule.t_max);
    match config.optimizer {
        OptimizerKind::Sgd => Optimizer::Sgd(schedule),
        OptimizerKind::Adam => {
            let mut c = AdamConfig::for_precision(kind);
            c.eps = h.adam_eps.unwrap_or(c.eps);
            Optimizer::Adam(Adam::new(c, len), schedule)
        }
        OptimizerKind::Lbfgs => {
            let mut c = LbfgsConfig::for_precision(kind);
            if let Some(t) = h.lbfgs_tolerance {
                c.tolerance_grad = t;
                c.tolerance_change = t;
                c.wolfe.tolerance_change = t;
            }
            Optimizer::Lbfgs(Lbfgs::new(c))
        }
        OptimizerKind::Ngd => {
            let mut c = NgdConfig::for_precision(kind);
            if let Some(t) = h.ngd_tolerance {
                c.cg_tol = t;
                c.damping = t;
            }
            Optimizer::Ngd(c)
        }
    }
}

fn outputs_f64<T: Real>(net: &Network<T>, theta: &[T], ys: &[[f64; 4]]) -> Result<Vec<Vec<f64>>> {
    ys.iter()
        .map(|y| {
            let yt: Vec<T> = y.iter().map(|&v| T::from_f64(v)).collect();
            Ok(net.forward(theta, &yt)?.iter().map(|v| v.to_f64()).collect())
        })
        .collect()
}

fn train<T: Real>(config: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    let path = LossPath::<T>::new(config.formulation, config.levels, config.preconditioning)?;
    let net = network_for::<T>(config.architecture, config.formulation, config.levels, config.preconditioning)?;
    let train_ys = sample_parameters(config.k_train, config.seed ^ TRAIN_STREAM);
    let test_ys = sample_parameters(config.n_test, config.seed ^ TEST_STREAM);
    let batch = build_samples(&path, &train_ys)?;
    let evaluator = Evaluator::new(config.formulation, config.levels, config.preconditioning, &test_ys)?;

    let mut params = net.init(config.seed);
    let mut opt = optimizer::<T>(config, params.len());
    let mut obj = TrainingObjective::new(&net, &path, &batch);

    let mut report = RunReport {
        config: config.clone(),
        param_count: net.param_count(),
        records: Vec::new(),
        diverged: false,
        line_search_failures: 0,
        fallbacks: 0,
        overflow_events: 0,
        theta: Vec::new(),
    };
    let record = |epoch: usize, train_loss: f64, theta: &[T], report: &mut RunReport| -> Result<()> {
        let (test_loss, mre, mse) = evaluator.evaluate(&outputs_f64(&net, theta, &test_ys)?)?;
        report.records.push(MetricsRecord {
            epoch,
            train_loss,
            test_loss,
            mre,
            mse,
            wall_time: start.elapsed().as_secs_f64(),
        });
        Ok(())
    };

    let initial = obj.loss(params.values())?;
    record(0, initial, params.values(), &mut report)?;

    for epoch in 1..=config.epochs {
        let theta = params.values_mut();
        let loss = match &mut opt {
            Optimizer::Sgd(s) => {
                let (l, g) = obj.eval(theta)?;
                if l.is_finite() {
                    sgd_step(theta, &g, s.lr(epoch - 1));
                }
                l
            }
            Optimizer::Adam(a, s) => {
                let (l, g) = obj.eval(theta)?;
                if l.is_finite() {
                    a.step(theta, &g, s.lr(epoch - 1));
                }
                l
            }
            Optimizer::Lbfgs(lb) => {
                let r = lb.step(&mut obj, theta)?;
                report.line_search_failures += r.line_search_failed as usize;
                report.fallbacks += r.fallback as usize;
                r.loss
            }
            Optimizer::Ngd(c) => {
                let r = ngd_step(&mut obj, theta, c)?;
                report.line_search_failures += r.line_search_failed as usize;
                report.fallbacks += r.fallback as usize;
                r.loss
            }
        };
        if obj.overflow {
            report.overflow_events += 1;
        }
        // `loss` was measured before this epoch's update.
        if !loss.is_finite() {
            report.diverged = true;
            record(epoch, loss, params.values(), &mut report)?;
            break;
        }
        if epoch % config.record_every == 0 || epoch == config.epochs {
            let after = obj.loss(params.values())?;
            record(epoch, after, params.values(), &mut report)?;
            if !after.is_finite() {
                report.diverged = true;
                break;
            }
        }
    }
    report.theta = params.flatten();
    Ok(report)
}

/// Binary64 values in scientific notation with 17 significant digits.
pub fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: [&str; 13] = [
    "name",
    "formulation",
    "optimizer",
    "preconditioning",
    "architecture",
    "precision",
    "levels",
    "epochs",
    "k_train",
    "n_test",
    "mre",
    "mse",
    "loss",
];

/// Writes `metrics.csv`, `timing.csv`, `summary.csv`, `config.toml`,
/// `checkpoint.txt` and `loss.svg` into `dir`.
pub fn write_outputs(dir: &Path, report: &RunReport) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let cfg = &report.config;
    let mut written = Vec::new();

    let p = dir.join(METRICS_FILE);
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["epoch", "train_loss", "test_loss", "mre", "mse"])?;
    for r in &report.records {
        w.write_record([r.epoch.to_string(), sci(r.train_loss), sci(r.test_loss), sci(r.mre), sci(r.mse)])
            ?;
    }
    w.flush()?;
    written.push(p);

    // Wall time is kept apart so the metrics file stays reproducible byte for byte.
    let p = dir.join("timing.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["epoch", "wall_time_s"])?;
    for r in &report.records {
        w.write_record([r.epoch.to_string(), sci(r.wall_time)])?;
    }
    w.flush()?;
    written.push(p);

    let last = report.last();
    let p = dir.join(SUMMARY_FILE);
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(SUMMARY_HEADER)?;
    w.write_record([
        cfg.name.clone(),
        cfg.formulation.to_string(),
        cfg.optimizer.to_string(),
        cfg.preconditioning.to_string(),
        cfg.architecture.to_string(),
        cfg.precision.to_string(),
        cfg.levels.to_string(),
        cfg.epochs.to_string(),
        cfg.k_train.to_string(),
        cfg.n_test.to_string(),
        sci(last.mre),
        sci(last.mse),
        sci(last.test_loss),
    ])
    ?;
    w.flush()?;
    written.push(p);

    let p = dir.join("config.toml");
    std::fs::write(&p, cfg.to_toml()?)?;
    written.push(p);

    let p = dir.join("checkpoint.txt");
    write_checkpoint(
        &p,
        &Checkpoint {
            arch: cfg.architecture,
            seed: cfg.seed,
            metadata: vec![
                ("formulation".into(), cfg.formulation.to_string()),
                ("preconditioning".into(), cfg.preconditioning.to_string()),
                ("levels".into(), cfg.levels.to_string()),
                ("precision".into(), cfg.precision.to_string()),
                ("diverged".into(), report.diverged.to_string()),
            ],
            params: report.theta.clone(),
        },
    )?;
    written.push(p);

    let p = dir.join("loss.svg");
    let train: Vec<(f64, f64)> = report.records.iter().map(|r| (r.epoch as f64, r.train_loss)).collect();
    let test: Vec<(f64, f64)> = report.records.iter().map(|r| (r.epoch as f64, r.test_loss)).collect();
    std::fs::write(&p, loss_plot(&cfg.name, &[("train", &train), ("test", &test)]))?;
    written.push(p);
    Ok(written)
}
