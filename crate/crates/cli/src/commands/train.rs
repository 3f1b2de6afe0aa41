use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use dafd::checkpoint::write_checkpoint;
use dafd::data::{load_idx_dataset, Manifest};
use dafd::net::{
    build_network, build_task, evaluate, fit, task_from_datasets, EpochRecord, NetSpec, Network,
    StepRecord, TaskData, TaskSpec,
};
use dafd::tensor::Real;
use dafd::DomainId;

use crate::artifacts::{self, opt, EPOCHS_HEADER, METRICS_HEADER};
use crate::config::{DataSource, Precision, RunConfig};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionSummary {
    pub shared: usize,
    pub per_domain: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainResults {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub arch: String,
    pub mode: String,
    pub target_fraction: f64,
    pub k: usize,
    pub precision: String,
    pub source_acc: f64,
    pub target_acc: f64,
    pub source_per_class: Vec<f64>,
    pub target_per_class: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
    pub mmd_bandwidths: Vec<f64>,
    pub params: PartitionSummary,
    pub data: Vec<Manifest>,
    pub threads: usize,
    pub wall_clock_seconds: f64,
}

/// Builds the source/target task the configuration describes.
pub fn load_task(cfg: &RunConfig) -> Result<TaskData, CliError> {
    let t = &cfg.train;
    let task = match cfg.data.source {
        DataSource::Shapes => {
            let spec = TaskSpec {
                shapes: cfg.data.shapes.clone(),
                train_per_class: cfg.data.train_per_class,
                test_per_class: cfg.data.test_per_class,
                size: cfg.data.size,
                shift: cfg.shift,
                data_seed: cfg.data.data_seed,
            };
            build_task(&spec, t.target_fraction, t.mode, cfg.split_seed())?
        }
        DataSource::Idx => {
            let d = &cfg.data;
            let path = |p: &Option<std::path::PathBuf>| p.clone().expect("validated");
            let train = load_idx_dataset(path(&d.train_images), path(&d.train_labels), DomainId::source())?;
            let test = load_idx_dataset(path(&d.test_images), path(&d.test_labels), DomainId::source())?;
            task_from_datasets(
                &train,
                &test,
                &cfg.shift,
                t.target_fraction,
                t.mode,
                d.data_seed,
                cfg.split_seed(),
            )?
        }
    };
    Ok(task)
}

pub fn net_spec(cfg: &RunConfig, task: &TaskData) -> NetSpec {
    let [_, c, h, w] = task.source_train.images.dims();
    let classes = task
        .source_train
        .classes
        .max(task.source_test.classes)
        .max(task.target_train.classes);
    let mut spec = NetSpec::toy_for(cfg.model.arch, [c, h, w], classes).with_k(cfg.model.k);
    spec.branched = cfg.model.branched;
    spec
}

fn metrics_row(out: &mut String, r: &StepRecord) {
    let m = &r.metrics;
    let g = |d: usize| m.grad_norm_domain.get(d).copied();
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{}",
        r.epoch,
        r.step,
        m.loss,
        m.loss_s,
        opt(m.loss_t),
        opt(m.mmd),
        m.grad_norm_shared,
        opt(g(0)),
        opt(g(1)),
    );
}

fn train_typed<T: Real>(cfg: &RunConfig, task: &TaskData, out: &Path, quiet: bool) -> Result<TrainResults, CliError> {
    let start = Instant::now();
    let spec = net_spec(cfg, task);
    let mut net: Network<T> = build_network(&spec, cfg.run.seed)?;
    let tc = cfg.train_config();

    let mut metrics = String::from(METRICS_HEADER);
    let mut epochs_csv = String::from(EPOCHS_HEADER);
    let mut last_step: Option<(usize, usize)> = None;
    let result = fit(
        &mut net,
        task,
        &tc,
        |r| {
            metrics_row(&mut metrics, r);
            last_step = Some((r.epoch, r.step));
        },
        |e| {
            let _ = writeln!(epochs_csv, "{},{},{},{}", e.epoch, e.source_acc, e.target_acc, e.eval_mmd);
            if !quiet {
                eprintln!(
                    "epoch {:>3}  source {:.4}  target {:.4}  mmd {:.5}",
                    e.epoch, e.source_acc, e.target_acc, e.eval_mmd
                );
            }
        },
    );
    artifacts::write(out, "metrics.csv", &metrics)?;
    artifacts::write(out, "epochs.csv", &epochs_csv)?;
    let summary = match result {
        Ok(s) => s,
        Err(dafd::Error::NonFinite(what)) => {
            let at = match last_step {
                Some((e, s)) => format!("after epoch {e} step {s}"),
                None => "at the first step".into(),
            };
            return Err(CliError::Numerical(format!(
                "non-finite {what} {at}; lower train.lr or train.mmd_weight"
            )));
        }
        Err(e) => return Err(e.into()),
    };

    let source = evaluate(&net, &task.source_test, &net.domains()[0].clone())?;
    let target = evaluate(&net, &task.target_test, &net.domains()[1].clone())?;
    if cfg.output.features {
        let mut table = source.table.clone();
        table.rows.extend(target.table.rows.iter().cloned());
        artifacts::write(out, "features.csv", table.to_csv())?;
    }
    if cfg.output.checkpoint {
        write_checkpoint(out.join("checkpoint.bin"), &net)?;
    }
    let counts = net.partition_counts();
    let results = TrainResults {
        version: artifacts::version(),
        command: "train".into(),
        seed: cfg.run.seed,
        arch: cfg.model.arch.to_string(),
        mode: tc.mode.name().into(),
        target_fraction: tc.target_fraction,
        k: cfg.model.k,
        precision: if T::WIDTH == 4 { "f32" } else { "f64" }.into(),
        source_acc: source.accuracy,
        target_acc: target.accuracy,
        source_per_class: source.per_class,
        target_per_class: target.per_class,
        epochs: summary.epochs,
        steps: summary.steps,
        mmd_bandwidths: summary.bandwidths,
        params: PartitionSummary {
            shared: counts.shared,
            per_domain: counts.per_domain,
        },
        data: vec![
            task.source_train.manifest(),
            task.target_train.manifest(),
            task.source_test.manifest(),
            task.target_test.manifest(),
        ],
        threads: rayon::current_num_threads(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    artifacts::write_json(out, "results.json", &results)?;
    Ok(results)
}

/// Trains one configuration into `out`.
pub fn run_train(cfg: &RunConfig, out: &Path, quiet: bool) -> Result<TrainResults, CliError> {
    artifacts::ensure_dir(out)?;
    artifacts::write(out, "config.ini", cfg.to_text())?;
    let task = load_task(cfg)?;
    match cfg.model.precision {
        Precision::F32 => train_typed::<f32>(cfg, &task, out, quiet),
        Precision::F64 => train_typed::<f64>(cfg, &task, out, quiet),
    }
}
