use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mmd::{median_bandwidths, mmd_loss, DEFAULT_BANDWIDTH_SCALES};
use super::network::{Network, Partition};
use crate::data::{gen_shapes, split_fraction, Dataset, ShapeKind, ShiftSpec};
use crate::domain::DomainId;
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{softmax_xent, Real, SgdMomentum, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// `loss_s + loss_t` on labeled batches from both domains.
    SupervisedBoth,
    /// `loss_s + mmd_weight * MMD(features_s, features_t)`; target labels unused.
    UnsupervisedTarget,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "supervised-both" | "supervised" => Ok(Mode::SupervisedBoth),
            "unsupervised-target" | "unsupervised" => Ok(Mode::UnsupervisedTarget),
            other => Err(invalid(format!("unknown mode '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mode::SupervisedBoth => "supervised-both",
            Mode::UnsupervisedTarget => "unsupervised-target",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub target_fraction: f64,
    pub mode: Mode,
    pub mmd_weight: f64,
    /// Multipliers of the median pairwise feature distance.
    pub mmd_bandwidths: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            lr: 0.02,
            momentum: 0.9,
            seed: 1,
            target_fraction: 0.005,
            mode: Mode::SupervisedBoth,
            mmd_weight: 0.0,
            mmd_bandwidths: DEFAULT_BANDWIDTH_SCALES.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch size must be positive"));
        }
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(invalid(format!("target fraction {} outside (0, 1]", self.target_fraction)));
        }
        if !(self.mmd_weight >= 0.0 && self.mmd_weight.is_finite()) {
            return Err(invalid(format!("mmd weight {} must be >= 0", self.mmd_weight)));
        }
        if self.mode == Mode::UnsupervisedTarget && self.mmd_weight <= 0.0 {
            return Err(invalid("unsupervised-target mode requires mmd weight > 0"));
        }
        if self.mmd_bandwidths.is_empty() || self.mmd_bandwidths.iter().any(|&b| !(b > 0.0)) {
            return Err(invalid("mmd bandwidths must be a non-empty list of positive values"));
        }
        SgdMomentum::<f64>::new(self.lr, self.momentum)?;
        Ok(())
    }
}

/// A labeled batch. In unsupervised mode the target labels are never read.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, T> {
    pub images: &'a Tensor4<T>,
    pub labels: &'a [usize],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub loss_s: f64,
    pub loss_t: Option<f64>,
    pub mmd: Option<f64>,
    pub loss: f64,
    pub grad_norm_shared: f64,
    /// Indexed by domain.
    pub grad_norm_domain: Vec<f64>,
}

/// Gradient of the summed loss, without updating the network.
///
/// Source and target passes accumulate into one gradient network; the
/// layers route atom gradients to the domain that produced them.
pub fn loss_and_grad<T: Real>(
    net: &Network<T>,
    source: Batch<'_, T>,
    target: Option<Batch<'_, T>>,
    cfg: &TrainConfig,
    bandwidths: &[f64],
) -> Result<(StepMetrics, Network<T>)> {
    let domains = net.domains();
    if domains.len() < 2 && target.is_some() {
        return Err(invalid("target batch given to a single-domain network"));
    }
    let mut grads = net.zeros_like();
    let (out_s, cache_s) = net.forward_index(source.images, 0)?;
    let (loss_s, dlog_s) = softmax_xent(&out_s.logits, source.labels)?;
    let mut loss = loss_s.f64();
    let mut loss_t = None;
    let mut mmd = None;
    match (cfg.mode, target) {
        (_, None) => {
            net.backward(&cache_s, Some(&dlog_s), None, &mut grads)?;
        }
        (Mode::SupervisedBoth, Some(t)) => {
            net.backward(&cache_s, Some(&dlog_s), None, &mut grads)?;
            let (out_t, cache_t) = net.forward_index(t.images, 1)?;
            let (lt, dlog_t) = softmax_xent(&out_t.logits, t.labels)?;
            net.backward(&cache_t, Some(&dlog_t), None, &mut grads)?;
            loss += lt.f64();
            loss_t = Some(lt.f64());
        }
        (Mode::UnsupervisedTarget, Some(t)) => {
            let (out_t, cache_t) = net.forward_index(t.images, 1)?;
            let m = mmd_loss(&out_s.features, &out_t.features, bandwidths)?;
            let w = T::of(cfg.mmd_weight);
            let gs = m.grad_s.scale(w);
            let gt = m.grad_t.scale(w);
            net.backward(&cache_s, Some(&dlog_s), Some(&gs), &mut grads)?;
            net.backward(&cache_t, None, Some(&gt), &mut grads)?;
            loss += cfg.mmd_weight * m.value.f64();
            mmd = Some(m.value.f64());
        }
    }
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("training loss or gradient".into()));
    }
    let (grad_norm_shared, grad_norm_domain) = grads.partition_norms();
    Ok((
        StepMetrics {
            loss_s: loss_s.f64(),
            loss_t,
            mmd,
            loss,
            grad_norm_shared,
            grad_norm_domain,
        },
        grads,
    ))
}

/// One SGD step on the summed loss.
pub fn train_step<T: Real>(
    net: &mut Network<T>,
    opt: &mut SgdMomentum<T>,
    source: Batch<'_, T>,
    target: Option<Batch<'_, T>>,
    cfg: &TrainConfig,
    bandwidths: &[f64],
) -> Result<StepMetrics> {
    let (metrics, grads) = loss_and_grad(net, source, target, cfg, bandwidths)?;
    apply_grads(net, opt, &grads)?;
    Ok(metrics)
}

pub fn apply_grads<T: Real>(net: &mut Network<T>, opt: &mut SgdMomentum<T>, grads: &Network<T>) -> Result<()> {
    let g: Vec<Vec<T>> = grads.blocks().into_iter().map(|(_, v)| v).collect();
    let g_refs: Vec<&[T]> = g.iter().map(|v| v.as_slice()).collect();
    let mut params: Vec<&mut [T]> = net.blocks_mut().into_iter().map(|(_, v)| v).collect();
    opt.step(&mut params, &g_refs)
}

/// Elementwise mean of per-domain features for aligned batches.
pub fn fused_feature<T: Real>(net: &Network<T>, batches: &[(&Tensor4<T>, &DomainId)]) -> Result<Tensor4<T>> {
    let (first, rest) = batches
        .split_first()
        .ok_or_else(|| Error::Empty("fused feature of zero domains".into()))?;
    let n = first.0.dims()[0];
    if let Some((b, _)) = rest.iter().find(|(b, _)| b.dims()[0] != n) {
        return Err(shape_err(format!("misaligned batches: {n} and {}", b.dims()[0])));
    }
    let mut acc = net.forward(first.0, first.1)?.0.features;
    for (b, d) in rest {
        acc = acc.add(&net.forward(b, d)?.0.features)?;
    }
    Ok(acc.scale(T::one() / T::of(batches.len() as f64)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub sample_id: usize,
    pub label: usize,
    pub domain: String,
    pub features: Vec<f64>,
}

/// Rows for external embedding tools.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `sample_id,label,domain,f0..f{d-1}`.
    pub fn to_csv(&self) -> String {
        let d = self.rows.first().map_or(0, |r| r.features.len());
        let mut out = String::from("sample_id,label,domain");
        for i in 0..d {
            out.push_str(&format!(",f{i}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{},{}", r.sample_id, r.label, r.domain));
            for v in &r.features {
                out.push_str(&format!(",{v:e}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    pub correct: usize,
    pub total: usize,
    #[serde(skip)]
    pub table: FeatureTable,
}

pub const EVAL_CHUNK: usize = 256;

fn score(logits: &[Vec<f64>], labels: &[usize], classes: usize) -> (usize, Vec<f64>) {
    let mut hit = vec![0usize; classes];
    let mut count = vec![0usize; classes];
    for (row, &l) in logits.iter().zip(labels) {
        count[l] += 1;
        // First maximum wins, so ties resolve identically on every run.
        let pred = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0;
        if pred == l {
            hit[l] += 1;
        }
    }
    let per = hit
        .iter()
        .zip(&count)
        .map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 })
        .collect();
    (hit.iter().sum(), per)
}

fn evaluation(
    logits: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
    ds: &Dataset,
    domain: &str,
) -> Evaluation {
    let (correct, per_class) = score(&logits, &ds.labels, ds.classes);
    let rows = features
        .into_iter()
        .zip(&ds.labels)
        .enumerate()
        .map(|(i, (f, &label))| FeatureRow {
            sample_id: i,
            label,
            domain: domain.to_string(),
            features: f,
        })
        .collect();
    Evaluation {
        accuracy: correct as f64 / ds.len() as f64,
        per_class,
        correct,
        total: ds.len(),
        table: FeatureTable { rows },
    }
}

fn rows_of<T: Real>(t: &Tensor4<T>) -> Vec<Vec<f64>> {
    (0..t.dims()[0])
        .map(|i| t.sample(i).iter().map(|v| v.f64()).collect())
        .collect()
}

fn chunks(n: usize) -> Vec<(usize, usize)> {
    (0..n).step_by(EVAL_CHUNK).map(|s| (s, (s + EVAL_CHUNK).min(n))).collect()
}

/// Accuracy, per-class accuracy and feature table of one domain's inputs.
///
/// Chunks run on the rayon pool; every sample is computed independently,
/// so results do not depend on the thread count.
pub fn evaluate<T: Real>(net: &Network<T>, ds: &Dataset, domain: &DomainId) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::Empty("evaluation dataset".into()));
    }
    net.domain_index(domain)?;
    let images: Tensor4<T> = ds.images.cast();
    let parts = chunks(ds.len())
        .into_par_iter()
        .map(|(s, e)| {
            let out = net.forward(&images.slice_batch(s, e), domain)?.0;
            Ok((rows_of(&out.logits), rows_of(&out.features)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (logits, features): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok(evaluation(
        logits.concat(),
        features.concat(),
        ds,
        &domain.name,
    ))
}

/// Classifies the mean of per-domain features over aligned datasets. With a
/// single view this reduces to [`evaluate`].
pub fn evaluate_fused<T: Real>(net: &Network<T>, views: &[(&Dataset, &DomainId)]) -> Result<Evaluation> {
    let (first, _) = views
        .first()
        .ok_or_else(|| Error::Empty("fused evaluation of zero domains".into()))?;
    if first.is_empty() {
        return Err(Error::Empty("evaluation dataset".into()));
    }
    if views.iter().any(|(d, _)| d.labels != first.labels) {
        return Err(shape_err("fused evaluation needs aligned datasets"));
    }
    let imgs: Vec<Tensor4<T>> = views.iter().map(|(d, _)| d.images.cast()).collect();
    let parts = chunks(first.len())
        .into_par_iter()
        .map(|(s, e)| {
            let slices: Vec<Tensor4<T>> = imgs.iter().map(|t| t.slice_batch(s, e)).collect();
            let pairs: Vec<(&Tensor4<T>, &DomainId)> =
                slices.iter().zip(views.iter().map(|(_, d)| *d)).collect();
            let f = fused_feature(net, &pairs)?;
            let logits = net.classify(&f)?;
            Ok((rows_of(&logits), rows_of(&f)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (logits, features): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    let name = views.iter().map(|(_, d)| d.name.as_str()).collect::<Vec<_>>().join("+");
    Ok(evaluation(logits.concat(), features.concat(), first, &name))
}

/// Train/test splits for a source and a shifted target domain.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub source_train: Dataset,
    /// Labeled target subset (supervised) or the full target set (unsupervised).
    pub target_train: Dataset,
    pub source_test: Dataset,
    /// The shifted source test set, aligned sample by sample.
    pub target_test: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub shapes: Vec<ShapeKind>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub size: usize,
    pub shift: ShiftSpec,
    pub data_seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            shapes: ShapeKind::ALL.to_vec(),
            train_per_class: 800,
            test_per_class: 200,
            size: 18,
            shift: ShiftSpec::patch_rotate_negate(),
            data_seed: 7,
        }
    }
}

fn shifted(ds: &Dataset, shift: &ShiftSpec) -> Result<Dataset> {
    crate::data::apply_shift(ds, shift, DomainId::target())
}

/// Builds the toy task. The target training pool is the shift applied to
/// an independently drawn set; `fraction` of it keeps its labels.
pub fn build_task(spec: &TaskSpec, fraction: f64, mode: Mode, split_seed: u64) -> Result<TaskData> {
    let s = spec.data_seed;
    let source_train = gen_shapes(&spec.shapes, spec.train_per_class, spec.size, s)?;
    let target_pool = shifted(
        &gen_shapes(&spec.shapes, spec.train_per_class, spec.size, s.wrapping_add(1))?,
        &spec.shift,
    )?;
    let source_test = gen_shapes(&spec.shapes, spec.test_per_class, spec.size, s.wrapping_add(2))?;
    let target_test = shifted(&source_test, &spec.shift)?;
    let target_train = match mode {
        Mode::SupervisedBoth => split_fraction(&target_pool, fraction, split_seed, true)?.0,
        Mode::UnsupervisedTarget => target_pool,
    };
    Ok(TaskData {
        source_train,
        target_train,
        source_test,
        target_test,
    })
}

/// A task over loaded train/test sets. The training set is halved
/// (stratified, by `data_seed`): one half is the source, the shifted other
/// half the target pool, so no image appears in both domains.
pub fn task_from_datasets(
    train: &Dataset,
    test: &Dataset,
    shift: &ShiftSpec,
    fraction: f64,
    mode: Mode,
    data_seed: u64,
    split_seed: u64,
) -> Result<TaskData> {
    let (target_half, source_train) = split_fraction(train, 0.5, data_seed, true)?;
    let target_pool = shifted(&target_half, shift)?;
    let source_train = source_train.with_domain(DomainId::source());
    let target_train = match mode {
        Mode::SupervisedBoth => split_fraction(&target_pool, fraction, split_seed, true)?.0,
        Mode::UnsupervisedTarget => target_pool,
    };
    Ok(TaskData {
        source_train,
        target_train,
        source_test: test.clone().with_domain(DomainId::source()),
        target_test: shifted(test, shift)?,
    })
}

/// Images converted to the training precision, for use as batches.
fn images_as<T: Real>(ds: &Dataset) -> Tensor4<T> {
    ds.images.cast()
}

/// Per-step record emitted by [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub metrics: StepMetrics,
}

/// Held-out evaluation at the end of an epoch (epoch 0 = initialization).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub source_acc: f64,
    pub target_acc: f64,
    /// Feature MMD between the fixed source and target evaluation batches.
    pub eval_mmd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
    /// Absolute MMD bandwidths fixed at the first batch.
    pub bandwidths: Vec<f64>,
}

/// Number of samples in the fixed MMD evaluation batches.
pub const EVAL_MMD_SAMPLES: usize = 128;

fn eval_mmd<T: Real>(net: &Network<T>, s: &Tensor4<T>, t: &Tensor4<T>, bw: &[f64]) -> Result<f64> {
    let fs = net.forward_index(s, 0)?.0.features;
    let ft = net.forward_index(t, 1)?.0.features;
    Ok(mmd_loss(&fs, &ft, bw)?.value.f64())
}

/// Runs the training loop.
///
/// Each epoch is one seeded pass over the source set in batches of
/// `batch_size`; each step pairs it with the next `min(batch_size, n_t)`
/// samples of a reshuffled cyclic stream over the target set. Held-out
/// accuracies and the evaluation MMD are recorded before training and
/// after every epoch.
pub fn fit<T: Real>(
    net: &mut Network<T>,
    task: &TaskData,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitSummary> {
    cfg.validate()?;
    if net.domains().len() < 2 {
        return Err(invalid("training needs a source and a target domain"));
    }
    let src = images_as::<T>(&task.source_train);
    let tgt = images_as::<T>(&task.target_train);
    if src.dims()[0] == 0 || tgt.dims()[0] == 0 {
        return Err(Error::Empty("training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = SgdMomentum::<T>::new(cfg.lr, cfg.momentum)?;
    let (ns, nt) = (task.source_train.len(), task.target_train.len());
    let tb = cfg.batch_size.min(nt);

    let e = EVAL_MMD_SAMPLES.min(task.source_test.len()).min(task.target_test.len());
    let eval_s: Tensor4<T> = task.source_test.images.slice_batch(0, e).cast();
    let eval_t: Tensor4<T> = task.target_test.images.slice_batch(0, e).cast();
    let (src_dom, tgt_dom) = (net.domains()[0].clone(), net.domains()[1].clone());

    let mut t_order: Vec<usize> = (0..nt).collect();
    t_order.shuffle(&mut rng);
    let mut t_pos = 0;
    let mut next_target = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        let mut out = Vec::with_capacity(tb);
        while out.len() < tb {
            if t_pos == nt {
                t_order.shuffle(rng);
                t_pos = 0;
            }
            out.push(t_order[t_pos]);
            t_pos += 1;
        }
        out
    };

    // Bandwidths come from the first source/target batch at initialization.
    let mut s_order: Vec<usize> = (0..ns).collect();
    s_order.shuffle(&mut rng);
    let first_t = next_target(&mut rng);
    let bandwidths = {
        let bs = cfg.batch_size.min(ns);
        let fs = net.forward_index(&src.select(&s_order[..bs]), 0)?.0.features;
        let ft = net.forward_index(&tgt.select(&first_t), 1)?.0.features;
        median_bandwidths(&fs, &ft, &cfg.mmd_bandwidths)
    };

    let record = |net: &Network<T>, epoch: usize| -> Result<EpochRecord> {
        Ok(EpochRecord {
            epoch,
            source_acc: evaluate(net, &task.source_test, &src_dom)?.accuracy,
            target_acc: evaluate(net, &task.target_test, &tgt_dom)?.accuracy,
            eval_mmd: eval_mmd(net, &eval_s, &eval_t, &bandwidths)?,
        })
    };
    let mut epochs = vec![record(net, 0)?];
    on_epoch(&epochs[0]);

    let mut step = 0;
    let mut pending_t = Some(first_t);
    for epoch in 1..=cfg.epochs {
        if epoch > 1 {
            s_order.shuffle(&mut rng);
        }
        for chunk in s_order.chunks(cfg.batch_size) {
            let xs = src.select(chunk);
            let ys: Vec<usize> = chunk.iter().map(|&i| task.source_train.labels[i]).collect();
            let t_idx = pending_t.take().unwrap_or_else(|| next_target(&mut rng));
            let xt = tgt.select(&t_idx);
            let yt: Vec<usize> = match cfg.mode {
                Mode::SupervisedBoth => t_idx.iter().map(|&i| task.target_train.labels[i]).collect(),
                Mode::UnsupervisedTarget => Vec::new(),
            };
            let metrics = train_step(
                net,
                &mut opt,
                Batch { images: &xs, labels: &ys },
                Some(Batch { images: &xt, labels: &yt }),
                cfg,
                &bandwidths,
            )?;
            step += 1;
            on_step(&StepRecord { epoch, step, metrics });
        }
        let r = record(net, epoch)?;
        on_epoch(&r);
        epochs.push(r);
    }
    Ok(FitSummary {
        epochs,
        steps: step,
        bandwidths,
    })
}

/// Flattened gradient entries of one partition.
pub fn partition_grad<T: Real>(grads: &Network<T>, part: Partition) -> Vec<f64> {
    let mut out = Vec::new();
    grads.visit(|info, v| {
        if info.partition == part {
            out.extend(v.iter().map(|x| x.f64()));
        }
    });
    out
}
