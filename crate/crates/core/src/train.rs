//! Training loop, evaluation, ablation and the gradient-check fixture.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, OptimizerSnapshot};
use crate::config::{Precision, RunConfig};
use crate::data::{
    batch_plan, compute_alpha, gen_synthetic_clusters, gen_synthetic_xor, load_dataset,
    split_validation, Batch, ClassBalance, EmbeddingRecord, Label, Split, SyntheticKind,
};
use crate::error::{FnrError, Result};
use crate::gradcheck::{finite_diff_check, GradCheckReport};
use crate::metrics::{roc_csv, EvalReport};
use crate::model::{
    forward_pass, param_group, predict, ClassWeights, FnrParams, LossBreakdown, Mode, ModelConfig,
    ParamGroup, PARAM_NAMES,
};
use crate::optimizer::{AdamW, ParamGroupConfig, TrainState};
use crate::tensor::{Real, Tensor2};

const EVAL_CHUNK: usize = 1024;

/// Records after the train/validation/test split.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub name: String,
    pub d_in: usize,
    pub train: Vec<EmbeddingRecord>,
    pub val: Vec<EmbeddingRecord>,
    pub test: Vec<EmbeddingRecord>,
    /// Computed on the whole training split, before the validation hold-out.
    pub balance: ClassBalance,
}

impl PreparedData {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let (name, records) = match (&cfg.dataset, cfg.synthetic) {
            (Some(manifest), _) => {
                let ds = load_dataset(manifest)?;
                (ds.meta.name, ds.records)
            }
            (None, Some(SyntheticKind::Xor)) => (
                "synthetic_xor".to_string(),
                gen_synthetic_xor(cfg.synthetic_n, cfg.synthetic_d, cfg.data_seed)?,
            ),
            (None, Some(SyntheticKind::Clusters)) => (
                "synthetic_clusters".to_string(),
                gen_synthetic_clusters(
                    cfg.synthetic_n,
                    cfg.synthetic_d,
                    cfg.data_seed,
                    cfg.synthetic_separation,
                )?,
            ),
            (None, None) => {
                return Err(FnrError::Config(
                    "one of dataset or synthetic is required".into(),
                ))
            }
        };
        Self::from_records(name, records, cfg.val_fraction, cfg.seed)
    }

    pub fn from_records(
        name: String,
        records: Vec<EmbeddingRecord>,
        val_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        let d_in = records
            .first()
            .map(|r| r.text_embedding.len())
            .ok_or_else(|| FnrError::Data("dataset is empty".into()))?;
        let (train_all, test): (Vec<_>, Vec<_>) =
            records.into_iter().partition(|r| r.split == Split::Train);
        if test.is_empty() {
            return Err(FnrError::Data("dataset has no test records".into()));
        }
        let balance = compute_alpha(train_all.iter().map(|r| r.label))?;
        let (train, val) = split_validation(&train_all, val_fraction, seed)?;
        Ok(PreparedData {
            name,
            d_in,
            train,
            val,
            test,
            balance,
        })
    }
}

/// One line of the loss log. Train values are the objective over the
/// training split at the end of the epoch with dropout off; `lr_factor` is
/// the value after the scheduler saw `val_total`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_t: f64,
    pub l_i: f64,
    pub l_s: f64,
    pub l_c: f64,
    pub total: f64,
    pub val_total: f64,
    pub lr_factor: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Best-validation parameters with the optimizer state at that epoch.
    pub checkpoint: Checkpoint,
    pub stopped_early: bool,
    pub test_report: EvalReport,
}

impl TrainOutcome {
    pub fn best_epoch(&self) -> usize {
        self.checkpoint.epoch
    }

    pub fn loss_log(&self) -> String {
        self.history
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

struct Snapshot<T> {
    epoch: usize,
    params: FnrParams<T>,
    state: TrainState<T>,
}

/// Epoch-at-a-time trainer. The dropout stream and the per-epoch shuffles are
/// derived from the run seed, so a run is a pure function of its config.
pub struct Trainer<T: Real> {
    model: ModelConfig,
    groups: [ParamGroupConfig; 2],
    batch_size: usize,
    max_epochs: usize,
    seed: u64,
    weights: ClassWeights,
    params: FnrParams<T>,
    state: TrainState<T>,
    dropout_rng: ChaCha8Rng,
    best: Option<Snapshot<T>>,
    history: Vec<EpochRecord>,
    stopped: bool,
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: &RunConfig, data: &PreparedData) -> Result<Self> {
        cfg.validate()?;
        let model = cfg.model_config();
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
        let params = FnrParams::<T>::init(data.d_in, &model, &mut init_rng);
        let adam = AdamW::new(params.tensors().iter().map(|t| t.shape()));
        Ok(Trainer {
            groups: cfg.groups(),
            batch_size: cfg.batch_size,
            max_epochs: cfg.max_epochs,
            seed: cfg.seed,
            weights: data.balance.weights(),
            params,
            state: TrainState {
                adam,
                scheduler: cfg.scheduler(),
                early_stopping: cfg.early_stopping(),
                epoch: 0,
            },
            dropout_rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2)),
            best: None,
            history: Vec::new(),
            stopped: false,
            model,
        })
    }

    /// Continues from a checkpoint that carries optimizer state.
    pub fn resume(cfg: &RunConfig, data: &PreparedData, ck: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(cfg, data)?;
        if ck.d_in != data.d_in || ck.model.k != t.model.k || ck.model.hidden != t.model.hidden {
            return Err(FnrError::Config(
                "checkpoint shapes do not match the run config".into(),
            ));
        }
        let opt = ck.optimizer.as_ref().ok_or_else(|| {
            FnrError::Data("checkpoint has no optimizer state to resume from".into())
        })?;
        t.params = ck.params.cast();
        t.state = TrainState {
            adam: AdamW::from_parts(
                opt.step,
                opt.first.iter().map(Tensor2::cast).collect(),
                opt.second.iter().map(Tensor2::cast).collect(),
            )?,
            scheduler: opt.scheduler.clone(),
            early_stopping: opt.early_stopping.clone(),
            epoch: ck.epoch,
        };
        t.dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2 + ck.epoch as u64));
        Ok(t)
    }

    pub fn params(&self) -> &FnrParams<T> {
        &self.params
    }

    pub fn state(&self) -> &TrainState<T> {
        &self.state
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn finished(&self) -> bool {
        self.stopped || self.state.epoch >= self.max_epochs
    }

    fn group_refs(&self) -> Vec<&ParamGroupConfig> {
        PARAM_NAMES
            .iter()
            .map(|n| match param_group(n) {
                ParamGroup::Projector => &self.groups[0],
                ParamGroup::Classifier => &self.groups[1],
            })
            .collect()
    }

    /// Objective over `records` at the current parameters with dropout off,
    /// batch-size-weighted.
    pub fn split_loss(&self, records: &[EmbeddingRecord]) -> Result<LossBreakdown> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut acc = LossBreakdown::default();
        for idx in batch_plan(records.len(), self.batch_size, 0, false)? {
            let batch = Batch::<T>::from_indices(records, idx)?;
            let b = forward_pass(
                &batch,
                &self.params,
                &self.model,
                self.weights,
                false,
                &mut rng,
            )?
            .breakdown;
            let w = batch.len() as f64;
            acc.l_t += b.l_t * w;
            acc.l_i += b.l_i * w;
            acc.l_s += b.l_s * w;
            acc.l_c += b.l_c * w;
            acc.total += b.total * w;
        }
        let n = records.len() as f64;
        Ok(LossBreakdown {
            l_t: acc.l_t / n,
            l_i: acc.l_i / n,
            l_s: acc.l_s / n,
            l_c: acc.l_c / n,
            total: acc.total / n,
            alpha: self.weights.alpha(),
        })
    }

    /// Runs one epoch of updates and returns its log record. The logged
    /// losses are measured after the epoch's last update, without dropout.
    pub fn run_epoch(&mut self, data: &PreparedData) -> Result<EpochRecord> {
        let epoch = self.state.epoch + 1;
        let tag = |step: usize, e: FnrError| match e {
            FnrError::Numeric(msg) => {
                FnrError::Numeric(format!("epoch {epoch} step {step}: {msg}"))
            }
            other => other,
        };
        let plan = batch_plan(
            data.train.len(),
            self.batch_size,
            derive_seed(self.seed, 1000 + epoch as u64),
            true,
        )?;
        let lr_factor = self.state.lr_factor();
        let groups: Vec<ParamGroupConfig> = self.group_refs().into_iter().cloned().collect();
        let group_refs: Vec<&ParamGroupConfig> = groups.iter().collect();
        for (step, idx) in plan.into_iter().enumerate() {
            let step = step + 1;
            let batch = Batch::<T>::from_indices(&data.train, idx)?;
            let pass = forward_pass(
                &batch,
                &self.params,
                &self.model,
                self.weights,
                true,
                &mut self.dropout_rng,
            )
            .map_err(|e| tag(step, e))?;
            let grads = pass.gradients().map_err(|e| tag(step, e))?;
            if let Some(name) = grads
                .named()
                .iter()
                .find(|(_, g)| !g.all_finite())
                .map(|(n, _)| *n)
            {
                return Err(tag(
                    step,
                    FnrError::Numeric(format!("non-finite gradient for {name}")),
                ));
            }
            self.state.adam.step(
                &mut self.params.tensors_mut(),
                &grads.tensors(),
                &group_refs,
                lr_factor,
            )?;
            if !self.params.tensors().iter().all(|t| t.all_finite()) {
                return Err(tag(
                    step,
                    FnrError::Numeric("parameters became non-finite".into()),
                ));
            }
        }

        let train_loss = self.split_loss(&data.train).map_err(|e| tag(0, e))?;
        let val_total = self.split_loss(&data.val).map_err(|e| tag(0, e))?.total;
        let lr_factor = self.state.scheduler.update(val_total)?;
        let decision = self.state.early_stopping.check(val_total)?;
        self.state.epoch = epoch;
        if decision.new_best {
            self.best = Some(Snapshot {
                epoch,
                params: self.params.clone(),
                state: self.state.clone(),
            });
        }
        self.stopped = decision.stop;
        let record = EpochRecord {
            epoch,
            l_t: train_loss.l_t,
            l_i: train_loss.l_i,
            l_s: train_loss.l_s,
            l_c: train_loss.l_c,
            total: train_loss.total,
            val_total,
            lr_factor,
        };
        self.history.push(record);
        Ok(record)
    }

    fn checkpoint_of(&self, snap: &Snapshot<T>) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            d_in: snap.params.d_in(),
            precision: precision_of::<T>(),
            class_weights: self.weights,
            groups: self.groups.to_vec(),
            epoch: snap.epoch,
            params: snap.params.cast(),
            optimizer: Some(OptimizerSnapshot {
                step: snap.state.adam.step_count(),
                first: snap
                    .state
                    .adam
                    .first_moments()
                    .iter()
                    .map(Tensor2::cast)
                    .collect(),
                second: snap
                    .state
                    .adam
                    .second_moments()
                    .iter()
                    .map(Tensor2::cast)
                    .collect(),
                scheduler: snap.state.scheduler.clone(),
                early_stopping: snap.state.early_stopping.clone(),
            }),
        }
    }

    /// Trains to completion, restores the best-validation parameters and
    /// scores them on the test split.
    pub fn fit(mut self, data: &PreparedData) -> Result<TrainOutcome> {
        while !self.finished() {
            self.run_epoch(data)?;
        }
        let best = match self.best.take() {
            Some(b) => b,
            None => Snapshot {
                epoch: self.state.epoch,
                params: self.params.clone(),
                state: self.state.clone(),
            },
        };
        let test_report = evaluate_params(&best.params, self.model.mode, &data.test)?;
        Ok(TrainOutcome {
            checkpoint: self.checkpoint_of(&best),
            stopped_early: self.stopped,
            history: self.history,
            test_report,
        })
    }
}

fn precision_of<T: Real>() -> Precision {
    if T::NAME == "f64" {
        Precision::Extended
    } else {
        Precision::Standard
    }
}

/// Fake-class probabilities for `records`, in order.
pub fn fake_scores<T: Real>(
    params: &FnrParams<T>,
    mode: Mode,
    records: &[EmbeddingRecord],
) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(records.len());
    for idx in batch_plan(records.len(), EVAL_CHUNK, 0, false)? {
        let batch = Batch::<T>::from_indices(records, idx)?;
        let probs = predict(params, mode, &batch.text, &batch.image)?;
        scores.extend((0..probs.rows()).map(|i| probs.get(i, Label::Fake.index()).to_f64()));
    }
    Ok(scores)
}

pub fn evaluate_params<T: Real>(
    params: &FnrParams<T>,
    mode: Mode,
    records: &[EmbeddingRecord],
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(FnrError::Data("no records to evaluate".into()));
    }
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    EvalReport::from_scores(&labels, &fake_scores(params, mode, records)?)
}

/// Scores records with a checkpoint at the precision it was trained in.
pub fn evaluate_checkpoint(ck: &Checkpoint, records: &[EmbeddingRecord]) -> Result<EvalReport> {
    if let Some(r) = records.first() {
        if r.text_embedding.len() != ck.d_in {
            return Err(FnrError::Data(format!(
                "dataset d_in {} does not match checkpoint d_in {}",
                r.text_embedding.len(),
                ck.d_in
            )));
        }
    }
    for r in records {
        r.validate(ck.d_in)?;
    }
    match ck.precision {
        Precision::Standard => evaluate_params(&ck.params.cast::<f32>(), ck.model.mode, records),
        Precision::Extended => evaluate_params(&ck.params, ck.model.mode, records),
    }
}

pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let data = PreparedData::from_config(cfg)?;
    train_on(cfg, &data)
}

pub fn train_on(cfg: &RunConfig, data: &PreparedData) -> Result<TrainOutcome> {
    match cfg.precision {
        Precision::Standard => Trainer::<f32>::new(cfg, data)?.fit(data),
        Precision::Extended => Trainer::<f64>::new(cfg, data)?.fit(data),
    }
}

/// Continues training from `ck` (which must carry optimizer state) up to
/// `cfg.max_epochs` total epochs.
pub fn resume(cfg: &RunConfig, ck: &Checkpoint) -> Result<TrainOutcome> {
    let data = PreparedData::from_config(cfg)?;
    match cfg.precision {
        Precision::Standard => Trainer::<f32>::resume(cfg, &data, ck)?.fit(&data),
        Precision::Extended => Trainer::<f64>::resume(cfg, &data, ck)?.fit(&data),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| FnrError::io(path, e))
}

/// Writes `config.toml`, `loss_log.jsonl`, `checkpoint.fnr`, `report.json`,
/// `report.txt` and `roc.csv` into `dir`. None of them embeds a timestamp.
pub fn write_run(dir: &Path, cfg: &RunConfig, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FnrError::io(dir, e))?;
    write_file(&dir.join("config.toml"), cfg.to_toml())?;
    write_file(&dir.join("loss_log.jsonl"), outcome.loss_log())?;
    outcome.checkpoint.save(dir.join("checkpoint.fnr"))?;
    write_file(&dir.join("report.json"), outcome.test_report.to_json())?;
    let mut text = format!(
        "mode         {}\nbest epoch   {} of {}{}\n",
        cfg.mode,
        outcome.best_epoch(),
        outcome.history.len(),
        if outcome.stopped_early {
            " (early stop)"
        } else {
            ""
        }
    );
    text.push_str(&outcome.test_report.to_text());
    write_file(&dir.join("report.txt"), text)?;
    write_file(&dir.join("roc.csv"), roc_csv(&outcome.test_report.roc))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: Mode,
    pub epochs: usize,
    pub best_epoch: usize,
    pub accuracy: f64,
    pub auc: f64,
    pub micro_f1: f64,
    pub fake_precision: f64,
    pub fake_recall: f64,
    pub fake_f1: f64,
    pub real_precision: f64,
    pub real_recall: f64,
    pub real_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub dataset: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, mode: Mode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("dataset {}\n", self.dataset);
        writeln!(
            s,
            "{:<11} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "mode", "epochs", "acc", "auc", "fake_f1", "real_f1", "micro_f1"
        )
        .unwrap();
        for r in &self.rows {
            writeln!(
                s,
                "{:<11} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                r.mode.as_str(),
                r.epochs,
                r.accuracy,
                r.auc,
                r.fake_f1,
                r.real_f1,
                r.micro_f1
            )
            .unwrap();
        }
        s
    }
}

/// Trains all four modes on the same split with the same seed. When `out`
/// is given each mode's run goes to `out/<mode>/` and the table to
/// `out/ablation.json` and `out/ablation.txt`.
pub fn run_ablation(cfg: &RunConfig, out: Option<&Path>) -> Result<AblationTable> {
    let data = PreparedData::from_config(cfg)?;
    let mut rows = Vec::new();
    for mode in Mode::ALL {
        let mode_cfg = RunConfig {
            mode,
            out_dir: out
                .map(|o| o.join(mode.as_str()))
                .unwrap_or_else(|| cfg.out_dir.clone()),
            ..cfg.clone()
        };
        let outcome = train_on(&mode_cfg, &data)?;
        if let Some(o) = out {
            write_run(&o.join(mode.as_str()), &mode_cfg, &outcome)?;
        }
        let r = &outcome.test_report;
        rows.push(AblationRow {
            mode,
            epochs: outcome.history.len(),
            best_epoch: outcome.best_epoch(),
            accuracy: r.accuracy,
            auc: r.auc,
            micro_f1: r.micro_f1,
            fake_precision: r.fake.precision,
            fake_recall: r.fake.recall,
            fake_f1: r.fake.f1,
            real_precision: r.real.precision,
            real_recall: r.real.recall,
            real_f1: r.real.f1,
        });
    }
    let table = AblationTable {
        dataset: data.name,
        rows,
    };
    if let Some(o) = out {
        write_file(&o.join("ablation.json"), table.to_json())?;
        write_file(&o.join("ablation.txt"), table.to_text())?;
    }
    Ok(table)
}

/// Small fixed problem for the finite-difference check.
pub struct GradcheckFixture {
    pub batch: Batch<f64>,
    pub params: FnrParams<f64>,
    pub model: ModelConfig,
    pub weights: ClassWeights,
}

impl GradcheckFixture {
    /// `b = 4, d_in = 8, k = 3, h = 3`, double precision, dropout off, full
    /// objective with `lambda = 1`.
    pub fn standard(seed: u64) -> Self {
        let (b, d_in) = (4, 8);
        let model = ModelConfig {
            k: 3,
            hidden: 3,
            lambda: 1.0,
            mode: Mode::FusedS,
            seed,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal =
            |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let text = Tensor2::new(b, d_in, normal(b * d_in)).expect("sized");
        let image = Tensor2::new(b, d_in, normal(b * d_in)).expect("sized");
        let mut init = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let mut params = FnrParams::<f64>::init(d_in, &model, &mut init);
        // Non-zero biases so their gradients are exercised away from the
        // initial point.
        for (name, t) in PARAM_NAMES.iter().zip(params.tensors_mut()) {
            if name.contains(".b") {
                let vals = normal(t.len());
                for (x, v) in t.data_mut().iter_mut().zip(vals) {
                    *x = 0.1 * v;
                }
            }
        }
        GradcheckFixture {
            batch: Batch {
                text,
                image,
                labels: vec![0, 1, 1, 0],
                indices: (0..b).collect(),
            },
            params,
            model,
            weights: ClassWeights::from_alpha(1.5, Label::Real).expect("alpha >= 1"),
        }
    }

    pub fn loss(&self, params: &FnrParams<f64>) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(forward_pass(
            &self.batch,
            params,
            &self.model,
            self.weights,
            false,
            &mut rng,
        )?
        .breakdown
        .total)
    }

    pub fn analytic(&self) -> Result<FnrParams<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        forward_pass(
            &self.batch,
            &self.params,
            &self.model,
            self.weights,
            false,
            &mut rng,
        )?
        .gradients()
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckOutcome {
    pub report: GradCheckReport,
    pub elapsed: Duration,
}

impl GradcheckOutcome {
    /// Worst relative error per parameter group prefix.
    pub fn per_group(&self) -> Vec<(&'static str, f64)> {
        ["text_projector", "image_projector", "classifier"]
            .into_iter()
            .map(|prefix| {
                let worst = self
                    .report
                    .per_param
                    .iter()
                    .filter(|p| p.name.starts_with(prefix))
                    .map(|p| p.max_rel_error)
                    .fold(0.0, f64::max);
                (prefix, worst)
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.report.per_param {
            writeln!(s, "{:<22} {:.3e}", p.name, p.max_rel_error).unwrap();
        }
        for (g, e) in self.per_group() {
            writeln!(s, "group {g:<16} {e:.3e}").unwrap();
        }
        writeln!(
            s,
            "max relative error {:.3e} (tol {:.0e}) in {:.3}s: {}",
            self.report.max_rel_error,
            self.report.tol,
            self.elapsed.as_secs_f64(),
            if self.report.passed() { "PASS" } else { "FAIL" }
        )
        .unwrap();
        if !self.report.passed() {
            writeln!(s, "flagged: {}", self.report.flagged().join(", ")).unwrap();
        }
        s
    }
}

/// Compares analytic and central-difference gradients for every parameter.
/// `inject_fault` scales the analytic gradient of that parameter by 1.1 to
/// show the check catches a wrong backward pass.
pub fn run_gradcheck(seed: u64, inject_fault: Option<&str>, tol: f64) -> Result<GradcheckOutcome> {
    let start = Instant::now();
    let fx = GradcheckFixture::standard(seed);
    let mut analytic: Vec<Tensor2<f64>> = fx.analytic()?.tensors().into_iter().cloned().collect();
    if let Some(name) = inject_fault {
        let i = PARAM_NAMES.iter().position(|n| *n == name).ok_or_else(|| {
            FnrError::Config(format!(
                "unknown parameter {name:?}; expected one of {PARAM_NAMES:?}"
            ))
        })?;
        analytic[i] = analytic[i].scale(1.1);
    }
    let named: Vec<(String, Tensor2<f64>)> = fx
        .params
        .named()
        .into_iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    let report = finite_diff_check(
        |ts| fx.loss(&FnrParams::from_tensors(ts.to_vec())?),
        &named,
        &analytic,
        1e-6,
        tol,
    )?;
    Ok(GradcheckOutcome {
        report,
        elapsed: start.elapsed(),
    })
}
