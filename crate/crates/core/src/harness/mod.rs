//! Two-stage training, evaluation, few-shot sweep, encoder ablation and
//! the artifacts each run leaves on disk.

mod config;
pub mod plot;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::TrainConfig;

use crate::dataset::{DatasetBundle, DatasetId, WindowSample};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::model::{Model, SampleInput};
use crate::numkit::{checkpoint, AdamState, ParamStore, SeededRng, Session, Tensor};
use crate::spectral::{read_cache, write_cache, CacheEntry, SpectralImage};
use crate::textknow::{build_prompt, train_bpe, BpeVocab, PromptTemplate};
use crate::tmaf::to_cycles;
use crate::vlma::{image_patches, EncoderVariant};

pub const CONFIG_FILE: &str = "config.cfg";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CHECKPOINT_META_FILE: &str = "checkpoint.json";
pub const VOCAB_FILE: &str = "vocab.bpe";
pub const CURVE_FILE: &str = "curve.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const MAE_CURVE_FILE: &str = "mae_curve.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PLOT_FILE: &str = "rul.svg";

pub const FEWSHOT_RATIOS: [f64; 5] = [0.05, 0.10, 0.20, 0.50, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: u8,
    pub train_loss: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaeReport {
    /// Pre-update batch loss at every step.
    pub curve: Vec<f64>,
    /// Mean loss over all images with fixed masks, before and after.
    pub initial_eval: f64,
    pub final_eval: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub best_epoch: usize,
    pub val_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics_json: PathBuf,
    pub predictions_csv: PathBuf,
    pub curve_csv: PathBuf,
    pub config_snapshot: PathBuf,
    pub plots: Vec<PathBuf>,
    pub mae_curve: Option<PathBuf>,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub report: MetricsReport,
    pub mae: Option<MaeReport>,
    /// Engines kept by the few-shot subsample.
    pub units: usize,
}

pub fn template(version: u32) -> Result<PromptTemplate> {
    let t = PromptTemplate::default();
    if version != t.version {
        return Err(Error::Config(format!("no prompt template version {version}")));
    }
    Ok(t)
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Images go through `f32` so that cached and freshly rendered images agree.
fn quantize(mut img: SpectralImage) -> SpectralImage {
    for v in &mut img.data {
        *v = *v as f32 as f64;
    }
    img
}

/// Data, vocabulary and model for one configuration.
type NamedGrads = Vec<(String, Tensor<f64>)>;

pub struct Run {
    pub cfg: TrainConfig,
    pub data: DatasetBundle,
    pub model: Model<f64>,
}

impl Run {
    /// Load the subset and build the model. Without a vocabulary, BPE is
    /// trained on prompts of evenly spaced training windows.
    pub fn prepare(cfg: &TrainConfig, vocab: Option<BpeVocab>) -> Result<Self> {
        let train_file = cfg.dataset.train_file(&cfg.data_dir);
        if !train_file.exists() {
            return Err(Error::Load(format!(
                "{} not found; point data_dir at C-MAPSS files or generate them with `rulfuse synth`",
                train_file.display()
            )));
        }
        let data = DatasetBundle::load(&cfg.data_dir, cfg.dataset, &cfg.load_options()?)?;
        if data.train.is_empty() {
            return Err(Error::Validation("no training windows".into()));
        }
        let tmpl = template(cfg.template_version)?;
        let vocab = match vocab {
            Some(v) => v,
            None => {
                let n = cfg.bpe_corpus.clamp(1, data.train.len());
                let corpus = (0..n)
                    .map(|i| {
                        build_prompt(
                            &data.meta,
                            &data.train[i * data.train.len() / n],
                            &data.sensor_ids,
                            &tmpl,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                train_bpe(&corpus, cfg.bpe_merges)?
            }
        };
        let model = Model::new(cfg.model_config()?, vocab, tmpl, data.meta, data.sensor_ids.clone())?;
        Ok(Self {
            cfg: cfg.clone(),
            data,
            model,
        })
    }

    pub fn windows(&self, split: Split) -> &[WindowSample] {
        match split {
            Split::Train => &self.data.train,
            Split::Val => &self.data.val,
            Split::Test => &self.data.test,
        }
    }

    pub fn render(&self, w: &WindowSample) -> Result<SpectralImage> {
        Ok(quantize(self.model.render(w)?))
    }

    pub fn input(&self, w: &WindowSample, img: Option<&SpectralImage>) -> Result<SampleInput<f64>> {
        match img {
            Some(img) => self.model.prepare_with_image(w, img),
            None => self.model.prepare_with_image(w, &self.render(w)?),
        }
    }

    /// Key for cached images: spectral settings plus everything that shapes
    /// the normalised windows.
    fn cache_key(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.model.cfg.spectral.hash(self.cfg.window_len).as_bytes());
        h.update(serde_json::to_vec(&self.data.manifest)?);
        Ok(hex(&h.finalize()))
    }

    /// Images for `windows`, read from the cache directory when a matching
    /// file exists and built (then written) otherwise.
    pub fn cached_images(&self, tag: &str, windows: &[WindowSample]) -> Result<Vec<SpectralImage>> {
        let key = self.cache_key()?;
        let path = self
            .cfg
            .cache_dir
            .join(format!("{}-{tag}-{}.img", self.cfg.dataset, &key[..16]));
        if path.exists() {
            match read_cache(&path, &key) {
                Ok(entries)
                    if entries.len() == windows.len()
                        && entries
                            .iter()
                            .zip(windows)
                            .all(|(e, w)| e.unit_id == w.unit_id && e.end_cycle == w.end_cycle) =>
                {
                    return Ok(entries.into_iter().map(|e| e.image).collect());
                }
                Ok(_) => log::warn!("{} does not match the requested windows; rebuilding", path.display()),
                Err(e) => log::warn!("{e}; rebuilding"),
            }
        }
        let images: Vec<SpectralImage> = windows.par_iter().map(|w| self.render(w)).collect::<Result<_>>()?;
        fs::create_dir_all(&self.cfg.cache_dir)?;
        let entries: Vec<CacheEntry> = windows
            .iter()
            .zip(&images)
            .map(|(w, img)| CacheEntry {
                unit_id: w.unit_id,
                end_cycle: w.end_cycle,
                image: img.clone(),
            })
            .collect();
        write_cache(&path, &key, &entries)?;
        Ok(images)
    }

    pub fn init_store(&self) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        self.model.init_params(&mut store, self.cfg.seed);
        store
    }

    /// Predictions in cycles, in window order. Stage 1 uses the temporal
    /// branch with its scalar head.
    pub fn predict(
        &self,
        store: &ParamStore<f64>,
        windows: &[WindowSample],
        images: Option<&[SpectralImage]>,
        stage: u8,
    ) -> Result<Vec<f64>> {
        windows
            .par_iter()
            .enumerate()
            .map(|(i, w)| {
                let mut s = Session::new(store, false);
                let y = if stage == 1 {
                    let x = self.model.prepare_temporal(w)?;
                    self.model.stage1_forward(&mut s, &x)?
                } else {
                    let x = self.input(w, images.map(|im| &im[i]))?;
                    self.model.forward(&mut s, &x, &mut SeededRng::new(0))?.y
                };
                Ok(to_cycles(s.g.item(y), self.cfg.rul_max))
            })
            .collect()
    }

    fn report(&self, windows: &[WindowSample], pred: &[f64]) -> Result<MetricsReport> {
        let units: Vec<u32> = windows.iter().map(|w| w.unit_id).collect();
        let truth: Vec<f64> = windows.iter().map(|w| w.rul_label).collect();
        MetricsReport::compute(&units, pred, &truth)
    }

    fn trainable(&self, stage: u8, name: &str) -> bool {
        if stage == 1 {
            return name.starts_with("temporal.") || name.starts_with("stage1.");
        }
        !(name.starts_with("stage1.") || name.starts_with("mae."))
            && !self.cfg.freeze.iter().any(|p| name.starts_with(p.as_str()))
    }

    fn sample_step(&self, store: &ParamStore<f64>, idx: usize, stage: u8, epoch: usize) -> Result<(f64, NamedGrads)> {
        let w = &self.data.train[idx];
        let mut s = Session::new(store, true);
        let y = if stage == 1 {
            let x = self.model.prepare_temporal(w)?;
            self.model.stage1_forward(&mut s, &x)?
        } else {
            let x = self.input(w, None)?;
            let mut rng = SeededRng::new(self.cfg.seed)
                .fork(3)
                .fork(epoch as u64)
                .fork(idx as u64);
            self.model.forward(&mut s, &x, &mut rng)?.y
        };
        let l = self.model.loss(&mut s, y, w.rul_label)?;
        s.g.check_finite(l, "training loss")?;
        let grads = s.g.backward(l)?;
        let grads = s
            .param_grads(&grads)
            .into_iter()
            .filter(|(n, _)| self.trainable(stage, n))
            .collect();
        Ok((s.g.item(l), grads))
    }

    /// One pass over the shuffled training windows. Each sample gets its own
    /// tape; gradients are averaged over the batch before one Adam step.
    /// Returns the mean sample loss, summed in window order.
    pub fn train_epoch(
        &self,
        store: &mut ParamStore<f64>,
        adam: &mut AdamState<f64>,
        stage: u8,
        epoch: usize,
    ) -> Result<f64> {
        let n = self.data.train.len();
        let mut order: Vec<usize> = (0..n).collect();
        SeededRng::new(self.cfg.seed)
            .fork(2)
            .fork(epoch as u64)
            .shuffle(&mut order);
        let mut losses = vec![0.0; n];
        for (step, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let ctx = |e: Error| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {}, step {}: {m}", epoch + 1, step + 1)),
                e => e,
            };
            let mut acc: Vec<(String, Tensor<f64>)> = Vec::new();
            for &i in batch {
                let (l, grads) = self.sample_step(store, i, stage, epoch).map_err(ctx)?;
                losses[i] = l;
                if acc.is_empty() {
                    acc = grads;
                    continue;
                }
                for ((an, a), (gn, g)) in acc.iter_mut().zip(&grads) {
                    debug_assert_eq!(an, gn);
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += *y;
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for (_, g) in &mut acc {
                for x in g.data_mut() {
                    *x *= inv;
                }
            }
            adam.step(store, &acc).map_err(ctx)?;
        }
        Ok(losses.iter().sum::<f64>() / n as f64)
    }

    fn val_rmse(&self, store: &ParamStore<f64>, stage: u8) -> Result<f64> {
        if self.data.val.is_empty() {
            return Ok(f64::NAN);
        }
        let pred = self.predict(store, &self.data.val, None, stage)?;
        let truth: Vec<f64> = self.data.val.iter().map(|w| w.rul_label).collect();
        metrics::rmse(&pred, &truth)
    }

    /// Patch tensors of `mae_images` evenly spaced training windows.
    pub fn mae_images(&self) -> Result<Vec<Tensor<f64>>> {
        let n = self.cfg.mae_images.clamp(1, self.data.train.len());
        let picks: Vec<WindowSample> = (0..n)
            .map(|i| self.data.train[i * self.data.train.len() / n].clone())
            .collect();
        self.cached_images("mae", &picks)?
            .iter()
            .map(|img| image_patches(&img.to_tensor(), self.cfg.image_patch))
            .collect()
    }
}

/// Mean masked-reconstruction loss with a fixed mask per image.
pub fn mae_eval(model: &Model<f64>, store: &ParamStore<f64>, images: &[Tensor<f64>], seed: u64) -> Result<f64> {
    let losses: Vec<f64> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let masked = model.vlma.mae_sample_mask(&mut SeededRng::new(seed).fork(i as u64));
            let mut s = Session::new(store, false);
            let l = model.vlma.mae_loss_with_mask(&mut s, img, &masked)?;
            Ok(s.g.item(l))
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Seeded MAE pretraining of the vision encoder on `images` (patch tensors).
pub fn pretrain_mae(
    model: &Model<f64>,
    store: &mut ParamStore<f64>,
    images: &[Tensor<f64>],
    cfg: &TrainConfig,
) -> Result<MaeReport> {
    if images.is_empty() {
        return Err(Error::Contract("no images for MAE pretraining".into()));
    }
    let eval_seed = SeededRng::new(cfg.seed).fork(5).next_u64();
    let initial_eval = mae_eval(model, store, images, eval_seed)?;
    let mut adam = AdamState::new(cfg.mae_lr);
    let mut rng = SeededRng::new(cfg.seed).fork(4);
    let b = cfg.mae_batch.max(1);
    let mut curve = Vec::with_capacity(cfg.mae_steps);
    for step in 0..cfg.mae_steps {
        let batch: Vec<Tensor<f64>> = (0..b).map(|j| images[(step * b + j) % images.len()].clone()).collect();
        let l = model
            .vlma
            .mae_pretrain_step(store, &mut adam, &batch, &mut rng)
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("MAE step {}: {m}", step + 1)),
                e => e,
            })?;
        curve.push(l);
    }
    let final_eval = mae_eval(model, store, images, eval_seed)?;
    Ok(MaeReport {
        curve,
        initial_eval,
        final_eval,
    })
}

fn mae_curve_csv(r: &MaeReport) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in r.curve.iter().enumerate() {
        let _ = writeln!(s, "{},{l}", i + 1);
    }
    let _ = writeln!(s, "# fixed-mask eval before={} after={}", r.initial_eval, r.final_eval);
    s
}

pub fn curve_csv(curve: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,stage,train_loss,val_rmse\n");
    for r in curve {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.stage, r.train_loss, r.val_rmse);
    }
    s
}

/// Standalone MAE pretraining run: writes the loss curve and the encoder
/// parameters (`vision.*`, `mae.*`) to `out_dir`.
pub fn pretrain_mae_run(cfg: &TrainConfig) -> Result<MaeReport> {
    cfg.validate()?;
    if cfg.encoder != EncoderVariant::VitMae {
        return Err(Error::Config("MAE pretraining needs encoder = vit_mae".into()));
    }
    thread_pool(cfg.threads)?.install(|| {
        let run = Run::prepare(cfg, None)?;
        let mut store = run.init_store();
        let images = run.mae_images()?;
        let report = pretrain_mae(&run.model, &mut store, &images, cfg)?;
        fs::create_dir_all(&cfg.out_dir)?;
        fs::write(cfg.out_dir.join(CONFIG_FILE), cfg.to_text())?;
        fs::write(cfg.out_dir.join(MAE_CURVE_FILE), mae_curve_csv(&report))?;
        let mut enc = ParamStore::new();
        enc.merge_prefix(&store, "vision.");
        enc.merge_prefix(&store, "mae.");
        checkpoint::save(&enc, &cfg.out_dir.join("mae.bin"))?;
        Ok(report)
    })
}

/// Full two-stage run. Stage 1 fits the temporal branch with a scalar head
/// for `stage1_epochs`; stage 2 trains the fused model for the remaining
/// epochs. The checkpoint kept is the stage-2 epoch with the lowest
/// validation RMSE.
pub fn train(cfg: &TrainConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    thread_pool(cfg.threads)?.install(|| train_in_pool(cfg))
}

fn train_in_pool(cfg: &TrainConfig) -> Result<RunArtifacts> {
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir)?;
    let config_snapshot = dir.join(CONFIG_FILE);
    fs::write(&config_snapshot, cfg.to_text())?;

    let run = Run::prepare(cfg, None)?;
    run.model.vocab.save(&dir.join(VOCAB_FILE))?;
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&run.data.manifest)?,
    )?;
    log::info!(
        "{}: {} train / {} val / {} test windows",
        cfg.dataset,
        run.data.train.len(),
        run.data.val.len(),
        run.data.test.len()
    );

    let mut store = run.init_store();
    let mut mae = None;
    let mut mae_curve = None;
    if cfg.encoder == EncoderVariant::VitMae && cfg.mae_steps > 0 {
        let images = run.mae_images()?;
        let r = pretrain_mae(&run.model, &mut store, &images, cfg)?;
        log::info!(
            "MAE pretraining: fixed-mask loss {:.5} -> {:.5}",
            r.initial_eval,
            r.final_eval
        );
        let p = dir.join(MAE_CURVE_FILE);
        fs::write(&p, mae_curve_csv(&r))?;
        mae_curve = Some(p);
        mae = Some(r);
    }

    let mut adam = AdamState::new(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore<f64>)> = None;
    for epoch in 0..cfg.epochs {
        let stage = if epoch < cfg.stage1_epochs { 1 } else { 2 };
        if epoch == cfg.stage1_epochs {
            adam = AdamState::new(cfg.lr);
        }
        let train_loss = run.train_epoch(&mut store, &mut adam, stage, epoch)?;
        let val_rmse = run.val_rmse(&store, stage)?;
        log::info!(
            "epoch {:>3} stage {stage}: loss {train_loss:.6} val RMSE {val_rmse:.4}",
            epoch + 1
        );
        curve.push(EpochRecord {
            epoch: epoch + 1,
            stage,
            train_loss,
            val_rmse,
        });
        if stage == 2 {
            let better = match &best {
                None => true,
                Some((b, _, _)) => val_rmse < *b || b.is_nan(),
            };
            if better {
                best = Some((val_rmse, epoch + 1, store.clone()));
            }
        }
    }
    let (val_rmse, best_epoch, best_store) = best.expect("stage 2 has at least one epoch");
    let curve_csv_path = dir.join(CURVE_FILE);
    fs::write(&curve_csv_path, curve_csv(&curve))?;
    let checkpoint_path = dir.join(CHECKPOINT_FILE);
    checkpoint::save(&best_store, &checkpoint_path)?;
    let meta = CheckpointMeta {
        config_hash: cfg.hash(),
        best_epoch,
        val_rmse,
    };
    fs::write(dir.join(CHECKPOINT_META_FILE), serde_json::to_string_pretty(&meta)?)?;

    let images = run.cached_images("test", &run.data.test)?;
    let pred = run.predict(&best_store, &run.data.test, Some(&images), 2)?;
    let report = run.report(&run.data.test, &pred)?;
    let metrics_json = dir.join(METRICS_FILE);
    fs::write(&metrics_json, report.to_json())?;
    let predictions_csv = dir.join(PREDICTIONS_FILE);
    fs::write(&predictions_csv, report.predictions_csv())?;
    let plots = render_plots(&dir)?;
    log::info!(
        "{} test: RMSE {:.3} Score {:.2} (best epoch {best_epoch})",
        cfg.dataset,
        report.rmse,
        report.score
    );

    Ok(RunArtifacts {
        dir,
        checkpoint: checkpoint_path,
        metrics_json,
        predictions_csv,
        curve_csv: curve_csv_path,
        config_snapshot,
        plots,
        mae_curve,
        curve,
        best_epoch,
        report,
        mae,
        units: run.data.fewshot.selected_units.len(),
    })
}

/// Load a run directory's configuration, vocabulary and checkpoint.
pub fn load_run(run_dir: &Path, dataset: Option<DatasetId>, data_dir: Option<&Path>) -> Result<(Run, ParamStore<f64>)> {
    let mut cfg = TrainConfig::load(&run_dir.join(CONFIG_FILE))?;
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(run_dir.join(CHECKPOINT_META_FILE))?)?;
    if meta.config_hash != cfg.hash() {
        return Err(Error::Load(format!(
            "checkpoint in {} was written for a different configuration",
            run_dir.display()
        )));
    }
    if let Some(d) = dataset {
        cfg.dataset = d;
    }
    if let Some(d) = data_dir {
        cfg.data_dir = d.to_path_buf();
    }
    let vocab = BpeVocab::load(&run_dir.join(VOCAB_FILE))?;
    let run = Run::prepare(&cfg, Some(vocab))?;
    let mut store = run.init_store();
    let saved = checkpoint::load(&run_dir.join(CHECKPOINT_FILE))?;
    checkpoint::restore_into(&mut store, &saved)?;
    Ok((run, store))
}

/// Metrics for a trained run on one split. The test split has one window
/// per engine; train and val score every window. Writes
/// `eval_<dataset>_<split>.{json,csv}` into the run directory.
pub fn evaluate(
    run_dir: &Path,
    split: Split,
    dataset: Option<DatasetId>,
    data_dir: Option<&Path>,
) -> Result<MetricsReport> {
    let (run, store) = load_run(run_dir, dataset, data_dir)?;
    let windows = run.windows(split);
    if windows.is_empty() {
        return Err(Error::Contract(format!("{} split is empty", split.name())));
    }
    let report = thread_pool(run.cfg.threads)?.install(|| -> Result<MetricsReport> {
        let images = match split {
            Split::Test => Some(run.cached_images("test", windows)?),
            _ => None,
        };
        let pred = run.predict(&store, windows, images.as_deref(), 2)?;
        run.report(windows, &pred)
    })?;
    let stem = format!("eval_{}_{}", run.cfg.dataset, split.name());
    fs::write(run_dir.join(format!("{stem}.json")), report.to_json())?;
    fs::write(run_dir.join(format!("{stem}.csv")), report.predictions_csv())?;
    Ok(report)
}

/// Constant predictor on the test split of `cfg`'s subset.
pub fn constant_baseline(cfg: &TrainConfig, value: f64) -> Result<MetricsReport> {
    let data = DatasetBundle::load(&cfg.data_dir, cfg.dataset, &cfg.load_options()?)?;
    let units: Vec<u32> = data.test.iter().map(|w| w.unit_id).collect();
    let truth: Vec<f64> = data.test.iter().map(|w| w.rul_label).collect();
    MetricsReport::compute(&units, &vec![value; truth.len()], &truth)
}

/// RUL and error chart from the run's predictions.
pub fn render_plots(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let csv = fs::read_to_string(run_dir.join(PREDICTIONS_FILE))?;
    let engines = metrics::parse_predictions_csv(&csv)?;
    let title = TrainConfig::load(&run_dir.join(CONFIG_FILE))
        .map(|c| c.dataset.to_string())
        .unwrap_or_else(|_| "run".into());
    let svg = plot::rul_chart(&title, &engines)?;
    let p = run_dir.join(PLOT_FILE);
    fs::write(&p, svg)?;
    Ok(vec![p])
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub ratio: f64,
    pub units: usize,
    pub report: MetricsReport,
}

/// One full train + test evaluation per few-shot ratio, sharing the seed.
/// Each run lives in `out_dir/ratio_<r>`; the table goes to
/// `out_dir/fewshot.{csv,svg}`.
pub fn fewshot_sweep(cfg: &TrainConfig, ratios: &[f64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(ratios.len());
    for &r in ratios {
        let mut c = cfg.clone();
        c.fewshot_ratio = r;
        c.out_dir = cfg.out_dir.join(format!("ratio_{r}"));
        let a = train(&c)?;
        rows.push(SweepRow {
            ratio: r,
            units: a.units,
            report: a.report,
        });
    }
    let mut csv = String::from("ratio,units,score,mae,mape,rmse\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.ratio, r.units, r.report.score, r.report.mae, r.report.mape, r.report.rmse
        );
    }
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("fewshot.csv"), csv)?;
    let labels: Vec<String> = rows.iter().map(|r| format!("{:.0}%", r.ratio * 100.0)).collect();
    let col = |f: fn(&MetricsReport) -> f64| rows.iter().map(|r| f(&r.report)).collect::<Vec<_>>();
    let svg = plot::metric_lines(
        &labels,
        &[
            ("Score", col(|m| m.score)),
            ("MAE", col(|m| m.mae)),
            ("MAPE (%)", col(|m| m.mape)),
            ("RMSE", col(|m| m.rmse)),
        ],
    )?;
    fs::write(cfg.out_dir.join("fewshot.svg"), svg)?;
    Ok(rows)
}

/// Same data and seed for every visual encoder. Runs go to
/// `out_dir/encoder_<name>`; the table to `out_dir/ablation.{csv,svg}`.
pub fn ablate_encoder(cfg: &TrainConfig, variants: &[EncoderVariant]) -> Result<Vec<(EncoderVariant, RunArtifacts)>> {
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let mut c = cfg.clone();
        c.encoder = v;
        c.out_dir = cfg.out_dir.join(format!("encoder_{}", v.name()));
        rows.push((v, train(&c)?));
    }
    let mut csv = String::from("encoder,rmse,score\n");
    for (v, a) in &rows {
        let _ = writeln!(csv, "{},{},{}", v.name(), a.report.rmse, a.report.score);
    }
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("ablation.csv"), csv)?;
    let cats: Vec<String> = rows.iter().map(|(v, _)| v.name().to_string()).collect();
    let svg = plot::metric_bars(
        &cats,
        &[
            ("RMSE", rows.iter().map(|(_, a)| a.report.rmse).collect()),
            ("Score", rows.iter().map(|(_, a)| a.report.score).collect()),
        ],
    )?;
    fs::write(cfg.out_dir.join("ablation.svg"), svg)?;
    Ok(rows)
}

/// Per-window mean-pooled temporal features and the language-model global
/// vector, as CSV. Returns the number of rows written.
pub fn export_embeddings(run_dir: &Path, split: Split, out: &Path) -> Result<usize> {
    let (run, store) = load_run(run_dir, None, None)?;
    let windows = run.windows(split);
    let rows: Vec<(Vec<f64>, Vec<f64>)> = thread_pool(run.cfg.threads)?.install(|| {
        windows
            .par_iter()
            .map(|w| {
                let x = run.input(w, None)?;
                let mut s = Session::new(&store, false);
                let f = run.model.forward(&mut s, &x, &mut SeededRng::new(0))?;
                let ts = s.g.value(f.f_ts);
                let ts_mean = (0..ts.cols())
                    .map(|c| (0..ts.rows()).map(|r| ts.at(r, c)).sum::<f64>() / ts.rows() as f64)
                    .collect();
                Ok((ts_mean, s.g.value(f.global).row(0).to_vec()))
            })
            .collect::<Result<_>>()
    })?;
    let mut csv = String::from("unit_id,end_cycle,rul");
    if let Some((ts, gl)) = rows.first() {
        for i in 0..ts.len() {
            let _ = write!(csv, ",ts_{i}");
        }
        for i in 0..gl.len() {
            let _ = write!(csv, ",llm_{i}");
        }
    }
    csv.push('\n');
    for (w, (ts, gl)) in windows.iter().zip(&rows) {
        let _ = write!(csv, "{},{},{}", w.unit_id, w.end_cycle, w.rul_label);
        for v in ts.iter().chain(gl) {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    if let Some(p) = out.parent() {
        fs::create_dir_all(p)?;
    }
    fs::write(out, csv)?;
    Ok(rows.len())
}
