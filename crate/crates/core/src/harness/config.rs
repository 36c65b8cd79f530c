//! Flat `key = value` run configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::dataset::{DatasetId, LoadOptions, SensorSelection, DEFAULT_DROPPED};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::spectral::{CwtConfig, RpConfig, SpectralConfig, StftConfig, WindowFn};
use crate::temporal::PatchConfig;
use crate::tmaf::{FusionMode, TmafConfig};
use crate::vlma::{EncoderVariant, LmConfig, MaeConfig, VisionConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dataset: DatasetId,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,

    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub stage1_epochs: usize,
    pub freeze: Vec<String>,
    pub fewshot_ratio: f64,
    pub val_fraction: f64,
    pub engine_limit: usize,

    pub window_len: usize,
    pub rul_max: f64,
    pub dropped_sensors: Vec<usize>,

    pub patch_len: usize,
    pub patch_stride: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,

    pub rp_embed_dim: usize,
    pub rp_delay: usize,
    pub rp_quantile: f64,
    pub stft_win: usize,
    pub stft_hop: usize,
    pub stft_window: WindowFn,
    pub cwt_omega0: f64,
    pub cwt_scales: usize,

    pub image_size: usize,
    pub image_patch: usize,
    pub encoder: EncoderVariant,
    pub vis_dim: usize,
    pub vis_depth: usize,
    pub vis_heads: usize,

    pub template_version: u32,
    pub bpe_merges: usize,
    pub bpe_corpus: usize,
    pub text_max_len: usize,
    pub llm_dim: usize,
    pub llm_layers: usize,
    pub llm_heads: usize,
    pub llm_causal: bool,

    pub mae_mask_ratio: f64,
    pub mae_dec_dim: usize,
    pub mae_dec_depth: usize,
    pub mae_steps: usize,
    pub mae_batch: usize,
    pub mae_images: usize,
    pub mae_lr: f64,

    pub key_dim: usize,
    pub value_dim: usize,
    pub fused_dim: usize,
    pub fusion_hidden: usize,
    pub dropout: f64,
    pub fusion_mode: FusionMode,
    pub fusion_residual: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetId::FD001,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
            cache_dir: PathBuf::from("cache"),
            seed: 42,
            threads: 1,
            batch_size: 128,
            lr: 0.002,
            epochs: 30,
            stage1_epochs: 10,
            freeze: Vec::new(),
            fewshot_ratio: 1.0,
            val_fraction: 0.1,
            engine_limit: 0,
            window_len: 40,
            rul_max: 125.0,
            dropped_sensors: DEFAULT_DROPPED.to_vec(),
            patch_len: 4,
            patch_stride: 1,
            d_model: 64,
            n_heads: 1,
            n_blocks: 2,
            rp_embed_dim: 2,
            rp_delay: 1,
            rp_quantile: 0.10,
            stft_win: 16,
            stft_hop: 2,
            stft_window: WindowFn::Hann,
            cwt_omega0: 6.0,
            cwt_scales: 32,
            image_size: 114,
            image_patch: 6,
            encoder: EncoderVariant::VitMae,
            vis_dim: 128,
            vis_depth: 2,
            vis_heads: 4,
            template_version: 1,
            bpe_merges: 512,
            bpe_corpus: 512,
            text_max_len: 512,
            llm_dim: 96,
            llm_layers: 2,
            llm_heads: 4,
            llm_causal: false,
            mae_mask_ratio: 0.75,
            mae_dec_dim: 64,
            mae_dec_depth: 1,
            mae_steps: 200,
            mae_batch: 8,
            mae_images: 32,
            mae_lr: 1e-3,
            key_dim: 64,
            value_dim: 32,
            fused_dim: 64,
            fusion_hidden: 512,
            dropout: 0.5,
            fusion_mode: FusionMode::BroadcastGlobal,
            fusion_residual: false,
        }
    }
}

fn parse<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got {v:?}"))),
    }
}

fn list<V: FromStr>(key: &str, v: &str) -> Result<Vec<V>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<V: ToString>(v: &[V]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "dataset" => self.dataset = v.parse()?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "cache_dir" => self.cache_dir = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "stage1_epochs" => self.stage1_epochs = parse(key, v)?,
            "freeze" => self.freeze = list(key, v)?,
            "fewshot_ratio" => self.fewshot_ratio = parse(key, v)?,
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "engine_limit" => self.engine_limit = parse(key, v)?,
            "window_len" => self.window_len = parse(key, v)?,
            "rul_max" => self.rul_max = parse(key, v)?,
            "dropped_sensors" => self.dropped_sensors = list(key, v)?,
            "patch_len" => self.patch_len = parse(key, v)?,
            "patch_stride" => self.patch_stride = parse(key, v)?,
            "d_model" => self.d_model = parse(key, v)?,
            "n_heads" => self.n_heads = parse(key, v)?,
            "n_blocks" => self.n_blocks = parse(key, v)?,
            "rp_embed_dim" => self.rp_embed_dim = parse(key, v)?,
            "rp_delay" => self.rp_delay = parse(key, v)?,
            "rp_quantile" => self.rp_quantile = parse(key, v)?,
            "stft_win" => self.stft_win = parse(key, v)?,
            "stft_hop" => self.stft_hop = parse(key, v)?,
            "stft_window" => self.stft_window = v.parse()?,
            "cwt_omega0" => self.cwt_omega0 = parse(key, v)?,
            "cwt_scales" => self.cwt_scales = parse(key, v)?,
            "image_size" => self.image_size = parse(key, v)?,
            "image_patch" => self.image_patch = parse(key, v)?,
            "encoder" => self.encoder = v.parse()?,
            "vis_dim" => self.vis_dim = parse(key, v)?,
            "vis_depth" => self.vis_depth = parse(key, v)?,
            "vis_heads" => self.vis_heads = parse(key, v)?,
            "template_version" => self.template_version = parse(key, v)?,
            "bpe_merges" => self.bpe_merges = parse(key, v)?,
            "bpe_corpus" => self.bpe_corpus = parse(key, v)?,
            "text_max_len" => self.text_max_len = parse(key, v)?,
            "llm_dim" => self.llm_dim = parse(key, v)?,
            "llm_layers" => self.llm_layers = parse(key, v)?,
            "llm_heads" => self.llm_heads = parse(key, v)?,
            "llm_causal" => self.llm_causal = parse_bool(key, v)?,
            "mae_mask_ratio" => self.mae_mask_ratio = parse(key, v)?,
            "mae_dec_dim" => self.mae_dec_dim = parse(key, v)?,
            "mae_dec_depth" => self.mae_dec_depth = parse(key, v)?,
            "mae_steps" => self.mae_steps = parse(key, v)?,
            "mae_batch" => self.mae_batch = parse(key, v)?,
            "mae_images" => self.mae_images = parse(key, v)?,
            "mae_lr" => self.mae_lr = parse(key, v)?,
            "key_dim" => self.key_dim = parse(key, v)?,
            "value_dim" => self.value_dim = parse(key, v)?,
            "fused_dim" => self.fused_dim = parse(key, v)?,
            "fusion_hidden" => self.fusion_hidden = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "fusion_mode" => self.fusion_mode = v.parse()?,
            "fusion_residual" => self.fusion_residual = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dataset", self.dataset.to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("cache_dir", self.cache_dir.display().to_string()),
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("stage1_epochs", self.stage1_epochs.to_string()),
            ("freeze", self.freeze.join(",")),
            ("fewshot_ratio", self.fewshot_ratio.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("engine_limit", self.engine_limit.to_string()),
            ("window_len", self.window_len.to_string()),
            ("rul_max", self.rul_max.to_string()),
            ("dropped_sensors", join(&self.dropped_sensors)),
            ("patch_len", self.patch_len.to_string()),
            ("patch_stride", self.patch_stride.to_string()),
            ("d_model", self.d_model.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("n_blocks", self.n_blocks.to_string()),
            ("rp_embed_dim", self.rp_embed_dim.to_string()),
            ("rp_delay", self.rp_delay.to_string()),
            ("rp_quantile", self.rp_quantile.to_string()),
            ("stft_win", self.stft_win.to_string()),
            ("stft_hop", self.stft_hop.to_string()),
            (
                "stft_window",
                match self.stft_window {
                    WindowFn::Hann => "hann",
                    WindowFn::Rectangular => "rect",
                }
                .into(),
            ),
            ("cwt_omega0", self.cwt_omega0.to_string()),
            ("cwt_scales", self.cwt_scales.to_string()),
            ("image_size", self.image_size.to_string()),
            ("image_patch", self.image_patch.to_string()),
            ("encoder", self.encoder.name().into()),
            ("vis_dim", self.vis_dim.to_string()),
            ("vis_depth", self.vis_depth.to_string()),
            ("vis_heads", self.vis_heads.to_string()),
            ("template_version", self.template_version.to_string()),
            ("bpe_merges", self.bpe_merges.to_string()),
            ("bpe_corpus", self.bpe_corpus.to_string()),
            ("text_max_len", self.text_max_len.to_string()),
            ("llm_dim", self.llm_dim.to_string()),
            ("llm_layers", self.llm_layers.to_string()),
            ("llm_heads", self.llm_heads.to_string()),
            ("llm_causal", self.llm_causal.to_string()),
            ("mae_mask_ratio", self.mae_mask_ratio.to_string()),
            ("mae_dec_dim", self.mae_dec_dim.to_string()),
            ("mae_dec_depth", self.mae_dec_depth.to_string()),
            ("mae_steps", self.mae_steps.to_string()),
            ("mae_batch", self.mae_batch.to_string()),
            ("mae_images", self.mae_images.to_string()),
            ("mae_lr", self.mae_lr.to_string()),
            ("key_dim", self.key_dim.to_string()),
            ("value_dim", self.value_dim.to_string()),
            ("fused_dim", self.fused_dim.to_string()),
            ("fusion_hidden", self.fusion_hidden.to_string()),
            ("dropout", self.dropout.to_string()),
            ("fusion_mode", self.fusion_mode.name().into()),
            ("fusion_residual", self.fusion_residual.to_string()),
        ]
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    /// Apply `key = value` lines on top of the current values.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: PathBuf::from("<config>"),
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 over every setting that affects parameters or data, i.e.
    /// everything except paths and the worker count.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if matches!(k, "data_dir" | "out_dir" | "cache_dir" | "threads") {
                continue;
            }
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 || self.stage1_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "need stage1_epochs < epochs (got {} and {})",
                self.stage1_epochs, self.epochs
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} is invalid", self.lr)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        let known: BTreeSet<&str> = ["temporal.", "text.", "vision.", "vlma.", "lm.", "tmaf."].into();
        if let Some(bad) = self
            .freeze
            .iter()
            .find(|p| !known.iter().any(|k| p.starts_with(k) || k.starts_with(p.as_str())))
        {
            return Err(Error::Config(format!("freeze prefix {bad} matches no parameter group")));
        }
        self.model_config()?;
        SensorSelection::new(self.dropped_sensors.iter().copied())?;
        Ok(())
    }

    pub fn load_options(&self) -> Result<LoadOptions> {
        Ok(LoadOptions {
            window_len: self.window_len,
            rul_max: self.rul_max,
            selection: SensorSelection::new(self.dropped_sensors.iter().copied())?,
            engine_limit: self.engine_limit,
            fewshot_ratio: self.fewshot_ratio,
            val_fraction: self.val_fraction,
            seed: self.seed,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let kept = 21usize.saturating_sub(self.dropped_sensors.iter().collect::<BTreeSet<_>>().len());
        ModelConfig {
            temporal: PatchConfig {
                window_len: self.window_len,
                channels: kept,
                patch_len: self.patch_len,
                stride: self.patch_stride,
                d_model: self.d_model,
                n_heads: self.n_heads,
                n_blocks: self.n_blocks,
            },
            spectral: SpectralConfig {
                rp: RpConfig {
                    embed_dim: self.rp_embed_dim,
                    delay: self.rp_delay,
                    quantile: self.rp_quantile,
                },
                stft: StftConfig {
                    win_len: self.stft_win,
                    hop: self.stft_hop,
                    window: self.stft_window,
                },
                cwt: CwtConfig {
                    omega0: self.cwt_omega0,
                    n_scales: self.cwt_scales,
                    ..CwtConfig::default()
                },
                image_size: self.image_size,
            },
            vision: VisionConfig {
                variant: self.encoder,
                image_size: self.image_size,
                patch: self.image_patch,
                dim: self.vis_dim,
                depth: self.vis_depth,
                heads: self.vis_heads,
            },
            lm: LmConfig {
                width: self.llm_dim,
                layers: self.llm_layers,
                heads: self.llm_heads,
                causal: self.llm_causal,
                capacity: 1 + self.text_max_len,
            },
            mae: MaeConfig {
                mask_ratio: self.mae_mask_ratio,
                dec_dim: self.mae_dec_dim,
                dec_depth: self.mae_dec_depth,
                dec_heads: if self.mae_dec_dim.is_multiple_of(2) { 2 } else { 1 },
            },
            tmaf: TmafConfig {
                d_model: self.d_model,
                context_dim: self.llm_dim,
                key_dim: self.key_dim,
                value_dim: self.value_dim,
                fused_dim: self.fused_dim,
                hidden: self.fusion_hidden,
                dropout: self.dropout,
                mode: self.fusion_mode,
                residual: self.fusion_residual,
            },
            text_max_len: self.text_max_len,
            rul_max: self.rul_max,
        }
        .validated()
    }
}
