//! The assembled regressor: temporal branch, spectral image and prompt
//! through the vision-language path, and the fusion head.

use crate::dataset::{DatasetMeta, WindowSample};
use crate::error::{Error, Result};
use crate::layers;
use crate::numkit::{ParamStore, Scalar, SeededRng, Session, Tensor, Var};
use crate::spectral::{Renderer, SpectralConfig, SpectralImage};
use crate::temporal::{self, PatchConfig};
use crate::textknow::{self, BpeVocab, PromptTemplate, TokenSequence};
use crate::tmaf::{self, Context, FusionMode, TmafConfig};
use crate::vlma::{image_patches, EncoderVariant, LmConfig, MaeConfig, VisionConfig, Vlma};

/// Every architectural setting of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub temporal: PatchConfig,
    pub spectral: SpectralConfig,
    pub vision: VisionConfig,
    pub lm: LmConfig,
    pub mae: MaeConfig,
    pub tmaf: TmafConfig,
    pub text_max_len: usize,
    pub rul_max: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            temporal: PatchConfig::default(),
            spectral: SpectralConfig::default(),
            vision: VisionConfig::default(),
            lm: LmConfig::default(),
            mae: MaeConfig::default(),
            tmaf: TmafConfig::default(),
            text_max_len: 512,
            rul_max: 125.0,
        }
    }
}

impl ModelConfig {
    /// Propagate shared widths and check every part.
    pub fn validated(mut self) -> Result<Self> {
        self.tmaf.d_model = self.temporal.d_model;
        self.tmaf.context_dim = self.lm.width;
        self.lm.capacity = 1 + self.text_max_len;
        self.spectral.image_size = self.vision.image_size;
        self.temporal.validate()?;
        self.vision.validate()?;
        self.lm.validate()?;
        self.tmaf.validate()?;
        if self.vision.variant == EncoderVariant::VitMae {
            self.mae.validate()?;
        }
        if self.text_max_len == 0 {
            return Err(Error::Config("text_max_len must be positive".into()));
        }
        if !self.rul_max.is_finite() || self.rul_max <= 0.0 {
            return Err(Error::Config("rul_max must be positive".into()));
        }
        Ok(self)
    }
}

/// Model-ready tensors for one window.
#[derive(Debug, Clone)]
pub struct SampleInput<T: Scalar> {
    pub window: Tensor<T>,
    pub patches: Tensor<T>,
    pub tokens: TokenSequence,
}

/// Forward-pass nodes of interest.
pub struct Forward {
    /// Prediction on the `RUL/RUL_max` scale (`1×1`).
    pub y: Var,
    pub f_ts: Var,
    pub global: Var,
    pub attention: Var,
}

pub struct Model<T: Scalar> {
    pub cfg: ModelConfig,
    pub vlma: Vlma<T>,
    pub renderer: Renderer,
    pub vocab: BpeVocab,
    pub template: PromptTemplate,
    pub meta: DatasetMeta,
    pub sensor_ids: Vec<usize>,
}

impl<T: Scalar> Model<T> {
    pub fn new(
        cfg: ModelConfig,
        vocab: BpeVocab,
        template: PromptTemplate,
        meta: DatasetMeta,
        sensor_ids: Vec<usize>,
    ) -> Result<Self> {
        let cfg = cfg.validated()?;
        if sensor_ids.len() != cfg.temporal.channels {
            return Err(Error::Config(format!(
                "{} sensors kept but the temporal branch expects {}",
                sensor_ids.len(),
                cfg.temporal.channels
            )));
        }
        Ok(Self {
            vlma: Vlma::new(cfg.vision, cfg.lm, cfg.mae)?,
            renderer: Renderer::new(cfg.spectral, cfg.temporal.window_len)?,
            cfg,
            vocab,
            template,
            meta,
            sensor_ids,
        })
    }

    pub fn init_params(&self, store: &mut ParamStore<T>, seed: u64) {
        let root = SeededRng::new(seed);
        temporal::init_params(store, &self.cfg.temporal, &mut root.fork(1));
        store.init_linear("stage1.head", self.cfg.temporal.d_model, 1, &mut root.fork(2));
        textknow::init_params(
            store,
            self.vocab.vocab_size(),
            self.cfg.text_max_len,
            self.cfg.lm.width,
            &mut root.fork(3),
        );
        self.vlma.init_params(store, &mut root.fork(4));
        self.cfg.tmaf.init_params(store, &mut root.fork(5));
        if self.cfg.vision.variant == EncoderVariant::VitMae {
            self.vlma.init_mae_params(store, &mut root.fork(6));
        }
    }

    pub fn render(&self, w: &WindowSample) -> Result<SpectralImage> {
        self.renderer.render(&w.values)
    }

    pub fn prompt(&self, w: &WindowSample) -> Result<String> {
        textknow::build_prompt(&self.meta, w, &self.sensor_ids, &self.template)
    }

    pub fn window_tensor(&self, w: &WindowSample) -> Result<Tensor<T>> {
        let rows: Vec<Vec<T>> = w.values.iter().map(|r| r.iter().map(|&v| T::of(v)).collect()).collect();
        Tensor::from_rows(&rows)
    }

    /// Window tensor only, for the temporal branch on its own.
    pub fn prepare_temporal(&self, w: &WindowSample) -> Result<SampleInput<T>> {
        Ok(SampleInput {
            window: self.window_tensor(w)?,
            patches: Tensor::zeros(&[1]),
            tokens: TokenSequence {
                ids: Vec::new(),
                length: 0,
                original_len: 0,
            },
        })
    }

    pub fn prepare(&self, w: &WindowSample) -> Result<SampleInput<T>> {
        self.prepare_with_image(w, &self.render(w)?)
    }

    /// As [`Self::prepare`] with an already rendered (e.g. cached) image.
    pub fn prepare_with_image(&self, w: &WindowSample, img: &SpectralImage) -> Result<SampleInput<T>> {
        if img.size != self.cfg.vision.image_size {
            return Err(Error::shape("prepare", &[self.cfg.vision.image_size], &[img.size]));
        }
        Ok(SampleInput {
            window: self.window_tensor(w)?,
            patches: image_patches(&img.to_tensor(), self.cfg.vision.patch)?,
            tokens: textknow::tokenize(&self.prompt(w)?, &self.vocab, self.cfg.text_max_len),
        })
    }

    /// Temporal branch with the mean-pooled scalar head used before fusion training.
    pub fn stage1_forward(&self, s: &mut Session<'_, T>, x: &SampleInput<T>) -> Result<Var> {
        let enc = temporal::forward(s, &x.window, &self.cfg.temporal)?;
        let pooled = s.g.mean_rows(enc.features);
        layers::linear(s, "stage1.head", pooled)
    }

    pub fn forward(&self, s: &mut Session<'_, T>, x: &SampleInput<T>, rng: &mut SeededRng) -> Result<Forward> {
        let f_ts = temporal::forward(s, &x.window, &self.cfg.temporal)?.features;
        let h = self.vlma.encode_image(s, &x.patches)?;
        let e_vis = self.vlma.project(s, h)?;
        let (f_text, mask) = textknow::embed_tokens(s, &x.tokens)?;
        let lm = self.vlma.fuse_llm(s, e_vis, f_text, &mask)?;
        let ctx = match self.cfg.tmaf.mode {
            FusionMode::BroadcastGlobal => Context::Global(lm.global),
            FusionMode::TokenKeys => Context::Tokens(lm.compact),
        };
        let (q, k, v) = tmaf::project_qkv(s, f_ts, ctx, &self.cfg.tmaf)?;
        let (f_attn, a) = tmaf::attention(s, q, k, v)?;
        let y = tmaf::fuse_and_predict(s, f_ts, f_attn, &self.cfg.tmaf, rng)?;
        Ok(Forward {
            y,
            f_ts,
            global: lm.global,
            attention: a,
        })
    }

    /// Squared error on the normalised scale.
    pub fn loss(&self, s: &mut Session<'_, T>, y: Var, rul: f64) -> Result<Var> {
        let t =
            s.g.constant(Tensor::new(vec![1, 1], vec![T::of(rul / self.cfg.rul_max)])?);
        let d = s.g.sub(y, t)?;
        s.g.mul(d, d)
    }
}
