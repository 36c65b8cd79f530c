//! Image encoder (patch CNN, ViT, or MAE-pretrained ViT), the projector into
//! the language-model width, and a small transformer that reads the visual
//! prefix followed by the prompt embeddings.

use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::layers::{self, BlockShape};
use crate::numkit::{AdamState, ParamStore, Scalar, SeededRng, Session, SparseMap, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderVariant {
    Cnn,
    Vit,
    VitMae,
}

impl EncoderVariant {
    pub const ALL: [EncoderVariant; 3] = [EncoderVariant::Cnn, EncoderVariant::Vit, EncoderVariant::VitMae];

    pub fn name(self) -> &'static str {
        match self {
            EncoderVariant::Cnn => "cnn",
            EncoderVariant::Vit => "vit",
            EncoderVariant::VitMae => "vit_mae",
        }
    }
}

impl FromStr for EncoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(EncoderVariant::Cnn),
            "vit" => Ok(EncoderVariant::Vit),
            "vit_mae" => Ok(EncoderVariant::VitMae),
            _ => Err(Error::Config(format!("unknown encoder variant {s}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VisionConfig {
    pub variant: EncoderVariant,
    pub image_size: usize,
    pub patch: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self {
            variant: EncoderVariant::VitMae,
            image_size: 114,
            patch: 6,
            dim: 128,
            depth: 2,
            heads: 4,
        }
    }
}

impl VisionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || !self.image_size.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "image size {} not divisible by patch {}",
                self.image_size, self.patch
            )));
        }
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "vision width {} / heads {} invalid",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch
    }

    pub fn n_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_width(&self) -> usize {
        3 * self.patch * self.patch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LmConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub causal: bool,
    /// Longest fused sequence (prefix plus text).
    pub capacity: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            width: 96,
            layers: 2,
            heads: 4,
            causal: false,
            capacity: 513,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "LM width {} / heads {} invalid",
                self.width, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaeConfig {
    pub mask_ratio: f64,
    pub dec_dim: usize,
    pub dec_depth: usize,
    pub dec_heads: usize,
}

impl Default for MaeConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.75,
            dec_dim: 64,
            dec_depth: 1,
            dec_heads: 2,
        }
    }
}

impl MaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!("mask ratio {} outside (0, 1)", self.mask_ratio)));
        }
        if self.dec_dim == 0 || self.dec_heads == 0 || !self.dec_dim.is_multiple_of(self.dec_heads) {
            return Err(Error::Config("MAE decoder width / heads invalid".into()));
        }
        Ok(())
    }
}

/// Non-overlapping `p×p` patches of a `3×S×S` image, one row per patch in
/// raster order, each laid out channel, row, column.
pub fn image_patches<T: Scalar>(img: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let sh = img.shape();
    if sh.len() != 3 || sh[0] != 3 || sh[1] != sh[2] || p == 0 || !sh[1].is_multiple_of(p) {
        return Err(Error::shape("image_patches", &[3, p, p], sh));
    }
    let size = sh[1];
    let g = size / p;
    let d = img.data();
    let mut out = Vec::with_capacity(img.len());
    for pr in 0..g {
        for pc in 0..g {
            for c in 0..3 {
                for y in 0..p {
                    let base = c * size * size + (pr * p + y) * size + pc * p;
                    out.extend_from_slice(&d[base..base + p]);
                }
            }
        }
    }
    Tensor::new(vec![g * g, 3 * p * p], out)
}

/// 3×3 same-padding neighbourhood gather on a `g×g` grid of `c`-wide rows.
fn im2col_map<T: Scalar>(g: usize, c: usize) -> SparseMap<T> {
    let mut index = Vec::with_capacity(g * g * 9 * c);
    for r in 0..g {
        for q in 0..g {
            for dy in 0..3 {
                for dx in 0..3 {
                    let (rr, qq) = ((r + dy) as isize - 1, (q + dx) as isize - 1);
                    let inside = (0..g as isize).contains(&rr) && (0..g as isize).contains(&qq);
                    for j in 0..c {
                        index.push(inside.then(|| (rr as usize * g + qq as usize) * c + j));
                    }
                }
            }
        }
    }
    SparseMap::gather(g * g * c, index)
}

/// Vision encoder, projector and mini language model.
#[derive(Debug, Clone)]
pub struct Vlma<T: Scalar> {
    pub vision: VisionConfig,
    pub lm: LmConfig,
    pub mae: MaeConfig,
    im2col: Arc<SparseMap<T>>,
}

/// Mini-LM outputs.
pub struct LmOutput {
    /// `(1 + L)×W`, zero rows at pad positions.
    pub tokens: Var,
    /// Outputs at the prefix and non-pad positions only.
    pub compact: Var,
    /// Mean of `compact` rows (`1×W`).
    pub global: Var,
    pub attention: Vec<Vec<Var>>,
}

impl<T: Scalar> Vlma<T> {
    pub fn new(vision: VisionConfig, lm: LmConfig, mae: MaeConfig) -> Result<Self> {
        vision.validate()?;
        lm.validate()?;
        let im2col = Arc::new(im2col_map(vision.grid(), vision.dim));
        Ok(Self {
            vision,
            lm,
            mae,
            im2col,
        })
    }

    fn vit_block(&self) -> BlockShape {
        BlockShape {
            width: self.vision.dim,
            heads: self.vision.heads,
            ff_hidden: 4 * self.vision.dim,
        }
    }

    pub fn init_params(&self, store: &mut ParamStore<T>, rng: &mut SeededRng) {
        let v = &self.vision;
        store.init_linear("vision.pe", v.patch_width(), v.dim, rng);
        match v.variant {
            EncoderVariant::Cnn => {
                for i in 0..v.depth {
                    store.init_linear(&format!("vision.conv{i}"), 9 * v.dim, v.dim, rng);
                }
            }
            EncoderVariant::Vit | EncoderVariant::VitMae => {
                store.init_normal("vision.pos", &[v.n_patches(), v.dim], 0.02, rng);
                for i in 0..v.depth {
                    layers::init_block(store, &format!("vision.block{i}"), self.vit_block(), rng);
                }
                store.init_layer_norm("vision.ln_f", v.dim);
            }
        }
        store.init_linear("vlma.proj", v.dim, self.lm.width, rng);
        let lm_block = BlockShape {
            width: self.lm.width,
            heads: self.lm.heads,
            ff_hidden: 4 * self.lm.width,
        };
        for i in 0..self.lm.layers {
            layers::init_block(store, &format!("lm.block{i}"), lm_block, rng);
        }
        store.init_layer_norm("lm.ln_f", self.lm.width);
    }

    /// Decoder parameters for masked-patch reconstruction.
    pub fn init_mae_params(&self, store: &mut ParamStore<T>, rng: &mut SeededRng) {
        let (v, m) = (&self.vision, &self.mae);
        store.init_linear("mae.enc2dec", v.dim, m.dec_dim, rng);
        store.init_normal("mae.mask_token", &[1, m.dec_dim], 0.02, rng);
        store.init_normal("mae.pos", &[v.n_patches(), m.dec_dim], 0.02, rng);
        let shape = BlockShape {
            width: m.dec_dim,
            heads: m.dec_heads,
            ff_hidden: 2 * m.dec_dim,
        };
        for i in 0..m.dec_depth {
            layers::init_block(store, &format!("mae.block{i}"), shape, rng);
        }
        store.init_layer_norm("mae.ln", m.dec_dim);
        store.insert("mae.head.w", Tensor::zeros(&[m.dec_dim, v.patch_width()]));
        store.insert("mae.head.b", Tensor::zeros(&[1, v.patch_width()]));
    }

    fn check_patches(&self, patches: &Tensor<T>) -> Result<()> {
        let want = [self.vision.n_patches(), self.vision.patch_width()];
        if patches.shape() != want {
            return Err(Error::shape("encode_image", &want, patches.shape()));
        }
        Ok(())
    }

    /// ViT token outputs before pooling (`n_patches×D_vis`).
    pub fn vit_tokens(&self, s: &mut Session<'_, T>, patches: &Tensor<T>) -> Result<Var> {
        self.check_patches(patches)?;
        let x = s.g.constant(patches.clone());
        let x = layers::linear(s, "vision.pe", x)?;
        let pos = s.p("vision.pos")?;
        let mut x = s.g.add(x, pos)?;
        for i in 0..self.vision.depth {
            x = layers::block(s, &format!("vision.block{i}"), x, self.vision.heads, None)?.0;
        }
        layers::layer_norm(s, "vision.ln_f", x)
    }

    /// `h_vis` (`1×D_vis`) from an image's patch matrix (see [`image_patches`]).
    pub fn encode_image(&self, s: &mut Session<'_, T>, patches: &Tensor<T>) -> Result<Var> {
        let h = match self.vision.variant {
            EncoderVariant::Cnn => {
                self.check_patches(patches)?;
                let g = self.vision.grid();
                let x = s.g.constant(patches.clone());
                let x = layers::linear(s, "vision.pe", x)?;
                let mut x = s.g.relu(x);
                for i in 0..self.vision.depth {
                    let cols = s.g.sparse(x, self.im2col.clone(), &[g * g, 9 * self.vision.dim])?;
                    let y = layers::linear(s, &format!("vision.conv{i}"), cols)?;
                    x = s.g.relu(y);
                }
                s.g.mean_rows(x)
            }
            EncoderVariant::Vit | EncoderVariant::VitMae => {
                let t = self.vit_tokens(s, patches)?;
                s.g.mean_rows(t)
            }
        };
        s.g.check_finite(h, "vision encoder")?;
        Ok(h)
    }

    /// `e_vis = h_vis·W_proj + b`.
    pub fn project(&self, s: &mut Session<'_, T>, h: Var) -> Result<Var> {
        if s.g.shape(h) != [1, self.vision.dim] {
            return Err(Error::shape("project", &[1, self.vision.dim], s.g.shape(h)));
        }
        layers::linear(s, "vlma.proj", h)
    }

    /// Run the mini-LM over `[e_vis; F_text]`. Pad positions never enter the
    /// computation, so their embeddings cannot influence any output.
    pub fn fuse_llm(&self, s: &mut Session<'_, T>, e_vis: Var, f_text: Var, mask: &[bool]) -> Result<LmOutput> {
        let w = self.lm.width;
        let l = s.g.shape(f_text)[0];
        if s.g.shape(e_vis) != [1, w] || s.g.shape(f_text) != [l, w] {
            return Err(Error::shape("fuse_llm", &[1, w], s.g.shape(e_vis)));
        }
        if mask.len() != l {
            return Err(Error::Contract(format!("mask of {} for {l} text rows", mask.len())));
        }
        if 1 + l > self.lm.capacity {
            return Err(Error::Contract(format!(
                "sequence of {} exceeds LM capacity {}",
                1 + l,
                self.lm.capacity
            )));
        }
        let valid: Vec<Option<usize>> = (0..l).filter(|&i| mask[i]).map(Some).collect();
        let seq = if valid.is_empty() {
            e_vis
        } else {
            let t = s.g.gather_rows(f_text, &valid)?;
            s.g.concat_rows(&[e_vis, t])?
        };
        let n = 1 + valid.len();
        let causal: Option<Vec<bool>> = self.lm.causal.then(|| (0..n * n).map(|k| k % n <= k / n).collect());
        let mut x = seq;
        let mut attention = Vec::with_capacity(self.lm.layers);
        for i in 0..self.lm.layers {
            let name = format!("lm.block{i}");
            let (y, maps) = layers::block(s, &name, x, self.lm.heads, causal.as_deref())?;
            s.g.check_finite(y, &name)?;
            attention.push(maps);
            x = y;
        }
        let compact = layers::layer_norm(s, "lm.ln_f", x)?;
        let global = s.g.mean_rows(compact);
        let mut k = 0;
        let mut full = vec![Some(0)];
        for &m in mask {
            full.push(if m {
                k += 1;
                Some(k)
            } else {
                None
            });
        }
        let tokens = s.g.gather_rows(compact, &full)?;
        Ok(LmOutput {
            tokens,
            compact,
            global,
            attention,
        })
    }

    /// Number of patches hidden for reconstruction.
    pub fn mae_mask_count(&self) -> usize {
        let n = self.vision.n_patches();
        ((self.mae.mask_ratio * n as f64).round() as usize).clamp(1, n - 1)
    }

    /// Masked-patch reconstruction loss for one image with the given hidden set.
    pub fn mae_loss_with_mask(&self, s: &mut Session<'_, T>, patches: &Tensor<T>, masked: &[usize]) -> Result<Var> {
        self.check_patches(patches)?;
        self.mae.validate()?;
        let n = self.vision.n_patches();
        let mut hidden = vec![false; n];
        for &i in masked {
            hidden[i] = true;
        }
        let visible: Vec<Option<usize>> = (0..n).filter(|&i| !hidden[i]).map(Some).collect();
        if masked.is_empty() || visible.is_empty() {
            return Err(Error::Contract(
                "MAE needs at least one hidden and one visible patch".into(),
            ));
        }
        let x = s.g.constant(patches.clone());
        let x = layers::linear(s, "vision.pe", x)?;
        let pos = s.p("vision.pos")?;
        let x = s.g.add(x, pos)?;
        let mut x = s.g.gather_rows(x, &visible)?;
        for i in 0..self.vision.depth {
            x = layers::block(s, &format!("vision.block{i}"), x, self.vision.heads, None)?.0;
        }
        let enc = layers::layer_norm(s, "vision.ln_f", x)?;

        let d = layers::linear(s, "mae.enc2dec", enc)?;
        let mask_tok = s.p("mae.mask_token")?;
        let cat = s.g.concat_rows(&[d, mask_tok])?;
        let n_vis = visible.len();
        let mut k = 0;
        let order: Vec<Option<usize>> = (0..n)
            .map(|i| {
                Some(if hidden[i] {
                    n_vis
                } else {
                    k += 1;
                    k - 1
                })
            })
            .collect();
        let full = s.g.gather_rows(cat, &order)?;
        let dpos = s.p("mae.pos")?;
        let mut y = s.g.add(full, dpos)?;
        for i in 0..self.mae.dec_depth {
            y = layers::block(s, &format!("mae.block{i}"), y, self.mae.dec_heads, None)?.0;
        }
        let y = layers::layer_norm(s, "mae.ln", y)?;
        let pred = layers::linear(s, "mae.head", y)?;
        let rows: Vec<Option<usize>> = masked.iter().map(|&i| Some(i)).collect();
        let pred_m = s.g.gather_rows(pred, &rows)?;
        let target = s.g.constant(patches.clone());
        let target_m = s.g.gather_rows(target, &rows)?;
        let diff = s.g.sub(pred_m, target_m)?;
        let sq = s.g.mul(diff, diff)?;
        Ok(s.g.mean(sq))
    }

    /// Random hidden set of [`Self::mae_mask_count`] patches, sorted.
    pub fn mae_sample_mask(&self, rng: &mut SeededRng) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.vision.n_patches()).collect();
        rng.shuffle(&mut idx);
        idx.truncate(self.mae_mask_count());
        idx.sort_unstable();
        idx
    }

    /// One optimiser step on the mean masked-reconstruction loss of a batch.
    /// Only `vision.*` and `mae.*` parameters move. Returns the pre-update loss.
    pub fn mae_pretrain_step(
        &self,
        store: &mut ParamStore<T>,
        adam: &mut AdamState<T>,
        batch: &[Tensor<T>],
        rng: &mut SeededRng,
    ) -> Result<f64> {
        if self.vision.variant != EncoderVariant::VitMae {
            return Err(Error::Config("MAE pretraining needs the vit_mae encoder".into()));
        }
        self.mae.validate()?;
        if batch.is_empty() {
            return Err(Error::Contract("empty MAE batch".into()));
        }
        let (loss, grads) = {
            let mut s = Session::new(store, true);
            let mut losses = Vec::with_capacity(batch.len());
            for img in batch {
                let masked = self.mae_sample_mask(rng);
                losses.push(self.mae_loss_with_mask(&mut s, img, &masked)?);
            }
            let mut total = losses[0];
            for &l in &losses[1..] {
                total = s.g.add(total, l)?;
            }
            let loss = s.g.scale(total, T::of(1.0 / losses.len() as f64));
            s.g.check_finite(loss, "MAE loss")?;
            let g = s.g.backward(loss)?;
            let grads: Vec<(String, Tensor<T>)> = s
                .param_grads(&g)
                .into_iter()
                .filter(|(n, _)| n.starts_with("vision.") || n.starts_with("mae."))
                .collect();
            (s.g.item(loss).to_f64_lossy(), grads)
        };
        adam.step(store, &grads)?;
        Ok(loss)
    }
}
