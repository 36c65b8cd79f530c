//! Fusion head: temporal patch features query the language-model context,
//! the attended values are concatenated back, projected, pooled and
//! regressed to a scalar.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers;
use crate::numkit::{ParamStore, Scalar, SeededRng, Session, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Keys and values come from the single pooled context vector repeated
    /// along the patch axis.
    BroadcastGlobal,
    /// Keys and values come from every non-pad language-model output.
    TokenKeys,
}

impl FusionMode {
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::BroadcastGlobal => "broadcast_global",
            FusionMode::TokenKeys => "token_keys",
        }
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "broadcast_global" => Ok(FusionMode::BroadcastGlobal),
            "token_keys" => Ok(FusionMode::TokenKeys),
            _ => Err(Error::Config(format!("unknown fusion mode {s}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmafConfig {
    pub d_model: usize,
    pub context_dim: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub fused_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub mode: FusionMode,
    /// `(F_TS + F_attn·W_res)·W_out` instead of `[F_TS, F_attn]·W_out`.
    pub residual: bool,
}

impl Default for TmafConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            context_dim: 96,
            key_dim: 64,
            value_dim: 32,
            fused_dim: 64,
            hidden: 512,
            dropout: 0.5,
            mode: FusionMode::BroadcastGlobal,
            residual: false,
        }
    }
}

impl TmafConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_model,
            self.context_dim,
            self.key_dim,
            self.value_dim,
            self.fused_dim,
            self.hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("fusion config has a zero width: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn init_params<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut SeededRng) {
        store.init_xavier("tmaf.wq", self.d_model, self.key_dim, rng);
        store.init_xavier("tmaf.wk", self.context_dim, self.key_dim, rng);
        store.init_xavier("tmaf.wv", self.context_dim, self.value_dim, rng);
        if self.residual {
            store.init_xavier("tmaf.res", self.value_dim, self.d_model, rng);
            store.init_linear("tmaf.out", self.d_model, self.fused_dim, rng);
        } else {
            store.init_linear("tmaf.out", self.d_model + self.value_dim, self.fused_dim, rng);
        }
        store.init_linear("tmaf.head1", self.fused_dim, self.hidden, rng);
        store.init_linear("tmaf.head2", self.hidden, 1, rng);
    }
}

/// Language-model context handed to the fusion head.
#[derive(Debug, Clone, Copy)]
pub enum Context {
    Global(Var),
    Tokens(Var),
}

/// `(Q, K, V)`; in broadcast mode `K` and `V` have one identical row per patch.
pub fn project_qkv<T: Scalar>(
    s: &mut Session<'_, T>,
    f_ts: Var,
    ctx: Context,
    cfg: &TmafConfig,
) -> Result<(Var, Var, Var)> {
    let n = s.g.shape(f_ts)[0];
    let wq = s.p("tmaf.wq")?;
    let wk = s.p("tmaf.wk")?;
    let wv = s.p("tmaf.wv")?;
    let q = s.g.matmul(f_ts, wq)?;
    let (k, v) = match (ctx, cfg.mode) {
        (Context::Global(g), FusionMode::BroadcastGlobal) => {
            if s.g.shape(g)[0] != 1 {
                return Err(Error::shape("project_qkv", &[1, cfg.context_dim], s.g.shape(g)));
            }
            let k = s.g.matmul(g, wk)?;
            let v = s.g.matmul(g, wv)?;
            let rep = vec![Some(0); n];
            (s.g.gather_rows(k, &rep)?, s.g.gather_rows(v, &rep)?)
        }
        (Context::Tokens(t), FusionMode::TokenKeys) => (s.g.matmul(t, wk)?, s.g.matmul(t, wv)?),
        _ => {
            return Err(Error::Contract(format!(
                "context kind does not match fusion mode {}",
                cfg.mode.name()
            )))
        }
    };
    Ok((q, k, v))
}

/// `A = softmax(Q·Kᵀ/√D_k)`, `F_attn = A·V`.
pub fn attention<T: Scalar>(s: &mut Session<'_, T>, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let dk = s.g.shape(q)[1];
    let scores = s.g.matmul_t(q, k)?;
    let scores = s.g.scale(scores, T::of(1.0 / (dk as f64).sqrt()));
    s.g.check_finite(scores, "fusion attention scores")?;
    let a = s.g.softmax_rows(scores)?;
    let out = s.g.matmul(a, v)?;
    Ok((out, a))
}

/// Scalar prediction on the `RUL/RUL_max` scale (`1×1`).
pub fn fuse_and_predict<T: Scalar>(
    s: &mut Session<'_, T>,
    f_ts: Var,
    f_attn: Var,
    cfg: &TmafConfig,
    rng: &mut SeededRng,
) -> Result<Var> {
    if s.g.shape(f_ts)[0] != s.g.shape(f_attn)[0] {
        return Err(Error::shape("fuse_and_predict", s.g.shape(f_ts), s.g.shape(f_attn)));
    }
    let fused = if cfg.residual {
        let w = s.p("tmaf.res")?;
        let r = s.g.matmul(f_attn, w)?;
        let x = s.g.add(f_ts, r)?;
        layers::linear(s, "tmaf.out", x)?
    } else {
        let x = s.g.concat_cols(&[f_ts, f_attn])?;
        layers::linear(s, "tmaf.out", x)?
    };
    let pooled = s.g.mean_rows(fused);
    let h = layers::linear(s, "tmaf.head1", pooled)?;
    let h = s.g.relu(h);
    let h = s.g.dropout(h, cfg.dropout, rng)?;
    let y = layers::linear(s, "tmaf.head2", h)?;
    s.g.check_finite(y, "fusion head")?;
    Ok(y)
}

/// Normalised output to cycles, clamped at zero.
pub fn to_cycles(y: f64, rul_max: f64) -> f64 {
    (y * rul_max).max(0.0)
}

/// Attention matrix as CSV, one row per patch.
pub fn attention_csv<T: Scalar>(a: &Tensor<T>) -> String {
    let mut s = String::from("patch");
    for j in 0..a.cols() {
        write!(s, ",k{j}").unwrap();
    }
    s.push('\n');
    for i in 0..a.rows() {
        write!(s, "{i}").unwrap();
        for v in a.row(i) {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}
