//! Building blocks shared by the temporal encoder, the vision encoder and the
//! mini language model: affine maps, layer norm and pre-norm transformer
//! blocks.

use std::sync::Arc;

use crate::error::Result;
use crate::numkit::{ParamStore, Scalar, SeededRng, Session, SparseMap, Var};

const LN_EPS: f64 = 1e-5;

/// `x·W + b` with parameters `{name}.w`, `{name}.b`.
pub fn linear<T: Scalar>(s: &mut Session<'_, T>, name: &str, x: Var) -> Result<Var> {
    let w = s.p(&format!("{name}.w"))?;
    let y = s.g.matmul(x, w)?;
    let bname = format!("{name}.b");
    if s.has(&bname) {
        let b = s.p(&bname)?;
        s.g.add_row(y, b)
    } else {
        Ok(y)
    }
}

/// Layer norm over the last axis with learned gain `{name}.g` and shift `{name}.b`.
pub fn layer_norm<T: Scalar>(s: &mut Session<'_, T>, name: &str, x: Var) -> Result<Var> {
    let n = s.g.layer_norm(x, T::of(LN_EPS));
    let g = s.p(&format!("{name}.g"))?;
    let b = s.p(&format!("{name}.b"))?;
    let y = s.g.mul_row(n, g)?;
    s.g.add_row(y, b)
}

/// Columns `[start, start + width)` of a matrix.
pub fn select_cols<T: Scalar>(s: &mut Session<'_, T>, x: Var, start: usize, width: usize) -> Result<Var> {
    let (m, n) = (s.g.value(x).rows(), s.g.value(x).cols());
    if start == 0 && width == n {
        return Ok(x);
    }
    let index = (0..m).flat_map(|i| (start..start + width).map(move |j| Some(i * n + j)));
    let map = Arc::new(SparseMap::gather(m * n, index));
    s.g.sparse(x, map, &[m, width])
}

/// Shape of a transformer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub width: usize,
    pub heads: usize,
    pub ff_hidden: usize,
}

pub fn init_block<T: Scalar>(store: &mut ParamStore<T>, name: &str, shape: BlockShape, rng: &mut SeededRng) {
    let d = shape.width;
    store.init_layer_norm(&format!("{name}.ln1"), d);
    for proj in ["wq", "wk", "wv", "wo"] {
        store.init_linear(&format!("{name}.{proj}"), d, d, rng);
    }
    store.init_layer_norm(&format!("{name}.ln2"), d);
    store.init_linear(&format!("{name}.ff1"), d, shape.ff_hidden, rng);
    store.init_linear(&format!("{name}.ff2"), shape.ff_hidden, d, rng);
}

/// Multi-head scaled dot-product self-attention over the rows of `x`
/// (already normalised). `allowed` is a row-major `n×n` mask of permitted
/// query/key pairs. Returns the projected output and the per-head attention
/// weight nodes.
pub fn self_attention<T: Scalar>(
    s: &mut Session<'_, T>,
    name: &str,
    x: Var,
    heads: usize,
    allowed: Option<&[bool]>,
) -> Result<(Var, Vec<Var>)> {
    let d = s.g.value(x).cols();
    let dh = d / heads;
    let q = linear(s, &format!("{name}.wq"), x)?;
    let k = linear(s, &format!("{name}.wk"), x)?;
    let v = linear(s, &format!("{name}.wv"), x)?;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    let mut maps = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = select_cols(s, q, h * dh, dh)?;
        let kh = select_cols(s, k, h * dh, dh)?;
        let vh = select_cols(s, v, h * dh, dh)?;
        let scores = s.g.matmul_t(qh, kh)?;
        let scores = s.g.scale(scores, scale);
        let a = s.g.softmax_rows_masked(scores, allowed)?;
        maps.push(a);
        outs.push(s.g.matmul(a, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { s.g.concat_cols(&outs)? };
    let o = linear(s, &format!("{name}.wo"), cat)?;
    Ok((o, maps))
}

/// Pre-norm block: `x + Attn(LN(x))`, then `+ FF(LN(·))` with a GELU hidden layer.
pub fn block<T: Scalar>(
    s: &mut Session<'_, T>,
    name: &str,
    x: Var,
    heads: usize,
    allowed: Option<&[bool]>,
) -> Result<(Var, Vec<Var>)> {
    let h = layer_norm(s, &format!("{name}.ln1"), x)?;
    let (a, maps) = self_attention(s, name, h, heads, allowed)?;
    let x = s.g.add(x, a)?;
    let h = layer_norm(s, &format!("{name}.ln2"), x)?;
    let h = linear(s, &format!("{name}.ff1"), h)?;
    let h = s.g.gelu(h);
    let h = linear(s, &format!("{name}.ff2"), h)?;
    Ok((s.g.add(x, h)?, maps))
}

/// Zero every parameter whose name starts with `prefix`.
pub fn zero_prefix<T: Scalar>(store: &mut ParamStore<T>, prefix: &str) {
    store.map_values(|n, t| {
        if n.starts_with(prefix) {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    });
}
