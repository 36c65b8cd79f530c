//! Patch transformer over sensor windows: replicate padding, overlapping patch
//! unfolding, linear patch embedding with a learned position table, and
//! pre-norm transformer blocks producing the temporal feature matrix.

use crate::error::{Error, Result};
use crate::layers::{self, BlockShape};
use crate::numkit::{ParamStore, Scalar, SeededRng, Session, Tensor, Var};

pub const PREFIX: &str = "temporal.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub window_len: usize,
    pub channels: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            window_len: 40,
            channels: 14,
            patch_len: 4,
            stride: 1,
            d_model: 64,
            n_heads: 1,
            n_blocks: 2,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self;
        if c.window_len == 0 || c.channels == 0 || c.patch_len == 0 || c.d_model == 0 || c.n_heads == 0 {
            return Err(Error::Config(format!("patch config has a zero dimension: {c:?}")));
        }
        if c.stride == 0 {
            return Err(Error::Config("patch stride must be at least 1".into()));
        }
        if c.patch_len > c.window_len {
            return Err(Error::Config(format!(
                "patch length {} exceeds window length {}",
                c.patch_len, c.window_len
            )));
        }
        if !(c.window_len - c.patch_len).is_multiple_of(c.stride) {
            return Err(Error::Config(format!(
                "stride {} does not divide window_len − patch_len = {}",
                c.stride,
                c.window_len - c.patch_len
            )));
        }
        if !c.d_model.is_multiple_of(c.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                c.d_model, c.n_heads
            )));
        }
        Ok(())
    }

    /// `(L − P)/S + 2`.
    pub fn n_patches(&self) -> usize {
        (self.window_len - self.patch_len) / self.stride + 2
    }

    pub fn patch_width(&self) -> usize {
        self.patch_len * self.channels
    }

    fn block_shape(&self) -> BlockShape {
        BlockShape {
            width: self.d_model,
            heads: self.n_heads,
            ff_hidden: 4 * self.d_model,
        }
    }
}

/// Append `rows` copies of the last row.
pub fn replicate_pad<T: Scalar>(x: &Tensor<T>, rows: usize) -> Result<Tensor<T>> {
    if x.shape().len() != 2 || x.rows() == 0 {
        return Err(Error::Contract("replicate_pad needs a non-empty L×M window".into()));
    }
    let last = x.row(x.rows() - 1).to_vec();
    let mut data = x.data().to_vec();
    for _ in 0..rows {
        data.extend_from_slice(&last);
    }
    Tensor::new(vec![x.rows() + rows, x.cols()], data)
}

/// Overlapping patches of `p` rows every `s` rows, each flattened time-major
/// (all channels of the first step, then the next step).
pub fn unfold_patches<T: Scalar>(x: &Tensor<T>, p: usize, s: usize) -> Result<Tensor<T>> {
    let (len, m) = (x.rows(), x.cols());
    if p == 0 || s == 0 || p > len {
        return Err(Error::Contract(format!(
            "cannot unfold {len} rows into patches of {p} with stride {s}"
        )));
    }
    let n = (len - p) / s + 1;
    let mut data = Vec::with_capacity(n * p * m);
    for i in 0..n {
        data.extend_from_slice(&x.data()[i * s * m..(i * s + p) * m]);
    }
    Tensor::new(vec![n, p * m], data)
}

/// Pad and unfold one `L×M` window into `N×(P·M)`.
pub fn patchify<T: Scalar>(x: &Tensor<T>, cfg: &PatchConfig) -> Result<Tensor<T>> {
    if x.shape() != [cfg.window_len, cfg.channels] {
        return Err(Error::shape("patchify", &[cfg.window_len, cfg.channels], x.shape()));
    }
    unfold_patches(&replicate_pad(x, cfg.stride)?, cfg.patch_len, cfg.stride)
}

pub fn init_params<T: Scalar>(store: &mut ParamStore<T>, cfg: &PatchConfig, rng: &mut SeededRng) {
    store.init_xavier("temporal.emb.w", cfg.patch_width(), cfg.d_model, rng);
    store.init_normal("temporal.pos", &[cfg.n_patches(), cfg.d_model], 0.02, rng);
    for b in 0..cfg.n_blocks {
        layers::init_block(store, &format!("temporal.block{b}"), cfg.block_shape(), rng);
    }
}

/// `Z_0 = X_p·W_emb + E_pos`.
pub fn embed_patches<T: Scalar>(s: &mut Session<'_, T>, xp: Var) -> Result<Var> {
    let w = s.p("temporal.emb.w")?;
    let pos = s.p("temporal.pos")?;
    let z = s.g.matmul(xp, w)?;
    s.g.add(z, pos)
}

/// Encoder output and the attention maps of every block (one per head).
pub struct Encoded {
    pub features: Var,
    pub attention: Vec<Vec<Var>>,
}

pub fn encode<T: Scalar>(s: &mut Session<'_, T>, z0: Var, cfg: &PatchConfig) -> Result<Encoded> {
    let mut x = z0;
    let mut attention = Vec::with_capacity(cfg.n_blocks);
    for b in 0..cfg.n_blocks {
        let name = format!("temporal.block{b}");
        let (y, maps) = layers::block(s, &name, x, cfg.n_heads, None)?;
        s.g.check_finite(y, &name)?;
        attention.push(maps);
        x = y;
    }
    Ok(Encoded { features: x, attention })
}

/// Temporal features `F_TS` (`N×D_model`) for one window.
pub fn forward<T: Scalar>(s: &mut Session<'_, T>, window: &Tensor<T>, cfg: &PatchConfig) -> Result<Encoded> {
    let xp = s.g.constant(patchify(window, cfg)?);
    let z0 = embed_patches(s, xp)?;
    encode(s, z0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn micro() -> PatchConfig {
        PatchConfig {
            window_len: 8,
            channels: 3,
            patch_len: 4,
            stride: 1,
            d_model: 8,
            n_heads: 2,
            n_blocks: 2,
        }
    }

    fn window(cfg: &PatchConfig, rng: &mut SeededRng) -> Tensor<f64> {
        let data = (0..cfg.window_len * cfg.channels).map(|_| rng.uniform()).collect();
        Tensor::new(vec![cfg.window_len, cfg.channels], data).unwrap()
    }

    #[test]
    fn pad_duplicates_last_row() {
        let x = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let p = replicate_pad(&x, 1).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 3.0]);
        let c = Tensor::full(&[40, 2], 0.5);
        let p = replicate_pad(&c, 1).unwrap();
        assert_eq!(p.rows(), 41);
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn default_shapes() {
        let cfg = PatchConfig::default();
        assert_eq!(cfg.n_patches(), 38);
        assert_eq!(cfg.patch_width(), 56);
        let x = Tensor::<f64>::zeros(&[40, 14]);
        assert_eq!(patchify(&x, &cfg).unwrap().shape(), &[38, 56]);
    }

    #[test]
    fn adjacent_patches_overlap_by_three_rows() {
        let cfg = PatchConfig { channels: 1, ..micro() };
        let x = Tensor::new(vec![8, 1], (0..8).map(f64::from).collect()).unwrap();
        let xp = patchify(&x, &cfg).unwrap();
        assert_eq!(xp.rows(), 6);
        assert_eq!(&xp.row(0)[1..], &xp.row(1)[..3]);
        assert_eq!(xp.row(5), &[5.0, 6.0, 7.0, 7.0]);
    }

    #[test]
    fn time_major_flattening() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(unfold_patches(&x, 2, 1).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(PatchConfig {
            patch_len: 50,
            ..PatchConfig::default()
        }
        .validate()
        .is_err());
        assert!(PatchConfig {
            stride: 0,
            ..PatchConfig::default()
        }
        .validate()
        .is_err());
        assert!(PatchConfig {
            stride: 5,
            ..PatchConfig::default()
        }
        .validate()
        .is_err());
        assert!(PatchConfig {
            n_heads: 3,
            ..PatchConfig::default()
        }
        .validate()
        .is_err());
        assert!(unfold_patches(&Tensor::<f64>::zeros(&[3, 1]), 4, 1).is_err());
    }

    #[test]
    fn zero_input_embeds_to_position_table() {
        let cfg = micro();
        let mut store = ParamStore::<f64>::new();
        init_params(&mut store, &cfg, &mut SeededRng::new(1));
        let mut s = Session::new(&store, false);
        let xp = s.g.constant(patchify(&Tensor::zeros(&[8, 3]), &cfg).unwrap());
        let z = embed_patches(&mut s, xp).unwrap();
        assert_eq!(s.g.value(z), store.get("temporal.pos").unwrap());
    }

    #[test]
    fn one_step_change_touches_only_covering_patches() {
        let cfg = micro();
        let mut store = ParamStore::<f64>::new();
        init_params(&mut store, &cfg, &mut SeededRng::new(1));
        let mut rng = SeededRng::new(2);
        let a = window(&cfg, &mut rng);
        let mut b = a.clone();
        b.data_mut()[2 * cfg.channels] += 1.0; // time step 2
        let mut s = Session::new(&store, false);
        let za = {
            let xp = s.g.constant(patchify(&a, &cfg).unwrap());
            embed_patches(&mut s, xp).unwrap()
        };
        let zb = {
            let xp = s.g.constant(patchify(&b, &cfg).unwrap());
            embed_patches(&mut s, xp).unwrap()
        };
        let changed: Vec<usize> = (0..cfg.n_patches())
            .filter(|&i| s.g.value(za).row(i) != s.g.value(zb).row(i))
            .collect();
        assert_eq!(changed, vec![0, 1, 2]);
    }

    #[test]
    fn zero_weights_reduce_encoder_to_identity() {
        let cfg = micro();
        let mut store = ParamStore::<f64>::new();
        init_params(&mut store, &cfg, &mut SeededRng::new(4));
        layers::zero_prefix(&mut store, "temporal.block");
        let mut s = Session::new(&store, false);
        let w = window(&cfg, &mut SeededRng::new(5));
        let xp = s.g.constant(patchify(&w, &cfg).unwrap());
        let z0 = embed_patches(&mut s, xp).unwrap();
        let out = encode(&mut s, z0, &cfg).unwrap();
        assert_eq!(s.g.value(out.features), s.g.value(z0));
    }

    #[test]
    fn attention_rows_are_distributions_and_output_is_deterministic() {
        let cfg = micro();
        let mut store = ParamStore::<f64>::new();
        init_params(&mut store, &cfg, &mut SeededRng::new(6));
        let w = window(&cfg, &mut SeededRng::new(7));
        let run = || {
            let mut s = Session::new(&store, false);
            let out = forward(&mut s, &w, &cfg).unwrap();
            for maps in &out.attention {
                for &a in maps {
                    let t = s.g.value(a);
                    for r in 0..t.rows() {
                        assert!((t.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    }
                }
            }
            assert_eq!(s.g.shape(out.features), &[cfg.n_patches(), cfg.d_model]);
            s.g.value(out.features).clone()
        };
        let (a, b) = (run(), run());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    proptest! {
        #[test]
        fn patch_count_matches_enumeration(p in 1usize..10, s in 1usize..5, k in 0usize..20) {
            let l = p + k * s;
            let cfg = PatchConfig { window_len: l, channels: 1, patch_len: p, stride: s, ..PatchConfig::default() };
            prop_assert!(cfg.validate().is_ok());
            let x = Tensor::<f64>::zeros(&[l, 1]);
            let padded = l + s;
            let naive = (0..padded).step_by(s).filter(|&start| start + p <= padded).count();
            prop_assert_eq!(patchify(&x, &cfg).unwrap().rows(), naive);
            prop_assert_eq!(cfg.n_patches(), naive);
        }
    }
}
