//! Three time-frequency views of a window (recurrence plot, STFT magnitude,
//! Morlet scalogram) resized and stacked into a 3-channel image.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numkit::{bilinear_map, Scalar, SparseMap, Tensor};

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl View {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpConfig {
    pub embed_dim: usize,
    pub delay: usize,
    pub quantile: f64,
}

impl Default for RpConfig {
    fn default() -> Self {
        Self {
            embed_dim: 2,
            delay: 1,
            quantile: 0.10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowFn {
    Hann,
    Rectangular,
}

impl std::str::FromStr for WindowFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(WindowFn::Hann),
            "rect" | "rectangular" => Ok(WindowFn::Rectangular),
            _ => Err(Error::Config(format!("unknown STFT window {s}"))),
        }
    }
}

impl WindowFn {
    /// Periodic window of `n` samples.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowFn::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            WindowFn::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub win_len: usize,
    pub hop: usize,
    pub window: WindowFn,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            win_len: 16,
            hop: 2,
            window: WindowFn::Hann,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CwtConfig {
    pub omega0: f64,
    pub n_scales: usize,
    pub min_period: f64,
    /// Longest period; 0 means the signal length.
    pub max_period: f64,
}

impl Default for CwtConfig {
    fn default() -> Self {
        Self {
            omega0: 6.0,
            n_scales: 32,
            min_period: 2.0,
            max_period: 0.0,
        }
    }
}

impl CwtConfig {
    /// Ratio of a Morlet pseudo-period to its scale.
    pub fn fourier_factor(&self) -> f64 {
        4.0 * PI / (self.omega0 + (2.0 + self.omega0 * self.omega0).sqrt())
    }

    /// Log-spaced scales whose pseudo-periods span `min_period..=max_period`.
    pub fn scales(&self, len: usize) -> Result<Vec<f64>> {
        let hi = if self.max_period > 0.0 {
            self.max_period
        } else {
            len as f64
        };
        let lo = self.min_period;
        if !(lo > 0.0 && hi > lo) || self.n_scales < 2 {
            return Err(Error::Config(format!(
                "CWT needs 0 < min_period < max_period and ≥2 scales (got {lo}, {hi}, {})",
                self.n_scales
            )));
        }
        let f = self.fourier_factor();
        let step = (hi / lo).ln() / (self.n_scales - 1) as f64;
        Ok((0..self.n_scales).map(|i| lo * (step * i as f64).exp() / f).collect())
    }
}

/// Full preprocessing configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConfig {
    pub rp: RpConfig,
    pub stft: StftConfig,
    pub cwt: CwtConfig,
    pub image_size: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            rp: RpConfig::default(),
            stft: StftConfig::default(),
            cwt: CwtConfig::default(),
            image_size: 114,
        }
    }
}

impl SpectralConfig {
    /// Hex SHA-256 of the configuration and window length; keys image caches.
    pub fn hash(&self, window_len: usize) -> String {
        let key = format!("{self:?}|L={window_len}");
        Sha256::digest(key.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Z-score each channel, then average across channels.
/// Zero-variance channels contribute zeros.
pub fn collapse_channels(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || m == 0 {
        return Err(Error::Contract("collapse_channels needs a non-empty window".into()));
    }
    let n = rows.len() as f64;
    let mut out = vec![0.0; rows.len()];
    for j in 0..m {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        if var <= 0.0 {
            continue;
        }
        let sd = var.sqrt();
        for (o, r) in out.iter_mut().zip(rows) {
            *o += (r[j] - mean) / sd;
        }
    }
    out.iter_mut().for_each(|v| *v /= m as f64);
    Ok(out)
}

/// Binary recurrence matrix of the delay embedding. The threshold is the
/// nearest-rank `quantile` of the off-diagonal pairwise distances.
pub fn recurrence_plot(s: &[f64], cfg: &RpConfig) -> Result<View> {
    if cfg.embed_dim == 0 || cfg.delay == 0 || !(cfg.quantile > 0.0 && cfg.quantile < 1.0) {
        return Err(Error::Config(format!("invalid recurrence settings {cfg:?}")));
    }
    let span = (cfg.embed_dim - 1) * cfg.delay;
    if s.len() < span + 2 {
        return Err(Error::Contract(format!(
            "signal of {} samples too short for embedding span {span}",
            s.len()
        )));
    }
    let n = s.len() - span;
    let dist = |i: usize, j: usize| -> f64 {
        (0..cfg.embed_dim)
            .map(|k| (s[i + k * cfg.delay] - s[j + k * cfg.delay]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push(dist(i, j));
        }
    }
    let eps = nearest_rank(&mut pairs, cfg.quantile);
    if eps == 0.0 && pairs.iter().all(|&d| d == 0.0) {
        log::debug!("recurrence plot of a constant signal is all ones");
    }
    let mut r = View::zeros(n, n);
    for i in 0..n {
        r.set(i, i, 1.0);
        for j in i + 1..n {
            if dist(i, j) <= eps {
                r.set(i, j, 1.0);
                r.set(j, i, 1.0);
            }
        }
    }
    Ok(r)
}

fn nearest_rank(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let k = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[k - 1]
}

/// Precomputed transforms for a fixed window length.
pub struct Renderer {
    cfg: SpectralConfig,
    len: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    /// `kernels[a][d + len − 1]` = `ψ*(d / scale_a) / √scale_a`.
    kernels: Vec<Vec<Complex<f64>>>,
    resize: [SparseMap<f64>; 3],
    pub scales: Vec<f64>,
}

impl std::fmt::Debug for Renderer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Renderer")
            .field("cfg", &self.cfg)
            .field("len", &self.len)
            .finish()
    }
}

impl Renderer {
    pub fn new(cfg: SpectralConfig, len: usize) -> Result<Self> {
        let st = cfg.stft;
        if st.win_len == 0 || st.win_len > len || st.hop == 0 {
            return Err(Error::Config(format!(
                "STFT window {} / hop {} invalid for length {len}",
                st.win_len, st.hop
            )));
        }
        if cfg.image_size == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        let scales = cfg.cwt.scales(len)?;
        let kernels = scales
            .iter()
            .map(|&a| {
                (0..2 * len - 1)
                    .map(|k| morlet((k as f64 - (len - 1) as f64) / a, cfg.cwt.omega0).conj() / a.sqrt())
                    .collect()
            })
            .collect();
        let rp_n = len
            .checked_sub((cfg.rp.embed_dim.max(1) - 1) * cfg.rp.delay)
            .filter(|&n| n >= 2)
            .ok_or_else(|| Error::Config(format!("window length {len} too short for the recurrence embedding")))?;
        let frames = (len - st.win_len) / st.hop + 1;
        let bins = st.win_len / 2 + 1;
        let z = cfg.image_size;
        Ok(Self {
            cfg,
            len,
            window: st.window.coefficients(st.win_len),
            fft: FftPlanner::new().plan_fft_forward(st.win_len),
            kernels,
            resize: [
                bilinear_map(rp_n, rp_n, z, z),
                bilinear_map(bins, frames, z, z),
                bilinear_map(scales.len(), len, z, z),
            ],
            scales,
        })
    }

    pub fn config(&self) -> &SpectralConfig {
        &self.cfg
    }

    pub fn window_len(&self) -> usize {
        self.len
    }

    /// Magnitudes, `win_len/2 + 1` frequency rows by frame columns.
    pub fn stft(&self, s: &[f64]) -> Result<View> {
        self.check_len(s)?;
        let StftConfig { win_len, hop, .. } = self.cfg.stft;
        let frames = (s.len() - win_len) / hop + 1;
        let bins = win_len / 2 + 1;
        let mut out = View::zeros(bins, frames);
        let mut buf = vec![Complex::new(0.0, 0.0); win_len];
        for f in 0..frames {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(s[f * hop + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (k, b) in buf.iter().take(bins).enumerate() {
                out.set(k, f, b.norm());
            }
        }
        Ok(out)
    }

    /// Scalogram magnitudes, one row per scale, one column per time shift.
    pub fn cwt(&self, s: &[f64]) -> Result<View> {
        self.check_len(s)?;
        let n = s.len();
        let mut out = View::zeros(self.scales.len(), n);
        for (a, ker) in self.kernels.iter().enumerate() {
            for b in 0..n {
                let mut acc = Complex::new(0.0, 0.0);
                for (t, &x) in s.iter().enumerate() {
                    acc += ker[t + n - 1 - b] * x;
                }
                out.set(a, b, acc.norm());
            }
        }
        Ok(out)
    }

    /// Resize each view, scale it to `[0, 1]` and stack as (RP, STFT, CWT).
    pub fn compose(&self, rp: &View, stft: &View, cwt: &View) -> Result<SpectralImage> {
        let z = self.cfg.image_size;
        let mut data = Vec::with_capacity(3 * z * z);
        for (view, map) in [rp, stft, cwt].into_iter().zip(&self.resize) {
            if view.data.len() != map.in_len() {
                return Err(Error::shape("compose_image", &[map.in_len()], &[view.rows, view.cols]));
            }
            data.extend(unit_scale(map.apply(&view.data)));
        }
        Ok(SpectralImage { size: z, data })
    }

    pub fn render(&self, window: &[Vec<f64>]) -> Result<SpectralImage> {
        let s = collapse_channels(window)?;
        let rp = recurrence_plot(&s, &self.cfg.rp)?;
        self.compose(&rp, &self.stft(&s)?, &self.cwt(&s)?)
    }

    fn check_len(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.len {
            return Err(Error::shape("spectral", &[self.len], &[s.len()]));
        }
        Ok(())
    }
}

/// `ψ(t) = π^{-1/4} e^{iω₀t} e^{-t²/2}`.
pub fn morlet(t: f64, omega0: f64) -> Complex<f64> {
    let env = PI.powf(-0.25) * (-0.5 * t * t).exp();
    Complex::new(env * (omega0 * t).cos(), env * (omega0 * t).sin())
}

fn unit_scale(mut v: Vec<f64>) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for x in &mut v {
        *x = if span > 0.0 {
            ((*x - lo) / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
    }
    v
}

/// Three `size×size` channels in `[0, 1]`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralImage {
    pub size: usize,
    pub data: Vec<f64>,
}

impl SpectralImage {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            vec![3, self.size, self.size],
            self.data.iter().map(|&v| T::of(v)).collect(),
        )
        .expect("image shape")
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Binary PGM of one channel.
    pub fn write_pgm(&self, c: usize, mut w: impl Write) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.size, self.size)?;
        let bytes: Vec<u8> = self.channel(c).iter().map(|&v| to_byte(v)).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    /// Binary PPM with RP, STFT, CWT as red, green, blue.
    pub fn write_ppm(&self, mut w: impl Write) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.size, self.size)?;
        let n = self.size * self.size;
        let mut bytes = Vec::with_capacity(3 * n);
        for i in 0..n {
            for c in 0..3 {
                bytes.push(to_byte(self.data[c * n + i]));
            }
        }
        w.write_all(&bytes)?;
        Ok(())
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

const CACHE_MAGIC: &[u8; 8] = b"RULFIMG\0";

/// Cached image keyed by window identity.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub unit_id: u32,
    pub end_cycle: u32,
    pub image: SpectralImage,
}

/// Write images with a config-hash header. Values are stored as `f32`.
pub fn write_cache(path: &Path, config_hash: &str, entries: &[CacheEntry]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    let hash = config_hash.as_bytes();
    w.write_all(&(hash.len() as u32).to_le_bytes())?;
    w.write_all(hash)?;
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    for e in entries {
        w.write_all(&e.unit_id.to_le_bytes())?;
        w.write_all(&e.end_cycle.to_le_bytes())?;
        w.write_all(&(e.image.size as u32).to_le_bytes())?;
        for &v in &e.image.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a cache written by [`write_cache`]; a different config hash is a load error.
pub fn read_cache(path: &Path, config_hash: &str) -> Result<Vec<CacheEntry>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Load(format!("{} is not an image cache", path.display())));
    }
    let hash_len = read_u32(&mut r)? as usize;
    let mut hash = vec![0u8; hash_len];
    r.read_exact(&mut hash)?;
    if hash != config_hash.as_bytes() {
        return Err(Error::Load(format!(
            "image cache {} was built for a different spectral configuration",
            path.display()
        )));
    }
    let mut count = [0u8; 8];
    r.read_exact(&mut count)?;
    let count = u64::from_le_bytes(count) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let unit_id = read_u32(&mut r)?;
        let end_cycle = read_u32(&mut r)?;
        let size = read_u32(&mut r)? as usize;
        let mut raw = vec![0u8; 3 * size * size * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push(CacheEntry {
            unit_id,
            end_cycle,
            image: SpectralImage { size, data },
        });
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::SeededRng;
    use proptest::prelude::*;

    fn random_signal(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = SeededRng::new(seed);
        (0..n).map(|_| rng.normal()).collect()
    }

    fn renderer(len: usize) -> Renderer {
        Renderer::new(SpectralConfig::default(), len).unwrap()
    }

    #[test]
    fn collapse_single_channel_is_zscore() {
        let rows: Vec<Vec<f64>> = [1.0, 2.0, 3.0].iter().map(|&v| vec![v]).collect();
        let s = collapse_channels(&rows).unwrap();
        let sd = (2.0f64 / 3.0).sqrt();
        for (a, b) in s.iter().zip([-1.0 / sd, 0.0, 1.0 / sd]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn collapse_opposite_channels_cancel() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, -(i as f64), 4.0]).collect();
        assert!(collapse_channels(&rows).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn collapse_matches_loop_oracle() {
        let mut rng = SeededRng::new(3);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..14).map(|_| rng.uniform()).collect()).collect();
        let got = collapse_channels(&rows).unwrap();
        for t in 0..40 {
            let mut acc = 0.0;
            for j in 0..14 {
                let mut mean = 0.0;
                for r in &rows {
                    mean += r[j];
                }
                mean /= 40.0;
                let mut var = 0.0;
                for r in &rows {
                    var += (r[j] - mean) * (r[j] - mean);
                }
                acc += (rows[t][j] - mean) / (var / 40.0).sqrt();
            }
            assert!((got[t] - acc / 14.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_signal_recurrence_is_all_ones() {
        let r = recurrence_plot(&[2.0; 20], &RpConfig::default()).unwrap();
        assert!(r.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn recurrence_density_matches_brute_force() {
        let cfg = RpConfig::default();
        for seed in 0..20 {
            let s = random_signal(40, seed);
            let r = recurrence_plot(&s, &cfg).unwrap();
            let n = r.rows;
            let mut d = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        d.push(((s[i] - s[j]).powi(2) + (s[i + 1] - s[j + 1]).powi(2)).sqrt());
                    }
                }
            }
            let off = (0..n * n).filter(|k| k / n != k % n).map(|k| r.data[k]).sum::<f64>();
            let frac = off / (n * (n - 1)) as f64;
            assert!((frac - 0.10).abs() <= 0.02, "seed {seed}: {frac}");
        }
    }

    #[test]
    fn stft_zero_signal_is_zero() {
        let v = renderer(40).stft(&[0.0; 40]).unwrap();
        assert_eq!((v.rows, v.cols), (9, 13));
        assert!(v.data.iter().all(|&x| x == 0.0));
    }

    fn bin0_fraction(v: &View) -> f64 {
        let total: f64 = v.data.iter().map(|x| x * x).sum();
        (0..v.cols).map(|f| v.at(0, f).powi(2)).sum::<f64>() / total
    }

    #[test]
    fn dc_energy_by_window() {
        let hann = renderer(40).stft(&[1.0; 40]).unwrap();
        // periodic Hann: DFT is N/2 at bin 0 and −N/4 at bin ±1
        assert!((bin0_fraction(&hann) - 0.8).abs() < 1e-12);
        let cfg = SpectralConfig {
            stft: StftConfig {
                window: WindowFn::Rectangular,
                ..StftConfig::default()
            },
            ..SpectralConfig::default()
        };
        let rect = Renderer::new(cfg, 40).unwrap().stft(&[1.0; 40]).unwrap();
        assert!(bin0_fraction(&rect) > 1.0 - 1e-12);
    }

    #[test]
    fn stft_matches_direct_dft_and_peaks_at_bin() {
        let r = renderer(40);
        let k0 = 3;
        let s: Vec<f64> = (0..40)
            .map(|t| (2.0 * PI * k0 as f64 * t as f64 / 16.0).cos())
            .collect();
        let v = r.stft(&s).unwrap();
        let w = WindowFn::Hann.coefficients(16);
        for k in 0..9 {
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..16 {
                let ang = -2.0 * PI * (k * n) as f64 / 16.0;
                re += s[n] * w[n] * ang.cos();
                im += s[n] * w[n] * ang.sin();
            }
            assert!((v.at(k, 0) - (re * re + im * im).sqrt()).abs() < 1e-9);
        }
        for f in 0..v.cols {
            let best = (0..v.rows).max_by(|&a, &b| v.at(a, f).total_cmp(&v.at(b, f))).unwrap();
            assert_eq!(best, k0);
        }
    }

    #[test]
    fn scales_increase_and_span_periods() {
        let cfg = CwtConfig::default();
        let sc = cfg.scales(40).unwrap();
        assert_eq!(sc.len(), 32);
        assert!(sc.windows(2).all(|w| w[1] > w[0] && w[0] > 0.0));
        assert!((sc[0] * cfg.fourier_factor() - 2.0).abs() < 1e-12);
        assert!((sc[31] * cfg.fourier_factor() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn cwt_zero_and_linearity() {
        let r = renderer(40);
        assert!(r.cwt(&[0.0; 40]).unwrap().data.iter().all(|&v| v == 0.0));
        let s = random_signal(40, 8);
        let a = r.cwt(&s).unwrap();
        let b = r.cwt(&s.iter().map(|v| 2.5 * v).collect::<Vec<_>>()).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((2.5 * x - y).abs() < 1e-10);
        }
    }

    /// Continuous-time response `|∫ x(t) ψ*((t−b)/a) dt| / √a` by midpoint rule.
    fn quadrature(x: impl Fn(f64) -> f64, a: f64, b: f64, t1: f64) -> f64 {
        let steps = 8000;
        let h = t1 / steps as f64;
        let mut acc = Complex::new(0.0, 0.0);
        for i in 0..steps {
            let t = (i as f64 + 0.5) * h;
            acc += morlet((t - b) / a, 6.0).conj() * x(t) * h;
        }
        acc.norm() / a.sqrt()
    }

    #[test]
    fn cwt_scale_argmax_matches_quadrature() {
        let r = renderer(40);
        let f = CwtConfig::default().fourier_factor();
        for period in [3.0, 4.0, 5.0, 6.0] {
            let x = |t: f64| (2.0 * PI * t / period).sin();
            let s: Vec<f64> = (0..40).map(|t| x(t as f64)).collect();
            let v = r.cwt(&s).unwrap();
            let b = 20;
            let ours = (0..v.rows).max_by(|&i, &j| v.at(i, b).total_cmp(&v.at(j, b))).unwrap();
            let oracle = (0..r.scales.len())
                .max_by(|&i, &j| {
                    quadrature(x, r.scales[i], b as f64, 40.0).total_cmp(&quadrature(x, r.scales[j], b as f64, 40.0))
                })
                .unwrap();
            assert!(ours.abs_diff(oracle) <= 1, "period {period}: {ours} vs {oracle}");
            let nearest = (0..r.scales.len())
                .min_by(|&i, &j| {
                    (r.scales[i] * f / period)
                        .ln()
                        .abs()
                        .total_cmp(&(r.scales[j] * f / period).ln().abs())
                })
                .unwrap();
            assert!(
                ours.abs_diff(nearest) <= 1,
                "period {period}: {ours} vs nearest {nearest}"
            );
        }
    }

    #[test]
    fn image_shape_range_and_constant_resize() {
        let r = renderer(40);
        let mut rng = SeededRng::new(1);
        let w: Vec<Vec<f64>> = (0..40).map(|_| (0..14).map(|_| rng.uniform()).collect()).collect();
        let img = r.render(&w).unwrap();
        assert_eq!(img.data.len(), 3 * 114 * 114);
        assert_eq!(img.to_tensor::<f64>().shape(), &[3, 114, 114]);
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(img, r.render(&w).unwrap());

        let zeros = View::zeros(39, 39);
        let stft = View::zeros(9, 13);
        let cwt = View::zeros(32, 40);
        assert!(r.compose(&zeros, &stft, &cwt).unwrap().data.iter().all(|&v| v == 0.0));

        let m = bilinear_map::<f64>(9, 13, 114, 114);
        assert!(m.apply(&[3.5; 9 * 13]).iter().all(|&v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn exports_have_netpbm_headers() {
        let img = SpectralImage {
            size: 2,
            data: vec![0.0, 1.0, 0.5, 0.25, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
        };
        let mut pgm = Vec::new();
        img.write_pgm(0, &mut pgm).unwrap();
        assert_eq!(&pgm[..11], b"P5\n2 2\n255\n");
        assert_eq!(&pgm[11..], &[0, 255, 128, 64]);
        let mut ppm = Vec::new();
        img.write_ppm(&mut ppm).unwrap();
        assert_eq!(ppm.len(), 11 + 12);
        assert_eq!(&ppm[11..14], &[0, 0, 255]);
    }

    #[test]
    fn cache_round_trip_and_hash_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.bin");
        let cfg = SpectralConfig::default();
        let img = SpectralImage {
            size: 2,
            data: (0..12).map(|i| i as f64 / 16.0).collect(),
        };
        let e = vec![CacheEntry {
            unit_id: 3,
            end_cycle: 77,
            image: img,
        }];
        write_cache(&path, &cfg.hash(40), &e).unwrap();
        assert_eq!(read_cache(&path, &cfg.hash(40)).unwrap(), e);
        assert!(matches!(read_cache(&path, &cfg.hash(50)), Err(Error::Load(_))));
    }

    proptest! {
        #[test]
        fn recurrence_symmetric_with_unit_diagonal(s in proptest::collection::vec(-5.0f64..5.0, 5..60)) {
            let r = recurrence_plot(&s, &RpConfig::default()).unwrap();
            for i in 0..r.rows {
                prop_assert_eq!(r.at(i, i), 1.0);
                for j in 0..r.rows {
                    prop_assert_eq!(r.at(i, j), r.at(j, i));
                }
            }
        }
    }
}
