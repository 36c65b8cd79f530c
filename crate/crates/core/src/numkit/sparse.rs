use super::Scalar;

/// A fixed linear map stored in compressed-row form: `y[i] = Σ w·x[c]`.
///
/// Resizing, padding, patch unfolding and im2col are all instances; the
/// tape differentiates them through a single transpose-scatter rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMap<T> {
    in_len: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<T>,
}

impl<T: Scalar> SparseMap<T> {
    pub fn from_rows(in_len: usize, rows: impl IntoIterator<Item = Vec<(usize, T)>>) -> Self {
        let mut offsets = vec![0];
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        for row in rows {
            for (c, w) in row {
                debug_assert!(c < in_len);
                cols.push(c);
                weights.push(w);
            }
            offsets.push(cols.len());
        }
        Self {
            in_len,
            offsets,
            cols,
            weights,
        }
    }

    /// Pure selection: `y[i] = x[index[i]]`, or 0 where `index[i]` is `None`.
    pub fn gather(in_len: usize, index: impl IntoIterator<Item = Option<usize>>) -> Self {
        Self::from_rows(
            in_len,
            index
                .into_iter()
                .map(|i| i.map(|c| vec![(c, T::one())]).unwrap_or_default()),
        )
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        (0..self.out_len())
            .map(|i| {
                let (a, b) = (self.offsets[i], self.offsets[i + 1]);
                self.cols[a..b]
                    .iter()
                    .zip(&self.weights[a..b])
                    .fold(T::zero(), |acc, (&c, &w)| acc + w * x[c])
            })
            .collect()
    }

    /// `dx += Mᵀ dy`
    pub fn apply_transpose_add(&self, dy: &[T], dx: &mut [T]) {
        for (i, &g) in dy.iter().enumerate() {
            let (a, b) = (self.offsets[i], self.offsets[i + 1]);
            for (&c, &w) in self.cols[a..b].iter().zip(&self.weights[a..b]) {
                dx[c] = dx[c] + w * g;
            }
        }
    }
}

/// Bilinear resize of a single `in_h×in_w` plane to `out_h×out_w`.
///
/// Half-pixel-centre sampling: output pixel `o` samples source coordinate
/// `(o + 0.5)·in/out − 0.5`, clamped to the valid range.
pub fn bilinear_map<T: Scalar>(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> SparseMap<T> {
    let axis = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, src - lo as f64)
    };
    let ys: Vec<_> = (0..out_h).map(|o| axis(o, in_h, out_h)).collect();
    let xs: Vec<_> = (0..out_w).map(|o| axis(o, in_w, out_w)).collect();
    let rows = ys.iter().flat_map(|&(y0, y1, fy)| {
        xs.iter().map(move |&(x0, x1, fx)| {
            let mut taps: Vec<(usize, T)> = Vec::with_capacity(4);
            for (r, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                for (c, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                    let w = wy * wx;
                    if w == 0.0 {
                        continue;
                    }
                    let idx = r * in_w + c;
                    match taps.iter_mut().find(|(i, _)| *i == idx) {
                        Some(t) => t.1 = t.1 + T::of(w),
                        None => taps.push((idx, T::of(w))),
                    }
                }
            }
            taps
        })
    });
    SparseMap::from_rows(in_h * in_w, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_of_constant_is_constant() {
        let m = bilinear_map::<f64>(9, 13, 114, 114);
        let y = m.apply(&vec![0.37; 9 * 13]);
        assert!(y.iter().all(|v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn bilinear_identity_when_sizes_match() {
        let m = bilinear_map::<f64>(4, 5, 4, 5);
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        assert_eq!(m.apply(&x), x);
    }

    #[test]
    fn bilinear_upsample_2x_golden() {
        // 1×2 → 1×4: sources at -0.25, 0.25, 0.75, 1.25 clamp to 0, .25, .75, 1.
        let m = bilinear_map::<f64>(1, 2, 1, 4);
        assert_eq!(m.apply(&[0.0, 4.0]), vec![0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn transpose_is_adjoint() {
        let m = bilinear_map::<f64>(3, 4, 7, 5);
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..35).map(|i| (i as f64 * 1.3).cos()).collect();
        let mx = m.apply(&x);
        let mut mty = vec![0.0; 12];
        m.apply_transpose_add(&y, &mut mty);
        let lhs: f64 = mx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&mty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
