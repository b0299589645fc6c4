//! Differentiable layer kit for the reference models.
//!
//! A small static set of primitives (3x3/1x1 convolution via im2col + GEMM,
//! 2x2 max pooling, nearest-neighbor upsampling, channel concat, ReLU,
//! sigmoid, MSE and softmax cross-entropy losses) with hand-written
//! backward passes, plus Adam. Everything is generic over the float type:
//! training runs in f32, gradient checks instantiate the same code in f64.

use ndarray::{s, Array1, Array2, Array3, Axis, NdFloat, Zip};
use num_traits::NumCast;
use rand::Rng;

/// Convert an f64 constant into the working float type.
pub fn fc<F: NdFloat>(x: f64) -> F {
    <F as NumCast>::from(x).expect("constant fits in float type")
}

fn sum<F: NdFloat>(it: impl Iterator<Item = F>) -> F {
    it.fold(F::zero(), |a, b| a + b)
}

/// Unfold `x` (standard layout, `(cin, h, w)`) into `(cin*k*k, h*w)` columns
/// for a stride-1, zero-padded convolution.
pub fn im2col<F: NdFloat>(x: &Array3<F>, k: usize, pad: usize) -> Array2<F> {
    let (cin, h, w) = x.dim();
    let mut cols = Array2::zeros((cin * k * k, h * w));
    for ci in 0..cin {
        for dy in 0..k {
            for dx in 0..k {
                let row = (ci * k + dy) * k + dx;
                let mut row_view = cols.row_mut(row);
                let row_slice = row_view.as_slice_mut().expect("row is contiguous");
                for y in 0..h {
                    let iy = y as isize + dy as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let x_lo = pad.saturating_sub(dx);
                    let x_hi = (w + pad - dx).min(w);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let src_lo = x_lo + dx - pad;
                    let src = x.slice(s![ci, iy as usize, src_lo..src_lo + (x_hi - x_lo)]);
                    row_slice[y * w + x_lo..y * w + x_hi]
                        .copy_from_slice(src.as_slice().expect("row segment is contiguous"));
                }
            }
        }
    }
    cols
}

/// Fold columns back into an image by scatter-add; adjoint of [`im2col`].
pub fn col2im<F: NdFloat>(
    cols: &Array2<F>,
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
) -> Array3<F> {
    let mut x = Array3::zeros((cin, h, w));
    for ci in 0..cin {
        for dy in 0..k {
            for dx in 0..k {
                let row = (ci * k + dy) * k + dx;
                let row_view = cols.row(row);
                let row_slice = row_view.as_slice().expect("row is contiguous");
                for y in 0..h {
                    let iy = y as isize + dy as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let x_lo = pad.saturating_sub(dx);
                    let x_hi = (w + pad - dx).min(w);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let src_lo = x_lo + dx - pad;
                    let mut dst = x.slice_mut(s![
                        ci,
                        iy as usize,
                        src_lo..src_lo + (x_hi - x_lo)
                    ]);
                    let dst_slice = dst.as_slice_mut().expect("row segment is contiguous");
                    for (d, &v) in dst_slice
                        .iter_mut()
                        .zip(&row_slice[y * w + x_lo..y * w + x_hi])
                    {
                        *d += v;
                    }
                }
            }
        }
    }
    x
}

/// Stride-1 convolution layer. Weights are stored flattened as
/// `(cout, cin*k*k)` so the forward pass is a single GEMM.
#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub pad: usize,
}

impl<F: NdFloat> Conv2d<F> {
    /// He-uniform init: U(-b, b) with b = sqrt(6 / fan_in).
    pub fn he_uniform(cin: usize, cout: usize, k: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (cin * k * k) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let weight = Array2::from_shape_fn((cout, cin * k * k), |_| {
            fc::<F>((rng.random::<f64>() * 2.0 - 1.0) * bound)
        });
        let bias = Array1::zeros(cout);
        Conv2d {
            weight,
            bias,
            cin,
            cout,
            k,
            pad,
        }
    }

    pub fn forward(&self, x: &Array3<F>) -> Array3<F> {
        let (cin, h, w) = x.dim();
        assert_eq!(cin, self.cin, "conv input channels");
        let out2 = if self.k == 1 && self.pad == 0 {
            let x2 = x
                .view()
                .into_shape_with_order((cin, h * w))
                .expect("standard layout");
            self.weight.dot(&x2)
        } else {
            let cols = im2col(x, self.k, self.pad);
            self.weight.dot(&cols)
        };
        let mut out = out2
            .into_shape_with_order((self.cout, h, w))
            .expect("gemm output layout");
        for (mut ch, &b) in out.outer_iter_mut().zip(self.bias.iter()) {
            ch.mapv_inplace(|v| v + b);
        }
        out
    }

    /// Returns `(dx, dweight, dbias)` for upstream gradient `dy`.
    pub fn backward(&self, x: &Array3<F>, dy: &Array3<F>) -> (Array3<F>, Array2<F>, Array1<F>) {
        let (cin, h, w) = x.dim();
        let dy2 = dy
            .view()
            .into_shape_with_order((self.cout, h * w))
            .expect("standard layout");
        let db = dy2.sum_axis(Axis(1));
        if self.k == 1 && self.pad == 0 {
            let x2 = x
                .view()
                .into_shape_with_order((cin, h * w))
                .expect("standard layout");
            let dw = dy2.dot(&x2.t());
            let dx = self
                .weight
                .t()
                .dot(&dy2)
                .into_shape_with_order((cin, h, w))
                .expect("gemm output layout");
            (dx, dw, db)
        } else {
            let cols = im2col(x, self.k, self.pad);
            let dw = dy2.dot(&cols.t());
            let dcols = self.weight.t().dot(&dy2);
            (col2im(&dcols, cin, h, w, self.k, self.pad), dw, db)
        }
    }
}

/// 2x2 max pooling; returns the pooled map and the in-window argmax
/// (0..4, first maximum wins on ties) needed by the backward pass.
pub fn maxpool2_forward<F: NdFloat>(x: &Array3<F>) -> (Array3<F>, Array3<u8>) {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even dimensions");
    let mut y = Array3::zeros((c, oh, ow));
    let mut idx = Array3::zeros((c, oh, ow));
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = x[[ci, 2 * oy, 2 * ox]];
                let mut bi = 0u8;
                for (j, (dy, dx)) in [(0usize, 1usize), (1, 0), (1, 1)].iter().enumerate() {
                    let v = x[[ci, 2 * oy + dy, 2 * ox + dx]];
                    if v > best {
                        best = v;
                        bi = (j + 1) as u8;
                    }
                }
                y[[ci, oy, ox]] = best;
                idx[[ci, oy, ox]] = bi;
            }
        }
    }
    (y, idx)
}

pub fn maxpool2_backward<F: NdFloat>(dy: &Array3<F>, idx: &Array3<u8>) -> Array3<F> {
    let (c, oh, ow) = dy.dim();
    let mut dx = Array3::zeros((c, oh * 2, ow * 2));
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let j = idx[[ci, oy, ox]] as usize;
                let (dyo, dxo) = [(0, 0), (0, 1), (1, 0), (1, 1)][j];
                dx[[ci, 2 * oy + dyo, 2 * ox + dxo]] = dy[[ci, oy, ox]];
            }
        }
    }
    dx
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2_forward<F: NdFloat>(x: &Array3<F>) -> Array3<F> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, 2 * h, 2 * w), |(ci, y, xx)| x[[ci, y / 2, xx / 2]])
}

pub fn upsample2_backward<F: NdFloat>(dy: &Array3<F>) -> Array3<F> {
    let (c, h2, w2) = dy.dim();
    let mut dx = Array3::zeros((c, h2 / 2, w2 / 2));
    for ci in 0..c {
        for y in 0..h2 {
            for xx in 0..w2 {
                dx[[ci, y / 2, xx / 2]] += dy[[ci, y, xx]];
            }
        }
    }
    dx
}

pub fn concat_channels<F: NdFloat>(a: &Array3<F>, b: &Array3<F>) -> Array3<F> {
    ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("matching spatial dims")
}

pub fn split_channels<F: NdFloat>(d: &Array3<F>, ca: usize) -> (Array3<F>, Array3<F>) {
    let first = d.slice(s![..ca, .., ..]).to_owned();
    let second = d.slice(s![ca.., .., ..]).to_owned();
    (first, second)
}

pub fn relu_inplace<F: NdFloat>(x: &mut Array3<F>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Zero the gradient wherever the (post-)activation was clipped.
pub fn relu_backward_inplace<F: NdFloat>(d: &mut Array3<F>, y: &Array3<F>) {
    Zip::from(d).and(y).for_each(|dv, &yv| {
        if yv <= F::zero() {
            *dv = F::zero();
        }
    });
}

pub fn sigmoid<F: NdFloat>(x: &Array3<F>) -> Array3<F> {
    x.mapv(|v| F::one() / (F::one() + (-v).exp()))
}

/// Gradient through sigmoid given its output `y`.
pub fn sigmoid_backward<F: NdFloat>(dy: &Array3<F>, y: &Array3<F>) -> Array3<F> {
    let mut d = dy.clone();
    Zip::from(&mut d).and(y).for_each(|dv, &yv| {
        *dv = *dv * yv * (F::one() - yv);
    });
    d
}

/// Mean-squared error with mean reduction; returns `(loss, dloss/dy)`.
pub fn mse_loss_grad<F: NdFloat>(y: &Array3<F>, t: &Array3<F>) -> (F, Array3<F>) {
    assert_eq!(y.dim(), t.dim(), "mse loss shapes");
    let n = fc::<F>(y.len() as f64);
    let diff = y - t;
    let loss = sum(diff.iter().map(|&d| d * d)) / n;
    let grad = diff.mapv(|d| d * fc::<F>(2.0) / n);
    (loss, grad)
}

/// Per-pixel softmax cross-entropy against an integer-coded mask target
/// `(1, h, w)` with values in `0..n_classes`; mean reduction over pixels.
pub fn softmax_ce_loss_grad<F: NdFloat>(logits: &Array3<F>, target: &Array3<F>) -> (F, Array3<F>) {
    let (nc, h, w) = logits.dim();
    assert_eq!(target.dim(), (1, h, w), "target shape");
    let npix = fc::<F>((h * w) as f64);
    let mut loss = F::zero();
    let mut grad = Array3::zeros((nc, h, w));
    for y in 0..h {
        for x in 0..w {
            let t = target[[0, y, x]].to_usize().expect("integer-coded class");
            assert!(t < nc, "target class {t} out of range");
            let mut maxv = logits[[0, y, x]];
            for c in 1..nc {
                if logits[[c, y, x]] > maxv {
                    maxv = logits[[c, y, x]];
                }
            }
            let mut denom = F::zero();
            for c in 0..nc {
                denom = denom + (logits[[c, y, x]] - maxv).exp();
            }
            let log_denom = denom.ln() + maxv;
            loss = loss + (log_denom - logits[[t, y, x]]);
            for c in 0..nc {
                let p = (logits[[c, y, x]] - log_denom).exp();
                let ind = if c == t { F::one() } else { F::zero() };
                grad[[c, y, x]] = (p - ind) / npix;
            }
        }
    }
    (loss / npix, grad)
}

/// Adam over a fixed list of flat parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    t: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: NdFloat> Adam<F> {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Adam {
            lr: fc(lr),
            beta1: fc(0.9),
            beta2: fc(0.999),
            eps: fc(1e-8),
            t: 0,
            m: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }

    /// One update; `params` and `grads` must align with the sizes at construction.
    pub fn step(&mut self, params: &mut [&mut [F]], grads: &[&[F]]) {
        assert_eq!(params.len(), self.m.len(), "adam tensor count");
        self.t += 1;
        let bc1 = F::one() - self.beta1.powi(self.t as i32);
        let bc2 = F::one() - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i];
            assert_eq!(p.len(), g.len(), "adam tensor {i} size");
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (F::one() - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (F::one() - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] = p[j] - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    fn rand_arr3(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> Array3<f64> {
        Array3::from_shape_fn((c, h, w), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    /// Central finite difference of `f` w.r.t. one slot of a mutable buffer.
    fn central_diff(mut f: impl FnMut() -> f64, slot: *mut f64, h: f64) -> f64 {
        unsafe {
            let orig = *slot;
            *slot = orig + h;
            let up = f();
            *slot = orig - h;
            let down = f();
            *slot = orig;
            (up - down) / (2.0 * h)
        }
    }

    fn assert_close(analytic: f64, numeric: f64, what: &str) {
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        let rel = (analytic - numeric).abs() / denom;
        assert!(
            rel < 1e-3,
            "{what}: analytic {analytic} vs numeric {numeric} (rel {rel})"
        );
    }

    #[test]
    fn conv3x3_gradients_match_finite_differences() {
        let mut rng = crate::rng::substream(1, "nn-fd", 0);
        let conv = Conv2d::<f64>::he_uniform(2, 3, 3, 1, &mut rng);
        let x = rand_arr3(&mut rng, 2, 5, 4);
        let t = rand_arr3(&mut rng, 3, 5, 4);
        let loss = |conv: &Conv2d<f64>, x: &Array3<f64>| mse_loss_grad(&conv.forward(x), &t).0;

        let y = conv.forward(&x);
        let (_, dy) = mse_loss_grad(&y, &t);
        let (dx, dw, db) = conv.backward(&x, &dy);

        let mut conv_m = conv.clone();
        let mut x_m = x.clone();
        for probe in 0..6 {
            let wi = (probe * 7) % conv.weight.len();
            let slot = &mut conv_m.weight.as_slice_mut().unwrap()[wi] as *mut f64;
            let num = central_diff(|| loss(&conv_m, &x), slot, 1e-6);
            assert_close(dw.as_slice().unwrap()[wi], num, "conv3x3 dw");

            let xi = (probe * 5) % x.len();
            let slot = &mut x_m.as_slice_mut().unwrap()[xi] as *mut f64;
            let num = central_diff(|| loss(&conv, &x_m), slot, 1e-6);
            assert_close(dx.as_slice().unwrap()[xi], num, "conv3x3 dx");
        }
        let slot = &mut conv_m.bias.as_slice_mut().unwrap()[1] as *mut f64;
        let num = central_diff(|| loss(&conv_m, &x), slot, 1e-6);
        assert_close(db[1], num, "conv3x3 db");
    }

    #[test]
    fn conv1x1_gradients_match_finite_differences() {
        let mut rng = crate::rng::substream(2, "nn-fd", 0);
        let conv = Conv2d::<f64>::he_uniform(3, 2, 1, 0, &mut rng);
        let x = rand_arr3(&mut rng, 3, 4, 4);
        let t = rand_arr3(&mut rng, 2, 4, 4);
        let y = conv.forward(&x);
        let (_, dy) = mse_loss_grad(&y, &t);
        let (dx, dw, _) = conv.backward(&x, &dy);

        let mut conv_m = conv.clone();
        let slot = &mut conv_m.weight.as_slice_mut().unwrap()[4] as *mut f64;
        let num = central_diff(
            || mse_loss_grad(&conv_m.forward(&x), &t).0,
            slot,
            1e-6,
        );
        assert_close(dw.as_slice().unwrap()[4], num, "conv1x1 dw");

        let mut x_m = x.clone();
        let slot = &mut x_m.as_slice_mut().unwrap()[10] as *mut f64;
        let num = central_diff(|| mse_loss_grad(&conv.forward(&x_m), &t).0, slot, 1e-6);
        assert_close(dx.as_slice().unwrap()[10], num, "conv1x1 dx");
    }

    #[test]
    fn pooling_upsample_concat_relu_sigmoid_gradients() {
        // Composite micro-graph touching every non-conv layer:
        // y = sigmoid(concat(upsample(maxpool(relu(x))), x))
        let mut rng = crate::rng::substream(3, "nn-fd", 0);
        let x = rand_arr3(&mut rng, 2, 4, 4);
        let t = rand_arr3(&mut rng, 4, 4, 4).mapv(|v| 0.5 + 0.25 * v);

        let forward = |x: &Array3<f64>| {
            let mut a = x.clone();
            relu_inplace(&mut a);
            let (p, _) = maxpool2_forward(&a);
            let u = upsample2_forward(&p);
            let cat = concat_channels(&u, x);
            sigmoid(&cat)
        };
        let loss = |x: &Array3<f64>| mse_loss_grad(&forward(x), &t).0;

        // analytic
        let mut a = x.clone();
        relu_inplace(&mut a);
        let (p, idx) = maxpool2_forward(&a);
        let u = upsample2_forward(&p);
        let cat = concat_channels(&u, &x);
        let y = sigmoid(&cat);
        let (_, dy) = mse_loss_grad(&y, &t);
        let dcat = sigmoid_backward(&dy, &y);
        let (du, dskip) = split_channels(&dcat, 2);
        let dp = upsample2_backward(&du);
        let mut da = maxpool2_backward(&dp, &idx);
        relu_backward_inplace(&mut da, &a);
        let dx = da + dskip;

        let mut x_m = x.clone();
        for probe in 0..8 {
            let xi = (probe * 3 + 1) % x.len();
            let slot = &mut x_m.as_slice_mut().unwrap()[xi] as *mut f64;
            let num = central_diff(|| loss(&x_m), slot, 1e-6);
            assert_close(dx.as_slice().unwrap()[xi], num, "composite dx");
        }
    }

    #[test]
    fn softmax_ce_gradients_match_finite_differences() {
        let mut rng = crate::rng::substream(4, "nn-fd", 0);
        let logits = rand_arr3(&mut rng, 2, 3, 4);
        let target = Array3::from_shape_fn((1, 3, 4), |_| {
            if rng.random::<bool>() {
                1.0
            } else {
                0.0
            }
        });
        let (_, grad) = softmax_ce_loss_grad(&logits, &target);
        let mut l_m = logits.clone();
        for probe in 0..8 {
            let li = (probe * 5 + 2) % logits.len();
            let slot = &mut l_m.as_slice_mut().unwrap()[li] as *mut f64;
            let num = central_diff(|| softmax_ce_loss_grad(&l_m, &target).0, slot, 1e-6);
            assert_close(grad.as_slice().unwrap()[li], num, "softmax-ce dlogits");
        }
    }

    #[test]
    fn maxpool_ties_pick_first_window_slot() {
        let x = Array3::from_elem((1, 2, 2), 0.7f64);
        let (y, idx) = maxpool2_forward(&x);
        assert_eq!(y[[0, 0, 0]], 0.7);
        assert_eq!(idx[[0, 0, 0]], 0);
    }

    #[test]
    fn adam_with_zero_lr_keeps_parameters() {
        let mut adam = Adam::<f32>::new(0.0, &[3]);
        let mut p = [1.0f32, -2.0, 0.5];
        let g = [0.3f32, 0.1, -0.9];
        adam.step(&mut [&mut p], &[&g]);
        assert_eq!(p, [1.0, -2.0, 0.5]);
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn adam_descends_on_quadratic() {
        // minimize (p - 3)^2; gradient 2(p-3)
        let mut adam = Adam::<f64>::new(0.1, &[1]);
        let mut p = [0.0f64];
        for _ in 0..400 {
            let g = [2.0 * (p[0] - 3.0)];
            adam.step(&mut [&mut p], &[&g]);
        }
        assert!((p[0] - 3.0).abs() < 1e-2, "p = {}", p[0]);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), c> == <x, col2im(c)> for random x, c — the defining
        // property that makes the conv backward pass correct.
        let mut rng = crate::rng::substream(5, "nn-fd", 0);
        let x = rand_arr3(&mut rng, 2, 4, 5);
        let cols_shape = (2 * 9, 20);
        let c = Array2::from_shape_fn(cols_shape, |_| rng.random::<f64>() - 0.5);
        let lhs: f64 = im2col(&x, 3, 1)
            .iter()
            .zip(c.iter())
            .map(|(&a, &b)| a * b)
            .sum();
        let rhs: f64 = x
            .iter()
            .zip(col2im(&c, 2, 4, 5, 3, 1).iter())
            .map(|(&a, &b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
