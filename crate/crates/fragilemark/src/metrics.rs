//! Similarity and quality metrics: MSE, PSNR, NCC, IoU.
//!
//! All metrics are computed in f64 over the flat (channels × pixels) array.
//! NCC uses the population standard deviation and is undefined on constant
//! images; callers decide what a [`Error::DegenerateImage`] means (the
//! evaluation protocol maps degenerate model outputs to "not retrieved").

use crate::error::{Error, Result};
use crate::image::Image;
use ndarray::ArrayView3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mse,
    Psnr,
    Ncc,
    Iou,
}

/// A batch-averaged metric with the number of image pairs it covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
    pub count: usize,
}

fn check_same_shape(a: &Image, b: &Image, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared error over all channels and pixels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same_shape(a, b, "mse")?;
    Ok(mse_raw(&a.data(), &b.data()))
}

pub(crate) fn mse_raw(a: &ArrayView3<f32>, b: &ArrayView3<f32>) -> f64 {
    let n = a.len() as f64;
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    sum / n
}

/// Peak signal-to-noise ratio in dB for a given MSE; `+inf` when MSE is zero.
pub fn psnr(mse_value: f64, peak: f64) -> Result<f64> {
    if mse_value < 0.0 || !mse_value.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "psnr: mse must be finite and non-negative, got {mse_value}"
        )));
    }
    if mse_value == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse_value).log10())
}

/// Normalized cross-correlation over the flat array, clamped to `[-1, 1]`.
///
/// Invariant to brightness and positive contrast changes. Errors with
/// [`Error::DegenerateImage`] when either input has zero variance.
pub fn ncc(a: &Image, b: &Image) -> Result<f64> {
    check_same_shape(a, b, "ncc")?;
    ncc_raw(&a.data(), &b.data())
}

pub(crate) fn ncc_raw(a: &ArrayView3<f32>, b: &ArrayView3<f32>) -> Result<f64> {
    let n = a.len() as f64;
    let mean_a: f64 = a.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let mean_b: f64 = b.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let da = f64::from(x) - mean_a;
        let db = f64::from(y) - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    let sigma_a = (var_a / n).sqrt();
    let sigma_b = (var_b / n).sqrt();
    if sigma_a == 0.0 || sigma_b == 0.0 {
        return Err(Error::DegenerateImage(format!(
            "ncc undefined on constant input (sigma_a={sigma_a}, sigma_b={sigma_b})"
        )));
    }
    let value = cov / (n * sigma_a * sigma_b);
    Ok(value.clamp(-1.0, 1.0))
}

/// Intersection over union of two binary masks; 1.0 when both are empty.
pub fn iou(pred: &Image, truth: &Image) -> Result<f64> {
    check_same_shape(pred, truth, "iou")?;
    pred.require_binary_mask("iou pred")?;
    truth.require_binary_mask("iou truth")?;
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&p, &t) in pred.data().iter().zip(truth.data().iter()) {
        let p = p == 1.0;
        let t = t == 1.0;
        if p && t {
            inter += 1;
        }
        if p || t {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Arithmetic mean of a per-pair metric over a non-empty batch.
///
/// PSNR averages per-image PSNR values, not the PSNR of the mean MSE.
pub fn batch_mean(kind: MetricKind, pairs: &[(Image, Image)]) -> Result<MetricValue> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("batch_mean over empty batch".into()));
    }
    let mut sum = 0.0;
    for (a, b) in pairs {
        sum += match kind {
            MetricKind::Mse => mse(a, b)?,
            MetricKind::Psnr => psnr(mse(a, b)?, 1.0)?,
            MetricKind::Ncc => ncc(a, b)?,
            MetricKind::Iou => iou(a, b)?,
        };
    }
    Ok(MetricValue {
        kind,
        value: sum / pairs.len() as f64,
        count: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn img(data: Array3<f32>) -> Image {
        Image::new(data).unwrap()
    }

    fn ramp(c: usize, h: usize, w: usize) -> Image {
        let n = (c * h * w) as f32;
        img(Array3::from_shape_fn((c, h, w), |(ci, y, x)| {
            ((ci * h * w + y * w + x) as f32) / n
        }))
    }

    #[test]
    fn mse_identity_is_zero() {
        let x = ramp(3, 8, 8);
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn mse_of_extremes_is_one() {
        let a = img(Array3::zeros((3, 4, 4)));
        let b = img(Array3::ones((3, 4, 4)));
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn mse_quarter_step() {
        let a = img(Array3::from_elem((3, 4, 4), 0.5));
        let b = img(Array3::from_elem((3, 4, 4), 0.25));
        assert!((mse(&a, &b).unwrap() - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn mse_shape_mismatch_errors() {
        let a = ramp(3, 4, 4);
        let b = ramp(3, 4, 5);
        assert!(matches!(mse(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn psnr_known_values() {
        assert!((psnr(0.01, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert!((psnr(0.0001, 1.0).unwrap() - 40.0).abs() < 1e-12);
        assert!(psnr(0.0, 1.0).unwrap().is_infinite());
        assert!(psnr(-0.1, 1.0).is_err());
    }

    #[test]
    fn ncc_self_is_one() {
        let x = ramp(3, 8, 8);
        assert!((ncc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ncc_centered_negation_is_minus_one() {
        let x = ramp(1, 6, 6);
        let neg = img(x.data().mapv(|v| 1.0 - v));
        assert!((ncc(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ncc_brightness_shift_is_one() {
        // x in [0, 0.5]; +0.1 stays inside [0,1], no clipping involved.
        let x = img(Array3::from_shape_fn((1, 8, 8), |(_, y, _)| {
            y as f32 / 16.0
        }));
        let shifted = img(x.data().mapv(|v| v + 0.1));
        assert!((ncc(&x, &shifted).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ncc_constant_input_is_degenerate() {
        let x = ramp(3, 4, 4);
        let c = img(Array3::from_elem((3, 4, 4), 0.5));
        assert!(matches!(ncc(&x, &c), Err(Error::DegenerateImage(_))));
        assert!(matches!(ncc(&c, &x), Err(Error::DegenerateImage(_))));
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let mut a = Array3::zeros((1, 4, 4));
        a[[0, 0, 0]] = 1.0;
        a[[0, 0, 1]] = 1.0;
        let a = img(a);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let mut b = Array3::zeros((1, 4, 4));
        b[[0, 3, 3]] = 1.0;
        let b = img(b);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_partial_overlap_counts_pixels() {
        // pred: 2x2 square at (0,0); truth: same square shifted right by 1 -> 2 shared pixels.
        let mut p = Array3::zeros((1, 4, 4));
        for y in 0..2 {
            for x in 0..2 {
                p[[0, y, x]] = 1.0;
            }
        }
        let mut t = Array3::zeros((1, 4, 4));
        for y in 0..2 {
            for x in 1..3 {
                t[[0, y, x]] = 1.0;
            }
        }
        let v = iou(&img(p), &img(t)).unwrap();
        assert!((v - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn iou_empty_masks_is_one() {
        let z = img(Array3::zeros((1, 4, 4)));
        assert_eq!(iou(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn iou_rejects_non_binary() {
        let m = img(Array3::from_elem((1, 4, 4), 0.5));
        let z = img(Array3::zeros((1, 4, 4)));
        assert!(matches!(iou(&m, &z), Err(Error::NonBinaryMask(_))));
    }

    #[test]
    fn batch_mean_averages_and_counts() {
        let x = ramp(1, 6, 6);
        let neg = img(x.data().mapv(|v| 1.0 - v));
        // NCC pairs: (x,x) -> 1.0 and (x, 1-x) -> -1.0; mean 0.0.
        let pairs = vec![(x.clone(), x.clone()), (x.clone(), neg)];
        let v = batch_mean(MetricKind::Ncc, &pairs).unwrap();
        assert!((v.value - 0.0).abs() < 1e-12);
        assert_eq!(v.count, 2);
        let single = batch_mean(MetricKind::Mse, &pairs[..1].to_vec()).unwrap();
        assert_eq!(single.value, 0.0);
        assert!(batch_mean(MetricKind::Mse, &[]).is_err());
    }

    #[test]
    fn batch_psnr_is_mean_of_per_image_psnr() {
        // Two pairs with MSE 0.01 and 0.0001: mean-of-PSNR = 30 dB,
        // PSNR-of-mean-MSE = 22.97 dB. They must differ.
        let base = img(Array3::zeros((1, 10, 10)));
        let off1 = img(Array3::from_elem((1, 10, 10), 0.1));
        let off2 = img(Array3::from_elem((1, 10, 10), 0.01));
        let pairs = vec![(base.clone(), off1), (base.clone(), off2)];
        let batch = batch_mean(MetricKind::Psnr, &pairs).unwrap();
        assert!((batch.value - 30.0).abs() < 1e-5);
        let mean_mse = batch_mean(MetricKind::Mse, &pairs).unwrap().value;
        let pooled = psnr(mean_mse, 1.0).unwrap();
        assert!((batch.value - pooled).abs() > 5.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        // NCC is invariant to positive affine changes, evaluated without clipping.
        #[test]
        fn ncc_affine_invariance(
            values in prop::collection::vec(0.0f32..1.0, 48),
            a in 0.05f32..4.0,
            b in -2.0f32..2.0,
        ) {
            let x = Array3::from_shape_vec((3, 4, 4), values).unwrap();
            let spread = x.iter().cloned().fold(f32::MIN, f32::max)
                - x.iter().cloned().fold(f32::MAX, f32::min);
            prop_assume!(spread > 1e-3);
            let y = x.mapv(|v| a * v + b);
            let r = ncc_raw(&x.view(), &y.view()).unwrap();
            prop_assert!((r - 1.0).abs() < 1e-6, "ncc = {r}");
        }

        #[test]
        fn ncc_is_symmetric(values_a in prop::collection::vec(0.0f32..1.0, 27),
                            values_b in prop::collection::vec(0.0f32..1.0, 27)) {
            let x = Array3::from_shape_vec((3, 3, 3), values_a).unwrap();
            let y = Array3::from_shape_vec((3, 3, 3), values_b).unwrap();
            let fwd = ncc_raw(&x.view(), &y.view());
            let rev = ncc_raw(&y.view(), &x.view());
            match (fwd, rev) {
                (Ok(f), Ok(r)) => prop_assert!((f - r).abs() < 1e-9),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "asymmetric degeneracy"),
            }
        }

        #[test]
        fn psnr_decreases_monotonically_in_mse(m1 in 1e-8f64..1.0, m2 in 1e-8f64..1.0) {
            prop_assume!(m1 < m2);
            prop_assert!(psnr(m1, 1.0).unwrap() > psnr(m2, 1.0).unwrap());
        }

        #[test]
        fn iou_symmetric_and_bounded(bits_a in prop::collection::vec(0u8..2, 25),
                                     bits_b in prop::collection::vec(0u8..2, 25)) {
            let a = Image::new(Array3::from_shape_vec((1, 5, 5),
                bits_a.iter().map(|&b| b as f32).collect()).unwrap()).unwrap();
            let b = Image::new(Array3::from_shape_vec((1, 5, 5),
                bits_b.iter().map(|&b| b as f32).collect()).unwrap()).unwrap();
            let ab = iou(&a, &b).unwrap();
            let ba = iou(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
