//! Reduction of raw activations to probe-ready vectors.
//!
//! Convolutional maps are pooled to a 2x2 grid with adaptive average pooling
//! and flattened in (row, col, channel) order, giving `4C` values. Token
//! sequences are mean-pooled, optionally skipping a leading class token.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

/// Spatial activation map stored row-major with channels innermost:
/// element `(i, j, c)` is at `(i * width + j) * channels + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl SpatialTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(invalid("shape", "all spatial dims must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimMismatch { expected: height * width * channels, found: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("data", "non-finite activation"));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn at(&self, i: usize, j: usize, c: usize) -> f32 {
        self.data[(i * self.width + j) * self.channels + c]
    }
}

/// Raw per-sample activation as produced by a feature hook.
#[derive(Debug, Clone, PartialEq)]
pub enum RawActivation {
    Spatial(SpatialTensor),
    Tokens { count: usize, width: usize, has_class_token: bool, data: Vec<f32> },
    Vector(Vec<f32>),
}

impl RawActivation {
    /// The probe input for this activation.
    pub fn reduce(&self) -> Result<Vec<f32>> {
        match self {
            RawActivation::Spatial(t) => pool_spatial(t),
            RawActivation::Tokens { count, width, has_class_token, data } => {
                pool_tokens(*count, *width, data, *has_class_token)
            }
            RawActivation::Vector(v) => Ok(v.clone()),
        }
    }
}

// Adaptive pooling bin for output cell `i` of `out` over an input extent `len`.
fn bin(i: usize, out: usize, len: usize) -> (usize, usize) {
    let start = i * len / out;
    let end = ((i + 1) * len).div_ceil(out);
    (start, end)
}

fn pool_unchecked(t: &SpatialTensor, out_h: usize, out_w: usize) -> SpatialTensor {
    let c = t.channels;
    let mut data = vec![0.0f32; out_h * out_w * c];
    let mut acc = vec![0.0f64; c];
    for oi in 0..out_h {
        let (r0, r1) = bin(oi, out_h, t.height);
        for oj in 0..out_w {
            let (c0, c1) = bin(oj, out_w, t.width);
            acc.iter_mut().for_each(|a| *a = 0.0);
            for i in r0..r1 {
                for j in c0..c1 {
                    let base = (i * t.width + j) * c;
                    for (a, v) in acc.iter_mut().zip(&t.data[base..base + c]) {
                        *a += f64::from(*v);
                    }
                }
            }
            let count = ((r1 - r0) * (c1 - c0)) as f64;
            let base = (oi * out_w + oj) * c;
            for (o, a) in data[base..base + c].iter_mut().zip(&acc) {
                *o = (*a / count) as f32;
            }
        }
    }
    SpatialTensor { height: out_h, width: out_w, channels: c, data }
}

/// Adaptive average pooling to `out_h x out_w`, per channel.
pub fn adaptive_avg_pool(t: &SpatialTensor, out_h: usize, out_w: usize) -> Result<SpatialTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(invalid("out", "output dims must be >= 1"));
    }
    if out_h > t.height || out_w > t.width {
        return Err(invalid(
            "out",
            alloc::format!(
                "output {out_h}x{out_w} exceeds input {}x{}",
                t.height,
                t.width
            ),
        ));
    }
    Ok(pool_unchecked(t, out_h, out_w))
}

/// 2x2 adaptive pooling flattened to `4C` values.
///
/// Inputs narrower than 2 in either direction reuse source rows/columns
/// (the adaptive bins overlap) instead of failing.
pub fn pool_spatial(t: &SpatialTensor) -> Result<Vec<f32>> {
    if t.height == 0 || t.width == 0 {
        return Err(invalid("shape", "spatial dims must be >= 1"));
    }
    Ok(pool_unchecked(t, 2, 2).data)
}

/// Mean over image tokens of a `count x width` row-major token matrix.
/// With `has_class_token`, row 0 is skipped.
pub fn pool_tokens(count: usize, width: usize, tokens: &[f32], has_class_token: bool) -> Result<Vec<f32>> {
    if width == 0 {
        return Err(invalid("width", "token width must be >= 1"));
    }
    if tokens.len() != count * width {
        return Err(Error::DimMismatch { expected: count * width, found: tokens.len() });
    }
    let skip = usize::from(has_class_token);
    if count < 1 + skip {
        return Err(invalid(
            "tokens",
            if has_class_token {
                "need at least 2 tokens to exclude the class token"
            } else {
                "need at least 1 token"
            },
        ));
    }
    let mut acc = vec![0.0f64; width];
    for row in tokens.chunks_exact(width).skip(skip) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += f64::from(*v);
        }
    }
    let n = (count - skip) as f64;
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_to_sixteen() -> SpatialTensor {
        SpatialTensor::new(4, 4, 1, (1..=16).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn two_by_two_pool_is_identity() {
        let t = SpatialTensor::new(2, 2, 3, (0..12).map(|v| v as f32 * 0.5).collect()).unwrap();
        assert_eq!(adaptive_avg_pool(&t, 2, 2).unwrap(), t);
        assert_eq!(pool_spatial(&t).unwrap(), t.data);
    }

    #[test]
    fn block_means_of_four_by_four() {
        let p = adaptive_avg_pool(&one_to_sixteen(), 2, 2).unwrap();
        assert_eq!(p.data, vec![3.5, 5.5, 11.5, 13.5]);
        assert_eq!(pool_spatial(&one_to_sixteen()).unwrap(), vec![3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn constant_map_stays_constant() {
        let t = SpatialTensor::new(8, 8, 1, vec![5.0; 64]).unwrap();
        assert_eq!(pool_spatial(&t).unwrap(), vec![5.0; 4]);
        let p = adaptive_avg_pool(&SpatialTensor::new(5, 7, 2, vec![-1.5; 70]).unwrap(), 3, 4).unwrap();
        assert!(p.data.iter().all(|&v| v == -1.5));
    }

    #[test]
    fn output_larger_than_input_errors() {
        let t = SpatialTensor::new(1, 3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(adaptive_avg_pool(&t, 2, 2).is_err());
        assert!(adaptive_avg_pool(&t, 0, 1).is_err());
    }

    #[test]
    fn one_by_one_map_repeats_under_spatial_pooling() {
        let t = SpatialTensor::new(1, 1, 2, vec![4.0, -2.0]).unwrap();
        assert_eq!(pool_spatial(&t).unwrap(), vec![4.0, -2.0, 4.0, -2.0, 4.0, -2.0, 4.0, -2.0]);
        // 3 rows into 2 bins: [0,2) and [1,3), middle row shared.
        let t = SpatialTensor::new(3, 1, 1, vec![1.0, 2.0, 6.0]).unwrap();
        assert_eq!(pool_spatial(&t).unwrap(), vec![1.5, 1.5, 4.0, 4.0]);
    }

    #[test]
    fn token_pooling() {
        assert_eq!(pool_tokens(1, 3, &[1.0, 2.0, 3.0], false).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(pool_tokens(2, 2, &[2.0, 2.0, 4.0, 4.0], false).unwrap(), vec![3.0, 3.0]);
        assert_eq!(pool_tokens(3, 2, &[9.0, 9.0, 2.0, 2.0, 4.0, 4.0], true).unwrap(), vec![3.0, 3.0]);
        assert!(pool_tokens(1, 2, &[1.0, 1.0], true).is_err());
        assert!(pool_tokens(2, 2, &[1.0, 1.0], false).is_err());
    }

    #[test]
    fn raw_activation_dispatch() {
        let r = RawActivation::Spatial(one_to_sixteen());
        assert_eq!(r.reduce().unwrap().len(), 4);
        let r = RawActivation::Tokens { count: 2, width: 1, has_class_token: true, data: vec![7.0, 1.0] };
        assert_eq!(r.reduce().unwrap(), vec![1.0]);
    }

    fn tensor() -> impl Strategy<Value = SpatialTensor> {
        (1usize..9, 1usize..9, 1usize..4).prop_flat_map(|(h, w, c)| {
            proptest::collection::vec(-100i32..100, h * w * c)
                .prop_map(move |v| SpatialTensor::new(h, w, c, v.into_iter().map(|x| x as f32 / 4.0).collect()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn spatial_output_is_four_c(t in tensor()) {
            prop_assert_eq!(pool_spatial(&t).unwrap().len(), 4 * t.channels);
        }

        #[test]
        fn even_pooling_preserves_channel_mean(
            bh in 1usize..4, bw in 1usize..4, c in 1usize..3, seed in any::<u32>()
        ) {
            let (h, w) = (2 * bh, 2 * bw);
            let data: Vec<f32> = (0..h * w * c)
                .map(|k| ((k as u32).wrapping_mul(2654435761) ^ seed) % 97)
                .map(|v| v as f32 / 8.0)
                .collect();
            let t = SpatialTensor::new(h, w, c, data).unwrap();
            let p = adaptive_avg_pool(&t, 2, 2).unwrap();
            for ch in 0..c {
                let mean_in: f64 = (0..h * w).map(|k| f64::from(t.data[k * c + ch])).sum::<f64>() / (h * w) as f64;
                let mean_out: f64 = (0..4).map(|k| f64::from(p.data[k * c + ch])).sum::<f64>() / 4.0;
                prop_assert!((mean_in - mean_out).abs() < 1e-5);
            }
        }

        #[test]
        fn token_pooling_ignores_image_token_order(
            rows in proptest::collection::vec(proptest::collection::vec(-50i32..50, 3), 2..8),
            rot in 0usize..8,
        ) {
            let flat = |rs: &[Vec<i32>]| rs.iter().flatten().map(|&v| v as f32).collect::<Vec<_>>();
            let mut shuffled = rows.clone();
            let tail = &mut shuffled[1..];
            let k = rot % tail.len();
            tail.rotate_left(k);
            tail.reverse();
            let a = pool_tokens(rows.len(), 3, &flat(&rows), true).unwrap();
            let b = pool_tokens(rows.len(), 3, &flat(&shuffled), true).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }
    }
}
