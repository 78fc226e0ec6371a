//! Degradation operators F for linear inverse problems.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{self, Tensor};

/// Rectangle in image coordinates (row, col, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    /// Centered h×w rectangle inside a side×side image.
    pub fn centered(side: usize, h: usize, w: usize) -> Rect {
        Rect {
            y: (side - h) / 2,
            x: (side - w) / 2,
            h,
            w,
        }
    }
}

#[derive(Debug, Clone)]
pub enum DegradationKind {
    /// Zero out a rectangle (the observation keeps everything else).
    BoxMask { rect: Rect },
    GaussianBlur { size: usize, sigma: f64 },
    Downsample { factor: usize },
    /// Seeded additive observation noise; the stored seed makes repeated
    /// applications identical.
    AdditiveNoise { sigma: f64, seed: u64 },
    Compose(Vec<DegradationKind>),
}

/// A degradation bound to image dimensions.
#[derive(Debug, Clone)]
pub struct DegradationOp {
    pub kind: DegradationKind,
    pub height: usize,
    pub width: usize,
}

/// Normalized Gaussian kernel (odd size), sum 1 within 1e-12.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Tensor> {
    if size % 2 == 0 || size == 0 {
        return Err(Error::invalid(format!("kernel size {size} must be odd")));
    }
    if sigma <= 0.0 {
        return Err(Error::invalid("kernel sigma must be positive"));
    }
    let c = (size / 2) as f64;
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            data.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = data.iter().sum();
    for v in &mut data {
        *v /= total;
    }
    Tensor::new(vec![size, size], data)
}

impl DegradationOp {
    pub fn new(kind: DegradationKind, height: usize, width: usize) -> Result<Self> {
        let op = DegradationOp {
            kind,
            height,
            width,
        };
        op.validate(&op.kind, height, width)?;
        Ok(op)
    }

    fn validate(&self, kind: &DegradationKind, h: usize, w: usize) -> Result<()> {
        match kind {
            DegradationKind::BoxMask { rect } => {
                if rect.y + rect.h > h || rect.x + rect.w > w {
                    return Err(Error::invalid(format!(
                        "mask rect ({},{},{},{}) out of bounds for {h}x{w}",
                        rect.y, rect.x, rect.h, rect.w
                    )));
                }
                Ok(())
            }
            DegradationKind::GaussianBlur { size, sigma } => {
                gaussian_kernel(*size, *sigma).map(|_| ())
            }
            DegradationKind::Downsample { factor } => {
                if *factor == 0 || h % factor != 0 || w % factor != 0 {
                    return Err(Error::invalid(format!(
                        "downsample factor {factor} does not divide {h}x{w}"
                    )));
                }
                Ok(())
            }
            DegradationKind::AdditiveNoise { sigma, .. } => {
                if *sigma < 0.0 {
                    return Err(Error::invalid("noise sigma must be non-negative"));
                }
                Ok(())
            }
            DegradationKind::Compose(children) => {
                let (mut ch, mut cw) = (h, w);
                for c in children {
                    self.validate(c, ch, cw)?;
                    if let DegradationKind::Downsample { factor } = c {
                        ch /= factor;
                        cw /= factor;
                    }
                }
                Ok(())
            }
        }
    }

    /// Output dimensions (height, width).
    pub fn output_dims(&self) -> (usize, usize) {
        fn walk(kind: &DegradationKind, h: usize, w: usize) -> (usize, usize) {
            match kind {
                DegradationKind::Downsample { factor } => (h / factor, w / factor),
                DegradationKind::Compose(children) => {
                    children.iter().fold((h, w), |(h, w), c| walk(c, h, w))
                }
                _ => (h, w),
            }
        }
        walk(&self.kind, self.height, self.width)
    }

    /// The operator without its additive-noise components. Cost functions
    /// use this: noise corrupts the observation, it is not part of the
    /// forward model being inverted.
    pub fn deterministic(&self) -> DegradationOp {
        fn strip(kind: &DegradationKind) -> DegradationKind {
            match kind {
                DegradationKind::AdditiveNoise { .. } => DegradationKind::Compose(Vec::new()),
                DegradationKind::Compose(children) => DegradationKind::Compose(
                    children
                        .iter()
                        .filter(|c| !matches!(c, DegradationKind::AdditiveNoise { .. }))
                        .map(strip)
                        .collect(),
                ),
                other => other.clone(),
            }
        }
        DegradationOp {
            kind: strip(&self.kind),
            height: self.height,
            width: self.width,
        }
    }

    /// Apply to a [H,W] or flat [H·W] tensor; the result keeps the input's
    /// rank. Deterministic for all kinds (additive noise is seeded).
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let flat_in = x.rank() == 1;
        let img = if flat_in {
            x.reshaped(&[self.height, self.width])?
        } else {
            x.clone()
        };
        if img.shape() != [self.height, self.width] {
            return Err(Error::ShapeMismatch {
                context: "degradation input",
                left: img.shape().to_vec(),
                right: vec![self.height, self.width],
            });
        }
        let out = Self::apply_kind(&self.kind, img)?;
        if flat_in {
            let n = out.len();
            out.reshaped(&[n])
        } else {
            Ok(out)
        }
    }

    fn apply_kind(kind: &DegradationKind, img: Tensor) -> Result<Tensor> {
        match kind {
            DegradationKind::BoxMask { rect } => {
                let (_, w) = img.dims2("box mask")?;
                let mut out = img;
                for y in rect.y..rect.y + rect.h {
                    for x in rect.x..rect.x + rect.w {
                        out.data_mut()[y * w + x] = 0.0;
                    }
                }
                Ok(out)
            }
            DegradationKind::GaussianBlur { size, sigma } => {
                let k = gaussian_kernel(*size, *sigma)?;
                tensor::conv2d_reflect(&img, &k)
            }
            DegradationKind::Downsample { factor } => tensor::avgpool(&img, *factor),
            DegradationKind::AdditiveNoise { sigma, seed } => {
                let mut rng = Rng::new(*seed);
                let noise = rng.gaussian(img.shape());
                img.add_scaled(&noise, *sigma)
            }
            DegradationKind::Compose(children) => {
                let mut cur = img;
                for c in children {
                    cur = Self::apply_kind(c, cur)?;
                }
                Ok(cur)
            }
        }
    }

    /// Taped application for gradient paths; input var must be flat [H·W]
    /// and the output is flat.
    pub fn apply_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let img = tape.reshape(x, &[self.height, self.width])?;
        let out = Self::apply_kind_tape(&self.kind, tape, img)?;
        let n = tape.value(out).len();
        tape.reshape(out, &[n])
    }

    fn apply_kind_tape(kind: &DegradationKind, tape: &mut Tape, img: Var) -> Result<Var> {
        match kind {
            DegradationKind::BoxMask { rect } => {
                let (h, w) = tape.value(img).dims2("box mask tape")?;
                let mut mask = Tensor::full(&[h, w], 1.0);
                for y in rect.y..rect.y + rect.h {
                    for x in rect.x..rect.x + rect.w {
                        mask.data_mut()[y * w + x] = 0.0;
                    }
                }
                let m = tape.constant(mask);
                tape.mul(img, m)
            }
            DegradationKind::GaussianBlur { size, sigma } => {
                let k = gaussian_kernel(*size, *sigma)?;
                let kv = tape.constant(k);
                tape.conv2d_reflect(img, kv)
            }
            DegradationKind::Downsample { factor } => tape.avgpool(img, *factor),
            DegradationKind::AdditiveNoise { sigma, seed } => {
                let mut rng = Rng::new(*seed);
                let noise = rng.gaussian(tape.value(img).shape()).scaled(*sigma);
                let nv = tape.constant(noise);
                tape.add(img, nv)
            }
            DegradationKind::Compose(children) => {
                let mut cur = img;
                for c in children {
                    cur = Self::apply_kind_tape(c, tape, cur)?;
                }
                Ok(cur)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_mask_zeroes_rect_and_is_idempotent() {
        let op = DegradationOp::new(
            DegradationKind::BoxMask {
                rect: Rect::centered(64, 20, 20),
            },
            64,
            64,
        )
        .unwrap();
        let ones = Tensor::full(&[64, 64], 1.0);
        let out = op.apply(&ones).unwrap();
        let inside: f64 = (22..42)
            .flat_map(|y| (22..42).map(move |x| (y, x)))
            .map(|(y, x)| out.data()[y * 64 + x])
            .sum();
        assert_eq!(inside, 0.0);
        let total: f64 = out.sum();
        assert_eq!(total, (64.0 * 64.0) - 400.0);
        assert_eq!(op.apply(&out).unwrap(), out);
    }

    #[test]
    fn blur_preserves_constant_image() {
        let op = DegradationOp::new(
            DegradationKind::GaussianBlur {
                size: 11,
                sigma: 1.0,
            },
            16,
            16,
        )
        .unwrap();
        let img = Tensor::full(&[16, 16], 0.7);
        let out = op.apply(&img).unwrap();
        for &v in out.data() {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_kernel_is_normalized() {
        let k = gaussian_kernel(11, 1.0).unwrap();
        assert!((k.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn downsample_is_block_mean() {
        let op = DegradationOp::new(DegradationKind::Downsample { factor: 2 }, 2, 2).unwrap();
        let img = Tensor::new(vec![2, 2], vec![1.0, 1.0, 3.0, 3.0]).unwrap();
        assert_eq!(op.apply(&img).unwrap().data(), &[2.0]);
    }

    #[test]
    fn out_of_bounds_rect_rejected() {
        let err = DegradationOp::new(
            DegradationKind::BoxMask {
                rect: Rect {
                    y: 60,
                    x: 0,
                    h: 10,
                    w: 4,
                },
            },
            64,
            64,
        );
        assert!(err.is_err());
    }

    #[test]
    fn additive_noise_is_seeded_and_stable() {
        let op = DegradationOp::new(
            DegradationKind::AdditiveNoise {
                sigma: 0.05,
                seed: 9,
            },
            4,
            4,
        )
        .unwrap();
        let img = Tensor::zeros(&[4, 4]);
        assert_eq!(op.apply(&img).unwrap(), op.apply(&img).unwrap());
    }

    #[test]
    fn deterministic_part_strips_noise() {
        let op = DegradationOp::new(
            DegradationKind::Compose(vec![
                DegradationKind::Downsample { factor: 2 },
                DegradationKind::AdditiveNoise {
                    sigma: 0.05,
                    seed: 1,
                },
            ]),
            8,
            8,
        )
        .unwrap();
        let img = Tensor::full(&[8, 8], 1.0);
        let clean = op.deterministic().apply(&img).unwrap();
        for &v in clean.data() {
            assert_eq!(v, 1.0);
        }
        assert_eq!(op.output_dims(), (4, 4));
    }

    #[test]
    fn flat_input_round_trips_shapes() {
        let op = DegradationOp::new(DegradationKind::Downsample { factor: 2 }, 4, 4).unwrap();
        let flat = Tensor::from_vec(vec![1.0; 16]);
        let out = op.apply(&flat).unwrap();
        assert_eq!(out.shape(), &[4]);
    }
}
