//! Dense row-major f64 tensors and the handful of kernels everything else
//! builds on.
//!
//! All reductions run in fixed ascending-index order so that repeated runs
//! (and the CSV acceptance checks downstream) are bit-identical. No
//! broadcasting: elementwise ops require equal shapes.

use crate::error::{Error, Result};

/// Dense n-dimensional array of f64 in row-major order.
///
/// Values are immutable by convention once an operation returns; sharing
/// across threads is safe (`&Tensor` everywhere, clones are explicit).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Tag for the shape-checked binary elementwise operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Rank-1 tensor from a flat vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Shape `[1]` tensor holding one value (the scalar convention on tapes).
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Identity matrix n×n.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Sole element of a scalar-shaped tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::invalid(format!(
                "item() on non-scalar shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Same data, new shape (element counts must agree).
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::invalid(format!(
                "reshape {:?} -> {:?}: element count changes",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Sum of all elements, ascending index order.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    /// Sum of squares (‖x‖²), ascending index order.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    fn check_same_shape(&self, other: &Tensor, context: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                context,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(ElemOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(ElemOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(ElemOp::Mul, self, other)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        elementwise(ElemOp::Div, self, other)
    }

    /// self + c·other, shapes checked.
    pub fn add_scaled(&self, other: &Tensor, c: f64) -> Result<Tensor> {
        self.check_same_shape(other, "add_scaled")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + c * b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Rank-2 transpose.
    pub fn transposed(&self) -> Result<Tensor> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(out)
    }

    pub(crate) fn dims2(&self, context: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::invalid(format!(
                "{context}: expected rank-2, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

/// Componentwise binary op; shapes must match exactly.
pub fn elementwise(op: ElemOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.check_same_shape(b, "elementwise")?;
    let f = match op {
        ElemOp::Add => |x: f64, y: f64| x + y,
        ElemOp::Sub => |x: f64, y: f64| x - y,
        ElemOp::Mul => |x: f64, y: f64| x * y,
        ElemOp::Div => |x: f64, y: f64| x / y,
    };
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| f(x, y))
        .collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

/// Matrix product of two rank-2 tensors. Accumulation is ascending in the
/// contraction index for every output cell, so results are bit-reproducible.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, ka) = a.dims2("matmul lhs")?;
    let (kb, n) = b.dims2("matmul rhs")?;
    if ka != kb {
        return Err(Error::ShapeMismatch {
            context: "matmul inner extents",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    // ikj order: per output cell the k-sum still runs ascending.
    for i in 0..m {
        let arow = &a.data[i * ka..(i + 1) * ka];
        let orow = &mut out[i * n..(i + 1) * n];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// Mirror-reflect an out-of-range index into [0, n) without repeating the
/// border sample (…, 2, 1 | 0, 1, 2, …, n-1 | n-2, n-3, …).
#[inline]
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    debug_assert!(i >= 0 && i < n);
    i as usize
}

/// Same-size 2-D cross-correlation with reflect padding.
///
/// `kernel` must be odd-sided square with side ≤ min(H, W) so a single
/// reflection covers every tap.
pub fn conv2d_reflect(img: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (h, w) = img.dims2("conv2d image")?;
    let (kh, kw) = kernel.dims2("conv2d kernel")?;
    if kh != kw {
        return Err(Error::invalid(format!(
            "conv2d kernel must be square, got {kh}x{kw}"
        )));
    }
    if kh % 2 == 0 {
        return Err(Error::invalid(format!(
            "conv2d kernel side must be odd, got {kh}"
        )));
    }
    if kh > h.min(w) {
        return Err(Error::invalid(format!(
            "conv2d kernel {kh}x{kh} exceeds image {h}x{w}"
        )));
    }
    let c = (kh / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..kh {
                let sy = reflect_index(y as isize + ky as isize - c, h);
                for kx in 0..kw {
                    let sx = reflect_index(x as isize + kx as isize - c, w);
                    acc += img.data[sy * w + sx] * kernel.data[ky * kw + kx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    Ok(Tensor {
        shape: vec![h, w],
        data: out,
    })
}

/// Block-mean downsampling by an integer factor that divides both extents.
pub fn avgpool(img: &Tensor, factor: usize) -> Result<Tensor> {
    let (h, w) = img.dims2("avgpool")?;
    if factor == 0 {
        return Err(Error::invalid("avgpool factor must be positive"));
    }
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::invalid(format!(
            "avgpool factor {factor} does not divide image {h}x{w}"
        )));
    }
    let oh = h / factor;
    let ow = w / factor;
    let inv = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += img.data[(oy * factor + dy) * w + (ox * factor + dx)];
                }
            }
            out[oy * ow + ox] = acc * inv;
        }
    }
    Ok(Tensor {
        shape: vec![oh, ow],
        data: out,
    })
}

/// Nearest-neighbor (block-replicate) upsampling, the display-side inverse
/// of `avgpool`.
pub fn upsample_nearest(img: &Tensor, factor: usize) -> Result<Tensor> {
    let (h, w) = img.dims2("upsample")?;
    if factor == 0 {
        return Err(Error::invalid("upsample factor must be positive"));
    }
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Tensor::zeros(&[oh, ow]);
    for y in 0..oh {
        for x in 0..ow {
            out.data_mut()[y * ow + x] = img.data()[(y / factor) * w + (x / factor)];
        }
    }
    Ok(out)
}

/// Dot product of two equal-shape tensors, ascending index order.
pub fn dot(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b, "dot")?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &Tensor, b: &Tensor) -> Result<Option<f64>> {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Ok(None);
    }
    Ok(Some(dot(a, b)? / (na * nb)))
}
