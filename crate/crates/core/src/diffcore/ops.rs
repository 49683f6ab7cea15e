//! Forward kernels and their adjoints. The functions here are pure; [`Tape`]
//! records them for reverse-mode propagation.
//!
//! [`Tape`]: super::Tape

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

fn mismatch(msg: String) -> Error {
    Error::ShapeMismatch(msg)
}

/// Geometry of a same-size convolution over a batch of images.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub ksize: usize,
}

impl ConvGeom {
    fn pad(&self) -> usize {
        self.ksize / 2
    }

    fn patch(&self) -> usize {
        self.cin * self.ksize * self.ksize
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn of(x: &[usize], kernel: &[usize], bias: &[usize]) -> Result<(ConvGeom, bool)> {
        let (n, batched, rest) = match x.len() {
            3 => (1, false, x),
            4 => (x[0], true, &x[1..]),
            _ => return Err(mismatch(format!("conv2d input must be CxHxW or NxCxHxW, got {x:?}"))),
        };
        if kernel.len() != 4 || kernel[2] != kernel[3] || kernel[2].is_multiple_of(2) {
            return Err(mismatch(format!("conv2d kernel must be Cout x Cin x k x k with odd k, got {kernel:?}")));
        }
        if kernel[1] != rest[0] {
            return Err(mismatch(format!(
                "conv2d kernel expects {} input channels, input has {}",
                kernel[1], rest[0]
            )));
        }
        if bias != [kernel[0]] {
            return Err(mismatch(format!("conv2d bias {bias:?} for {} outputs", kernel[0])));
        }
        Ok((
            ConvGeom {
                n,
                cin: rest[0],
                h: rest[1],
                w: rest[2],
                cout: kernel[0],
                ksize: kernel[2],
            },
            batched,
        ))
    }

    fn out_shape(&self, batched: bool) -> Vec<usize> {
        if batched {
            vec![self.n, self.cout, self.h, self.w]
        } else {
            vec![self.cout, self.h, self.w]
        }
    }
}

fn im2col<T: Real>(g: &ConvGeom, img: &[T], cols: &mut [T]) {
    let (h, w, k, pad) = (g.h as isize, g.w as isize, g.ksize, g.pad() as isize);
    let hw = g.hw();
    for c in 0..g.cin {
        let plane = &img[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let iy = y + dy;
                    let out = &mut dst[(y * w) as usize..((y + 1) * w) as usize];
                    if iy < 0 || iy >= h {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(iy * w) as usize..((iy + 1) * w) as usize];
                    for x in 0..w {
                        let ix = x + dx;
                        out[x as usize] = if ix < 0 || ix >= w {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, cols: &[T], img: &mut [T]) {
    let (h, w, k, pad) = (g.h as isize, g.w as isize, g.ksize, g.pad() as isize);
    let hw = g.hw();
    for c in 0..g.cin {
        let plane = &mut img[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let iy = y + dy;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    for x in 0..w {
                        let ix = x + dx;
                        if ix >= 0 && ix < w {
                            let v = &mut plane[(iy * w + ix) as usize];
                            *v = *v + src[(y * w + x) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Same-size cross-correlation with zero padding and stride 1, plus a
/// per-channel bias. Accepts `C×H×W` or a batch `N×C×H×W`.
pub fn conv2d<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    conv2d_forward(input, kernel, bias, false).map(|(y, _, _)| y)
}

pub(crate) fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    keep_cols: bool,
) -> Result<(Tensor<T>, ConvGeom, Vec<T>)> {
    let (g, batched) = ConvGeom::of(input.shape(), kernel.shape(), bias.shape())?;
    let (hw, patch) = (g.hw(), g.patch());
    let mut out = vec![T::zero(); g.n * g.cout * hw];
    let mut saved = if keep_cols {
        vec![T::zero(); g.n * patch * hw]
    } else {
        Vec::new()
    };
    let mut scratch = vec![T::zero(); patch * hw];
    let in_stride = g.cin * hw;
    let out_stride = g.cout * hw;
    for i in 0..g.n {
        let cols: &mut [T] = if keep_cols {
            &mut saved[i * patch * hw..(i + 1) * patch * hw]
        } else {
            &mut scratch
        };
        im2col(&g, &input.data()[i * in_stride..(i + 1) * in_stride], cols);
        let y = &mut out[i * out_stride..(i + 1) * out_stride];
        for (c, &b) in bias.data().iter().enumerate() {
            y[c * hw..(c + 1) * hw].fill(b);
        }
        T::gemm(
            g.cout,
            patch,
            hw,
            T::one(),
            kernel.data(),
            patch as isize,
            1,
            cols,
            hw as isize,
            1,
            T::one(),
            y,
            hw as isize,
            1,
        );
    }
    Ok((Tensor::new(&g.out_shape(batched), out)?, g, saved))
}

/// Adjoint of [`conv2d_forward`]. `cols` are the saved patches; the weight
/// and bias gradients are accumulated into `dkernel`/`dbias` when given.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    cols: &[T],
    kernel: &[T],
    dy: &[T],
    dinput: Option<&mut [T]>,
    dkernel: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) {
    let (hw, patch) = (g.hw(), g.patch());
    let out_stride = g.cout * hw;
    if let Some(db) = dbias {
        for i in 0..g.n {
            for (c, acc) in db.iter_mut().enumerate() {
                let s: T = dy[i * out_stride + c * hw..i * out_stride + (c + 1) * hw]
                    .iter()
                    .copied()
                    .sum();
                *acc = *acc + s;
            }
        }
    }
    if let Some(dk) = dkernel {
        for i in 0..g.n {
            // dK += dY_i · cols_iᵀ
            T::gemm(
                g.cout,
                hw,
                patch,
                T::one(),
                &dy[i * out_stride..(i + 1) * out_stride],
                hw as isize,
                1,
                &cols[i * patch * hw..(i + 1) * patch * hw],
                1,
                hw as isize,
                T::one(),
                dk,
                patch as isize,
                1,
            );
        }
    }
    if let Some(dx) = dinput {
        let in_stride = g.cin * hw;
        let mut dcols = vec![T::zero(); patch * hw];
        for i in 0..g.n {
            // dcols = Kᵀ · dY_i
            T::gemm(
                patch,
                g.cout,
                hw,
                T::one(),
                kernel,
                1,
                patch as isize,
                &dy[i * out_stride..(i + 1) * out_stride],
                hw as isize,
                1,
                T::zero(),
                &mut dcols,
                hw as isize,
                1,
            );
            col2im(g, &dcols, &mut dx[i * in_stride..(i + 1) * in_stride]);
        }
    }
}

pub(crate) fn conv2d_cols<T: Real>(input: &Tensor<T>, g: &ConvGeom) -> Vec<T> {
    let (hw, patch) = (g.hw(), g.patch());
    let in_stride = g.cin * hw;
    let mut cols = vec![T::zero(); g.n * patch * hw];
    for i in 0..g.n {
        im2col(
            g,
            &input.data()[i * in_stride..(i + 1) * in_stride],
            &mut cols[i * patch * hw..(i + 1) * patch * hw],
        );
    }
    cols
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// 2×2 max pooling with stride 2 over the last two axes. Returns the pooled
/// tensor and, per output element, the flat input index it was taken from;
/// ties go to the first index in row-major window order.
pub fn max_pool2<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let shape = input.shape();
    if shape.len() < 2 {
        return Err(mismatch(format!("max_pool2 needs at least 2 axes, got {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(mismatch(format!("max_pool2 needs even spatial extents, got {h}x{w}")));
    }
    let planes = input.len() / (h * w);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    let x = input.data();
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + (2 * y) * w + 2 * xo;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * xo + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    let mut out_shape = shape.to_vec();
    let r = out_shape.len();
    out_shape[r - 2] = oh;
    out_shape[r - 1] = ow;
    Ok((Tensor::new(&out_shape, out)?, arg))
}

/// Global average pooling: spatial mean of each channel. `C×H×W → C`,
/// `N×C×H×W → N×C`.
pub fn gap<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = input.shape();
    if shape.len() < 3 {
        return Err(mismatch(format!("gap needs C×H×W or N×C×H×W, got {shape:?}")));
    }
    let r = shape.len();
    let hw = shape[r - 2] * shape[r - 1];
    let inv = T::one() / T::of(hw as f64);
    let data = input
        .data()
        .chunks_exact(hw)
        .map(|c| c.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(&shape[..r - 2], data)
}

/// 1×1 convolution over the frame axis: `out[c, d] = Σ_t w[c, t]·x[t, d] + b[c]`.
pub fn temporal_pointwise<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (xs, ws) = (input.shape(), weights.shape());
    if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[0] || bias.shape() != [ws[0]] {
        return Err(mismatch(format!(
            "temporal_pointwise: input {xs:?}, weights {ws:?}, bias {:?}",
            bias.shape()
        )));
    }
    let (k, d, cout) = (xs[0], xs[1], ws[0]);
    let mut out = Vec::with_capacity(cout * d);
    for &b in bias.data() {
        out.extend(std::iter::repeat_n(b, d));
    }
    T::gemm(
        cout,
        k,
        d,
        T::one(),
        weights.data(),
        k as isize,
        1,
        input.data(),
        d as isize,
        1,
        T::one(),
        &mut out,
        d as isize,
        1,
    );
    Tensor::new(&[cout, d], out)
}

/// Affine map `weights·input + bias` on a vector.
pub fn linear<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let ws = weights.shape();
    if input.rank() != 1 || ws.len() != 2 || ws[1] != input.len() || bias.shape() != [ws[0]] {
        return Err(mismatch(format!(
            "linear: input {:?}, weights {ws:?}, bias {:?}",
            input.shape(),
            bias.shape()
        )));
    }
    let out = weights
        .data()
        .chunks_exact(ws[1])
        .zip(bias.data())
        .map(|(row, &b)| row.iter().zip(input.data()).fold(b, |acc, (&w, &x)| acc + w * x))
        .collect();
    Tensor::new(&[ws[0]], out)
}

/// Numerically stable softmax of a vector.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `−log softmax(logits)[class]` via the max-subtracted log-sum-exp.
pub fn softmax_cross_entropy<T: Real>(logits: &Tensor<T>, class: usize) -> Result<T> {
    let l = logits.data();
    if class >= l.len() {
        return Err(Error::IndexOutOfRange {
            index: class,
            len: l.len(),
        });
    }
    let max = l.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = l.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    Ok(lse - l[class])
}

/// Mean squared difference over all elements.
pub fn mse<T: Real>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if prediction.shape() != target.shape() {
        return Err(mismatch(format!(
            "mse: prediction {:?} vs target {:?}",
            prediction.shape(),
            target.shape()
        )));
    }
    let n = T::of(prediction.len() as f64);
    Ok(prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<T>()
        / n)
}
