//! 3×3 convolution, padding 1, via im2col and sgemm.

use rand::Rng;
use rand_distr::{Distribution, Normal};

const K: usize = 3;
const KK: usize = K * K;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Layout `[out][in][ky][kx]`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Parameter gradients for one [`Conv2d`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvGrad {
    pub fn zeros_like(conv: &Conv2d) -> Self {
        Self {
            weight: vec![0.0; conv.weight.len()],
            bias: vec![0.0; conv.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &ConvGrad) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

impl Conv2d {
    pub fn new_normal<R: Rng + ?Sized>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        std: f32,
    ) -> Self {
        let normal = Normal::new(0.0f32, std).expect("finite std");
        let weight = (0..out_channels * in_channels * KK)
            .map(|_| normal.sample(rng))
            .collect();
        Self {
            in_channels,
            out_channels,
            stride,
            weight,
            bias: vec![0.0; out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * KK
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn out_side(&self, side: usize) -> usize {
        (side - 1) / self.stride + 1
    }

    /// Returns `(output, im2col buffer)` for an input of shape `(in, h, w)`.
    pub fn forward(&self, input: &[f32], h: usize, w: usize) -> (Vec<f32>, Vec<f32>) {
        debug_assert_eq!(input.len(), self.in_channels * h * w);
        let (ho, wo) = (self.out_side(h), self.out_side(w));
        let p = ho * wo;
        let k = self.fan_in();
        let col = im2col(input, self.in_channels, h, w, self.stride, ho, wo);
        let mut out = vec![0.0f32; self.out_channels * p];
        for (o, row) in out.chunks_exact_mut(p).enumerate() {
            row.fill(self.bias[o]);
        }
        // out (Cout × P) += W (Cout × K) · col (K × P)
        unsafe {
            matrixmultiply::sgemm(
                self.out_channels,
                k,
                p,
                1.0,
                self.weight.as_ptr(),
                k as isize,
                1,
                col.as_ptr(),
                p as isize,
                1,
                1.0,
                out.as_mut_ptr(),
                p as isize,
                1,
            );
        }
        (out, col)
    }

    /// Accumulates parameter gradients into `grad` and, when `want_input` is
    /// set, returns the gradient with respect to the input.
    pub fn backward(
        &self,
        grad_out: &[f32],
        col: &[f32],
        h: usize,
        w: usize,
        grad: &mut ConvGrad,
        want_input: bool,
    ) -> Option<Vec<f32>> {
        let (ho, wo) = (self.out_side(h), self.out_side(w));
        let p = ho * wo;
        let k = self.fan_in();
        debug_assert_eq!(grad_out.len(), self.out_channels * p);
        for (o, row) in grad_out.chunks_exact(p).enumerate() {
            grad.bias[o] += row.iter().sum::<f32>();
        }
        // dW (Cout × K) += dOut (Cout × P) · colᵀ (P × K)
        unsafe {
            matrixmultiply::sgemm(
                self.out_channels,
                p,
                k,
                1.0,
                grad_out.as_ptr(),
                p as isize,
                1,
                col.as_ptr(),
                1,
                p as isize,
                1.0,
                grad.weight.as_mut_ptr(),
                k as isize,
                1,
            );
        }
        if !want_input {
            return None;
        }
        // dcol (K × P) = Wᵀ (K × Cout) · dOut (Cout × P)
        let mut dcol = vec![0.0f32; k * p];
        unsafe {
            matrixmultiply::sgemm(
                k,
                self.out_channels,
                p,
                1.0,
                self.weight.as_ptr(),
                1,
                k as isize,
                grad_out.as_ptr(),
                p as isize,
                1,
                0.0,
                dcol.as_mut_ptr(),
                p as isize,
                1,
            );
        }
        Some(col2im(&dcol, self.in_channels, h, w, self.stride, ho, wo))
    }
}

fn im2col(
    input: &[f32],
    channels: usize,
    h: usize,
    w: usize,
    stride: usize,
    ho: usize,
    wo: usize,
) -> Vec<f32> {
    let p = ho * wo;
    let mut col = vec![0.0f32; channels * KK * p];
    for c in 0..channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ky in 0..K {
            for kx in 0..K {
                let row = &mut col[((c * K + ky) * K + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im(
    col: &[f32],
    channels: usize,
    h: usize,
    w: usize,
    stride: usize,
    ho: usize,
    wo: usize,
) -> Vec<f32> {
    let p = ho * wo;
    let mut out = vec![0.0f32; channels * h * w];
    for c in 0..channels {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..K {
            for kx in 0..K {
                let row = &col[((c * K + ky) * K + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &g) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
    out
}
