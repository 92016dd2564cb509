use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real tensor of shape (channels, height, width), row-major with
/// channel as the slowest axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

/// An intermediate CNN activation of shape (c, h, w).
pub type FeatureMap = Tensor3;

/// An image tensor (C, H, W) with values in [0, 1].
pub type Image = Tensor3;

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Result<Self> {
        check_dims(c, h, w)?;
        Ok(Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        })
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(c, h, w)?;
        if data.len() != c * h * w {
            return Err(Error::dim(format!(
                "buffer of length {} does not match shape ({c}, {h}, {w})",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::dim(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { c, h, w, data })
    }

    pub fn from_fn(
        c: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        check_dims(c, h, w)?;
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ch, y, x));
                }
            }
        }
        Self::from_vec(c, h, w, data)
    }

    /// Internal constructor for buffers produced by our own kernels.
    pub(crate) fn from_raw(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), c * h * w);
        Self { c, h, w, data }
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, ch: usize, y: usize, x: usize) -> f32 {
        self.data[(ch * self.h + y) * self.w + x]
    }

    #[inline]
    pub(crate) fn set(&mut self, ch: usize, y: usize, x: usize, v: f32) {
        self.data[(ch * self.h + y) * self.w + x] = v;
    }

    /// Spatial slice of one channel.
    pub fn channel(&self, ch: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[ch * n..(ch + 1) * n]
    }
}

fn check_dims(c: usize, h: usize, w: usize) -> Result<()> {
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::dim(format!(
            "tensor dimensions must be positive, got ({c}, {h}, {w})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(Tensor3::zeros(0, 1, 1).is_err());
        assert!(Tensor3::from_vec(1, 1, 2, vec![0.0, f32::NAN]).is_err());
        assert!(Tensor3::from_vec(1, 1, 2, vec![0.0]).is_err());
    }

    #[test]
    fn indexing_is_channel_major() {
        let t = Tensor3::from_fn(2, 2, 3, |c, y, x| (c * 100 + y * 10 + x) as f32).unwrap();
        assert_eq!(t.get(1, 1, 2), 112.0);
        assert_eq!(t.channel(1)[0], 100.0);
        assert_eq!(t.as_slice()[3], 10.0);
    }
}
