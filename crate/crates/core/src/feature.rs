//! Dense H×W×C image / feature container.

use crate::error::{arg_err, dim_err, Error, Result};

/// Real-valued H×W×C array stored in row-major, channel-last order.
///
/// Index `(y, x, c)` lives at `(y * width + x) * channels + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(height >= 1 && width >= 1 && channels >= 1, "empty feature map");
        Self {
            height,
            width,
            channels,
            values: vec![value; height * width * channels],
        }
    }

    /// Wraps an existing buffer, checking its length and finiteness.
    pub fn from_vec(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return dim_err(format!("empty feature map {height}x{width}x{channels}"));
        }
        if values.len() != height * width * channels {
            return dim_err(format!(
                "buffer of {} values does not fit {height}x{width}x{channels}",
                values.len()
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature map value at index {pos}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    /// Builds a map by evaluating `f(y, x, c)` at every position.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut out = Self::zeros(height, width, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    out.values[(y * width + x) * channels + c] = f(y, x, c);
                }
            }
        }
        out
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.values[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_dims(&self, other: &FeatureMap) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn check_same_dims(&self, other: &FeatureMap, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            dim_err(format!(
                "{what}: {:?} vs {:?}",
                self.dims(),
                other.dims()
            ))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Copies a single channel out as an H×W×1 map.
    pub fn channel(&self, c: usize) -> Self {
        assert!(c < self.channels);
        let values = self
            .values
            .chunks_exact(self.channels)
            .map(|px| px[c])
            .collect();
        Self {
            height: self.height,
            width: self.width,
            channels: 1,
            values,
        }
    }

    /// Rectangular crop `[y0, y0+h) × [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || y0 + h > self.height || x0 + w > self.width {
            return arg_err(format!(
                "crop {h}x{w} at ({y0},{x0}) outside {}x{}",
                self.height, self.width
            ));
        }
        let c = self.channels;
        let mut values = Vec::with_capacity(h * w * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            values.extend_from_slice(&self.values[start..start + w * c]);
        }
        Ok(Self {
            height: h,
            width: w,
            channels: c,
            values,
        })
    }

    /// Left-right mirror image.
    pub fn mirror_horizontal(&self) -> Self {
        let (h, w, c) = self.dims();
        Self::from_fn(h, w, c, |y, x, ch| self.get(y, w - 1 - x, ch))
    }

    pub fn max_abs_diff(&self, other: &FeatureMap) -> f32 {
        assert!(self.same_dims(other));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }
}
