use crate::error::{Error, Result};

/// Dense H×W×C tensor of f64, row-major by (row, column, channel).
///
/// This is both the optimization variable of maximal-image synthesis and the
/// container for every intermediate activation map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl Tensor3 {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::config(format!(
                "tensor dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::config(format!(
                "tensor value count {} does not match {height}x{width}x{channels}",
                values.len()
            )));
        }
        let t = Tensor3 {
            height,
            width,
            channels,
            values,
        };
        t.check_finite()?;
        Ok(t)
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Tensor3 {
            height,
            width,
            channels,
            values: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, v: f64) -> Self {
        Tensor3 {
            height,
            width,
            channels,
            values: vec![v; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.values[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        self.values[(row * self.width + col) * self.channels + ch] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::numeric(format!(
                "non-finite value {} at flat index {i} of {}x{}x{} tensor",
                self.values[i], self.height, self.width, self.channels
            ))),
        }
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.shape() == other.shape()
    }

    /// Elementwise in-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor3) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::config(format!(
                "shape mismatch in add: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    pub fn clamp(&mut self, lo: f64, hi: f64) {
        for v in &mut self.values {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn dot(&self, other: &Tensor3) -> f64 {
        debug_assert!(self.same_shape(other));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}
