use crate::error::{invalid, Result};
use crate::linalg::{Matrix, Real};

/// Channel-major `C x H x W` feature map.
#[derive(Clone, PartialEq)]
pub struct FeatureMap<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> std::fmt::Debug for FeatureMap<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "FeatureMap {}x{}x{}",
            self.channels, self.height, self.width
        )
    }
}

impl<T: Real> FeatureMap<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels * height * width != data.len() {
            return Err(invalid(format!(
                "{channels}x{height}x{width} feature map needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(c, i, j));
                }
            }
        }
        FeatureMap {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> T {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Channel `c` as an `H x W` matrix.
    pub fn channel_matrix(&self, c: usize) -> Matrix<T> {
        Matrix::from_vec(self.height, self.width, self.channel(c).to_vec())
            .expect("channel shape")
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &FeatureMap<T>) -> T {
        assert_eq!(self.dims(), other.dims(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn cast<U: Real>(&self) -> FeatureMap<U> {
        FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// `a * self + b * other`, elementwise.
    pub fn combine(&self, a: T, other: &FeatureMap<T>, b: T) -> FeatureMap<T> {
        assert_eq!(self.dims(), other.dims(), "combine shape mismatch");
        FeatureMap {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
            ..*self
        }
    }
}
