//! Planar (channel-major) 2-D arrays shared by images, probability maps and
//! binary label maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `channels` stacked `height × width` planes, stored channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planes<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

/// Image with values in `[0, 1]`.
pub type Image = Planes<f32>;
/// Per-pixel, per-class sigmoid probabilities.
pub type ProbMap = Planes<f32>;
/// Per-class binary maps with values in `{0, 1}`.
pub type LabelMap = Planes<u8>;
/// Single-plane binary map.
pub type Mask = Planes<u8>;

impl<T: Copy + Default> Planes<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, T::default())
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        Planes {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }
}

impl<T> Planes<T> {
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(
                format!("{channels}x{height}x{width}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Planes {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[T] {
        let a = self.area();
        &self.data[c * a..(c + 1) * a]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let a = self.area();
        &mut self.data[c * a..(c + 1) * a]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn same_spatial<U>(&self, other: &Planes<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn ensure_dims<U>(&self, other: &Planes<U>) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                format!("{:?}", self.dims()),
                format!("{:?}", other.dims()),
            ));
        }
        Ok(())
    }
}

impl<T: Copy> Planes<T> {
    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Copy of a single channel as its own one-plane array.
    pub fn channel(&self, c: usize) -> Planes<T> {
        Planes {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.plane(c).to_vec(),
        }
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U) -> Planes<U> {
        Planes {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Planes<u8> {
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }
}

impl Planes<f32> {
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}
