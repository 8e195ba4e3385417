use crate::error::{Error, Result};

/// Dense rank-4 array of `f64` in row-major order, batch outermost.
///
/// Index layout: `(b, c, h, w)` maps to flat offset `b*CHW + c*HW + h*W + w`.
/// Values are immutable once a tensor leaves an operation; mutation happens
/// only while an operation builds its result.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: (usize, usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor4 {
    /// Tensor of the given shape with every element set to `fill`.
    pub fn new(shape: (usize, usize, usize, usize), fill: f64) -> Result<Self> {
        let len = checked_len(shape)?;
        Ok(Self {
            shape,
            data: vec![fill; len],
        })
    }

    pub fn zeros(shape: (usize, usize, usize, usize)) -> Result<Self> {
        Self::new(shape, 0.0)
    }

    /// Wraps an existing buffer. The buffer length must match the shape.
    pub fn from_vec(shape: (usize, usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let len = checked_len(shape)?;
        if data.len() != len {
            return Err(Error::Size(format!(
                "buffer of {} elements does not fit shape {:?} ({} elements)",
                data.len(),
                shape,
                len
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn flat_index(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        let (_, ch, hh, ww) = self.shape;
        ((b * ch + c) * hh + h) * ww + w
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.flat_index(b, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.flat_index(b, c, h, w);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// View of one example `(c, h, w)` as a flat slice.
    pub fn example(&self, b: usize) -> &[f64] {
        let (_, c, h, w) = self.shape;
        let stride = c * h * w;
        &self.data[b * stride..(b + 1) * stride]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise product. Shapes must match.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn checked_len(shape: (usize, usize, usize, usize)) -> Result<usize> {
    let (n, c, h, w) = shape;
    n.checked_mul(c)
        .and_then(|x| x.checked_mul(h))
        .and_then(|x| x.checked_mul(w))
        .ok_or_else(|| Error::Size(format!("shape {:?} overflows addressable size", shape)))
}
