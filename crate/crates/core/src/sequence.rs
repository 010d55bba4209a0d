//! Sequence containers shared by every execution path.
//!
//! All containers are laid out time-innermost: lane `(b, c)` of a
//! [`RealSequence`] is a contiguous slice of `len` samples. Complex states are
//! stored as two aligned real planes because the spike path only ever reads
//! the real part.

use crate::error::{Error, Result};

/// Uniform time discretization: `length` steps of `delta` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    delta: f64,
    length: usize,
}

impl TimeGrid {
    pub fn new(delta: f64, length: usize) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidParam {
                field: "delta",
                reason: format!("must be a positive finite number, got {delta}"),
            });
        }
        if length == 0 {
            return Err(Error::InvalidParam {
                field: "length",
                reason: "must be >= 1".into(),
            });
        }
        Ok(Self { delta, length })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.contains(&0) {
        return Err(Error::Shape(format!("all dimensions must be >= 1, got {dims:?}")));
    }
    Ok(dims.iter().product())
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what} at flat index {i}"))),
        None => Ok(()),
    }
}

/// Real-valued `(batch, channels, time)` sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RealSequence {
    batch: usize,
    channels: usize,
    len: usize,
    values: Vec<f64>,
}

impl RealSequence {
    pub fn new(batch: usize, channels: usize, len: usize, values: Vec<f64>) -> Result<Self> {
        let n = check_dims(&[batch, channels, len])?;
        if values.len() != n {
            return Err(Error::Shape(format!(
                "expected {n} values for shape ({batch}, {channels}, {len}), got {}",
                values.len()
            )));
        }
        check_finite(&values, "RealSequence")?;
        Ok(Self {
            batch,
            channels,
            len,
            values,
        })
    }

    pub fn zeros(batch: usize, channels: usize, len: usize) -> Result<Self> {
        let n = check_dims(&[batch, channels, len])?;
        Ok(Self {
            batch,
            channels,
            len,
            values: vec![0.0; n],
        })
    }

    /// Single-lane convenience constructor, shape `(1, 1, values.len())`.
    pub fn from_lane(values: Vec<f64>) -> Result<Self> {
        let len = values.len();
        Self::new(1, 1, len, values)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.channels, self.len)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lane(&self, b: usize, c: usize) -> &[f64] {
        let start = (b * self.channels + c) * self.len;
        &self.values[start..start + self.len]
    }

    /// All channels of one batch element, `channels * len` values.
    pub fn sample(&self, b: usize) -> &[f64] {
        let stride = self.channels * self.len;
        &self.values[b * stride..(b + 1) * stride]
    }

    pub(crate) fn lane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let start = (b * self.channels + c) * self.len;
        &mut self.values[start..start + self.len]
    }
}

/// Complex branch states, shape `(batch, neurons, branches, time)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexStateSequence {
    batch: usize,
    neurons: usize,
    branches: usize,
    len: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexStateSequence {
    pub fn new(
        batch: usize,
        neurons: usize,
        branches: usize,
        len: usize,
        re: Vec<f64>,
        im: Vec<f64>,
    ) -> Result<Self> {
        let n = check_dims(&[batch, neurons, branches, len])?;
        if re.len() != n || im.len() != n {
            return Err(Error::Shape(format!(
                "expected {n} values per plane, got re={} im={}",
                re.len(),
                im.len()
            )));
        }
        check_finite(&re, "ComplexStateSequence (re)")?;
        check_finite(&im, "ComplexStateSequence (im)")?;
        Ok(Self {
            batch,
            neurons,
            branches,
            len,
            re,
            im,
        })
    }

    pub fn zeros(batch: usize, neurons: usize, branches: usize, len: usize) -> Result<Self> {
        let n = check_dims(&[batch, neurons, branches, len])?;
        Ok(Self {
            batch,
            neurons,
            branches,
            len,
            re: vec![0.0; n],
            im: vec![0.0; n],
        })
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.batch, self.neurons, self.branches, self.len)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn offset(&self, b: usize, j: usize, i: usize) -> usize {
        ((b * self.neurons + j) * self.branches + i) * self.len
    }

    pub fn lane_re(&self, b: usize, j: usize, i: usize) -> &[f64] {
        let o = self.offset(b, j, i);
        &self.re[o..o + self.len]
    }

    pub fn lane_im(&self, b: usize, j: usize, i: usize) -> &[f64] {
        let o = self.offset(b, j, i);
        &self.im[o..o + self.len]
    }

    pub(crate) fn lane_mut(&mut self, b: usize, j: usize, i: usize) -> (&mut [f64], &mut [f64]) {
        let o = self.offset(b, j, i);
        let len = self.len;
        (&mut self.re[o..o + len], &mut self.im[o..o + len])
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    /// Largest `|self - other|` over all elements (complex modulus).
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot compare state sequences {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(self
            .re
            .iter()
            .zip(&self.im)
            .zip(other.re.iter().zip(&other.im))
            .map(|((a, b), (c, d))| (a - c).hypot(b - d))
            .fold(0.0, f64::max))
    }
}

/// Binary spike raster, shape `(batch, neurons, time)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTrain {
    batch: usize,
    neurons: usize,
    len: usize,
    values: Vec<u8>,
}

impl SpikeTrain {
    pub fn new(batch: usize, neurons: usize, len: usize, values: Vec<u8>) -> Result<Self> {
        let n = check_dims(&[batch, neurons, len])?;
        if values.len() != n {
            return Err(Error::Shape(format!(
                "expected {n} spikes for shape ({batch}, {neurons}, {len}), got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|&v| v > 1) {
            return Err(Error::InvalidParam {
                field: "spikes",
                reason: format!("non-binary value {} at flat index {i}", values[i]),
            });
        }
        Ok(Self {
            batch,
            neurons,
            len,
            values,
        })
    }

    /// Builds a spike train from real values, rejecting anything other than 0 or 1.
    pub fn from_reals(batch: usize, neurons: usize, len: usize, values: &[f64]) -> Result<Self> {
        let mut bits = Vec::with_capacity(values.len());
        for (i, &v) in values.iter().enumerate() {
            if v == 0.0 {
                bits.push(0);
            } else if v == 1.0 {
                bits.push(1);
            } else {
                return Err(Error::InvalidParam {
                    field: "spikes",
                    reason: format!("non-binary value {v} at flat index {i}"),
                });
            }
        }
        Self::new(batch, neurons, len, bits)
    }

    pub fn zeros(batch: usize, neurons: usize, len: usize) -> Result<Self> {
        let n = check_dims(&[batch, neurons, len])?;
        Ok(Self {
            batch,
            neurons,
            len,
            values: vec![0; n],
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.neurons, self.len)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn lane(&self, b: usize, j: usize) -> &[u8] {
        let start = (b * self.neurons + j) * self.len;
        &self.values[start..start + self.len]
    }

    pub(crate) fn lane_mut(&mut self, b: usize, j: usize) -> &mut [u8] {
        let start = (b * self.neurons + j) * self.len;
        &mut self.values[start..start + self.len]
    }

    pub fn count(&self) -> u64 {
        self.values.iter().map(|&v| v as u64).sum()
    }
}
