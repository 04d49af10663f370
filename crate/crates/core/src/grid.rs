//! Complex-matrix container and the transform/shift/product kernels the
//! rest of the chain builds on.
//!
//! Convention: rows index delay taps / subcarriers (M), columns index
//! Doppler taps / OFDM symbols (N). All DFTs are unitary (1/sqrt(len) in
//! both directions) so round trips and power accounting are exact.

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisDomain {
    DelayDoppler,
    TimeFrequency,
    TimeDelay,
}

impl AxisDomain {
    fn name(self) -> &'static str {
        match self {
            AxisDomain::DelayDoppler => "DelayDoppler",
            AxisDomain::TimeFrequency => "TimeFrequency",
            AxisDomain::TimeDelay => "TimeDelay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// M x N complex grid with a labeled axis domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid<T> {
    rows: usize,
    cols: usize,
    domain: AxisDomain,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> ComplexGrid<T> {
    pub fn zeros(rows: usize, cols: usize, domain: AxisDomain) -> Self {
        assert!(rows >= 1 && cols >= 1, "grid must be at least 1x1");
        Self { rows, cols, domain, data: vec![Complex::new(T::zero(), T::zero()); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, domain: AxisDomain, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut g = Self::zeros(rows, cols, domain);
        for l in 0..rows {
            for k in 0..cols {
                g.data[l * cols + k] = f(l, k);
            }
        }
        g
    }

    pub fn from_data(rows: usize, cols: usize, domain: AxisDomain, data: Vec<Complex<T>>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows x cols");
        Self { rows, cols, domain, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn domain(&self) -> AxisDomain {
        self.domain
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, l: usize, k: usize) -> Complex<T> {
        self.data[l * self.cols + k]
    }

    #[inline]
    pub fn set(&mut self, l: usize, k: usize, v: Complex<T>) {
        self.data[l * self.cols + k] = v;
    }

    fn check_dims(&self, other: &Self) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(self.rows, self.cols, other.rows, other.cols));
        }
        Ok(())
    }

    fn require_domain(&self, expected: AxisDomain) -> Result<()> {
        if self.domain != expected {
            return Err(Error::DomainMismatch { expected: expected.name(), got: self.domain.name() });
        }
        Ok(())
    }

    /// Unitary DFT along each column (length `rows`).
    ///
    /// Domain bookkeeping: Forward maps TimeDelay -> TimeFrequency, Inverse
    /// maps TimeFrequency -> TimeDelay; other domains are left unchanged
    /// (raw kernel use by isfft/sfft).
    pub fn dft_cols(&self, direction: Direction) -> Self {
        let mut out = self.clone();
        out.dft_cols_in_place(direction);
        out.domain = match (self.domain, direction) {
            (AxisDomain::TimeDelay, Direction::Forward) => AxisDomain::TimeFrequency,
            (AxisDomain::TimeFrequency, Direction::Inverse) => AxisDomain::TimeDelay,
            (d, _) => d,
        };
        out
    }

    fn dft_cols_in_place(&mut self, direction: Direction) {
        let mut planner = FftPlanner::<T>::new();
        let fft = match direction {
            Direction::Forward => planner.plan_fft_forward(self.rows),
            Direction::Inverse => planner.plan_fft_inverse(self.rows),
        };
        let scale = T::cast(1.0 / (self.rows as f64).sqrt());
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.rows];
        for k in 0..self.cols {
            for l in 0..self.rows {
                scratch[l] = self.data[l * self.cols + k];
            }
            fft.process(&mut scratch);
            for l in 0..self.rows {
                self.data[l * self.cols + k] = scratch[l] * scale;
            }
        }
    }

    fn dft_rows_in_place(&mut self, direction: Direction) {
        let mut planner = FftPlanner::<T>::new();
        let fft = match direction {
            Direction::Forward => planner.plan_fft_forward(self.cols),
            Direction::Inverse => planner.plan_fft_inverse(self.cols),
        };
        let scale = T::cast(1.0 / (self.cols as f64).sqrt());
        for l in 0..self.rows {
            let row = &mut self.data[l * self.cols..(l + 1) * self.cols];
            fft.process(row);
            for v in row.iter_mut() {
                *v = *v * scale;
            }
        }
    }

    /// ISFFT: DD -> TF, i.e. forward DFT along delay and inverse DFT along
    /// Doppler, both unitary.
    pub fn isfft(&self) -> Result<Self> {
        self.require_domain(AxisDomain::DelayDoppler)?;
        let mut out = self.clone();
        out.dft_cols_in_place(Direction::Forward);
        out.dft_rows_in_place(Direction::Inverse);
        out.domain = AxisDomain::TimeFrequency;
        Ok(out)
    }

    /// SFFT: TF -> DD, the exact inverse of [`ComplexGrid::isfft`].
    pub fn sfft(&self) -> Result<Self> {
        self.require_domain(AxisDomain::TimeFrequency)?;
        let mut out = self.clone();
        out.dft_cols_in_place(Direction::Inverse);
        out.dft_rows_in_place(Direction::Forward);
        out.domain = AxisDomain::DelayDoppler;
        Ok(out)
    }

    /// Cyclic shift by `dl` rows and `dk` columns:
    /// out(l,k) = in((l-dl) mod M, (k-dk) mod N).
    pub fn cyclic_shift(&self, dl: i64, dk: i64) -> Self {
        let m = self.rows as i64;
        let n = self.cols as i64;
        Self::from_fn(self.rows, self.cols, self.domain, |l, k| {
            let src_l = (l as i64 - dl).rem_euclid(m) as usize;
            let src_k = (k as i64 - dk).rem_euclid(n) as usize;
            self.at(src_l, src_k)
        })
    }

    /// Inner product sum conj(a) * b over all elements.
    pub fn inner_product(&self, other: &Self) -> Result<Complex<T>> {
        self.check_dims(other)?;
        let mut acc = Complex::new(T::zero(), T::zero());
        for (a, b) in self.data.iter().zip(&other.data) {
            acc = acc + a.conj() * b;
        }
        Ok(acc)
    }

    /// Pointwise product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.check_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, domain: self.domain, data })
    }

    /// Pointwise quotient with a magnitude floor guarding singularities.
    ///
    /// With floor = 0 the result is the exact quotient a / b; a zero
    /// denominator with floor > 0 divides by the floor alone.
    pub fn hadamard_div(&self, other: &Self, floor: T) -> Result<Self> {
        self.check_dims(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let mag = b.norm();
                if mag > T::zero() {
                    a * b.conj() / (mag * (mag + floor))
                } else if floor > T::zero() {
                    a / floor
                } else {
                    Complex::new(T::zero(), T::zero())
                }
            })
            .collect();
        Ok(Self { rows: self.rows, cols: self.cols, domain: self.domain, data })
    }

    pub fn conj(&self) -> Self {
        let data = self.data.iter().map(|v| v.conj()).collect();
        Self { rows: self.rows, cols: self.cols, domain: self.domain, data }
    }

    pub fn scale(&self, s: Complex<T>) -> Self {
        let data = self.data.iter().map(|v| v * s).collect();
        Self { rows: self.rows, cols: self.cols, domain: self.domain, data }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, domain: self.domain, data })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, domain: self.domain, data })
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|v| v.norm_sqr()).fold(T::zero(), |a, b| a + b).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().map(|v| v.norm()).fold(T::zero(), |a, b| if b > a { b } else { a })
    }
}
