//! Pseudo-spectral toolbox on the unit torus `[0, 1)^2`.
//!
//! Physical fields are sampled at `x_{jk} = (j dx, k dx)` and stored row-major
//! with `j` (the `x_1` index) varying slowest. Spectra hold the normalised
//! Fourier coefficients
//!
//! ```text
//! c_k = n^{-2} Σ_x f(x) exp(-2πi k·x),     f(x) = Σ_k c_k exp(2πi k·x)
//! ```
//!
//! for integer wavenumbers `k_a ∈ [-n/2, n/2)`, in the same row-major layout
//! (FFT ordering along each axis).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub(crate) mod half;

/// Uniform `n × n` grid on the unit torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid2D {
    n: usize,
}

impl Grid2D {
    /// `n` must be even and at least 8.
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || n % 2 != 0 {
            return Err(Error::domain(format!("grid size {n} must be even and at least 8")));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Side length of the periodic domain, always 1.
    pub fn length(&self) -> f64 {
        1.0
    }

    pub fn dx(&self) -> f64 {
        self.length() / self.n as f64
    }

    /// Signed integer wavenumber stored at FFT position `index`.
    pub fn wavenumber(&self, index: usize) -> i64 {
        let n = self.n as i64;
        let i = index as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Coordinate of grid line `j`.
    pub fn coord(&self, j: usize) -> f64 {
        j as f64 * self.dx()
    }

    /// Flat index of the mode `-k` given the flat index of `k`.
    pub fn conjugate_index(&self, flat: usize) -> usize {
        let n = self.n;
        let (a, b) = (flat / n, flat % n);
        ((n - a) % n) * n + (n - b) % n
    }
}

/// Real scalar field sampled on a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct RealField2D {
    grid: Grid2D,
    values: Vec<f64>,
}

impl RealField2D {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::domain(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("field contains non-finite values"));
        }
        Ok(Self { grid, values })
    }

    /// Wraps values known to be finite and correctly sized.
    pub(crate) fn from_raw(grid: Grid2D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self::from_raw(grid, vec![0.0; grid.len()])
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self::from_raw(grid, vec![value; grid.len()])
    }

    /// Samples `f(x_1, x_2)` at every grid point.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.n();
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..n {
            let x1 = grid.coord(j);
            for k in 0..n {
                values.push(f(x1, grid.coord(k)));
            }
        }
        Self::from_raw(grid, values)
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at grid point `(j, k)`.
    pub fn at(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.grid.n + k]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        ensure_same_grid(self.grid, other.grid)?;
        Ok(Self::from_raw(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn ensure_same_grid(a: Grid2D, b: Grid2D) -> Result<()> {
    if a != b {
        return Err(Error::domain(format!(
            "grid mismatch: {}x{} vs {}x{}",
            a.n, a.n, b.n, b.n
        )));
    }
    Ok(())
}

/// Normalised Fourier coefficients of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: Grid2D,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(grid: Grid2D, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::domain(format!(
                "spectrum has {} coefficients, grid needs {}",
                coeffs.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient of the integer mode `(k1, k2)`, both in `[-n/2, n/2)`.
    pub fn mode(&self, k1: i64, k2: i64) -> Complex64 {
        let n = self.grid.n as i64;
        let a = k1.rem_euclid(n) as usize;
        let b = k2.rem_euclid(n) as usize;
        self.coeffs[a * self.grid.n + b]
    }

    /// `sqrt(Σ |c_k|^2)`, equal to the physical L² norm by Parseval.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Multiplies each coefficient by the matching entry of `factors`.
    fn scaled_by(&self, factors: &[f64]) -> Self {
        Self {
            grid: self.grid,
            coeffs: self.coeffs.iter().zip(factors).map(|(c, f)| c * f).collect(),
        }
    }

    fn mul_imag(&self, factors: &[f64]) -> Self {
        Self {
            grid: self.grid,
            coeffs: self
                .coeffs
                .iter()
                .zip(factors)
                .map(|(c, f)| Complex64::new(-c.im * f, c.re * f))
                .collect(),
        }
    }

    /// Spectral derivative along `axis` (0 for `x_1`, 1 for `x_2`).
    pub fn deriv(&self, axis: usize) -> Self {
        let ops = SpectralOps::for_grid(self.grid);
        self.mul_imag(ops.deriv_factor(axis))
    }

    pub fn laplacian(&self) -> Self {
        self.scaled_by(&SpectralOps::for_grid(self.grid).laplacian)
    }

    /// Inverse Laplacian in the zero-mean gauge; the mean mode is discarded.
    pub fn inv_laplacian(&self) -> Self {
        self.scaled_by(&SpectralOps::for_grid(self.grid).inv_laplacian)
    }

    pub fn dealias(&self) -> Self {
        self.scaled_by(&SpectralOps::for_grid(self.grid).dealias)
    }

    /// Keeps modes with physical wavenumber `|2πk| < 1/ε`.
    pub fn fourier_cutoff(&self, epsilon: f64) -> Self {
        let mask = cutoff_mask(self.grid, epsilon);
        self.scaled_by(&mask)
    }
}

/// Per-mode multipliers shared by every field on one grid.
#[derive(Debug)]
pub struct SpectralOps {
    grid: Grid2D,
    /// `2π k_1` with the Nyquist mode zeroed; the derivative multiplier is `i` times this.
    pub(crate) dx1: Vec<f64>,
    pub(crate) dx2: Vec<f64>,
    /// `-4π² |k|²`.
    pub(crate) laplacian: Vec<f64>,
    /// `1 / (-4π² |k|²)`, zero at `k = 0`.
    pub(crate) inv_laplacian: Vec<f64>,
    /// 1 where `max(|k_1|, |k_2|) <= n/3`, else 0.
    pub(crate) dealias: Vec<f64>,
}

impl SpectralOps {
    fn build(grid: Grid2D) -> Self {
        let n = grid.n();
        let nyquist = -(n as i64) / 2;
        let len = grid.len();
        let mut dx1 = Vec::with_capacity(len);
        let mut dx2 = Vec::with_capacity(len);
        let mut laplacian = Vec::with_capacity(len);
        let mut inv_laplacian = Vec::with_capacity(len);
        let mut dealias = Vec::with_capacity(len);
        let third = n as f64 / 3.0;
        for a in 0..n {
            let k1 = grid.wavenumber(a);
            for b in 0..n {
                let k2 = grid.wavenumber(b);
                let d = |k: i64| if k == nyquist { 0.0 } else { 2.0 * PI * k as f64 };
                dx1.push(d(k1));
                dx2.push(d(k2));
                let k_sq = (k1 * k1 + k2 * k2) as f64;
                let lap = -4.0 * PI * PI * k_sq;
                laplacian.push(lap);
                inv_laplacian.push(if k_sq == 0.0 { 0.0 } else { 1.0 / lap });
                let keep = (k1.unsigned_abs() as f64) <= third && (k2.unsigned_abs() as f64) <= third;
                dealias.push(if keep { 1.0 } else { 0.0 });
            }
        }
        Self {
            grid,
            dx1,
            dx2,
            laplacian,
            inv_laplacian,
            dealias,
        }
    }

    /// Shared, lazily built multipliers for `grid`.
    pub fn for_grid(grid: Grid2D) -> Arc<SpectralOps> {
        static CACHE: OnceLock<Mutex<HashMap<Grid2D, Arc<SpectralOps>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let mut map = cache.lock().expect("spectral cache poisoned");
        map.entry(grid)
            .or_insert_with(|| Arc::new(SpectralOps::build(grid)))
            .clone()
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub(crate) fn deriv_factor(&self, axis: usize) -> &[f64] {
        match axis {
            0 => &self.dx1,
            1 => &self.dx2,
            _ => panic!("axis {axis} out of range for a 2D grid"),
        }
    }
}

/// 1 where `2π|k| < 1/ε`, else 0.
pub(crate) fn cutoff_mask(grid: Grid2D, epsilon: f64) -> Vec<f64> {
    let n = grid.n();
    let limit = 1.0 / epsilon;
    let mut mask = Vec::with_capacity(grid.len());
    for a in 0..n {
        let k1 = grid.wavenumber(a) as f64;
        for b in 0..n {
            let k2 = grid.wavenumber(b) as f64;
            let xi = 2.0 * PI * (k1 * k1 + k2 * k2).sqrt();
            mask.push(if xi < limit { 1.0 } else { 0.0 });
        }
    }
    mask
}

/// Two-dimensional complex FFT of an `n × n` row-major buffer.
pub struct Fft2D {
    grid: Grid2D,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

impl std::fmt::Debug for Fft2D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2D").field("grid", &self.grid).finish()
    }
}

/// Scratch space for [`Fft2D`]; one per thread of use.
#[derive(Debug, Default)]
pub struct FftScratch {
    scratch: Vec<Complex64>,
    buf: Vec<Complex64>,
}

impl Fft2D {
    fn build(grid: Grid2D) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid.n());
        let inverse = planner.plan_fft_inverse(grid.n());
        let scratch_len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            grid,
            forward,
            inverse,
            scratch_len,
        }
    }

    /// Shared plan for `grid`. Plans are immutable and safe to use from
    /// several threads at once, each with its own [`FftScratch`].
    pub fn for_grid(grid: Grid2D) -> Arc<Fft2D> {
        static CACHE: OnceLock<Mutex<HashMap<Grid2D, Arc<Fft2D>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let mut map = cache.lock().expect("fft cache poisoned");
        map.entry(grid).or_insert_with(|| Arc::new(Fft2D::build(grid))).clone()
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    fn transform(&self, fft: &dyn Fft<f64>, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        let n = self.grid.n();
        scratch.resize(self.scratch_len, Complex64::default());
        fft.process_with_scratch(buf, scratch);
        transpose_square(buf, n);
        fft.process_with_scratch(buf, scratch);
        transpose_square(buf, n);
    }

    /// Forward transform of one real field into normalised coefficients.
    pub fn forward_into(&self, values: &[f64], out: &mut [Complex64], work: &mut FftScratch) {
        let inv_len = 1.0 / self.grid.len() as f64;
        for (o, &v) in out.iter_mut().zip(values) {
            *o = Complex64::new(v * inv_len, 0.0);
        }
        self.transform(self.forward.as_ref(), out, &mut work.scratch);
    }

    /// Forward transform of two real fields with a single complex FFT.
    pub fn forward_pair_into(
        &self,
        a: &[f64],
        b: &[f64],
        out_a: &mut [Complex64],
        out_b: &mut [Complex64],
        work: &mut FftScratch,
    ) {
        let len = self.grid.len();
        let inv_len = 1.0 / len as f64;
        let buf = &mut work.buf;
        buf.clear();
        buf.extend(a.iter().zip(b).map(|(&x, &y)| Complex64::new(x * inv_len, y * inv_len)));
        self.transform(self.forward.as_ref(), buf, &mut work.scratch);
        for idx in 0..len {
            let z = buf[idx];
            let zc = buf[self.grid.conjugate_index(idx)].conj();
            out_a[idx] = (z + zc) * 0.5;
            // (z - zc) / 2i
            let d = (z - zc) * 0.5;
            out_b[idx] = Complex64::new(d.im, -d.re);
        }
    }

    /// Inverse transform; the imaginary part is discarded.
    pub fn inverse_into(&self, coeffs: &[Complex64], out: &mut [f64], work: &mut FftScratch) {
        let buf = &mut work.buf;
        buf.clear();
        buf.extend_from_slice(coeffs);
        self.transform(self.inverse.as_ref(), buf, &mut work.scratch);
        for (o, z) in out.iter_mut().zip(buf.iter()) {
            *o = z.re;
        }
    }

    /// Inverse transform of two Hermitian spectra with a single complex FFT.
    pub fn inverse_pair_into(
        &self,
        a: &[Complex64],
        b: &[Complex64],
        out_a: &mut [f64],
        out_b: &mut [f64],
        work: &mut FftScratch,
    ) {
        let buf = &mut work.buf;
        buf.clear();
        buf.extend(a.iter().zip(b).map(|(x, y)| Complex64::new(x.re - y.im, x.im + y.re)));
        self.transform(self.inverse.as_ref(), buf, &mut work.scratch);
        for ((oa, ob), z) in out_a.iter_mut().zip(out_b.iter_mut()).zip(buf.iter()) {
            *oa = z.re;
            *ob = z.im;
        }
    }

    pub fn forward(&self, field: &RealField2D) -> Spectrum {
        let mut coeffs = vec![Complex64::default(); self.grid.len()];
        self.forward_into(field.values(), &mut coeffs, &mut FftScratch::default());
        Spectrum {
            grid: self.grid,
            coeffs,
        }
    }

    pub fn inverse(&self, spectrum: &Spectrum) -> RealField2D {
        let mut values = vec![0.0; self.grid.len()];
        self.inverse_into(spectrum.coeffs(), &mut values, &mut FftScratch::default());
        RealField2D::from_raw(self.grid, values)
    }
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Normalised Fourier coefficients of `field`.
pub fn transform(field: &RealField2D) -> Spectrum {
    Fft2D::for_grid(field.grid()).forward(field)
}

/// Real field with the given coefficients (imaginary residue dropped).
pub fn inverse_transform(spectrum: &Spectrum) -> RealField2D {
    Fft2D::for_grid(spectrum.grid()).inverse(spectrum)
}

/// Spectral derivative along `axis` (0 for `x_1`, 1 for `x_2`). The Nyquist
/// coefficient of the differentiated axis is set to zero.
pub fn deriv(field: &RealField2D, axis: usize) -> Result<RealField2D> {
    if axis > 1 {
        return Err(Error::domain(format!("axis {axis} out of range for a 2D grid")));
    }
    Ok(inverse_transform(&transform(field).deriv(axis)))
}

pub fn laplacian(field: &RealField2D) -> RealField2D {
    inverse_transform(&transform(field).laplacian())
}

/// Periodic inverse Laplacian with zero-mean output. The input must have
/// zero mean to within `1e-10` of its L² norm.
pub fn inv_laplacian(field: &RealField2D) -> Result<RealField2D> {
    ensure_zero_mean(field)?;
    Ok(inverse_transform(&transform(field).inv_laplacian()))
}

pub(crate) fn ensure_zero_mean(field: &RealField2D) -> Result<()> {
    let m = mean(field);
    let norm = l2_norm(field);
    if m.abs() > 1e-10 * norm.max(f64::MIN_POSITIVE) && m != 0.0 {
        return Err(Error::domain(format!(
            "field mean {m:e} is not zero (L2 norm {norm:e})"
        )));
    }
    Ok(())
}

/// Square 2/3-rule truncation: zeroes modes with `max(|k_1|, |k_2|) > n/3`.
pub fn dealias(field: &RealField2D) -> RealField2D {
    inverse_transform(&transform(field).dealias())
}

/// Sharp Fourier truncation keeping `|ξ| < 1/ε`, where `ξ = 2πk` is the
/// physical wavenumber.
pub fn fourier_cutoff(field: &RealField2D, epsilon: f64) -> Result<RealField2D> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::domain(format!("cutoff parameter {epsilon} must be positive")));
    }
    Ok(inverse_transform(&transform(field).fourier_cutoff(epsilon)))
}

/// Grid quadrature of `∫ f^2 dx`, square-rooted.
pub fn l2_norm(field: &RealField2D) -> f64 {
    let dx = field.grid().dx();
    (field.values().iter().map(|v| v * v).sum::<f64>() * dx * dx).sqrt()
}

/// Average value over the torus.
pub fn mean(field: &RealField2D) -> f64 {
    let g = field.grid();
    let dx = g.dx();
    field.values().iter().sum::<f64>() * dx * dx / (g.length() * g.length())
}

/// Grid quadrature of `∫ f h dx`.
pub fn inner_product(f: &RealField2D, h: &RealField2D) -> Result<f64> {
    ensure_same_grid(f.grid(), h.grid())?;
    let dx = f.grid().dx();
    Ok(f.values().iter().zip(h.values()).map(|(a, b)| a * b).sum::<f64>() * dx * dx)
}
