//! Hermitian half-spectrum used by the time integrators.
//!
//! A real field's coefficients satisfy `c_{-k} = conj(c_k)`, so only the
//! modes with `k_2 ∈ [0, n/2]` are stored. The layout is column-major in
//! `k_2`: the coefficient of `(k_1, k_2)` lives at `k_2 * n + idx(k_1)` with
//! `idx` the FFT ordering along `x_1`. Normalisation matches
//! [`Spectrum`](super::Spectrum).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use super::Grid2D;

/// Real-to-half-spectrum 2D transform pair.
pub struct RealFft2D {
    grid: Grid2D,
    half: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

/// Per-thread buffers for [`RealFft2D`].
#[derive(Default)]
pub struct HalfScratch {
    row_in: Vec<f64>,
    row_out: Vec<Complex64>,
    rows: Vec<Complex64>,
    cols: Vec<Complex64>,
    fft: Vec<Complex64>,
}

impl RealFft2D {
    fn build(grid: Grid2D) -> Self {
        let n = grid.n();
        let mut real = RealFftPlanner::<f64>::new();
        let mut complex = FftPlanner::<f64>::new();
        Self {
            grid,
            half: n / 2 + 1,
            r2c: real.plan_fft_forward(n),
            c2r: real.plan_fft_inverse(n),
            col_fwd: complex.plan_fft_forward(n),
            col_inv: complex.plan_fft_inverse(n),
        }
    }

    pub fn for_grid(grid: Grid2D) -> Arc<RealFft2D> {
        static CACHE: OnceLock<Mutex<HashMap<Grid2D, Arc<RealFft2D>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let mut map = cache.lock().expect("real fft cache poisoned");
        map.entry(grid)
            .or_insert_with(|| Arc::new(RealFft2D::build(grid)))
            .clone()
    }

    /// Number of stored coefficients, `n (n/2 + 1)`.
    pub fn len(&self) -> usize {
        self.grid.n() * self.half
    }

    fn prepare(&self, work: &mut HalfScratch) {
        let n = self.grid.n();
        let len = self.len();
        work.row_in.resize(n, 0.0);
        work.row_out.resize(self.half, Complex64::default());
        work.rows.resize(len, Complex64::default());
        work.cols.resize(len, Complex64::default());
        let scratch = [
            self.r2c.get_scratch_len(),
            self.c2r.get_scratch_len(),
            self.col_fwd.get_inplace_scratch_len(),
            self.col_inv.get_inplace_scratch_len(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);
        work.fft.resize(scratch, Complex64::default());
    }

    pub fn forward(&self, values: &[f64], out: &mut [Complex64], work: &mut HalfScratch) {
        let n = self.grid.n();
        let h = self.half;
        self.prepare(work);
        let scale = 1.0 / (n * n) as f64;
        for j in 0..n {
            work.row_in.copy_from_slice(&values[j * n..(j + 1) * n]);
            self.r2c
                .process_with_scratch(&mut work.row_in, &mut work.row_out, &mut work.fft)
                .expect("buffer sizes are fixed by the plan");
            for c in 0..h {
                out[c * n + j] = work.row_out[c] * scale;
            }
        }
        self.col_fwd.process_with_scratch(out, &mut work.fft);
    }

    pub fn inverse(&self, coeffs: &[Complex64], out: &mut [f64], work: &mut HalfScratch) {
        let n = self.grid.n();
        let h = self.half;
        self.prepare(work);
        work.cols.copy_from_slice(coeffs);
        self.col_inv.process_with_scratch(&mut work.cols, &mut work.fft);
        for j in 0..n {
            for c in 0..h {
                work.row_out[c] = work.cols[c * n + j];
            }
            work.row_out[0].im = 0.0;
            work.row_out[h - 1].im = 0.0;
            self.c2r
                .process_with_scratch(&mut work.row_out, &mut out[j * n..(j + 1) * n], &mut work.fft)
                .expect("imaginary parts of the edge bins were cleared");
        }
    }
}

/// Per-mode multipliers in the half layout.
#[derive(Debug)]
pub struct HalfOps {
    /// `2π k_1`, zero on the Nyquist row.
    pub dx1: Vec<f64>,
    /// `2π k_2`, zero on the Nyquist column.
    pub dx2: Vec<f64>,
    pub laplacian: Vec<f64>,
    pub inv_laplacian: Vec<f64>,
    pub dealias: Vec<f64>,
    /// Multiplicity of each stored mode in the full spectrum (1 or 2).
    pub parseval: Vec<f64>,
}

impl HalfOps {
    fn build(grid: Grid2D) -> Self {
        let n = grid.n();
        let h = n / 2 + 1;
        let nyq = n as i64 / 2;
        let third = n as f64 / 3.0;
        let len = n * h;
        let mut ops = Self {
            dx1: Vec::with_capacity(len),
            dx2: Vec::with_capacity(len),
            laplacian: Vec::with_capacity(len),
            inv_laplacian: Vec::with_capacity(len),
            dealias: Vec::with_capacity(len),
            parseval: Vec::with_capacity(len),
        };
        for c in 0..h {
            let k2 = c as i64;
            for r in 0..n {
                let k1 = grid.wavenumber(r);
                ops.dx1.push(if k1 == -nyq { 0.0 } else { 2.0 * PI * k1 as f64 });
                ops.dx2.push(if k2 == nyq { 0.0 } else { 2.0 * PI * k2 as f64 });
                let k_sq = (k1 * k1 + k2 * k2) as f64;
                let lap = -4.0 * PI * PI * k_sq;
                ops.laplacian.push(lap);
                ops.inv_laplacian.push(if k_sq == 0.0 { 0.0 } else { 1.0 / lap });
                let keep = (k1.unsigned_abs() as f64) <= third && (k2 as f64) <= third;
                ops.dealias.push(if keep { 1.0 } else { 0.0 });
                ops.parseval.push(if c == 0 || c == h - 1 { 1.0 } else { 2.0 });
            }
        }
        ops
    }

    pub fn for_grid(grid: Grid2D) -> Arc<HalfOps> {
        static CACHE: OnceLock<Mutex<HashMap<Grid2D, Arc<HalfOps>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let mut map = cache.lock().expect("half ops cache poisoned");
        map.entry(grid)
            .or_insert_with(|| Arc::new(HalfOps::build(grid)))
            .clone()
    }

    /// `Σ |c_k|²` over the full spectrum.
    pub fn norm_sq(&self, coeffs: &[Complex64]) -> f64 {
        coeffs.iter().zip(&self.parseval).map(|(c, w)| w * c.norm_sqr()).sum()
    }
}

/// `1` where `2π|k| < 1/ε`, in the half layout.
pub fn cutoff_mask(grid: Grid2D, epsilon: f64) -> Vec<f64> {
    let n = grid.n();
    let limit = 1.0 / epsilon;
    let mut mask = Vec::with_capacity(n * (n / 2 + 1));
    for c in 0..=n / 2 {
        let k2 = c as f64;
        for r in 0..n {
            let k1 = grid.wavenumber(r) as f64;
            let xi = 2.0 * PI * (k1 * k1 + k2 * k2).sqrt();
            mask.push(if xi < limit { 1.0 } else { 0.0 });
        }
    }
    mask
}

#[inline]
pub(crate) fn times_i(c: Complex64, f: f64) -> Complex64 {
    Complex64::new(-c.im * f, c.re * f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{transform, RealField2D};

    #[test]
    fn matches_full_spectrum_and_round_trips() {
        let g = Grid2D::new(16).unwrap();
        let f = RealField2D::from_fn(g, |x, y| {
            (2.0 * PI * x).sin() + 0.3 * (2.0 * PI * (3.0 * x - 5.0 * y)).cos() + 0.2 * (16.0 * PI * y).cos() + 0.7
        });
        let fft = RealFft2D::for_grid(g);
        let mut work = HalfScratch::default();
        let mut half = vec![Complex64::default(); fft.len()];
        fft.forward(f.values(), &mut half, &mut work);
        let full = transform(&f);
        let n = g.n();
        for c in 0..=n / 2 {
            for r in 0..n {
                let k1 = g.wavenumber(r);
                let expect = full.mode(k1, c as i64);
                assert!((half[c * n + r] - expect).norm() < 1e-15);
            }
        }
        let ops = HalfOps::for_grid(g);
        assert!((ops.norm_sq(&half).sqrt() - full.l2_norm()).abs() < 1e-14);
        let mut back = vec![0.0; g.len()];
        fft.inverse(&half, &mut back, &mut work);
        for (a, b) in back.iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
