//! Reference solver for 2D incompressible Navier-Stokes in vorticity form:
//!
//! ```text
//! ∂_t ω + (u·∇)ω = ν_eff Δω,     u = ∇^⊥ Δ^{-1} ω,     ν_eff = c_s² ν
//! ```
//!
//! with `∇^⊥ = (-∂_2, ∂_1)`, on the unit torus. Vorticity must have zero
//! mean so the periodic inverse Laplacian exists.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{self, Fft2D, FftScratch, Grid2D, RealField2D, SpectralOps};

/// Default safety factor of [`stable_dt`].
pub const DEFAULT_SAFETY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsParams {
    nu: f64,
    sound_speed: f64,
}

impl NsParams {
    pub fn new(nu: f64, sound_speed: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::domain(format!("nu = {nu} must be positive")));
        }
        if !(sound_speed.is_finite() && sound_speed > 0.0) {
            return Err(Error::domain(format!("sound speed {sound_speed} must be positive")));
        }
        Ok(Self { nu, sound_speed })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn sound_speed(&self) -> f64 {
        self.sound_speed
    }

    /// Viscosity of the limit equations, `c_s² ν`.
    pub fn nu_eff(&self) -> f64 {
        self.sound_speed * self.sound_speed * self.nu
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NsState {
    pub time: f64,
    pub omega: RealField2D,
    pub params: NsParams,
}

impl NsState {
    /// Fails unless `omega` has zero mean (to `1e-10` of its L² norm).
    pub fn new(time: f64, omega: RealField2D, params: NsParams) -> Result<Self> {
        spectral::ensure_zero_mean(&omega)?;
        Ok(Self { time, omega, params })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    /// `½ ∫ ω² dx`.
    pub enstrophy: f64,
    /// `½ ∫ |∇ω|² dx`.
    pub palinstrophy: f64,
    /// `½ ∫ |u|² dx`.
    pub energy: f64,
    pub mean_vorticity: f64,
}

/// `u = (-∂_2, ∂_1) Δ^{-1} ω`.
pub fn velocity_from_vorticity(omega: &RealField2D) -> Result<[RealField2D; 2]> {
    spectral::ensure_zero_mean(omega)?;
    let psi = spectral::transform(omega).inv_laplacian();
    let u1 = spectral::inverse_transform(&psi.deriv(1)).map(|v| -v);
    let u2 = spectral::inverse_transform(&psi.deriv(0));
    Ok([u1, u2])
}

/// Zero-mean pressure of the incompressible flow with vorticity `omega`,
/// from `Δp = 2(∂₁u₁ ∂₂u₂ - ∂₁u₂ ∂₂u₁)`.
pub fn pressure_from_vorticity(omega: &RealField2D) -> Result<RealField2D> {
    let [u1, u2] = velocity_from_vorticity(omega)?;
    let d = |f: &RealField2D, axis| spectral::deriv(f, axis);
    let (a, b, c, e) = (d(&u1, 0)?, d(&u2, 1)?, d(&u2, 0)?, d(&u1, 1)?);
    let values = (0..omega.grid().len())
        .map(|m| 2.0 * (a.values()[m] * b.values()[m] - c.values()[m] * e.values()[m]))
        .collect();
    let source = spectral::dealias(&RealField2D::from_raw(omega.grid(), values));
    Ok(spectral::inverse_transform(
        &spectral::transform(&source).inv_laplacian(),
    ))
}

/// `-dealias(u·∇ω) + ν_eff Δω`.
pub fn rhs(state: &NsState) -> Result<RealField2D> {
    let omega = &state.omega;
    let [u1, u2] = velocity_from_vorticity(omega)?;
    let advection = advection(omega, &u1, &u2);
    let diffusion = spectral::laplacian(omega);
    let nu = state.params.nu_eff();
    advection.zip_with(&diffusion, |a, d| -a + nu * d)
}

/// Dealiased `(u·∇)ω`.
fn advection(omega: &RealField2D, u1: &RealField2D, u2: &RealField2D) -> RealField2D {
    let spec = spectral::transform(omega);
    let w1 = spectral::inverse_transform(&spec.deriv(0));
    let w2 = spectral::inverse_transform(&spec.deriv(1));
    let values = (0..omega.grid().len())
        .map(|m| u1.values()[m] * w1.values()[m] + u2.values()[m] * w2.values()[m])
        .collect();
    spectral::dealias(&RealField2D::from_raw(omega.grid(), values))
}

pub fn diagnostics(state: &NsState) -> Result<Diagnostics> {
    let omega = &state.omega;
    let dx = omega.grid().dx();
    let area = dx * dx;
    let sum_sq = |f: &RealField2D| f.values().iter().map(|v| v * v).sum::<f64>() * area;
    let w1 = spectral::deriv(omega, 0)?;
    let w2 = spectral::deriv(omega, 1)?;
    let [u1, u2] = velocity_from_vorticity(omega)?;
    Ok(Diagnostics {
        enstrophy: 0.5 * sum_sq(omega),
        palinstrophy: 0.5 * (sum_sq(&w1) + sum_sq(&w2)),
        energy: 0.5 * (sum_sq(&u1) + sum_sq(&u2)),
        mean_vorticity: spectral::mean(omega),
    })
}

/// Terms of the palinstrophy balance `dP/dt = stretching - dissipation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PalinstrophyBudget {
    /// `∫ (u·∇ω) Δω dx`.
    pub stretching: f64,
    /// `ν_eff ∫ (Δω)² dx`.
    pub dissipation: f64,
}

impl PalinstrophyBudget {
    pub fn rate(&self) -> f64 {
        self.stretching - self.dissipation
    }
}

pub fn palinstrophy_budget(state: &NsState) -> Result<PalinstrophyBudget> {
    let omega = &state.omega;
    let [u1, u2] = velocity_from_vorticity(omega)?;
    let adv = advection(omega, &u1, &u2);
    let lap = spectral::laplacian(omega);
    Ok(PalinstrophyBudget {
        stretching: spectral::inner_product(&adv, &lap)?,
        dissipation: state.params.nu_eff() * spectral::inner_product(&lap, &lap)?,
    })
}

/// `amplitude sin(2πa x_1) sin(2πb x_2) exp(-4π²(a²+b²) ν_eff t)`.
pub fn taylor_green_exact(
    amplitude: f64,
    a: i64,
    b: i64,
    params: &NsParams,
    t: f64,
    grid: Grid2D,
) -> Result<RealField2D> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("time {t} must be nonnegative")));
    }
    let decay = (-4.0 * PI * PI * ((a * a + b * b) as f64) * params.nu_eff() * t).exp();
    let (fa, fb) = (2.0 * PI * a as f64, 2.0 * PI * b as f64);
    Ok(RealField2D::from_fn(grid, |x1, x2| {
        amplitude * decay * (fa * x1).sin() * (fb * x2).sin()
    }))
}

/// `-sin(2πx_1) sin(2πx_2) + exp(-50 |x - (½, ½)|²) + C`, with `C` taken from
/// the grid quadrature of the first two terms so the discrete mean is zero.
pub fn perturbed_tg(grid: Grid2D) -> RealField2D {
    let base = RealField2D::from_fn(grid, |x1, x2| {
        let r2 = (x1 - 0.5).powi(2) + (x2 - 0.5).powi(2);
        -(2.0 * PI * x1).sin() * (2.0 * PI * x2).sin() + (-50.0 * r2).exp()
    });
    let c = -spectral::mean(&base);
    base.map(|v| v + c)
}

/// `min(S dx / max|u|, S dx² / (4π² ν_eff))`.
pub fn stable_dt(state: &NsState) -> Result<f64> {
    let grid = state.omega.grid();
    let dx = grid.dx();
    let diffusive = DEFAULT_SAFETY * dx * dx / (4.0 * PI * PI * state.params.nu_eff());
    let [u1, u2] = velocity_from_vorticity(&state.omega)?;
    let umax = u1
        .values()
        .iter()
        .zip(u2.values())
        .fold(0.0f64, |m, (a, b)| m.max((a * a + b * b).sqrt()));
    if umax > 0.0 {
        Ok(diffusive.min(DEFAULT_SAFETY * dx / umax))
    } else {
        Ok(diffusive)
    }
}

pub fn rk4_step(state: &NsState, dt: f64) -> Result<NsState> {
    let mut solver = NsSolver::new(state)?;
    solver.step(dt)?;
    Ok(solver.state())
}

/// RK4 integrator holding vorticity as Fourier coefficients.
pub struct NsSolver {
    params: NsParams,
    grid: Grid2D,
    ops: Arc<SpectralOps>,
    fft: Arc<Fft2D>,
    time: f64,
    omega: Vec<Complex64>,
    work: NsWork,
}

struct NsWork {
    fft: FftScratch,
    stage: Vec<Complex64>,
    k: Vec<Complex64>,
    acc: Vec<Complex64>,
    u1: Vec<Complex64>,
    u2: Vec<Complex64>,
    w1: Vec<Complex64>,
    w2: Vec<Complex64>,
    adv: Vec<Complex64>,
    pu1: Vec<f64>,
    pu2: Vec<f64>,
    pw1: Vec<f64>,
    pw2: Vec<f64>,
}

#[inline]
fn times_i(c: Complex64, f: f64) -> Complex64 {
    Complex64::new(-c.im * f, c.re * f)
}

impl NsSolver {
    pub fn new(state: &NsState) -> Result<Self> {
        spectral::ensure_zero_mean(&state.omega)?;
        let grid = state.omega.grid();
        let fft = Fft2D::for_grid(grid);
        let len = grid.len();
        let zc = || vec![Complex64::default(); len];
        let zf = || vec![0.0; len];
        let mut work = NsWork {
            fft: FftScratch::default(),
            stage: zc(),
            k: zc(),
            acc: zc(),
            u1: zc(),
            u2: zc(),
            w1: zc(),
            w2: zc(),
            adv: zc(),
            pu1: zf(),
            pu2: zf(),
            pw1: zf(),
            pw2: zf(),
        };
        let mut omega = zc();
        fft.forward_into(state.omega.values(), &mut omega, &mut work.fft);
        Ok(Self {
            params: state.params,
            grid,
            ops: SpectralOps::for_grid(grid),
            fft,
            time: state.time,
            omega,
            work,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn params(&self) -> &NsParams {
        &self.params
    }

    pub fn vorticity(&self) -> RealField2D {
        let mut values = vec![0.0; self.grid.len()];
        self.fft
            .inverse_into(&self.omega, &mut values, &mut FftScratch::default());
        RealField2D::from_raw(self.grid, values)
    }

    pub fn state(&self) -> NsState {
        NsState {
            time: self.time,
            omega: self.vorticity(),
            params: self.params,
        }
    }

    fn eval_rhs(&mut self, from_stage: bool) {
        let ops = &*self.ops;
        let NsWork {
            fft: scratch,
            stage,
            k,
            u1,
            u2,
            w1,
            w2,
            adv,
            pu1,
            pu2,
            pw1,
            pw2,
            ..
        } = &mut self.work;
        let omega: &[Complex64] = if from_stage { stage } else { &self.omega };
        for m in 0..omega.len() {
            let psi = omega[m] * ops.inv_laplacian[m];
            u1[m] = -times_i(psi, ops.dx2[m]);
            u2[m] = times_i(psi, ops.dx1[m]);
            w1[m] = times_i(omega[m], ops.dx1[m]);
            w2[m] = times_i(omega[m], ops.dx2[m]);
        }
        self.fft.inverse_pair_into(u1, u2, pu1, pu2, scratch);
        self.fft.inverse_pair_into(w1, w2, pw1, pw2, scratch);
        for m in 0..pu1.len() {
            pu1[m] = pu1[m] * pw1[m] + pu2[m] * pw2[m];
        }
        self.fft.forward_into(pu1, adv, scratch);
        let nu = self.params.nu_eff();
        for m in 0..k.len() {
            k[m] = -adv[m] * ops.dealias[m] + omega[m] * (nu * ops.laplacian[m]);
        }
    }

    pub fn step(&mut self, dt: f64) -> Result<()> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::domain(format!("time step {dt} must be positive")));
        }
        self.work.acc.copy_from_slice(&self.omega);
        let weights = [dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0];
        let offsets = [0.5 * dt, 0.5 * dt, dt];
        for s in 0..4 {
            self.eval_rhs(s > 0);
            let NsWork { stage, k, acc, .. } = &mut self.work;
            for m in 0..k.len() {
                acc[m] += k[m] * weights[s];
                if let Some(&o) = offsets.get(s) {
                    stage[m] = self.omega[m] + k[m] * o;
                }
            }
        }
        std::mem::swap(&mut self.omega, &mut self.work.acc);
        self.time += dt;
        if !self.omega.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::Blowup {
                time: self.time,
                context: "Navier-Stokes".into(),
            });
        }
        Ok(())
    }

    pub fn advance(&mut self, steps: usize, dt: f64) -> Result<()> {
        for _ in 0..steps {
            self.step(dt)?;
        }
        Ok(())
    }

    /// `½ Σ |ω̂_k|²`, equal to the grid enstrophy by Parseval.
    pub fn enstrophy(&self) -> f64 {
        0.5 * self.omega.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    /// `½ Σ |ω̂_k|² / (4π²|k|²)`, the kinetic energy by Parseval.
    pub fn energy(&self) -> f64 {
        -0.5 * self
            .omega
            .iter()
            .zip(&self.ops.inv_laplacian)
            .map(|(c, il)| c.norm_sqr() * il)
            .sum::<f64>()
    }

    pub fn mean_vorticity(&self) -> f64 {
        self.omega[0].re
    }

    /// Grid diagnostics evaluated by Parseval.
    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            enstrophy: self.enstrophy(),
            palinstrophy: self.palinstrophy(),
            energy: self.energy(),
            mean_vorticity: self.mean_vorticity(),
        }
    }

    /// Grid palinstrophy evaluated by Parseval.
    pub fn palinstrophy(&self) -> f64 {
        let ops = &self.ops;
        0.5 * self
            .omega
            .iter()
            .enumerate()
            .map(|(m, c)| c.norm_sqr() * (ops.dx1[m].powi(2) + ops.dx2[m].powi(2)))
            .sum::<f64>()
    }
}
