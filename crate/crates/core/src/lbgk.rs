//! Continuous lattice-BGK system on the 2D torus.
//!
//! Each distribution `g_i` (one per lattice velocity `v_i`) obeys
//!
//! ```text
//! ∂_t g_i = -(1/ε) v_i·∇g_i + (1/(ε²ν)) (g_i^eq - g_i)
//! g_i^eq  = ρ + v_i·u / c_s² + ε/(2c_s⁴) Σ_ab u_a u_b (v_ia v_ib - c_s² δ_ab)
//! ρ = Σ_i w_i g_i,   u = Σ_i w_i v_i g_i
//! ```
//!
//! Space is discretised pseudo-spectrally: gradients are exact in Fourier
//! space and the quadratic products `u_a u_b` are formed on the grid and
//! truncated with the 2/3 rule. Time integration is classical RK4.
//!
//! The physical-space functions ([`equilibrium`], [`rhs`], [`macroscopic`])
//! operate directly on [`LbgkState`]. Long runs should use [`LbgkSolver`],
//! which keeps the distributions in spectral form between steps.

use num_complex::Complex64;
use rayon::prelude::*;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::{validate_isotropy, Lattice};
use crate::spectral::half::{self, times_i, HalfOps, HalfScratch, RealFft2D};
use crate::spectral::{self, ensure_same_grid, Grid2D, RealField2D};

/// Real-axis extent of the RK4 stability region.
pub const RK4_REAL_STABILITY: f64 = 2.78;

/// Default safety factor applied to both time-step bounds.
pub const DEFAULT_SAFETY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct LbgkParams {
    epsilon: f64,
    nu: f64,
    lattice: Lattice,
    nonlinear: bool,
    cutoff_each_step: bool,
}

impl LbgkParams {
    /// `epsilon` in `(0, 1)`, `nu > 0`, and a 2D lattice isotropic to `1e-10`.
    pub fn new(epsilon: f64, nu: f64, lattice: Lattice) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::domain(format!("epsilon = {epsilon} must lie in (0, 1)")));
        }
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::domain(format!("nu = {nu} must be positive")));
        }
        if lattice.dim() != 2 {
            return Err(Error::domain(format!(
                "the solver needs a 2D lattice, got dimension {}",
                lattice.dim()
            )));
        }
        let report = validate_isotropy(&lattice, 1e-10)?;
        if !report.satisfied {
            return Err(Error::domain(format!(
                "lattice is not isotropic (max residual {:e})",
                report.max_residual
            )));
        }
        Ok(Self {
            epsilon,
            nu,
            lattice,
            nonlinear: true,
            cutoff_each_step: false,
        })
    }

    /// Drops the `O(ε u²)` term of the equilibrium (linear regime).
    pub fn with_nonlinear(mut self, on: bool) -> Self {
        self.nonlinear = on;
        self
    }

    /// Applies the sharp cutoff `|2πk| < 1/ε` to every distribution after
    /// each time step.
    pub fn with_cutoff_each_step(mut self, on: bool) -> Self {
        self.cutoff_each_step = on;
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn nonlinear(&self) -> bool {
        self.nonlinear
    }

    pub fn cutoff_each_step(&self) -> bool {
        self.cutoff_each_step
    }

    /// Collision rate `1/(ε²ν)`.
    pub fn collision_rate(&self) -> f64 {
        1.0 / (self.epsilon * self.epsilon * self.nu)
    }
}

/// Largest explicit RK4 step: `min(S 2.78 ε²ν, S ε dx / |v|_max)`.
pub fn stable_dt(params: &LbgkParams, grid: Grid2D) -> f64 {
    stable_dt_with(params, grid, DEFAULT_SAFETY, DEFAULT_SAFETY)
}

pub fn stable_dt_with(params: &LbgkParams, grid: Grid2D, collision_safety: f64, advection_safety: f64) -> f64 {
    let collision = collision_safety * RK4_REAL_STABILITY / params.collision_rate();
    let advection = advection_safety * params.epsilon * grid.dx() / params.lattice.max_speed();
    collision.min(advection)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbgkState {
    pub time: f64,
    /// One field per lattice velocity, all on the same grid.
    pub g: Vec<RealField2D>,
    pub params: LbgkParams,
}

impl LbgkState {
    pub fn new(time: f64, g: Vec<RealField2D>, params: LbgkParams) -> Result<Self> {
        if g.len() != params.lattice.len() {
            return Err(Error::domain(format!(
                "{} distributions for a {}-velocity lattice",
                g.len(),
                params.lattice.len()
            )));
        }
        let grid = g[0].grid();
        for f in &g[1..] {
            ensure_same_grid(grid, f.grid())?;
        }
        Ok(Self { time, g, params })
    }

    pub fn grid(&self) -> Grid2D {
        self.g[0].grid()
    }

    /// `Σ_i w_i ||g_i||²_{L²}`.
    pub fn weighted_norm_sq(&self) -> f64 {
        self.params
            .lattice
            .weights()
            .iter()
            .zip(&self.g)
            .map(|(w, f)| w * spectral::l2_norm(f).powi(2))
            .sum()
    }
}

/// Density and velocity moments of a state.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroFields {
    pub rho: RealField2D,
    pub u: [RealField2D; 2],
}

pub fn macroscopic(state: &LbgkState) -> MacroFields {
    let grid = state.grid();
    let lattice = &state.params.lattice;
    let mut rho = vec![0.0; grid.len()];
    let mut u1 = vec![0.0; grid.len()];
    let mut u2 = vec![0.0; grid.len()];
    for ((w, v), g) in lattice.weights().iter().zip(lattice.velocities()).zip(&state.g) {
        let (a1, a2) = (w * v[0], w * v[1]);
        for (m, &gi) in g.values().iter().enumerate() {
            rho[m] += w * gi;
            u1[m] += a1 * gi;
            u2[m] += a2 * gi;
        }
    }
    MacroFields {
        rho: RealField2D::from_raw(grid, rho),
        u: [RealField2D::from_raw(grid, u1), RealField2D::from_raw(grid, u2)],
    }
}

/// Local equilibria for the current moments. Quadratic velocity products
/// are dealiased before use.
pub fn equilibrium(state: &LbgkState) -> Vec<RealField2D> {
    let grid = state.grid();
    let params = &state.params;
    let cs2 = params.lattice.sound_speed().powi(2);
    let MacroFields { rho, u } = macroscopic(state);
    let products = if params.nonlinear {
        let p = |a: &RealField2D, b: &RealField2D| spectral::dealias(&a.zip_with(b, |x, y| x * y).expect("same grid"));
        Some([p(&u[0], &u[0]), p(&u[0], &u[1]), p(&u[1], &u[1])])
    } else {
        None
    };
    let quad = params.epsilon / (2.0 * cs2 * cs2);
    params
        .lattice
        .velocities()
        .iter()
        .map(|v| {
            let values = (0..grid.len())
                .map(|m| {
                    let mut eq = rho.values()[m] + (v[0] * u[0].values()[m] + v[1] * u[1].values()[m]) / cs2;
                    if let Some([p11, p12, p22]) = &products {
                        eq += quad
                            * ((v[0] * v[0] - cs2) * p11.values()[m]
                                + 2.0 * v[0] * v[1] * p12.values()[m]
                                + (v[1] * v[1] - cs2) * p22.values()[m]);
                    }
                    eq
                })
                .collect();
            RealField2D::from_raw(grid, values)
        })
        .collect()
}

/// Time derivative of every distribution.
pub fn rhs(state: &LbgkState) -> Vec<RealField2D> {
    let params = &state.params;
    let rate = params.collision_rate();
    let inv_eps = 1.0 / params.epsilon;
    let eq = equilibrium(state);
    params
        .lattice
        .velocities()
        .iter()
        .zip(&state.g)
        .zip(eq)
        .map(|((v, g), geq)| {
            let spec = spectral::transform(g);
            let mut transport = vec![0.0; g.grid().len()];
            for (axis, &va) in v.iter().enumerate() {
                if va != 0.0 {
                    let d = spectral::inverse_transform(&spec.deriv(axis));
                    for (t, dv) in transport.iter_mut().zip(d.values()) {
                        *t += va * dv;
                    }
                }
            }
            let values = (0..g.grid().len())
                .map(|m| -inv_eps * transport[m] + rate * (geq.values()[m] - g.values()[m]))
                .collect();
            RealField2D::from_raw(g.grid(), values)
        })
        .collect()
}

/// `g_i = ρ_0 + v_i·u_0 / c_s²`, with time set to zero.
pub fn init_from_macroscopic(rho0: &RealField2D, u0: [&RealField2D; 2], params: LbgkParams) -> Result<LbgkState> {
    let grid = rho0.grid();
    ensure_same_grid(grid, u0[0].grid())?;
    ensure_same_grid(grid, u0[1].grid())?;
    let cs2 = params.lattice.sound_speed().powi(2);
    let g = params
        .lattice
        .velocities()
        .iter()
        .map(|v| {
            let values = (0..grid.len())
                .map(|m| rho0.values()[m] + (v[0] * u0[0].values()[m] + v[1] * u0[1].values()[m]) / cs2)
                .collect();
            RealField2D::from_raw(grid, values)
        })
        .collect();
    LbgkState::new(0.0, g, params)
}

/// Macroscopic vorticity `∂_1 u_2 - ∂_2 u_1`.
pub fn vorticity_of(state: &LbgkState) -> RealField2D {
    let MacroFields { u, .. } = macroscopic(state);
    curl(&u[0], &u[1])
}

pub(crate) fn curl(u1: &RealField2D, u2: &RealField2D) -> RealField2D {
    let s1 = spectral::transform(u1).deriv(1);
    let s2 = spectral::transform(u2).deriv(0);
    let mut diff = s2;
    for (d, a) in diff.coeffs_mut().iter_mut().zip(s1.coeffs()) {
        *d -= a;
    }
    spectral::inverse_transform(&diff)
}

/// One classical RK4 step.
pub fn rk4_step(state: &LbgkState, dt: f64) -> Result<LbgkState> {
    let mut solver = LbgkSolver::new(state)?;
    solver.step(dt)?;
    Ok(solver.state())
}

/// Diagnostics row for `lbgk_series.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbgkSeriesRecord {
    pub time: f64,
    /// `∫ ρ dx`.
    pub mass: f64,
    pub l2_rho: f64,
    /// `(||u_1||² + ||u_2||²)^{1/2}`.
    pub l2_u: f64,
    /// `Σ_i w_i ||g_i||²`.
    pub weighted_g_norm: f64,
}

fn accumulate_moments(
    lattice: &Lattice,
    g: &[Vec<Complex64>],
    rho: &mut [Complex64],
    u1: &mut [Complex64],
    u2: &mut [Complex64],
) {
    rho.fill(Complex64::default());
    u1.fill(Complex64::default());
    u2.fill(Complex64::default());
    for ((w, v), gi) in lattice.weights().iter().zip(lattice.velocities()).zip(g) {
        let (a1, a2) = (w * v[0], w * v[1]);
        for m in 0..gi.len() {
            let c = gi[m];
            rho[m] += c * *w;
            u1[m] += c * a1;
            u2[m] += c * a2;
        }
    }
}

/// RK4 integrator holding the distributions as Fourier coefficients.
///
/// Transport and collision are diagonal in spectral space; only the
/// quadratic equilibrium term visits the grid, costing two inverse and
/// three forward real FFTs per stage regardless of the number of
/// velocities. Coefficients are stored as Hermitian half spectra and the
/// RK4 stage updates are fused into the right-hand-side pass.
pub struct LbgkSolver {
    params: LbgkParams,
    grid: Grid2D,
    ops: Arc<HalfOps>,
    fft: Arc<RealFft2D>,
    time: f64,
    g: Vec<Vec<Complex64>>,
    /// Per velocity: `-(1/ε) 2π (v·k)`; the transport term is `i` times this times `ĝ`.
    transport: Vec<Vec<f64>>,
    cutoff: Option<Vec<f64>>,
    work: Work,
}

/// Spectra of the macroscopic moments of one RK4 stage.
struct Moments {
    rho: Vec<Complex64>,
    u1: Vec<Complex64>,
    u2: Vec<Complex64>,
    p11: Vec<Complex64>,
    p12: Vec<Complex64>,
    p22: Vec<Complex64>,
}

struct Work {
    fft: HalfScratch,
    stage_a: Vec<Vec<Complex64>>,
    stage_b: Vec<Vec<Complex64>>,
    acc: Vec<Vec<Complex64>>,
    mom: Moments,
    phys: [Vec<f64>; 5],
}

impl Work {
    fn new(q: usize, len: usize, grid_len: usize) -> Self {
        let zc = || vec![Complex64::default(); len];
        let zf = || vec![0.0; grid_len];
        Self {
            fft: HalfScratch::default(),
            stage_a: (0..q).map(|_| zc()).collect(),
            stage_b: (0..q).map(|_| zc()).collect(),
            acc: (0..q).map(|_| zc()).collect(),
            mom: Moments {
                rho: zc(),
                u1: zc(),
                u2: zc(),
                p11: zc(),
                p12: zc(),
                p22: zc(),
            },
            phys: [zf(), zf(), zf(), zf(), zf()],
        }
    }
}

/// Velocity-dependent coefficients of the equilibrium and collision terms.
#[derive(Clone, Copy)]
struct Kernel {
    c1: f64,
    c2: f64,
    q11: f64,
    q12: f64,
    q22: f64,
    rate: f64,
    nonlinear: bool,
}

impl Kernel {
    fn new(params: &LbgkParams, v: &[f64]) -> Self {
        let cs2 = params.lattice.sound_speed().powi(2);
        let quad = params.epsilon / (2.0 * cs2 * cs2);
        Self {
            c1: v[0] / cs2,
            c2: v[1] / cs2,
            q11: quad * (v[0] * v[0] - cs2),
            q12: quad * 2.0 * v[0] * v[1],
            q22: quad * (v[1] * v[1] - cs2),
            rate: params.collision_rate(),
            nonlinear: params.nonlinear,
        }
    }

    #[inline(always)]
    fn rhs(&self, mom: &Moments, m: usize, c: Complex64, transport: f64) -> Complex64 {
        let mut eq = mom.rho[m] + mom.u1[m] * self.c1 + mom.u2[m] * self.c2;
        if self.nonlinear {
            eq += mom.p11[m] * self.q11 + mom.p12[m] * self.q12 + mom.p22[m] * self.q22;
        }
        times_i(c, transport) + (eq - c) * self.rate
    }
}

fn compute_moments(
    params: &LbgkParams,
    ops: &HalfOps,
    fft: &RealFft2D,
    g: &[Vec<Complex64>],
    mom: &mut Moments,
    phys: &mut [Vec<f64>; 5],
    scratch: &mut HalfScratch,
) {
    accumulate_moments(&params.lattice, g, &mut mom.rho, &mut mom.u1, &mut mom.u2);
    if !params.nonlinear {
        return;
    }
    let [a, b, c, d, e] = phys;
    fft.inverse(&mom.u1, a, scratch);
    fft.inverse(&mom.u2, b, scratch);
    for m in 0..a.len() {
        let (x, y) = (a[m], b[m]);
        c[m] = x * x;
        d[m] = y * y;
        e[m] = x * y;
    }
    fft.forward(c, &mut mom.p11, scratch);
    fft.forward(d, &mut mom.p22, scratch);
    fft.forward(e, &mut mom.p12, scratch);
    for (m, &keep) in ops.dealias.iter().enumerate() {
        mom.p11[m] *= keep;
        mom.p12[m] *= keep;
        mom.p22[m] *= keep;
    }
}

impl LbgkSolver {
    pub fn new(state: &LbgkState) -> Result<Self> {
        let grid = state.grid();
        let params = state.params.clone();
        let ops = HalfOps::for_grid(grid);
        let fft = RealFft2D::for_grid(grid);
        let q = params.lattice.len();
        let len = fft.len();
        let mut work = Work::new(q, len, grid.len());
        let mut g = Vec::with_capacity(q);
        for field in &state.g {
            if !field.is_finite() {
                return Err(Error::domain("initial distributions are not finite"));
            }
            let mut coeffs = vec![Complex64::default(); len];
            fft.forward(field.values(), &mut coeffs, &mut work.fft);
            g.push(coeffs);
        }
        let inv_eps = 1.0 / params.epsilon;
        let transport = params
            .lattice
            .velocities()
            .iter()
            .map(|v| {
                ops.dx1
                    .iter()
                    .zip(&ops.dx2)
                    .map(|(k1, k2)| -inv_eps * (v[0] * k1 + v[1] * k2))
                    .collect()
            })
            .collect();
        let cutoff = params.cutoff_each_step.then(|| half::cutoff_mask(grid, params.epsilon));
        Ok(Self {
            params,
            grid,
            ops,
            fft,
            time: state.time,
            g,
            transport,
            cutoff,
            work,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn params(&self) -> &LbgkParams {
        &self.params
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    fn to_field(&self, coeffs: &[Complex64]) -> RealField2D {
        let mut values = vec![0.0; self.grid.len()];
        self.fft.inverse(coeffs, &mut values, &mut HalfScratch::default());
        RealField2D::from_raw(self.grid, values)
    }

    /// Physical-space copy of the current state.
    pub fn state(&self) -> LbgkState {
        LbgkState {
            time: self.time,
            g: self.g.iter().map(|c| self.to_field(c)).collect(),
            params: self.params.clone(),
        }
    }

    /// Spectral right-hand side at the current state.
    #[cfg(test)]
    fn rhs_coeffs(&mut self) -> Vec<Vec<Complex64>> {
        let Work {
            fft: scratch,
            mom,
            phys,
            ..
        } = &mut self.work;
        compute_moments(&self.params, &self.ops, &self.fft, &self.g, mom, phys, scratch);
        let velocities = self.params.lattice.velocities();
        self.g
            .iter()
            .enumerate()
            .map(|(i, gi)| {
                let kern = Kernel::new(&self.params, &velocities[i]);
                let ti = &self.transport[i];
                (0..gi.len()).map(|m| kern.rhs(mom, m, gi[m], ti[m])).collect()
            })
            .collect()
    }

    /// Advances by one RK4 step of size `dt`.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::domain(format!("time step {dt} must be positive")));
        }
        let kernels: Vec<Kernel> = self
            .params
            .lattice
            .velocities()
            .iter()
            .map(|v| Kernel::new(&self.params, v))
            .collect();
        let weights = [dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0];
        let offsets = [0.5 * dt, 0.5 * dt, dt, 0.0];
        for s in 0..4 {
            let Work {
                fft: scratch,
                stage_a,
                stage_b,
                acc,
                mom,
                phys,
            } = &mut self.work;
            // Stage sources and destinations: g -> a -> b -> a -> (none).
            let (src, dst): (&[Vec<Complex64>], Option<&mut [Vec<Complex64>]>) = match s {
                0 => (&self.g, Some(stage_a)),
                1 => (stage_a, Some(stage_b)),
                2 => (stage_b, Some(stage_a)),
                _ => (stage_a, None),
            };
            compute_moments(&self.params, &self.ops, &self.fft, src, mom, phys, scratch);
            let mom = &*mom;
            let (wgt, off) = (weights[s], offsets[s]);
            let g = &self.g;
            let transport = &self.transport;
            let kernels = &kernels;
            let update = |i: usize, ac: &mut [Complex64], st: Option<&mut Vec<Complex64>>| {
                let (kern, gi, si, ti) = (kernels[i], &g[i], &src[i], &transport[i]);
                match st {
                    Some(st) => {
                        for m in 0..gi.len() {
                            let k = kern.rhs(mom, m, si[m], ti[m]);
                            ac[m] = if s == 0 { gi[m] + k * wgt } else { ac[m] + k * wgt };
                            st[m] = gi[m] + k * off;
                        }
                    }
                    None => {
                        for m in 0..gi.len() {
                            ac[m] += kern.rhs(mom, m, si[m], ti[m]) * wgt;
                        }
                    }
                }
            };
            match dst {
                Some(dst) => acc
                    .par_iter_mut()
                    .zip(dst.par_iter_mut())
                    .enumerate()
                    .for_each(|(i, (ac, st))| update(i, ac, Some(st))),
                None => acc.par_iter_mut().enumerate().for_each(|(i, ac)| update(i, ac, None)),
            }
        }
        std::mem::swap(&mut self.g, &mut self.work.acc);
        if let Some(mask) = &self.cutoff {
            for gi in &mut self.g {
                for (c, f) in gi.iter_mut().zip(mask) {
                    *c *= f;
                }
            }
        }
        self.time += dt;
        let finite = self
            .g
            .iter()
            .all(|gi| gi.iter().all(|c| c.re.is_finite() && c.im.is_finite()));
        if !finite {
            return Err(Error::Blowup {
                time: self.time,
                context: format!("LBGK, epsilon = {}", self.params.epsilon),
            });
        }
        Ok(())
    }

    /// Takes `steps` steps of size `dt`.
    pub fn advance(&mut self, steps: usize, dt: f64) -> Result<()> {
        for _ in 0..steps {
            self.step(dt)?;
        }
        Ok(())
    }

    fn moment_spectra(&self) -> [Vec<Complex64>; 3] {
        let len = self.fft.len();
        let mut rho = vec![Complex64::default(); len];
        let mut u1 = vec![Complex64::default(); len];
        let mut u2 = vec![Complex64::default(); len];
        accumulate_moments(&self.params.lattice, &self.g, &mut rho, &mut u1, &mut u2);
        [rho, u1, u2]
    }

    pub fn macroscopic(&self) -> MacroFields {
        let [rho, u1, u2] = self.moment_spectra();
        MacroFields {
            rho: self.to_field(&rho),
            u: [self.to_field(&u1), self.to_field(&u2)],
        }
    }

    /// Macroscopic vorticity `∂_1 u_2 - ∂_2 u_1`.
    pub fn vorticity(&self) -> RealField2D {
        let [_, u1, u2] = self.moment_spectra();
        let coeffs: Vec<Complex64> = (0..u1.len())
            .map(|m| times_i(u2[m], self.ops.dx1[m]) - times_i(u1[m], self.ops.dx2[m]))
            .collect();
        self.to_field(&coeffs)
    }

    /// Integral diagnostics, evaluated by Parseval on the coefficients.
    pub fn series_record(&self) -> LbgkSeriesRecord {
        let [rho, u1, u2] = self.moment_spectra();
        let sq = |c: &[Complex64]| self.ops.norm_sq(c);
        let weighted = self
            .params
            .lattice
            .weights()
            .iter()
            .zip(&self.g)
            .map(|(w, gi)| w * sq(gi))
            .sum();
        LbgkSeriesRecord {
            time: self.time,
            mass: rho[0].re,
            l2_rho: sq(&rho).sqrt(),
            l2_u: (sq(&u1) + sq(&u2)).sqrt(),
            weighted_g_norm: weighted,
        }
    }
}
