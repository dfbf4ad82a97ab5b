//! Pair-kernel spectral analysis in three dimensions.
//!
//! The central object is the symmetric operator
//! `(T u)(x) = W(x) int K_lambda(x - y) W(y) u(y) dy` with `W = sqrt(V)`,
//! `V(x) = beta^2 R(sqrt2 x)` and `K_lambda` the screened Coulomb kernel
//! `exp(-sqrt(2 lambda) r) / (2 pi r)`. Its top eigenvalue as a function of
//! the coupling fixes the second-moment threshold `beta_hat = E_1(0)^{-1/2}`,
//! the level at which the eigenvalue crosses one gives the bound-state energy
//! above threshold, and the critical eigenvector drives the slowly decaying
//! resonance state and the point-to-point constant used by the vanishing-range
//! asymptotics.
//!
//! The operator is discretized by midpoint quadrature on a cubical grid that
//! inscribes the potential support exactly. Applying it is a discrete
//! convolution, evaluated exactly (up to rounding) through zero-padded FFTs,
//! so the matrix itself is never formed.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mollifier::RadialProfile;
use crate::quad::{gauss_legendre, pairwise_sum};

const MAX_GRID: usize = 128;

/// Screened Coulomb kernel `exp(-sqrt(2 lambda) r) / (2 pi r)`; the unscreened
/// case `lambda = 0` is `1 / (2 pi r)`.
pub fn yukawa(lambda: f64, r: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::Domain(format!("level must be nonnegative, got {lambda}")));
    }
    if !(r > 0.0) {
        return Err(Error::Domain(format!("kernel is singular at r = {r}; use the cell average")));
    }
    Ok((-(2.0 * lambda).sqrt() * r).exp() / (2.0 * std::f64::consts::PI * r))
}

/// Exact cell average of the kernel over the cube cell containing the
/// singularity, via the spherical representation
/// `(1/h^3) int_cell K(|y|) dy = (6/h^3) int_{[-1,1]^2} g(R(u,v)) du dv / (2 pi rho^3)`
/// with `rho = sqrt(u^2+v^2+1)`, `R = (h/2) rho`, `g(R) = int_0^R e^{-c r} r dr`.
fn diagonal_cell_average(lambda: f64, h: f64) -> f64 {
    let c = (2.0 * lambda).sqrt();
    let g = |r: f64| -> f64 {
        if c == 0.0 {
            0.5 * r * r
        } else {
            (1.0 - (-c * r).exp() * (1.0 + c * r)) / (c * c)
        }
    };
    let (x, w) = gauss_legendre(32);
    let mut acc = 0.0;
    for (u, wu) in x.iter().zip(&w) {
        for (v, wv) in x.iter().zip(&w) {
            let rho2 = u * u + v * v + 1.0;
            let rho = rho2.sqrt();
            acc += wu * wv * g(0.5 * h * rho) / (rho2 * rho);
        }
    }
    6.0 / (h * h * h) * acc / (2.0 * std::f64::consts::PI)
}

/// Cell average of the kernel over a cell centered at `center` (used for the
/// near field where the point value is a poor quadrature weight).
fn near_cell_average(lambda: f64, h: f64, center: [f64; 3]) -> f64 {
    let (x, w) = gauss_legendre(4);
    let mut acc = 0.0;
    for (a, wa) in x.iter().zip(&w) {
        for (b, wb) in x.iter().zip(&w) {
            for (c, wc) in x.iter().zip(&w) {
                let y = [
                    center[0] + 0.5 * h * a,
                    center[1] + 0.5 * h * b,
                    center[2] + 0.5 * h * c,
                ];
                let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
                acc += wa * wb * wc * yukawa(lambda, r).unwrap();
            }
        }
    }
    acc / 8.0
}

/// The potential `V(x) = beta^2 R(sqrt2 x)` and its square root sampled on the
/// cube inscribing `B(0, sqrt2 r_phi)`.
#[derive(Debug, Clone)]
pub struct PotentialField {
    pub beta: f64,
    pub n: usize,
    pub h: f64,
    pub half_extent: f64,
    pub v: Vec<f64>,
    pub vhalf: Vec<f64>,
    pub support: Vec<usize>,
}

impl PotentialField {
    pub fn build(profile: &RadialProfile, beta: f64, grid_n: usize) -> Result<PotentialField> {
        if profile.dimension != 3 {
            return Err(Error::Domain("the spectral module is three-dimensional".into()));
        }
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("coupling must be positive, got {beta}")));
        }
        if grid_n < 16 {
            return Err(Error::Config(format!("grid {grid_n} per axis is below the minimum 16")));
        }
        if grid_n > MAX_GRID {
            return Err(Error::Resource { requested: grid_n, suggested: MAX_GRID });
        }
        let half_extent = profile.support_radius / 2.0f64.sqrt();
        let h = 2.0 * half_extent / grid_n as f64;
        let m = grid_n * grid_n * grid_n;
        let mut v = vec![0.0; m];
        let mut vhalf = vec![0.0; m];
        let mut support = Vec::new();
        for i in 0..grid_n {
            for j in 0..grid_n {
                for k in 0..grid_n {
                    let idx = (i * grid_n + j) * grid_n + k;
                    let x = -half_extent + (i as f64 + 0.5) * h;
                    let y = -half_extent + (j as f64 + 0.5) * h;
                    let z = -half_extent + (k as f64 + 0.5) * h;
                    let r = (x * x + y * y + z * z).sqrt();
                    let val = beta * beta * profile.value(2.0f64.sqrt() * r).max(0.0);
                    if val > 0.0 {
                        v[idx] = val;
                        vhalf[idx] = val.sqrt();
                        support.push(idx);
                    }
                }
            }
        }
        Ok(PotentialField { beta, n: grid_n, h, half_extent, v, vhalf, support })
    }

    pub fn node(&self, idx: usize) -> [f64; 3] {
        let n = self.n;
        let k = idx % n;
        let j = (idx / n) % n;
        let i = idx / (n * n);
        [
            -self.half_extent + (i as f64 + 0.5) * self.h,
            -self.half_extent + (j as f64 + 0.5) * self.h,
            -self.half_extent + (k as f64 + 0.5) * self.h,
        ]
    }

    pub fn sup_vhalf(&self) -> f64 {
        self.vhalf.iter().cloned().fold(0.0, f64::max)
    }
}

struct Fft3 {
    p: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft3 {
    fn new(p: usize) -> Fft3 {
        let mut planner = FftPlanner::new();
        Fft3 { p, fwd: planner.plan_fft_forward(p), inv: planner.plan_fft_inverse(p) }
    }

    fn run(&self, data: &mut [Complex<f64>], inverse: bool) {
        let p = self.p;
        let fft = if inverse { &self.inv } else { &self.fwd };
        data.par_chunks_mut(p).for_each(|line| fft.process(line));
        data.par_chunks_mut(p * p).for_each(|plane| {
            let mut buf = vec![Complex::default(); p];
            for z in 0..p {
                for y in 0..p {
                    buf[y] = plane[y * p + z];
                }
                fft.process(&mut buf);
                for y in 0..p {
                    plane[y * p + z] = buf[y];
                }
            }
        });
        let mut t = vec![Complex::default(); p * p * p];
        transpose_xz(data, &mut t, p);
        t.par_chunks_mut(p).for_each(|line| fft.process(line));
        transpose_xz(&t, data, p);
    }
}

fn transpose_xz(src: &[Complex<f64>], dst: &mut [Complex<f64>], p: usize) {
    dst.par_chunks_mut(p * p).enumerate().for_each(|(z, plane)| {
        for y in 0..p {
            for x in 0..p {
                plane[y * p + x] = src[(x * p + y) * p + z];
            }
        }
    });
}

/// The discretized pair operator at one level, applied through padded FFTs.
pub struct KernelOperator {
    pub pot: Arc<PotentialField>,
    pub level: f64,
    kspec: Vec<Complex<f64>>,
    fft: Fft3,
}

/// Tabulate the kernel on the padded torus and transform it once.
fn kernel_spectrum(pot: &PotentialField, lambda: f64, fft: &Fft3) -> Vec<Complex<f64>> {
    let n = pot.n;
    let p = fft.p;
    let h = pot.h;
    let mut grid = vec![Complex::default(); p * p * p];
    let diag = diagonal_cell_average(lambda, h);
    let kval = |di: isize, dj: isize, dk: isize| -> f64 {
        if di == 0 && dj == 0 && dk == 0 {
            return diag;
        }
        let c = [di as f64 * h, dj as f64 * h, dk as f64 * h];
        if di.abs() <= 2 && dj.abs() <= 2 && dk.abs() <= 2 {
            near_cell_average(lambda, h, c)
        } else {
            let r = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            yukawa(lambda, r).unwrap()
        }
    };
    let lim = n as isize - 1;
    grid.par_chunks_mut(p * p).enumerate().for_each(|(iw, plane)| {
        let di = if iw as isize <= lim { iw as isize } else { iw as isize - p as isize };
        if di.abs() > lim {
            return;
        }
        for jw in 0..p {
            let dj = if jw as isize <= lim { jw as isize } else { jw as isize - p as isize };
            if dj.abs() > lim {
                continue;
            }
            for kw in 0..p {
                let dk = if kw as isize <= lim { kw as isize } else { kw as isize - p as isize };
                if dk.abs() > lim {
                    continue;
                }
                plane[jw * p + kw] = Complex::new(kval(di, dj, dk), 0.0);
            }
        }
    });
    fft.run(&mut grid, false);
    // fold the quadrature weight and the inverse-transform scale into the spectrum
    let scale = h * h * h / (p * p * p) as f64;
    for c in grid.iter_mut() {
        *c *= scale;
    }
    grid
}

impl KernelOperator {
    /// Number of grid nodes inside the potential support.
    pub fn support_len(&self) -> usize {
        self.pot.support.len()
    }

    /// `L^2` inner product of two support vectors.
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        let prods: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
        pairwise_sum(&prods) * self.pot.h.powi(3)
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.dot(a, a).sqrt()
    }

    /// Convolution `K_lambda * w` times the cell volume, on the full cube.
    pub fn convolve_cube(&self, w_cube: &[f64]) -> Vec<f64> {
        let n = self.pot.n;
        let p = self.fft.p;
        let mut buf = vec![Complex::default(); p * p * p];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    buf[(i * p + j) * p + k] = Complex::new(w_cube[(i * n + j) * n + k], 0.0);
                }
            }
        }
        self.fft.run(&mut buf, false);
        for (c, k) in buf.iter_mut().zip(&self.kspec) {
            *c *= k;
        }
        self.fft.run(&mut buf, true);
        let mut out = vec![0.0; n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out[(i * n + j) * n + k] = buf[(i * p + j) * p + k].re;
                }
            }
        }
        out
    }

    /// Apply the operator to a support vector.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let pot = &self.pot;
        let n3 = pot.n * pot.n * pot.n;
        let mut w = vec![0.0; n3];
        for (s, &idx) in pot.support.iter().enumerate() {
            w[idx] = pot.vhalf[idx] * u[s];
        }
        let conv = self.convolve_cube(&w);
        pot.support.iter().map(|&idx| pot.vhalf[idx] * conv[idx]).collect()
    }

    /// Reference dense apply, O(support^2); test use only.
    pub fn apply_dense(&self, u: &[f64]) -> Vec<f64> {
        let pot = &self.pot;
        let h = pot.h;
        let diag = diagonal_cell_average(self.level, h);
        pot.support
            .par_iter()
            .map(|&i| {
                let xi = pot.node(i);
                let mut acc = 0.0;
                for (s, &j) in pot.support.iter().enumerate() {
                    let k = if i == j {
                        diag
                    } else {
                        let xj = pot.node(j);
                        let c = [xi[0] - xj[0], xi[1] - xj[1], xi[2] - xj[2]];
                        let near = (c[0] / h).round().abs() <= 2.0
                            && (c[1] / h).round().abs() <= 2.0
                            && (c[2] / h).round().abs() <= 2.0;
                        if near {
                            near_cell_average(self.level, h, c)
                        } else {
                            yukawa(self.level, (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt())
                                .unwrap()
                        }
                    };
                    acc += k * pot.vhalf[j] * u[s];
                }
                pot.vhalf[i] * acc * h * h * h
            })
            .collect()
    }

    /// Restriction of the square root of the potential to the support nodes.
    pub fn vhalf_vector(&self) -> Vec<f64> {
        self.pot.support.iter().map(|&i| self.pot.vhalf[i]).collect()
    }

    /// Squared Hilbert-Schmidt norm `int int V(x) K(x-y)^2 V(y) dx dy`,
    /// evaluated with the squared-kernel convolution.
    pub fn hilbert_schmidt_sq(&self) -> f64 {
        let pot = &self.pot;
        let n = pot.n;
        let p = 2 * n;
        let fft = Fft3::new(p);
        let h = pot.h;
        let c = (2.0 * self.level).sqrt();
        // cell average of K^2 at the singular cell: spherical form with g(R) = R
        let diag = {
            let (x, w) = gauss_legendre(32);
            let mut acc = 0.0;
            for (u, wu) in x.iter().zip(&w) {
                for (v, wv) in x.iter().zip(&w) {
                    let rho2 = u * u + v * v + 1.0;
                    acc += wu * wv * 0.5 * h * rho2.sqrt() / (rho2 * rho2.sqrt());
                }
            }
            6.0 / (h * h * h) * acc / (4.0 * std::f64::consts::PI.powi(2))
        };
        let mut grid = vec![Complex::default(); p * p * p];
        let lim = n as isize - 1;
        for iw in 0..p {
            let di = if iw as isize <= lim { iw as isize } else { iw as isize - p as isize };
            if di.abs() > lim {
                continue;
            }
            for jw in 0..p {
                let dj = if jw as isize <= lim { jw as isize } else { jw as isize - p as isize };
                if dj.abs() > lim {
                    continue;
                }
                for kw in 0..p {
                    let dk =
                        if kw as isize <= lim { kw as isize } else { kw as isize - p as isize };
                    if dk.abs() > lim {
                        continue;
                    }
                    let val = if di == 0 && dj == 0 && dk == 0 {
                        diag
                    } else {
                        let r2 = (di * di + dj * dj + dk * dk) as f64 * h * h;
                        (-2.0 * c * r2.sqrt()).exp()
                            / (4.0 * std::f64::consts::PI.powi(2) * r2)
                    };
                    grid[(iw * p + jw) * p + kw] = Complex::new(val, 0.0);
                }
            }
        }
        fft.run(&mut grid, false);
        let scale = h * h * h / (p * p * p) as f64;
        let mut vbuf = vec![Complex::default(); p * p * p];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    vbuf[(i * p + j) * p + k] = Complex::new(pot.v[(i * n + j) * n + k], 0.0);
                }
            }
        }
        fft.run(&mut vbuf, false);
        for (a, b) in vbuf.iter_mut().zip(&grid) {
            *a *= b * scale;
        }
        fft.run(&mut vbuf, true);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    acc += pot.v[(i * n + j) * n + k] * vbuf[(i * p + j) * p + k].re;
                }
            }
        }
        acc * h * h * h
    }
}

/// Build the discretized operator at level `lambda`.
pub fn build_operator(
    profile: &RadialProfile,
    beta: f64,
    lambda: f64,
    grid_n: usize,
) -> Result<KernelOperator> {
    if lambda < 0.0 {
        return Err(Error::Domain(format!("level must be nonnegative, got {lambda}")));
    }
    let pot = Arc::new(PotentialField::build(profile, beta, grid_n)?);
    Ok(operator_from_potential(pot, lambda))
}

fn operator_from_potential(pot: Arc<PotentialField>, lambda: f64) -> KernelOperator {
    let fft = Fft3::new(2 * pot.n);
    let kspec = kernel_spectrum(&pot, lambda, &fft);
    KernelOperator { pot, level: lambda, kspec, fft }
}

/// Top of the spectrum: leading pair of eigenvalues and the leading eigenvector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralResult {
    pub lambda1: f64,
    pub lambda2: f64,
    pub v1: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Power iteration with Rayleigh-quotient stopping; a single deflation pass
/// for the second eigenvalue. The leading eigenvector is sign-normalized so
/// its overlap with the potential square root is nonnegative.
pub fn top_eigen(op: &KernelOperator, tol: f64) -> Result<SpectralResult> {
    if !(tol > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    let m = op.support_len();
    let vh = op.vhalf_vector();
    if op.norm(&vh) == 0.0 {
        return Err(Error::Precondition("potential vanishes on the grid".into()));
    }
    let mut v: Vec<f64> = vh.clone();
    let nv = op.norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let max_iter = 5000;
    let mut lambda1 = 0.0;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        let w = op.apply(&v);
        lambda1 = op.dot(&v, &w);
        if lambda1 <= 0.0 {
            // zero-potential limit: the operator annihilates everything
            return Ok(SpectralResult { lambda1: 0.0, lambda2: 0.0, v1: v, iterations: it, residual: 0.0 });
        }
        let mut r = 0.0;
        for (wi, vi) in w.iter().zip(&v) {
            let d = wi - lambda1 * vi;
            r += d * d;
        }
        residual = (r * op.pot.h.powi(3)).sqrt();
        let nw = op.norm(&w);
        v = w;
        v.iter_mut().for_each(|x| *x /= nw);
        iterations = it + 1;
        if residual <= tol * lambda1 {
            break;
        }
    }
    if residual > tol * lambda1 {
        return Err(Error::NonConvergence("power iteration stalled".into(), residual));
    }
    // sign normalization
    if op.dot(&v, &vh) < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }

    // deflated iteration for the second eigenvalue; start from an odd probe
    let mut u: Vec<f64> = (0..m)
        .map(|s| {
            let x = op.pot.node(op.pot.support[s]);
            op.pot.vhalf[op.pot.support[s]] * x[0]
        })
        .collect();
    let proj = op.dot(&u, &v);
    for (ui, vi) in u.iter_mut().zip(&v) {
        *ui -= proj * vi;
    }
    let nu = op.norm(&u);
    if nu < 1e-300 {
        return Ok(SpectralResult { lambda1, lambda2: 0.0, v1: v, iterations, residual });
    }
    u.iter_mut().for_each(|x| *x /= nu);
    let mut lambda2 = 0.0;
    for _ in 0..max_iter {
        let mut w = op.apply(&u);
        let proj = op.dot(&w, &v);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi -= proj * vi;
        }
        let l = op.dot(&u, &w);
        let nw = op.norm(&w);
        if nw < 1e-300 {
            lambda2 = 0.0;
            break;
        }
        let mut r = 0.0;
        for (wi, ui) in w.iter().zip(&u) {
            let d = wi - l * ui;
            r += d * d;
        }
        let res = (r * op.pot.h.powi(3)).sqrt();
        u = w;
        u.iter_mut().for_each(|x| *x /= nw);
        lambda2 = l;
        if res <= tol.max(1e-9) * lambda1 {
            break;
        }
    }
    Ok(SpectralResult { lambda1, lambda2: lambda2.max(0.0), v1: v, iterations, residual })
}

/// Top eigenvalue as a function of the level, on a shared grid.
pub fn energy_curve(
    profile: &RadialProfile,
    beta: f64,
    lambdas: &[f64],
    grid_n: usize,
) -> Result<Vec<(f64, f64)>> {
    let pot = Arc::new(PotentialField::build(profile, beta, grid_n)?);
    let mut out = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        if l < 0.0 {
            return Err(Error::Domain(format!("level must be nonnegative, got {l}")));
        }
        let op = operator_from_potential(pot.clone(), l);
        let spec = top_eigen(&op, 1e-9)?;
        out.push((l, spec.lambda1));
    }
    Ok(out)
}

/// Estimate of the second-moment threshold on a ladder of grids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaL2Estimate {
    pub grids: Vec<usize>,
    pub energies: Vec<f64>,
    pub beta_hats: Vec<f64>,
    pub extrapolated: f64,
    pub rel_change_finest: f64,
    pub spectral_gap: f64,
    pub converged: bool,
}

/// `beta_hat = E_1(0)^{-1/2}` per grid, Richardson-extrapolated in the squared
/// spacing, with the relative change between the two finest grids as the
/// convergence indicator.
pub fn estimate_beta_l2(profile: &RadialProfile, grids: &[usize]) -> Result<BetaL2Estimate> {
    if grids.len() < 2 {
        return Err(Error::Config("need at least two grid resolutions".into()));
    }
    let mut energies = Vec::new();
    let mut beta_hats = Vec::new();
    let mut gap = 0.0;
    for (i, &g) in grids.iter().enumerate() {
        let op = build_operator(profile, 1.0, 0.0, g)?;
        let spec = top_eigen(&op, 1e-10)?;
        energies.push(spec.lambda1);
        beta_hats.push(spec.lambda1.powf(-0.5));
        if i == grids.len() - 1 {
            gap = (spec.lambda1 - spec.lambda2) * spec.lambda1.powf(-1.0);
        }
    }
    let m = grids.len();
    let h1 = 1.0 / grids[m - 2] as f64;
    let h2 = 1.0 / grids[m - 1] as f64;
    let extrapolated =
        beta_hats[m - 1] + (beta_hats[m - 1] - beta_hats[m - 2]) * h2 * h2 / (h1 * h1 - h2 * h2);
    let rel_change = ((beta_hats[m - 1] - beta_hats[m - 2]) / beta_hats[m - 1]).abs();
    // monotone approach expected; a non-monotone ladder is flagged, not fatal
    let monotone = beta_hats.windows(2).all(|w| w[1] <= w[0]) || beta_hats.windows(2).all(|w| w[1] >= w[0]);
    Ok(BetaL2Estimate {
        grids: grids.to_vec(),
        energies,
        beta_hats,
        extrapolated,
        rel_change_finest: rel_change,
        spectral_gap: gap,
        converged: monotone && rel_change < 0.02,
    })
}

/// Partial sums of the geometric pair expansion of the stationary second
/// moment, `sum_k <W, T^k W>`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeumannSeries {
    pub beta: f64,
    pub energy: f64,
    pub partial_sums: Vec<f64>,
    pub terms: Vec<f64>,
}

pub fn neumann_series_moment(
    profile: &RadialProfile,
    beta: f64,
    kmax: usize,
    grid_n: usize,
) -> Result<NeumannSeries> {
    if kmax < 1 {
        return Err(Error::Config("need at least one term".into()));
    }
    let op = build_operator(profile, beta, 0.0, grid_n)?;
    let spec = top_eigen(&op, 1e-9)?;
    if spec.lambda1 >= 1.0 {
        return Err(Error::Precondition(format!(
            "series diverges: top eigenvalue {:.6} >= 1 at coupling {beta}",
            spec.lambda1
        )));
    }
    let vh = op.vhalf_vector();
    let mut terms = Vec::with_capacity(kmax + 1);
    let mut sums = Vec::with_capacity(kmax + 1);
    let mut cur = vh.clone();
    let mut acc = 0.0;
    for _ in 0..=kmax {
        let t = op.dot(&vh, &cur);
        acc += t;
        terms.push(t);
        sums.push(acc);
        cur = op.apply(&cur);
    }
    Ok(NeumannSeries { beta, energy: spec.lambda1, partial_sums: sums, terms })
}

/// Bound state above threshold: the level where the top eigenvalue crosses one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundState {
    pub beta: f64,
    pub lambda_star: f64,
    pub energy_residual: f64,
    pub fixed_point_residual: f64,
    pub pde_residual: f64,
    pub h_cube: Vec<f64>,
    pub u_support: Vec<f64>,
}

/// Bisection on the level for `E_beta(lambda*) = 1`; the eigenfunction
/// `h = K_lambda * (W u)` satisfies the discrete eigenvalue equation
/// `(lambda - Lap/2) h = V h` up to the discretization residual.
pub fn bs_principle_eigenvalue(
    profile: &RadialProfile,
    beta: f64,
    grid_n: usize,
    tol: f64,
) -> Result<BoundState> {
    let pot = Arc::new(PotentialField::build(profile, beta, grid_n)?);
    let energy_at = |lambda: f64| -> Result<(f64, KernelOperator, SpectralResult)> {
        let op = operator_from_potential(pot.clone(), lambda);
        let spec = top_eigen(&op, 1e-10)?;
        Ok((spec.lambda1, op, spec))
    };
    let (e0, _, _) = energy_at(0.0)?;
    if e0 <= 1.0 {
        return Err(Error::Precondition(format!(
            "no bound state: top eigenvalue at zero level is {e0:.6} <= 1"
        )));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    loop {
        let (e, _, _) = energy_at(hi)?;
        if e < 1.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::NonConvergence("bound-state level runaway".into(), hi));
        }
    }
    let mut best = None;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (e, op, spec) = energy_at(mid)?;
        if (e - 1.0).abs() <= tol {
            best = Some((mid, e, op, spec));
            break;
        }
        if e > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        best = Some((mid, e, op, spec));
    }
    let (lambda_star, e, op, spec) = best.unwrap();
    if (e - 1.0).abs() > tol {
        return Err(Error::NonConvergence("bisection did not reach the target".into(), (e - 1.0).abs()));
    }
    // h on the cube from the eigenvector
    let n = pot.n;
    let mut w = vec![0.0; n * n * n];
    for (s, &idx) in pot.support.iter().enumerate() {
        w[idx] = pot.vhalf[idx] * spec.v1[s];
    }
    let h_cube = op.convolve_cube(&w);
    // fixed point T u = u
    let tu = op.apply(&spec.v1);
    let mut fp = 0.0;
    for (a, b) in tu.iter().zip(&spec.v1) {
        fp += (a - e * b) * (a - e * b);
    }
    let fixed_point_residual = (fp * pot.h.powi(3)).sqrt() / e;
    // discrete eigenvalue equation on interior nodes
    let hh = pot.h * pot.h;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            for k in 1..n - 1 {
                let idx = (i * n + j) * n + k;
                let lap = (h_cube[idx + n * n] + h_cube[idx - n * n] + h_cube[idx + n]
                    + h_cube[idx - n]
                    + h_cube[idx + 1]
                    + h_cube[idx - 1]
                    - 6.0 * h_cube[idx])
                    / hh;
                let r = lambda_star * h_cube[idx] - 0.5 * lap - pot.v[idx] * h_cube[idx];
                num += r * r;
                den += (lambda_star * h_cube[idx]).powi(2) + (pot.v[idx] * h_cube[idx]).powi(2);
            }
        }
    }
    Ok(BoundState {
        beta,
        lambda_star,
        energy_residual: (e - 1.0).abs(),
        fixed_point_residual,
        pde_residual: (num / den).sqrt(),
        h_cube,
        u_support: spec.v1,
    })
}

/// Shared state at the numerical threshold coupling on one grid.
pub struct CriticalState {
    pub beta_hat: f64,
    pub op: KernelOperator,
    pub spec: SpectralResult,
    /// slowly decaying state `K_0 * (W v1)` on the cube
    pub h_cube: Vec<f64>,
    pub overlap: f64,
}

/// Build the threshold state: coupling fixed so the discrete top eigenvalue is
/// one, eigenvector, and the associated resonance profile.
pub fn critical_state(profile: &RadialProfile, grid_n: usize) -> Result<CriticalState> {
    let op1 = build_operator(profile, 1.0, 0.0, grid_n)?;
    let spec1 = top_eigen(&op1, 1e-11)?;
    let beta_hat = spec1.lambda1.powf(-0.5);
    let op = build_operator(profile, beta_hat, 0.0, grid_n)?;
    let spec = top_eigen(&op, 1e-11)?;
    if (spec.lambda1 - 1.0).abs() > 1e-4 {
        return Err(Error::Precondition(format!(
            "grid too coarse: eigenvalue at the threshold coupling is {:.6}",
            spec.lambda1
        )));
    }
    let pot = &op.pot;
    let n = pot.n;
    let mut w = vec![0.0; n * n * n];
    for (s, &idx) in pot.support.iter().enumerate() {
        w[idx] = pot.vhalf[idx] * spec.v1[s];
    }
    let h_cube = op.convolve_cube(&w);
    let overlap = op.dot(&spec.v1, &op.vhalf_vector());
    Ok(CriticalState { beta_hat, op, spec, h_cube, overlap })
}

/// Zero-level self-consistency and decay data for the threshold state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZeroResonance {
    pub residual: f64,
    pub overlap: f64,
    /// samples of `|x| h(x)` between four and eight bump radii
    pub far_field: Vec<(f64, f64)>,
}

impl CriticalState {
    /// Value of the resonance state at an arbitrary point by direct summation.
    pub fn h_at(&self, x: [f64; 3]) -> f64 {
        let pot = &self.op.pot;
        let mut acc = 0.0;
        for (s, &idx) in pot.support.iter().enumerate() {
            let y = pot.node(idx);
            let d = [(x[0] - y[0]), (x[1] - y[1]), (x[2] - y[2])];
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if r < 0.5 * pot.h {
                acc += diagonal_cell_average(0.0, pot.h) * pot.vhalf[idx] * self.spec.v1[s];
            } else {
                acc += yukawa(0.0, r).unwrap() * pot.vhalf[idx] * self.spec.v1[s];
            }
        }
        acc * pot.h.powi(3)
    }

    /// Check `h = K_0 * (V h)` on the support and the `1/|x|` far-field decay.
    pub fn zero_resonance(&self, r_phi: f64) -> Result<ZeroResonance> {
        let pot = &self.op.pot;
        let n = pot.n;
        let mut vh_cube = vec![0.0; n * n * n];
        for &idx in &pot.support {
            vh_cube[idx] = pot.v[idx] * self.h_cube[idx];
        }
        let recon = self.op.convolve_cube(&vh_cube);
        let mut num = 0.0;
        let mut den = 0.0;
        for &idx in &pot.support {
            num += (recon[idx] - self.h_cube[idx]).powi(2);
            den += self.h_cube[idx].powi(2);
        }
        let residual = (num / den).sqrt();
        let mut far_field = Vec::new();
        for i in 0..=8 {
            let r = 4.0 * r_phi + i as f64 * 0.5 * r_phi;
            let dir = [0.6, -0.64, 0.48]; // unit vector
            let x = [r * dir[0], r * dir[1], r * dir[2]];
            far_field.push((r, r * self.h_at(x)));
        }
        Ok(ZeroResonance { residual, overlap: self.overlap, far_field })
    }

    /// Point-to-point constant of the vanishing-range limit.
    pub fn constant_c(&self, z: [f64; 3], zp: [f64; 3]) -> f64 {
        let b2 = self.beta_hat * self.beta_hat;
        b2 * self.half_space_integral(z) * self.overlap.powi(-2) * self.half_space_integral(zp) * b2
    }

    fn half_space_integral(&self, z: [f64; 3]) -> f64 {
        let pot = &self.op.pot;
        let mut acc = 0.0;
        for (s, &idx) in pot.support.iter().enumerate() {
            let y = pot.node(idx);
            let d = [(z[0] - y[0]), (z[1] - y[1]), (z[2] - y[2])];
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let k = if r < 0.5 * pot.h {
                diagonal_cell_average(0.0, pot.h)
            } else {
                yukawa(0.0, r).unwrap()
            };
            acc += k * pot.vhalf[idx] * self.spec.v1[s];
        }
        acc * pot.h.powi(3)
    }

    /// Quadrature of `int int R(sqrt2 z) C(z, z') R(sqrt2 z') dz dz'`; equals one.
    pub fn identity_one_check(&self) -> f64 {
        let pot = &self.op.pot;
        // int V(z) h(z) dz, using V = beta^2 R(sqrt2 .)
        let mut acc = 0.0;
        for &idx in &pot.support {
            acc += pot.v[idx] * self.h_cube[idx];
        }
        let i = acc * pot.h.powi(3);
        (i / self.overlap).powi(2)
    }

    /// Vanishing-range ladder for the Laplace-domain pair functional.
    pub fn laplace_asymptotic_check(
        &self,
        z: [f64; 3],
        zp: [f64; 3],
        capital_lambda: f64,
        eps_list: &[f64],
    ) -> Result<LaplaceCheck> {
        if !(capital_lambda > 0.0) {
            return Err(Error::Domain("transform parameter must be positive".into()));
        }
        let pot = &self.op.pot;
        let b2 = self.beta_hat * self.beta_hat;
        let mut rows = Vec::new();
        for &eps in eps_list {
            let lambda = eps * eps * capital_lambda;
            let op = operator_from_potential(self.op.pot.clone(), lambda);
            let spec = top_eigen(&op, 1e-10)?;
            if spec.lambda1 >= 1.0 - 1e-3 {
                rows.push(LaplaceRow { eps, value: f64::NAN, first_term: f64::NAN, skipped: true });
                continue;
            }
            let field = |target: [f64; 3]| -> Vec<f64> {
                pot.support
                    .iter()
                    .map(|&idx| {
                        let y = pot.node(idx);
                        let d = [target[0] - y[0], target[1] - y[1], target[2] - y[2]];
                        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                        let k = if r < 0.5 * pot.h {
                            diagonal_cell_average(lambda, pot.h)
                        } else {
                            yukawa(lambda, r).unwrap()
                        };
                        b2 * k * pot.vhalf[idx]
                    })
                    .collect()
            };
            let a = field(z);
            let b = field(zp);
            // Neumann solve of (I - T) w = b; the spectral radius is below one
            let mut wv = b.clone();
            let mut delta = b.clone();
            for _ in 0..20_000 {
                delta = op.apply(&delta);
                for (w, d) in wv.iter_mut().zip(&delta) {
                    *w += d;
                }
                if op.norm(&delta) <= 1e-12 * op.norm(&wv) {
                    break;
                }
            }
            let value = eps * op.dot(&a, &wv);
            let dzz = [(z[0] - zp[0]), (z[1] - zp[1]), (z[2] - zp[2])];
            let r = (dzz[0] * dzz[0] + dzz[1] * dzz[1] + dzz[2] * dzz[2]).sqrt();
            let first_term = b2 * eps * yukawa(lambda, r)? * b2;
            rows.push(LaplaceRow { eps, value, first_term, skipped: false });
        }
        let target =
            2.0 * std::f64::consts::PI / (2.0 * capital_lambda).sqrt() * self.constant_c(z, zp);
        let usable: Vec<&LaplaceRow> = rows.iter().filter(|r| !r.skipped).collect();
        let richardson = if usable.len() >= 2 {
            let a = usable[usable.len() - 2];
            let b = usable[usable.len() - 1];
            // first-order elimination in eps
            (a.eps * b.value - b.eps * a.value) / (a.eps - b.eps)
        } else {
            f64::NAN
        };
        Ok(LaplaceCheck { rows, richardson, target })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaplaceRow {
    pub eps: f64,
    pub value: f64,
    pub first_term: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaplaceCheck {
    pub rows: Vec<LaplaceRow>,
    pub richardson: f64,
    pub target: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mollifier::{build_bump, self_convolve};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn profile() -> &'static RadialProfile {
        use std::sync::OnceLock;
        static P: OnceLock<RadialProfile> = OnceLock::new();
        P.get_or_init(|| self_convolve(&build_bump(1.0, 2048, 3).unwrap()).unwrap())
    }

    #[test]
    fn yukawa_values() {
        let r = 1.0 / (2.0 * std::f64::consts::PI);
        assert!((yukawa(0.0, r).unwrap() - 1.0).abs() < 1e-14);
        assert!((yukawa(2.0, 1.0).unwrap() - 0.021539279301848634).abs() < 1e-15);
        // monotone decay in the level
        let mut prev = f64::INFINITY;
        for l in [0.0, 0.5, 2.0, 10.0, 100.0] {
            let v = yukawa(l, 0.7).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(yukawa(0.0, 0.0).is_err());
        assert!(yukawa(-1.0, 1.0).is_err());
    }

    #[test]
    fn fft_apply_matches_dense() {
        let op = build_operator(profile(), 1.3, 0.4, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: Vec<f64> = (0..op.support_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = op.apply(&u);
        let b = op.apply_dense(&u);
        let scale = op.norm(&b);
        let mut diff = 0.0;
        for (x, y) in a.iter().zip(&b) {
            diff += (x - y) * (x - y);
        }
        assert!((diff * op.pot.h.powi(3)).sqrt() / scale < 1e-11);
    }

    #[test]
    fn operator_symmetric_nonnegative_and_scales_with_coupling() {
        let op1 = build_operator(profile(), 1.0, 0.2, 20).unwrap();
        let op2 = build_operator(profile(), 2.0, 0.2, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let u: Vec<f64> = (0..op1.support_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..op1.support_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tu = op1.apply(&u);
            let tv = op1.apply(&v);
            let lhs = op1.dot(&u, &tv);
            let rhs = op1.dot(&tu, &v);
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
            // nonnegativity of the quadratic form
            assert!(op1.dot(&u, &tu) >= -1e-12);
            // coupling scaling: T at 2 beta is 4 times T at beta
            let t2 = op2.apply(&u);
            for (a, b) in t2.iter().zip(&tu) {
                assert!((a - 4.0 * b).abs() <= 1e-12 * b.abs().max(1e-9));
            }
        }
    }

    #[test]
    fn level_monotonicity_for_nonnegative_vectors() {
        let pot_beta = 1.0;
        let ops: Vec<KernelOperator> = [0.0, 0.5, 2.0]
            .iter()
            .map(|&l| build_operator(profile(), pot_beta, l, 18).unwrap())
            .collect();
        let u: Vec<f64> = ops[0].vhalf_vector();
        let mut prev = f64::INFINITY;
        for op in &ops {
            let q = op.dot(&u, &op.apply(&u));
            assert!(q <= prev + 1e-12);
            prev = q;
        }
    }

    #[test]
    fn hilbert_schmidt_norm_grid_stable() {
        let op32 = build_operator(profile(), 1.0, 0.0, 32).unwrap();
        let op48 = build_operator(profile(), 1.0, 0.0, 48).unwrap();
        let a = op32.hilbert_schmidt_sq();
        let b = op48.hilbert_schmidt_sq();
        assert!(a.is_finite() && a > 0.0);
        assert!((a - b).abs() / b < 0.05, "HS^2: {a} vs {b}");
        // the top eigenvalue is dominated by the Hilbert-Schmidt bound
        let spec = top_eigen(&op48, 1e-9).unwrap();
        assert!(spec.lambda1 <= b.sqrt() * (1.0 + 1e-9));
    }

    #[test]
    fn top_eigen_basics() {
        let op = build_operator(profile(), 1.0, 0.0, 24).unwrap();
        let spec = top_eigen(&op, 1e-10).unwrap();
        assert!(spec.lambda1 > 0.0);
        assert!(spec.lambda2 < spec.lambda1);
        assert!(spec.residual <= 1e-10 * spec.lambda1);
        // leading eigenvector nonnegative after sign normalization
        for v in &spec.v1 {
            assert!(*v >= -1e-8);
        }
        // norm one
        assert!((op.norm(&spec.v1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_curve_decreasing_with_quadratic_scaling_and_tail() {
        let lambdas = [0.0, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2, 6.4, 12.8];
        let c1 = energy_curve(profile(), 1.0, &lambdas, 20).unwrap();
        let c2 = energy_curve(profile(), 2.0, &lambdas, 20).unwrap();
        for w in c1.windows(2) {
            assert!(w[1].1 < w[0].1, "energy not strictly decreasing: {w:?}");
        }
        for (a, b) in c1.iter().zip(&c2) {
            assert!((b.1 - 4.0 * a.1).abs() < 1e-10 * b.1.max(1e-12));
        }
        // large-level tail bound
        let pot = PotentialField::build(profile(), 1.0, 20).unwrap();
        let sup = pot.sup_vhalf();
        let tail = energy_curve(profile(), 1.0, &[160.0, 320.0], 20).unwrap();
        for (l, e) in tail {
            assert!(e * l <= 2.0 * sup * 1.05, "tail bound violated at level {l}: {e}");
        }
    }

    #[test]
    fn beta_l2_ladder() {
        let est = estimate_beta_l2(profile(), &[16, 20, 24]).unwrap();
        assert!(est.beta_hats.iter().all(|b| b.is_finite() && *b > 0.0));
        assert!(est.rel_change_finest < 0.05, "rel change {}", est.rel_change_finest);
        assert!(est.spectral_gap > 0.05);
        // quadratic coupling scaling: threshold for 2 beta halves
        let op = build_operator(profile(), 2.0, 0.0, 20).unwrap();
        let e2 = top_eigen(&op, 1e-9).unwrap().lambda1;
        assert!((e2 - 4.0 * est.energies[1]).abs() < 1e-8 * e2);
    }

    #[test]
    fn neumann_series_behavior() {
        let est = estimate_beta_l2(profile(), &[16, 20]).unwrap();
        let bh = est.beta_hats[1];
        let series = neumann_series_moment(profile(), 0.5 * bh, 40, 20).unwrap();
        // nondecreasing partial sums
        for w in series.partial_sums.windows(2) {
            assert!(w[1] >= w[0]);
        }
        // term ratio approaches the top eigenvalue
        let k = series.terms.len();
        let ratio = series.terms[k - 1] / series.terms[k - 2];
        assert!((ratio - series.energy).abs() / series.energy < 0.05, "ratio {ratio} vs energy {}", series.energy);
        // small-coupling limit: the sum approaches the k = 0 term
        let tiny = neumann_series_moment(profile(), 0.02, 10, 20).unwrap();
        let first = tiny.terms[0];
        assert!((tiny.partial_sums.last().unwrap() - first) / first < 0.01);
        // and the k = 0 term is the integral of the rescaled profile
        let expect = 0.02f64.powi(2) * 2.0f64.powf(-1.5);
        assert!((first - expect).abs() / expect < 2e-3, "{first} vs {expect}");
        // refusal above the threshold
        assert!(neumann_series_moment(profile(), 1.2 * bh, 10, 20).is_err());
    }

    #[test]
    fn bound_state_above_threshold() {
        let est = estimate_beta_l2(profile(), &[16, 20]).unwrap();
        let bh = est.beta_hats[1];
        let near = bs_principle_eigenvalue(profile(), 1.01 * bh, 20, 1e-6).unwrap();
        assert!(near.lambda_star > 0.0 && near.lambda_star < 0.5, "{}", near.lambda_star);
        assert!(near.energy_residual <= 1e-6);
        assert!(near.fixed_point_residual <= 1e-6);
        let far = bs_principle_eigenvalue(profile(), 2.0 * bh, 20, 1e-6).unwrap();
        assert!(far.lambda_star > near.lambda_star);
        assert!(far.pde_residual < 0.05, "pde residual {}", far.pde_residual);
        // below threshold there is no crossing
        assert!(bs_principle_eigenvalue(profile(), 0.5 * bh, 20, 1e-6).is_err());
    }

    #[test]
    fn critical_state_and_resonance() {
        let state = critical_state(profile(), 24).unwrap();
        assert!((state.spec.lambda1 - 1.0).abs() < 1e-9);
        assert!(state.overlap > 0.0);
        let res = state.zero_resonance(1.0).unwrap();
        assert!(res.residual <= 1e-4, "residual {}", res.residual);
        // far field: |x| h(x) roughly constant and positive
        let vals: Vec<f64> = res.far_field.iter().map(|p| p.1).collect();
        let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!(mean > 0.0);
        for v in &vals {
            assert!((v - mean).abs() / mean < 0.05, "far field wobble: {vals:?}");
        }
    }

    #[test]
    fn point_constant_and_identity() {
        let state = critical_state(profile(), 24).unwrap();
        let z = [0.6, -0.2, 0.4];
        let zp = [-0.5, 0.3, 0.1];
        let c = state.constant_c(z, zp);
        assert!(c > 0.0);
        let c_swapped = state.constant_c(zp, z);
        assert!((c - c_swapped).abs() <= 1e-10 * c);
        let one = state.identity_one_check();
        assert!((one - 1.0).abs() < 0.02, "identity check {one}");
    }

    #[test]
    fn laplace_ladder_converges() {
        let state = critical_state(profile(), 24).unwrap();
        let z = [0.8, 0.0, 0.0];
        let zp = [-0.8, 0.2, 0.0];
        let check = state
            .laplace_asymptotic_check(z, zp, 1.0, &[0.2, 0.1, 0.05])
            .unwrap();
        assert!(check.rows.iter().all(|r| !r.skipped));
        // first term vanishes along the ladder
        assert!(check.rows[2].first_term < check.rows[0].first_term);
        assert!(
            (check.richardson - check.target).abs() / check.target < 0.10,
            "richardson {} target {}",
            check.richardson,
            check.target
        );
        // doubling the transform parameter scales the target by 1/sqrt(2)
        let check2 = state
            .laplace_asymptotic_check(z, zp, 2.0, &[0.1])
            .unwrap();
        assert!((check2.target - check.target / 2.0f64.sqrt()).abs() < 1e-12 * check.target);
    }

    #[test]
    fn grid_guards() {
        assert!(build_operator(profile(), 1.0, 0.0, 8).is_err());
        assert!(matches!(
            build_operator(profile(), 1.0, 0.0, 200),
            Err(Error::Resource { .. })
        ));
    }

    #[test]
    fn semigroup_norm_bound_small_matrix() {
        // two particles on a one-dimensional grid; H = -|grad|^2/2 + V as a
        // dense symmetric matrix, ||exp(tH) u|| <= exp(t sup-Rayleigh) ||u||
        let prof = profile();
        let m = 12usize;
        let l = 3.0;
        let hgrid = 2.0 * l / m as f64;
        let dim = m * m;
        let mut mat = vec![0.0; dim * dim];
        let pos = |i: usize| -l + (i as f64 + 0.5) * hgrid;
        for i1 in 0..m {
            for i2 in 0..m {
                let row = i1 * m + i2;
                let mut diag = 0.0;
                // one-dimensional Laplacian in each coordinate, halved
                for (j1, j2) in [(i1.wrapping_sub(1), i2), (i1 + 1, i2), (i1, i2.wrapping_sub(1)), (i1, i2 + 1)] {
                    if j1 < m && j2 < m {
                        mat[row * dim + j1 * m + j2] += 0.5 / (hgrid * hgrid);
                    }
                    diag -= 0.5 / (hgrid * hgrid);
                }
                let beta = 1.5;
                mat[row * dim + row] += diag + beta * beta * prof.value((pos(i2) - pos(i1)).abs());
            }
        }
        // sup-Rayleigh by power iteration on H + shift
        let shift = 4.0 / (hgrid * hgrid) + 1.0;
        let mut v = vec![1.0; dim];
        let mut top = 0.0;
        for _ in 0..4000 {
            let mut w = vec![0.0; dim];
            for r in 0..dim {
                let mut acc = shift * v[r];
                for c in 0..dim {
                    acc += mat[r * dim + c] * v[c];
                }
                w[r] = acc;
            }
            let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            w.iter_mut().for_each(|x| *x /= n);
            top = n;
            v = w;
        }
        let sup_rayleigh = top - shift;
        // exp(tH) u by scaled series
        let t = 0.7;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let steps = 400usize;
        let dt = t / steps as f64;
        let mut x = u.clone();
        for _ in 0..steps {
            // fourth-order Taylor step of exp(dt H)
            let mut term = x.clone();
            let mut acc = x.clone();
            for k in 1..=4 {
                let mut nt = vec![0.0; dim];
                for r in 0..dim {
                    let mut s = 0.0;
                    for c in 0..dim {
                        s += mat[r * dim + c] * term[c];
                    }
                    nt[r] = s * dt / k as f64;
                }
                for (a, b) in acc.iter_mut().zip(&nt) {
                    *a += b;
                }
                term = nt;
            }
            x = acc;
        }
        let norm_u = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let norm_x = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(
            norm_x <= (t * sup_rayleigh).exp() * norm_u * (1.0 + 1e-6),
            "norm growth {} vs bound {}",
            norm_x / norm_u,
            (t * sup_rayleigh).exp()
        );
    }
}
