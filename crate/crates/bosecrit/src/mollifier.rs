//! Mollifier construction: the smooth bump, its self-convolution (the pair
//! interaction profile), rescalings, symmetric-decreasing rearrangement, and
//! the geometric support-shrinking constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{gl_integrate, simpson_table};

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    // 2 pi^(d/2) / Gamma(d/2), d >= 1
    let half = d as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(half) / gamma_fn(half)
}

fn gamma_fn(x: f64) -> f64 {
    // half-integer arguments only (x = d/2 with integer d >= 1)
    if (x - 1.0).abs() < 1e-12 {
        1.0
    } else if (x - 0.5).abs() < 1e-12 {
        std::f64::consts::PI.sqrt()
    } else {
        (x - 1.0) * gamma_fn(x - 1.0)
    }
}

/// A nonnegative, radially nonincreasing function sampled on a uniform radial
/// grid, identically zero beyond `support_radius`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadialProfile {
    pub dimension: usize,
    pub support_radius: f64,
    /// grid values at radii `i * step`, `i = 0..n`
    pub values: Vec<f64>,
    pub step: f64,
    pub total_integral: f64,
}

impl RadialProfile {
    /// Value at radius `r` by cubic interpolation of the table; zero beyond
    /// the support. Falls back to linear in the boundary cells.
    pub fn value(&self, r: f64) -> f64 {
        if r < 0.0 || r >= self.support_radius {
            return 0.0;
        }
        let x = r / self.step;
        let i = x.floor() as usize;
        if i + 1 >= self.values.len() {
            return 0.0;
        }
        let frac = x - i as f64;
        if i == 0 || i + 2 >= self.values.len() {
            return self.values[i] * (1.0 - frac) + self.values[i + 1] * frac;
        }
        // Catmull-Rom through the four surrounding samples
        let (p0, p1, p2, p3) =
            (self.values[i - 1], self.values[i], self.values[i + 1], self.values[i + 2]);
        let t = frac;
        0.5 * ((2.0 * p1)
            + (-p0 + p2) * t
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
            + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
    }

    pub fn grid_radius(&self) -> f64 {
        self.step * (self.values.len() - 1) as f64
    }

    /// `integral of f over R^d` by Simpson quadrature of the radial table.
    pub fn radial_integral(&self) -> f64 {
        let d = self.dimension;
        let vals: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| v * (i as f64 * self.step).powi(d as i32 - 1))
            .collect();
        let n = if vals.len() % 2 == 1 { vals.len() } else { vals.len() - 1 };
        sphere_area(d) * simpson_table(&vals[..n], self.step)
    }

    /// Pointwise mass rescaling (the scale knob used by the fractional-moment
    /// reduction); the unit-mass invariant intentionally does not apply.
    pub fn scale_mass(&self, s: f64) -> RadialProfile {
        RadialProfile {
            dimension: self.dimension,
            support_radius: self.support_radius,
            values: self.values.iter().map(|v| v * s).collect(),
            step: self.step,
            total_integral: self.total_integral * s,
        }
    }

    /// CSV table `radius,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("radius,value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{:.12e},{:.12e}\n", i as f64 * self.step, v));
        }
        out
    }
}

/// Build the normalized smooth bump of support radius `r_phi`:
/// `phi(x) = c exp(-1/(1-|x/r_phi|^2))` on `|x| < r_phi`, with `int phi = 1`.
///
/// The table spans `[0, 2 r_phi]` so the self-convolution lives on the same grid.
pub fn build_bump(r_phi: f64, grid_n: usize, dimension: usize) -> Result<RadialProfile> {
    if !(r_phi > 0.0) {
        return Err(Error::Domain(format!("support radius must be positive, got {r_phi}")));
    }
    if grid_n < 64 {
        return Err(Error::Config(format!("radial grid too small ({grid_n} < 64)")));
    }
    if dimension < 3 {
        return Err(Error::Domain(format!("dimension must be at least 3, got {dimension}")));
    }
    let n = if grid_n % 2 == 0 { grid_n } else { grid_n + 1 };
    let step = 2.0 * r_phi / n as f64;
    let raw = |r: f64| -> f64 {
        let u = r / r_phi;
        if u >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - u * u)).exp()
        }
    };
    // normalization by Gauss-Legendre on [0, r_phi]; the integrand vanishes to
    // all orders at the outer endpoint
    let mass = sphere_area(dimension)
        * gl_integrate(|r| raw(r) * r.powi(dimension as i32 - 1), 0.0, r_phi, 200);
    let c = 1.0 / mass;
    let values: Vec<f64> = (0..=n).map(|i| c * raw(i as f64 * step)).collect();
    Ok(RadialProfile {
        dimension,
        support_radius: r_phi,
        values,
        step,
        total_integral: 1.0,
    })
}

/// Self-convolution of a radial profile in three dimensions.
///
/// Uses the shell reduction
/// `(f*f)(r) = (2 pi / r) int_0^inf s f(s) [H(r+s) - H(|r-s|)] ds` with
/// `H(u) = int_0^u t f(t) dt`, and `(f*f)(0) = 4 pi int s^2 f(s)^2 ds`.
/// The support doubles.
pub fn self_convolve(phi: &RadialProfile) -> Result<RadialProfile> {
    if phi.dimension != 3 {
        return Err(Error::Domain(
            "radial self-convolution is implemented for dimension 3 only".into(),
        ));
    }
    let n = phi.values.len() - 1;
    let step = phi.step;
    let out_support = 2.0 * phi.support_radius;
    // cumulative H on a refined grid via per-cell Simpson
    let fine = 4usize;
    let fstep = step / fine as f64;
    let m = n * fine;
    let tf: Vec<f64> = (0..=m).map(|i| {
        let t = i as f64 * fstep;
        t * phi.value(t)
    }).collect();
    let mut cum = vec![0.0; m + 1];
    for i in 0..m {
        // Simpson on the subcell
        let a = i as f64 * fstep;
        let mid = a + 0.5 * fstep;
        cum[i + 1] = cum[i] + fstep / 6.0 * (tf[i] + 4.0 * mid * phi.value(mid) + tf[i + 1]);
    }
    // radii below are always integer multiples of the fine step, so the
    // cumulative is looked up exactly, never interpolated
    let h_at = |idx: isize| -> f64 {
        if idx <= 0 {
            0.0
        } else {
            cum[(idx as usize).min(m)]
        }
    };

    let out_n = n;
    let out_step = out_support / out_n as f64;
    let out_stride = (out_step / fstep).round() as isize;
    let mut values = vec![0.0; out_n + 1];
    // r = 0 limit
    let zeros: Vec<f64> = (0..=m)
        .map(|i| {
            let s = i as f64 * fstep;
            let v = phi.value(s);
            s * s * v * v
        })
        .collect();
    values[0] = 4.0 * std::f64::consts::PI * simpson_table(&zeros, fstep);
    for (j, slot) in values.iter_mut().enumerate().skip(1) {
        let r = j as f64 * out_step;
        if r >= out_support {
            *slot = 0.0;
            continue;
        }
        let rj = j as isize * out_stride;
        let integrand: Vec<f64> = (0..=m)
            .map(|i| {
                let s = i as f64 * fstep;
                s * phi.value(s) * (h_at(rj + i as isize) - h_at((rj - i as isize).abs()))
            })
            .collect();
        *slot = 2.0 * std::f64::consts::PI / r * simpson_table(&integrand, fstep);
    }
    // clamp interpolation noise
    for v in values.iter_mut() {
        if *v < 0.0 && *v > -1e-14 {
            *v = 0.0;
        }
    }
    let mut out = RadialProfile {
        dimension: 3,
        support_radius: out_support,
        values,
        step: out_step,
        total_integral: 0.0,
    };
    out.total_integral = out.radial_integral();
    Ok(out)
}

/// Noise-strength rescaling `beta * eps^((d-2)/2)`.
pub fn beta_eps(beta: f64, eps: f64, d: usize) -> f64 {
    beta * eps.powf((d as f64 - 2.0) / 2.0)
}

/// Support shrink rate `c = (1 - 2^{-d})^{1/d}`.
pub fn shrink_rate(d: usize) -> f64 {
    (1.0 - 0.5f64.powi(d as i32)).powf(1.0 / d as f64)
}

/// Shrunken support radius after `k` halving steps: `c^k * l0`.
pub fn theta_support(k: u32, l0: f64, d: usize) -> f64 {
    shrink_rate(d).powi(k as i32) * l0
}

/// Smallest `k` with `theta_support(k, l0, d) <= target`.
pub fn min_shrink_steps(l0: f64, target: f64, d: usize) -> u32 {
    let mut k = 0;
    while theta_support(k, l0, d) > target {
        k += 1;
        assert!(k < 10_000, "shrink iteration runaway");
    }
    k
}

/// Nonnegative function on a cubical grid in `R^3`, cell centers at
/// `(i - (n-1)/2) h` per axis.
#[derive(Debug, Clone)]
pub struct CubeGrid {
    pub n: usize,
    pub h: f64,
    pub values: Vec<f64>,
}

impl CubeGrid {
    pub fn from_fn<F: Fn(f64, f64, f64) -> f64>(n: usize, h: f64, f: F) -> CubeGrid {
        let c = (n as f64 - 1.0) / 2.0;
        let mut values = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    values.push(f(
                        (i as f64 - c) * h,
                        (j as f64 - c) * h,
                        (k as f64 - c) * h,
                    ));
                }
            }
        }
        CubeGrid { n, h, values }
    }

    pub fn cell_radius(&self, flat: usize) -> f64 {
        let c = (self.n as f64 - 1.0) / 2.0;
        let k = flat % self.n;
        let j = (flat / self.n) % self.n;
        let i = flat / (self.n * self.n);
        let x = (i as f64 - c) * self.h;
        let y = (j as f64 - c) * self.h;
        let z = (k as f64 - c) * self.h;
        (x * x + y * y + z * z).sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.h.powi(3)
    }
}

/// Symmetric-decreasing rearrangement on the cubical grid.
///
/// Cell values are sorted descending (ties broken by radius) and refilled
/// into cells ordered by increasing distance from the origin, so every
/// discrete super-level set becomes the best ball approximation of equal
/// cell count.
pub fn rearrange(f: &CubeGrid) -> Result<CubeGrid> {
    if f.values.iter().any(|v| *v < 0.0) {
        return Err(Error::Domain("rearrangement requires a nonnegative function".into()));
    }
    let m = f.values.len();
    let mut by_radius: Vec<usize> = (0..m).collect();
    by_radius.sort_by(|&a, &b| f.cell_radius(a).partial_cmp(&f.cell_radius(b)).unwrap().then(a.cmp(&b)));
    let mut vals: Vec<(f64, f64)> = f
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| (*v, f.cell_radius(i)))
        .collect();
    vals.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.partial_cmp(&b.1).unwrap()));
    let mut out = vec![0.0; m];
    for (slot, (v, _)) in by_radius.iter().zip(vals) {
        out[*slot] = v;
    }
    Ok(CubeGrid { n: f.n, h: f.h, values: out })
}
