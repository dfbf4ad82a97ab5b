//! Monte Carlo estimators for the pairwise-weighted moment functionals:
//! free and pinned multi-particle Brownian ensembles carrying the exponential
//! of the accumulated pair interaction.
//!
//! Every estimator draws per-path randomness from a counter-based stream
//! (seed plus path index), collects per-path values into an indexed buffer,
//! and reduces by pairwise summation, so results are bitwise reproducible for
//! a fixed seed at any thread count.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mollifier::RadialProfile;
use crate::quad::{gl_integrate, mean_and_stderr, pairwise_sum};

/// Monte Carlo run parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub antithetic: bool,
}

impl McConfig {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.n_paths < 100 {
            return Err(Error::Config(format!("need at least 100 paths, got {}", self.n_paths)));
        }
        if !(self.dt > 0.0) || self.dt > horizon / 50.0 {
            return Err(Error::Config(format!(
                "step {} too coarse for horizon {horizon} (need dt <= horizon/50)",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Estimate with its sampling uncertainty and effective sample size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_effective: f64,
    pub horizon: f64,
    pub seed: u64,
}

/// Initial datum of the moment functional.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum InitialDatum {
    Flat,
    Gaussian(f64),
}

fn gauss3(t: f64, d2: f64) -> f64 {
    (2.0 * std::f64::consts::PI * t).powf(-1.5) * (-d2 / (2.0 * t)).exp()
}

fn norm2(v: [f64; 3]) -> f64 {
    v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_add(1));
    rng
}

fn effective_samples(values: &[f64]) -> f64 {
    let s1: f64 = pairwise_sum(&values.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let s2: f64 = pairwise_sum(&values.iter().map(|v| v * v).collect::<Vec<_>>());
    if s2 == 0.0 {
        values.len() as f64
    } else {
        s1 * s1 / s2
    }
}

fn finish(values: Vec<f64>, horizon: f64, seed: u64) -> MomentEstimate {
    let (mean, stderr) = mean_and_stderr(&values);
    MomentEstimate { mean, stderr, n_effective: effective_samples(&values), horizon, seed }
}

fn sample_ball(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 3] {
    loop {
        let x: f64 = rng.gen_range(-1.0..1.0);
        let y: f64 = rng.gen_range(-1.0..1.0);
        let z: f64 = rng.gen_range(-1.0..1.0);
        if x * x + y * y + z * z < 1.0 {
            return [x * radius, y * radius, z * radius];
        }
    }
}

fn gaussian3(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let u: f64 = rng.gen_range(1e-300..1.0f64);
    let v: f64 = rng.gen::<f64>();
    let w: f64 = rng.gen_range(1e-300..1.0f64);
    let x: f64 = rng.gen::<f64>();
    let r = (-2.0 * u.ln()).sqrt();
    let r2 = (-2.0 * w.ln()).sqrt();
    let a = 2.0 * std::f64::consts::PI * v;
    let b = 2.0 * std::f64::consts::PI * x;
    [r * a.cos(), r * a.sin(), r2 * b.cos()]
}

fn pair_sum(profile: &RadialProfile, eps: f64, positions: &[[f64; 3]]) -> f64 {
    let n = positions.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = [
                positions[j][0] - positions[i][0],
                positions[j][1] - positions[i][1],
                positions[j][2] - positions[i][2],
            ];
            acc += profile.value(norm2(d).sqrt() / eps);
        }
    }
    acc / (eps * eps * eps)
}

/// Moment of the mollified field: Monte Carlo average of
/// `exp(beta_eps^2 int sum_pairs R_eps) U0(B_t(1)) ... U0(B_t(N))`
/// over free Brownian paths started at `x0`.
pub fn simulate_moment(
    n_particles: usize,
    beta: f64,
    eps: f64,
    t: f64,
    x0: &[[f64; 3]],
    u0: InitialDatum,
    profile: &RadialProfile,
    cfg: &McConfig,
) -> Result<MomentEstimate> {
    if n_particles < 2 || x0.len() != n_particles {
        return Err(Error::Config("need one start point per particle, at least two".into()));
    }
    if !(eps > 0.0) || !(t > 0.0) {
        return Err(Error::Domain("scale and horizon must be positive".into()));
    }
    cfg.validate(t)?;
    let steps = (t / cfg.dt).ceil() as usize;
    let dt = t / steps as f64;
    let be2 = crate::mollifier::beta_eps(beta, eps, 3).powi(2);
    let samples = if cfg.antithetic { cfg.n_paths / 2 } else { cfg.n_paths };
    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p as u64);
            let mut acc = 0.0;
            let reps = if cfg.antithetic { 2 } else { 1 };
            // regenerate the same increments with flipped sign for the pair
            for rep in 0..reps {
                let sign = if rep == 0 { 1.0 } else { -1.0 };
                let mut rng_rep = rng.clone();
                let mut pos = x0.to_vec();
                let mut f_prev = pair_sum(profile, eps, &pos);
                let mut integral = 0.0;
                for _ in 0..steps {
                    for q in pos.iter_mut() {
                        let g = gaussian3(&mut rng_rep);
                        for (c, gi) in q.iter_mut().zip(g) {
                            *c += sign * gi * dt.sqrt();
                        }
                    }
                    let f_cur = pair_sum(profile, eps, &pos);
                    integral += 0.5 * (f_prev + f_cur) * dt;
                    f_prev = f_cur;
                }
                let endpoint = match u0 {
                    InitialDatum::Flat => 1.0,
                    InitialDatum::Gaussian(nu) => {
                        pos.iter().map(|q| gauss3(nu, norm2(*q))).product()
                    }
                };
                acc += (be2 * integral).exp() * endpoint;
            }
            let _ = &mut rng;
            acc / reps as f64
        })
        .collect();
    Ok(finish(values, t, cfg.seed))
}

/// Pinned-path kernel estimate `Q_T(x, z)`: bridge sampling of the pair weight
/// times the free transition density.
pub fn simulate_rescaled_semigroup(
    n_particles: usize,
    beta: f64,
    big_t: f64,
    x: &[[f64; 3]],
    z: &[[f64; 3]],
    profile: &RadialProfile,
    cfg: &McConfig,
) -> Result<MomentEstimate> {
    if x.len() != n_particles || z.len() != n_particles {
        return Err(Error::Config("endpoint lists must match the particle count".into()));
    }
    cfg.validate(big_t)?;
    let steps = (big_t / cfg.dt).ceil() as usize;
    let dt = big_t / steps as f64;
    let b2 = beta * beta;
    let mut g_free = 1.0;
    for (a, b) in x.iter().zip(z) {
        let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        g_free *= gauss3(big_t, norm2(d));
    }
    let samples = if cfg.antithetic { cfg.n_paths / 2 } else { cfg.n_paths };
    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|p| {
            let rng = path_rng(cfg.seed, p as u64);
            let reps = if cfg.antithetic { 2 } else { 1 };
            let mut acc = 0.0;
            for rep in 0..reps {
                let sign = if rep == 0 { 1.0 } else { -1.0 };
                let mut rng_rep = rng.clone();
                let mut pos = x.to_vec();
                let mut f_prev = pair_sum(profile, 1.0, &pos);
                let mut integral = 0.0;
                for s in 0..steps {
                    let remain = big_t - s as f64 * dt;
                    let pull = dt / remain;
                    let sd = (dt * (remain - dt).max(0.0) / remain).sqrt();
                    for (q, zq) in pos.iter_mut().zip(z) {
                        let g = gaussian3(&mut rng_rep);
                        for c in 0..3 {
                            q[c] += (zq[c] - q[c]) * pull + sign * g[c] * sd;
                        }
                    }
                    let f_cur = pair_sum(profile, 1.0, &pos);
                    integral += 0.5 * (f_prev + f_cur) * dt;
                    f_prev = f_cur;
                }
                acc += (b2 * integral).exp();
            }
            acc / reps as f64
        })
        .collect();
    let mut est = finish(values, big_t, cfg.seed);
    est.mean *= g_free;
    est.stderr *= g_free;
    Ok(est)
}

/// Quadratic form of the pinned kernel against the product ball indicator of
/// radius `ell`: both endpoints uniform over the support, importance-corrected
/// by the support volumes.
pub fn quadratic_form_theta(
    n_particles: usize,
    beta: f64,
    big_t: f64,
    ell: f64,
    profile: &RadialProfile,
    cfg: &McConfig,
) -> Result<MomentEstimate> {
    if !(ell > 0.0) {
        return Err(Error::Config("support radius must be positive".into()));
    }
    cfg.validate(big_t)?;
    let steps = (big_t / cfg.dt).ceil() as usize;
    let dt = big_t / steps as f64;
    let b2 = beta * beta;
    let ball_vol = 4.0 / 3.0 * std::f64::consts::PI * ell.powi(3);
    let vol2 = ball_vol.powi(2 * n_particles as i32);
    let values: Vec<f64> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p as u64);
            let x: Vec<[f64; 3]> = (0..n_particles).map(|_| sample_ball(&mut rng, ell)).collect();
            let z: Vec<[f64; 3]> = (0..n_particles).map(|_| sample_ball(&mut rng, ell)).collect();
            let mut g_free = 1.0;
            for (a, b) in x.iter().zip(&z) {
                let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
                g_free *= gauss3(big_t, norm2(d));
            }
            let mut pos = x;
            let mut f_prev = pair_sum(profile, 1.0, &pos);
            let mut integral = 0.0;
            for s in 0..steps {
                let remain = big_t - s as f64 * dt;
                let pull = dt / remain;
                let sd = (dt * (remain - dt).max(0.0) / remain).sqrt();
                for (q, zq) in pos.iter_mut().zip(&z) {
                    let g = gaussian3(&mut rng);
                    for c in 0..3 {
                        q[c] += (zq[c] - q[c]) * pull + g[c] * sd;
                    }
                }
                let f_cur = pair_sum(profile, 1.0, &pos);
                integral += 0.5 * (f_prev + f_cur) * dt;
                f_prev = f_cur;
            }
            vol2 * g_free * (b2 * integral).exp()
        })
        .collect();
    Ok(finish(values, big_t, cfg.seed))
}

/// Open-ended estimator of the same quadratic form with an optional inward
/// drift on the pair separation (two particles only). The drift changes only
/// the sampling law; the exact per-step likelihood ratio keeps the estimator
/// unbiased, and a pull calibrated to the bound-state decay keeps the variance
/// workable deep in the growth regime.
pub fn quadratic_form_theta_tilted(
    beta: f64,
    big_t: f64,
    ell: f64,
    kappa: f64,
    soften: f64,
    profile: &RadialProfile,
    cfg: &McConfig,
) -> Result<MomentEstimate> {
    cfg.validate(big_t)?;
    let steps = (big_t / cfg.dt).ceil() as usize;
    let dt = big_t / steps as f64;
    let b2 = beta * beta;
    let sqrt2 = 2.0f64.sqrt();
    let ball_vol = 4.0 / 3.0 * std::f64::consts::PI * ell.powi(3);
    let vol = ball_vol * ball_vol;
    let values: Vec<f64> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p as u64);
            let x1 = sample_ball(&mut rng, ell);
            let x2 = sample_ball(&mut rng, ell);
            let mut s = [0.0f64; 3];
            let mut y = [0.0f64; 3];
            for c in 0..3 {
                s[c] = (x1[c] + x2[c]) / sqrt2;
                y[c] = (x2[c] - x1[c]) / sqrt2;
            }
            let mut log_lr = 0.0;
            let mut f_prev = profile.value(sqrt2 * norm2(y).sqrt());
            let mut integral = 0.0;
            let sdt = dt.sqrt();
            for _ in 0..steps {
                let gs = gaussian3(&mut rng);
                let gy = gaussian3(&mut rng);
                let scale = -kappa / (norm2(y) + soften * soften).sqrt();
                let mu = [scale * y[0], scale * y[1], scale * y[2]];
                for c in 0..3 {
                    s[c] += gs[c] * sdt;
                    let dy = mu[c] * dt + gy[c] * sdt;
                    y[c] += dy;
                    log_lr += -dy * mu[c] + 0.5 * mu[c] * mu[c] * dt;
                }
                let f_cur = profile.value(sqrt2 * norm2(y).sqrt());
                integral += 0.5 * (f_prev + f_cur) * dt;
                f_prev = f_cur;
            }
            let mut end1 = [0.0f64; 3];
            let mut end2 = [0.0f64; 3];
            for c in 0..3 {
                end1[c] = (s[c] - y[c]) / sqrt2;
                end2[c] = (s[c] + y[c]) / sqrt2;
            }
            if norm2(end1).sqrt() < ell && norm2(end2).sqrt() < ell {
                vol * (b2 * integral + log_lr).exp()
            } else {
                0.0
            }
        })
        .collect();
    Ok(finish(values, big_t, cfg.seed))
}

/// Slope of the logarithmic growth of the quadratic form along a horizon grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthRow {
    pub beta: f64,
    pub slope: f64,
    pub slope_err: f64,
    pub reliable: bool,
    pub points: Vec<(f64, f64, f64)>,
}

/// Least-squares slope of `log` of the quadratic form over the horizon grid;
/// `tilt` optionally supplies the drift strength per coupling (two particles).
pub fn growth_probe(
    n_particles: usize,
    beta_list: &[f64],
    t_grid: &[f64],
    ell: f64,
    profile: &RadialProfile,
    cfg: &McConfig,
    tilt: &[Option<f64>],
) -> Result<Vec<GrowthRow>> {
    if t_grid.len() < 4 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("need an increasing horizon grid with at least 4 points".into()));
    }
    if tilt.len() != beta_list.len() {
        return Err(Error::Config("one tilt entry per coupling".into()));
    }
    let mut rows = Vec::new();
    for (bi, &beta) in beta_list.iter().enumerate() {
        let mut pts = Vec::new();
        let mut reliable = true;
        for (ti, &t) in t_grid.iter().enumerate() {
            let sub = McConfig { seed: cfg.seed.wrapping_add(1000 * bi as u64 + ti as u64), ..*cfg };
            let est = match tilt[bi] {
                Some(kappa) if n_particles == 2 => quadratic_form_theta_tilted(
                    beta,
                    t,
                    ell,
                    kappa,
                    0.5,
                    profile,
                    &sub,
                )?,
                _ => quadratic_form_theta(n_particles, beta, t, ell, profile, &sub)?,
            };
            if est.n_effective < 100.0 || est.mean <= 0.0 {
                reliable = false;
            }
            if est.mean > 0.0 {
                pts.push((t, est.mean.ln(), (est.stderr / est.mean).max(1e-12)));
            }
        }
        if pts.len() < 2 {
            rows.push(GrowthRow { beta, slope: f64::NAN, slope_err: f64::NAN, reliable: false, points: pts });
            continue;
        }
        // weighted least squares in (t, log value)
        let wsum: f64 = pts.iter().map(|p| 1.0 / (p.2 * p.2)).sum();
        let tbar: f64 = pts.iter().map(|p| p.0 / (p.2 * p.2)).sum::<f64>() / wsum;
        let ybar: f64 = pts.iter().map(|p| p.1 / (p.2 * p.2)).sum::<f64>() / wsum;
        let sxx: f64 = pts.iter().map(|p| (p.0 - tbar).powi(2) / (p.2 * p.2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - tbar) * (p.1 - ybar) / (p.2 * p.2)).sum();
        rows.push(GrowthRow {
            beta,
            slope: sxy / sxx,
            slope_err: sxx.powf(-0.5),
            reliable,
            points: pts,
        });
    }
    Ok(rows)
}

/// Radial heat smearing `(G_v * g)(r)` for a radial `g` supported on
/// `[0, s_max]`, via the one-dimensional image representation.
fn radial_smear<F: Fn(f64) -> f64>(v: f64, g: &F, s_max: f64, r: f64) -> f64 {
    if r < 1e-8 {
        // concentric limit
        return gl_integrate(
            |s| 4.0 * std::f64::consts::PI * s * s * gauss3(v, s * s) * g(s),
            0.0,
            s_max,
            160,
        );
    }
    let c = 1.0 / (r * (2.0 * std::f64::consts::PI * v).sqrt());
    gl_integrate(
        |s| {
            let a = (-(r - s) * (r - s) / (2.0 * v)).exp();
            let b = (-(r + s) * (r + s) / (2.0 * v)).exp();
            s * g(s) * (a - b)
        },
        0.0,
        s_max,
        160,
    ) * c
}

/// Deterministic quadrature of the order-`k` series term of the two-particle
/// relative-motion functional with flat datum:
/// `beta^{2k} int_{0<v_1<..<v_k<T} E[prod R(sqrt2 W_{v_j})]` for a standard
/// Brownian `W` started at distance `r0`.
pub fn series_term_quadrature(
    beta: f64,
    big_t: f64,
    k: usize,
    r0: f64,
    profile: &RadialProfile,
) -> Result<f64> {
    let s_max = profile.support_radius / 2.0f64.sqrt();
    let g = |s: f64| profile.value(2.0f64.sqrt() * s);
    match k {
        0 => Ok(1.0),
        1 => Ok(beta * beta
            * gl_integrate(|v| radial_smear(v, &g, s_max, r0), 1e-9, big_t, 200)),
        2 => {
            let b4 = beta.powi(4);
            // inner state after the first contact, smoothed over the second leg
            let outer = gl_integrate(
                |v1| {
                    let inner = gl_integrate(
                        |u| {
                            // u = v2 - v1
                            let gq = |s: f64| g(s) * radial_smear(u, &g, s_max, s);
                            radial_smear(v1, &gq, s_max, r0) / radial_smear_norm()
                        },
                        1e-9,
                        big_t - v1,
                        64,
                    );
                    inner
                },
                1e-9,
                big_t,
                64,
            );
            Ok(b4 * outer)
        }
        _ => Err(Error::Config("series terms implemented for orders 0..=2".into())),
    }
}

// placeholder normalization (identity); keeps the nested closure readable
fn radial_smear_norm() -> f64 {
    1.0
}

/// Truncated-horizon pair functional
/// `int dz beta^2 R(sqrt2 z) E_z[exp(beta^2 int_0^T R(sqrt2 B))]`
/// by uniform sampling of the entry point over the interaction support.
pub fn exponential_functional_mc(
    beta: f64,
    big_t: f64,
    profile: &RadialProfile,
    cfg: &McConfig,
) -> Result<MomentEstimate> {
    cfg.validate(big_t)?;
    let steps = (big_t / cfg.dt).ceil() as usize;
    let dt = big_t / steps as f64;
    let b2 = beta * beta;
    let sqrt2 = 2.0f64.sqrt();
    let radius = profile.support_radius / sqrt2;
    let vol = 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
    let values: Vec<f64> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p as u64);
            let mut pos = sample_ball(&mut rng, radius);
            let weight0 = b2 * profile.value(sqrt2 * norm2(pos).sqrt());
            let mut f_prev = profile.value(sqrt2 * norm2(pos).sqrt());
            let mut integral = 0.0;
            let sdt = dt.sqrt();
            for _ in 0..steps {
                let gstep = gaussian3(&mut rng);
                for c in 0..3 {
                    pos[c] += gstep[c] * sdt;
                }
                let f_cur = profile.value(sqrt2 * norm2(pos).sqrt());
                integral += 0.5 * (f_prev + f_cur) * dt;
                f_prev = f_cur;
            }
            vol * weight0 * (b2 * integral).exp()
        })
        .collect();
    Ok(finish(values, big_t, cfg.seed))
}

/// Closed Gaussian value of the ball quadratic form at zero coupling:
/// per-particle factor `int int_{B x B} G_T(x - z) dx dz`, evaluated through
/// the equal-radius sphere overlap volume.
pub fn theta_form_free_value(n_particles: usize, big_t: f64, ell: f64) -> f64 {
    let overlap = |s: f64| {
        if s >= 2.0 * ell {
            0.0
        } else {
            std::f64::consts::PI / 12.0 * (4.0 * ell + s) * (2.0 * ell - s).powi(2)
        }
    };
    let q = gl_integrate(
        |s| 4.0 * std::f64::consts::PI * s * s * gauss3(big_t, s * s) * overlap(s),
        0.0,
        2.0 * ell,
        200,
    );
    q.powi(n_particles as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mollifier::{build_bump, self_convolve};

    fn profile() -> &'static RadialProfile {
        use std::sync::OnceLock;
        static P: OnceLock<RadialProfile> = OnceLock::new();
        P.get_or_init(|| self_convolve(&build_bump(1.0, 2048, 3).unwrap()).unwrap())
    }

    fn cfg(n: usize, dt: f64, seed: u64) -> McConfig {
        McConfig { n_paths: n, dt, seed, antithetic: true }
    }

    #[test]
    fn config_guards() {
        assert!(cfg(10, 0.01, 1).validate(1.0).is_err());
        assert!(cfg(1000, 0.05, 1).validate(1.0).is_err());
        assert!(cfg(1000, 0.02, 1).validate(1.0).is_ok());
    }

    #[test]
    fn zero_coupling_matches_closed_gaussian() {
        let x0 = vec![[0.2, 0.0, 0.0], [0.0, 0.3, 0.0], [-0.1, 0.0, 0.2]];
        let nu = 0.8;
        let est = simulate_moment(
            3,
            0.0,
            0.5,
            1.0,
            &x0,
            InitialDatum::Gaussian(nu),
            profile(),
            &cfg(20_000, 0.02, 7),
        )
        .unwrap();
        let expect: f64 = x0.iter().map(|q| gauss3(1.0 + nu, norm2(*q))).product();
        assert!(
            (est.mean - expect).abs() <= 3.0 * est.stderr,
            "{} vs {expect} (3se {})",
            est.mean,
            3.0 * est.stderr
        );
        // flat datum at zero coupling is exactly one
        let flat = simulate_moment(
            2,
            0.0,
            0.5,
            1.0,
            &x0[..2],
            InitialDatum::Flat,
            profile(),
            &cfg(2000, 0.02, 7),
        )
        .unwrap();
        assert!((flat.mean - 1.0).abs() < 1e-12 && flat.stderr < 1e-12);
    }

    #[test]
    fn estimates_deterministic_and_monotone_in_coupling() {
        let x0 = vec![[0.1, 0.0, 0.0], [0.0, 0.1, 0.0]];
        let run = |beta: f64| {
            simulate_moment(
                2,
                beta,
                0.5,
                1.0,
                &x0,
                InitialDatum::Flat,
                profile(),
                &cfg(4000, 0.02, 42),
            )
            .unwrap()
        };
        let a = run(0.8);
        let b = run(0.8);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        // common random numbers: monotone in the coupling
        let ladder: Vec<f64> = [0.0, 0.5, 1.0, 1.5].iter().map(|&b| run(b).mean).collect();
        for w in ladder.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn dt_refinement_within_one_stderr() {
        // the same Brownian path at two resolutions isolates the trapezoid bias
        let prof = profile();
        let eps = 0.5;
        let t = 1.0;
        let be2 = crate::mollifier::beta_eps(1.0, eps, 3).powi(2);
        let fine_steps = 400usize;
        let dt_f = t / fine_steps as f64;
        let x0 = [[0.1, 0.0, 0.0], [0.0, 0.1, 0.0]];
        let rows: Vec<(f64, f64)> = (0..40_000usize)
            .into_par_iter()
            .map(|p| {
                let mut rng = path_rng(11, p as u64);
                let mut pos = x0.to_vec();
                let mut f = vec![pair_sum(prof, eps, &pos)];
                for _ in 0..fine_steps {
                    for q in pos.iter_mut() {
                        let g = gaussian3(&mut rng);
                        for (c, gi) in q.iter_mut().zip(g) {
                            *c += gi * dt_f.sqrt();
                        }
                    }
                    f.push(pair_sum(prof, eps, &pos));
                }
                let trap = |stride: usize| -> f64 {
                    let dt = dt_f * stride as f64;
                    let mut acc = 0.0;
                    let mut i = 0;
                    while i + stride < f.len() {
                        acc += 0.5 * (f[i] + f[i + stride]) * dt;
                        i += stride;
                    }
                    (be2 * acc).exp()
                };
                (trap(2), trap(1))
            })
            .collect();
        let coarse: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let fine: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let (mc, se) = mean_and_stderr(&coarse);
        let (mf, _) = mean_and_stderr(&fine);
        assert!((mc - mf).abs() <= se, "bias {} vs stderr {se}", (mc - mf).abs());
    }

    #[test]
    fn bridge_kernel_symmetric_and_free_limit() {
        let x = vec![[0.3, 0.0, 0.0], [0.0, -0.2, 0.1]];
        let z = vec![[-0.2, 0.1, 0.0], [0.1, 0.3, -0.1]];
        let c = cfg(20_000, 0.02, 3);
        let zero = simulate_rescaled_semigroup(2, 0.0, 1.5, &x, &z, profile(), &c).unwrap();
        let mut g = 1.0;
        for (a, b) in x.iter().zip(&z) {
            let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            g *= gauss3(1.5, norm2(d));
        }
        assert!((zero.mean - g).abs() < 1e-12 * g);
        let fwd = simulate_rescaled_semigroup(2, 1.5, 1.5, &x, &z, profile(), &c).unwrap();
        let bwd = simulate_rescaled_semigroup(2, 1.5, 1.5, &z, &x, profile(), &c).unwrap();
        let tol = 3.0 * (fwd.stderr + bwd.stderr);
        assert!((fwd.mean - bwd.mean).abs() <= tol);
        // positive coupling only increases the kernel
        assert!(fwd.mean >= zero.mean - 3.0 * fwd.stderr);
    }

    #[test]
    fn theta_form_free_value_matches_mc() {
        let est = quadratic_form_theta(2, 0.0, 1.0, 0.5, profile(), &cfg(60_000, 0.02, 19)).unwrap();
        let closed = theta_form_free_value(2, 1.0, 0.5);
        assert!(
            (est.mean - closed).abs() <= 3.0 * est.stderr,
            "{} vs {closed} ({} se)",
            est.mean,
            (est.mean - closed).abs() / est.stderr
        );
    }

    #[test]
    fn series_terms_and_mc_agree_at_small_coupling() {
        let prof = profile();
        // image formula against a direct two-dimensional quadrature at k = 1
        let g = |s: f64| prof.value(2.0f64.sqrt() * s);
        let r0 = 0.3;
        let direct = gl_integrate(
            |v| {
                2.0 * std::f64::consts::PI
                    * gl_integrate(
                        |s| {
                            s * s
                                * g(s)
                                * gl_integrate(
                                    |th| {
                                        let d2 = r0 * r0 + s * s - 2.0 * r0 * s * th.cos();
                                        th.sin() * gauss3(v, d2)
                                    },
                                    0.0,
                                    std::f64::consts::PI,
                                    64,
                                )
                        },
                        0.0,
                        prof.support_radius / 2.0f64.sqrt(),
                        96,
                    )
            },
            1e-9,
            4.0,
            96,
        );
        let k1 = series_term_quadrature(1.0, 4.0, 1, r0, prof).unwrap();
        assert!((k1 - direct).abs() < 1e-6 * direct.max(1.0), "{k1} vs {direct}");

        // Monte Carlo at weak coupling against the first terms plus remainder
        let beta = 0.35 * 3.2129;
        let eps = 0.5;
        let t = 1.0;
        let big_t = t / (eps * eps);
        let sep = 0.3 * 2.0f64.sqrt() * eps; // start separation |x2 - x1|
        let x0 = vec![[0.0, 0.0, 0.0], [sep, 0.0, 0.0]];
        let mc = simulate_moment(
            2,
            beta,
            eps,
            t,
            &x0,
            InitialDatum::Flat,
            profile(),
            &cfg(200_000, 0.01, 23),
        )
        .unwrap();
        let t1 = series_term_quadrature(beta, big_t, 1, r0, prof).unwrap();
        let t2 = series_term_quadrature(beta, big_t, 2, r0, prof).unwrap();
        let partial = 1.0 + t1 + t2;
        let remainder = t2 * (t2 / t1) / (1.0 - t2 / t1);
        assert!(
            (mc.mean - partial).abs() <= (0.05 * mc.mean).max(remainder + 3.0 * mc.stderr),
            "mc {} vs partial {partial} (remainder {remainder})",
            mc.mean
        );
        // partial sums from below within the sampling error
        assert!(partial <= mc.mean + 3.0 * mc.stderr);
    }

    #[test]
    fn rescaling_identity_between_estimators() {
        // moment at scale eps equals the pinned-kernel integral at T = eps^{-2}
        let beta = 1.2;
        let eps = 0.5;
        let t = 1.0;
        let big_t = t / (eps * eps);
        let x0 = vec![[0.15, 0.0, 0.0], [-0.15, 0.0, 0.0]];
        let nu = 1.0;
        let lhs = simulate_moment(
            2,
            beta,
            eps,
            t,
            &x0,
            InitialDatum::Gaussian(nu),
            profile(),
            &cfg(60_000, 0.01, 31),
        )
        .unwrap();
        // sample z around x and average the bridge weight times the datum
        let sqrt_t = big_t.sqrt();
        let inner_cfg = cfg(200, 0.05, 77);
        let outer = 500usize;
        let values: Vec<f64> = (0..outer)
            .map(|i| {
                let mut rng = path_rng(901, i as u64);
                let z: Vec<[f64; 3]> = x0
                    .iter()
                    .map(|q| {
                        let g = gaussian3(&mut rng);
                        [q[0] + g[0], q[1] + g[1], q[2] + g[2]]
                    })
                    .collect();
                // endpoints scaled by sqrt(T)
                let xs: Vec<[f64; 3]> =
                    x0.iter().map(|q| [q[0] * sqrt_t, q[1] * sqrt_t, q[2] * sqrt_t]).collect();
                let zs: Vec<[f64; 3]> =
                    z.iter().map(|q| [q[0] * sqrt_t, q[1] * sqrt_t, q[2] * sqrt_t]).collect();
                let sub = McConfig { seed: inner_cfg.seed.wrapping_add(i as u64), ..inner_cfg };
                let bridge =
                    simulate_rescaled_semigroup(2, beta, big_t, &xs, &zs, profile(), &sub).unwrap();
                let datum: f64 = z.iter().map(|q| gauss3(nu, norm2(*q))).product();
                // weight of the z-sample under its own law cancels the free kernel
                let mut g_free = 1.0;
                for (a, b) in xs.iter().zip(&zs) {
                    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
                    g_free *= gauss3(big_t, norm2(d));
                }
                bridge.mean / g_free * datum
            })
            .collect();
        let (rhs, rse) = mean_and_stderr(&values);
        assert!(
            (lhs.mean - rhs).abs() <= (0.10 * lhs.mean).max(3.0 * (lhs.stderr + rse)),
            "{} vs {rhs}",
            lhs.mean
        );
    }

    #[test]
    fn effective_sample_flagging() {
        let v = vec![0.0, 0.0, 0.0, 10.0];
        assert!(effective_samples(&v) < 1.5);
        let u = vec![1.0; 50];
        assert!((effective_samples(&u) - 50.0).abs() < 1e-9);
    }
}
