//! Singular iterated time integrals.
//!
//! The recursion `eta_m(v) = int_0^1 eta_{m-1}(s) / (v + s) ds` (with
//! `eta_0 = 1`) and its one-sided companion
//! `zeta_m(v) = int_v^1 zeta_{m-1}(s) / (v + s) ds` control the temporal mass
//! of the interaction chains. Their integrals `L_{m+1} = int_0^1 eta_m` obey
//! `L_m >= (2 ln 2)^{m-1}`, which is where the geometric growth ratio of the
//! partial sums comes from.
//!
//! Near `v = 0` the iterates blow up like `ln(1/v)^m`, so the tables are
//! computed in the substituted variable `w = ln(1/v)`. There the kernel
//! `1/(v+s)` becomes the logistic `1/(1 + e^{u-w})`, analytic with unit
//! transition width, and Gauss-Legendre panels of width well below one
//! resolve everything to machine accuracy; the exponential weight `e^{-w}`
//! makes the truncated far tail negligible for every `m <= 20`.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{gauss_legendre, gl_integrate, mean_and_stderr};

const MAX_ORDER: usize = 20;
const W_MAX: f64 = 80.0;
const PANEL_PTS: usize = 6;

/// Values of one iterate pair on the evaluation grid, with an error estimate
/// obtained from a coarser companion grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EtaTable {
    pub order: usize,
    /// graded output grid on (0, 1], cubic toward the origin
    pub grid: Vec<f64>,
    pub eta: Vec<f64>,
    pub zeta: Vec<f64>,
    pub quadrature_error: f64,
}

/// All tables up to `m_max` plus the internal quadrature state.
pub struct IteratedTables {
    pub tables: Vec<EtaTable>,
    /// `L_m` for `m = 1..=m_max+1` (index 0 holds `L_1 = 1`)
    pub l_values: Vec<f64>,
    pub zeta_integrals: Vec<f64>,
    grid_w: WGrid,
    eta_nodes: Vec<Vec<f64>>,
    zeta_nodes: Vec<Vec<f64>>,
}

/// Panelized Gauss-Legendre grid in the substituted variable.
struct WGrid {
    panels: usize,
    width: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// reference nodes on [0, 1] and their barycentric weights
    ref_nodes: Vec<f64>,
    bary: Vec<f64>,
}

impl WGrid {
    fn new(panels: usize) -> WGrid {
        let (gx, gw) = gauss_legendre(PANEL_PTS);
        let width = W_MAX / panels as f64;
        let ref_nodes: Vec<f64> = gx.iter().map(|x| 0.5 * (x + 1.0)).collect();
        let mut bary = vec![1.0; PANEL_PTS];
        for i in 0..PANEL_PTS {
            for j in 0..PANEL_PTS {
                if i != j {
                    bary[i] /= ref_nodes[i] - ref_nodes[j];
                }
            }
        }
        let mut nodes = Vec::with_capacity(panels * PANEL_PTS);
        let mut weights = Vec::with_capacity(panels * PANEL_PTS);
        for p in 0..panels {
            let a = p as f64 * width;
            for (x, w) in ref_nodes.iter().zip(&gw) {
                nodes.push(a + width * x);
                weights.push(0.5 * width * w);
            }
        }
        WGrid { panels, width, nodes, weights, ref_nodes, bary }
    }

    /// Polynomial interpolation of per-node values inside the panel holding `w`.
    fn interp(&self, level: &[f64], w: f64) -> f64 {
        let w = w.clamp(0.0, W_MAX - 1e-12);
        let p = ((w / self.width) as usize).min(self.panels - 1);
        let t = (w - p as f64 * self.width) / self.width;
        let base = p * PANEL_PTS;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..PANEL_PTS {
            let d = t - self.ref_nodes[i];
            if d.abs() < 1e-14 {
                return level[base + i];
            }
            let c = self.bary[i] / d;
            num += c * level[base + i];
            den += c;
        }
        num / den
    }
}

fn run_recursion(m_max: usize, panels: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>, WGrid) {
    let grid = WGrid::new(panels);
    let n = grid.nodes.len();
    let exp_u: Vec<f64> = grid.nodes.iter().map(|u| u.exp()).collect();
    let (sub_x, sub_w) = gauss_legendre(PANEL_PTS);
    let mut eta_levels: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut zeta_levels: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for _ in 1..=m_max {
        let prev_eta = eta_levels.last().unwrap();
        let prev_zeta = zeta_levels.last().unwrap();
        let next: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let w = grid.nodes[i];
                let ew = w.exp();
                let my_panel = i / PANEL_PTS;
                let mut e = 0.0;
                let mut z = 0.0;
                for j in 0..n {
                    // 1 / (1 + exp(u - w))
                    let k = grid.weights[j] * ew / (ew + exp_u[j]);
                    e += k * prev_eta[j];
                    if j / PANEL_PTS < my_panel {
                        z += k * prev_zeta[j];
                    }
                }
                // partial panel [panel start, w] of the one-sided recursion,
                // previous level interpolated on its own panel nodes
                let a = my_panel as f64 * grid.width;
                let half = 0.5 * (w - a);
                for (x, wq) in sub_x.iter().zip(&sub_w) {
                    let u = a + half * (x + 1.0);
                    let k = ew / (ew + u.exp());
                    z += half * wq * k * grid.interp(prev_zeta, u);
                }
                (e, z)
            })
            .collect();
        eta_levels.push(next.iter().map(|p| p.0).collect());
        zeta_levels.push(next.iter().map(|p| p.1).collect());
    }
    // L_{m+1} = int_0^1 eta_m(v) dv = int_0^inf eta~_m(w) e^{-w} dw
    let mut l_values = Vec::with_capacity(m_max + 1);
    let mut zeta_ints = Vec::with_capacity(m_max + 1);
    for level in 0..=m_max {
        let le: f64 = (0..n).map(|j| grid.weights[j] * (-grid.nodes[j]).exp() * eta_levels[level][j]).sum();
        let lz: f64 = (0..n).map(|j| grid.weights[j] * (-grid.nodes[j]).exp() * zeta_levels[level][j]).sum();
        l_values.push(le);
        zeta_ints.push(lz);
    }
    (eta_levels, zeta_levels, l_values, zeta_ints, grid)
}

/// Build the eta/zeta tables up to order `m_max` (at most 20).
///
/// `grid_n` sets the graded output grid `v_i = (i / grid_n)^3`; the internal
/// quadrature grid is fixed by the error target. Fails when the coarse/fine
/// comparison indicates the quadrature error exceeds `1e-7`.
pub fn eta_zeta_tables(m_max: usize, grid_n: usize) -> Result<IteratedTables> {
    if m_max > MAX_ORDER {
        return Err(Error::Config(format!("order {m_max} above the supported maximum {MAX_ORDER}")));
    }
    if grid_n < 8 {
        return Err(Error::Config("output grid too coarse".into()));
    }
    let (eta_f, zeta_f, l_f, zi_f, grid_w) = run_recursion(m_max, 800);
    let (_, _, l_c, zi_c, _) = run_recursion(m_max, 400);
    let mut worst = 0.0f64;
    for m in 0..=m_max {
        let scale = l_f[m].abs().max(1.0);
        worst = worst.max((l_f[m] - l_c[m]).abs() / scale);
        worst = worst.max((zi_f[m] - zi_c[m]).abs() / scale);
    }
    if worst > 1e-7 {
        return Err(Error::NonConvergence("iterated-integral quadrature failed to converge".into(), worst));
    }

    let grid: Vec<f64> = (1..=grid_n).map(|i| (i as f64 / grid_n as f64).powi(3)).collect();
    let mut tables = Vec::with_capacity(m_max + 1);
    for m in 0..=m_max {
        let eta: Vec<f64> = grid.iter().map(|v| grid_w.interp(&eta_f[m], (1.0 / v).ln())).collect();
        let zeta: Vec<f64> = grid.iter().map(|v| grid_w.interp(&zeta_f[m], (1.0 / v).ln())).collect();
        tables.push(EtaTable {
            order: m,
            grid: grid.clone(),
            eta,
            zeta,
            quadrature_error: worst,
        });
    }
    Ok(IteratedTables {
        tables,
        l_values: l_f,
        zeta_integrals: zi_f,
        grid_w,
        eta_nodes: eta_f,
        zeta_nodes: zeta_f,
    })
}

impl IteratedTables {
    /// `L_m`, with `L_1 = 1` and `L_{m+1} = int_0^1 eta_m`.
    pub fn l(&self, m: usize) -> Result<f64> {
        self.l_values
            .get(m - 1)
            .copied()
            .ok_or_else(|| Error::Config(format!("L_{m} beyond the built order")))
    }

    /// `int_0^1 zeta_k(v) dv`; equals `(ln 2)^k`.
    pub fn zeta_integral(&self, k: usize) -> Result<f64> {
        self.zeta_integrals
            .get(k)
            .copied()
            .ok_or_else(|| Error::Config(format!("zeta_{k} beyond the built order")))
    }

    pub fn eta_at(&self, m: usize, v: f64) -> f64 {
        self.grid_w.interp(&self.eta_nodes[m], (1.0 / v).ln())
    }

    pub fn zeta_at(&self, m: usize, v: f64) -> f64 {
        self.grid_w.interp(&self.zeta_nodes[m], (1.0 / v).ln())
    }

    /// Worst-case slack of the binomial lower bound
    /// `eta_m(v) >= sum_k C(m,k) zeta_k(v) (ln 2)^{m-k}` over the samples.
    pub fn eta_binomial_check(&self, m: usize, v_samples: &[f64]) -> Result<f64> {
        if m >= self.eta_nodes.len() {
            return Err(Error::Config(format!("order {m} beyond the built tables")));
        }
        let ln2 = std::f64::consts::LN_2;
        let mut worst = f64::INFINITY;
        for &v in v_samples {
            let mut bound = 0.0;
            for k in 0..=m {
                bound += binomial(m, k) * self.zeta_at(k, v) * ln2.powi((m - k) as i32);
            }
            worst = worst.min(self.eta_at(m, v) - bound);
        }
        Ok(worst)
    }

    /// CSV table `v,eta_m,zeta_m` for one order.
    pub fn to_csv(&self, m: usize) -> Result<String> {
        let t = self
            .tables
            .get(m)
            .ok_or_else(|| Error::Config(format!("order {m} beyond the built tables")))?;
        let mut out = String::from("v,eta,zeta\n");
        for i in 0..t.grid.len() {
            out.push_str(&format!("{:.9e},{:.9e},{:.9e}\n", t.grid[i], t.eta[i], t.zeta[i]));
        }
        Ok(out)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut acc = 1.0;
    for i in 0..k.min(n - k) {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Closed form `int_0^u r^{-1/2} (a + r)^{-3/2} dr = (2/a) sqrt(u / (a + u))`.
pub fn r_integral(a: f64, u: f64) -> Result<f64> {
    if !(a > 0.0) || !(u > 0.0) {
        return Err(Error::Domain(format!("r_integral needs positive inputs, got a={a}, u={u}")));
    }
    Ok(2.0 / a * (u / (a + u)).sqrt())
}

/// The per-step growth ratio `sqrt(4/3) * 4 ln 2 * 0.99 / pi`; strictly above 1.008.
pub fn ratio_constant() -> f64 {
    (4.0f64 / 3.0).sqrt() * 4.0 * std::f64::consts::LN_2 * 0.99 / std::f64::consts::PI
}

/// One Monte Carlo estimate of the weighted simplex integral
/// `(1/pi)^m int prod_j dv_j prod_{j>=2} dr_j r_j^{-1/2} (v_{j-1}+v_j+3 r_j/4)^{-3/2}`
/// over `{v_1 + r_2 + ... + r_m + v_m < t}`.
pub fn simplex_weighted_integral(m: usize, t: f64, n_samples: usize, seed: u64) -> (f64, f64) {
    assert!(m >= 2);
    let dims = 2 * m - 1; // v_1..v_m, r_2..r_m
    let strata = 32usize;
    let values: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64 + 1);
            let mut budget = t;
            let mut density = 1.0;
            let mut vs = [0.0f64; 64];
            let mut rs = [0.0f64; 64];
            // square-root tilts: x = b u^2 has density 1 / (2 sqrt(b x)) on (0, b)
            for j in 0..dims {
                let mut u: f64 = rng.gen();
                if j == 0 {
                    // stratified leading coordinate
                    u = ((p % strata) as f64 + u) / strata as f64;
                }
                let x = budget * u * u;
                density *= 1.0 / (2.0 * (budget * x.max(1e-300)).sqrt());
                if j < m {
                    vs[j] = x;
                } else {
                    rs[j - m + 2] = x;
                }
                budget -= x;
                if budget <= 0.0 {
                    return 0.0;
                }
            }
            let mut f = std::f64::consts::PI.powi(-(m as i32));
            for j in 2..=m {
                f *= rs[j].powf(-0.5) * (vs[j - 2] + vs[j - 1] + 0.75 * rs[j]).powf(-1.5);
            }
            f / density
        })
        .collect();
    mean_and_stderr(&values)
}

/// Result row of the simplex growth check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimplexCheck {
    pub m: usize,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Calibrate the constant at `m = 3` and compare the Monte Carlo estimate of
/// the weighted simplex integral against `C_t 1.008^m / (m (m-1))` for the
/// larger orders.
pub fn simplex_lower_bound_check(
    m_max: usize,
    t: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<SimplexCheck>> {
    if !(t > 0.0) {
        return Err(Error::Domain("horizon must be positive".into()));
    }
    if !(3..=6).contains(&m_max) {
        return Err(Error::Config("check supports orders 3 through 6".into()));
    }
    let (base, base_err) = simplex_weighted_integral(3, t, n_samples, seed);
    if base <= 0.0 || base_err / base > 0.2 {
        return Err(Error::NonConvergence("calibration estimate unreliable".into(), base_err / base));
    }
    let c_t = base * 6.0 / 1.008f64.powi(3);
    let mut rows = vec![SimplexCheck { m: 3, lhs: base, lhs_stderr: base_err, rhs: base, ratio: 1.0 }];
    for m in 4..=m_max {
        let (lhs, err) = simplex_weighted_integral(m, t, n_samples, seed + m as u64);
        let rhs = c_t * 1.008f64.powi(m as i32) / (m * (m - 1)) as f64;
        rows.push(SimplexCheck { m, lhs, lhs_stderr: err, rhs, ratio: lhs / rhs });
    }
    Ok(rows)
}
