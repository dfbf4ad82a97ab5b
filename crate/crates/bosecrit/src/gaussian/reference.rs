//! Quadrature reference evaluators for Gaussian products.
//!
//! Everything here integrates the expressions numerically and exists only to
//! cross-check the closed-form rewrite rules and the evaluated kernel chains.
//! None of the production paths call into this module.
//!
//! The factor arguments used across the crate are scalar linear combinations
//! of vector variables, so a `k`-variable integral in `d` dimensions
//! factorizes into a product of `d` independent `k`-dimensional scalar
//! integrals. That factorization is what makes tensor Gauss-Legendre grids
//! affordable up to four or five integration variables.

use std::collections::BTreeMap;

use super::{Domain, GaussExpr};
use crate::error::{Error, Result};
use crate::quad::gauss_legendre;

/// Integrate `expr` over the listed variables, the remaining free variables
/// fixed by `fixed`. Tensor Gauss-Legendre with `n` nodes per axis on
/// `[-half_width, half_width]`.
pub fn integrate_product(
    expr: &GaussExpr,
    vars: &[&str],
    fixed: &BTreeMap<String, Vec<f64>>,
    n: usize,
    half_width: f64,
) -> Result<f64> {
    let (re, _) = integrate_with_phase(expr, vars, fixed, &[], n, half_width)?;
    Ok(re)
}

/// Integrate `expr * exp(-2 pi i sum_j q_j . x_{v_j})` over the listed
/// variables; `phase` pairs a variable name with its frequency vector.
/// Returns the (real, imaginary) parts.
pub fn integrate_with_phase(
    expr: &GaussExpr,
    vars: &[&str],
    fixed: &BTreeMap<String, Vec<f64>>,
    phase: &[(&str, Vec<f64>)],
    n: usize,
    half_width: f64,
) -> Result<(f64, f64)> {
    let k = vars.len();
    if k == 0 {
        return Err(Error::Structure("no integration variables given".into()));
    }
    if n.pow(k as u32) > 200_000_000 {
        return Err(Error::Config(format!("tensor grid {n}^{k} too large")));
    }
    for f in &expr.factors {
        if f.dirac {
            return Err(Error::Structure("cannot integrate a point-mass factor numerically".into()));
        }
        for name in f.argument.coeffs.keys() {
            if !vars.contains(&name.as_str()) && !fixed.contains_key(name) {
                return Err(Error::Structure(format!("variable `{name}` is neither integrated nor fixed")));
            }
        }
    }
    let (nodes, weights) = gauss_legendre(n);
    let nodes: Vec<f64> = nodes.iter().map(|x| x * half_width).collect();
    let weights: Vec<f64> = weights.iter().map(|w| w * half_width).collect();

    // Per-factor scalar data: coefficient per integration variable, plus the
    // per-dimension constant (offset + fixed-variable contribution).
    struct ScalarFactor {
        coeffs: Vec<f64>,
        consts: Vec<f64>, // one per spatial dimension
        variance: f64,
        domain: Domain,
    }
    let dim = expr.dim;
    let mut sfs = Vec::with_capacity(expr.factors.len());
    for f in &expr.factors {
        let coeffs: Vec<f64> = vars.iter().map(|v| f.argument.coeff(v)).collect();
        let mut consts = f.argument.offset.clone();
        for (name, c) in &f.argument.coeffs {
            if vars.contains(&name.as_str()) {
                continue;
            }
            let x = &fixed[name];
            for (o, xi) in consts.iter_mut().zip(x) {
                *o += c * xi;
            }
        }
        sfs.push(ScalarFactor { coeffs, consts, variance: f.variance, domain: f.domain });
    }
    let phase_coeffs: Vec<(usize, Vec<f64>)> = phase
        .iter()
        .map(|(name, q)| {
            let idx = vars.iter().position(|v| v == name).expect("phase variable must be integrated");
            (idx, q.clone())
        })
        .collect();

    let mut total_re = 1.0;
    let mut total_im = 0.0;
    let two_pi = 2.0 * std::f64::consts::PI;
    for d in 0..dim {
        // d-th scalar integral over the k-cube
        let mut re = 0.0;
        let mut im = 0.0;
        let mut idx = vec![0usize; k];
        loop {
            let mut point = [0.0f64; 8];
            let mut wtot = 1.0;
            for j in 0..k {
                point[j] = nodes[idx[j]];
                wtot *= weights[idx[j]];
            }
            let mut val = wtot;
            for sf in &sfs {
                let mut a = sf.consts[d];
                for j in 0..k {
                    a += sf.coeffs[j] * point[j];
                }
                val *= match sf.domain {
                    Domain::Space => {
                        (two_pi * sf.variance).powf(-0.5) * (-a * a / (2.0 * sf.variance)).exp()
                    }
                    Domain::Frequency => {
                        (-2.0 * std::f64::consts::PI.powi(2) * sf.variance * a * a).exp()
                    }
                };
            }
            let mut ang = 0.0;
            for (j, q) in &phase_coeffs {
                ang -= two_pi * q[d] * point[*j];
            }
            re += val * ang.cos();
            im += val * ang.sin();
            // advance the multi-index
            let mut carry = 0;
            while carry < k {
                idx[carry] += 1;
                if idx[carry] < n {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
            }
            if carry == k {
                break;
            }
        }
        let (r, i) = (total_re * re - total_im * im, total_re * im + total_im * re);
        total_re = r;
        total_im = i;
    }
    Ok((expr.prefactor * total_re, expr.prefactor * total_im))
}
