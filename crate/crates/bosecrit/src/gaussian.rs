//! Symbolic calculus for products of Gaussian kernels.
//!
//! Every expression is a positive prefactor times a flat product of factors.
//! A factor is either a spatial heat kernel `G_t(a) = (2*pi*t)^(-d/2) exp(-|a|^2 / 2t)`
//! or its Fourier transform `F_t(a) = exp(-2*pi^2*t*|a|^2)`, with `a` a linear
//! form over named vector variables plus a constant offset. The rewrite rules
//! implemented here (variance-preserving splits, completed squares, one-variable
//! frequency integration) are what collapses the long kernel chains of the
//! relative-motion computation into closed form.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod reference;

/// Whether a factor lives in physical or frequency space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Space,
    Frequency,
}

/// Linear form `sum_v c_v * x_v + offset` over named vector variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearForm {
    pub coeffs: BTreeMap<String, f64>,
    pub offset: Vec<f64>,
}

impl LinearForm {
    pub fn new(dim: usize) -> Self {
        LinearForm { coeffs: BTreeMap::new(), offset: vec![0.0; dim] }
    }

    pub fn var(name: &str, coeff: f64, dim: usize) -> Self {
        let mut f = Self::new(dim);
        f.coeffs.insert(name.to_string(), coeff);
        f
    }

    pub fn constant(offset: Vec<f64>) -> Self {
        LinearForm { coeffs: BTreeMap::new(), offset }
    }

    pub fn with_var(mut self, name: &str, coeff: f64) -> Self {
        *self.coeffs.entry(name.to_string()).or_insert(0.0) += coeff;
        self
    }

    pub fn coeff(&self, name: &str) -> f64 {
        self.coeffs.get(name).copied().unwrap_or(0.0)
    }

    fn scale(&self, s: f64) -> LinearForm {
        LinearForm {
            coeffs: self.coeffs.iter().map(|(k, c)| (k.clone(), c * s)).collect(),
            offset: self.offset.iter().map(|o| o * s).collect(),
        }
    }

    fn add_scaled(&self, other: &LinearForm, s: f64) -> LinearForm {
        let mut out = self.clone();
        for (k, c) in &other.coeffs {
            *out.coeffs.entry(k.clone()).or_insert(0.0) += c * s;
        }
        for (o, p) in out.offset.iter_mut().zip(&other.offset) {
            *o += p * s;
        }
        out.coeffs.retain(|_, c| c.abs() > 1e-300);
        out
    }

    /// Drop the named variable from the form, returning its coefficient.
    fn without_var(&self, name: &str) -> (f64, LinearForm) {
        let c = self.coeff(name);
        let mut rest = self.clone();
        rest.coeffs.remove(name);
        (c, rest)
    }

    /// Numeric value of the form under a variable assignment.
    pub fn eval(&self, assignment: &BTreeMap<String, Vec<f64>>) -> Result<Vec<f64>> {
        let mut out = self.offset.clone();
        for (name, c) in &self.coeffs {
            let x = assignment
                .get(name)
                .ok_or_else(|| Error::Structure(format!("missing variable `{name}`")))?;
            if x.len() != out.len() {
                return Err(Error::Structure(format!(
                    "variable `{name}` has dimension {} but the expression is {}-dimensional",
                    x.len(),
                    out.len()
                )));
            }
            for (o, xi) in out.iter_mut().zip(x) {
                *o += c * xi;
            }
        }
        Ok(out)
    }

    fn is_finite(&self) -> bool {
        self.coeffs.values().all(|c| c.is_finite()) && self.offset.iter().all(|o| o.is_finite())
    }
}

/// One Gaussian factor. `dirac` marks the symbolic point-mass factor, which can
/// only be removed by [`GaussExpr::integrate_dirac_var`] and never evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussFactor {
    pub variance: f64,
    pub argument: LinearForm,
    pub domain: Domain,
    pub dirac: bool,
}

impl GaussFactor {
    pub fn space(variance: f64, argument: LinearForm) -> Result<Self> {
        Self::build(variance, argument, Domain::Space)
    }

    pub fn frequency(variance: f64, argument: LinearForm) -> Result<Self> {
        Self::build(variance, argument, Domain::Frequency)
    }

    fn build(variance: f64, argument: LinearForm, domain: Domain) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::Domain(format!("variance must be positive, got {variance}")));
        }
        if !argument.is_finite() {
            return Err(Error::Domain("argument coefficients must be finite".into()));
        }
        Ok(GaussFactor { variance, argument, domain, dirac: false })
    }

    pub fn dirac(argument: LinearForm) -> Result<Self> {
        if !argument.is_finite() {
            return Err(Error::Domain("argument coefficients must be finite".into()));
        }
        Ok(GaussFactor { variance: 0.0, argument, domain: Domain::Space, dirac: true })
    }

    fn eval(&self, assignment: &BTreeMap<String, Vec<f64>>) -> Result<f64> {
        if self.dirac {
            return Err(Error::Structure("point-mass factor cannot be evaluated numerically".into()));
        }
        let a = self.argument.eval(assignment)?;
        let n2: f64 = a.iter().map(|x| x * x).sum();
        Ok(match self.domain {
            Domain::Space => {
                let d = a.len() as f64;
                (2.0 * std::f64::consts::PI * self.variance).powf(-0.5 * d)
                    * (-n2 / (2.0 * self.variance)).exp()
            }
            Domain::Frequency => {
                (-2.0 * std::f64::consts::PI * std::f64::consts::PI * self.variance * n2).exp()
            }
        })
    }
}

/// A prefactor times a flat product of Gaussian factors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussExpr {
    pub dim: usize,
    pub prefactor: f64,
    pub factors: Vec<GaussFactor>,
    pub free_vars: BTreeSet<String>,
    pub bound_vars: BTreeSet<String>,
}

impl GaussExpr {
    pub fn new(dim: usize, prefactor: f64) -> Result<Self> {
        if !(prefactor > 0.0) || !prefactor.is_finite() {
            return Err(Error::Domain(format!("prefactor must be positive, got {prefactor}")));
        }
        Ok(GaussExpr {
            dim,
            prefactor,
            factors: Vec::new(),
            free_vars: BTreeSet::new(),
            bound_vars: BTreeSet::new(),
        })
    }

    pub fn push(mut self, factor: GaussFactor) -> Result<Self> {
        if factor.argument.offset.len() != self.dim {
            return Err(Error::Structure(format!(
                "factor offset has dimension {}, expression is {}-dimensional",
                factor.argument.offset.len(),
                self.dim
            )));
        }
        for name in factor.argument.coeffs.keys() {
            if !self.bound_vars.contains(name) {
                self.free_vars.insert(name.clone());
            }
        }
        self.factors.push(factor);
        Ok(self)
    }

    /// Indices of factors whose argument involves `var`.
    fn factors_with(&self, var: &str) -> Vec<usize> {
        self.factors
            .iter()
            .enumerate()
            .filter(|(_, f)| f.argument.coeff(var) != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Numeric value of the product under an assignment covering the free variables.
    pub fn eval_numeric(&self, assignment: &BTreeMap<String, Vec<f64>>) -> Result<f64> {
        for v in &self.free_vars {
            if !assignment.contains_key(v) {
                return Err(Error::Structure(format!("assignment misses free variable `{v}`")));
            }
        }
        let mut value = self.prefactor;
        for f in &self.factors {
            value *= f.eval(assignment)?;
        }
        Ok(value)
    }

    /// Integrate out a variable appearing in exactly two frequency factors.
    ///
    /// The two factors are first normalized so the variable carries unit
    /// coefficient (rescaling the variance by the squared coefficient), after
    /// which the pair integrates in closed form: the surviving factor carries
    /// the harmonic-sum variance of the pair at the shift difference, and the
    /// prefactor picks up the zero-argument heat kernel at the variance sum.
    pub fn integrate_freq_var(&self, var: &str) -> Result<GaussExpr> {
        let hits = self.factors_with(var);
        if hits.len() != 2 {
            return Err(Error::Structure(format!(
                "`{var}` must appear in exactly two factors, found {}",
                hits.len()
            )));
        }
        let mut normalized = Vec::with_capacity(2);
        for &i in &hits {
            let f = &self.factors[i];
            if f.domain != Domain::Frequency || f.dirac {
                return Err(Error::Structure(format!(
                    "`{var}` appears in a non-frequency factor; cannot integrate"
                )));
            }
            let (c, rest) = f.argument.without_var(var);
            // F_s(c*w + rest) = F_{s c^2}(w - (-rest/c))
            let variance = f.variance * c * c;
            let shift = rest.scale(-1.0 / c);
            normalized.push((variance, shift));
        }
        let (s1, k1) = normalized[0].clone();
        let (s2, k2) = normalized[1].clone();
        let merged_variance = oplus(s1, s2)?;
        let merged_arg = k1.add_scaled(&k2, -1.0);
        let heat_zero = (2.0 * std::f64::consts::PI * (s1 + s2)).powf(-0.5 * self.dim as f64);

        let mut out = self.clone();
        out.prefactor *= heat_zero;
        let mut keep: Vec<GaussFactor> = Vec::with_capacity(self.factors.len() - 1);
        for (i, f) in self.factors.iter().enumerate() {
            if !hits.contains(&i) {
                keep.push(f.clone());
            }
        }
        keep.push(GaussFactor::frequency(merged_variance, merged_arg)?);
        out.factors = keep;
        out.free_vars.remove(var);
        out.bound_vars.insert(var.to_string());
        Ok(out)
    }

    /// Rewrite the two frequency factors containing `var` so that exactly one
    /// factor depends on it.
    ///
    /// With normalized variances `alpha, beta` and shifts `A, B` the product
    /// `F_alpha(w + A) F_beta(w + B)` equals
    /// `F_{alpha+beta}(w + (alpha A + beta B)/(alpha+beta)) * F_{alpha (+) beta}(A - B)`
    /// where `(+)` is the harmonic sum. The chain instance
    /// `F_a(sqrt2 w) F_a(k - w) = F_{3a}(w - k/3) F_{2a/3}(k)` is the special
    /// case `alpha = 2a, beta = a`.
    pub fn complete_square(&self, var: &str) -> Result<GaussExpr> {
        let hits = self.factors_with(var);
        if hits.len() != 2 {
            return Err(Error::Structure(format!(
                "`{var}` must appear in exactly two factors, found {}",
                hits.len()
            )));
        }
        let mut normalized = Vec::with_capacity(2);
        for &i in &hits {
            let f = &self.factors[i];
            if f.domain != Domain::Frequency || f.dirac {
                return Err(Error::Structure("completed square requires frequency factors".into()));
            }
            let (c, rest) = f.argument.without_var(var);
            normalized.push((f.variance * c * c, rest.scale(1.0 / c)));
        }
        let (alpha, shift_a) = normalized[0].clone();
        let (beta, shift_b) = normalized[1].clone();
        let total = alpha + beta;
        let mean_shift = shift_a.scale(alpha / total).add_scaled(&shift_b, beta / total);
        let centered = LinearForm::var(var, 1.0, self.dim).add_scaled(&mean_shift, 1.0);
        let residual_arg = shift_a.add_scaled(&shift_b, -1.0);

        let mut keep: Vec<GaussFactor> = Vec::with_capacity(self.factors.len());
        for (i, f) in self.factors.iter().enumerate() {
            if !hits.contains(&i) {
                keep.push(f.clone());
            }
        }
        keep.push(GaussFactor::frequency(total, centered)?);
        keep.push(GaussFactor::frequency(oplus(alpha, beta)?, residual_arg)?);
        let mut out = self.clone();
        out.factors = keep;
        Ok(out)
    }

    /// Merge frequency factors whose arguments are equal after normalizing the
    /// coefficient of `var` to one; their variances add.
    pub fn merge_equal_arguments(&self, var: &str) -> Result<GaussExpr> {
        let hits = self.factors_with(var);
        if hits.len() < 2 {
            return Ok(self.clone());
        }
        let mut normalized: Vec<(f64, LinearForm)> = Vec::new();
        for &i in &hits {
            let f = &self.factors[i];
            if f.domain != Domain::Frequency || f.dirac {
                return Err(Error::Structure("merge requires frequency factors".into()));
            }
            let (c, rest) = f.argument.without_var(var);
            normalized.push((f.variance * c * c, rest.scale(1.0 / c)));
        }
        let mut merged: Vec<(f64, LinearForm)> = Vec::new();
        'outer: for (v, arg) in normalized {
            for (mv, marg) in merged.iter_mut() {
                if forms_equal(marg, &arg) {
                    *mv += v;
                    continue 'outer;
                }
            }
            merged.push((v, arg));
        }
        let mut keep: Vec<GaussFactor> = Vec::with_capacity(self.factors.len());
        for (i, f) in self.factors.iter().enumerate() {
            if !hits.contains(&i) {
                keep.push(f.clone());
            }
        }
        for (v, arg) in merged {
            let full = LinearForm::var(var, 1.0, self.dim).add_scaled(&arg, 1.0);
            keep.push(GaussFactor::frequency(v, full)?);
        }
        let mut out = self.clone();
        out.factors = keep;
        Ok(out)
    }

    /// Evaluate a point-mass factor in `var` by substitution.
    ///
    /// For a factor `delta(c*var + rest)` the variable is replaced by
    /// `-rest/c` in every other factor and the prefactor is multiplied by
    /// `|c|^{-d}`; the convention `int delta((x-z)/sqrt2) f(z) dz = 2^{d/2} f(x)`
    /// is the case `c = -1/sqrt2`.
    pub fn integrate_dirac_var(&self, var: &str) -> Result<GaussExpr> {
        let idx = self
            .factors
            .iter()
            .position(|f| f.dirac && f.argument.coeff(var) != 0.0)
            .ok_or_else(|| Error::Structure(format!("no point-mass factor contains `{var}`")))?;
        let (c, rest) = self.factors[idx].argument.without_var(var);
        let substitution = rest.scale(-1.0 / c);
        let mut out = GaussExpr::new(self.dim, self.prefactor * c.abs().powi(-(self.dim as i32)))?;
        out.bound_vars = self.bound_vars.clone();
        for (i, f) in self.factors.iter().enumerate() {
            if i == idx {
                continue;
            }
            let cv = f.argument.coeff(var);
            let mut g = f.clone();
            if cv != 0.0 {
                let (_, untouched) = f.argument.without_var(var);
                g.argument = untouched.add_scaled(&substitution, cv);
            }
            out = out.push(g)?;
        }
        out.bound_vars.insert(var.to_string());
        out.free_vars.remove(var);
        Ok(out)
    }
}

fn forms_equal(a: &LinearForm, b: &LinearForm) -> bool {
    if a.offset.iter().zip(&b.offset).any(|(x, y)| (x - y).abs() > 1e-12) {
        return false;
    }
    let keys: BTreeSet<&String> = a.coeffs.keys().chain(b.coeffs.keys()).collect();
    keys.iter().all(|k| (a.coeff(k) - b.coeff(k)).abs() < 1e-12)
}

/// Harmonic sum `a (+) b = ab / (a + b)`; symmetric and bounded by `min(a, b)`.
pub fn oplus(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(Error::Domain(format!("harmonic sum needs positive inputs, got {a}, {b}")));
    }
    Ok(a * b / (a + b))
}

/// Frequency factor `k -> exp(-2 pi^2 t |k|^2)` in the variable `k`.
pub fn fourier_gaussian(t: f64, dim: usize) -> Result<GaussFactor> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    GaussFactor::frequency(t, LinearForm::var("k", 1.0, dim))
}

/// Split `G_t(z1) G_t(z2)` into the rotated pair
/// `G_t((z2 - z1)/sqrt2) G_t((z2 + z1)/sqrt2)`; numerically identical.
pub fn split_pair_product(t: f64, z1: &[f64], z2: &[f64]) -> Result<GaussExpr> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    if z1.len() != z2.len() {
        return Err(Error::Structure("points must share a dimension".into()));
    }
    let dim = z1.len();
    let inv = 1.0 / 2.0f64.sqrt();
    let diff: Vec<f64> = z1.iter().zip(z2).map(|(a, b)| (b - a) * inv).collect();
    let sum: Vec<f64> = z1.iter().zip(z2).map(|(a, b)| (b + a) * inv).collect();
    GaussExpr::new(dim, 1.0)?
        .push(GaussFactor::space(t, LinearForm::constant(diff))?)?
        .push(GaussFactor::space(t, LinearForm::constant(sum))?)
}

/// Spatial heat kernel value `G_t(x)` in `d` dimensions.
pub fn heat_kernel(t: f64, norm2: f64, dim: usize) -> f64 {
    (2.0 * std::f64::consts::PI * t).powf(-0.5 * dim as f64) * (-norm2 / (2.0 * t)).exp()
}
