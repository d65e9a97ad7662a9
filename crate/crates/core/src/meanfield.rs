//! Deterministic mean-field map of the SIS process.
//!
//! For each degree `l` the map reads
//!
//! ```text
//! x'(l) = x(l) + (1/M) [ (1 - x(l)) g_inc,l(alpha) - x(l) g_dec,l(alpha) ],   alpha = phi' x
//! g_inc,l(alpha) = sum_a lambda P21(l,a) C(l,a) alpha^a (1 - alpha)^(l - a)
//! ```
//!
//! and `g_dec,l` is the same sum over `P12`. The susceptible → infected flow
//! carries the `(1 - x(l))` factor. The map is stored in this per-degree
//! bivariate form; [`dense_tensors`] expands it into the full tensor
//! polynomial for cross-checking.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::graph::DegreeDistribution;
use crate::sis::TransitionKernel;

/// Largest tensor (in `f64` entries) [`dense_tensors`] will allocate.
pub const DENSE_TENSOR_CAPACITY: usize = 1 << 26;

/// Which rates the diffusion parameter multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaScope {
    /// `lambda` scales both infection and recovery tables.
    #[default]
    Both,
    /// `lambda` scales infection only; recovery uses the raw `P12` table.
    /// This is the parametrisation under which diffusion thresholds are defined.
    InfectionOnly,
}

/// Mean-field map in per-degree polynomial form.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialDynamics {
    rho: DegreeDistribution,
    phi: Vec<f64>,
    lambda: f64,
    m: usize,
    m_scale: f64,
    /// `c_inc[l-1][a] = lambda P21(l,a) C(l,a)`.
    c_inc: Vec<Vec<f64>>,
    c_dec: Vec<Vec<f64>>,
    /// Per-neighbour-count rates `lambda P(l,a)`, used for derivatives.
    b_inc: Vec<Vec<f64>>,
    b_dec: Vec<Vec<f64>>,
    /// Monomial coefficients of `g_inc,l` and `g_dec,l` in `alpha`.
    pow_inc: Vec<Vec<f64>>,
    pow_dec: Vec<Vec<f64>>,
}

/// JSON dump of the map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicsDump {
    pub rho: Vec<f64>,
    pub phi: Vec<f64>,
    pub lambda: f64,
    pub c_inc: Vec<Vec<f64>>,
    pub c_dec: Vec<Vec<f64>>,
    #[serde(rename = "M")]
    pub m: usize,
}

fn binomial_row(l: usize) -> Vec<f64> {
    let mut row = vec![1.0; l + 1];
    for a in 1..l {
        row[a] = row[a - 1] * (l - a + 1) as f64 / a as f64;
    }
    row
}

/// Power-basis coefficients of `sum_a b[a] C(l,a) t^a (1-t)^(l-a)`.
fn bernstein_to_power(b: &[f64]) -> Vec<f64> {
    let l = b.len() - 1;
    if b.iter().all(|&v| v == b[0]) {
        return vec![b[0]];
    }
    let cl = binomial_row(l);
    let mut out = vec![0.0; l + 1];
    for a in 0..=l {
        let coef = b[a] * cl[a];
        if coef == 0.0 {
            continue;
        }
        let c = binomial_row(l - a);
        for j in 0..=(l - a) {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            out[a + j] += coef * sign * c[j];
        }
    }
    out
}

/// Evaluates `sum_a c[a] t^a (1-t)^(l-a)` where `c` already holds the binomial factors.
fn bernstein_eval(c: &[f64], t: f64) -> f64 {
    let l = c.len() - 1;
    let s = 1.0 - t;
    let mut tp = vec![1.0; l + 1];
    for a in 1..=l {
        tp[a] = tp[a - 1] * t;
    }
    let mut acc = 0.0;
    let mut sp = 1.0;
    for a in (0..=l).rev() {
        acc += c[a] * tp[a] * sp;
        sp *= s;
    }
    acc
}

/// Derivative of the Bernstein sum with per-count rates `b`.
fn bernstein_derivative(b: &[f64], t: f64) -> f64 {
    let l = b.len() - 1;
    if l == 0 {
        return 0.0;
    }
    let c = binomial_row(l - 1);
    let diffs: Vec<f64> = (0..l).map(|a| (b[a + 1] - b[a]) * c[a]).collect();
    l as f64 * bernstein_eval(&diffs, t)
}

fn horner(coefs: &[f64], t: f64) -> f64 {
    coefs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Builds the map for kernel, degree distribution and population size `m`.
/// Every degree class must carry positive mass.
pub fn build_dynamics(
    kernel: &TransitionKernel,
    rho: &DegreeDistribution,
    m: usize,
) -> Result<PolynomialDynamics> {
    build_dynamics_with(kernel, rho, m, LambdaScope::Both)
}

/// As [`build_dynamics`] with an explicit [`LambdaScope`].
pub fn build_dynamics_with(
    kernel: &TransitionKernel,
    rho: &DegreeDistribution,
    m: usize,
    scope: LambdaScope,
) -> Result<PolynomialDynamics> {
    if let Some(i) = rho.probs().iter().position(|&p| p <= 0.0) {
        return Err(Error::EmptyDegreeClass { degree: i + 1 });
    }
    build_inner(kernel, rho, m, scope)
}

/// As [`build_dynamics`] but tolerating empty degree classes. Their `phi`
/// weight is zero, so they never influence `alpha`; their own coordinate
/// still evolves under the map.
pub fn build_dynamics_lenient(
    kernel: &TransitionKernel,
    rho: &DegreeDistribution,
    m: usize,
    scope: LambdaScope,
) -> Result<PolynomialDynamics> {
    build_inner(kernel, rho, m, scope)
}

fn build_inner(
    kernel: &TransitionKernel,
    rho: &DegreeDistribution,
    m: usize,
    scope: LambdaScope,
) -> Result<PolynomialDynamics> {
    let l_max = rho.max_degree();
    if kernel.max_degree() < l_max {
        return Err(param(
            "kernel",
            format!(
                "kernel covers degrees up to {}, degree distribution needs {l_max}",
                kernel.max_degree()
            ),
        ));
    }
    if m == 0 {
        return Err(param("m", "population scale must be positive"));
    }
    let mean = rho.mean_degree();
    let phi: Vec<f64> = rho
        .probs()
        .iter()
        .enumerate()
        .map(|(i, p)| (i + 1) as f64 * p / mean)
        .collect();
    let lambda = kernel.lambda();
    let dec_scale = match scope {
        LambdaScope::Both => lambda,
        LambdaScope::InfectionOnly => 1.0,
    };
    let mut c_inc = Vec::with_capacity(l_max);
    let mut c_dec = Vec::with_capacity(l_max);
    let mut b_inc = Vec::with_capacity(l_max);
    let mut b_dec = Vec::with_capacity(l_max);
    let mut pow_inc = Vec::with_capacity(l_max);
    let mut pow_dec = Vec::with_capacity(l_max);
    for l in 1..=l_max {
        let binom = binomial_row(l);
        let bi: Vec<f64> = kernel.p21_row(l).iter().map(|p| lambda * p).collect();
        let bd: Vec<f64> = kernel.p12_row(l).iter().map(|p| dec_scale * p).collect();
        c_inc.push(bi.iter().zip(&binom).map(|(b, c)| b * c).collect());
        c_dec.push(bd.iter().zip(&binom).map(|(b, c)| b * c).collect());
        pow_inc.push(bernstein_to_power(&bi));
        pow_dec.push(bernstein_to_power(&bd));
        b_inc.push(bi);
        b_dec.push(bd);
    }
    Ok(PolynomialDynamics {
        rho: rho.clone(),
        phi,
        lambda,
        m,
        m_scale: 1.0 / m as f64,
        c_inc,
        c_dec,
        b_inc,
        b_dec,
        pow_inc,
        pow_dec,
    })
}

impl PolynomialDynamics {
    pub fn dim(&self) -> usize {
        self.phi.len()
    }

    pub fn rho(&self) -> &DegreeDistribution {
        &self.rho
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Step size `1/M`.
    pub fn m_scale(&self) -> f64 {
        self.m_scale
    }

    pub fn c_inc(&self) -> &[Vec<f64>] {
        &self.c_inc
    }

    pub fn c_dec(&self) -> &[Vec<f64>] {
        &self.c_dec
    }

    /// Monomial coefficients of `g_inc,l` (`l` is 1-based).
    pub fn inc_power_coefficients(&self, l: usize) -> &[f64] {
        &self.pow_inc[l - 1]
    }

    pub fn dec_power_coefficients(&self, l: usize) -> &[f64] {
        &self.pow_dec[l - 1]
    }

    pub fn alpha(&self, x: &[f64]) -> f64 {
        self.phi.iter().zip(x).map(|(p, v)| p * v).sum()
    }

    pub fn g_inc(&self, l: usize, alpha: f64) -> f64 {
        bernstein_eval(&self.c_inc[l - 1], alpha)
    }

    pub fn g_dec(&self, l: usize, alpha: f64) -> f64 {
        bernstein_eval(&self.c_dec[l - 1], alpha)
    }

    pub fn g_inc_derivative(&self, l: usize, alpha: f64) -> f64 {
        bernstein_derivative(&self.b_inc[l - 1], alpha)
    }

    pub fn g_dec_derivative(&self, l: usize, alpha: f64) -> f64 {
        bernstein_derivative(&self.b_dec[l - 1], alpha)
    }

    /// Total degree of the polynomial map in the state.
    pub fn polynomial_degree(&self) -> usize {
        let eff = |c: &[f64]| {
            let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            c.iter()
                .rposition(|v| v.abs() > 1e-13 * scale.max(1e-300))
                .unwrap_or(0)
        };
        (0..self.dim())
            .map(|i| {
                let inc = eff(&self.pow_inc[i]);
                let dec = eff(&self.pow_dec[i]);
                // x(l) * g terms add one order; a constant g still yields a linear map.
                inc.max(dec) + 1
            })
            .max()
            .unwrap_or(1)
    }

    /// Polynomial evaluation through the monomial coefficients. Agrees with
    /// [`mean_field_step`] up to rounding; used by the moment engine.
    pub fn step_power_form(&self, x: &[f64]) -> Vec<f64> {
        let alpha = self.alpha(x);
        let s = self.m_scale;
        x.iter()
            .enumerate()
            .map(|(i, &xl)| {
                let gi = horner(&self.pow_inc[i], alpha);
                let gd = horner(&self.pow_dec[i], alpha);
                xl + s * ((1.0 - xl) * gi - xl * gd)
            })
            .collect()
    }

    pub fn dump(&self) -> DynamicsDump {
        DynamicsDump {
            rho: self.rho.probs().to_vec(),
            phi: self.phi.clone(),
            lambda: self.lambda,
            c_inc: self.c_inc.clone(),
            c_dec: self.c_dec.clone(),
            m: self.m,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.dump()).expect("dump is serialisable")
    }
}

/// One application of the mean-field map. No clamping is applied; use
/// [`is_admissible`] to detect excursions outside `[0,1]^L`.
pub fn mean_field_step(dyn_: &PolynomialDynamics, x: &[f64]) -> Vec<f64> {
    let alpha = dyn_.alpha(x);
    let s = dyn_.m_scale;
    x.iter()
        .enumerate()
        .map(|(i, &xl)| {
            let l = i + 1;
            xl + s * ((1.0 - xl) * dyn_.g_inc(l, alpha) - xl * dyn_.g_dec(l, alpha))
        })
        .collect()
}

pub fn is_admissible(x: &[f64]) -> bool {
    x.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v))
}

/// Jacobian `d x'(l) / d x(m)` as a dense row-major `L x L` matrix.
pub fn jacobian(dyn_: &PolynomialDynamics, x: &[f64]) -> nalgebra::DMatrix<f64> {
    let n = dyn_.dim();
    let alpha = dyn_.alpha(x);
    let s = dyn_.m_scale;
    let mut j = nalgebra::DMatrix::zeros(n, n);
    for i in 0..n {
        let l = i + 1;
        let gi = dyn_.g_inc(l, alpha);
        let gd = dyn_.g_dec(l, alpha);
        let dgi = dyn_.g_inc_derivative(l, alpha);
        let dgd = dyn_.g_dec_derivative(l, alpha);
        let coupling = s * ((1.0 - x[i]) * dgi - x[i] * dgd);
        for m in 0..n {
            j[(i, m)] = coupling * dyn_.phi[m];
        }
        j[(i, i)] += 1.0 - s * (gi + gd);
    }
    j
}

/// Mean-field trajectory plus the time indices at which it left `[0,1]^L`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldRun {
    pub states: Vec<Vec<f64>>,
    pub excursions: Vec<usize>,
}

impl MeanFieldRun {
    pub fn to_trajectory(&self) -> crate::sis::Trajectory {
        crate::sis::Trajectory {
            states: self.states.clone(),
        }
    }
}

/// Iterates the map `horizon` times from `x0`.
pub fn simulate_mean_field(
    dyn_: &PolynomialDynamics,
    x0: &[f64],
    horizon: usize,
) -> Result<MeanFieldRun> {
    if x0.len() != dyn_.dim() {
        return Err(Error::Dimension {
            context: "mean-field initial state",
            expected: dyn_.dim(),
            actual: x0.len(),
        });
    }
    let mut states = Vec::with_capacity(horizon + 1);
    let mut excursions = Vec::new();
    let mut x = x0.to_vec();
    if !is_admissible(&x) {
        excursions.push(0);
    }
    states.push(x.clone());
    for t in 1..=horizon {
        x = mean_field_step(dyn_, &x);
        if !is_admissible(&x) {
            excursions.push(t);
        }
        states.push(x.clone());
    }
    Ok(MeanFieldRun { states, excursions })
}

/// Fixed-point iterate of the map.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticState {
    pub state: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates until successive states differ by less than `tol` in sup norm.
/// Non-convergence is reported through `converged`, not as an error.
pub fn asymptotic_state(
    dyn_: &PolynomialDynamics,
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<AsymptoticState> {
    if !(tol > 0.0) {
        return Err(param("tol", "must be positive"));
    }
    if x0.len() != dyn_.dim() {
        return Err(Error::Dimension {
            context: "asymptotic state",
            expected: dyn_.dim(),
            actual: x0.len(),
        });
    }
    let mut x = x0.to_vec();
    for it in 1..=max_iter {
        let next = mean_field_step(dyn_, &x);
        let diff = next
            .iter()
            .zip(&x)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        x = next;
        if diff < tol {
            return Ok(AsymptoticState {
                state: x,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(AsymptoticState {
        state: x,
        iterations: max_iter,
        converged: false,
    })
}

/// Tensor coefficients `A_0, A_1, ...` with `f(x) = sum_i A_i x^(i)`.
///
/// `tensors[i]` has `L^(i+1)` entries, row-major with the output index first.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensors {
    pub dim: usize,
    pub tensors: Vec<Vec<f64>>,
}

impl DenseTensors {
    pub fn order(&self) -> usize {
        self.tensors.len() - 1
    }

    /// Evaluates `sum_i A_i x...x`.
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n];
        for (order, t) in self.tensors.iter().enumerate() {
            let block = n.pow(order as u32);
            // Outer product x^(order) flattened in the same index order.
            let mut prod = vec![1.0];
            for _ in 0..order {
                prod = prod
                    .iter()
                    .flat_map(|&p| x.iter().map(move |&v| p * v))
                    .collect();
            }
            for (l, o) in out.iter_mut().enumerate() {
                let row = &t[l * block..(l + 1) * block];
                *o += row.iter().zip(&prod).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }
}

/// Expands the map into dense tensors up to `max_order`.
pub fn dense_tensors(dyn_: &PolynomialDynamics, max_order: usize) -> Result<DenseTensors> {
    let n = dyn_.dim();
    let degree = dyn_.polynomial_degree();
    if max_order < degree {
        return Err(param(
            "max_order",
            format!("map has degree {degree}, requested order {max_order}"),
        ));
    }
    n.checked_pow(degree as u32 + 1)
        .filter(|&e| e <= DENSE_TENSOR_CAPACITY)
        .ok_or_else(|| {
            Error::Capacity(format!(
                "A_{degree} would need {n}^{} entries (limit {DENSE_TENSOR_CAPACITY})",
                degree + 1
            ))
        })?;
    let s = dyn_.m_scale;
    let mut tensors: Vec<Vec<f64>> = (0..=degree).map(|i| vec![0.0; n.pow(i as u32 + 1)]).collect();
    let phi = &dyn_.phi;

    // Adds coef * [x_l if with_xl] * phi^(k) into the row of output l.
    let add = |tensors: &mut Vec<Vec<f64>>, l: usize, k: usize, with_xl: bool, coef: f64| {
        if coef == 0.0 {
            return;
        }
        let order = k + usize::from(with_xl);
        let block = n.pow(order as u32);
        let t = &mut tensors[order];
        let row = &mut t[l * block..(l + 1) * block];
        let mut prod = vec![coef];
        for _ in 0..k {
            prod = prod
                .iter()
                .flat_map(|&p| phi.iter().map(move |&v| p * v))
                .collect();
        }
        if with_xl {
            let inner = n.pow(k as u32);
            row[l * inner..(l + 1) * inner]
                .iter_mut()
                .zip(&prod)
                .for_each(|(r, p)| *r += p);
        } else {
            row.iter_mut().zip(&prod).for_each(|(r, p)| *r += p);
        }
    };

    for l in 0..n {
        // x_l itself.
        add(&mut tensors, l, 0, true, 1.0);
        for (k, &c) in dyn_.pow_inc[l].iter().enumerate() {
            add(&mut tensors, l, k, false, s * c);
            add(&mut tensors, l, k, true, -s * c);
        }
        for (k, &c) in dyn_.pow_dec[l].iter().enumerate() {
            add(&mut tensors, l, k, true, -s * c);
        }
    }
    Ok(DenseTensors { dim: n, tensors })
}
