//! Slow-scale evolution of the degree distribution under preferential
//! attachment, stochastic-dominance predicates and diffusion thresholds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::graph::DegreeDistribution;
use crate::meanfield::{asymptotic_state, build_dynamics_lenient, LambdaScope};
use crate::sis::TransitionKernel;

/// Upper-bidiagonal transition matrix `H_k(p)` over degrees `1..=size`.
///
/// Row `d < size` keeps mass with probability `1 - (2-p) d / (2k)` and moves
/// it to `d + 1` otherwise. The last state is absorbing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionMatrix {
    pub p: f64,
    pub k: usize,
    pub size: usize,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

pub fn evolution_matrix(p: f64, k: usize, size: usize) -> Result<EvolutionMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(param("p", format!("must lie in [0,1], got {p}")));
    }
    if k == 0 {
        return Err(param("k", "slow index must be at least 1"));
    }
    if size == 0 {
        return Err(param("size", "must be at least 1"));
    }
    let mut diag = Vec::with_capacity(size);
    let mut sup = Vec::with_capacity(size.saturating_sub(1));
    for d in 1..size {
        let move_up = (2.0 - p) * d as f64 / (2 * k) as f64;
        if move_up > 1.0 {
            return Err(param(
                "k",
                format!("k = {k} too small for size {size}: row {d} has negative diagonal; raise k or shrink size"),
            ));
        }
        diag.push(1.0 - move_up);
        sup.push(move_up);
    }
    diag.push(1.0);
    Ok(EvolutionMatrix {
        p,
        k,
        size,
        diag,
        sup,
    })
}

impl EvolutionMatrix {
    /// Static network: `H = I`.
    pub fn identity(size: usize) -> Self {
        EvolutionMatrix {
            p: 0.0,
            k: 0,
            size,
            diag: vec![1.0; size],
            sup: vec![0.0; size.saturating_sub(1)],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Entry `(i, j)`, 1-based.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i - 1]
        } else if j == i + 1 && i < self.size {
            self.sup[i - 1]
        } else {
            0.0
        }
    }

    /// Row `i` (1-based) as a dense vector.
    pub fn row(&self, i: usize) -> Vec<f64> {
        (1..=self.size).map(|j| self.entry(i, j)).collect()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.size, self.size, |i, j| self.entry(i + 1, j + 1))
    }

    /// `H' rho`.
    pub fn transpose_apply(&self, rho: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.size];
        for i in 0..self.size {
            out[i] += self.diag[i] * rho[i];
            if i + 1 < self.size {
                out[i + 1] += self.sup[i] * rho[i];
            }
        }
        out
    }
}

/// `rho_k = H_k(p)' rho_{k-1}` for `k = k_start+1 ..= k_end`; the returned
/// sequence starts with `rho0` (the distribution at `k_start`).
pub fn evolve_distribution(
    rho0: &DegreeDistribution,
    p: f64,
    k_start: usize,
    k_end: usize,
) -> Result<Vec<Vec<f64>>> {
    if k_end < k_start {
        return Err(param("k_end", "must not precede k_start"));
    }
    let size = rho0.max_degree();
    let mut out = Vec::with_capacity(k_end - k_start + 1);
    let mut rho = rho0.probs().to_vec();
    out.push(rho.clone());
    for k in (k_start + 1)..=k_end {
        rho = evolution_matrix(p, k, size)?.transpose_apply(&rho);
        out.push(rho.clone());
    }
    Ok(out)
}

/// Outcome of a dominance check; `first_violation_index` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DominanceResult {
    pub holds: bool,
    pub first_violation_index: Option<usize>,
}

impl DominanceResult {
    fn from_violation(v: Option<usize>) -> Self {
        DominanceResult {
            holds: v.is_none(),
            first_violation_index: v,
        }
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "dominance comparison",
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// `a >=_sd b`: every tail sum `sum_{i>=j}` of `a` is at least that of `b`.
///
/// The `j = 1` tail is the total mass and is not compared, so rounding in the
/// normalisation cannot produce a spurious violation.
pub fn first_order_dominates(a: &[f64], b: &[f64]) -> Result<DominanceResult> {
    check_lengths(a, b)?;
    let (mut ta, mut tb) = (0.0, 0.0);
    let mut violation = None;
    for j in (2..=a.len()).rev() {
        ta += a[j - 1];
        tb += b[j - 1];
        if ta < tb {
            violation = Some(j);
        }
    }
    Ok(DominanceResult::from_violation(violation))
}

/// `a >=_ssd b`: `sum_{j<=i} F_a(j) <= sum_{j<=i} F_b(j)` for every `i`.
pub fn second_order_dominates(a: &[f64], b: &[f64]) -> Result<DominanceResult> {
    check_lengths(a, b)?;
    let (mut fa, mut fb, mut sa, mut sb) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..a.len() {
        fa += a[i];
        fb += b[i];
        sa += fa;
        sb += fb;
        if sa > sb + 1e-12 {
            return Ok(DominanceResult::from_violation(Some(i + 1)));
        }
    }
    Ok(DominanceResult::from_violation(None))
}

/// Row-wise first-order dominance of `h_a` over `h_b`; the violation index is
/// the offending row.
pub fn rowwise_dominates(h_a: &EvolutionMatrix, h_b: &EvolutionMatrix) -> Result<DominanceResult> {
    if h_a.size != h_b.size || h_a.k != h_b.k {
        return Err(param("h_b", "matrices differ in size or slow index"));
    }
    for i in 1..=h_a.size {
        if !first_order_dominates(&h_a.row(i), &h_b.row(i))?.holds {
            return Ok(DominanceResult::from_violation(Some(i)));
        }
    }
    Ok(DominanceResult::from_violation(None))
}

/// Rows of `h` are first-order increasing in the row index.
pub fn rows_increasing(h: &EvolutionMatrix) -> DominanceResult {
    for i in 1..h.size {
        let d = first_order_dominates(&h.row(i + 1), &h.row(i)).expect("equal row lengths");
        if !d.holds {
            return DominanceResult::from_violation(Some(i + 1));
        }
    }
    DominanceResult::from_violation(None)
}

/// `lambda* = sum_l l rho(l) / sum_l l^2 rho(l) P21(l,1)`, infinite when the
/// denominator vanishes. Assumes unit recovery probability.
pub fn diffusion_threshold_closed_form(rho: &[f64], kernel: &TransitionKernel) -> Result<f64> {
    if kernel.max_degree() < rho.len() {
        return Err(param("kernel", "does not cover every degree of rho"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &r) in rho.iter().enumerate() {
        let l = (i + 1) as f64;
        num += l * r;
        den += l * l * r * kernel.p21(i + 1, 1);
    }
    if den <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(num / den)
}

/// Settings for [`diffusion_threshold_empirical`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    pub x0: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// Positivity tolerance on `max_l x_inf(l)`.
    pub theta_pos: f64,
    pub rel_tol: f64,
    pub fixed_point_tol: f64,
    pub max_iter: usize,
}

impl Default for ThresholdSearch {
    fn default() -> Self {
        ThresholdSearch {
            x0: 0.01,
            lambda_lo: 1e-3,
            lambda_hi: 1e3,
            theta_pos: 1e-4,
            rel_tol: 1e-3,
            fixed_point_tol: 1e-12,
            max_iter: 200_000,
        }
    }
}

/// `max_l |x_inf(l)|` of the mean-field map with the diffusion parameter
/// scaling infection only.
pub fn endemic_level(
    rho: &DegreeDistribution,
    kernel: &TransitionKernel,
    lambda: f64,
    search: &ThresholdSearch,
) -> Result<f64> {
    let k = kernel.with_lambda_unchecked(lambda);
    let d = build_dynamics_lenient(&k, rho, 1, LambdaScope::InfectionOnly)?;
    let x0 = vec![search.x0; rho.max_degree()];
    let fp = asymptotic_state(&d, &x0, search.fixed_point_tol, search.max_iter)?;
    // Orbits that escape the unit cube count as endemic.
    Ok(fp
        .state
        .iter()
        .map(|v| if v.is_nan() { f64::INFINITY } else { v.abs() })
        .fold(0.0, f64::max))
}

/// Smallest `lambda` whose endemic level exceeds `theta_pos`, by bisection.
/// Returns infinity when the kernel never transmits.
pub fn diffusion_threshold_empirical(
    rho: &DegreeDistribution,
    kernel: &TransitionKernel,
    search: &ThresholdSearch,
) -> Result<f64> {
    if !(search.x0 > 0.0 && search.x0 <= 0.05) {
        return Err(param("x0", "must lie in (0, 0.05]"));
    }
    let transmits = (1..=rho.max_degree()).any(|l| kernel.p21_row(l).iter().any(|&p| p > 0.0));
    if !transmits {
        return Ok(f64::INFINITY);
    }
    let positive = |lambda: f64| -> Result<bool> {
        Ok(endemic_level(rho, kernel, lambda, search)? > search.theta_pos)
    };
    // Expand geometrically from below: far above the threshold the
    // synchronous map can leave the unit cube.
    let mut lo = search.lambda_lo;
    if positive(lo)? {
        return Err(Error::Numerical(format!(
            "threshold bracket failure: endemic state already at lambda = {lo}"
        )));
    }
    let mut hi = lo * 2.0;
    while !positive(hi)? {
        if hi > search.lambda_hi {
            return Err(Error::Numerical(format!(
                "threshold bracket failure: no endemic state up to lambda = {}",
                search.lambda_hi
            )));
        }
        lo = hi;
        hi *= 2.0;
    }
    while (hi - lo) > search.rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if positive(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `Q(alpha) = sum_l phi(l) g_inc,l / (g_inc,l + g_dec,l)` with the diffusion
/// parameter scaling infection only.
pub fn q_function(rho: &DegreeDistribution, kernel: &TransitionKernel, alpha: f64) -> Result<f64> {
    let d = build_dynamics_lenient(kernel, rho, 1, LambdaScope::InfectionOnly)?;
    Ok(q_eval(&d, alpha))
}

fn q_eval(d: &crate::meanfield::PolynomialDynamics, alpha: f64) -> f64 {
    (1..=d.dim())
        .map(|l| {
            let gi = d.g_inc(l, alpha);
            let total = gi + d.g_dec(l, alpha);
            if total == 0.0 {
                0.0
            } else {
                d.phi()[l - 1] * gi / total
            }
        })
        .sum()
}

/// `dQ/dalpha` at the disease-free state by a Richardson-extrapolated central
/// difference with base step `h`.
pub fn q_slope_at_zero_with_step(
    rho: &DegreeDistribution,
    kernel: &TransitionKernel,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(param("h", "step must be positive"));
    }
    let d = build_dynamics_lenient(kernel, rho, 1, LambdaScope::InfectionOnly)?;
    let central = |h: f64| (q_eval(&d, h) - q_eval(&d, -h)) / (2.0 * h);
    Ok((4.0 * central(h / 2.0) - central(h)) / 3.0)
}

/// Exact `dQ/dalpha` at zero from the polynomial derivatives of `g_inc` and
/// `g_dec`. Classes with `g_inc + g_dec = 0` at zero contribute nothing.
pub fn q_slope_at_zero(rho: &DegreeDistribution, kernel: &TransitionKernel) -> Result<f64> {
    let d = build_dynamics_lenient(kernel, rho, 1, LambdaScope::InfectionOnly)?;
    Ok((1..=d.dim())
        .map(|l| {
            let (gi, gd) = (d.g_inc(l, 0.0), d.g_dec(l, 0.0));
            let total = gi + gd;
            if total == 0.0 {
                return 0.0;
            }
            let (dgi, dgd) = (d.g_inc_derivative(l, 0.0), d.g_dec_derivative(l, 0.0));
            d.phi()[l - 1] * (dgi * gd - gi * dgd) / (total * total)
        })
        .sum())
}

/// One line of the threshold sweep report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub p: f64,
    pub k: usize,
    pub lambda_star_cf: f64,
    pub lambda_star_emp: Option<f64>,
    /// Evolved distribution at the previous (smaller) `p` first-order
    /// dominates this one.
    pub dominance_ok: bool,
}

/// Evolves `rho0` from `k_start` to `k_end` for each `p` in ascending order
/// and reports closed-form (and optionally empirical) thresholds.
pub fn threshold_sweep(
    rho0: &DegreeDistribution,
    kernel: &TransitionKernel,
    p_grid: &[f64],
    k_start: usize,
    k_end: usize,
    empirical: Option<&ThresholdSearch>,
) -> Result<Vec<ThresholdRow>> {
    let mut grid = p_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite p"));
    let mut rows = Vec::with_capacity(grid.len());
    let mut prev: Option<Vec<f64>> = None;
    for &p in &grid {
        let rho = evolve_distribution(rho0, p, k_start, k_end)?
            .pop()
            .expect("non-empty sequence");
        let cf = diffusion_threshold_closed_form(&rho, kernel)?;
        let emp = match empirical {
            Some(s) => Some(diffusion_threshold_empirical(
                &DegreeDistribution::from_weights(&rho)?,
                kernel,
                s,
            )?),
            None => None,
        };
        let dominance_ok = match &prev {
            Some(q) => first_order_dominates(q, &rho)?.holds,
            None => true,
        };
        rows.push(ThresholdRow {
            p,
            k: k_end,
            lambda_star_cf: cf,
            lambda_star_emp: emp,
            dominance_ok,
        });
        prev = Some(rho);
    }
    Ok(rows)
}

/// CSV `p,k,lambda_star_cf,lambda_star_emp,dominance_ok`.
pub fn threshold_rows_to_csv(rows: &[ThresholdRow]) -> String {
    let mut s = String::from("p,k,lambda_star_cf,lambda_star_emp,dominance_ok\n");
    for r in rows {
        let emp = r.lambda_star_emp.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{emp},{}",
            r.p, r.k, r.lambda_star_cf, r.dominance_ok
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_step() {
        let h = evolution_matrix(1.0, 2, 4).unwrap();
        assert_eq!(h.transpose_apply(&[1.0, 0.0, 0.0, 0.0]), vec![0.75, 0.25, 0.0, 0.0]);
    }

    #[test]
    fn rows_are_stochastic() {
        for &(p, k, size) in &[(0.0, 10, 5), (0.3, 50, 40), (1.0, 7, 8)] {
            let h = evolution_matrix(p, k, size).unwrap();
            for i in 1..=size {
                let s: f64 = h.row(i).iter().sum();
                assert_eq!(s, 1.0);
            }
            assert_eq!(h.entry(size, size), 1.0);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(evolution_matrix(2.0, 10, 3).is_err());
        assert!(evolution_matrix(-0.1, 10, 3).is_err());
        assert!(evolution_matrix(0.0, 2, 5).is_err());
        assert!(evolution_matrix(0.5, 0, 1).is_err());
    }

    #[test]
    fn dominance_examples() {
        let a = [0.3, 0.7];
        let b = [0.5, 0.5];
        assert!(first_order_dominates(&a, &b).unwrap().holds);
        let r = first_order_dominates(&b, &a).unwrap();
        assert_eq!(r.first_violation_index, Some(2));
        assert!(first_order_dominates(&a, &a).unwrap().holds);
        assert!(second_order_dominates(&a, &a).unwrap().holds);
        assert!(first_order_dominates(&a, &[1.0]).is_err());
    }

    #[test]
    fn matrix_ordering_checks() {
        let h1 = evolution_matrix(0.8, 100, 20).unwrap();
        let h2 = evolution_matrix(0.2, 100, 20).unwrap();
        assert!(rowwise_dominates(&h2, &h1).unwrap().holds);
        assert!(!rowwise_dominates(&h1, &h2).unwrap().holds);
        assert!(rowwise_dominates(&h1, &h1).unwrap().holds);
        assert!(rows_increasing(&h1).holds);
    }

    #[test]
    fn identity_leaves_distribution() {
        let h = EvolutionMatrix::identity(3);
        assert_eq!(h.transpose_apply(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn closed_form_single_degree() {
        let k = TransitionKernel::from_fn(1, 1.0, |_, a| (1.0, if a == 1 { 0.5 } else { 0.0 }))
            .unwrap();
        assert_eq!(diffusion_threshold_closed_form(&[1.0], &k).unwrap(), 2.0);
        let none = TransitionKernel::from_fn(1, 1.0, |_, _| (1.0, 0.0)).unwrap();
        assert!(diffusion_threshold_closed_form(&[1.0], &none)
            .unwrap()
            .is_infinite());
    }

    #[test]
    fn scalar_empirical_matches_closed_form() {
        let k = TransitionKernel::from_fn(1, 1.0, |_, a| (1.0, if a == 1 { 0.5 } else { 0.0 }))
            .unwrap();
        let rho = DegreeDistribution::new(vec![1.0]).unwrap();
        let emp = diffusion_threshold_empirical(&rho, &k, &ThresholdSearch::default()).unwrap();
        assert!((emp - 2.0).abs() / 2.0 < 0.01, "emp = {emp}");
    }

    #[test]
    fn no_transmission_gives_flat_q() {
        let k = TransitionKernel::from_fn(3, 1.0, |_, _| (1.0, 0.0)).unwrap();
        let rho = DegreeDistribution::uniform(3).unwrap();
        assert_eq!(q_slope_at_zero(&rho, &k).unwrap(), 0.0);
        assert!(diffusion_threshold_empirical(&rho, &k, &ThresholdSearch::default())
            .unwrap()
            .is_infinite());
    }

    #[test]
    fn csv_header() {
        let rows = vec![ThresholdRow {
            p: 0.5,
            k: 10,
            lambda_star_cf: 1.5,
            lambda_star_emp: None,
            dominance_ok: true,
        }];
        assert_eq!(
            threshold_rows_to_csv(&rows),
            "p,k,lambda_star_cf,lambda_star_emp,dominance_ok\n0.5,10,1.5,,true\n"
        );
    }
}
