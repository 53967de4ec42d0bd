//! Stationary points of the three mean-field systems.
//!
//! Model 1 has a closed form: the equilibrium is the product of a
//! Poisson(rho * beta) reservation count and a Geometric(beta) car count, with
//! beta the small root of `rho b^2 - (U + rho + 1) b + U = 0`. Model 2 is a
//! scalar fixed point of a truncated-geometric mean, and Model 3 a pair of
//! coupled conditions on the product-form parameters `(p, q)`. Every root is
//! bracketed and bisected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    geometric_pmf, poisson_pmf, JointDist, MarginalDist, ModelKind, ModelParams, StationLaw,
    TruncationGrid,
};

const MAX_BISECT: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub model: ModelKind,
    /// Limit of the car-availability probability (Model 1) or traffic ratio (Model 2).
    pub beta: Option<f64>,
    pub rho_r: Option<f64>,
    pub rho_v: Option<f64>,
    pub z: Option<f64>,
    /// Equilibrium departure intensity of the reservation queue (Model 1).
    pub delta_bar: Option<f64>,
    /// Probability mass of the closed form lying outside the truncation grid.
    pub tail_defect: f64,
    pub pi: StationLaw,
}

/// Solves the equilibrium for any model. `grid` only matters for Model 1.
pub fn solve(params: &ModelParams, grid: Option<TruncationGrid>) -> Result<EquilibriumSolution> {
    params.validate()?;
    match params.model {
        ModelKind::ReservationInfinite => {
            let grid = grid.unwrap_or_else(|| TruncationGrid::for_model1(params));
            let beta = beta_model1(params);
            let (pi, tail_defect) = pi_model1_with_tail(params, grid)?;
            Ok(EquilibriumSolution {
                model: params.model,
                beta: Some(beta),
                rho_r: Some(params.rho() * beta),
                rho_v: Some(beta),
                z: None,
                delta_bar: Some(delta_bar(params)),
                tail_defect,
                pi: StationLaw::Joint(pi),
            })
        }
        ModelKind::NoReservationFinite => {
            let k = params.capacity.finite().expect("validated");
            let beta = beta_model2(params)?;
            Ok(EquilibriumSolution {
                model: params.model,
                beta: Some(beta),
                rho_r: None,
                rho_v: None,
                z: None,
                delta_bar: None,
                tail_defect: 0.0,
                pi: StationLaw::Marginal(pi_model2(beta, k)),
            })
        }
        ModelKind::ReservationFinite => {
            let s = solve_model3(params)?;
            Ok(EquilibriumSolution {
                model: params.model,
                beta: None,
                rho_r: Some(s.rho_r),
                rho_v: Some(s.rho_v),
                z: Some(s.z),
                delta_bar: None,
                tail_defect: 0.0,
                pi: StationLaw::Joint(s.pi),
            })
        }
    }
}

/// Limit of `b(t)` for the unbounded model.
///
/// Uses the rationalized small root `2U / (S + sqrt(S^2 - 4 rho U))` with
/// `S = U + rho + 1`, which avoids cancellation for small `U`.
pub fn beta_model1(params: &ModelParams) -> f64 {
    let rho = params.rho();
    let u = params.fleet_density;
    let s = u + rho + 1.0;
    let disc = s * s - 4.0 * rho * u;
    // (U + rho + 1)^2 - 4 rho U = (U - rho)^2 + 2(U + rho) + 1 > 0
    debug_assert!(disc > 0.0);
    2.0 * u / (s + disc.max(0.0).sqrt())
}

/// Residual of the mass relation `U = rho b + b / (1 - b)`.
pub fn beta_model1_residual(params: &ModelParams, beta: f64) -> f64 {
    params.rho() * beta + beta / (1.0 - beta) - params.fleet_density
}

/// Equilibrium departure rate of the reservation queue, `lambda * beta`.
pub fn delta_bar(params: &ModelParams) -> f64 {
    let d = params.lambda * beta_model1(params);
    assert!(
        d < params.lambda,
        "equilibrium departure rate must stay below lambda"
    );
    d
}

/// Product-form equilibrium of the unbounded model restricted to `grid`.
pub fn pi_model1(params: &ModelParams, grid: TruncationGrid) -> Result<JointDist> {
    pi_model1_with_tail(params, grid).map(|(d, _)| d)
}

fn pi_model1_with_tail(params: &ModelParams, grid: TruncationGrid) -> Result<(JointDist, f64)> {
    let beta = beta_model1(params);
    let res = poisson_pmf(params.rho() * beta, grid.j_max);
    let cars = geometric_pmf(beta, grid.k_max);
    let kept: f64 = res.iter().sum::<f64>() * cars.iter().sum::<f64>();
    let tail = (1.0 - kept).max(0.0);
    if tail > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "grid {}x{} omits {tail:e} of the equilibrium mass",
            grid.j_max, grid.k_max
        )));
    }
    Ok((JointDist::product(grid, &res, &cars)?, tail))
}

/// Mean of the truncated geometric law `beta^j / sum_{i<=K} beta^i` on `{0..K}`.
pub fn truncated_geometric_mean(beta: f64, k: usize) -> f64 {
    if beta <= 0.0 {
        return 0.0;
    }
    if beta > 1.0 {
        return k as f64 - truncated_geometric_mean(1.0 / beta, k);
    }
    if (beta - 1.0).abs() < 1e-9 {
        // removable singularity; first-order expansion around 1
        let kf = k as f64;
        return kf / 2.0 + (beta - 1.0) * kf * (kf + 2.0) / 12.0;
    }
    let (mut num, mut den, mut pw) = (0.0, 0.0, 1.0);
    for j in 0..=k {
        num += j as f64 * pw;
        den += pw;
        pw *= beta;
    }
    num / den
}

/// Traffic ratio of the no-reservation model: the root of
/// `beta = (mu / lambda) (U - m_K(beta))`.
pub fn beta_model2(params: &ModelParams) -> Result<f64> {
    let k = params
        .capacity
        .finite()
        .ok_or_else(|| Error::param("capacity", "model 2 needs a finite capacity"))?;
    let u = params.fleet_density;
    if u <= 0.0 {
        return Err(Error::param(
            "fleet_density",
            "degenerate: U <= 0 gives beta = 0",
        ));
    }
    // U = K is not degenerate here: cars in transit keep stations below capacity
    let ratio = params.mu / params.lambda;
    let g = |b: f64| b - ratio * (u - truncated_geometric_mean(b, k));
    // g is strictly increasing, g(0) < 0 and g(ratio * U) >= 0
    bisect(g, 0.0, ratio * u, 1e-15)
}

/// Truncated geometric law with ratio `beta` on `{0..K}`.
pub fn pi_model2(beta: f64, k: usize) -> MarginalDist {
    let mass = if beta <= 0.0 {
        let mut v = vec![0.0; k + 1];
        v[0] = 1.0;
        v
    } else if beta <= 1.0 {
        geometric_weights(beta, k)
    } else {
        let mut v = geometric_weights(1.0 / beta, k);
        v.reverse();
        v
    };
    MarginalDist::new(mass).expect("non-negative by construction")
}

fn geometric_weights(beta: f64, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..=k).map(|j| beta.powi(j as i32)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model3Solution {
    pub rho_r: f64,
    pub rho_v: f64,
    pub z: f64,
    pub pi: JointDist,
}

/// Unnormalized product-form weights `p^j / j! q^k` on `{j + k <= K}`.
struct ProductForm {
    k: usize,
    p: f64,
    q: f64,
}

impl ProductForm {
    fn weight(&self, j: usize, kk: usize, ln_fact: &[f64]) -> f64 {
        let a = if j == 0 {
            0.0
        } else {
            j as f64 * self.p.ln() - ln_fact[j]
        };
        let b = if kk == 0 {
            0.0
        } else {
            kk as f64 * self.q.ln()
        };
        (a + b).exp()
    }

    /// `(Z, d, mass)` where `d = 1 - P(k = 0)` and `mass = E[j + k]`.
    fn moments(&self, ln_fact: &[f64]) -> (f64, f64, f64) {
        let (mut z, mut no_car, mut m) = (0.0, 0.0, 0.0);
        for j in 0..=self.k {
            for kk in 0..=self.k - j {
                let w = self.weight(j, kk, ln_fact);
                z += w;
                if kk == 0 {
                    no_car += w;
                }
                m += (j + kk) as f64 * w;
            }
        }
        (z, 1.0 - no_car / z, m / z)
    }
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n + 1];
    for i in 1..=n {
        v[i] = v[i - 1] + (i as f64).ln();
    }
    v
}

/// Solves the capped tandem equilibrium: find `(p, q)` with
/// `mu p = lambda d(p, q)` and `E[j + k] = U` under the product form.
pub fn solve_model3(params: &ModelParams) -> Result<Model3Solution> {
    let k = match (params.model, params.capacity.finite()) {
        (ModelKind::ReservationFinite, Some(k)) => k,
        _ => {
            return Err(Error::param(
                "model",
                "expected the capped reservation model",
            ))
        }
    };
    let u = params.fleet_density;
    if u <= 0.0 || u >= k as f64 {
        return Err(Error::param(
            "fleet_density",
            format!("need 0 < U < K, got U = {u}"),
        ));
    }
    let rho = params.rho();
    let lf = ln_factorials(k);

    let p_of_q = |q: f64| -> Result<f64> {
        if q == 0.0 {
            return Ok(0.0);
        }
        let h = |p: f64| p - rho * ProductForm { k, p, q }.moments(&lf).1;
        bisect(h, 0.0, rho, 1e-16)
    };
    let mass_of_q = |q: f64| -> Result<f64> {
        let p = p_of_q(q)?;
        Ok(ProductForm { k, p, q }.moments(&lf).2)
    };

    let mut q_hi = 1.0;
    let mut it = 0;
    while mass_of_q(q_hi)? <= u {
        q_hi *= 2.0;
        it += 1;
        if it > 200 {
            return Err(Error::NoConvergence {
                iterations: it,
                detail: format!("no upper bracket for q, last q = {q_hi}"),
            });
        }
    }
    let q = bisect_result(|q| mass_of_q(q).map(|m| m - u), 0.0, q_hi, 1e-16)?;
    let p = p_of_q(q)?;
    let form = ProductForm { k, p, q };
    let (z, _, _) = form.moments(&lf);
    let grid = TruncationGrid::capped(k);
    let pi = JointDist::from_fn(grid, |j, kk| form.weight(j, kk, &lf) / z)?;
    Ok(Model3Solution {
        rho_r: p,
        rho_v: q,
        z,
        pi,
    })
}

/// Residuals of the two Model 3 equilibrium conditions for a candidate `(p, q)`:
/// `p - (lambda/mu)(1 - sum_j pi_{j0})` and `sum (j+k) pi_{jk} - U`.
pub fn model3_residuals(params: &ModelParams, p: f64, q: f64) -> (f64, f64) {
    let k = params.capacity.finite().unwrap_or(0);
    let lf = ln_factorials(k);
    let (_, d, m) = ProductForm { k, p, q }.moments(&lf);
    (p - params.rho() * d, m - params.fleet_density)
}

/// Residual of the stationary generating-function equation and the rate identities
/// `delta = mu E[j] = lambda q = lambda (1 - F(1, 0))` for a candidate law.
pub fn product_form_check(dist: &JointDist, params: &ModelParams, delta: f64) -> f64 {
    let (lambda, mu) = (params.lambda, params.mu);
    let grid = dist.grid();
    let gf = |x: f64, y: f64| -> (f64, f64) {
        let (mut f, mut fx) = (0.0, 0.0);
        for (j, k) in grid.cells() {
            let a = dist.get(j, k);
            if a == 0.0 {
                continue;
            }
            let yk = y.powi(k as i32);
            f += a * x.powi(j as i32) * yk;
            if j > 0 {
                fx += a * j as f64 * x.powi(j as i32 - 1) * yk;
            }
        }
        (f, fx)
    };
    let probes = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut worst: f64 = 0.0;
    for &x in &probes {
        let (fx0, _) = gf(x, 0.0);
        for &y in probes.iter().filter(|y| **y > 0.0) {
            let (f, fx) = gf(x, y);
            let inv = 1.0 - 1.0 / y;
            let r = (delta * (1.0 - x) + lambda * inv) * f - mu * (y - x) * fx - lambda * inv * fx0;
            worst = worst.max(r.abs());
        }
    }
    let mean_k = dist.mean_cars();
    let q = mean_k / (1.0 + mean_k);
    let ids = [
        delta - mu * dist.mean_reservations(),
        delta - lambda * q,
        delta - lambda * (1.0 - dist.prob_no_car()),
    ];
    ids.iter().fold(worst, |w, r| w.max(r.abs()))
}

/// Bisection for an increasing function with `f(lo) <= 0 <= f(hi)`.
fn bisect(f: impl Fn(f64) -> f64, lo: f64, hi: f64, rel_tol: f64) -> Result<f64> {
    bisect_result(|x| Ok(f(x)), lo, hi, rel_tol)
}

fn bisect_result(
    f: impl Fn(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    rel_tol: f64,
) -> Result<f64> {
    let (flo, fhi) = (f(lo)?, f(hi)?);
    if flo > 0.0 || fhi < 0.0 {
        return Err(Error::NoConvergence {
            iterations: 0,
            detail: format!("root not bracketed: f({lo}) = {flo}, f({hi}) = {fhi}"),
        });
    }
    if flo == 0.0 {
        return Ok(lo);
    }
    for _ in 0..MAX_BISECT {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= rel_tol * hi.abs().max(f64::MIN_POSITIVE) {
            return Ok(mid);
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::total_mass;

    fn m1(l: f64, m: f64, u: f64) -> ModelParams {
        ModelParams::model1(l, m, u).unwrap()
    }

    #[test]
    fn beta_closed_form_points() {
        assert_eq!(beta_model1(&m1(1.0, 1.0, 0.0)), 0.0);
        let b = beta_model1(&m1(1.0, 1.0, 1.0));
        assert!((b - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-15);
        assert!(beta_model1_residual(&m1(1.0, 1.0, 1.0), b).abs() < 1e-14);
        let p = m1(2.0, 1.0, 3.0);
        let b = beta_model1(&p);
        assert!((b - (6.0 - 12f64.sqrt()) / 4.0).abs() < 1e-15);
        assert!((b - 0.6339746).abs() < 1e-7);
        assert!(beta_model1_residual(&p, b).abs() < 1e-12);
    }

    #[test]
    fn delta_bar_points() {
        assert!((delta_bar(&m1(1.0, 1.0, 1.0)) - 0.381966).abs() < 1e-6);
        assert_eq!(delta_bar(&m1(1.0, 1.0, 0.0)), 0.0);
        let d = delta_bar(&m1(2.0, 1.0, 3.0));
        assert!((d - 1.2679492).abs() < 1e-7 && d < 2.0);
        // printed form mu (U + rho + 1 - sqrt(...)) / 2
        let p = m1(2.0, 1.0, 3.0);
        let s: f64 = 3.0 + 2.0 + 1.0;
        let printed = p.mu * (s - (s * s - 4.0 * 2.0 * 3.0).sqrt()) / 2.0;
        assert!((d - printed).abs() < 1e-14);
    }

    #[test]
    fn pi_model1_values() {
        let p = m1(1.0, 1.0, 1.0);
        let grid = TruncationGrid::for_model1(&p);
        let pi = pi_model1(&p, grid).unwrap();
        let b = beta_model1(&p);
        let expect00 = (-b).exp() * (1.0 - b);
        assert!((pi.get(0, 0) - expect00).abs() < 1e-12);
        assert!((pi.get(0, 0) - 0.4218195).abs() < 1e-6);
        for (k, m) in pi.marginal_cars().iter().enumerate() {
            assert!((m - (1.0 - b) * b.powi(k as i32)).abs() < 1e-10);
        }
        assert!((total_mass(&pi) - 1.0).abs() < 1e-9);

        let empty = pi_model1(&m1(1.0, 1.0, 0.0), TruncationGrid::rect(5, 5)).unwrap();
        assert_eq!(empty.get(0, 0), 1.0);

        assert!(pi_model1(&p, TruncationGrid::rect(3, 3)).is_err());
    }

    #[test]
    fn model2_golden_ratio() {
        let p = ModelParams::model2(1.0, 1.0, 1.0, 1).unwrap();
        let b = beta_model2(&p).unwrap();
        assert!((b - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-12);
        let pi = pi_model2(b, 1);
        assert!((pi.get(0) - 1.0 / (1.0 + b)).abs() < 1e-15);
        assert!((pi.get(1) - 0.381966).abs() < 1e-6);
    }

    #[test]
    fn model2_degenerate_fleet() {
        assert!(beta_model2(&ModelParams::model2(1.0, 1.0, 0.0, 2).unwrap()).is_err());
        assert!(beta_model2(&ModelParams::model2(1.0, 1.0, 2.0, 2).unwrap()).unwrap() > 0.0);
        let small = beta_model2(&ModelParams::model2(1.0, 1.0, 1e-9, 2).unwrap()).unwrap();
        assert!(small < 1e-8);
    }

    #[test]
    fn model2_scan_oracle_k2() {
        // brute-force scan of g on (0, 1) for lambda = mu = 1, K = 2, U = 1
        let g = |b: f64| b - (1.0 - (b + 2.0 * b * b) / (1.0 + b + b * b));
        let n = 1_000_000;
        let mut root = f64::NAN;
        let mut changes = 0;
        let mut prev = g(1e-12);
        for i in 1..=n {
            let b = i as f64 / n as f64;
            let cur = g(b);
            if prev < 0.0 && cur >= 0.0 {
                changes += 1;
                root = b - 0.5 / n as f64;
            }
            prev = cur;
        }
        assert_eq!(changes, 1);
        let b = beta_model2(&ModelParams::model2(1.0, 1.0, 1.0, 2).unwrap()).unwrap();
        assert!((b - root).abs() < 1e-6, "{b} vs {root}");
    }

    #[test]
    fn model2_beta_above_one() {
        // mu / lambda large and U close to K forces a traffic ratio above one
        let p = ModelParams::model2(1.0, 5.0, 2.5, 3).unwrap();
        let b = beta_model2(&p).unwrap();
        assert!(b > 1.0);
        let pi = pi_model2(b, 3);
        assert!((pi.sum() - 1.0).abs() < 1e-14);
        let fixed = p.mu / p.lambda * (p.fleet_density - pi.mean());
        assert!((fixed - b).abs() < 1e-12 * b);
    }

    #[test]
    fn pi_model2_degenerate() {
        let pi = pi_model2(0.0, 3);
        assert_eq!(pi.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        let at_one = pi_model2(1.0, 3);
        assert!(at_one.as_slice().iter().all(|m| (m - 0.25).abs() < 1e-15));
        assert!((truncated_geometric_mean(1.0, 4) - 2.0).abs() < 1e-15);
        assert!((truncated_geometric_mean(1.0 + 1e-10, 4) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn model3_hand_solution() {
        let p = ModelParams::model3(1.0, 1.0, 0.5, 1).unwrap();
        let s = solve_model3(&p).unwrap();
        assert!((s.rho_r - 1.0 / 3.0).abs() < 1e-10);
        assert!((s.rho_v - 2.0 / 3.0).abs() < 1e-10);
        assert!((s.z - 2.0).abs() < 1e-10);
        assert!((s.pi.get(0, 0) - 0.5).abs() < 1e-10);
        assert!((s.pi.get(1, 0) - 1.0 / 6.0).abs() < 1e-10);
        assert!((s.pi.get(0, 1) - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn model3_small_fleet() {
        let p = ModelParams::model3(1.0, 1.0, 1e-7, 3).unwrap();
        let s = solve_model3(&p).unwrap();
        assert!(s.rho_r < 1e-6 && s.rho_v < 1e-6);
        assert!(s.pi.get(0, 0) > 1.0 - 1e-6);
    }

    #[test]
    fn product_form_controls() {
        let p = m1(1.0, 1.0, 1.0);
        let grid = TruncationGrid::for_model1(&p);
        let pi = pi_model1(&p, grid).unwrap();
        assert!(product_form_check(&pi, &p, delta_bar(&p)) < 1e-9);

        let b = beta_model1(&p);
        let geo_only = JointDist::product(grid, &[1.0], &geometric_pmf(b, grid.k_max)).unwrap();
        assert!(product_form_check(&geo_only, &p, delta_bar(&p)) > 0.1);

        let empty = JointDist::point(grid, 0, 0).unwrap();
        assert_eq!(product_form_check(&empty, &p, 0.0), 0.0);
    }
}
