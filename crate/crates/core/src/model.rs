//! Parameters, truncation grids and distributions shared by every solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the three station dynamics is being modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Reservations at destination, unbounded station capacity.
    ReservationInfinite,
    /// No reservations, finite capacity; blocked cars keep travelling.
    NoReservationFinite,
    /// Reservations at destination with a joint cap `reservations + cars <= K`.
    ReservationFinite,
}

impl ModelKind {
    pub fn has_reservations(self) -> bool {
        !matches!(self, ModelKind::NoReservationFinite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capacity {
    Finite(usize),
    Infinite,
}

impl Capacity {
    pub fn finite(self) -> Option<usize> {
        match self {
            Capacity::Finite(k) => Some(k),
            Capacity::Infinite => None,
        }
    }
}

/// Rates, fleet density and capacity of a homogeneous station network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// User arrival intensity at a station (departure rate of a parked car).
    pub lambda: f64,
    /// Inverse mean travel time.
    pub mu: f64,
    /// Cars per station in the large-network limit.
    pub fleet_density: f64,
    pub capacity: Capacity,
    pub model: ModelKind,
}

impl ModelParams {
    pub fn new(
        lambda: f64,
        mu: f64,
        fleet_density: f64,
        capacity: Capacity,
        model: ModelKind,
    ) -> Result<Self> {
        let p = ModelParams {
            lambda,
            mu,
            fleet_density,
            capacity,
            model,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn model1(lambda: f64, mu: f64, fleet_density: f64) -> Result<Self> {
        Self::new(
            lambda,
            mu,
            fleet_density,
            Capacity::Infinite,
            ModelKind::ReservationInfinite,
        )
    }

    pub fn model2(lambda: f64, mu: f64, fleet_density: f64, k: usize) -> Result<Self> {
        Self::new(
            lambda,
            mu,
            fleet_density,
            Capacity::Finite(k),
            ModelKind::NoReservationFinite,
        )
    }

    pub fn model3(lambda: f64, mu: f64, fleet_density: f64, k: usize) -> Result<Self> {
        Self::new(
            lambda,
            mu,
            fleet_density,
            Capacity::Finite(k),
            ModelKind::ReservationFinite,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(
                "lambda",
                format!("must be positive, got {}", self.lambda),
            ));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::param(
                "mu",
                format!("must be positive, got {}", self.mu),
            ));
        }
        if !(self.fleet_density >= 0.0 && self.fleet_density.is_finite()) {
            return Err(Error::param(
                "fleet_density",
                format!("must be non-negative, got {}", self.fleet_density),
            ));
        }
        match (self.model, self.capacity) {
            (ModelKind::ReservationInfinite, Capacity::Finite(_)) => Err(Error::param(
                "capacity",
                "the unbounded reservation model needs infinite capacity",
            )),
            (ModelKind::ReservationInfinite, Capacity::Infinite) => Ok(()),
            (_, Capacity::Infinite) => Err(Error::param(
                "capacity",
                "capacity-constrained models need a finite capacity",
            )),
            (_, Capacity::Finite(0)) => Err(Error::param("capacity", "capacity must be positive")),
            (_, Capacity::Finite(k)) if self.fleet_density > k as f64 => Err(Error::param(
                "fleet_density",
                format!("{} exceeds capacity {k}", self.fleet_density),
            )),
            _ => Ok(()),
        }
    }

    /// Load factor `lambda / mu`.
    pub fn rho(&self) -> f64 {
        self.lambda / self.mu
    }
}

/// Numerical tolerances used across the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub mass_tol: f64,
    pub fixed_point_tol: f64,
    pub ode_rel_tol: f64,
    pub ode_abs_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            mass_tol: 1e-9,
            fixed_point_tol: 1e-12,
            ode_rel_tol: 1e-8,
            ode_abs_tol: 1e-12,
        }
    }
}

/// Rectangular `(j, k)` index set, optionally cut to `j + k <= joint_cap`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationGrid {
    pub j_max: usize,
    pub k_max: usize,
    pub joint_cap: Option<usize>,
}

impl TruncationGrid {
    pub fn rect(j_max: usize, k_max: usize) -> Self {
        TruncationGrid {
            j_max,
            k_max,
            joint_cap: None,
        }
    }

    /// Exact grid `{j + k <= cap}` of the finite-capacity models.
    pub fn capped(cap: usize) -> Self {
        TruncationGrid {
            j_max: cap,
            k_max: cap,
            joint_cap: Some(cap),
        }
    }

    /// A-priori grid for the unbounded model. The equilibrium is
    /// Poisson(rho * beta) x Geometric(beta), so both tails are known in advance;
    /// the reservation axis also covers an initial Poisson(U) load.
    pub fn for_model1(params: &ModelParams) -> Self {
        let beta = crate::equilibrium::beta_model1(params);
        let m = params.rho().max(params.fleet_density);
        let j_max = (m + 10.0 * m.sqrt()).ceil() as usize + 6;
        let k_tail = if beta <= 0.0 {
            1
        } else {
            ((1e-12f64).ln() / beta.ln()).ceil() as usize
        };
        let k_max = k_tail.max(params.fleet_density.ceil() as usize + 10);
        Self::rect(j_max, k_max)
    }

    /// Grid matching `params`: exact for finite capacity, a-priori sized otherwise.
    pub fn for_params(params: &ModelParams) -> Self {
        match params.capacity {
            Capacity::Finite(k) => Self::capped(k),
            Capacity::Infinite => Self::for_model1(params),
        }
    }

    pub fn contains(&self, j: usize, k: usize) -> bool {
        j <= self.j_max && k <= self.k_max && self.joint_cap.is_none_or(|c| j + k <= c)
    }

    pub fn cols(&self) -> usize {
        self.k_max + 1
    }

    pub fn len(&self) -> usize {
        (self.j_max + 1) * (self.k_max + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, j: usize, k: usize) -> usize {
        j * (self.k_max + 1) + k
    }

    /// All admissible `(j, k)` pairs in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..=self.j_max)
            .flat_map(move |j| (0..=self.k_max).map(move |k| (j, k)))
            .filter(move |&(j, k)| self.contains(j, k))
    }

    /// Grown copy used when the truncation defect is too large.
    pub fn expanded(&self) -> Self {
        match self.joint_cap {
            Some(_) => *self,
            None => Self::rect(
                self.j_max + self.j_max / 2 + 4,
                self.k_max + self.k_max / 2 + 4,
            ),
        }
    }
}

/// Joint law of (reservations, cars) at a station, stored densely row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDist {
    grid: TruncationGrid,
    mass: Vec<f64>,
}

impl JointDist {
    /// Wraps raw masses; entries must be non-negative and vanish off the grid.
    /// Masses are not renormalized.
    pub fn from_vec(grid: TruncationGrid, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} cells, got {}",
                grid.len(),
                mass.len()
            )));
        }
        for j in 0..=grid.j_max {
            for k in 0..=grid.k_max {
                let m = mass[grid.index(j, k)];
                if !(m >= 0.0) {
                    return Err(Error::InvalidState(format!(
                        "negative mass {m} at ({j}, {k})"
                    )));
                }
                if m > 0.0 && !grid.contains(j, k) {
                    return Err(Error::InvalidState(format!(
                        "mass {m} outside capacity at ({j}, {k})"
                    )));
                }
            }
        }
        Ok(JointDist { grid, mass })
    }

    pub(crate) fn from_vec_unchecked(grid: TruncationGrid, mass: Vec<f64>) -> Self {
        debug_assert_eq!(mass.len(), grid.len());
        JointDist { grid, mass }
    }

    pub fn from_fn(grid: TruncationGrid, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut mass = vec![0.0; grid.len()];
        for (j, k) in grid.cells() {
            mass[grid.index(j, k)] = f(j, k);
        }
        Self::from_vec(grid, mass)
    }

    pub fn point(grid: TruncationGrid, j: usize, k: usize) -> Result<Self> {
        if !grid.contains(j, k) {
            return Err(Error::GridMismatch(format!(
                "({j}, {k}) is not on the grid"
            )));
        }
        let mut mass = vec![0.0; grid.len()];
        mass[grid.index(j, k)] = 1.0;
        Ok(JointDist { grid, mass })
    }

    /// Product of two marginals given as probability vectors (truncated to the grid).
    pub fn product(grid: TruncationGrid, res: &[f64], cars: &[f64]) -> Result<Self> {
        let d = Self::from_fn(grid, |j, k| {
            res.get(j).copied().unwrap_or(0.0) * cars.get(k).copied().unwrap_or(0.0)
        })?;
        Ok(d.normalized())
    }

    pub fn grid(&self) -> &TruncationGrid {
        &self.grid
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.mass
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        if j > self.grid.j_max || k > self.grid.k_max {
            0.0
        } else {
            self.mass[self.grid.index(j, k)]
        }
    }

    pub fn sum(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn normalized(mut self) -> Self {
        let s = self.sum();
        if s > 0.0 {
            self.mass.iter_mut().for_each(|m| *m /= s);
        }
        self
    }

    /// Probability that the station holds no car.
    pub fn prob_no_car(&self) -> f64 {
        (0..=self.grid.j_max).map(|j| self.get(j, 0)).sum()
    }

    /// Probability that the station is saturated (`j + k = K`); zero without a cap.
    pub fn prob_full(&self) -> f64 {
        match self.grid.joint_cap {
            Some(cap) => (0..=cap).map(|j| self.get(j, cap - j)).sum(),
            None => 0.0,
        }
    }

    pub fn mean_reservations(&self) -> f64 {
        self.grid
            .cells()
            .map(|(j, k)| j as f64 * self.get(j, k))
            .sum()
    }

    pub fn mean_cars(&self) -> f64 {
        self.grid
            .cells()
            .map(|(j, k)| k as f64 * self.get(j, k))
            .sum()
    }

    pub fn marginal_reservations(&self) -> Vec<f64> {
        (0..=self.grid.j_max)
            .map(|j| (0..=self.grid.k_max).map(|k| self.get(j, k)).sum())
            .collect()
    }

    pub fn marginal_cars(&self) -> Vec<f64> {
        (0..=self.grid.k_max)
            .map(|k| (0..=self.grid.j_max).map(|j| self.get(j, k)).sum())
            .collect()
    }

    /// Copy onto a larger grid, zero-filled.
    pub fn embed(&self, grid: TruncationGrid) -> Result<Self> {
        Self::from_fn(grid, |j, k| self.get(j, k)).and_then(|d| {
            if (d.sum() - self.sum()).abs() > 1e-15 {
                Err(Error::GridMismatch("target grid drops mass".into()))
            } else {
                Ok(d)
            }
        })
    }
}

/// `sum (j + k) alpha_{j,k}`: particles per station.
pub fn total_mass(dist: &JointDist) -> f64 {
    dist.grid
        .cells()
        .map(|(j, k)| (j + k) as f64 * dist.get(j, k))
        .sum()
}

/// L1 distance (twice the total variation) between two laws on the same grid.
pub fn dist_distance(a: &JointDist, b: &JointDist) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch(format!("{:?} vs {:?}", a.grid, b.grid)));
    }
    Ok(a.mass.iter().zip(&b.mass).map(|(x, y)| (x - y).abs()).sum())
}

/// Law of the car count on `{0..K}` (no-reservation model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalDist {
    mass: Vec<f64>,
}

impl MarginalDist {
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::InvalidState("empty marginal".into()));
        }
        if let Some((i, m)) = mass.iter().enumerate().find(|(_, m)| !(**m >= 0.0)) {
            return Err(Error::InvalidState(format!("negative mass {m} at {i}")));
        }
        Ok(MarginalDist { mass })
    }

    pub fn point(capacity: usize, j: usize) -> Result<Self> {
        if j > capacity {
            return Err(Error::GridMismatch(format!("{j} > capacity {capacity}")));
        }
        let mut mass = vec![0.0; capacity + 1];
        mass[j] = 1.0;
        Ok(MarginalDist { mass })
    }

    pub fn capacity(&self) -> usize {
        self.mass.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mass
    }

    pub fn get(&self, j: usize) -> f64 {
        self.mass.get(j).copied().unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .map(|(j, m)| j as f64 * m)
            .sum()
    }

    pub fn normalized(mut self) -> Self {
        let s = self.sum();
        if s > 0.0 {
            self.mass.iter_mut().for_each(|m| *m /= s);
        }
        self
    }

    pub fn distance(&self, other: &MarginalDist) -> Result<f64> {
        if self.mass.len() != other.mass.len() {
            return Err(Error::GridMismatch(format!(
                "capacity {} vs {}",
                self.capacity(),
                other.capacity()
            )));
        }
        Ok(self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }
}

/// Poisson(`mean`) probabilities on `0..=n`, computed in log space.
pub fn poisson_pmf(mean: f64, n: usize) -> Vec<f64> {
    if mean <= 0.0 {
        let mut v = vec![0.0; n + 1];
        v[0] = 1.0;
        return v;
    }
    let ln_mean = mean.ln();
    let mut ln_fact = 0.0;
    (0..=n)
        .map(|j| {
            if j > 0 {
                ln_fact += (j as f64).ln();
            }
            (j as f64 * ln_mean - mean - ln_fact).exp()
        })
        .collect()
}

/// Geometric law `(1 - q) q^k` on `0..=n`.
pub fn geometric_pmf(q: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| (1.0 - q) * q.powi(k as i32)).collect()
}

/// Law of a single station: joint (reservations, cars) or a car-count marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationLaw {
    Joint(JointDist),
    Marginal(MarginalDist),
}

impl StationLaw {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            StationLaw::Joint(d) => d.as_slice(),
            StationLaw::Marginal(d) => d.as_slice(),
        }
    }

    pub fn joint(&self) -> Option<&JointDist> {
        match self {
            StationLaw::Joint(d) => Some(d),
            StationLaw::Marginal(_) => None,
        }
    }

    pub fn marginal(&self) -> Option<&MarginalDist> {
        match self {
            StationLaw::Marginal(d) => Some(d),
            StationLaw::Joint(_) => None,
        }
    }

    /// L1 distance; the two laws must live on the same support.
    pub fn distance(&self, other: &StationLaw) -> Result<f64> {
        match (self, other) {
            (StationLaw::Joint(a), StationLaw::Joint(b)) => dist_distance(a, b),
            (StationLaw::Marginal(a), StationLaw::Marginal(b)) => a.distance(b),
            _ => Err(Error::GridMismatch("joint vs marginal law".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation() {
        assert!(ModelParams::model1(1.0, 1.0, 1.0).is_ok());
        assert!(ModelParams::model1(0.0, 1.0, 1.0).is_err());
        assert!(ModelParams::model1(1.0, -1.0, 1.0).is_err());
        assert!(ModelParams::model1(1.0, 1.0, -0.1).is_err());
        assert!(ModelParams::model2(1.0, 1.0, 2.5, 2).is_err());
        assert!(ModelParams::new(
            1.0,
            1.0,
            1.0,
            Capacity::Finite(3),
            ModelKind::ReservationInfinite
        )
        .is_err());
        assert!(ModelParams::new(
            1.0,
            1.0,
            1.0,
            Capacity::Infinite,
            ModelKind::ReservationFinite
        )
        .is_err());
        let e = ModelParams::model3(1.0, 1.0, 0.5, 0).unwrap_err();
        assert!(matches!(
            e,
            Error::InvalidParam {
                field: "capacity",
                ..
            }
        ));
    }

    #[test]
    fn total_mass_of_atoms() {
        let g = TruncationGrid::rect(5, 5);
        assert_eq!(total_mass(&JointDist::point(g, 0, 0).unwrap()), 0.0);
        assert_eq!(total_mass(&JointDist::point(g, 2, 3).unwrap()), 5.0);
    }

    #[test]
    fn distance_examples() {
        let g = TruncationGrid::rect(3, 3);
        let a = JointDist::point(g, 0, 0).unwrap();
        let b = JointDist::point(g, 1, 0).unwrap();
        assert_eq!(dist_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(dist_distance(&a, &b).unwrap(), 2.0);
        let u = JointDist::from_fn(g, |j, k| if j == 0 && k <= 1 { 0.5 } else { 0.0 }).unwrap();
        assert!((dist_distance(&u, &a).unwrap() - 1.0).abs() < 1e-15);
        let other = JointDist::point(TruncationGrid::rect(4, 3), 0, 0).unwrap();
        assert!(matches!(
            dist_distance(&a, &other),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn capped_grid_rejects_mass_off_grid() {
        let g = TruncationGrid::capped(2);
        assert!(JointDist::point(g, 1, 2).is_err());
        let mut v = vec![0.0; g.len()];
        v[g.index(2, 2)] = 1.0;
        assert!(JointDist::from_vec(g, v).is_err());
        assert_eq!(g.cells().count(), 6);
    }

    #[test]
    fn pmfs_normalize() {
        let p = poisson_pmf(3.0, 60);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        assert!((p[2] - 9.0 / 2.0 * (-3.0f64).exp()).abs() < 1e-15);
        let g = geometric_pmf(0.3, 80);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }
}
