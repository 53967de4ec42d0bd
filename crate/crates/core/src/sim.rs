//! Event-driven simulation of the finite network of `N` stations.
//!
//! Events are drawn from the aggregate rate. Parked-car departures fire at rate
//! `lambda` per station holding a car; reservations complete at rate `mu` each.
//! The simulator keeps the stations that hold a car in an indexable set, and keeps
//! one token per pending reservation (or, in Model 2, counts the cars in transit).
//! Both event kinds can then pick their station exactly in O(1).

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{JointDist, MarginalDist, ModelKind, ModelParams, StationLaw, TruncationGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Station {
    /// Pending reservations (cars travelling towards this station).
    pub r: u32,
    /// Parked cars.
    pub v: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub stations: Vec<Station>,
    /// Cars looking for a free spot (Model 2 only).
    pub in_transit: u64,
    pub clock: f64,
}

impl NetworkState {
    pub fn fleet(&self) -> u64 {
        self.stations
            .iter()
            .map(|s| (s.r + s.v) as u64)
            .sum::<u64>()
            + self.in_transit
    }

    pub fn validate(&self, params: &ModelParams, fleet: u64) -> Result<()> {
        if self.stations.is_empty() {
            return Err(Error::InvalidState("network has no stations".into()));
        }
        if self.fleet() != fleet {
            return Err(Error::InvalidState(format!(
                "fleet is {} instead of {fleet}",
                self.fleet()
            )));
        }
        let cap = params.capacity.finite().map(|k| k as u32);
        for (i, s) in self.stations.iter().enumerate() {
            let bad = match params.model {
                ModelKind::ReservationInfinite => false,
                ModelKind::NoReservationFinite => s.r > 0 || cap.is_some_and(|k| s.v > k),
                ModelKind::ReservationFinite => cap.is_some_and(|k| s.r + s.v > k),
            };
            if bad {
                return Err(Error::InvalidState(format!("station {i} holds {s:?}")));
            }
        }
        if self.in_transit > 0 && params.model != ModelKind::NoReservationFinite {
            return Err(Error::InvalidState(
                "cars in transit outside Model 2".into(),
            ));
        }
        Ok(())
    }

    /// Fraction of stations in each `(r, v)` class (car count only for Model 2).
    pub fn empirical(&self, params: &ModelParams) -> StationLaw {
        let n = self.stations.len() as f64;
        match params.model {
            ModelKind::NoReservationFinite => {
                let k = params.capacity.finite().unwrap_or(0);
                let mut m = vec![0.0; k + 1];
                for s in &self.stations {
                    m[s.v as usize] += 1.0 / n;
                }
                StationLaw::Marginal(MarginalDist::new(m).expect("empirical law is valid"))
            }
            model => {
                let grid = match (model, params.capacity.finite()) {
                    (ModelKind::ReservationFinite, Some(k)) => TruncationGrid::capped(k),
                    _ => {
                        let jm = self.stations.iter().map(|s| s.r).max().unwrap_or(0);
                        let km = self.stations.iter().map(|s| s.v).max().unwrap_or(0);
                        TruncationGrid::rect(jm as usize, km as usize)
                    }
                };
                let mut m = vec![0.0; grid.len()];
                for s in &self.stations {
                    m[grid.index(s.r as usize, s.v as usize)] += 1.0 / n;
                }
                StationLaw::Joint(JointDist::from_vec(grid, m).expect("empirical law is valid"))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Every car is a pending reservation, placed uniformly at random.
    AllReserved,
    /// Every car is parked, placed uniformly at random among stations with room.
    AllCars,
    /// Every car is parked, dealt round-robin.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_stations: usize,
    pub fleet_size: u64,
    pub horizon: f64,
    pub sample_times: Vec<f64>,
    pub seed: u64,
    pub replications: usize,
}

impl SimConfig {
    /// Fleet `round(U N)` with samples every `dt` up to the horizon.
    pub fn for_density(
        params: &ModelParams,
        n_stations: usize,
        horizon: f64,
        dt: f64,
        seed: u64,
    ) -> Self {
        let steps = (horizon / dt).round() as usize;
        let mut sample_times: Vec<f64> =
            (0..=steps).map(|i| (i as f64 * dt).min(horizon)).collect();
        sample_times.dedup();
        Self {
            n_stations,
            fleet_size: (params.fleet_density * n_stations as f64).round() as u64,
            horizon,
            sample_times,
            seed,
            replications: 1,
        }
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        params.validate()?;
        if self.n_stations == 0 {
            return Err(Error::param("n_stations", "must be at least 1"));
        }
        if self.replications == 0 {
            return Err(Error::param("replications", "must be at least 1"));
        }
        if let Some(k) = params.capacity.finite() {
            if self.fleet_size > (k * self.n_stations) as u64 {
                return Err(Error::param(
                    "fleet_size",
                    format!("exceeds K N = {}", k * self.n_stations),
                ));
            }
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::param("horizon", "must be finite and non-negative"));
        }
        if self.sample_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::param("sample_times", "must be sorted"));
        }
        if self
            .sample_times
            .iter()
            .any(|t| !(0.0..=self.horizon).contains(t))
        {
            return Err(Error::param("sample_times", "must lie in [0, horizon]"));
        }
        Ok(())
    }
}

/// Random stream of replication `rep`.
pub fn stream(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

pub fn initial_state(
    kind: InitKind,
    n_stations: usize,
    fleet_size: u64,
    params: &ModelParams,
    rng: &mut impl Rng,
) -> Result<NetworkState> {
    if n_stations == 0 {
        return Err(Error::param("n_stations", "must be at least 1"));
    }
    if kind == InitKind::AllReserved && !params.model.has_reservations() {
        return Err(Error::param("init", "Model 2 has no reservations"));
    }
    let cap = params.capacity.finite().map(|k| k as u64);
    if let Some(k) = cap {
        if fleet_size > k * n_stations as u64 {
            return Err(Error::Infeasible(format!(
                "{fleet_size} cars do not fit into {n_stations} stations of capacity {k}"
            )));
        }
    }
    let mut stations = vec![Station::default(); n_stations];
    match kind {
        InitKind::Uniform => {
            for m in 0..fleet_size {
                stations[(m % n_stations as u64) as usize].v += 1;
            }
        }
        InitKind::AllCars | InitKind::AllReserved => {
            // stations with room, kept as a swap-remove set
            let mut open: Vec<usize> = (0..n_stations).collect();
            for _ in 0..fleet_size {
                let slot = rng.random_range(0..open.len());
                let i = open[slot];
                let s = &mut stations[i];
                if kind == InitKind::AllCars {
                    s.v += 1;
                } else {
                    s.r += 1;
                }
                if cap.is_some_and(|k| (s.r + s.v) as u64 >= k) {
                    open.swap_remove(slot);
                }
            }
        }
    }
    Ok(NetworkState {
        stations,
        in_transit: 0,
        clock: 0.0,
    })
}

/// Indexable set of station ids with O(1) insert, remove and uniform pick.
#[derive(Debug, Clone, Default)]
struct IndexSet {
    items: Vec<u32>,
    pos: Vec<u32>,
}

const ABSENT: u32 = u32::MAX;

impl IndexSet {
    fn new(n: usize) -> Self {
        Self {
            items: Vec::new(),
            pos: vec![ABSENT; n],
        }
    }

    fn insert(&mut self, i: u32) {
        if self.pos[i as usize] == ABSENT {
            self.pos[i as usize] = self.items.len() as u32;
            self.items.push(i);
        }
    }

    fn remove(&mut self, i: u32) {
        let p = self.pos[i as usize];
        if p != ABSENT {
            let last = *self.items.last().expect("set is non-empty");
            self.items.swap_remove(p as usize);
            if last != i {
                self.pos[last as usize] = p;
            }
            self.pos[i as usize] = ABSENT;
        }
    }

    fn len(&self) -> usize {
        self.items.len()
    }
}

/// Outcome of one event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// A car left `from`; it now travels to `to` (Models 1 and 3) or is in transit (Model 2).
    Departure { from: usize, to: Option<usize> },
    /// A departure towards a full station was cancelled.
    Blocked { from: usize, to: usize },
    /// A travelling car parked at `at`.
    Arrival { at: usize },
    /// A car in transit found its destination full and set off again.
    Bounced { at: usize },
    /// No event can ever fire.
    Absorbed,
}

/// Simulator owning a network state plus the indices needed for O(1) event selection.
#[derive(Debug, Clone)]
pub struct Simulator {
    state: NetworkState,
    params: ModelParams,
    cap: u32,
    with_car: IndexSet,
    tokens: Vec<u32>,
}

impl Simulator {
    pub fn new(state: NetworkState, params: ModelParams) -> Result<Self> {
        params.validate()?;
        state.validate(&params, state.fleet())?;
        let n = state.stations.len();
        let mut with_car = IndexSet::new(n);
        let mut tokens = Vec::new();
        for (i, s) in state.stations.iter().enumerate() {
            if s.v > 0 {
                with_car.insert(i as u32);
            }
            tokens.extend(std::iter::repeat_n(i as u32, s.r as usize));
        }
        let cap = params.capacity.finite().map_or(u32::MAX, |k| k as u32);
        Ok(Self {
            state,
            params,
            cap,
            with_car,
            tokens,
        })
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    pub fn into_state(self) -> NetworkState {
        self.state
    }

    fn total_rate(&self) -> (f64, f64) {
        let dep = self.params.lambda * self.with_car.len() as f64;
        let travelling = match self.params.model {
            ModelKind::NoReservationFinite => self.state.in_transit as f64,
            _ => self.tokens.len() as f64,
        };
        (dep, self.params.mu * travelling)
    }

    /// Time of the next event (infinite when nothing can happen).
    pub fn next_event_time(&self, rng: &mut impl Rng) -> f64 {
        let (dep, arr) = self.total_rate();
        let total = dep + arr;
        if total == 0.0 {
            return f64::INFINITY;
        }
        let e: f64 = Exp1.sample(rng);
        self.state.clock + e / total
    }

    /// Applies the next event at time `t` (drawn by [`Self::next_event_time`]).
    pub fn apply_event(&mut self, t: f64, rng: &mut impl Rng) -> Event {
        let (dep, arr) = self.total_rate();
        if dep + arr == 0.0 {
            self.state.clock = f64::INFINITY;
            return Event::Absorbed;
        }
        self.state.clock = t;
        let n = self.state.stations.len();
        let u: f64 = rng.random::<f64>() * (dep + arr);
        if u < dep {
            let from = self.with_car.items[rng.random_range(0..self.with_car.len())] as usize;
            match self.params.model {
                ModelKind::NoReservationFinite => {
                    self.take_car(from);
                    self.state.in_transit += 1;
                    Event::Departure { from, to: None }
                }
                model => {
                    let to = rng.random_range(0..n);
                    let dest = self.state.stations[to];
                    if model == ModelKind::ReservationFinite && dest.r + dest.v >= self.cap {
                        return Event::Blocked { from, to };
                    }
                    self.take_car(from);
                    self.state.stations[to].r += 1;
                    self.tokens.push(to as u32);
                    Event::Departure { from, to: Some(to) }
                }
            }
        } else {
            match self.params.model {
                ModelKind::NoReservationFinite => {
                    let at = rng.random_range(0..n);
                    if self.state.stations[at].v >= self.cap {
                        return Event::Bounced { at };
                    }
                    self.state.in_transit -= 1;
                    self.park(at);
                    Event::Arrival { at }
                }
                _ => {
                    let slot = rng.random_range(0..self.tokens.len());
                    let at = self.tokens.swap_remove(slot) as usize;
                    self.state.stations[at].r -= 1;
                    self.park(at);
                    Event::Arrival { at }
                }
            }
        }
    }

    pub fn step(&mut self, rng: &mut impl Rng) -> Event {
        let t = self.next_event_time(rng);
        self.apply_event(t, rng)
    }

    fn take_car(&mut self, i: usize) {
        let s = &mut self.state.stations[i];
        s.v -= 1;
        if s.v == 0 {
            self.with_car.remove(i as u32);
        }
    }

    fn park(&mut self, i: usize) {
        self.state.stations[i].v += 1;
        self.with_car.insert(i as u32);
    }
}

/// One event applied to a copy of `state`.
pub fn step(
    state: &NetworkState,
    params: &ModelParams,
    rng: &mut impl Rng,
) -> Result<NetworkState> {
    let fleet = state.fleet();
    let mut sim = Simulator::new(state.clone(), *params)?;
    sim.step(rng);
    let next = sim.into_state();
    next.validate(params, fleet)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub time: f64,
    pub counts: StationLaw,
}

fn cells(law: &StationLaw) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
    let joint = law
        .joint()
        .into_iter()
        .flat_map(|d| d.grid().cells().map(move |c| (c, d.get(c.0, c.1))));
    let marg = law
        .marginal()
        .into_iter()
        .flat_map(|d| d.as_slice().iter().enumerate().map(|(k, p)| ((0, k), *p)));
    joint.chain(marg).filter(|(_, p)| *p != 0.0)
}

/// L1 distance between laws on possibly different grids (mass off either grid counts fully).
pub fn law_distance(a: &StationLaw, b: &StationLaw) -> f64 {
    let mut diff: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (c, p) in cells(a) {
        *diff.entry(c).or_default() += p;
    }
    for (c, p) in cells(b) {
        *diff.entry(c).or_default() -= p;
    }
    diff.values().map(|d| d.abs()).sum()
}

/// Average of several laws, on the smallest grid covering all of them.
pub fn mean_law(laws: &[&StationLaw]) -> Result<StationLaw> {
    let first = laws
        .first()
        .ok_or_else(|| Error::param("laws", "nothing to average"))?;
    let w = 1.0 / laws.len() as f64;
    match first {
        StationLaw::Marginal(m) => {
            let mut acc = vec![0.0; m.as_slice().len()];
            for l in laws {
                let d = l
                    .marginal()
                    .filter(|d| d.as_slice().len() == acc.len())
                    .ok_or_else(|| {
                        Error::GridMismatch("cannot average marginals of different capacity".into())
                    })?;
                acc.iter_mut()
                    .zip(d.as_slice())
                    .for_each(|(a, p)| *a += w * p);
            }
            Ok(StationLaw::Marginal(MarginalDist::new(acc)?.normalized()))
        }
        StationLaw::Joint(d0) => {
            let mut grid = *d0.grid();
            for l in laws {
                let g = l
                    .joint()
                    .ok_or_else(|| Error::GridMismatch("joint vs marginal law".into()))?
                    .grid();
                grid.j_max = grid.j_max.max(g.j_max);
                grid.k_max = grid.k_max.max(g.k_max);
                if grid.joint_cap != g.joint_cap {
                    return Err(Error::GridMismatch("laws have different capacity".into()));
                }
            }
            let mut acc = vec![0.0; grid.len()];
            for l in laws {
                for ((j, k), p) in cells(l) {
                    acc[grid.index(j, k)] += w * p;
                }
            }
            Ok(StationLaw::Joint(
                JointDist::from_vec(grid, acc)?.normalized(),
            ))
        }
    }
}

/// One replication: the empirical measure at every sample time.
pub fn run_replication(
    config: &SimConfig,
    params: &ModelParams,
    init: &(impl Fn(&mut ChaCha8Rng) -> Result<NetworkState> + Sync),
    rep: usize,
) -> Result<Vec<EmpiricalMeasure>> {
    let mut rng = stream(config.seed, rep);
    let state = init(&mut rng)?;
    let fleet = state.fleet();
    if fleet != config.fleet_size || state.stations.len() != config.n_stations {
        return Err(Error::InvalidState(format!(
            "initial state has {} stations and {fleet} cars, config asks for {} and {}",
            state.stations.len(),
            config.n_stations,
            config.fleet_size
        )));
    }
    let mut sim = Simulator::new(state, *params)?;
    let mut out = Vec::with_capacity(config.sample_times.len());
    let mut next = config.sample_times.iter().peekable();
    loop {
        let t = sim.next_event_time(&mut rng);
        while let Some(&&s) = next.peek() {
            if s < t {
                out.push(EmpiricalMeasure {
                    time: s,
                    counts: sim.state().empirical(params),
                });
                next.next();
            } else {
                break;
            }
        }
        if t > config.horizon || next.peek().is_none() {
            break;
        }
        sim.apply_event(t, &mut rng);
    }
    sim.state().validate(params, fleet)?;
    Ok(out)
}

/// All replications, run in parallel; each is reproducible from `(seed, index)`.
pub fn run(
    config: &SimConfig,
    params: &ModelParams,
    init: impl Fn(&mut ChaCha8Rng) -> Result<NetworkState> + Sync,
) -> Result<Vec<Vec<EmpiricalMeasure>>> {
    config.validate(params)?;
    (0..config.replications)
        .into_par_iter()
        .map(|rep| run_replication(config, params, &init, rep))
        .collect()
}

pub fn run_kind(
    config: &SimConfig,
    params: &ModelParams,
    kind: InitKind,
) -> Result<Vec<Vec<EmpiricalMeasure>>> {
    run(config, params, |rng| {
        initial_state(kind, config.n_stations, config.fleet_size, params, rng)
    })
}

/// Mean over replications of the measures at each sample time.
pub fn mean_measures(reps: &[Vec<EmpiricalMeasure>]) -> Result<Vec<EmpiricalMeasure>> {
    let first = reps
        .first()
        .ok_or_else(|| Error::param("replications", "nothing to average"))?;
    (0..first.len())
        .map(|i| {
            let laws: Vec<&StationLaw> = reps.iter().map(|r| &r[i].counts).collect();
            Ok(EmpiricalMeasure {
                time: first[i].time,
                counts: mean_law(&laws)?,
            })
        })
        .collect()
}

/// Long-format CSV `t,j,k,alpha` (car count in `j` for Model 2, as in mean-field output).
pub fn write_csv(measures: &[EmpiricalMeasure], mut w: impl Write) -> Result<()> {
    writeln!(w, "t,j,k,alpha")?;
    for m in measures {
        match &m.counts {
            StationLaw::Marginal(d) => {
                for (j, a) in d.as_slice().iter().enumerate() {
                    writeln!(w, "{},{j},0,{a:e}", m.time)?;
                }
            }
            law => {
                for ((j, k), a) in cells(law) {
                    writeln!(w, "{},{j},{k},{a:e}", m.time)?;
                }
            }
        }
    }
    Ok(())
}
