//! One-step feasibility oracle for safety indices, trajectory metrics and the
//! `(d, ḋ)` projection used to compare visited states with infeasible ones.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{distance_features, wrap_angle, Action, EnvState, Observation, PointEnv};
use crate::error::{Error, Result};
use crate::safety_index::{delta_phi, violates, KinematicPair, SafetyIndexParams};

/// Environment variable bounding the oracle's worker threads (0 = automatic).
pub const THREADS_ENV: &str = "SIS_LAB_THREADS";

/// Evenly spaced points on `[lo, hi]`, endpoints included.
fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub d_range: [f64; 2],
    pub d_cells: usize,
    /// Headings relative to the bearing of the hazard, spread over `(−π, π]`.
    pub heading_cells: usize,
    /// Upper speed bound of the grid; `None` uses the environment's `v_max`.
    pub speed_max: Option<f64>,
    pub speed_cells: usize,
    pub rotation_actions: usize,
    pub acceleration_actions: usize,
    /// ḋ bins of the projected heatmap, spread over `[−v_max, v_max]`.
    pub d_dot_bins: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            d_range: [0.05, 3.0],
            d_cells: 60,
            heading_cells: 36,
            speed_max: None,
            speed_cells: 20,
            rotation_actions: 21,
            acceleration_actions: 21,
            d_dot_bins: 40,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.d_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config("verify.d_range must be ordered".into()));
        }
        if let Some(v) = self.speed_max {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config("verify.speed_max must be > 0".into()));
            }
        }
        for (name, n) in [
            ("d_cells", self.d_cells),
            ("heading_cells", self.heading_cells),
            ("speed_cells", self.speed_cells),
            ("rotation_actions", self.rotation_actions),
            ("acceleration_actions", self.acceleration_actions),
            ("d_dot_bins", self.d_dot_bins),
        ] {
            if n < 2 {
                return Err(Error::Config(format!("verify.{name} must be >= 2")));
            }
        }
        Ok(())
    }

    pub fn d_values(&self) -> Vec<f64> {
        linspace(self.d_range[0], self.d_range[1], self.d_cells)
    }

    pub fn heading_values(&self) -> Vec<f64> {
        let n = self.heading_cells;
        (1..=n).map(|j| -PI + 2.0 * PI * j as f64 / n as f64).collect()
    }

    pub fn speed_values(&self, v_max: f64) -> Vec<f64> {
        linspace(0.0, self.speed_max.unwrap_or(v_max), self.speed_cells)
    }

    pub fn actions(&self) -> ActionGrid {
        ActionGrid::new(self.rotation_actions, self.acceleration_actions)
    }

    pub fn num_cells(&self) -> usize {
        self.d_cells * self.heading_cells * self.speed_cells
    }
}

/// Cartesian product of evenly spaced normalised actions.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionGrid {
    pub actions: Vec<[f64; 2]>,
}

impl ActionGrid {
    pub fn new(rotation: usize, acceleration: usize) -> Self {
        let mut actions = Vec::with_capacity(rotation * acceleration);
        for r in linspace(-1.0, 1.0, rotation) {
            for a in linspace(-1.0, 1.0, acceleration) {
                actions.push([r, a]);
            }
        }
        Self { actions }
    }
}

impl Default for ActionGrid {
    fn default() -> Self {
        Self::new(21, 21)
    }
}

/// Outcome of the exhaustive action search at one state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateCheck {
    pub feasible: bool,
    pub min_delta_phi: f64,
    pub argmin: [f64; 2],
}

/// Some action on the grid satisfies the safe action constraint at `state`.
pub fn is_state_feasible(
    zeta: &SafetyIndexParams,
    env: &PointEnv,
    state: &EnvState,
    actions: &ActionGrid,
) -> Result<StateCheck> {
    let now = distance_features(state);
    if now.degenerate {
        return Err(Error::Degenerate("state sits on the hazard centre".into()));
    }
    let mut best = StateCheck {
        feasible: false,
        min_delta_phi: f64::INFINITY,
        argmin: [0.0, 0.0],
    };
    for &a in &actions.actions {
        let next = env.dynamics(state, Action::new(a[0], a[1]));
        let feat = distance_features(&next);
        if feat.degenerate {
            continue;
        }
        let dp = delta_phi(zeta, now.pair(), feat.pair())?;
        if dp < best.min_delta_phi {
            best.min_delta_phi = dp;
            best.argmin = a;
        }
    }
    best.feasible = best.min_delta_phi < 0.0;
    Ok(best)
}

/// Hazard at the origin, agent at `(0, −d)`, heading `ψ` relative to the
/// bearing of the hazard (`ψ = 0` points straight at it).
pub fn canonical_state(d: f64, relative_heading: f64, speed: f64) -> EnvState {
    EnvState {
        x: 0.0,
        y: -d,
        heading: wrap_angle(relative_heading),
        speed,
        hazard: [0.0, 0.0],
        step: 0,
    }
}

/// `(d, relative heading, speed)` of any absolute state.
pub fn relative_coordinates(state: &EnvState) -> (f64, f64, f64) {
    let dx = state.hazard[0] - state.x;
    let dy = state.hazard[1] - state.y;
    let bearing = dx.atan2(dy);
    (dx.hypot(dy), wrap_angle(state.heading - bearing), state.speed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellRecord {
    pub index: [usize; 3],
    pub d: f64,
    pub relative_heading: f64,
    pub speed: f64,
    pub d_dot: f64,
    pub min_delta_phi: f64,
    pub argmin: [f64; 2],
    pub feasible: bool,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityMap {
    pub grid: GridSpec,
    pub v_max: f64,
    pub zeta: SafetyIndexParams,
    /// Cells in `(d, heading, speed)` row-major order.
    pub cells: Vec<CellRecord>,
}

fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0)
}

/// Exhaustive one-step search over every grid cell.
pub fn feasibility_grid(
    zeta: &SafetyIndexParams,
    env: &PointEnv,
    grid: &GridSpec,
) -> Result<FeasibilityMap> {
    grid.validate()?;
    zeta.validate()?;
    let v_max = env.config().v_max;
    let ds = grid.d_values();
    let hs = grid.heading_values();
    let vs = grid.speed_values(v_max);
    let actions = grid.actions();
    let (nh, nv) = (hs.len(), vs.len());

    let eval = |flat: usize| -> Result<CellRecord> {
        let (i, j, l) = (flat / (nh * nv), (flat / nv) % nh, flat % nv);
        let s = canonical_state(ds[i], hs[j], vs[l]);
        let f = distance_features(&s);
        let mut rec = CellRecord {
            index: [i, j, l],
            d: ds[i],
            relative_heading: hs[j],
            speed: vs[l],
            d_dot: f.d_dot,
            min_delta_phi: f64::NAN,
            argmin: [0.0, 0.0],
            feasible: false,
            degenerate: f.degenerate,
        };
        if !f.degenerate {
            let c = is_state_feasible(zeta, env, &s, &actions)?;
            rec.min_delta_phi = c.min_delta_phi;
            rec.argmin = c.argmin;
            rec.feasible = c.feasible;
        }
        Ok(rec)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    let cells = pool.install(|| {
        (0..grid.num_cells())
            .into_par_iter()
            .map(eval)
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(FeasibilityMap {
        grid: grid.clone(),
        v_max,
        zeta: *zeta,
        cells,
    })
}

fn nearest(values: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if (v - x).abs() < (values[best] - x).abs() {
            best = i;
        }
    }
    best
}

impl FeasibilityMap {
    pub fn infeasible_count(&self) -> usize {
        self.cells.iter().filter(|c| !c.degenerate && !c.feasible).count()
    }

    pub fn infeasible_rate(&self) -> f64 {
        let live = self.cells.iter().filter(|c| !c.degenerate).count();
        self.infeasible_count() as f64 / live.max(1) as f64
    }

    pub fn flat_index(&self, index: [usize; 3]) -> usize {
        (index[0] * self.grid.heading_cells + index[1]) * self.grid.speed_cells + index[2]
    }

    /// Nearest grid cell to an absolute state, or `None` outside the distance range.
    pub fn cell_of(&self, state: &EnvState) -> Option<usize> {
        let (d, psi, v) = relative_coordinates(state);
        let [lo, hi] = self.grid.d_range;
        let half = 0.5 * (hi - lo) / (self.grid.d_cells - 1) as f64;
        if d < lo - half || d > hi + half {
            return None;
        }
        let i = nearest(&self.grid.d_values(), d);
        let hs = self.grid.heading_values();
        // headings wrap, so also compare against the −π image of the last node
        let mut j = nearest(&hs, psi);
        let step = 2.0 * PI / self.grid.heading_cells as f64;
        if (psi - (-PI)).abs() < step / 2.0 && (psi + PI).abs() < (hs[j] - psi).abs() {
            j = hs.len() - 1;
        }
        let l = nearest(&self.grid.speed_values(self.v_max), v);
        Some(self.flat_index([i, j, l]))
    }

    /// Distinct cells touched by a set of states.
    pub fn envelope<'a, I: IntoIterator<Item = &'a EnvState>>(&self, states: I) -> BTreeSet<usize> {
        states.into_iter().filter_map(|s| self.cell_of(s)).collect()
    }

    /// Infeasible cells inside `cells`.
    pub fn infeasible_within(&self, cells: &BTreeSet<usize>) -> usize {
        cells
            .iter()
            .filter(|&&c| !self.cells[c].degenerate && !self.cells[c].feasible)
            .count()
    }

    fn d_dot_edges(&self) -> Vec<f64> {
        linspace(-self.v_max, self.v_max, self.grid.d_dot_bins + 1)
    }

    fn d_bin(&self, d: f64) -> Option<usize> {
        let [lo, hi] = self.grid.d_range;
        let half = 0.5 * (hi - lo) / (self.grid.d_cells - 1) as f64;
        if d < lo - half || d > hi + half {
            return None;
        }
        Some(nearest(&self.grid.d_values(), d))
    }

    fn d_dot_bin(&self, d_dot: f64) -> Option<usize> {
        let edges = self.d_dot_edges();
        let n = self.grid.d_dot_bins;
        if d_dot < edges[0] || d_dot > edges[n] {
            return None;
        }
        let width = edges[1] - edges[0];
        Some((((d_dot - edges[0]) / width) as usize).min(n - 1))
    }

    /// Per `(d, ḋ)` bin: number of full-state cells and how many are infeasible.
    pub fn projection(&self) -> ProjectedMap {
        let (nd, nb) = (self.grid.d_cells, self.grid.d_dot_bins);
        let mut cells = vec![0u32; nd * nb];
        let mut infeasible = vec![0u32; nd * nb];
        for c in &self.cells {
            if c.degenerate {
                continue;
            }
            if let Some(b) = self.d_dot_bin(c.d_dot) {
                let k = c.index[0] * nb + b;
                cells[k] += 1;
                infeasible[k] += u32::from(!c.feasible);
            }
        }
        let edges = self.d_dot_edges();
        ProjectedMap {
            d_centers: self.grid.d_values(),
            d_dot_centers: (0..nb).map(|b| 0.5 * (edges[b] + edges[b + 1])).collect(),
            cells,
            infeasible,
        }
    }

    /// Bin index of a `(d, ḋ)` point in [`ProjectedMap`] order.
    pub fn projected_bin(&self, kp: KinematicPair) -> Option<usize> {
        Some(self.d_bin(kp.d)? * self.grid.d_dot_bins + self.d_dot_bin(kp.d_dot)?)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, meta: &str) -> Result<()> {
        writeln!(w, "# {meta}")?;
        writeln!(
            w,
            "i_d,i_heading,i_speed,d,relative_heading,speed,d_dot,min_delta_phi,feasible,argmin_rotation,argmin_acceleration"
        )?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.index[0],
                c.index[1],
                c.index[2],
                c.d,
                c.relative_heading,
                c.speed,
                c.d_dot,
                c.min_delta_phi,
                u8::from(c.feasible),
                c.argmin[0],
                c.argmin[1]
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedMap {
    pub d_centers: Vec<f64>,
    pub d_dot_centers: Vec<f64>,
    /// Row-major over `(d, ḋ)`.
    pub cells: Vec<u32>,
    pub infeasible: Vec<u32>,
}

impl ProjectedMap {
    pub fn write_csv<W: Write>(&self, mut w: W, meta: &str) -> Result<()> {
        writeln!(w, "# {meta}")?;
        writeln!(w, "i_d,i_d_dot,d,d_dot,cells,infeasible_cells")?;
        let nb = self.d_dot_centers.len();
        for (i, d) in self.d_centers.iter().enumerate() {
            for (b, dd) in self.d_dot_centers.iter().enumerate() {
                let k = i * nb + b;
                writeln!(w, "{i},{b},{d},{dd},{},{}", self.cells[k], self.infeasible[k])?;
            }
        }
        Ok(())
    }
}

/// `(d, ḋ)` of every stored transition's pre-step state.
pub fn project_samples<'a, I: IntoIterator<Item = &'a KinematicPair>>(samples: I) -> Result<Vec<KinematicPair>> {
    let pts: Vec<KinematicPair> = samples.into_iter().copied().collect();
    if pts.is_empty() {
        return Err(Error::Usage("no samples to project".into()));
    }
    Ok(pts)
}

/// Fraction of points landing in a `(d, ḋ)` bin that holds at least one
/// infeasible full-state cell.
pub fn overlap_fraction(points: &[KinematicPair], map: &FeasibilityMap) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Usage("no samples for overlap".into()));
    }
    let proj = map.projection();
    let hits = points
        .iter()
        .filter(|kp| map.projected_bin(**kp).is_some_and(|b| proj.infeasible[b] > 0))
        .count();
    Ok(hits as f64 / points.len() as f64)
}

/// Table-style metrics over a set of trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trajectories: usize,
    pub success_rate: f64,
    pub phi0_violation_rate: f64,
    pub infeasible_rate: f64,
    pub avg_tracking_error: f64,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        format!(
            "success_rate={:.4} phi0_violation_rate={:.4} infeasible_rate={:.4} avg_tracking_error={:.4}",
            self.success_rate, self.phi0_violation_rate, self.infeasible_rate, self.avg_tracking_error
        )
    }
}

/// Steps with `Δφ ≥ 0`, one entry per episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationTrace {
    pub per_episode: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub violations: ViolationTrace,
    /// Every state at which the policy acted, in episode order.
    pub visited: Vec<EnvState>,
}

/// Runs `n` episodes with `policy` and scores them against `zeta`.
pub fn eval_trajectories<P>(
    mut policy: P,
    zeta: &SafetyIndexParams,
    env: &PointEnv,
    n: usize,
    seed: u64,
    actions: &ActionGrid,
) -> Result<EvalOutcome>
where
    P: FnMut(&Observation) -> Result<[f64; 2]>,
{
    if n == 0 {
        return Err(Error::Usage("need at least one trajectory".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut successes, mut phi0_hits, mut infeasible_hits) = (0usize, 0usize, 0usize);
    let mut tracking = 0.0;
    let mut steps = 0usize;
    let mut trace = ViolationTrace::default();
    let mut visited = Vec::new();
    for _ in 0..n {
        let mut s = env.reset(&mut rng);
        let (mut hit_phi0, mut hit_infeasible, mut viol) = (false, false, 0u32);
        loop {
            visited.push(s);
            match is_state_feasible(zeta, env, &s, actions) {
                Ok(c) => hit_infeasible |= !c.feasible,
                Err(Error::Degenerate(_)) => hit_infeasible = true,
                Err(e) => return Err(e),
            }
            let a = policy(&env.observe(&s))?;
            let kin = distance_features(&s).pair();
            let (next, res) = env.step(&s, Action::from_slice(&a))?;
            hit_phi0 |= res.cost > 0;
            if let Ok(dp) = delta_phi(zeta, kin, res.kinematics) {
                viol += u32::from(violates(dp));
            }
            tracking += env.heading_error(&next) + env.speed_error(&next);
            steps += 1;
            s = next;
            if res.done {
                break;
            }
        }
        phi0_hits += usize::from(hit_phi0);
        infeasible_hits += usize::from(hit_infeasible);
        successes += usize::from(!hit_phi0 && !hit_infeasible);
        trace.per_episode.push(viol);
    }
    let rate = |k: usize| k as f64 / n as f64;
    Ok(EvalOutcome {
        report: EvalReport {
            trajectories: n,
            success_rate: rate(successes),
            phi0_violation_rate: rate(phi0_hits),
            infeasible_rate: rate(infeasible_hits),
            avg_tracking_error: tracking / steps as f64,
        },
        violations: trace,
        visited,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::safety_index::IndexPreset;

    fn env() -> PointEnv {
        PointEnv::new(EnvConfig::default()).unwrap()
    }

    fn preset(p: IndexPreset) -> SafetyIndexParams {
        p.params(0.5).unwrap()
    }

    fn small_grid() -> GridSpec {
        GridSpec {
            d_cells: 12,
            heading_cells: 12,
            speed_cells: 6,
            rotation_actions: 5,
            acceleration_actions: 5,
            ..GridSpec::default()
        }
    }

    #[test]
    fn canonical_geometry() {
        let s = canonical_state(1.0, 0.0, 1.0);
        let f = distance_features(&s);
        assert!((f.d - 1.0).abs() < 1e-15 && (f.d_dot + 1.0).abs() < 1e-15);
        let (d, psi, v) = relative_coordinates(&s);
        assert!((d - 1.0).abs() < 1e-15 && psi.abs() < 1e-15 && v == 1.0);
        let s = canonical_state(1.0, PI, 1.0);
        assert!((distance_features(&s).d_dot - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relative_coordinates_are_invariant() {
        let s = EnvState {
            x: 0.3,
            y: -1.2,
            heading: 0.4,
            speed: 0.8,
            hazard: [0.0, 0.7],
            step: 3,
        };
        let (d, psi, v) = relative_coordinates(&s);
        let c = canonical_state(d, psi, v);
        let (a, b) = (distance_features(&s), distance_features(&c));
        assert!((a.d - b.d).abs() < 1e-12 && (a.d_dot - b.d_dot).abs() < 1e-12);
    }

    #[test]
    fn grid_spec_rules() {
        GridSpec::default().validate().unwrap();
        assert_eq!(GridSpec::default().num_cells(), 60 * 36 * 20);
        let bad = GridSpec {
            speed_cells: 1,
            ..GridSpec::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = GridSpec {
            d_range: [2.0, 1.0],
            ..GridSpec::default()
        };
        assert!(bad.validate().is_err());
        let h = GridSpec::default().heading_values();
        assert!((h[35] - PI).abs() < 1e-15 && h[0] > -PI);
    }

    #[test]
    fn phi0_inbound_at_the_edge_is_infeasible() {
        let s = canonical_state(0.51, 0.0, 2.0);
        let c = is_state_feasible(&preset(IndexPreset::Phi0), &env(), &s, &ActionGrid::default()).unwrap();
        assert!(!c.feasible && c.min_delta_phi >= 0.0);
    }

    #[test]
    fn parked_far_away_is_feasible_under_phi_f() {
        let s = canonical_state(2.0, 0.0, 0.0);
        let c = is_state_feasible(&preset(IndexPreset::PhiF), &env(), &s, &ActionGrid::default()).unwrap();
        assert!(c.feasible);
    }

    #[test]
    fn recorded_argmin_reproduces() {
        let e = env();
        let z = preset(IndexPreset::PhiH);
        let map = feasibility_grid(&z, &e, &small_grid()).unwrap();
        for c in map.cells.iter().filter(|c| c.feasible) {
            let s = canonical_state(c.d, c.relative_heading, c.speed);
            let next = e.dynamics(&s, Action::new(c.argmin[0], c.argmin[1]));
            let dp = delta_phi(&z, distance_features(&s).pair(), distance_features(&next).pair()).unwrap();
            assert_eq!(dp, c.min_delta_phi);
            assert!(dp < 0.0);
        }
    }

    #[test]
    fn refining_actions_never_adds_infeasible_cells() {
        let e = env();
        let z = preset(IndexPreset::PhiH);
        let coarse = feasibility_grid(&z, &e, &small_grid()).unwrap();
        let fine = feasibility_grid(
            &z,
            &e,
            &GridSpec {
                rotation_actions: 9,
                acceleration_actions: 9,
                ..small_grid()
            },
        )
        .unwrap();
        assert!(fine.infeasible_count() <= coarse.infeasible_count());
        for (a, b) in coarse.cells.iter().zip(&fine.cells) {
            assert!(b.min_delta_phi <= a.min_delta_phi);
        }
    }

    #[test]
    fn grid_is_deterministic_and_ordered() {
        let e = env();
        let z = preset(IndexPreset::Phi0);
        let a = feasibility_grid(&z, &e, &small_grid()).unwrap();
        let b = feasibility_grid(&z, &e, &small_grid()).unwrap();
        assert_eq!(format!("{:?}", a.cells), format!("{:?}", b.cells));
        for (k, c) in a.cells.iter().enumerate() {
            assert_eq!(a.flat_index(c.index), k);
        }
        assert!(a.infeasible_count() > 0);
    }

    #[test]
    fn cell_lookup_round_trips() {
        let map = feasibility_grid(&preset(IndexPreset::PhiF), &env(), &small_grid()).unwrap();
        for c in &map.cells {
            let s = canonical_state(c.d, c.relative_heading, c.speed);
            assert_eq!(map.cell_of(&s), Some(map.flat_index(c.index)));
        }
        assert_eq!(map.cell_of(&canonical_state(10.0, 0.0, 0.0)), None);
    }

    #[test]
    fn overlap_extremes() {
        let e = env();
        let mut map = feasibility_grid(&preset(IndexPreset::PhiF), &e, &small_grid()).unwrap();
        let pts: Vec<KinematicPair> = map.cells.iter().map(|c| KinematicPair::new(c.d, c.d_dot)).collect();
        for c in map.cells.iter_mut() {
            c.feasible = true;
        }
        assert_eq!(overlap_fraction(&pts, &map).unwrap(), 0.0);
        for c in map.cells.iter_mut() {
            c.feasible = false;
        }
        assert_eq!(overlap_fraction(&pts, &map).unwrap(), 1.0);
        assert!(overlap_fraction(&[], &map).is_err());
        assert!(project_samples(std::iter::empty()).is_err());
    }

    #[test]
    fn straight_into_the_hazard_fails_everything() {
        let e = env();
        // accelerate toward the hazard, which always lies straight ahead on +y
        let policy = |obs: &Observation| -> Result<[f64; 2]> {
            let heading = obs[3].atan2(obs[2]);
            Ok([(-heading / 0.157).clamp(-1.0, 1.0), 1.0])
        };
        let out = eval_trajectories(policy, &preset(IndexPreset::PhiH), &e, 5, 1, &ActionGrid::new(5, 5)).unwrap();
        assert_eq!(out.report.phi0_violation_rate, 1.0);
        assert_eq!(out.report.success_rate, 0.0);
        assert_eq!(out.violations.per_episode.len(), 5);
        assert_eq!(out.visited.len(), 5 * 120);
    }

    #[test]
    fn report_partition() {
        let e = env();
        let policy = |_: &Observation| -> Result<[f64; 2]> { Ok([0.6, 0.3]) };
        let out = eval_trajectories(policy, &preset(IndexPreset::PhiH), &e, 6, 2, &ActionGrid::new(5, 5)).unwrap();
        let r = out.report;
        for v in [r.success_rate, r.phi0_violation_rate, r.infeasible_rate] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert!(r.success_rate <= 1.0 - r.phi0_violation_rate.max(r.infeasible_rate) + 1e-12);
        assert!(eval_trajectories(policy, &preset(IndexPreset::PhiH), &e, 0, 2, &ActionGrid::new(5, 5)).is_err());
    }
}
