//! The MACOP iteration.
//!
//! At every step each connected component of the communication graph builds
//! the matrix `V(l, c) = v_{member_l}(β_{member_c})` of local optimal costs,
//! solves the linear assignment problem on it and hands allocation vectors
//! along the chosen permutation. Local costs are memoized per
//! `(satellite, β, tightening)`.

use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dcn::{components, DynGraph};
use crate::error::{Error, Result};
use crate::ilp::{solve, Sense};
use crate::model::{build_centralized_instance, build_local_instance, AllocationVector, Scenario};
use crate::permgroup::{AllocationMatrix, Permutation};
use crate::robust::RobustPenalties;

pub const DEFAULT_VAR_BUDGET: usize = 120;
pub const DEFAULT_ZETA: f64 = 0.5;
const INIT_ATTEMPTS: u64 = 50;
/// Monotonicity tolerance on the total cost.
pub const MONOTONE_TOL: f64 = 1e-9;

type CacheKey = (usize, AllocationVector, Option<u64>);

/// Memo of `v_i(β)`; concurrent reads, serialized writes.
#[derive(Debug, Default)]
pub struct LocalCostCache {
    map: RwLock<HashMap<CacheKey, f64>>,
    calls: AtomicU64,
    hits: AtomicU64,
}

impl LocalCostCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Local ILP solves performed so far.
    pub fn solver_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    fn get(&self, key: &CacheKey) -> Option<f64> {
        let v = self.map.read().expect("cache lock").get(key).copied();
        if v.is_some() {
            self.hits.fetch_add(1, Ordering::Relaxed);
        }
        v
    }

    fn contains(&self, key: &CacheKey) -> bool {
        self.map.read().expect("cache lock").contains_key(key)
    }

    fn insert(&self, key: CacheKey, v: f64) {
        self.map.write().expect("cache lock").insert(key, v);
    }
}

fn cache_key(i: usize, beta: &[u8], tighten: Option<&RobustPenalties>) -> CacheKey {
    (i, beta.to_vec(), tighten.map(RobustPenalties::fingerprint))
}

/// `v_i(β)` solved directly, `+∞` when infeasible.
pub fn local_cost_uncached(s: &Scenario, i: usize, beta: &[u8], tighten: Option<&RobustPenalties>) -> Result<f64> {
    let inst = build_local_instance(s, i, beta, tighten)?;
    Ok(solve(&inst, Sense::Min)?.value_or_inf())
}

pub fn local_cost(
    s: &Scenario,
    i: usize,
    beta: &[u8],
    tighten: Option<&RobustPenalties>,
    cache: &LocalCostCache,
) -> Result<f64> {
    let key = cache_key(i, beta, tighten);
    if let Some(v) = cache.get(&key) {
        return Ok(v);
    }
    cache.calls.fetch_add(1, Ordering::Relaxed);
    let v = local_cost_uncached(s, i, beta, tighten)?;
    cache.insert(key, v);
    Ok(v)
}

/// Solves every missing `(i, β)` pair in parallel and stores the results in
/// key order.
fn fill_cache(
    s: &Scenario,
    pairs: &[(usize, AllocationVector)],
    tighten: Option<&RobustPenalties>,
    cache: &LocalCostCache,
) -> Result<()> {
    let mut missing: Vec<(usize, AllocationVector)> = pairs
        .iter()
        .filter(|(i, beta)| !cache.contains(&cache_key(*i, beta, tighten)))
        .cloned()
        .collect();
    missing.sort();
    missing.dedup();
    let solved: Vec<Result<f64>> = missing
        .par_iter()
        .map(|(i, beta)| local_cost_uncached(s, *i, beta, tighten))
        .collect();
    for ((i, beta), v) in missing.into_iter().zip(solved) {
        let v = v?;
        cache.calls.fetch_add(1, Ordering::Relaxed);
        cache.insert(cache_key(i, &beta, tighten), v);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Cost matrices and assignment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostMatrix {
    /// Sorted component vertices.
    pub members: Vec<usize>,
    /// `values[l][c] = v_{members[l]}(β_{members[c]})`.
    pub values: Vec<Vec<f64>>,
}

impl CostMatrix {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

pub fn cost_matrix(
    s: &Scenario,
    component: &[usize],
    allocation: &AllocationMatrix,
    tighten: Option<&RobustPenalties>,
    cache: &LocalCostCache,
) -> Result<CostMatrix> {
    if component.is_empty() {
        return Err(Error::InvalidInput("empty component".into()));
    }
    let mut members = component.to_vec();
    members.sort_unstable();
    members.dedup();
    if members.iter().any(|&v| v >= allocation.n()) {
        return Err(Error::InvalidInput("component vertex outside the allocation".into()));
    }
    let pairs: Vec<(usize, AllocationVector)> = members
        .iter()
        .flat_map(|&i| members.iter().map(move |&c| (i, allocation.column(c).to_vec())))
        .collect();
    fill_cache(s, &pairs, tighten, cache)?;
    let values = members
        .iter()
        .map(|&i| {
            members
                .iter()
                .map(|&c| local_cost(s, i, allocation.column(c), tighten, cache))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CostMatrix { members, values })
}

/// `Σ_l V(l, σ(l))` summed in row order.
pub fn assignment_total(v: &[Vec<f64>], sigma: &[usize]) -> f64 {
    sigma.iter().enumerate().map(|(l, &c)| v[l][c]).sum()
}

/// Shortest augmenting path with potentials; `+∞` cells are forbidden.
/// Returns `None` when no finite perfect assignment exists, otherwise the
/// assignment with row and column potentials.
fn hungarian(v: &[Vec<f64>]) -> Option<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    let n = v.len();
    let mut u = vec![0.0; n + 1];
    let mut p_col = vec![0.0; n + 1];
    // row matched to column j (1-based, 0 = none)
    let mut way_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        way_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = way_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = usize::MAX;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let c = v[i0 - 1][j - 1];
                if c.is_finite() {
                    let cur = c - u[i0] - p_col[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if j1 == usize::MAX {
                return None;
            }
            for j in 0..=n {
                if used[j] {
                    u[way_row[j]] += delta;
                    p_col[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if way_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            way_row[j0] = way_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut sigma = vec![0usize; n];
    for j in 1..=n {
        sigma[way_row[j] - 1] = j - 1;
    }
    Some((sigma, u[1..].to_vec(), p_col[1..].to_vec()))
}

/// Lexicographically smallest perfect matching of the bipartite graph
/// `tight`, starting from the perfect matching `sigma`.
fn lex_smallest_matching(tight: &[Vec<bool>], mut sigma: Vec<usize>) -> Vec<usize> {
    let n = sigma.len();
    let mut row_of = vec![0usize; n];
    for (l, &c) in sigma.iter().enumerate() {
        row_of[c] = l;
    }
    for l in 0..n {
        for target in 0..sigma[l] {
            if !tight[l][target] || row_of[target] < l {
                continue;
            }
            // row_of[target] gives up `target` and must reach the column freed
            // by row l along tight edges through unfixed rows
            let start = row_of[target];
            let goal = sigma[l];
            let mut taken_by: Vec<Option<usize>> = vec![None; n];
            let mut visited = vec![false; n];
            visited[start] = true;
            let mut queue = VecDeque::from([start]);
            let mut found = false;
            'bfs: while let Some(r) = queue.pop_front() {
                for c in 0..n {
                    if !tight[r][c] || c == target || taken_by[c].is_some() || row_of[c] < l {
                        continue;
                    }
                    taken_by[c] = Some(r);
                    if c == goal {
                        found = true;
                        break 'bfs;
                    }
                    let owner = row_of[c];
                    if !visited[owner] {
                        visited[owner] = true;
                        queue.push_back(owner);
                    }
                }
            }
            if found {
                let mut c = goal;
                while let Some(r) = taken_by[c] {
                    let old = sigma[r];
                    sigma[r] = c;
                    row_of[c] = r;
                    if r == start {
                        break;
                    }
                    c = old;
                }
                sigma[l] = target;
                row_of[target] = l;
                break;
            }
        }
    }
    sigma
}

/// Minimizer of `Σ_l V(l, σ(l))`, ties broken by the lexicographically smallest
/// `σ`. `σ[l]` is the column given to row `l`. The identity is returned when no
/// finite assignment exists or when it is already optimal.
pub fn optimal_permutation(v: &CostMatrix) -> Vec<usize> {
    optimal_assignment(&v.values)
}

pub fn optimal_assignment(v: &[Vec<f64>]) -> Vec<usize> {
    let n = v.len();
    let identity: Vec<usize> = (0..n).collect();
    if n <= 1 {
        return identity;
    }
    let Some((sigma, u, p)) = hungarian(v) else {
        return identity;
    };
    let scale = v
        .iter()
        .flatten()
        .filter(|x| x.is_finite())
        .fold(1.0f64, |a, &x| a.max(x.abs()));
    let tol = 1e-9 * scale;
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|l| {
            (0..n)
                .map(|c| v[l][c].is_finite() && v[l][c] - u[l] - p[c] <= tol)
                .collect()
        })
        .collect();
    let sigma = lex_smallest_matching(&tight, sigma);
    let id_total = assignment_total(v, &identity);
    if assignment_total(v, &sigma) >= id_total {
        return identity;
    }
    sigma
}

/// Reference: all `n!` permutations in lexicographic order, first strict
/// improvement kept. Limited to `n ≤ 8`.
pub fn optimal_assignment_exhaustive(v: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = v.len();
    if n > 8 {
        return Err(Error::Budget(format!("exhaustive assignment on {n} rows")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_total = assignment_total(v, &perm);
    loop {
        // next permutation in lexicographic order
        let Some(k) = (0..n.saturating_sub(1)).rev().find(|&k| perm[k] < perm[k + 1]) else {
            break;
        };
        let l = (k + 1..n).rev().find(|&l| perm[l] > perm[k]).expect("successor");
        perm.swap(k, l);
        perm[k + 1..].reverse();
        let total = assignment_total(v, &perm);
        if total < best_total {
            best_total = total;
            best = perm.clone();
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub t: usize,
    /// Index into the graph sequence; `None` for the initial record.
    pub time_index: Option<usize>,
    pub components: Vec<Vec<usize>>,
    /// Global `σ*`: satellite `i` receives the vector previously held by `σ*(i)`.
    pub sigma_star: Vec<usize>,
    pub j_total: f64,
    pub per_satellite_costs: Vec<f64>,
    pub solver_calls: u64,
    pub cache_hits: u64,
    /// Allocation vectors exchanged inside components.
    pub messages: u64,
    pub elapsed_s: f64,
}

impl IterationRecord {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn largest_component(&self) -> usize {
        self.components.iter().map(Vec::len).max().unwrap_or(0)
    }
}

#[derive(Debug)]
pub struct EngineState {
    pub t: usize,
    pub allocation: AllocationMatrix,
    pub initial: AllocationMatrix,
    pub cache: LocalCostCache,
    pub trajectory: Vec<IterationRecord>,
    pub snapshots: Option<Vec<AllocationMatrix>>,
}

fn per_satellite_costs(
    s: &Scenario,
    allocation: &AllocationMatrix,
    tighten: Option<&RobustPenalties>,
    cache: &LocalCostCache,
) -> Result<Vec<f64>> {
    let pairs: Vec<_> = (0..s.n).map(|i| (i, allocation.column(i).to_vec())).collect();
    fill_cache(s, &pairs, tighten, cache)?;
    (0..s.n).map(|i| local_cost(s, i, allocation.column(i), tighten, cache)).collect()
}

impl EngineState {
    pub fn new(
        s: &Scenario,
        allocation: AllocationMatrix,
        tighten: Option<&RobustPenalties>,
        keep_snapshots: bool,
    ) -> Result<Self> {
        if allocation.n() != s.n || allocation.m() != s.m || allocation.row_targets() != s.b.as_slice() {
            return Err(Error::Dimension("allocation does not match the scenario".into()));
        }
        let start = Instant::now();
        let cache = LocalCostCache::new();
        let costs = per_satellite_costs(s, &allocation, tighten, &cache)?;
        let record = IterationRecord {
            t: 0,
            time_index: None,
            components: Vec::new(),
            sigma_star: (0..s.n).collect(),
            j_total: costs.iter().sum(),
            per_satellite_costs: costs,
            solver_calls: cache.solver_calls(),
            cache_hits: cache.hits(),
            messages: 0,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        Ok(Self {
            t: 0,
            initial: allocation.clone(),
            snapshots: keep_snapshots.then(|| vec![allocation.clone()]),
            allocation,
            cache,
            trajectory: vec![record],
        })
    }

    pub fn j_total(&self) -> f64 {
        self.trajectory.last().map_or(f64::NAN, |r| r.j_total)
    }

    /// One exchange round on `edges` (0-based undirected pairs).
    pub fn step(
        &mut self,
        s: &Scenario,
        edges: &[(usize, usize)],
        time_index: Option<usize>,
        tighten: Option<&RobustPenalties>,
    ) -> Result<&IterationRecord> {
        let start = Instant::now();
        let (calls0, hits0) = (self.cache.solver_calls(), self.cache.hits());
        let comps = components(edges, s.n)?;
        let active: Vec<&Vec<usize>> = comps.iter().filter(|c| c.len() > 1).collect();

        let pairs: Vec<(usize, AllocationVector)> = active
            .iter()
            .flat_map(|comp| {
                comp.iter()
                    .flat_map(|&i| comp.iter().map(move |&c| (i, c)))
                    .collect::<Vec<_>>()
            })
            .map(|(i, c)| (i, self.allocation.column(c).to_vec()))
            .collect();
        fill_cache(s, &pairs, tighten, &self.cache)?;

        let mut sigma_star: Vec<usize> = (0..s.n).collect();
        let mut messages = 0u64;
        for comp in &active {
            let v = cost_matrix(s, comp, &self.allocation, tighten, &self.cache)?;
            let sigma = optimal_permutation(&v);
            for (l, &c) in sigma.iter().enumerate() {
                sigma_star[v.members[l]] = v.members[c];
            }
            let k = comp.len() as u64;
            messages += k * (k - 1);
        }
        let perm = Permutation::new(sigma_star.clone())?;
        self.allocation = self.allocation.permute_columns(&perm)?;
        let costs = per_satellite_costs(s, &self.allocation, tighten, &self.cache)?;
        let j_total: f64 = costs.iter().sum();
        let prev = self.j_total();
        if j_total > prev + MONOTONE_TOL * prev.abs().max(1.0) {
            return Err(Error::Internal(format!(
                "cost increased from {prev} to {j_total} at iteration {}",
                self.t + 1
            )));
        }
        self.t += 1;
        if let Some(snaps) = self.snapshots.as_mut() {
            snaps.push(self.allocation.clone());
        }
        self.trajectory.push(IterationRecord {
            t: self.t,
            time_index,
            components: comps,
            sigma_star,
            j_total,
            per_satellite_costs: costs,
            solver_calls: self.cache.solver_calls() - calls0,
            cache_hits: self.cache.hits() - hits0,
            messages,
            elapsed_s: start.elapsed().as_secs_f64(),
        });
        Ok(self.trajectory.last().expect("record"))
    }
}

/// Greedy allocation: targets in order (shuffled after the first attempt),
/// each copy to the satellite with an acquisition window and the largest
/// remaining memory slack whose local program stays feasible.
pub fn initial_allocation(
    s: &Scenario,
    tighten: Option<&RobustPenalties>,
    seed: u64,
    cache: &LocalCostCache,
) -> Result<AllocationMatrix> {
    let mut failures = Vec::new();
    for attempt in 0..INIT_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let mut order: Vec<usize> = (0..s.m).collect();
        if attempt > 0 {
            order.shuffle(&mut rng);
        }
        let mut columns = vec![vec![0u8; s.m]; s.n];
        let mut slack: Vec<f64> = s.satellites.iter().map(|sat| sat.memory).collect();
        let mut failed = None;
        for &j in &order {
            for _copy in 0..s.b[j] {
                let mut candidates: Vec<usize> = (0..s.n)
                    .filter(|&i| s.satellites[i].g[j] >= 1 && columns[i][j] == 0)
                    .collect();
                if attempt > 0 {
                    candidates.shuffle(&mut rng);
                }
                // stable: ties keep index order first, shuffled order on retries
                candidates.sort_by(|&a, &b| slack[b].total_cmp(&slack[a]));
                let mut placed = false;
                for i in candidates {
                    columns[i][j] = 1;
                    if local_cost(s, i, &columns[i], tighten, cache)?.is_finite() {
                        slack[i] -= s.satellites[i].q[j];
                        placed = true;
                        break;
                    }
                    columns[i][j] = 0;
                }
                if !placed {
                    failed = Some(j);
                    break;
                }
            }
            if failed.is_some() {
                break;
            }
        }
        match failed {
            None => return AllocationMatrix::new(columns, s.b.clone()),
            Some(j) => failures.push(j + 1),
        }
    }
    failures.sort_unstable();
    failures.dedup();
    Err(Error::Infeasible(format!(
        "no feasible initial allocation in {INIT_ATTEMPTS} attempts; targets that could not be placed: {failures:?}"
    )))
}

#[derive(Debug)]
pub struct RunResult {
    pub state: EngineState,
}

impl RunResult {
    pub fn trajectory(&self) -> &[IterationRecord] {
        &self.state.trajectory
    }
}

/// Initial allocation followed by `iterations` steps; iteration `s` uses the
/// graph's edge set `s mod steps`.
pub fn run(
    s: &Scenario,
    g: &DynGraph,
    iterations: usize,
    tighten: Option<&RobustPenalties>,
    seed: u64,
    keep_snapshots: bool,
) -> Result<RunResult> {
    if g.n != s.n {
        return Err(Error::Dimension(format!("graph over {} vertices, scenario has {} satellites", g.n, s.n)));
    }
    let scratch = LocalCostCache::new();
    let a0 = initial_allocation(s, tighten, seed, &scratch)?;
    run_from(s, g, a0, iterations, tighten, keep_snapshots)
}

pub fn run_from(
    s: &Scenario,
    g: &DynGraph,
    allocation: AllocationMatrix,
    iterations: usize,
    tighten: Option<&RobustPenalties>,
    keep_snapshots: bool,
) -> Result<RunResult> {
    let mut state = EngineState::new(s, allocation, tighten, keep_snapshots)?;
    for it in 0..iterations {
        let ti = g.time_index(it);
        state.step(s, &g.edge_sets[ti], Some(ti), tighten)?;
    }
    Ok(RunResult { state })
}

/// Exact centralized optimum, `None` when infeasible. Declines instances with
/// more than `var_budget` variables.
pub fn centralized_value(s: &Scenario, tighten: Option<&RobustPenalties>, var_budget: usize) -> Result<Option<f64>> {
    Ok(centralized_solution(s, tighten, var_budget)?.map(|(v, _)| v))
}

/// Optimum and the per-satellite split of the centralized program.
pub fn centralized_solution(
    s: &Scenario,
    tighten: Option<&RobustPenalties>,
    var_budget: usize,
) -> Result<Option<(f64, Vec<AllocationVector>)>> {
    let d = s.total_vars();
    if d > var_budget {
        return Err(Error::Budget(format!(
            "centralized program has {d} variables, budget is {var_budget}"
        )));
    }
    let inst = build_centralized_instance(s, tighten)?;
    let sol = solve(&inst, Sense::Min)?;
    Ok(sol
        .is_optimal()
        .then(|| (sol.value, crate::model::split_from_centralized(s, &sol.x))))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagrangianScale {
    pub alpha: f64,
    pub rho: Vec<f64>,
    pub gammas: Vec<f64>,
    pub zeta: f64,
}

fn extreme_range(inst: &crate::ilp::IlpInstance, what: &str) -> Result<f64> {
    let lo = solve(inst, Sense::Min)?;
    let hi = solve(inst, Sense::Max)?;
    if !lo.is_optimal() || !hi.is_optimal() {
        return Err(Error::Infeasible(what.to_string()));
    }
    Ok(hi.value - lo.value)
}

/// `α = (m + ‖ρ‖_∞/ζ)·max_i γ_i` over the local sets without coupling rows.
pub fn lagrangian_scale(s: &Scenario, zeta: f64) -> Result<LagrangianScale> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::InvalidInput(format!("zeta = {zeta} outside (0, 1)")));
    }
    let zeros = vec![0u8; s.m];
    let mut gammas = Vec::with_capacity(s.n);
    let mut spans = vec![0.0f64; s.m];
    for i in 0..s.n {
        let mut inst = build_local_instance(s, i, &zeros, None)?;
        inst.eq_rows.drain(0..s.m);
        gammas.push(extreme_range(&inst, &format!("satellite {} has an empty local set", i + 1))?);
        let lay = crate::model::LocalLayout::new(s, i, 0);
        for j in 0..s.m {
            let mut probe = inst.clone();
            probe.costs = vec![0.0; inst.num_vars];
            for &v in &lay.acq[j] {
                probe.costs[v] = 1.0;
            }
            let span = extreme_range(&probe, &format!("satellite {} has an empty local set", i + 1))?;
            spans[j] = spans[j].max(span);
        }
    }
    let rho: Vec<f64> = spans.iter().map(|&sp| s.m as f64 * sp).collect();
    let rho_inf = rho.iter().fold(0.0f64, |a, &r| a.max(r.abs()));
    let gamma_max = gammas.iter().fold(0.0f64, |a, &g| a.max(g));
    Ok(LagrangianScale {
        alpha: (s.m as f64 + rho_inf / zeta) * gamma_max,
        rho,
        gammas,
        zeta,
    })
}

pub fn relative_error(j: f64, v_glob: f64) -> Result<f64> {
    if v_glob == 0.0 || !v_glob.is_finite() {
        return Err(Error::InvalidInput(format!("relative error undefined for reference {v_glob}")));
    }
    Ok(((j - v_glob) / v_glob).abs())
}

/// Trajectory CSV. With `with_timing = false` the `elapsed_s` column is left
/// blank so that reruns are byte-identical.
pub fn write_trajectory_csv<W: Write>(
    out: W,
    records: &[IterationRecord],
    v_star: Option<f64>,
    with_timing: bool,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "iteration",
        "time_index",
        "J",
        "v_star",
        "relative_error",
        "n_components",
        "largest_component",
        "solver_calls",
        "cache_hits",
        "elapsed_s",
    ])?;
    for r in records {
        let re = v_star.and_then(|v| relative_error(r.j_total, v).ok());
        w.write_record([
            r.t.to_string(),
            r.time_index.map_or(String::new(), |ti| ti.to_string()),
            r.j_total.to_string(),
            v_star.map_or(String::new(), |v| v.to_string()),
            re.map_or(String::new(), |e| e.to_string()),
            r.n_components().to_string(),
            r.largest_component().to_string(),
            r.solver_calls.to_string(),
            r.cache_hits.to_string(),
            if with_timing { format!("{:.6}", r.elapsed_s) } else { String::new() },
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcn::random_graph_sequence;
    use crate::model::{generate_random_scenario, GenParams, Satellite};
    use crate::permgroup::orbit_equal;
    use rand::Rng;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn assignment_examples() {
        assert_eq!(optimal_assignment(&[vec![1.0, 2.0], vec![3.0, 1.0]]), vec![0, 1]);
        assert_eq!(optimal_assignment(&[vec![INF, 1.0], vec![1.0, INF]]), vec![1, 0]);
        assert_eq!(optimal_assignment(&[vec![INF, INF], vec![INF, INF]]), vec![0, 1]);
        assert_eq!(optimal_assignment(&[vec![5.0]]), vec![0]);
        // ties go to the lexicographically smallest permutation
        let flat = vec![vec![1.0; 3]; 3];
        assert_eq!(optimal_assignment(&flat), vec![0, 1, 2]);
        let v = vec![vec![2.0, 1.0, 1.0], vec![1.0, 2.0, 1.0], vec![1.0, 1.0, 2.0]];
        assert_eq!(optimal_assignment(&v), vec![1, 2, 0]);
    }

    #[test]
    fn assignment_matches_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..1000 {
            let n = 5 + case % 3;
            let p_inf = rng.random_range(0.0..0.6);
            let integer = case % 2 == 0;
            let v: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..n)
                        .map(|_| {
                            if rng.random_bool(p_inf) {
                                INF
                            } else if integer {
                                rng.random_range(0..6) as f64
                            } else {
                                rng.random_range(0.0..100.0)
                            }
                        })
                        .collect()
                })
                .collect();
            let got = optimal_assignment(&v);
            let oracle = optimal_assignment_exhaustive(&v).unwrap();
            let (tg, to) = (assignment_total(&v, &got), assignment_total(&v, &oracle));
            if to.is_finite() {
                assert!((tg - to).abs() <= 1e-9 * to.abs().max(1.0), "case {case}: {tg} vs {to}");
            } else {
                assert_eq!(got, (0..n).collect::<Vec<_>>());
            }
            if integer {
                assert_eq!(got, oracle, "case {case}");
            }
        }
    }

    fn two_sat_scenario() -> Scenario {
        // satellite 1 sees target 1 early and target 2 late; satellite 2 the reverse
        let sat = |early: usize| Satellite {
            g: vec![1, 1],
            t_aq: (0..2).map(|j| vec![if j == early { 10.0 } else { 500.0 }]).collect(),
            h: 1,
            t_dow: vec![vec![1000.0], vec![1000.0]],
            w: vec![100.0],
            q: vec![10.0, 10.0],
            memory: 100.0,
            data_rate: 10.0,
        };
        Scenario {
            n: 2,
            m: 2,
            b: vec![1, 1],
            omega1: 1.0,
            omega2: 1.0,
            satellites: vec![sat(0), sat(1)],
            units: Default::default(),
        }
    }

    #[test]
    fn local_cost_cases() {
        let s = crate::model::tests::toy();
        let cache = LocalCostCache::new();
        assert_eq!(local_cost(&s, 0, &[0], None, &cache).unwrap(), 0.0);
        assert_eq!(local_cost(&s, 0, &[1], None, &cache).unwrap(), 1.0 * 10.0 + 2.0 * 20.0);
        let calls = cache.solver_calls();
        local_cost(&s, 0, &[1], None, &cache).unwrap();
        assert_eq!(cache.solver_calls(), calls);
        assert!(cache.hits() >= 1);

        let mut s2 = two_sat_scenario();
        s2.satellites[0].g[1] = 0;
        s2.satellites[0].t_aq[1].clear();
        assert_eq!(local_cost(&s2, 0, &[0, 1], None, &cache).unwrap(), INF);
    }

    #[test]
    fn swap_reduces_cost() {
        let s = two_sat_scenario();
        // the costly assignment: satellite 1 takes target 2, satellite 2 takes target 1
        let a0 = AllocationMatrix::new(vec![vec![0, 1], vec![1, 0]], vec![1, 1]).unwrap();
        let mut st = EngineState::new(&s, a0.clone(), None, false).unwrap();
        let j0 = st.j_total();
        st.step(&s, &[], Some(0), None).unwrap();
        assert_eq!(st.allocation, a0);
        assert_eq!(st.j_total(), j0);
        let rec = st.step(&s, &[(0, 1)], Some(0), None).unwrap().clone();
        assert_eq!(rec.sigma_star, vec![1, 0]);
        assert!(rec.j_total < j0);
        assert_eq!(st.allocation.column(0), &[1, 0]);

        let cache = LocalCostCache::new();
        let v = cost_matrix(&s, &[0], &st.allocation, None, &cache).unwrap();
        assert_eq!(v.values.len(), 1);
        let v = cost_matrix(&s, &[1, 0], &a0, None, &cache).unwrap();
        assert_eq!(v.members, vec![0, 1]);
        assert_eq!(v.values[0][1], v.values[1][0]);
    }

    #[test]
    fn centralized_single_agent() {
        let s = crate::model::tests::toy();
        let cache = LocalCostCache::new();
        let v = centralized_value(&s, None, DEFAULT_VAR_BUDGET).unwrap().unwrap();
        assert_eq!(v, local_cost(&s, 0, &[1], None, &cache).unwrap());
        let mut tight = s.clone();
        tight.satellites[0].memory = 10.0;
        assert_eq!(centralized_value(&tight, None, DEFAULT_VAR_BUDGET).unwrap(), None);
        assert!(matches!(centralized_value(&s, None, 1), Err(Error::Budget(_))));
    }

    #[test]
    fn initial_allocation_single_satellite() {
        let mut s = generate_random_scenario(
            &GenParams { n: 1, m: 3, g_range: [1, 2], memory_range: [1e5, 1e5], ..Default::default() },
            1,
        )
        .unwrap();
        for t in s.satellites[0].t_dow.iter_mut().flatten() {
            *t += 86_400.0;
        }
        let cache = LocalCostCache::new();
        let a = initial_allocation(&s, None, 0, &cache).unwrap();
        assert_eq!(a.column(0), &[1, 1, 1]);
    }

    #[test]
    fn run_properties() {
        let params = GenParams { n: 5, m: 6, ..Default::default() };
        for seed in 0..3 {
            let s = generate_random_scenario(&params, seed).unwrap();
            let g = random_graph_sequence(s.n, 4, 0.5, None, seed).unwrap();
            let res = run(&s, &g, 10, None, seed, true).unwrap();
            let traj = res.trajectory();
            assert_eq!(traj.len(), 11);
            for w in traj.windows(2) {
                assert!(w[1].j_total <= w[0].j_total + MONOTONE_TOL * w[0].j_total.abs().max(1.0));
            }
            let snaps = res.state.snapshots.as_ref().unwrap();
            for (rec, a) in traj.iter().zip(snaps) {
                assert!(orbit_equal(a, &res.state.initial).unwrap());
                assert!(a.rows_match_targets());
                assert!(rec.per_satellite_costs.iter().all(|c| c.is_finite()));
                let sum: f64 = rec.per_satellite_costs.iter().sum();
                assert!((sum - rec.j_total).abs() <= 1e-9 * sum.abs().max(1.0));
                // moved satellites lie in non-singleton components
                for (i, &src) in rec.sigma_star.iter().enumerate() {
                    if src != i {
                        assert!(rec.components.iter().any(|c| c.len() > 1 && c.contains(&i) && c.contains(&src)));
                    }
                }
            }
            if let Some(v) = centralized_value(&s, None, DEFAULT_VAR_BUDGET).ok().flatten() {
                assert!(traj.iter().all(|r| v <= r.j_total + 1e-9 * v.abs().max(1.0)));
            }
            let again = run(&s, &g, 10, None, seed, false).unwrap();
            let (mut a, mut b) = (Vec::new(), Vec::new());
            write_trajectory_csv(&mut a, traj, None, false).unwrap();
            write_trajectory_csv(&mut b, again.trajectory(), None, false).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_iterations() {
        let s = generate_random_scenario(&GenParams { n: 3, m: 4, ..Default::default() }, 5).unwrap();
        let g = random_graph_sequence(3, 1, 1.0, None, 0).unwrap();
        let res = run(&s, &g, 0, None, 0, false).unwrap();
        assert_eq!(res.trajectory().len(), 1);
    }

    #[test]
    fn cache_soundness() {
        let s = generate_random_scenario(&GenParams { n: 4, m: 5, ..Default::default() }, 8).unwrap();
        let g = random_graph_sequence(4, 3, 0.7, None, 8).unwrap();
        let res = run(&s, &g, 5, None, 8, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let i = rng.random_range(0..s.n);
            let c = rng.random_range(0..s.n);
            let beta = res.state.allocation.column(c).to_vec();
            let cached = local_cost(&s, i, &beta, None, &res.state.cache).unwrap();
            assert_eq!(cached.to_bits(), local_cost_uncached(&s, i, &beta, None).unwrap().to_bits());
        }
    }

    #[test]
    fn lagrangian_examples() {
        // constant costs give zero spread
        let mut s = crate::model::tests::toy();
        s.omega1 = 0.0;
        s.omega2 = 0.0;
        let l = lagrangian_scale(&s, 0.5).unwrap();
        assert_eq!(l.alpha, 0.0);
        assert!(lagrangian_scale(&s, 1.0).is_err());

        // single satellite toy: x=y=0 or x=y=1
        let s = crate::model::tests::toy();
        let l = lagrangian_scale(&s, 0.5).unwrap();
        assert_eq!(l.gammas, vec![50.0]);
        assert_eq!(l.rho, vec![1.0]);
        assert_eq!(l.alpha, (1.0 + 2.0) * 50.0);
    }

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_error(5.0, 5.0).unwrap(), 0.0);
        assert_eq!(relative_error(10.0, 5.0).unwrap(), 1.0);
        assert!(relative_error(1.0, 0.0).is_err());
    }
}
