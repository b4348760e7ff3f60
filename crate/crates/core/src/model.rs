//! Earth-observation scheduling data and its 0-1 programs.
//!
//! Satellite `i` owns acquisition variables `x_{i,j}^k` (target `j`,
//! opportunity `k < g_{i,j}`) followed by downlink variables `y_{i,j}^r`
//! (`r < h_i`), both ordered target-major. The local program of satellite `i`
//! for an allocation vector `β` is
//!
//! ```text
//! minimize  ω₁ Σ x·t_aq + ω₂ Σ y·t_dow
//!   Σ_k x_{j}^k            = β_j                      (allocation)
//!   Σ_k x_{j}^k − Σ_r y_{j}^r = 0                      (consistency)
//!   Σ_k x t_aq − Σ_r y t_dow ≤ 0                       (temporal ordering)
//!   Σ_j y_{j}^r q_j / DR     ≤ W^r − P_D(r)            (downlink window)
//!   Σ_j q_j (Σ_k x χ(t, t_aq) − Σ_r y χ(t, t_dow)) ≤ Q − P_M(t)   (memory, every checkpoint t)
//! ```
//!
//! Times are seconds, data volumes megabits, rates megabits per second.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ilp::{IlpInstance, VarKind, VarLabel};
use crate::robust::RobustPenalties;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub time: String,
    pub data: String,
    pub rate: String,
}

impl Default for Units {
    fn default() -> Self {
        Self {
            time: "s".into(),
            data: "Mb".into(),
            rate: "Mbps".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Satellite {
    /// Acquisition opportunity count per target.
    pub g: Vec<usize>,
    /// `t_aq[j][k]`, start of acquisition opportunity `k` for target `j`.
    pub t_aq: Vec<Vec<f64>>,
    /// Downlink opportunity count.
    pub h: usize,
    /// `t_dow[j][r]`, downlink start of target `j` in opportunity `r`.
    pub t_dow: Vec<Vec<f64>>,
    /// Downlink window length per opportunity.
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    /// Data volume per target.
    pub q: Vec<f64>,
    /// Memory capacity.
    #[serde(rename = "Q")]
    pub memory: f64,
    /// Downlink data rate.
    #[serde(rename = "DR")]
    pub data_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub m: usize,
    pub b: Vec<u32>,
    pub omega1: f64,
    pub omega2: f64,
    pub satellites: Vec<Satellite>,
    #[serde(default)]
    pub units: Units,
}

/// Allocation vector `β_i`: `beta[j]` copies of target `j` assigned.
pub type AllocationVector = Vec<u8>;

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(s)?;
        let violations = validate_scenario(&sc);
        if !violations.is_empty() {
            return Err(Error::InvalidInput(violations.join("; ")));
        }
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Number of local variables `d_i = Σ_j g_{i,j} + m·h_i`.
    pub fn local_vars(&self, i: usize) -> usize {
        let sat = &self.satellites[i];
        sat.g.iter().sum::<usize>() + self.m * sat.h
    }

    pub fn total_vars(&self) -> usize {
        (0..self.n).map(|i| self.local_vars(i)).sum()
    }
}

/// `χ(t1, t2) = 1` iff `t2 ≤ t1`.
pub fn chi(t1: f64, t2: f64) -> u8 {
    (t2 <= t1) as u8
}

/// Sorted, deduplicated union of every acquisition and downlink start time of satellite `i`.
pub fn memory_checkpoints(s: &Scenario, i: usize) -> Vec<f64> {
    let sat = &s.satellites[i];
    let mut times: Vec<f64> = sat
        .t_aq
        .iter()
        .chain(sat.t_dow.iter())
        .flat_map(|v| v.iter().copied())
        .collect();
    times.sort_by(|a, b| a.total_cmp(b));
    times.dedup();
    times
}

pub fn validate_scenario(s: &Scenario) -> Vec<String> {
    let mut out = Vec::new();
    if s.satellites.len() != s.n {
        out.push(format!("{} satellites listed, n = {}", s.satellites.len(), s.n));
    }
    if s.n == 0 {
        out.push("no satellites".into());
    }
    if s.b.len() != s.m {
        out.push(format!("b has {} entries, m = {}", s.b.len(), s.m));
    }
    for (j, &bj) in s.b.iter().enumerate() {
        if bj == 0 {
            out.push(format!("target {}: b_j must be positive", j + 1));
        }
    }
    if !(s.omega1 > 0.0 && s.omega1.is_finite()) || !(s.omega2 > 0.0 && s.omega2.is_finite()) {
        out.push("weights omega1/omega2 must be positive".into());
    }
    let pos = |v: f64| v > 0.0 && v.is_finite();
    for (i, sat) in s.satellites.iter().enumerate() {
        let id = i + 1;
        if sat.g.len() != s.m || sat.t_aq.len() != s.m || sat.t_dow.len() != s.m || sat.q.len() != s.m {
            out.push(format!("satellite {id}: per-target arrays must have length m = {}", s.m));
            continue;
        }
        for j in 0..s.m {
            if sat.t_aq[j].len() != sat.g[j] {
                out.push(format!(
                    "satellite {id}, target {}: g = {} but {} acquisition times",
                    j + 1,
                    sat.g[j],
                    sat.t_aq[j].len()
                ));
            }
            if sat.t_dow[j].len() != sat.h {
                out.push(format!(
                    "satellite {id}, target {}: h = {} but {} downlink times",
                    j + 1,
                    sat.h,
                    sat.t_dow[j].len()
                ));
            }
            if sat.t_aq[j].iter().chain(&sat.t_dow[j]).any(|&t| !pos(t)) {
                out.push(format!("satellite {id}, target {}: times must be positive", j + 1));
            }
            if !pos(sat.q[j]) {
                out.push(format!("satellite {id}, target {}: data volume must be positive", j + 1));
            }
        }
        if sat.w.len() != sat.h {
            out.push(format!("satellite {id}: {} windows for h = {}", sat.w.len(), sat.h));
        }
        if sat.w.iter().any(|&w| !pos(w)) {
            out.push(format!("satellite {id}: downlink windows must be positive"));
        }
        if !pos(sat.memory) {
            out.push(format!("satellite {id}: memory capacity must be positive"));
        }
        if !pos(sat.data_rate) {
            out.push(format!("satellite {id}: data rate must be positive"));
        }
    }
    if out.is_empty() {
        for j in 0..s.m {
            if s.satellites.iter().all(|sat| sat.g[j] == 0) {
                out.push(format!("target {}: no acquisition opportunity on any satellite", j + 1));
            }
        }
    }
    out
}

/// Column layout of satellite `i`'s variables.
#[derive(Debug, Clone)]
pub struct LocalLayout {
    /// `acq[j][k]` variable index.
    pub acq: Vec<Vec<usize>>,
    /// `dow[j][r]` variable index.
    pub dow: Vec<Vec<usize>>,
    pub num_vars: usize,
}

impl LocalLayout {
    pub fn new(s: &Scenario, i: usize, offset: usize) -> Self {
        let sat = &s.satellites[i];
        let mut next = offset;
        let acq = (0..s.m)
            .map(|j| {
                (0..sat.g[j])
                    .map(|_| {
                        next += 1;
                        next - 1
                    })
                    .collect()
            })
            .collect();
        let dow = (0..s.m)
            .map(|_| {
                (0..sat.h)
                    .map(|_| {
                        next += 1;
                        next - 1
                    })
                    .collect()
            })
            .collect();
        Self {
            acq,
            dow,
            num_vars: next - offset,
        }
    }
}

fn local_costs_and_labels(s: &Scenario, i: usize, lay: &LocalLayout, costs: &mut [f64], labels: &mut [VarLabel]) {
    let sat = &s.satellites[i];
    for j in 0..s.m {
        for (k, &v) in lay.acq[j].iter().enumerate() {
            costs[v] = s.omega1 * sat.t_aq[j][k];
            labels[v] = VarLabel {
                satellite: i,
                kind: VarKind::Acq,
                target: j,
                occurrence: k,
            };
        }
        for (r, &v) in lay.dow[j].iter().enumerate() {
            costs[v] = s.omega2 * sat.t_dow[j][r];
            labels[v] = VarLabel {
                satellite: i,
                kind: VarKind::Dow,
                target: j,
                occurrence: r,
            };
        }
    }
}

/// Consistency, temporal, window and memory rows of satellite `i`.
fn add_local_rows(
    s: &Scenario,
    i: usize,
    lay: &LocalLayout,
    d: usize,
    inst: &mut IlpInstance,
    tighten: Option<&RobustPenalties>,
) {
    let sat = &s.satellites[i];
    for j in 0..s.m {
        let mut row = vec![0.0; d];
        for &v in &lay.acq[j] {
            row[v] = 1.0;
        }
        for &v in &lay.dow[j] {
            row[v] = -1.0;
        }
        inst.add_eq(row, 0.0);
    }
    for j in 0..s.m {
        let mut row = vec![0.0; d];
        for (k, &v) in lay.acq[j].iter().enumerate() {
            row[v] = sat.t_aq[j][k];
        }
        for (r, &v) in lay.dow[j].iter().enumerate() {
            row[v] = -sat.t_dow[j][r];
        }
        inst.add_le(row, 0.0);
    }
    for r in 0..sat.h {
        let mut row = vec![0.0; d];
        for j in 0..s.m {
            row[lay.dow[j][r]] = sat.q[j] / sat.data_rate;
        }
        let penalty = tighten.map_or(0.0, |p| p.downlink[i][r]);
        inst.add_le(row, sat.w[r] - penalty);
    }
    for (l, &t) in memory_checkpoints(s, i).iter().enumerate() {
        let mut row = vec![0.0; d];
        for j in 0..s.m {
            for (k, &v) in lay.acq[j].iter().enumerate() {
                row[v] = sat.q[j] * chi(t, sat.t_aq[j][k]) as f64;
            }
            for (r, &v) in lay.dow[j].iter().enumerate() {
                row[v] = -sat.q[j] * chi(t, sat.t_dow[j][r]) as f64;
            }
        }
        let penalty = tighten.map_or(0.0, |p| p.memory[i][l]);
        inst.add_le(row, sat.memory - penalty);
    }
}

/// Local program of satellite `i` for allocation `beta`. An allocation that
/// cannot be served is not rejected here; the solver reports it infeasible.
pub fn build_local_instance(
    s: &Scenario,
    i: usize,
    beta: &[u8],
    tighten: Option<&RobustPenalties>,
) -> Result<IlpInstance> {
    if i >= s.n {
        return Err(Error::InvalidInput(format!("satellite {} of {}", i + 1, s.n)));
    }
    if beta.len() != s.m {
        return Err(Error::Dimension(format!("allocation of length {} for m = {}", beta.len(), s.m)));
    }
    for (j, (&bj, &cap)) in beta.iter().zip(&s.b).enumerate() {
        if bj as u32 > cap {
            return Err(Error::InvalidInput(format!(
                "allocation assigns {bj} copies of target {} (b = {cap})",
                j + 1
            )));
        }
    }
    if let Some(p) = tighten {
        p.check_shape(s)?;
    }
    let lay = LocalLayout::new(s, i, 0);
    let d = lay.num_vars;
    let mut inst = IlpInstance::new(vec![0.0; d]);
    inst.var_labels = vec![
        VarLabel {
            satellite: i,
            kind: VarKind::Acq,
            target: 0,
            occurrence: 0,
        };
        d
    ];
    local_costs_and_labels(s, i, &lay, &mut inst.costs, &mut inst.var_labels);
    for j in 0..s.m {
        let mut row = vec![0.0; d];
        for &v in &lay.acq[j] {
            row[v] = 1.0;
        }
        inst.add_eq(row, beta[j] as f64);
    }
    add_local_rows(s, i, &lay, d, &mut inst, tighten);
    Ok(inst)
}

/// All satellites' variables concatenated, coupled by `Σ_i Σ_k x_{i,j}^k = b_j`.
pub fn build_centralized_instance(s: &Scenario, tighten: Option<&RobustPenalties>) -> Result<IlpInstance> {
    if let Some(p) = tighten {
        p.check_shape(s)?;
    }
    let mut layouts = Vec::with_capacity(s.n);
    let mut offset = 0;
    for i in 0..s.n {
        let lay = LocalLayout::new(s, i, offset);
        offset += lay.num_vars;
        layouts.push(lay);
    }
    let d = offset;
    let mut inst = IlpInstance::new(vec![0.0; d]);
    inst.var_labels = vec![
        VarLabel {
            satellite: 0,
            kind: VarKind::Acq,
            target: 0,
            occurrence: 0,
        };
        d
    ];
    for (i, lay) in layouts.iter().enumerate() {
        local_costs_and_labels(s, i, lay, &mut inst.costs, &mut inst.var_labels);
    }
    for j in 0..s.m {
        let mut row = vec![0.0; d];
        for lay in &layouts {
            for &v in &lay.acq[j] {
                row[v] = 1.0;
            }
        }
        inst.add_eq(row, s.b[j] as f64);
    }
    for (i, lay) in layouts.iter().enumerate() {
        add_local_rows(s, i, lay, d, &mut inst, tighten);
    }
    Ok(inst)
}

/// Per-satellite allocation read off a centralized solution.
pub fn split_from_centralized(s: &Scenario, x: &[u8]) -> Vec<AllocationVector> {
    let mut split = vec![vec![0u8; s.m]; s.n];
    let mut offset = 0;
    for (i, beta) in split.iter_mut().enumerate() {
        let lay = LocalLayout::new(s, i, offset);
        for j in 0..s.m {
            beta[j] = lay.acq[j].iter().map(|&v| x[v]).sum();
        }
        offset += lay.num_vars;
    }
    split
}

// ---------------------------------------------------------------------------
// Random scenarios
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub n: usize,
    pub m: usize,
    /// Acquisition multiplicity applied to every target.
    pub b: u32,
    pub omega1: f64,
    pub omega2: f64,
    /// Scheduling horizon (s).
    pub horizon: f64,
    pub g_range: [usize; 2],
    pub h_range: [usize; 2],
    /// Downlink window length (s).
    pub w_range: [f64; 2],
    /// Data volume per acquisition (Mb).
    pub q_range: [f64; 2],
    /// Memory capacity (Mb).
    pub memory_range: [f64; 2],
    /// Downlink data rate (Mbps).
    pub rate_range: [f64; 2],
    /// Acquisition times are drawn from this fraction of the horizon.
    pub acq_span: [f64; 2],
    /// Downlink window starts are drawn from this fraction of the horizon.
    pub dow_span: [f64; 2],
    pub seed: Option<u64>,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            n: 4,
            m: 6,
            b: 1,
            omega1: 1.0,
            omega2: 1.0,
            horizon: 86_400.0,
            g_range: [0, 3],
            h_range: [1, 3],
            w_range: [120.0, 600.0],
            q_range: [50.0, 500.0],
            memory_range: [500.0, 2000.0],
            rate_range: [20.0, 100.0],
            acq_span: [0.0, 0.75],
            dow_span: [0.25, 1.0],
            seed: None,
        }
    }
}

impl GenParams {
    /// Scenario sizes (n, m) of the four reference scales.
    pub fn preset(name: &str) -> Result<Self> {
        let (n, m) = match name.to_ascii_uppercase().as_str() {
            "S1" => (15, 47),
            "S2" => (30, 43),
            "S3" => (41, 37),
            "S4" => (47, 12),
            other => return Err(Error::InvalidInput(format!("unknown preset {other}"))),
        };
        Ok(Self {
            n,
            m,
            ..Self::default()
        })
    }

    fn check(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(msg.to_string()));
        if self.n == 0 || self.m == 0 {
            return bad("n and m must be positive");
        }
        if self.b == 0 || self.b as usize > self.n {
            return bad("b must lie in 1..=n");
        }
        if self.g_range[0] > self.g_range[1] || self.h_range[0] > self.h_range[1] {
            return bad("integer ranges must be ordered");
        }
        if self.h_range[0] == 0 {
            return bad("every satellite needs at least one downlink opportunity");
        }
        for r in [self.w_range, self.q_range, self.memory_range, self.rate_range] {
            if !(r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite()) {
                return bad("real ranges must be positive and ordered");
            }
        }
        for r in [self.acq_span, self.dow_span] {
            if !(r[0] >= 0.0 && r[0] < r[1] && r[1] <= 1.0) {
                return bad("time spans must be ordered fractions of the horizon");
            }
        }
        if !(self.horizon > 0.0) || !(self.omega1 > 0.0) || !(self.omega2 > 0.0) {
            return bad("horizon and weights must be positive");
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

const GEN_RETRIES: usize = 100;

/// Uniformly random scenario; deterministic in `seed`.
pub fn generate_random_scenario(params: &GenParams, seed: u64) -> Result<Scenario> {
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (params.n, params.m);

    let mut g = vec![vec![0usize; m]; n];
    for row in g.iter_mut() {
        for gij in row.iter_mut() {
            *gij = rng.random_range(params.g_range[0]..=params.g_range[1]);
        }
    }
    for j in 0..m {
        let mut tries = 0;
        while (0..n).all(|i| g[i][j] == 0) {
            if tries == GEN_RETRIES {
                return Err(Error::Generation(format!(
                    "target {} has no acquisition opportunity after {GEN_RETRIES} resamples",
                    j + 1
                )));
            }
            for gi in g.iter_mut() {
                gi[j] = rng.random_range(params.g_range[0]..=params.g_range[1]);
            }
            tries += 1;
        }
    }

    let span = |f: [f64; 2]| (params.horizon * f[0]).max(params.horizon * 1e-6)..params.horizon * f[1];
    let mut satellites = Vec::with_capacity(n);
    for gi in g {
        let h = rng.random_range(params.h_range[0]..=params.h_range[1]);
        let w: Vec<f64> = (0..h).map(|_| uniform(&mut rng, params.w_range)).collect();
        let mut starts: Vec<f64> = (0..h).map(|_| rng.random_range(span(params.dow_span))).collect();
        starts.sort_by(|a, b| a.total_cmp(b));
        let t_aq = gi
            .iter()
            .map(|&gij| {
                let mut t: Vec<f64> = (0..gij).map(|_| rng.random_range(span(params.acq_span))).collect();
                t.sort_by(|a, b| a.total_cmp(b));
                t
            })
            .collect();
        let t_dow = (0..m)
            .map(|_| {
                (0..h)
                    .map(|r| starts[r] + rng.random_range(0.0..w[r]))
                    .collect()
            })
            .collect();
        let q = (0..m).map(|_| uniform(&mut rng, params.q_range)).collect();
        satellites.push(Satellite {
            g: gi,
            t_aq,
            h,
            t_dow,
            w,
            q,
            memory: uniform(&mut rng, params.memory_range),
            data_rate: uniform(&mut rng, params.rate_range),
        });
    }
    let s = Scenario {
        n,
        m,
        b: vec![params.b; m],
        omega1: params.omega1,
        omega2: params.omega2,
        satellites,
        units: Units::default(),
    };
    let violations = validate_scenario(&s);
    if !violations.is_empty() {
        return Err(Error::Generation(violations.join("; ")));
    }
    Ok(s)
}
