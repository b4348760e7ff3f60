//! Exact 0-1 integer linear programming.
//!
//! [`solve`] is a depth-first branch and bound with activity-based bound
//! propagation. Its lower bound relaxes every inequality row that spans more
//! than one equality block and solves the remaining blocks exactly (memoized
//! per partial assignment), which for the scheduling programs amounts to a
//! per-target decomposition. [`solve_exhaustive`] enumerates all points and is
//! the reference the solver is tested against.
//!
//! Both routines return the same point: the optimum of the canonical objective
//! `Σ_j c_j x_j` (summed in index order), ties broken by the lexicographically
//! smallest `x`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row satisfaction tolerance, relative to `max(1, |rhs|)`.
pub const FEAS_TOL: f64 = 1e-9;
/// Looser tolerance used while pruning so that no point accepted by the final
/// check is ever cut off by accumulated rounding.
const PROP_TOL: f64 = 1e-7;
/// Blocks larger than this contribute only the trivial bound.
const MAX_BLOCK_VARS: usize = 26;
const EXHAUSTIVE_MAX_VARS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[u8]) -> f64 {
        let mut s = 0.0;
        for (a, &xi) in self.coeffs.iter().zip(x) {
            if xi == 1 {
                s += a;
            }
        }
        s
    }

    fn tol(&self) -> f64 {
        FEAS_TOL * self.rhs.abs().max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Acq,
    Dow,
}

/// Meaning of a scheduling variable: `x_{i,j}^k` (acq) or `y_{i,j}^r` (dow).
/// All indices 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarLabel {
    pub satellite: usize,
    pub kind: VarKind,
    pub target: usize,
    pub occurrence: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IlpInstance {
    pub num_vars: usize,
    pub costs: Vec<f64>,
    /// `a·x = rhs`
    pub eq_rows: Vec<Row>,
    /// `a·x ≤ rhs`
    pub ineq_rows: Vec<Row>,
    /// Either empty or one label per variable.
    pub var_labels: Vec<VarLabel>,
}

impl IlpInstance {
    pub fn new(costs: Vec<f64>) -> Self {
        Self {
            num_vars: costs.len(),
            costs,
            ..Default::default()
        }
    }

    pub fn add_eq(&mut self, coeffs: Vec<f64>, rhs: f64) {
        self.eq_rows.push(Row { coeffs, rhs });
    }

    pub fn add_le(&mut self, coeffs: Vec<f64>, rhs: f64) {
        self.ineq_rows.push(Row { coeffs, rhs });
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.num_vars;
        if self.costs.len() != d {
            return Err(Error::Dimension(format!("{} costs for {d} variables", self.costs.len())));
        }
        if !self.var_labels.is_empty() && self.var_labels.len() != d {
            return Err(Error::Dimension(format!(
                "{} labels for {d} variables",
                self.var_labels.len()
            )));
        }
        for (kind, rows) in [("eq", &self.eq_rows), ("ineq", &self.ineq_rows)] {
            for (r, row) in rows.iter().enumerate() {
                if row.coeffs.len() != d {
                    return Err(Error::Dimension(format!(
                        "{kind} row {r} has {} coefficients for {d} variables",
                        row.coeffs.len()
                    )));
                }
                if !row.rhs.is_finite() || row.coeffs.iter().any(|a| !a.is_finite()) {
                    return Err(Error::InvalidInput(format!("{kind} row {r} is not finite")));
                }
            }
        }
        if self.costs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite cost".into()));
        }
        Ok(())
    }

    /// Canonical objective `Σ c_j x_j` in index order.
    pub fn objective(&self, x: &[u8]) -> f64 {
        let mut s = 0.0;
        for (c, &xi) in self.costs.iter().zip(x) {
            if xi == 1 {
                s += c;
            }
        }
        s
    }

    pub fn is_feasible(&self, x: &[u8]) -> bool {
        x.len() == self.num_vars
            && self.eq_rows.iter().all(|r| (r.activity(x) - r.rhs).abs() <= r.tol())
            && self.ineq_rows.iter().all(|r| r.activity(x) <= r.rhs + r.tol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlpSolution {
    pub status: Status,
    /// Empty when infeasible.
    pub x: Vec<u8>,
    /// `NaN` when infeasible.
    pub value: f64,
    pub nodes: u64,
}

impl IlpSolution {
    fn infeasible(nodes: u64) -> Self {
        Self {
            status: Status::Infeasible,
            x: Vec::new(),
            value: f64::NAN,
            nodes,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn value_or_inf(&self) -> f64 {
        if self.is_optimal() {
            self.value
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    /// Abort with [`Error::Budget`] after this many search nodes.
    pub node_limit: Option<u64>,
}

pub fn solve(inst: &IlpInstance, sense: Sense) -> Result<IlpSolution> {
    solve_with(inst, sense, SolveOptions::default())
}

pub fn solve_with(inst: &IlpInstance, sense: Sense, opts: SolveOptions) -> Result<IlpSolution> {
    inst.validate()?;
    let mut search = Search::new(inst, sense, opts);
    search.run()?;
    Ok(search.finish())
}

/// Enumerates all `2^d` points. Rejects `d > 25`.
pub fn solve_exhaustive(inst: &IlpInstance, sense: Sense) -> Result<IlpSolution> {
    inst.validate()?;
    let d = inst.num_vars;
    if d > EXHAUSTIVE_MAX_VARS {
        return Err(Error::Budget(format!(
            "exhaustive enumeration over {d} variables (max {EXHAUSTIVE_MAX_VARS})"
        )));
    }
    let mut best: Option<(f64, Vec<u8>)> = None;
    let mut x = vec![0u8; d];
    // x[0] is the most significant bit, so ascending masks are in lex order
    // and the first point of a tied value is the lexicographically smallest.
    for mask in 0u64..(1u64 << d) {
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = ((mask >> (d - 1 - j)) & 1) as u8;
        }
        if !inst.is_feasible(&x) {
            continue;
        }
        let v = inst.objective(&x);
        let better = match &best {
            None => true,
            Some((bv, _)) => match sense {
                Sense::Min => v < *bv,
                Sense::Max => v > *bv,
            },
        };
        if better {
            best = Some((v, x.clone()));
        }
    }
    let nodes = 1u64 << d;
    Ok(match best {
        Some((value, x)) => IlpSolution {
            status: Status::Optimal,
            x,
            value,
            nodes,
        },
        None => IlpSolution::infeasible(nodes),
    })
}

// ---------------------------------------------------------------------------
// Branch and bound
// ---------------------------------------------------------------------------

const FREE: i8 = -1;

struct SparseRow {
    terms: Vec<(usize, f64)>,
    rhs: f64,
    is_eq: bool,
    ptol: f64,
}

#[derive(Clone, Copy, Default)]
struct RowState {
    fixed: f64,
    free_pos: f64,
    free_neg: f64,
    n_free: usize,
}

struct Block {
    vars: Vec<usize>,
    /// Rows fully inside the block, with block-local variable indices.
    rows: Vec<SparseRow>,
    exact: bool,
    memo: HashMap<Vec<i8>, Option<f64>>,
}

struct Search<'a> {
    inst: &'a IlpInstance,
    /// Costs in minimization form.
    cost: Vec<f64>,
    rows: Vec<SparseRow>,
    state: Vec<RowState>,
    col: Vec<Vec<(usize, f64)>>,
    assign: Vec<i8>,
    trail: Vec<usize>,
    blocks: Vec<Block>,
    best: Option<(f64, Vec<u8>)>,
    nodes: u64,
    opts: SolveOptions,
    sense: Sense,
}

impl<'a> Search<'a> {
    fn new(inst: &'a IlpInstance, sense: Sense, opts: SolveOptions) -> Self {
        let d = inst.num_vars;
        let cost: Vec<f64> = match sense {
            Sense::Min => inst.costs.clone(),
            Sense::Max => inst.costs.iter().map(|c| -c).collect(),
        };
        let mut rows = Vec::new();
        for (row, is_eq) in inst
            .eq_rows
            .iter()
            .map(|r| (r, true))
            .chain(inst.ineq_rows.iter().map(|r| (r, false)))
        {
            rows.push(sparse(row, is_eq, |j| j));
        }
        let mut col = vec![Vec::new(); d];
        for (r, row) in rows.iter().enumerate() {
            for &(j, a) in &row.terms {
                col[j].push((r, a));
            }
        }
        let state = rows
            .iter()
            .map(|row| {
                let mut st = RowState::default();
                for &(_, a) in &row.terms {
                    if a > 0.0 {
                        st.free_pos += a;
                    } else {
                        st.free_neg += a;
                    }
                }
                st.n_free = row.terms.len();
                st
            })
            .collect();

        let blocks = build_blocks(inst, &rows);

        Self {
            inst,
            cost,
            rows,
            state,
            col,
            assign: vec![FREE; d],
            trail: Vec::new(),
            blocks,
            best: None,
            nodes: 0,
            opts,
            sense,
        }
    }

    fn finish(self) -> IlpSolution {
        match self.best {
            Some((_, x)) => {
                let value = self.inst.objective(&x);
                IlpSolution {
                    status: Status::Optimal,
                    x,
                    value,
                    nodes: self.nodes,
                }
            }
            None => IlpSolution::infeasible(self.nodes),
        }
    }

    fn run(&mut self) -> Result<()> {
        // rows with no variables at all
        for row in &self.rows {
            if row.terms.is_empty() {
                let bad = if row.is_eq {
                    row.rhs.abs() > row.ptol
                } else {
                    row.rhs < -row.ptol
                };
                if bad {
                    return Ok(());
                }
            }
        }
        let all: Vec<usize> = (0..self.rows.len()).collect();
        if !self.propagate(all) {
            return Ok(());
        }
        self.dfs()
    }

    fn fix(&mut self, j: usize, v: i8) {
        debug_assert_eq!(self.assign[j], FREE);
        self.assign[j] = v;
        self.trail.push(j);
        for &(r, a) in &self.col[j] {
            let st = &mut self.state[r];
            if a > 0.0 {
                st.free_pos -= a;
            } else {
                st.free_neg -= a;
            }
            if v == 1 {
                st.fixed += a;
            }
            st.n_free -= 1;
        }
    }

    fn undo_to(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let j = self.trail.pop().expect("trail");
            let v = self.assign[j];
            self.assign[j] = FREE;
            for &(r, a) in &self.col[j] {
                let st = &mut self.state[r];
                if a > 0.0 {
                    st.free_pos += a;
                } else {
                    st.free_neg += a;
                }
                if v == 1 {
                    st.fixed -= a;
                }
                st.n_free += 1;
            }
        }
    }

    /// Activity-bound propagation to a fixpoint. Returns false on conflict.
    fn propagate(&mut self, mut queue: Vec<usize>) -> bool {
        let mut queued = vec![false; self.rows.len()];
        for &r in &queue {
            queued[r] = true;
        }
        while let Some(r) = queue.pop() {
            queued[r] = false;
            let st = self.state[r];
            let row = &self.rows[r];
            let minact = st.fixed + st.free_neg;
            let maxact = st.fixed + st.free_pos;
            if minact > row.rhs + row.ptol {
                return false;
            }
            if row.is_eq && maxact < row.rhs - row.ptol {
                return false;
            }
            if st.n_free == 0 {
                continue;
            }
            let mut forced: Vec<(usize, i8)> = Vec::new();
            for &(j, a) in &row.terms {
                if self.assign[j] != FREE {
                    continue;
                }
                if a > 0.0 {
                    if minact + a > row.rhs + row.ptol {
                        forced.push((j, 0));
                    } else if row.is_eq && maxact - a < row.rhs - row.ptol {
                        forced.push((j, 1));
                    }
                } else if a < 0.0 {
                    if minact - a > row.rhs + row.ptol {
                        forced.push((j, 1));
                    } else if row.is_eq && maxact + a < row.rhs - row.ptol {
                        forced.push((j, 0));
                    }
                }
            }
            for (j, v) in forced {
                if self.assign[j] != FREE {
                    if self.assign[j] != v {
                        return false;
                    }
                    continue;
                }
                self.fix(j, v);
                for k in 0..self.col[j].len() {
                    let rr = self.col[j][k].0;
                    if !queued[rr] {
                        queued[rr] = true;
                        queue.push(rr);
                    }
                }
            }
        }
        true
    }

    /// Lower bound in minimization form; `None` when some block has no completion.
    fn bound(&mut self) -> Option<f64> {
        let mut total = 0.0;
        for b in 0..self.blocks.len() {
            let block = &self.blocks[b];
            let mut fixed_cost = 0.0;
            let mut any_free = false;
            for &j in &block.vars {
                match self.assign[j] {
                    1 => fixed_cost += self.cost[j],
                    FREE => any_free = true,
                    _ => {}
                }
            }
            if !any_free {
                total += fixed_cost;
                continue;
            }
            if !block.exact {
                total += fixed_cost;
                for &j in &block.vars {
                    if self.assign[j] == FREE {
                        total += self.cost[j].min(0.0);
                    }
                }
                continue;
            }
            let key: Vec<i8> = block.vars.iter().map(|&j| self.assign[j]).collect();
            let value = match self.blocks[b].memo.get(&key) {
                Some(v) => *v,
                None => {
                    let block = &self.blocks[b];
                    let local_cost: Vec<f64> = block.vars.iter().map(|&j| self.cost[j]).collect();
                    let v = block_min(&block.rows, &local_cost, &key);
                    self.blocks[b].memo.insert(key, v);
                    v
                }
            };
            total += value?;
        }
        Some(total)
    }

    fn cutoff(&self) -> Option<f64> {
        self.best
            .as_ref()
            .map(|(v, _)| v + PROP_TOL * v.abs().max(1.0))
    }

    fn dfs(&mut self) -> Result<()> {
        self.nodes += 1;
        if let Some(limit) = self.opts.node_limit {
            if self.nodes > limit {
                return Err(Error::Budget(format!("branch and bound exceeded {limit} nodes")));
            }
        }
        let Some(lb) = self.bound() else {
            return Ok(());
        };
        if let Some(cut) = self.cutoff() {
            if lb > cut {
                return Ok(());
            }
        }

        let Some((j, first)) = self.pick_branch() else {
            self.leaf();
            return Ok(());
        };

        for v in [first, 1 - first] {
            let mark = self.trail.len();
            self.fix(j, v);
            let rows: Vec<usize> = self.col[j].iter().map(|&(r, _)| r).collect();
            if self.propagate(rows) {
                self.dfs()?;
            }
            self.undo_to(mark);
        }
        Ok(())
    }

    /// Tightest equality row with free variables; within it the cheapest free
    /// variable, tried at 1 first. Otherwise the lowest-index free variable at
    /// its cheaper value.
    fn pick_branch(&self) -> Option<(usize, i8)> {
        let mut best_row: Option<(usize, usize)> = None;
        for (r, row) in self.rows.iter().enumerate() {
            if !row.is_eq {
                continue;
            }
            let n_free = self.state[r].n_free;
            if n_free == 0 {
                continue;
            }
            if best_row.is_none_or(|(_, nf)| n_free < nf) {
                best_row = Some((r, n_free));
            }
        }
        if let Some((r, _)) = best_row {
            let mut pick: Option<usize> = None;
            for &(j, _) in &self.rows[r].terms {
                if self.assign[j] != FREE {
                    continue;
                }
                if pick.is_none_or(|p| self.cost[j] < self.cost[p] || (self.cost[j] == self.cost[p] && j < p)) {
                    pick = Some(j);
                }
            }
            return pick.map(|j| (j, 1));
        }
        (0..self.assign.len())
            .find(|&j| self.assign[j] == FREE)
            .map(|j| (j, if self.cost[j] < 0.0 { 1 } else { 0 }))
    }

    fn leaf(&mut self) {
        let x: Vec<u8> = self.assign.iter().map(|&v| v as u8).collect();
        if !self.inst.is_feasible(&x) {
            return;
        }
        let v = match self.sense {
            Sense::Min => self.inst.objective(&x),
            Sense::Max => -self.inst.objective(&x),
        };
        let better = match &self.best {
            None => true,
            Some((bv, bx)) => v < *bv || (v == *bv && x < *bx),
        };
        if better {
            self.best = Some((v, x));
        }
    }
}

fn sparse(row: &Row, is_eq: bool, map: impl Fn(usize) -> usize) -> SparseRow {
    SparseRow {
        terms: row
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != 0.0)
            .map(|(j, &a)| (map(j), a))
            .collect(),
        rhs: row.rhs,
        is_eq,
        ptol: PROP_TOL * row.rhs.abs().max(1.0),
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Groups variables connected through equality rows; attaches every row that
/// lies entirely within one group.
fn build_blocks(inst: &IlpInstance, rows: &[SparseRow]) -> Vec<Block> {
    let d = inst.num_vars;
    let mut parent: Vec<usize> = (0..d).collect();
    for row in rows.iter().filter(|r| r.is_eq) {
        if let Some(&(first, _)) = row.terms.first() {
            for &(j, _) in &row.terms[1..] {
                let a = find(&mut parent, first);
                let b = find(&mut parent, j);
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut block_index: HashMap<usize, usize> = HashMap::new();
    let mut blocks: Vec<Block> = Vec::new();
    let mut block_of = vec![0; d];
    let mut local_of = vec![0; d];
    for j in 0..d {
        let root = find(&mut parent, j);
        let b = *block_index.entry(root).or_insert_with(|| {
            blocks.push(Block {
                vars: Vec::new(),
                rows: Vec::new(),
                exact: true,
                memo: HashMap::new(),
            });
            blocks.len() - 1
        });
        block_of[j] = b;
        local_of[j] = blocks[b].vars.len();
        blocks[b].vars.push(j);
    }
    for (r, row) in rows.iter().enumerate() {
        let Some(&(first, _)) = row.terms.first() else {
            continue;
        };
        let b = block_of[first];
        if row.terms.iter().all(|&(j, _)| block_of[j] == b) {
            let src = if row.is_eq {
                &inst.eq_rows[r]
            } else {
                &inst.ineq_rows[r - inst.eq_rows.len()]
            };
            let mut local = sparse(src, row.is_eq, |j| local_of[j]);
            local.ptol = row.ptol;
            blocks[b].rows.push(local);
        }
    }
    for block in &mut blocks {
        block.exact = block.vars.len() <= MAX_BLOCK_VARS;
    }
    blocks
}

/// Exact minimum of a small block under its own rows, given a partial assignment.
fn block_min(rows: &[SparseRow], cost: &[f64], assign: &[i8]) -> Option<f64> {
    let free: Vec<usize> = (0..assign.len()).filter(|&j| assign[j] == FREE).collect();
    let mut cur = assign.to_vec();
    let mut best = None;
    block_dfs(rows, cost, &free, 0, &mut cur, &mut best);
    best
}

fn block_dfs(
    rows: &[SparseRow],
    cost: &[f64],
    free: &[usize],
    depth: usize,
    cur: &mut [i8],
    best: &mut Option<f64>,
) {
    // partial activity check
    for row in rows {
        let (mut lo, mut hi) = (0.0, 0.0);
        for &(j, a) in &row.terms {
            match cur[j] {
                1 => {
                    lo += a;
                    hi += a;
                }
                FREE => {
                    if a > 0.0 {
                        hi += a;
                    } else {
                        lo += a;
                    }
                }
                _ => {}
            }
        }
        if lo > row.rhs + row.ptol || (row.is_eq && hi < row.rhs - row.ptol) {
            return;
        }
    }
    let mut partial = 0.0;
    for (j, &v) in cur.iter().enumerate() {
        if v == 1 {
            partial += cost[j];
        } else if v == FREE {
            partial += cost[j].min(0.0);
        }
    }
    if let Some(b) = *best {
        if partial >= b {
            return;
        }
    }
    if depth == free.len() {
        *best = Some(partial);
        return;
    }
    let j = free[depth];
    let order = if cost[j] < 0.0 { [1, 0] } else { [0, 1] };
    for v in order {
        cur[j] = v;
        block_dfs(rows, cost, free, depth + 1, cur, best);
    }
    cur[j] = FREE;
}
