//! Ellipsoidal uncertainty on data volumes and downlink rate, and the
//! resulting worst-case tightening of the downlink-window and memory rows.
//!
//! For satellite `i` the uncertain vector is `ω = (q_1 … q_m, DR)`. From `N`
//! observations we take the mean `ω̂`, the sample covariance `S`, the Hotelling
//! factor `γ = N(N−p)/(p(N−1))·F_{p,N−p,α}` and `M = U√Λ` with
//! `S/γ = UΛUᵀ`. The uncertainty set is `{ω̂ + τ·M·δ : ‖δ‖₂ ≤ 1}` and a row
//! `g(x, ω) ≤ 0` is tightened by `τ · max_{x∈[0,1]^d} ‖Mᵀ ∇_ω g(x, ω̂)‖_q`.

use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{chi, memory_checkpoints, AllocationVector, Scenario};

const JACOBI_THRESHOLD: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const EXACT_BOX_DIM: usize = 20;
const ASCENT_STARTS: u64 = 32;

// ---------------------------------------------------------------------------
// Penalties
// ---------------------------------------------------------------------------

/// Worst-case penalties: `downlink[i][r]` and `memory[i][l]` for checkpoint `l`
/// of [`memory_checkpoints`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustPenalties {
    pub downlink: Vec<Vec<f64>>,
    pub memory: Vec<Vec<f64>>,
    /// True when every maximization was solved by vertex enumeration.
    #[serde(default = "yes")]
    pub exact: bool,
}

fn yes() -> bool {
    true
}

impl RobustPenalties {
    pub fn zeros(s: &Scenario) -> Self {
        Self {
            downlink: s.satellites.iter().map(|sat| vec![0.0; sat.h]).collect(),
            memory: (0..s.n).map(|i| vec![0.0; memory_checkpoints(s, i).len()]).collect(),
            exact: true,
        }
    }

    pub fn check_shape(&self, s: &Scenario) -> Result<()> {
        if self.downlink.len() != s.n || self.memory.len() != s.n {
            return Err(Error::Dimension("penalties do not cover every satellite".into()));
        }
        for i in 0..s.n {
            if self.downlink[i].len() != s.satellites[i].h
                || self.memory[i].len() != memory_checkpoints(s, i).len()
            {
                return Err(Error::Dimension(format!("penalty shape mismatch on satellite {}", i + 1)));
            }
        }
        if self.downlink.iter().chain(&self.memory).flatten().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidInput("penalties must be nonnegative".into()));
        }
        Ok(())
    }

    /// Stable hash of the penalty values, used to key cached local costs.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for v in self.downlink.iter().chain(&self.memory) {
            v.len().hash(&mut h);
            for x in v {
                x.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Unbiased sample covariance of the rows of `samples` (N × p).
pub fn sample_covariance(samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = samples.shape();
    if n < 2 {
        return Err(Error::InvalidInput(format!("covariance needs at least 2 samples, got {n}")));
    }
    let mean = samples.row_mean();
    let mut s = DMatrix::zeros(p, p);
    for r in 0..n {
        let dev = samples.row(r) - &mean;
        s += dev.transpose() * &dev;
    }
    s /= (n - 1) as f64;
    // exact symmetry
    for a in 0..p {
        for b in 0..a {
            let v = 0.5 * (s[(a, b)] + s[(b, a)]);
            s[(a, b)] = v;
            s[(b, a)] = v;
        }
    }
    Ok(s)
}

/// `P(F_{d1,d2} ≤ x)`.
pub fn f_cdf(x: f64, d1: u32, d2: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let (a, b) = (d1 as f64 / 2.0, d2 as f64 / 2.0);
    let z = d1 as f64 * x / (d1 as f64 * x + d2 as f64);
    statrs::function::beta::beta_reg(a, b, z)
}

/// Upper critical value `c` with `P(F_{d1,d2} > c) = alpha_sig`.
pub fn f_quantile(d1: u32, d2: u32, alpha_sig: f64) -> Result<f64> {
    if d1 == 0 || d2 == 0 {
        return Err(Error::InvalidInput("F degrees of freedom must be positive".into()));
    }
    if !(alpha_sig > 0.0 && alpha_sig < 1.0) {
        return Err(Error::InvalidInput(format!("significance {alpha_sig} outside (0,1)")));
    }
    let (a, b) = (d1 as f64 / 2.0, d2 as f64 / 2.0);
    let target = 1.0 - alpha_sig;
    // bisection on z = d1·x/(d1·x + d2) ∈ (0,1), where the CDF is I_z(a, b)
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if statrs::function::beta::beta_reg(a, b, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let z = 0.5 * (lo + hi);
    Ok(d2 as f64 * z / (d1 as f64 * (1.0 - z)))
}

/// `γ = N(N−p)/(p(N−1)) · F_{p, N−p, α}`.
pub fn hotelling_gamma(n_samples: usize, p: usize, alpha_sig: f64) -> Result<f64> {
    if p == 0 || n_samples <= p {
        return Err(Error::InvalidInput(format!(
            "Hotelling scaling needs N > p >= 1 (N = {n_samples}, p = {p})"
        )));
    }
    let f = f_quantile(p as u32, (n_samples - p) as u32, alpha_sig)?;
    let (n, p) = (n_samples as f64, p as f64);
    Ok(n * (n - p) / (p * (n - 1.0)) * f)
}

fn check_symmetric(s: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() {
        return Err(Error::Dimension(format!("matrix is {}x{}", s.nrows(), s.ncols())));
    }
    let scale = s.amax().max(1.0);
    for a in 0..s.nrows() {
        for b in 0..a {
            if (s[(a, b)] - s[(b, a)]).abs() > 1e-10 * scale {
                return Err(Error::InvalidInput(format!(
                    "matrix is not symmetric at ({}, {})",
                    a + 1,
                    b + 1
                )));
            }
        }
    }
    Ok(())
}

/// Cyclic Jacobi eigendecomposition: `S = U·diag(λ)·Uᵀ`, `λ` descending.
pub fn symmetric_eig(s: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_symmetric(s)?;
    let p = s.nrows();
    let mut a = s.clone();
    let mut u = DMatrix::<f64>::identity(p, p);
    let norm = a.norm();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for r in 0..p {
            for c in 0..r {
                off += a[(r, c)] * a[(r, c)];
            }
        }
        if off.sqrt() <= JACOBI_THRESHOLD * norm.max(f64::MIN_POSITIVE) {
            break;
        }
        for k in 0..p {
            for l in (k + 1)..p {
                let akl = a[(k, l)];
                if akl == 0.0 {
                    continue;
                }
                let theta = (a[(l, l)] - a[(k, k)]) / (2.0 * akl);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for r in 0..p {
                    let ark = a[(r, k)];
                    let arl = a[(r, l)];
                    a[(r, k)] = c * ark - sn * arl;
                    a[(r, l)] = sn * ark + c * arl;
                }
                for r in 0..p {
                    let akr = a[(k, r)];
                    let alr = a[(l, r)];
                    a[(k, r)] = c * akr - sn * alr;
                    a[(l, r)] = sn * akr + c * alr;
                }
                for r in 0..p {
                    let urk = u[(r, k)];
                    let url = u[(r, l)];
                    u[(r, k)] = c * urk - sn * url;
                    u[(r, l)] = sn * urk + c * url;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| a[(y, y)].total_cmp(&a[(x, x)]).then(x.cmp(&y)));
    let lambdas = order.iter().map(|&k| a[(k, k)]).collect();
    let u_sorted = DMatrix::from_fn(p, p, |r, c| u[(r, order[c])]);
    Ok((u_sorted, lambdas))
}

/// `M = U·diag(√λ)` for symmetric PSD `S̃`; small negative eigenvalues are clamped.
pub fn shaping_matrix(s_tilde: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (u, lambdas) = symmetric_eig(s_tilde)?;
    let floor = -1e-9 * s_tilde.norm();
    let mut m = u;
    for (c, &l) in lambdas.iter().enumerate() {
        if l < floor {
            return Err(Error::InvalidInput(format!(
                "covariance has eigenvalue {l:e}; samples are corrupt"
            )));
        }
        let root = l.max(0.0).sqrt();
        m.column_mut(c).scale_mut(root);
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Uncertainty model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QNorm {
    One,
    Two,
    Inf,
}

impl QNorm {
    pub fn norm(self, v: &DVector<f64>) -> f64 {
        match self {
            QNorm::One => v.iter().map(|x| x.abs()).sum(),
            QNorm::Two => v.norm(),
            QNorm::Inf => v.amax(),
        }
    }
}

impl Serialize for QNorm {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            QNorm::One => serializer.serialize_u8(1),
            QNorm::Two => serializer.serialize_u8(2),
            QNorm::Inf => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for QNorm {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(deserializer)? {
            serde_json::Value::Number(n) if n.as_u64() == Some(1) => Ok(QNorm::One),
            serde_json::Value::Number(n) if n.as_u64() == Some(2) => Ok(QNorm::Two),
            serde_json::Value::String(s) if s == "inf" => Ok(QNorm::Inf),
            other => Err(serde::de::Error::custom(format!("q_norm must be 1, 2 or \"inf\", got {other}"))),
        }
    }
}

impl Default for QNorm {
    fn default() -> Self {
        QNorm::Two
    }
}

/// Fitted uncertainty of one satellite's `(q_1 … q_m, DR)`.
#[derive(Debug, Clone)]
pub struct UncertaintyModel {
    pub p: usize,
    pub omega_hat: DVector<f64>,
    pub samples: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub gamma: f64,
    pub shaping: DMatrix<f64>,
    pub tau: f64,
    pub alpha_sig: f64,
    pub q_norm: QNorm,
}

impl UncertaintyModel {
    pub fn fit(samples: DMatrix<f64>, tau: f64, alpha_sig: f64, q_norm: QNorm) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidInput(format!("tau = {tau} must be nonnegative")));
        }
        let (n, p) = samples.shape();
        let covariance = sample_covariance(&samples)?;
        let gamma = hotelling_gamma(n, p, alpha_sig)?;
        let shaping = shaping_matrix(&(&covariance / gamma))?;
        Ok(Self {
            p,
            omega_hat: samples.row_mean().transpose(),
            samples,
            covariance,
            gamma,
            shaping,
            tau,
            alpha_sig,
            q_norm,
        })
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        Self { tau, ..self.clone() }
    }

    /// `ω̂ + τ·M·δ` for `δ` uniform on the unit sphere.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let mut delta = DVector::from_fn(self.p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = delta.norm();
        if norm > 0.0 {
            delta /= norm;
        }
        &self.omega_hat + self.tau * (&self.shaping * delta)
    }

    pub fn report(&self) -> serde_json::Value {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
        };
        serde_json::json!({
            "p": self.p,
            "n_samples": self.samples.nrows(),
            "omega_hat": self.omega_hat.iter().copied().collect::<Vec<_>>(),
            "S": rows(&self.covariance),
            "gamma": self.gamma,
            "M": rows(&self.shaping),
            "tau": self.tau,
            "alpha": self.alpha_sig,
            "q_norm": self.q_norm,
        })
    }
}

/// Robust block of an experiment: per-satellite samples (N × (m+1)) or a
/// synthetic generator around the scenario's nominal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    #[serde(default)]
    pub samples: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSamples>,
    pub tau: f64,
    #[serde(rename = "alpha")]
    pub alpha_sig: f64,
    #[serde(default)]
    pub q_norm: QNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSamples {
    pub n_samples: usize,
    /// Relative standard deviation of every component.
    pub rel_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticSamples {
    fn default() -> Self {
        Self {
            n_samples: 30,
            rel_sd: 0.05,
            seed: 0,
        }
    }
}

/// Independent Gaussian observations `ω_true ⊙ (1 + rel_sd·z)` per satellite.
pub fn synthetic_samples(s: &Scenario, spec: &SyntheticSamples) -> Vec<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    s.satellites
        .iter()
        .map(|sat| {
            let truth: Vec<f64> = sat.q.iter().copied().chain([sat.data_rate]).collect();
            DMatrix::from_fn(spec.n_samples, truth.len(), |_, c| {
                let z: f64 = rng.sample(StandardNormal);
                (truth[c] * (1.0 + spec.rel_sd * z)).max(truth[c] * 1e-6)
            })
        })
        .collect()
}

impl RobustConfig {
    pub fn fit(&self, s: &Scenario) -> Result<Vec<UncertaintyModel>> {
        let mats: Vec<DMatrix<f64>> = match (&self.samples, &self.synthetic) {
            (Some(per_sat), _) => {
                if per_sat.len() != s.n {
                    return Err(Error::Dimension(format!(
                        "samples for {} satellites, scenario has {}",
                        per_sat.len(),
                        s.n
                    )));
                }
                per_sat
                    .iter()
                    .map(|rows| {
                        let n = rows.len();
                        if rows.iter().any(|r| r.len() != s.m + 1) {
                            return Err(Error::Dimension(format!("samples must have m+1 = {} columns", s.m + 1)));
                        }
                        Ok(DMatrix::from_fn(n, s.m + 1, |r, c| rows[r][c]))
                    })
                    .collect::<Result<_>>()?
            }
            (None, Some(spec)) => synthetic_samples(s, spec),
            (None, None) => synthetic_samples(s, &SyntheticSamples::default()),
        };
        mats.into_iter()
            .map(|m| UncertaintyModel::fit(m, self.tau, self.alpha_sig, self.q_norm))
            .collect()
    }
}

/// Scenario with every satellite's `q` and `DR` replaced by the fitted means.
pub fn nominal_scenario(s: &Scenario, models: &[UncertaintyModel]) -> Result<Scenario> {
    check_models(s, models)?;
    let mut out = s.clone();
    for (sat, model) in out.satellites.iter_mut().zip(models) {
        for j in 0..s.m {
            sat.q[j] = model.omega_hat[j];
        }
        sat.data_rate = model.omega_hat[s.m];
    }
    Ok(out)
}

fn check_models(s: &Scenario, models: &[UncertaintyModel]) -> Result<()> {
    if models.len() != s.n {
        return Err(Error::Dimension(format!("{} models for {} satellites", models.len(), s.n)));
    }
    if let Some(bad) = models.iter().position(|m| m.p != s.m + 1) {
        return Err(Error::Dimension(format!(
            "model of satellite {} has p = {}, expected m+1 = {}",
            bad + 1,
            models[bad].p,
            s.m + 1
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Worst case over the decision box
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxMax {
    pub value: f64,
    /// False when the multistart local search was used.
    pub exact: bool,
}

/// `max_{x∈[0,1]^d} ‖Mᵀ(G·x + g0)‖_q`.
///
/// Columns of `MᵀG` equal up to sign are merged into one interval variable
/// (the image of the box is unchanged). With at most 20 distinct directions
/// all vertices are enumerated, which is exact because the objective is
/// convex; otherwise 32 deterministic starts of single-flip vertex ascent
/// give a lower estimate.
pub fn max_norm_over_box(g: &DMatrix<f64>, g0: &DVector<f64>, m: &DMatrix<f64>, q: QNorm) -> Result<BoxMax> {
    let p = g0.len();
    if g.nrows() != p || m.nrows() != p || m.ncols() != p {
        return Err(Error::Dimension(format!(
            "G is {}x{}, g0 has {p} entries, M is {}x{}",
            g.nrows(),
            g.ncols(),
            m.nrows(),
            m.ncols()
        )));
    }
    let mt = m.transpose();
    let base = &mt * g0;
    let cols = &mt * g;

    // merge parallel (equal up to sign) columns
    let mut dirs: Vec<DVector<f64>> = Vec::new();
    let mut ranges: Vec<(f64, f64)> = Vec::new();
    for k in 0..cols.ncols() {
        let c: DVector<f64> = cols.column(k).into_owned();
        let Some(first) = c.iter().position(|&v| v != 0.0) else {
            continue;
        };
        let (canon, sign) = if c[first] < 0.0 { (-&c, -1.0) } else { (c, 1.0) };
        match dirs.iter().position(|d| *d == canon) {
            Some(idx) => {
                if sign > 0.0 {
                    ranges[idx].1 += 1.0;
                } else {
                    ranges[idx].0 -= 1.0;
                }
            }
            None => {
                dirs.push(canon);
                ranges.push(if sign > 0.0 { (0.0, 1.0) } else { (-1.0, 0.0) });
            }
        }
    }
    let k = dirs.len();
    let eval = |choice: &[bool]| -> f64 {
        let mut v = base.clone();
        for (idx, &hi) in choice.iter().enumerate() {
            let s = if hi { ranges[idx].1 } else { ranges[idx].0 };
            if s != 0.0 {
                v.axpy(s, &dirs[idx], 1.0);
            }
        }
        q.norm(&v)
    };

    if k <= EXACT_BOX_DIM {
        let mut best = f64::NEG_INFINITY;
        let mut choice = vec![false; k];
        for mask in 0u32..(1u32 << k) {
            for (idx, c) in choice.iter_mut().enumerate() {
                *c = (mask >> idx) & 1 == 1;
            }
            best = best.max(eval(&choice));
        }
        return Ok(BoxMax { value: best, exact: true });
    }

    let mut best = f64::NEG_INFINITY;
    for start in 0..ASCENT_STARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(start);
        let mut choice: Vec<bool> = (0..k).map(|_| rng.random_bool(0.5)).collect();
        let mut cur = eval(&choice);
        loop {
            let mut improved = false;
            for idx in 0..k {
                choice[idx] = !choice[idx];
                let v = eval(&choice);
                if v > cur * (1.0 + 1e-14) {
                    cur = v;
                    improved = true;
                } else {
                    choice[idx] = !choice[idx];
                }
            }
            if !improved {
                break;
            }
        }
        best = best.max(cur);
    }
    Ok(BoxMax { value: best, exact: false })
}

/// `P_D(i, r)`: downlink-window row `Σ_j y_j q_j / DR ≤ W` linearized at `ω̂`.
pub fn robust_penalty_downlink(s: &Scenario, model: &UncertaintyModel, i: usize, r: usize) -> Result<BoxMax> {
    if model.p != s.m + 1 {
        return Err(Error::Dimension(format!("model dimension {} for m = {}", model.p, s.m)));
    }
    if r >= s.satellites[i].h {
        return Err(Error::InvalidInput(format!("downlink opportunity {} of satellite {}", r + 1, i + 1)));
    }
    if model.tau == 0.0 {
        return Ok(BoxMax { value: 0.0, exact: true });
    }
    let m = s.m;
    let dr = model.omega_hat[m];
    let mut g = DMatrix::zeros(m + 1, m);
    for j in 0..m {
        g[(j, j)] = 1.0 / dr;
        g[(m, j)] = -model.omega_hat[j] / (dr * dr);
    }
    let best = max_norm_over_box(&g, &DVector::zeros(m + 1), &model.shaping, model.q_norm)?;
    Ok(BoxMax {
        value: model.tau * best.value,
        exact: best.exact,
    })
}

/// `P_M(i, t)`: memory row at checkpoint time `t`; gradient entries
/// `Σ_k x χ(t, t_aq) − Σ_r y χ(t, t_dow)` per target and 0 for the rate.
pub fn robust_penalty_memory(s: &Scenario, model: &UncertaintyModel, i: usize, checkpoint: f64) -> Result<BoxMax> {
    if model.p != s.m + 1 {
        return Err(Error::Dimension(format!("model dimension {} for m = {}", model.p, s.m)));
    }
    if model.tau == 0.0 {
        return Ok(BoxMax { value: 0.0, exact: true });
    }
    let sat = &s.satellites[i];
    let mut columns: Vec<(usize, f64)> = Vec::new();
    for j in 0..s.m {
        for &t in &sat.t_aq[j] {
            if chi(checkpoint, t) == 1 {
                columns.push((j, 1.0));
            }
        }
        for &t in &sat.t_dow[j] {
            if chi(checkpoint, t) == 1 {
                columns.push((j, -1.0));
            }
        }
    }
    let mut g = DMatrix::zeros(s.m + 1, columns.len());
    for (k, &(j, v)) in columns.iter().enumerate() {
        g[(j, k)] = v;
    }
    let best = max_norm_over_box(&g, &DVector::zeros(s.m + 1), &model.shaping, model.q_norm)?;
    Ok(BoxMax {
        value: model.tau * best.value,
        exact: best.exact,
    })
}

/// Every `P_D` and `P_M` of the scenario. Runs per satellite in parallel.
pub fn compute_penalties(s: &Scenario, models: &[UncertaintyModel]) -> Result<RobustPenalties> {
    check_models(s, models)?;
    let per_sat: Vec<Result<(Vec<BoxMax>, Vec<BoxMax>)>> = (0..s.n)
        .into_par_iter()
        .map(|i| {
            let down = (0..s.satellites[i].h)
                .map(|r| robust_penalty_downlink(s, &models[i], i, r))
                .collect::<Result<Vec<_>>>()?;
            let mem = memory_checkpoints(s, i)
                .into_iter()
                .map(|t| robust_penalty_memory(s, &models[i], i, t))
                .collect::<Result<Vec<_>>>()?;
            Ok((down, mem))
        })
        .collect();
    let mut out = RobustPenalties {
        downlink: Vec::with_capacity(s.n),
        memory: Vec::with_capacity(s.n),
        exact: true,
    };
    for item in per_sat {
        let (down, mem) = item?;
        out.exact &= down.iter().chain(&mem).all(|b| b.exact);
        out.downlink.push(down.iter().map(|b| b.value).collect());
        out.memory.push(mem.iter().map(|b| b.value).collect());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Bounds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bounds {
    pub tau: f64,
    /// Centralized optimum with nominal rows.
    pub l_b: Option<f64>,
    /// Sum of tightened per-satellite optima for the fixed split.
    pub u_b: Option<f64>,
    /// `(u_b − l_b)/l_b`, undefined unless both exist and `l_b > 0`.
    pub relative_error: Option<f64>,
    pub penalties_exact: bool,
    pub note: String,
}

/// `l_b ≤ v ≤ u_b` for the robust program. `s` carries nominal values (see
/// [`nominal_scenario`]); `split` is a feasible target split. `l_b` may be
/// supplied when it has already been computed for the same nominal scenario.
pub fn bounds(
    s: &Scenario,
    models: &[UncertaintyModel],
    split: &[AllocationVector],
    l_b: Option<f64>,
    var_budget: usize,
) -> Result<Bounds> {
    check_models(s, models)?;
    let tau = models.first().map_or(0.0, |m| m.tau);
    let mut notes = Vec::new();
    let l_b = match l_b {
        Some(v) => Some(v),
        None => match crate::engine::centralized_value(s, None, var_budget)? {
            Some(v) => Some(v),
            None => {
                notes.push("centralized nominal program infeasible".to_string());
                None
            }
        },
    };
    let penalties = compute_penalties(s, models)?;
    let mut u_b = Some(0.0);
    for (i, beta) in split.iter().enumerate() {
        let inst = crate::model::build_local_instance(s, i, beta, Some(&penalties))?;
        let sol = crate::ilp::solve(&inst, crate::ilp::Sense::Min)?;
        if sol.is_optimal() {
            u_b = u_b.map(|u| u + sol.value);
        } else {
            notes.push(format!("satellite {} infeasible under tightening", i + 1));
            u_b = None;
        }
    }
    if let (Some(l), Some(u)) = (l_b, u_b) {
        if l > u + 1e-9 * l.abs().max(1.0) {
            return Err(Error::Internal(format!("bound ordering violated: l_b = {l} > u_b = {u}")));
        }
    }
    let relative_error = match (l_b, u_b) {
        (Some(l), Some(u)) if l > 0.0 => Some((u - l) / l),
        (Some(_), Some(_)) => {
            notes.push("l_b is zero; relative error undefined".into());
            None
        }
        _ => None,
    };
    Ok(Bounds {
        tau,
        l_b,
        u_b,
        relative_error,
        penalties_exact: penalties.exact,
        note: notes.join("; "),
    })
}
