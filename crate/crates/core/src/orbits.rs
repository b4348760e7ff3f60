//! Circular Walker constellations, repeat-ground-track sun-synchronous radius,
//! J2 nodal drift and inter-satellite-link graphs.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const J2: f64 = 1.082e-3;
/// Earth radius, km.
pub const R_E: f64 = 6378.0;
/// Earth gravitational parameter, km³/s².
pub const MU_E: f64 = 398600.4;
/// Earth rotation rate, rad/s.
pub const OMEGA_E: f64 = TAU / 86164.0;
pub const SIDEREAL_YEAR_DAYS: f64 = 365.25636;
/// Mean motion of the Sun about the Earth, rad/s.
pub const OMEGA_S: f64 = TAU / (SIDEREAL_YEAR_DAYS * 86400.0);

const ROOT_TOL_KM: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitElements {
    /// km
    pub radius: f64,
    /// rad
    pub inc: f64,
    pub raan0: f64,
    pub arglat0: f64,
    /// s
    pub epoch: f64,
}

fn k_const() -> f64 {
    1.5 * J2 * R_E * R_E * MU_E.sqrt()
}

/// Left side of the repeat-track sun-synchronous condition.
pub fn repeat_sso_residual(radius: f64, q_orbits: u32) -> f64 {
    let k = k_const();
    4.0 * OMEGA_S * OMEGA_S / k * radius.powi(7) - q_orbits as f64 * (OMEGA_E - OMEGA_S) * radius.powf(3.5)
        + MU_E.sqrt() * radius * radius
        - k
}

/// Secular RAAN rate of a circular orbit, rad/s.
pub fn nodal_rate(radius: f64, inc: f64) -> f64 {
    -k_const() * radius.powf(-3.5) * inc.cos()
}

/// Radius (km) and inclination (rad) of the circular sun-synchronous orbit
/// with `q_orbits` revolutions per nodal day.
pub fn solve_repeat_sso_radius(q_orbits: u32) -> Result<(f64, f64)> {
    if q_orbits == 0 {
        return Err(Error::InvalidInput("q_orbits must be at least 1".into()));
    }
    let (mut lo, mut hi) = (R_E, 3.0 * R_E);
    let (f_lo, f_hi) = (repeat_sso_residual(lo, q_orbits), repeat_sso_residual(hi, q_orbits));
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoRoot(format!(
            "no sign change on [{lo}, {hi}] km for q = {q_orbits}: f = {f_lo:e}, {f_hi:e}"
        )));
    }
    // count sign changes on a grid to detect multiple roots
    let samples = 2000;
    let mut changes = 0;
    let mut prev = f_lo;
    for s in 1..=samples {
        let r = lo + (hi - lo) * s as f64 / samples as f64;
        let f = repeat_sso_residual(r, q_orbits);
        if f.signum() != prev.signum() {
            changes += 1;
        }
        prev = f;
    }
    if changes != 1 {
        return Err(Error::NoRoot(format!(
            "{changes} sign changes on [{lo}, {hi}] km for q = {q_orbits}; root is ambiguous"
        )));
    }
    let neg_low = f_lo < 0.0;
    while hi - lo > ROOT_TOL_KM {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (repeat_sso_residual(mid, q_orbits) < 0.0) == neg_low {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let radius = 0.5 * (lo + hi);
    let cos_i = -OMEGA_S * radius.powf(3.5) / k_const();
    if !(-1.0..=1.0).contains(&cos_i) {
        return Err(Error::NoRoot(format!("radius {radius} km admits no sun-synchronous inclination")));
    }
    Ok((radius, cos_i.acos()))
}

/// Where the constellation radius and inclination come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrbitShape {
    RepeatSso { q_orbits: u32 },
    Explicit { #[serde(rename = "R_km")] radius_km: f64, inc_deg: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkerConfig {
    #[serde(rename = "n")]
    pub n_sats: usize,
    #[serde(rename = "p")]
    pub planes: usize,
    #[serde(rename = "f")]
    pub phasing: usize,
    #[serde(flatten)]
    pub shape: OrbitShape,
    /// Group satellites into consecutive blocks of `n/p` per plane instead of
    /// advancing the plane with every index.
    #[serde(default)]
    pub walker_blocked: bool,
}

impl WalkerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.planes == 0 || self.planes > self.n_sats {
            return Err(Error::InvalidInput(format!("need 1 <= p <= n, got p = {} n = {}", self.planes, self.n_sats)));
        }
        if self.phasing >= self.n_sats {
            return Err(Error::InvalidInput(format!("need 0 <= f < n, got f = {}", self.phasing)));
        }
        if self.walker_blocked && self.n_sats % self.planes != 0 {
            return Err(Error::InvalidInput("blocked layout needs p to divide n".into()));
        }
        Ok(())
    }

    pub fn radius_inc(&self) -> Result<(f64, f64)> {
        match self.shape {
            OrbitShape::RepeatSso { q_orbits } => solve_repeat_sso_radius(q_orbits),
            OrbitShape::Explicit { radius_km, inc_deg } => {
                if !(radius_km > R_E) || !(0.0..=180.0).contains(&inc_deg) {
                    return Err(Error::InvalidInput(format!("R = {radius_km} km, inc = {inc_deg} deg")));
                }
                Ok((radius_km, inc_deg.to_radians()))
            }
        }
    }
}

fn wrap(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Elements of every satellite, index order `k = 1..n`.
pub fn walker_elements(cfg: &WalkerConfig, epoch: f64) -> Result<Vec<OrbitElements>> {
    cfg.validate()?;
    let (radius, inc) = cfg.radius_inc()?;
    let (n, p, f) = (cfg.n_sats as f64, cfg.planes as f64, cfg.phasing as f64);
    let per_plane = cfg.n_sats / cfg.planes;
    Ok((0..cfg.n_sats)
        .map(|k| {
            let (raan0, arglat0) = if cfg.walker_blocked {
                let (plane, slot) = (k / per_plane, k % per_plane);
                (
                    TAU * plane as f64 / p,
                    TAU * slot as f64 / per_plane as f64 + TAU * f * plane as f64 / n,
                )
            } else {
                (TAU * k as f64 / p, TAU * f * k as f64 / n)
            };
            OrbitElements {
                radius,
                inc,
                raan0: wrap(raan0),
                arglat0: wrap(arglat0),
                epoch,
            }
        })
        .collect())
}

/// Inertial position (km) at time `t`.
pub fn propagate(el: &OrbitElements, t: f64) -> Result<[f64; 3]> {
    if t < el.epoch {
        return Err(Error::InvalidInput(format!("t = {t} precedes epoch {}", el.epoch)));
    }
    let dt = t - el.epoch;
    let n_orb = (MU_E / el.radius.powi(3)).sqrt();
    let raan = el.raan0 + nodal_rate(el.radius, el.inc) * dt;
    let theta = el.arglat0 + n_orb * dt;
    let (so, co) = raan.sin_cos();
    let (si, ci) = el.inc.sin_cos();
    let (st, ct) = theta.sin_cos();
    let r = el.radius;
    Ok([
        r * (co * ct - so * ci * st),
        r * (so * ct + co * ci * st),
        r * si * st,
    ])
}

/// Undirected edges `(i, j)`, `i < j`, 0-based, with distance at most `d_max`.
pub fn isl_graph(positions: &[[f64; 3]], d_max: f64) -> Result<Vec<(usize, usize)>> {
    if !(d_max > 0.0) {
        return Err(Error::InvalidInput(format!("d_max = {d_max} must be positive")));
    }
    let mut edges = Vec::new();
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            let d2: f64 = (0..3).map(|c| (positions[i][c] - positions[j][c]).powi(2)).sum();
            if d2.sqrt() <= d_max {
                edges.push((i, j));
            }
        }
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn norm(v: [f64; 3]) -> f64 {
        (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
    }

    #[test]
    fn repeat_sso_q14() {
        let (r, inc) = solve_repeat_sso_radius(14).unwrap();
        assert!((r - 7266.0).abs() <= 1.0, "R = {r}");
        assert!((inc.to_degrees() - 98.99).abs() <= 0.02, "inc = {}", inc.to_degrees());
        let scale = 1.5 * J2 * R_E * R_E * MU_E.sqrt();
        assert!((repeat_sso_residual(r, 14) / scale).abs() < 1e-6);
        // the nodal rate matches the Sun's apparent motion
        assert!((nodal_rate(r, inc) - OMEGA_S).abs() < 1e-12 * OMEGA_S.max(1.0));
    }

    #[test]
    fn repeat_sso_rejects_bad_input() {
        assert!(solve_repeat_sso_radius(0).is_err());
        assert!(matches!(solve_repeat_sso_radius(40), Err(Error::NoRoot(_))));
    }

    #[test]
    fn one_year_of_nodal_drift() {
        let (r, inc) = solve_repeat_sso_radius(14).unwrap();
        let el = OrbitElements { radius: r, inc, raan0: 0.0, arglat0: 0.0, epoch: 0.0 };
        let year = SIDEREAL_YEAR_DAYS * 86400.0;
        let drift = nodal_rate(el.radius, el.inc) * year;
        assert!((drift - TAU).abs() < 1e-3);
    }

    fn cfg(n: usize, p: usize, f: usize, blocked: bool) -> WalkerConfig {
        WalkerConfig {
            n_sats: n,
            planes: p,
            phasing: f,
            shape: OrbitShape::Explicit { radius_km: 7000.0, inc_deg: 60.0 },
            walker_blocked: blocked,
        }
    }

    #[test]
    fn walker_verbatim_examples() {
        let els = walker_elements(&cfg(4, 2, 1, false), 0.0).unwrap();
        assert_eq!((els[0].raan0, els[0].arglat0), (0.0, 0.0));
        assert!(els[2].raan0.abs() < 1e-15);
        assert!((els[2].arglat0 - PI).abs() < 1e-15);
        for e in walker_elements(&cfg(7, 3, 5, false), 0.0).unwrap() {
            assert!((0.0..TAU).contains(&e.raan0) && (0.0..TAU).contains(&e.arglat0));
        }
    }

    #[test]
    fn walker_blocked_spacing() {
        let els = walker_elements(&cfg(12, 3, 0, true), 0.0).unwrap();
        for plane in 0..3 {
            let members = &els[plane * 4..plane * 4 + 4];
            assert!(members.iter().all(|e| e.raan0 == members[0].raan0));
            for w in members.windows(2) {
                assert!((w[1].arglat0 - w[0].arglat0 - TAU / 4.0).abs() < 1e-12);
            }
        }
        assert!(walker_elements(&cfg(10, 3, 0, true), 0.0).is_err());
        assert!(walker_elements(&cfg(4, 5, 0, false), 0.0).is_err());
        assert!(walker_elements(&cfg(4, 2, 4, false), 0.0).is_err());
    }

    #[test]
    fn walker_json() {
        let c: WalkerConfig = serde_json::from_str(r#"{"n": 6, "p": 3, "f": 1, "q_orbits": 14}"#).unwrap();
        assert_eq!(c.shape, OrbitShape::RepeatSso { q_orbits: 14 });
        let c: WalkerConfig = serde_json::from_str(r#"{"n": 6, "p": 3, "f": 1, "R_km": 7000.0, "inc_deg": 97.5}"#).unwrap();
        assert!(matches!(c.shape, OrbitShape::Explicit { .. }));
        assert!(!c.walker_blocked);
    }

    #[test]
    fn propagate_geometry() {
        let el = OrbitElements { radius: 7000.0, inc: 0.0, raan0: 0.0, arglat0: 0.0, epoch: 10.0 };
        assert_eq!(propagate(&el, 10.0).unwrap(), [7000.0, 0.0, 0.0]);
        assert!(propagate(&el, 0.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let el = OrbitElements {
                radius: rng.random_range(6500.0..40000.0),
                inc: rng.random_range(0.0..PI),
                raan0: rng.random_range(0.0..TAU),
                arglat0: rng.random_range(0.0..TAU),
                epoch: 0.0,
            };
            let t = rng.random_range(0.0..1e7);
            assert!((norm(propagate(&el, t).unwrap()) - el.radius).abs() <= 1e-9 * el.radius);
        }
    }

    #[test]
    fn isl_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<[f64; 3]> = (0..12)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        assert!(isl_graph(&pts, 1e-9).unwrap().is_empty());
        assert_eq!(isl_graph(&pts, 100.0).unwrap().len(), 66);
        assert!(isl_graph(&pts, 0.0).is_err());

        // same edge set after relabeling
        let d = 0.9;
        let edges = isl_graph(&pts, d).unwrap();
        let perm: Vec<usize> = (0..12).rev().collect();
        let shuffled: Vec<[f64; 3]> = perm.iter().map(|&k| pts[k]).collect();
        let mut mapped: Vec<(usize, usize)> = isl_graph(&shuffled, d)
            .unwrap()
            .into_iter()
            .map(|(a, b)| {
                let (a, b) = (perm[a], perm[b]);
                (a.min(b), a.max(b))
            })
            .collect();
        mapped.sort();
        assert_eq!(mapped, edges);
        assert!(edges.iter().all(|&(a, b)| a < b));
    }
}
