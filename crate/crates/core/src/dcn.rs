//! Time-varying communication graphs over satellites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orbits::{isl_graph, propagate, walker_elements, WalkerConfig};

/// Sequence of undirected edge sets. Edges are stored 0-based with `i < j`;
/// the JSON form is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct DynGraph {
    pub n: usize,
    pub times: Vec<f64>,
    pub period: Option<usize>,
    pub edge_sets: Vec<Vec<(usize, usize)>>,
}

#[derive(Serialize, Deserialize)]
struct DynGraphJson {
    n: usize,
    times: Vec<f64>,
    #[serde(default)]
    period: Option<usize>,
    edges: Vec<Vec<[usize; 2]>>,
}

impl DynGraph {
    pub fn new(n: usize, times: Vec<f64>, period: Option<usize>, edge_sets: Vec<Vec<(usize, usize)>>) -> Result<Self> {
        if times.len() != edge_sets.len() || times.is_empty() {
            return Err(Error::Dimension(format!(
                "{} times for {} edge sets",
                times.len(),
                edge_sets.len()
            )));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("graph times must be strictly increasing".into()));
        }
        let mut norm_sets = Vec::with_capacity(edge_sets.len());
        for (s, set) in edge_sets.into_iter().enumerate() {
            let mut out = Vec::with_capacity(set.len());
            for (a, b) in set {
                if a >= n || b >= n {
                    return Err(Error::InvalidInput(format!("edge ({}, {}) outside 1..{n}", a + 1, b + 1)));
                }
                if a == b {
                    return Err(Error::InvalidInput(format!("self-loop at vertex {} (step {})", a + 1, s + 1)));
                }
                out.push((a.min(b), a.max(b)));
            }
            out.sort_unstable();
            out.dedup();
            norm_sets.push(out);
        }
        if let Some(p) = period {
            if p == 0 {
                return Err(Error::InvalidInput("period must be positive".into()));
            }
            for s in p..norm_sets.len() {
                if norm_sets[s] != norm_sets[s - p] {
                    return Err(Error::InvalidInput(format!("edge set {} breaks period {p}", s + 1)));
                }
            }
        }
        Ok(Self {
            n,
            times,
            period,
            edge_sets: norm_sets,
        })
    }

    pub fn steps(&self) -> usize {
        self.edge_sets.len()
    }

    /// Stored step driving iteration `s`.
    pub fn time_index(&self, iteration: usize) -> usize {
        iteration % self.steps()
    }

    pub fn edges_at(&self, iteration: usize) -> &[(usize, usize)] {
        &self.edge_sets[self.time_index(iteration)]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: DynGraphJson = serde_json::from_str(text)?;
        let mut sets = Vec::with_capacity(raw.edges.len());
        for set in raw.edges {
            let mut out = Vec::with_capacity(set.len());
            for [a, b] in set {
                if a == 0 || b == 0 {
                    return Err(Error::InvalidInput("graph vertices are 1-based".into()));
                }
                out.push((a - 1, b - 1));
            }
            sets.push(out);
        }
        Self::new(raw.n, raw.times, raw.period, sets)
    }

    pub fn to_json(&self) -> String {
        let raw = DynGraphJson {
            n: self.n,
            times: self.times.clone(),
            period: self.period,
            edges: self
                .edge_sets
                .iter()
                .map(|set| set.iter().map(|&(a, b)| [a + 1, b + 1]).collect())
                .collect(),
        };
        serde_json::to_string(&raw).expect("graph serializes")
    }
}

fn find(parent: &mut [usize], mut v: usize) -> usize {
    while parent[v] != v {
        parent[v] = parent[parent[v]];
        v = parent[v];
    }
    v
}

/// Connected components (0-based), each sorted, blocks ordered by their
/// smallest vertex.
pub fn components(edges: &[(usize, usize)], n: usize) -> Result<Vec<Vec<usize>>> {
    let mut parent: Vec<usize> = (0..n).collect();
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::InvalidInput(format!("edge ({}, {}) outside 1..{n}", a + 1, b + 1)));
        }
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut block_of_root = vec![usize::MAX; n];
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for v in 0..n {
        let r = find(&mut parent, v);
        if block_of_root[r] == usize::MAX {
            block_of_root[r] = blocks.len();
            blocks.push(Vec::new());
        }
        blocks[block_of_root[r]].push(v);
    }
    Ok(blocks)
}

pub fn random_graph_sequence(n: usize, steps: usize, density: f64, period: Option<usize>, seed: u64) -> Result<DynGraph> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidInput(format!("density {density} outside [0, 1]")));
    }
    if steps == 0 {
        return Err(Error::InvalidInput("need at least one step".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fresh = period.map_or(steps, |p| p.min(steps));
    let mut sets: Vec<Vec<(usize, usize)>> = Vec::with_capacity(steps);
    for _ in 0..fresh {
        let mut set = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                if rng.random_bool(density) {
                    set.push((a, b));
                }
            }
        }
        sets.push(set);
    }
    for s in fresh..steps {
        sets.push(sets[s - fresh].clone());
    }
    DynGraph::new(n, (0..steps).map(|s| s as f64).collect(), period, sets)
}

pub fn from_orbits(cfg: &WalkerConfig, d_max: f64, sample_times: &[f64]) -> Result<DynGraph> {
    let epoch = sample_times.first().copied().unwrap_or(0.0);
    let elements = walker_elements(cfg, epoch)?;
    let mut sets = Vec::with_capacity(sample_times.len());
    for &t in sample_times {
        let positions = elements.iter().map(|el| propagate(el, t)).collect::<Result<Vec<_>>>()?;
        sets.push(isl_graph(&positions, d_max)?);
    }
    DynGraph::new(cfg.n_sats, sample_times.to_vec(), None, sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbits::OrbitShape;

    fn closure_oracle(edges: &[(usize, usize)], n: usize) -> Vec<Vec<bool>> {
        let mut reach = vec![vec![false; n]; n];
        for v in 0..n {
            reach[v][v] = true;
        }
        for &(a, b) in edges {
            reach[a][b] = true;
            reach[b][a] = true;
        }
        // repeated boolean squaring
        for _ in 0..n.max(1).ilog2() + 1 {
            let prev = reach.clone();
            for a in 0..n {
                for b in 0..n {
                    reach[a][b] = (0..n).any(|c| prev[a][c] && prev[c][b]);
                }
            }
        }
        reach
    }

    #[test]
    fn component_examples() {
        assert_eq!(components(&[], 4).unwrap(), vec![vec![0], vec![1], vec![2], vec![3]]);
        assert_eq!(components(&[(0, 1), (1, 2)], 3).unwrap(), vec![vec![0, 1, 2]]);
        assert_eq!(components(&[(3, 1)], 4).unwrap(), vec![vec![0], vec![1, 3], vec![2]]);
        assert!(components(&[(0, 4)], 4).is_err());
    }

    #[test]
    fn components_match_closure() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..200 {
            let n = 1 + case % 12;
            let density = rng.random_range(0.0..0.5);
            let g = random_graph_sequence(n, 1, density, None, case as u64).unwrap();
            let blocks = components(&g.edge_sets[0], n).unwrap();
            let reach = closure_oracle(&g.edge_sets[0], n);
            let mut block_of = vec![usize::MAX; n];
            for (k, blk) in blocks.iter().enumerate() {
                for &v in blk {
                    assert_eq!(block_of[v], usize::MAX);
                    block_of[v] = k;
                }
            }
            for a in 0..n {
                for b in 0..n {
                    assert_eq!(reach[a][b], block_of[a] == block_of[b]);
                }
            }
            assert!(blocks.windows(2).all(|w| w[0][0] < w[1][0]));
        }
    }

    #[test]
    fn random_sequences() {
        let g = random_graph_sequence(5, 3, 0.0, None, 1).unwrap();
        assert!(g.edge_sets.iter().all(|s| s.is_empty()));
        let g = random_graph_sequence(5, 3, 1.0, None, 1).unwrap();
        assert!(g.edge_sets.iter().all(|s| s.len() == 10));
        let g = random_graph_sequence(6, 9, 0.4, Some(3), 2).unwrap();
        for s in 3..9 {
            assert_eq!(g.edge_sets[s], g.edge_sets[s - 3]);
        }
        assert_eq!(g, random_graph_sequence(6, 9, 0.4, Some(3), 2).unwrap());
        assert!(random_graph_sequence(3, 2, 1.5, None, 0).is_err());
        // periodic sequences have periodic components
        for s in 3..9 {
            assert_eq!(components(g.edges_at(s), 6).unwrap(), components(g.edges_at(s - 3), 6).unwrap());
        }
        assert_eq!(g.time_index(10), 1);
    }

    #[test]
    fn graph_validation_and_json() {
        assert!(DynGraph::new(3, vec![0.0], None, vec![vec![(1, 1)]]).is_err());
        assert!(DynGraph::new(3, vec![1.0, 1.0], None, vec![vec![], vec![]]).is_err());
        assert!(DynGraph::new(3, vec![0.0, 1.0], Some(1), vec![vec![(0, 1)], vec![]]).is_err());
        let g = random_graph_sequence(4, 4, 0.5, Some(2), 9).unwrap();
        let text = g.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["n", "times", "period", "edges"] {
            assert!(v.get(key).is_some());
        }
        assert_eq!(DynGraph::from_json(&text).unwrap(), g);
        assert!(DynGraph::from_json(r#"{"n":2,"times":[0],"edges":[[[0,1]]]}"#).is_err());
    }

    fn walker(n: usize) -> WalkerConfig {
        WalkerConfig {
            n_sats: n,
            planes: 1.max(n / 2),
            phasing: 1 % n,
            shape: OrbitShape::Explicit { radius_km: 7000.0, inc_deg: 97.0 },
            walker_blocked: false,
        }
    }

    #[test]
    fn orbit_graphs() {
        let times: Vec<f64> = (0..10).map(|k| 600.0 * k as f64).collect();
        let g = from_orbits(&walker(1), 5000.0, &times).unwrap();
        assert!(g.edge_sets.iter().all(|s| s.is_empty()));
        let g = from_orbits(&walker(5), 1e6, &times).unwrap();
        assert!(g.edge_sets.iter().all(|s| s.len() == 10));

        let cfg = walker(4);
        let d_max = 6000.0;
        let g = from_orbits(&cfg, d_max, &times).unwrap();
        let els = walker_elements(&cfg, 0.0).unwrap();
        for (s, &t) in times.iter().enumerate() {
            let pos: Vec<_> = els.iter().map(|e| propagate(e, t).unwrap()).collect();
            assert_eq!(g.edge_sets[s], isl_graph(&pos, d_max).unwrap());
        }
    }
}
