//! Permutations of satellite indices and their action on allocation matrices.
//!
//! Indices are 0-based in memory and 1-based in every serialized artifact.
//! Composition follows `(σ∘τ)(i) = σ(τ(i))`. The action on an allocation
//! matrix replaces column `i` by column `σ(i)`, i.e. `σ⋅A = A·P_σ` with
//! `P_σ = [e_σ(1) … e_σ(n)]`. Because `P_σ P_τ = P_{σ∘τ}`, this is a right
//! action: `τ⋅(σ⋅A) = (σ∘τ)⋅A`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Permutation {
    images: Vec<usize>,
}

impl Permutation {
    /// Builds a permutation from 0-based images, checking bijectivity.
    pub fn new(images: Vec<usize>) -> Result<Self> {
        let n = images.len();
        if n == 0 {
            return Err(Error::InvalidInput("permutation of an empty set".into()));
        }
        let mut seen = vec![false; n];
        for &img in &images {
            if img >= n || seen[img] {
                return Err(Error::InvalidInput(format!(
                    "images {images:?} are not a bijection on 0..{n}"
                )));
            }
            seen[img] = true;
        }
        Ok(Self { images })
    }

    pub fn from_one_based(images: &[usize]) -> Result<Self> {
        if images.contains(&0) {
            return Err(Error::InvalidInput("1-based images contain 0".into()));
        }
        Self::new(images.iter().map(|i| i - 1).collect())
    }

    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("identity of size 0".into()));
        }
        Ok(Self { images: (0..n).collect() })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.images[i]
    }

    pub fn images(&self) -> &[usize] {
        &self.images
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.images.iter().map(|i| i + 1).collect()
    }

    /// `(self ∘ tau)(i) = self(tau(i))`.
    pub fn compose(&self, tau: &Permutation) -> Result<Permutation> {
        if self.len() != tau.len() {
            return Err(Error::Dimension(format!(
                "compose: sizes {} and {}",
                self.len(),
                tau.len()
            )));
        }
        Ok(Permutation {
            images: tau.images.iter().map(|&t| self.images[t]).collect(),
        })
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.len()];
        for (i, &img) in self.images.iter().enumerate() {
            inv[img] = i;
        }
        Permutation { images: inv }
    }

    pub fn is_identity(&self) -> bool {
        self.images.iter().enumerate().all(|(i, &img)| i == img)
    }

    /// Points moved by the permutation, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.images
            .iter()
            .enumerate()
            .filter(|(i, img)| i != *img)
            .map(|(i, _)| i)
            .collect()
    }

    /// Column permutation matrix `P_σ` (row-major), column `h` equal to `e_σ(h)`.
    pub fn to_matrix(&self) -> Vec<Vec<u8>> {
        let n = self.len();
        let mut p = vec![vec![0u8; n]; n];
        for (h, &img) in self.images.iter().enumerate() {
            p[img][h] = 1;
        }
        p
    }
}

impl Serialize for Permutation {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_one_based().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Permutation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<usize>::deserialize(deserializer)?;
        Permutation::from_one_based(&raw).map_err(serde::de::Error::custom)
    }
}

/// An `m × n` zero-one matrix whose row `j` sums to `b_j`; column `i` is the
/// allocation vector of satellite `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AllocationMatrix {
    columns: Vec<Vec<u8>>,
    row_targets: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct AllocationMatrixJson {
    m: usize,
    n: usize,
    b: Vec<u32>,
    columns: Vec<Vec<u8>>,
}

impl AllocationMatrix {
    pub fn new(columns: Vec<Vec<u8>>, row_targets: Vec<u32>) -> Result<Self> {
        let m = row_targets.len();
        if columns.is_empty() {
            return Err(Error::InvalidInput("allocation matrix needs at least one column".into()));
        }
        for (i, col) in columns.iter().enumerate() {
            if col.len() != m {
                return Err(Error::Dimension(format!(
                    "column {} has length {}, expected {m}",
                    i + 1,
                    col.len()
                )));
            }
            if col.iter().any(|&v| v > 1) {
                return Err(Error::InvalidInput(format!("column {} is not zero-one", i + 1)));
            }
        }
        let a = Self { columns, row_targets };
        for j in 0..m {
            let s = a.row_sum(j);
            if s != a.row_targets[j] {
                return Err(Error::InvalidInput(format!(
                    "row {} sums to {s}, expected {}",
                    j + 1,
                    a.row_targets[j]
                )));
            }
        }
        Ok(a)
    }

    pub fn m(&self) -> usize {
        self.row_targets.len()
    }

    pub fn n(&self) -> usize {
        self.columns.len()
    }

    pub fn row_targets(&self) -> &[u32] {
        &self.row_targets
    }

    pub fn column(&self, i: usize) -> &[u8] {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[Vec<u8>] {
        &self.columns
    }

    pub fn entry(&self, j: usize, i: usize) -> u8 {
        self.columns[i][j]
    }

    pub fn row_sum(&self, j: usize) -> u32 {
        self.columns.iter().map(|c| c[j] as u32).sum()
    }

    pub fn rows_match_targets(&self) -> bool {
        (0..self.m()).all(|j| self.row_sum(j) == self.row_targets[j])
    }

    /// `σ⋅A`: column `i` of the result is column `σ(i)` of `self`.
    pub fn permute_columns(&self, sigma: &Permutation) -> Result<Self> {
        if sigma.len() != self.n() {
            return Err(Error::Dimension(format!(
                "permutation of size {} applied to {} columns",
                sigma.len(),
                self.n()
            )));
        }
        Ok(Self {
            columns: (0..self.n()).map(|i| self.columns[sigma.apply(i)].clone()).collect(),
            row_targets: self.row_targets.clone(),
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(AllocationMatrixJson {
            m: self.m(),
            n: self.n(),
            b: self.row_targets.clone(),
            columns: self.columns.clone(),
        })
        .expect("allocation matrix serializes")
    }
}

impl Serialize for AllocationMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        AllocationMatrixJson {
            m: self.m(),
            n: self.n(),
            b: self.row_targets.clone(),
            columns: self.columns.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for AllocationMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = AllocationMatrixJson::deserialize(deserializer)?;
        if raw.n != raw.columns.len() || raw.m != raw.b.len() {
            return Err(serde::de::Error::custom("m/n do not match b/columns"));
        }
        AllocationMatrix::new(raw.columns, raw.b).map_err(serde::de::Error::custom)
    }
}

pub fn apply_to_columns(a: &AllocationMatrix, sigma: &Permutation) -> Result<AllocationMatrix> {
    a.permute_columns(sigma)
}

/// True iff `B = σ⋅A` for some `σ`, i.e. both have the same multiset of columns.
pub fn orbit_equal(a: &AllocationMatrix, b: &AllocationMatrix) -> Result<bool> {
    if a.m() != b.m() || a.n() != b.n() {
        return Err(Error::Dimension(format!(
            "orbit_equal: {}x{} vs {}x{}",
            a.m(),
            a.n(),
            b.m(),
            b.n()
        )));
    }
    let mut ca: Vec<&Vec<u8>> = a.columns.iter().collect();
    let mut cb: Vec<&Vec<u8>> = b.columns.iter().collect();
    ca.sort();
    cb.sort();
    Ok(ca == cb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn perm(one_based: &[usize]) -> Permutation {
        Permutation::from_one_based(one_based).unwrap()
    }

    /// Random m×n matrix with one 1 per row.
    fn random_matrix(m: usize, n: usize, picks: &[usize]) -> AllocationMatrix {
        let mut cols = vec![vec![0u8; m]; n];
        for j in 0..m {
            cols[picks[j] % n][j] = 1;
        }
        AllocationMatrix::new(cols, vec![1; m]).unwrap()
    }

    #[test]
    fn identity_images() {
        assert_eq!(Permutation::identity(3).unwrap().to_one_based(), vec![1, 2, 3]);
        assert_eq!(Permutation::identity(1).unwrap().to_one_based(), vec![1]);
        assert!(Permutation::identity(0).is_err());
    }

    #[test]
    fn compose_by_hand() {
        let sigma = perm(&[2, 1, 3]);
        let tau = perm(&[1, 3, 2]);
        assert_eq!(sigma.compose(&tau).unwrap().to_one_based(), vec![2, 3, 1]);
        let id = Permutation::identity(3).unwrap();
        assert_eq!(sigma.compose(&id).unwrap(), sigma);
        assert!(sigma.compose(&sigma.inverse()).unwrap().is_identity());
        assert!(sigma.compose(&Permutation::identity(4).unwrap()).is_err());
    }

    #[test]
    fn inverse_by_hand() {
        assert_eq!(perm(&[2, 3, 1]).inverse().to_one_based(), vec![3, 1, 2]);
        assert!(Permutation::identity(5).unwrap().inverse().is_identity());
        assert_eq!(perm(&[2, 1]).inverse(), perm(&[2, 1]));
    }

    #[test]
    fn rejects_non_bijection() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3]).is_err());
        assert!(Permutation::from_one_based(&[0, 1]).is_err());
    }

    #[test]
    fn swap_two_columns() {
        let a = AllocationMatrix::new(vec![vec![1, 0], vec![0, 1]], vec![1, 1]).unwrap();
        let s = a.permute_columns(&perm(&[2, 1])).unwrap();
        assert_eq!(s.column(0), a.column(1));
        assert_eq!(s.column(1), a.column(0));
        assert_eq!(a.permute_columns(&Permutation::identity(2).unwrap()).unwrap(), a);
        assert!(a.permute_columns(&Permutation::identity(3).unwrap()).is_err());
    }

    #[test]
    fn orbit_equal_examples() {
        let a = AllocationMatrix::new(vec![vec![1, 0, 1], vec![0, 1, 0], vec![0, 0, 0]], vec![1, 1, 1])
            .unwrap();
        let swapped = a.permute_columns(&perm(&[2, 1, 3])).unwrap();
        assert!(orbit_equal(&a, &swapped).unwrap());

        // flipping one entry can only be represented with relaxed row targets
        let flipped = AllocationMatrix::new(
            vec![vec![1, 0, 1], vec![0, 1, 0], vec![1, 0, 0]],
            vec![2, 1, 1],
        )
        .unwrap();
        let a_relaxed = AllocationMatrix::new(a.columns().to_vec(), vec![1, 1, 1]).unwrap();
        assert!(!orbit_equal(&a_relaxed, &flipped).unwrap());

        let other = AllocationMatrix::new(vec![vec![1], vec![0]], vec![1]).unwrap();
        assert!(orbit_equal(&a, &other).is_err());
    }

    #[test]
    fn rejects_bad_row_sums() {
        assert!(AllocationMatrix::new(vec![vec![1, 1], vec![1, 0]], vec![1, 1]).is_err());
        assert!(AllocationMatrix::new(vec![vec![2, 0]], vec![2, 0]).is_err());
    }

    #[test]
    fn json_shape() {
        let a = AllocationMatrix::new(vec![vec![1, 0], vec![0, 1]], vec![1, 1]).unwrap();
        let v = serde_json::to_value(&a).unwrap();
        assert_eq!(v, serde_json::json!({"m": 2, "n": 2, "b": [1, 1], "columns": [[1, 0], [0, 1]]}));
        let back: AllocationMatrix = serde_json::from_value(v).unwrap();
        assert_eq!(back, a);
        let p: Permutation = serde_json::from_str("[2,3,1]").unwrap();
        assert_eq!(serde_json::to_string(&p).unwrap(), "[2,3,1]");
    }

    fn arb_perm(n: usize) -> impl Strategy<Value = Permutation> {
        Just((0..n).collect::<Vec<_>>())
            .prop_shuffle()
            .prop_map(|v| Permutation::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn matrix_representation((sigma, tau) in (1usize..=8).prop_flat_map(|n| (arb_perm(n), arb_perm(n)))) {
            let n = sigma.len();
            let p = sigma.to_matrix();
            let q = tau.to_matrix();
            let mul = |a: &Vec<Vec<u8>>, b: &Vec<Vec<u8>>| -> Vec<Vec<u8>> {
                (0..n).map(|r| (0..n).map(|c| (0..n).map(|k| a[r][k] * b[k][c]).sum()).collect()).collect()
            };
            let pt: Vec<Vec<u8>> = (0..n).map(|r| (0..n).map(|c| p[c][r]).collect()).collect();
            let id = Permutation::identity(n).unwrap().to_matrix();
            prop_assert_eq!(mul(&pt, &p), id.clone());
            prop_assert_eq!(mul(&p, &pt), id);
            prop_assert_eq!(mul(&p, &q), sigma.compose(&tau).unwrap().to_matrix());
        }

        #[test]
        fn action_order(sigma in arb_perm(4), tau in arb_perm(4), picks in proptest::collection::vec(0usize..4, 4)) {
            let a = random_matrix(4, 4, &picks);
            // τ⋅(σ⋅A) = (σ∘τ)⋅A: the column action is a right action.
            let lhs = a.permute_columns(&sigma).unwrap().permute_columns(&tau).unwrap();
            let rhs = a.permute_columns(&sigma.compose(&tau).unwrap()).unwrap();
            prop_assert_eq!(&lhs, &rhs);
            // equivalently a left action of σ ↦ σ⁻¹
            let left = a.permute_columns(&tau.inverse()).unwrap().permute_columns(&sigma.inverse()).unwrap();
            let left_rhs = a.permute_columns(&sigma.compose(&tau).unwrap().inverse()).unwrap();
            prop_assert_eq!(left, left_rhs);
            prop_assert!(lhs.rows_match_targets());
        }

        #[test]
        fn orbit_membership(n in 1usize..7, m in 1usize..7, seed in proptest::collection::vec(0usize..100, 7), sigma_seed in any::<u64>()) {
            let a = random_matrix(m, n, &seed);
            let mut images: Vec<usize> = (0..n).collect();
            let mut s = sigma_seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                images.swap(i, (s >> 33) as usize % (i + 1));
            }
            let sigma = Permutation::new(images).unwrap();
            let b = a.permute_columns(&sigma).unwrap();
            prop_assert!(orbit_equal(&a, &b).unwrap());
            prop_assert!(orbit_equal(&b, &a).unwrap());
            prop_assert!(orbit_equal(&a, &a).unwrap());
            let c = b.permute_columns(&sigma).unwrap();
            prop_assert!(orbit_equal(&a, &c).unwrap());
            prop_assert_eq!(b.row_targets(), a.row_targets());
            prop_assert!(b.rows_match_targets());
        }
    }
}
