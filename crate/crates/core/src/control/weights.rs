use std::collections::BTreeSet;

use super::ControlError;

/// Symmetric doubly stochastic consensus weights over agent ids.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    ids: Vec<u32>,
    a: Vec<Vec<f64>>,
    neighbors: Vec<Vec<usize>>,
}

impl WeightMatrix {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.a[k][j]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.a[k]
    }

    /// Neighbor indices of agent `k`, ascending.
    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `1 − Σ 1/d_i` as a correctly rounded double, using exact fractions when
/// they fit in 128 bits.
fn remainder_weight(denominators: &[u128]) -> f64 {
    let exact = denominators.iter().try_fold((0u128, 1u128), |(num, den), &d| {
        let g = gcd(den, d);
        let lcm = (den / g).checked_mul(d)?;
        let num = num.checked_mul(lcm / den)?.checked_add(lcm / d)?;
        let g = gcd(num, lcm);
        Some((num / g, lcm / g))
    });
    match exact {
        Some((num, den)) if den < (1u128 << 53) => (den - num) as f64 / den as f64,
        _ => 1.0 - denominators.iter().map(|&d| 1.0 / d as f64).sum::<f64>(),
    }
}

/// Metropolis weights: `a_kj = 1/(1 + max(deg_k, deg_j))` on edges, the
/// diagonal takes the remainder of each row.
pub fn metropolis_weights(ids: &[u32], edges: &[(u32, u32)]) -> Result<WeightMatrix, ControlError> {
    let n = ids.len();
    if n == 0 {
        return Err(ControlError::EmptyGraph);
    }
    let index = |id: u32| ids.iter().position(|&x| x == id).ok_or(ControlError::UnknownAgent(id));
    let mut adjacency: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(a, b) in edges {
        let (i, j) = (index(a)?, index(b)?);
        if i == j {
            return Err(ControlError::SelfLoop(a));
        }
        adjacency[i].insert(j);
        adjacency[j].insert(i);
    }

    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &j in &adjacency[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(ControlError::Disconnected);
    }

    let degree: Vec<usize> = adjacency.iter().map(BTreeSet::len).collect();
    let mut a = vec![vec![0.0; n]; n];
    for k in 0..n {
        let mut dens = Vec::with_capacity(degree[k]);
        for &j in &adjacency[k] {
            let d = 1 + degree[k].max(degree[j]);
            a[k][j] = 1.0 / d as f64;
            dens.push(d as u128);
        }
        a[k][k] = remainder_weight(&dens);
    }
    Ok(WeightMatrix {
        ids: ids.to_vec(),
        a,
        neighbors: adjacency.into_iter().map(|s| s.into_iter().collect()).collect(),
    })
}

/// Reference result of `n` synchronous consensus iterations: `Wⁿ·x0` by
/// repeated matrix–vector products.
pub fn consensus_oracle(w: &WeightMatrix, x0: &[f64], n: u32) -> Vec<f64> {
    let mut x = x0.to_vec();
    for _ in 0..n {
        x = w.apply(&x);
    }
    x
}

pub fn spread(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const TABLE2: [(u32, u32); 4] = [(1, 4), (2, 3), (3, 4), (3, 5)];

    fn table2() -> WeightMatrix {
        metropolis_weights(&[1, 2, 3, 4, 5], &TABLE2).unwrap()
    }

    #[test]
    fn two_node_weights() {
        let w = metropolis_weights(&[1, 2], &[(1, 2)]).unwrap();
        assert_eq!(w.row(0), &[0.5, 0.5]);
        assert_eq!(w.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn table2_weights() {
        let w = table2();
        assert_eq!(w.get(0, 3), 1.0 / 3.0);
        assert_eq!(w.get(1, 2), 0.25);
        assert_eq!(w.get(2, 3), 0.25);
        assert_eq!(w.get(2, 4), 0.25);
        let diag: Vec<f64> = (0..5).map(|k| w.get(k, k)).collect();
        assert_eq!(diag, vec![2.0 / 3.0, 0.75, 0.25, 5.0 / 12.0, 0.75]);
        for k in 0..5 {
            assert!((w.row(k).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn complete_graph_k3() {
        let w = metropolis_weights(&[1, 2, 3], &[(1, 2), (2, 3), (1, 3)]).unwrap();
        for k in 0..3 {
            for j in 0..3 {
                assert!((w.get(k, j) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let err = metropolis_weights(&[1, 2, 3], &[(1, 2)]).unwrap_err();
        assert_eq!(err, ControlError::Disconnected);
    }

    #[test]
    fn oracle_identity_and_pairwise_average() {
        let w = table2();
        let x0 = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(consensus_oracle(&w, &x0, 0), x0.to_vec());
        let pair = metropolis_weights(&[1, 2], &[(1, 2)]).unwrap();
        assert_eq!(consensus_oracle(&pair, &[1.0, 3.0], 1), vec![2.0, 2.0]);
    }

    #[test]
    fn oracle_converges_to_mean_on_table2() {
        // Second-largest eigenvalue of this W is ≈0.862, so 50 iterations
        // leave ≈5e-4 of residual spread and 110 iterations get below 1e-6.
        let w = table2();
        let x0 = [1.0, 2.0, 3.0, 4.0, 5.0];
        let x50 = consensus_oracle(&w, &x0, 50);
        assert!(x50.iter().all(|v| (v - 3.0).abs() < 1e-3), "{x50:?}");
        let x110 = consensus_oracle(&w, &x0, 110);
        assert!(x110.iter().all(|v| (v - 3.0).abs() < 1e-6), "{x110:?}");
    }

    #[test]
    fn symmetric_values_average_out() {
        let w = metropolis_weights(&[1, 2, 3, 4, 5], &[(1, 2), (2, 3), (3, 4), (4, 5), (5, 1)]).unwrap();
        let x = consensus_oracle(&w, &[50.1, 50.1, 49.9, 49.9, 50.0], 400);
        assert!(x.iter().all(|v| (v - 50.0).abs() < 1e-9));
    }

    fn connected_graph() -> impl Strategy<Value = (usize, Vec<(u32, u32)>)> {
        (2usize..9).prop_flat_map(|n| {
            // A random spanning tree plus random extra edges.
            let parents: Vec<BoxedStrategy<usize>> = (1..n).map(|i| (0..i).boxed()).collect();
            let extra = prop::collection::vec((0..n, 0..n), 0..n);
            (Just(n), parents, extra).prop_map(|(n, parents, extra)| {
                let mut edges: Vec<(u32, u32)> = parents
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| (i as u32 + 2, p as u32 + 1))
                    .collect();
                edges.extend(
                    extra
                        .into_iter()
                        .filter(|(a, b)| a != b)
                        .map(|(a, b)| (a as u32 + 1, b as u32 + 1)),
                );
                (n, edges)
            })
        })
    }

    proptest! {
        #[test]
        fn metropolis_is_symmetric_doubly_stochastic((n, edges) in connected_graph()) {
            let ids: Vec<u32> = (1..=n as u32).collect();
            let w = metropolis_weights(&ids, &edges).unwrap();
            for k in 0..n {
                let row: f64 = (0..n).map(|j| w.get(k, j)).sum();
                let col: f64 = (0..n).map(|j| w.get(j, k)).sum();
                prop_assert!((row - 1.0).abs() < 1e-12);
                prop_assert!((col - 1.0).abs() < 1e-12);
                prop_assert!(w.get(k, k) > 0.0);
                for j in 0..n {
                    prop_assert_eq!(w.get(k, j), w.get(j, k));
                    prop_assert!(w.get(k, j) >= 0.0);
                    if j != k && w.get(k, j) > 0.0 {
                        prop_assert!(w.neighbors(k).contains(&j));
                    }
                }
            }
        }

        #[test]
        fn iteration_preserves_mean_and_contracts(
            (n, edges) in connected_graph(),
            seed in prop::collection::vec(-100.0f64..100.0, 8),
        ) {
            let ids: Vec<u32> = (1..=n as u32).collect();
            let w = metropolis_weights(&ids, &edges).unwrap();
            let x: Vec<f64> = seed[..n].to_vec();
            let y = w.apply(&x);
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!((mean(&y) - mean(&x)).abs() < 1e-12);
            prop_assert!(spread(&y) <= spread(&x) + 1e-12);
        }
    }
}
