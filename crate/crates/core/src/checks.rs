//! Randomized property suites for the appendix lemmas: neighbor-set
//! equivalence, inverse-zero-pattern preservation, and nonzero-diagonal
//! matching. Shared between the `verify` subcommand and the acceptance tests.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{
    has_blocking_zero_submatrix, intimate_neighbors, inverse_zero_pattern_closure,
    nonzero_diagonal_permutation, MarkovNet, ZeroPattern,
};

/// All undirected graphs on up to `max_n` vertices: j ∈ Ψ_i iff
/// {i} ∪ N_i ⊆ {j} ∪ N_j.
pub fn neighbor_set_lemma_holds(max_n: usize) -> bool {
    for n in 1..=max_n {
        let pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        for mask in 0..(1u32 << pairs.len()) {
            let mut net = MarkovNet::empty(n);
            for (b, &(i, j)) in pairs.iter().enumerate() {
                if mask & (1 << b) != 0 {
                    net.add_edge(i, j);
                }
            }
            for i in 0..n {
                let psi = intimate_neighbors(&net, i);
                let ci: BTreeSet<usize> = net.neighbors(i).into_iter().chain([i]).collect();
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let cj: BTreeSet<usize> = net.neighbors(j).into_iter().chain([j]).collect();
                    let lhs = psi.contains(&j);
                    let rhs = net.has_edge(i, j) && ci.is_subset(&cj);
                    if lhs != rhs {
                        return false;
                    }
                }
            }
        }
    }
    true
}

fn random_net(rng: &mut impl Rng, n: usize) -> MarkovNet {
    let mut net = MarkovNet::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.4) {
                net.add_edge(i, j);
            }
        }
    }
    net
}

/// Random matrices with support in the Ψ-closure pattern: their inverses must
/// keep that support (within tolerance).
pub fn inverse_pattern_suite(seed: u64, trials: usize) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1234);
    let mut done = 0usize;
    while done < trials {
        let n = rng.gen_range(2..=5);
        let net = random_net(&mut rng, n);
        let pattern = inverse_zero_pattern_closure(&net);
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if pattern.get(i, j) {
                    a[(i, j)] = rng.gen_range(-1.0..1.0);
                }
                if i == j {
                    a[(i, j)] += 3.0; // diagonal dominance => invertible
                }
            }
        }
        let inv = match a.clone().try_inverse() {
            Some(v) => v,
            None => continue,
        };
        for i in 0..n {
            for j in 0..n {
                if !pattern.get(i, j) && inv[(i, j)].abs() > 1e-9 {
                    return false;
                }
            }
        }
        done += 1;
    }
    true
}

/// Invertible random matrices admit a nonzero-diagonal column permutation;
/// planted blocking zero submatrices are detected.
pub fn matching_suite(seed: u64, trials: usize) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5678);
    for _ in 0..trials {
        let n = rng.gen_range(2..=6);
        let mut a = vec![0.0; n * n];
        loop {
            for v in a.iter_mut() {
                *v = if rng.gen_bool(0.5) { rng.gen_range(0.2..2.0) } else { 0.0 };
            }
            let m = DMatrix::<f64>::from_row_slice(n, n, &a);
            if m.lu().determinant().abs() > 1e-6 {
                break;
            }
        }
        if nonzero_diagonal_permutation(&a, n, 1e-12).is_err() {
            return false;
        }

        // Plant an (r+1) x (n-r) zero block: rows {0..r}, cols {r..n}.
        let r = rng.gen_range(0..n - 1);
        let mut p = ZeroPattern::all_true(n);
        for i in 0..=r {
            for j in r..n {
                p.set(i, j, false);
            }
        }
        if !has_blocking_zero_submatrix(&p) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_hold_on_small_budgets() {
        assert!(neighbor_set_lemma_holds(4));
        assert!(inverse_pattern_suite(7, 50));
        assert!(matching_suite(7, 50));
    }
}
