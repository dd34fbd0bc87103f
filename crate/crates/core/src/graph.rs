//! Exact graph algorithms over latent-variable index sets: DAGs, Markov
//! networks, moralization, intimate neighbors, permutation matching, and
//! matrix zero-pattern lemmas.
//!
//! Vertices are 0-based indices throughout; labels live outside this module.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph contains a directed cycle")]
    Cyclic,
    #[error("vertex {0} out of range for graph on {1} vertices")]
    VertexOutOfRange(usize, usize),
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("map is not a bijection on {{0..{0}}}")]
    NotBijective(usize),
    #[error("no column permutation with nonzero diagonal exists")]
    NoMatching,
    #[error("parse error: {0}")]
    Parse(String),
}

/// Directed acyclic graph stored as per-vertex parent sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    n: usize,
    parents: Vec<Vec<usize>>,
}

impl Dag {
    /// Builds a DAG from parent sets, validating acyclicity and index ranges.
    pub fn new(n: usize, parents: Vec<Vec<usize>>) -> Result<Self, GraphError> {
        if parents.len() != n {
            return Err(GraphError::SizeMismatch(parents.len(), n));
        }
        let mut canon = Vec::with_capacity(n);
        for (i, pa) in parents.iter().enumerate() {
            let mut pa: Vec<usize> = pa.clone();
            pa.sort_unstable();
            pa.dedup();
            for &p in &pa {
                if p >= n {
                    return Err(GraphError::VertexOutOfRange(p, n));
                }
                if p == i {
                    return Err(GraphError::SelfLoop(i));
                }
            }
            canon.push(pa);
        }
        let dag = Dag { n, parents: canon };
        dag.topological_order().map(|_| dag)
    }

    /// Builds a DAG on `n` vertices from directed edges `(from, to)`.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut parents = vec![Vec::new(); n];
        for &(from, to) in edges {
            if to >= n {
                return Err(GraphError::VertexOutOfRange(to, n));
            }
            parents[to].push(from);
        }
        Dag::new(n, parents)
    }

    pub fn empty(n: usize) -> Self {
        Dag { n, parents: vec![Vec::new(); n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    /// Directed edges as `(from, to)` pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, pa) in self.parents.iter().enumerate() {
            for &p in pa {
                out.push((p, i));
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.parents[i].contains(&j) || self.parents[j].contains(&i)
    }

    /// Kahn topological sort; `Err(Cyclic)` if no order exists.
    pub fn topological_order(&self) -> Result<Vec<usize>, GraphError> {
        let mut indeg = vec![0usize; self.n];
        let mut children = vec![Vec::new(); self.n];
        for (i, pa) in self.parents.iter().enumerate() {
            indeg[i] = pa.len();
            for &p in pa {
                children[p].push(i);
            }
        }
        let mut queue: Vec<usize> = (0..self.n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(self.n);
        while let Some(v) = queue.pop() {
            order.push(v);
            for &c in &children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push(c);
                }
            }
        }
        if order.len() == self.n {
            Ok(order)
        } else {
            Err(GraphError::Cyclic)
        }
    }

    /// Undirected skeleton (edge directions dropped).
    pub fn skeleton(&self) -> MarkovNet {
        let mut net = MarkovNet::empty(self.n);
        for (from, to) in self.edges() {
            net.add_edge(from, to);
        }
        net
    }

    /// Plain-text edge list: first line `n`, then `i j` per directed edge.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.n);
        for (from, to) in self.edges() {
            let _ = writeln!(s, "{} {}", from, to);
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let n: usize = lines
            .next()
            .ok_or_else(|| GraphError::Parse("empty input".into()))?
            .trim()
            .parse()
            .map_err(|e| GraphError::Parse(format!("bad vertex count: {e}")))?;
        let mut edges = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let a = it.next().ok_or_else(|| GraphError::Parse(format!("bad line: {line}")))?;
            let b = it.next().ok_or_else(|| GraphError::Parse(format!("bad line: {line}")))?;
            let from: usize =
                a.parse().map_err(|e| GraphError::Parse(format!("bad vertex `{a}`: {e}")))?;
            let to: usize =
                b.parse().map_err(|e| GraphError::Parse(format!("bad vertex `{b}`: {e}")))?;
            edges.push((from, to));
        }
        Dag::from_edges(n, &edges)
    }
}

/// Undirected graph with unordered edges stored canonically as `(i, j)`, `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkovNet {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl MarkovNet {
    pub fn empty(n: usize) -> Self {
        MarkovNet { n, edges: BTreeSet::new() }
    }

    pub fn complete(n: usize) -> Self {
        let mut net = MarkovNet::empty(n);
        for i in 0..n {
            for j in i + 1..n {
                net.add_edge(i, j);
            }
        }
        net
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut net = MarkovNet::empty(n);
        for &(i, j) in edges {
            if i >= n {
                return Err(GraphError::VertexOutOfRange(i, n));
            }
            if j >= n {
                return Err(GraphError::VertexOutOfRange(j, n));
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            net.add_edge(i, j);
        }
        Ok(net)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn add_edge(&mut self, i: usize, j: usize) {
        assert!(i != j && i < self.n && j < self.n);
        self.edges.insert((i.min(j), i.max(j)));
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Canonical `i < j` edge pairs in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn neighbors(&self, i: usize) -> BTreeSet<usize> {
        (0..self.n).filter(|&j| self.has_edge(i, j)).collect()
    }

    /// True iff every edge of `other` is an edge of `self`.
    pub fn contains(&self, other: &MarkovNet) -> bool {
        other.edges.is_subset(&self.edges)
    }

    /// Plain-text edge list: first line `n`, then `i - j` per undirected edge.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.n);
        for (i, j) in self.edges() {
            let _ = writeln!(s, "{} - {}", i, j);
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let n: usize = lines
            .next()
            .ok_or_else(|| GraphError::Parse("empty input".into()))?
            .trim()
            .parse()
            .map_err(|e| GraphError::Parse(format!("bad vertex count: {e}")))?;
        let mut edges = Vec::new();
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 || parts[1] != "-" {
                return Err(GraphError::Parse(format!("expected `i - j`, got `{line}`")));
            }
            let i: usize = parts[0]
                .parse()
                .map_err(|e| GraphError::Parse(format!("bad vertex `{}`: {e}", parts[0])))?;
            let j: usize = parts[2]
                .parse()
                .map_err(|e| GraphError::Parse(format!("bad vertex `{}`: {e}", parts[2])))?;
            edges.push((i, j));
        }
        MarkovNet::from_edges(n, &edges)
    }
}

/// Bijection on `{0..n-1}`; `map[i]` is the image of `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self, GraphError> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &v in &map {
            if v >= n || seen[v] {
                return Err(GraphError::NotBijective(n));
            }
            seen[v] = true;
        }
        Ok(Permutation { map })
    }

    pub fn identity(n: usize) -> Self {
        Permutation { map: (0..n).collect() }
    }

    pub fn n(&self) -> usize {
        self.map.len()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.map.len()];
        for (i, &v) in self.map.iter().enumerate() {
            inv[v] = i;
        }
        Permutation { map: inv }
    }
}

/// Boolean `n x n` matrix; an entry is `true` iff it may be nonzero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZeroPattern {
    n: usize,
    allow: Vec<bool>,
}

impl ZeroPattern {
    pub fn new(n: usize, allow: Vec<bool>) -> Self {
        assert_eq!(allow.len(), n * n);
        ZeroPattern { n, allow }
    }

    pub fn all_true(n: usize) -> Self {
        ZeroPattern { n, allow: vec![true; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut p = ZeroPattern { n, allow: vec![false; n * n] };
        for i in 0..n {
            p.set(i, i, true);
        }
        p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.allow[i * self.n + j] = v;
    }

    /// Pattern of `|A[i][j]| > tol` for a row-major square matrix.
    pub fn from_matrix(a: &[f64], n: usize, tol: f64) -> Self {
        assert_eq!(a.len(), n * n);
        ZeroPattern { n, allow: a.iter().map(|&v| v.abs() > tol).collect() }
    }
}

/// Moralized graph: connect co-parents, drop edge directions.
pub fn moralize(g: &Dag) -> MarkovNet {
    let mut net = g.skeleton();
    for i in 0..g.n() {
        let pa = g.parents(i);
        for (a, &p) in pa.iter().enumerate() {
            for &q in &pa[a + 1..] {
                net.add_edge(p, q);
            }
        }
    }
    net
}

/// Intimate neighbor set: neighbors of `i` adjacent to every other neighbor of `i`.
pub fn intimate_neighbors(m: &MarkovNet, i: usize) -> BTreeSet<usize> {
    let nbrs = m.neighbors(i);
    nbrs.iter()
        .copied()
        .filter(|&j| nbrs.iter().all(|&k| k == j || m.has_edge(j, k)))
        .collect()
}

/// All triples `(i, k, j)` with `i -> k <- j`, `i` and `j` non-adjacent, `i < j`.
pub fn unshielded_colliders(g: &Dag) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for k in 0..g.n() {
        let pa = g.parents(k);
        for (a, &i) in pa.iter().enumerate() {
            for &j in &pa[a + 1..] {
                if !g.adjacent(i, j) {
                    out.push((i.min(j), k, i.max(j)));
                }
            }
        }
    }
    out
}

/// True iff `{i,j} in m1 <=> {p(i),p(j)} in m2`.
pub fn isomorphic_under(
    m1: &MarkovNet,
    m2: &MarkovNet,
    p: &Permutation,
) -> Result<bool, GraphError> {
    if m1.n() != m2.n() {
        return Err(GraphError::SizeMismatch(m1.n(), m2.n()));
    }
    if p.n() != m1.n() {
        return Err(GraphError::SizeMismatch(p.n(), m1.n()));
    }
    let n = m1.n();
    for i in 0..n {
        for j in i + 1..n {
            if m1.has_edge(i, j) != m2.has_edge(p.apply(i), p.apply(j)) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Exhaustive isomorphism search over all `n!` permutations; `n <= 8` only.
/// Returns the lexicographically smallest witness.
pub fn find_isomorphism(m1: &MarkovNet, m2: &MarkovNet) -> Result<Option<Permutation>, GraphError> {
    if m1.n() != m2.n() {
        return Err(GraphError::SizeMismatch(m1.n(), m2.n()));
    }
    let n = m1.n();
    assert!(n <= 8, "exhaustive isomorphism search is limited to n <= 8");
    let mut map = Vec::with_capacity(n);
    let mut used = vec![false; n];
    fn rec(
        m1: &MarkovNet,
        m2: &MarkovNet,
        map: &mut Vec<usize>,
        used: &mut [bool],
    ) -> Option<Permutation> {
        let n = m1.n();
        let i = map.len();
        if i == n {
            return Some(Permutation::new(map.clone()).unwrap());
        }
        for cand in 0..n {
            if used[cand] {
                continue;
            }
            // Partial consistency: edges between i and already-mapped vertices.
            if (0..i).all(|j| m1.has_edge(i, j) == m2.has_edge(cand, map[j])) {
                used[cand] = true;
                map.push(cand);
                if let Some(p) = rec(m1, m2, map, used) {
                    return Some(p);
                }
                map.pop();
                used[cand] = false;
            }
        }
        None
    }
    Ok(rec(m1, m2, &mut map, &mut used))
}

/// Maximum bipartite matching (Kuhn's augmenting paths) on an `n x n`
/// adjacency pattern. Returns `match_of_row[i] = Some(col)`.
fn max_bipartite_matching(pattern: &ZeroPattern) -> Vec<Option<usize>> {
    let n = pattern.n();
    let mut col_owner: Vec<Option<usize>> = vec![None; n];

    fn try_augment(
        pattern: &ZeroPattern,
        row: usize,
        visited: &mut [bool],
        col_owner: &mut [Option<usize>],
    ) -> bool {
        let n = pattern.n();
        for col in 0..n {
            if pattern.get(row, col) && !visited[col] {
                visited[col] = true;
                if col_owner[col].is_none()
                    || try_augment(pattern, col_owner[col].unwrap(), visited, col_owner)
                {
                    col_owner[col] = Some(row);
                    return true;
                }
            }
        }
        false
    }

    for row in 0..n {
        let mut visited = vec![false; n];
        try_augment(pattern, row, &mut visited, &mut col_owner);
    }
    let mut match_of_row = vec![None; n];
    for (col, owner) in col_owner.iter().enumerate() {
        if let Some(row) = owner {
            match_of_row[*row] = Some(col);
        }
    }
    match_of_row
}

/// Column permutation `sigma` with `|A[i][sigma(i)]| > tol` for all `i`, found
/// via bipartite perfect matching on the nonzero pattern. Row-major `A`.
pub fn nonzero_diagonal_permutation(
    a: &[f64],
    n: usize,
    tol: f64,
) -> Result<Permutation, GraphError> {
    let pattern = ZeroPattern::from_matrix(a, n, tol);
    let matching = max_bipartite_matching(&pattern);
    let mut map = Vec::with_capacity(n);
    for m in matching {
        map.push(m.ok_or(GraphError::NoMatching)?);
    }
    Permutation::new(map)
}

/// True iff some all-false submatrix on row set `R` and column set `C` has
/// `|R| + |C| > n`, which forces structural singularity. Equivalent, by Koenig
/// duality, to the nonzero pattern admitting no perfect matching.
pub fn has_blocking_zero_submatrix(p: &ZeroPattern) -> bool {
    max_bipartite_matching(p).iter().any(Option::is_none)
}

/// Zero pattern allowed for the Jacobian of the map from estimated to true
/// latents: entry `(i, j)`, `i != j`, may be nonzero only when `j` is an
/// intimate neighbor of `i`; the diagonal is always allowed. This pattern is
/// closed under matrix powers and hence under inversion.
pub fn inverse_zero_pattern_closure(m: &MarkovNet) -> ZeroPattern {
    let n = m.n();
    let mut p = ZeroPattern::identity(n);
    for i in 0..n {
        for j in intimate_neighbors(m, i) {
            p.set(i, j, true);
        }
    }
    p
}

/// The benchmark graphs used throughout the experiments, 0-based.
pub mod presets {
    use super::Dag;

    /// Y-structure Z1 -> Z3 <- Z2, Z3 -> Z4.
    pub fn y4() -> Dag {
        Dag::from_edges(4, &[(0, 2), (1, 2), (2, 3)]).unwrap()
    }

    /// Chain Z1 -> Z2 -> Z3 -> Z4.
    pub fn chain4() -> Dag {
        Dag::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap()
    }

    /// Five-variable DAG Z1 -> Z2 -> Z4 <- Z3, Z4 -> Z5.
    pub fn fig1() -> Dag {
        Dag::from_edges(5, &[(0, 1), (1, 3), (2, 3), (3, 4)]).unwrap()
    }

    /// Six-variable DAG Z1 -> Z2 -> Z3 -> Z4 and Z1 -> Z5 -> Z6 -> Z4.
    pub fn fig2() -> Dag {
        Dag::from_edges(6, &[(0, 1), (1, 2), (2, 3), (0, 4), (4, 5), (5, 3)]).unwrap()
    }
}
