//! Simple undirected graphs on dense vertex indices `0..n`, the generators
//! used by the experiments, and the combinatorial helpers the rest of the
//! crate relies on (components, balls, independent-set partitions).

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Immutable simple graph. Edges are stored with `u < v` in insertion order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    adjacency: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
    max_degree: usize,
}

impl Graph {
    /// Builds a graph from an edge list, rejecting self-loops, duplicate edges
    /// and out-of-range endpoints.
    pub fn new(n: usize, edge_list: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = HashSet::with_capacity(edge_list.len());
        let mut edges = Vec::with_capacity(edge_list.len());
        for &(a, b) in edge_list {
            for x in [a, b] {
                if x >= n {
                    return Err(Error::VertexOutOfRange { vertex: x, n });
                }
            }
            if a == b {
                return Err(Error::SelfLoop(a));
            }
            let (u, v) = if a < b { (a, b) } else { (b, a) };
            if !seen.insert((u, v)) {
                return Err(Error::DuplicateEdge(u, v));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
            edges.push((u, v));
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        let max_degree = adjacency.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Self {
            n,
            adjacency,
            edges,
            max_degree,
        })
    }

    pub fn empty(n: usize) -> Self {
        Self::new(n, &[]).expect("empty graph is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Breadth-first distances from `source`; unreachable vertices get `None`.
    pub fn distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap_or(0);
            for &w in &self.adjacency[u] {
                if dist[w].is_none() {
                    dist[w] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// All vertices within graph distance `radius` of `center`, sorted.
    pub fn ball(&self, center: usize, radius: usize) -> Result<Vec<usize>> {
        if center >= self.n {
            return Err(Error::VertexOutOfRange {
                vertex: center,
                n: self.n,
            });
        }
        let dist = self.distances_from(center);
        Ok((0..self.n)
            .filter(|&v| matches!(dist[v], Some(d) if d <= radius))
            .collect())
    }

    /// Two-colouring `(even, odd)` if the graph is bipartite. Each component is
    /// coloured from its smallest vertex, which lands in the even class.
    pub fn bipartition(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        let mut side: Vec<Option<bool>> = vec![None; self.n];
        for start in 0..self.n {
            if side[start].is_some() {
                continue;
            }
            side[start] = Some(false);
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                let s = side[u]?;
                for &w in &self.adjacency[u] {
                    match side[w] {
                        None => {
                            side[w] = Some(!s);
                            queue.push_back(w);
                        }
                        Some(t) if t == s => return None,
                        Some(_) => {}
                    }
                }
            }
        }
        let even = (0..self.n).filter(|&v| side[v] == Some(false)).collect();
        let odd = (0..self.n).filter(|&v| side[v] == Some(true)).collect();
        Some((even, odd))
    }

    /// True when no edge joins two members of `set`.
    pub fn is_independent(&self, set: &[usize]) -> bool {
        let members: HashSet<usize> = set.iter().copied().collect();
        set.iter()
            .all(|&u| self.adjacency[u].iter().all(|w| !members.contains(w)))
    }

    /// Parses the text format: first line `n m`, then `m` lines `u v`.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header `n m`".into(),
        })?;
        let nums = parse_usizes(header, line)?;
        let [n, m] = nums[..] else {
            return Err(Error::Parse {
                line,
                msg: "header must be `n m`".into(),
            });
        };
        let mut edges = Vec::with_capacity(m);
        for (line, l) in lines {
            let pair = parse_usizes(l, line)?;
            let [u, v] = pair[..] else {
                return Err(Error::Parse {
                    line,
                    msg: "edge line must be `u v`".into(),
                });
            };
            edges.push((u, v));
        }
        if edges.len() != m {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header declares {m} edges, found {}", edges.len()),
            });
        }
        Self::new(n, &edges)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n, self.edges.len());
        for &(u, v) in &self.edges {
            let _ = writeln!(out, "{u} {v}");
        }
        out
    }
}

fn parse_usizes(line: &str, lineno: usize) -> Result<Vec<usize>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<usize>().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("`{t}`: {e}"),
            })
        })
        .collect()
}

/// Row-major box of the integer lattice; the last coordinate varies fastest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub dims: Vec<usize>,
}

impl GridShape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidParameter("grid needs at least one side".into()));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidParameter("grid sides must be >= 1".into()));
        }
        Ok(Self {
            dims: dims.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        let mut c = vec![0; self.dims.len()];
        for (slot, &d) in c.iter_mut().zip(&self.dims).rev() {
            *slot = index % d;
            index /= d;
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&c, &d)| acc * d + c)
    }

    pub fn graph(&self) -> Graph {
        let mut edges = Vec::new();
        for v in 0..self.len() {
            let c = self.coords(v);
            for axis in 0..self.dims.len() {
                if c[axis] + 1 < self.dims[axis] {
                    let mut next = c.clone();
                    next[axis] += 1;
                    edges.push((v, self.index(&next)));
                }
            }
        }
        Graph::new(self.len(), &edges).expect("lattice edges are simple")
    }

    /// Sup-norm distance between two lattice points.
    pub fn linf_distance(&self, a: usize, b: usize) -> usize {
        self.coords(a)
            .iter()
            .zip(self.coords(b))
            .map(|(&x, y)| x.abs_diff(y))
            .max()
            .unwrap_or(0)
    }
}

/// Nearest-neighbour box of `Z^d` with the given side lengths.
pub fn grid_graph(dims: &[usize]) -> Result<Graph> {
    Ok(GridShape::new(dims)?.graph())
}

pub fn path_graph(n: usize) -> Graph {
    let edges: Vec<_> = (1..n).map(|v| (v - 1, v)).collect();
    Graph::new(n, &edges).expect("path is simple")
}

pub fn cycle_graph(n: usize) -> Result<Graph> {
    if n < 3 {
        return Err(Error::InvalidParameter("cycle needs n >= 3".into()));
    }
    let mut edges: Vec<_> = (1..n).map(|v| (v - 1, v)).collect();
    edges.push((0, n - 1));
    Graph::new(n, &edges)
}

pub fn complete_graph(n: usize) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            edges.push((u, v));
        }
    }
    Graph::new(n, &edges).expect("complete graph is simple")
}

/// Erdős–Rényi `G(n, p)`, deterministic given `seed`. Pairs are visited in
/// lexicographic order and each consumes one uniform draw.
pub fn random_gnp(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("p = {p} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::new(n, &edges)
}

/// Disjoint independent sets covering `V`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndependentPartition {
    pub classes: Vec<Vec<usize>>,
}

impl IndependentPartition {
    pub fn k(&self) -> usize {
        self.classes.len()
    }

    /// Class index of every vertex.
    pub fn labels(&self, n: usize) -> Vec<usize> {
        let mut label = vec![usize::MAX; n];
        for (i, class) in self.classes.iter().enumerate() {
            for &v in class {
                label[v] = i;
            }
        }
        label
    }

    /// Checks independence, disjointness and coverage against `g`.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let mut seen = vec![false; g.n()];
        for class in &self.classes {
            if !g.is_independent(class) {
                return Err(Error::InvariantViolated("class is not independent".into()));
            }
            for &v in class {
                if v >= g.n() || std::mem::replace(&mut seen[v], true) {
                    return Err(Error::InvariantViolated(format!(
                        "vertex {v} repeated or out of range"
                    )));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvariantViolated("classes do not cover V".into()));
        }
        Ok(())
    }
}

/// First-fit colouring in vertex-index order. Uses at most `Δ + 1` classes;
/// the empty vertex set still yields one (empty) class.
pub fn greedy_independent_partition(g: &Graph) -> IndependentPartition {
    let mut colour = vec![usize::MAX; g.n()];
    let mut classes: Vec<Vec<usize>> = vec![Vec::new()];
    for v in 0..g.n() {
        let used: HashSet<usize> = g
            .neighbors(v)
            .iter()
            .map(|&w| colour[w])
            .filter(|&c| c != usize::MAX)
            .collect();
        let c = (0..).find(|c| !used.contains(c)).unwrap_or(0);
        if c == classes.len() {
            classes.push(Vec::new());
        }
        colour[v] = c;
        classes[c].push(v);
    }
    IndependentPartition { classes }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    /// Component label per element, numbered by first appearance.
    pub fn labels(&mut self) -> (Vec<usize>, usize) {
        let n = self.parent.len();
        let mut root_label = vec![usize::MAX; n];
        let mut labels = vec![0; n];
        let mut count = 0;
        for x in 0..n {
            let r = self.find(x);
            if root_label[r] == usize::MAX {
                root_label[r] = count;
                count += 1;
            }
            labels[x] = root_label[r];
        }
        (labels, count)
    }
}

/// Components of the spanning subgraph `(V, A)` where `A` is given as edge
/// indices into `g.edges()`. Isolated vertices are singleton components.
pub fn edge_components(g: &Graph, edge_subset: &[usize]) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(g.n());
    for &e in edge_subset {
        let (u, v) = g.edges()[e];
        uf.union(u, v);
    }
    group_labels(&mut uf)
}

/// Components of the subgraph induced by `subset`.
pub fn induced_components(g: &Graph, subset: &[usize]) -> Vec<Vec<usize>> {
    let mut inside = vec![false; g.n()];
    for &v in subset {
        inside[v] = true;
    }
    let mut visited = vec![false; g.n()];
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out = Vec::new();
    for &s in &sorted {
        if visited[s] {
            continue;
        }
        visited[s] = true;
        let mut comp = vec![s];
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &w in g.neighbors(u) {
                if inside[w] && !visited[w] {
                    visited[w] = true;
                    comp.push(w);
                    queue.push_back(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn group_labels(uf: &mut UnionFind) -> Vec<Vec<usize>> {
    let (labels, count) = uf.labels();
    let mut comps = vec![Vec::new(); count];
    for (v, &l) in labels.iter().enumerate() {
        comps[l].push(v);
    }
    comps
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_cycle() -> Graph {
        Graph::new(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap()
    }

    #[test]
    fn build_graph_examples() {
        assert_eq!(Graph::new(2, &[(0, 1)]).unwrap().max_degree(), 1);
        assert_eq!(four_cycle().max_degree(), 2);
        assert_eq!(
            Graph::new(3, &[(0, 1), (0, 1)]),
            Err(Error::DuplicateEdge(0, 1))
        );
        assert_eq!(Graph::new(3, &[(1, 0), (0, 1)]), Err(Error::DuplicateEdge(0, 1)));
        assert_eq!(Graph::new(3, &[(2, 2)]), Err(Error::SelfLoop(2)));
        assert_eq!(
            Graph::new(3, &[(0, 3)]),
            Err(Error::VertexOutOfRange { vertex: 3, n: 3 })
        );
    }

    #[test]
    fn grid_examples() {
        let g = grid_graph(&[2, 2]).unwrap();
        assert_eq!((g.n(), g.edge_count()), (4, 4));
        let g = grid_graph(&[3]).unwrap();
        assert_eq!((g.n(), g.edge_count()), (3, 2));
        let g = grid_graph(&[3, 3]).unwrap();
        assert_eq!((g.n(), g.edge_count(), g.max_degree()), (9, 12, 4));
        assert!(grid_graph(&[]).is_err());
        assert!(grid_graph(&[3, 0]).is_err());
    }

    #[test]
    fn grid_indexing_is_row_major() {
        let shape = GridShape::new(&[3, 4]).unwrap();
        assert_eq!(shape.index(&[1, 2]), 6);
        assert_eq!(shape.coords(6), vec![1, 2]);
        assert_eq!(shape.linf_distance(0, 11), 3);
    }

    #[test]
    fn gnp_extremes() {
        assert_eq!(random_gnp(7, 0.0, 1).unwrap().edge_count(), 0);
        assert_eq!(random_gnp(7, 1.0, 1).unwrap().edge_count(), 21);
        assert!(random_gnp(7, 1.5, 1).is_err());
        assert_eq!(random_gnp(20, 0.3, 9).unwrap(), random_gnp(20, 0.3, 9).unwrap());
    }

    #[test]
    fn greedy_partition_examples() {
        assert_eq!(greedy_independent_partition(&Graph::empty(0)).k(), 1);
        assert_eq!(greedy_independent_partition(&Graph::empty(3)).k(), 1);
        assert_eq!(greedy_independent_partition(&path_graph(2)).k(), 2);
        let g = grid_graph(&[3, 3]).unwrap();
        let p = greedy_independent_partition(&g);
        assert_eq!(p.k(), 2);
        p.validate(&g).unwrap();
    }

    #[test]
    fn component_examples() {
        let g = path_graph(3);
        let comps = edge_components(&Graph::empty(3), &[]);
        assert_eq!(comps, vec![vec![0], vec![1], vec![2]]);
        assert_eq!(induced_components(&g, &[0, 2]), vec![vec![0], vec![2]]);
        let c4 = four_cycle();
        // edges 0-1 and 2-3
        let comps = edge_components(&c4, &[0, 2]);
        assert_eq!(comps, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn ball_examples() {
        let g = path_graph(5);
        assert_eq!(g.ball(2, 0).unwrap(), vec![2]);
        assert_eq!(g.ball(2, 1).unwrap(), vec![1, 2, 3]);
        let grid = grid_graph(&[3, 3]).unwrap();
        assert_eq!(grid.ball(0, 2).unwrap().len(), 6);
        assert!(g.ball(9, 1).is_err());
    }

    #[test]
    fn text_format_roundtrip() {
        let g = grid_graph(&[2, 3]).unwrap();
        assert_eq!(Graph::parse(&g.to_text()).unwrap(), g);
        assert!(matches!(Graph::parse("3 2\n0 1\n"), Err(Error::Parse { .. })));
        assert!(matches!(Graph::parse("3 1\n0 x\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn bipartition_detects_odd_cycles() {
        assert!(complete_graph(3).bipartition().is_none());
        let (e, o) = four_cycle().bipartition().unwrap();
        assert_eq!((e, o), (vec![0, 2], vec![1, 3]));
    }
}
