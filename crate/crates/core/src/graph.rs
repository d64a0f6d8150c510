//! Skeleton graphs: hop distances, the normalized adjacency factor
//! `D^-1/2 (A + I) D^-1/2` and its grouped learnable copy.
//!
//! Graphs are immutable once validated. A valid graph has at least one node,
//! no self-loops, no duplicate edges, every edge endpoint in range and a
//! single connected component.
//!
//! # Text format
//!
//! One directive per line, `#` starts a comment:
//!
//! ```text
//! nodes 3
//! node 0 nose
//! node 1 left_shoulder
//! node 2 right_shoulder
//! edge 0 1
//! edge 0 2
//! reduction 0 5 6
//! mirror 1 2
//! ```
//!
//! `nodes` must come first. Every id in `0..nodes` needs exactly one `node`
//! line. `reduction` (optional, `nodes` entries) maps each node to its source
//! keypoint index in the wholebody layout; `mirror` lines list left/right
//! pairs swapped by horizontal mirroring.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, GraphError, Result};
use crate::tensor::Tensor;

/// Number of keypoints in the wholebody layout the builtin graph reduces.
pub const WHOLEBODY_KEYPOINTS: usize = 133;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkeletonGraph {
    node_names: Vec<String>,
    edges: Vec<(usize, usize)>,
    reduction_map: Vec<usize>,
    mirror_pairs: Vec<(usize, usize)>,
}

/// Hop-distance matrix, row-major `n x n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistanceMatrix {
    n: usize,
    dist: Vec<usize>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.dist[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.dist
    }

    pub fn diameter(&self) -> usize {
        self.dist.iter().copied().max().unwrap_or(0)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.dist.chunks(self.n)
    }
}

/// `D^-1/2 (A + I) D^-1/2`, row-major `n x n`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyFactor {
    n: usize,
    matrix: Vec<f64>,
}

impl AdjacencyFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.matrix
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.n, self.n], self.matrix.clone()).expect("n >= 1")
    }
}

/// Breadth-first hop distances from every node over an undirected edge list.
pub fn shortest_path_matrix(n: usize, edges: &[(usize, usize)]) -> Result<DistanceMatrix, GraphError> {
    let adj = adjacency_lists(n, edges)?;
    let mut dist = vec![usize::MAX; n * n];
    for src in 0..n {
        let row = &mut dist[src * n..(src + 1) * n];
        row[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if row[v] == usize::MAX {
                    row[v] = row[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if let Some(to) = row.iter().position(|&d| d == usize::MAX) {
            return Err(GraphError::Disconnected { from: src, to });
        }
    }
    Ok(DistanceMatrix { n, dist })
}

fn adjacency_lists(n: usize, edges: &[(usize, usize)]) -> Result<Vec<Vec<usize>>, GraphError> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(GraphError::NodeRange { a, b, n });
        }
        adj[a].push(b);
        adj[b].push(a);
    }
    Ok(adj)
}

impl SkeletonGraph {
    pub fn new(
        node_names: Vec<String>,
        edges: Vec<(usize, usize)>,
        reduction_map: Vec<usize>,
        mirror_pairs: Vec<(usize, usize)>,
    ) -> Result<Self, GraphError> {
        let n = node_names.len();
        if n == 0 {
            return Err(GraphError::Invalid("graph needs at least one node".into()));
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(GraphError::NodeRange { a, b, n });
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(GraphError::DuplicateEdge(a, b));
            }
        }
        shortest_path_matrix(n, &edges)?;
        if !reduction_map.is_empty() && reduction_map.len() != n {
            return Err(GraphError::Invalid(format!(
                "reduction map has {} entries for {n} nodes",
                reduction_map.len()
            )));
        }
        let mut mirrored = BTreeSet::new();
        for &(a, b) in &mirror_pairs {
            if a >= n || b >= n || a == b || !mirrored.insert(a) || !mirrored.insert(b) {
                return Err(GraphError::Invalid(format!("bad mirror pair ({a}, {b})")));
            }
        }
        Ok(SkeletonGraph {
            node_names,
            edges,
            reduction_map,
            mirror_pairs,
        })
    }

    /// `n` nodes named `j0..`, joined in a chain.
    pub fn path(n: usize) -> Result<SkeletonGraph, GraphError> {
        let names = (0..n).map(|i| format!("j{i}")).collect();
        SkeletonGraph::new(names, (1..n).map(|i| (i - 1, i)).collect(), vec![], vec![])
    }

    /// The builtin 27-node upper-body and hands skeleton.
    ///
    /// Nodes: nose, shoulders, elbows, wrists (ids 0-6), then ten nodes per hand
    /// (left 7-16, right 17-26): base and tip of thumb, index, middle, ring and
    /// pinky, each finger base attached to its wrist. The shoulders connect to
    /// each other and to the nose. The reduction map indexes the 133-point
    /// COCO-WholeBody layout (body 0-16, feet 17-22, face 23-90, left hand
    /// 91-111, right hand 112-132).
    pub fn builtin_slgt27() -> SkeletonGraph {
        let mut names: Vec<String> = [
            "nose",
            "left_shoulder",
            "right_shoulder",
            "left_elbow",
            "right_elbow",
            "left_wrist",
            "right_wrist",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let mut edges = vec![(0, 1), (0, 2), (1, 2), (1, 3), (3, 5), (2, 4), (4, 6)];
        let mut reduction = vec![0, 5, 6, 7, 8, 9, 10];
        // (name, base, tip) offsets inside a 21-point hand block
        let fingers = [("thumb", 2, 4), ("index", 5, 8), ("middle", 9, 12), ("ring", 13, 16), ("pinky", 17, 20)];
        for (side, wrist, hand_root) in [("left", 5, 91), ("right", 6, 112)] {
            for (finger, base, tip) in fingers {
                let id = names.len();
                names.push(format!("{side}_{finger}_base"));
                names.push(format!("{side}_{finger}_tip"));
                reduction.push(hand_root + base);
                reduction.push(hand_root + tip);
                edges.push((wrist, id));
                edges.push((id, id + 1));
            }
        }
        let mut mirror = vec![(1, 2), (3, 4), (5, 6)];
        mirror.extend((7..17).map(|i| (i, i + 10)));
        SkeletonGraph::new(names, edges, reduction, mirror).expect("builtin graph is valid")
    }

    pub fn node_count(&self) -> usize {
        self.node_names.len()
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn reduction_map(&self) -> &[usize] {
        &self.reduction_map
    }

    pub fn mirror_pairs(&self) -> &[(usize, usize)] {
        &self.mirror_pairs
    }

    /// Node permutation applied by horizontal mirroring (an involution).
    pub fn mirror_permutation(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.node_count()).collect();
        for &(a, b) in &self.mirror_pairs {
            perm.swap(a, b);
        }
        perm
    }

    pub fn shortest_path_matrix(&self) -> DistanceMatrix {
        shortest_path_matrix(self.node_count(), &self.edges).expect("validated at construction")
    }

    /// Dense 0/1 adjacency, row-major.
    pub fn adjacency(&self) -> Vec<f64> {
        let n = self.node_count();
        let mut a = vec![0.0; n * n];
        for &(i, j) in &self.edges {
            a[i * n + j] = 1.0;
            a[j * n + i] = 1.0;
        }
        a
    }

    /// `D^-1/2 (A + I) D^-1/2` with `D` the degree matrix of `A + I`.
    pub fn normalized_adjacency_factor(&self) -> AdjacencyFactor {
        let n = self.node_count();
        let mut a = self.adjacency();
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        let inv_sqrt_deg: Vec<f64> = a
            .chunks(n)
            .map(|row| 1.0 / row.iter().sum::<f64>().sqrt())
            .collect();
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
            }
        }
        AdjacencyFactor { n, matrix: a }
    }

    pub fn parse(text: &str) -> Result<SkeletonGraph, GraphError> {
        let mut count: Option<usize> = None;
        let mut names: Vec<Option<String>> = Vec::new();
        let mut edges = Vec::new();
        let mut reduction = Vec::new();
        let mut mirror = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| GraphError::Parse { line: lineno + 1, msg };
            let mut words = line.split_whitespace();
            let key = words.next().unwrap_or_default();
            let args: Vec<&str> = words.collect();
            let nums = || -> Result<Vec<usize>, GraphError> {
                args.iter()
                    .map(|w| w.parse::<usize>().map_err(|_| err(format!("expected integer, got {w:?}"))))
                    .collect()
            };
            match key {
                "nodes" => {
                    if count.is_some() {
                        return Err(err("repeated `nodes`".into()));
                    }
                    let v = nums()?;
                    if v.len() != 1 {
                        return Err(err("`nodes` takes one count".into()));
                    }
                    count = Some(v[0]);
                    names = vec![None; v[0]];
                }
                _ if count.is_none() => return Err(err("`nodes` must come first".into())),
                "node" => {
                    if args.len() != 2 {
                        return Err(err("`node` takes an id and a name".into()));
                    }
                    let id: usize = args[0].parse().map_err(|_| err(format!("bad node id {:?}", args[0])))?;
                    let slot = names
                        .get_mut(id)
                        .ok_or_else(|| err(format!("node id {id} out of range")))?;
                    if slot.replace(args[1].to_string()).is_some() {
                        return Err(err(format!("node {id} declared twice")));
                    }
                }
                "edge" | "mirror" => {
                    let v = nums()?;
                    if v.len() != 2 {
                        return Err(err(format!("`{key}` takes two node ids")));
                    }
                    if key == "edge" {
                        edges.push((v[0], v[1]));
                    } else {
                        mirror.push((v[0], v[1]));
                    }
                }
                "reduction" => reduction.extend(nums()?),
                other => return Err(err(format!("unknown directive {other:?}"))),
            }
        }
        let count = count.ok_or(GraphError::Parse { line: 0, msg: "missing `nodes`".into() })?;
        let names = names
            .into_iter()
            .enumerate()
            .map(|(i, n)| n.ok_or(GraphError::Parse { line: 0, msg: format!("node {i} not declared") }))
            .collect::<Result<Vec<_>, _>>()?;
        debug_assert_eq!(names.len(), count);
        SkeletonGraph::new(names, edges, reduction, mirror)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "nodes {}", self.node_count()).unwrap();
        for (i, name) in self.node_names.iter().enumerate() {
            writeln!(s, "node {i} {name}").unwrap();
        }
        for (a, b) in &self.edges {
            writeln!(s, "edge {a} {b}").unwrap();
        }
        if !self.reduction_map.is_empty() {
            let r: Vec<String> = self.reduction_map.iter().map(|v| v.to_string()).collect();
            writeln!(s, "reduction {}", r.join(" ")).unwrap();
        }
        for (a, b) in &self.mirror_pairs {
            writeln!(s, "mirror {a} {b}").unwrap();
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SkeletonGraph> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(SkeletonGraph::parse(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Learnable `[n, n, groups]` tensor with every group slice equal to `factor`.
pub fn init_decoupled_factor(factor: &AdjacencyFactor, groups: usize) -> Result<Tensor> {
    if groups == 0 {
        return Err(Error::invalid("init_decoupled_factor", "groups must be >= 1"));
    }
    let n = factor.n();
    let data: Vec<f64> = factor
        .as_slice()
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, groups))
        .collect();
    Tensor::param(&[n, n, groups], data)
}
