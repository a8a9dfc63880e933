//! Partitions, mixed graphs, model parameters and binary datasets.
//!
//! Observed variables carry a stable name and a dense index; the index is the
//! position of the variable in the flattened partition (group by group, items
//! in listed order). All numeric code works with indices.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest slope magnitude the optimizer may reach.
pub const SLOPE_CLAMP: f64 = 8.0;

/// Number of admissible off-diagonal correlation values.
pub const N_SIGMA: usize = 100;

/// One latent factor and the observed items it measures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub items: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PartitionSpec {
    groups: Vec<Group>,
}

/// Expert partition of the observed variables into latent-factor groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PartitionSpec", into = "PartitionSpec")]
pub struct Partition {
    groups: Vec<Group>,
    names: Vec<String>,
    group_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
}

impl TryFrom<PartitionSpec> for Partition {
    type Error = Error;
    fn try_from(spec: PartitionSpec) -> Result<Self> {
        Partition::new(spec.groups)
    }
}

impl From<Partition> for PartitionSpec {
    fn from(p: Partition) -> Self {
        PartitionSpec { groups: p.groups }
    }
}

impl Partition {
    pub fn new(groups: Vec<Group>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidPartition("no groups".into()));
        }
        let mut names = Vec::new();
        let mut group_of = Vec::new();
        let mut members = Vec::with_capacity(groups.len());
        let mut index = HashMap::new();
        let mut group_names = BTreeSet::new();
        for (m, g) in groups.iter().enumerate() {
            if !group_names.insert(g.name.clone()) {
                return Err(Error::InvalidPartition(format!(
                    "duplicate group name {:?}",
                    g.name
                )));
            }
            if g.items.is_empty() {
                return Err(Error::InvalidPartition(format!(
                    "group {:?} has no items",
                    g.name
                )));
            }
            let mut mem = Vec::with_capacity(g.items.len());
            for item in &g.items {
                let i = names.len();
                if index.insert(item.clone(), i).is_some() {
                    return Err(Error::InvalidPartition(format!(
                        "variable {item:?} appears more than once"
                    )));
                }
                names.push(item.clone());
                group_of.push(m);
                mem.push(i);
            }
            members.push(mem);
        }
        Ok(Partition {
            groups,
            names,
            group_of,
            members,
            index,
        })
    }

    /// Partition with groups of the given sizes and generated names `X1..`, `Y1..`.
    pub fn with_sizes(sizes: &[usize]) -> Result<Self> {
        let mut next = 1;
        let groups = sizes
            .iter()
            .enumerate()
            .map(|(m, &s)| {
                let items = (0..s)
                    .map(|_| {
                        let name = format!("Y{next}");
                        next += 1;
                        name
                    })
                    .collect();
                Group {
                    name: format!("X{}", m + 1),
                    items,
                }
            })
            .collect();
        Partition::new(groups)
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn group_of(&self, i: usize) -> usize {
        self.group_of[i]
    }

    pub fn members(&self, m: usize) -> &[usize] {
        &self.members[m]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    /// Index of the unordered pair `i < j` in row-major upper-triangle order.
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        pair_index(self.n_vars(), i, j)
    }
}

pub(crate) fn pair_index(p: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    i * (2 * p - i - 1) / 2 + (j - i - 1)
}

/// All pairs `(i, j)` with `i < j < p`, in [`pair_index`] order.
pub fn all_pairs(p: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(p * p.saturating_sub(1) / 2);
    for i in 0..p {
        for j in i + 1..p {
            v.push((i, j));
        }
    }
    v
}

/// Unordered pair of distinct observed-variable indices, stored low-high.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge(usize, usize);

impl Edge {
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if a == b {
            return Err(Error::Domain(format!("self-loop on variable {a}")));
        }
        Ok(if a < b { Edge(a, b) } else { Edge(b, a) })
    }

    pub fn lo(self) -> usize {
        self.0
    }

    pub fn hi(self) -> usize {
        self.1
    }

    pub fn contains(self, v: usize) -> bool {
        self.0 == v || self.1 == v
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}<->{}", self.0, self.1)
    }
}

/// Mixed graph: implicit factor-to-item arrows from the partition, a fully
/// connected latent layer, and an explicit set of bi-directed edges.
#[derive(Debug, Clone)]
pub struct MixedGraph {
    partition: Arc<Partition>,
    edges: BTreeSet<Edge>,
    degree: Vec<usize>,
}

impl PartialEq for MixedGraph {
    fn eq(&self, other: &Self) -> bool {
        self.edges == other.edges && *self.partition == *other.partition
    }
}

/// Edgeless mixed graph induced by a partition.
pub fn get_dag(partition: Arc<Partition>) -> MixedGraph {
    let p = partition.n_vars();
    MixedGraph {
        partition,
        edges: BTreeSet::new(),
        degree: vec![0; p],
    }
}

impl MixedGraph {
    pub fn with_edges(
        partition: Arc<Partition>,
        edges: impl IntoIterator<Item = Edge>,
    ) -> Result<Self> {
        let mut g = get_dag(partition);
        for e in edges {
            if e.hi() >= g.n_vars() {
                return Err(Error::UnknownVariable(format!("index {}", e.hi())));
            }
            g.insert(e);
        }
        Ok(g)
    }

    fn insert(&mut self, e: Edge) {
        if self.edges.insert(e) {
            self.degree[e.lo()] += 1;
            self.degree[e.hi()] += 1;
        }
    }

    fn remove(&mut self, e: Edge) {
        if self.edges.remove(&e) {
            self.degree[e.lo()] -= 1;
            self.degree[e.hi()] -= 1;
        }
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn n_vars(&self) -> usize {
        self.partition.n_vars()
    }

    /// Number of unordered variable pairs, i.e. possible edge slots.
    pub fn n_slots(&self) -> usize {
        let p = self.n_vars();
        p * p.saturating_sub(1) / 2
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a != b && self.edges.contains(&Edge::new(a, b).expect("distinct"))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degree[i]
    }

    pub fn with_edge(&self, e: Edge) -> MixedGraph {
        let mut g = self.clone();
        g.insert(e);
        g
    }

    pub fn without_edge(&self, e: Edge) -> MixedGraph {
        let mut g = self.clone();
        g.remove(e);
        g
    }

    /// Graph with edge `e` toggled.
    pub fn toggled(&self, e: Edge) -> MixedGraph {
        if self.edges.contains(&e) {
            self.without_edge(e)
        } else {
            self.with_edge(e)
        }
    }

    /// The graph itself followed by every graph that differs from it by
    /// exactly one bi-directed edge, in pair order.
    pub fn edge_neighborhood(&self) -> Vec<MixedGraph> {
        let p = self.n_vars();
        let mut out = Vec::with_capacity(1 + self.n_slots());
        out.push(self.clone());
        for (i, j) in all_pairs(p) {
            out.push(self.toggled(Edge(i, j)));
        }
        out
    }

    /// Number of CDN factors containing variable `i`: its bi-directed degree,
    /// or 1 for the lone univariate factor of an isolated variable.
    pub fn factor_count(&self, i: usize) -> Result<usize> {
        if i >= self.n_vars() {
            return Err(Error::UnknownVariable(format!("index {i}")));
        }
        Ok(self.degree[i].max(1))
    }

    #[inline]
    pub(crate) fn h(&self, i: usize) -> usize {
        self.degree[i].max(1)
    }

    /// Observed children of factors `m` and `n`, in column order.
    pub fn joint_children(&self, m: usize, n: usize) -> Result<Vec<usize>> {
        let k = self.partition.n_groups();
        if m == n {
            return Err(Error::Domain(format!("joint children need distinct groups, got {m} twice")));
        }
        if m >= k || n >= k {
            return Err(Error::Domain(format!("group index out of range ({m}, {n})")));
        }
        let mut v: Vec<usize> = self
            .partition
            .members(m)
            .iter()
            .chain(self.partition.members(n))
            .copied()
            .collect();
        v.sort_unstable();
        Ok(v)
    }

    /// Connected components of the bi-directed subgraph induced on `subset`.
    /// Components are listed by smallest member, each sorted ascending.
    pub fn bidirected_components(&self, subset: &[usize]) -> Vec<Vec<usize>> {
        let mut sorted: Vec<usize> = subset.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let pos: HashMap<usize, usize> = sorted.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        let mut parent: Vec<usize> = (0..sorted.len()).collect();
        fn find(parent: &mut [usize], mut a: usize) -> usize {
            while parent[a] != a {
                parent[a] = parent[parent[a]];
                a = parent[a];
            }
            a
        }
        for e in &self.edges {
            if let (Some(&a), Some(&b)) = (pos.get(&e.lo()), pos.get(&e.hi())) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for k in 0..sorted.len() {
            let r = find(&mut parent, k);
            comps.entry(r).or_default().push(sorted[k]);
        }
        comps.into_values().collect()
    }

    /// Neighbours of `i` along bi-directed edges.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|e| e.contains(i))
            .map(|e| if e.lo() == i { e.hi() } else { e.lo() })
            .collect()
    }
}

/// Value of correlation grid entry `k`: `(2k - 99) / 100`.
#[inline]
pub fn sigma_value(k: usize) -> f64 {
    (2.0 * k as f64 - 99.0) / 100.0
}

/// Grid index of an on-grid correlation.
pub fn sigma_index(sigma: f64) -> Result<usize> {
    let k = nearest_sigma_index(sigma);
    if (sigma_value(k) - sigma).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "correlation {sigma} is not on the grid {{-0.99, -0.97, ..., 0.99}}"
        )));
    }
    Ok(k)
}

/// Grid index closest to `sigma` (clamped to the grid ends).
pub fn nearest_sigma_index(sigma: f64) -> usize {
    let k = ((sigma * 100.0 + 99.0) / 2.0).round();
    k.clamp(0.0, (N_SIGMA - 1) as f64) as usize
}

/// Latent correlation matrix with unit diagonal and on-grid off-diagonals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrMatrix {
    n: usize,
    idx: Vec<usize>,
}

impl CorrMatrix {
    /// All off-diagonals at grid index `k`.
    pub fn constant(n: usize, k: usize) -> Self {
        assert!(k < N_SIGMA);
        CorrMatrix {
            n,
            idx: vec![k; n * n.saturating_sub(1) / 2],
        }
    }

    pub fn from_values(values: &[Vec<f64>]) -> Result<Self> {
        let n = values.len();
        let mut c = CorrMatrix::constant(n, 0);
        for (m, row) in values.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Domain("correlation matrix is not square".into()));
            }
            if (row[m] - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("diagonal entry {m} is {} not 1", row[m])));
            }
            for nn in m + 1..n {
                if (row[nn] - values[nn][m]).abs() > 1e-12 {
                    return Err(Error::Domain(format!("matrix not symmetric at ({m}, {nn})")));
                }
                c.set_index(m, nn, sigma_index(row[nn])?);
            }
        }
        Ok(c)
    }

    /// Snap each off-diagonal of a (raw) correlation matrix to the nearest grid value.
    pub fn snapped(values: &[Vec<f64>]) -> Self {
        let n = values.len();
        let mut c = CorrMatrix::constant(n, 0);
        for m in 0..n {
            for nn in m + 1..n {
                c.set_index(m, nn, nearest_sigma_index(values[m][nn]));
            }
        }
        c
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn slot(&self, m: usize, n: usize) -> usize {
        pair_index(self.n, m, n)
    }

    pub fn index(&self, m: usize, n: usize) -> usize {
        assert_ne!(m, n, "diagonal has no grid index");
        self.idx[self.slot(m, n)]
    }

    pub fn set_index(&mut self, m: usize, n: usize, k: usize) {
        assert!(k < N_SIGMA && m != n);
        let s = self.slot(m, n);
        self.idx[s] = k;
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        if m == n {
            1.0
        } else {
            sigma_value(self.index(m, n))
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|m| (0..self.n).map(|n| self.get(m, n)).collect())
            .collect()
    }
}

/// Probit slopes and intercepts, latent correlations, and one copula parameter per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub sigma: CorrMatrix,
    pub thetas: BTreeMap<Edge, f64>,
}

impl ModelParams {
    /// Checks the parameter invariants against a companion graph.
    pub fn validate(&self, g: &MixedGraph) -> Result<()> {
        let p = g.n_vars();
        if self.slopes.len() != p || self.intercepts.len() != p {
            return Err(Error::Domain(format!(
                "expected {p} slopes/intercepts, got {}/{}",
                self.slopes.len(),
                self.intercepts.len()
            )));
        }
        if self.sigma.dim() != g.partition().n_groups() {
            return Err(Error::Domain("correlation matrix has the wrong size".into()));
        }
        if let Some(s) = self.slopes.iter().find(|s| !(s.abs() <= SLOPE_CLAMP)) {
            return Err(Error::Domain(format!("slope {s} outside [-8, 8]")));
        }
        if self.intercepts.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("non-finite intercept".into()));
        }
        if self.thetas.len() != g.n_edges() || self.thetas.keys().any(|e| !g.edges().contains(e)) {
            return Err(Error::Domain(
                "copula parameters must be keyed exactly by the graph's edges".into(),
            ));
        }
        if let Some(t) = self.thetas.values().find(|t| !(t.abs() < crate::copula::THETA_BOUND)) {
            return Err(Error::Domain(format!("copula parameter {t} outside (-25, 25)")));
        }
        Ok(())
    }

    pub fn theta(&self, e: Edge) -> Option<f64> {
        self.thetas.get(&e).copied()
    }
}

/// Binary data matrix, row-major, with named columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    columns: Vec<String>,
    n_rows: usize,
    values: Vec<u8>,
}

impl Dataset {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<u8>>) -> Result<Self> {
        let p = columns.len();
        let mut values = Vec::with_capacity(rows.len() * p);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::InvalidData(format!(
                    "row {r} has {} values, expected {p}",
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(Error::Data {
                        row: r,
                        column: columns[c].clone(),
                        message: format!("value {v} is not binary"),
                    });
                }
            }
            values.extend_from_slice(row);
        }
        Ok(Dataset {
            columns,
            n_rows: rows.len(),
            values,
        })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, r: usize) -> &[u8] {
        let p = self.columns.len();
        &self.values[r * p..(r + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.values.chunks(self.columns.len().max(1))
    }

    /// Same data with columns reordered to the partition's variable order.
    pub fn aligned_to(&self, partition: &Partition) -> Result<Dataset> {
        let p = partition.n_vars();
        if self.columns.len() != p {
            return Err(Error::InvalidData(format!(
                "dataset has {} columns but the partition has {p} variables",
                self.columns.len()
            )));
        }
        let mut src = Vec::with_capacity(p);
        for name in partition.names() {
            let c = self
                .columns
                .iter()
                .position(|x| x == name)
                .ok_or_else(|| Error::InvalidData(format!("partition variable {name:?} missing from data")))?;
            src.push(c);
        }
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.rows() {
            values.extend(src.iter().map(|&c| row[c]));
        }
        Ok(Dataset {
            columns: partition.names().to_vec(),
            n_rows: self.n_rows,
            values,
        })
    }

    /// Rows `start..end` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let p = self.columns.len();
        Dataset {
            columns: self.columns.clone(),
            n_rows: end - start,
            values: self.values[start * p..end * p].to_vec(),
        }
    }

    /// Rows of `self` followed by rows of `other` (same columns).
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.columns != other.columns {
            return Err(Error::InvalidData("column mismatch in concat".into()));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Dataset {
            columns: self.columns.clone(),
            n_rows: self.n_rows + other.n_rows,
            values,
        })
    }
}
