//! Hierarchical structure: summing matrix `S`, aggregation constraints and
//! the bottom-level selector.
//!
//! Series are ordered top to bottom, breadth-first within each level and in
//! declared child order. The bottom level follows `bottom_order`, which
//! therefore also fixes the column order of `S`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::ops::Range;

use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declarative description of a tree hierarchy, as stored in hierarchy files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchySpec {
    /// Level names, most aggregated first.
    pub levels: Vec<String>,
    /// Aggregate node to its ordered children.
    pub children: IndexMap<String, Vec<String>>,
    /// Bottom-level series in column order.
    pub bottom_order: Vec<String>,
}

impl HierarchySpec {
    /// Three-level hierarchy `L2 / L1 / L0`: one root, one middle node per
    /// entry of `group_sizes`, each owning that many consecutive bottom series.
    pub fn from_group_sizes(group_sizes: &[usize]) -> Result<Self> {
        if group_sizes.is_empty() || group_sizes.contains(&0) {
            return Err(Error::Validation(
                "group sizes must be non-empty and positive".into(),
            ));
        }
        let mut children = IndexMap::new();
        let middles: Vec<String> = (1..=group_sizes.len()).map(|j| format!("L1-{j}")).collect();
        children.insert("L2-1".to_string(), middles.clone());
        let mut bottom_order = Vec::new();
        for (middle, &size) in middles.iter().zip(group_sizes) {
            let kids: Vec<String> = (0..size)
                .map(|k| format!("L0-{}", bottom_order.len() + k + 1))
                .collect();
            bottom_order.extend(kids.iter().cloned());
            children.insert(middle.clone(), kids);
        }
        Ok(Self {
            levels: vec!["L2".into(), "L1".into(), "L0".into()],
            children,
            bottom_order,
        })
    }

    /// Three-level hierarchy where every middle node aggregates `fanout`
    /// consecutive bottom series. `n_bottom` must be a multiple of `fanout`.
    pub fn with_fanout(n_bottom: usize, fanout: usize) -> Result<Self> {
        if fanout == 0 || n_bottom == 0 || !n_bottom.is_multiple_of(fanout) {
            return Err(Error::Validation(format!(
                "{n_bottom} bottom series cannot be split into groups of {fanout}"
            )));
        }
        Self::from_group_sizes(&vec![fanout; n_bottom / fanout])
    }

    /// Two-level hierarchy: a root directly over `n_bottom` series.
    pub fn star(n_bottom: usize) -> Result<Self> {
        if n_bottom == 0 {
            return Err(Error::Validation("need at least one bottom series".into()));
        }
        let bottom_order: Vec<String> = (1..=n_bottom).map(|i| format!("L0-{i}")).collect();
        let mut children = IndexMap::new();
        children.insert("L1-1".to_string(), bottom_order.clone());
        Ok(Self {
            levels: vec!["L1".into(), "L0".into()],
            children,
            bottom_order,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A validated hierarchy with its structural matrices.
///
/// Immutable once built.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    spec: HierarchySpec,
    labels: Vec<String>,
    level_ranges: Vec<Range<usize>>,
    level_of: Vec<usize>,
    summing: DMatrix<f64>,
    constraint: DMatrix<f64>,
    selector: DMatrix<f64>,
}

impl Hierarchy {
    pub fn build(spec: &HierarchySpec) -> Result<Self> {
        if spec.levels.is_empty() {
            return Err(Error::Validation("no levels declared".into()));
        }
        let mut seen_levels = HashSet::new();
        for level in &spec.levels {
            if !seen_levels.insert(level.as_str()) {
                return Err(Error::Validation(format!("duplicate level name {level:?}")));
            }
        }

        // Parent links, rejecting duplicates and multi-parent nodes.
        let mut parent: HashMap<&str, &str> = HashMap::new();
        for (node, kids) in &spec.children {
            if kids.is_empty() {
                return Err(Error::Structure(format!(
                    "aggregate node {node:?} has no children"
                )));
            }
            let mut local = HashSet::new();
            for kid in kids {
                if !local.insert(kid.as_str()) {
                    return Err(Error::Validation(format!(
                        "duplicate child name {kid:?} under {node:?}"
                    )));
                }
                if let Some(prev) = parent.insert(kid.as_str(), node.as_str()) {
                    return Err(Error::Validation(format!(
                        "duplicate node name {kid:?} (children of both {prev:?} and {node:?})"
                    )));
                }
            }
        }

        let roots: Vec<&str> = spec
            .children
            .keys()
            .map(String::as_str)
            .filter(|n| !parent.contains_key(n))
            .collect();
        let root = match roots.as_slice() {
            [root] => *root,
            [] => {
                return Err(Error::Structure(
                    "no root node: the child graph contains a cycle".into(),
                ))
            }
            many => {
                return Err(Error::Structure(format!("multiple roots: {many:?}")));
            }
        };

        // Breadth-first walk recording depth; revisits indicate a cycle.
        let mut depth: HashMap<&str, usize> = HashMap::new();
        let mut by_level: Vec<Vec<&str>> = Vec::new();
        let mut queue = VecDeque::from([(root, 0usize)]);
        while let Some((node, d)) = queue.pop_front() {
            if depth.insert(node, d).is_some() {
                return Err(Error::Structure(format!("cycle through node {node:?}")));
            }
            if by_level.len() <= d {
                by_level.push(Vec::new());
            }
            by_level[d].push(node);
            if let Some(kids) = spec.children.get(node) {
                for kid in kids {
                    queue.push_back((kid.as_str(), d + 1));
                }
            }
        }
        let all_nodes = spec
            .children
            .keys()
            .map(String::as_str)
            .chain(parent.keys().copied());
        for node in all_nodes {
            if !depth.contains_key(node) {
                return Err(Error::Structure(format!(
                    "node {node:?} is not reachable from root {root:?}"
                )));
            }
        }

        let bottom_depth = spec.levels.len() - 1;
        if by_level.len() != spec.levels.len() {
            return Err(Error::Structure(format!(
                "{} levels declared but the tree has depth {}",
                spec.levels.len(),
                by_level.len()
            )));
        }
        for (node, &d) in &depth {
            let is_leaf = !spec.children.contains_key(*node);
            if is_leaf != (d == bottom_depth) {
                return Err(Error::Structure(format!(
                    "unbalanced hierarchy: node {node:?} at level {:?} is {}",
                    spec.levels[d],
                    if is_leaf {
                        "a leaf"
                    } else {
                        "an aggregate at the bottom level"
                    }
                )));
            }
        }

        // Bottom order must be a permutation of the leaves.
        let leaves: HashSet<&str> = by_level[bottom_depth].iter().copied().collect();
        let mut listed = HashSet::new();
        for name in &spec.bottom_order {
            if !leaves.contains(name.as_str()) {
                return Err(Error::Validation(format!(
                    "bottom_order names {name:?}, which is not a bottom node"
                )));
            }
            if !listed.insert(name.as_str()) {
                return Err(Error::Validation(format!(
                    "bottom_order lists {name:?} twice"
                )));
            }
        }
        if listed.len() != leaves.len() {
            return Err(Error::Validation(format!(
                "bottom_order lists {} of {} bottom nodes",
                listed.len(),
                leaves.len()
            )));
        }
        by_level[bottom_depth] = spec.bottom_order.iter().map(String::as_str).collect();

        let mut labels = Vec::new();
        let mut level_ranges = Vec::new();
        let mut level_of = Vec::new();
        for (d, nodes) in by_level.iter().enumerate() {
            let start = labels.len();
            labels.extend(nodes.iter().map(|s| s.to_string()));
            level_of.extend(std::iter::repeat_n(d, nodes.len()));
            level_ranges.push(start..labels.len());
        }

        let n = labels.len();
        let n_bottom = spec.bottom_order.len();
        let column: HashMap<&str, usize> = spec
            .bottom_order
            .iter()
            .enumerate()
            .map(|(j, s)| (s.as_str(), j))
            .collect();
        let mut summing = DMatrix::zeros(n, n_bottom);
        for (i, label) in labels.iter().enumerate() {
            let mut stack = vec![label.as_str()];
            while let Some(node) = stack.pop() {
                match spec.children.get(node) {
                    Some(kids) => stack.extend(kids.iter().map(String::as_str)),
                    None => summing[(i, column[node])] = 1.0,
                }
            }
        }

        let m_star = n - n_bottom;
        let mut constraint = DMatrix::zeros(m_star, n);
        for i in 0..m_star {
            constraint[(i, i)] = 1.0;
            for j in 0..n_bottom {
                constraint[(i, m_star + j)] = -summing[(i, j)];
            }
        }
        let mut selector = DMatrix::zeros(n_bottom, n);
        for j in 0..n_bottom {
            selector[(j, m_star + j)] = 1.0;
        }

        Ok(Self {
            spec: spec.clone(),
            labels,
            level_ranges,
            level_of,
            summing,
            constraint,
            selector,
        })
    }

    pub fn spec(&self) -> &HierarchySpec {
        &self.spec
    }

    /// Total number of series.
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn n_bottom(&self) -> usize {
        self.summing.ncols()
    }

    /// Number of aggregate series, i.e. of aggregation constraints.
    pub fn n_aggregate(&self) -> usize {
        self.n() - self.n_bottom()
    }

    /// The `n x n_b` summing matrix.
    pub fn summing(&self) -> &DMatrix<f64> {
        &self.summing
    }

    /// The `m* x n` constraint block `(I, -S0)`; coherent `y` satisfy
    /// `constraint * y = 0`.
    pub fn constraint(&self) -> &DMatrix<f64> {
        &self.constraint
    }

    /// The `n_b x n` selector `(0, I)` picking bottom series.
    pub fn selector(&self) -> &DMatrix<f64> {
        &self.selector
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn level_names(&self) -> &[String] {
        &self.spec.levels
    }

    pub fn level_of(&self, series: usize) -> &str {
        &self.spec.levels[self.level_of[series]]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Contiguous index range of the series at `level`.
    pub fn level_indices(&self, level: &str) -> Result<Range<usize>> {
        self.spec
            .levels
            .iter()
            .position(|l| l == level)
            .map(|d| self.level_ranges[d].clone())
            .ok_or_else(|| Error::Validation(format!("unknown level {level:?}")))
    }

    pub fn bottom_range(&self) -> Range<usize> {
        self.n_aggregate()..self.n()
    }

    pub fn aggregate_range(&self) -> Range<usize> {
        0..self.n_aggregate()
    }

    /// Indices of `node` and all its descendants, in series order.
    pub fn subtree(&self, node: &str) -> Result<Vec<usize>> {
        let mut names = HashSet::new();
        let mut stack = vec![node];
        if self.index_of(node).is_none() {
            return Err(Error::Validation(format!("unknown series {node:?}")));
        }
        while let Some(cur) = stack.pop() {
            names.insert(cur);
            if let Some(kids) = self.spec.children.get(cur) {
                stack.extend(kids.iter().map(String::as_str));
            }
        }
        Ok((0..self.n())
            .filter(|&i| names.contains(self.labels[i].as_str()))
            .collect())
    }

    /// Max-norm of `constraint * y`.
    pub fn coherence_residual(&self, y: &[f64]) -> f64 {
        let m_star = self.n_aggregate();
        (0..m_star)
            .map(|i| {
                let s: f64 = (0..self.n()).map(|j| self.constraint[(i, j)] * y[j]).sum();
                s.abs()
            })
            .fold(0.0, f64::max)
    }
}
