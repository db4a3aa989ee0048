//! Conditional probability trees.
//!
//! A binary tree whose leaves are labels. Every node carries a regressor
//! `f_i(x)` estimating the probability that the label lies in the node's RIGHT
//! subtree given that the example reached the node; a label's probability is
//! the product of the matching factors `f_i(x)` or `1 - f_i(x)` along its
//! root-to-leaf path.
//!
//! Trees are either fixed up front ([`Tree::from_shape`], [`Tree::balanced`])
//! and trained with [`Tree::batch_train`], or grown online: each previously
//! unseen label descends from the root, steered at every node by the
//! [`obj`](objective::obj) rule (or a fair coin for random trees), and splits
//! the leaf it lands on.

pub mod bounds;
pub mod objective;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{Error, Result};
use crate::features::{Example, LabelToken, SparseVector};
use crate::regressor::{LearningRate, RegressorBank, RegressorId};

pub use objective::{depth_bound, forced_left, forced_right, kappa, obj, route, side_within_bound, Bound};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

/// Branch taken at an internal node. As a regression target, right is `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Left = 0,
    Right = 1,
}

impl Direction {
    pub fn target(self) -> f64 {
        match self {
            Direction::Left => 0.0,
            Direction::Right => 1.0,
        }
    }

    /// Probability of this branch when the node predicts `p` for the right one.
    pub fn factor(self, p: f64) -> f64 {
        match self {
            Direction::Left => 1.0 - p,
            Direction::Right => p,
        }
    }

    pub fn preferred_by(p: f64) -> Direction {
        if p > 0.5 {
            Direction::Right
        } else {
            Direction::Left
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub node: NodeId,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Leaf(LabelToken),
    Internal { left: NodeId, right: NodeId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub regressor: RegressorId,
    /// Leaves below the left child; zero on leaves.
    pub left_leaves: u32,
    pub right_leaves: u32,
    pub parent: Option<NodeId>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf(_))
    }

    pub fn leaves(&self) -> u32 {
        if self.is_leaf() {
            1
        } else {
            self.left_leaves + self.right_leaves
        }
    }
}

/// How unseen labels are placed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Growth {
    /// Descend by the sign of `obj(f_i(x), L_i, R_i, alpha)`.
    Objective { alpha: f64 },
    /// Descend by a fair coin derived from `seed`, the insertion count and the node.
    Random { seed: u64 },
    /// The label set is frozen; unseen labels are not added.
    Fixed,
}

/// Binary label structure used to build fixed trees.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Leaf(LabelToken),
    Split(Box<Shape>, Box<Shape>),
}

impl Shape {
    pub fn split(left: Shape, right: Shape) -> Shape {
        Shape::Split(Box::new(left), Box::new(right))
    }

    /// Halves the label list recursively; the left half takes the extra label.
    pub fn balanced(labels: &[LabelToken]) -> Result<Shape> {
        match labels {
            [] => Err(Error::precondition("a tree needs at least one label")),
            [one] => Ok(Shape::Leaf(one.clone())),
            _ => {
                let mid = labels.len().div_ceil(2);
                Ok(Shape::split(Shape::balanced(&labels[..mid])?, Shape::balanced(&labels[mid..])?))
            }
        }
    }
}

/// One decision made while inserting a new label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsertStep {
    pub node: NodeId,
    /// `f_i(x)` before the node was trained on this example.
    pub prediction: f64,
    /// Leaf counts before the insertion.
    pub left_leaves: u32,
    pub right_leaves: u32,
    pub direction: Direction,
    pub disagreement: bool,
}

/// What [`Tree::insert_new`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct InsertTrace {
    pub leaf: NodeId,
    pub steps: Vec<InsertStep>,
    /// The leaf that was split, if the tree was not empty.
    pub split: Option<NodeId>,
}

/// Leaf counts of one internal node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NodeCounts {
    pub node: NodeId,
    pub left: u32,
    pub right: u32,
}

impl NodeCounts {
    pub fn total(&self) -> u32 {
        self.left + self.right
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthStats {
    pub max_depth: usize,
    pub total_leaf_depth: u64,
    pub leaves: usize,
    pub nodes: Vec<NodeCounts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    root: Option<NodeId>,
    labels: HashMap<LabelToken, NodeId>,
    growth: Growth,
    bank: RegressorBank,
    disagreements: u64,
    insertions: u64,
}

impl Tree {
    /// An empty tree that grows as labels arrive.
    pub fn new(growth: Growth, rate: LearningRate) -> Result<Self> {
        if let Growth::Objective { alpha } = growth {
            objective::check_alpha(alpha)?;
        }
        Ok(Self {
            nodes: Vec::new(),
            root: None,
            labels: HashMap::new(),
            growth,
            bank: RegressorBank::new(rate),
            disagreements: 0,
            insertions: 0,
        })
    }

    /// Online tree with the objective rule.
    pub fn online(alpha: f64, rate: LearningRate) -> Result<Self> {
        Self::new(Growth::Objective { alpha }, rate)
    }

    /// A fixed tree with the given structure and fresh regressors everywhere.
    pub fn from_shape(shape: &Shape, rate: LearningRate) -> Result<Self> {
        let mut tree = Self::new(Growth::Fixed, rate)?;
        let root = tree.add_shape(shape, None)?;
        tree.root = Some(root);
        Ok(tree)
    }

    /// A fixed, balanced tree over `labels` (in the given order).
    pub fn balanced(labels: &[LabelToken], rate: LearningRate) -> Result<Self> {
        Self::from_shape(&Shape::balanced(labels)?, rate)
    }

    fn add_shape(&mut self, shape: &Shape, parent: Option<NodeId>) -> Result<NodeId> {
        let id = NodeId(self.nodes.len() as u32);
        let regressor = self.bank.push_fresh();
        match shape {
            Shape::Leaf(label) => {
                if self.labels.insert(label.clone(), id).is_some() {
                    return Err(Error::precondition(format!("label `{label}` appears twice in the shape")));
                }
                self.nodes.push(Node {
                    kind: NodeKind::Leaf(label.clone()),
                    regressor,
                    left_leaves: 0,
                    right_leaves: 0,
                    parent,
                });
            }
            Shape::Split(left, right) => {
                // Placeholder children until both subtrees exist.
                self.nodes.push(Node {
                    kind: NodeKind::Internal { left: id, right: id },
                    regressor,
                    left_leaves: 0,
                    right_leaves: 0,
                    parent,
                });
                let l = self.add_shape(left, Some(id))?;
                let r = self.add_shape(right, Some(id))?;
                let (ll, rl) = (self.nodes[l.0 as usize].leaves(), self.nodes[r.0 as usize].leaves());
                let node = &mut self.nodes[id.0 as usize];
                node.kind = NodeKind::Internal { left: l, right: r };
                node.left_leaves = ll;
                node.right_leaves = rl;
            }
        }
        Ok(id)
    }

    pub fn growth(&self) -> Growth {
        self.growth
    }

    pub fn root(&self) -> Option<NodeId> {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0 as usize]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i as u32), n))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of labels (leaves).
    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn contains(&self, y: &LabelToken) -> bool {
        self.labels.contains_key(y)
    }

    pub fn leaf_of(&self, y: &LabelToken) -> Option<NodeId> {
        self.labels.get(y).copied()
    }

    /// Labels sorted by name.
    pub fn labels(&self) -> Vec<&LabelToken> {
        let mut labels: Vec<_> = self.labels.keys().collect();
        labels.sort();
        labels
    }

    pub fn bank(&self) -> &RegressorBank {
        &self.bank
    }

    pub fn bank_mut(&mut self) -> &mut RegressorBank {
        &mut self.bank
    }

    /// Insertions routed against the node regressor's preference, summed over the build.
    pub fn disagreements(&self) -> u64 {
        self.disagreements
    }

    pub fn insertions(&self) -> u64 {
        self.insertions
    }

    /// `f_i(x)` of a node.
    pub fn node_prediction(&self, id: NodeId, x: &SparseVector) -> f64 {
        self.bank.predict(self.node(id).regressor, x)
    }

    /// Root-to-leaf internal steps for `y`; empty when `y` is the root leaf.
    pub fn path(&self, y: &LabelToken) -> Result<Vec<PathStep>> {
        let leaf = self.leaf_of(y).ok_or_else(|| Error::UnknownLabel(y.to_string()))?;
        let mut steps = Vec::new();
        let mut child = leaf;
        while let Some(parent) = self.node(child).parent {
            let direction = match self.node(parent).kind {
                NodeKind::Internal { right, .. } if right == child => Direction::Right,
                _ => Direction::Left,
            };
            steps.push(PathStep { node: parent, direction });
            child = parent;
        }
        steps.reverse();
        Ok(steps)
    }

    /// Estimated `P(y | x)`; zero for labels the tree has not seen.
    pub fn predict_q(&self, x: &SparseVector, y: &LabelToken) -> f64 {
        self.predict_q_by(y, |node| self.node_prediction(node, x))
    }

    /// Path product with node outputs supplied by `right_probability`.
    pub fn predict_q_by(&self, y: &LabelToken, mut right_probability: impl FnMut(NodeId) -> f64) -> f64 {
        match self.path(y) {
            Ok(path) => path.iter().map(|s| s.direction.factor(right_probability(s.node))).product(),
            Err(_) => 0.0,
        }
    }

    /// Trains every node on the path of a known label with its branch, and the
    /// label's leaf regressor with target `0`. Structure is unchanged.
    pub fn train_seen(&mut self, x: &SparseVector, y: &LabelToken) -> Result<()> {
        let path = self.path(y)?;
        for step in &path {
            let regressor = self.node(step.node).regressor;
            self.bank.update(regressor, x, step.direction.target());
        }
        let leaf = self.labels[y];
        let regressor = self.node(leaf).regressor;
        self.bank.update(regressor, x, 0.0);
        Ok(())
    }

    fn choose(&self, node: NodeId, p: f64) -> Result<Direction> {
        let n = self.node(node);
        match self.growth {
            Growth::Objective { alpha } => Ok(route(p, n.left_leaves, n.right_leaves, alpha)),
            Growth::Random { seed } => {
                let mut key = [0u8; 12];
                key[..8].copy_from_slice(&self.insertions.to_le_bytes());
                key[8..].copy_from_slice(&node.0.to_le_bytes());
                Ok(if xxh3_64_with_seed(&key, seed) & 1 == 1 { Direction::Right } else { Direction::Left })
            }
            Growth::Fixed => Err(Error::precondition("cannot add labels to a fixed tree")),
        }
    }

    /// Adds an unseen label, training each node passed on the chosen branch.
    pub fn insert_new(&mut self, x: &SparseVector, y: &LabelToken) -> Result<InsertTrace> {
        if self.contains(y) {
            return Err(Error::precondition(format!("label `{y}` is already in the tree")));
        }
        if self.growth == Growth::Fixed {
            return Err(Error::precondition("cannot add labels to a fixed tree"));
        }
        let Some(root) = self.root else {
            let regressor = self.bank.push_fresh();
            self.nodes.push(Node {
                kind: NodeKind::Leaf(y.clone()),
                regressor,
                left_leaves: 0,
                right_leaves: 0,
                parent: None,
            });
            let id = NodeId(0);
            self.root = Some(id);
            self.labels.insert(y.clone(), id);
            self.insertions += 1;
            return Ok(InsertTrace { leaf: id, steps: Vec::new(), split: None });
        };

        let mut steps = Vec::new();
        let mut current = root;
        while let NodeKind::Internal { left, right } = self.node(current).kind {
            let regressor = self.node(current).regressor;
            let p = self.bank.predict(regressor, x);
            let direction = self.choose(current, p)?;
            let disagreement = direction != Direction::preferred_by(p);
            let node = &self.nodes[current.0 as usize];
            steps.push(InsertStep {
                node: current,
                prediction: p,
                left_leaves: node.left_leaves,
                right_leaves: node.right_leaves,
                direction,
                disagreement,
            });
            self.disagreements += disagreement as u64;
            self.bank.update(regressor, x, direction.target());
            let node = &mut self.nodes[current.0 as usize];
            match direction {
                Direction::Left => node.left_leaves += 1,
                Direction::Right => node.right_leaves += 1,
            }
            current = match direction {
                Direction::Left => left,
                Direction::Right => right,
            };
        }

        // `current` is the leaf j holding y'. It becomes internal; its left child
        // is a copy of it (regressor included) and its right child is y.
        let split = current;
        let NodeKind::Leaf(previous) = self.node(split).kind.clone() else {
            unreachable!("descent ends at a leaf")
        };
        let split_regressor = self.node(split).regressor;
        let left = NodeId(self.nodes.len() as u32);
        let copied = self.bank.duplicate(split_regressor);
        self.nodes.push(Node {
            kind: NodeKind::Leaf(previous.clone()),
            regressor: copied,
            left_leaves: 0,
            right_leaves: 0,
            parent: Some(split),
        });
        let right = NodeId(self.nodes.len() as u32);
        let fresh = self.bank.push_fresh();
        self.bank.update(fresh, x, 0.0);
        self.nodes.push(Node {
            kind: NodeKind::Leaf(y.clone()),
            regressor: fresh,
            left_leaves: 0,
            right_leaves: 0,
            parent: Some(split),
        });
        let node = &mut self.nodes[split.0 as usize];
        node.kind = NodeKind::Internal { left, right };
        node.left_leaves = 1;
        node.right_leaves = 1;
        self.bank.update(split_regressor, x, 1.0);
        self.labels.insert(previous, left);
        self.labels.insert(y.clone(), right);
        self.insertions += 1;
        Ok(InsertTrace { leaf: right, steps, split: Some(split) })
    }

    /// Trains on one example: known labels update their path, unseen ones are
    /// inserted. Returns `false` when a fixed tree ignored an unseen label.
    pub fn learn(&mut self, x: &SparseVector, y: &LabelToken) -> Result<bool> {
        if self.contains(y) {
            self.train_seen(x, y)?;
            Ok(true)
        } else if self.growth == Growth::Fixed {
            Ok(false)
        } else {
            self.insert_new(x, y)?;
            Ok(true)
        }
    }

    /// Streams `passes` passes of per-example path updates over a fixed label set.
    pub fn batch_train(&mut self, examples: &[Example], passes: usize) -> Result<()> {
        if let Some(missing) = examples.iter().find(|e| !self.contains(&e.y)) {
            return Err(Error::UnknownLabel(missing.y.to_string()));
        }
        for _ in 0..passes {
            for example in examples {
                self.train_seen(&example.x, &example.y)?;
            }
        }
        Ok(())
    }

    pub fn depth_stats(&self) -> DepthStats {
        let mut stats = DepthStats { max_depth: 0, total_leaf_depth: 0, leaves: 0, nodes: Vec::new() };
        let Some(root) = self.root else { return stats };
        let mut stack = vec![(root, 0usize)];
        while let Some((id, depth)) = stack.pop() {
            let node = self.node(id);
            match node.kind {
                NodeKind::Leaf(_) => {
                    stats.leaves += 1;
                    stats.total_leaf_depth += depth as u64;
                    stats.max_depth = stats.max_depth.max(depth);
                }
                NodeKind::Internal { left, right } => {
                    stats.nodes.push(NodeCounts { node: id, left: node.left_leaves, right: node.right_leaves });
                    stack.push((right, depth + 1));
                    stack.push((left, depth + 1));
                }
            }
        }
        stats.nodes.sort_by_key(|c| c.node);
        stats
    }

    /// Checks that the tree is a tree, leaf counts are exact and the label
    /// index is a bijection onto the leaves.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Format(msg));
        let Some(root) = self.root else {
            return if self.nodes.is_empty() && self.labels.is_empty() {
                Ok(())
            } else {
                bad("tree without root has nodes".into())
            };
        };
        if self.node(root).parent.is_some() {
            return bad("root has a parent".into());
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut leaves_below = vec![0u32; self.nodes.len()];
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            let i = id.0 as usize;
            if i >= self.nodes.len() || seen[i] {
                return bad(format!("node {i} missing or reached twice"));
            }
            seen[i] = true;
            order.push(id);
            if self.node(id).regressor.0 as usize >= self.bank.len() {
                return bad(format!("node {i} points at a missing regressor"));
            }
            if let NodeKind::Internal { left, right } = self.node(id).kind {
                for child in [left, right] {
                    if self.nodes.get(child.0 as usize).and_then(|c| c.parent) != Some(id) {
                        return bad(format!("child {} of node {i} has the wrong parent", child.0));
                    }
                    stack.push(child);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("unreachable nodes".into());
        }
        let mut leaf_count = 0;
        for id in order.iter().rev() {
            let node = self.node(*id);
            match &node.kind {
                NodeKind::Leaf(label) => {
                    leaf_count += 1;
                    leaves_below[id.0 as usize] = 1;
                    if self.labels.get(label) != Some(id) {
                        return bad(format!("label index disagrees for `{label}`"));
                    }
                }
                NodeKind::Internal { left, right } => {
                    let (l, r) = (leaves_below[left.0 as usize], leaves_below[right.0 as usize]);
                    if (l, r) != (node.left_leaves, node.right_leaves) {
                        return bad(format!("node {} counts ({}, {}) but has ({l}, {r})", id.0, node.left_leaves, node.right_leaves));
                    }
                    leaves_below[id.0 as usize] = l + r;
                }
            }
        }
        if leaf_count != self.labels.len() {
            return bad("label index has entries without leaves".into());
        }
        Ok(())
    }

    pub(crate) fn from_parts(
        nodes: Vec<Node>,
        root: Option<NodeId>,
        growth: Growth,
        bank: RegressorBank,
        disagreements: u64,
        insertions: u64,
    ) -> Result<Self> {
        let labels = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match &n.kind {
                NodeKind::Leaf(label) => Some((label.clone(), NodeId(i as u32))),
                NodeKind::Internal { .. } => None,
            })
            .collect();
        let tree = Self { nodes, root, labels, growth, bank, disagreements, insertions };
        tree.validate()?;
        Ok(tree)
    }

    pub(crate) fn raw_nodes(&self) -> &[Node] {
        &self.nodes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureHasher;
    use crate::regressor::Regressor;
    use proptest::prelude::*;

    fn label(s: &str) -> LabelToken {
        LabelToken::new(s).unwrap()
    }

    fn leaf(s: &str) -> Shape {
        Shape::Leaf(label(s))
    }

    fn x(tokens: &[&str]) -> SparseVector {
        let h = FeatureHasher::with_bits(12).unwrap();
        SparseVector::from_pairs(tokens.iter().map(|t| (h.index(t), 1.0)), 12).unwrap()
    }

    fn rate() -> LearningRate {
        LearningRate::default()
    }

    fn structure(tree: &Tree) -> Vec<(NodeKind, u32, u32, Option<NodeId>)> {
        tree.nodes().map(|(_, n)| (n.kind.clone(), n.left_leaves, n.right_leaves, n.parent)).collect()
    }

    #[test]
    fn path_examples() {
        let single = Tree::from_shape(&leaf("a"), rate()).unwrap();
        assert!(single.path(&label("a")).unwrap().is_empty());

        let two = Tree::from_shape(&Shape::split(leaf("a"), leaf("b")), rate()).unwrap();
        let root = two.root().unwrap();
        assert_eq!(two.path(&label("b")).unwrap(), vec![PathStep { node: root, direction: Direction::Right }]);

        // ((c, b), a): c sits two lefts below the root.
        let chain = Tree::from_shape(&Shape::split(Shape::split(leaf("c"), leaf("b")), leaf("a")), rate()).unwrap();
        let path = chain.path(&label("c")).unwrap();
        assert_eq!(path.len(), 2);
        let mut at = chain.root().unwrap();
        for step in &path {
            assert_eq!(step.node, at);
            let NodeKind::Internal { left, right } = chain.node(at).kind else { panic!() };
            at = if step.direction == Direction::Left { left } else { right };
        }
        assert_eq!(chain.node(at).kind, NodeKind::Leaf(label("c")));
        assert!(matches!(chain.path(&label("zz")), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn predict_q_examples() {
        let v = x(&["w"]);
        let single = Tree::from_shape(&leaf("a"), rate()).unwrap();
        assert_eq!(single.predict_q(&v, &label("a")), 1.0);
        assert_eq!(single.predict_q(&v, &label("unseen")), 0.0);

        let mut two = Tree::from_shape(&Shape::split(leaf("a"), leaf("b")), rate()).unwrap();
        let root_reg = two.node(two.root().unwrap()).regressor;
        two.bank_mut().set(root_reg, Regressor::from_parts(0.3, [], 0));
        assert!((two.predict_q(&v, &label("a")) - 0.7).abs() < 1e-15);
        assert!((two.predict_q(&v, &label("b")) - 0.3).abs() < 1e-15);

        // a, (b, c): c is right, right.
        let mut deep = Tree::from_shape(&Shape::split(leaf("a"), Shape::split(leaf("b"), leaf("c"))), rate()).unwrap();
        let path = deep.path(&label("c")).unwrap();
        for (step, p) in path.iter().zip([0.6, 0.25]) {
            let reg = deep.node(step.node).regressor;
            deep.bank_mut().set(reg, Regressor::from_parts(p, [], 0));
        }
        assert!((deep.predict_q(&v, &label("c")) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn train_seen_updates_path_and_leaf_only() {
        let mut tree = Tree::from_shape(&Shape::split(leaf("a"), leaf("b")), rate()).unwrap();
        let v = x(&["w1", "w2"]);
        let before = structure(&tree);
        let root = tree.root().unwrap();
        let root_reg = tree.node(root).regressor;
        let b_reg = tree.node(tree.leaf_of(&label("b")).unwrap()).regressor;
        let a_reg = tree.node(tree.leaf_of(&label("a")).unwrap()).regressor;
        tree.train_seen(&v, &label("b")).unwrap();
        assert!(tree.bank().predict(root_reg, &v) > 0.5);
        assert!(tree.bank().predict(b_reg, &v) < 0.5);
        assert_eq!(tree.bank().get(a_reg).update_count(), 0);
        assert_eq!(tree.bank().get(root_reg).update_count(), 1);
        assert_eq!(tree.bank().get(b_reg).update_count(), 1);
        assert_eq!(structure(&tree), before);
    }

    #[test]
    fn insert_into_empty_tree_trains_nothing() {
        let mut tree = Tree::online(0.5, rate()).unwrap();
        let trace = tree.insert_new(&x(&["w"]), &label("a")).unwrap();
        assert_eq!(tree.root(), Some(trace.leaf));
        assert_eq!(tree.bank().updates_applied(), 0);
        assert!(trace.steps.is_empty());
        assert!(tree.insert_new(&x(&["w"]), &label("a")).is_err());
    }

    #[test]
    fn insert_splits_a_single_leaf() {
        let mut tree = Tree::online(0.5, rate()).unwrap();
        let v = x(&["w"]);
        tree.insert_new(&x(&["other"]), &label("old")).unwrap();
        let root = tree.root().unwrap();
        let old_reg = tree.node(root).regressor;
        let snapshot = tree.bank().get(old_reg).clone();
        let trace = tree.insert_new(&v, &label("new")).unwrap();
        assert_eq!(trace.split, Some(root));
        let NodeKind::Internal { left, right } = tree.node(root).kind else { panic!("root should be internal") };
        assert_eq!(tree.node(left).kind, NodeKind::Leaf(label("old")));
        assert_eq!(tree.node(right).kind, NodeKind::Leaf(label("new")));
        assert_ne!(left, root);
        // The copy holds the pre-split regressor; the root then learned (x, 1).
        assert_eq!(tree.bank().get(tree.node(left).regressor), &snapshot);
        assert!(tree.bank().predict(old_reg, &v) > 0.5);
        assert!(tree.bank().predict(tree.node(right).regressor, &v) < 0.5);
        assert_eq!(tree.bank().get(tree.node(right).regressor).update_count(), 1);
        assert_eq!((tree.node(root).left_leaves, tree.node(root).right_leaves), (1, 1));
        tree.validate().unwrap();
    }

    #[test]
    fn alpha_one_builds_perfectly_balanced_trees() {
        for k in 0..=8u32 {
            let mut tree = Tree::online(1.0, rate()).unwrap();
            let v = x(&["same"]);
            for i in 0..(1u32 << k) {
                tree.insert_new(&v, &label(&format!("l{i}"))).unwrap();
            }
            let stats = tree.depth_stats();
            assert_eq!(stats.max_depth, k as usize);
            assert_eq!(stats.total_leaf_depth, (k as u64) << k);
            assert!(stats.nodes.iter().all(|c| c.left == c.right));
        }
    }

    #[test]
    fn depth_stats_examples() {
        let single = Tree::from_shape(&leaf("a"), rate()).unwrap();
        let s = single.depth_stats();
        assert_eq!((s.max_depth, s.total_leaf_depth, s.nodes.len()), (0, 0, 0));

        let labels: Vec<_> = (0..8).map(|i| label(&format!("y{i}"))).collect();
        let tree = Tree::balanced(&labels, rate()).unwrap();
        let s = tree.depth_stats();
        assert_eq!((s.max_depth, s.total_leaf_depth, s.leaves), (3, 24, 8));
        assert_eq!(s.nodes.len(), 7);
    }

    #[test]
    fn batch_train_counts_updates() {
        let labels: Vec<_> = (0..8).map(|i| label(&format!("y{i}"))).collect();
        let mut tree = Tree::balanced(&labels, rate()).unwrap();
        tree.batch_train(&[], 3).unwrap();
        assert_eq!(tree.bank().updates_applied(), 0);

        let example = Example { x: x(&["w"]), y: label("y5") };
        tree.batch_train(std::slice::from_ref(&example), 1).unwrap();
        assert_eq!(tree.bank().updates_applied(), 3 + 1);

        let missing = Example { x: x(&["w"]), y: label("nope") };
        assert!(matches!(tree.batch_train(&[example, missing], 1), Err(Error::UnknownLabel(_))));
        assert_eq!(tree.bank().updates_applied(), 4);
    }

    #[test]
    fn two_passes_repeat_one_pass() {
        let labels: Vec<_> = (0..5).map(|i| label(&format!("y{i}"))).collect();
        let data: Vec<_> = (0..20)
            .map(|i| Example { x: x(&[&format!("f{}", i % 3)]), y: labels[i % 5].clone() })
            .collect();
        let mut twice = Tree::balanced(&labels, rate()).unwrap();
        twice.batch_train(&data, 2).unwrap();
        let mut manual = Tree::balanced(&labels, rate()).unwrap();
        manual.batch_train(&data, 1).unwrap();
        manual.batch_train(&data, 1).unwrap();
        assert_eq!(twice, manual);
    }

    #[test]
    fn fixed_trees_ignore_unseen_labels() {
        let mut tree = Tree::from_shape(&Shape::split(leaf("a"), leaf("b")), rate()).unwrap();
        assert!(!tree.learn(&x(&["w"]), &label("c")).unwrap());
        assert!(tree.insert_new(&x(&["w"]), &label("c")).is_err());
        assert!(tree.learn(&x(&["w"]), &label("a")).unwrap());
    }

    #[test]
    fn shapes_reject_duplicate_labels() {
        assert!(Tree::from_shape(&Shape::split(leaf("a"), leaf("a")), rate()).is_err());
        assert!(Shape::balanced(&[]).is_err());
    }

    #[test]
    fn random_growth_is_seeded() {
        let build = |seed| {
            let mut tree = Tree::new(Growth::Random { seed }, rate()).unwrap();
            for i in 0..200 {
                tree.insert_new(&x(&["c"]), &label(&format!("l{i}"))).unwrap();
            }
            tree
        };
        assert_eq!(build(3), build(3));
        assert_ne!(build(3).depth_stats(), build(4).depth_stats());
    }

    fn random_shape(labels: &[LabelToken], rng: &mut impl rand::Rng) -> Shape {
        if labels.len() == 1 {
            return Shape::Leaf(labels[0].clone());
        }
        let cut = rng.gen_range(1..labels.len());
        Shape::split(random_shape(&labels[..cut], rng), random_shape(&labels[cut..], rng))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn leaf_probabilities_sum_to_one(seed in any::<u64>(), n in 1usize..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<_> = (0..n).map(|i| label(&format!("l{i}"))).collect();
            let mut tree = Tree::from_shape(&random_shape(&labels, &mut rng), rate()).unwrap();
            let ids: Vec<_> = tree.nodes().map(|(_, n)| n.regressor).collect();
            for id in ids {
                let weights: Vec<(u64, f64)> = (0..4).map(|_| (rng.gen_range(0..64), rng.gen_range(-1.0..1.0))).collect();
                tree.bank_mut().set(id, Regressor::from_parts(rng.gen_range(-0.5..1.5), weights, 0));
            }
            let v = SparseVector::from_pairs((0..64).map(|i| (i, rng.gen_range(-1.0..1.0))), 12).unwrap();
            let total: f64 = labels.iter().map(|y| tree.predict_q(&v, y)).sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "{}", total);
        }

        #[test]
        fn online_builds_respect_balance_and_disagreement_accounting(
            alpha in 0.05f64..=1.0,
            n in 2usize..300,
            seed in any::<u64>(),
            constant_x in any::<bool>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut tree = Tree::online(alpha, LearningRate::new(0.3, 0.0).unwrap()).unwrap();
            for i in 0..n {
                let v = if constant_x { x(&["c"]) } else { x(&[&format!("f{}", rng.gen_range(0..20))]) };
                let trace = tree.insert_new(&v, &label(&format!("l{i}"))).unwrap();
                for s in &trace.steps {
                    if forced_left(s.left_leaves, s.right_leaves, alpha) {
                        prop_assert_eq!(s.direction, Direction::Left);
                    }
                    if forced_right(s.left_leaves, s.right_leaves, alpha) {
                        prop_assert_eq!(s.direction, Direction::Right);
                    }
                    let node = tree.node(s.node);
                    let total = node.left_leaves + node.right_leaves;
                    prop_assert!(side_within_bound(node.left_leaves, total, alpha, Bound::Inclusive));
                    prop_assert!(side_within_bound(node.right_leaves, total, alpha, Bound::Inclusive));
                }
            }
            tree.validate().unwrap();
            let stats = tree.depth_stats();
            prop_assert!(stats.max_depth as f64 <= depth_bound(n, alpha).unwrap() + 1e-9);
            prop_assert!(tree.disagreements() <= stats.total_leaf_depth);
        }
    }
}
