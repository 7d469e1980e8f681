//! Finite filtered probability spaces as rooted scenario trees.
//!
//! Nodes at depth `t` are the atoms of the stage-`t` sigma-algebra. Nodes are
//! stored breadth-first: all stage-`t` nodes are contiguous, children of one
//! parent are contiguous, and the order is reproducible.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on child-probability sums.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub stage: usize,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Transition probability from the parent (1 for the root).
    pub probability: f64,
    /// Increment realized on entering the node (e.g. a price change).
    pub shock: Vec<f64>,
    path_probability: f64,
}

/// Input record for explicit tree construction. `parent` indexes into the
/// same input list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub parent: Option<usize>,
    #[serde(default = "one")]
    pub probability: f64,
    #[serde(default)]
    pub shock: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

/// One branch of a recombination-free lattice template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub probability: f64,
    #[serde(default)]
    pub shock: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    horizon: usize,
    nodes: Vec<Node>,
    atoms: Vec<Vec<NodeId>>,
}

impl ScenarioTree {
    /// Builds a tree from an arbitrary-order node list and re-indexes it
    /// breadth-first.
    pub fn from_specs(specs: &[NodeSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidTree("no nodes".into()));
        }
        let roots: Vec<usize> = specs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.parent.is_none())
            .map(|(i, _)| i)
            .collect();
        if roots.len() != 1 {
            return Err(Error::InvalidTree(format!(
                "expected exactly one root, found {}",
                roots.len()
            )));
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); specs.len()];
        for (i, s) in specs.iter().enumerate() {
            if let Some(p) = s.parent {
                if p >= specs.len() {
                    return Err(Error::InvalidTree(format!(
                        "node {i} references missing parent {p}"
                    )));
                }
                children[p].push(i);
            }
        }

        // Breadth-first relabelling; unreachable nodes indicate a cycle.
        let mut order = Vec::with_capacity(specs.len());
        let mut depth = vec![usize::MAX; specs.len()];
        let mut queue = VecDeque::new();
        depth[roots[0]] = 0;
        queue.push_back(roots[0]);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &c in &children[i] {
                depth[c] = depth[i] + 1;
                queue.push_back(c);
            }
        }
        if order.len() != specs.len() {
            return Err(Error::InvalidTree(
                "some nodes are not reachable from the root".into(),
            ));
        }
        let mut new_index = vec![0usize; specs.len()];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }

        let nodes: Vec<Node> = order
            .iter()
            .map(|&old| Node {
                stage: depth[old],
                parent: specs[old].parent.map(|p| NodeId(new_index[p])),
                children: children[old].iter().map(|&c| NodeId(new_index[c])).collect(),
                probability: if specs[old].parent.is_none() {
                    1.0
                } else {
                    specs[old].probability
                },
                shock: specs[old].shock.clone(),
                path_probability: 0.0,
            })
            .collect();
        Self::finish(nodes)
    }

    fn finish(mut nodes: Vec<Node>) -> Result<Self> {
        let horizon = nodes.iter().map(|n| n.stage).max().unwrap_or(0);
        if horizon == 0 {
            return Err(Error::InvalidTree("horizon must be at least 1".into()));
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.children.is_empty() && n.stage != horizon {
                return Err(Error::InvalidTree(format!(
                    "leaf n{i} at stage {} but horizon is {horizon}",
                    n.stage
                )));
            }
            if n.parent.is_some() && !(n.probability > 0.0 && n.probability <= 1.0) {
                return Err(Error::InvalidTree(format!(
                    "edge probability {} of n{i} not in (0, 1]",
                    n.probability
                )));
            }
            if !n.children.is_empty() {
                let total: f64 = n.children.iter().map(|c| nodes[c.0].probability).sum();
                if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
                    return Err(Error::InvalidTree(format!(
                        "child probabilities of n{i} sum to {total}"
                    )));
                }
            }
        }
        for i in 0..nodes.len() {
            let p = match nodes[i].parent {
                Some(parent) => nodes[parent.0].path_probability * nodes[i].probability,
                None => 1.0,
            };
            if p <= 0.0 {
                return Err(Error::InvalidTree(format!("n{i} has zero probability")));
            }
            nodes[i].path_probability = p;
        }
        let mut atoms = vec![Vec::new(); horizon + 1];
        for (i, n) in nodes.iter().enumerate() {
            atoms[n.stage].push(NodeId(i));
        }
        Ok(Self {
            horizon,
            nodes,
            atoms,
        })
    }

    /// Full (non-recombining) tree where every non-terminal node has the same
    /// branches.
    pub fn lattice(horizon: usize, branches: &[Branch]) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidTree("horizon must be at least 1".into()));
        }
        if branches.is_empty() {
            return Err(Error::InvalidTree("lattice needs at least one branch".into()));
        }
        let mut specs = vec![NodeSpec {
            parent: None,
            probability: 1.0,
            shock: Vec::new(),
        }];
        let mut frontier = vec![0usize];
        for _ in 0..horizon {
            let mut next = Vec::with_capacity(frontier.len() * branches.len());
            for &parent in &frontier {
                for b in branches {
                    specs.push(NodeSpec {
                        parent: Some(parent),
                        probability: b.probability,
                        shock: b.shock.clone(),
                    });
                    next.push(specs.len() - 1);
                }
            }
            frontier = next;
        }
        Self::from_specs(&specs)
    }

    /// Binomial lattice with scalar shocks `up` (probability `p`) and `down`.
    pub fn binomial(horizon: usize, p: f64, up: f64, down: f64) -> Result<Self> {
        Self::lattice(
            horizon,
            &[
                Branch {
                    probability: p,
                    shock: vec![up],
                },
                Branch {
                    probability: 1.0 - p,
                    shock: vec![down],
                },
            ],
        )
    }

    pub fn trinomial(horizon: usize, probabilities: [f64; 3], shocks: [f64; 3]) -> Result<Self> {
        let branches: Vec<Branch> = probabilities
            .iter()
            .zip(shocks.iter())
            .map(|(&p, &s)| Branch {
                probability: p,
                shock: vec![s],
            })
            .collect();
        Self::lattice(horizon, &branches)
    }

    /// Random tree for property tests: branching in `1..=max_children`,
    /// positive random probabilities, scalar shocks in `[-1, 1]` with both
    /// signs present whenever a node has two or more children.
    pub fn random<R: Rng>(rng: &mut R, horizon: usize, max_children: usize) -> Result<Self> {
        let mut specs = vec![NodeSpec {
            parent: None,
            probability: 1.0,
            shock: Vec::new(),
        }];
        let mut frontier = vec![0usize];
        for _ in 0..horizon {
            let mut next = Vec::new();
            for &parent in &frontier {
                let k = rng.gen_range(1..=max_children.max(1));
                let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
                let total: f64 = weights.iter().sum();
                let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
                let head: f64 = probs[..k - 1].iter().sum();
                probs[k - 1] = 1.0 - head;
                for (j, &p) in probs.iter().enumerate() {
                    let magnitude = rng.gen_range(0.1..1.0);
                    let shock = if k == 1 {
                        0.0
                    } else if j == 0 {
                        magnitude
                    } else if j == 1 {
                        -magnitude
                    } else if rng.gen_bool(0.5) {
                        magnitude
                    } else {
                        -magnitude
                    };
                    specs.push(NodeSpec {
                        parent: Some(parent),
                        probability: p,
                        shock: vec![shock],
                    });
                    next.push(specs.len() - 1);
                }
            }
            frontier = next;
        }
        Self::from_specs(&specs)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn stage(&self, id: NodeId) -> usize {
        self.nodes[id.0].stage
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    pub fn shock(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].shock
    }

    pub fn edge_probability(&self, id: NodeId) -> f64 {
        self.nodes[id.0].probability
    }

    /// Unconditional probability of the node.
    pub fn path_probability(&self, id: NodeId) -> f64 {
        self.nodes[id.0].path_probability
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.0].children.is_empty()
    }

    /// Atoms of the stage-`t` sigma-algebra in stable index order.
    pub fn atoms(&self, t: usize) -> Result<&[NodeId]> {
        self.check_stage(t)?;
        Ok(&self.atoms[t])
    }

    pub(crate) fn check_stage(&self, t: usize) -> Result<()> {
        if t > self.horizon {
            Err(Error::StageOutOfRange {
                stage: t,
                horizon: self.horizon,
            })
        } else {
            Ok(())
        }
    }

    /// Index of `id` within `atoms(stage(id))`.
    pub fn position(&self, id: NodeId) -> usize {
        id.0 - self.atoms[self.stage(id)][0].0
    }

    /// Ancestor of `id` at stage `t <= stage(id)`.
    pub fn ancestor_at(&self, id: NodeId, t: usize) -> NodeId {
        let mut cur = id;
        while self.stage(cur) > t {
            cur = self.parent(cur).expect("non-root node has a parent");
        }
        cur
    }

    /// Conditional distribution over the stage-`s` descendants of `node`.
    /// Nodes outside the subtree carry zero mass and are omitted.
    pub fn conditional_probability(&self, node: NodeId, s: usize) -> Result<Vec<(NodeId, f64)>> {
        self.check_stage(s)?;
        let t = self.stage(node);
        if s < t {
            return Err(Error::StageMismatch {
                expected: t,
                found: s,
            });
        }
        let mut layer = vec![(node, 1.0)];
        for _ in t..s {
            let mut next = Vec::new();
            for (n, p) in layer {
                for &c in self.children(n) {
                    next.push((c, p * self.edge_probability(c)));
                }
            }
            layer = next;
        }
        Ok(layer)
    }

    /// Sum of the shocks along the path from the root to `id` (the root's own
    /// shock is ignored).
    pub fn cumulative_shock(&self, id: NodeId) -> Vec<f64> {
        let mut acc: Vec<f64> = Vec::new();
        let mut cur = id;
        while let Some(parent) = self.parent(cur) {
            let s = self.shock(cur);
            if acc.len() < s.len() {
                acc.resize(s.len(), 0.0);
            }
            for (a, v) in acc.iter_mut().zip(s) {
                *a += v;
            }
            cur = parent;
        }
        acc
    }
}

/// A finite measurable partition of the stage-`t` atoms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePartition {
    stage: usize,
    blocks: Vec<usize>,
    block_count: usize,
}

impl StagePartition {
    /// `blocks[i]` is the block of the `i`-th stage-`t` atom. Block labels
    /// must be `0..k` with every label used.
    pub fn new(tree: &ScenarioTree, stage: usize, blocks: Vec<usize>) -> Result<Self> {
        let atoms = tree.atoms(stage)?;
        if blocks.len() != atoms.len() {
            return Err(Error::InvalidPartition(format!(
                "{} assignments for {} atoms",
                blocks.len(),
                atoms.len()
            )));
        }
        let block_count = blocks.iter().max().map_or(0, |m| m + 1);
        let mut used = vec![false; block_count];
        for &b in &blocks {
            used[b] = true;
        }
        if let Some(empty) = used.iter().position(|u| !u) {
            return Err(Error::InvalidPartition(format!("block {empty} is empty")));
        }
        Ok(Self {
            stage,
            blocks,
            block_count,
        })
    }

    pub fn trivial(tree: &ScenarioTree, stage: usize) -> Result<Self> {
        let n = tree.atoms(stage)?.len();
        Self::new(tree, stage, vec![0; n])
    }

    /// Every atom in its own block.
    pub fn discrete(tree: &ScenarioTree, stage: usize) -> Result<Self> {
        let n = tree.atoms(stage)?.len();
        Self::new(tree, stage, (0..n).collect())
    }

    /// Random partition with at most `max_blocks` blocks.
    pub fn random<R: Rng>(
        tree: &ScenarioTree,
        stage: usize,
        max_blocks: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = tree.atoms(stage)?.len();
        let k = rng.gen_range(1..=max_blocks.max(1).min(n));
        let mut raw: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.gen_range(0..k) }).collect();
        // shuffle which atoms seed the blocks
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            raw.swap(i, j);
        }
        // relabel by first appearance
        let mut map = vec![usize::MAX; k];
        let mut next = 0;
        let blocks = raw
            .into_iter()
            .map(|b| {
                if map[b] == usize::MAX {
                    map[b] = next;
                    next += 1;
                }
                map[b]
            })
            .collect();
        Self::new(tree, stage, blocks)
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn block_count(&self) -> usize {
        self.block_count
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    /// Block of a node at stage `>= self.stage()`, through its ancestor.
    pub fn block_of(&self, tree: &ScenarioTree, node: NodeId) -> usize {
        let a = tree.ancestor_at(node, self.stage);
        self.blocks[tree.position(a)]
    }

    /// The same partition viewed at a later stage `s`.
    pub fn lift(&self, tree: &ScenarioTree, s: usize) -> Result<Self> {
        if s < self.stage {
            return Err(Error::StageMismatch {
                expected: self.stage,
                found: s,
            });
        }
        let blocks = tree
            .atoms(s)?
            .iter()
            .map(|&n| self.block_of(tree, n))
            .collect();
        Ok(Self {
            stage: s,
            blocks,
            block_count: self.block_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn atoms_of_lattices() {
        let b = ScenarioTree::binomial(2, 0.5, 1.0, -1.0).unwrap();
        assert_eq!(b.atoms(1).unwrap().len(), 2);
        assert_eq!(b.atoms(0).unwrap(), &[NodeId(0)]);
        let t = ScenarioTree::trinomial(2, [0.3, 0.3, 0.4], [1.0, 0.0, -1.0]).unwrap();
        assert_eq!(t.atoms(2).unwrap().len(), 9);
        assert!(matches!(b.atoms(3), Err(Error::StageOutOfRange { .. })));
    }

    #[test]
    fn binomial_two_step_kernel() {
        let tree = ScenarioTree::binomial(2, 0.6, 1.0, -1.0).unwrap();
        let probs: Vec<f64> = tree
            .conditional_probability(tree.root(), 2)
            .unwrap()
            .into_iter()
            .map(|(_, p)| p)
            .collect();
        let expected = [0.36, 0.24, 0.24, 0.16];
        for (p, e) in probs.iter().zip(expected) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn leaf_kernel_is_point_mass() {
        let tree = ScenarioTree::binomial(2, 0.6, 1.0, -1.0).unwrap();
        let leaf = tree.atoms(2).unwrap()[3];
        assert_eq!(tree.conditional_probability(leaf, 2).unwrap(), vec![(leaf, 1.0)]);
        assert!(tree.conditional_probability(leaf, 1).is_err());
    }

    #[test]
    fn rejects_bad_trees() {
        let zero = ScenarioTree::binomial(1, 1.0, 1.0, -1.0);
        assert!(matches!(zero, Err(Error::InvalidTree(_))));
        let uneven = ScenarioTree::from_specs(&[
            NodeSpec { parent: None, probability: 1.0, shock: vec![] },
            NodeSpec { parent: Some(0), probability: 0.5, shock: vec![] },
            NodeSpec { parent: Some(0), probability: 0.5, shock: vec![] },
            NodeSpec { parent: Some(1), probability: 1.0, shock: vec![] },
        ]);
        assert!(matches!(uneven, Err(Error::InvalidTree(_))));
        let bad_sum = ScenarioTree::from_specs(&[
            NodeSpec { parent: None, probability: 1.0, shock: vec![] },
            NodeSpec { parent: Some(0), probability: 0.5, shock: vec![] },
            NodeSpec { parent: Some(0), probability: 0.6, shock: vec![] },
        ]);
        assert!(bad_sum.is_err());
        let two_roots = ScenarioTree::from_specs(&[
            NodeSpec { parent: None, probability: 1.0, shock: vec![] },
            NodeSpec { parent: None, probability: 1.0, shock: vec![] },
        ]);
        assert!(two_roots.is_err());
    }

    #[test]
    fn explicit_specs_are_reindexed_breadth_first() {
        // children listed before their parent in the input
        let specs = vec![
            NodeSpec { parent: Some(2), probability: 0.25, shock: vec![1.0] },
            NodeSpec { parent: Some(2), probability: 0.75, shock: vec![-1.0] },
            NodeSpec { parent: None, probability: 1.0, shock: vec![] },
        ];
        let tree = ScenarioTree::from_specs(&specs).unwrap();
        assert_eq!(tree.root(), NodeId(0));
        assert_eq!(tree.children(tree.root()), &[NodeId(1), NodeId(2)]);
        assert_eq!(tree.shock(NodeId(1)), &[1.0]);
        assert_eq!(tree.edge_probability(NodeId(2)), 0.75);
        assert_eq!(tree.cumulative_shock(NodeId(2)), vec![-1.0]);
    }

    #[test]
    fn random_trees_have_normalized_kernels_and_tower_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let tree = ScenarioTree::random(&mut rng, 3, 3).unwrap();
            for n in 0..tree.len() {
                let id = NodeId(n);
                for s in tree.stage(id)..=tree.horizon() {
                    let total: f64 = tree.conditional_probability(id, s).unwrap().iter().map(|x| x.1).sum();
                    assert!((total - 1.0).abs() < 1e-12);
                }
            }
            let direct = tree.conditional_probability(tree.root(), 2).unwrap();
            for (leaf, p) in direct {
                let mid = tree.ancestor_at(leaf, 1);
                let composed = tree.edge_probability(mid) * tree.edge_probability(leaf);
                assert!((composed - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn partitions_lift_through_ancestors() {
        let tree = ScenarioTree::binomial(2, 0.5, 1.0, -1.0).unwrap();
        let p = StagePartition::new(&tree, 1, vec![0, 1]).unwrap();
        let lifted = p.lift(&tree, 2).unwrap();
        assert_eq!(lifted.blocks(), &[0, 0, 1, 1]);
        assert!(StagePartition::new(&tree, 1, vec![1, 1]).is_err());
    }
}
