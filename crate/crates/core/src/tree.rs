//! Binary tree over the discrete states.
//!
//! Nodes are numbered breadth-first with the root at index 0. Leaves are
//! ordered by a left-to-right traversal and that order defines the discrete
//! state index `k = 0..K`.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 0 {
            write!(f, "root")
        } else {
            write!(f, "node{}", self.0)
        }
    }
}

/// One step of a root-to-leaf route: the internal node and whether the route
/// takes its left branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Turn {
    pub node: NodeId,
    pub left: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyRepr", into = "TopologyRepr")]
pub struct TreeTopology {
    parent: Vec<Option<NodeId>>,
    children: Vec<Option<(NodeId, NodeId)>>,
    depth: Vec<usize>,
    leaves: Vec<NodeId>,
    leaf_index: Vec<Option<usize>>,
    internal: Vec<NodeId>,
    internal_index: Vec<Option<usize>>,
    routes: Vec<Vec<Turn>>,
}

impl TreeTopology {
    /// Balanced tree when `num_leaves` is a power of two, otherwise a
    /// left-leaning tree: a node with `m` leaves below it gives `ceil(m/2)`
    /// to its left child.
    pub fn build(num_leaves: usize) -> Result<Self> {
        Self::build_with(num_leaves, |m| m.div_ceil(2))
    }

    /// Caterpillar tree whose stick-breaking coincides with sequential
    /// stick-breaking: internal node `j` sends its left branch to leaf `j`.
    pub fn sequential(num_leaves: usize) -> Result<Self> {
        Self::build_with(num_leaves, |_| 1)
    }

    fn build_with(num_leaves: usize, left_share: impl Fn(usize) -> usize) -> Result<Self> {
        if num_leaves == 0 {
            return Err(Error::invalid("a tree needs at least one leaf"));
        }
        let mut children: Vec<Option<(NodeId, NodeId)>> = vec![None];
        let mut queue = VecDeque::from([(NodeId::ROOT, num_leaves)]);
        while let Some((node, m)) = queue.pop_front() {
            if m > 1 {
                let l = left_share(m);
                let left = NodeId(children.len());
                let right = NodeId(children.len() + 1);
                children.push(None);
                children.push(None);
                children[node.0] = Some((left, right));
                queue.push_back((left, l));
                queue.push_back((right, m - l));
            }
        }
        Self::from_children(children)
    }

    /// Builds and validates a topology from per-node child pairs.
    pub fn from_children(children: Vec<Option<(NodeId, NodeId)>>) -> Result<Self> {
        let n = children.len();
        if n == 0 {
            return Err(Error::invalid("empty tree"));
        }
        let mut parent = vec![None; n];
        for (i, ch) in children.iter().enumerate() {
            if let Some((l, r)) = ch {
                for c in [l, r] {
                    if c.0 >= n || c.0 == 0 {
                        return Err(Error::invalid(format!("node {i} has invalid child {}", c.0)));
                    }
                    if parent[c.0].is_some() {
                        return Err(Error::invalid(format!("node {} has two parents", c.0)));
                    }
                    parent[c.0] = Some(NodeId(i));
                }
                if l == r {
                    return Err(Error::invalid(format!("node {i} lists the same child twice")));
                }
            }
        }
        // Depths and reachability from the root.
        let mut depth = vec![usize::MAX; n];
        depth[0] = 0;
        let mut queue = VecDeque::from([NodeId::ROOT]);
        let mut seen = 1;
        while let Some(node) = queue.pop_front() {
            if let Some((l, r)) = children[node.0] {
                for c in [l, r] {
                    if depth[c.0] != usize::MAX {
                        return Err(Error::invalid("tree contains a cycle"));
                    }
                    depth[c.0] = depth[node.0] + 1;
                    seen += 1;
                    queue.push_back(c);
                }
            }
        }
        if seen != n {
            return Err(Error::invalid("tree has nodes unreachable from the root"));
        }

        // Left-to-right leaf order with the route to each leaf.
        let mut leaves = Vec::new();
        let mut routes = Vec::new();
        let mut stack = vec![(NodeId::ROOT, Vec::<Turn>::new())];
        while let Some((node, route)) = stack.pop() {
            match children[node.0] {
                Some((l, r)) => {
                    let mut right_route = route.clone();
                    right_route.push(Turn { node, left: false });
                    let mut left_route = route;
                    left_route.push(Turn { node, left: true });
                    stack.push((r, right_route));
                    stack.push((l, left_route));
                }
                None => {
                    leaves.push(node);
                    routes.push(route);
                }
            }
        }
        let mut leaf_index = vec![None; n];
        for (k, leaf) in leaves.iter().enumerate() {
            leaf_index[leaf.0] = Some(k);
        }
        let internal: Vec<NodeId> = (0..n)
            .filter(|&i| children[i].is_some())
            .map(NodeId)
            .collect();
        let mut internal_index = vec![None; n];
        for (j, node) in internal.iter().enumerate() {
            internal_index[node.0] = Some(j);
        }
        Ok(TreeTopology {
            parent,
            children,
            depth,
            leaves,
            leaf_index,
            internal,
            internal_index,
            routes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.parent.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn num_internal(&self) -> usize {
        self.internal.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.num_nodes()).map(NodeId)
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn internal_nodes(&self) -> &[NodeId] {
        &self.internal
    }

    pub fn contains(&self, n: NodeId) -> bool {
        n.0 < self.num_nodes()
    }

    fn check(&self, n: NodeId) -> Result<()> {
        if self.contains(n) {
            Ok(())
        } else {
            Err(Error::invalid(format!("node {} is not in the tree", n.0)))
        }
    }

    pub fn parent(&self, n: NodeId) -> Option<NodeId> {
        self.parent[n.0]
    }

    pub fn children(&self, n: NodeId) -> Option<(NodeId, NodeId)> {
        self.children[n.0]
    }

    pub fn left(&self, n: NodeId) -> Option<NodeId> {
        self.children[n.0].map(|c| c.0)
    }

    pub fn right(&self, n: NodeId) -> Option<NodeId> {
        self.children[n.0].map(|c| c.1)
    }

    pub fn is_leaf(&self, n: NodeId) -> bool {
        self.children[n.0].is_none()
    }

    pub fn depth(&self, n: NodeId) -> usize {
        self.depth[n.0]
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn nodes_at_depth(&self, d: usize) -> Vec<NodeId> {
        self.nodes().filter(|&n| self.depth(n) == d).collect()
    }

    /// Position of a leaf in the left-to-right order.
    pub fn leaf_index(&self, n: NodeId) -> Option<usize> {
        self.leaf_index[n.0]
    }

    pub fn leaf(&self, k: usize) -> NodeId {
        self.leaves[k]
    }

    pub fn internal_index(&self, n: NodeId) -> Option<usize> {
        self.internal_index[n.0]
    }

    /// `(ε, …, n)`.
    pub fn path(&self, n: NodeId) -> Result<Vec<NodeId>> {
        self.check(n)?;
        let mut path = vec![n];
        let mut cur = n;
        while let Some(p) = self.parent[cur.0] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Ok(path)
    }

    /// Internal nodes traversed to reach leaf `k`, with the branch taken at each.
    pub fn route(&self, k: usize) -> &[Turn] {
        &self.routes[k]
    }

    /// Leaves in the subtree rooted at `n`, as leaf indices.
    pub fn subtree_leaves(&self, n: NodeId) -> Vec<usize> {
        (0..self.num_leaves())
            .filter(|&k| self.leaves[k] == n || self.routes[k].iter().any(|t| t.node == n))
            .collect()
    }

    /// Nodes whose sticks partition the unit mass at resolution `depth`:
    /// every node at that depth plus shallower leaves.
    pub fn frontier(&self, depth: usize) -> Vec<NodeId> {
        self.nodes()
            .filter(|&n| self.depth(n) == depth || (self.is_leaf(n) && self.depth(n) < depth))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct TopologyRepr {
    nodes: Vec<NodeRepr>,
}

#[derive(Serialize, Deserialize)]
struct NodeRepr {
    id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    children: Option<[usize; 2]>,
}

impl From<TreeTopology> for TopologyRepr {
    fn from(t: TreeTopology) -> Self {
        TopologyRepr {
            nodes: t
                .children
                .iter()
                .enumerate()
                .map(|(id, ch)| NodeRepr {
                    id,
                    children: ch.map(|(l, r)| [l.0, r.0]),
                })
                .collect(),
        }
    }
}

impl TryFrom<TopologyRepr> for TreeTopology {
    type Error = Error;

    fn try_from(repr: TopologyRepr) -> Result<Self> {
        let n = repr.nodes.len();
        let mut children = vec![None; n];
        let mut seen = vec![false; n];
        for node in repr.nodes {
            if node.id >= n || seen[node.id] {
                return Err(Error::Schema(format!("bad or duplicate node id {}", node.id)));
            }
            seen[node.id] = true;
            children[node.id] = node.children.map(|[l, r]| (NodeId(l), NodeId(r)));
        }
        TreeTopology::from_children(children)
    }
}
