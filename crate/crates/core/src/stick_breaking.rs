//! Allocation of probability mass over leaves: tree-structured stick-breaking
//! and the sequential variant used by the recurrent SLDS baseline.
//!
//! Products of logistic terms are accumulated as sums of `log σ(·)` so that
//! extreme logits never underflow to NaN.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log_sigmoid, sigmoid, Vector};
use crate::tree::{NodeId, TreeTopology};

/// Gate `ν = Rᵀx + r` of an internal node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub weight: Vector,
    pub offset: f64,
}

impl Hyperplane {
    pub fn new(weight: Vector, offset: f64) -> Self {
        Hyperplane { weight, offset }
    }

    pub fn zeros(dim: usize) -> Self {
        Hyperplane::new(Vector::zeros(dim), 0.0)
    }

    /// Stacked `(R, r)`.
    pub fn stacked(&self) -> Vector {
        let d = self.weight.len();
        Vector::from_fn(d + 1, |i, _| if i < d { self.weight[i] } else { self.offset })
    }

    pub fn from_stacked(v: &Vector) -> Self {
        let d = v.len() - 1;
        Hyperplane::new(v.rows(0, d).into_owned(), v[d])
    }

    pub fn logit(&self, x: &Vector) -> f64 {
        self.weight.dot(x) + self.offset
    }
}

pub fn node_logit(x: &Vector, h: &Hyperplane) -> Result<f64> {
    if x.len() != h.weight.len() {
        return Err(Error::invalid(format!(
            "state has dimension {} but hyperplane has {}",
            x.len(),
            h.weight.len()
        )));
    }
    Ok(h.logit(x))
}

/// One hyperplane per internal node, indexed by node id.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<NodePlane>", into = "Vec<NodePlane>")]
pub struct HyperplaneSet {
    planes: Vec<Option<Hyperplane>>,
}

impl PartialEq for HyperplaneSet {
    fn eq(&self, other: &Self) -> bool {
        self.iter().eq(other.iter())
    }
}

#[derive(Serialize, Deserialize)]
struct NodePlane {
    node: NodeId,
    weight: Vec<f64>,
    offset: f64,
}

impl From<HyperplaneSet> for Vec<NodePlane> {
    fn from(set: HyperplaneSet) -> Self {
        set.planes
            .into_iter()
            .enumerate()
            .filter_map(|(i, p)| {
                p.map(|h| NodePlane {
                    node: NodeId(i),
                    weight: h.weight.iter().copied().collect(),
                    offset: h.offset,
                })
            })
            .collect()
    }
}

impl TryFrom<Vec<NodePlane>> for HyperplaneSet {
    type Error = Error;

    fn try_from(list: Vec<NodePlane>) -> Result<Self> {
        let n = list.iter().map(|p| p.node.0 + 1).max().unwrap_or(0);
        let mut planes = vec![None; n];
        for p in list {
            if planes[p.node.0].is_some() {
                return Err(Error::Schema(format!("duplicate hyperplane for node {}", p.node.0)));
            }
            planes[p.node.0] = Some(Hyperplane::new(Vector::from_vec(p.weight), p.offset));
        }
        Ok(HyperplaneSet { planes })
    }
}

impl HyperplaneSet {
    pub fn zeros(topology: &TreeTopology, dim: usize) -> Self {
        let planes = topology
            .nodes()
            .map(|n| (!topology.is_leaf(n)).then(|| Hyperplane::zeros(dim)))
            .collect();
        HyperplaneSet { planes }
    }

    /// Checks there is exactly one plane of dimension `dim` per internal node.
    pub fn validate(&self, topology: &TreeTopology, dim: usize) -> Result<()> {
        for n in topology.nodes() {
            let plane = self.planes.get(n.0).and_then(|p| p.as_ref());
            match (topology.is_leaf(n), plane) {
                (false, None) => {
                    return Err(Error::invalid(format!("internal node {} has no hyperplane", n.0)))
                }
                (true, Some(_)) => {
                    return Err(Error::invalid(format!("leaf {} carries a hyperplane", n.0)))
                }
                (false, Some(h)) if h.weight.len() != dim => {
                    return Err(Error::invalid(format!(
                        "hyperplane of node {} has dimension {}, expected {dim}",
                        n.0,
                        h.weight.len()
                    )))
                }
                _ => {}
            }
        }
        if self.planes.len() > topology.num_nodes() {
            return Err(Error::invalid("hyperplanes reference nodes outside the tree"));
        }
        Ok(())
    }

    pub fn get(&self, n: NodeId) -> Option<&Hyperplane> {
        self.planes.get(n.0).and_then(|p| p.as_ref())
    }

    pub fn plane(&self, n: NodeId) -> &Hyperplane {
        self.get(n)
            .unwrap_or_else(|| panic!("no hyperplane for internal node {}", n.0))
    }

    pub fn set(&mut self, n: NodeId, h: Hyperplane) {
        if self.planes.len() <= n.0 {
            self.planes.resize(n.0 + 1, None);
        }
        self.planes[n.0] = Some(h);
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Hyperplane)> {
        self.planes
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|h| (NodeId(i), h)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (NodeId, &mut Hyperplane)> {
        self.planes
            .iter_mut()
            .enumerate()
            .filter_map(|(i, p)| p.as_mut().map(|h| (NodeId(i), h)))
    }
}

/// Probabilities over leaves in left-to-right order.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafDistribution {
    pub probabilities: Vec<f64>,
}

impl LeafDistribution {
    fn from_logs(logs: &[f64]) -> Self {
        LeafDistribution {
            probabilities: logs.iter().map(|l| l.exp()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// Most probable leaf; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = k;
            }
        }
        best
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.probabilities, rng)
    }
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// `log π_k(x)` for every leaf.
pub fn tree_leaf_log_probs(x: &Vector, gates: &HyperplaneSet, topology: &TreeTopology) -> Vec<f64> {
    let mut logits = vec![0.0; topology.num_nodes()];
    for &n in topology.internal_nodes() {
        logits[n.0] = gates.plane(n).logit(x);
    }
    (0..topology.num_leaves())
        .map(|k| {
            topology.route(k).iter().fold(0.0, |acc, turn| {
                let v = logits[turn.node.0];
                acc + if turn.left { log_sigmoid(v) } else { log_sigmoid(-v) }
            })
        })
        .collect()
}

pub fn tree_leaf_probs(x: &Vector, gates: &HyperplaneSet, topology: &TreeTopology) -> LeafDistribution {
    LeafDistribution::from_logs(&tree_leaf_log_probs(x, gates, topology))
}

/// `log π_n(x)` for every node: the stick reaching `n`.
pub fn node_log_sticks(x: &Vector, gates: &HyperplaneSet, topology: &TreeTopology) -> Vec<f64> {
    let mut logs = vec![0.0; topology.num_nodes()];
    // Breadth-first numbering puts parents before children.
    for n in topology.nodes() {
        if let Some((l, r)) = topology.children(n) {
            let v = gates.plane(n).logit(x);
            logs[l.0] = logs[n.0] + log_sigmoid(v);
            logs[r.0] = logs[n.0] + log_sigmoid(-v);
        }
    }
    logs
}

/// Sequential stick-breaking `π_k = σ(ν_k) Π_{j<k} σ(−ν_j)`, `π_K = Π σ(−ν_j)`.
pub fn sequential_leaf_probs(nu: &[f64]) -> LeafDistribution {
    let k = nu.len() + 1;
    let logs: Vec<f64> = (0..k)
        .map(|i| {
            let mut acc = 0.0;
            for &v in &nu[..i] {
                acc += log_sigmoid(-v);
            }
            if i < nu.len() {
                acc += log_sigmoid(nu[i]);
            }
            acc
        })
        .collect();
    LeafDistribution::from_logs(&logs)
}

/// Categorical draw from the explicit leaf distribution.
pub fn sample_leaf<R: Rng + ?Sized>(
    x: &Vector,
    gates: &HyperplaneSet,
    topology: &TreeTopology,
    rng: &mut R,
) -> usize {
    tree_leaf_probs(x, gates, topology).sample(rng)
}

/// Same distribution as [`sample_leaf`], drawn as left/right coin flips from the root.
pub fn sample_leaf_by_descent<R: Rng + ?Sized>(
    x: &Vector,
    gates: &HyperplaneSet,
    topology: &TreeTopology,
    rng: &mut R,
) -> usize {
    let mut node = NodeId::ROOT;
    while let Some((l, r)) = topology.children(node) {
        let p_left = sigmoid(gates.plane(node).logit(x));
        node = if rng.random::<f64>() < p_left { l } else { r };
    }
    topology.leaf_index(node).expect("descent ends at a leaf")
}
