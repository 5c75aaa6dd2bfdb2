//! The dynamics seen at each depth of the tree.
//!
//! At depth `ℓ` a state is shared among the frontier nodes (nodes at depth `ℓ`
//! and leaves above it) in proportion to the stick that reaches each one. The
//! depth-`ℓ` drift is the probability-weighted mean of their affine drifts, so
//! depth 0 is the root's global linear system and the deepest level mixes the
//! leaves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::ModelParams;
use crate::stick_breaking::node_log_sticks;
use crate::tree::{NodeId, TreeTopology};

/// Nodes at `depth` together with any leaves that end above it.
pub fn frontier(topology: &TreeTopology, depth: usize) -> Vec<NodeId> {
    topology
        .nodes()
        .filter(|&n| topology.depth(n) == depth || (topology.is_leaf(n) && topology.depth(n) < depth))
        .collect()
}

/// Frontier nodes at `depth` with the probability of reaching each from `x`.
pub fn depth_weights(params: &ModelParams, x: &Vector, depth: usize) -> Vec<(NodeId, f64)> {
    let logs = node_log_sticks(x, &params.hyperplanes, &params.topology);
    frontier(&params.topology, depth).into_iter().map(|n| (n, logs[n.0].exp())).collect()
}

/// Probability-weighted drift `Σ_n π_n(x) (A_n x + b_n)` over the frontier.
pub fn depth_drift(params: &ModelParams, x: &Vector, depth: usize) -> Vector {
    depth_weights(params, x, depth)
        .into_iter()
        .fold(Vector::zeros(x.len()), |acc, (n, w)| acc + params.dynamics[n.0].drift(x) * w)
}

/// Most probable frontier node at `depth`; ties go to the lower node id.
pub fn depth_assignment(params: &ModelParams, x: &Vector, depth: usize) -> NodeId {
    depth_weights(params, x, depth)
        .into_iter()
        .fold((NodeId::ROOT, f64::NEG_INFINITY), |best, (n, w)| if w > best.1 { (n, w) } else { best })
        .0
}

/// Rectangular grid over the first two latent coordinates; any further
/// coordinates are held at `rest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    #[serde(default)]
    pub rest: Vec<f64>,
}

impl Grid {
    pub fn new(x_range: (f64, f64), y_range: (f64, f64), nx: usize, ny: usize) -> Self {
        Grid { x_range, y_range, nx, ny, rest: Vec::new() }
    }

    fn axis(range: (f64, f64), n: usize, i: usize) -> f64 {
        if n == 1 {
            0.5 * (range.0 + range.1)
        } else {
            range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64
        }
    }

    /// Points in row-major order, `x` varying fastest.
    pub fn points(&self, d_x: usize) -> Result<Vec<Vector>> {
        if d_x < 2 {
            return Err(Error::invalid("grid exports need at least two latent dimensions"));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::invalid("grid needs at least one point per axis"));
        }
        if !self.rest.is_empty() && self.rest.len() != d_x - 2 {
            return Err(Error::invalid(format!("grid.rest needs {} entries", d_x - 2)));
        }
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for j in 0..self.ny {
            for i in 0..self.nx {
                let mut p = Vector::zeros(d_x);
                p[0] = Self::axis(self.x_range, self.nx, i);
                p[1] = Self::axis(self.y_range, self.ny, j);
                for (k, &r) in self.rest.iter().enumerate() {
                    p[k + 2] = r;
                }
                out.push(p);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldPoint {
    pub depth: usize,
    pub x: Vector,
    pub drift: Vector,
}

/// Depth-`depth` drift at every grid point.
pub fn vector_field(params: &ModelParams, grid: &Grid, depth: usize) -> Result<Vec<FieldPoint>> {
    if depth > params.topology.max_depth() {
        return Err(Error::invalid(format!("depth {depth} exceeds the tree depth {}", params.topology.max_depth())));
    }
    Ok(grid
        .points(params.d_x())?
        .into_iter()
        .map(|x| FieldPoint { depth, drift: depth_drift(params, &x, depth), x })
        .collect())
}

/// Leaf probabilities at every grid point.
pub fn partition(params: &ModelParams, grid: &Grid) -> Result<Vec<(Vector, Vec<f64>)>> {
    Ok(grid
        .points(params.d_x())?
        .into_iter()
        .map(|x| {
            let p = crate::stick_breaking::tree_leaf_probs(&x, &params.hyperplanes, &params.topology);
            (x, p.probabilities)
        })
        .collect())
}
