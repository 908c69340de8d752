//! SE(3) pose-graph optimization: Gauss-Newton with a Huber kernel,
//! Levenberg damping as a fallback and a backtracking line search so the
//! robust cost never increases.

use nalgebra::{DMatrix, DVector, Isometry3, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::geom::{adjoint, se3_exp, se3_log, skew, Twist};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Odometry,
    Loop,
}

/// Relative measurement `Z_ij ≈ X_i⁻¹ X_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEdge {
    pub i: usize,
    pub j: usize,
    pub measurement: Isometry3<f64>,
    pub information: Matrix6<f64>,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseGraph {
    /// `world_from_node` poses.
    pub nodes: Vec<Isometry3<f64>>,
    pub edges: Vec<PoseEdge>,
}

impl PoseGraph {
    pub fn validate(&self) -> Result<()> {
        for (k, e) in self.edges.iter().enumerate() {
            if e.i >= self.nodes.len() || e.j >= self.nodes.len() || e.i == e.j {
                return Err(Error::Structural(format!("edge {k} ({} → {}) has invalid endpoints", e.i, e.j)));
            }
            let asym = (e.information - e.information.transpose()).abs().max();
            let scale = e.information.abs().max().max(1.0);
            if asym > 1e-9 * scale {
                return Err(Error::Validation(format!("edge {k}: information matrix is not symmetric")));
            }
            if e.information.symmetric_eigenvalues().min() < -1e-9 * scale {
                return Err(Error::Validation(format!("edge {k}: information matrix is not positive semidefinite")));
            }
        }
        Ok(())
    }

    pub fn count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeParams {
    pub huber_delta: f64,
    pub max_iterations: usize,
    /// Stop when the relative cost decrease falls below this.
    pub relative_tolerance: f64,
}

impl Default for OptimizeParams {
    fn default() -> Self {
        OptimizeParams { huber_delta: 0.1, max_iterations: 100, relative_tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub poses: Vec<Isometry3<f64>>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
}

fn residual(e: &PoseEdge, poses: &[Isometry3<f64>]) -> Twist {
    se3_log(&(e.measurement.inverse() * poses[e.i].inverse() * poses[e.j]))
}

/// Huber cost of a squared Mahalanobis norm and the matching IRLS weight.
fn huber(r2: f64, delta: f64) -> (f64, f64) {
    let r = r2.sqrt();
    if r <= delta {
        (r2, 1.0)
    } else {
        (2.0 * delta * r - delta * delta, delta / r)
    }
}

/// Total robust cost of `poses` under the graph's edges.
pub fn graph_cost(graph: &PoseGraph, poses: &[Isometry3<f64>], delta: f64) -> f64 {
    graph
        .edges
        .iter()
        .map(|e| {
            let r = residual(e, poses);
            huber((r.transpose() * e.information * r)[0].max(0.0), delta).0
        })
        .sum()
}

/// `ad(ξ)` for `(ρ, φ)` twists.
fn small_adjoint(xi: &Twist) -> Matrix6<f64> {
    let rho = xi.fixed_rows::<3>(0).into_owned();
    let phi = xi.fixed_rows::<3>(3).into_owned();
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&phi));
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(&rho));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&skew(&phi));
    m
}

/// First node of each connected component (gauge anchors).
fn anchors(graph: &PoseGraph) -> Vec<bool> {
    let n = graph.nodes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for e in &graph.edges {
        let (a, b) = (find(&mut parent, e.i), find(&mut parent, e.j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut fixed = vec![false; n];
    let mut seen = std::collections::HashSet::new();
    for (i, f) in fixed.iter_mut().enumerate() {
        *f = seen.insert(find(&mut parent, i));
    }
    fixed
}

/// Minimize `Σ ρ(‖log(Z_ij⁻¹ X_i⁻¹ X_j)‖²_Λ)` over the node poses. The
/// first node of every connected component stays fixed.
pub fn optimize_posegraph(graph: &PoseGraph, params: &OptimizeParams) -> Result<OptimizeReport> {
    graph.validate()?;
    let delta = params.huber_delta;
    let mut poses = graph.nodes.clone();
    let initial_cost = graph_cost(graph, &poses, delta);
    let fixed = anchors(graph);
    let mut var_of = vec![usize::MAX; poses.len()];
    let mut nvar = 0;
    for (i, f) in fixed.iter().enumerate() {
        if !f {
            var_of[i] = nvar;
            nvar += 1;
        }
    }
    let mut cost = initial_cost;
    let mut iterations = 0;
    if nvar == 0 || graph.edges.is_empty() {
        return Ok(OptimizeReport { poses, initial_cost, final_cost: cost, iterations });
    }
    while iterations < params.max_iterations && cost > 1e-15 {
        iterations += 1;
        let dim = 6 * nvar;
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut b = DVector::<f64>::zeros(dim);
        for e in &graph.edges {
            let r = residual(e, &poses);
            let (_, w) = huber((r.transpose() * e.information * r)[0].max(0.0), delta);
            let jr_inv = Matrix6::identity() + small_adjoint(&r) * 0.5;
            let jj = jr_inv;
            let ji = -jr_inv * adjoint(&(poses[e.j].inverse() * poses[e.i]));
            let info = e.information * w;
            let blocks = [(e.i, ji), (e.j, jj)];
            for (na, ja) in &blocks {
                if fixed[*na] {
                    continue;
                }
                let va = var_of[*na] * 6;
                let g = ja.transpose() * info * r;
                for k in 0..6 {
                    b[va + k] += g[k];
                }
                for (nb, jb) in &blocks {
                    if fixed[*nb] {
                        continue;
                    }
                    let vb = var_of[*nb] * 6;
                    let blk = ja.transpose() * info * jb;
                    for r_ in 0..6 {
                        for c in 0..6 {
                            h[(va + r_, vb + c)] += blk[(r_, c)];
                        }
                    }
                }
            }
        }
        let max_diag = (0..dim).map(|k| h[(k, k)]).fold(0.0, f64::max).max(1e-12);
        let mut lambda = 0.0;
        let step = loop {
            let mut damped = h.clone();
            for k in 0..dim {
                damped[(k, k)] += lambda + 1e-12 * max_diag;
            }
            if let Some(ch) = damped.cholesky() {
                break ch.solve(&(-&b));
            }
            lambda = if lambda == 0.0 { 1e-6 * max_diag } else { lambda * 10.0 };
            if lambda > 1e6 * max_diag {
                return Err(Error::Optimization("normal equations stay singular under damping".into()));
            }
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..20 {
            let trial: Vec<Isometry3<f64>> = poses
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    if fixed[i] {
                        *p
                    } else {
                        let v = var_of[i] * 6;
                        let d = Vector6::from_iterator((0..6).map(|k| step[v + k] * alpha));
                        p * se3_exp(&d)
                    }
                })
                .collect();
            let c = graph_cost(graph, &trial, delta);
            if c <= cost {
                accepted = Some((trial, c));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, c)) = accepted else { break };
        let rel = (cost - c) / cost.max(1e-300);
        poses = trial;
        cost = c;
        if rel < params.relative_tolerance {
            break;
        }
    }
    Ok(OptimizeReport { poses, initial_cost, final_cost: cost, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn twist(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> Isometry3<f64> {
        se3_exp(&Vector6::new(a, b, c, d, e, f))
    }

    fn chain(n: usize) -> (Vec<Isometry3<f64>>, Vec<PoseEdge>) {
        let mut truth = vec![Isometry3::identity()];
        let mut edges = vec![];
        for k in 1..n {
            let z = twist(0.3, 0.05 * k as f64, -0.02, 0.01, 0.1, -0.03 * k as f64);
            truth.push(truth[k - 1] * z);
            edges.push(PoseEdge { i: k - 1, j: k, measurement: z, information: Matrix6::identity() * 100.0, kind: EdgeKind::Odometry });
        }
        (truth, edges)
    }

    #[test]
    fn recovers_consistent_chain() {
        let (truth, edges) = chain(8);
        let noisy: Vec<_> = truth.iter().enumerate().map(|(k, p)| p * twist(0.02 * k as f64, -0.01, 0.03, 0.02, -0.01, 0.01 * k as f64)).collect();
        let g = PoseGraph { nodes: noisy, edges };
        let rep = optimize_posegraph(&g, &OptimizeParams::default()).unwrap();
        assert!(rep.final_cost < 1e-12, "cost {}", rep.final_cost);
        // The anchor keeps its noisy pose; the rest follow it rigidly.
        let anchor = g.nodes[0];
        for (a, b) in rep.poses.iter().zip(&truth) {
            assert!((a.to_homogeneous() - (anchor * b).to_homogeneous()).abs().max() < 1e-6);
        }
    }

    #[test]
    fn single_node_unchanged() {
        let p = twist(1.0, 2.0, 3.0, 0.1, 0.2, 0.3);
        let rep = optimize_posegraph(&PoseGraph { nodes: vec![p], edges: vec![] }, &OptimizeParams::default()).unwrap();
        assert_eq!(rep.poses, vec![p]);
    }

    #[test]
    fn invalid_graphs_rejected() {
        let mut g = PoseGraph { nodes: vec![Isometry3::identity(); 2], edges: vec![] };
        g.edges.push(PoseEdge { i: 0, j: 5, measurement: Isometry3::identity(), information: Matrix6::identity(), kind: EdgeKind::Loop });
        assert!(g.validate().is_err());
        g.edges[0].j = 1;
        g.edges[0].information[(0, 1)] = 1.0;
        assert!(g.validate().is_err());
        g.edges[0].information = -Matrix6::identity();
        assert!(g.validate().is_err());
    }

    #[test]
    fn disconnected_components_each_keep_an_anchor() {
        let (truth, mut edges) = chain(3);
        let mut nodes = truth.clone();
        let far = twist(5.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        nodes.push(far);
        nodes.push(far * twist(0.0, 0.1, 0.0, 0.0, 0.0, 0.0));
        edges.push(PoseEdge { i: 3, j: 4, measurement: twist(0.0, 0.2, 0.0, 0.0, 0.0, 0.0), information: Matrix6::identity(), kind: EdgeKind::Odometry });
        let rep = optimize_posegraph(&PoseGraph { nodes, edges }, &OptimizeParams::default()).unwrap();
        assert_eq!(rep.poses[3], far);
        assert!(rep.final_cost < 1e-12);
    }
}
