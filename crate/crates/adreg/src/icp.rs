//! Iterative closest point: the correspondence-based baseline.
//!
//! Each iteration matches every transformed source point to its exact
//! nearest target point through a kd-tree, then refits the rigid
//! transform to those pairs in closed form (SVD / Kabsch, always applied
//! to the *original* source points so the estimate is absolute rather
//! than incremental). Because the refit is the global minimizer for the
//! current pairs and re-matching can only shorten distances, the
//! correspondence MSE never increases from one iteration to the next.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{exp_map, log_map, Mat3, RigidTransform, Vec3};
use crate::pointcloud::PointCloud;

/// Leaf bucket size of the kd-tree; below this a linear scan wins.
const LEAF_SIZE: usize = 16;

/// Ratio to the largest singular value under which the correspondence
/// cross-covariance counts as rank-deficient (collinear or coincident
/// points) and the rigid fit is refused.
const DEGENERATE_SV_RATIO: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop when the correspondence MSE improves by less than this between
    /// consecutive iterations.
    pub convergence_epsilon: f64,
    pub initial_transform: RigidTransform,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 100,
            convergence_epsilon: 1e-8,
            initial_transform: RigidTransform::identity(),
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !self.convergence_epsilon.is_finite() || self.convergence_epsilon <= 0.0 {
            return Err(Error::InvalidConfig(
                "convergence_epsilon must be positive".into(),
            ));
        }
        if !self.initial_transform.is_finite() {
            return Err(Error::NonFinite("initial transform"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    /// Source-to-target estimate, rotation vector canonicalized.
    pub transform: RigidTransform,
    pub iterations: usize,
    /// Correspondence MSE measured at the start of each iteration;
    /// non-increasing.
    pub mse_trace: Vec<f64>,
    /// True when the MSE improvement dropped below the epsilon before the
    /// iteration cap.
    pub converged: bool,
    pub wall_time: Duration,
}

enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        dim: u8,
        value: f64,
        left: u32,
        right: u32,
    },
}

/// Exact nearest-neighbor search over a fixed set of points. Distance ties
/// resolve to the lowest point index, so queries are wholly deterministic.
pub struct KdTree {
    points: Vec<Vec3>,
    /// Point indices permuted into contiguous leaf ranges.
    idx: Vec<u32>,
    nodes: Vec<Node>,
    root: u32,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Result<KdTree> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("kd-tree points"));
        }
        let mut tree = KdTree {
            points: points.to_vec(),
            idx: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
            root: 0,
        };
        tree.root = tree.build_node(0, points.len());
        Ok(tree)
    }

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        let count = end - start;
        if count <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                start: start as u32,
                end: end as u32,
            });
            return (self.nodes.len() - 1) as u32;
        }

        // Split the axis with the widest extent at its median point.
        let mut lo = Vec3::from_element(f64::INFINITY);
        let mut hi = Vec3::from_element(f64::NEG_INFINITY);
        for &i in &self.idx[start..end] {
            let p = self.points[i as usize];
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        let extent = hi - lo;
        let dim = extent.imax();
        let mid = start + count / 2;
        let points = &self.points;
        self.idx[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a as usize][dim].total_cmp(&points[b as usize][dim])
        });
        let value = self.points[self.idx[mid] as usize][dim];

        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes.push(Node::Split {
            dim: dim as u8,
            value,
            left,
            right,
        });
        (self.nodes.len() - 1) as u32
    }

    /// Index and squared distance of the nearest point to `query`.
    pub fn nearest(&self, query: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, query, &mut best);
        best
    }

    fn search(&self, node: u32, query: &Vec3, best: &mut (usize, f64)) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.idx[start as usize..end as usize] {
                    let i = i as usize;
                    let d2 = (self.points[i] - query).norm_squared();
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, best);
                // An equally distant point may still win on index order, so
                // only prune when the far half-space is strictly worse.
                if diff * diff <= best.1 {
                    self.search(far, query, best);
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Least-squares rigid transform mapping each pair's first point onto its
/// second (Kabsch). The SVD determinant correction guarantees a proper
/// rotation even when the best orthogonal map would be a reflection.
pub fn best_rigid_fit(pairs: &[(Vec3, Vec3)]) -> Result<RigidTransform> {
    if pairs.len() < 3 {
        return Err(Error::TooFewPairs {
            got: pairs.len(),
            need: 3,
        });
    }
    let n = pairs.len() as f64;
    let centroid_s: Vec3 = pairs.iter().map(|(s, _)| s).sum::<Vec3>() / n;
    let centroid_t: Vec3 = pairs.iter().map(|(_, t)| t).sum::<Vec3>() / n;

    // Cross-covariance of the centered pairs.
    let mut h = Mat3::zeros();
    for (s, t) in pairs {
        h += (s - centroid_s) * (t - centroid_t).transpose();
    }

    let svd = h.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[1] <= DEGENERATE_SV_RATIO * sv[0] || sv[0] == 0.0 {
        return Err(Error::DegenerateGeometry(
            "correspondences are collinear or coincident".into(),
        ));
    }
    let u = svd.u.expect("svd with u");
    let v = svd.v_t.expect("svd with v_t").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();

    let rotation_vector = log_map(&r)?;
    let translation = centroid_t - r * centroid_s;
    Ok(RigidTransform::new(rotation_vector, translation))
}

/// Classic point-to-point ICP from `cfg.initial_transform`.
pub fn icp_register(
    source: &PointCloud,
    target: &PointCloud,
    cfg: &IcpConfig,
) -> Result<IcpResult> {
    let start = Instant::now();
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if source.len() < 3 {
        return Err(Error::TooFewPairs {
            got: source.len(),
            need: 3,
        });
    }
    let tree = KdTree::build(target.points())?;

    let mut transform = cfg.initial_transform;
    let mut rotation = exp_map(&transform.rotation_vector)?;
    let mut mse_trace = Vec::new();
    let mut converged = false;
    let mut prev_mse = f64::INFINITY;

    for _ in 0..cfg.max_iterations {
        // Match under the current transform.
        let mut pairs = Vec::with_capacity(source.len());
        let mut sq_sum = 0.0;
        for p in source.points() {
            let moved = rotation * p + transform.translation;
            let (j, d2) = tree.nearest(&moved);
            sq_sum += d2;
            pairs.push((*p, target.points()[j]));
        }
        let mse = sq_sum / source.len() as f64;
        mse_trace.push(mse);

        if prev_mse - mse < cfg.convergence_epsilon {
            converged = true;
            break;
        }
        prev_mse = mse;

        // Refit to the matched pairs from the original source points.
        transform = best_rigid_fit(&pairs)?;
        rotation = exp_map(&transform.rotation_vector)?;
    }

    Ok(IcpResult {
        transform: transform.canonicalized(),
        iterations: mse_trace.len(),
        mse_trace,
        converged,
        wall_time: start.elapsed(),
    })
}
