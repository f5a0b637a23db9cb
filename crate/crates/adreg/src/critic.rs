//! The critic: a small dense ReLU network from R^3 to R, with hand-written
//! forward and backward passes.
//!
//! Three gradient routines cover everything adversarial alignment needs:
//!
//! * [`CriticNet::backward_params`] — gradient of a weighted sum of
//!   outputs with respect to every weight and bias (reverse mode).
//! * [`CriticNet::grad_input`] — gradient of the output with respect to
//!   the input point.
//! * [`CriticNet::backward_gp`] — parameter gradient of the unit-norm
//!   penalty `(|grad_x f| - 1)^2`, a second-order quantity. It runs a
//!   forward tangent sweep in the direction of the input gradient and a
//!   reverse sweep over that tangent program, treating the ReLU activation
//!   pattern as locally constant (exact except on the kink set).
//!
//! ReLU's derivative at exactly zero is taken to be zero. Parameters can
//! be flattened to a single vector (layer by layer, weights row-major,
//! then biases) for the optimizer, and saved to a small binary checkpoint.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Input-gradient norms below this are treated as exactly zero in
/// [`CriticNet::backward_gp`] so the norm's derivative never divides by zero.
pub const GRAD_NORM_FLOOR: f64 = 1e-12;

const CHECKPOINT_MAGIC: [u8; 4] = *b"CNET";
const CHECKPOINT_VERSION: u8 = 1;

/// Fully-connected ReLU network; `weights[k]` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticNet {
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

/// Per-parameter gradients, same shapes as the network they came from.
#[derive(Debug, Clone)]
pub struct CriticGradients {
    pub d_weights: Vec<DMatrix<f64>>,
    pub d_biases: Vec<DVector<f64>>,
}

impl CriticGradients {
    pub fn zeros_like(net: &CriticNet) -> Self {
        CriticGradients {
            d_weights: net
                .weights
                .iter()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
                .collect(),
            d_biases: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: f64, other: &CriticGradients) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            *a += b * scale;
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            *a += b * scale;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.d_weights {
            *w *= s;
        }
        for b in &mut self.d_biases {
            *b *= s;
        }
    }

    pub fn write_flat(&self, out: &mut [f64]) {
        let mut i = 0;
        for (w, b) in self.d_weights.iter().zip(&self.d_biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    out[i] = w[(r, c)];
                    i += 1;
                }
            }
            for v in b.iter() {
                out[i] = *v;
                i += 1;
            }
        }
        assert_eq!(i, out.len(), "flat gradient length mismatch");
    }

    pub fn is_finite(&self) -> bool {
        self.d_weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.d_biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Activations and pre-activations of one batched forward pass.
/// `acts[0]` is the 3xB input; `preacts[k]` feeds layer k's nonlinearity
/// (the last one is the raw 1xB output).
pub(crate) struct ForwardStack {
    acts: Vec<DMatrix<f64>>,
    preacts: Vec<DMatrix<f64>>,
}

impl ForwardStack {
    pub fn outputs(&self) -> &DMatrix<f64> {
        self.preacts.last().expect("non-empty network")
    }
}

fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

/// Subgradient convention: 1 for strictly positive pre-activations, else 0.
fn relu_mask(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

fn points_matrix(points: &[Vec3]) -> DMatrix<f64> {
    DMatrix::from_fn(3, points.len(), |r, c| points[c][r])
}

impl CriticNet {
    /// Random network with `depth` dense layers (`depth - 1` of them ReLU)
    /// of `width` hidden units: 3 -> width -> ... -> width -> 1.
    ///
    /// Weights draw from N(0, 2 / fan_in) (He initialization, which keeps
    /// activation variance stable under ReLU); biases start at zero.
    pub fn init(width: usize, depth: usize, rng: &mut impl Rng) -> Result<CriticNet> {
        if width == 0 {
            return Err(Error::InvalidConfig("critic width must be at least 1".into()));
        }
        if depth < 2 {
            return Err(Error::InvalidConfig(
                "critic depth must be at least 2 layers".into(),
            ));
        }
        let mut dims = Vec::with_capacity(depth + 1);
        dims.push(3);
        dims.extend(std::iter::repeat(width).take(depth - 1));
        dims.push(1);

        let mut weights = Vec::with_capacity(depth);
        let mut biases = Vec::with_capacity(depth);
        for k in 0..depth {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let w = DMatrix::from_fn(fan_out, fan_in, |_, _| {
                let z: f64 = rng.sample(StandardNormal);
                z * std
            });
            weights.push(w);
            biases.push(DVector::zeros(fan_out));
        }
        Ok(CriticNet { weights, biases })
    }

    /// Build from explicit layers; input must be 3-dimensional, output
    /// 1-dimensional, and consecutive shapes must chain.
    pub fn from_parts(weights: Vec<DMatrix<f64>>, biases: Vec<DVector<f64>>) -> Result<CriticNet> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::ShapeMismatch(
                "need equal, nonzero numbers of weight and bias layers".into(),
            ));
        }
        if weights[0].ncols() != 3 {
            return Err(Error::ShapeMismatch("first layer must take 3 inputs".into()));
        }
        if weights.last().unwrap().nrows() != 1 {
            return Err(Error::ShapeMismatch("last layer must have 1 output".into()));
        }
        for k in 0..weights.len() {
            if biases[k].len() != weights[k].nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {k}: bias length {} vs {} rows",
                    biases[k].len(),
                    weights[k].nrows()
                )));
            }
            if k + 1 < weights.len() && weights[k + 1].ncols() != weights[k].nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} input {} does not match layer {k} output {}",
                    k + 1,
                    weights[k + 1].ncols(),
                    weights[k].nrows()
                )));
            }
        }
        Ok(CriticNet { weights, biases })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    pub(crate) fn forward_batch(&self, points: &[Vec3]) -> ForwardStack {
        let depth = self.weights.len();
        let mut acts = Vec::with_capacity(depth);
        let mut preacts = Vec::with_capacity(depth);
        acts.push(points_matrix(points));
        for k in 0..depth {
            let mut z = &self.weights[k] * &acts[k];
            for mut col in z.column_iter_mut() {
                col += &self.biases[k];
            }
            if k + 1 < depth {
                acts.push(relu(&z));
            }
            preacts.push(z);
        }
        ForwardStack { acts, preacts }
    }

    pub fn forward(&self, x: &Vec3) -> f64 {
        self.forward_batch(std::slice::from_ref(x)).outputs()[(0, 0)]
    }

    /// Gradient of `sum_i cotangents[i] * f(points[i])` with respect to all
    /// parameters.
    pub fn backward_params(
        &self,
        points: &[Vec3],
        cotangents: &[f64],
    ) -> Result<CriticGradients> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.len() != cotangents.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} points vs {} cotangents",
                points.len(),
                cotangents.len()
            )));
        }
        let stack = self.forward_batch(points);
        let depth = self.weights.len();
        let mut grads = CriticGradients::zeros_like(self);

        // delta holds the cotangent at the current pre-activation level.
        let mut delta = DMatrix::from_fn(1, cotangents.len(), |_, c| cotangents[c]);
        for k in (0..depth).rev() {
            grads.d_weights[k] = &delta * stack.acts[k].transpose();
            grads.d_biases[k] = DVector::from_fn(delta.nrows(), |r, _| delta.row(r).sum());
            if k > 0 {
                let up = self.weights[k].transpose() * delta;
                delta = up.component_mul(&relu_mask(&stack.preacts[k - 1]));
            }
        }
        Ok(grads)
    }

    /// Gradient of the output with respect to the input point.
    pub fn grad_input(&self, x: &Vec3) -> Vec3 {
        let stack = self.forward_batch(std::slice::from_ref(x));
        let v = self.input_cotangent(&stack);
        Vec3::new(v[(0, 0)], v[(1, 0)], v[(2, 0)])
    }

    /// Output and input gradient from a single forward/backward pass.
    pub fn value_and_grad_input(&self, x: &Vec3) -> (f64, Vec3) {
        let stack = self.forward_batch(std::slice::from_ref(x));
        let value = stack.outputs()[(0, 0)];
        let v = self.input_cotangent(&stack);
        (value, Vec3::new(v[(0, 0)], v[(1, 0)], v[(2, 0)]))
    }

    /// Reverse pass from unit output cotangent down to the input, for a
    /// single-column stack.
    fn input_cotangent(&self, stack: &ForwardStack) -> DMatrix<f64> {
        let depth = self.weights.len();
        let mut v = self.weights[depth - 1].transpose(); // cotangent at acts[depth-1]
        for k in (0..depth - 1).rev() {
            let delta = v.component_mul(&relu_mask(&stack.preacts[k]));
            v = self.weights[k].transpose() * delta;
        }
        v
    }

    /// Value and parameter gradient of `(|grad_x f(x)| - 1)^2` at one point.
    ///
    /// With the activation pattern frozen, `g = grad_x f` is a linear image
    /// of the masked weight product, and `d/dtheta (g . u)` for the fixed
    /// direction `u = g` is computed by one tangent sweep (seeded with `u`)
    /// plus one reverse sweep; the chain factor `2 (|g| - 1) / |g|` converts
    /// it into the penalty gradient. Bias gradients are exactly zero because
    /// biases never enter the input gradient.
    pub fn backward_gp(&self, x: &Vec3) -> (f64, CriticGradients) {
        let depth = self.weights.len();
        let stack = self.forward_batch(std::slice::from_ref(x));
        let g = self.input_cotangent(&stack);
        let norm = g.norm();
        let value = (norm - 1.0) * (norm - 1.0);
        let mut grads = CriticGradients::zeros_like(self);
        if norm < GRAD_NORM_FLOOR {
            return (value, grads);
        }

        // Forward tangent sweep: directional derivative of f along u = g.
        let masks: Vec<DMatrix<f64>> = stack.preacts[..depth - 1]
            .iter()
            .map(relu_mask)
            .collect();
        let mut tangents = Vec::with_capacity(depth); // at acts[k]
        tangents.push(g.clone());
        for k in 0..depth - 1 {
            let dz = &self.weights[k] * &tangents[k];
            tangents.push(dz.component_mul(&masks[k]));
        }

        // Reverse sweep over the tangent program. The scalar it produced is
        // g . u; its gradient in W[k] is s_k t_k^T where s_k is the cotangent
        // at the tangent pre-activation of layer k.
        let chain = 2.0 * (norm - 1.0) / norm;
        grads.d_weights[depth - 1] = tangents[depth - 1].transpose() * chain;
        let mut p = self.weights[depth - 1].transpose();
        for k in (0..depth - 1).rev() {
            let s = p.component_mul(&masks[k]);
            grads.d_weights[k] = (&s * tangents[k].transpose()) * chain;
            p = self.weights[k].transpose() * s;
        }
        (value, grads)
    }

    /// Smallest |pre-activation| over all hidden units for this input;
    /// finite-difference checks stay away from points where this is tiny,
    /// because a sign flip there changes the activation pattern.
    pub fn kink_margin(&self, x: &Vec3) -> f64 {
        let stack = self.forward_batch(std::slice::from_ref(x));
        let depth = self.weights.len();
        stack.preacts[..depth.saturating_sub(1)]
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, &v| m.min(v.abs()))
    }

    pub fn write_flat(&self, out: &mut [f64]) {
        let mut i = 0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    out[i] = w[(r, c)];
                    i += 1;
                }
            }
            for v in b.iter() {
                out[i] = *v;
                i += 1;
            }
        }
        assert_eq!(i, out.len(), "flat parameter length mismatch");
    }

    pub fn read_flat(&mut self, flat: &[f64]) {
        let mut i = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    w[(r, c)] = flat[i];
                    i += 1;
                }
            }
            for v in b.iter_mut() {
                *v = flat[i];
                i += 1;
            }
        }
        assert_eq!(i, flat.len(), "flat parameter length mismatch");
    }

    /// Serialize to a small versioned binary checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(self.weights.len() as u32).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&(w.ncols() as u32).to_le_bytes());
            out.extend_from_slice(&(w.nrows() as u32).to_le_bytes());
        }
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    out.extend_from_slice(&w[(r, c)].to_le_bytes());
                }
            }
            for v in b.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = fs::File::create(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        file.write_all(&out).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<CriticNet> {
        let bytes = fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let bad = |detail: &str| Error::BadCheckpoint {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        };
        let mut cur = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if bytes.len() < cur + n {
                return Err(bad("file truncated"));
            }
            let s = &bytes[cur..cur + n];
            cur += n;
            Ok(s)
        };

        if take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("wrong magic bytes"));
        }
        if take(1)?[0] != CHECKPOINT_VERSION {
            return Err(bad("unsupported version"));
        }
        let n_layers = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(bad("implausible layer count"));
        }
        let mut dims = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let ncols = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let nrows = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            if ncols == 0 || nrows == 0 || ncols > 1 << 16 || nrows > 1 << 16 {
                return Err(bad("implausible layer shape"));
            }
            dims.push((nrows, ncols));
        }
        let mut read_f64 = |n: usize| -> Result<Vec<f64>> {
            let mut vals = Vec::with_capacity(n);
            for _ in 0..n {
                let v = f64::from_le_bytes(take(8)?.try_into().unwrap());
                if !v.is_finite() {
                    return Err(bad("non-finite parameter value"));
                }
                vals.push(v);
            }
            Ok(vals)
        };
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for &(nrows, ncols) in &dims {
            let w_vals = read_f64(nrows * ncols)?;
            let b_vals = read_f64(nrows)?;
            weights.push(DMatrix::from_fn(nrows, ncols, |r, c| w_vals[r * ncols + c]));
            biases.push(DVector::from_vec(b_vals));
        }
        if cur != bytes.len() {
            return Err(bad("trailing bytes after parameters"));
        }
        CriticNet::from_parts(weights, biases)
            .map_err(|e| bad(&format!("inconsistent shapes: {e}")))
    }
}
