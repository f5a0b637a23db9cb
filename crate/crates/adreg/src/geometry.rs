//! Rotations, rigid transforms, and their derivatives.
//!
//! A rigid motion is parametrized by six numbers: a rotation vector
//! `omega` (axis times angle, in radians) and a translation vector. The
//! rotation matrix is recovered through the Rodrigues exponential map,
//! and [`d_transform_d_params`] gives the exact 3x6 Jacobian of a
//! transformed point with respect to those six parameters, which is what
//! gradient-based alignment needs.
//!
//! All trigonometric coefficient functions switch to their Taylor
//! expansions below [`SMALL_ANGLE`] so that derivatives stay accurate
//! through the identity rotation.

use nalgebra::{Matrix3, Matrix3x6, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Rotation angle (radians) below which closed-form Rodrigues coefficients
/// are replaced by series expansions. At 1e-8 the truncation error of the
/// quadratic series terms is below machine epsilon.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Tolerance used by [`check_rotation`] for orthogonality and determinant.
pub const ROTATION_CHECK_TOL: f64 = 1e-9;

/// A rigid transform `p -> R(rotation_vector) * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    /// Axis-angle rotation vector; its norm is the angle in radians.
    pub rotation_vector: Vec3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation_vector: Vec3::zeros(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation_vector: Vec3, translation: Vec3) -> Self {
        RigidTransform {
            rotation_vector,
            translation,
        }
    }

    pub fn rotation_matrix(&self) -> Result<Mat3> {
        exp_map(&self.rotation_vector)
    }

    /// Apply to a single point. For bulk application precompute the
    /// rotation matrix once instead.
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        rodrigues(&self.rotation_vector) * p + self.translation
    }

    /// Same transform with the rotation vector wrapped into canonical range.
    pub fn canonicalized(&self) -> Self {
        RigidTransform {
            rotation_vector: canonicalize_rotation_vector(&self.rotation_vector),
            translation: self.translation,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rotation_vector.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
    }
}

/// Cross-product matrix: `skew(v) * p == v.cross(p)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula without input validation; total on finite inputs.
fn rodrigues(omega: &Vec3) -> Mat3 {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    // sin(t)/t and (1-cos(t))/t^2
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(omega);
    Mat3::identity() + a * k + b * (k * k)
}

/// Exponential map from a rotation vector to a rotation matrix.
pub fn exp_map(omega: &Vec3) -> Result<Mat3> {
    if !omega.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("rotation vector"));
    }
    Ok(rodrigues(omega))
}

/// Inverse of [`exp_map`]: rotation matrix to rotation vector with angle in
/// `[0, pi]`. Near `pi` the axis sign is fixed by the largest component.
pub fn log_map(r: &Mat3) -> Result<Vec3> {
    check_rotation(r)?;
    let cos_theta = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    // vee(R - R^T) = 2 sin(theta) * axis
    let vee = Vec3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    if theta < SMALL_ANGLE {
        return Ok(vee / 2.0);
    }
    let sin_theta = theta.sin();
    if sin_theta > 1e-6 {
        return Ok(vee * (theta / (2.0 * sin_theta)));
    }
    // theta near pi: recover the axis from the symmetric part,
    // R + I = 2 (cos(theta) I + (1 - cos(theta)) axis axis^T) approx 2 axis axis^T.
    let b = (r + Mat3::identity()) / 2.0;
    let diag = Vec3::new(b[(0, 0)], b[(1, 1)], b[(2, 2)]);
    let i = diag.imax();
    let mut axis = Vec3::new(b[(i, 0)], b[(i, 1)], b[(i, 2)]) / diag[i].max(1e-12).sqrt();
    let norm = axis.norm();
    if norm < 1e-6 {
        return Err(Error::NotARotation(
            "cannot extract rotation axis".to_string(),
        ));
    }
    axis /= norm;
    // Near pi the antisymmetric part is tiny but its sign still
    // disambiguates axis from -axis.
    if vee.dot(&axis) < 0.0 {
        axis = -axis;
    }
    Ok(axis * theta)
}

/// Right Jacobian of the exponential map: `exp(omega + d) ~= exp(omega) exp(Jr(omega) d)`.
fn right_jacobian(omega: &Vec3) -> Mat3 {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    let k = skew(omega);
    Mat3::identity() - a * k + b * (k * k)
}

/// Jacobian of `R(omega) p + t` with respect to `(omega, t)`.
///
/// Columns 0..3 differentiate in the rotation vector, columns 3..6 in the
/// translation (an identity block). At `omega == 0` the rotation block
/// reduces to `-skew(p)`.
pub fn d_transform_d_params(transform: &RigidTransform, p: &Vec3) -> Matrix3x6<f64> {
    let r = rodrigues(&transform.rotation_vector);
    let jr = right_jacobian(&transform.rotation_vector);
    let rot_block = -r * skew(p) * jr;
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot_block);
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
    j
}

/// Shared rotation/Jacobian factors for differentiating one transform at
/// many points without redoing the trigonometry.
pub(crate) struct TransformDiff {
    pub rotation: Mat3,
    right_jacobian: Mat3,
    translation: Vec3,
}

impl TransformDiff {
    pub fn new(transform: &RigidTransform) -> Self {
        TransformDiff {
            rotation: rodrigues(&transform.rotation_vector),
            right_jacobian: right_jacobian(&transform.rotation_vector),
            translation: transform.translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn jacobian(&self, p: &Vec3) -> Matrix3x6<f64> {
        let rot_block = -self.rotation * skew(p) * self.right_jacobian;
        let mut j = Matrix3x6::zeros();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot_block);
        j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
        j
    }
}

/// Verify `R^T R == I` and `det(R) == 1` within [`ROTATION_CHECK_TOL`].
pub fn check_rotation(r: &Mat3) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("rotation matrix"));
    }
    let gram = r.transpose() * r;
    let ortho_err = (gram - Mat3::identity()).abs().max();
    if ortho_err > ROTATION_CHECK_TOL * 10.0 {
        return Err(Error::NotARotation(format!(
            "orthogonality residual {ortho_err:.3e}"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_CHECK_TOL * 10.0 {
        return Err(Error::NotARotation(format!("determinant {det:.12}")));
    }
    Ok(())
}

/// Angular distance (radians, in `[0, pi]`) between two rotation matrices:
/// `2 asin(|R_a - R_b|_F / sqrt(8))`, which equals the geodesic angle of
/// `R_a^T R_b`.
pub fn angular_distance(r_a: &Mat3, r_b: &Mat3) -> Result<f64> {
    check_rotation(r_a)?;
    check_rotation(r_b)?;
    let fro = (r_a - r_b).norm();
    let arg = (fro / 8.0_f64.sqrt()).clamp(0.0, 1.0);
    Ok(2.0 * arg.asin())
}

/// Wrap a rotation vector so its angle lies in `[0, pi]`, flipping the axis
/// when the wrapped angle exceeds `pi`. The represented rotation is
/// unchanged; zero maps to zero.
pub fn canonicalize_rotation_vector(omega: &Vec3) -> Vec3 {
    use std::f64::consts::{PI, TAU};
    let theta = omega.norm();
    if theta == 0.0 {
        return *omega;
    }
    let wrapped = theta.rem_euclid(TAU);
    let axis = omega / theta;
    if wrapped <= PI {
        axis * wrapped
    } else {
        -axis * (TAU - wrapped)
    }
}
