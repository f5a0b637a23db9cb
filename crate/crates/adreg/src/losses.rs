//! Adversarial losses and their gradients.
//!
//! The critic is trained to score target points high and transformed
//! source points low; its loss is the negated mean-score gap plus a
//! gradient penalty that keeps it 1-Lipschitz. The generator loss scores
//! the transformed source batch and chains the critic's input gradient
//! through the transform Jacobian to produce a 6-vector gradient in the
//! rotation/translation parameters.

use nalgebra::Vector6;
use rand::Rng;

use crate::critic::{CriticGradients, CriticNet};
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, TransformDiff, Vec3};

/// One gradient-penalty evaluation point: a random convex combination of a
/// target point and a transformed source point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interpolate {
    pub point: Vec3,
    pub alpha: f64,
}

/// Negated critic score gap:
/// `-(mean f(target) - mean f(transformed_source))`. Minimizing this drives
/// the two score distributions apart; its negation estimates the
/// Wasserstein-1 distance between the clouds.
pub fn critic_loss(
    net: &CriticNet,
    target_batch: &[Vec3],
    transformed_source: &[Vec3],
) -> Result<f64> {
    if target_batch.is_empty() || transformed_source.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mean_target = target_batch.iter().map(|p| net.forward(p)).sum::<f64>()
        / target_batch.len() as f64;
    let mean_source = transformed_source
        .iter()
        .map(|p| net.forward(p))
        .sum::<f64>()
        / transformed_source.len() as f64;
    Ok(-(mean_target - mean_source))
}

/// Pair batches index-wise (truncating to the shorter) and mix each pair
/// with its own alpha drawn uniformly from [0, 1).
pub fn make_interpolates(
    target_batch: &[Vec3],
    transformed_source: &[Vec3],
    rng: &mut impl Rng,
) -> Vec<Interpolate> {
    let k = target_batch.len().min(transformed_source.len());
    (0..k)
        .map(|i| {
            let alpha: f64 = rng.random();
            Interpolate {
                point: alpha * target_batch[i] + (1.0 - alpha) * transformed_source[i],
                alpha,
            }
        })
        .collect()
}

/// Mean unit-norm penalty `(|grad_x f| - 1)^2` over the interpolates.
pub fn gradient_penalty(net: &CriticNet, interpolates: &[Interpolate]) -> Result<f64> {
    if interpolates.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let sum: f64 = interpolates
        .iter()
        .map(|it| {
            let n = net.grad_input(&it.point).norm();
            (n - 1.0) * (n - 1.0)
        })
        .sum();
    Ok(sum / interpolates.len() as f64)
}

/// Full critic objective `critic_loss + lambda * gradient_penalty` and its
/// parameter gradient, with the interpolates supplied by the caller (used
/// directly by finite-difference checks, which must hold them fixed).
pub fn critic_loss_full_frozen(
    net: &CriticNet,
    target_batch: &[Vec3],
    transformed_source: &[Vec3],
    lambda: f64,
    interpolates: &[Interpolate],
) -> Result<(f64, CriticGradients)> {
    if target_batch.is_empty() || transformed_source.is_empty() || interpolates.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let base = critic_loss(net, target_batch, transformed_source)?;

    // Base-loss gradient in one reverse pass over both batches.
    let n = target_batch.len() as f64;
    let m = transformed_source.len() as f64;
    let mut points = Vec::with_capacity(target_batch.len() + transformed_source.len());
    points.extend_from_slice(target_batch);
    points.extend_from_slice(transformed_source);
    let mut cotangents = vec![-1.0 / n; target_batch.len()];
    cotangents.extend(std::iter::repeat(1.0 / m).take(transformed_source.len()));
    let mut grads = net.backward_params(&points, &cotangents)?;

    let mut penalty_sum = 0.0;
    let per_interp = lambda / interpolates.len() as f64;
    for it in interpolates {
        let (value, gp_grads) = net.backward_gp(&it.point);
        penalty_sum += value;
        grads.add_scaled(per_interp, &gp_grads);
    }
    let penalty = penalty_sum / interpolates.len() as f64;
    Ok((base + lambda * penalty, grads))
}

/// One critic training evaluation: samples fresh interpolates from `rng`,
/// then returns the penalized loss and its parameter gradient.
pub fn critic_loss_full(
    net: &CriticNet,
    target_batch: &[Vec3],
    transformed_source: &[Vec3],
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<(f64, CriticGradients)> {
    let interpolates = make_interpolates(target_batch, transformed_source, rng);
    critic_loss_full_frozen(net, target_batch, transformed_source, lambda, &interpolates)
}

/// Generator objective `-mean f(M(source))` and its gradient in the six
/// transform parameters.
pub fn generator_loss(
    net: &CriticNet,
    source_batch: &[Vec3],
    transform: &RigidTransform,
) -> Result<(f64, Vector6<f64>)> {
    generator_loss_augmented(net, source_batch, transform, 1.0, &Vec3::zeros())
}

/// [`generator_loss`] with the per-epoch training augmentation applied on
/// top of the transform: each point is scored at
/// `scale * (R p + t) + shift`. The chain rule multiplies the parameter
/// gradient by `scale`.
pub fn generator_loss_augmented(
    net: &CriticNet,
    source_batch: &[Vec3],
    transform: &RigidTransform,
    scale: f64,
    shift: &Vec3,
) -> Result<(f64, Vector6<f64>)> {
    if source_batch.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !transform.is_finite() || !scale.is_finite() || !shift.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("generator transform or augmentation"));
    }
    let diff = TransformDiff::new(transform);
    let m = source_batch.len() as f64;
    let mut value_sum = 0.0;
    let mut grad = Vector6::zeros();
    for p in source_batch {
        let y = diff.apply(p) * scale + shift;
        let (value, g_in) = net.value_and_grad_input(&y);
        value_sum += value;
        grad += diff.jacobian(p).transpose() * g_in;
    }
    Ok((-value_sum / m, grad * (-scale / m)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// f(x) = w . x, exact gradients everywhere.
    fn linear_critic(w: [f64; 3]) -> CriticNet {
        CriticNet::from_parts(
            vec![DMatrix::from_row_slice(1, 3, &w)],
            vec![DVector::zeros(1)],
        )
        .unwrap()
    }

    fn small_net(seed: u64) -> CriticNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CriticNet::init(8, 3, &mut rng).unwrap()
    }

    fn random_batch(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                )
            })
            .collect()
    }

    fn min_margin(net: &CriticNet, points: &[Vec3]) -> f64 {
        points
            .iter()
            .map(|p| net.kink_margin(p))
            .fold(f64::INFINITY, f64::min)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn critic_loss_hand_value() {
        let net = linear_critic([1.0, 0.0, 0.0]);
        let target = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0)];
        let source = vec![Vec3::new(0.0, 5.0, 0.0)];
        assert_relative_eq!(
            critic_loss(&net, &target, &source).unwrap(),
            -2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn critic_loss_swapping_batches_negates() {
        let net = small_net(50);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let a = random_batch(&mut rng, 7);
        let b = random_batch(&mut rng, 13);
        let ab = critic_loss(&net, &a, &b).unwrap();
        let ba = critic_loss(&net, &b, &a).unwrap();
        assert_eq!(ab, -ba);
    }

    #[test]
    fn critic_loss_rejects_empty() {
        let net = small_net(1);
        assert!(critic_loss(&net, &[], &[Vec3::zeros()]).is_err());
        assert!(critic_loss(&net, &[Vec3::zeros()], &[]).is_err());
    }

    #[test]
    fn interpolates_are_convex_combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let target = random_batch(&mut rng, 9);
        let source = random_batch(&mut rng, 5);
        let interps = make_interpolates(&target, &source, &mut rng);
        assert_eq!(interps.len(), 5);
        for (i, it) in interps.iter().enumerate() {
            assert!((0.0..1.0).contains(&it.alpha));
            let expect = it.alpha * target[i] + (1.0 - it.alpha) * source[i];
            assert_eq!(it.point, expect);
        }
    }

    #[test]
    fn interpolate_alphas_are_uniform() {
        // Mean of 10k U[0,1) draws within 4 sigma = 4 / (sqrt(12) * 100).
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let target = vec![Vec3::zeros(); 10_000];
        let source = vec![Vec3::new(1.0, 0.0, 0.0); 10_000];
        let interps = make_interpolates(&target, &source, &mut rng);
        let mean = interps.iter().map(|i| i.alpha).sum::<f64>() / interps.len() as f64;
        assert!((mean - 0.5).abs() < 0.0116, "alpha mean {mean}");
        // alpha = 1 would sit exactly on the target point; alpha = 0 on the
        // source point. Check the mixing direction via the x coordinate.
        for it in &interps {
            assert_relative_eq!(it.point.x, 1.0 - it.alpha, epsilon = 1e-15);
        }
    }

    #[test]
    fn gradient_penalty_of_linear_critic() {
        let interps = vec![
            Interpolate {
                point: Vec3::new(0.1, 0.2, 0.3),
                alpha: 0.5,
            },
            Interpolate {
                point: Vec3::new(-1.0, 2.0, 0.0),
                alpha: 0.25,
            },
        ];
        // |grad| = 3 everywhere: penalty (3-1)^2 = 4.
        let net = linear_critic([3.0, 0.0, 0.0]);
        assert_relative_eq!(gradient_penalty(&net, &interps).unwrap(), 4.0, epsilon = 1e-12);
        // Unit-gradient critic: penalty 0.
        let net = linear_critic([0.6, 0.8, 0.0]);
        assert_relative_eq!(gradient_penalty(&net, &interps).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn critic_loss_full_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for seed in 0..3 {
            let net = small_net(700 + seed);
            let (target, source, interps) = loop {
                let target = random_batch(&mut rng, 5);
                let source = random_batch(&mut rng, 4);
                let interps = make_interpolates(&target, &source, &mut rng);
                let pts: Vec<Vec3> = target
                    .iter()
                    .chain(&source)
                    .copied()
                    .chain(interps.iter().map(|i| i.point))
                    .collect();
                if min_margin(&net, &pts) > 1e-4 {
                    break (target, source, interps);
                }
            };
            let lambda = 10.0;
            let (value, grads) =
                critic_loss_full_frozen(&net, &target, &source, lambda, &interps).unwrap();
            let direct = critic_loss(&net, &target, &source).unwrap()
                + lambda * gradient_penalty(&net, &interps).unwrap();
            assert_relative_eq!(value, direct, epsilon = 1e-12);

            let mut flat = vec![0.0; net.num_params()];
            grads.write_flat(&mut flat);
            let scalar = |n: &CriticNet| -> f64 {
                critic_loss(n, &target, &source).unwrap()
                    + lambda * gradient_penalty(n, &interps).unwrap()
            };
            let n_params = net.num_params();
            let mut flat_params = vec![0.0; n_params];
            net.write_flat(&mut flat_params);
            let mut probe = net.clone();
            let h = 1e-5;
            for i in 0..n_params {
                let orig = flat_params[i];
                flat_params[i] = orig + h;
                probe.read_flat(&flat_params);
                let plus = scalar(&probe);
                flat_params[i] = orig - h;
                probe.read_flat(&flat_params);
                let minus = scalar(&probe);
                flat_params[i] = orig;
                let fd = (plus - minus) / (2.0 * h);
                assert!(
                    rel_err(flat[i], fd) < 1e-4,
                    "param {i}: analytic {} vs fd {fd}",
                    flat[i]
                );
            }
        }
    }

    #[test]
    fn generator_loss_linear_critic_hand_values() {
        // f(x) = x . e1, identity transform: value is -mean(x1) and the
        // translation gradient is exactly (-1, 0, 0).
        let net = linear_critic([1.0, 0.0, 0.0]);
        let batch = vec![Vec3::new(2.0, 1.0, 0.0), Vec3::new(4.0, -1.0, 3.0)];
        let (value, grad) =
            generator_loss(&net, &batch, &RigidTransform::identity()).unwrap();
        assert_relative_eq!(value, -3.0, epsilon = 1e-15);
        assert_relative_eq!(grad[3], -1.0, epsilon = 1e-15);
        assert_relative_eq!(grad[4], 0.0, epsilon = 1e-15);
        assert_relative_eq!(grad[5], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn generator_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        for seed in 0..3 {
            let net = small_net(800 + seed);
            let transform = RigidTransform::new(
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
                Vec3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                ),
            );
            let (scale, shift) = (1.7, Vec3::new(0.3, -0.2, 0.5));
            let batch = loop {
                let batch = random_batch(&mut rng, 6);
                let diff_points: Vec<Vec3> = batch
                    .iter()
                    .map(|p| transform.apply(p) * scale + shift)
                    .collect();
                if min_margin(&net, &diff_points) > 1e-4 {
                    break batch;
                }
            };
            let (_, grad) =
                generator_loss_augmented(&net, &batch, &transform, scale, &shift).unwrap();

            let eval = |params: &[f64; 6]| -> f64 {
                let t = RigidTransform::new(
                    Vec3::new(params[0], params[1], params[2]),
                    Vec3::new(params[3], params[4], params[5]),
                );
                let value_sum: f64 = batch
                    .iter()
                    .map(|p| net.forward(&(t.apply(p) * scale + shift)))
                    .sum();
                -value_sum / batch.len() as f64
            };
            let mut params = [
                transform.rotation_vector.x,
                transform.rotation_vector.y,
                transform.rotation_vector.z,
                transform.translation.x,
                transform.translation.y,
                transform.translation.z,
            ];
            let h = 1e-6;
            for k in 0..6 {
                let orig = params[k];
                params[k] = orig + h;
                let plus = eval(&params);
                params[k] = orig - h;
                let minus = eval(&params);
                params[k] = orig;
                let fd = (plus - minus) / (2.0 * h);
                assert!(
                    rel_err(grad[k], fd) < 1e-5,
                    "param {k}: analytic {} vs fd {fd}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn generator_loss_rejects_bad_inputs() {
        let net = small_net(2);
        assert!(generator_loss(&net, &[], &RigidTransform::identity()).is_err());
        let bad = RigidTransform::new(Vec3::new(f64::NAN, 0.0, 0.0), Vec3::zeros());
        assert!(generator_loss(&net, &[Vec3::zeros()], &bad).is_err());
    }
}
