//! Built-in numerical verification: every hand-derived gradient in the
//! crate is re-checked against central finite differences, and the
//! rotation metric is re-checked against an independent quaternion
//! formulation. Shipped (not test-only) so a deployed binary can prove its
//! own calculus on the machine it runs on.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::critic::CriticNet;
use crate::geometry::{
    angular_distance, d_transform_d_params, exp_map, RigidTransform, Vec3,
};
use crate::losses::{critic_loss_full_frozen, generator_loss, gradient_penalty, make_interpolates};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckReport {
    fn new(name: &'static str, max_error: f64, tolerance: f64) -> Self {
        CheckReport {
            name,
            max_error,
            tolerance,
            passed: max_error.is_finite() && max_error < tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelfCheckOptions {
    /// Random instances per gradient check.
    pub gradient_seeds: u64,
    /// Random rotation pairs for the metric oracles.
    pub metric_samples: usize,
    pub seed: u64,
}

impl Default for SelfCheckOptions {
    fn default() -> Self {
        SelfCheckOptions {
            gradient_seeds: 50,
            metric_samples: 1000,
            seed: 0x5E1F_C4EC,
        }
    }
}

/// Deliberate corruption of one analytic value, for exercising the
/// failure path end to end.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    CriticParamGrad,
}

pub fn run_all(opts: &SelfCheckOptions) -> Vec<CheckReport> {
    run_with_fault(opts, None)
}

pub fn all_passed(reports: &[CheckReport]) -> bool {
    !reports.is_empty() && reports.iter().all(|r| r.passed)
}

#[doc(hidden)]
pub fn run_with_fault(opts: &SelfCheckOptions, fault: Option<Fault>) -> Vec<CheckReport> {
    vec![
        check_transform_jacobian(opts),
        check_critic_param_grad(opts, fault),
        check_critic_input_grad(opts),
        check_gradient_penalty_grad(opts),
        check_critic_loss_full_grad(opts),
        check_generator_loss_grad(opts),
        check_angular_distance_oracle(opts),
        check_exp_map_magnitude(opts),
    ]
}

const KINK_MARGIN: f64 = 1e-3;

/// Relative error with an absolute floor: entries whose true magnitude
/// sits below `floor` are compared on the `floor` scale instead, so
/// mathematically-zero gradients are not penalized for finite-difference
/// round-off noise. The floor is chosen per check from its loss magnitude
/// and step size.
fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 {
            return v / n;
        }
    }
}

fn random_point(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(
        rng.random_range(-1.5..1.5),
        rng.random_range(-1.5..1.5),
        rng.random_range(-1.5..1.5),
    )
}

/// Point at which the critic's ReLU pattern is stable under the FD step.
fn point_off_kinks(net: &CriticNet, rng: &mut ChaCha8Rng) -> Vec3 {
    let mut x = random_point(rng);
    for _ in 0..200 {
        if net.kink_margin(&x) > KINK_MARGIN {
            break;
        }
        x = random_point(rng);
    }
    x
}

fn small_net(rng: &mut ChaCha8Rng) -> CriticNet {
    CriticNet::init(8, 3, rng).expect("valid small net")
}

/// Max error between `analytic` and the central difference of `scalar`
/// over every network parameter.
fn param_fd_max_err(
    net: &CriticNet,
    analytic: &[f64],
    scalar: impl Fn(&CriticNet) -> f64,
    h: f64,
    floor: f64,
) -> f64 {
    let n = net.num_params();
    let mut flat = vec![0.0; n];
    net.write_flat(&mut flat);
    let mut work = net.clone();
    let mut max_err = 0.0f64;
    for i in 0..n {
        let orig = flat[i];
        flat[i] = orig + h;
        work.read_flat(&flat);
        let fp = scalar(&work);
        flat[i] = orig - h;
        work.read_flat(&flat);
        let fm = scalar(&work);
        flat[i] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let err = rel_err(analytic[i], fd, floor);
        max_err = max_err.max(err);
    }
    work.read_flat(&flat);
    max_err
}

/// d(transform)/d(params) against finite differences of the transformed
/// point, exercising magnitudes from the Taylor branch up to near pi.
fn check_transform_jacobian(opts: &SelfCheckOptions) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x01);
    let h = 1e-6;
    let mut max_err = 0.0f64;
    for _ in 0..opts.gradient_seeds {
        for magnitude in [0.0, 1e-9, 0.5, 3.0] {
            let transform = RigidTransform::new(
                random_unit(&mut rng) * magnitude,
                random_point(&mut rng),
            );
            let p = random_point(&mut rng);
            let jac = d_transform_d_params(&transform, &p);
            let mut params = [0.0f64; 6];
            params[..3].copy_from_slice(transform.rotation_vector.as_slice());
            params[3..].copy_from_slice(transform.translation.as_slice());
            for col in 0..6 {
                let mut plus = params;
                plus[col] += h;
                let mut minus = params;
                minus[col] -= h;
                let apply = |q: &[f64; 6]| {
                    RigidTransform::new(
                        Vec3::new(q[0], q[1], q[2]),
                        Vec3::new(q[3], q[4], q[5]),
                    )
                    .apply(&p)
                };
                let fd = (apply(&plus) - apply(&minus)) / (2.0 * h);
                for row in 0..3 {
                    max_err = max_err.max((jac[(row, col)] - fd[row]).abs());
                }
            }
        }
    }
    CheckReport::new("transform_jacobian_fd", max_err, 1e-6)
}

/// Parameter gradient of a weighted batch output against finite
/// differences.
fn check_critic_param_grad(opts: &SelfCheckOptions, fault: Option<Fault>) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x02);
    let mut max_err = 0.0f64;
    for _ in 0..opts.gradient_seeds {
        let net = small_net(&mut rng);
        let points: Vec<Vec3> = (0..4).map(|_| point_off_kinks(&net, &mut rng)).collect();
        let cotangents: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grads = net
            .backward_params(&points, &cotangents)
            .expect("well-formed batch");
        let mut analytic = vec![0.0; net.num_params()];
        grads.write_flat(&mut analytic);
        if fault == Some(Fault::CriticParamGrad) {
            analytic[0] += 1e-2;
        }
        let scalar = |n: &CriticNet| -> f64 {
            points
                .iter()
                .zip(&cotangents)
                .map(|(x, c)| c * n.forward(x))
                .sum()
        };
        max_err = max_err.max(param_fd_max_err(&net, &analytic, scalar, 1e-5, 1e-5));
    }
    CheckReport::new("critic_param_grad_fd", max_err, 1e-5)
}

/// Input gradient against finite differences in the three coordinates.
fn check_critic_input_grad(opts: &SelfCheckOptions) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x03);
    let h = 1e-6;
    let mut max_err = 0.0f64;
    for _ in 0..opts.gradient_seeds {
        let net = small_net(&mut rng);
        for _ in 0..2 {
            let x = point_off_kinks(&net, &mut rng);
            let g = net.grad_input(&x);
            for dim in 0..3 {
                let mut plus = x;
                plus[dim] += h;
                let mut minus = x;
                minus[dim] -= h;
                let fd = (net.forward(&plus) - net.forward(&minus)) / (2.0 * h);
                max_err = max_err.max((g[dim] - fd).abs());
            }
        }
    }
    CheckReport::new("critic_input_grad_fd", max_err, 1e-6)
}

/// Parameter gradient of the per-point penalty `(|grad f| - 1)^2` against
/// finite differences of that scalar — the second-order path.
fn check_gradient_penalty_grad(opts: &SelfCheckOptions) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x04);
    let mut max_err = 0.0f64;
    for _ in 0..opts.gradient_seeds {
        let net = small_net(&mut rng);
        let x = point_off_kinks(&net, &mut rng);
        let (_, grads) = net.backward_gp(&x);
        let mut analytic = vec![0.0; net.num_params()];
        grads.write_flat(&mut analytic);
        let scalar = |n: &CriticNet| -> f64 {
            let g = n.grad_input(&x).norm();
            (g - 1.0) * (g - 1.0)
        };
        max_err = max_err.max(param_fd_max_err(&net, &analytic, scalar, 1e-5, 1e-5));
    }
    CheckReport::new("gradient_penalty_grad_fd", max_err, 1e-4)
}

/// Parameter gradient of the penalized critic loss with frozen
/// interpolates against finite differences.
fn check_critic_loss_full_grad(opts: &SelfCheckOptions) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x05);
    let lambda = 10.0;
    let mut max_err = 0.0f64;
    for _ in 0..opts.gradient_seeds {
        let net = small_net(&mut rng);
        let target: Vec<Vec3> = (0..5).map(|_| point_off_kinks(&net, &mut rng)).collect();
        let source: Vec<Vec3> = (0..4).map(|_| point_off_kinks(&net, &mut rng)).collect();
        // Resample the interpolate set until every point sits clear of the
        // ReLU kinks, so the finite differences see a fixed mask pattern.
        let mut interpolates = make_interpolates(&target, &source, &mut rng);
        for _ in 0..100 {
            if interpolates
                .iter()
                .all(|it| net.kink_margin(&it.point) > KINK_MARGIN)
            {
                break;
            }
            interpolates = make_interpolates(&target, &source, &mut rng);
        }
        let (_, grads) =
            critic_loss_full_frozen(&net, &target, &source, lambda, &interpolates).unwrap();
        let mut analytic = vec![0.0; net.num_params()];
        grads.write_flat(&mut analytic);
        let scalar = |n: &CriticNet| -> f64 {
            let base: f64 = source.iter().map(|x| n.forward(x)).sum::<f64>() / source.len() as f64
                - target.iter().map(|x| n.forward(x)).sum::<f64>() / target.len() as f64;
            let penalty = gradient_penalty(n, &interpolates).unwrap();
            base + lambda * penalty
        };
        max_err = max_err.max(param_fd_max_err(&net, &analytic, scalar, 1e-5, 1e-4));
    }
    CheckReport::new("critic_loss_full_grad_fd", max_err, 1e-4)
}

/// Transform-parameter gradient of the generator loss against finite
/// differences over all six parameters.
fn check_generator_loss_grad(opts: &SelfCheckOptions) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x06);
    let h = 1e-5;
    let mut max_err = 0.0f64;
    for _ in 0..opts.gradient_seeds {
        let net = small_net(&mut rng);
        let transform = RigidTransform::new(
            random_unit(&mut rng) * rng.random_range(0.0..2.0),
            random_point(&mut rng) * 0.3,
        );
        // Keep the transformed batch clear of kinks so FD is trustworthy.
        let mut batch = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut p = random_point(&mut rng);
            for _ in 0..200 {
                if net.kink_margin(&transform.apply(&p)) > KINK_MARGIN {
                    break;
                }
                p = random_point(&mut rng);
            }
            batch.push(p);
        }
        let (_, grad) = generator_loss(&net, &batch, &transform).unwrap();
        let mut params = [0.0f64; 6];
        params[..3].copy_from_slice(transform.rotation_vector.as_slice());
        params[3..].copy_from_slice(transform.translation.as_slice());
        for col in 0..6 {
            let eval = |q: &[f64; 6]| -> f64 {
                let t = RigidTransform::new(
                    Vec3::new(q[0], q[1], q[2]),
                    Vec3::new(q[3], q[4], q[5]),
                );
                generator_loss(&net, &batch, &t).unwrap().0
            };
            let mut plus = params;
            plus[col] += h;
            let mut minus = params;
            minus[col] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            max_err = max_err.max(rel_err(grad[col], fd, 1e-5));
        }
    }
    CheckReport::new("generator_loss_grad_fd", max_err, 1e-5)
}

/// Quaternion for the rotation vector `omega` (Hamilton convention).
fn quat_from_omega(omega: &Vec3) -> [f64; 4] {
    let theta = omega.norm();
    if theta < 1e-12 {
        return [1.0, omega.x / 2.0, omega.y / 2.0, omega.z / 2.0];
    }
    let (s, c) = (theta / 2.0).sin_cos();
    let u = omega / theta;
    [c, s * u.x, s * u.y, s * u.z]
}

fn quat_geodesic(qa: &[f64; 4], qb: &[f64; 4]) -> f64 {
    let dot: f64 = qa.iter().zip(qb).map(|(a, b)| a * b).sum();
    2.0 * dot.abs().min(1.0).acos()
}

/// Rotation-matrix distance against the quaternion geodesic angle.
fn check_angular_distance_oracle(opts: &SelfCheckOptions) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x07);
    let mut max_err = 0.0f64;
    for _ in 0..opts.metric_samples {
        let wa = random_unit(&mut rng) * rng.random_range(0.0..std::f64::consts::PI);
        let wb = random_unit(&mut rng) * rng.random_range(0.0..std::f64::consts::PI);
        let d = angular_distance(&exp_map(&wa).unwrap(), &exp_map(&wb).unwrap()).unwrap();
        let q = quat_geodesic(&quat_from_omega(&wa), &quat_from_omega(&wb));
        max_err = max_err.max((d - q).abs());
    }
    CheckReport::new("angular_distance_oracle", max_err, 1e-9)
}

/// d(I, exp(omega)) must equal |omega| on [0, pi). The antipode itself is
/// excluded: every chart of SO(3) is ill-conditioned there, so magnitudes
/// stop at pi - 1e-6.
fn check_exp_map_magnitude(opts: &SelfCheckOptions) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x08);
    let identity = crate::geometry::Mat3::identity();
    let mut max_err = 0.0f64;
    let cap = std::f64::consts::PI - 1e-6;
    let mut magnitudes: Vec<f64> = vec![0.0, 1e-9, 1e-4, 1.0, 2.0, 3.0, cap];
    for _ in 0..opts.metric_samples {
        magnitudes.push(rng.random_range(0.0..cap));
    }
    for magnitude in magnitudes {
        let omega = random_unit(&mut rng) * magnitude;
        let d = angular_distance(&identity, &exp_map(&omega).unwrap()).unwrap();
        max_err = max_err.max((d - magnitude).abs());
    }
    CheckReport::new("exp_map_magnitude_oracle", max_err, 1e-9)
}
