//! Synthetic registration experiments: generate perturbed instances from a
//! base cloud, run the adversarial method and ICP on identical instances,
//! and aggregate per-level success ratios.
//!
//! Every instance in these sweeps is translation-free (the ground truth is
//! a pure rotation about the origin), so the adversarial method trains its
//! rotation phase only, while ICP runs in full as the baseline. Trials are
//! embarrassingly parallel; each derives an independent RNG stream from
//! (experiment seed, level index, trial index), so results are identical
//! regardless of worker count or scheduling.

use std::io::Write as IoWrite;
use std::time::Duration;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angular_distance, exp_map, RigidTransform, Vec3};
use crate::icp::{icp_register, IcpConfig};
use crate::pointcloud::PointCloud;
use crate::registration::{register_rotation_phase, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationKind {
    /// Sweep the initial rotation magnitude (degrees); no other corruption.
    RotationSweep,
    /// Gaussian noise on both clouds; level = sigma relative to cloud RMS.
    Noise,
    /// Keep two overlapping slices of the cloud; level = overlap fraction.
    PartialOverlap,
    /// Append uniform outliers to both clouds; level = outlier fraction.
    Outliers,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub kind: AugmentationKind,
    pub levels: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials_per_level: usize,
    /// Initial rotation magnitude for the non-sweep kinds.
    #[serde(default = "default_base_rotation")]
    pub base_rotation_deg: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_trials() -> usize {
    10
}

fn default_base_rotation() -> f64 {
    24.0
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidConfig("levels must be non-empty".into()));
        }
        if self.trials_per_level == 0 {
            return Err(Error::InvalidConfig(
                "trials_per_level must be at least 1".into(),
            ));
        }
        if !(0.0..=180.0).contains(&self.base_rotation_deg) {
            return Err(Error::InvalidConfig(
                "base_rotation_deg must lie in [0, 180]".into(),
            ));
        }
        for &level in &self.levels {
            let ok = level.is_finite()
                && match self.kind {
                    AugmentationKind::RotationSweep => (0.0..=180.0).contains(&level),
                    AugmentationKind::Noise => level >= 0.0,
                    AugmentationKind::PartialOverlap => level > 0.0 && level <= 1.0,
                    AugmentationKind::Outliers => (0.0..1.0).contains(&level),
                };
            if !ok {
                return Err(Error::InvalidConfig(format!(
                    "level {level} out of range for {:?}",
                    self.kind
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<AugmentationSpec> {
        let spec: AugmentationSpec =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_file(path: &std::path::Path) -> Result<AugmentationSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Adversarial,
    Icp,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Adversarial => "adversarial",
            Method::Icp => "icp",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub method: Method,
    pub level: f64,
    pub trial: usize,
    /// Radians; NaN when the trial failed with an error.
    pub angular_error: f64,
    pub translation_error: f64,
    pub success: bool,
    pub epochs: usize,
    pub wall_time: Duration,
    /// Error message for trials that failed to run.
    pub diagnostic: Option<String>,
}

/// Rotation by `magnitude_deg` about a uniformly random axis.
pub fn random_rotation<R: Rng + ?Sized>(magnitude_deg: f64, rng: &mut R) -> Result<RigidTransform> {
    if !(0.0..=180.0).contains(&magnitude_deg) {
        return Err(Error::InvalidConfig(format!(
            "rotation magnitude {magnitude_deg} outside [0, 180] degrees"
        )));
    }
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let omega = Vec3::new(axis[0], axis[1], axis[2]) * magnitude_deg.to_radians();
    Ok(RigidTransform::new(omega, Vec3::zeros()))
}

/// Perturb every coordinate by Normal(0, (sigma_relative * cloud RMS)^2).
pub fn add_noise<R: Rng + ?Sized>(
    cloud: &PointCloud,
    sigma_relative: f64,
    rng: &mut R,
) -> Result<PointCloud> {
    if !sigma_relative.is_finite() || sigma_relative < 0.0 {
        return Err(Error::InvalidConfig(
            "noise sigma must be non-negative".into(),
        ));
    }
    if sigma_relative == 0.0 {
        return Ok(cloud.clone());
    }
    let sigma = sigma_relative * cloud.rms_scale()?;
    let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            Vec3::new(
                p.x + normal.sample(rng),
                p.y + normal.sample(rng),
                p.z + normal.sample(rng),
            )
        })
        .collect();
    PointCloud::new(points)
}

/// Two slices that share `alpha` of the cloud: project onto a random
/// direction, take the lowest and highest (1+alpha)/2 fractions. Point
/// order within each slice follows the original cloud.
pub fn partial_overlap_split<R: Rng + ?Sized>(
    cloud: &PointCloud,
    alpha: f64,
    rng: &mut R,
) -> Result<(PointCloud, PointCloud)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(
            "overlap fraction must lie in (0, 1]".into(),
        ));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let n = cloud.len();
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let dir = Vec3::new(dir[0], dir[1], dir[2]);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let pa = cloud.points()[a].dot(&dir);
        let pb = cloud.points()[b].dot(&dir);
        pa.total_cmp(&pb).then(a.cmp(&b))
    });
    let k = ((1.0 + alpha) / 2.0 * n as f64).round() as usize;
    let k = k.clamp(1, n);

    let mut low: Vec<usize> = order[..k].to_vec();
    let mut high: Vec<usize> = order[n - k..].to_vec();
    low.sort_unstable();
    high.sort_unstable();
    let pick = |idx: &[usize]| -> Result<PointCloud> {
        PointCloud::new(idx.iter().map(|&i| cloud.points()[i]).collect())
    };
    Ok((pick(&low)?, pick(&high)?))
}

/// Append ceil(fraction * n) points sampled uniformly from the cloud's
/// axis-aligned bounding box.
pub fn add_outliers<R: Rng + ?Sized>(
    cloud: &PointCloud,
    fraction: f64,
    rng: &mut R,
) -> Result<PointCloud> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(
            "outlier fraction must lie in [0, 1)".into(),
        ));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let extra = (fraction * cloud.len() as f64).ceil() as usize;
    if extra == 0 {
        return Ok(cloud.clone());
    }
    let mut lo = Vec3::from_element(f64::INFINITY);
    let mut hi = Vec3::from_element(f64::NEG_INFINITY);
    for p in cloud.points() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let mut points = cloud.points().to_vec();
    for _ in 0..extra {
        points.push(Vec3::new(
            rng.random_range(lo.x..=hi.x),
            rng.random_range(lo.y..=hi.y),
            rng.random_range(lo.z..=hi.z),
        ));
    }
    PointCloud::new(points)
}

/// Points sampled uniformly by area from a unit-sphere section (polar
/// angle up to 90 degrees, azimuth up to 160 degrees). The cut boundaries
/// leave the shape with no rotational symmetry — unlike boxes or full
/// spheres, which a distribution-matching method can align only up to a
/// symmetry — and keeping the azimuth span under 180 degrees also keeps
/// every half-turn image of the section clear of the original, so no
/// near-symmetric decoy pose sits at the antipode of the true rotation.
pub fn sphere_section_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cos_theta_min = 90f64.to_radians().cos();
    let phi_max = 160f64.to_radians();
    let points = (0..n)
        .map(|_| {
            let z = rng.random_range(cos_theta_min..=1.0);
            let phi = rng.random_range(0.0..phi_max);
            let r = (1.0 - z * z).max(0.0).sqrt();
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect();
    PointCloud::new(points).expect("generated points are finite")
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

fn derive_seed(root: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root).wrapping_add(a)).wrapping_add(b))
}

struct Instance {
    source: PointCloud,
    target: PointCloud,
    ground_truth: RigidTransform,
}

fn make_instance(
    base: &PointCloud,
    spec: &AugmentationSpec,
    level: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Instance> {
    let magnitude = match spec.kind {
        AugmentationKind::RotationSweep => level,
        _ => spec.base_rotation_deg,
    };
    let ground_truth = random_rotation(magnitude, rng)?;
    let (source, target) = match spec.kind {
        AugmentationKind::RotationSweep => (base.clone(), base.transformed(&ground_truth)),
        AugmentationKind::Noise => (
            add_noise(base, level, rng)?,
            add_noise(&base.transformed(&ground_truth), level, rng)?,
        ),
        AugmentationKind::PartialOverlap => {
            let (a, b) = partial_overlap_split(base, level, rng)?;
            let b = b.transformed(&ground_truth);
            (a, b)
        }
        AugmentationKind::Outliers => (
            add_outliers(base, level, rng)?,
            add_outliers(&base.transformed(&ground_truth), level, rng)?,
        ),
    };
    Ok(Instance {
        source,
        target,
        ground_truth,
    })
}

fn evaluate(
    method: Method,
    level: f64,
    trial: usize,
    estimate: Result<(RigidTransform, usize, Duration)>,
    ground_truth: &RigidTransform,
    threshold_rad: f64,
) -> TrialResult {
    match estimate {
        Ok((transform, epochs, wall_time)) => {
            let gt_rot = exp_map(&ground_truth.rotation_vector).expect("finite ground truth");
            let angular_error = transform
                .rotation_matrix()
                .and_then(|r| angular_distance(&gt_rot, &r))
                .unwrap_or(f64::NAN);
            let translation_error = (transform.translation - ground_truth.translation).norm();
            TrialResult {
                method,
                level,
                trial,
                angular_error,
                translation_error,
                success: angular_error < threshold_rad,
                epochs,
                wall_time,
                diagnostic: None,
            }
        }
        Err(e) => TrialResult {
            method,
            level,
            trial,
            angular_error: f64::NAN,
            translation_error: f64::NAN,
            success: false,
            epochs: 0,
            wall_time: Duration::ZERO,
            diagnostic: Some(e.to_string()),
        },
    }
}

/// Run every (level, trial, method) combination and return the results
/// ordered by level index, then trial, then the order of `methods`.
/// Failures of individual trials are recorded, not propagated.
pub fn run_experiment(
    base: &PointCloud,
    spec: &AugmentationSpec,
    methods: &[Method],
    train_cfg: &TrainConfig,
    icp_cfg: &IcpConfig,
) -> Result<Vec<TrialResult>> {
    spec.validate()?;
    train_cfg.validate()?;
    icp_cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods selected".into()));
    }
    if base.len() < 3 {
        return Err(Error::TooFewPairs {
            got: base.len(),
            need: 3,
        });
    }
    let threshold = train_cfg.success_threshold_rad();

    let tasks: Vec<(usize, usize)> = (0..spec.levels.len())
        .flat_map(|li| (0..spec.trials_per_level).map(move |t| (li, t)))
        .collect();

    let results: Vec<Vec<TrialResult>> = tasks
        .par_iter()
        .map(|&(level_idx, trial)| {
            let level = spec.levels[level_idx];
            let instance_seed = derive_seed(spec.seed, level_idx as u64, trial as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(instance_seed);
            let instance = match make_instance(base, spec, level, &mut rng) {
                Ok(i) => i,
                Err(e) => {
                    // The instance itself failed: record the error once per
                    // method so aggregation still sees every cell.
                    return methods
                        .iter()
                        .map(|&m| {
                            evaluate(
                                m,
                                level,
                                trial,
                                Err(Error::InvalidConfig(e.to_string())),
                                &RigidTransform::identity(),
                                threshold,
                            )
                        })
                        .collect();
                }
            };
            methods
                .iter()
                .map(|&method| {
                    let estimate = match method {
                        Method::Adversarial => {
                            let mut cfg = train_cfg.clone();
                            cfg.seed = splitmix64(instance_seed ^ 0xA5A5_5A5A_C3C3_3C3C);
                            register_rotation_phase(&instance.source, &instance.target, &cfg)
                                .map(|r| (r.transform, r.epochs_run, r.wall_time))
                        }
                        Method::Icp => icp_register(&instance.source, &instance.target, icp_cfg)
                            .map(|r| (r.transform, r.iterations, r.wall_time)),
                    };
                    evaluate(
                        method,
                        level,
                        trial,
                        estimate,
                        &instance.ground_truth,
                        threshold,
                    )
                })
                .collect()
        })
        .collect();

    Ok(results.into_iter().flatten().collect())
}

/// Success counts per (method, level), in result order.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub level: f64,
    pub trials: usize,
    pub successes: usize,
}

impl SummaryRow {
    pub fn ratio(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

pub fn summarize(results: &[TrialResult]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    for r in results {
        match rows
            .iter_mut()
            .find(|row| row.method == r.method && row.level == r.level)
        {
            Some(row) => {
                row.trials += 1;
                row.successes += r.success as usize;
            }
            None => rows.push(SummaryRow {
                method: r.method,
                level: r.level,
                trials: 1,
                successes: r.success as usize,
            }),
        }
    }
    rows
}

/// CSV with a fixed header; floating-point fields use round-trip-exact
/// scientific notation so identical runs produce identical bytes.
pub fn write_csv<W: IoWrite>(results: &[TrialResult], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "method,level,trial,angular_error_deg,translation_error,success,epochs,wall_time_s"
    )?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{:.16e},{:.16e},{},{},{:.3}",
            r.method.as_str(),
            r.level,
            r.trial,
            r.angular_error.to_degrees(),
            r.translation_error,
            r.success,
            r.epochs,
            r.wall_time.as_secs_f64(),
        )?;
    }
    Ok(())
}
