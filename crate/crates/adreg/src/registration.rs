//! Adversarial rigid registration: the training loop that alternates
//! critic updates with transform updates.
//!
//! Each epoch runs `k_critic` critic steps (fresh mini-batches from both
//! clouds, penalized critic loss, Adam on the network weights) followed by
//! `k_generator` transform steps (fresh source mini-batch, generator loss,
//! Adam on the six transform parameters). Everything downstream of the
//! seed is deterministic: one counter-based RNG stream drives critic
//! initialization, batch sampling, interpolates, and augmentation draws.
//!
//! Two modes:
//!
//! * **Joint** — all six parameters optimized together.
//! * **Two-phase** — first rotation only, with a per-epoch random-shift /
//!   random-scale augmentation that makes the critic blind to translation
//!   and absolute scale; then translation only, with the rotation frozen
//!   and a freshly initialized critic.
//!
//! Inputs are optionally normalized (centroid to origin, RMS radius to 1)
//! per cloud; results are mapped back to the original target coordinates
//! before being returned.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::critic::CriticNet;
use crate::error::{Error, Result};
use crate::geometry::{
    canonicalize_rotation_vector, exp_map, RigidTransform, Vec3,
};
use crate::losses::{critic_loss_full, generator_loss_augmented};
use crate::optim::{adam_step, AdamState, Schedule};
use crate::pointcloud::{NormalizationRecord, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Joint,
    RotationThenTranslation,
}

/// All knobs of the adversarial optimizer. `Default` gives a configuration
/// that registers normalized clouds without further tuning; TOML config
/// files override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_epochs: usize,
    /// Critic updates per epoch.
    pub k_critic: usize,
    /// Transform updates per epoch.
    pub k_generator: usize,
    pub batch_size: Schedule,
    pub lr_critic: Schedule,
    pub lr_generator: Schedule,
    /// Weight of the critic's unit-gradient penalty.
    pub lambda_gp: f64,
    pub mode: Mode,
    /// Std-dev of the per-epoch random shifts applied (independently) to
    /// each cloud during the rotation phase; 0 disables shifting.
    pub augment_shift_sigma: f64,
    /// Range of the per-epoch random scale shared by both clouds during
    /// the rotation phase; (1, 1) disables scaling.
    pub augment_scale_range: (f64, f64),
    pub normalize_inputs: bool,
    pub seed: u64,
    /// Angular error (degrees) under which a registration counts as a
    /// success in benchmark summaries.
    pub success_threshold_deg: f64,
    pub critic_width: usize,
    pub critic_depth: usize,
    /// Stop a phase early once the generator loss has gone
    /// `plateau_patience` consecutive epochs without improving on its best
    /// value by more than `plateau_min_delta`. 0 disables the stop.
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_epochs: 500,
            k_critic: 10,
            k_generator: 1,
            batch_size: Schedule::constant(128.0),
            lr_critic: Schedule::constant(1e-3),
            lr_generator: Schedule::exponential(1e-2, 0.99),
            lambda_gp: 10.0,
            mode: Mode::Joint,
            augment_shift_sigma: 0.1,
            augment_scale_range: (0.5, 2.0),
            normalize_inputs: true,
            seed: 0,
            success_threshold_deg: 4.0,
            critic_width: 32,
            critic_depth: 4,
            plateau_patience: 0,
            plateau_min_delta: 0.0,
        }
    }
}

impl TrainConfig {
    /// Preset for zero-translation experiment sweeps: rotation phase with
    /// the shift/scale masking disabled (nothing to mask) and a larger
    /// initial step budget so severe rotations are reachable within the
    /// epoch budget.
    pub fn sweep_preset() -> TrainConfig {
        TrainConfig {
            lr_generator: Schedule::exponential(5e-2, 0.99),
            augment_shift_sigma: 0.0,
            augment_scale_range: (1.0, 1.0),
            ..TrainConfig::default()
        }
    }

    /// Preset for two-phase runs on clouds with unknown translation:
    /// default shift/scale masking, sweep-sized step budget for the
    /// rotation phase.
    pub fn two_phase_preset() -> TrainConfig {
        TrainConfig {
            mode: Mode::RotationThenTranslation,
            lr_generator: Schedule::exponential(5e-2, 0.99),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_critic == 0 {
            return Err(Error::InvalidConfig("k_critic must be at least 1".into()));
        }
        if self.k_generator == 0 {
            return Err(Error::InvalidConfig(
                "k_generator must be at least 1".into(),
            ));
        }
        self.batch_size.validate("batch_size")?;
        self.lr_critic.validate("lr_critic")?;
        self.lr_generator.validate("lr_generator")?;
        if !self.lambda_gp.is_finite() || self.lambda_gp < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda_gp must be finite and non-negative, got {}",
                self.lambda_gp
            )));
        }
        if !self.augment_shift_sigma.is_finite() || self.augment_shift_sigma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "augment_shift_sigma must be finite and non-negative, got {}",
                self.augment_shift_sigma
            )));
        }
        let (lo, hi) = self.augment_scale_range;
        if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || hi < lo {
            return Err(Error::InvalidConfig(format!(
                "augment_scale_range must satisfy 0 < low <= high, got ({lo}, {hi})"
            )));
        }
        if !self.success_threshold_deg.is_finite() || self.success_threshold_deg <= 0.0 {
            return Err(Error::InvalidConfig(
                "success_threshold_deg must be positive".into(),
            ));
        }
        if self.critic_width == 0 {
            return Err(Error::InvalidConfig("critic_width must be at least 1".into()));
        }
        if self.critic_depth < 2 {
            return Err(Error::InvalidConfig(
                "critic_depth must be at least 2".into(),
            ));
        }
        if !self.plateau_min_delta.is_finite() || self.plateau_min_delta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "plateau_min_delta must be finite and non-negative, got {}",
                self.plateau_min_delta
            )));
        }
        Ok(())
    }

    pub fn success_threshold_rad(&self) -> f64 {
        self.success_threshold_deg.to_radians()
    }

    pub fn from_toml_str(text: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }
}

/// Per-epoch losses: the last critic step's penalized loss and the last
/// generator step's loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub epoch: usize,
    pub critic_loss: f64,
    pub generator_loss: f64,
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    /// Estimated source-to-target transform in the original (input)
    /// coordinates, rotation vector canonicalized to angle <= pi.
    pub transform: RigidTransform,
    pub epochs_run: usize,
    pub trace: Vec<TraceEntry>,
    pub wall_time: Duration,
}

/// Which transform parameters an optimization phase may move.
#[derive(Debug, Clone, Copy)]
enum FreeParams {
    All,
    RotationOnly,
    /// Translation free, rotation frozen at the given vector.
    TranslationOnly(Vec3),
}

impl FreeParams {
    fn dof(&self) -> usize {
        match self {
            FreeParams::All => 6,
            _ => 3,
        }
    }

    fn transform(&self, p: &[f64]) -> RigidTransform {
        match *self {
            FreeParams::All => RigidTransform::new(
                Vec3::new(p[0], p[1], p[2]),
                Vec3::new(p[3], p[4], p[5]),
            ),
            FreeParams::RotationOnly => {
                RigidTransform::new(Vec3::new(p[0], p[1], p[2]), Vec3::zeros())
            }
            FreeParams::TranslationOnly(rot) => {
                RigidTransform::new(rot, Vec3::new(p[0], p[1], p[2]))
            }
        }
    }

    fn select_grad(&self, g: &nalgebra::Vector6<f64>) -> Vec<f64> {
        match self {
            FreeParams::All => g.iter().copied().collect(),
            FreeParams::RotationOnly => vec![g[0], g[1], g[2]],
            FreeParams::TranslationOnly(_) => vec![g[3], g[4], g[5]],
        }
    }
}

/// One epoch's augmentation draw. Degenerate settings (sigma 0, collapsed
/// scale range) consume no randomness, so a degenerately-augmented run
/// replays exactly like an unaugmented one under the same seed.
#[derive(Debug, Clone, Copy)]
struct EpochAugment {
    scale: f64,
    shift_source: Vec3,
    shift_target: Vec3,
}

impl EpochAugment {
    const IDENTITY: EpochAugment = EpochAugment {
        scale: 1.0,
        shift_source: Vec3::new(0.0, 0.0, 0.0),
        shift_target: Vec3::new(0.0, 0.0, 0.0),
    };

    fn draw(sigma: f64, scale_range: (f64, f64), rng: &mut ChaCha8Rng) -> EpochAugment {
        let shift = |rng: &mut ChaCha8Rng| -> Vec3 {
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("validated sigma");
                Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))
            } else {
                Vec3::zeros()
            }
        };
        let shift_source = shift(rng);
        let shift_target = shift(rng);
        let (lo, hi) = scale_range;
        let scale = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        EpochAugment {
            scale,
            shift_source,
            shift_target,
        }
    }
}

fn sample_points(points: &[Vec3], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    (0..n).map(|_| points[rng.random_range(0..points.len())]).collect()
}

fn numerical(epoch: usize, what: &str, detail: impl std::fmt::Display) -> Error {
    Error::NumericalFailure(format!("epoch {epoch}, {what}: {detail}"))
}

/// The adversarial loop over already-normalized point lists. Returns the
/// transform in the working frame plus the loss trace.
fn run_loop(
    source: &[Vec3],
    target: &[Vec3],
    cfg: &TrainConfig,
    free: FreeParams,
    augment: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(RigidTransform, Vec<TraceEntry>)> {
    let mut net = CriticNet::init(cfg.critic_width, cfg.critic_depth, rng)?;
    let n_params = net.num_params();
    let mut critic_adam = AdamState::new(n_params, cfg.lr_critic.value(0));
    let mut flat_params = vec![0.0; n_params];
    let mut flat_grads = vec![0.0; n_params];

    let mut gen_params = vec![0.0; free.dof()];
    let mut gen_adam = AdamState::new(free.dof(), cfg.lr_generator.value(0));

    let mut trace = Vec::with_capacity(cfg.n_epochs);
    let mut best_gen_loss = f64::INFINITY;
    let mut stalled_epochs = 0usize;
    for epoch in 0..cfg.n_epochs {
        critic_adam.lr = cfg.lr_critic.value(epoch);
        gen_adam.lr = cfg.lr_generator.value(epoch);
        let batch_n = cfg.batch_size.batch_size(epoch);
        let aug = if augment {
            EpochAugment::draw(cfg.augment_shift_sigma, cfg.augment_scale_range, rng)
        } else {
            EpochAugment::IDENTITY
        };

        let mut entry = TraceEntry {
            epoch,
            critic_loss: f64::NAN,
            generator_loss: f64::NAN,
        };

        for _ in 0..cfg.k_critic {
            let target_batch = sample_points(target, batch_n, rng);
            let source_batch = sample_points(source, batch_n, rng);
            let transform = free.transform(&gen_params);
            let r = exp_map(&transform.rotation_vector)?;
            let transformed: Vec<Vec3> = source_batch
                .iter()
                .map(|p| (r * p + transform.translation) * aug.scale + aug.shift_source)
                .collect();
            let target_aug: Vec<Vec3> = target_batch
                .iter()
                .map(|x| x * aug.scale + aug.shift_target)
                .collect();
            let (loss, grads) =
                critic_loss_full(&net, &target_aug, &transformed, cfg.lambda_gp, rng)?;
            if !loss.is_finite() {
                return Err(numerical(epoch, "critic loss", loss));
            }
            grads.write_flat(&mut flat_grads);
            net.write_flat(&mut flat_params);
            adam_step(&mut critic_adam, &mut flat_params, &flat_grads)
                .map_err(|e| numerical(epoch, "critic update", e))?;
            net.read_flat(&flat_params);
            entry.critic_loss = loss;
        }

        for _ in 0..cfg.k_generator {
            let source_batch = sample_points(source, batch_n, rng);
            let transform = free.transform(&gen_params);
            let (loss, g6) = generator_loss_augmented(
                &net,
                &source_batch,
                &transform,
                aug.scale,
                &aug.shift_source,
            )?;
            if !loss.is_finite() {
                return Err(numerical(epoch, "generator loss", loss));
            }
            let grads = free.select_grad(&g6);
            adam_step(&mut gen_adam, &mut gen_params, &grads)
                .map_err(|e| numerical(epoch, "transform update", e))?;
            entry.generator_loss = loss;
        }

        trace.push(entry);

        if cfg.plateau_patience > 0 {
            if entry.generator_loss < best_gen_loss - cfg.plateau_min_delta {
                best_gen_loss = entry.generator_loss;
                stalled_epochs = 0;
            } else {
                stalled_epochs += 1;
                if stalled_epochs >= cfg.plateau_patience {
                    break;
                }
            }
        }
    }
    Ok((free.transform(&gen_params), trace))
}

/// Validated, optionally normalized working copies of both clouds.
struct Prepared {
    source: Vec<Vec3>,
    target: Vec<Vec3>,
    source_rec: NormalizationRecord,
    target_rec: NormalizationRecord,
}

fn prepare(source: &PointCloud, target: &PointCloud, normalize: bool) -> Result<Prepared> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if normalize {
        let (src, source_rec) = source.normalize()?;
        let (tgt, target_rec) = target.normalize()?;
        Ok(Prepared {
            source: src.points().to_vec(),
            target: tgt.points().to_vec(),
            source_rec,
            target_rec,
        })
    } else {
        // Still refuse fully collapsed clouds; there is nothing to align.
        for (cloud, name) in [(source, "source"), (target, "target")] {
            if cloud.rms_scale()? <= crate::pointcloud::DEGENERATE_SCALE {
                return Err(Error::DegenerateCloud(format!(
                    "{name} cloud has zero spread"
                )));
            }
        }
        Ok(Prepared {
            source: source.points().to_vec(),
            target: target.points().to_vec(),
            source_rec: NormalizationRecord::identity(),
            target_rec: NormalizationRecord::identity(),
        })
    }
}

/// Map a transform learned between normalized clouds back to the original
/// coordinates. The rotation carries over unchanged; the translation
/// composes the two centroid/scale records around it. Exact when the two
/// clouds have equal RMS scale (always true for rigidly related clouds).
fn recompose(
    learned: &RigidTransform,
    source_rec: &NormalizationRecord,
    target_rec: &NormalizationRecord,
) -> Result<RigidTransform> {
    let r = exp_map(&learned.rotation_vector)?;
    let translation = target_rec.centroid + target_rec.scale * learned.translation
        - r * source_rec.centroid;
    Ok(RigidTransform::new(
        canonicalize_rotation_vector(&learned.rotation_vector),
        translation,
    ))
}

/// Estimate the rigid transform taking `source` onto `target`.
pub fn register(
    source: &PointCloud,
    target: &PointCloud,
    cfg: &TrainConfig,
) -> Result<RegistrationResult> {
    let start = Instant::now();
    cfg.validate()?;
    let prep = prepare(source, target, cfg.normalize_inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let (learned, trace) = match cfg.mode {
        Mode::Joint => run_loop(
            &prep.source,
            &prep.target,
            cfg,
            FreeParams::All,
            false,
            &mut rng,
        )?,
        Mode::RotationThenTranslation => {
            let (rot, mut trace) = run_loop(
                &prep.source,
                &prep.target,
                cfg,
                FreeParams::RotationOnly,
                true,
                &mut rng,
            )?;
            // Second phase: rotation frozen, fresh critic, no augmentation.
            let (full, phase2) = run_loop(
                &prep.source,
                &prep.target,
                cfg,
                FreeParams::TranslationOnly(rot.rotation_vector),
                false,
                &mut rng,
            )?;
            let phase1_len = trace.len();
            trace.extend(phase2.into_iter().map(|e| TraceEntry {
                epoch: e.epoch + phase1_len,
                ..e
            }));
            (full, trace)
        }
    };

    let transform = recompose(&learned, &prep.source_rec, &prep.target_rec)?;
    Ok(RegistrationResult {
        transform,
        epochs_run: trace.len(),
        trace,
        wall_time: start.elapsed(),
    })
}

/// Rotation-only phase: translation frozen at zero, per-epoch shift/scale
/// augmentation active so the critic cannot exploit position or scale.
/// The returned transform carries the learned rotation and zero
/// translation (rotations are unaffected by normalization, so no frame
/// mapping applies).
pub fn register_rotation_phase(
    source: &PointCloud,
    target: &PointCloud,
    cfg: &TrainConfig,
) -> Result<RegistrationResult> {
    let start = Instant::now();
    cfg.validate()?;
    let prep = prepare(source, target, cfg.normalize_inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (learned, trace) = run_loop(
        &prep.source,
        &prep.target,
        cfg,
        FreeParams::RotationOnly,
        true,
        &mut rng,
    )?;
    Ok(RegistrationResult {
        transform: RigidTransform::new(
            canonicalize_rotation_vector(&learned.rotation_vector),
            Vec3::zeros(),
        ),
        epochs_run: trace.len(),
        trace,
        wall_time: start.elapsed(),
    })
}

/// Translation-only phase: optimizes translation with `fixed_rotation`
/// (given in the original coordinates) held constant; no augmentation.
pub fn register_translation_phase(
    source: &PointCloud,
    target: &PointCloud,
    fixed_rotation: &RigidTransform,
    cfg: &TrainConfig,
) -> Result<RegistrationResult> {
    let start = Instant::now();
    cfg.validate()?;
    if !fixed_rotation.is_finite() {
        return Err(Error::NonFinite("fixed rotation"));
    }
    let prep = prepare(source, target, cfg.normalize_inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (learned, trace) = run_loop(
        &prep.source,
        &prep.target,
        cfg,
        FreeParams::TranslationOnly(fixed_rotation.rotation_vector),
        false,
        &mut rng,
    )?;
    let transform = recompose(&learned, &prep.source_rec, &prep.target_rec)?;
    Ok(RegistrationResult {
        transform,
        epochs_run: trace.len(),
        trace,
        wall_time: start.elapsed(),
    })
}
