//! Scratch probes for hyperparameter calibration. Not part of the suite:
//! every test is #[ignore]d and meant to be run manually with --nocapture.

use adreg::benchmark::random_rotation;
use adreg::geometry::{angular_distance, exp_map, RigidTransform, Vec3};
use adreg::optim::Schedule;
use adreg::pointcloud::PointCloud;
use adreg::registration::{register, register_rotation_phase, Mode, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn section(theta_max_deg: f64, phi_max_deg: f64, n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cos_min = theta_max_deg.to_radians().cos();
    let phi_max = phi_max_deg.to_radians();
    let points = (0..n)
        .map(|_| {
            let z = rng.random_range(cos_min..=1.0);
            let phi = rng.random_range(0.0..phi_max);
            let r = (1.0 - z * z).max(0.0_f64).sqrt();
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect();
    PointCloud::new(points).unwrap()
}

fn tuned(lr: Schedule, sigma: f64) -> TrainConfig {
    TrainConfig {
        lr_generator: lr,
        k_critic: 10,
        augment_shift_sigma: sigma,
        augment_scale_range: if sigma == 0.0 { (1.0, 1.0) } else { (0.5, 2.0) },
        ..TrainConfig::default()
    }
}

fn run_self(cloud: &PointCloud, cfg: &TrainConfig, seed: u64) -> f64 {
    let cfg = TrainConfig {
        seed,
        mode: Mode::Joint,
        ..cfg.clone()
    };
    let r = register(cloud, cloud, &cfg).unwrap();
    let rot = exp_map(&r.transform.rotation_vector).unwrap();
    angular_distance(&rot, &nalgebra::Matrix3::identity())
        .unwrap()
        .to_degrees()
}

fn run_rot(cloud: &PointCloud, cfg: &TrainConfig, deg: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDEAD_BEEF);
    let truth = random_rotation(deg, &mut rng).unwrap();
    let target = cloud.transformed(&truth);
    let cfg = TrainConfig {
        seed,
        ..cfg.clone()
    };
    let r = register_rotation_phase(cloud, &target, &cfg).unwrap();
    let got = exp_map(&r.transform.rotation_vector).unwrap();
    let want = exp_map(&truth.rotation_vector).unwrap();
    angular_distance(&got, &want).unwrap().to_degrees()
}

fn report(label: &str, case: &str, errs: &[f64], secs: f64) {
    let ok = errs.iter().filter(|e| **e < 4.0).count();
    let list: Vec<String> = errs.iter().map(|e| format!("{e:6.2}")).collect();
    println!(
        "{label:<22} {case:>6}: ok {ok}/{} [{}] avg {:.1}s",
        errs.len(),
        list.join(" "),
        secs / errs.len() as f64
    );
}

#[test]
#[ignore]
fn probe_shape() {
    // Does shrinking the section extents remove the 180-degree flip twin?
    let shapes = [
        ("C1 t90/p160", section(90.0, 160.0, 2000, 7)),
        ("C2 t100/p170", section(100.0, 170.0, 2000, 7)),
        ("C3 t120/p200", section(120.0, 200.0, 2000, 7)),
    ];
    let cfg = tuned(Schedule::exponential(5e-2, 0.99), 0.0);
    for (label, cloud) in &shapes {
        for deg in [120.0, 180.0] {
            let t0 = Instant::now();
            let errs: Vec<f64> = (0..4)
                .map(|s| run_rot(cloud, &cfg, deg, 2000 + s))
                .collect();
            report(label, &format!("rot{deg:.0}"), &errs, t0.elapsed().as_secs_f64());
        }
    }
}

#[test]
#[ignore]
fn probe_sigma() {
    // Small shift sigmas: translation blindness without drowning the
    // rotation signal. Run on the candidate bundled shape.
    let cloud = section(90.0, 160.0, 2000, 7);
    let shift = RigidTransform {
        rotation_vector: Vec3::zeros(),
        translation: Vec3::new(2.0, -1.0, 0.5),
    };
    let shifted = cloud.transformed(&shift);
    for sigma in [0.1, 0.3] {
        // Identity recovery on pure-translation clouds (default-style lr).
        let cfg = tuned(Schedule::exponential(1e-2, 0.995), sigma);
        let t0 = Instant::now();
        let errs: Vec<f64> = (0..4)
            .map(|s| {
                let cfg = TrainConfig {
                    seed: 3000 + s,
                    ..cfg.clone()
                };
                let r = register_rotation_phase(&cloud, &shifted, &cfg).unwrap();
                let got = exp_map(&r.transform.rotation_vector).unwrap();
                angular_distance(&got, &nalgebra::Matrix3::identity())
                    .unwrap()
                    .to_degrees()
            })
            .collect();
        report(
            &format!("T s{sigma} transl"),
            "ident",
            &errs,
            t0.elapsed().as_secs_f64(),
        );
        // Rotation recovery through the augmentation noise (two-phase lr).
        let cfg = tuned(Schedule::exponential(5e-2, 0.99), sigma);
        let t0 = Instant::now();
        let errs: Vec<f64> = (0..3)
            .map(|s| run_rot(&cloud, &cfg, 60.0, 2000 + s))
            .collect();
        report(
            &format!("R s{sigma} aug"),
            "rot60",
            &errs,
            t0.elapsed().as_secs_f64(),
        );
    }
}

#[test]
#[ignore]
fn probe_self2() {
    // Margin hunt for the default config on the candidate bundled shape.
    let cloud = section(90.0, 160.0, 2000, 7);
    let variants: Vec<(&str, TrainConfig)> = vec![
        (
            "D7 kc10 lr1e-2",
            tuned(Schedule::exponential(1e-2, 0.995), 0.0),
        ),
        (
            "D8 kc10 r.99",
            tuned(Schedule::exponential(1e-2, 0.99), 0.0),
        ),
        (
            "D9 kc10 batch*",
            TrainConfig {
                batch_size: Schedule::step(128.0, 2.0, 167),
                ..tuned(Schedule::exponential(1e-2, 0.995), 0.0)
            },
        ),
    ];
    for (label, cfg) in &variants {
        let t0 = Instant::now();
        let errs: Vec<f64> = (0..6).map(|s| run_self(&cloud, cfg, 1000 + s)).collect();
        report(label, "self", &errs, t0.elapsed().as_secs_f64());
    }
}

#[test]
#[ignore]
fn probe_examples() {
    // Candidate-default behavior on the documented example scenarios.
    use adreg::registration::register_translation_phase;
    let cloud = section(90.0, 160.0, 2000, 7);
    let default_cand = tuned(Schedule::exponential(1e-2, 0.995), 0.1);

    // 24-degree rotation, zero translation, rotation-only mode.
    let t0 = Instant::now();
    let errs: Vec<f64> = (0..4)
        .map(|s| run_rot(&cloud, &default_cand, 24.0, 6000 + s))
        .collect();
    report("E rot24 default", "rot24", &errs, t0.elapsed().as_secs_f64());

    // Translation phase, identity rotation, identical clouds.
    let t0 = Instant::now();
    let tnorms: Vec<f64> = (0..4)
        .map(|s| {
            let cfg = TrainConfig {
                seed: 6100 + s,
                ..default_cand.clone()
            };
            let r = register_translation_phase(
                &cloud,
                &cloud,
                &RigidTransform::identity(),
                &cfg,
            )
            .unwrap();
            r.transform.translation.norm()
        })
        .collect();
    let list: Vec<String> = tnorms.iter().map(|t| format!("{t:7.4}")).collect();
    println!(
        "E transl self    |t| (<0.05): [{}] avg {:.1}s",
        list.join(" "),
        t0.elapsed().as_secs_f64() / 4.0
    );

    // Pure translation with the rotation fixed correctly.
    let shift = Vec3::new(0.8, -0.5, 0.3);
    let target = cloud.transformed(&RigidTransform {
        rotation_vector: Vec3::zeros(),
        translation: shift,
    });
    let scale = cloud.rms_scale().unwrap();
    let t0 = Instant::now();
    let terrs: Vec<f64> = (0..4)
        .map(|s| {
            let cfg = TrainConfig {
                seed: 6200 + s,
                ..default_cand.clone()
            };
            let r = register_translation_phase(
                &cloud,
                &target,
                &RigidTransform::identity(),
                &cfg,
            )
            .unwrap();
            (r.transform.translation - shift).norm() / scale
        })
        .collect();
    let list: Vec<String> = terrs.iter().map(|t| format!("{t:7.4}")).collect();
    println!(
        "E transl pure    rel err (<0.05): [{}] avg {:.1}s",
        list.join(" "),
        t0.elapsed().as_secs_f64() / 4.0
    );
}

#[test]
#[ignore]
fn probe_icp() {
    // ICP success ratios from identity init across rotation magnitudes on
    // the candidate bundled shape.
    use adreg::icp::{icp_register, IcpConfig};
    let cloud = section(90.0, 160.0, 2000, 7);
    for deg in [12.0, 24.0, 60.0, 120.0, 180.0] {
        let t0 = Instant::now();
        let errs: Vec<f64> = (0..6)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64((7000 + s) ^ 0xDEAD_BEEF);
                let truth = random_rotation(deg, &mut rng).unwrap();
                let target = cloud.transformed(&truth);
                let r = icp_register(&cloud, &target, &IcpConfig::default()).unwrap();
                let got = exp_map(&r.transform.rotation_vector).unwrap();
                let want = exp_map(&truth.rotation_vector).unwrap();
                angular_distance(&got, &want).unwrap().to_degrees()
            })
            .collect();
        report("ICP", &format!("rot{deg:.0}"), &errs, t0.elapsed().as_secs_f64());
    }
}

#[test]
#[ignore]
fn probe_two_phase() {
    // Random rotations (standard-normal rotation vectors) plus random
    // translations; compare two-phase vs joint.
    use rand_distr::{Distribution, Normal};
    let cloud = section(90.0, 160.0, 2000, 7);
    let n_trials = 6;
    let mut errs_joint = Vec::new();
    let mut errs_two = Vec::new();
    let t0 = Instant::now();
    for trial in 0..n_trials {
        let mut rng = ChaCha8Rng::seed_from_u64(41_000 + trial);
        let n = Normal::new(0.0, 1.0).unwrap();
        let omega = Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
        let t = Vec3::new(
            0.5 * n.sample(&mut rng),
            0.5 * n.sample(&mut rng),
            0.5 * n.sample(&mut rng),
        );
        let truth = RigidTransform {
            rotation_vector: omega,
            translation: t,
        };
        let target = cloud.transformed(&truth);
        let want = exp_map(&truth.rotation_vector).unwrap();
        for (mode, errs) in [
            (Mode::Joint, &mut errs_joint),
            (Mode::RotationThenTranslation, &mut errs_two),
        ] {
            let cfg = TrainConfig {
                mode,
                seed: 50_000 + trial,
                ..tuned(Schedule::exponential(5e-2, 0.99), 0.1)
            };
            let r = register(&cloud, &target, &cfg).unwrap();
            let got = exp_map(&r.transform.rotation_vector).unwrap();
            errs.push(angular_distance(&got, &want).unwrap().to_degrees());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let med = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    report("U joint", "rand", &errs_joint.clone(), secs / (2 * n_trials) as f64);
    report("U two-phase", "rand", &errs_two.clone(), secs / (2 * n_trials) as f64);
    println!(
        "   medians: joint {:.2}  two-phase {:.2}",
        med(&mut errs_joint),
        med(&mut errs_two)
    );
}

#[test]
#[ignore]
fn probe_final() {
    // Default-schedule candidates that must anneal by epoch 200 (the
    // short self-registration example) while keeping enough travel budget
    // for the 24-degree rotation example at the full epoch count.
    let cloud = section(90.0, 160.0, 2000, 7);
    let cands = [
        ("A 1e-2/.985", Schedule::exponential(1e-2, 0.985)),
        ("B 2e-2/.98", Schedule::exponential(2e-2, 0.98)),
    ];
    for (label, lr) in &cands {
        let base = tuned(*lr, 0.1);

        // 200-epoch joint self-registration: rotation and translation.
        let t0 = Instant::now();
        let mut rots = Vec::new();
        let mut ts = Vec::new();
        for s in 0..6u64 {
            let cfg = TrainConfig {
                n_epochs: 200,
                seed: s,
                ..base.clone()
            };
            let r = register(&cloud, &cloud, &cfg).unwrap();
            let rot = exp_map(&r.transform.rotation_vector).unwrap();
            rots.push(
                angular_distance(&rot, &nalgebra::Matrix3::identity())
                    .unwrap()
                    .to_degrees(),
            );
            ts.push(r.transform.translation.norm());
        }
        report(label, "self200", &rots, t0.elapsed().as_secs_f64());
        let tl: Vec<String> = ts.iter().map(|t| format!("{t:6.3}")).collect();
        println!("{label:<22} |t| (<0.1): [{}]", tl.join(" "));

        // 24-degree rotation-only example at the full default length.
        let t0 = Instant::now();
        let errs: Vec<f64> = (0..6)
            .map(|s| run_rot(&cloud, &base, 24.0, 900 + s))
            .collect();
        report(label, "rot24", &errs, t0.elapsed().as_secs_f64());
    }
}

#[test]
#[ignore]
fn probe_real() {
    // Exact mirrors of the two gating examples (same seeds, same instance
    // generation) for the remaining default-schedule candidates. A
    // candidate must clear 9/10 on the 200-epoch self-registration
    // (rotation < 4 deg AND |t| < 0.1 on the normalized cloud) and 8/10
    // on the 24-degree rotation-only example at the default length.
    use adreg::benchmark::sphere_section_cloud;
    let bundled = sphere_section_cloud(2000, 7);
    let (normed, _) = bundled.normalize().unwrap();
    let cands: [(&str, Schedule, usize); 4] = [
        ("B  2e-2/.98 kg1", Schedule::exponential(2e-2, 0.98), 1),
        ("F  3e-2/.975 kg1", Schedule::exponential(3e-2, 0.975), 1),
        ("K2 5e-3/.99 kg2", Schedule::exponential(5e-3, 0.99), 2),
        ("K2F 7.5e-3/.985 kg2", Schedule::exponential(7.5e-3, 0.985), 2),
    ];
    let mut survivors = Vec::new();
    for (label, lr, kg) in &cands {
        let base = TrainConfig {
            lr_generator: *lr,
            k_generator: *kg,
            ..TrainConfig::default()
        };
        let t0 = Instant::now();
        let mut ok = 0;
        let mut log = Vec::new();
        for seed in 0..10u64 {
            let cfg = TrainConfig {
                n_epochs: 200,
                seed,
                ..base.clone()
            };
            let r = register(&normed, &normed, &cfg).unwrap();
            let rot = exp_map(&r.transform.rotation_vector).unwrap();
            let deg = angular_distance(&rot, &nalgebra::Matrix3::identity())
                .unwrap()
                .to_degrees();
            let tn = r.transform.translation.norm();
            if deg < 4.0 && tn < 0.1 {
                ok += 1;
            }
            log.push(format!("{deg:.2}/{tn:.3}"));
        }
        println!(
            "{label:<20} self200 {ok}/10 [{}] {:.0}s",
            log.join(" "),
            t0.elapsed().as_secs_f64()
        );
        if ok >= 9 {
            survivors.push((label, base));
        }
    }
    for (label, base) in &survivors {
        let t0 = Instant::now();
        let mut ok = 0;
        let mut log = Vec::new();
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
            let truth = random_rotation(24.0, &mut rng).unwrap();
            let target = bundled.transformed(&truth);
            let cfg = TrainConfig {
                seed,
                ..base.clone()
            };
            let r = register_rotation_phase(&bundled, &target, &cfg).unwrap();
            let got = exp_map(&r.transform.rotation_vector).unwrap();
            let t_mat = exp_map(&truth.rotation_vector).unwrap();
            let deg = angular_distance(&got, &t_mat).unwrap().to_degrees();
            if deg < 4.0 {
                ok += 1;
            }
            log.push(format!("{deg:.2}"));
        }
        println!(
            "{label:<20} rot24   {ok}/10 [{}] {:.0}s",
            log.join(" "),
            t0.elapsed().as_secs_f64()
        );
    }
}

#[test]
#[ignore]
fn probe_real2() {
    // Second round on the real protocols. The k-generator round showed the
    // per-epoch pose noise is correlated within an epoch (critic bias), so
    // the candidates here either shrink per-epoch travel late (smaller
    // base) or improve the critic itself (more critic steps per epoch).
    use adreg::benchmark::sphere_section_cloud;
    let bundled = sphere_section_cloud(2000, 7);
    let (normed, _) = bundled.normalize().unwrap();
    struct Cand {
        label: &'static str,
        lr: Schedule,
        k_critic: usize,
        run_self: bool,
    }
    let cands = [
        Cand { label: "G5 1e-2/.99 kc15", lr: Schedule::exponential(1e-2, 0.99), k_critic: 15, run_self: true },
        Cand { label: "G1 8e-3/.9875 kc10", lr: Schedule::exponential(8e-3, 0.9875), k_critic: 10, run_self: true },
        Cand { label: "G2 6e-3/.99 kc10", lr: Schedule::exponential(6e-3, 0.99), k_critic: 10, run_self: true },
        Cand { label: "B  2e-2/.98 kc10", lr: Schedule::exponential(2e-2, 0.98), k_critic: 10, run_self: false },
    ];
    for c in &cands {
        let base = TrainConfig {
            lr_generator: c.lr,
            k_critic: c.k_critic,
            ..TrainConfig::default()
        };
        if c.run_self {
            let t0 = Instant::now();
            let mut ok = 0;
            let mut log = Vec::new();
            for seed in 0..10u64 {
                let cfg = TrainConfig {
                    n_epochs: 200,
                    seed,
                    ..base.clone()
                };
                let r = register(&normed, &normed, &cfg).unwrap();
                let rot = exp_map(&r.transform.rotation_vector).unwrap();
                let deg = angular_distance(&rot, &nalgebra::Matrix3::identity())
                    .unwrap()
                    .to_degrees();
                let tn = r.transform.translation.norm();
                if deg < 4.0 && tn < 0.1 {
                    ok += 1;
                }
                log.push(format!("{deg:.2}/{tn:.3}"));
            }
            println!(
                "{:<20} self200 {ok}/10 [{}] {:.0}s",
                c.label,
                log.join(" "),
                t0.elapsed().as_secs_f64()
            );
        }
        let t0 = Instant::now();
        let mut ok = 0;
        let mut log = Vec::new();
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
            let truth = random_rotation(24.0, &mut rng).unwrap();
            let target = bundled.transformed(&truth);
            let cfg = TrainConfig {
                seed,
                ..base.clone()
            };
            let r = register_rotation_phase(&bundled, &target, &cfg).unwrap();
            let got = exp_map(&r.transform.rotation_vector).unwrap();
            let t_mat = exp_map(&truth.rotation_vector).unwrap();
            let deg = angular_distance(&got, &t_mat).unwrap().to_degrees();
            if deg < 4.0 {
                ok += 1;
            }
            log.push(format!("{deg:.2}"));
        }
        println!(
            "{:<20} rot24   {ok}/10 [{}] {:.0}s",
            c.label,
            log.join(" "),
            t0.elapsed().as_secs_f64()
        );
    }
}
