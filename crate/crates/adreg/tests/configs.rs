//! The shipped config files must stay byte-equivalent to the in-crate
//! presets they document; drift between them would make CLI runs disagree
//! with library callers using the presets.

use adreg::registration::TrainConfig;

#[test]
fn shipped_sweep_config_matches_preset() {
    let cfg = TrainConfig::from_toml_str(include_str!("../../../configs/sweep.toml")).unwrap();
    assert_eq!(cfg, TrainConfig::sweep_preset());
}

#[test]
fn shipped_two_phase_config_matches_preset() {
    let cfg = TrainConfig::from_toml_str(include_str!("../../../configs/two_phase.toml")).unwrap();
    assert_eq!(cfg, TrainConfig::two_phase_preset());
}
