use std::path::Path;

use rlvr_lab::config::{load_config, preset, Overrides, Schedule, BASELINE_BATCH, BREADTH_FACTOR, PRESETS};
use rlvr_lab::LabError;

fn write(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn preset_table_matches_named_structure() {
    let c = preset("dars-hw-breadth").unwrap();
    assert_eq!((c.schedule, c.ppo_splits, c.ppo_epochs, c.n_max), (Schedule::Hw, 1, 2, 32));
    let b = preset("baseline").unwrap();
    assert_eq!((b.rollout_n, b.batch_size, b.ppo_splits, b.ppo_epochs, b.schedule), (8, 16, 2, 1, Schedule::None));
    assert_eq!(preset("depth-naive").unwrap().rollout_n, 32);
    assert_eq!(preset("dars-et").unwrap().schedule, Schedule::Et);
    for name in PRESETS {
        let c = preset(name).unwrap();
        c.validate().unwrap();
        assert_eq!(c.preset, name);
    }
    assert!(matches!(preset("nope"), Err(LabError::UnknownPreset(_))));
}

#[test]
fn preset_ratios_mirror_the_reference_settings() {
    let base = preset("baseline").unwrap();
    for name in ["breadth-naive", "dars-et-breadth", "dars-hw-breadth"] {
        let c = preset(name).unwrap();
        assert_eq!(c.batch_size, BREADTH_FACTOR * base.batch_size);
        assert_eq!(c.batch_size, 24 * BASELINE_BATCH);
        assert!((c.lr / base.lr - 5.0).abs() < 1e-12);
        assert_eq!(c.eval_every, 1);
    }
    for name in ["dars-et", "dars-hw", "dars-et-breadth", "dars-hw-breadth"] {
        let c = preset(name).unwrap();
        assert_eq!(c.n_max, 4 * c.rollout_n);
        assert_eq!(c.k0, c.rollout_n);
    }
    assert_eq!(base.eval_every, 5);
}

#[test]
fn flags_override_file_which_overrides_preset() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "preset = \"dars-et\"\nseed = 3\nn_max = 16\n");
    let from_file = load_config(Some(&path), &Overrides::default()).unwrap();
    assert_eq!((from_file.preset.as_str(), from_file.seed, from_file.n_max), ("dars-et", 3, 16));

    let flags = Overrides {
        seed: Some(7),
        schedule: Some(Schedule::Hw),
        ..Overrides::default()
    };
    let c = load_config(Some(&path), &flags).unwrap();
    assert_eq!((c.seed, c.schedule, c.n_max), (7, Schedule::Hw, 16));

    let other = Overrides {
        preset: Some("baseline".into()),
        ..Overrides::default()
    };
    assert_eq!(load_config(Some(&path), &other).unwrap().schedule, Schedule::None);
}

#[test]
fn resolved_config_round_trips_through_toml() {
    let dir = tempfile::tempdir().unwrap();
    let c = preset("dars-hw").unwrap();
    let path = write(dir.path(), &c.to_toml());
    assert_eq!(load_config(Some(&path), &Overrides::default()).unwrap(), c);
}

#[test]
fn config_errors_name_the_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    let missing = load_config(Some(&dir.path().join("absent.toml")), &Overrides::default()).unwrap_err();
    assert!(matches!(missing, LabError::ConfigNotFound(_)));
    assert!(missing.to_string().starts_with("config-not-found"));
    assert_eq!(missing.exit_code(), 2);

    let cases: [(&str, &str); 7] = [
        ("learning_rate = 0.1\n", "learning_rate"),
        ("seed = \"seven\"\n", "seed"),
        ("lr = \"fast\"\n", "lr"),
        ("eval_k = [1, 500]\n", "eval_k"),
        ("schedule = \"sometimes\"\n", "schedule"),
        ("batch_size = 4096\n", "batch_size"),
        ("total_steps = -1\n", "total_steps"),
    ];
    for (text, key) in cases {
        let err = load_config(Some(&write(dir.path(), text)), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains(&format!("`{key}`")), "{text:?} gave {err}");
        assert_eq!(err.exit_code(), 2);
    }
    let err = load_config(Some(&write(dir.path(), "seed = 1\n")), &Overrides { lr: Some(-1.0), ..Overrides::default() })
        .unwrap_err();
    assert!(matches!(err, LabError::Constraint { ref key, .. } if key == "lr"));
}

#[test]
fn integer_is_accepted_where_a_float_is_expected() {
    let dir = tempfile::tempdir().unwrap();
    let c = load_config(Some(&write(dir.path(), "lr = 2\nclip_epsilon = 0.3\n")), &Overrides::default()).unwrap();
    assert_eq!((c.lr, c.clip_epsilon), (2.0, 0.3));
}
