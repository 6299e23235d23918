use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_terrain-fe"))
}

#[test]
fn help_lists_every_subcommand() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for c in ["collect", "train", "eval-onestep", "eval-window", "eval-rollout", "mission", "report"] {
        assert!(text.contains(c), "{c} missing from help");
    }
}

#[test]
fn unknown_config_key_is_a_hard_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "seeds = 2\ntrain.epoch = 5\n").unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("collect").output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("train.epoch") && err.contains(":2"), "{err}");
}

#[test]
fn missing_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("--out").arg(dir.path()).arg("eval-onestep").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("missing input"));
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "out = elsewhere\ncollect.duration = 5\nseed = 1\n").unwrap();
    let target = dir.path().join("data_here");
    let run = |seed: &str| {
        let out = bin().args(["--seed", seed]).arg("--config").arg(&cfg).arg("--out").arg(&target).arg("collect").output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(target.join("data").join("theta_0.000.meta")).unwrap()
    };
    assert!(run("4").contains("seed = 4000029"));
    assert!(!dir.path().join("elsewhere").exists());
}
