use std::path::Path;
use std::process::{Command, Output};

fn advcat(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advcat"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "seed = 1\n[synth]\nwidth = 24\nheight = 24\n";

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = advcat(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn help_lists_every_subcommand_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = advcat(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for word in [
        "synth", "zip", "warp", "render", "calibrate", "train-surrogate", "attack", "eval", "gradcheck", "--config",
        "--seed", "--out", "--threads", "ADVCAT_LOG",
    ] {
        assert!(text.contains(word), "help lacks {word}");
    }
}

#[test]
fn synth_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    let o = advcat(dir.path(), &["--config", "c.toml", "--out", "o", "synth"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["texture.png", "texture_soft.png", "params.toml"] {
        assert!(dir.path().join("o").join(f).is_file(), "{f} missing");
    }
    // Data goes to files only.
    assert!(o.stdout.is_empty());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "seed = 1\n[synth]\nwidht = 24\n").unwrap();
    let o = advcat(dir.path(), &["--config", "c.toml", "synth"]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.starts_with("error: "), "{e}");
    assert_eq!(e.trim_end().lines().count(), 1);
}

#[test]
fn missing_asset_files_fail_at_load() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[assets]\nsurrogate = \"nope.toml\"\n").unwrap();
    let o = advcat(dir.path(), &["--config", "c.toml", "eval"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.toml"));
}

#[test]
fn attack_needs_a_surrogate() {
    let dir = tempfile::tempdir().unwrap();
    let o = advcat(dir.path(), &["--out", "o", "attack"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: validation: "), "{}", stderr(&o));
}

#[test]
fn zero_threads_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = advcat(dir.path(), &["--threads", "0", "synth"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    let run = |out: &str, seed: Option<&str>| {
        let mut args = vec!["--config", "c.toml", "--out", out];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        args.push("synth");
        assert!(advcat(dir.path(), &args).status.success());
        std::fs::read(dir.path().join(out).join("params.toml")).unwrap()
    };
    let from_config = run("a", None);
    let same_seed = run("b", Some("1"));
    let other_seed = run("c", Some("2"));
    assert_eq!(from_config, same_seed);
    assert_ne!(from_config, other_seed);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 4\n[synth]\nwidth = 32\nheight = 32\n[eval]\nring_size = 3\nper_angle = 1\n\
               [backgrounds]\nsize = 128\nn_surrogate = 10\nn_eval = 2\n[surrogate]\nn_person = 40\n";
    std::fs::write(dir.path().join("c.toml"), cfg).unwrap();
    for (out, threads) in [("t1", "1"), ("t2", "2")] {
        let o = advcat(dir.path(), &["--config", "c.toml", "--out", out, "--threads", threads, "train-surrogate"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("t1/surrogate.toml"), read("t2/surrogate.toml"));
    std::fs::write(
        dir.path().join("e.toml"),
        format!("{cfg}[assets]\nsurrogate = \"t1/surrogate.toml\"\n"),
    )
    .unwrap();
    for (out, threads) in [("e1", "1"), ("e2", "2")] {
        let o = advcat(dir.path(), &["--config", "e.toml", "--out", out, "--threads", threads, "eval"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(read("e1/asr.csv"), read("e2/asr.csv"));
    assert_eq!(read("e1/detections.csv"), read("e2/detections.csv"));
}

#[test]
fn mismatched_texture_parameters_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    assert!(advcat(dir.path(), &["--config", "c.toml", "--out", "o", "synth"]).status.success());
    // Parameters for a 24 x 24 texture do not fit the default 64 x 64 one.
    std::fs::write(dir.path().join("d.toml"), "[assets]\nparams = \"o/params.toml\"\n").unwrap();
    let o = advcat(dir.path(), &["--config", "d.toml", "--out", "o2", "render"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: validation: "), "{}", stderr(&o));
}
