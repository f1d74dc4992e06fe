use std::path::Path;
use std::process::{Command, Output};

fn melodyevo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_melodyevo"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fixtures() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/corpus")
        .display()
        .to_string()
}

#[test]
fn config_output_reads_back_as_config() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let toml = stdout(&melodyevo(&[
        "--seed",
        "9",
        "--scorer",
        "synthetic",
        "--out",
        out_dir.to_str().unwrap(),
        "config",
    ]));
    assert!(toml.contains("rng_seed = 9"));
    assert!(toml.contains("scorer = \"synthetic\""));
    let path = dir.path().join("saved.toml");
    std::fs::write(&path, &toml).unwrap();
    let again = stdout(&melodyevo(&["--config", path.to_str().unwrap(), "config"]));
    assert_eq!(again, toml);
}

#[test]
fn unknown_flag_values_are_rejected() {
    let out = melodyevo(&["--scorer", "crowd", "config"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("synthetic"));
    assert!(!melodyevo(&["--fitness", "fast", "config"]).status.success());
}

#[test]
fn scores_flow_from_phase1_through_the_store_commands() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(
        &config,
        "[phase1]\nmax_iterations = 3\npopulation_size = 4\n[phase3]\nmax_iterations = 3\npopulation_size = 4\n[train]\nepochs = 20\nhidden_size = 4\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let common = [
        "--config",
        config.to_str().unwrap(),
        "--corpus",
        &fixtures(),
        "--out",
        out.to_str().unwrap(),
    ];
    let run = |extra: &[&str]| {
        let mut args = common.to_vec();
        args.extend_from_slice(extra);
        melodyevo(&args)
    };

    let phase1 = stdout(&run(&["phase1"]));
    assert!(phase1.contains("archived\t13"), "{phase1}");
    assert!(out.join("phase1_archive.tsv").exists());

    let pending = stdout(&run(&["score", "pending", "--limit", "2"]));
    let first_id = pending.lines().next().unwrap().split('\t').next().unwrap().to_string();
    let added = stdout(&run(&["score", "add", &first_id, "80"]));
    assert_eq!(added.trim(), format!("{first_id}\t1\t80"));
    assert!(!run(&["score", "add", &first_id, "101"]).status.success());
    assert!(!run(&["score", "add", "missing", "50"]).status.success());

    let export = dir.path().join("export.jsonl");
    stdout(&run(&["score", "export", export.to_str().unwrap()]));
    let imported = stdout(&run(&["score", "import", export.to_str().unwrap()]));
    assert_eq!(imported.trim(), "imported\t1");

    let phase2 = stdout(&run(&["phase2"]));
    assert!(phase2.contains("training melodies\t1"), "{phase2}");
    assert!(out.join("model.json").exists());
    assert!(out.join("loss_trace.csv").exists());
}

#[test]
fn phase2_without_scores_explains_itself() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let result = melodyevo(&["--corpus", &fixtures(), "--out", out.to_str().unwrap(), "phase2"]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("score some melodies first"));
}
