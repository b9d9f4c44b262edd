use std::path::Path;
use std::process::{Command, Output};

fn mcfq(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcfq"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("run mcfq")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_reconstruct_analyze_chain() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let sim = mcfq(&["simulate", "--preset", "ideal"], out);
    assert_eq!(code(&sim), 0, "{}", stderr(&sim));
    let counts = out.join("counts.csv");
    assert!(counts.exists());
    let counts = counts.to_str().unwrap();

    let rec = mcfq(
        &["reconstruct", "--preset", "ideal", "--counts", counts],
        out,
    );
    assert_eq!(code(&rec), 0, "{}", stderr(&rec));
    assert!(out.join("rho.json").exists());
    assert!(out.join("rho_bars.csv").exists());

    let rho = out.join("rho.json");
    let by_rho = mcfq(&["analyze", "--rho", rho.to_str().unwrap()], out);
    assert_eq!(code(&by_rho), 0, "{}", stderr(&by_rho));
    let text = String::from_utf8_lossy(&by_rho.stdout);
    assert!(text.contains("I4") && text.contains("2.8962"), "{text}");

    let by_counts = mcfq(&["analyze", "--preset", "ideal", "--counts", counts], out);
    assert_eq!(code(&by_counts), 0, "{}", stderr(&by_counts));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,value,std"), "{metrics}");
    assert_eq!(metrics.lines().count(), 1 + 10);
}

#[test]
fn report_writes_every_artifact_deterministically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = mcfq(&["report", "--preset", "ideal", "--seed", "5"], dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for name in [
        "config.toml",
        "counts.csv",
        "rho.json",
        "rho_bars.csv",
        "metrics.csv",
        "fringes.csv",
        "report.json",
    ] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
    }
    let report = std::fs::read_to_string(a.path().join("report.json")).unwrap();
    assert!(report.contains("\"config_sha256\""));
    assert!(report.contains("\"seed\": 5"));
}

#[test]
fn fringes_for_the_rotation_study() {
    let dir = tempfile::tempdir().unwrap();
    let o = mcfq(&["fringes", "--preset", "fig4"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("fringes.csv")).unwrap();
    // header plus 16 sweep points for each of 4 rotations
    assert_eq!(csv.lines().count(), 1 + 4 * 16, "{csv}");
}

#[test]
fn masks_are_written_as_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let o = mcfq(
        &["masks", "--setting", "1", "--setting", "1+i2"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["mask_01_1.pgm", "mask_02_1pi2.pgm"]);
    let bytes = std::fs::read(dir.path().join("mask_01_1.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5"));

    let all = tempfile::tempdir().unwrap();
    let o = mcfq(&["masks", "--dim", "2"], all.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(std::fs::read_dir(all.path()).unwrap().count() > 2);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    let o = mcfq(&["report", "--preset", "nonexistent"], out);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = mcfq(&["report"], out);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let missing = out.join("nope.toml");
    let o = mcfq(&["simulate", "--config", missing.to_str().unwrap()], out);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let bad = out.join("bad.toml");
    let text = mcf_qudit::pipeline::preset_text("ideal")
        .unwrap()
        .to_string()
        + "\nbogus_key = 1\n";
    std::fs::write(&bad, text).unwrap();
    let o = mcfq(&["simulate", "--config", bad.to_str().unwrap()], out);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("bogus_key"), "{}", stderr(&o));

    let o = mcfq(&["report", "--preset", "ideal", "--resamples", "3"], out);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = mcfq(&["masks", "--setting", "9"], out);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn stage_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    // a counts table with most settings missing
    let sim = mcfq(&["simulate", "--preset", "ideal"], out);
    assert_eq!(code(&sim), 0);
    let full = std::fs::read_to_string(out.join("counts.csv")).unwrap();
    let truncated: String = full.lines().take(20).map(|l| format!("{l}\n")).collect();
    let partial = out.join("partial.csv");
    std::fs::write(&partial, truncated).unwrap();
    let o = mcfq(
        &[
            "reconstruct",
            "--preset",
            "ideal",
            "--counts",
            partial.to_str().unwrap(),
        ],
        out,
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("reconstruction"), "{}", stderr(&o));

    let garbage = out.join("garbage.json");
    std::fs::write(&garbage, "{\"dim\": 4}").unwrap();
    let o = mcfq(&["analyze", "--rho", garbage.to_str().unwrap()], out);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}
