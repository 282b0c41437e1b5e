use std::path::Path;
use std::process::{Command, Output};

fn esplab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esplab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("ESPLAB_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_every_subcommand_and_flag() {
    let o = Command::new(env!("CARGO_BIN_EXE_esplab"))
        .arg("--help")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    for word in [
        "esp-test",
        "sweep",
        "scaling",
        "extreme-rho",
        "lipschitz",
        "verify-spectral",
        "oracle",
        "curves",
        "--config",
        "--set",
        "--out",
        "--parallelism",
        "--extended-horizon",
        "--full-paper-scale",
        "--seed",
    ] {
        assert!(text.contains(word), "help is missing {word}");
    }
}

#[test]
fn esp_test_with_tanh_defaults_converges() {
    let dir = tempfile::tempdir().unwrap();
    let o = esplab(dir.path(), &["esp-test", "--set", "esp.trials=3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("esp_test.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 3);
    for r in &records {
        assert_eq!(r["converged"], true);
    }
    assert!(dir.path().join("traces/trial_0000.csv").exists());
}

#[test]
fn verify_spectral_hits_the_target() {
    let dir = tempfile::tempdir().unwrap();
    let o = esplab(dir.path(), &["verify-spectral", "--n", "500", "--rho", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("eigenvalues.csv")).unwrap();
    let max = text
        .lines()
        .skip(1)
        .map(|l| {
            let (re, im) = l.split_once(',').unwrap();
            re.parse::<f64>().unwrap().hypot(im.parse::<f64>().unwrap())
        })
        .fold(0.0, f64::max);
    assert_eq!(text.lines().count(), 501);
    assert!((max - 10.0).abs() <= 1e-5, "{max}");
}

#[test]
fn weierstrass_curve_is_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let o = esplab(dir.path(), &["curves", "--family", "weierstrass"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("curves/weierstrass.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,value"));
    let values: Vec<f64> = lines
        .map(|l| l.split_once(',').unwrap().1.parse().unwrap())
        .collect();
    assert_eq!(values.len(), 10_001);
    // The ten-term partial sum peaks at 4 * (1 - 2^-10) exactly.
    assert!(values.iter().all(|v| v.abs() <= 3.99609375 + 1e-12));
}

#[test]
fn sweep_artifacts_are_reproducible() {
    let args = [
        "sweep",
        "--set",
        "sweep.rho_values=[0.5, 0.9]",
        "--set",
        "sweep.leak_values=[0.7]",
        "--set",
        "sweep.n_values=[20]",
        "--set",
        "sweep.activations=[\"tanh\", \"cantor-set\"]",
        "--set",
        "sweep.trials_per_cell=3",
        "--seed",
        "4",
    ];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = esplab(a.path(), &[&args[..], &["--parallelism", "1"]].concat());
    let ob = esplab(b.path(), &[&args[..], &["--parallelism", "3"]].concat());
    assert!(oa.status.success(), "{}", stderr(&oa));
    assert!(ob.status.success(), "{}", stderr(&ob));
    for f in [
        "phase_diagram.csv",
        "phase_diagram.json",
        "heatmaps/heatmap_tanh_gaussian_n20_fraction.csv",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let csv = std::fs::read_to_string(a.path().join("phase_diagram.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("phase_diagram.json")).unwrap()).unwrap();
    assert_eq!(json["grid"]["seeds"], serde_json::json!([4, 5, 6]));
    assert_eq!(json["metadata"]["complete"], true);
}

#[test]
fn lipschitz_and_oracle_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = esplab(
        dir.path(),
        &[
            "lipschitz",
            "--set",
            "lipschitz.samples=2000",
            "--set",
            "lipschitz.activations=[\"tanh\", \"relu\"]",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("lipschitz.csv")).unwrap();
    assert!(csv.starts_with("family,max,median,p95\n"));
    assert_eq!(csv.lines().count(), 3);

    let o = esplab(
        dir.path(),
        &[
            "oracle",
            "--set",
            "oracle.init=exhaustive",
            "--set",
            "oracle.activation=cantor-set",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("attractors.json")).unwrap()).unwrap();
    assert_eq!(report["initial_conditions"], 16);
}

#[test]
fn diverging_runs_still_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = esplab(
        dir.path(),
        &[
            "esp-test",
            "--set",
            "esp.activation=relu",
            "--set",
            "esp.rho=20",
            "--set",
            "esp.trials=2",
            "--set",
            "esp.n=30",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn misuse_is_reported_with_the_offending_token() {
    let dir = tempfile::tempdir().unwrap();
    let o = esplab(dir.path(), &["esp-test", "--set", "esp.bogus=1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("esp.bogus"), "{}", stderr(&o));

    let o = esplab(dir.path(), &["frobnicate"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("frobnicate"));

    let o = esplab(dir.path(), &["esp-test", "--set", "esp.leak=1.5"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("leak"), "{}", stderr(&o));

    let o = esplab(dir.path(), &["curves", "--family", "sine"]);
    assert!(!o.status.success());
}

#[test]
fn config_file_is_layered_under_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[esp]\ntrials = 2\nn = 10\nactivation = \"cantor-function\"\n",
    )
    .unwrap();
    let o = esplab(
        dir.path(),
        &[
            "esp-test",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "esp.trials=1",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("esp_test.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("cantor-function n=10"));
}
