use std::path::Path;
use std::process::{Command, Output};

fn koopman(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_koopman"))
        .args(args)
        .env("KOOPMAN_OUT", out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn systems_list_shows_registry() {
    let dir = tempfile::tempdir().unwrap();
    let o = koopman(&["systems", "list"], dir.path());
    assert_eq!(code(&o), 0);
    let s = text(&o.stdout);
    assert!(s.contains("vdp-reverse"));
    assert!(s.contains("resonant-quadratic"));
    let o = koopman(&["systems", "list", ""], dir.path());
    assert_eq!(text(&o.stdout), s);
}

#[test]
fn eig_writes_conjugate_pair() {
    let dir = tempfile::tempdir().unwrap();
    let o = koopman(
        &["eig", "--system", "vdp-reverse", "--grid", "-1,-1:1,1:0.25"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let a = std::fs::read_to_string(dir.path().join("psi1.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("psi2.csv")).unwrap();
    let header = a.lines().next().unwrap();
    assert_eq!(
        header,
        "x1,x2,re_psi,im_psi,abs_psi,arg_psi,converged_T,last_rel_change,status"
    );
    assert_eq!(a.lines().count(), 1 + 81);
    for (ra, rb) in a.lines().skip(1).zip(b.lines().skip(1)) {
        let fa: Vec<&str> = ra.split(',').collect();
        let fb: Vec<&str> = rb.split(',').collect();
        assert_eq!(fa[2], fb[2]);
        let ia: f64 = fa[3].parse().unwrap();
        let ib: f64 = fb[3].parse().unwrap();
        assert_eq!(ia, -ib);
        assert_eq!(fa[8], "converged");
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("psi1.json")).unwrap()).unwrap();
    assert_eq!(meta["system"], "vdp-reverse");
    assert_eq!(meta["index"], 1);
    assert!(meta["code_version"].is_string());
    assert_eq!(meta["left_vector"].as_array().unwrap().len(), 2);
    let spectral: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("spectral.json")).unwrap()).unwrap();
    assert_eq!(spectral["eigenvalues"].as_array().unwrap().len(), 2);
}

#[test]
fn eig_output_is_byte_identical_across_runs_and_threads() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "eig",
        "--system",
        "vdp-reverse",
        "--grid",
        "-0.5,-0.5:0.5,0.5:0.25",
        "--seed",
        "3",
    ];
    let mut one = args.to_vec();
    one.extend(["--threads", "1"]);
    let mut four = args.to_vec();
    four.extend(["--threads", "4"]);
    assert_eq!(code(&koopman(&one, a.path())), 0);
    assert_eq!(code(&koopman(&four, b.path())), 0);
    for f in ["psi1.csv", "psi2.csv", "psi1.json", "spectral.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn eig_single_equilibrium_point() {
    let dir = tempfile::tempdir().unwrap();
    let o = koopman(
        &["eig", "--system", "vdp-reverse", "--grid", "0,0:0,0:1", "--index", "1"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("psi1.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("0,0,0,0,0,0,"), "{}", rows[0]);
    assert!(!dir.path().join("psi2.csv").exists());
}

#[test]
fn eig_resonance_gate() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["eig", "--system", "resonant-quadratic", "--grid", "1,1:1,1:1"];
    let o = koopman(&args, dir.path());
    assert_eq!(code(&o), 3);
    assert!(
        text(&o.stderr).contains("alpha = [2, 0] hits lambda_2"),
        "{}",
        text(&o.stderr)
    );
    assert!(!dir.path().join("psi2.csv").exists());

    let mut forced = args.to_vec();
    forced.push("--force");
    let o = koopman(&forced, dir.path());
    assert_eq!(code(&o), 2, "{}", text(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("psi2.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with("non-convergent"));
}

#[test]
fn eig_rejects_unstable_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let o = koopman(&["eig", "--system", "vdp", "--grid", "0,0:0,0:1"], dir.path());
    assert_eq!(code(&o), 3);
}

#[test]
fn resonance_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = koopman(&["resonance", "--system", "vdp-reverse", "--degree", "10"], dir.path());
    assert_eq!(code(&o), 0);
    let o = koopman(
        &["resonance", "--system", "resonant-quadratic", "--degree", "2"],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    assert!(text(&o.stdout).contains("alpha = [2, 0] -> lambda_2"));
    let o = koopman(&["resonance", "--system", "vdp-reverse", "--degree", "1"], dir.path());
    assert_eq!(code(&o), 64);
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&koopman(&["eig", "--system", "nope"], dir.path())), 64);
    assert_eq!(
        code(&koopman(
            &["eig", "--system", "vdp-reverse", "--grid", "1:2"],
            dir.path()
        )),
        64
    );
    assert_eq!(
        code(&koopman(
            &["eig", "--system", "vdp-reverse", "--param", "k=1"],
            dir.path()
        )),
        64
    );
    assert_eq!(code(&koopman(&["frobnicate"], dir.path())), 64);
}

#[test]
fn verify_suites() {
    let dir = tempfile::tempdir().unwrap();
    let o = koopman(
        &["verify", "eigenproperty", "--system", "vdp-reverse", "--points", "20"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify-eigenproperty.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["reports"][0]["points_tested"], 20);

    let o = koopman(
        &["verify", "duality", "--system", "linear", "--points", "10"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o.stdout));

    let o = koopman(
        &[
            "verify",
            "symmetry",
            "--system",
            "vdp-reverse",
            "--field",
            "e1",
            "--points",
            "5",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify-symmetry.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], false);
}

#[test]
fn verify_frame_suites_on_annulus() {
    let dir = tempfile::tempdir().unwrap();
    for suite in ["symmetry", "reconstruct", "duality", "crosscheck"] {
        let o = koopman(
            &[
                "verify",
                suite,
                "--system",
                "vdp-reverse",
                "--annulus",
                "0.3,0.9",
                "--points",
                "4",
                "--seed",
                "11",
            ],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{suite}: {}", text(&o.stdout));
    }
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "system = \"vdp-reverse\"\n[grid]\nlower = [0.0, 0.0]\nupper = [0.5, 0.5]\nspacing = [0.5, 0.5]\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = koopman(
        &[
            "eig",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--index",
            "2",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let csv = std::fs::read_to_string(out.join("psi2.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn system_from_expression_file() {
    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("duffing.toml");
    std::fs::write(
        &sys,
        "name = \"damped-duffing\"\ndim = 2\nequilibrium = [0.0, 0.0]\nrhs = [\"x2\", \"-x1 - c*x2 - x1^3\"]\n[params]\nc = 0.6\n",
    )
    .unwrap();
    let o = koopman(
        &[
            "eig",
            "--system",
            sys.to_str().unwrap(),
            "--grid",
            "-0.5,-0.5:0.5,0.5:0.5",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert!(dir.path().join("psi1.csv").exists());
}
