use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use twolayer_waves::io::{self, SolutionRecord};
use twolayer_waves::model::shear_solution;
use twolayer_waves::PhysParams;

fn twolayer(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twolayer"))
        .args(args)
        .current_dir(dir)
        .env_remove("TWOLAYER_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const ONSET: &str = r#"{ "params": {"k": 2.0, "H": 0.5, "omega0": 0.3}, "resolution": 32, "amplitude": 0.05 }"#;

#[test]
fn shear_solve_writes_exact_record() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", r#"{ "params": {"k": 2.0, "H": 0.4, "omega0": 0.3}, "resolution": 16 }"#);
    let o = twolayer(&["solve", "--config", "c.json", "--out", "out"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rec = io::read_record(&dir.path().join("out/solution_k2_H0.4_w0.3_A0.json")).unwrap();
    let d = rec.diagnostics.unwrap();
    assert!(d.final_residual < 1e-12 && d.iterations == 0);
    assert_eq!(rec.amplitude, 0.0);
}

#[test]
fn malformed_config_exits_4_with_line() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "bad.json", "{\n  \"params\": {\"k\": 2.0,\n  \"H\": ]\n}\n");
    for cmd in ["solve", "branch", "sweep", "fields", "verify"] {
        let o = twolayer(&[cmd, "--config", "bad.json", "--out", "out"], dir.path());
        assert_eq!(code(&o), 4, "{cmd}");
        assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    }
    write_config(dir.path(), "unknown.json", r#"{ "params": {"k": 2.0, "H": 0.5, "omega0": 0.0}, "resolutoin": 32 }"#);
    assert_eq!(code(&twolayer(&["solve", "--config", "unknown.json"], dir.path())), 4);
    assert_eq!(code(&twolayer(&["solve", "--config", "missing.json"], dir.path())), 4);
    assert_eq!(code(&twolayer(&["fields", "--grid", "64"], dir.path())), 4);
    assert_eq!(code(&twolayer(&["solve"], dir.path())), 4);
    assert_eq!(code(&twolayer(&["--help"], dir.path())), 0);
}

#[test]
fn newton_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "c.json",
        r#"{ "params": {"k": 2.0, "H": 0.5, "omega0": 0.3}, "resolution": 32, "amplitude": 0.01,
             "newton": {"max_iterations": 1} }"#,
    );
    let o = twolayer(&["solve", "--config", "c.json", "--out", "out"], dir.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

fn wall_touching_record(dir: &Path) -> PathBuf {
    let p = PhysParams::new(2.0, 0.5, 0.3).unwrap();
    let mut s = shear_solution(&p, 0.1, 16);
    s.y_hat[1] = 0.6;
    let path = dir.join("wall.json");
    io::write_record(&path, &SolutionRecord::new(&s, &p, None)).unwrap();
    path
}

#[test]
fn inadmissible_record_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let rec = wall_touching_record(dir.path());
    let o = twolayer(&["fields", "--solution", rec.to_str().unwrap(), "--out", "out"], dir.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    // For verify, inadmissibility is one failed check among others.
    let o = twolayer(&["verify", "--solution", rec.to_str().unwrap(), "--out", "out"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL admissibility"));
}

#[test]
fn verify_passes_fresh_and_fails_perturbed() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", ONSET);
    assert_eq!(code(&twolayer(&["solve", "--config", "c.json", "--out", "out"], dir.path())), 0);
    let path = dir.path().join("out/solution_k2_H0.5_w0.3_A0.05.json");
    let o = twolayer(&["verify", "--solution", path.to_str().unwrap(), "--out", "out", "--grid", "32,32"], dir.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    for check in ["residual", "unused_rows", "invariants", "pde_convergence", "interface_level_set", "admissibility"] {
        assert!(stdout(&o).contains(&format!("PASS {check}")), "{check}: {}", stdout(&o));
    }

    let mut rec = io::read_record(&path).unwrap();
    rec.u_hat[2] += 1e-3;
    let bad = dir.path().join("perturbed.json");
    io::write_record(&bad, &rec).unwrap();
    let o = twolayer(&["verify", "--solution", bad.to_str().unwrap(), "--out", "out", "--grid", "32,32"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL residual"));
}

#[test]
fn verify_shear_passes_with_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let p = PhysParams::new(2.0, 0.4, 0.3).unwrap();
    let c = twolayer_waves::model::bifurcation_speed(&p, 1);
    let path = dir.path().join("shear.json");
    io::write_record(&path, &SolutionRecord::new(&shear_solution(&p, c, 16), &p, None)).unwrap();
    let o = twolayer(&["verify", "--solution", "shear.json", "--out", "out", "--grid", "32,32"], dir.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn fields_of_shear_are_flat_and_svg_parses() {
    let dir = tempfile::tempdir().unwrap();
    let p = PhysParams::new(2.0, 0.4, 0.3).unwrap();
    // U vanishes at y = 0.2 in the lower layer.
    let path = dir.path().join("shear.json");
    io::write_record(&path, &SolutionRecord::new(&shear_solution(&p, 0.06, 16), &p, None)).unwrap();
    let o = twolayer(&["fields", "--solution", "shear.json", "--out", "out", "--grid", "40,33"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("out");
    let fig: io::FlowFigure = io::read_json(&out.join("fields_k2_H0.4_w0.3_A0_flow.json")).unwrap();
    assert!(fig.stagnation.is_empty());
    assert!(fig.degenerate_stagnation > 0);
    assert!(!fig.streamlines.is_empty());
    for line in &fig.streamlines {
        let y0 = line.points[0].1;
        assert!(line.points.iter().all(|q| (q.1 - y0).abs() < 1e-9));
    }
    let rows = io::parse_field_csv(&fs::read_to_string(out.join("fields_k2_H0.4_w0.3_A0.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 40 * 33);
    let svg = fs::read_to_string(out.join("fields_k2_H0.4_w0.3_A0.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
}

#[test]
fn fields_of_cats_eye_and_env_override() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", r#"{ "params": {"k": 2.0, "H": 0.5, "omega0": 0.3}, "amplitude": 0.2 }"#);
    let o = Command::new(env!("CARGO_BIN_EXE_twolayer"))
        .args(["fields", "--config", "c.json", "--grid", "48,48"])
        .current_dir(dir.path())
        .env("TWOLAYER_OUT", "envout")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("envout");
    assert!(out.join("solution_k2_H0.5_w0.3_A0.2.json").exists());
    let svg = fs::read_to_string(out.join("fields_k2_H0.5_w0.3_A0.2.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let dots = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
    assert_eq!(dots, 2);
    let grey = doc.descendants().filter(|n| n.has_tag_name("g") && n.attribute("stroke") == Some("grey")).count();
    assert_eq!(grey, 1);
}

#[test]
fn branch_resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "c.json",
        r#"{ "params": {"k": 2.0, "H": 0.5, "omega0": 0.3}, "resolution": 32,
             "continuation": {"max_points": 8, "amplitude_step": 0.03} }"#,
    );
    let o = twolayer(&["branch", "--config", "c.json", "--out", "full"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = stdout(&o);
    assert!(summary.contains("points: 8"));
    let name = "branch_k2_H0.5_w0.3.jsonl";
    let text = fs::read_to_string(dir.path().join("full").join(name)).unwrap();

    // Keep the header, two events and half of the next line.
    let mut lines = text.lines();
    let mut cut: String = lines.by_ref().take(3).map(|l| format!("{l}\n")).collect();
    let partial = lines.next().unwrap();
    cut.push_str(&partial[..partial.len() / 2]);
    fs::create_dir_all(dir.path().join("part")).unwrap();
    let part = dir.path().join("part").join(name);
    fs::write(&part, cut).unwrap();
    let o = twolayer(&["branch", "--resume", part.to_str().unwrap(), "--out", "part"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o), summary);
    assert_eq!(fs::read_to_string(&part).unwrap(), text);
    let a = fs::read_to_string(dir.path().join("full/branch_k2_H0.5_w0.3_points.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("part/branch_k2_H0.5_w0.3_points.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sweep_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "none.json", r#"{ "params": {"k": 2.0, "H": 0.5, "omega0": 0.3} }"#);
    let o = twolayer(&["sweep", "--config", "none.json", "--out", "out"], dir.path());
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("usage"));
    write_config(dir.path(), "empty.json", r#"{ "params": {"k": 2.0, "H": 0.5, "omega0": 0.3}, "sweep": {"H": [], "omega0": [0.0]} }"#);
    let o = twolayer(&["sweep", "--config", "empty.json", "--out", "out"], dir.path());
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("usage"));
}

#[test]
fn sweep_writes_map_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "c.json",
        r#"{ "params": {"k": 2.0, "H": 0.5, "omega0": 0.3}, "resolution": 16, "workers": 2,
             "continuation": {"max_points": 4},
             "sweep": {"H": [0.45, 0.5], "omega0": [0.3]} }"#,
    );
    let o = twolayer(&["sweep", "--config", "c.json", "--out", "out"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("out");
    let csv = fs::read_to_string(out.join("sweep_k2.csv")).unwrap();
    let rows = io::parse_sweep_csv(&csv).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.3 > 0.05));
    assert!(out.join("sweep_k2/branch_k2_H0.45_w0.3.jsonl").exists());
    roxmltree::Document::parse(&fs::read_to_string(out.join("sweep_k2.svg")).unwrap()).unwrap();

    // A rerun picks the finished cells up from their branch files.
    let o = twolayer(&["sweep", "--config", "c.json", "--out", "out"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(out.join("sweep_k2.csv")).unwrap(), csv);
}
