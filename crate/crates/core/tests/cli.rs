//! End-to-end tests of the command-line interface: row counts, exit codes,
//! header/body layout, and byte-stability of reruns.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cfb"))
}

fn temp_path(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cfb-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn body_of(contents: &str) -> String {
    contents
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

fn data_rows(contents: &str) -> Vec<String> {
    contents
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1) // column header
        .map(|s| s.to_string())
        .collect()
}

#[test]
fn simulate_emits_one_row_per_cell() {
    let out = temp_path("sim_cells.csv");
    let status = bin()
        .args([
            "simulate",
            "--setting",
            "1",
            "--n",
            "50",
            "--reps",
            "2",
            "--seed",
            "7",
            "--methods",
            "proposed,ate-rkhs,ipw",
            "--augment",
            "none",
            "--max-iters",
            "15",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let contents = std::fs::read_to_string(&out).unwrap();
    assert!(contents.starts_with("# cfb "));
    let rows = data_rows(&contents);
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("1,proposed,none,"));
    assert!(rows[1].starts_with("1,ate-rkhs,none,"));
    assert!(rows[2].starts_with("1,ipw,none,"));
}

#[test]
fn simulate_expands_augmentations() {
    let out = temp_path("sim_augment.csv");
    let status = bin()
        .args([
            "simulate",
            "--setting",
            "1",
            "--n",
            "50",
            "--reps",
            "2",
            "--seed",
            "3",
            "--methods",
            "proposed",
            "--augment",
            "none,lm,krr",
            "--max-iters",
            "15",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let rows = data_rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(rows.len(), 3);
    assert!(rows[0].contains(",proposed,none,"));
    assert!(rows[1].contains(",proposed,lm,"));
    assert!(rows[2].contains(",proposed,krr,"));
}

#[test]
fn simulate_rerun_is_byte_identical_across_parallelism() {
    let out1 = temp_path("sim_det1.csv");
    let out2 = temp_path("sim_det2.csv");
    for (out, par) in [(&out1, "1"), (&out2, "2")] {
        let status = bin()
            .args([
                "simulate",
                "--setting",
                "1",
                "--n",
                "40",
                "--reps",
                "3",
                "--seed",
                "11",
                "--methods",
                "proposed,ipw",
                "--augment",
                "none",
                "--max-iters",
                "10",
                "--parallelism",
                par,
                "--out",
            ])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let b1 = body_of(&std::fs::read_to_string(&out1).unwrap());
    let b2 = body_of(&std::fs::read_to_string(&out2).unwrap());
    assert_eq!(b1, b2);
}

#[test]
fn simulate_rejects_reg_without_model() {
    let out = temp_path("sim_reg_none.csv");
    let output = bin()
        .args([
            "simulate",
            "--setting",
            "1",
            "--methods",
            "reg",
            "--augment",
            "none",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("--augment"), "stderr: {stderr}");
}

fn write_birthweight_csv(path: &PathBuf, n: usize) {
    let mut contents =
        String::from("age,alcohol,first_baby,educ,prenatal1,n_visits,prev_death,smoker,bweight\n");
    let mut state = 12345u64;
    let mut next = || {
        // small deterministic LCG so the fixture is self-contained
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as f64 / (1u64 << 31) as f64
    };
    for _ in 0..n {
        let age = 16.0 + (next() * 29.0).floor();
        let alcohol = (next() < 0.1) as u8;
        let first = (next() < 0.45) as u8;
        let educ = 8.0 + (next() * 9.0).floor();
        let pren = (next() < 0.8) as u8;
        let visits = (next() * 15.0).floor();
        let death = (next() < 0.25) as u8;
        let smoker = (next() < 0.35 + 0.2 * (age < 24.0) as u8 as f64) as u8;
        let bweight = 3400.0 - 250.0 * smoker as f64 + 12.0 * (age - 27.0) + 400.0 * (next() - 0.5);
        contents.push_str(&format!(
            "{age},{alcohol},{first},{educ},{pren},{visits},{death},{smoker},{bweight:.3}\n"
        ));
    }
    std::fs::write(path, contents).unwrap();
}

const BW_ARGS: [&str; 8] = [
    "--treatment",
    "smoker",
    "--outcome",
    "bweight",
    "--v-cols",
    "age",
    "--covariates",
    "age,alcohol,first_baby,educ,prenatal1,n_visits,prev_death",
];

#[test]
fn estimate_covers_requested_grid() {
    let data = temp_path("bw.csv");
    write_birthweight_csv(&data, 120);
    let out = temp_path("curve.csv");
    let status = bin()
        .args(["estimate", "--data"])
        .arg(&data)
        .args(BW_ARGS)
        .args([
            "--method",
            "proposed",
            "--augment",
            "krr",
            "--grid-min",
            "18",
            "--grid-max",
            "36",
            "--grid-points",
            "100",
            "--max-iters",
            "25",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let contents = std::fs::read_to_string(&out).unwrap();
    let rows = data_rows(&contents);
    assert_eq!(rows.len(), 100);
    let first: Vec<&str> = rows[0].split(',').collect();
    let last: Vec<&str> = rows[99].split(',').collect();
    assert!((first[0].parse::<f64>().unwrap() - 18.0).abs() < 1e-9);
    assert!((last[0].parse::<f64>().unwrap() - 36.0).abs() < 1e-9);
    for row in &rows {
        let est: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(est.is_finite());
    }
}

#[test]
fn estimate_ipw_rows_are_finite() {
    let data = temp_path("bw_ipw.csv");
    write_birthweight_csv(&data, 120);
    let out = temp_path("curve_ipw.csv");
    let status = bin()
        .args(["estimate", "--data"])
        .arg(&data)
        .args(BW_ARGS)
        .args([
            "--method",
            "ipw",
            "--augment",
            "none",
            "--grid-min",
            "18",
            "--grid-max",
            "36",
            "--grid-points",
            "100",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let rows = data_rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(rows.len(), 100);
    for row in &rows {
        let est: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(est.is_finite());
    }
}

#[test]
fn estimate_single_point_grid() {
    let data = temp_path("bw_single.csv");
    write_birthweight_csv(&data, 80);
    let out = temp_path("curve_single.csv");
    // min != max with one point is a usage error
    let output = bin()
        .args(["estimate", "--data"])
        .arg(&data)
        .args(BW_ARGS)
        .args([
            "--method",
            "reg",
            "--augment",
            "lm",
            "--grid-min",
            "20",
            "--grid-max",
            "30",
            "--grid-points",
            "1",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));

    let status = bin()
        .args(["estimate", "--data"])
        .arg(&data)
        .args(BW_ARGS)
        .args([
            "--method",
            "reg",
            "--augment",
            "lm",
            "--grid-min",
            "25",
            "--grid-max",
            "25",
            "--grid-points",
            "1",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let rows = data_rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("25,"));
}

#[test]
fn weights_cover_sample_and_rerun_identically() {
    let data = temp_path("bw_weights.csv");
    write_birthweight_csv(&data, 90);
    let out1 = temp_path("weights1.csv");
    let out2 = temp_path("weights2.csv");
    let mut stderr_text = String::new();
    for out in [&out1, &out2] {
        let output = bin()
            .args(["weights", "--data"])
            .arg(&data)
            .args(BW_ARGS)
            .args(["--method", "proposed", "--max-iters", "20", "--out"])
            .arg(out)
            .output()
            .unwrap();
        assert!(output.status.success());
        stderr_text = String::from_utf8_lossy(&output.stderr).into_owned();
    }
    assert!(stderr_text.contains("arm=treated"), "stderr: {stderr_text}");
    assert!(stderr_text.contains("arm=control"));
    let c1 = std::fs::read_to_string(&out1).unwrap();
    let c2 = std::fs::read_to_string(&out2).unwrap();
    assert_eq!(body_of(&c1), body_of(&c2));
    let rows = data_rows(&c1);
    assert_eq!(rows.len(), 90);
    for row in &rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert!(fields[1] == "treated" || fields[1] == "control");
        let w: f64 = fields[2].parse().unwrap();
        assert!(w >= 1.0);
    }
}

#[test]
fn missing_required_flag_exits_two() {
    let output = bin().args(["simulate", "--setting", "1"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("--out"), "stderr: {stderr}");
}

#[test]
fn unknown_method_exits_two() {
    let out = temp_path("unknown_method.csv");
    let output = bin()
        .args([
            "simulate",
            "--methods",
            "banana",
            "--reps",
            "2",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn missing_data_file_exits_two() {
    let out = temp_path("missing_data_curve.csv");
    let output = bin()
        .args(["estimate", "--data", "/nonexistent/file.csv"])
        .args(BW_ARGS)
        .args(["--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn degenerate_spread_is_a_runtime_failure() {
    // nonconstant conditioning column whose interquartile range is zero:
    // the bandwidth rule cannot produce a positive scale
    let data = temp_path("degenerate.csv");
    let mut contents = String::from("v,z,t,y\n");
    for i in 0..40 {
        let v = if i == 0 { 2.0 } else { 1.0 };
        contents.push_str(&format!("{v},{},{},{}\n", i as f64 / 40.0, i % 2, i as f64));
    }
    std::fs::write(&data, contents).unwrap();
    let out = temp_path("degenerate_out.csv");
    let output = bin()
        .args(["estimate", "--data"])
        .arg(&data)
        .args([
            "--treatment",
            "t",
            "--outcome",
            "y",
            "--v-cols",
            "v",
            "--covariates",
            "v,z",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let config = temp_path("run.conf");
    std::fs::write(&config, "n=40\nreps=2\nmethods=ipw\nseed=21\n").unwrap();
    let out = temp_path("sim_config.csv");
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&config)
        .args(["--reps", "3", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let contents = std::fs::read_to_string(&out).unwrap();
    assert!(contents.contains("# n=40"));
    assert!(contents.contains("# reps=3"));
    assert!(contents.contains("# methods=ipw"));
    assert!(contents.contains("# seed=21"));
    let rows = data_rows(&contents);
    assert_eq!(rows.len(), 1);
    assert!(rows[0].ends_with(",3,3"), "row: {}", rows[0]);
}

#[test]
fn seed_env_var_is_the_fallback() {
    let out = temp_path("sim_envseed.csv");
    let status = bin()
        .args([
            "simulate",
            "--n",
            "40",
            "--reps",
            "2",
            "--methods",
            "ipw",
            "--out",
        ])
        .arg(&out)
        .env("CFB_SEED", "99")
        .status()
        .unwrap();
    assert!(status.success());
    let contents = std::fs::read_to_string(&out).unwrap();
    assert!(contents.contains("# seed=99"));
}
