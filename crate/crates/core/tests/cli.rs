use std::fs;
use std::path::Path;
use std::process::Command;

fn dmf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dmf"))
}

fn write_counts(path: &Path) {
    let mut text = String::new();
    for i in 0..60 {
        let row: Vec<String> = (0..12)
            .map(|j| {
                let eta = 1.0 + 0.4 * ((i as f64) * 0.3).sin() * ((j as f64) * 0.7).cos();
                (eta.exp().round() as i64 + ((i * j) % 3) as i64).to_string()
            })
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

#[test]
fn fit_gof_rank_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("counts.csv");
    write_counts(&input);
    let out = dir.path().join("fit");

    let status = dmf()
        .args(["fit", "--family", "poisson", "-q", "12", "--max-iter", "500"])
        .arg("-i")
        .arg(&input)
        .arg("-o")
        .arg(&out)
        .status()
        .unwrap();
    assert!(matches!(status.code(), Some(0) | Some(2)));
    for f in ["meta.json", "lambda.csv", "v.csv", "d.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let status = dmf().args(["gof", "-G", "15"]).arg("--fit-dir").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("gof.json")).unwrap()).unwrap();
    let p = report["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(report["df"].as_u64(), Some(14));
    assert!(out.join("group_residuals.csv").exists());

    let status = dmf().args(["rank", "--q-max", "5"]).arg("--fit-dir").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let profile = fs::read_to_string(out.join("profile.tsv")).unwrap();
    assert!(profile.starts_with("index\teigenvalue"));
    assert_eq!(profile.lines().count(), 13);
}

#[test]
fn centered_fit_writes_prior_factors() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("counts.csv");
    write_counts(&input);
    let out = dir.path().join("fit");
    let status = dmf()
        .args(["fit", "--family", "negbin", "--dispersion", "mom", "-q", "2", "--center", "--fit-rank", "3"])
        .arg("-i")
        .arg(&input)
        .arg("-o")
        .arg(&out)
        .status()
        .unwrap();
    assert!(matches!(status.code(), Some(0) | Some(2)));
    assert!(out.join("lambda0.csv").exists());
    assert!(out.join("v0.csv").exists());
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["dispersion_source"], "mom");
}

#[test]
fn errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("counts.csv");
    write_counts(&input);

    let bad_link = dmf()
        .args(["fit", "--family", "poisson", "--link", "logit", "-q", "1", "-o"])
        .arg(dir.path().join("x"))
        .arg("-i")
        .arg(&input)
        .output()
        .unwrap();
    assert_eq!(bad_link.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_link.stderr).contains("logit"));

    let missing = dmf().args(["gof", "--fit-dir"]).arg(dir.path().join("nothing")).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("dmf fit"));

    let low_rank = dir.path().join("low");
    dmf().args(["fit", "--family", "poisson", "-q", "2", "-o"]).arg(&low_rank).arg("-i").arg(&input).status().unwrap();
    let rank = dmf().args(["rank"]).arg("--fit-dir").arg(&low_rank).output().unwrap();
    assert_eq!(rank.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&rank.stderr).contains("higher"));
}

#[test]
fn unconverged_fit_exits_with_two_and_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("counts.csv");
    write_counts(&input);
    let out = dir.path().join("fit");
    let status = dmf()
        .args(["fit", "--family", "poisson", "-q", "3", "--max-iter", "1"])
        .arg("-i")
        .arg(&input)
        .arg("-o")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(out.join("meta.json").exists());
}

#[test]
fn simulate_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let status = dmf()
        .args(["simulate", "--experiment", "rank-table3", "--cases", "1", "--replicates", "1"])
        .arg("-o")
        .arg(dir.path())
        .env("DMF_THREADS", "1")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let table = fs::read_to_string(dir.path().join("rank-table3.csv")).unwrap();
    assert!(table.starts_with("design,replicate,metric,value"));
    assert!(table.contains("rank-case1,0,q_hat,"));
}
