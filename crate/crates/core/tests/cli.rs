use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use orthofield::cli::{RunManifest, MANIFEST_FILE, SUMMARY_FILE};
use orthofield::harness::{
    CLT_CSV_HEADER, COBOUNDARY_CSV_HEADER, COVARIANCE_CSV_HEADER, GH_CSV_HEADER, PROBE_CSV_HEADER,
};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn orthofield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orthofield"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_config(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        sub,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    orthofield(&args)
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    let model = configs().join("models/iid.toml");
    std::fs::write(&path, body.replace("MODEL", model.to_str().unwrap())).unwrap();
    path
}

fn header(cols: &[&str]) -> String {
    cols.join(",")
}

#[test]
fn csv_headers_are_frozen() {
    assert_eq!(header(&CLT_CSV_HEADER), "frozen_past_id,n,v,replicate_count,sigma2,ks,dkw,verdict");
    assert_eq!(header(&GH_CSV_HEADER), "n,v,statistic,q,value,se,bound");
    assert_eq!(
        header(&COVARIANCE_CSV_HEADER),
        "frozen_past_id,p,q,empirical,se,target,rel_error,verdict"
    );
    assert_eq!(
        header(&COBOUNDARY_CSV_HEADER),
        "n,v,residual_median,residual_q90,residual_max,r1_median,r2_median,r3_median,bound_violations"
    );
    assert_eq!(
        header(&PROBE_CSV_HEADER),
        "source,window,threshold,prob,prob_se,count,count_se,control_count"
    );
}

#[test]
fn passing_structure_check_exits_zero_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("verify");
    let o = run_config("verify", &configs().join("verify_product.toml"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = std::fs::read_to_string(out.join("verify-structure.csv")).unwrap();
    assert!(csv.starts_with("check,anchor_u,anchor_a,max_deviation,violations,pass\n"));
    assert!(csv.lines().skip(1).all(|l| l.contains(",0,0,true")), "{csv}");

    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest.experiment, "verify-structure");
    assert_eq!(manifest.config_hash.len(), 64);
    assert!(manifest.outputs.contains(&SUMMARY_FILE.to_string()));
    assert!(manifest.outputs.contains(&"verify-structure.csv".to_string()));
}

#[test]
fn diverging_moment_series_exits_two_with_evidence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("levels");
    let o = run_config("clt", &configs().join("clt_levels_rectangular.toml"), &out, &["--threads", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary["verdict"], "fail");
    assert_eq!(summary["report"]["moment_evidence"]["diverges"], true);
    assert!(!summary["report"]["non_tightness"]["analytic_exceedance"]
        .as_array()
        .unwrap()
        .is_empty());
    assert!(out.join(MANIFEST_FILE).exists());
}

#[test]
fn execution_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = write_config(
        dir.path(),
        "missing.toml",
        "experiment = \"clt-quenched\"\nmodel = \"nowhere.toml\"\nsizes = [[8, 8]]\n",
    );
    let o = run_config("clt", &missing, &dir.path().join("a"), &[]);
    assert_eq!(o.status.code(), Some(1));

    let typo = write_config(
        dir.path(),
        "typo.toml",
        "experiment = \"clt-quenched\"\nmodel = \"MODEL\"\nsizes = [[8, 8]]\nreplicas = 100\n",
    );
    let o = run_config("clt", &typo, &dir.path().join("b"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("replicas") && err.contains("replicates"), "{err}");

    let o = run_config("gh", &configs().join("verify_product.toml"), &dir.path().join("c"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("c").join(MANIFEST_FILE).exists());
}

#[test]
fn reruns_and_thread_counts_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "small.toml",
        "experiment = \"clt-quenched\"\nmodel = \"MODEL\"\nsizes = [[16, 16], [16, 32]]\nreplicates = 400\n\n[seeds]\nbase = 3\nfrozen_pasts = [0, 1]\n",
    );
    let read = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = run_config("clt", &cfg, &out, &["--threads", threads]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        (
            std::fs::read(out.join("clt-quenched.csv")).unwrap(),
            std::fs::read(out.join(SUMMARY_FILE)).unwrap(),
        )
    };
    let a = read("a", "1");
    assert_eq!(a, read("b", "1"));
    assert_eq!(a, read("c", "3"));
}

#[test]
fn seed_override_changes_results_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "small.toml",
        "experiment = \"clt-annealed\"\nmodel = \"MODEL\"\nsizes = [[8, 8]]\nreplicates = 200\n",
    );
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = run_config("clt", &cfg, &out, &["--seed", seed]);
        assert!(matches!(o.status.code(), Some(0 | 2)));
        let m: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(out.join(MANIFEST_FILE)).unwrap()).unwrap();
        (std::fs::read(out.join("clt-annealed.csv")).unwrap(), m.config_hash)
    };
    let (csv1, hash1) = run("a", "1");
    let (csv2, hash2) = run("b", "2");
    assert_ne!(csv1, csv2);
    assert_ne!(hash1, hash2);
}

#[test]
fn json_format_embeds_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("json");
    let o = run_config("verify", &configs().join("verify_product.toml"), &out, &["--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(!out.join("verify-structure.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert!(summary["table"].as_str().unwrap().starts_with("check,"));
}
