use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use tensile_core::nn::{ModelProvenance, QModel, QNetwork};
use tensile_core::symbolic::{TwoPlaneFit, TwoLinearParams};
use tensile_core::FeatureSchema;

fn tensile(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tensile"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn tensile")
}

fn ok(out: &Path, args: &[&str]) {
    let o = tensile(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

/// Every output file under `dir` except the timestamped log, with the
/// run-specific output path dropped from the effective config.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(dir).unwrap().to_path_buf();
            if rel == Path::new("run.log") {
                continue;
            }
            let mut bytes = fs::read(&path).unwrap();
            if rel == Path::new("config.toml") {
                let text = String::from_utf8(bytes).unwrap();
                bytes = text.lines().filter(|l| !l.contains("output_dir")).collect::<Vec<_>>().join("\n").into_bytes();
            }
            files.insert(rel, bytes);
        }
    }
    files
}

fn save_model(path: &Path, net: QNetwork, schema: FeatureSchema) {
    QModel { net, schema, norm_radius: 1000.0, provenance: ModelProvenance::default() }.save(path).unwrap();
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = tensile(dir.path(), &["--set", "no_such_key=1", "gen-graph"]);
    assert_eq!(o.status.code(), Some(2));
    let o = tensile(dir.path(), &["--set", "epsilon=-1", "gen-graph"]);
    assert_eq!(o.status.code(), Some(2));
    let o = tensile(dir.path(), &["eval", "--cells", "27by2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = tensile(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let o = tensile(dir.path(), &["export-policy", "--model", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn gen_graph_writes_the_seed_and_cell_graphs() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-graph"]);
    assert!(dir.path().join("graphs/seed.json").is_file());
    assert!(dir.path().join("config.toml").is_file());
    assert!(dir.path().join("run.log").is_file());

    let cells = tempfile::tempdir().unwrap();
    ok(cells.path(), &["gen-graph", "--cells", "27x2,64x5"]);
    let dirs: Vec<_> = fs::read_dir(cells.path().join("graphs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 2);
    for d in dirs {
        assert_eq!(fs::read_dir(&d).unwrap().count(), 20, "{}", d.display());
    }
}

#[test]
fn config_file_and_flags_agree() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = a.path().join("in.toml");
    fs::write(&cfg, "master_seed = 11\ngraphs_per_cell = 2\nepsilon = 0.3\n").unwrap();
    let args = ["eval", "--cells", "27x4", "--policies", "gf,sr-ns,oracle", "--pairs"];
    let mut with_file = vec!["--config", cfg.to_str().unwrap()];
    with_file.extend(args);
    ok(&a.path().join("run"), &with_file);
    let mut with_flags = vec!["--set", "master_seed=11", "--graphs-per-cell", "2", "--set", "epsilon=0.3"];
    with_flags.extend(args);
    ok(&b.path().join("run"), &with_flags);
    let sa = snapshot(&a.path().join("run"));
    assert!(sa.contains_key(Path::new("accuracy-table.csv")));
    assert!(sa.contains_key(Path::new("pairs.csv")));
    assert_eq!(sa, snapshot(&b.path().join("run")));
}

#[test]
fn export_policy_recovers_the_reference_command() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("reference.json");
    let published = TwoLinearParams::published();
    save_model(&model, published.to_network(1e6, 10.0), FeatureSchema::DistAndStretch);
    ok(dir.path(), &["export-policy", "--model", model.to_str().unwrap()]);
    let fit: TwoPlaneFit = serde_json::from_str(&fs::read_to_string(dir.path().join("two-linear.json")).unwrap()).unwrap();
    let pairs = fit
        .params
        .guard
        .iter()
        .zip(&published.guard)
        .chain(fit.params.branch1.iter().zip(&published.branch1))
        .chain(fit.params.branch2.iter().zip(&published.branch2));
    for (got, want) in pairs {
        assert!((got - want).abs() <= 0.01, "{got} vs {want}");
    }
    assert!(dir.path().join("surface.csv").is_file());
}

#[test]
fn export_policy_rejects_distance_only_models() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("omega2.json");
    save_model(&model, QNetwork::new(&[2, 4, 1], 3).unwrap(), FeatureSchema::DistOnly);
    let o = tensile(dir.path(), &["export-policy", "--model", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!dir.path().join("two-linear.json").exists());
}

#[test]
fn surface_of_the_reference_command() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["surface", "--published"]);
    let text = fs::read_to_string(dir.path().join("surface.csv")).unwrap();
    assert!(text.lines().count() > 1);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 4, ..ProptestConfig::default() })]

    #[test]
    fn reruns_are_byte_identical(seed in 0u64..1_000_000, rho in 2u32..6) {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let seed = format!("master_seed={seed}");
        let cell = format!("27x{rho}");
        let args = ["--set", seed.as_str(), "--graphs-per-cell", "2", "eval", "--cells", cell.as_str(), "--policies", "gf,two-linear", "--pairs"];
        ok(a.path(), &args);
        ok(b.path(), &args);
        let first = snapshot(a.path());
        prop_assert!(first.len() >= 5);
        prop_assert_eq!(first, snapshot(b.path()));
    }
}
