use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seeds = [3]
[source.synthetic]
pool_size = 3000
[corpus]
total_size = 400
balance_rate = 0.8
val_per_cell = 20
test_per_cell = 50
[classifier]
embedding_dim = 8
cnn_filters = 4
cnn_kernel_sizes = [2, 3]
rnn_hidden = 8
max_epochs = 2
[explainer]
embedding_dim = 6
hidden = 4
max_epochs = 2
[debias]
epochs = 1
"#;

fn bin(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_implicit-debias"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn usage_errors_exit_non_zero() {
    let dir = setup();
    let out = bin(&["frobnicate"], dir.path());
    assert!(!out.status.success());
    let out = bin(&["train", "--no-such-flag"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = bin(&["train", "--method", "voodoo"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn stage_errors_name_the_stage() {
    let dir = setup();
    let out = bin(&["evaluate", "--config", "tiny.toml", "--out", "nothing"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("evaluate"));
}

#[test]
fn compare_prints_fairness_and_performance_columns() {
    let dir = setup();
    let out = bin(
        &["compare", "--config", "tiny.toml", "--methods", "base,ins_weigh,debiased_tc", "--out", "cmp"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("cmp/compare.txt")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    for col in ["FPED", "FNED", "DPD", "Acc", "F1"] {
        assert!(rows[0].contains(col), "{}", rows[0]);
    }
    let methods: Vec<&str> = rows[1..].iter().map(|r| r.split_whitespace().next().unwrap()).collect();
    assert_eq!(methods, ["base", "ins_weigh", "debiased_tc"]);
    assert!(table.starts_with("# {\"tool\""));
}

#[test]
fn sweep_writes_raw_and_aggregate_rows() {
    let dir = setup();
    let out = bin(
        &["sweep", "--config", "tiny.toml", "--rates", "0.5,0.6,0.7,0.8,0.9", "--seeds", "3", "--out", "sw"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "balance_rate,seed,mean_js,dpd");
    assert_eq!(rows[1..].iter().filter(|r| !r.contains(",avg,")).count(), 15);
    assert_eq!(rows[1..].iter().filter(|r| r.contains(",avg,")).count(), 5);
    assert!(dir.path().join("sw/sweep-plot.json").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = setup();
    let args = ["train", "--config", "tiny.toml", "--arch", "rnn", "--seed-list", "4,5", "--out", "r"];
    let read = |dir: &Path| {
        ["seed-4/base.model.json", "seed-5/base.model.json", "seed-5/base.log.json"]
            .map(|f| fs::read(dir.join("r").join(f)).unwrap())
    };
    assert!(bin(&args, dir.path()).status.success());
    let first = read(dir.path());
    assert!(bin(&args, dir.path()).status.success());
    assert_eq!(first, read(dir.path()));

    assert!(bin(&["evaluate", "--config", "tiny.toml", "--arch", "rnn", "--seed-list", "4", "--out", "r"], dir.path())
        .status
        .success());
    let report = fs::read_to_string(dir.path().join("r/seed-4/base.eval.json")).unwrap();
    assert!(report.contains("\"dpd\"") && report.contains("\"seed\": 4"));
}

#[test]
fn prepare_data_writes_split_and_manifest() {
    let dir = setup();
    let out = bin(&["prepare-data", "--config", "tiny.toml", "--balance-rate", "0.7", "--out", "p"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let train = fs::read_to_string(dir.path().join("p/seed-3/train.tsv")).unwrap();
    assert_eq!(train.lines().count(), 400);
    let manifest = fs::read_to_string(dir.path().join("p/seed-3/manifest.json")).unwrap();
    assert!(manifest.contains("\"balance_rate\": 0.7"));
}
