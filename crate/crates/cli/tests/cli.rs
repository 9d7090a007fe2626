use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use tempfile::TempDir;
use tfr_core::data::{save_bundle, save_target_set, CandidateBundle, GradNorms, TargetSet};
use tfr_core::fixtures;
use tfr_core::rank::EvalReport;
use tfr_core::{Direction, ScoreTable};

const TINY: &str = "[synth.zoo]\npretrain_per_class = 4\n[synth.zoo.pretrain]\nepochs = 2\n\
                    [synth.zoo.split]\ntrain = 6\nval = 2\ntest = 3\n\
                    [synth.zoo.grid]\nlrs = [0.01]\nepochs = [1, 2]\n";

fn tfr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfr"))
        .current_dir(dir)
        .env_remove("TFR_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn tiny_zoo(dir: &Path, name: &str, seed: &str) {
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    ok(&tfr(
        dir,
        &[
            "--config",
            "tiny.toml",
            "synth",
            "--out",
            name,
            "--seed",
            seed,
        ],
    ));
}

#[test]
fn synth_is_deterministic_and_complete() {
    let tmp = TempDir::new().unwrap();
    tiny_zoo(tmp.path(), "a", "5");
    tiny_zoo(tmp.path(), "b", "5");
    let a = fs::read(tmp.path().join("a/manifest.json")).unwrap();
    assert_eq!(a, fs::read(tmp.path().join("b/manifest.json")).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&a).unwrap();
    let files = manifest["files"].as_object().unwrap();
    let bundles = files
        .keys()
        .filter(|k| k.contains("/bundles/") && k.ends_with(".tfrb"))
        .count();
    assert_eq!(bundles, 5);
    assert!(files.contains_key("fine-texture/target.tfrb"));
    assert!(files.contains_key("ground_truth.csv"));
    for rel in files.keys() {
        assert_eq!(
            fs::read(tmp.path().join("a").join(rel)).unwrap(),
            fs::read(tmp.path().join("b").join(rel)).unwrap(),
            "{rel}"
        );
    }
    ok(&tfr(tmp.path(), &["validate", "a/manifest.json"]));
}

#[test]
fn seed_env_is_a_fallback() {
    let tmp = TempDir::new().unwrap();
    tiny_zoo(tmp.path(), "flag", "11");
    let out = Command::new(env!("CARGO_BIN_EXE_tfr"))
        .current_dir(tmp.path())
        .env("TFR_SEED", "11")
        .args(["--config", "tiny.toml", "synth", "--out", "env"])
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(
        fs::read(tmp.path().join("flag/manifest.json")).unwrap(),
        fs::read(tmp.path().join("env/manifest.json")).unwrap()
    );
}

#[test]
fn two_sources_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = tfr(tmp.path(), &["synth", "--sources", "near-texture,shapes"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("zoo").exists());
}

#[test]
fn score_is_deterministic_with_components() {
    let tmp = TempDir::new().unwrap();
    tiny_zoo(tmp.path(), "zoo", "2");
    let args = |out: &'static str| {
        vec![
            "score",
            "--target",
            "zoo/fine-texture/target.tfrb",
            "--bundles",
            "zoo/fine-texture/bundles",
            "--metrics",
            "ours,leep,logme,nleep,parc,ours-sum",
            "--out",
            out,
        ]
    };
    ok(&tfr(tmp.path(), &args("s1")));
    ok(&tfr(tmp.path(), &args("s2")));
    for m in ["ours", "leep", "logme", "nleep", "parc", "ours-sum"] {
        let a = fs::read(tmp.path().join(format!("s1/{m}.json"))).unwrap();
        assert_eq!(
            a,
            fs::read(tmp.path().join(format!("s2/{m}.json"))).unwrap(),
            "{m}"
        );
    }
    let table: ScoreTable =
        serde_json::from_slice(&fs::read(tmp.path().join("s1/ours.json")).unwrap()).unwrap();
    assert_eq!(table.scores.len(), 5);
    let comps = table.components.unwrap();
    assert_eq!(comps.len(), 5);
    assert!(comps.values().all(|c| c.s_fu_norm.is_some()));
}

fn write_pool(dir: &Path, with_probs: bool) {
    let n = 12;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let target = TargetSet::new(
        "t",
        DMatrix::from_fn(n, 2, |i, j| (i * 3 + j) as f64),
        labels.clone(),
        2,
    )
    .unwrap();
    save_target_set(&target, &dir.join("target.tfrb")).unwrap();
    fs::create_dir_all(dir.join("bundles")).unwrap();
    for (k, id) in ["alpha", "beta", "gamma"].into_iter().enumerate() {
        let sep = k as f64;
        let b = CandidateBundle {
            model_id: id.into(),
            source_dataset: id.into(),
            architecture: "net".into(),
            embeddings: DMatrix::from_fn(n, 3, |i, j| {
                labels[i] as f64 * sep * (j == 0) as u8 as f64
                    + ((i * 7 + j * 5) % 11) as f64 / 11.0
            }),
            source_probs: (with_probs || k != 1)
                .then(|| DMatrix::from_fn(n, 2, |_, j| if j == 0 { 0.3 } else { 0.7 })),
            grad_norms: Some(GradNorms {
                conv1: 1.0,
                conv2: 1.0 + sep,
            }),
            provenance: Default::default(),
        };
        save_bundle(&b, &dir.join(format!("bundles/{id}.tfrb"))).unwrap();
    }
}

#[test]
fn leep_without_probs_exit_3_names_bundle() {
    let tmp = TempDir::new().unwrap();
    write_pool(tmp.path(), false);
    let out = tfr(
        tmp.path(),
        &[
            "score",
            "--target",
            "target.tfrb",
            "--bundles",
            "bundles",
            "--metrics",
            "leep",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta"));
    // the other metrics still work on the same pool
    ok(&tfr(
        tmp.path(),
        &[
            "score",
            "--target",
            "target.tfrb",
            "--bundles",
            "bundles",
            "--metrics",
            "ours,logme",
        ],
    ));
}

#[test]
fn malformed_bundle_exit_2_with_path() {
    let tmp = TempDir::new().unwrap();
    write_pool(tmp.path(), true);
    fs::write(tmp.path().join("bundles/broken.tfrb"), b"TFRBxx").unwrap();
    let out = tfr(
        tmp.path(),
        &["score", "--target", "target.tfrb", "--bundles", "bundles"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.tfrb"));
    let out = tfr(tmp.path(), &["validate", "bundles/broken.tfrb"]);
    assert_eq!(out.status.code(), Some(2));
}

fn fixture_path(name: &str) -> String {
    format!("{}/../core/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn eval_published_tau_table() {
    let tmp = TempDir::new().unwrap();
    let stdout = ok(&tfr(
        tmp.path(),
        &[
            "eval",
            "--tau-table",
            &fixture_path("tau_dataset_transferability.csv"),
            "--out",
            "r.json",
            "--csv",
            "r.csv",
        ],
    ));
    assert!(stdout.contains("Ours: average rank 1.91"));
    let report: EvalReport =
        serde_json::from_slice(&fs::read(tmp.path().join("r.json")).unwrap()).unwrap();
    assert!((report.friedman.unwrap().p_value - 0.002).abs() < 0.001);
    assert!(report
        .notes
        .iter()
        .any(|n| n.contains("SFDA has no tau for Breast; assigned rank 7")));
    let csv = fs::read_to_string(tmp.path().join("r.csv")).unwrap();
    assert!(csv.lines().last().unwrap().ends_with(",1.91"));
    assert!(csv.contains("Breast,0.22 (3),0.20 (5),- (7)"));
    let text = ok(&tfr(tmp.path(), &["report", "--input", "r.json"]));
    assert!(text.contains("critical difference (alpha = 0.05): 2.716"));
}

fn truth_as_scores(dir: &Path, drop_metric_on: Option<&str>) {
    let truth = fixtures::source_datasets_auc();
    fs::create_dir_all(dir.join("scores")).unwrap();
    fs::write(dir.join("truth.csv"), truth.to_csv_string()).unwrap();
    for metric in ["oracle", "reverse"] {
        for col in &truth.columns {
            if metric == "reverse" && drop_metric_on == Some(col.as_str()) {
                continue;
            }
            let scores = truth
                .column(col)
                .unwrap()
                .into_iter()
                .map(|(id, v)| (id.to_string(), if metric == "oracle" { v } else { -v }))
                .collect();
            let table = ScoreTable {
                metric_name: metric.into(),
                target: col.clone(),
                scores,
                components: None,
                mode: Direction::InDomain,
            };
            fs::write(
                dir.join(format!("scores/{metric}-{col}.json")),
                serde_json::to_string(&table).unwrap(),
            )
            .unwrap();
        }
    }
}

#[test]
fn eval_self_evaluation_is_perfect() {
    let tmp = TempDir::new().unwrap();
    truth_as_scores(tmp.path(), None);
    ok(&tfr(
        tmp.path(),
        &[
            "eval",
            "--scores",
            "scores",
            "--truth",
            "truth.csv",
            "--out",
            "r.json",
        ],
    ));
    let report: EvalReport =
        serde_json::from_slice(&fs::read(tmp.path().join("r.json")).unwrap()).unwrap();
    let truth = fixtures::source_datasets_auc();
    let mut tie_free = 0;
    for (target, row) in &report.tau {
        let mut values: Vec<f64> = truth
            .column(target)
            .unwrap()
            .into_iter()
            .map(|(_, v)| v)
            .collect();
        values.sort_by(f64::total_cmp);
        let oracle = row["oracle"].unwrap();
        assert_eq!(row["reverse"], Some(-oracle));
        if values.windows(2).all(|w| w[0] != w[1]) {
            tie_free += 1;
            assert_eq!(oracle, 1.0, "{target}");
        } else {
            // tied pairs count in the denominator with sign 0
            assert!(oracle < 1.0 && oracle > 0.95, "{target}: {oracle}");
        }
    }
    assert!(tie_free >= 5);
}

#[test]
fn eval_missing_metric_uses_lowest_rank() {
    let tmp = TempDir::new().unwrap();
    truth_as_scores(tmp.path(), Some("OCT"));
    ok(&tfr(
        tmp.path(),
        &[
            "eval",
            "--scores",
            "scores",
            "--truth",
            "truth.csv",
            "--out",
            "r.json",
        ],
    ));
    let report: EvalReport =
        serde_json::from_slice(&fs::read(tmp.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report.tau["OCT"]["reverse"], None);
    assert_eq!(report.ranks["OCT"]["reverse"], 2.0);
    assert!(report
        .notes
        .iter()
        .any(|n| n.contains("reverse has no tau for OCT")));
}

#[test]
fn eval_id_mismatch_exit_2() {
    let tmp = TempDir::new().unwrap();
    truth_as_scores(tmp.path(), None);
    let mut t: ScoreTable =
        serde_json::from_slice(&fs::read(tmp.path().join("scores/oracle-OCT.json")).unwrap())
            .unwrap();
    t.scores.insert("NotAModel".into(), 1.0);
    fs::write(
        tmp.path().join("scores/oracle-OCT.json"),
        serde_json::to_string(&t).unwrap(),
    )
    .unwrap();
    let out = tfr(
        tmp.path(),
        &["eval", "--scores", "scores", "--truth", "truth.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model:NotAModel"));
}

#[test]
fn report_fixture_queries() {
    let tmp = TempDir::new().unwrap();
    let text = ok(&tfr(
        tmp.path(),
        &[
            "report",
            "--truth",
            "fixture:source-datasets",
            "--lookup",
            "ImageNet:Blood",
            "--compare",
            "Breast,OrganS",
            "--exclude-self",
        ],
    ));
    assert!(text.contains("best source for OCT: RadImageNet (96.93)\n"));
    assert!(text.contains("ImageNet -> Blood: 99.85\n"));
    assert!(text
        .contains("Breast vs OrganS: Breast better on 7 of 9 targets (self targets excluded)\n"));
    let text = ok(&tfr(
        tmp.path(),
        &["report", "--truth", "fixture:architectures"],
    ));
    assert!(text.contains("best source for Derma: ConvNeXt (92.93)\n"));
}

#[test]
fn report_rejects_malformed_input() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("r.json"), "{\"schema_version\": 1}").unwrap();
    assert_eq!(
        tfr(tmp.path(), &["report", "--input", "r.json"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn unknown_config_key_exit_2() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("c.toml"),
        "[score]\ntarget = \"x\"\nbogus = 1\n",
    )
    .unwrap();
    let out = tfr(tmp.path(), &["--config", "c.toml", "score"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}
