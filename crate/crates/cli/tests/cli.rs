use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn oodp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oodp"))
        .args(args)
        .env_remove("OODP_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

/// An in-distribution set and two candidates, all with 2-D features.
fn fixture(dir: &Path) -> (String, String, String) {
    let mut in_set = String::from("# ood-protect v1 dim=2 k=3 labels=1 pred=0\n");
    for i in 0..12 {
        in_set.push_str(&format!("{},{},{}\n", i % 4, i / 4, i % 3));
    }
    let near = "# ood-protect v1 dim=2 k=3 labels=0 pred=1\n0.5,0.5,0\n2.5,1.5,1\n1.5,2.5,2\n3.5,0.5,1\n";
    let far = "# ood-protect v1 dim=2 k=3 labels=0 pred=1\n9,9,0\n9,8,0\n8,9,0\n";
    (
        write(dir, "in.csv", &in_set),
        write(dir, "near.csv", near),
        write(dir, "far.csv", far),
    )
}

#[test]
fn metrics_writes_one_csv_row_per_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let (i, a, b) = fixture(dir.path());
    let o = oodp(&["metrics", &i, &a, &b, "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("ood_set,"));
    assert!(lines[1].starts_with("near,"));
    assert!(lines[2].starts_with("far,"));
}

#[test]
fn candidates_are_equalized_to_the_smallest() {
    let dir = tempfile::tempdir().unwrap();
    let (i, a, b) = fixture(dir.path());
    let o = oodp(&["metrics", &i, &a, &b]);
    let reports: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    for r in reports.as_array().unwrap() {
        assert_eq!(r["n_ood"], 3);
    }
}

#[test]
fn missing_predictions_exit_2_and_name_the_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let (i, a, _) = fixture(dir.path());
    let bare = write(
        dir.path(),
        "bare.csv",
        "# ood-protect v1 dim=2 k=3 labels=0 pred=0\n5,5\n",
    );
    let out = dir.path().join("report.json");
    let o = oodp(&["metrics", &i, &a, &bare, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bare"), "{}", stderr(&o));
    assert!(!out.exists(), "no output on failure");
}

#[test]
fn default_k_is_four() {
    let dir = tempfile::tempdir().unwrap();
    let (i, a, b) = fixture(dir.path());
    let implicit = oodp(&["metrics", &i, &a, &b]);
    let explicit = oodp(&["metrics", &i, &a, &b, "--k", "4"]);
    assert!(implicit.status.success());
    assert_eq!(implicit.stdout, explicit.stdout);
    assert_ne!(oodp(&["metrics", &i, &a, &b, "--k", "2"]).stdout, implicit.stdout);
}

#[test]
fn thread_cap_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let (i, a, b) = fixture(dir.path());
    let capped = Command::new(env!("CARGO_BIN_EXE_oodp"))
        .args(["metrics", &i, &a, &b])
        .env("OODP_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(capped.stdout, oodp(&["metrics", &i, &a, &b]).stdout);
    let bad = Command::new(env!("CARGO_BIN_EXE_oodp"))
        .args(["metrics", &i, &a, &b])
        .env("OODP_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn missing_input_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a, _) = fixture(dir.path());
    let missing = dir.path().join("absent.csv");
    assert_eq!(oodp(&["metrics", missing.to_str().unwrap(), &a]).status.code(), Some(3));
}

const CIFAR10_REPORTS: &str = "ood_set,cr_pct,se,cd,k,num_classes
SVHN,9.04,1.538,2.39,4,10
C100*,21.39,2.158,2.49,4,10
T-ImgNt,16.46,1.908,2.68,4,10
ISUN,13.28,1.766,2.68,4,10
LSUN,12.93,2.039,2.95,4,10
Gaussian,1.93,0.264,2.23,4,10
";

#[test]
fn rank_replays_published_cifar10_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let reports = write(dir.path(), "c10.csv", CIFAR10_REPORTS);
    let o = oodp(&["rank", &reports, "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[1].starts_with("1,C100*,"));
    assert!(lines[6].starts_with("6,Gaussian,"));
    assert_eq!(*lines.last().unwrap(), "C100*");
}

#[test]
fn rank_single_candidate_and_cd_tiebreak() {
    let dir = tempfile::tempdir().unwrap();
    let one = write(
        dir.path(),
        "one.csv",
        "ood_set,cr,se,cd,num_classes\nonly,0.3,1.0,2.0,10\n",
    );
    let o = oodp(&["rank", &one]);
    assert_eq!(stdout(&o).lines().last(), Some("only"));

    let tied = write(
        dir.path(),
        "tied.csv",
        "ood_set,cr,se,cd,num_classes\nwide,0.3,1.0,2.0,10\ntight,0.3,1.0,1.5,10\n",
    );
    let o = oodp(&["rank", &tied, "--format", "csv"]);
    let text = stdout(&o);
    assert!(text.contains("2,wide,"));
    assert!(text.contains("cd-tiebreak"));
    assert_eq!(text.lines().last(), Some("tight"));
}

#[test]
fn rank_reads_json_written_by_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (i, a, b) = fixture(dir.path());
    let report = dir.path().join("m.json");
    assert!(oodp(&["metrics", &i, &a, &b, "--out", report.to_str().unwrap()])
        .status
        .success());
    let o = oodp(&["rank", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().last(), Some("near"));
}

#[test]
fn eval_reports_auroc_and_fpr() {
    let dir = tempfile::tempdir().unwrap();
    let i = write(dir.path(), "in.txt", "# detector scores\n1\n2\n3\n");
    let o1 = write(dir.path(), "seen.txt", "0\n2\n");
    let o2 = write(dir.path(), "unseen.txt", "-1\n-2\n");
    let o = oodp(&["eval", &i, &o1, &o2, "--seen", "seen", "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("seen,0.75,0.5,0.95,3,2"));
    assert!(text.contains("unseen,1,0,0.95,3,2"));
    assert!(text.lines().last().unwrap().starts_with("avg,1,0,"));

    let bad = write(dir.path(), "bad.txt", "1\nx\n");
    assert_eq!(oodp(&["eval", &i, &bad]).status.code(), Some(2));
}

fn read_dir_sorted(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (PathBuf::from(p.file_name().unwrap()), bytes)
        })
        .collect();
    files.sort();
    files
}

#[test]
fn two_moon_demo_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = oodp(&[
            "demo",
            "two-moon",
            "--seed",
            "7",
            "--out-dir",
            d.path().to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (fa, fb) = (read_dir_sorted(a.path()), read_dir_sorted(b.path()));
    assert_eq!(fa.len(), 2);
    assert_eq!(fa, fb);
}

#[test]
fn ranking_demo_winners_agree() {
    let d = tempfile::tempdir().unwrap();
    let o = oodp(&["demo", "ranking", "--out-dir", d.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("ranking_report.json")).unwrap()).unwrap();
    assert_eq!(report["metric_winner"], report["gap_winner"]);
    assert!(stdout(&o).contains("agree: true"));
}

#[test]
fn fgs_demo_cd_column_rises() {
    let d = tempfile::tempdir().unwrap();
    let o = oodp(&["demo", "fgs", "--out-dir", d.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(d.path().join("fgs_sweep.csv")).unwrap();
    let cds: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(cds.len() >= 6);
    assert!(cds.windows(2).all(|w| w[0] <= w[1]), "{cds:?}");
}

#[test]
fn unwritable_output_dir_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = write(dir.path(), "file", "");
    let target = format!("{blocker}/sub");
    let o = oodp(&["demo", "two-moon", "--out-dir", &target]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
