use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bitext(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bitext"))
        .current_dir(dir)
        .args(args)
        .env_remove("BITEXT_THREADS")
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn eval_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("pairs.tsv"), "0.100000\ta\tb\n0.200000\tc\td\n").unwrap();
    fs::write(dir.path().join("gold.tsv"), "a\tb\ne\tf\n").unwrap();
    let out = bitext(dir.path(), &["eval", "pairs.tsv", "gold.tsv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(&row[..3], ["50.0", "50.0", "50.0"]);

    let out = bitext(dir.path(), &["eval", "pairs.tsv", "gold.tsv", "--format", "json"]);
    let json = stdout(&out);
    assert_eq!(json.lines().count(), 1);
    assert!(json.contains("\"precision\":50.0"));
}

#[test]
fn errors_are_one_categorized_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = bitext(dir.path(), &["eval", "missing.tsv", "gold.tsv"]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error\tio\t"));

    fs::write(dir.path().join("bad.tsv"), "oops\n").unwrap();
    fs::write(dir.path().join("gold.tsv"), "a\tb\n").unwrap();
    let out = bitext(dir.path(), &["eval", "bad.tsv", "gold.tsv"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).starts_with("error\tparse\t"));

    let out = bitext(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error\tusage\t"));

    let out = bitext(dir.path(), &["mine", "a", "b", "-o", "c", "--threshold", "3"]);
    assert!(!out.status.success());

    let out = bitext(dir.path(), &["synth", "--n-src", "3", "--n-planted", "5", "--dim", "4", "-o", "d"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(stderr(&out).starts_with("error\tvalidation\t"));
}

#[test]
fn mine_defaults_to_fixed_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let synth = bitext(
        dir.path(),
        &["synth", "--n-src", "50", "--n-planted", "20", "--dim", "32", "-o", "d", "--seed", "1"],
    );
    assert!(synth.status.success(), "{}", stderr(&synth));
    let out = bitext(dir.path(), &["mine", "d/src.bmem", "d/tgt.bmem", "-o", "p.tsv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("threshold=0.55"));
    let pairs = fs::read_to_string(dir.path().join("p.tsv")).unwrap();
    for line in pairs.lines() {
        let d: f32 = line.split('\t').next().unwrap().parse().unwrap();
        assert!(d <= 0.55);
    }
}

#[test]
fn preprocess_filter_stats_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("text.en"),
        "1\tThe report was adopted by a large majority.\n\
         2\tOne, two, three, four, five commas here.\n\
         3\tDer Bericht wurde mit großer Mehrheit angenommen.\n\
         4\tWe will vote on the amendments tomorrow.\n",
    )
    .unwrap();
    let out = bitext(p, &["preprocess", "text.en", "-o", "clean.en", "--report", "report.tsv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(p.join("report.tsv")).unwrap(),
        "stage\tcount\ninput\t4\ncommas\t3\nlength\t3\nlid\t2\n"
    );
    let clean = fs::read_to_string(p.join("clean.en")).unwrap();
    assert_eq!(clean.lines().map(|l| l.split('\t').next().unwrap()).collect::<Vec<_>>(), ["1", "4"]);

    let out = bitext(p, &["preprocess", "text.en", "-o", "x", "--lang", "sv"]);
    assert_eq!(out.status.code(), Some(5));

    let out = bitext(p, &["stats", "lengths", "clean.en"]);
    assert!(stdout(&out).starts_with("length\tcount\n7\t1\n8\t1\n#total\t2\n"), "{}", stdout(&out));

    fs::write(p.join("text.de"), "a\tDer Bericht.\nb\tEin Satz, zwei.\n").unwrap();
    fs::write(p.join("en2.tsv"), "x\tThe report.\ny\tA sentence, two.\n").unwrap();
    for (input, out_path) in [("en2.tsv", "en2.bmem"), ("text.de", "de.bmem")] {
        let o = bitext(p, &["embed", input, "--dim", "64", "-o", out_path]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let out = bitext(
        p,
        &[
            "filter", "--threshold", "2", "en2.tsv", "text.de", "en2.bmem", "de.bmem", "-o", "kept.tsv",
            "--out-src", "kept.en", "--out-tgt", "kept.de",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(p.join("kept.tsv")).unwrap().lines().count(), 2);
    assert_eq!(fs::read_to_string(p.join("kept.de")).unwrap().lines().count(), 2);

    let out = bitext(p, &["sweep", "kept.tsv", "--from", "0", "--to", "2", "--step", "1"]);
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 4);
    assert!(text.ends_with("2.000000\t2\n"));
}

#[test]
fn pipeline_dry_run_checks_stage_order() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.conf"),
        "stage = mine d/src.bmem d/tgt.bmem -o p.tsv\nstage = synth --n-src 5 --n-planted 2 --dim 4 -o d\n",
    )
    .unwrap();
    let out = bitext(dir.path(), &["pipeline", "bad.conf", "--dry-run"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(stderr(&out).contains("d/src.bmem"));

    fs::write(
        dir.path().join("good.conf"),
        "seed = 3\nstage = synth --n-src 5 --n-planted 2 --dim 4 -o d\nstage = mine d/src.bmem d/tgt.bmem --k 2 -o p.tsv\n",
    )
    .unwrap();
    let out = bitext(dir.path(), &["pipeline", "good.conf"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("p.tsv").exists());
}
