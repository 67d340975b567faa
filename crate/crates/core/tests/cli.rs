use std::path::Path;
use std::process::{Command, Output};

use coinflip::functions::RangedFunction;
use coinflip::influence::{coalition_influence, Coalition, Mode};
use coinflip::measures::ProductMeasure;

fn coinflip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coinflip"))
        .args(args)
        .env_remove("COINFLIP_THREADS")
        .output()
        .unwrap()
}

fn rows(out: &Output) -> Vec<csv::StringRecord> {
    let mut reader = csv::Reader::from_reader(out.stdout.as_slice());
    reader.records().map(Result::unwrap).collect()
}

fn column(out: &Output, name: &str) -> usize {
    let mut reader = csv::Reader::from_reader(out.stdout.as_slice());
    reader.headers().unwrap().iter().position(|h| h == name).unwrap()
}

/// CSV with the trailing runtime column dropped.
fn untimed(out: &Output) -> String {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn constant_function_influence() {
    let out = coinflip(&["influence", "--function", "constant:1", "--S", "", "--b", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let r = rows(&out);
    assert_eq!(r.len(), 1);
    assert_eq!(&r[0][column(&out, "value")], "1.0");
    assert_eq!(&r[0][column(&out, "exact")], "1");
}

#[test]
fn or_example_rows_match_the_closed_form() {
    let out = coinflip(&["verify-or-example", "--n", "16"]);
    assert_eq!(out.status.code(), Some(0));
    let (b, value, label) = (column(&out, "b"), column(&out, "value"), column(&out, "label"));
    let r = rows(&out);
    assert_eq!(r.len(), 32);
    for row in r.iter().filter(|row| &row[b] == "0") {
        let s: i32 = row[label].trim_start_matches("s=").parse().unwrap();
        let v: f64 = row[value].parse().unwrap();
        assert!((v - (15.0f64 / 16.0).powi(16 - s)).abs() < 1e-12);
    }
}

#[test]
fn single_round_search_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let json = dir.path().join(name);
        let out = coinflip(&[
            "search-single", "--function", "tribes:4", "--measure", "uniform:16", "--epsilon", "0.3", "--seed", "7",
            "--json", json.to_str().unwrap(),
        ]);
        (out, std::fs::read_to_string(json).unwrap())
    };
    let (a, ja) = run("a.json");
    let (b, jb) = run("b.json");
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(&rows(&a)[0][column(&a, "status")], "certified");
    assert_eq!(untimed(&a), untimed(&b));
    assert_eq!(ja, jb);
    let sidecar: serde_json::Value = serde_json::from_str(&ja).unwrap();
    assert_eq!(sidecar["artifacts"][0]["status"], "certified");
    assert!(sidecar["artifacts"][0]["trace"].is_object());
}

#[test]
fn thread_count_does_not_change_results() {
    let args = ["zoo", "--n", "8", "--epsilon", "0.25", "--trials", "40", "--seed", "3"];
    let one = Command::new(env!("CARGO_BIN_EXE_coinflip")).args(args).env("COINFLIP_THREADS", "1").output().unwrap();
    let many = coinflip(&args);
    let four = coinflip(&[&args[..], &["--threads", "4"]].concat());
    assert_eq!(untimed(&one), untimed(&many));
    assert_eq!(untimed(&one), untimed(&four));
}

#[test]
fn seed_is_mandatory_for_randomized_runs() {
    let out = coinflip(&["search-single", "--function", "tribes:4", "--epsilon", "0.3"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`seed`"));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"command": "influence", "functon": "or"}"#).unwrap();
    let out = coinflip(&["--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("functon"));

    let out = coinflip(&["influence", "--function", "tribes:5", "--n", "16"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, r#"{"command": "influence", "function": "or", "measure": "p:1/8:8", "coalition": "", "b": 0}"#)
        .unwrap();
    let file_only = coinflip(&["--config", path.to_str().unwrap()]);
    let overridden = coinflip(&["--config", path.to_str().unwrap(), "--b", "1", "--S", "3"]);
    let b = column(&file_only, "b");
    assert_eq!(&rows(&file_only)[0][b], "0");
    assert_eq!(&rows(&overridden)[0][b], "1");
    assert_eq!(&rows(&overridden)[0][column(&overridden, "coalition")], "3");
    assert_eq!(&rows(&overridden)[0][column(&overridden, "value")], "1.0");
}

#[test]
fn budget_errors_and_explicit_downgrade() {
    let base = ["influence", "--function", "or", "--n", "30", "--b", "0", "--S", "1"];
    assert_eq!(coinflip(&base).status.code(), Some(4));
    let out = coinflip(&[&base[..], &["--allow-mc", "--seed", "2"]].concat());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(&rows(&out)[0][column(&out, "flags")], "downgraded-to-mc");
    assert_eq!(&rows(&out)[0][column(&out, "exact")], "0");
}

#[test]
fn expected_failures_pass_only_with_the_flag() {
    let args = [
        "verify-prop22", "--function", "majority", "--measure", "uniform:16", "--epsilon", "0.01", "--k", "1",
        "--trials", "20", "--seed", "1",
    ];
    let out = coinflip(&args);
    assert_eq!(&rows(&out)[0][column(&out, "status")], "fail");
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(coinflip(&[&args[..], &["--expect-failed"]].concat()).status.code(), Some(0));
}

#[test]
fn rows_are_reproducible_from_the_library() {
    let out = coinflip(&["influence", "--function", "random:5", "--measure", "p:0.3:10", "--S", "2;7"]);
    let (b, value) = (column(&out, "b"), column(&out, "value"));
    let f = RangedFunction::random(10, 5, vec![0.5, 0.5]).unwrap();
    let mu = ProductMeasure::uniform_bias(10, 0.3).unwrap();
    let s = Coalition::new([1, 6], 10).unwrap();
    for row in rows(&out) {
        let b: u32 = row[b].parse().unwrap();
        let v: f64 = row[value].parse().unwrap();
        assert_eq!(v, coalition_influence(&f, &mu, &s, b, Mode::Exact).unwrap().value);
    }
}

#[test]
fn protocols_from_the_command_line() {
    let out = coinflip(&["adversary-dp", "--protocol", "parity:3", "--S", "2", "--b", "1"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(&rows(&out)[0][column(&out, "value")], "1.0");

    let out = coinflip(&["search-multi", "--protocol", "or-xor-maj:8", "--epsilon", "0.3", "--seed", "0"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(&rows(&out)[0][column(&out, "status")], "certified");
}

#[test]
fn csv_goes_to_a_file_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.csv");
    let out = coinflip(&["resilience", "--function", "majority", "--n", "5", "--epsilon", "0.1", "--ell", "1", "--out",
        path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(Path::new(&path)).unwrap();
    assert!(text.lines().nth(1).unwrap().contains("resilient"));
}
