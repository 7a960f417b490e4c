mod common;

use std::collections::BTreeSet;
use std::fs;
use std::process::Output;

use clap::CommandFactory;
use common::{fixture, ok, qa_fixture, run, s, snapshot};
use kgreason::cli::Cli;

#[test]
fn every_command_is_byte_stable_under_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = fixture(root);
    let (qa, inst) = qa_fixture(root);

    let mut outs = Vec::new();
    for k in 0..2 {
        let out = root.join(format!("run{k}"));
        let stdout = ok(&["pretrain", "--config", s(&config), "--output", s(&out), "--seed", "7"]);
        let stats = fs::read_to_string(out.join("stats.csv")).unwrap();
        assert!(stats.starts_with("epoch,stage,loss,val_mrr\n"));
        assert_eq!(stats.lines().count(), 3);
        outs.push((stdout, snapshot(&out)));
    }
    assert_eq!(outs[0], outs[1]);
    assert!(outs[0].1.keys().any(|p| p.starts_with("final")));
    let ckpt = root.join("run0/final");

    let mut evals = Vec::new();
    for k in 0..2 {
        let csv = root.join(format!("per_query{k}.csv"));
        let json = ok(&["eval-kgc", "--checkpoint", s(&ckpt), "--split", s(&root.join("split")), "--per-query", s(&csv), "--seed", "7"]);
        evals.push((json, fs::read(&csv).unwrap()));
    }
    assert_eq!(evals[0], evals[1]);
    let report: serde_json::Value = serde_json::from_str(&evals[0].0).unwrap();
    for key in ["mrr", "hits10", "n_queries", "direction_breakdown"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["n_queries"], 8);

    let mut adapts = Vec::new();
    for k in 0..2 {
        let out = root.join(format!("adapt{k}"));
        let stdout = ok(&["adapt-kgqa", "--checkpoint", s(&ckpt), "--qa", s(&qa), "--shots", "1", "--epochs", "2", "--output", s(&out), "--seed", "3"]);
        adapts.push((stdout, snapshot(&out)));
    }
    assert_eq!(adapts[0], adapts[1]);
    let summary: serde_json::Value = serde_json::from_str(&adapts[0].0).unwrap();
    assert!(summary["train_accuracy"].as_f64().is_some());

    let adapted = root.join("adapt0");
    let a = ok(&["score", "--checkpoint", s(&adapted), "--qa-instance", s(&inst), "--pool", s(&qa), "--seed", "3"]);
    let b = ok(&["score", "--checkpoint", s(&adapted), "--qa-instance", s(&inst), "--pool", s(&qa), "--seed", "3"]);
    assert_eq!(a, b);
    let dist: serde_json::Value = serde_json::from_str(&a).unwrap();
    let total: f64 = dist["distribution"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["probability"].as_f64().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);

    let desc = root.join("desc.txt");
    fs::write(&desc, "paris\tcapital of france\nrome\t\n").unwrap();
    let e0 = root.join("emb0.txt");
    let e1 = root.join("emb1.txt");
    ok(&["embed-hash", "--desc", s(&desc), "--dim", "6", "--out", s(&e0), "--seed", "1"]);
    ok(&["embed-hash", "--desc", s(&desc), "--dim", "6", "--out", s(&e1), "--seed", "1"]);
    assert_eq!(fs::read(&e0).unwrap(), fs::read(&e1).unwrap());
    let table = kgreason::text::load_embeddings(&e0).unwrap();
    assert_eq!((table.len(), table.dim()), (2, 6));

    let g0 = ok(&["check-grad", "--config", s(&config), "--max-entries", "3", "--seed", "2"]);
    let g1 = ok(&["check-grad", "--config", s(&config), "--max-entries", "3", "--seed", "2"]);
    assert_eq!(g0, g1);

    let kg = root.join("split/train.txt");
    assert_eq!(ok(&["lift", "--kg", s(&kg), "--seed", "4"]), ok(&["lift", "--kg", s(&kg), "--seed", "4"]));
}

#[test]
fn lift_reproduces_two_triple_example() {
    let dir = tempfile::tempdir().unwrap();
    let kg = dir.path().join("kg.tsv");
    fs::write(&kg, "a\tr1\tb\nb\tr2\tc\n").unwrap();
    let got: BTreeSet<String> = ok(&["lift", "--kg", s(&kg), "--no-inverses"]).lines().map(String::from).collect();
    let want: BTreeSet<String> = ["r1\th2h\tr1", "r1\tt2t\tr1", "r2\th2h\tr2", "r2\tt2t\tr2", "r1\tt2h\tr2", "r2\th2t\tr1"]
        .iter()
        .map(|x| x.to_string())
        .collect();
    assert_eq!(got, want);

    let no_loops: BTreeSet<String> = ok(&["lift", "--kg", s(&kg), "--no-inverses", "--no-self-loops"])
        .lines()
        .map(String::from)
        .collect();
    let want: BTreeSet<String> = ["r1\tt2h\tr2", "r2\th2t\tr1"].iter().map(|x| x.to_string()).collect();
    assert_eq!(no_loops, want);

    // With inverses every t2h edge is mirrored by an h2t edge.
    let full: BTreeSet<String> = ok(&["lift", "--kg", s(&kg)]).lines().map(String::from).collect();
    for line in &full {
        let f: Vec<&str> = line.split('\t').collect();
        if f[1] == "t2h" {
            assert!(full.contains(&format!("{}\th2t\t{}", f[2], f[0])), "{line}");
        }
    }
    assert!(full.iter().any(|l| l.starts_with("r1^-1\t")));
}

#[test]
fn check_grad_passes_on_default_config() {
    let o = run(&["check-grad", "--max-entries", "4"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    assert!(stdout.lines().last().unwrap().starts_with("PASS"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn help_lists_every_flag() {
    let root = Cli::command();
    for sub in root.get_subcommands() {
        let name = sub.get_name();
        let o = run(&[name, "--help"]);
        assert!(o.status.success());
        let help = String::from_utf8(o.stdout).unwrap();
        for arg in sub.get_arguments() {
            if let Some(long) = arg.get_long() {
                assert!(help.contains(&format!("--{long}")), "`{name} --help` lacks --{long}");
            }
        }
        assert!(help.contains("--seed"), "`{name} --help` lacks --seed");
    }
    let top = String::from_utf8(run(&["--help"]).stdout).unwrap();
    for sub in root.get_subcommands() {
        assert!(top.contains(sub.get_name()));
    }
}

fn error_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let last = text.lines().last().expect("stderr has an error line");
    serde_json::from_str(last).unwrap_or_else(|_| panic!("not JSON: {text}"))
}

#[test]
fn errors_are_json_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let o = run(&["lift"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"], "usage");

    let o = run(&["lift", "--kg", s(&root.join("missing.tsv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(error_json(&o)["message"].as_str().unwrap().contains("missing.tsv"));

    let bad = root.join("bad.tsv");
    fs::write(&bad, "a\tr\n").unwrap();
    let o = run(&["lift", "--kg", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "parse");

    let cfg = root.join("c.json");
    fs::write(&cfg, r#"{"negatives": 4, "learning_rate": 0.1}"#).unwrap();
    let o = run(&["pretrain", "--config", s(&cfg), "--output", s(&root.join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(error_json(&o)["message"].as_str().unwrap().contains("learning_rate"));

    let o = run(&["check-grad", "--tolerance", "1e-300", "--max-entries", "2"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_json(&o)["error"], "numeric");
}
