//! Fixtures shared by the integration test targets.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kgreason::synthetic::random_kg;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_kgreason"));
    c.env("RUST_LOG", "error");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub fn write_triples(path: &Path, triples: &[(String, String, String)]) {
    let body: String = triples.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect();
    fs::write(path, body).unwrap();
}

/// Split directory plus a tiny training config next to it.
pub fn fixture(root: &Path) -> PathBuf {
    let kg = random_kg(12, 3, 40, 9);
    let named: Vec<(String, String, String)> = kg
        .triples()
        .iter()
        .map(|t| {
            (
                kg.entities().name(t.head).unwrap().to_string(),
                kg.relations().name(t.relation).unwrap().to_string(),
                kg.entities().name(t.tail).unwrap().to_string(),
            )
        })
        .collect();
    let split = root.join("split");
    fs::create_dir_all(&split).unwrap();
    write_triples(&split.join("train.txt"), &named[..32]);
    write_triples(&split.join("valid.txt"), &named[32..36]);
    write_triples(&split.join("test.txt"), &named[36..]);
    fs::write(split.join("relation_desc.txt"), "r0\tfirst relation\nr1\tsecond relation\n").unwrap();
    let config = root.join("config.json");
    fs::write(
        &config,
        r#"{
  "model": {"dim": 8, "text_dim": 4, "qcmp_relation_layers": 1, "qcmp_entity_layers": 2,
            "gcmp_relation_layers": 1, "gcmp_entity_layers": 1},
  "graphs": [{"split": "split"}],
  "stages": [{"name": "warmup", "epochs": 1, "frozen": ["gcmp", "dtaf", "edge_scorer"]},
             {"name": "joint", "epochs": 1}],
  "negatives": 4,
  "batch_size": 8,
  "seed": 1
}"#,
    )
    .unwrap();
    config
}

pub fn qa_fixture(root: &Path) -> (PathBuf, PathBuf) {
    fs::write(root.join("qa_graph.tsv"), "paris\tcapital_of\tfrance\nrome\tcapital_of\titaly\nfrance\tborders\titaly\n").unwrap();
    let line = |id: &str, q: &str, topic: &str, a: &str, b: &str, gold: &str| {
        format!(
            r#"{{"id":"{id}","question":"{q}","options":[{{"label":"A","text":"{a}","entities":["{a}"]}},{{"label":"B","text":"{b}","entities":["{b}"]}}],"topics":["{topic}"],"graph":"qa_graph.tsv","answer":"{gold}"}}"#
        )
    };
    let train = [
        line("q1", "what is the capital of france", "france", "paris", "rome", "A"),
        line("q2", "what is the capital of italy", "italy", "paris", "rome", "B"),
        line("q3", "which country borders italy", "italy", "france", "paris", "A"),
    ]
    .join("\n");
    let qa = root.join("qa.jsonl");
    fs::write(&qa, train + "\n").unwrap();
    let inst = root.join("instance.jsonl");
    fs::write(&inst, line("q9", "capital city of france", "france", "rome", "paris", "B") + "\n").unwrap();
    (qa, inst)
}
