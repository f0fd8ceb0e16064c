use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use haptic_grounding::corpus::load_transcripts;
use haptic_grounding::extraction::{read_keyword_records, CacheEntry, ResponseCache, DEFAULT_PROMPT};

fn pipeline(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pipeline"))
        .args(args)
        .current_dir(cwd)
        .env_remove("OPENAI_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path) {
    let o = pipeline(&["synth", "--out", "fx"], dir);
    assert!(o.status.success(), "{o:?}");
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[test]
fn run_twice_is_stable_and_skips() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let first = pipeline(&["run", "--config", "fx/pipeline.toml"], dir.path());
    assert!(first.status.success(), "{first:?}");
    assert!(stdout(&first).contains("Pulse Count"));
    let before = tree(&dir.path().join("fx/out"));

    let second = pipeline(&["run", "--config", "fx/pipeline.toml"], dir.path());
    assert!(second.status.success());
    assert!(stdout(&second).contains("skipped (up to date): extract, split, cluster, features, correlate, report"));
    assert_eq!(tree(&dir.path().join("fx/out")), before);

    let other = pipeline(
        &[
            "run",
            "--config",
            "fx/pipeline.toml",
            "--override",
            "output_dir=\"other\"",
        ],
        dir.path(),
    );
    assert!(other.status.success());
    assert_eq!(tree(&dir.path().join("fx/other")), before);
}

#[test]
fn stage_subcommands_run_in_order() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    for stage in ["split", "cluster"] {
        let o = pipeline(&[stage, "--config", "fx/pipeline.toml"], dir.path());
        assert_eq!(o.status.code(), Some(2), "{stage} before extract: {o:?}");
    }
    for stage in ["extract", "split", "cluster", "features", "correlate", "report"] {
        let o = pipeline(&["run", "--config", "fx/pipeline.toml", "--stage", stage], dir.path());
        assert!(o.status.success(), "{stage}: {o:?}");
    }
    assert!(dir.path().join("fx/out/report.txt").is_file());
}

#[test]
fn invalid_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cases: [&[&str]; 4] = [
        &["run", "--config", "missing.toml"],
        &[
            "run",
            "--config",
            "fx/pipeline.toml",
            "--override",
            "clustering.positive.k=1",
        ],
        &[
            "run",
            "--config",
            "fx/pipeline.toml",
            "--override",
            "lexicon.policy=\"sometimes\"",
        ],
        &["run", "--unknown-flag"],
    ];
    for args in cases {
        let o = pipeline(args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}: {o:?}");
        assert!(!o.stderr.is_empty());
    }
    assert_eq!(pipeline(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn extract_and_score() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = pipeline(
        &[
            "extract",
            "--method",
            "rule",
            "--in",
            "fx/transcripts.jsonl",
            "--out",
            "kw/rule.jsonl",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let o = pipeline(
        &["eval-extraction", "--pred", "kw/rule.jsonl", "--gold", "fx/gold.jsonl"],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("Method"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("rule"), "{row}");
}

#[test]
fn llm_extraction_replays_warm_cache_without_network() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let transcripts = load_transcripts(&dir.path().join("fx/transcripts.jsonl")).unwrap();
    let cache = ResponseCache::new(dir.path().join("cache"));
    for t in &transcripts {
        // cached reply: the words longer than four letters
        let keywords: Vec<String> = t
            .text
            .split(|c: char| !c.is_alphabetic())
            .filter(|w| w.len() > 4)
            .map(str::to_string)
            .collect();
        let entry = CacheEntry {
            model: "gpt-3.5-turbo".into(),
            prompt: DEFAULT_PROMPT.into(),
            text: t.text.clone(),
            raw_response: serde_json_array(&keywords),
            keywords,
        };
        cache
            .put(&ResponseCache::key(&entry.model, DEFAULT_PROMPT, &t.text), &entry)
            .unwrap();
    }

    let args = [
        "extract",
        "--method",
        "llm",
        "--in",
        "fx/transcripts.jsonl",
        "--cache-dir",
        "cache",
        "--endpoint",
        "http://127.0.0.1:9/v1/chat/completions",
    ];
    let run = |out: &str| {
        let mut a = args.to_vec();
        a.extend(["--out", out]);
        let o = pipeline(&a, dir.path());
        assert!(o.status.success(), "{o:?}");
        std::fs::read(dir.path().join(out)).unwrap()
    };
    let a = run("a.jsonl");
    let b = run("b.jsonl");
    assert_eq!(a, b);
    let records = read_keyword_records(&dir.path().join("a.jsonl")).unwrap();
    assert_eq!(records.len(), transcripts.len());
    assert!(records.iter().any(|r| !r.keywords.is_empty()));

    // a cold cache has to reach the endpoint, which refuses the connection
    std::fs::remove_dir_all(dir.path().join("cache")).unwrap();
    let mut a = args.to_vec();
    a.extend(["--out", "c.jsonl"]);
    assert_eq!(pipeline(&a, dir.path()).status.code(), Some(2));
}

fn serde_json_array(words: &[String]) -> String {
    let quoted: Vec<String> = words.iter().map(|w| format!("\"{w}\"")).collect();
    format!("[{}]", quoted.join(","))
}
