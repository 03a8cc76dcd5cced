use std::fs;
use std::path::Path;
use std::process::Command;

use chatternet::cli::{fingerprint_store, RunManifest, MANIFEST_FILE};
use chatternet::data::Store;
use chatternet::stream::write_jsonl;

use crate::protocol::{fixture, fixture_config};
use crate::Outcome;

fn rev<T: Clone>(v: &[T]) -> Vec<T> {
    v.iter().rev().cloned().collect()
}

fn chatternet(args: &[&str]) -> Result<(i32, String), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_chatternet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("CHATTERNET_DATA")
        .output()
        .map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    Ok((out.status.code().unwrap_or(-1), text))
}

fn ok(args: &[&str]) -> Result<String, String> {
    match chatternet(args)? {
        (0, text) => Ok(text),
        (code, text) => Err(format!("`chatternet {}` exited {code}: {text}", args.join(" "))),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub fn run() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let fx = fixture();

    // raw dumps in reverse order, so ingestion has to sort them
    let raw = root.join("raw");
    fs::create_dir_all(&raw).map_err(|e| e.to_string())?;
    let w = |name: &str, e: chatternet::Result<()>| e.map_err(|e| format!("{name}: {e}"));
    w("news", write_jsonl(&raw.join("news.jsonl"), &rev(&fx.news)))?;
    w("subs", write_jsonl(&raw.join("subs.jsonl"), &rev(&fx.submissions)))?;
    w("comments", write_jsonl(&raw.join("comments.jsonl"), &rev(&fx.comments)))?;
    let cfg_path = root.join("run.toml");
    let mut cfg = fixture_config(3);
    cfg.model.m = 2;
    fs::write(&cfg_path, cfg.to_toml().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;

    let store_dir = root.join("store");
    ok(&[
        "ingest",
        "--news",
        s(&raw.join("news.jsonl")),
        "--subs",
        s(&raw.join("subs.jsonl")),
        "--comments",
        s(&raw.join("comments.jsonl")),
        "--out",
        s(&store_dir),
    ])?;
    let store = Store::load(&store_dir).map_err(|e| e.to_string())?;
    let mut f = Vec::new();
    if store.submissions.len() != fx.submissions.len() || store.comments.len() != fx.comments.len() {
        f.push("ingested record counts differ from the fixture".to_string());
    }
    if !store.submissions.windows(2).all(|w| w[0].timestamp <= w[1].timestamp) {
        f.push("ingested submissions are not sorted".into());
    }

    // one epoch, flags overriding the config file
    let run1 = root.join("run1");
    ok(&[
        "train",
        "--config",
        s(&cfg_path),
        "--data",
        s(&store_dir),
        "--out",
        s(&run1),
        "--variant",
        "full",
        "--m",
        "1",
        "--epochs",
        "1",
        "--seed",
        "21",
    ])?;
    let manifest = RunManifest::load(&run1.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    let prints = fingerprint_store(&store_dir).map_err(|e| e.to_string())?;
    if manifest.data_fingerprints != prints
        || manifest.seed != 21
        || manifest.config.model.m != 1
        || manifest.config.train.epochs != 1
        || manifest.config.text != cfg.text
        || manifest.run_id != "run1"
    {
        f.push(format!("manifest does not describe the run: {manifest:?}"));
    }
    ok(&["evaluate", "--run", s(&run1), "--data", s(&store_dir), "--per-subreddit"])?;
    let csv1 = fs::read(run1.join("metrics.csv")).map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&csv1);
    let header = text.lines().next().unwrap_or_default();
    for col in ["mape", "kendall_tau", "spearman_rho", "stepwise_tau"] {
        if !header.split(',').any(|h| h == col) {
            f.push(format!("metrics CSV lacks {col}"));
        }
    }
    let all_rows = text.lines().filter(|l| l.contains(",ALL,")).count();
    if all_rows != 1 || text.lines().count() < 3 {
        f.push(format!("expected an ALL row plus subreddit rows:\n{text}"));
    }

    // rerun from the manifest alone
    let run2 = root.join("run2");
    ok(&[
        "train",
        "--manifest",
        s(&run1.join(MANIFEST_FILE)),
        "--data",
        s(&store_dir),
        "--out",
        s(&run2),
    ])?;
    ok(&["evaluate", "--run", s(&run2), "--data", s(&store_dir), "--per-subreddit"])?;
    let csv2 = fs::read(run2.join("metrics.csv")).map_err(|e| e.to_string())?;
    if csv1 != csv2 {
        f.push("rerun from the manifest produced a different CSV".into());
    }

    // error paths
    let bad = root.join("bad");
    let (code, _) = chatternet(&["train", "--data", s(&store_dir), "--out", s(&bad), "--variant", "lstm_cc", "--m", "0"])?;
    if code != 2 {
        f.push(format!("lstm_cc with m = 0 exited {code}, want 2"));
    }
    let (code, _) = chatternet(&[
        "ingest",
        "--news",
        s(&root.join("missing.jsonl")),
        "--subs",
        s(&raw.join("subs.jsonl")),
        "--comments",
        s(&raw.join("comments.jsonl")),
        "--out",
        s(&bad),
    ])?;
    if code != 3 {
        f.push(format!("missing input exited {code}, want 3"));
    }
    let (code, _) = chatternet(&["report", "--runs", s(&raw), "--out", s(&bad)])?;
    if code == 0 {
        f.push("report over zero runs succeeded".into());
    }

    if f.is_empty() {
        Ok(format!(
            "ingest -> train (1 epoch) -> evaluate; {} CSV rows; manifest rerun byte-identical ({} bytes); error exits 2/3/3",
            text.lines().count() - 1,
            csv1.len()
        ))
    } else {
        Err(f.join("; "))
    }
}
