use std::collections::BTreeSet;

use chatternet::caspred::{complexity, lix, temporal_gaps, Extractor, FeatureSet, Lexicon, TfIdf, K};

use crate::Outcome;

fn exact(name: &str, got: f64, want: f64, failures: &mut Vec<String>) {
    if (got - want).abs() > 1e-12 {
        failures.push(format!("{name}: got {got}, want {want}"));
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn run() -> Outcome {
    let mut f = Vec::new();
    exact("complexity of 4 singletons", complexity(&words("w x y z")), 4f64.ln(), &mut f);
    exact("complexity of one term", complexity(&words("w")), 0.0, &mut f);
    exact("complexity of one term five times", complexity(&words("w w w w w")), -5.0 * 5f64.ln(), &mut f);
    // two distinct terms, tf 1 and 3: (1·(ln2 − 0) + 3·(ln2 − ln3)) / 2
    exact(
        "complexity mixed",
        complexity(&words("u v v v")),
        (2f64.ln() + 3.0 * (2f64.ln() - 3f64.ln())) / 2.0,
        &mut f,
    );
    exact("lix cat", lix("The cat sat on the mat.").map_err(|e| e.to_string())?, 6.0, &mut f);
    exact("lix long word", lix("Antidisestablishment.").map_err(|e| e.to_string())?, 101.0, &mut f);
    let base = "Parliament approved the measure. Critics remain unconvinced!";
    let doubled = "Parliament approved the measure. Parliament approved the measure. \
                   Critics remain unconvinced! Critics remain unconvinced!";
    // 7 words, 2 sentences, long words: Parliament, approved, measure, Critics, unconvinced
    exact("lix hand count", lix(base).map_err(|e| e.to_string())?, 3.5 + 500.0 / 7.0, &mut f);
    exact(
        "lix doubling",
        lix(doubled).map_err(|e| e.to_string())?,
        lix(base).map_err(|e| e.to_string())?,
        &mut f,
    );
    let t: Vec<i64> = (1..=10).map(|i| 10 * i).collect();
    let (first, last) = temporal_gaps(&t, 0, 10).map_err(|e| e.to_string())?;
    exact("avg_first", first, 10.0, &mut f);
    exact("avg_last", last, 112.5, &mut f);
    let (a, b) = temporal_gaps(&[42; 10], 42, 10).map_err(|e| e.to_string())?;
    exact("simultaneous first", a, 0.0, &mut f);
    exact("simultaneous last", b, 0.0, &mut f);

    let ex = Extractor {
        tfidf: TfIdf::fit(&[words("rates rise"), words("rates fall")], 1),
        lexicon: Some(Lexicon([("good".to_string(), 0.75)].into())),
        subreddits: vec!["news".into(), "worldnews".into()],
    };
    let comments: Vec<i64> = (1..=12).map(|i| 1000 + 10 * i).collect();
    let text = "Good good news: https://x.org and www.y.org.";
    let feats = ex
        .extract(text, "worldnews", 1000, &comments)
        .map_err(|e| e.to_string())?
        .ok_or("submission with 12 comments was excluded")?;
    if feats.referral_count != 2 {
        f.push(format!("referral_count {}", feats.referral_count));
    }
    exact("unique-term polarity", feats.polarity.unwrap_or(f64::NAN), 0.75, &mut f);
    if feats.comment_times != (1..=K).map(|i| 10.0 * i as f64).collect::<Vec<_>>() {
        f.push(format!("comment times {:?}", feats.comment_times));
    }
    if ex.extract(text, "news", 1000, &comments[..9]).map_err(|e| e.to_string())?.is_some() {
        f.push("submission with 9 comments was not excluded".into());
    }

    // rows of the feature table marked as additions
    let org: BTreeSet<String> = ex.names(FeatureSet::Org, true).into_iter().collect();
    let full: BTreeSet<String> = ex.names(FeatureSet::Full, true).into_iter().collect();
    let mut want_org: BTreeSet<String> = (1..=K).map(|i| format!("comment_time_{i}")).collect();
    want_org.extend(["polarity", "avg_gap_first_half", "avg_gap_last_half"].map(String::from));
    let mut added: BTreeSet<String> = ["complexity", "lix", "referral_count", "word_count", "sentence_count"]
        .map(String::from)
        .into();
    added.extend(["tfidf:fall", "tfidf:rates", "tfidf:rise"].map(String::from));
    added.extend(["subreddit:news", "subreddit:worldnews"].map(String::from));
    if org != want_org {
        f.push(format!("org features {org:?}"));
    }
    if !(org.is_subset(&full) && org.len() < full.len()) {
        f.push("org is not a strict subset of full".into());
    }
    let extra: BTreeSet<String> = full.difference(&org).cloned().collect();
    if extra != added {
        f.push(format!("full-only features {extra:?}"));
    }
    let v_full = feats.vector(FeatureSet::Full, ex.subreddits.len());
    if v_full.len() != full.len() || feats.vector(FeatureSet::Org, 2).len() != org.len() {
        f.push("vector widths differ from the column names".into());
    }

    if f.is_empty() {
        Ok(format!(
            "formulas exact; org has {} columns, full adds {} (tf-idf, complexity, LIX, referrals, size, subreddit)",
            org.len(),
            extra.len()
        ))
    } else {
        Err(f.join("; "))
    }
}
