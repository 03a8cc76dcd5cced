use chatternet::data::{Dataset, Labels, Store, TargetSpec};
use chatternet::stream::{
    bin_comments, chatter_target, partition_intervals, CommentEvent, IntervalClock, NewsItem, SubmissionItem,
};
use chatternet::text::build_vocab;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const TRIALS: usize = 60;
const MS: [usize; 4] = [0, 1, 2, 5];

/// Where a comment lands: `Some(l)` for bin `l` (1-based), `Some(0)` for
/// the prediction window, `None` outside both.
fn oracle_slot(t0: i64, t: i64, m: usize, delta_obs: i64, delta_pred: i64) -> Option<usize> {
    if t <= t0 || t > t0 + delta_pred {
        return None;
    }
    (1..=m)
        .find(|&l| t0 + (l as i64 - 1) * delta_obs < t && t <= t0 + l as i64 * delta_obs)
        .or(Some(0))
}

fn comment_times(rng: &mut ChaCha8Rng, t0: i64, delta_obs: i64, delta_pred: i64) -> Vec<i64> {
    let mut out = Vec::new();
    for l in 0..=6 {
        let edge = t0 + l * delta_obs;
        out.extend([edge - 1, edge, edge + 1]);
    }
    out.extend([t0 + delta_pred - 1, t0 + delta_pred, t0 + delta_pred + 1]);
    for _ in 0..rng.gen_range(0..40) {
        out.push(t0 + rng.gen_range(-delta_obs..2 * delta_pred));
    }
    out.retain(|_| rng.gen_bool(0.8));
    out.sort_unstable();
    out
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = Vec::new();
    let mut comments_checked = 0usize;

    for trial in 0..TRIALS {
        let delta_obs = [30, 60, 90][trial % 3];
        let delta_pred = delta_obs * rng.gen_range(6..40);
        let n_subs = rng.gen_range(1..6);
        let mut subs = Vec::new();
        let mut comments = Vec::new();
        for j in 0..n_subs {
            let t0 = 10_000 + rng.gen_range(0..50) * delta_obs + if rng.gen_bool(0.5) { 0 } else { rng.gen_range(1..delta_obs) };
            let times = comment_times(&mut rng, t0, delta_obs, delta_pred);
            for &m in &MS {
                let bins = bin_comments(t0, &times, m, delta_obs);
                let target = chatter_target(t0, &times, m, delta_obs, delta_pred).map_err(|e| e.to_string())?;
                let mut want_bins = vec![0u32; m];
                let mut want_target = 0u64;
                let mut in_window = 0u64;
                for &t in &times {
                    match oracle_slot(t0, t, m, delta_obs, delta_pred) {
                        Some(0) => {
                            want_target += 1;
                            in_window += 1;
                        }
                        Some(l) => {
                            want_bins[l - 1] += 1;
                            in_window += 1;
                        }
                        None => {}
                    }
                }
                comments_checked += times.len();
                if bins.counts != want_bins || target.count != want_target {
                    failures.push(format!(
                        "trial {trial} m={m}: bins {:?} / target {} vs oracle {want_bins:?} / {want_target}",
                        bins.counts, target.count
                    ));
                }
                if bins.total() + target.count != in_window {
                    failures.push(format!("trial {trial} m={m}: bins + target != comments in window"));
                }
            }
            let id = format!("s{j}");
            subs.push(SubmissionItem {
                id: id.clone(),
                timestamp: t0,
                subreddit: "r".into(),
                title: "word".into(),
                selftext: String::new(),
            });
            comments.extend(times.iter().enumerate().map(|(i, &t)| CommentEvent {
                id: format!("{id}c{i}"),
                timestamp: t,
                submission_id: id.clone(),
                subreddit: "r".into(),
            }));
        }

        // the same events through the store and label builder
        let store = Store::from_streams(Vec::<NewsItem>::new(), subs, comments.clone(), delta_obs, [0; 3])
            .map_err(|e| e.to_string())?;
        let vocab = build_vocab(&[vec!["word".to_string()]], 1.0, 1).map_err(|e| e.to_string())?;
        let ds = Dataset::build(&store, &vocab, &["r".to_string()], 4, 4).map_err(|e| e.to_string())?;
        for &m in &MS {
            let labels = Labels::build(&ds, TargetSpec { m, delta_obs, delta_pred }).map_err(|e| e.to_string())?;
            for (i, s) in ds.submissions.iter().enumerate() {
                let mine: Vec<i64> = comments
                    .iter()
                    .filter(|c| c.submission_id == s.id)
                    .map(|c| c.timestamp)
                    .collect();
                let want: u64 = mine
                    .iter()
                    .filter(|&&t| oracle_slot(s.timestamp, t, m, delta_obs, delta_pred).is_some())
                    .count() as u64;
                let got = labels.bins[i].iter().map(|&c| u64::from(c)).sum::<u64>() + labels.targets[i].count;
                if got != want {
                    failures.push(format!("trial {trial} m={m}: dataset path counts {got}, oracle {want}"));
                }
            }
        }
    }

    // interval membership on boundaries
    let clock = IntervalClock::new(0, 60).map_err(|e| e.to_string())?;
    let events: Vec<CommentEvent> = [125, 10, 70, 60, 61, 120]
        .iter()
        .map(|&t| CommentEvent {
            id: format!("e{t}"),
            timestamp: t,
            submission_id: "s".into(),
            subreddit: "r".into(),
        })
        .collect();
    let p = partition_intervals(&events, &clock);
    let groups: Vec<(i64, Vec<i64>)> = p
        .groups
        .iter()
        .map(|(k, v)| (*k, v.iter().map(|e| e.timestamp).collect()))
        .collect();
    if groups != vec![(1, vec![10, 60]), (2, vec![61, 70, 120]), (3, vec![125])] {
        failures.push(format!("interval groups {groups:?}"));
    }

    if failures.is_empty() {
        Ok(format!(
            "{TRIALS} randomized event sets, m in {MS:?}, {comments_checked} comment placements incl. boundary timestamps"
        ))
    } else {
        failures.truncate(5);
        Err(failures.join("; "))
    }
}
