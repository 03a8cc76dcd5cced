use chatternet::model::{ChatterNet, InfluenceState, ModelConfig, SubmissionInput, Variant};
use chatternet::train::{micro_batch_gradient, micro_batch_loss, MicroBatch};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;
/// Gradient norms below this are compared absolutely.
const NORM_FLOOR: f64 = 1e-8;
const EPSILON: f64 = 1e-7;

fn micro_config(rng: &mut ChaCha8Rng, variant: Variant) -> ModelConfig {
    let branches = rng.gen_range(1..=3);
    let kernels: Vec<usize> = [1, 3, 5]
        .choose_multiple(rng, branches)
        .copied()
        .collect();
    let m = if variant == Variant::LstmCc { rng.gen_range(1..=3) } else { rng.gen_range(0..=3) };
    ModelConfig {
        vocab_size: rng.gen_range(6..12),
        word_dim: rng.gen_range(2..=4),
        subreddit_count: rng.gen_range(2..=4),
        subreddit_dim: rng.gen_range(2..=3),
        branch_kernels: kernels,
        branch_filters: (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(2..=4)).collect(),
        tec_tail_filters: vec![rng.gen_range(2..=3), rng.gen_range(2..=3), 1],
        gru_hidden: rng.gen_range(2..=4),
        lstm_hidden: rng.gen_range(2..=3),
        submission_max_len: rng.gen_range(4..=7),
        news_max_len: rng.gen_range(5..=9),
        m,
        variant,
        ..ModelConfig::default()
    }
}

fn tokens(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<u32> {
    let used = rng.gen_range(len / 2..=len);
    (0..len)
        .map(|i| if i < used { rng.gen_range(1..vocab as u32) } else { 0 })
        .collect()
}

struct Check {
    worst: f64,
    worst_group: String,
    groups: usize,
    entries: usize,
}

fn check_config(seed: u64, variant: Variant) -> Result<Check, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = micro_config(&mut rng, variant);
    let mut net = ChatterNet::new(cfg.clone(), &mut rng).map_err(|e| e.to_string())?;
    // Nonzero biases everywhere keep activations away from ReLU kinks at 0.
    for t in net.params.tensors_mut() {
        for v in t.data.iter_mut() {
            *v = rng.gen_range(-0.6..0.6);
        }
    }
    let layout = net.layout.clone();
    // Gains near one and larger kernels keep the time-evolving path's
    // gradients well above finite-difference rounding noise.
    for ids in layout.tec_branches.iter().flatten().chain(&layout.tec_tail) {
        for v in net.params.get_mut(ids.q_g) {
            *v = rng.gen_range(0.8..1.4);
        }
        for v in net.params.get_mut(ids.conv.weight) {
            *v = rng.gen_range(-1.2..1.2);
        }
    }
    net.params.get_mut(layout.word_embedding)[..cfg.word_dim].fill(0.0);
    net.params.get_mut(layout.head_b)[0] = 2.0;
    net.params.get_mut(layout.tec_tail.last().unwrap().conv.bias)[0] = 1.5;

    let h = cfg.gru_hidden;
    let prior = InfluenceState::from_hidden(
        (0..h).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        (0..h).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        3,
    );
    let news: Vec<Vec<u32>> = (0..rng.gen_range(1..=3))
        .map(|_| tokens(&mut rng, cfg.news_max_len, cfg.vocab_size))
        .collect();
    let subs: Vec<(Vec<u32>, usize)> = (0..rng.gen_range(1..=3))
        .map(|_| (tokens(&mut rng, cfg.submission_max_len, cfg.vocab_size), rng.gen_range(0..cfg.subreddit_count)))
        .collect();
    let queries: Vec<(Vec<u32>, usize, f64, Vec<u32>)> = (0..rng.gen_range(1..=3))
        .map(|_| {
            (
                tokens(&mut rng, cfg.submission_max_len, cfg.vocab_size),
                rng.gen_range(0..cfg.subreddit_count),
                rng.gen_range(0.0..3.0),
                (0..cfg.m).map(|_| rng.gen_range(0..6)).collect(),
            )
        })
        .collect();
    let news_refs: Vec<&[u32]> = news.iter().map(|t| t.as_slice()).collect();
    let sub_refs: Vec<(&[u32], usize)> = subs.iter().map(|(t, s)| (t.as_slice(), *s)).collect();

    // Targets sit well away from the predictions, clear of the |·| kink.
    let (state, _) = net
        .aggregate_influence(&prior, &news_refs, &sub_refs, 4)
        .map_err(|e| e.to_string())?;
    let mut batch = Vec::new();
    for (t, s, rate, bins) in &queries {
        let input = SubmissionInput {
            tokens: t,
            subreddit: *s,
            rate: *rate,
            bins,
        };
        let y_hat = net.forward_submission(&state.g, input).map_err(|e| e.to_string())?.0.y_hat;
        let y = if rng.gen_bool(0.5) { y_hat + 0.8 } else { (y_hat - 0.8).max(y_hat * 0.3) };
        batch.push((input, y));
    }
    let mb = MicroBatch {
        prior: &prior,
        news: &news_refs,
        submissions: &sub_refs,
        k: 4,
        batch: &batch,
    };
    let (_, grads) = micro_batch_gradient(&net, mb, EPSILON).map_err(|e| e.to_string())?;

    let used_tokens: Vec<usize> = news
        .iter()
        .chain(subs.iter().map(|(t, _)| t))
        .chain(queries.iter().map(|q| &q.0))
        .flatten()
        .filter(|&&t| t != 0)
        .map(|&t| t as usize)
        .collect();
    let mut check = Check {
        worst: 0.0,
        worst_group: String::new(),
        groups: 0,
        entries: 0,
    };
    let names: Vec<String> = net.params.names().to_vec();
    for (ti, name) in names.iter().enumerate() {
        let len = net.params.tensors()[ti].data.len();
        let mut idx: Vec<usize> = if name == "word_embedding" {
            used_tokens
                .iter()
                .flat_map(|&t| (0..cfg.word_dim).map(move |d| t * cfg.word_dim + d))
                .collect()
        } else {
            (0..len).collect()
        };
        idx.sort_unstable();
        idx.dedup();
        idx.shuffle(&mut rng);
        idx.truncate(16);
        let (mut diff, mut an, mut nu) = (0.0, 0.0, 0.0);
        for &i in &idx {
            let orig = net.params.tensors()[ti].data[i];
            net.params.tensors_mut()[ti].data[i] = orig + STEP;
            let up = micro_batch_loss(&net, mb, EPSILON).map_err(|e| e.to_string())?;
            net.params.tensors_mut()[ti].data[i] = orig - STEP;
            let down = micro_batch_loss(&net, mb, EPSILON).map_err(|e| e.to_string())?;
            net.params.tensors_mut()[ti].data[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grads.tensors()[ti].data[i];
            diff += (analytic - numeric).powi(2);
            an += analytic * analytic;
            nu += numeric * numeric;
            check.entries += 1;
        }
        let rel = diff.sqrt() / (an.sqrt() + nu.sqrt()).max(NORM_FLOOR);
        check.groups += 1;
        if rel > check.worst {
            check.worst = rel;
            check.worst_group = format!("{name} (variant {}, seed {seed})", cfg.variant);
        }
    }
    Ok(check)
}

pub fn run() -> Outcome {
    let variants = [
        Variant::Full,
        Variant::NewsOnly,
        Variant::SubmissionOnly,
        Variant::Static,
        Variant::LstmCc,
        Variant::Full,
        Variant::Full,
        Variant::Static,
        Variant::Full,
        Variant::NewsOnly,
        Variant::SubmissionOnly,
        Variant::Full,
    ];
    let mut worst = 0.0;
    let mut worst_group = String::new();
    let (mut groups, mut entries) = (0, 0);
    for (i, &v) in variants.iter().enumerate() {
        let c = check_config(1000 + i as u64, v)?;
        groups += c.groups;
        entries += c.entries;
        if c.worst > worst {
            worst = c.worst;
            worst_group = c.worst_group;
        }
    }
    let summary = format!(
        "{} configurations, {groups} parameter groups, {entries} entries; worst relative error {worst:.2e} in {worst_group}",
        variants.len()
    );
    if worst <= TOLERANCE {
        Ok(summary)
    } else {
        Err(summary)
    }
}
