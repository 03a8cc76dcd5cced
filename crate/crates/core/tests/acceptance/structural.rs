use chatternet::model::{ChatterNet, GainMode, ModelConfig, SubmissionInput, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const CONFIGS: u64 = 20;
const PASSES: usize = 25;

fn config(rng: &mut ChaCha8Rng, variant: Variant) -> ModelConfig {
    ModelConfig {
        vocab_size: 30,
        word_dim: rng.gen_range(3..=6),
        subreddit_count: 4,
        subreddit_dim: rng.gen_range(2..=4),
        branch_kernels: vec![1, 3, 5][..rng.gen_range(1..=3)].to_vec(),
        branch_filters: vec![rng.gen_range(3..=6), rng.gen_range(2..=5)],
        tec_tail_filters: vec![rng.gen_range(2..=4), 1],
        gru_hidden: rng.gen_range(2..=5),
        lstm_hidden: 3,
        submission_max_len: rng.gen_range(5..=9),
        news_max_len: 8,
        m: if variant == Variant::LstmCc { rng.gen_range(1..=4) } else { rng.gen_range(0..=4) },
        variant,
        ..ModelConfig::default()
    }
}

fn tokens(rng: &mut ChaCha8Rng, len: usize) -> Vec<u32> {
    (0..len).map(|_| rng.gen_range(0..30)).collect()
}

/// Copies the static branch kernels into the time-evolving branches and
/// wires the tail to pass feature `c` through unchanged.
fn mirror_static(net: &mut ChatterNet, c: usize) {
    let layout = net.layout.clone();
    for (s, t) in layout.static_branches.iter().flatten().zip(layout.tec_branches.iter().flatten()) {
        let w = net.params.get(s.weight).to_vec();
        let b = net.params.get(s.bias).to_vec();
        net.params.get_mut(t.conv.weight).copy_from_slice(&w);
        net.params.get_mut(t.conv.bias).copy_from_slice(&b);
    }
    for (i, ids) in layout.tec_tail.iter().enumerate() {
        let src = if i == 0 { c } else { 0 };
        let w = net.params.get_mut(ids.conv.weight);
        w.fill(0.0);
        // layout [out][kernel=1][in]: route input `src` to output 0
        w[src] = 1.0;
        net.params.get_mut(ids.conv.bias).fill(0.0);
    }
}

pub fn run() -> Outcome {
    let mut failures = Vec::new();
    let mut checks = 0usize;
    let mut worst_identity = 0.0f64;
    for seed in 0..CONFIGS {
        let variant = Variant::ALL[seed as usize % Variant::ALL.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let cfg = config(&mut rng, variant);
        let mut net = ChatterNet::new(cfg.clone(), &mut rng).map_err(|e| e.to_string())?;
        for t in net.params.tensors_mut() {
            for v in t.data.iter_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        let dim = cfg.influence_dim();

        for _ in 0..PASSES {
            let g: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let toks = tokens(&mut rng, cfg.submission_max_len);
            let bins: Vec<u32> = (0..cfg.m).map(|_| rng.gen_range(0..20)).collect();
            let input = SubmissionInput {
                tokens: &toks,
                subreddit: rng.gen_range(0..4),
                rate: rng.gen_range(0.0..8.0),
                bins: &bins,
            };
            let p = net.forward_submission(&g, input).map_err(|e| e.to_string())?.0;
            checks += 1;
            if ![p.b_tilde, p.r, p.b, p.y_hat].iter().all(|v| v.is_finite()) {
                failures.push(format!("non-finite output {p:?}"));
            }
            if !(p.r > 0.0 && p.r < 1.0) {
                failures.push(format!("r = {} outside (0, 1)", p.r));
            }
            if p.b > p.b_tilde {
                failures.push(format!("B {} > B~ {}", p.b, p.b_tilde));
            }
            if p.b_tilde < 0.0 || p.y_hat < 0.0 {
                failures.push(format!("negative intensity {p:?}"));
            }
            if cfg.m == 0 && p.y_hat != p.b {
                failures.push(format!("zero-shot y {} != B {}", p.y_hat, p.b));
            }
        }

        // zero influence, zero subreddit vector, zero gain bias => zero kernels
        let mut zeroed = net.clone();
        let layout = zeroed.layout.clone();
        for ids in layout.tec_branches.iter().flatten().chain(&layout.tec_tail) {
            zeroed.params.get_mut(ids.q_g).fill(0.0);
        }
        let zg = vec![0.0; dim];
        let zu = vec![0.0; cfg.subreddit_dim];
        for ids in layout.tec_branches.iter().flatten().chain(&layout.tec_tail) {
            let gain = zeroed.kernel_gain(ids, &zg, &zu);
            let w = zeroed.tec_kernel(ids, &gain).map_err(|e| e.to_string())?;
            if w.iter().any(|&v| v != 0.0) {
                failures.push("nonzero calibrated kernel under zero influence".into());
            }
        }

        // unit gain reproduces the static block, feature by feature
        let toks = tokens(&mut rng, cfg.submission_max_len);
        let g: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = net.subreddit_embedding(1).map_err(|e| e.to_string())?;
        let (features, _) = net.static_features(&toks).map_err(|e| e.to_string())?;
        for (c, &want) in features.iter().enumerate() {
            let mut mirrored = net.clone();
            mirror_static(&mut mirrored, c);
            let (unit, _) = mirrored.tec_block(&toks, &g, &u, GainMode::Unit).map_err(|e| e.to_string())?;
            // calibrated path with gains forced to exactly one
            for ids in layout.tec_branches.iter().flatten().chain(&layout.tec_tail) {
                mirrored.params.get_mut(ids.w_g).fill(0.0);
                mirrored.params.get_mut(ids.w_v).fill(0.0);
                mirrored.params.get_mut(ids.q_g).fill(1.0);
            }
            let (calibrated, _) = mirrored
                .tec_block(&toks, &g, &u, GainMode::Calibrated)
                .map_err(|e| e.to_string())?;
            let err = (unit - want).abs().max((calibrated - want).abs());
            worst_identity = worst_identity.max(err);
            if err > 1e-12 {
                failures.push(format!("unit-gain block differs from static feature {c}: {unit} / {calibrated} vs {want}"));
            }
        }
    }
    if failures.is_empty() {
        Ok(format!(
            "{CONFIGS} configurations, {checks} forward passes; unit-gain vs static max deviation {worst_identity:.1e}"
        ))
    } else {
        failures.truncate(5);
        Err(failures.join("; "))
    }
}
