use chatternet::eval::{kendall_tau, mape, spearman_rho, stepwise_labels, stepwise_tau};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const SEQUENCES: usize = 100;
const TOL: f64 = 1e-12;

/// τ-b by enumerating every pair.
fn tau_b_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mut concordant, mut discordant, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    let n = x.len();
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                continue;
            } else if dx == 0.0 {
                tx += 1;
            } else if dy == 0.0 {
                ty += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let denom = (((concordant + discordant + tx) * (concordant + discordant + ty)) as f64).sqrt();
    (denom > 0.0).then(|| (concordant - discordant) as f64 / denom)
}

/// Average rank of each element: one plus the number of smaller values,
/// plus half the number of other equal values.
fn ranks_oracle(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|a| {
            let less = v.iter().filter(|b| *b < a).count() as f64;
            let equal = v.iter().filter(|b| *b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= TOL,
        (None, None) => true,
        _ => false,
    }
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let mut tied = 0;
    for s in 0..SEQUENCES {
        let n = rng.gen_range(2..60);
        // few distinct levels force ties in both sequences
        let levels_x = rng.gen_range(1..8);
        let levels_y = rng.gen_range(1..8);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels_x) as f64 * 0.5).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| if rng.gen_bool(0.6) { (v * 2.0).round() % levels_y as f64 } else { rng.gen_range(0..levels_y) as f64 })
            .collect();
        if ranks_oracle(&x).iter().any(|r| r.fract() != 0.0) {
            tied += 1;
        }
        let tau = kendall_tau(&x, &y).ok();
        let want_tau = tau_b_oracle(&x, &y);
        if !close(tau, want_tau) {
            failures.push(format!("sequence {s}: tau {tau:?} vs oracle {want_tau:?}"));
        }
        let rho = spearman_rho(&x, &y).ok();
        let want_rho = pearson(&ranks_oracle(&x), &ranks_oracle(&y));
        if !close(rho, want_rho) {
            failures.push(format!("sequence {s}: rho {rho:?} vs oracle {want_rho:?}"));
        }
        for (a, b) in [(tau, want_tau), (rho, want_rho)] {
            if let (Some(a), Some(b)) = (a, b) {
                worst = worst.max((a - b).abs());
            }
        }

        let sizes: Vec<u64> = (0..n).map(|_| rng.gen_range(0..120)).collect();
        let predicted: Vec<u64> = sizes.iter().map(|&v| if rng.gen_bool(0.5) { v } else { rng.gen_range(0..120) }).collect();
        let labels = stepwise_labels(&sizes, 10).map_err(|e| e.to_string())?;
        // floor division by repeated subtraction
        let want_labels: Vec<u64> = sizes
            .iter()
            .map(|&v| {
                let (mut rest, mut q) = (v, 0);
                while rest >= 10 {
                    rest -= 10;
                    q += 1;
                }
                q
            })
            .collect();
        if labels != want_labels {
            failures.push(format!("sequence {s}: step labels differ"));
        }
        let st = stepwise_tau(&sizes, &predicted, 10).ok();
        let pl: Vec<f64> = predicted.iter().map(|&v| (v / 10) as f64).collect();
        let want_st = tau_b_oracle(&want_labels.iter().map(|&v| v as f64).collect::<Vec<_>>(), &pl);
        if !close(st, want_st) {
            failures.push(format!("sequence {s}: step-wise tau {st:?} vs oracle {want_st:?}"));
        }
    }

    let hand = [
        (vec![2.0, 4.0], vec![1.0, 5.0], 37.5),
        (vec![3.0, 7.0], vec![3.0, 7.0], 0.0),
        (vec![1.0], vec![2.0], 100.0),
    ];
    for (y, y_hat, want) in hand {
        let got = mape(&y, &y_hat, 0.0).map_err(|e| e.to_string())?;
        if got != want {
            failures.push(format!("MAPE {y:?} vs {y_hat:?}: {got} != {want}"));
        }
        let guarded = mape(&y, &y_hat, 1e-7).map_err(|e| e.to_string())?;
        if (guarded - want).abs() > 1e-4 {
            failures.push(format!("guarded MAPE {guarded} far from {want}"));
        }
    }
    let fixed = [
        (kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]), 4.0 / 6.0),
        (spearman_rho(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]), 0.5),
        (kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0),
    ];
    for (got, want) in fixed {
        let got = got.map_err(|e| e.to_string())?;
        if (got - want).abs() > TOL {
            failures.push(format!("fixed example {got} != {want}"));
        }
    }
    if stepwise_labels(&[25, 9, 10], 10).map_err(|e| e.to_string())? != [2, 0, 1] {
        failures.push("step labels of 25, 9, 10".into());
    }

    if failures.is_empty() {
        Ok(format!(
            "{SEQUENCES} random sequences ({tied} with tied ranks); max deviation {worst:.1e}; MAPE hand examples exact"
        ))
    } else {
        failures.truncate(5);
        Err(failures.join("; "))
    }
}
