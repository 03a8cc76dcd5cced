use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{TokenSequence, Vocabulary, PAD_ID};
use crate::error::{Error, Result};

/// Row-major `rows × cols` embedding table. Row 0 is the PAD vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Text format: a `rows cols f64` header line, then one
    /// whitespace-separated row per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "{} {} f64", self.rows, self.cols).expect("write to vec");
        for r in 0..self.rows {
            let line: Vec<String> = self.row(r).iter().map(|v| format!("{v:e}")).collect();
            writeln!(buf, "{}", line.join(" ")).expect("write to vec");
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |what: &str| Error::Data(format!("{}: {what}", path.display()));
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file"))?.split(' ').collect();
        if header.len() != 3 || header[2] != "f64" {
            return Err(bad("expected `rows cols f64` header"));
        }
        let rows: usize = header[0].parse().map_err(|_| bad("bad row count"))?;
        let cols: usize = header[1].parse().map_err(|_| bad("bad column count"))?;
        let mut data = Vec::with_capacity(rows * cols);
        for line in lines.by_ref().take(rows) {
            let before = data.len();
            for v in line.split_whitespace() {
                data.push(v.parse::<f64>().map_err(|_| bad("bad value"))?);
            }
            if data.len() - before != cols {
                return Err(bad("row length mismatch"));
            }
        }
        if data.len() != rows * cols {
            return Err(bad("missing rows"));
        }
        Ok(Self { rows, cols, data })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub iterations: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            window: 10,
            iterations: 500,
            negatives: 5,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

/// Anything that can produce initial word vectors from an encoded corpus.
pub trait EmbeddingTrainer {
    fn train(&self, corpus: &[TokenSequence], vocab_size: usize) -> Result<EmbeddingMatrix>;
}

/// Skip-gram with negative sampling.
#[derive(Debug, Clone)]
pub struct SkipGram {
    pub config: SkipGramConfig,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl EmbeddingTrainer for SkipGram {
    fn train(&self, corpus: &[TokenSequence], vocab_size: usize) -> Result<EmbeddingMatrix> {
        let cfg = &self.config;
        let dim = cfg.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

        // negative sampling table from unigram^0.75
        let mut freq = vec![0f64; vocab_size];
        let mut total_tokens = 0usize;
        for seq in corpus {
            for &id in &seq.ids[..seq.true_length] {
                if id != PAD_ID {
                    freq[id as usize] += 1.0;
                    total_tokens += 1;
                }
            }
        }
        let mut cdf: Vec<f64> = freq.iter().map(|f| f.powf(0.75)).collect();
        let mut acc = 0.0;
        for c in cdf.iter_mut() {
            acc += *c;
            *c = acc;
        }

        let mut input = EmbeddingMatrix::zeros(vocab_size, dim);
        for v in input.data.iter_mut() {
            *v = (rng.gen::<f64>() - 0.5) / dim as f64;
        }
        let mut output = vec![0f64; vocab_size * dim];
        let mut grad = vec![0f64; dim];

        let steps = (cfg.iterations * total_tokens).max(1) as f64;
        let mut step = 0usize;
        for _ in 0..cfg.iterations {
            for seq in corpus {
                let words = &seq.ids[..seq.true_length];
                for (pos, &center) in words.iter().enumerate() {
                    if center == PAD_ID {
                        continue;
                    }
                    let lr = (cfg.learning_rate * (1.0 - step as f64 / steps)).max(cfg.learning_rate * 1e-4);
                    step += 1;
                    let reach = rng.gen_range(1..=cfg.window);
                    let lo = pos.saturating_sub(reach);
                    let hi = (pos + reach).min(words.len() - 1);
                    for ctx_pos in lo..=hi {
                        let context = words[ctx_pos];
                        if ctx_pos == pos || context == PAD_ID {
                            continue;
                        }
                        grad.iter_mut().for_each(|g| *g = 0.0);
                        for n in 0..=cfg.negatives {
                            let (target, label) = if n == 0 {
                                (context as usize, 1.0)
                            } else {
                                let u = rng.gen::<f64>() * acc;
                                let t = cdf.partition_point(|&c| c <= u).min(vocab_size - 1);
                                if t == context as usize {
                                    continue;
                                }
                                (t, 0.0)
                            };
                            let w_in = input.row(center as usize);
                            let w_out = &mut output[target * dim..(target + 1) * dim];
                            let dot: f64 = w_in.iter().zip(w_out.iter()).map(|(a, b)| a * b).sum();
                            let g = (label - sigmoid(dot)) * lr;
                            for d in 0..dim {
                                grad[d] += g * w_out[d];
                                w_out[d] += g * w_in[d];
                            }
                        }
                        let w_in = input.row_mut(center as usize);
                        for d in 0..dim {
                            w_in[d] += grad[d];
                        }
                    }
                }
            }
        }
        input.row_mut(PAD_ID as usize).iter_mut().for_each(|v| *v = 0.0);
        Ok(input)
    }
}

/// Validates the configuration and trains word vectors for `vocab`.
pub fn pretrain_embeddings(
    corpus: &[TokenSequence],
    vocab: &Vocabulary,
    trainer: &dyn EmbeddingTrainer,
    config: &SkipGramConfig,
) -> Result<EmbeddingMatrix> {
    if config.dim == 0 || config.window == 0 || config.iterations == 0 {
        return Err(Error::Config(format!(
            "skip-gram dim/window/iterations must be positive, got {}/{}/{}",
            config.dim, config.window, config.iterations
        )));
    }
    if corpus.is_empty() || vocab.is_empty() {
        return Err(Error::Data("cannot pretrain embeddings on an empty corpus".into()));
    }
    let m = trainer.train(corpus, vocab.len())?;
    if m.rows != vocab.len() || m.cols != config.dim {
        return Err(Error::Shape(format!(
            "trainer returned {}×{}, expected {}×{}",
            m.rows,
            m.cols,
            vocab.len(),
            config.dim
        )));
    }
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("embedding pretraining produced non-finite values".into()));
    }
    Ok(m)
}
