use crate::error::{Error, Result};
use crate::eval::stepwise_tau;

/// A binary classifier with a fit/predict contract.
pub trait Classifier {
    fn fit(&mut self, x: &[Vec<f64>], y: &[bool]) -> Result<()>;
    fn predict(&self, x: &[f64]) -> Result<bool>;
}

/// L2-regularized logistic regression on standardized inputs, fitted by
/// full-batch gradient descent.
#[derive(Debug, Clone)]
pub struct Logistic {
    pub l2: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    fitted: Option<LogisticFit>,
}

#[derive(Debug, Clone)]
struct LogisticFit {
    mean: Vec<f64>,
    scale: Vec<f64>,
    w: Vec<f64>,
    b: f64,
}

impl Default for Logistic {
    fn default() -> Self {
        Self {
            l2: 1e-2,
            learning_rate: 0.5,
            iterations: 300,
            fitted: None,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LogisticFit {
    fn score(&self, x: &[f64]) -> f64 {
        self.b
            + x.iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .zip(&self.w)
                .map(|(((v, m), s), w)| w * (v - m) / s)
                .sum::<f64>()
    }
}

impl Classifier for Logistic {
    fn fit(&mut self, x: &[Vec<f64>], y: &[bool]) -> Result<()> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Shape(format!("{} rows for {} labels", x.len(), y.len())));
        }
        let d = x[0].len();
        if x.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("ragged feature matrix".into()));
        }
        let n = x.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|r| (0..d).map(|j| (r[j] - mean[j]) / scale[j]).collect())
            .collect();
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        for _ in 0..self.iterations {
            let mut gw: Vec<f64> = w.iter().map(|v| self.l2 * v).collect();
            let mut gb = 0.0;
            for (r, &label) in z.iter().zip(y) {
                let p = sigmoid(b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>());
                let e = (p - if label { 1.0 } else { 0.0 }) / n;
                gb += e;
                for (g, v) in gw.iter_mut().zip(r) {
                    *g += e * v;
                }
            }
            b -= self.learning_rate * gb;
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= self.learning_rate * g;
            }
        }
        if !b.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("logistic fit diverged".into()));
        }
        self.fitted = Some(LogisticFit { mean, scale, w, b });
        Ok(())
    }

    fn predict(&self, x: &[f64]) -> Result<bool> {
        let f = self
            .fitted
            .as_ref()
            .ok_or_else(|| Error::Config("classifier used before fitting".into()))?;
        if x.len() != f.w.len() {
            return Err(Error::Shape(format!("expected {} features, got {}", f.w.len(), x.len())));
        }
        Ok(f.score(x) > 0.0)
    }
}

/// One binary classifier per threshold `l·k`, `l = 1..=max_step`, asking
/// whether a discussion reaches that size.
pub struct StepClassifier<C> {
    pub k: u64,
    pub steps: Vec<C>,
}

impl<C: Classifier> StepClassifier<C> {
    /// Fits `max_step` classifiers built by `make`. Thresholds where every
    /// training label agrees are fitted anyway; the classifier decides how
    /// to handle a single class.
    pub fn fit(x: &[Vec<f64>], sizes: &[u64], k: u64, max_step: u64, mut make: impl FnMut() -> C) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("step size must be positive".into()));
        }
        let mut steps = Vec::new();
        for l in 1..=max_step {
            let labels: Vec<bool> = sizes.iter().map(|&s| s >= l * k).collect();
            let mut c = make();
            c.fit(x, &labels)?;
            steps.push(c);
        }
        Ok(Self { k, steps })
    }

    /// Number of consecutive thresholds the discussion is predicted to pass.
    pub fn predict_step(&self, x: &[f64]) -> Result<u64> {
        let mut step = 0;
        for c in &self.steps {
            if !c.predict(x)? {
                break;
            }
            step += 1;
        }
        Ok(step)
    }

    /// Step-wise τ between true sizes and predicted steps.
    pub fn stepwise_tau(&self, x: &[Vec<f64>], sizes: &[u64]) -> Result<f64> {
        let predicted = x
            .iter()
            .map(|r| Ok(self.predict_step(r)? * self.k))
            .collect::<Result<Vec<u64>>>()?;
        stepwise_tau(sizes, &predicted, self.k)
    }
}
