//! Trainable tensors and their on-disk format.
//!
//! Binary layout (little endian):
//!
//! ```text
//! magic  b"CNPT"   version u32 = 1   count u32
//! count × { name_len u32, name utf8, ndim u32, dims u64 × ndim, data f64 × prod(dims) }
//! ```

use std::fs;
use std::path::Path;

use rand::Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CNPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Weight and bias of one convolution; weight is `[out][kernel][in]`.
#[derive(Debug, Clone, Copy)]
pub struct ConvIds {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

/// A convolution whose kernel is calibrated by influence.
#[derive(Debug, Clone, Copy)]
pub struct TecConvIds {
    pub conv: ConvIds,
    /// `[out][influence_dim]`
    pub w_g: ParamId,
    /// `[out][subreddit_dim]`
    pub w_v: ParamId,
    pub q_g: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct GruIds {
    /// `[3H][in]`, gate order reset, update, candidate.
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b_x: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmIds {
    /// `[4H][in]`, gate order input, forget, cell, output.
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Where each named parameter lives in [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Layout {
    pub word_embedding: ParamId,
    pub subreddit_embedding: ParamId,
    pub static_branches: Vec<Vec<ConvIds>>,
    pub tec_branches: Vec<Vec<TecConvIds>>,
    pub tec_tail: Vec<TecConvIds>,
    pub gru_news: GruIds,
    pub gru_submission: GruIds,
    pub w_r: ParamId,
    pub q_r: ParamId,
    pub lstm: LstmIds,
    /// `[lstm_hidden + 1]`: final hidden then B.
    pub head_w: ParamId,
    pub head_b: ParamId,
}

/// Parameter initializer applied to a freshly allocated tensor.
#[derive(Debug, Clone, Copy)]
enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
}

struct Builder {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> ParamId {
        self.names.push(name);
        self.tensors.push(Tensor::zeros(shape));
        self.inits.push(init);
        ParamId(self.tensors.len() - 1)
    }

    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        self.add(
            name,
            &[rows, cols],
            Init::Xavier {
                fan_in: cols,
                fan_out: rows,
            },
        )
    }

    fn bias(&mut self, name: String, len: usize) -> ParamId {
        self.add(name, &[len], Init::Zeros)
    }

    fn conv(&mut self, prefix: &str, kernel: usize, cin: usize, cout: usize) -> ConvIds {
        let weight = self.add(
            format!("{prefix}.weight"),
            &[cout, kernel, cin],
            Init::Xavier {
                fan_in: cin * kernel,
                fan_out: cout * kernel,
            },
        );
        let bias = self.bias(format!("{prefix}.bias"), cout);
        ConvIds {
            weight,
            bias,
            kernel,
            in_channels: cin,
            out_channels: cout,
        }
    }

    fn tec_conv(&mut self, prefix: &str, kernel: usize, cin: usize, cout: usize, cfg: &ModelConfig) -> TecConvIds {
        let conv = self.conv(prefix, kernel, cin, cout);
        TecConvIds {
            conv,
            w_g: self.matrix(format!("{prefix}.w_g"), cout, cfg.influence_dim()),
            w_v: self.matrix(format!("{prefix}.w_v"), cout, cfg.subreddit_dim),
            q_g: self.bias(format!("{prefix}.q_g"), cout),
        }
    }

    fn gru(&mut self, prefix: &str, input: usize, hidden: usize) -> GruIds {
        GruIds {
            w_x: self.matrix(format!("{prefix}.w_x"), 3 * hidden, input),
            w_h: self.matrix(format!("{prefix}.w_h"), 3 * hidden, hidden),
            b_x: self.bias(format!("{prefix}.b_x"), 3 * hidden),
            b_h: self.bias(format!("{prefix}.b_h"), 3 * hidden),
            input,
            hidden,
        }
    }
}

/// All trainable tensors of the network, in a fixed order.
///
/// Gradients and optimizer moments reuse this type (see
/// [`ModelParams::zeros_like`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Allocates and initializes every tensor: Xavier-uniform weights,
    /// zero biases, and a zero PAD row in the word embedding.
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> (Self, Layout) {
        let (mut params, layout, inits) = Self::allocate(cfg);
        for (t, init) in params.tensors.iter_mut().zip(inits) {
            if let Init::Xavier { fan_in, fan_out } = init {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in t.data.iter_mut() {
                    *v = rng.gen_range(-limit..limit);
                }
            }
        }
        let emb = params.get_mut(layout.word_embedding);
        emb[..cfg.word_dim].iter_mut().for_each(|v| *v = 0.0);
        (params, layout)
    }

    /// Layout for `cfg` without allocating values worth keeping.
    pub fn layout(cfg: &ModelConfig) -> Layout {
        Self::allocate(cfg).1
    }

    fn allocate(cfg: &ModelConfig) -> (Self, Layout, Vec<Init>) {
        let mut b = Builder {
            names: Vec::new(),
            tensors: Vec::new(),
            inits: Vec::new(),
        };
        let word_embedding = b.matrix("word_embedding".into(), cfg.vocab_size, cfg.word_dim);
        let subreddit_embedding = b.matrix("subreddit_embedding".into(), cfg.subreddit_count, cfg.subreddit_dim);

        let mut static_branches = Vec::new();
        for (bi, &k) in cfg.branch_kernels.iter().enumerate() {
            let mut cin = cfg.word_dim;
            let mut stages = Vec::new();
            for (si, &f) in cfg.branch_filters.iter().enumerate() {
                stages.push(b.conv(&format!("static.b{bi}.s{si}"), k, cin, f));
                cin = f;
            }
            static_branches.push(stages);
        }

        let mut tec_branches = Vec::new();
        for (bi, &k) in cfg.branch_kernels.iter().enumerate() {
            let mut cin = cfg.word_dim;
            let mut stages = Vec::new();
            for (si, &f) in cfg.branch_filters.iter().enumerate() {
                stages.push(b.tec_conv(&format!("tec.b{bi}.s{si}"), k, cin, f, cfg));
                cin = f;
            }
            tec_branches.push(stages);
        }
        let mut tec_tail = Vec::new();
        let mut cin = cfg.feature_dim();
        for (ti, &f) in cfg.tec_tail_filters.iter().enumerate() {
            tec_tail.push(b.tec_conv(&format!("tec.tail{ti}"), 1, cin, f, cfg));
            cin = f;
        }

        let gru_news = b.gru("gru_news", cfg.feature_dim(), cfg.gru_hidden);
        let gru_submission = b.gru("gru_submission", cfg.feature_dim() + cfg.subreddit_dim, cfg.gru_hidden);

        let w_r = b.matrix("activity.w_r".into(), 1, 1);
        let q_r = b.bias("activity.q_r".into(), 1);

        let lstm = LstmIds {
            w_x: b.matrix("lstm.w_x".into(), 4 * cfg.lstm_hidden, 1),
            w_h: b.matrix("lstm.w_h".into(), 4 * cfg.lstm_hidden, cfg.lstm_hidden),
            b: b.bias("lstm.b".into(), 4 * cfg.lstm_hidden),
            input: 1,
            hidden: cfg.lstm_hidden,
        };
        let head_w = b.matrix("head.w".into(), 1, cfg.lstm_hidden + 1);
        let head_b = b.bias("head.b".into(), 1);

        let layout = Layout {
            word_embedding,
            subreddit_embedding,
            static_branches,
            tec_branches,
            tec_tail,
            gru_news,
            gru_submission,
            w_r,
            q_r,
            lstm,
            head_w,
            head_b,
        };
        (
            Self {
                names: b.names,
                tensors: b.tensors,
            },
            layout,
            b.inits,
        )
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(&t.shape)).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id.0].data
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v = value);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.names
            .iter()
            .zip(&self.tensors)
            .find(|(_, t)| t.data.iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n.as_str())
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.scalar_count() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in self.names.iter().zip(&self.tensors) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Data("parameter file has a bad magic number".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Data(format!("unsupported parameter file version {version}")));
        }
        let count = r.u32()? as usize;
        let mut names = Vec::with_capacity(count);
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Data("parameter name is not utf-8".into()))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
            }
            names.push(name);
            tensors.push(Tensor { shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Data("trailing bytes after parameter tensors".into()));
        }
        Ok(Self { names, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Checks that a loaded parameter set matches the layout of `cfg`.
    pub fn check_compatible(&self, cfg: &ModelConfig) -> Result<()> {
        let (expected, _, _) = Self::allocate(cfg);
        if expected.names != self.names {
            return Err(Error::Shape("parameter names do not match the configuration".into()));
        }
        for (name, (a, b)) in self.names.iter().zip(expected.tensors.iter().zip(&self.tensors)) {
            if a.shape != b.shape {
                return Err(Error::Shape(format!(
                    "{name}: expected shape {:?}, found {:?}",
                    a.shape, b.shape
                )));
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Data("truncated parameter file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            ..Default::default()
        }
    }

    #[test]
    fn init_zeroes_biases_and_pad_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (p, layout) = ModelParams::init(&cfg(), &mut rng);
        for (name, t) in p.names().iter().zip(p.tensors()) {
            if name.ends_with("bias") || name.ends_with(".q_g") || name.ends_with(".b_x") || name.ends_with(".b_h") {
                assert!(t.data.iter().all(|&v| v == 0.0), "{name}");
            }
        }
        assert!(p.get(layout.word_embedding)[..100].iter().all(|&v| v == 0.0));
        assert!(p.get(layout.word_embedding)[100..].iter().any(|&v| v != 0.0));
        assert_eq!(p.tensors()[layout.subreddit_embedding.0].shape, vec![43, 32]);
        assert_eq!(p.tensors()[layout.gru_submission.w_x.0].shape, vec![384, 128]);
        assert_eq!(p.tensors()[layout.tec_tail[0].w_g.0].shape, vec![64, 256]);
    }

    #[test]
    fn xavier_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, layout) = ModelParams::init(&cfg(), &mut rng);
        let w = p.get(layout.gru_news.w_h);
        let limit = (6.0f64 / (384.0 + 128.0)).sqrt();
        assert!(w.iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn binary_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = ModelConfig {
            vocab_size: 7,
            word_dim: 4,
            subreddit_count: 3,
            subreddit_dim: 2,
            branch_filters: vec![3, 2],
            tec_tail_filters: vec![2, 1],
            gru_hidden: 3,
            lstm_hidden: 2,
            ..Default::default()
        };
        let (p, _) = ModelParams::init(&c, &mut rng);
        let q = ModelParams::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(p, q);
        q.check_compatible(&c).unwrap();
        assert!(q.check_compatible(&cfg()).is_err());
        assert!(ModelParams::from_bytes(&p.to_bytes()[..30]).is_err());
    }
}
