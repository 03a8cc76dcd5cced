//! Forward and backward kernels on flat `f64` buffers.
//!
//! Sequences are position-major: element `(t, c)` of a `len × channels`
//! map lives at `t * channels + c`.

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn leaky_relu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x
    }
}

pub fn leaky_relu_grad(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        alpha
    }
}

/// `y = W x + b` for `W` of shape `rows × x.len()`; `b` may be empty.
pub fn affine(w: &[f64], x: &[f64], b: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    debug_assert_eq!(w.len(), rows * cols);
    (0..rows)
        .map(|r| {
            let row = &w[r * cols..(r + 1) * cols];
            let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            dot + b.get(r).copied().unwrap_or(0.0)
        })
        .collect()
}

/// `dW += dy ⊗ x`.
pub fn outer_add(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (d, &xv) in dw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *d += g * xv;
        }
    }
}

/// `dx += Wᵀ dy`.
pub fn transpose_matvec_add(dx: &mut [f64], w: &[f64], dy: &[f64]) {
    let cols = dx.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (d, &wv) in dx.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *d += g * wv;
        }
    }
}

pub fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Geometry of a 1-D convolution with weight layout `[out][kernel][in]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub len: usize,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_len(&self) -> usize {
        (self.len + 2 * self.pad + 1).saturating_sub(self.kernel)
    }
}

pub fn conv1d_forward(x: &[f64], w: &[f64], b: &[f64], s: ConvShape) -> Vec<f64> {
    let lout = s.out_len();
    let mut y = vec![0.0; lout * s.cout];
    for t in 0..lout {
        let out = &mut y[t * s.cout..(t + 1) * s.cout];
        out.copy_from_slice(&b[..s.cout]);
        for j in 0..s.kernel {
            let src = t + j;
            if src < s.pad || src - s.pad >= s.len {
                continue;
            }
            let xrow = &x[(src - s.pad) * s.cin..(src - s.pad + 1) * s.cin];
            for (o, acc) in out.iter_mut().enumerate() {
                let wrow = &w[(o * s.kernel + j) * s.cin..(o * s.kernel + j + 1) * s.cin];
                *acc += wrow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    y
}

/// Accumulates weight and bias gradients and returns `dx`.
pub fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    s: ConvShape,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let lout = s.out_len();
    let mut dx = vec![0.0; s.len * s.cin];
    for t in 0..lout {
        let g = &dy[t * s.cout..(t + 1) * s.cout];
        for (o, &go) in g.iter().enumerate() {
            db[o] += go;
        }
        for j in 0..s.kernel {
            let src = t + j;
            if src < s.pad || src - s.pad >= s.len {
                continue;
            }
            let row = src - s.pad;
            let xrow = &x[row * s.cin..(row + 1) * s.cin];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let base = (o * s.kernel + j) * s.cin;
                for c in 0..s.cin {
                    dw[base + c] += go * xrow[c];
                    dx[row * s.cin + c] += go * w[base + c];
                }
            }
        }
    }
    dx
}

pub fn relu_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes gradient entries whose forward pre-activation was not positive.
pub fn relu_backward_inplace(dy: &mut [f64], pre: &[f64]) {
    for (g, &p) in dy.iter_mut().zip(pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Non-overlapping max-pool over positions (window = stride). A short final
/// window is kept. Returns the pooled map and the source position of each
/// output element.
pub fn maxpool_forward(x: &[f64], len: usize, channels: usize, window: usize) -> (Vec<f64>, Vec<usize>, usize) {
    let lout = len.div_ceil(window);
    let mut y = vec![f64::NEG_INFINITY; lout * channels];
    let mut arg = vec![0usize; lout * channels];
    for t in 0..len {
        let p = t / window;
        for c in 0..channels {
            let v = x[t * channels + c];
            if v > y[p * channels + c] {
                y[p * channels + c] = v;
                arg[p * channels + c] = t;
            }
        }
    }
    (y, arg, lout)
}

pub fn maxpool_backward(dy: &[f64], arg: &[usize], len: usize, channels: usize) -> Vec<f64> {
    let mut dx = vec![0.0; len * channels];
    for (i, &g) in dy.iter().enumerate() {
        let c = i % channels;
        dx[arg[i] * channels + c] += g;
    }
    dx
}

/// Maximum over all positions per channel.
pub fn global_max_forward(x: &[f64], len: usize, channels: usize) -> (Vec<f64>, Vec<usize>) {
    let (y, arg, _) = maxpool_forward(x, len, channels, len.max(1));
    (y, arg)
}

/// Gate activations of one GRU step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    /// Recurrent candidate term `W_hn h + b_hn` before the reset gate.
    pub hn: Vec<f64>,
    pub h: Vec<f64>,
}

/// Borrowed GRU weights: `w_x` `[3H][in]`, `w_h` `[3H][H]`.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights<'a> {
    pub w_x: &'a [f64],
    pub w_h: &'a [f64],
    pub b_x: &'a [f64],
    pub b_h: &'a [f64],
    pub hidden: usize,
}

/// `h' = (1 - z) ⊙ n + z ⊙ h` with
/// `r = σ(W_xr x + b_xr + W_hr h + b_hr)`, `z` likewise, and
/// `n = tanh(W_xn x + b_xn + r ⊙ (W_hn h + b_hn))`.
pub fn gru_step(p: GruWeights<'_>, x: &[f64], h_prev: &[f64]) -> GruStep {
    let hsz = p.hidden;
    let ax = affine(p.w_x, x, p.b_x, 3 * hsz);
    let ah = affine(p.w_h, h_prev, p.b_h, 3 * hsz);
    let mut r = vec![0.0; hsz];
    let mut z = vec![0.0; hsz];
    let mut n = vec![0.0; hsz];
    let mut h = vec![0.0; hsz];
    for i in 0..hsz {
        r[i] = sigmoid(ax[i] + ah[i]);
        z[i] = sigmoid(ax[hsz + i] + ah[hsz + i]);
        n[i] = (ax[2 * hsz + i] + r[i] * ah[2 * hsz + i]).tanh();
        h[i] = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
    }
    GruStep {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        r,
        z,
        n,
        hn: ah[2 * hsz..].to_vec(),
        h,
    }
}

/// Pre-activation gradients of one GRU step.
#[derive(Debug, Clone)]
pub struct GruStepGrad {
    pub d_ax: Vec<f64>,
    pub d_ah: Vec<f64>,
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
}

pub fn gru_step_backward(p: GruWeights<'_>, step: &GruStep, dh: &[f64]) -> GruStepGrad {
    let hsz = p.hidden;
    let mut d_ax = vec![0.0; 3 * hsz];
    let mut d_ah = vec![0.0; 3 * hsz];
    let mut dh_prev = vec![0.0; hsz];
    for i in 0..hsz {
        let (r, z, n) = (step.r[i], step.z[i], step.n[i]);
        let dn = dh[i] * (1.0 - z);
        let dz = dh[i] * (step.h_prev[i] - n);
        dh_prev[i] = dh[i] * z;
        let dn_pre = dn * (1.0 - n * n);
        d_ax[2 * hsz + i] = dn_pre;
        d_ah[2 * hsz + i] = dn_pre * r;
        let dr = dn_pre * step.hn[i];
        let dr_pre = dr * r * (1.0 - r);
        let dz_pre = dz * z * (1.0 - z);
        d_ax[i] = dr_pre;
        d_ah[i] = dr_pre;
        d_ax[hsz + i] = dz_pre;
        d_ah[hsz + i] = dz_pre;
    }
    let mut dx = vec![0.0; step.x.len()];
    transpose_matvec_add(&mut dx, p.w_x, &d_ax);
    transpose_matvec_add(&mut dh_prev, p.w_h, &d_ah);
    GruStepGrad {
        d_ax,
        d_ah,
        dx,
        dh_prev,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    pub w_x: &'a [f64],
    pub w_h: &'a [f64],
    pub b: &'a [f64],
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn lstm_step(p: LstmWeights<'_>, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
    let hsz = p.hidden;
    let mut a = affine(p.w_x, x, p.b, 4 * hsz);
    add_into(&mut a, &affine(p.w_h, h_prev, &[], 4 * hsz));
    let mut st = LstmStep {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i: vec![0.0; hsz],
        f: vec![0.0; hsz],
        g: vec![0.0; hsz],
        o: vec![0.0; hsz],
        c: vec![0.0; hsz],
        h: vec![0.0; hsz],
    };
    for k in 0..hsz {
        st.i[k] = sigmoid(a[k]);
        st.f[k] = sigmoid(a[hsz + k]);
        st.g[k] = a[2 * hsz + k].tanh();
        st.o[k] = sigmoid(a[3 * hsz + k]);
        st.c[k] = st.f[k] * c_prev[k] + st.i[k] * st.g[k];
        st.h[k] = st.o[k] * st.c[k].tanh();
    }
    st
}

#[derive(Debug, Clone)]
pub struct LstmStepGrad {
    pub da: Vec<f64>,
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

pub fn lstm_step_backward(p: LstmWeights<'_>, st: &LstmStep, dh: &[f64], dc: &[f64]) -> LstmStepGrad {
    let hsz = p.hidden;
    let mut da = vec![0.0; 4 * hsz];
    let mut dc_prev = vec![0.0; hsz];
    for k in 0..hsz {
        let tc = st.c[k].tanh();
        let d_o = dh[k] * tc;
        let dck = dc[k] + dh[k] * st.o[k] * (1.0 - tc * tc);
        let di = dck * st.g[k];
        let dg = dck * st.i[k];
        let df = dck * st.c_prev[k];
        dc_prev[k] = dck * st.f[k];
        da[k] = di * st.i[k] * (1.0 - st.i[k]);
        da[hsz + k] = df * st.f[k] * (1.0 - st.f[k]);
        da[2 * hsz + k] = dg * (1.0 - st.g[k] * st.g[k]);
        da[3 * hsz + k] = d_o * st.o[k] * (1.0 - st.o[k]);
    }
    let mut dx = vec![0.0; st.x.len()];
    transpose_matvec_add(&mut dx, p.w_x, &da);
    let mut dh_prev = vec![0.0; hsz];
    transpose_matvec_add(&mut dh_prev, p.w_h, &da);
    LstmStepGrad {
        da,
        dx,
        dh_prev,
        dc_prev,
    }
}
