//! Flat-parameter GRU network with forward pass and full backpropagation
//! through time.
//!
//! Per layer the parameters are stored as `Wx` (`in x 3H`, one row per input
//! unit with columns `[r | z | n]`), `Urz` (`H x 2H`), `Un` (`H x H`) and a
//! bias `b` (`3H`). Attention adds `Wm` (`H x A`), `Um` (`n x A`) and `v`
//! (`A`). Dense head layers are `in x out` plus bias; the softmax output
//! layer is `n_M x 2` plus bias. Row-per-input storage lets sparse inputs
//! touch only the rows of their nonzero entries.

use rand::Rng;

use super::cell::{AttentionParams, GruLayerParams};
use super::{Aggregation, GruConfig};
use crate::codec::{Decoder, Encoder};
use crate::math::{sigmoid, softmax, SparseRow};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct LayerAt {
    input: usize,
    wx: usize,
    urz: usize,
    un: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct AttentionAt {
    wm: usize,
    um: usize,
    v: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct DenseAt {
    input: usize,
    output: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    layers: Vec<LayerAt>,
    attention: Option<AttentionAt>,
    head: Vec<DenseAt>,
    out: DenseAt,
    total: usize,
}

impl Layout {
    fn new(input_dim: usize, c: &GruConfig) -> Self {
        let h = c.hidden;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let mut layers = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let input = if l == 0 { input_dim } else { h };
            layers.push(LayerAt {
                input,
                wx: take(input * 3 * h),
                urz: take(h * 2 * h),
                un: take(h * h),
                b: take(3 * h),
            });
        }
        let attention = (c.aggregation == Aggregation::Attention).then(|| {
            let a = c.attention_dim;
            AttentionAt {
                wm: take(h * a),
                um: take(input_dim * a),
                v: take(a),
            }
        });
        let mut head = Vec::new();
        let mut prev = h;
        for &w in c.head_hidden.iter().chain(std::iter::once(&c.n_m)) {
            head.push(DenseAt {
                input: prev,
                output: w,
                w: take(prev * w),
                b: take(w),
            });
            prev = w;
        }
        let out = DenseAt {
            input: c.n_m,
            output: 2,
            w: take(c.n_m * 2),
            b: take(2),
        };
        Self {
            layers,
            attention,
            head,
            out,
            total: at,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruNetwork {
    config: GruConfig,
    input_dim: usize,
    timesteps: usize,
    layout: Layout,
    params: Vec<f64>,
}

/// Result of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutput {
    /// `hidden[l][t]`: state of layer `l` after step `t`.
    pub hidden: Vec<Vec<Vec<f64>>>,
    /// Attention weights per step when attention is active.
    pub attention: Option<Vec<Vec<f64>>>,
    pub v_sq: Vec<f64>,
    pub probs: [f64; 2],
}

/// Activations kept for the backward pass.
struct Cache {
    t: usize,
    /// Per layer, `(T + 1) * H`; block 0 is the zero initial state.
    h: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
    /// Attention: `P_j = Um^T V_j` (`T * A`), `Q_j = Wx0^T V_j` (`T * 3H`),
    /// `e_t = Wm^T h_top(t-1)` (`T * A`), weights `s` (`T * T`).
    p: Vec<f64>,
    q: Vec<f64>,
    e: Vec<f64>,
    s: Vec<f64>,
    agg: Vec<f64>,
    head: Vec<Vec<f64>>,
    probs: [f64; 2],
}

impl GruNetwork {
    /// Random initialisation: recurrent and attention weights uniform in
    /// `[-1/sqrt(H), 1/sqrt(H)]`, dense layers in `[-1/sqrt(fan_in), ..]`,
    /// biases zero.
    pub fn new(input_dim: usize, timesteps: usize, config: GruConfig, seed_value: u64) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 || timesteps == 0 {
            return Err(Error::Config(
                "gru input dimension and timesteps must be positive".into(),
            ));
        }
        let layout = Layout::new(input_dim, &config);
        let mut params = vec![0.0; layout.total];
        let mut rng = seed::rng(seed_value);
        let mut fill = |range: std::ops::Range<usize>, bound: f64, params: &mut Vec<f64>| {
            for p in &mut params[range] {
                *p = rng.random_range(-bound..=bound);
            }
        };
        let hb = 1.0 / (config.hidden as f64).sqrt();
        for l in &layout.layers {
            fill(l.wx..l.b, hb, &mut params);
        }
        if let Some(a) = &layout.attention {
            fill(a.wm..a.v + config.attention_dim, hb, &mut params);
        }
        for d in layout.head.iter().chain(std::iter::once(&layout.out)) {
            fill(d.w..d.b, 1.0 / (d.input as f64).sqrt(), &mut params);
        }
        Ok(Self {
            config,
            input_dim,
            timesteps,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &GruConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn n_m(&self) -> usize {
        self.config.n_m
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn h(&self) -> usize {
        self.config.hidden
    }

    /// Layer `l` in the conventional matrix form.
    pub fn layer_params(&self, l: usize) -> GruLayerParams {
        let (h, at) = (self.h(), &self.layout.layers[l]);
        let p = &self.params;
        let wx = |gate: usize| -> Vec<Vec<f64>> {
            (0..h)
                .map(|j| (0..at.input).map(|i| p[at.wx + i * 3 * h + gate * h + j]).collect())
                .collect()
        };
        let urz = |gate: usize| -> Vec<Vec<f64>> {
            (0..h)
                .map(|j| (0..h).map(|k| p[at.urz + k * 2 * h + gate * h + j]).collect())
                .collect()
        };
        GruLayerParams {
            w_r: wx(0),
            w_z: wx(1),
            w: wx(2),
            u_r: urz(0),
            u_z: urz(1),
            u: (0..h).map(|j| (0..h).map(|k| p[at.un + k * h + j]).collect()).collect(),
            b_r: p[at.b..at.b + h].to_vec(),
            b_z: p[at.b + h..at.b + 2 * h].to_vec(),
            b: p[at.b + 2 * h..at.b + 3 * h].to_vec(),
        }
    }

    pub fn set_layer_params(&mut self, l: usize, lp: &GruLayerParams) -> Result<()> {
        let h = self.h();
        let at = self.layout.layers[l].clone();
        if lp.hidden() != h || lp.input() != at.input {
            return Err(Error::dimension("gru layer parameters", at.input, lp.input()));
        }
        let p = &mut self.params;
        for j in 0..h {
            for i in 0..at.input {
                p[at.wx + i * 3 * h + j] = lp.w_r[j][i];
                p[at.wx + i * 3 * h + h + j] = lp.w_z[j][i];
                p[at.wx + i * 3 * h + 2 * h + j] = lp.w[j][i];
            }
            for k in 0..h {
                p[at.urz + k * 2 * h + j] = lp.u_r[j][k];
                p[at.urz + k * 2 * h + h + j] = lp.u_z[j][k];
                p[at.un + k * h + j] = lp.u[j][k];
            }
            p[at.b + j] = lp.b_r[j];
            p[at.b + h + j] = lp.b_z[j];
            p[at.b + 2 * h + j] = lp.b[j];
        }
        Ok(())
    }

    pub fn attention_params(&self) -> Option<AttentionParams> {
        let at = self.layout.attention.as_ref()?;
        let (h, a, p) = (self.h(), self.config.attention_dim, &self.params);
        Some(AttentionParams {
            v: p[at.v..at.v + a].to_vec(),
            w_m: (0..a).map(|q| (0..h).map(|k| p[at.wm + k * a + q]).collect()).collect(),
            u_m: (0..a)
                .map(|q| (0..self.input_dim).map(|i| p[at.um + i * a + q]).collect())
                .collect(),
        })
    }

    fn check_rows(&self, rows: &[&SparseRow]) -> Result<()> {
        if rows.len() != self.timesteps {
            return Err(Error::dimension("gru timesteps", self.timesteps, rows.len()));
        }
        if let Some(d) = rows.iter().map(|r| r.min_dim()).max() {
            if d > self.input_dim {
                return Err(Error::dimension("gru input", self.input_dim, d));
            }
        }
        Ok(())
    }

    pub fn forward(&self, rows: &[&SparseRow]) -> Result<SequenceOutput> {
        self.check_rows(rows)?;
        let c = self.run(rows);
        let h = self.h();
        let hidden =
            c.h.iter()
                .map(|hl| (1..=c.t).map(|t| hl[t * h..(t + 1) * h].to_vec()).collect())
                .collect();
        let attention = self
            .layout
            .attention
            .as_ref()
            .map(|_| c.s.chunks(c.t).map(<[f64]>::to_vec).collect());
        Ok(SequenceOutput {
            hidden,
            attention,
            v_sq: c.head.last().cloned().unwrap_or_default(),
            probs: c.probs,
        })
    }

    /// `V_sq` for one sample.
    pub fn extract_sequential_features(&self, rows: &[&SparseRow]) -> Result<Vec<f64>> {
        self.check_rows(rows)?;
        Ok(self.run(rows).head.pop().unwrap_or_default())
    }

    /// Fraud probability from the softmax head.
    pub fn predict_proba(&self, rows: &[&SparseRow]) -> Result<f64> {
        self.check_rows(rows)?;
        Ok(self.run(rows).probs[1])
    }

    /// Cross-entropy of one sample.
    pub fn loss(&self, rows: &[&SparseRow], label: bool) -> Result<f64> {
        self.check_rows(rows)?;
        Ok(cross_entropy(&self.run(rows).probs, label))
    }

    /// Adds the gradient of the sample's cross-entropy to `grad` and returns
    /// the loss.
    pub fn accumulate_gradient(&self, rows: &[&SparseRow], label: bool, grad: &mut [f64]) -> Result<f64> {
        self.check_rows(rows)?;
        if grad.len() != self.params.len() {
            return Err(Error::dimension("gru gradient buffer", self.params.len(), grad.len()));
        }
        let c = self.run(rows);
        self.backward(rows, &c, label, grad);
        Ok(cross_entropy(&c.probs, label))
    }

    fn window(&self, t: usize, len: usize) -> std::ops::Range<usize> {
        if self.config.causal_attention {
            0..t + 1
        } else {
            0..len
        }
    }

    fn run(&self, rows: &[&SparseRow]) -> Cache {
        let (h, p, nl) = (self.h(), &self.params, self.layout.layers.len());
        let t_len = rows.len();
        let mut c = Cache {
            t: t_len,
            h: vec![vec![0.0; (t_len + 1) * h]; nl],
            r: vec![vec![0.0; t_len * h]; nl],
            z: vec![vec![0.0; t_len * h]; nl],
            n: vec![vec![0.0; t_len * h]; nl],
            p: Vec::new(),
            q: Vec::new(),
            e: Vec::new(),
            s: Vec::new(),
            agg: vec![0.0; h],
            head: Vec::new(),
            probs: [0.5, 0.5],
        };
        let attn = self.layout.attention.as_ref();
        let a_dim = self.config.attention_dim;
        if let Some(at) = attn {
            let l0 = &self.layout.layers[0];
            c.p = vec![0.0; t_len * a_dim];
            c.q = vec![0.0; t_len * 3 * h];
            c.e = vec![0.0; t_len * a_dim];
            c.s = vec![0.0; t_len * t_len];
            for (j, row) in rows.iter().enumerate() {
                for (i, v) in row.iter() {
                    axpy(
                        v,
                        &p[at.um + i * a_dim..at.um + (i + 1) * a_dim],
                        &mut c.p[j * a_dim..(j + 1) * a_dim],
                    );
                    axpy(
                        v,
                        &p[l0.wx + i * 3 * h..l0.wx + (i + 1) * 3 * h],
                        &mut c.q[j * 3 * h..(j + 1) * 3 * h],
                    );
                }
            }
        }

        let mut a = vec![0.0; 3 * h];
        let mut u = vec![0.0; a_dim];
        for t in 0..t_len {
            for l in 0..nl {
                let at = &self.layout.layers[l];
                a.copy_from_slice(&p[at.b..at.b + 3 * h]);
                if l > 0 {
                    let (below, _) = c.h.split_at(l);
                    let x = &below[l - 1][(t + 1) * h..(t + 2) * h];
                    for (k, &xk) in x.iter().enumerate() {
                        axpy(xk, &p[at.wx + k * 3 * h..at.wx + (k + 1) * 3 * h], &mut a);
                    }
                } else if let Some(am) = attn {
                    let top = &c.h[nl - 1][t * h..(t + 1) * h];
                    let e = &mut c.e[t * a_dim..(t + 1) * a_dim];
                    for (k, &hk) in top.iter().enumerate() {
                        axpy(hk, &p[am.wm + k * a_dim..am.wm + (k + 1) * a_dim], e);
                    }
                    let win = self.window(t, t_len);
                    let mut scores = Vec::with_capacity(win.len());
                    for j in win.clone() {
                        for q in 0..a_dim {
                            u[q] = (e[q] + c.p[j * a_dim + q]).tanh();
                        }
                        scores.push(dot(&p[am.v..am.v + a_dim], &u));
                    }
                    let s = softmax(&scores);
                    for (j, sj) in win.zip(s) {
                        c.s[t * t_len + j] = sj;
                        axpy(sj, &c.q[j * 3 * h..(j + 1) * 3 * h], &mut a);
                    }
                } else {
                    for (i, v) in rows[t].iter() {
                        axpy(v, &p[at.wx + i * 3 * h..at.wx + (i + 1) * 3 * h], &mut a);
                    }
                }
                let (prev_part, next_part) = c.h[l].split_at_mut((t + 1) * h);
                self.cell_step(
                    l,
                    &mut a,
                    &prev_part[t * h..],
                    &mut c.r[l][t * h..(t + 1) * h],
                    &mut c.z[l][t * h..(t + 1) * h],
                    &mut c.n[l][t * h..(t + 1) * h],
                    &mut next_part[..h],
                );
            }
        }

        let top = &c.h[nl - 1];
        match self.config.aggregation {
            Aggregation::LastNode => c.agg.copy_from_slice(&top[t_len * h..]),
            Aggregation::MeanPool | Aggregation::Attention => {
                for t in 1..=t_len {
                    axpy(1.0, &top[t * h..(t + 1) * h], &mut c.agg);
                }
                let inv = 1.0 / t_len as f64;
                c.agg.iter_mut().for_each(|g| *g *= inv);
            }
        }
        let (head, probs) = self.head_forward(&c.agg);
        c.head = head;
        c.probs = probs;
        c
    }

    /// Gates and new state of layer `l`; `a` holds bias plus input term.
    #[allow(clippy::too_many_arguments)]
    fn cell_step(
        &self,
        l: usize,
        a: &mut [f64],
        hprev: &[f64],
        r: &mut [f64],
        z: &mut [f64],
        n: &mut [f64],
        hnew: &mut [f64],
    ) {
        let (h, p, at) = (self.h(), &self.params, &self.layout.layers[l]);
        for (k, &hk) in hprev.iter().enumerate() {
            if hk != 0.0 {
                axpy(hk, &p[at.urz + k * 2 * h..at.urz + (k + 1) * 2 * h], &mut a[..2 * h]);
            }
        }
        for j in 0..h {
            r[j] = sigmoid(a[j]);
            z[j] = sigmoid(a[h + j]);
        }
        for k in 0..h {
            let rh = r[k] * hprev[k];
            if rh != 0.0 {
                axpy(rh, &p[at.un + k * h..at.un + (k + 1) * h], &mut a[2 * h..]);
            }
        }
        for j in 0..h {
            n[j] = a[2 * h + j].tanh();
            hnew[j] = z[j] * hprev[j] + (1.0 - z[j]) * n[j];
        }
    }

    fn head_forward(&self, agg: &[f64]) -> (Vec<Vec<f64>>, [f64; 2]) {
        let p = &self.params;
        let mut outs = Vec::with_capacity(self.layout.head.len());
        let mut x = agg.to_vec();
        for d in &self.layout.head {
            let mut y = dense(p, d, &x);
            y.iter_mut().for_each(|v| *v = v.tanh());
            outs.push(y.clone());
            x = y;
        }
        let logits = dense(p, &self.layout.out, &x);
        let probs = softmax(&logits);
        (outs, [probs[0], probs[1]])
    }

    /// `V_sq` and fraud probability for the windows ending at each 1-based
    /// `ordinal` of an account whose rows (oldest first) are `rows`. Equal,
    /// bit for bit, to `forward` on the padded windows.
    pub fn windowed_outputs(&self, rows: &[&SparseRow], ordinals: &[usize]) -> Result<Vec<(Vec<f64>, f64)>> {
        if let Some(d) = rows.iter().map(|r| r.min_dim()).max() {
            if d > self.input_dim {
                return Err(Error::dimension("gru input", self.input_dim, d));
            }
        }
        if let Some(&o) = ordinals.iter().find(|&&o| o == 0 || o > rows.len()) {
            return Err(Error::Precondition(format!(
                "window ordinal {o} outside 1..={}",
                rows.len()
            )));
        }
        let ts = self.timesteps;
        if self.layout.attention.is_some() {
            return ordinals
                .iter()
                .map(|&o| {
                    let len = o.min(ts);
                    let window = super::padded_rows(ts - len, rows[o - len..o].iter().copied());
                    let c = self.run(&window);
                    Ok((c.head.last().cloned().unwrap_or_default(), c.probs[1]))
                })
                .collect();
        }

        let (h, p, nl) = (self.h(), &self.params, self.layout.layers.len());
        let (first, last) = match (ordinals.iter().min(), ordinals.iter().max()) {
            (Some(&a), Some(&b)) => (a.saturating_sub(ts), b),
            _ => return Ok(Vec::new()),
        };
        // layer-0 input terms, computed once per row
        let l0 = &self.layout.layers[0];
        let mut proj: Vec<Vec<f64>> = vec![Vec::new(); rows.len()];
        for (j, row) in rows.iter().enumerate().take(last).skip(first) {
            let mut a = p[l0.b..l0.b + 3 * h].to_vec();
            for (i, v) in row.iter() {
                axpy(v, &p[l0.wx + i * 3 * h..l0.wx + (i + 1) * 3 * h], &mut a);
            }
            proj[j] = a;
        }
        // states after k leading zero rows, and the running sum of top states
        let max_pad = ts - ordinals.iter().min().map_or(ts, |&o| o.min(ts));
        let mut pad_states: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; h]; nl]];
        let mut pad_sums: Vec<Vec<f64>> = vec![vec![0.0; h]];
        let mut gates = vec![0.0; 3 * h];
        let mut a = vec![0.0; 3 * h];
        for _ in 0..max_pad {
            let prev = pad_states.last().expect("initial state").clone();
            let mut next = Vec::with_capacity(nl);
            for l in 0..nl {
                let at = &self.layout.layers[l];
                a.copy_from_slice(&p[at.b..at.b + 3 * h]);
                if l > 0 {
                    let x: &Vec<f64> = &next[l - 1];
                    for (k, &xk) in x.iter().enumerate() {
                        axpy(xk, &p[at.wx + k * 3 * h..at.wx + (k + 1) * 3 * h], &mut a);
                    }
                }
                let mut hn = vec![0.0; h];
                let (r, rest) = gates.split_at_mut(h);
                let (z, n) = rest.split_at_mut(h);
                self.cell_step(l, &mut a, &prev[l], r, z, n, &mut hn);
                next.push(hn);
            }
            let mut sum = pad_sums.last().expect("initial sum").clone();
            axpy(1.0, &next[nl - 1], &mut sum);
            pad_sums.push(sum);
            pad_states.push(next);
        }

        let inv = 1.0 / ts as f64;
        let mut out = Vec::with_capacity(ordinals.len());
        for &o in ordinals {
            let len = o.min(ts);
            let pad = ts - len;
            let mut state = pad_states[pad].clone();
            let mut sum = pad_sums[pad].clone();
            for pj in &proj[o - len..o] {
                for l in 0..nl {
                    let at = &self.layout.layers[l];
                    if l == 0 {
                        a.copy_from_slice(pj);
                    } else {
                        a.copy_from_slice(&p[at.b..at.b + 3 * h]);
                        for (k, &xk) in state[l - 1].iter().enumerate() {
                            axpy(xk, &p[at.wx + k * 3 * h..at.wx + (k + 1) * 3 * h], &mut a);
                        }
                    }
                    let mut hn = vec![0.0; h];
                    let (r, rest) = gates.split_at_mut(h);
                    let (z, n) = rest.split_at_mut(h);
                    self.cell_step(l, &mut a, &state[l], r, z, n, &mut hn);
                    state[l] = hn;
                }
                axpy(1.0, &state[nl - 1], &mut sum);
            }
            let agg = match self.config.aggregation {
                Aggregation::LastNode => state[nl - 1].clone(),
                _ => {
                    sum.iter_mut().for_each(|g| *g *= inv);
                    sum
                }
            };
            let (mut head, probs) = self.head_forward(&agg);
            out.push((head.pop().unwrap_or_default(), probs[1]));
        }
        Ok(out)
    }

    fn backward(&self, rows: &[&SparseRow], c: &Cache, label: bool, g: &mut [f64]) {
        let (h, p, nl, t_len) = (self.h(), &self.params, self.layout.layers.len(), c.t);
        let a_dim = self.config.attention_dim;

        let mut dlogits = [c.probs[0], c.probs[1]];
        dlogits[usize::from(label)] -= 1.0;
        let vsq = c.head.last().expect("head has an output layer");
        let mut dx = dense_backward(p, g, &self.layout.out, vsq, &dlogits);
        for (k, d) in self.layout.head.iter().enumerate().rev() {
            let out = &c.head[k];
            let dpre: Vec<f64> = dx.iter().zip(out).map(|(d, y)| d * (1.0 - y * y)).collect();
            let input = if k == 0 { &c.agg } else { &c.head[k - 1] };
            dx = dense_backward(p, g, d, input, &dpre);
        }

        let mut dh: Vec<Vec<f64>> = vec![vec![0.0; (t_len + 1) * h]; nl];
        match self.config.aggregation {
            Aggregation::LastNode => axpy(1.0, &dx, &mut dh[nl - 1][t_len * h..]),
            Aggregation::MeanPool | Aggregation::Attention => {
                let inv = 1.0 / t_len as f64;
                for t in 1..=t_len {
                    axpy(inv, &dx, &mut dh[nl - 1][t * h..(t + 1) * h]);
                }
            }
        }

        let attn = self.layout.attention.as_ref();
        let mut gq = vec![0.0; if attn.is_some() { t_len * 3 * h } else { 0 }];
        let mut gp = vec![0.0; if attn.is_some() { t_len * a_dim } else { 0 }];
        let mut da = vec![0.0; 3 * h];
        let mut dhp = vec![0.0; h];
        let mut u = vec![0.0; a_dim];
        let mut de = vec![0.0; a_dim];
        for t in (0..t_len).rev() {
            for l in (0..nl).rev() {
                let at = &self.layout.layers[l];
                let dhcur: Vec<f64> = dh[l][(t + 1) * h..(t + 2) * h].to_vec();
                let hprev = &c.h[l][t * h..(t + 1) * h];
                let r = &c.r[l][t * h..(t + 1) * h];
                let z = &c.z[l][t * h..(t + 1) * h];
                let n = &c.n[l][t * h..(t + 1) * h];
                for j in 0..h {
                    let dz = dhcur[j] * (hprev[j] - n[j]);
                    let dn = dhcur[j] * (1.0 - z[j]);
                    dhp[j] = dhcur[j] * z[j];
                    da[h + j] = dz * z[j] * (1.0 - z[j]);
                    da[2 * h + j] = dn * (1.0 - n[j] * n[j]);
                }
                // n = tanh(.. + Un^T (r * hprev))
                for k in 0..h {
                    let row = &p[at.un + k * h..at.un + (k + 1) * h];
                    let drh = dot(row, &da[2 * h..]);
                    let rh = r[k] * hprev[k];
                    if rh != 0.0 {
                        axpy(rh, &da[2 * h..], &mut g[at.un + k * h..at.un + (k + 1) * h]);
                    }
                    da[k] = drh * hprev[k] * r[k] * (1.0 - r[k]);
                    dhp[k] += drh * r[k];
                }
                axpy(1.0, &da, &mut g[at.b..at.b + 3 * h]);
                for k in 0..h {
                    let lo = at.urz + k * 2 * h;
                    if hprev[k] != 0.0 {
                        axpy(hprev[k], &da[..2 * h], &mut g[lo..lo + 2 * h]);
                    }
                    dhp[k] += dot(&p[lo..lo + 2 * h], &da[..2 * h]);
                }
                axpy(1.0, &dhp, &mut dh[l][t * h..(t + 1) * h]);

                if l > 0 {
                    let (below, _) = dh.split_at_mut(l);
                    let x = &c.h[l - 1][(t + 1) * h..(t + 2) * h];
                    let dxl = &mut below[l - 1][(t + 1) * h..(t + 2) * h];
                    for k in 0..h {
                        let lo = at.wx + k * 3 * h;
                        axpy(x[k], &da, &mut g[lo..lo + 3 * h]);
                        dxl[k] += dot(&p[lo..lo + 3 * h], &da);
                    }
                } else if let Some(am) = attn {
                    let s = &c.s[t * t_len..(t + 1) * t_len];
                    let win = self.window(t, t_len);
                    let ds: Vec<f64> = win
                        .clone()
                        .map(|j| dot(&c.q[j * 3 * h..(j + 1) * 3 * h], &da))
                        .collect();
                    let mean: f64 = win.clone().zip(&ds).map(|(j, d)| s[j] * d).sum();
                    let e = &c.e[t * a_dim..(t + 1) * a_dim];
                    de.iter_mut().for_each(|v| *v = 0.0);
                    for (j, dsj) in win.zip(&ds) {
                        axpy(s[j], &da, &mut gq[j * 3 * h..(j + 1) * 3 * h]);
                        let dm = s[j] * (dsj - mean);
                        for q in 0..a_dim {
                            u[q] = (e[q] + c.p[j * a_dim + q]).tanh();
                        }
                        axpy(dm, &u, &mut g[am.v..am.v + a_dim]);
                        for q in 0..a_dim {
                            let dpre = dm * p[am.v + q] * (1.0 - u[q] * u[q]);
                            de[q] += dpre;
                            gp[j * a_dim + q] += dpre;
                        }
                    }
                    if t > 0 {
                        let top_prev = &c.h[nl - 1][t * h..(t + 1) * h];
                        for k in 0..h {
                            let lo = am.wm + k * a_dim;
                            if top_prev[k] != 0.0 {
                                axpy(top_prev[k], &de, &mut g[lo..lo + a_dim]);
                            }
                            dh[nl - 1][t * h + k] += dot(&p[lo..lo + a_dim], &de);
                        }
                    }
                } else {
                    for (i, v) in rows[t].iter() {
                        axpy(v, &da, &mut g[at.wx + i * 3 * h..at.wx + (i + 1) * 3 * h]);
                    }
                }
            }
        }
        if let Some(am) = attn {
            let wx0 = self.layout.layers[0].wx;
            for (j, row) in rows.iter().enumerate() {
                for (i, v) in row.iter() {
                    axpy(
                        v,
                        &gq[j * 3 * h..(j + 1) * 3 * h],
                        &mut g[wx0 + i * 3 * h..wx0 + (i + 1) * 3 * h],
                    );
                    axpy(
                        v,
                        &gp[j * a_dim..(j + 1) * a_dim],
                        &mut g[am.um + i * a_dim..am.um + (i + 1) * a_dim],
                    );
                }
            }
        }
    }

    pub fn encode(&self, e: &mut Encoder) {
        let c = &self.config;
        e.usize(self.input_dim)
            .usize(self.timesteps)
            .usize(c.hidden)
            .usize(c.layers)
            .usize(c.n_m)
            .usize(c.attention_dim)
            .bool(c.causal_attention)
            .usize(match c.aggregation {
                Aggregation::LastNode => 0,
                Aggregation::MeanPool => 1,
                Aggregation::Attention => 2,
            })
            .usize(c.head_hidden.len());
        for &w in &c.head_hidden {
            e.usize(w);
        }
        e.slice(&self.params);
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self> {
        let input_dim = d.usize()?;
        let timesteps = d.usize()?;
        let hidden = d.usize()?;
        let layers = d.usize()?;
        let n_m = d.usize()?;
        let attention_dim = d.usize()?;
        let causal_attention = d.bool()?;
        let aggregation = match d.usize()? {
            0 => Aggregation::LastNode,
            1 => Aggregation::MeanPool,
            2 => Aggregation::Attention,
            k => return Err(d.error(format!("unknown aggregation code {k}"))),
        };
        let nh = d.usize()?;
        let head_hidden = (0..nh).map(|_| d.usize()).collect::<Result<Vec<_>>>()?;
        let config = GruConfig {
            hidden,
            layers,
            n_m,
            head_hidden,
            aggregation,
            attention_dim,
            causal_attention,
        };
        config.validate().map_err(|e| d.error(e.to_string()))?;
        let layout = Layout::new(input_dim, &config);
        let params = d.slice()?;
        if params.len() != layout.total {
            return Err(d.error(format!("expected {} parameters, found {}", layout.total, params.len())));
        }
        Ok(Self {
            config,
            input_dim,
            timesteps,
            layout,
            params,
        })
    }
}

fn cross_entropy(probs: &[f64; 2], label: bool) -> f64 {
    -probs[usize::from(label)].max(f64::MIN_POSITIVE).ln()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dense(p: &[f64], d: &DenseAt, x: &[f64]) -> Vec<f64> {
    let mut y = p[d.b..d.b + d.output].to_vec();
    for (i, &xi) in x.iter().enumerate() {
        axpy(xi, &p[d.w + i * d.output..d.w + (i + 1) * d.output], &mut y);
    }
    y
}

/// Accumulates weight and bias gradients of `y = W^T x + b` and returns `dx`.
fn dense_backward(p: &[f64], g: &mut [f64], d: &DenseAt, x: &[f64], dy: &[f64]) -> Vec<f64> {
    axpy(1.0, dy, &mut g[d.b..d.b + d.output]);
    let mut dx = vec![0.0; d.input];
    for (i, &xi) in x.iter().enumerate() {
        let lo = d.w + i * d.output;
        axpy(xi, dy, &mut g[lo..lo + d.output]);
        dx[i] = dot(&p[lo..lo + d.output], dy);
    }
    dx
}
