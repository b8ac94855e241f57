//! Reference forms of the GRU cell and the attention model, written with
//! conventional `out x in` matrices. The network in `network.rs` keeps its
//! weights in a flat layout; these are used to inspect and cross-check it.

use crate::math::{sigmoid, softmax, DenseMatrix};
use crate::{Error, Result};

/// Rows are hidden units; `w_*` are `hidden x input`, `u_*` `hidden x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayerParams {
    pub w_r: Vec<Vec<f64>>,
    pub w_z: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub u_r: Vec<Vec<f64>>,
    pub u_z: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub b_r: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b: Vec<f64>,
}

impl GruLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let m = |cols| vec![vec![0.0; cols]; hidden];
        Self {
            w_r: m(input),
            w_z: m(input),
            w: m(input),
            u_r: m(hidden),
            u_z: m(hidden),
            u: m(hidden),
            b_r: vec![0.0; hidden],
            b_z: vec![0.0; hidden],
            b: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.b.len()
    }

    pub fn input(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    fn check(&self, input: usize) -> Result<()> {
        let h = self.hidden();
        let ok_in = |m: &Vec<Vec<f64>>| m.len() == h && m.iter().all(|r| r.len() == input);
        let ok_h = |m: &Vec<Vec<f64>>| m.len() == h && m.iter().all(|r| r.len() == h);
        if !(ok_in(&self.w_r) && ok_in(&self.w_z) && ok_in(&self.w))
            || !(ok_h(&self.u_r) && ok_h(&self.u_z) && ok_h(&self.u))
            || self.b_r.len() != h
            || self.b_z.len() != h
        {
            return Err(Error::Dimension {
                context: "gru layer parameters".into(),
                expected: input,
                got: self.input(),
            });
        }
        Ok(())
    }
}

fn affine(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// One step: `r = s(W_r x + U_r h)`, `z = s(W_z x + U_z h)`,
/// `n = tanh(W x + U (r * h))`, `h' = z * h + (1 - z) * n`.
pub fn gru_cell_forward(x: &[f64], h_prev: &[f64], p: &GruLayerParams) -> Result<Vec<f64>> {
    p.check(x.len())?;
    if h_prev.len() != p.hidden() {
        return Err(Error::dimension("gru hidden state", p.hidden(), h_prev.len()));
    }
    let (wr, ur) = (affine(&p.w_r, x), affine(&p.u_r, h_prev));
    let (wz, uz) = (affine(&p.w_z, x), affine(&p.u_z, h_prev));
    let r: Vec<f64> = (0..p.hidden()).map(|j| sigmoid(wr[j] + ur[j] + p.b_r[j])).collect();
    let z: Vec<f64> = (0..p.hidden()).map(|j| sigmoid(wz[j] + uz[j] + p.b_z[j])).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let (wn, un) = (affine(&p.w, x), affine(&p.u, &rh));
    Ok((0..p.hidden())
        .map(|j| {
            let n = (wn[j] + un[j] + p.b[j]).tanh();
            z[j] * h_prev[j] + (1.0 - z[j]) * n
        })
        .collect())
}

/// `v` has the attention dimension; `w_m` is `attn x hidden`, `u_m` `attn x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub v: Vec<f64>,
    pub w_m: Vec<Vec<f64>>,
    pub u_m: Vec<Vec<f64>>,
}

/// Scores `m_j = v . tanh(W_m h + U_m V_j)` over the rows of `inputs`,
/// softmax weights `s` and the weighted average `z = sum s_j V_j`.
pub fn attention_forward(h_prev: &[f64], inputs: &DenseMatrix, p: &AttentionParams) -> Result<(Vec<f64>, Vec<f64>)> {
    if inputs.rows() == 0 {
        return Err(Error::Precondition("attention over an empty window".into()));
    }
    let a = p.v.len();
    if p.w_m.len() != a || p.u_m.len() != a {
        return Err(Error::dimension("attention rows", a, p.w_m.len().min(p.u_m.len())));
    }
    if p.w_m.iter().any(|r| r.len() != h_prev.len()) {
        return Err(Error::dimension("attention W_m columns", h_prev.len(), p.w_m[0].len()));
    }
    if p.u_m.iter().any(|r| r.len() != inputs.cols()) {
        return Err(Error::dimension("attention U_m columns", inputs.cols(), p.u_m[0].len()));
    }
    let e = affine(&p.w_m, h_prev);
    let scores: Vec<f64> = inputs
        .iter_rows()
        .map(|vj| {
            let u = affine(&p.u_m, vj);
            (0..a).map(|k| p.v[k] * (e[k] + u[k]).tanh()).sum()
        })
        .collect();
    let s = softmax(&scores);
    let mut z = vec![0.0; inputs.cols()];
    for (sj, vj) in s.iter().zip(inputs.iter_rows()) {
        for (zi, x) in z.iter_mut().zip(vj) {
            *zi += sj * x;
        }
    }
    Ok((z, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_state() {
        let p = GruLayerParams::zeros(3, 2);
        assert_eq!(
            gru_cell_forward(&[1.0, -2.0, 3.0], &[0.0, 0.0], &p).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn scalar_example() {
        let mut p = GruLayerParams::zeros(1, 1);
        p.w[0][0] = 1.0;
        let h = gru_cell_forward(&[0.5], &[0.0], &p).unwrap();
        let n = 0.5f64.tanh();
        assert!((h[0] - 0.5 * n).abs() < 1e-15);
        assert!((h[0] - 0.231059).abs() < 1e-6);
    }

    #[test]
    fn saturated_update_gate_carries_state() {
        let mut p = GruLayerParams::zeros(1, 1);
        p.w_z[0][0] = 100.0;
        p.w[0][0] = 1.0;
        let h = gru_cell_forward(&[1.0], &[0.3], &p).unwrap();
        assert!((h[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn attention_examples() {
        let inputs = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![3.0, 4.0]], 2).unwrap();
        let p = AttentionParams {
            v: vec![0.0, 0.0],
            w_m: vec![vec![1.0], vec![2.0]],
            u_m: vec![vec![1.0, 1.0], vec![0.5, -1.0]],
        };
        let (z, s) = attention_forward(&[0.7], &inputs, &p).unwrap();
        assert_eq!(s, vec![0.5, 0.5]);
        assert_eq!(z, vec![2.0, 2.0]);

        // one attention unit with saturated tanh: m = (ln 3, 0)
        let inputs = DenseMatrix::from_rows(&[vec![1000.0], vec![0.0]], 1).unwrap();
        let p = AttentionParams {
            v: vec![3f64.ln()],
            w_m: vec![vec![0.0]],
            u_m: vec![vec![1.0]],
        };
        let (_, s) = attention_forward(&[0.0], &inputs, &p).unwrap();
        assert!((s[0] - 0.75).abs() < 1e-12 && (s[1] - 0.25).abs() < 1e-12);
        assert!(attention_forward(&[0.0], &DenseMatrix::zeros(0, 1), &p).is_err());
    }
}
