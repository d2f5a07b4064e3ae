//! Stacked LSTM with full backpropagation through time.
//!
//! Gate order inside the `4h` blocks is input, forget, cell, output.

use ndarray::{s, Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::layers::{sigmoid, Dense, Parameters, TensorRef};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `in × 4h`
    pub w_x: Array2<f64>,
    /// `h × 4h`
    pub w_h: Array2<f64>,
    pub b: Array1<f64>,
}

impl LstmCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCell {
            w_x: Array2::zeros((input, 4 * hidden)),
            w_h: Array2::zeros((hidden, 4 * hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    /// Uniform initialisation with the forget-gate bias set to one.
    pub fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = Dense::init(input + hidden, 4 * hidden, rng).w;
        // shrink the He range to a Glorot-like 1/sqrt(fan_in)
        let scale = 1.0 / 6f64.sqrt();
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        LstmCell {
            w_x: a.slice(s![..input, ..]).to_owned() * scale,
            w_h: a.slice(s![input.., ..]).to_owned() * scale,
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.nrows()
    }
}

impl Parameters for LstmCell {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        out.push(TensorRef {
            name: format!("{prefix}.w_x"),
            shape: self.w_x.shape().to_vec(),
            data: self.w_x.as_slice().expect("standard layout"),
        });
        out.push(TensorRef {
            name: format!("{prefix}.w_h"),
            shape: self.w_h.shape().to_vec(),
            data: self.w_h.as_slice().expect("standard layout"),
        });
        out.push(TensorRef {
            name: format!("{prefix}.b"),
            shape: self.b.shape().to_vec(),
            data: self.b.as_slice().expect("standard layout"),
        });
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.w_x.as_slice_mut().expect("standard layout"));
        out.push(self.w_h.as_slice_mut().expect("standard layout"));
        out.push(self.b.as_slice_mut().expect("standard layout"));
    }
}

/// Activations of one layer over the whole sequence.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    x: Array2<f64>,
    /// Row `t + 1` holds `h_t`; row 0 is the zero initial state.
    h: Array2<f64>,
    c: Array2<f64>,
    /// Post-nonlinearity gates `T × 4h`.
    gates: Array2<f64>,
}

/// Runs the stack from a zero state; returns the top layer's hidden states.
pub fn forward(cells: &[LstmCell], x: &Array2<f64>) -> (Array2<f64>, Vec<LayerTrace>) {
    let mut traces = Vec::with_capacity(cells.len());
    let mut input = x.clone();
    for cell in cells {
        let t_len = input.nrows();
        let hd = cell.hidden();
        let pre_x = input.dot(&cell.w_x) + &cell.b;
        let mut h = Array2::zeros((t_len + 1, hd));
        let mut c: Array2<f64> = Array2::zeros((t_len + 1, hd));
        let mut gates = Array2::zeros((t_len, 4 * hd));
        for t in 0..t_len {
            let z = &pre_x.row(t) + &h.row(t).dot(&cell.w_h);
            for j in 0..hd {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[hd + j]);
                let g = z[2 * hd + j].tanh();
                let o = sigmoid(z[3 * hd + j]);
                let ct = f * c[[t, j]] + i * g;
                c[[t + 1, j]] = ct;
                h[[t + 1, j]] = o * ct.tanh();
                gates[[t, j]] = i;
                gates[[t, hd + j]] = f;
                gates[[t, 2 * hd + j]] = g;
                gates[[t, 3 * hd + j]] = o;
            }
        }
        let out = h.slice(s![1.., ..]).to_owned();
        traces.push(LayerTrace { x: input, h, c, gates });
        input = out;
    }
    (input, traces)
}

/// Backpropagation through time. `d_top` is `dL/dh` of the top layer for
/// every step; returns `dL/dx` of the bottom layer's input.
pub fn backward(cells: &[LstmCell], traces: &[LayerTrace], d_top: &Array2<f64>, grads: &mut [LstmCell]) -> Array2<f64> {
    let mut d_out = d_top.clone();
    for (l, cell) in cells.iter().enumerate().rev() {
        let tr = &traces[l];
        let hd = cell.hidden();
        let t_len = tr.x.nrows();
        let mut dz_all = Array2::zeros((t_len, 4 * hd));
        let mut dh_next: Array1<f64> = Array1::zeros(hd);
        let mut dc_next: Array1<f64> = Array1::zeros(hd);
        for t in (0..t_len).rev() {
            let mut dz = Array1::zeros(4 * hd);
            for j in 0..hd {
                let (i, f, g, o) = (
                    tr.gates[[t, j]],
                    tr.gates[[t, hd + j]],
                    tr.gates[[t, 2 * hd + j]],
                    tr.gates[[t, 3 * hd + j]],
                );
                let ct = tr.c[[t + 1, j]];
                let tc = ct.tanh();
                let dh = d_out[[t, j]] + dh_next[j];
                let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
                dz[j] = dc * g * i * (1.0 - i);
                dz[hd + j] = dc * tr.c[[t, j]] * f * (1.0 - f);
                dz[2 * hd + j] = dc * i * (1.0 - g * g);
                dz[3 * hd + j] = dh * tc * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            dh_next = cell.w_h.dot(&dz);
            dz_all.row_mut(t).assign(&dz);
        }
        let g = &mut grads[l];
        g.w_x += &tr.x.t().dot(&dz_all);
        g.w_h += &tr.h.slice(s![..t_len, ..]).t().dot(&dz_all);
        g.b += &dz_all.sum_axis(ndarray::Axis(0));
        d_out = dz_all.dot(&cell.w_x.t());
    }
    d_out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn hand_unrolled_two_steps() {
        // hidden 2, input 1, single layer
        let cell = LstmCell {
            w_x: arr2(&[[0.5, -0.3, 0.2, 0.1, 0.4, -0.2, 0.3, 0.6]]),
            w_h: arr2(&[
                [0.1, 0.2, -0.1, 0.3, 0.0, 0.2, -0.4, 0.1],
                [-0.2, 0.1, 0.3, -0.1, 0.2, 0.0, 0.1, -0.3],
            ]),
            b: ndarray::arr1(&[0.0, 0.1, 1.0, 0.9, -0.1, 0.2, 0.0, 0.1]),
        };
        let x = arr2(&[[1.0], [-2.0]]);
        let (out, _) = forward(&[cell.clone()], &x);
        let (mut h, mut c) = ([0.0f64; 2], [0.0f64; 2]);
        for t in 0..2 {
            let mut z = [0.0; 8];
            for k in 0..8 {
                z[k] = cell.w_x[[0, k]] * x[[t, 0]] + cell.w_h[[0, k]] * h[0] + cell.w_h[[1, k]] * h[1] + cell.b[k];
            }
            let mut hn = [0.0; 2];
            for j in 0..2 {
                let (i, f, g, o) = (sig(z[j]), sig(z[2 + j]), z[4 + j].tanh(), sig(z[6 + j]));
                c[j] = f * c[j] + i * g;
                hn[j] = o * c[j].tanh();
            }
            h = hn;
            for j in 0..2 {
                assert!((out[[t, j]] - h[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut r = crate::rng::stream(5, "lstm-test", 0);
        let mut cells = vec![LstmCell::init(3, 4, &mut r), LstmCell::init(4, 4, &mut r)];
        for c in &mut cells {
            c.b.mapv_inplace(|v| v + 0.05);
        }
        let x = Array2::from_shape_fn((5, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        let weights = Array2::from_shape_fn((5, 4), |(i, j)| ((i + 2 * j) as f64 * 0.5).cos());
        let loss = |cs: &[LstmCell], x: &Array2<f64>| (forward(cs, x).0 * &weights).sum();
        let (_, traces) = forward(&cells, &x);
        let mut grads = vec![LstmCell::zeros(3, 4), LstmCell::zeros(4, 4)];
        let dx = backward(&cells, &traces, &weights, &mut grads);
        let eps = 1e-6;
        for l in 0..2 {
            for k in 0..cells[l].w_h.len() {
                let mut p = cells.clone();
                p[l].w_h.as_slice_mut().unwrap()[k] += eps;
                let mut m = cells.clone();
                m[l].w_h.as_slice_mut().unwrap()[k] -= eps;
                let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * eps);
                assert!((fd - grads[l].w_h.as_slice().unwrap()[k]).abs() < 1e-8);
            }
        }
        for k in 0..x.len() {
            let mut p = x.clone();
            p.as_slice_mut().unwrap()[k] += eps;
            let mut m = x.clone();
            m.as_slice_mut().unwrap()[k] -= eps;
            let fd = (loss(&cells, &p) - loss(&cells, &m)) / (2.0 * eps);
            assert!((fd - dx.as_slice().unwrap()[k]).abs() < 1e-8);
        }
    }
}
