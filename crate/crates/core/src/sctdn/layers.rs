//! Dense layers, shared per-row MLPs, and parameter visitation.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Read-only view of one named parameter tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Anything that owns learnable tensors in a fixed visiting order.
pub trait Parameters {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>);
    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>);
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map `y = x W + b` applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            w: Array2::zeros((input, output)),
            b: Array1::zeros(output),
        }
    }

    /// Uniform He-style initialisation; biases start at zero.
    pub fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / input.max(1) as f64).sqrt();
        let w = Array2::from_shape_fn((input, output), |_| rng.gen_range(-a..a));
        Dense {
            w,
            b: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub fn forward_vec(&self, x: &Array1<f64>) -> Array1<f64> {
        x.dot(&self.w) + &self.b
    }

    pub fn backward_vec(&self, x: &Array1<f64>, dy: &Array1<f64>, grad: &mut Dense) -> Array1<f64> {
        for (i, xi) in x.iter().enumerate() {
            if *xi != 0.0 {
                grad.w.row_mut(i).scaled_add(*xi, dy);
            }
        }
        grad.b += dy;
        self.w.dot(dy)
    }
}

impl Parameters for Dense {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        out.push(TensorRef {
            name: join(prefix, "w"),
            shape: self.w.shape().to_vec(),
            data: self.w.as_slice().expect("standard layout"),
        });
        out.push(TensorRef {
            name: join(prefix, "b"),
            shape: self.b.shape().to_vec(),
            data: self.b.as_slice().expect("standard layout"),
        });
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.w.as_slice_mut().expect("standard layout"));
        out.push(self.b.as_slice_mut().expect("standard layout"));
    }
}

/// Stack of dense layers with a ReLU after every layer, applied to each row
/// independently (the shared per-point MLP).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Inputs and post-activation outputs of every layer.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn init(input: usize, widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut d = input;
        for &w in widths {
            layers.push(Dense::init(d, w, rng));
            d = w;
        }
        Mlp { layers }
    }

    pub fn zeros(input: usize, widths: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut d = input;
        for &w in widths {
            layers.push(Dense::zeros(d, w));
            d = w;
        }
        Mlp { layers }
    }

    pub fn output_dim(&self, input: usize) -> usize {
        self.layers.last().map_or(input, |l| l.output_dim())
    }

    pub fn forward(&self, x: Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for layer in &self.layers {
            let y = relu(layer.forward(&h));
            inputs.push(h);
            outputs.push(y.clone());
            h = y;
        }
        (h, MlpCache { inputs, outputs })
    }

    pub fn backward(&self, cache: &MlpCache, dy: Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let mut d = dy;
        for (k, layer) in self.layers.iter().enumerate().rev() {
            relu_backward(&mut d, &cache.outputs[k]);
            d = layer.backward(&cache.inputs[k], &d, &mut grad.layers[k]);
        }
        d
    }
}

impl Parameters for Mlp {
    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.tensors(&join(prefix, &i.to_string()), out);
        }
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for l in &mut self.layers {
            l.tensors_mut(out);
        }
    }
}

pub fn relu(mut x: Array2<f64>) -> Array2<f64> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

/// Masks `d` where the ReLU output was not positive.
pub fn relu_backward(d: &mut Array2<f64>, out: &Array2<f64>) {
    ndarray::Zip::from(d).and(out).for_each(|g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Column-wise maximum over `rows`; ties go to the earliest row.
pub fn max_pool_rows(x: &Array2<f64>, rows: std::ops::Range<usize>) -> (Array1<f64>, Vec<usize>) {
    let cols = x.ncols();
    let mut best = Array1::from_elem(cols, f64::NEG_INFINITY);
    let mut arg = vec![rows.start; cols];
    for r in rows {
        let row = x.row(r);
        for c in 0..cols {
            if row[c] > best[c] {
                best[c] = row[c];
                arg[c] = r;
            }
        }
    }
    (best, arg)
}
