//! Dense ReLU network with a softmax head, trained on weighted cross-entropy.

use rand::Rng;

/// Row-major `rows x inner` times `inner x cols` with optional transposes,
/// accumulated into `out` (`rows x cols`) scaled by `beta`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    rows: usize,
    inner: usize,
    cols: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    out: &mut [f64],
) {
    assert_eq!(a.len(), rows * inner);
    assert_eq!(b.len(), inner * cols);
    assert_eq!(out.len(), rows * cols);
    let (rsa, csa) = if a_transposed { (1, rows as isize) } else { (inner as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, inner as isize) } else { (cols as isize, 1) };
    // SAFETY: lengths asserted above match the shapes and strides.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            inner,
            cols,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            cols as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub(crate) inputs: usize,
    pub(crate) outputs: usize,
    /// `inputs x outputs`, row-major.
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
}

impl Dense {
    /// He-style uniform initialization scaled by fan-in; zero bias.
    fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut out: Vec<f64> = self.bias.iter().copied().cycle().take(rows * self.outputs).collect();
        gemm(rows, self.inputs, self.outputs, x, false, &self.weights, false, 1.0, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub(crate) layers: Vec<Dense>,
}

/// Parameter gradients laid out like [`Mlp::parameters`].
pub type Gradient = Vec<f64>;

fn softmax_rows(z: &mut [f64], k: usize) {
    for row in z.chunks_exact_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

pub(crate) const PROB_FLOOR: f64 = 1e-12;

impl Mlp {
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        let layers = sizes.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs
    }

    /// Softmax outputs for `rows` inputs stored row-major in `x`.
    pub fn predict(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h, rows);
            if l < last {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        softmax_rows(&mut h, self.output_dim());
        h
    }

    /// Sum over rows of `weight * -ln p[target]` and its gradient.
    pub fn loss_and_gradient(&self, x: &[f64], rows: usize, targets: &[usize], weights: &[f64]) -> (f64, Gradient) {
        let last = self.layers.len() - 1;
        let mut activations = vec![x.to_vec()];
        for (l, layer) in self.layers.iter().enumerate() {
            let mut h = layer.forward(activations.last().unwrap(), rows);
            if l < last {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            activations.push(h);
        }
        let k = self.output_dim();
        let mut delta = activations.pop().unwrap();
        softmax_rows(&mut delta, k);

        let mut loss = 0.0;
        for (r, row) in delta.chunks_exact_mut(k).enumerate() {
            let w = weights[r];
            loss += w * -row[targets[r]].max(PROB_FLOOR).ln();
            row[targets[r]] -= 1.0;
            row.iter_mut().for_each(|v| *v *= w);
        }

        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &activations[l];
            let mut gw = vec![0.0; layer.inputs * layer.outputs];
            gemm(layer.inputs, rows, layer.outputs, input, true, &delta, false, 0.0, &mut gw);
            let mut gb = vec![0.0; layer.outputs];
            for row in delta.chunks_exact(layer.outputs) {
                gb.iter_mut().zip(row).for_each(|(g, v)| *g += v);
            }
            grads.push((gw, gb));
            if l > 0 {
                let mut back = vec![0.0; rows * layer.inputs];
                gemm(rows, layer.outputs, layer.inputs, &delta, false, &layer.weights, true, 0.0, &mut back);
                for (b, &a) in back.iter_mut().zip(input.iter()) {
                    if a <= 0.0 {
                        *b = 0.0;
                    }
                }
                delta = back;
            }
        }
        grads.reverse();
        let gradient = grads.into_iter().flat_map(|(gw, gb)| gw.into_iter().chain(gb)).collect();
        (loss, gradient)
    }

    /// All weights and biases, layer by layer (weights then bias).
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_parameters());
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            layer.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
    }
}

/// Adaptive-moment optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub(crate) fn new(size: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; size],
            v: vec![0.0; size],
            step: 0,
        }
    }

    pub(crate) fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}
