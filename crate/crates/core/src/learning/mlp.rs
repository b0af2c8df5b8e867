//! Fully connected networks with hand-written first and second order
//! backpropagation.
//!
//! Batches are column-major: one sample per column. Parameters live in one
//! flat vector, layer by layer, each layer's weight matrix (column-major,
//! `out × in`) followed by its bias; gradients use the same layout.

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn f(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    fn d1(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    fn d2(self, x: f64) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    pub params: Vec<f64>,
}

/// Intermediate values of a forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    /// `h[0]` is the input, `h[l]` the activation of layer `l`.
    h: Vec<DMatrix<f64>>,
    /// `z[l - 1]` is the pre-activation of layer `l`.
    z: Vec<DMatrix<f64>>,
}

impl Cache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.z.last().expect("at least one layer")
    }
}

fn map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    m.map(f)
}

impl Mlp {
    /// Glorot-uniform weights, zero biases; the output layer is scaled by
    /// `out_scale`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, out_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut params = Vec::new();
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let lim = (6.0 / (n_in + n_out) as f64).sqrt();
            let u = Uniform::new_inclusive(-lim, lim).expect("finite bounds");
            let scale = if l + 1 == layers { out_scale } else { 1.0 };
            params.extend((0..n_in * n_out).map(|_| scale * u.sample(rng)));
            params.extend(std::iter::repeat_n(0.0, n_out));
        }
        Mlp {
            sizes: sizes.to_vec(),
            activation,
            params,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("nonempty sizes")
    }

    fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn offset(&self, l: usize) -> usize {
        (0..l).map(|k| self.sizes[k] * self.sizes[k + 1] + self.sizes[k + 1]).sum()
    }

    fn weights(&self, l: usize) -> (DMatrixView<'_, f64>, DVectorView<'_, f64>) {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let o = self.offset(l);
        let w = DMatrixView::from_slice(&self.params[o..o + n_in * n_out], n_out, n_in);
        let b = DVectorView::from_slice(&self.params[o + n_in * n_out..o + n_in * n_out + n_out], n_out);
        (w, b)
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.input_dim() {
            return Err(Error::Contract(format!(
                "network input width {} != {}",
                x.nrows(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> Result<Cache> {
        self.check_input(x)?;
        let layers = self.num_layers();
        let mut h = vec![x.clone()];
        let mut z = Vec::with_capacity(layers);
        for l in 0..layers {
            let (w, b) = self.weights(l);
            let mut zl = w * &h[l];
            for mut col in zl.column_iter_mut() {
                col += &b;
            }
            if l + 1 < layers {
                h.push(map(&zl, |v| self.activation.f(v)));
            }
            z.push(zl);
        }
        Ok(Cache { h, z })
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_cached(x)?.z.pop().expect("at least one layer"))
    }

    /// Single-sample convenience.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = DMatrix::from_column_slice(x.len(), 1, x);
        Ok(self.forward(&m)?.as_slice().to_vec())
    }

    /// Reverse pass: given `∂L/∂y`, returns `∂L/∂θ` and `∂L/∂x`.
    pub fn backward(&self, cache: &Cache, dy: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
        let layers = self.num_layers();
        let mut grad = vec![0.0; self.num_params()];
        let mut delta = dy.clone();
        for l in (0..layers).rev() {
            let (w, _) = self.weights(l);
            let gw = &delta * cache.h[l].transpose();
            let gb: DVector<f64> = delta.column_sum();
            let o = self.offset(l);
            let nw = gw.len();
            grad[o..o + nw].copy_from_slice(gw.as_slice());
            grad[o + nw..o + nw + gb.len()].copy_from_slice(gb.as_slice());
            let up = w.transpose() * &delta;
            if l > 0 {
                delta = up.zip_map(&cache.z[l - 1], |u, zv| u * self.activation.d1(zv));
            } else {
                delta = up;
            }
        }
        (grad, delta)
    }

    /// Input gradients `∇ₓ y` of a scalar-output network, one column per
    /// sample, plus the parameter gradient of `scale · Σ_b ‖∇ₓ y_b‖²`.
    pub fn input_gradient_penalty(&self, cache: &Cache, scale: f64) -> (DMatrix<f64>, Vec<f64>) {
        assert_eq!(self.output_dim(), 1, "penalty needs a scalar output");
        let layers = self.num_layers();
        let batch = cache.h[0].ncols();
        let act = self.activation;
        // Gradient path: deltas[l] = ∂y/∂z_{l+1}, us[l] = ∂y/∂h_l.
        let mut deltas = vec![DMatrix::zeros(0, 0); layers];
        let mut us = vec![DMatrix::zeros(0, 0); layers];
        deltas[layers - 1] = DMatrix::from_element(1, batch, 1.0);
        for l in (0..layers).rev() {
            let (w, _) = self.weights(l);
            us[l] = w.transpose() * &deltas[l];
            if l > 0 {
                deltas[l - 1] = us[l].zip_map(&cache.z[l - 1], |u, zv| u * act.d1(zv));
            }
        }
        let g = us[0].clone();

        let mut grad = vec![0.0; self.num_params()];
        // Reverse of the gradient path.
        let mut u_bar = &g * (2.0 * scale);
        let mut z_bar: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); layers];
        for l in 0..layers {
            let (w, _) = self.weights(l);
            let gw = &deltas[l] * u_bar.transpose();
            let o = self.offset(l);
            for (dst, src) in grad[o..o + gw.len()].iter_mut().zip(gw.iter()) {
                *dst += src;
            }
            if l + 1 < layers {
                let d_bar = w * &u_bar;
                let z = &cache.z[l];
                u_bar = d_bar.zip_map(z, |d, zv| d * act.d1(zv));
                let mut zb = d_bar.zip_map(&us[l + 1], |d, u| d * u);
                zb.zip_apply(z, |v, zv| *v *= act.d2(zv));
                z_bar[l] = zb;
            }
        }
        // Pre-activation adjoints flow back through the forward pass.
        let mut carry: Option<DMatrix<f64>> = None;
        for l in (0..layers - 1).rev() {
            let mut zt = z_bar[l].clone();
            if let Some(c) = &carry {
                let (w_next, _) = self.weights(l + 1);
                let h_bar = w_next.transpose() * c;
                zt += h_bar.zip_map(&cache.z[l], |h, zv| h * act.d1(zv));
            }
            let gw = &zt * cache.h[l].transpose();
            let gb: DVector<f64> = zt.column_sum();
            let o = self.offset(l);
            let nw = gw.len();
            for (dst, src) in grad[o..o + nw].iter_mut().zip(gw.iter()) {
                *dst += src;
            }
            for (dst, src) in grad[o + nw..o + nw + gb.len()].iter_mut().zip(gb.iter()) {
                *dst += src;
            }
            carry = Some(zt);
        }
        (g, grad)
    }

    pub fn same_layout(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes && self.activation == other.activation
    }
}

/// Stacks rows into a column-per-sample matrix.
pub fn batch_matrix(rows: &[&[f64]], dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, rows.len());
    for (j, r) in rows.iter().enumerate() {
        m.column_mut(j).copy_from_slice(r);
    }
    m
}
