use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected layer; `weight` is `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

/// Feed-forward network with tanh hidden activations and a linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MlpRepr", try_from = "MlpRepr")]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations saved by [`Mlp::forward_cached`]: the input and every hidden
/// layer's post-tanh output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
}

/// Orthogonal matrix of shape `(rows, cols)` scaled by `gain`, by modified
/// Gram-Schmidt on a Gaussian draw.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<f64> {
    let (n, m) = if rows <= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    let mut q = Array2::<f64>::zeros((n, m));
    for mut row in q.rows_mut() {
        row.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal));
    }
    for i in 0..n {
        for j in 0..i {
            let proj = q.row(i).dot(&q.row(j));
            let prev = q.row(j).to_owned();
            q.row_mut(i).scaled_add(-proj, &prev);
        }
        let norm = q.row(i).dot(&q.row(i)).sqrt().max(1e-12);
        q.row_mut(i).mapv_inplace(|v| v / norm);
    }
    let q = q.mapv(|v| v * gain);
    if rows <= cols {
        q
    } else {
        q.reversed_axes().as_standard_layout().to_owned()
    }
}

impl Mlp {
    /// Build a network with layer widths `sizes` (input first). Hidden layers
    /// get orthogonal weights with `hidden_gain`, the head `output_gain`;
    /// biases start at zero.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(
            sizes.len() >= 2,
            "an MLP needs at least an input and an output width"
        );
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i == last { output_gain } else { hidden_gain };
                Dense {
                    weight: orthogonal(w[1], w[0], gain, rng),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Mlp {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(Dense::outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::outputs).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len())
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    /// All parameters, layer by layer, weights (row-major) before biases.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Apply `f(self, other)` elementwise over every parameter block.
    pub fn zip_apply(&mut self, other: &Mlp, mut f: impl FnMut(&mut f64, f64)) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            Zip::from(&mut a.weight)
                .and(&b.weight)
                .for_each(|x, &y| f(x, y));
            Zip::from(&mut a.bias)
                .and(&b.bias)
                .for_each(|x, &y| f(x, y));
        }
    }

    /// Batched forward pass; rows of `x` are samples.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            h = z;
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, ForwardCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            inputs.push(h);
            h = z;
        }
        (h, ForwardCache { inputs })
    }

    /// Single-sample forward pass.
    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let mut h = Array1::from(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weight.dot(&h);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            h = z;
        }
        h.to_vec()
    }

    /// Gradient of a loss with respect to every parameter, given the loss
    /// gradient at the outputs (`grad_out`, same shape as the forward output).
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> Mlp {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let weight = g.t().dot(input);
            let bias = g.sum_axis(Axis(0));
            grads.push(Dense { weight, bias });
            if i > 0 {
                let mut upstream = g.dot(&layer.weight);
                // input to this layer is tanh output of the previous one
                Zip::from(&mut upstream)
                    .and(input)
                    .for_each(|d, &a| *d *= 1.0 - a * a);
                g = upstream;
            }
        }
        grads.reverse();
        Mlp { layers: grads }
    }
}

/// Convex combination `tau * q + (1 - tau) * p`, block by block.
pub fn soft_blend(p: &Mlp, q: &Mlp, tau: f64) -> Result<Mlp> {
    if !p.same_shape(q) {
        return Err(Error::Contract(format!(
            "cannot blend networks of shapes {:?} and {:?}",
            p.sizes(),
            q.sizes()
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Contract(format!(
            "blend coefficient {tau} outside [0, 1]"
        )));
    }
    let mut out = p.clone();
    out.zip_apply(q, |a, b| *a = tau * b + (1.0 - tau) * *a);
    Ok(out)
}

/// Stack observation rows into a batch matrix.
pub fn batch<'a, I>(rows: I, width: usize) -> Array2<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let flat: Vec<f64> = rows.into_iter().flat_map(|r| r.iter().copied()).collect();
    let n = flat.len() / width;
    Array2::from_shape_vec((n, width), flat).expect("rows have the declared width")
}

pub fn row(x: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView1::from(x).insert_axis(Axis(0))
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpRepr {
    layers: Vec<LayerRepr>,
}

impl From<Mlp> for MlpRepr {
    fn from(m: Mlp) -> Self {
        MlpRepr {
            layers: m
                .layers
                .into_iter()
                .map(|l| LayerRepr {
                    weight: l.weight.rows().into_iter().map(|r| r.to_vec()).collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<MlpRepr> for Mlp {
    type Error = String;

    fn try_from(r: MlpRepr) -> Result<Self, String> {
        if r.layers.is_empty() {
            return Err("network has no layers".into());
        }
        let mut layers = Vec::with_capacity(r.layers.len());
        for (i, l) in r.layers.into_iter().enumerate() {
            let rows = l.weight.len();
            let cols = l.weight.first().map_or(0, Vec::len);
            if rows == 0
                || cols == 0
                || l.weight.iter().any(|w| w.len() != cols)
                || l.bias.len() != rows
            {
                return Err(format!("layer {i} has inconsistent shapes"));
            }
            let flat: Vec<f64> = l.weight.into_iter().flatten().collect();
            let weight = Array2::from_shape_vec((rows, cols), flat).map_err(|e| e.to_string())?;
            if let Some(prev) = layers.last().map(Dense::outputs) {
                if prev != cols {
                    return Err(format!(
                        "layer {i} expects {cols} inputs, previous layer gives {prev}"
                    ));
                }
            }
            layers.push(Dense {
                weight,
                bias: Array1::from(l.bias),
            });
        }
        Ok(Mlp { layers })
    }
}
