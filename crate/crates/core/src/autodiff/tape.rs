//! Reverse-mode differentiation over batched matrices.
//!
//! Every node holds a `batch × features` matrix. Parameters are not nodes:
//! ops that consume weights reference them by [`ParamId`] in the borrowed
//! [`ParamStore`], and their gradients are accumulated separately. A tape is
//! built for one forward evaluation and consumed by one backward pass.

use ndarray::{s, Array2, Axis, Zip};

use super::activation::Activation;
use super::params::{Matrix, ParamId, ParamStore};
use crate::error::shape_err;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// `(x - shift) * scale` per column; only the scale matters backward.
    Affine {
        x: Var,
        scale: Vec<f64>,
    },
    Linear {
        x: Var,
        weight: ParamId,
        bias: Option<ParamId>,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Concat {
        left: Var,
        right: Var,
    },
    /// Row `b` of the output is `W_b · input_b` with
    /// `W_b[i, j] = Σ_k H[i, k, j] φ_b[k] + B[i, j]`.
    Tensor {
        features: Var,
        input: Var,
        tensor: ParamId,
        bias: Option<ParamId>,
        outer: Matrix,
    },
    /// Row-wise `reshape(matrix_b, rows × cols) · vector_b`, row-major.
    MatVec {
        matrix: Var,
        vector: Var,
        cols: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    /// `scale · mean_b Σ_i (x[b, i] - target[b, i])²`, a `1 × 1` node.
    SqDist {
        x: Var,
        target: Matrix,
        scale: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    consumed: bool,
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    params: Vec<Option<Matrix>>,
    nodes: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient with respect to a parameter; `None` if it did not influence
    /// the output.
    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to a leaf (input or constant).
    pub fn wrt(&self, var: Var) -> Option<&Matrix> {
        self.nodes.get(var.0).and_then(Option::as_ref)
    }

    /// Same as [`Gradients::param`] but materializes zeros.
    pub fn param_or_zero(&self, id: ParamId, store: &ParamStore) -> Matrix {
        self.param(id)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(store.get(id).dim()))
    }

    pub fn wrt_or_zero(&self, var: Var, shape: (usize, usize)) -> Matrix {
        self.wrt(var).cloned().unwrap_or_else(|| Matrix::zeros(shape))
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(existing) => *existing += &g,
        None => *slot = Some(g),
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn dim(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.dim()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input leaf; its gradient is reported by the backward pass.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A leaf nobody asks the gradient of (same thing, different intent).
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn affine(&mut self, x: Var, shift: &[f64], scale: &[f64]) -> Result<Var> {
        let (_, cols) = self.dim(x);
        if shift.len() != cols || scale.len() != cols {
            return Err(shape_err(format!(
                "affine over {cols} columns given shift {} / scale {}",
                shift.len(),
                scale.len()
            )));
        }
        let mut out = self.value(x).clone();
        for mut row in out.rows_mut() {
            for ((v, &m), &s) in row.iter_mut().zip(shift).zip(scale) {
                *v = (*v - m) * s;
            }
        }
        Ok(self.push(
            out,
            Op::Affine {
                x,
                scale: scale.to_vec(),
            },
        ))
    }

    pub fn linear(&mut self, x: Var, weight: ParamId, bias: Option<ParamId>) -> Result<Var> {
        let w = self.params.get(weight);
        let (out_dim, in_dim) = w.dim();
        let (_, cols) = self.dim(x);
        if cols != in_dim {
            return Err(shape_err(format!(
                "linear layer '{}' expects {in_dim} inputs, got {cols}",
                self.params.name(weight)
            )));
        }
        let mut out = self.value(x).dot(&w.t());
        if let Some(b) = bias {
            let b = self.params.get(b);
            if b.dim() != (1, out_dim) {
                return Err(shape_err(format!(
                    "bias '{}' has shape {:?}, expected (1, {out_dim})",
                    self.params.name(weight),
                    b.dim()
                )));
            }
            out += b;
        }
        Ok(self.push(out, Op::Linear { x, weight, bias }))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out = self.value(x).mapv(|z| kind.apply(z));
        self.push(out, Op::Act { x, kind })
    }

    pub fn concat(&mut self, left: Var, right: Var) -> Result<Var> {
        let (lb, lc) = self.dim(left);
        let (rb, rc) = self.dim(right);
        if lb != rb {
            return Err(shape_err(format!("concat of batch {lb} with batch {rb}")));
        }
        let mut out = Matrix::zeros((lb, lc + rc));
        out.slice_mut(s![.., ..lc]).assign(self.value(left));
        out.slice_mut(s![.., lc..]).assign(self.value(right));
        Ok(self.push(out, Op::Concat { left, right }))
    }

    /// Tensor-layer contraction. `tensor` is the flattened `h × (w·n)` form,
    /// with `H[i, k, j]` at column `k·n + j`; `bias` is `h × n`.
    pub fn tensor_contract(
        &mut self,
        features: Var,
        input: Var,
        tensor: ParamId,
        bias: Option<ParamId>,
    ) -> Result<Var> {
        let (fb, w) = self.dim(features);
        let (ib, n) = self.dim(input);
        let hbar = self.params.get(tensor);
        let (h, wn) = hbar.dim();
        if fb != ib {
            return Err(shape_err(format!("tensor layer batch {fb} vs {ib}")));
        }
        if wn != w * n {
            return Err(shape_err(format!(
                "tensor '{}' has {wn} columns, features × input = {w} × {n}",
                self.params.name(tensor)
            )));
        }
        let outer = row_outer(self.value(features), self.value(input));
        let mut out = outer.dot(&hbar.t());
        if let Some(b) = bias {
            let bm = self.params.get(b);
            if bm.dim() != (h, n) {
                return Err(shape_err(format!(
                    "tensor bias has shape {:?}, expected ({h}, {n})",
                    bm.dim()
                )));
            }
            out += &self.value(input).dot(&bm.t());
        }
        Ok(self.push(
            out,
            Op::Tensor {
                features,
                input,
                tensor,
                bias,
                outer,
            },
        ))
    }

    /// Treats each row of `matrix` as a row-major `rows × cols` matrix and
    /// multiplies it with the matching row of `vector` (length `cols`).
    pub fn matvec(&mut self, matrix: Var, vector: Var) -> Result<Var> {
        let (mb, len) = self.dim(matrix);
        let (vb, cols) = self.dim(vector);
        if mb != vb || cols == 0 || len % cols != 0 {
            return Err(shape_err(format!(
                "matvec of {mb}×{len} flattened matrices with {vb}×{cols} vectors"
            )));
        }
        let rows = len / cols;
        let m = self.value(matrix);
        let v = self.value(vector);
        let mut out = Matrix::zeros((mb, rows));
        for b in 0..mb {
            for i in 0..rows {
                let mut acc = 0.0;
                for j in 0..cols {
                    acc += m[(b, i * cols + j)] * v[(b, j)];
                }
                out[(b, i)] = acc;
            }
        }
        Ok(self.push(
            out,
            Op::MatVec {
                matrix,
                vector,
                cols,
            },
        ))
    }

    fn same_dims(&self, a: Var, b: Var) -> Result<()> {
        if self.dim(a) != self.dim(b) {
            return Err(shape_err(format!(
                "elementwise op on {:?} and {:?}",
                self.dim(a),
                self.dim(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims(a, b)?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims(a, b)?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| -v);
        self.push(out, Op::Neg(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x) * factor;
        self.push(out, Op::Scale(x, factor))
    }

    /// `scale · mean over rows of ‖x_b - target_b‖²`.
    pub fn sq_dist_mean(&mut self, x: Var, target: &Matrix, scale: f64) -> Result<Var> {
        if self.dim(x) != target.dim() {
            return Err(shape_err(format!(
                "squared distance between {:?} and target {:?}",
                self.dim(x),
                target.dim()
            )));
        }
        let rows = self.dim(x).0.max(1) as f64;
        let total: f64 = Zip::from(self.value(x))
            .and(target)
            .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b));
        let out = Matrix::from_elem((1, 1), scale * total / rows);
        Ok(self.push(
            out,
            Op::SqDist {
                x,
                target: target.clone(),
                scale,
            },
        ))
    }

    /// Squared norm of every row, averaged and scaled; target zero.
    pub fn sq_norm_mean(&mut self, x: Var, scale: f64) -> Result<Var> {
        let zeros = Matrix::zeros(self.dim(x));
        self.sq_dist_mean(x, &zeros, scale)
    }

    /// Propagates `seed` (shaped like `output`) back through the tape.
    ///
    /// Returns `∂(seed · output)/∂θ` for every parameter and the gradient for
    /// every leaf. A tape supports exactly one backward pass.
    pub fn backward(&mut self, output: Var, seed: &Matrix) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if seed.dim() != self.dim(output) {
            return Err(shape_err(format!(
                "seed {:?} does not match output {:?}",
                seed.dim(),
                self.dim(output)
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut pgrads: Vec<Option<Matrix>> = (0..self.params.len()).map(|_| None).collect();
        grads[output.0] = Some(seed.clone());

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Affine { x, scale } => {
                    let mut gx = g;
                    for mut row in gx.rows_mut() {
                        for (v, &s) in row.iter_mut().zip(scale) {
                            *v *= s;
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Linear { x, weight, bias } => {
                    let w = self.params.get(*weight);
                    let xv = &self.nodes[x.0].value;
                    accumulate(&mut pgrads[weight.0], g.t().dot(xv));
                    if let Some(b) = bias {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut pgrads[b.0], gb);
                    }
                    accumulate(&mut grads[x.0], g.dot(w));
                }
                Op::Act { x, kind } => {
                    let z = &self.nodes[x.0].value;
                    let y = &node.value;
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(z)
                        .and(y)
                        .for_each(|gv, &zv, &yv| *gv *= kind.derivative(zv, yv));
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Concat { left, right } => {
                    let lc = self.nodes[left.0].value.ncols();
                    accumulate(&mut grads[left.0], g.slice(s![.., ..lc]).to_owned());
                    accumulate(&mut grads[right.0], g.slice(s![.., lc..]).to_owned());
                }
                Op::Tensor {
                    features,
                    input,
                    tensor,
                    bias,
                    outer,
                } => {
                    let hbar = self.params.get(*tensor);
                    let phi = &self.nodes[features.0].value;
                    let z = &self.nodes[input.0].value;
                    let n = z.ncols();
                    accumulate(&mut pgrads[tensor.0], g.t().dot(outer));
                    let d_outer = g.dot(hbar);
                    let (batch, w) = phi.dim();
                    let mut d_phi = Matrix::zeros((batch, w));
                    let mut d_z = Matrix::zeros((batch, n));
                    for b in 0..batch {
                        for k in 0..w {
                            let mut acc = 0.0;
                            let pk = phi[(b, k)];
                            for j in 0..n {
                                let dp = d_outer[(b, k * n + j)];
                                acc += dp * z[(b, j)];
                                d_z[(b, j)] += dp * pk;
                            }
                            d_phi[(b, k)] = acc;
                        }
                    }
                    if let Some(bid) = bias {
                        let bm = self.params.get(*bid);
                        accumulate(&mut pgrads[bid.0], g.t().dot(z));
                        d_z += &g.dot(bm);
                    }
                    accumulate(&mut grads[features.0], d_phi);
                    accumulate(&mut grads[input.0], d_z);
                }
                Op::MatVec {
                    matrix,
                    vector,
                    cols,
                } => {
                    let m = &self.nodes[matrix.0].value;
                    let v = &self.nodes[vector.0].value;
                    let cols = *cols;
                    let (batch, rows) = g.dim();
                    let mut dm = Matrix::zeros(m.dim());
                    let mut dv = Matrix::zeros(v.dim());
                    for b in 0..batch {
                        for i in 0..rows {
                            let gi = g[(b, i)];
                            for j in 0..cols {
                                dm[(b, i * cols + j)] = gi * v[(b, j)];
                                dv[(b, j)] += gi * m[(b, i * cols + j)];
                            }
                        }
                    }
                    accumulate(&mut grads[matrix.0], dm);
                    accumulate(&mut grads[vector.0], dv);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[b.0], g.mapv(|v| -v));
                    accumulate(&mut grads[a.0], g);
                }
                Op::Neg(x) => accumulate(&mut grads[x.0], g.mapv(|v| -v)),
                Op::Scale(x, f) => accumulate(&mut grads[x.0], g * *f),
                Op::SqDist { x, target, scale } => {
                    let xv = &self.nodes[x.0].value;
                    let rows = xv.nrows().max(1) as f64;
                    let factor = g[(0, 0)] * 2.0 * scale / rows;
                    let gx = (xv - target) * factor;
                    accumulate(&mut grads[x.0], gx);
                }
            }
        }

        Ok(Gradients {
            params: pgrads,
            nodes: grads,
        })
    }
}

/// Row-wise outer product: row `b` is `φ_b ⊗ z_b` flattened as `k·n + j`.
fn row_outer(phi: &Matrix, z: &Matrix) -> Matrix {
    let (batch, w) = phi.dim();
    let n = z.ncols();
    let mut out = Array2::zeros((batch, w * n));
    for b in 0..batch {
        let mut row = out.row_mut(b);
        for k in 0..w {
            let pk = phi[(b, k)];
            for j in 0..n {
                row[k * n + j] = pk * z[(b, j)];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_map_gradient_is_outer_product() {
        let mut store = ParamStore::new();
        let w = store.add("w", array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let mut tape = Tape::new(&store);
        let x = tape.input(array![[0.5, -1.5]]);
        let y = tape.linear(x, w, None).unwrap();
        // seed e_1 picks the second output row
        let grads = tape.backward(y, &array![[0.0, 1.0, 0.0]]).unwrap();
        let gw = grads.param(w).unwrap();
        assert_eq!(gw, &array![[0.0, 0.0], [0.5, -1.5], [0.0, 0.0]]);
        assert_eq!(grads.wrt(x).unwrap(), &array![[3.0, 4.0]]);
    }

    #[test]
    fn constant_output_has_zero_gradients() {
        let mut store = ParamStore::new();
        let w = store.add("w", array![[1.0, 2.0]]);
        let mut tape = Tape::new(&store);
        let x = tape.input(array![[1.0, 1.0]]);
        let y = tape.linear(x, w, None).unwrap();
        let zero = tape.scale(y, 0.0);
        let grads = tape.backward(zero, &array![[1.0]]).unwrap();
        assert!(grads.param(w).unwrap().iter().all(|&v| v == 0.0));
        assert!(grads.wrt(x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn second_backward_is_usage_error() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(array![[1.0]]);
        let y = tape.scale(x, 2.0);
        tape.backward(y, &array![[1.0]]).unwrap();
        assert!(matches!(
            tape.backward(y, &array![[1.0]]),
            Err(Error::TapeConsumed)
        ));
    }

    #[test]
    fn seed_shape_is_checked() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(array![[1.0, 2.0]]);
        assert!(matches!(
            tape.backward(x, &array![[1.0]]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn matvec_is_row_major() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        // H = [[1,0],[0,2],[0,0]] flattened row-major
        let h = tape.input(array![[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]]);
        let a = tape.input(array![[1.0, 1.0]]);
        let y = tape.matvec(h, a).unwrap();
        assert_eq!(tape.value(y), &array![[1.0, 2.0, 0.0]]);
    }
}
