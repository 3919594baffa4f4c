use ndarray::Array2;
use rand::Rng;

use super::params::{Matrix, ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::shape_err;
use crate::Result;

/// Dense layer `W·x (+ b)`; `W` is `out × in`, the optional bias `1 × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl DenseLayer {
    /// Registers a layer initialized uniformly in `±1/√fan_in`.
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = params.add_uniform(format!("{name}.weight"), output, input, bound, rng);
        let bias = bias.then(|| params.add_uniform(format!("{name}.bias"), 1, output, bound, rng));
        DenseLayer {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn record(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        tape.linear(x, self.weight, self.bias)
    }

    /// Untaped single-vector evaluation.
    pub fn forward(&self, params: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
        let w = params.get(self.weight);
        if input.len() != w.ncols() {
            return Err(shape_err(format!(
                "dense layer expects {} inputs, got {}",
                w.ncols(),
                input.len()
            )));
        }
        let mut out: Vec<f64> = w
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(input).map(|(a, b)| a * b).sum())
            .collect();
        if let Some(b) = self.bias {
            for (o, bv) in out.iter_mut().zip(params.get(b).iter()) {
                *o += bv;
            }
        }
        Ok(out)
    }
}

/// Tensor layer `W(x) = H ⊗ φ(x) + B` with `H ∈ R^{h×w×n}`, stored flattened
/// as `h × (w·n)` where `H[i, k, j]` sits at column `k·n + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorLayer {
    pub tensor: ParamId,
    pub bias: Option<ParamId>,
    /// `h`
    pub output: usize,
    /// `w`
    pub features: usize,
    /// `n`
    pub input: usize,
}

impl TensorLayer {
    /// Uniform init with `fan_in = w·n`.
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParamStore,
        name: &str,
        output: usize,
        features: usize,
        input: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((features * input) as f64).sqrt();
        let tensor = params.add_uniform(
            format!("{name}.tensor"),
            output,
            features * input,
            bound,
            rng,
        );
        let bias = bias.then(|| params.add_uniform(format!("{name}.bias"), output, input, bound, rng));
        TensorLayer {
            tensor,
            bias,
            output,
            features,
            input,
        }
    }

    pub fn record(&self, tape: &mut Tape<'_>, features: Var, input: Var) -> Result<Var> {
        tape.tensor_contract(features, input, self.tensor, self.bias)
    }

    /// The state-dependent matrix `W[i, j] = Σ_k H[i, k, j]·φ[k] + B[i, j]`.
    pub fn contract(&self, params: &ParamStore, phi: &[f64]) -> Result<Matrix> {
        if phi.len() != self.features {
            return Err(shape_err(format!(
                "tensor layer expects {} features, got {}",
                self.features,
                phi.len()
            )));
        }
        let hbar = params.get(self.tensor);
        let n = self.input;
        let mut w = Array2::zeros((self.output, n));
        for i in 0..self.output {
            for j in 0..n {
                let mut acc = 0.0;
                for (k, p) in phi.iter().enumerate() {
                    acc += hbar[(i, k * n + j)] * p;
                }
                w[(i, j)] = acc;
            }
        }
        if let Some(b) = self.bias {
            w += params.get(b);
        }
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dense(store: &mut ParamStore, w: Matrix, b: Option<Matrix>) -> DenseLayer {
        let (out, inp) = w.dim();
        let weight = store.add("w", w);
        let bias = b.map(|b| store.add("b", b));
        DenseLayer {
            weight,
            bias,
            input: inp,
            output: out,
        }
    }

    #[test]
    fn dense_identity() {
        let mut store = ParamStore::new();
        let l = dense(&mut store, array![[1.0, 0.0], [0.0, 1.0]], Some(array![[0.0, 0.0]]));
        assert_eq!(l.forward(&store, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn dense_diagonal_no_bias() {
        let mut store = ParamStore::new();
        let l = dense(&mut store, array![[2.0, 0.0], [0.0, 3.0]], None);
        assert_eq!(l.forward(&store, &[1.0, 1.0]).unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn dense_shape_error() {
        let mut store = ParamStore::new();
        let l = dense(&mut store, Matrix::zeros((2, 3)), None);
        assert!(matches!(
            l.forward(&store, &[1.0, 1.0]),
            Err(crate::Error::Shape(_))
        ));
    }

    fn tensor(store: &mut ParamStore, hbar: Matrix, w: usize, n: usize, b: Option<Matrix>) -> TensorLayer {
        let h = hbar.nrows();
        let tensor = store.add("h", hbar);
        let bias = b.map(|b| store.add("b", b));
        TensorLayer {
            tensor,
            bias,
            output: h,
            features: w,
            input: n,
        }
    }

    #[test]
    fn unit_contraction() {
        let mut store = ParamStore::new();
        let l = tensor(&mut store, array![[1.0]], 1, 1, None);
        assert_eq!(l.contract(&store, &[1.0]).unwrap(), array![[1.0]]);
    }

    #[test]
    fn hand_contraction_with_and_without_bias() {
        // H[0,0,0] = 2, H[0,1,0] = 3 in a 1×2×1 tensor
        let mut store = ParamStore::new();
        let l = tensor(&mut store, array![[2.0, 3.0]], 2, 1, None);
        assert_eq!(l.contract(&store, &[1.0, 1.0]).unwrap(), array![[5.0]]);

        let mut store = ParamStore::new();
        let l = tensor(&mut store, array![[2.0, 3.0]], 2, 1, Some(array![[1.0]]));
        assert_eq!(l.contract(&store, &[1.0, 1.0]).unwrap(), array![[6.0]]);
    }

    #[test]
    fn contract_shape_error() {
        let mut store = ParamStore::new();
        let l = tensor(&mut store, array![[2.0, 3.0]], 2, 1, None);
        assert!(l.contract(&store, &[1.0]).is_err());
    }

    #[test]
    fn taped_contraction_matches_matrix_form() {
        let mut store = ParamStore::new();
        // h=2, w=2, n=2
        let hbar = array![[1.0, 2.0, 3.0, 4.0], [-1.0, 0.5, 0.25, 2.0]];
        let l = tensor(&mut store, hbar, 2, 2, Some(array![[0.1, 0.2], [0.3, 0.4]]));
        let phi = [0.3, -0.7];
        let z = [1.5, -2.0];
        let w = l.contract(&store, &phi).unwrap();
        let expected = w.dot(&ndarray::arr1(&z));
        let mut tape = Tape::new(&store);
        let pv = tape.input(array![[phi[0], phi[1]]]);
        let zv = tape.input(array![[z[0], z[1]]]);
        let y = l.record(&mut tape, pv, zv).unwrap();
        for i in 0..2 {
            assert!((tape.value(y)[(0, i)] - expected[i]).abs() < 1e-14);
        }
    }
}
