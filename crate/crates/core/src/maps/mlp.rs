use rand::Rng;

use crate::autodiff::{Activation, DenseLayer, ParamStore, Tape, Var};
use crate::Result;

/// Fully connected stack: `hidden` after every layer but the last, `output`
/// after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    /// `sizes` lists every width including input and output.
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParamStore,
        prefix: &str,
        sizes: &[usize],
        bias: bool,
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::init(params, &format!("{prefix}.{i}"), w[0], w[1], bias, rng))
            .collect();
        Mlp {
            layers,
            hidden,
            output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    /// Activation applied after layer `i`.
    pub fn activation_after(&self, i: usize) -> Activation {
        if i + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn record(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.record(tape, h)?;
            let act = self.activation_after(i);
            if act != Activation::Identity {
                h = tape.activation(h, act);
            }
        }
        Ok(h)
    }
}
