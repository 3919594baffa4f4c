use super::{Matrix, ParamStore, Tape, Var};
use crate::{Error, Result};

/// Worst relative deviation between reverse-mode and central-difference
/// gradients, and where it occurred.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub worst: String,
    pub entries: usize,
}

/// `‖g − ĝ‖₂ / max(‖g‖₂, ‖ĝ‖₂)`, or the absolute difference when both vanish.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let diff = (analytic - numeric).mapv(|v| v * v).sum().sqrt();
    let scale = analytic
        .mapv(|v| v * v)
        .sum()
        .sqrt()
        .max(numeric.mapv(|v| v * v).sum().sqrt());
    if scale > 1e-300 {
        diff / scale
    } else {
        diff
    }
}

fn scalar_output<F>(params: &ParamStore, inputs: &[Matrix], build: &F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let vars: Vec<Var> = inputs.iter().map(|m| tape.input(m.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.dim() != (1, 1) {
        return Err(Error::Shape(format!("gradient check needs a scalar output, got {:?}", v.dim())));
    }
    Ok(v[(0, 0)])
}

/// Compares the backward pass of the scalar graph `build` with central
/// differences of step `step`, for every parameter and every input leaf.
pub fn check_gradients<F>(params: &ParamStore, inputs: &[Matrix], build: F, step: f64) -> Result<GradientCheck>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let vars: Vec<Var> = inputs.iter().map(|m| tape.input(m.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out, &Matrix::from_elem((1, 1), 1.0))?;

    let mut report = GradientCheck {
        max_relative_error: 0.0,
        worst: String::new(),
        entries: 0,
    };
    let record = |name: String, analytic: Matrix, numeric: Matrix, report: &mut GradientCheck| {
        report.entries += numeric.len();
        let e = relative_error(&analytic, &numeric);
        if e > report.max_relative_error || report.worst.is_empty() {
            report.max_relative_error = report.max_relative_error.max(e);
            report.worst = name;
        }
    };

    for id in params.ids() {
        let mut work = params.clone();
        let shape = params.get(id).dim();
        let mut numeric = Matrix::zeros(shape);
        for idx in 0..shape.0 * shape.1 {
            let (r, c) = (idx / shape.1, idx % shape.1);
            let base = params.get(id)[(r, c)];
            work.get_mut(id)[(r, c)] = base + step;
            let plus = scalar_output(&work, inputs, &build)?;
            work.get_mut(id)[(r, c)] = base - step;
            let minus = scalar_output(&work, inputs, &build)?;
            work.get_mut(id)[(r, c)] = base;
            numeric[(r, c)] = (plus - minus) / (2.0 * step);
        }
        record(params.name(id).to_string(), grads.param_or_zero(id, params), numeric, &mut report);
    }
    for (k, (var, m)) in vars.iter().zip(inputs).enumerate() {
        let mut work = inputs.to_vec();
        let mut numeric = Matrix::zeros(m.dim());
        for ((r, c), _) in m.indexed_iter() {
            let base = m[(r, c)];
            work[k][(r, c)] = base + step;
            let plus = scalar_output(params, &work, &build)?;
            work[k][(r, c)] = base - step;
            let minus = scalar_output(params, &work, &build)?;
            work[k][(r, c)] = base;
            numeric[(r, c)] = (plus - minus) / (2.0 * step);
        }
        record(format!("input {k}"), grads.wrt_or_zero(*var, m.dim()), numeric, &mut report);
    }
    Ok(report)
}
