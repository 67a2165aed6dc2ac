use crate::error::{Error, Result};
use crate::numerics::{DifferentiableOp, Tensor};

/// Compares the analytic gradient of `Σ op(inputs)` against central finite
/// differences. Returns the maximum over all input entries of
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check(op: &dyn DifferentiableOp, inputs: &[Tensor], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::Config(format!(
            "grad_check epsilon {epsilon} outside (0, 1e-2]"
        )));
    }
    let out = checked_forward(op, inputs)?;
    let ones = Tensor::filled(out.shape(), 1.0);
    let analytic = op.backward(inputs, &ones)?;
    if analytic.len() != inputs.len() {
        return Err(Error::dim(
            "grad_check",
            format!(
                "{} returned {} gradients for {} inputs",
                op.name(),
                analytic.len(),
                inputs.len()
            ),
        ));
    }

    let mut work = inputs.to_vec();
    let mut worst = 0.0f64;
    for (k, grad) in analytic.iter().enumerate() {
        if grad.shape() != inputs[k].shape() {
            return Err(Error::dim(
                "grad_check",
                format!(
                    "{}: gradient {} has shape {:?}, input has {:?}",
                    op.name(),
                    k,
                    grad.shape(),
                    inputs[k].shape()
                ),
            ));
        }
        if !grad.is_finite() {
            return Err(non_finite(op, "analytic gradient"));
        }
        for i in 0..inputs[k].len() {
            let orig = inputs[k].values()[i];
            work[k].values_mut()[i] = orig + epsilon;
            let plus = checked_forward(op, &work)?.sum();
            work[k].values_mut()[i] = orig - epsilon;
            let minus = checked_forward(op, &work)?.sum();
            work[k].values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad.values()[i];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn checked_forward(op: &dyn DifferentiableOp, inputs: &[Tensor]) -> Result<Tensor> {
    let out = op.forward(inputs)?;
    if !out.is_finite() {
        return Err(non_finite(op, "forward output"));
    }
    Ok(out)
}

fn non_finite(op: &dyn DifferentiableOp, what: &str) -> Error {
    Error::Numeric {
        op: op.name().to_string(),
        detail: format!("non-finite {what} during gradient check"),
    }
}

type ForwardFn<'a> = Box<dyn Fn(&[Tensor]) -> Result<Tensor> + 'a>;
type BackwardFn<'a> = Box<dyn Fn(&[Tensor], &Tensor) -> Result<Vec<Tensor>> + 'a>;

/// Adapter turning a pair of closures into a [`DifferentiableOp`].
pub struct FnOp<'a> {
    name: String,
    forward: ForwardFn<'a>,
    backward: BackwardFn<'a>,
}

impl<'a> FnOp<'a> {
    pub fn new(
        name: impl Into<String>,
        forward: impl Fn(&[Tensor]) -> Result<Tensor> + 'a,
        backward: impl Fn(&[Tensor], &Tensor) -> Result<Vec<Tensor>> + 'a,
    ) -> Self {
        Self {
            name: name.into(),
            forward: Box::new(forward),
            backward: Box::new(backward),
        }
    }
}

impl DifferentiableOp for FnOp<'_> {
    fn name(&self) -> &str {
        &self.name
    }
    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
        (self.forward)(inputs)
    }
    fn backward(&self, inputs: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        (self.backward)(inputs, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_epsilon() {
        let op = crate::numerics::Tanh;
        let x = [Tensor::zeros(&[1])];
        assert!(grad_check(&op, &x, 0.0).is_err());
        assert!(grad_check(&op, &x, 0.1).is_err());
    }

    #[test]
    fn detects_wrong_gradient() {
        let op = FnOp::new(
            "square",
            |x| Tensor::vector(x[0].values().iter().map(|v| v * v).collect()),
            |x, g| {
                // deliberately off by a factor of two
                let v = x[0].values().iter().zip(g.values()).map(|(a, b)| a * b).collect();
                Ok(vec![Tensor::vector(v)?])
            },
        );
        let x = [Tensor::vector(vec![1.5, -2.0]).unwrap()];
        assert!(grad_check(&op, &x, 1e-5).unwrap() > 0.1);
    }

    #[test]
    fn non_finite_names_the_operation() {
        let op = FnOp::new(
            "blowup",
            |x| Tensor::vector(x[0].values().iter().map(|v| 1.0 / (v - v)).collect()),
            |x, _| Ok(vec![x[0].clone()]),
        );
        let err = grad_check(&op, &[Tensor::filled(&[1], 1.0)], 1e-5).unwrap_err();
        assert!(err.to_string().contains("blowup"));
    }
}
