//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Floor on the symmetric denominator `|analytic| + |numeric|`.
pub const DENOMINATOR_FLOOR: f64 = 1e-8;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |a - n| / max(1e-8, |a| + |n|)` over every checked coordinate.
    pub max_relative_error: f64,
    /// `(argument index, flat coordinate)` where the maximum occurred.
    pub worst: (usize, usize),
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Step used for coordinate `x`: `1e-5 · (1 + |x|)`.
pub fn step_size(x: f64) -> f64 {
    1e-5 * (1.0 + x.abs())
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / DENOMINATOR_FLOOR.max(analytic.abs() + numeric.abs())
}

/// Compares supplied analytic gradients against central differences of `value`.
///
/// `value` evaluates the scalar objective at a full set of arguments; `analytic[i]` must
/// have the shape of `points[i]`.
pub fn compare_gradients(
    mut value: impl FnMut(&[Tensor]) -> Result<f64>,
    points: &[Tensor],
    analytic: &[Tensor],
) -> Result<GradCheckReport> {
    if points.len() != analytic.len() {
        return Err(Error::Invalid(format!(
            "{} points but {} analytic gradients",
            points.len(),
            analytic.len()
        )));
    }
    let mut args: Vec<Tensor> = points.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coordinates: 0,
    };
    for (arg, grad) in analytic.iter().enumerate() {
        points[arg].expect_shape("gradient_check", grad.shape())?;
        for i in 0..points[arg].len() {
            let x0 = points[arg].data()[i];
            let h = step_size(x0);
            args[arg].data_mut()[i] = x0 + h;
            let plus = value(&args)?;
            args[arg].data_mut()[i] = x0 - h;
            let minus = value(&args)?;
            args[arg].data_mut()[i] = x0;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[i];
            let e = relative_error(a, numeric);
            report.coordinates += 1;
            if e > report.max_relative_error || report.coordinates == 1 {
                report.max_relative_error = e;
                report.worst = (arg, i);
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

/// Builds `f` on a fresh graph with every point registered as a leaf and returns the scalar
/// value together with the analytic gradients.
pub fn value_and_gradients(
    f: &impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    points: &[Tensor],
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|p| g.leaf(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let value = g.scalar(out)?;
    let grads = g.backward(out)?;
    Ok((value, vars.iter().map(|v| grads.wrt(*v).clone()).collect()))
}

fn evaluate(f: &impl Fn(&mut Graph, &[Var]) -> Result<Var>, args: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = args.iter().map(|p| g.constant(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.scalar(out)
}

/// Checks the reverse-mode gradient of a scalar function of several tensors.
pub fn gradient_check_many(
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    points: &[Tensor],
) -> Result<GradCheckReport> {
    let (_, analytic) = value_and_gradients(&f, points)?;
    compare_gradients(|args| evaluate(&f, args), points, &analytic)
}

/// Checks the reverse-mode gradient of a scalar function of one tensor.
pub fn gradient_check(
    f: impl Fn(&mut Graph, Var) -> Result<Var>,
    point: &Tensor,
) -> Result<GradCheckReport> {
    gradient_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(point))
}
