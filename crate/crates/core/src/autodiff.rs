//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation as it executes. [`Tape::backward`]
//! replays the records in reverse, accumulating vector-Jacobian products into
//! each node's gradient. Differentiable operators live in [`crate::ops`] and
//! are exposed as methods on `Tape`.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Maps the output gradient and the input values of a node to one gradient
/// per input (`None` when an input receives no contribution).
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[&Tensor<T>]) -> Vec<Option<Tensor<T>>>>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

struct Node<T> {
    op: &'static str,
    value: Tensor<T>,
    inputs: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    grad: Option<Tensor<T>>,
    // Distance of this node's inputs to the nearest point where the op is not
    // differentiable (SeLU at 0, max-pool ties).
    kink_margin: Option<f64>,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), recording: true }
    }

    /// A tape that keeps values but drops backward rules; `backward` on it
    /// only reaches leaves directly.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op: "leaf", value, inputs: Vec::new(), backward: None, grad: None, kink_margin: None });
        Var(self.nodes.len() - 1)
    }

    /// Records an operation. `backward` is dropped when the tape is not
    /// recording.
    pub fn push(&mut self, op: &'static str, value: Tensor<T>, inputs: &[Var], backward: BackwardFn<T>) -> Var {
        let len = self.nodes.len();
        assert!(inputs.iter().all(|v| v.0 < len), "{op}: input recorded after its consumer");
        self.nodes.push(Node {
            op,
            value,
            inputs: inputs.to_vec(),
            backward: self.recording.then_some(backward),
            grad: None,
            kink_margin: None,
        });
        Var(len)
    }

    /// Records a user-defined operation with its own backward rule.
    pub fn custom(
        &mut self,
        op: &'static str,
        value: Tensor<T>,
        inputs: &[Var],
        backward: impl Fn(&Tensor<T>, &[&Tensor<T>]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var {
        self.push(op, value, inputs, Box::new(backward))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    pub fn inputs(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].inputs
    }

    /// Accumulated gradient, `None` if no backward pass reached `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient, or zeros when `v` was never reached.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<T> {
        self.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    pub fn zero_grads(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.grad = None);
    }

    pub(crate) fn set_kink_margin(&mut self, v: Var, margin: f64) {
        self.nodes[v.0].kink_margin = Some(margin);
    }

    /// Smallest recorded distance to a non-differentiable point over the
    /// whole tape.
    pub fn min_kink_margin(&self) -> Option<f64> {
        self.nodes.iter().filter_map(|n| n.kink_margin).reduce(f64::min)
    }

    /// Back-propagates from a scalar `loss`. Gradients are added to whatever
    /// each node already holds, so two calls without [`Tape::zero_grads`]
    /// double every gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != Shape::scalar() {
            return Err(Error::contract(format!("backward from non-scalar loss of shape {shape}")));
        }
        let mut pending: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        pending[loss.0] = Some(Tensor::scalar(T::one()));
        let mut finished: Vec<(usize, Tensor<T>)> = Vec::new();

        for id in (0..=loss.0).rev() {
            let Some(grad) = pending[id].take() else { continue };
            let node = &self.nodes[id];
            if let Some(rule) = &node.backward {
                let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let contributions = rule(&grad, &inputs);
                debug_assert_eq!(contributions.len(), inputs.len(), "{}: arity", node.op);
                for (input, contribution) in node.inputs.iter().zip(contributions) {
                    let Some(contribution) = contribution else { continue };
                    debug_assert_eq!(
                        contribution.shape(),
                        self.nodes[input.0].value.shape(),
                        "{}: gradient shape",
                        node.op
                    );
                    match &mut pending[input.0] {
                        Some(acc) => acc.add_assign(&contribution)?,
                        slot => *slot = Some(contribution),
                    }
                }
            }
            finished.push((id, grad));
        }

        for (id, grad) in finished {
            match &mut self.nodes[id].grad {
                Some(acc) => acc.add_assign(&grad)?,
                slot => *slot = Some(grad),
            }
        }
        Ok(())
    }
}

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`; NaN if
    /// the function produced NaN anywhere.
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Kink margin of the unperturbed evaluation, see [`Tape::min_kink_margin`].
    pub kink_margin: Option<f64>,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks the gradient of a scalar function of one tensor.
pub fn finite_difference_check<T: Real>(
    f: impl Fn(&mut Tape<T>, Var) -> Result<Var>,
    x: &Tensor<T>,
    epsilon: f64,
) -> Result<GradCheck> {
    let mut reports = check_gradients(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), &[0], epsilon)?;
    Ok(reports.remove(0))
}

/// Checks the gradient with respect to each input listed in `wrt`.
pub fn check_gradients<T: Real>(
    f: impl Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<T>],
    wrt: &[usize],
    epsilon: f64,
) -> Result<Vec<GradCheck>> {
    if epsilon <= 0.0 {
        return Err(Error::contract(format!("epsilon must be positive, got {epsilon}")));
    }
    let eval = |inputs: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).to_scalar()?.to_f64_lossy())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let kink_margin = tape.min_kink_margin();
    let step = T::from_f64_lossy(epsilon);

    let mut reports = Vec::with_capacity(wrt.len());
    let mut probe = inputs.to_vec();
    for &which in wrt {
        let analytic = tape.grad_or_zeros(vars[which]);
        let mut report =
            GradCheck { max_relative_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0, kink_margin };
        for i in 0..inputs[which].len() {
            let original = inputs[which].data()[i];
            probe[which].data_mut()[i] = original + step;
            let plus = eval(&probe)?;
            probe[which].data_mut()[i] = original - step;
            let minus = eval(&probe)?;
            probe[which].data_mut()[i] = original;
            // Divide by the step actually taken after rounding to T.
            let actual = ((original + step) - (original - step)).to_f64_lossy();
            let numeric = (plus - minus) / actual;
            let a = analytic.data()[i].to_f64_lossy();
            let err = relative_error(a, numeric);
            if err.is_nan() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
            if err.is_nan() {
                break;
            }
        }
        reports.push(report);
    }
    Ok(reports)
}
