use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{GspnError, Result};

/// Map from unconstrained storage to the constrained parameter the model sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Constraint {
    None,
    /// Each row passes through a softmax.
    SoftmaxRows,
    /// `softplus(raw) + floor`.
    Positive {
        floor: f64,
    },
}

impl Constraint {
    /// Applies the transform outside of any tape.
    pub fn apply(&self, raw: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let v = tape.leaf(raw.clone());
        let out = self.apply_on(&mut tape, v);
        tape.value(out).clone()
    }

    pub fn apply_on(&self, tape: &mut Tape, raw: Var) -> Var {
        match self {
            Constraint::None => raw,
            Constraint::SoftmaxRows => tape.softmax_rows(raw),
            Constraint::Positive { floor } => {
                let s = tape.softplus(raw);
                tape.shift(s, *floor)
            }
        }
    }

    /// Some raw value that maps onto `value`.
    pub fn invert(&self, value: &Tensor) -> Result<Tensor> {
        match self {
            Constraint::None => Ok(value.clone()),
            Constraint::SoftmaxRows => {
                if value.data().iter().any(|p| !(*p > 0.0)) {
                    return Err(GspnError::InvalidParameter(
                        "softmax rows require strictly positive probabilities".into(),
                    ));
                }
                Ok(value.map(f64::ln))
            }
            Constraint::Positive { floor } => {
                if value.data().iter().any(|s| !(*s > *floor)) {
                    return Err(GspnError::InvalidParameter(format!(
                        "positive parameter must exceed its floor {floor}"
                    )));
                }
                // softplus^-1(y) = y + ln(1 - e^-y)
                Ok(value.map(|s| {
                    let y = s - floor;
                    y + (-(-y).exp()).ln_1p()
                }))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub raw: Tensor,
    pub constraint: Constraint,
}

/// Named unconstrained parameters with their constraint transforms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

/// Parameters placed on a tape: raw leaves and their constrained views.
#[derive(Debug, Clone, Default)]
pub struct BoundParams {
    raw: BTreeMap<String, Var>,
    constrained: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Constrained view of `name`. Panics on an unknown name, which is a
    /// programming error in the objective builder.
    pub fn get(&self, name: &str) -> Var {
        *self
            .constrained
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.constrained.get(name).copied()
    }

    pub fn raw(&self, name: &str) -> Var {
        self.raw[name]
    }

    /// Gradients w.r.t. the raw (unconstrained) parameters.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.raw
            .iter()
            .map(|(k, v)| (k.clone(), grads.wrt(*v)))
            .collect()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, raw: Tensor, constraint: Constraint) {
        self.params.insert(name.into(), Param { raw, constraint });
    }

    /// Stores a parameter given its constrained value.
    pub fn insert_constrained(
        &mut self,
        name: impl Into<String>,
        value: &Tensor,
        constraint: Constraint,
    ) -> Result<()> {
        let raw = constraint.invert(value)?;
        self.insert(name, raw, constraint);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn constrained(&self, name: &str) -> Option<Tensor> {
        self.params.get(name).map(|p| p.constraint.apply(&p.raw))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.raw.len()).sum()
    }

    /// Places every parameter on `tape` as a leaf followed by its transform.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let mut bound = BoundParams::default();
        for (name, p) in &self.params {
            let raw = tape.leaf(p.raw.clone());
            let view = p.constraint.apply_on(tape, raw);
            bound.raw.insert(name.clone(), raw);
            bound.constrained.insert(name.clone(), view);
        }
        bound
    }
}

/// Gradient of a scalar objective w.r.t. every raw parameter in `params`.
///
/// Parameters the objective does not touch get a zero gradient.
pub fn grad<F>(objective: F, params: &ParamStore) -> Result<(f64, BTreeMap<String, Tensor>)>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let root = objective(&mut tape, &bound)?;
    let grads = tape.backward(root)?;
    Ok((tape.value(root).item(), bound.gradients(&grads)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_constraint_on_simplex() {
        let raw = Tensor::from_rows(&[vec![3.0, -2.0, 0.5], vec![-40.0, 40.0, 0.0]]);
        let p = Constraint::SoftmaxRows.apply(&raw);
        for r in 0..2 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_constraint_and_inverse() {
        let c = Constraint::Positive { floor: 1e-4 };
        let raw = Tensor::row_vector(vec![-50.0, -1.0, 0.0, 3.0]);
        let s = c.apply(&raw);
        assert!(s.data().iter().all(|x| *x > 0.0));
        let target = Tensor::row_vector(vec![0.5, 1.0, 3.0]);
        let back = c.apply(&c.invert(&target).unwrap());
        for (a, b) in back.data().iter().zip(target.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(c.invert(&Tensor::scalar(1e-5)).is_err());
    }

    #[test]
    fn unused_parameter_has_zero_gradient() {
        let mut ps = ParamStore::new();
        ps.insert("used", Tensor::scalar(3.0), Constraint::None);
        ps.insert("unused", Tensor::scalar(1.0), Constraint::None);
        let (value, g) = grad(|t, b| t.mul(b.get("used"), b.get("used")), &ps).unwrap();
        assert_eq!(value, 9.0);
        assert_eq!(g["used"].item(), 6.0);
        assert_eq!(g["unused"].item(), 0.0);
    }
}
