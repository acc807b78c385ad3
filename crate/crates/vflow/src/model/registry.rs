//! Flat parameter addressing across a whole model.
//!
//! Optimizers and checkpoints want one contiguous `Vec<f64>`; layers own
//! their parameters locally. The registry fixes a canonical order — the
//! density flow's layers, then the augmentation flow's, then the
//! dequantization flow's — and translates between the two views.

use std::ops::Range;

use crate::error::{Error, Result};

use super::flow::VFlowModel;

#[derive(Debug, Clone)]
pub struct ParamEntry {
    /// Dotted path, e.g. `p.layer2.s.w0`.
    pub name: String,
    /// Offset into the flat vector.
    pub offset: usize,
    /// Tensor shape; the product is the length.
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
pub struct ParamRegistry {
    entries: Vec<ParamEntry>,
    p_len: usize,
    q_len: usize,
    r_len: usize,
}

impl ParamRegistry {
    pub fn new(model: &VFlowModel) -> Self {
        let mut entries = Vec::new();
        let mut offset = 0;
        let mut push_stack = |prefix: &str, stack: &crate::model::LayerStack| -> usize {
            let start = offset;
            for (i, layer) in stack.layers().iter().enumerate() {
                for (name, shape) in layer.param_entries() {
                    let len: usize = shape.iter().product();
                    entries.push(ParamEntry {
                        name: format!("{prefix}.layer{i}.{name}"),
                        offset,
                        shape,
                    });
                    offset += len;
                }
            }
            offset - start
        };
        let p_len = push_stack("p", model.p.stack());
        let q_len = model
            .q
            .as_ref()
            .map_or(0, |q| push_stack("q", q.stack()));
        let r_len = model
            .r
            .as_ref()
            .map_or(0, |r| push_stack("r", r.stack()));
        ParamRegistry {
            entries,
            p_len,
            q_len,
            r_len,
        }
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.p_len + self.q_len + self.r_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Slice of the flat vector belonging to the density flow.
    pub fn p_range(&self) -> Range<usize> {
        0..self.p_len
    }

    /// Slice belonging to the augmentation flow (empty if absent).
    pub fn q_range(&self) -> Range<usize> {
        self.p_len..self.p_len + self.q_len
    }

    /// Slice belonging to the dequantization flow (empty if absent).
    pub fn r_range(&self) -> Range<usize> {
        self.p_len + self.q_len..self.len()
    }

    /// Split one flat gradient buffer into the per-flow sections
    /// (density, augmentation, dequantization), in that order.
    pub fn split_grad<'a>(
        &self,
        grad: &'a mut [f64],
    ) -> (&'a mut [f64], &'a mut [f64], &'a mut [f64]) {
        debug_assert_eq!(grad.len(), self.len());
        let (p, rest) = grad.split_at_mut(self.p_len);
        let (q, r) = rest.split_at_mut(self.q_len);
        (p, q, r)
    }

    pub fn gather(&self, model: &VFlowModel) -> Vec<f64> {
        let mut flat = vec![0.0; self.len()];
        model
            .p
            .stack()
            .read_params_into(&mut flat[self.p_range()]);
        if let Some(q) = &model.q {
            q.stack().read_params_into(&mut flat[self.q_range()]);
        }
        if let Some(r) = &model.r {
            r.stack().read_params_into(&mut flat[self.r_range()]);
        }
        flat
    }

    pub fn scatter(&self, model: &mut VFlowModel, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::DimMismatch {
                what: "flat parameter vector",
                expected: self.len(),
                got: flat.len(),
            });
        }
        model
            .p
            .stack_mut()
            .write_params_from(&flat[self.p_range()]);
        if let Some(q) = &mut model.q {
            q.stack_mut().write_params_from(&flat[self.q_range()]);
        }
        if let Some(r) = &mut model.r {
            r.stack_mut().write_params_from(&flat[self.r_range()]);
        }
        Ok(())
    }
}
