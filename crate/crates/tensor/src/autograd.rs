use std::collections::{HashMap, HashSet};

use crate::error::{contract_err, dim_err, Result};
use crate::tensor::{BackwardCtx, Tensor};
use crate::Real;

/// The differentiable operations reachable from a root, in topological
/// order (every node after the nodes producing its inputs).
pub struct Tape {
    order: Vec<Tensor>,
}

impl Tape {
    pub fn from_root(root: &Tensor) -> Self {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        // Iterative post-order DFS; (node, inputs-expanded) pairs.
        let mut stack = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !t.requires_grad() || !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(op) = &t.0.op {
                for inp in op.inputs.iter().rev() {
                    if inp.requires_grad() && !visited.contains(&inp.id()) {
                        stack.push((inp.clone(), false));
                    }
                }
            }
        }
        Tape { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn nodes(&self) -> &[Tensor] {
        &self.order
    }

    /// Names of the recorded operations in execution order (leaves skipped).
    pub fn op_names(&self) -> Vec<&'static str> {
        self.order.iter().filter_map(|t| t.op_name()).collect()
    }

    /// Propagates `seed` (gradient of the root) back through the tape and
    /// accumulates into every leaf that requires gradients.
    pub fn backward(&self, seed: Vec<Real>) -> Result<()> {
        let root = match self.order.last() {
            Some(r) => r,
            None => return Ok(()),
        };
        if seed.len() != root.numel() {
            return Err(dim_err!(
                "seed has {} elements, root has {}",
                seed.len(),
                root.numel()
            ));
        }
        let mut grads: HashMap<u64, Vec<Real>> = HashMap::new();
        grads.insert(root.id(), seed);
        for node in self.order.iter().rev() {
            let g = match grads.remove(&node.id()) {
                Some(g) => g,
                None => continue,
            };
            let op = match &node.0.op {
                Some(op) => op,
                None => {
                    node.accumulate_grad(&g);
                    continue;
                }
            };
            let ctx = BackwardCtx {
                inputs: &op.inputs,
                output: node,
                grad: &g,
            };
            let input_grads = (op.backward)(&ctx)?;
            if input_grads.len() != op.inputs.len() {
                return Err(contract_err!(
                    "{}: backward returned {} gradients for {} inputs",
                    op.name,
                    input_grads.len(),
                    op.inputs.len()
                ));
            }
            for (inp, ig) in op.inputs.iter().zip(input_grads) {
                let ig = match ig {
                    Some(ig) if inp.requires_grad() => ig,
                    _ => continue,
                };
                if ig.len() != inp.numel() {
                    return Err(contract_err!(
                        "{}: gradient of length {} for input of shape {:?}",
                        op.name,
                        ig.len(),
                        inp.shape()
                    ));
                }
                match grads.get_mut(&inp.id()) {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += *b),
                    None => {
                        grads.insert(inp.id(), ig);
                    }
                }
            }
        }
        Ok(())
    }
}

impl Tensor {
    /// Reverse-mode pass from a scalar root. Leaf gradients accumulate
    /// across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.rank() != 0 {
            return Err(contract_err!(
                "backward needs a scalar root of shape [], got {:?}",
                self.shape()
            ));
        }
        if !self.requires_grad() {
            return Err(contract_err!("backward root is not on the tape"));
        }
        Tape::from_root(self).backward(vec![1.0])
    }
}
