use super::ops::{self, BatchNormCache, Interpolation};
use super::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Param(usize),
    Conv2d { input: Var, weight: Var, bias: Var },
    Upsample { input: Var, mode: Interpolation },
    Relu { input: Var },
    BatchNorm { input: Var, scale: Var, shift: Var, cache: BatchNormCache<T> },
    Mse { input: Var, target: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool, name: &str) -> Result<Var> {
        value.ensure_finite(name)?;
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Constant, false, "constant")
    }

    /// Records the `index`-th entry of `store` as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore<T>, index: usize) -> Result<Var> {
        let p = store
            .get_index(index)
            .ok_or_else(|| Error::invalid(format!("no parameter at index {index}")))?;
        let name = p.name.clone();
        self.push(p.tensor.clone(), Op::Param(index), true, &name)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(weight), self.value(bias))?;
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        self.push(out, Op::Conv2d { input, weight, bias }, needs, "conv2d")
    }

    pub fn upsample(&mut self, input: Var, target: (usize, usize), mode: Interpolation) -> Result<Var> {
        let out = ops::upsample(self.value(input), target, mode)?;
        let needs = self.needs(input);
        self.push(out, Op::Upsample { input, mode }, needs, "upsample")
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = ops::relu(self.value(input));
        let needs = self.needs(input);
        self.push(out, Op::Relu { input }, needs, "relu")
    }

    pub fn batchnorm(&mut self, input: Var, scale: Var, shift: Var, eps: f64) -> Result<Var> {
        let (out, cache) = ops::batchnorm_channels(self.value(input), self.value(scale), self.value(shift), eps)?;
        let needs = self.needs(input) || self.needs(scale) || self.needs(shift);
        self.push(out, Op::BatchNorm { input, scale, shift, cache }, needs, "batchnorm")
    }

    /// Scalar `½‖input − target‖²`.
    pub fn mse(&mut self, input: Var, target: &Tensor<T>) -> Result<Var> {
        let v = ops::mse(self.value(input), target)?;
        let needs = self.needs(input);
        self.push(Tensor::new(&[1], vec![v])?, Op::Mse { input, target: target.clone() }, needs, "mse")
    }

    /// Propagates `seed` (the gradient of some scalar with respect to
    /// `root`) back through the recorded graph.
    pub fn backward(&self, root: Var, seed: Vec<T>) -> Result<Gradients<T>> {
        if seed.len() != self.value(root).numel() {
            return Err(Error::shape(format!(
                "seed gradient of length {} for node of shape {:?}",
                seed.len(),
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);

        fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
            match slot {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Param(_) => {
                    grads[idx] = Some(g);
                }
                Op::Conv2d { input, weight, bias } => {
                    let cg = ops::conv2d_backward(
                        self.value(*input),
                        self.value(*weight),
                        self.value(*bias),
                        &g,
                        self.needs(*input),
                    )?;
                    if let Some(gi) = cg.input {
                        accumulate(&mut grads[input.0], gi);
                    }
                    accumulate(&mut grads[weight.0], cg.weight);
                    accumulate(&mut grads[bias.0], cg.bias);
                }
                Op::Upsample { input, mode } => {
                    let x = self.value(*input);
                    let (c, h, w) = x.chw()?;
                    let (_, th, tw) = node.value.chw()?;
                    let gi = ops::upsample_backward(&g, (c, h, w), (th, tw), *mode)?;
                    accumulate(&mut grads[input.0], gi);
                }
                Op::Relu { input } => {
                    let gi = ops::relu_backward(self.value(*input), &g);
                    accumulate(&mut grads[input.0], gi);
                }
                Op::BatchNorm { input, scale, shift, cache } => {
                    let bg = ops::batchnorm_backward(cache, self.value(*scale), &g);
                    accumulate(&mut grads[input.0], bg.input);
                    accumulate(&mut grads[scale.0], bg.scale);
                    accumulate(&mut grads[shift.0], bg.shift);
                }
                Op::Mse { input, target } => {
                    let upstream = g[0];
                    let gi = ops::mse_backward(self.value(*input), target)
                        .into_iter()
                        .map(|v| v * upstream)
                        .collect();
                    accumulate(&mut grads[input.0], gi);
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Writes the gradients of all parameter leaves into `store`.
    /// Parameters not reached by the graph get a zero gradient.
    pub fn write_param_grads(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) -> Result<()> {
        store.zero_grads();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(p), Some(g)) = (&node.op, grads.grads[idx].as_ref()) {
                let param = store
                    .get_index_mut(*p)
                    .ok_or_else(|| Error::invalid(format!("no parameter at index {p}")))?;
                for (a, &b) in param.tensor.grad.get_or_insert_with(Vec::new).iter_mut().zip(g) {
                    *a += b;
                }
                param.tensor.ensure_grad_finite()?;
            }
        }
        Ok(())
    }
}

impl<T: Real> Tensor<T> {
    fn ensure_grad_finite(&self) -> Result<()> {
        match &self.grad {
            Some(g) if g.iter().any(|v| !v.is_finite()) => {
                Err(Error::NonFinite("parameter gradient".into()))
            }
            _ => Ok(()),
        }
    }
}
