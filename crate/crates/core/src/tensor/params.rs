use super::{Real, Tensor};
use crate::error::{Error, Result};

/// A named trainable tensor tagged with the decoder layer it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T = f32> {
    pub name: String,
    pub layer: usize,
    pub tensor: Tensor<T>,
}

/// Ordered collection of trainable tensors. Names are unique and iteration
/// follows insertion order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T = f32> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, layer: usize, mut tensor: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        tensor.set_requires_grad(true);
        self.params.push(Param { name, layer, tensor });
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get_index(&self, i: usize) -> Option<&Param<T>> {
        self.params.get(i)
    }

    pub fn get_index_mut(&mut self, i: usize) -> Option<&mut Param<T>> {
        self.params.get_mut(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Distinct layer indices in ascending order.
    pub fn layers(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.params.iter().map(|p| p.layer).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    layer: p.layer,
                    tensor: p.tensor.cast(),
                })
                .collect(),
        }
    }

    /// True when names, layers, shapes and values agree bit for bit.
    pub fn same_values(&self, other: &ParamStore<T>) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.layer == b.layer
                    && a.tensor.shape() == b.tensor.shape()
                    && a.tensor
                        .data()
                        .iter()
                        .zip(b.tensor.data())
                        .all(|(x, y)| x.to_bits_eq(*y))
            })
    }
}

trait BitsEq {
    fn to_bits_eq(self, other: Self) -> bool;
}

impl<T: Real> BitsEq for T {
    fn to_bits_eq(self, other: Self) -> bool {
        // Bitwise for every finite value; NaN never occurs in a store.
        self == other && self.is_sign_negative() == other.is_sign_negative()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_order_is_kept() {
        let mut s = ParamStore::<f32>::new();
        s.insert("b", 2, Tensor::zeros(&[1])).unwrap();
        s.insert("a", 1, Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("a", 3, Tensor::zeros(&[1])).is_err());
        let names: Vec<_> = s.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["b", "a"]);
        assert_eq!(s.layers(), vec![1, 2]);
        assert_eq!(s.num_scalars(), 3);
        assert!(s.iter().all(|p| p.tensor.requires_grad()));
    }
}
