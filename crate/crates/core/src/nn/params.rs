use sha2::{Digest, Sha256};

use super::Scalar;

/// A named, shaped weight array.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Ordered collection of a network's weights.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    /// Appends a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) -> usize {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        self.params.push(Param {
            name: name.into(),
            shape,
            data,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &[T] {
        &self.params[idx].data
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut [T] {
        &mut self.params[idx].data
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads(
            self.params
                .iter()
                .map(|p| vec![T::zero(); p.data.len()])
                .collect(),
        )
    }

    /// SHA-256 over names, shapes and little-endian `f32` weights.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for d in &p.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &p.data {
                h.update(v.as_f32().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::lit(v.to_f64().unwrap())).collect(),
                })
                .collect(),
        }
    }
}

/// Gradient buffers aligned index-for-index with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T>(pub Vec<Vec<T>>);

impl<T: Scalar> Grads<T> {
    pub fn get_mut(&mut self, idx: usize) -> &mut [T] {
        &mut self.0[idx]
    }

    pub fn get(&self, idx: usize) -> &[T] {
        &self.0[idx]
    }

    /// Mutable access to two distinct buffers at once.
    pub fn pair_mut(&mut self, a: usize, b: usize) -> (&mut [T], &mut [T]) {
        assert_ne!(a, b);
        if a < b {
            let (lo, hi) = self.0.split_at_mut(b);
            (&mut lo[a], &mut hi[0])
        } else {
            let (lo, hi) = self.0.split_at_mut(a);
            (&mut hi[0], &mut lo[b])
        }
    }

    pub fn scale(&mut self, s: T) {
        self.0.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn fill_zero(&mut self) {
        self.0.iter_mut().flatten().for_each(|g| *g = T::zero());
    }
}
