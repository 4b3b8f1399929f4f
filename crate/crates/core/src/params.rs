//! Named parameter collections and their binding onto a tape.

use adar_tensor::{Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Non-gradient state such as batchnorm running statistics.
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet { entries: Vec::new() }
    }
}

/// Tape handles for one binding of a `ParamSet`; buffers have no handle.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0].expect("buffers are not bound")
    }

    /// Routes parameter `id` to `var` instead of its bound tensor.
    pub fn replace(&mut self, id: ParamId, var: Var) {
        self.vars[id.0] = Some(var);
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            kind,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn trainable(&self) -> impl Iterator<Item = &ParamEntry<T>> {
        self.entries.iter().filter(|e| e.kind == ParamKind::Trainable)
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.trainable().map(|e| e.value.numel()).sum()
    }

    /// Records every trainable tensor on the tape, as a leaf when
    /// `requires_grad` is set and as a constant otherwise.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| match e.kind {
                ParamKind::Buffer => None,
                ParamKind::Trainable if requires_grad => Some(tape.leaf(e.value.clone())),
                ParamKind::Trainable => Some(tape.constant(e.value.clone())),
            })
            .collect();
        Bound { vars }
    }

    /// Gradients of every trainable entry, in entry order (zeros where the
    /// loss did not reach a parameter).
    pub fn gradients(&self, tape: &mut Tape<T>, bound: &Bound) -> Vec<Tensor<T>> {
        self.entries
            .iter()
            .zip(&bound.vars)
            .filter(|(e, _)| e.kind == ParamKind::Trainable)
            .map(|(e, v)| {
                v.and_then(|v| tape.take_grad(v))
                    .unwrap_or_else(|| Tensor::zeros(e.value.shape().to_vec()))
            })
            .collect()
    }

    /// Order-sensitive FNV-1a hash over names, shapes and value bits.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::new();
        for e in &self.entries {
            h.write(e.name.as_bytes());
            for &d in e.value.shape() {
                h.write(&(d as u64).to_le_bytes());
            }
            for &v in e.value.data() {
                h.write(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h.finish()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    kind: e.kind,
                })
                .collect(),
        }
    }
}

pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_and_collect_gradients() {
        let mut p = ParamSet::<f64>::new();
        let a = p.add("a", Tensor::full([2], 3.0), ParamKind::Trainable);
        p.add("stats", Tensor::zeros([2, 2]), ParamKind::Buffer);
        let b = p.add("b", Tensor::full([1], 1.0), ParamKind::Trainable);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, true);
        let sq = tape.square(bound.var(a));
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        let g = p.gradients(&mut tape, &bound);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].data(), &[6.0, 6.0]);
        assert_eq!(g[1].data(), &[0.0]);
        let _ = b;
        assert_eq!(p.parameter_count(), 3);
    }

    #[test]
    fn checksum_sees_single_bit_changes() {
        let mut p = ParamSet::<f32>::new();
        let a = p.add("a", Tensor::full([3], 0.25), ParamKind::Trainable);
        let before = p.checksum();
        p.get_mut(a).data_mut()[1] = f32::from_bits(0.25f32.to_bits() + 1);
        assert_ne!(before, p.checksum());
    }
}
