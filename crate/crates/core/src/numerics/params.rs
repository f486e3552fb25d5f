use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Named parameter tensors in a fixed order. The order is the checkpoint
/// order and the gradient-reduction order, so it must stay stable.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.entries.push((name.into(), value));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn set_value(&mut self, i: usize, value: Tensor) {
        debug_assert_eq!(self.entries[i].1.shape(), value.shape());
        self.entries[i].1 = value;
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Rebuild from (name, tensor) pairs, e.g. a loaded checkpoint, matching
    /// this set's names and shapes.
    pub fn load_from(&mut self, loaded: &[(String, Tensor)]) -> Result<()> {
        for (name, value) in loaded {
            let slot = self
                .entries
                .iter_mut()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Data(format!("unknown parameter {name} in checkpoint")))?;
            if slot.1.shape() != value.shape() {
                return Err(Error::shape(
                    format!("parameter {name}"),
                    slot.1.shape(),
                    value.shape(),
                ));
            }
            slot.1 = value.clone();
        }
        Ok(())
    }
}
