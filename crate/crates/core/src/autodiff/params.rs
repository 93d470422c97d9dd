use serde::{Deserialize, Serialize};

use super::AutodiffError;

/// A named, contiguous region of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Matrix view of the block: 2-D shapes map directly, 1-D shapes become a
    /// single row, scalars become 1×1.
    pub fn matrix_shape(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            dims => (dims[0], dims[1..].iter().product()),
        }
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat vector of learnable parameters plus its block layout.
///
/// Blocks are laid out back to back in insertion order, so offsets are
/// contiguous and the total length is the sum of block sizes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<ParamBlock>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block and returns a copy of its descriptor.
    pub fn push(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        values: &[f64],
    ) -> Result<ParamBlock, AutodiffError> {
        let name = name.into();
        let len: usize = shape.iter().product();
        if values.len() != len {
            return Err(AutodiffError::ShapeMismatch(format!(
                "block `{name}` has shape {shape:?} ({len} values) but {} values were given",
                values.len()
            )));
        }
        if self.layout.iter().any(|b| b.name == name) {
            return Err(AutodiffError::DuplicateBlock(name));
        }
        let block = ParamBlock {
            name,
            offset: self.values.len(),
            shape: shape.to_vec(),
        };
        self.values.extend_from_slice(values);
        self.layout.push(block.clone());
        Ok(block)
    }

    /// Builds a vector with a single unnamed block covering `values`.
    pub fn from_flat(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            layout: vec![ParamBlock {
                name: "flat".into(),
                offset: 0,
                shape: vec![n],
            }],
            values,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[ParamBlock] {
        &self.layout
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.layout.iter().find(|b| b.name == name)
    }

    pub fn block_values(&self, name: &str) -> Option<&[f64]> {
        self.block(name).map(|b| &self.values[b.range()])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Returns a copy with the same layout and new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, AutodiffError> {
        if values.len() != self.values.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "expected {} values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        Ok(Self {
            values,
            layout: self.layout.clone(),
        })
    }

    /// Checks that offsets are contiguous, non-overlapping and cover the
    /// whole vector.
    pub fn validate(&self) -> Result<(), AutodiffError> {
        let mut expected = 0;
        for b in &self.layout {
            if b.offset != expected {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "block `{}` starts at {} but previous block ends at {expected}",
                    b.name, b.offset
                )));
            }
            expected += b.len();
        }
        if expected != self.values.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "layout covers {expected} values but vector holds {}",
                self.values.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_contiguous() {
        let mut p = ParamVector::new();
        let a = p.push("a", &[2, 3], &[0.0; 6]).unwrap();
        let b = p.push("b", &[4], &[1.0; 4]).unwrap();
        assert_eq!(a.offset, 0);
        assert_eq!(b.offset, 6);
        assert_eq!(p.len(), 10);
        assert_eq!(a.matrix_shape(), (2, 3));
        assert_eq!(b.matrix_shape(), (1, 4));
        p.validate().unwrap();
        assert_eq!(p.block_values("b").unwrap(), &[1.0; 4]);
    }

    #[test]
    fn rejects_bad_length_and_duplicates() {
        let mut p = ParamVector::new();
        assert!(p.push("a", &[2], &[1.0]).is_err());
        p.push("a", &[1], &[1.0]).unwrap();
        assert!(matches!(
            p.push("a", &[1], &[1.0]),
            Err(AutodiffError::DuplicateBlock(_))
        ));
    }
}
