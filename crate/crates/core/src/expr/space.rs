use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::ExprError;

/// A named block of scalar variables, e.g. `x` with dimension `n1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub dim: usize,
}

/// Ordered list of variable blocks. Scalar variables are laid out block by
/// block, so a point in the space is a flat `&[f64]`.
///
/// A block of dimension one exposes a single scalar named after the block.
/// Larger blocks expose `x1, x2, ...`, or `q1_1, q1_2, ...` when the block
/// name already ends in a digit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarSpace {
    blocks: Vec<Block>,
    names: Vec<String>,
}

impl VarSpace {
    pub fn new<S: Into<String>>(blocks: impl IntoIterator<Item = (S, usize)>) -> Result<Self, ExprError> {
        let blocks: Vec<Block> = blocks
            .into_iter()
            .map(|(name, dim)| Block { name: name.into(), dim })
            .collect();
        for (i, b) in blocks.iter().enumerate() {
            if b.dim == 0 {
                return Err(ExprError::InvalidSpace(format!("block `{}` has dimension 0", b.name)));
            }
            if blocks[..i].iter().any(|o| o.name == b.name) {
                return Err(ExprError::InvalidSpace(format!("duplicate block `{}`", b.name)));
            }
        }
        let names = blocks
            .iter()
            .flat_map(|b| (0..b.dim).map(move |k| scalar_name(&b.name, b.dim, k)))
            .collect::<Vec<_>>();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(ExprError::InvalidSpace(format!("scalar name `{n}` is ambiguous")));
            }
        }
        Ok(Self { blocks, names })
    }

    /// Total number of scalar variables.
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn block_range(&self, name: &str) -> Option<Range<usize>> {
        let mut start = 0;
        for b in &self.blocks {
            if b.name == name {
                return Some(start..start + b.dim);
            }
            start += b.dim;
        }
        None
    }

    pub fn block_dim(&self, name: &str) -> Option<usize> {
        self.block_range(name).map(|r| r.len())
    }
}

pub(crate) fn scalar_name(block: &str, dim: usize, k: usize) -> String {
    if dim == 1 {
        block.to_string()
    } else if block.ends_with(|c: char| c.is_ascii_digit()) {
        format!("{block}_{}", k + 1)
    } else {
        format!("{block}{}", k + 1)
    }
}
