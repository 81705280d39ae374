use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contiguous window into the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub offset: usize,
    pub len: usize,
}

impl Slice {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }

    /// Sub-window relative to this slice.
    pub fn sub(&self, start: usize, len: usize) -> Slice {
        assert!(start + len <= self.len, "sub-slice out of range");
        Slice { offset: self.offset + start, len }
    }
}

/// Named slices over a flat parameter vector, appended in order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    entries: Vec<(String, Slice)>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, len: usize) -> Slice {
        let s = Slice { offset: self.total, len };
        self.entries.push((name.into(), s));
        self.total += len;
        s
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn entries(&self) -> &[(String, Slice)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<Slice> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }

    /// Slices must be disjoint, in order, and cover `[0, len)` exactly.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for (name, s) in &self.entries {
            if s.offset != next {
                return Err(Error::InvalidArgument(format!("slice {name} starts at {} not {next}", s.offset)));
            }
            next = s.offset + s.len;
        }
        if next != self.total {
            return Err(Error::InvalidArgument(format!("layout covers {next} of {}", self.total)));
        }
        Ok(())
    }
}

/// All learnable parameters as one flat vector plus its layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParamStore {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self { values: vec![0.0; layout.len()], layout }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, s: Slice) -> &[f64] {
        &self.values[s.range()]
    }

    pub fn slice_mut(&mut self, s: Slice) -> &mut [f64] {
        &mut self.values[s.range()]
    }

    pub fn named(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|s| self.slice(s))
    }
}
