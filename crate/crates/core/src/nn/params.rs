use crate::error::{EsilError, Result};

/// A named, contiguous slice of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Flat view of a set of trainable parameters together with the layout that
/// maps each range back to the layer it came from.
///
/// Optimizer steps, checkpoints and cross-worker gradient reduction all work
/// on this representation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParamVector {
    /// Builds a vector from values and a layout. The layout segments must tile
    /// `values` exactly, in order.
    pub fn new(values: Vec<f64>, layout: Vec<Segment>) -> Result<Self> {
        let mut cursor = 0;
        for seg in &layout {
            if seg.offset != cursor {
                return Err(EsilError::dim("parameter layout offset", cursor, seg.offset));
            }
            cursor += seg.len;
        }
        if cursor != values.len() {
            return Err(EsilError::dim("parameter layout length", cursor, values.len()));
        }
        Ok(Self { values, layout })
    }

    /// Concatenates named blocks into one vector.
    pub fn from_blocks<'a, I>(blocks: I) -> Self
    where
        I: IntoIterator<Item = (String, &'a [f64])>,
    {
        let mut values = Vec::new();
        let mut layout = Vec::new();
        for (name, block) in blocks {
            layout.push(Segment {
                name,
                offset: values.len(),
                len: block.len(),
            });
            values.extend_from_slice(block);
        }
        Self { values, layout }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(EsilError::dim("parameter values", self.values.len(), values.len()));
        }
        Ok(Self {
            values,
            layout: self.layout.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    /// Name of the segment holding flat index `index`.
    pub fn segment_name_of(&self, index: usize) -> &str {
        self.layout
            .iter()
            .find(|s| index >= s.offset && index < s.offset + s.len)
            .map(|s| s.name.as_str())
            .unwrap_or("<out of range>")
    }

    /// Returns `(segment, index within the flat vector)` of the first
    /// non-finite entry.
    pub fn first_non_finite(&self) -> Option<(String, usize)> {
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| (self.segment_name_of(i).to_string(), i))
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        match self.first_non_finite() {
            Some((segment, index)) => Err(EsilError::NonFinite {
                what,
                segment,
                index,
            }),
            None => Ok(()),
        }
    }

    /// FNV-1a over the raw bit patterns. Used to compare parameter sets for
    /// exact equality across workers and runs.
    pub fn checksum(&self) -> u64 {
        checksum_f64(&self.values)
    }
}

pub fn checksum_f64(values: &[f64]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
    }
    hash
}
