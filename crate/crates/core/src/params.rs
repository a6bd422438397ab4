//! Flat parameter vectors with a named segment layout.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub dims: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Layout {
    segments: Vec<Segment>,
    total: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: &[usize]) {
        let seg = Segment {
            name: name.into(),
            offset: self.total,
            dims: dims.to_vec(),
        };
        self.total += seg.len();
        self.segments.push(seg);
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// All trainable parameters of a model as one contiguous vector.
///
/// The layout is shared, so clones of a parameter vector (ω and its
/// episode copy θ) are cheap to compare for compatibility.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f32>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.total()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f32>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::Shape {
                op: "ParamVector::from_values",
                expected: vec![layout.total()],
                actual: vec![values.len()],
            });
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment_values(&self, name: &str) -> Option<&[f32]> {
        self.layout
            .segment(name)
            .map(|s| &self.values[s.offset..s.offset + s.len()])
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub(crate) fn check_layout(&self, other: &ParamVector, op: &'static str) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Layout(op))
        }
    }

    /// Segment tensors, in layout order.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.layout
            .segments()
            .iter()
            .map(|s| {
                Tensor::new(&s.dims, self.values[s.offset..s.offset + s.len()].to_vec())
                    .expect("segment dims match layout")
            })
            .collect()
    }

    /// Records every segment as a parameter leaf on `tape`.
    pub fn record(&self, tape: &mut Tape) -> BoundParams {
        let vars = self.tensors().into_iter().map(|t| tape.param(t)).collect();
        BoundParams {
            layout: Arc::clone(&self.layout),
            vars,
        }
    }

    /// Elementwise mean of equally laid out vectors.
    pub fn mean(items: &[ParamVector]) -> Result<ParamVector> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("mean of an empty set of parameter vectors"))?;
        let mut acc = vec![0.0f64; first.len()];
        for p in items {
            first.check_layout(p, "ParamVector::mean")?;
            acc.iter_mut().zip(&p.values).for_each(|(a, &v)| *a += v as f64);
        }
        let n = items.len() as f64;
        Ok(ParamVector {
            layout: Arc::clone(&first.layout),
            values: acc.into_iter().map(|v| (v / n) as f32).collect(),
        })
    }
}

/// Parameter segments recorded on a tape.
pub struct BoundParams {
    layout: Arc<Layout>,
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.layout
            .segments()
            .iter()
            .position(|s| s.name == name)
            .map(|i| self.vars[i])
    }

    /// Gathers the gradients of every segment into a flat vector.
    pub fn gradient(&self, grads: &mut Gradients) -> ParamVector {
        let mut values = Vec::with_capacity(self.layout.total());
        for &v in &self.vars {
            let g = grads.take(v).expect("parameter leaf has a gradient");
            values.extend_from_slice(g.data());
        }
        ParamVector {
            layout: Arc::clone(&self.layout),
            values,
        }
    }
}
