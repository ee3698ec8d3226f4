//! Named parameter tensors, their canonical flat layout, and delta arithmetic.
//!
//! A [`ParamSet`] is the model as the learners see it; a [`FlatVector`] plus
//! its [`LayoutManifest`] is the same model as the privacy filters, the HE
//! packer and the aggregator see it. Flattening concatenates entries in
//! declaration order, row-major within each tensor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("tensor `{name}`: shape {shape:?} holds {expected} values, got {actual}")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("tensor `{0}` has a zero-sized dimension")]
    EmptyDimension(String),
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("flat vector has {actual} values, layout expects {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("parameter layouts differ")]
    LayoutMismatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Ordered, uniquely named set of parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Tensor>", into = "Vec<Tensor>")]
pub struct ParamSet {
    entries: Vec<Tensor>,
}

impl ParamSet {
    pub fn new(entries: Vec<Tensor>) -> Result<Self, ParamError> {
        for (i, t) in entries.iter().enumerate() {
            if t.shape.iter().any(|&d| d == 0) {
                return Err(ParamError::EmptyDimension(t.name.clone()));
            }
            let expected: usize = t.shape.iter().product();
            if expected != t.values.len() {
                return Err(ParamError::ShapeMismatch {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    expected,
                    actual: t.values.len(),
                });
            }
            if entries[..i].iter().any(|o| o.name == t.name) {
                return Err(ParamError::DuplicateName(t.name.clone()));
            }
        }
        Ok(ParamSet { entries })
    }

    /// Convenience constructor from `(name, shape, values)` triples.
    pub fn from_parts<S: Into<String>>(
        parts: impl IntoIterator<Item = (S, Vec<usize>, Vec<f64>)>,
    ) -> Result<Self, ParamError> {
        Self::new(
            parts
                .into_iter()
                .map(|(name, shape, values)| Tensor {
                    name: name.into(),
                    shape,
                    values,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[Tensor] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|t| t.name == name)
    }

    /// Total scalar count.
    pub fn len(&self) -> usize {
        self.entries.iter().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn manifest(&self) -> LayoutManifest {
        let mut offset = 0;
        let entries = self
            .entries
            .iter()
            .map(|t| {
                let e = LayoutEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += t.len();
                e
            })
            .collect();
        LayoutManifest { entries }
    }

    /// True when both sets have the same names and shapes in the same order.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|t| t.values.iter().all(|v| v.is_finite()))
    }
}

impl TryFrom<Vec<Tensor>> for ParamSet {
    type Error = ParamError;

    fn try_from(entries: Vec<Tensor>) -> Result<Self, Self::Error> {
        ParamSet::new(entries)
    }
}

impl From<ParamSet> for Vec<Tensor> {
    fn from(p: ParamSet) -> Self {
        p.entries
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Where each named tensor lives inside a flat vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutManifest {
    entries: Vec<LayoutEntry>,
}

impl LayoutManifest {
    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn total_len(&self) -> usize {
        self.entries.last().map_or(0, |e| e.offset + e.len())
    }
}

/// Canonical flattened parameters or parameter deltas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlatVector(pub Vec<f64>);

impl FlatVector {
    pub fn zeros(n: usize) -> Self {
        FlatVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> FlatVector {
        FlatVector(self.0.iter().map(|v| v * factor).collect())
    }
}

impl From<Vec<f64>> for FlatVector {
    fn from(v: Vec<f64>) -> Self {
        FlatVector(v)
    }
}

pub fn flatten(params: &ParamSet) -> (FlatVector, LayoutManifest) {
    let mut flat = Vec::with_capacity(params.len());
    for t in &params.entries {
        flat.extend_from_slice(&t.values);
    }
    (FlatVector(flat), params.manifest())
}

pub fn unflatten(flat: &FlatVector, manifest: &LayoutManifest) -> Result<ParamSet, ParamError> {
    let expected = manifest.total_len();
    if flat.len() != expected {
        return Err(ParamError::LengthMismatch {
            expected,
            actual: flat.len(),
        });
    }
    let entries = manifest
        .entries
        .iter()
        .map(|e| Tensor {
            name: e.name.clone(),
            shape: e.shape.clone(),
            values: flat.0[e.range()].to_vec(),
        })
        .collect();
    Ok(ParamSet { entries })
}

/// Elementwise `after - before`.
pub fn compute_delta(after: &ParamSet, before: &ParamSet) -> Result<ParamSet, ParamError> {
    if !after.same_layout(before) {
        return Err(ParamError::LayoutMismatch);
    }
    let entries = after
        .entries
        .iter()
        .zip(&before.entries)
        .map(|(a, b)| Tensor {
            name: a.name.clone(),
            shape: a.shape.clone(),
            values: a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect(),
        })
        .collect();
    Ok(ParamSet { entries })
}

/// `base + unflatten(delta)`.
pub fn apply_update(
    base: &ParamSet,
    delta: &FlatVector,
    manifest: &LayoutManifest,
) -> Result<ParamSet, ParamError> {
    if *manifest != base.manifest() {
        return Err(ParamError::LayoutMismatch);
    }
    let d = unflatten(delta, manifest)?;
    let entries = base
        .entries
        .iter()
        .zip(&d.entries)
        .map(|(b, d)| Tensor {
            name: b.name.clone(),
            shape: b.shape.clone(),
            values: b.values.iter().zip(&d.values).map(|(x, y)| x + y).collect(),
        })
        .collect();
    Ok(ParamSet { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wb() -> ParamSet {
        ParamSet::from_parts([("w", vec![2], vec![1.0, 2.0]), ("b", vec![1], vec![3.0])]).unwrap()
    }

    #[test]
    fn flatten_concatenates_in_entry_order() {
        let (flat, m) = flatten(&wb());
        assert_eq!(flat.0, vec![1.0, 2.0, 3.0]);
        let offsets: Vec<_> = m.entries().iter().map(|e| (e.name.as_str(), e.offset)).collect();
        assert_eq!(offsets, vec![("w", 0), ("b", 2)]);
        assert_eq!(m.total_len(), 3);
    }

    #[test]
    fn construction_rejects_bad_sets() {
        assert!(matches!(
            ParamSet::from_parts([("w", vec![2, 2], vec![1.0; 3])]),
            Err(ParamError::ShapeMismatch { expected: 4, actual: 3, .. })
        ));
        assert!(matches!(
            ParamSet::from_parts([("w", vec![1], vec![1.0]), ("w", vec![1], vec![2.0])]),
            Err(ParamError::DuplicateName(_))
        ));
        assert!(matches!(
            ParamSet::from_parts([("w", vec![0], vec![])]),
            Err(ParamError::EmptyDimension(_))
        ));
    }

    #[test]
    fn unflatten_rejects_length_mismatch() {
        let m = ParamSet::from_parts([("w", vec![66], vec![0.0; 66])]).unwrap().manifest();
        assert_eq!(
            unflatten(&FlatVector::zeros(65), &m),
            Err(ParamError::LengthMismatch { expected: 66, actual: 65 })
        );
    }

    #[test]
    fn delta_and_update_arithmetic() {
        let after = ParamSet::from_parts([("w", vec![2], vec![2.0, 5.0])]).unwrap();
        let before = ParamSet::from_parts([("w", vec![2], vec![1.0, 3.0])]).unwrap();
        assert_eq!(compute_delta(&after, &before).unwrap().entries()[0].values, vec![1.0, 2.0]);
        let zero = compute_delta(&after, &after).unwrap();
        assert!(zero.entries()[0].values.iter().all(|v| *v == 0.0));

        let base = ParamSet::from_parts([("w", vec![2], vec![1.0, 1.0])]).unwrap();
        let m = base.manifest();
        let up = apply_update(&base, &FlatVector(vec![0.5, -0.5]), &m).unwrap();
        assert_eq!(up.entries()[0].values, vec![1.5, 0.5]);
        assert_eq!(apply_update(&base, &FlatVector::zeros(2), &m).unwrap(), base);
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let a = ParamSet::from_parts([("w", vec![2], vec![1.0, 1.0])]).unwrap();
        let b = ParamSet::from_parts([("v", vec![2], vec![1.0, 1.0])]).unwrap();
        assert_eq!(compute_delta(&a, &b), Err(ParamError::LayoutMismatch));
        assert_eq!(
            apply_update(&a, &FlatVector::zeros(2), &b.manifest()),
            Err(ParamError::LayoutMismatch)
        );
    }

    #[test]
    fn json_rejects_invalid_sets() {
        let bad = r#"[{"name":"w","shape":[2],"values":[1.0]}]"#;
        assert!(serde_json::from_str::<ParamSet>(bad).is_err());
        let good = serde_json::to_string(&wb()).unwrap();
        assert_eq!(serde_json::from_str::<ParamSet>(&good).unwrap(), wb());
    }

    fn arb_paramset() -> impl Strategy<Value = (ParamSet, ParamSet)> {
        prop::collection::vec(prop::collection::vec(1usize..4, 1..3), 1..5).prop_flat_map(|shapes| {
            let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
            let total: usize = sizes.iter().sum();
            (
                Just(shapes),
                prop::collection::vec(-1e3f64..1e3, total),
                prop::collection::vec(-1e3f64..1e3, total),
            )
                .prop_map(|(shapes, a, b)| {
                    let build = |vals: &[f64]| {
                        let mut off = 0;
                        let parts: Vec<_> = shapes
                            .iter()
                            .enumerate()
                            .map(|(i, s)| {
                                let n: usize = s.iter().product();
                                let v = vals[off..off + n].to_vec();
                                off += n;
                                (format!("t{i}"), s.clone(), v)
                            })
                            .collect();
                        ParamSet::from_parts(parts).unwrap()
                    };
                    (build(&a), build(&b))
                })
        })
    }

    proptest! {
        #[test]
        fn flatten_roundtrip_is_exact((p, _) in arb_paramset()) {
            let (flat, m) = flatten(&p);
            let back = unflatten(&flat, &m).unwrap();
            prop_assert_eq!(&back, &p);
            for (a, b) in flatten(&back).0 .0.iter().zip(&flat.0) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn delta_then_apply_recovers_after((after, before) in arb_paramset()) {
            let d = compute_delta(&after, &before).unwrap();
            let (flat_d, m) = flatten(&d);
            let back = apply_update(&before, &flat_d, &m).unwrap();
            // (a - b) + b is not always bitwise a in floating point; it is
            // within a couple of ulps of the larger operand.
            let (fb, fa, f0) = (flatten(&back).0, flatten(&after).0, flatten(&before).0);
            for ((x, y), z) in fb.0.iter().zip(&fa.0).zip(&f0.0) {
                let tol = f64::EPSILON * y.abs().max(z.abs()) * 2.0;
                prop_assert!((x - y).abs() <= tol, "{} vs {}", x, y);
            }
        }
    }
}
