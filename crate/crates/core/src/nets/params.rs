use std::fmt;

use ndarray::{ArrayView1, ArrayView2, ArrayView4};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Which network a parameter tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NetId {
    /// Feature extractor.
    F,
    /// Attention layer.
    AL,
    /// Gaze predictor.
    G,
    /// Intervention classifier.
    C,
}

impl fmt::Display for NetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NetId::F => "F",
            NetId::AL => "AL",
            NetId::G => "G",
            NetId::C => "C",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
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

/// All parameters of one network in a single flat buffer, with named views.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    owner: NetId,
    specs: Vec<TensorSpec>,
    values: Vec<f64>,
}

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

impl ParamStore {
    pub fn new(owner: NetId) -> Self {
        ParamStore { owner, specs: Vec::new(), values: Vec::new() }
    }

    pub fn owner(&self) -> NetId {
        self.owner
    }

    /// Register a tensor filled with `init` values (length must match shape).
    pub fn add(&mut self, name: &str, shape: &[usize], init: Vec<f64>) -> TensorId {
        let spec = TensorSpec {
            name: format!("{}.{name}", self.owner),
            shape: shape.to_vec(),
            offset: self.values.len(),
        };
        assert_eq!(init.len(), spec.len(), "init length for {}", spec.name);
        self.values.extend(init);
        self.specs.push(spec);
        TensorId(self.specs.len() - 1)
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn spec(&self, id: TensorId) -> &TensorSpec {
        &self.specs[id.0]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, id: TensorId) -> &[f64] {
        &self.values[self.specs[id.0].range()]
    }

    pub fn view1(&self, id: TensorId) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.slice(id))
    }

    pub fn view2(&self, id: TensorId) -> ArrayView2<'_, f64> {
        let s = &self.specs[id.0].shape;
        ArrayView2::from_shape((s[0], s[1..].iter().product()), self.slice(id))
            .expect("tensor shape matches its length")
    }

    pub fn view4(&self, id: TensorId) -> ArrayView4<'_, f64> {
        let s = &self.specs[id.0].shape;
        ArrayView4::from_shape((s[0], s[1], s[2], s[3]), self.slice(id))
            .expect("tensor shape matches its length")
    }

    /// Hex SHA-256 over the little-endian parameter bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
