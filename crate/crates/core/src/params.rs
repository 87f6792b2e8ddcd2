//! Named parameter storage with group tags.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameter groups reported separately in parameter counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    /// Patch transformer plus the two projection networks.
    AlignEncoder,
    ImageEncoder,
    Decoder,
    /// Projections from encoder widths to the decoder width.
    Bridge,
    /// Frozen teacher weights (never part of a student store).
    Teacher,
    /// Source-side encoder of the text-only warm-start translator.
    TextEncoder,
}

impl Group {
    pub const STUDENT: [Group; 4] = [Group::AlignEncoder, Group::ImageEncoder, Group::Decoder, Group::Bridge];

    pub fn name(self) -> &'static str {
        match self {
            Group::AlignEncoder => "align_encoder",
            Group::ImageEncoder => "image_encoder",
            Group::Decoder => "decoder",
            Group::Bridge => "bridge",
            Group::Teacher => "teacher",
            Group::TextEncoder => "text_encoder",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Matrix,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, group: Group, value: Matrix) -> ParamId {
        debug_assert!(self.find(name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name: name.to_string(), group, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn group(&self, id: ParamId) -> Group {
        self.params[id.0].group
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn count_group(&self, group: Group) -> usize {
        self.params.iter().filter(|p| p.group == group).map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Matrix> {
        self.params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Copies every value from `other`, which must list the same names,
    /// groups and shapes in the same order.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<(), crate::Error> {
        if self.params.len() != other.params.len() {
            return Err(crate::Error::LengthMismatch { expected: self.params.len(), found: other.params.len() });
        }
        for (mine, theirs) in self.params.iter().zip(&other.params) {
            if mine.name != theirs.name || mine.group != theirs.group {
                return Err(crate::Error::InvalidConfig(alloc::format!(
                    "parameter {} does not match stored {}",
                    mine.name, theirs.name
                )));
            }
            if mine.value.shape() != theirs.value.shape() {
                return Err(crate::Error::ShapeMismatch {
                    what: "stored parameter",
                    expected: mine.value.shape(),
                    found: theirs.value.shape(),
                });
            }
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            mine.value = theirs.value.clone();
        }
        Ok(())
    }

    /// Fingerprint over names, shapes and exact bit patterns (FNV-1a).
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        for p in &self.params {
            h.write(p.name.as_bytes());
            h.write(&(p.value.rows() as u64).to_le_bytes());
            h.write(&(p.value.cols() as u64).to_le_bytes());
            for v in p.value.as_slice() {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }
}

/// 64-bit FNV-1a.
pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

/// Seeded initializers. Weight matrices are drawn from `N(0, std²)`;
/// biases start at zero and normalisation gains at one.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    pub fn normal(&mut self, rows: usize, cols: usize, std: f64) -> Matrix {
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..rows * cols).map(|_| dist.sample(&mut self.rng)).collect();
        Matrix::from_vec(rows, cols, data)
    }

    /// Scaled so `x · W` preserves activation variance for unit inputs.
    pub fn fan_in(&mut self, rows: usize, cols: usize) -> Matrix {
        self.normal(rows, cols, 1.0 / libm::sqrt(rows as f64))
    }

    pub fn uniform_u64(&mut self) -> u64 {
        self.rng.random()
    }
}
