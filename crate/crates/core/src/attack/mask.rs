use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize};

use super::AttackError;
use crate::instances::{Instance, SizeBounds};

/// Per-item perturbation over {-1, 0, +1}, applied once to an original instance.
#[derive(Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Mask(Vec<i8>);

impl Mask {
    pub fn new(entries: Vec<i8>) -> Result<Self, AttackError> {
        if let Some(j) = entries.iter().position(|e| !(-1..=1).contains(e)) {
            return Err(AttackError::InvalidMask(format!(
                "entry {j} is {}, expected -1, 0 or 1",
                entries[j]
            )));
        }
        Ok(Mask(entries))
    }

    pub fn zeros(len: usize) -> Self {
        Mask(vec![0; len])
    }

    /// All zeros, then each element independently replaced with probability
    /// `p_init` by a uniform draw from {-1, 0, +1}. The draw may be 0.
    pub fn random_init(len: usize, p_init: f64, rng: &mut impl Rng) -> Self {
        Mask(
            (0..len)
                .map(|_| if rng.random_bool(p_init) { random_entry(rng) } else { 0 })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[i8] {
        &self.0
    }

    pub fn nonzero_count(&self) -> usize {
        self.0.iter().filter(|&&e| e != 0).count()
    }

    /// Swaps the tails `[cut..]` of two equal-length masks.
    pub(crate) fn swap_tails(a: &mut Mask, b: &mut Mask, cut: usize) {
        a.0[cut..].swap_with_slice(&mut b.0[cut..]);
    }

    /// Resamples each entry with probability `rate`.
    pub(crate) fn mutate(&mut self, rate: f64, rng: &mut impl Rng) {
        for e in &mut self.0 {
            if rng.random_bool(rate) {
                *e = random_entry(rng);
            }
        }
    }

    /// Writes the clipped perturbation of `items` into `out`.
    pub(crate) fn apply_into(&self, items: &[u32], bounds: SizeBounds, out: &mut Vec<u32>) {
        out.clear();
        out.extend(
            items
                .iter()
                .zip(&self.0)
                .map(|(&s, &d)| bounds.clamp(s as i64 + d as i64)),
        );
    }
}

pub(crate) fn random_entry(rng: &mut impl Rng) -> i8 {
    rng.random_range(-1i8..=1)
}

impl<'de> Deserialize<'de> for Mask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let entries = Vec::<i8>::deserialize(d)?;
        Mask::new(entries).map_err(serde::de::Error::custom)
    }
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Mask[")?;
        for e in &self.0 {
            f.write_str(match e {
                -1 => "-",
                0 => "0",
                _ => "+",
            })?;
        }
        f.write_str("]")
    }
}

/// Perturbs `instance` by `mask`, clipping each item to `bounds`. The input is
/// left untouched and the result keeps its id and item order.
pub fn apply_mask(instance: &Instance, mask: &Mask, bounds: SizeBounds) -> Result<Instance, AttackError> {
    if instance.items.len() != mask.len() {
        return Err(AttackError::LengthMismatch {
            instance: instance.items.len(),
            mask: mask.len(),
        });
    }
    let mut items = Vec::with_capacity(mask.len());
    mask.apply_into(&instance.items, bounds, &mut items);
    Ok(Instance::new(instance.id.clone(), items))
}
