use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Visible/masked assignment over a patch grid. Both index lists are sorted
/// and together partition `0..patch_num`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    visible: Vec<usize>,
    masked: Vec<usize>,
    ratio: f64,
}

/// Number of masked patches: `ratio * patch_num` rounded half up.
pub fn masked_count(patch_num: usize, ratio: f64) -> usize {
    let n = libm::floor(ratio * patch_num as f64 + 0.5) as usize;
    n.min(patch_num)
}

impl MaskSpec {
    /// Everything visible.
    pub fn none(patch_num: usize) -> Self {
        Self {
            visible: (0..patch_num).collect(),
            masked: Vec::new(),
            ratio: 0.0,
        }
    }

    /// Builds a mask from an arbitrary (unordered, possibly repeated) list of
    /// masked indices. Only the set matters.
    pub fn from_masked(patch_num: usize, masked: &[usize]) -> Result<Self> {
        let mut flags = alloc::vec![false; patch_num];
        for &m in masked {
            if m >= patch_num {
                return Err(Error::shape(alloc::format!("masked index {m} outside {patch_num} patches")));
            }
            flags[m] = true;
        }
        let masked: Vec<usize> = (0..patch_num).filter(|&i| flags[i]).collect();
        let visible = (0..patch_num).filter(|&i| !flags[i]).collect();
        let ratio = if patch_num == 0 { 0.0 } else { masked.len() as f64 / patch_num as f64 };
        Ok(Self { visible, masked, ratio })
    }

    pub fn visible(&self) -> &[usize] {
        &self.visible
    }

    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn patch_num(&self) -> usize {
        self.visible.len() + self.masked.len()
    }

    pub fn is_unmasked(&self) -> bool {
        self.masked.is_empty()
    }
}

/// Uniform masking without replacement.
pub fn random_mask(patch_num: usize, ratio: f64, rng: &mut SeededRng) -> Result<MaskSpec> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidConfig(alloc::format!("mask ratio {ratio} outside [0, 1)")));
    }
    let n = masked_count(patch_num, ratio);
    let mut order: Vec<usize> = (0..patch_num).collect();
    rng.shuffle(&mut order);
    let mut spec = MaskSpec::from_masked(patch_num, &order[..n])?;
    spec.ratio = ratio;
    Ok(spec)
}
