//! Attribute label space `{age, gender, race}` and its spatial one-hot code.

use adgan_tensor::{Real, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sizes of the three attribute axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeSpace {
    pub n_age: usize,
    pub n_gender: usize,
    pub n_race: usize,
}

/// One point of an [`AttributeSpace`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeLabel {
    pub age: usize,
    pub gender: usize,
    pub race: usize,
}

impl AttributeLabel {
    pub fn new(age: usize, gender: usize, race: usize) -> Self {
        AttributeLabel { age, gender, race }
    }
}

impl AttributeSpace {
    pub fn new(n_age: usize, n_gender: usize, n_race: usize) -> Result<Self> {
        if n_age == 0 || n_gender == 0 || n_race == 0 {
            return Err(Error::Config(format!(
                "attribute axes must be non-empty, got {n_age}x{n_gender}x{n_race}"
            )));
        }
        Ok(AttributeSpace {
            n_age,
            n_gender,
            n_race,
        })
    }

    /// Number of attribute combinations `n = n_age * n_gender * n_race`.
    pub fn len(&self) -> usize {
        self.n_age * self.n_gender * self.n_race
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Channels of the conditioning code: one per combination plus noise.
    pub fn code_channels(&self) -> usize {
        self.len() + 1
    }

    pub fn validate(&self, label: AttributeLabel) -> Result<()> {
        for (axis, index, size) in [
            ("age", label.age, self.n_age),
            ("gender", label.gender, self.n_gender),
            ("race", label.race, self.n_race),
        ] {
            if index >= size {
                return Err(Error::AttributeRange { axis, index, size });
            }
        }
        Ok(())
    }

    /// Age-major flat index `(age * n_gender + gender) * n_race + race`.
    pub fn flat_index(&self, label: AttributeLabel) -> Result<usize> {
        self.validate(label)?;
        Ok((label.age * self.n_gender + label.gender) * self.n_race + label.race)
    }

    pub fn label_at(&self, index: usize) -> Result<AttributeLabel> {
        if index >= self.len() {
            return Err(Error::AttributeRange {
                axis: "flat",
                index,
                size: self.len(),
            });
        }
        Ok(AttributeLabel {
            race: index % self.n_race,
            gender: (index / self.n_race) % self.n_gender,
            age: index / (self.n_race * self.n_gender),
        })
    }

    /// All labels in flat-index order.
    pub fn labels(&self) -> impl Iterator<Item = AttributeLabel> + '_ {
        (0..self.len()).map(|i| self.label_at(i).expect("in range"))
    }
}

/// Spatial conditioning tensor `[n + 1, size, size]`: the channel of the
/// label's flat index is all ones, the other `n - 1` label channels are zero
/// and the last channel carries noise.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeCode<T>(Tensor<T>);

impl<T: Real> AttributeCode<T> {
    /// Code with a fresh standard-normal noise channel.
    pub fn sample<R: Rng + ?Sized>(
        label: AttributeLabel,
        space: &AttributeSpace,
        size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut code = Self::without_noise(label, space, size)?;
        let plane = size * size;
        let n = space.len();
        for v in &mut code.0.data_mut()[n * plane..] {
            let s: f64 = StandardNormal.sample(rng);
            *v = T::from_f64(s);
        }
        Ok(code)
    }

    /// Code with the noise channel set to zero.
    pub fn without_noise(label: AttributeLabel, space: &AttributeSpace, size: usize) -> Result<Self> {
        let t = space.flat_index(label)?;
        let plane = size * size;
        let mut data = vec![T::zero(); space.code_channels() * plane];
        data[t * plane..(t + 1) * plane].fill(T::one());
        Ok(AttributeCode(Tensor::new(
            vec![space.code_channels(), size, size],
            data,
        )?))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }
}

/// Age-group binning of the two supported benchmark conventions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeBinning {
    /// 30-, 31-40, 41-50, 51+
    Morph,
    /// 0-5, 6-10, 11-15, 16-20, 21-30, 31-40, 41-50, 51-60, 61-70, 71+
    Utk,
}

const UTK_UPPER: [i64; 9] = [5, 10, 15, 20, 30, 40, 50, 60, 70];
const MORPH_UPPER: [i64; 3] = [30, 40, 50];

fn bin(age: i64, upper: &[i64]) -> Result<usize> {
    if age < 0 {
        return Err(Error::NegativeAge(age));
    }
    Ok(upper.iter().take_while(|&&u| age > u).count())
}

pub fn bin_age_morph(age: i64) -> Result<usize> {
    bin(age, &MORPH_UPPER)
}

pub fn bin_age_utk(age: i64) -> Result<usize> {
    bin(age, &UTK_UPPER)
}

impl AgeBinning {
    pub fn bin(self, age: i64) -> Result<usize> {
        match self {
            AgeBinning::Morph => bin_age_morph(age),
            AgeBinning::Utk => bin_age_utk(age),
        }
    }

    pub fn groups(self) -> usize {
        match self {
            AgeBinning::Morph => MORPH_UPPER.len() + 1,
            AgeBinning::Utk => UTK_UPPER.len() + 1,
        }
    }

    pub fn group_names(self) -> Vec<String> {
        let upper: &[i64] = match self {
            AgeBinning::Morph => &MORPH_UPPER,
            AgeBinning::Utk => &UTK_UPPER,
        };
        let mut names = Vec::with_capacity(upper.len() + 1);
        let mut lo = 0;
        for (i, &u) in upper.iter().enumerate() {
            names.push(if i == 0 && self == AgeBinning::Morph {
                format!("{u}-")
            } else {
                format!("{lo}-{u}")
            });
            lo = u + 1;
        }
        names.push(format!("{lo}+"));
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space() -> AttributeSpace {
        AttributeSpace::new(4, 2, 2).unwrap()
    }

    #[test]
    fn flat_index_examples() {
        let s = space();
        assert_eq!(s.flat_index(AttributeLabel::new(0, 0, 0)).unwrap(), 0);
        assert_eq!(s.flat_index(AttributeLabel::new(1, 0, 1)).unwrap(), 5);
        assert_eq!(s.flat_index(AttributeLabel::new(3, 1, 1)).unwrap(), 15);
    }

    #[test]
    fn flat_index_rejects_out_of_range() {
        let err = space().flat_index(AttributeLabel::new(0, 2, 0)).unwrap_err();
        assert!(matches!(
            err,
            Error::AttributeRange {
                axis: "gender",
                index: 2,
                size: 2
            }
        ));
    }

    #[test]
    fn code_shape_and_mass() {
        let s = space();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let code: AttributeCode<f64> =
            AttributeCode::sample(AttributeLabel::new(2, 1, 0), &s, 32, &mut rng).unwrap();
        assert_eq!(code.tensor().shape(), &[17, 32, 32]);
        let mass: f64 = code.tensor().data()[..16 * 1024].iter().sum();
        assert_eq!(mass, 1024.0);
    }

    #[test]
    fn noise_differs_between_draws() {
        let s = space();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let label = AttributeLabel::new(1, 1, 1);
        let a: AttributeCode<f64> = AttributeCode::sample(label, &s, 8, &mut rng).unwrap();
        let b: AttributeCode<f64> = AttributeCode::sample(label, &s, 8, &mut rng).unwrap();
        let split = 16 * 64;
        assert_eq!(a.tensor().data()[..split], b.tensor().data()[..split]);
        assert_ne!(a.tensor().data()[split..], b.tensor().data()[split..]);
    }

    #[test]
    fn morph_bins() {
        assert_eq!(bin_age_morph(16).unwrap(), 0);
        assert_eq!(bin_age_morph(30).unwrap(), 0);
        assert_eq!(bin_age_morph(31).unwrap(), 1);
        assert_eq!(bin_age_morph(40).unwrap(), 1);
        assert_eq!(bin_age_morph(41).unwrap(), 2);
        assert_eq!(bin_age_morph(51).unwrap(), 3);
        assert_eq!(bin_age_morph(77).unwrap(), 3);
        assert!(matches!(bin_age_morph(-1), Err(Error::NegativeAge(-1))));
    }

    #[test]
    fn utk_bins() {
        assert_eq!(bin_age_utk(0).unwrap(), 0);
        assert_eq!(bin_age_utk(3).unwrap(), 0);
        assert_eq!(bin_age_utk(6).unwrap(), 1);
        assert_eq!(bin_age_utk(30).unwrap(), 4);
        assert_eq!(bin_age_utk(31).unwrap(), 5);
        assert_eq!(bin_age_utk(70).unwrap(), 8);
        assert_eq!(bin_age_utk(71).unwrap(), 9);
        assert_eq!(bin_age_utk(116).unwrap(), 9);
        assert!(bin_age_utk(-5).is_err());
    }

    #[test]
    fn group_names_match_bins() {
        assert_eq!(AgeBinning::Morph.group_names(), ["30-", "31-40", "41-50", "51+"]);
        let utk = AgeBinning::Utk.group_names();
        assert_eq!(utk.len(), 10);
        assert_eq!(utk[0], "0-5");
        assert_eq!(utk[4], "21-30");
        assert_eq!(utk[9], "71+");
    }
}
