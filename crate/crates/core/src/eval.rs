//! Synthesis with the deployable model `G(X, F(S_t))` and the
//! attribute-preservation metric.

use std::fmt::Write as _;

use adgan_tensor::{Graph, Real, Tensor};
use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::attributes::{AttributeCode, AttributeLabel};
use crate::data::{Dataset, Oracle};
use crate::error::Result;
use crate::nn::{Model, NetKind};

/// Decodes attribute labels from images; `None` marks an unclassifiable
/// image. Real-data evaluation plugs its own classifier in here.
pub trait AttributeClassifier {
    fn classify(&self, image: &Tensor<f32>) -> Option<AttributeLabel>;
}

impl AttributeClassifier for Oracle {
    fn classify(&self, image: &Tensor<f32>) -> Option<AttributeLabel> {
        Oracle::classify(self, image)
    }
}

/// Renders each `inputs[k]` (`[3, H, H]`) towards `targets[k]` through the
/// common embedding of the target label.
pub fn synthesize<T: Real, R: Rng + ?Sized>(
    model: &Model<T>,
    inputs: &[Tensor<T>],
    targets: &[AttributeLabel],
    rng: &mut R,
) -> Result<Vec<Tensor<T>>> {
    assert_eq!(inputs.len(), targets.len(), "one target per input");
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let codes = targets
        .iter()
        .map(|&l| {
            AttributeCode::sample(l, &model.space, model.resolution, rng).map(AttributeCode::into_tensor)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut g = Graph::new();
    let gp = model.params(NetKind::Generator).bind(&mut g, false);
    let fp = model.params(NetKind::Disentangler).bind(&mut g, false);
    let x = g.constant(Tensor::stack(inputs)?);
    let c = g.constant(Tensor::stack(&codes)?);
    let z = model.disentangler.forward(&mut g, &fp, c)?;
    let out = model.generator.forward(&mut g, &gp, x, z)?;
    let out = g.value(out);
    (0..inputs.len()).map(|i| Ok(out.index_axis0(i)?)).collect()
}

/// `input` followed by one synthesis per age group, holding the other
/// attributes at `hold`.
pub fn age_sweep<T: Real, R: Rng + ?Sized>(
    model: &Model<T>,
    input: &Tensor<T>,
    hold: AttributeLabel,
    rng: &mut R,
) -> Result<Vec<Tensor<T>>> {
    let targets: Vec<_> = (0..model.space.n_age)
        .map(|a| AttributeLabel::new(a, hold.gender, hold.race))
        .collect();
    let inputs = vec![input.clone(); targets.len()];
    let mut row = vec![input.clone()];
    row.extend(synthesize(model, &inputs, &targets, rng)?);
    Ok(row)
}

/// Decoded result of one synthesized image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Outcome {
    pub input: AttributeLabel,
    pub target_age: usize,
    pub decoded: Option<AttributeLabel>,
}

impl Outcome {
    pub fn race_kept(&self) -> bool {
        self.decoded.is_some_and(|d| d.race == self.input.race)
    }

    pub fn gender_kept(&self) -> bool {
        self.decoded.is_some_and(|d| d.gender == self.input.gender)
    }

    pub fn age_reached(&self) -> bool {
        self.decoded.is_some_and(|d| d.age == self.target_age)
    }
}

/// Rates (%) for one target age group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupRates {
    pub target_age: usize,
    pub name: String,
    pub samples: usize,
    pub race: f64,
    pub gender: f64,
    pub age: f64,
    pub unclassifiable: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    pub config_hash: String,
    pub groups: Vec<GroupRates>,
    pub mean_race: f64,
    pub mean_gender: f64,
    pub mean_age: f64,
    #[serde(skip)]
    pub outcomes: Vec<Outcome>,
}

fn percent(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * hits as f64 / n as f64
    }
}

impl EvalReport {
    pub fn from_outcomes(
        outcomes: Vec<Outcome>,
        targets: &[usize],
        group_names: &[String],
        samples: usize,
        config_hash: String,
    ) -> Self {
        let groups: Vec<GroupRates> = targets
            .iter()
            .map(|&a| {
                let rows: Vec<&Outcome> = outcomes.iter().filter(|o| o.target_age == a).collect();
                let n = rows.len();
                GroupRates {
                    target_age: a,
                    name: group_names.get(a).cloned().unwrap_or_else(|| a.to_string()),
                    samples: n,
                    race: percent(rows.iter().filter(|o| o.race_kept()).count(), n),
                    gender: percent(rows.iter().filter(|o| o.gender_kept()).count(), n),
                    age: percent(rows.iter().filter(|o| o.age_reached()).count(), n),
                    unclassifiable: rows.iter().filter(|o| o.decoded.is_none()).count(),
                }
            })
            .collect();
        let mean = |f: fn(&GroupRates) -> f64| {
            if groups.is_empty() {
                0.0
            } else {
                groups.iter().map(f).sum::<f64>() / groups.len() as f64
            }
        };
        EvalReport {
            samples,
            config_hash,
            mean_race: mean(|g| g.race),
            mean_gender: mean(|g| g.gender),
            mean_age: mean(|g| g.age),
            groups,
            outcomes,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table with the full-scale reference rates as footer.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "preservation rate over {} inputs (config {})", self.samples, self.config_hash);
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>9} {:>9} {:>11} {:>8}",
            "target", "outputs", "race %", "gender %", "target age %", "unclass."
        );
        for g in &self.groups {
            let _ = writeln!(
                s,
                "{:<12} {:>8} {:>9.2} {:>9.2} {:>11.2} {:>8}",
                g.name, g.samples, g.race, g.gender, g.age, g.unclassifiable
            );
        }
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>9.2} {:>9.2} {:>11.2}",
            "mean", "", self.mean_race, self.mean_gender, self.mean_age
        );
        s.push_str(
            "full-scale reference (MORPH, groups 31-40 / 41-50 / 51+): \
             gender 97.50 / 97.43 / 95.25, race 96.55 / 95.75 / 95.60\n",
        );
        s
    }
}

/// Checksum of a config's JSON text, as 8 hex digits.
pub fn config_hash(config_json: &str) -> String {
    format!("{:08x}", crc32fast::hash(config_json.as_bytes()))
}

/// Draws `samples` distinct inputs (with replacement when the dataset is
/// smaller), maps each into every group of `targets` with `translate`
/// holding gender and race, and decodes every output with `classifier`.
pub fn preservation_with<R, C, F>(
    dataset: &Dataset,
    classifier: &C,
    samples: usize,
    targets: &[usize],
    rng: &mut R,
    mut translate: F,
) -> Result<Vec<Outcome>>
where
    R: Rng + ?Sized,
    C: AttributeClassifier + ?Sized,
    F: FnMut(&[Tensor<f32>], &[AttributeLabel], &mut R) -> Result<Vec<Tensor<f32>>>,
{
    let picks: Vec<usize> = if samples <= dataset.len() {
        sample(rng, dataset.len(), samples).into_vec()
    } else {
        (0..samples).map(|_| rng.random_range(0..dataset.len())).collect()
    };
    let picks: Vec<usize> = picks.into_iter().filter(|&i| dataset.image(i).is_some()).collect();
    let mut outcomes = Vec::with_capacity(picks.len() * targets.len());
    for chunk in picks.chunks(16) {
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let mut metas = Vec::new();
        for &i in chunk {
            let l = dataset.label(i);
            for &a in targets {
                inputs.push(dataset.image(i).unwrap().clone());
                labels.push(AttributeLabel::new(a, l.gender, l.race));
                metas.push((l, a));
            }
        }
        let outs = translate(&inputs, &labels, rng)?;
        for (out, (input, target_age)) in outs.iter().zip(metas) {
            outcomes.push(Outcome {
                input,
                target_age,
                decoded: classifier.classify(out),
            });
        }
    }
    Ok(outcomes)
}

/// Preservation report of `model` on `dataset`.
#[allow(clippy::too_many_arguments)]
pub fn preservation_rate<T: Real, R: Rng + ?Sized>(
    model: &Model<T>,
    dataset: &Dataset,
    classifier: &dyn AttributeClassifier,
    samples: usize,
    targets: &[usize],
    group_names: &[String],
    config_hash: String,
    rng: &mut R,
) -> Result<EvalReport> {
    let outcomes = preservation_with(dataset, classifier, samples, targets, rng, |x, l, rng| {
        let x: Vec<Tensor<T>> = x.iter().map(Tensor::cast).collect();
        Ok(synthesize(model, &x, l, rng)?.iter().map(Tensor::cast).collect())
    })?;
    let n_inputs = outcomes.len() / targets.len().max(1);
    Ok(EvalReport::from_outcomes(outcomes, targets, group_names, n_inputs, config_hash))
}
