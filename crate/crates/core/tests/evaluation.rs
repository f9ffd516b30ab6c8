use adgan::data::{Oracle, SyntheticSpec};
use adgan::eval::{age_sweep, preservation_with, synthesize, EvalReport, Outcome};
use adgan::grid::grid_emit;
use adgan::{ArchConfig, AttributeLabel, AttributeSpace, Model};
use adgan_tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn label() -> impl Strategy<Value = AttributeLabel> {
    (0usize..3, 0usize..2, 0usize..2).prop_map(|(a, g, r)| AttributeLabel::new(a, g, r))
}

fn outcome() -> impl Strategy<Value = Outcome> {
    (label(), 0usize..3, proptest::option::of(label())).prop_map(|(input, target_age, decoded)| Outcome {
        input,
        target_age,
        decoded,
    })
}

proptest! {
    #[test]
    fn report_rates_equal_an_independent_tally(outs in proptest::collection::vec(outcome(), 1..60)) {
        let report = EvalReport::from_outcomes(outs.clone(), &[0, 1, 2], &[], 0, String::new());
        for g in &report.groups {
            let (mut n, mut race, mut gender, mut age, mut none) = (0, 0, 0, 0, 0);
            for o in &outs {
                if o.target_age != g.target_age {
                    continue;
                }
                n += 1;
                match o.decoded {
                    None => none += 1,
                    Some(d) => {
                        race += usize::from(d.race == o.input.race);
                        gender += usize::from(d.gender == o.input.gender);
                        age += usize::from(d.age == o.target_age);
                    }
                }
            }
            let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
            prop_assert_eq!(g.samples, n);
            prop_assert_eq!(g.race, pct(race));
            prop_assert_eq!(g.gender, pct(gender));
            prop_assert_eq!(g.age, pct(age));
            prop_assert_eq!(g.unclassifiable, none);
            for r in [g.race, g.gender, g.age] {
                prop_assert!((0.0..=100.0).contains(&r));
            }
        }
    }
}

fn synthetic(per_label: usize) -> (SyntheticSpec, adgan::data::Dataset) {
    let spec = SyntheticSpec {
        resolution: 32,
        n_age: 3,
        n_gender: 2,
        n_race: 2,
        per_label,
        seed: 11,
    };
    let ds = spec.generate().unwrap();
    (spec, ds)
}

#[test]
fn identity_translation_preserves_everything() {
    let (spec, ds) = synthetic(5);
    let oracle = Oracle::new(spec.space(), 32);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let outs = preservation_with(&ds, &oracle, 40, &[0, 1, 2], &mut rng, |x, _, _| Ok(x.to_vec())).unwrap();
    assert_eq!(outs.len(), 120);
    let r = EvalReport::from_outcomes(outs, &[0, 1, 2], &[], 40, String::new());
    assert_eq!(r.mean_race, 100.0);
    assert_eq!(r.mean_gender, 100.0);
    // the input is unchanged, so the age matches only when it is the target
    let own_age = r.outcomes.iter().filter(|o| o.input.age == o.target_age).count();
    let hits = r.outcomes.iter().filter(|o| o.age_reached()).count();
    assert_eq!(hits, own_age);
}

#[test]
fn unclassifiable_outputs_count_against_the_rate() {
    let (spec, ds) = synthetic(2);
    let oracle = Oracle::new(spec.space(), 32);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let outs = preservation_with(&ds, &oracle, 10, &[1], &mut rng, |x, _, _| {
        Ok(x.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect())
    })
    .unwrap();
    let r = EvalReport::from_outcomes(outs, &[1], &[], 10, String::new());
    assert_eq!(r.groups[0].samples, 10);
    assert_eq!(r.groups[0].unclassifiable, 10);
    assert_eq!(r.mean_race, 0.0);
}

fn untrained() -> Model<f32> {
    let arch = ArchConfig {
        base_channels: 4,
        style_dim: 8,
        res_blocks: 1,
        ..ArchConfig::default()
    };
    Model::new(&arch, AttributeSpace::new(4, 2, 2).unwrap(), 32, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

#[test]
fn age_sweep_covers_every_group_with_one_model() {
    let m = untrained();
    let (_, ds) = synthetic(1);
    let x = ds.image(0).unwrap();
    let row = age_sweep(&m, x, AttributeLabel::new(0, 1, 0), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(row.len(), 5);
    assert_eq!(&row[0], x);
    for w in row[1..].windows(2) {
        assert_ne!(w[0], w[1]);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.png");
    let refs: Vec<&Tensor<f32>> = row.iter().collect();
    assert_eq!(grid_emit(&refs, refs.len(), 2, &path).unwrap(), (5 * 32 + 4 * 2, 32));
}

#[test]
fn synthesis_is_deterministic_per_seed() {
    let m = untrained();
    let (_, ds) = synthetic(1);
    let inputs = vec![ds.image(0).unwrap().clone(), ds.image(5).unwrap().clone()];
    let targets = [AttributeLabel::new(3, 0, 1), AttributeLabel::new(0, 1, 0)];
    let a = synthesize(&m, &inputs, &targets, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let b = synthesize(&m, &inputs, &targets, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0].shape(), &[3, 32, 32]);
    let bad = [AttributeLabel::new(4, 0, 0), AttributeLabel::new(0, 0, 0)];
    assert!(synthesize(&m, &inputs, &bad, &mut ChaCha8Rng::seed_from_u64(4)).is_err());
}

#[test]
fn grid_files_have_the_computed_size_and_stable_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let img = |v: f32| Tensor::new(vec![3, 32, 32], vec![v; 3 * 32 * 32]).unwrap();
    let images: Vec<Tensor<f32>> = (0..6).map(|i| img(i as f32 / 3.0 - 1.0)).collect();
    let refs: Vec<&Tensor<f32>> = images.iter().collect();

    let one = dir.path().join("one.png");
    assert_eq!(grid_emit(&refs[..1], 1, 2, &one).unwrap(), (32, 32));
    let decoded = image::open(&one).unwrap();
    assert_eq!((decoded.width(), decoded.height()), (32, 32));

    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    // 3 columns * 32 + 2 gaps * 2 wide, 2 rows * 32 + 1 gap * 2 high
    assert_eq!(grid_emit(&refs, 3, 2, &a).unwrap(), (100, 66));
    grid_emit(&refs, 3, 2, &b).unwrap();
    let decoded = image::open(&a).unwrap().to_rgb8();
    assert_eq!(decoded.dimensions(), (100, 66));
    assert_eq!(decoded.get_pixel(0, 0).0, [0, 0, 0]);
    assert_eq!(decoded.get_pixel(32, 10).0, [255, 255, 255]);
    let last = adgan::grid::to_u8(5.0f32 / 3.0 - 1.0);
    assert_eq!(decoded.get_pixel(99, 65).0, [last; 3]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let unwritable = dir.path().join("missing").join("x.png");
    assert!(matches!(grid_emit(&refs, 3, 2, &unwritable), Err(adgan::Error::Io { .. } | adgan::Error::Grid(_))));
}
