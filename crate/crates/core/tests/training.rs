use framepred::data::{
    make_batch, stream_rng, BimodalParams, BimodalSource, ClipSet, ClipSource, DataSource,
    DatasetSpec,
};
use framepred::model::ModelSpec;
use framepred::training::{
    load_checkpoint, save_checkpoint, train_loop, Checkpoint, LrSchedule, TrainConfig, Trainer,
    CHECKPOINT_MAGIC,
};
use framepred::Error;
use proptest::prelude::*;

fn bimodal_config(preset: &str, steps: u64) -> TrainConfig {
    let mut c = TrainConfig::preset(preset).unwrap();
    c.steps = steps;
    c.seed = 3;
    c.rho_g = LrSchedule::constant(0.005);
    c.rho_d = 0.002;
    c.log_every = 0;
    c
}

fn bimodal_spec() -> ModelSpec {
    ModelSpec::preset("desk-bimodal").unwrap()
}

fn source() -> BimodalSource {
    BimodalSource {
        params: BimodalParams {
            jitter: 1,
            ..BimodalParams::default()
        },
    }
}

#[test]
fn discriminator_learns_against_a_frozen_generator() {
    let mut t = Trainer::new(bimodal_spec(), bimodal_config("adv", 300)).unwrap();
    let g0 = t.generator.clone();
    let mut rng = stream_rng(5, 0);
    let (x, y) = make_batch(&source().draw_batch(&mut rng, 8).unwrap()).unwrap();
    let first = t.train_step_d(&x, &y).unwrap();
    let mut last = first;
    for _ in 0..300 {
        last = t.train_step_d(&x, &y).unwrap();
    }
    // two scales, each summing a real and a fake BCE term
    let chance = 2.0 * 2.0 * std::f64::consts::LN_2;
    assert!(last < first && last < chance, "{first} -> {last}");
    assert!(t.generator.same_values(&g0));
    assert_eq!(t.step(), 0);
}

#[test]
fn zero_rates_leave_parameters_unchanged() {
    let mut c = bimodal_config("adv-gdl", 5);
    c.rho_g = LrSchedule::constant(0.0);
    c.rho_d = 0.0;
    let mut t = Trainer::new(bimodal_spec(), c).unwrap();
    let (g0, d0) = (t.generator.clone(), t.discriminator.clone().unwrap());
    t.run(&source(), |_| {}).unwrap();
    assert_eq!(t.step(), 5);
    assert!(t.generator.same_values(&g0));
    assert!(t.discriminator.as_ref().unwrap().same_values(&d0));
}

#[test]
fn memorizes_a_single_clip() {
    let spec = DatasetSpec {
        seed: 2,
        ..DatasetSpec::new(
            DataSource::Bouncing {
                params: Default::default(),
                clips: 1,
            },
            16,
            4,
            1,
        )
    };
    let clip = spec.open().unwrap().draw(&mut stream_rng(1, 0)).unwrap();
    let set = ClipSet::new(vec![clip]).unwrap();
    let mut c = TrainConfig::preset("l2").unwrap();
    c.steps = 200;
    c.rho_g = LrSchedule::constant(0.0005);
    c.log_every = 1;
    let mut losses = Vec::new();
    train_loop(ModelSpec::preset("desk-4to1").unwrap(), c, &set, |r| {
        losses.push(r.g.total)
    })
    .unwrap();
    assert_eq!(losses.len(), 200);
    let (first, last) = (losses[0], losses[199]);
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let c = bimodal_config("adv", 20);
    let whole = train_loop(bimodal_spec(), c.clone(), &source(), |_| {}).unwrap();

    let mut first = Trainer::new(bimodal_spec(), c.clone()).unwrap();
    for _ in 0..8 {
        first.run_one(&source(), &mut |_| {}).unwrap();
    }
    let bytes = first.checkpoint().to_bytes().unwrap();
    let mut resumed = Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap(), c).unwrap();
    resumed.run(&source(), |_| {}).unwrap();
    assert_eq!(
        resumed.checkpoint().to_bytes().unwrap(),
        whole.to_bytes().unwrap()
    );
}

#[test]
fn zero_step_training_returns_the_initialization() {
    let c = bimodal_config("adv", 0);
    let ckpt = train_loop(bimodal_spec(), c.clone(), &source(), |_| {}).unwrap();
    let fresh = Trainer::new(bimodal_spec(), c).unwrap();
    assert_eq!(ckpt, fresh.checkpoint());
    assert_eq!(ckpt.step, 0);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let ckpt = train_loop(bimodal_spec(), bimodal_config("adv", 2), &source(), |_| {}).unwrap();
    let bytes = ckpt.to_bytes().unwrap();
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ckpt);

    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::Checkpoint(_))
            ),
            "truncated at {cut}"
        );
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        Checkpoint::from_bytes(&bad),
        Err(Error::Checkpoint(_))
    ));
    let mut version = bytes.clone();
    version[4] = 99;
    assert!(Checkpoint::from_bytes(&version).is_err());
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(Checkpoint::from_bytes(&longer).is_err());
}

#[test]
fn saved_checkpoint_predicts_identically() {
    let ckpt = train_loop(bimodal_spec(), bimodal_config("l2", 10), &source(), |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let (x, _) = make_batch(&source().draw_batch(&mut stream_rng(0, 0), 3).unwrap()).unwrap();
    let a = ckpt.model().predict(&x).unwrap();
    let b = loaded.model().predict(&x).unwrap();
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .all(|(p, q)| p.to_bits() == q.to_bits()));
    assert!(load_checkpoint(&dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn adversarial_training_without_discriminator_is_a_config_error() {
    let mut spec = bimodal_spec();
    spec.discriminator = None;
    assert!(matches!(
        Trainer::new(spec, bimodal_config("adv", 1)),
        Err(Error::Config(_))
    ));
}

proptest! {
    #[test]
    fn schedule_stays_between_its_rates(
        initial in 1e-4f64..1.0,
        ratio in 0.0f64..=1.0,
        total in 1u64..5000,
    ) {
        let s = LrSchedule::decaying(initial, initial * ratio);
        let mut prev = f64::INFINITY;
        for step in 0..total.min(600) {
            let r = s.rate(step * total / total.min(600), total);
            prop_assert!(r <= prev);
            prop_assert!(r <= initial && r >= initial * ratio);
            prev = r;
        }
        prop_assert_eq!(s.rate(total - 1, total).to_bits(), (initial * ratio).to_bits());
    }
}
