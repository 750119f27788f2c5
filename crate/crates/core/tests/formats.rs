// SPDX-License-Identifier: MIT OR Apache-2.0

use proptest::prelude::*;
use valuelens::data::Checkpoint;
use valuelens::histogram::Histogram;
use valuelens::kv::{from_kv, to_kv};
use valuelens::ppo::PpoConfig;
use valuelens::Tensor;

proptest! {
    #[test]
    fn ppo_config_survives_kv(
        clip in 0.01f64..10.0,
        kl in 0.0f64..1.0,
        lr in 1e-7f64..1e-1,
        iters in 1usize..500,
        seed in any::<u64>(),
    ) {
        let c = PpoConfig { clip_eps: clip, kl_coef: kl, policy_lr: lr, iterations: iters, seed, ..PpoConfig::default() };
        let back: PpoConfig = from_kv(&to_kv(&c).unwrap(), &PpoConfig::default()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn histogram_accounts_for_every_value(xs in prop::collection::vec(-0.5f64..1.5, 0..200)) {
        let h = Histogram::from_values(0.0, 1.0, 20, xs.iter().copied());
        prop_assert_eq!(h.total(), xs.len());
        let inside = xs.iter().filter(|x| (0.0..=1.0).contains(*x)).count();
        prop_assert_eq!(h.counts.iter().sum::<usize>(), inside);
    }

    #[test]
    fn checkpoint_bytes_round_trip(data in prop::collection::vec(any::<f32>(), 1..64), note in "[a-z]{0,12}") {
        let mut c = Checkpoint::new(serde_json::json!({"note": note}));
        c.insert("t", Tensor::from_vec(data.clone()));
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        let got = back.tensor("t").unwrap().data();
        prop_assert!(got.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(&back.metadata, &c.metadata);
    }
}
