//! Miniature dual encoder: transformer text tower, MLP image tower, and the
//! temperature-scaled cosine scoring rule.

mod checkpoint;
mod config;
mod model;
mod pretrain;

pub use checkpoint::{EncoderCheckpoint, ENCODER_FORMAT_VERSION};
pub use config::EncoderConfig;
pub use model::{
    class_probabilities, cosine, DeepHook, DualEncoder, EncoderVars, HeadWeights, ImageWeights, LayerVars, LayerWeights,
};
pub use pretrain::{align_encoders, AlignmentBatch, AlignmentConfig};

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::error::Error;
    use crate::tensor_core::{Graph, Tensor};
    use crate::vocab::Vocabulary;

    fn small() -> DualEncoder {
        let cfg = EncoderConfig {
            vocab_size: 10,
            embed_dim: 8,
            num_layers: 3,
            num_heads: 2,
            max_seq_len: 8,
            joint_dim: 4,
            raw_feature_dim: 6,
            image_hidden_dim: 5,
            ..EncoderConfig::default()
        };
        DualEncoder::new(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    fn text_feature(enc: &DualEncoder, ids: &[usize], with_identity_hook: bool) -> Tensor {
        let mut g = Graph::new();
        let vars = enc.bind(&mut g, false);
        let seq = enc.embed_tokens(&mut g, &vars, ids).unwrap();
        let mut calls = 0;
        let mut identity = |_: &mut Graph, _: usize, h| {
            calls += 1;
            Ok(h)
        };
        let hook: Option<&mut DeepHook<'_>> = if with_identity_hook { Some(&mut identity) } else { None };
        let w = enc.encode_text(&mut g, &vars, seq, hook).unwrap();
        let out = g.value(w).clone();
        if with_identity_hook {
            assert_eq!(calls, enc.config.num_layers - 1);
        }
        out
    }

    #[test]
    fn text_encoding_is_deterministic_and_unit_norm() {
        let enc = small();
        let a = text_feature(&enc, &[0, 4, 5, 1], false);
        let b = text_feature(&enc, &[0, 4, 5, 1], false);
        assert!(a.bit_eq(&b));
        let norm: f64 = a.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_hook_is_transparent() {
        let enc = small();
        let plain = text_feature(&enc, &[0, 2, 7, 3, 1], false);
        let hooked = text_feature(&enc, &[0, 2, 7, 3, 1], true);
        assert!(plain.bit_eq(&hooked));
    }

    #[test]
    fn overlong_sequence_is_a_capacity_error() {
        let enc = small();
        let mut g = Graph::new();
        let vars = enc.bind(&mut g, false);
        let seq = enc.embed_tokens(&mut g, &vars, &[2; 9]).unwrap();
        assert!(matches!(
            enc.encode_text(&mut g, &vars, seq, None),
            Err(Error::Capacity { len: 9, max: 8 })
        ));
    }

    #[test]
    fn image_features_are_unit_norm_even_for_zero_input() {
        let enc = small();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::randn(&[3, 6], 0.0, 1.0, &mut rng);
        for images in [x, Tensor::zeros(&[1, 6])] {
            let u = enc.image_features(&images).unwrap();
            for i in 0..u.rows_cols().0 {
                let norm: f64 = u.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-9, "norm {norm}");
            }
        }
        let z1 = enc.image_features(&Tensor::zeros(&[1, 6])).unwrap();
        let z2 = enc.image_features(&Tensor::zeros(&[1, 6])).unwrap();
        assert!(z1.bit_eq(&z2));
    }

    #[test]
    fn image_dimension_is_checked() {
        let enc = small();
        assert!(matches!(
            enc.image_features(&Tensor::zeros(&[1, 5])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn class_probability_examples() {
        let p = class_probabilities(&[0.3; 5], 0.07).unwrap();
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-12));

        let p = class_probabilities(&[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[0] - 0.7311).abs() < 1e-4 && (p[1] - 0.2689).abs() < 1e-4);

        // ln(p1/p2) = 0.8/0.07 = 11.428571...
        let p = class_probabilities(&[0.9, 0.1], 0.07).unwrap();
        assert!(((p[0] / p[1]).ln() - 0.8 / 0.07).abs() < 1e-9);

        assert!(matches!(class_probabilities(&[0.1], 0.0), Err(Error::Parameter(_))));
        assert!(matches!(class_probabilities(&[0.1], -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn argmax_is_temperature_invariant_and_shift_invariant() {
        let sims = [0.12, -0.4, 0.33, 0.31];
        let best = |t: f64| crate::tensor_core::argmax(&class_probabilities(&sims, t).unwrap());
        assert_eq!(best(0.01), best(5.0));
        let shifted: Vec<f64> = sims.iter().map(|s| s + 0.5).collect();
        let a = class_probabilities(&sims, 0.07).unwrap();
        let b = class_probabilities(&shifted, 0.07).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_config_mismatch() {
        let enc = small();
        let vocab = Vocabulary::new(["a", "b", "c", "d", "e", "f", "g", "h"]);
        let ckpt = EncoderCheckpoint::new(enc.clone(), vocab).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("encoder.json");
        ckpt.save(&path).unwrap();
        let back = EncoderCheckpoint::load(&path, Some(&enc.config)).unwrap();
        assert_eq!(back, ckpt);
        assert!(back.encoder.params().iter().zip(enc.params()).all(|(a, b)| a.bit_eq(b)));

        let other = EncoderConfig {
            temperature: 0.5,
            ..enc.config.clone()
        };
        assert!(matches!(
            EncoderCheckpoint::load(&path, Some(&other)),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn alignment_reduces_loss() {
        let mut enc = small();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let protos = Tensor::randn(&[3, 6], 0.0, 1.0, &mut rng);
        let captions = vec![vec![0, 2, 1], vec![0, 3, 1], vec![0, 4, 1]];
        let cfg = AlignmentConfig {
            steps: 80,
            lr: 3e-3,
            batch_size: 6,
            warmup_steps: 1,
        };
        let history = align_encoders(&mut enc, &cfg, |_| {
            let labels = vec![0, 1, 2, 0, 1, 2];
            let rows: Vec<Vec<f64>> = labels.iter().map(|&l| protos.row(l).to_vec()).collect();
            Ok(AlignmentBatch {
                captions: captions.clone(),
                images: Tensor::from_rows(&rows).unwrap(),
                labels,
            })
        })
        .unwrap();
        assert!(history.last().unwrap() < &(0.5 * history[0]), "{history:?}");
    }
}
