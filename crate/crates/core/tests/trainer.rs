use mapspan::autodiff::{grad_check, ParameterSet, Tape, Tensor, DEFAULT_STEP};
use mapspan::data::{generate_needle_task, NeedleConfig, Span};
use mapspan::encoder::{EncoderConfig, EncoderKind, EncoderOutput, Vocabulary};
use mapspan::heads::*;
use mapspan::model::{Directions, HeadKind, Model, ModelConfig};
use mapspan::trainer::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent top-k oracle: a non-gold valid index is kept iff fewer than
/// `k − 1` valid non-gold indices beat it (higher probability, or equal
/// probability and lower index).
fn oracle_sample(p: &[f64], valid: &[bool], truth: usize, k: usize) -> Vec<usize> {
    let mut keep = vec![truth];
    for j in 0..p.len() {
        if j == truth || !valid[j] {
            continue;
        }
        let beaten_by = (0..p.len())
            .filter(|&i| i != truth && valid[i] && i != j)
            .filter(|&i| p[i] > p[j] || (p[i] == p[j] && i < j))
            .count();
        if beaten_by < k - 1 {
            keep.push(j);
        }
    }
    keep.sort_unstable();
    keep
}

fn quantised_probs() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..6, n),
            prop::collection::vec(prop::bool::weighted(0.9), n),
        )
            .prop_map(|(w, valid)| {
                let total: f64 = w.iter().map(|&x| x as f64 + 1.0).sum();
                (w.iter().map(|&x| (x as f64 + 1.0) / total).collect(), valid)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn sample_indices_contract((p, mut valid) in quantised_probs(), truth_seed in 0usize..1000, k in 1usize..45) {
        let truth = truth_seed % p.len();
        valid[truth] = true;
        let pv = ProbVector::new(p.clone(), valid.clone()).unwrap();
        let got = sample_indices(&pv, truth, k).unwrap();
        let n_valid = valid.iter().filter(|&&v| v).count();
        prop_assert_eq!(got.iter().filter(|&&i| i == truth).count(), 1);
        prop_assert_eq!(got.len(), k.min(n_valid));
        prop_assert!(got.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(got, oracle_sample(&p, &valid, truth, k));
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn sampled_matrices_are_consistent_slices() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..1000 {
        let n = rng.gen_range(1..=32);
        let d = rng.gen_range(2..6);
        let head = MapHead {
            direction: if trial % 2 == 0 { Direction::Forward } else { Direction::Backward },
            first: FirstPosition::Linear,
            d,
            l: d,
        };
        let mut params = ParameterSet::new();
        head.init(&mut params, 1.5, &mut rng).unwrap();
        let enc = EncoderOutput::new(random_matrix(n, d, &mut rng), random_matrix(2, d, &mut rng));
        let (first, second) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let cfg = TrainConfig {
            sample_k: rng.gen_range(1..=25),
            norm_mode: if trial % 3 == 0 { NormMode::RowWise } else { NormMode::JointFlat },
            shared_columns: trial % 5 == 0,
            ..TrainConfig::default()
        };
        let p_first = map_first(&enc, &head, &params).unwrap();
        let sm = build_sampled_matrix(&enc, &head, &params, &p_first, first, second, &cfg).unwrap();

        let k = cfg.sample_k.min(n);
        assert_eq!(sm.row_indices.len(), k);
        assert!(sm.col_indices.iter().all(|c| c.len() == k));
        let (r, c) = sm.truth_cell;
        assert_eq!((sm.row_indices[r], sm.col_indices[r][c]), (first, second));
        match cfg.norm_mode {
            NormMode::JointFlat => {
                let total: f64 = sm.probs.iter().flatten().sum();
                assert!((total - 1.0).abs() < 1e-9, "{total}");
            }
            NormMode::RowWise => {
                for row in &sm.probs {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
        for (i, (&row, cols)) in sm.row_indices.iter().zip(&sm.col_indices).enumerate() {
            let full = map_row_logits(&enc.h, row, &head, &params, None).unwrap();
            for (j, &col) in cols.iter().enumerate() {
                assert_eq!(sm.logits[i][j].to_bits(), full[col].to_bits());
            }
        }
    }
}

fn tiny_model(head: HeadKind, directions: Directions, vocab: usize, seed: u64) -> Model {
    Model::init(ModelConfig {
        directions,
        ..ModelConfig::new(
            EncoderConfig {
                hidden: 8,
                embed: 6,
                kind: EncoderKind::BiRecurrent,
                vocab_size: vocab,
                max_len: 64,
                seed,
                match_feature: false,
            },
            head,
        )
    })
    .unwrap()
}

fn random_example(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> TrainExample {
    let start = rng.gen_range(0..n);
    let end = rng.gen_range(start..n);
    TrainExample {
        question: (0..3).map(|_| rng.gen_range(3..vocab)).collect(),
        passage: (0..n).map(|_| rng.gen_range(3..vocab)).collect(),
        span: Span::new(start, end),
    }
}

#[test]
fn k_equal_n_row_wise_matches_full_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ex = random_example(&mut rng, 16, 12);
    for directions in [Directions::Forward, Directions::Both] {
        let base = TrainConfig {
            sample_k: 16,
            norm_mode: NormMode::RowWise,
            batch_size: 1,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let full_cfg = TrainConfig {
            matrix: MatrixLoss::Full,
            ..base.clone()
        };
        let mut sampled = Trainer::new(tiny_model(HeadKind::Map, directions, 12, 2), base).unwrap();
        let mut full = Trainer::new(tiny_model(HeadKind::Map, directions, 12, 2), full_cfg).unwrap();
        for step in 0..50 {
            let a = sampled.step(std::slice::from_ref(&ex), 1).unwrap();
            let b = full.step(std::slice::from_ref(&ex), 1).unwrap();
            assert!((a.l - b.l).abs() < 1e-12, "step {step}: {} vs {}", a.l, b.l);
            assert!((a.l_s - b.l_s).abs() < 1e-12 && (a.l_e - b.l_e).abs() < 1e-12);
        }
        assert!(sampled.log.records[49].l < sampled.log.records[0].l);
    }
}

#[test]
fn sampled_loss_gradients_through_the_encoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let ex = random_example(&mut rng, 7, 9);
    for (directions, norm_mode) in [
        (Directions::Forward, NormMode::JointFlat),
        (Directions::Both, NormMode::RowWise),
    ] {
        let mut model = tiny_model(HeadKind::Map, directions, 9, 4);
        let names: Vec<String> = model.params.names().map(str::to_string).collect();
        for name in &names {
            for v in model.params.values_mut(name).unwrap() {
                *v *= 8.0;
            }
        }
        let cfg = TrainConfig {
            sample_k: 3,
            norm_mode,
            ..TrainConfig::default()
        };
        let plans = {
            let mut tape = Tape::new();
            let b = tape.bind(&model.params);
            record_loss(&mut tape, &b, &model.config, &cfg, &ex).unwrap().plans
        };
        assert_eq!(plans.len(), directions.list().len());
        let report = grad_check(
            |tape, b| Ok(record_loss_with_plans(tape, b, &model.config, &cfg, &ex, &plans)?.root),
            &model.params,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }
}

#[test]
fn fixed_plans_must_fit_the_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ex = random_example(&mut rng, 6, 9);
    let model = tiny_model(HeadKind::Map, Directions::Both, 9, 1);
    let cfg = TrainConfig::default();
    let mut tape = Tape::new();
    let b = tape.bind(&model.params);
    let plans = record_loss(&mut tape, &b, &model.config, &cfg, &ex).unwrap().plans;
    assert!(record_loss_with_plans(&mut tape, &b, &model.config, &cfg, &ex, &plans[..1]).is_err());
}

#[test]
fn training_is_reproducible_and_logs_every_step() {
    let data = generate_needle_task(&NeedleConfig {
        num_examples: 40,
        passage_len: (6, 10),
        needle_len: (1, 3),
        vocab_size: 10,
        seed: 3,
    })
    .unwrap();
    let vocab = Vocabulary::from_tokens(data.iter().flat_map(|e| e.passage.iter().chain(&e.question)));
    let ids = TrainExample::encode_all(&data, &vocab).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: 2,
        sample_k: 4,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let run = || {
        let (model, log) = train(tiny_model(HeadKind::Map, Directions::Both, vocab.len(), 6), &ids, &cfg).unwrap();
        let losses: Vec<(usize, usize, f64, f64, f64)> =
            log.records.iter().map(|r| (r.step, r.epoch, r.l_s, r.l_e, r.l)).collect();
        (model, losses)
    };
    let (m1, l1) = run();
    let (m2, l2) = run();
    assert_eq!(l1, l2);
    assert_eq!(m1, m2);
    assert_eq!(l1.len(), 2 * 5);
    assert_eq!(l1.last().unwrap().0, 10);

    let mut csv = Vec::new();
    let (_, log) = train(tiny_model(HeadKind::Ind, Directions::Forward, vocab.len(), 6), &ids, &cfg).unwrap();
    log.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,epoch,L_s,L_e,L,wall_ms"));
    assert_eq!(lines.count(), log.records.len());
}

#[test]
fn training_lowers_the_needle_loss() {
    let data = generate_needle_task(&NeedleConfig {
        num_examples: 64,
        passage_len: (8, 12),
        needle_len: (1, 2),
        vocab_size: 12,
        seed: 9,
    })
    .unwrap();
    let vocab = Vocabulary::from_tokens(data.iter().flat_map(|e| e.passage.iter().chain(&e.question)));
    let ids = TrainExample::encode_all(&data, &vocab).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: 4,
        sample_k: 5,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let model = tiny_model(HeadKind::Map, Directions::Forward, vocab.len(), 1);
    let before = evaluate_loss(&model, &ids, &cfg).unwrap();
    let (model, log) = train(model, &ids, &cfg).unwrap();
    let after = evaluate_loss(&model, &ids, &cfg).unwrap();
    assert!(after.l < before.l, "{before:?} -> {after:?}");
    assert_eq!(log.records.len(), 4 * 8);
}

#[test]
fn full_matrix_loss_is_refused_above_the_cap() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ex = random_example(&mut rng, 12, 9);
    let model = tiny_model(HeadKind::Map, Directions::Forward, 9, 1);
    let cfg = TrainConfig {
        matrix: MatrixLoss::Full,
        max_sequence: 10,
        ..TrainConfig::default()
    };
    let err = example_gradient(&model, &cfg, &ex).unwrap_err();
    assert!(matches!(err, mapspan::Error::Resource(_)), "{err}");
    let sampled = TrainConfig {
        matrix: MatrixLoss::Sampled,
        ..cfg
    };
    assert!(example_gradient(&model, &sampled, &ex).is_ok());
}

#[test]
fn probe_truth_always_rises_and_gradients_have_the_expected_signs() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let k = rng.gen_range(2..=20);
        let z = Tensor::matrix(k, k, (0..k * k).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let truth = (rng.gen_range(0..k), rng.gen_range(0..k));
        let rep = gradient_direction_probe(&z, truth, 0.1).unwrap();
        assert!(rep.truth_rose);
        assert_eq!(rep.others_wrong_sign, 0);
        assert_eq!(rep.unsampled_max_grad, 0.0);
    }
}

#[test]
fn probe_others_fall_when_the_gold_cell_is_modal() {
    // Then Σp² ≤ p_gold, which makes every other cell's first-order change
    // negative.
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let k = rng.gen_range(2..=8);
        let mut data: Vec<f64> = (0..k * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let truth = (rng.gen_range(0..k), rng.gen_range(0..k));
        let top = data.iter().cloned().fold(f64::MIN, f64::max);
        data[truth.0 * k + truth.1] = top + 0.5;
        let z = Tensor::matrix(k, k, data).unwrap();
        let rep = gradient_direction_probe(&z, truth, 0.01).unwrap();
        assert!(rep.holds(), "{rep:?}");
    }
}

#[test]
fn probe_counts_cells_that_rise_against_the_gold() {
    // A dominant non-gold cell: Σp² exceeds p_gold + p_j for the small cells,
    // so they gain mass from the dominant one.
    let mut data = vec![0.0; 9];
    data[4] = 6.0;
    let z = Tensor::matrix(3, 3, data).unwrap();
    let rep = gradient_direction_probe(&z, (0, 0), 0.1).unwrap();
    assert!(rep.truth_rose);
    assert_eq!(rep.others_wrong_sign, 0);
    assert_eq!(rep.others_not_falling, 7);
    assert!(rep.probs_after[4] < rep.probs_before[4]);
}
