//! Property tests for invariants that hold for any input: normalization
//! fixed points, clipping, spectral energy, estimator symmetries and
//! on-disk round trips.

use grokscope::checkpoint::CheckpointStore;
use grokscope::data::{build_dataset, OpKind};
use grokscope::harness::{read_metrics_csv, write_metrics_csv, TraceRow, TrainTrace};
use grokscope::intrinsic_dim::{mle_id, twonn_id, MleMode, PointCloud};
use grokscope::landscape::{filter_normalize, Direction, DirectionKind, ZeroFilterPolicy};
use grokscope::model::{Model, ModelConfig};
use grokscope::optim::clip_grad_norm;
use grokscope::spectral::periodogram;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn small_model() -> Model {
    let ds = build_dataset(OpKind::ModAdd, 5, 5, false).unwrap();
    Model::new(ModelConfig::mlp(4, 8, ds.vocab_size, 5)).unwrap()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn direction(values: Vec<f64>) -> Direction {
    Direction {
        values,
        kind: DirectionKind::Random,
        anchor: 0,
    }
}

/// Nonzero entries so that no filter is degenerate.
fn nonzero_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![-3.0f64..-0.05, 0.05f64..3.0], n)
}

fn cloud_strategy() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (2usize..5).prop_flat_map(|dim| (prop::collection::vec(-10.0f64..10.0, 60 * dim), Just(dim)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn filter_normalize_is_idempotent_and_scale_free(
        (theta, d, s) in {
            let n = small_model().n_params();
            (nonzero_vec(n), nonzero_vec(n), 0.01f64..100.0)
        }
    ) {
        let model = small_model();
        let layout = model.layout();
        let once = filter_normalize(&direction(d.clone()), &theta, layout, ZeroFilterPolicy::Error).unwrap();
        let twice = filter_normalize(&once, &theta, layout, ZeroFilterPolicy::Error).unwrap();
        prop_assert!(max_abs_diff(&once.values, &twice.values) <= 1e-12 * (1.0 + norm(&theta)));

        let scaled: Vec<f64> = d.iter().map(|v| v * s).collect();
        let from_scaled = filter_normalize(&direction(scaled), &theta, layout, ZeroFilterPolicy::Error).unwrap();
        prop_assert!(max_abs_diff(&once.values, &from_scaled.values) <= 1e-12 * (1.0 + norm(&theta)));

        for e in &layout.entries {
            for w in e.filter_boundaries.windows(2) {
                let (a, b) = (norm(&once.values[w[0]..w[1]]), norm(&theta[w[0]..w[1]]));
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
            }
        }
    }

    #[test]
    fn clipping_bounds_norm_and_is_idempotent(
        g in prop::collection::vec(-100.0f64..100.0, 1..64),
        eta in 1e-3f64..50.0,
    ) {
        let mut once = g.clone();
        let original = clip_grad_norm(&mut once, eta);
        prop_assert!((original - norm(&g)).abs() <= 1e-12 * (1.0 + original));
        prop_assert!(norm(&once) <= eta * (1.0 + 1e-12));
        if original <= eta {
            prop_assert_eq!(&once, &g);
        }
        let mut twice = once.clone();
        clip_grad_norm(&mut twice, eta);
        prop_assert!(max_abs_diff(&once, &twice) <= 1e-12 * eta);
        // direction is preserved
        let dot: f64 = once.iter().zip(&g).map(|(a, b)| a * b).sum();
        prop_assert!(dot >= 0.0);
    }

    #[test]
    fn periodogram_preserves_energy(x in prop::collection::vec(-1e3f64..1e3, 2..300)) {
        let p = periodogram(&x).unwrap();
        let e: f64 = x.iter().map(|v| v * v).sum();
        prop_assert!((p.total_energy() - e).abs() <= 1e-9 * (1.0 + e));
        prop_assert!(p.energies.iter().all(|&v| v >= 0.0));
        prop_assert!(p.omegas.iter().all(|&w| (0.0..=std::f64::consts::PI + 1e-12).contains(&w)));
    }

    #[test]
    fn id_estimates_ignore_scale_and_rotation(
        (data, dim) in cloud_strategy(),
        scale in 0.01f64..100.0,
        seed in any::<u64>(),
    ) {
        let base = PointCloud::new(data.clone(), dim).unwrap();
        prop_assume!(base.len() > 10);

        let scaled = PointCloud::new(data.iter().map(|v| v * scale).collect(), dim).unwrap();
        let q = random_rotation(dim, seed);
        let rotated_data: Vec<f64> = data
            .chunks_exact(dim)
            .flat_map(|p| (&q * nalgebra::DVector::from_column_slice(p)).iter().copied().collect::<Vec<_>>())
            .collect();
        let rotated = PointCloud::new(rotated_data, dim).unwrap();

        let reference = mle_id(&base, 3, MleMode::Inverse).unwrap().value;
        let twonn_ref = twonn_id(&base, 0.1).unwrap().value;
        for other in [&scaled, &rotated] {
            let m = mle_id(other, 3, MleMode::Inverse).unwrap().value;
            prop_assert!((m - reference).abs() <= 1e-6 * reference.abs().max(1.0), "mle {m} vs {reference}");
            let t = twonn_id(other, 0.1).unwrap().value;
            prop_assert!((t - twonn_ref).abs() <= 1e-6 * twonn_ref.abs().max(1.0), "twonn {t} vs {twonn_ref}");
        }
    }

    #[test]
    fn metrics_csv_round_trips(rows in prop::collection::vec(trace_row(), 0..20)) {
        let trace = TrainTrace { rows };
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &trace).unwrap();
        let back = read_metrics_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, trace);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn checkpoint_directory_round_trips(
        steps in prop::collection::btree_set(0usize..10_000, 1..6),
        seed in any::<u64>(),
    ) {
        let model = small_model();
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("checkpoints");
        let mut store = CheckpointStore::create_dir(&dir, model.layout().clone()).unwrap();
        let snapshots: Vec<(usize, Vec<f64>)> = steps
            .iter()
            .enumerate()
            .map(|(i, &s)| (s, model.init_params(seed.wrapping_add(i as u64)).values))
            .collect();
        for (s, v) in &snapshots {
            store.save(*s, v).unwrap();
        }
        let reopened = CheckpointStore::open_dir(&dir).unwrap();
        prop_assert_eq!(reopened.steps(), steps.iter().copied().collect::<Vec<_>>());
        prop_assert_eq!(reopened.layout().as_ref(), model.layout().as_ref());
        for (s, v) in &snapshots {
            prop_assert_eq!(&reopened.load(*s).unwrap().values, v);
        }
    }
}

fn trace_row() -> impl Strategy<Value = TraceRow> {
    (
        0usize..1_000_000,
        (0.0f64..20.0, 0.0f64..20.0, 0.0f64..=1.0, 0.0f64..=1.0),
        (0.0f64..1e3, 0.0f64..1.0),
        (prop::option::of(-1.0f64..=1.0), prop::option::of(-1.0f64..=1.0)),
    )
        .prop_map(|(step, (tl, vl, ta, va), (grad_norm, lr), (cos_prev, cos_init))| TraceRow {
            step,
            train_loss: tl,
            val_loss: vl,
            train_acc: ta,
            val_acc: va,
            grad_norm,
            lr,
            cos_prev,
            cos_init,
        })
}

fn random_rotation(dim: usize, seed: u64) -> DMatrix<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
    m.qr().q()
}
