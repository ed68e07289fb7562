mod common;

use common::random_model;
use lora_mgpo::adapters::{hex_to_f64, f64_to_hex, MlpModel, TensorContainer};
use lora_mgpo::harness::{telemetry_from_csv, telemetry_to_csv, TelemetryRow};
use lora_mgpo::metrics::{rebound_metric, smooth, LossCurve};
use lora_mgpo::numcore::{global_l2_norm, normal_fill, Matrix, Rng};
use lora_mgpo::tasks::{BatchStream, BatchStreamState};
use proptest::prelude::*;

fn matrix(seed: u64, rows: usize, cols: usize) -> Matrix {
    normal_fill(&mut Rng::new(seed), rows, cols, 0.0, 1.0).unwrap()
}

fn small_model(seed: u64, depth: usize, width: usize, rank: usize) -> MlpModel {
    let dims = vec![width; depth + 1];
    random_model(&mut Rng::new(seed), &dims, rank, 2.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), m in 1usize..9, k in 1usize..9, l in 1usize..9, n in 1usize..9) {
        let a = matrix(seed, m, k);
        let b = matrix(seed ^ 1, k, l);
        let c = matrix(seed ^ 2, l, n);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = left.data().iter().fold(1.0f64, |s, v| s.max(v.abs()));
        prop_assert!(left.max_abs_diff(&right) <= 1e-9 * scale);
    }

    #[test]
    fn transposed_products_agree(seed in any::<u64>(), m in 1usize..9, k in 1usize..9, n in 1usize..9) {
        let a = matrix(seed, m, k);
        let b = matrix(seed ^ 3, n, k);
        let direct = a.matmul(&b.transpose()).unwrap();
        prop_assert!(direct.max_abs_diff(&a.matmul_t(&b).unwrap()) < 1e-12);
        let c = matrix(seed ^ 4, m, n);
        prop_assert!(a.transpose().matmul(&c).unwrap().max_abs_diff(&a.t_matmul(&c).unwrap()) < 1e-12);
    }

    #[test]
    fn norm_scales_with_absolute_factor(seed in any::<u64>(), s in -1e3f64..1e3, rows in 1usize..6, cols in 1usize..6) {
        let a = matrix(seed, rows, cols);
        let b = matrix(seed ^ 5, cols, rows);
        let n = global_l2_norm([&a, &b]).unwrap();
        let scaled = global_l2_norm([&a.scale(s), &b.scale(s)]).unwrap();
        prop_assert!((scaled - s.abs() * n).abs() <= 1e-12 * s.abs().max(1.0) * n);
    }

    #[test]
    fn norm_ignores_tensor_boundaries(seed in any::<u64>(), sizes in prop::collection::vec(1usize..12, 1..5)) {
        let parts: Vec<Matrix> = sizes.iter().enumerate().map(|(i, &s)| matrix(seed ^ i as u64, 1, s)).collect();
        let flat: Vec<f64> = parts.iter().flat_map(|p| p.data().to_vec()).collect();
        let whole = Matrix::new(1, flat.len(), flat).unwrap();
        prop_assert_eq!(global_l2_norm(&parts).unwrap().to_bits(), global_l2_norm([&whole]).unwrap().to_bits());
    }

    #[test]
    fn factored_and_merged_forward_agree(seed in any::<u64>(), m in 1usize..12, n in 1usize..12, r in 1usize..5, rows in 1usize..8) {
        let model = random_model(&mut Rng::new(seed), &[n, m], r, 3.0);
        let layer = &model.layers()[0];
        let x = matrix(seed ^ 6, rows, n);
        let a = layer.forward(&x).unwrap();
        let b = layer.forward_merged(&x).unwrap();
        let scale = a.data().iter().fold(1.0f64, |s, v| s.max(v.abs()));
        prop_assert!(a.max_abs_diff(&b) <= 1e-12 * scale);
    }

    #[test]
    fn rebound_is_affine_invariant(losses in prop::collection::vec(0.0f64..10.0, 2..60), a in 1e-3f64..1e3, b in -100.0f64..100.0) {
        let c = LossCurve::new(losses.clone()).unwrap();
        let t = LossCurve::new(losses.iter().map(|l| a * l + b).collect()).unwrap();
        let r1 = rebound_metric(&c).unwrap();
        let r2 = rebound_metric(&t).unwrap();
        prop_assert!((r1 - r2).abs() <= 1e-9 * r1.max(1.0), "{} vs {}", r1, r2);
    }

    #[test]
    fn monotone_curves_never_rebound(mut losses in prop::collection::vec(0.0f64..10.0, 2..60)) {
        losses.sort_by(|a, b| b.partial_cmp(a).unwrap());
        prop_assert_eq!(rebound_metric(&LossCurve::new(losses).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn smoothing_keeps_constants_and_length(v in -1e6f64..1e6, n in 1usize..80, w in 1usize..30) {
        let c = LossCurve::new(vec![v; n]).unwrap();
        let w = w.min(n);
        let s = smooth(&c, w).unwrap();
        prop_assert_eq!(s.len(), n);
        prop_assert!(s.losses().iter().all(|x| (x - v).abs() <= 1e-12 * v.abs()));
    }

    #[test]
    fn each_epoch_is_a_permutation(n in 1usize..200, batch in 1usize..40, seed in any::<u64>()) {
        let mut stream = BatchStream::new(n, batch, seed).unwrap();
        for _ in 0..2 {
            let mut seen: Vec<usize> = (0..stream.batches_per_epoch()).flat_map(|_| stream.next_indices()).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn batch_stream_resumes_from_state(n in 1usize..100, batch in 1usize..20, seed in any::<u64>(), skip in 0usize..30) {
        let mut a = BatchStream::new(n, batch, seed).unwrap();
        for _ in 0..skip {
            a.next_indices();
        }
        let state: BatchStreamState = a.state();
        let mut b = BatchStream::from_state(n, batch, state).unwrap();
        for _ in 0..10 {
            prop_assert_eq!(a.next_indices(), b.next_indices());
        }
    }

    #[test]
    fn hex_floats_round_trip(bits in any::<u64>()) {
        let x = f64::from_bits(bits);
        prop_assume!(!x.is_nan());
        prop_assert_eq!(hex_to_f64(&f64_to_hex(x)).unwrap().to_bits(), bits);
    }

    #[test]
    fn model_container_round_trips(seed in any::<u64>(), depth in 1usize..4, width in 1usize..8, rank in 1usize..4) {
        let model = small_model(seed, depth, width, rank);
        let text = model.to_container().unwrap().to_text();
        let back = MlpModel::from_container(&TensorContainer::from_text(&text).unwrap()).unwrap();
        prop_assert!(back.params().bitwise_eq(&model.params()));
        let x = matrix(seed, 3, width);
        prop_assert!(back.predict(&x).unwrap().bitwise_eq(&model.predict(&x).unwrap()));
    }

    #[test]
    fn telemetry_csv_round_trips(seed in any::<u64>(), n in 0usize..40) {
        let mut rng = Rng::new(seed);
        let rows: Vec<TelemetryRow> = (0..n).map(|step| TelemetryRow {
            step,
            loss: rng.standard_normal().exp(),
            grad_norm: rng.uniform() * 1e-3,
            g_bar: rng.uniform() * 1e7,
            perturb_norm: if step % 3 == 0 { 0.0 } else { rng.uniform() },
            grad_evals: 1 + step as u64 % 2,
            lr: 1e-3 / (1 + step) as f64,
        }).collect();
        let (hash, back) = telemetry_from_csv(&telemetry_to_csv(&rows, "abc123")).unwrap();
        prop_assert_eq!(hash, "abc123");
        prop_assert_eq!(back.len(), rows.len());
        prop_assert!(rows.iter().zip(&back).all(|(a, b)| a.bitwise_eq(b)));
    }
}
