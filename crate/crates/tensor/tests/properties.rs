use proptest::prelude::*;
use tsg_tensor::Tensor;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
}

proptest! {
    #[test]
    fn softmax_rows_are_probabilities(data in matrix(4, 7), shift in -50.0f64..50.0) {
        let x = Tensor::<f64>::from_f64(&[4, 7], &data.iter().map(|v| v * 10.0 + shift).collect::<Vec<_>>()).unwrap();
        let y = x.softmax(1).unwrap().to_vec();
        for row in y.chunks(7) {
            prop_assert!(row.iter().all(|&v| v > 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn matmul_is_associative(a in matrix(3, 4), b in matrix(4, 5), c in matrix(5, 2)) {
        let a = Tensor::<f64>::from_f64(&[3, 4], &a).unwrap();
        let b = Tensor::<f64>::from_f64(&[4, 5], &b).unwrap();
        let c = Tensor::<f64>::from_f64(&[5, 2], &c).unwrap();
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap().to_vec();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap().to_vec();
        let scale = left.iter().chain(&right).fold(1.0f64, |m, v| m.max(v.abs()));
        for (l, r) in left.iter().zip(&right) {
            prop_assert!((l - r).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn upsample_preserves_constants(
        value in -100.0f64..100.0,
        h in 1usize..5, w in 1usize..5, dh in 0usize..6, dw in 0usize..6,
    ) {
        let x = Tensor::<f64>::full(&[h * w, 3], value).unwrap();
        let up = x.upsample_bilinear((h, w), (h + dh, w + dw)).unwrap().to_vec();
        prop_assert!(up.iter().all(|&v| (v - value).abs() <= 1e-12));
    }

    #[test]
    fn upsample_is_linear_in_rows(data in matrix(6, 2), scale in -2.0f64..2.0) {
        let x = Tensor::<f64>::from_f64(&[6, 2], &data).unwrap();
        let a = x.upsample_bilinear((3, 2), (7, 5)).unwrap().to_vec();
        let b = x.scale(scale).upsample_bilinear((3, 2), (7, 5)).unwrap().to_vec();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u * scale - v).abs() <= 1e-12);
        }
    }
}
