use evslab_autograd::{read_archive, write_archive, Graph, ParamSet, Tensor};
use proptest::prelude::*;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0..20.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_columns_sum_to_one(v in values(15)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[3, 5], v).unwrap());
        let p = g.softmax0(x).unwrap();
        let p = g.value(p);
        for c in 0..5 {
            let s: f64 = (0..3).map(|r| p.data()[r * 5 + c]).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!((0..3).all(|r| p.data()[r * 5 + c] >= 0.0));
        }
    }

    #[test]
    fn gradient_of_sum_is_ones(v in values(12)) {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(&[3, 4], v).unwrap());
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        prop_assert!(grads.get_or_zeros(x, &[3, 4]).data().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn gradients_accumulate_over_reuse(v in values(6), k in 1..5usize) {
        // d/dx sum(x + x + ... + x) = k
        let mut g = Graph::new();
        let x = g.param(Tensor::new(&[6], v).unwrap());
        let mut acc = x;
        for _ in 1..k {
            acc = g.add(acc, x).unwrap();
        }
        let s = g.sum(acc);
        let grads = g.backward(s).unwrap();
        prop_assert!(grads.get_or_zeros(x, &[6]).data().iter().all(|&d| d == k as f64));
    }

    #[test]
    fn archive_roundtrip_is_exact(a in values(6), b in values(4)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let mut p = ParamSet::new();
        p.push("a", Tensor::new(&[2, 3], a).unwrap());
        p.push("b", Tensor::new(&[4], b).unwrap());
        write_archive(&path, &p, serde_json::Map::new()).unwrap();
        let (back, _) = read_archive(&path).unwrap();
        prop_assert_eq!(back.names(), p.names());
        for (x, y) in back.tensors().iter().zip(p.tensors()) {
            prop_assert_eq!(x.shape(), y.shape());
            prop_assert!(x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }
}
