use proptest::prelude::*;
use robdistill_tensor::{nn, Graph, Tensor};

fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, len)
}

proptest! {
    #[test]
    fn conv_adjoint_identity(
        (c_in, c_out, k, s, l_out) in (1usize..4, 1usize..4, 1usize..5, 1usize..4, 1usize..6),
        seed in 0u64..1000,
    ) {
        let l = (l_out - 1) * s + k;
        let f = |i: usize, salt: f64| ((i as f64 + seed as f64) * salt).sin();
        let xs = Tensor::<f64>::from_fn(vec![c_in, l], |i| f(i, 0.37));
        let ws = Tensor::<f64>::from_fn(vec![c_out, c_in, k], |i| f(i, 0.91));
        let ys = Tensor::<f64>::from_fn(vec![c_out, l_out], |i| f(i, 1.43));
        let mut g = Graph::inference();
        let (x, w, y) = (g.constant(xs.clone()), g.constant(ws), g.constant(ys.clone()));
        let fwd = g.conv1d(x, w, None, s, 0, 1).unwrap();
        let adj = g.conv_transpose1d(y, w, None, s).unwrap();
        let lhs: f64 = g.value(fwd).iter().zip(ys.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = g.value(adj).iter().zip(xs.data()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn softmax_is_a_simplex(data in vec_strategy(12)) {
        let mut g = Graph::inference();
        let x = g.constant(Tensor::new(vec![3, 4], data.iter().map(|v| v * 10.0).collect()).unwrap());
        let y = g.softmax(x).unwrap();
        for row in g.value(y).chunks(4) {
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_convex_combinations_of_values(
        q in vec_strategy(8), k in vec_strategy(8), v in vec_strategy(8),
    ) {
        let mut g = Graph::inference();
        let q = g.constant(Tensor::new(vec![4, 2], q).unwrap());
        let k = g.constant(Tensor::new(vec![4, 2], k).unwrap());
        let vs = Tensor::new(vec![4, 2], v).unwrap();
        let v = g.constant(vs.clone());
        let y = nn::multi_head_attention(&mut g, q, k, v, 1).unwrap();
        for col in 0..2 {
            let column: Vec<f64> = (0..4).map(|r| vs.data()[r * 2 + col]).collect();
            let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for r in 0..4 {
                let out = g.value(y)[r * 2 + col];
                prop_assert!(out >= lo - 1e-12 && out <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn ops_stay_finite_on_bounded_inputs(data in vec_strategy(24)) {
        let mut g = Graph::inference();
        let x = g.constant(Tensor::new(vec![4, 6], data).unwrap());
        let gamma = g.constant(Tensor::full(vec![6], 1.0));
        let beta = g.constant(Tensor::zeros(vec![6]));
        let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        let y = g.gelu(y).unwrap();
        let y = g.log_softmax(y).unwrap();
        let y = g.log_sigmoid(y).unwrap();
        let c = nn::cosine_sim(&mut g, y, x).unwrap();
        prop_assert!(g.value(c).iter().all(|v| v.is_finite()));
    }
}
