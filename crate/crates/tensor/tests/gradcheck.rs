use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robdistill_tensor::fixtures::{op_fixtures, randn, weighted_sum};
use robdistill_tensor::{gradcheck, Graph, Tensor};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn every_op_passes_over_ten_seeds() {
    let mut worst = Vec::new();
    for fx in op_fixtures() {
        let mut max_err: f64 = 0.0;
        for seed in 0..10 {
            let report = fx.check(seed, EPS, TOL).unwrap();
            assert!(report.passed(), "{} seed {seed}: {report:?}", fx.name);
            assert!(report.checked > 0);
            max_err = max_err.max(report.max_rel_err);
        }
        worst.push((fx.name, max_err));
    }
    for (name, err) in worst {
        println!("{name:>24}: max rel err {err:.2e}");
    }
}

#[test]
fn quadratic_is_exact() {
    let x = Tensor::new(vec![4], vec![0.3, -1.2, 2.5, 0.0]).unwrap();
    let report = gradcheck(
        |g, v| {
            let sq = g.mul(v[0], v[0])?;
            let s = g.sum(sq)?;
            g.scale(s, 0.5)
        },
        &[x],
        EPS,
        1e-8,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-8, "{report:?}");
}

#[test]
fn corrupted_backward_rule_is_caught() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = randn(&mut rng, &[5]);
    let report = gradcheck(
        |g: &mut Graph<f64>, v| {
            let value: Vec<f64> = g.value(v[0]).iter().map(|x| x.sin()).collect();
            // d/dx sin(x) is cos(x); the rule below doubles it.
            let y = g.custom(
                &[v[0]],
                vec![5],
                value,
                Box::new(|ins, _, up| vec![ins[0].iter().zip(up).map(|(x, u)| 2.0 * x.cos() * u).collect()]),
            )?;
            weighted_sum(g, y)
        },
        &[x],
        EPS,
        TOL,
    )
    .unwrap();
    assert!(!report.failing.is_empty());
    assert!(report.max_rel_err > 0.4);
}
