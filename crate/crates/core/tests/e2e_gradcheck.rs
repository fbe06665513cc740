use robdistill_core::distill::student_gradcheck;

#[test]
fn tiny_student_loss_gradients_match_finite_differences() {
    for seed in [1, 2, 3] {
        let r = student_gradcheck(seed, 1e-6, 1e-4).unwrap();
        assert!(r.checked > 100);
        assert!(
            r.failing.is_empty(),
            "seed {seed}: max rel err {} at {:?}",
            r.max_rel_err,
            &r.failing[..r.failing.len().min(5)]
        );
    }
}
