//! With every unit matched on `g`, `T · Var(τ̂)` settles at twice the
//! per-pair limiting variance `σ²_red`.

use reservoir::dgp::{CovariateSampler, Setting1, Setting2};
use reservoir::estimators::sigma_red_sq;
use reservoir::harness::{run_cell, DataSource, DesignId, DgpId, ExperimentConfig, ResultTable};
use reservoir::RandomSource;

fn bai_t_var(dgp: DgpId, t: usize, reps: usize) -> f64 {
    let cfg = ExperimentConfig {
        dgp,
        replicates: reps,
        sizes: vec![t],
        designs: vec![DesignId::Bai],
        seed: 2,
        workers: 1,
        ..ExperimentConfig::default()
    };
    let rows = run_cell(&cfg, &DataSource::prepare(&cfg).unwrap(), DesignId::Bai, t).unwrap();
    let var = ResultTable { rows }.cell(dgp.label(), "bai", t).unwrap().variance;
    t as f64 * var
}

#[test]
fn setting1_exact_sigma_red() {
    // E[σ₁² + σ₀²] + Var((x₁+x₂)²)/2 = 0.02 + 127/360
    let exact = 0.02 + 127.0 / 360.0;
    let mut rng = RandomSource::new(1, 0);
    let est = sigma_red_sq(&Setting1, |x| Setting1.sample_into(&mut rng, x), 1_000_000).unwrap();
    assert!((est.value - exact).abs() < 4.0 * est.std_error);
}

#[test]
fn bai_variance_is_twice_sigma_red() {
    let mut rng = RandomSource::new(1, 0);
    let s1 = sigma_red_sq(&Setting1, |x| Setting1.sample_into(&mut rng, x), 1_000_000).unwrap();
    let s2_model = Setting2::new();
    let s2 = sigma_red_sq(&s2_model, |x| s2_model.sample_into(&mut rng, x), 1_000_000).unwrap();
    for (dgp, sigma) in [(DgpId::Setting1, s1.value), (DgpId::Setting2, s2.value)] {
        let tv = bai_t_var(dgp, 20_000, 400);
        // 400 replicates: the sample variance has a relative SE of about 7%
        assert!(
            (tv / (2.0 * sigma) - 1.0).abs() < 0.25,
            "{dgp}: T·Var {tv}, σ²_red {sigma}"
        );
        assert!(tv / sigma > 1.5, "{dgp}: T·Var {tv} is not near σ²_red {sigma}");
    }
}
