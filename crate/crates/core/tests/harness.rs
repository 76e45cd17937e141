use rand::Rng;
use reservoir::dgp::{CovariateSampler, Setting1};
use reservoir::harness::{
    cli_main, compare_designs, parse_csv, run_cell, DataSource, DesignId, ExperimentConfig, ResultRow,
    ResultTable, BOOTSTRAP_RESAMPLES,
};
use reservoir::{conditional_variance, estimators::unit_moments, Matrix, OutcomeModel, RandomSource};
use std::path::Path;

fn run(args: &[&str]) -> i32 {
    cli_main(std::iter::once("reservoir").chain(args.iter().copied()))
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_one_row_per_replicate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let code = run(&[
        "simulate",
        "--dgp",
        "setting1",
        "--design",
        "iid",
        "--T",
        "100",
        "--reps",
        "10",
        "--seed",
        "7",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code, 0);
    let table = parse_csv(&out).unwrap();
    assert_eq!(table.rows.len(), 10);
    assert!(table.rows.iter().all(|r| r.design == "iid" && r.t == 100));
}

#[test]
fn usage_and_config_errors_exit_1() {
    assert_eq!(run(&["simulate", "--no-such-flag"]), 1);
    assert_eq!(run(&["frobnicate"]), 1);
    assert_eq!(run(&["simulate", "--dgp", "setting9", "--T", "10"]), 1);
    assert_eq!(run(&["simulate", "--design", "kk15", "--T", "10"]), 1);
    assert_eq!(run(&["simulate", "--T", "0"]), 1);
    assert_eq!(run(&["simulate", "--T", "10", "--reps", "0"]), 1);
    assert_eq!(run(&["simulate", "--T", "10", "--kk-lambda", "2"]), 1);
    assert_eq!(run(&["criteo", "--dgp", "criteo", "--T", "10"]), 1);
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(
        run(&["criteo", "--data", path_str(&missing), "--T", "10", "--reps", "2"]),
        2
    );
    let out = dir.path().join("no-such-dir").join("r.csv");
    assert_eq!(
        run(&[
            "simulate",
            "--design",
            "iid",
            "--T",
            "10",
            "--reps",
            "2",
            "--out",
            path_str(&out)
        ]),
        2
    );
}

fn same_output(a: &[&str], b: &[&str]) {
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let with_out = |args: &[&str], p: &Path| -> Vec<String> {
        let mut v: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        v.extend(["--out".to_string(), path_str(p).to_string()]);
        v
    };
    let va = with_out(a, &pa);
    let vb = with_out(b, &pb);
    assert_eq!(run(&va.iter().map(String::as_str).collect::<Vec<_>>()), 0);
    assert_eq!(run(&vb.iter().map(String::as_str).collect::<Vec<_>>()), 0);
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
}

#[test]
fn kk14_lambda_defaults_to_one_tenth() {
    let base = [
        "simulate", "--dgp", "setting2", "--design", "kk14", "--T", "300", "--reps", "5",
    ];
    let mut explicit = base.to_vec();
    explicit.extend(["--kk-lambda", "0.1"]);
    same_output(&base, &explicit);
}

#[test]
fn packing_delta_defaults_to_zero() {
    let base = [
        "simulate", "--dgp", "setting1", "--design", "packing", "--T", "300", "--reps", "5",
    ];
    let mut explicit = base.to_vec();
    explicit.extend(["--delta", "0"]);
    same_output(&base, &explicit);
}

#[test]
fn worker_count_does_not_change_results() {
    let base = [
        "simulate", "--dgp", "setting2", "--design", "all", "--T", "50", "--T", "200", "--reps", "12",
    ];
    let mut one = base.to_vec();
    one.extend(["--workers", "1"]);
    let mut eight = base.to_vec();
    eight.extend(["--workers", "8"]);
    same_output(&one, &eight);
}

#[test]
fn iid_variance_matches_conditional_formula() {
    let cfg = ExperimentConfig {
        replicates: 2000,
        sizes: vec![100],
        designs: vec![DesignId::Iid],
        seed: 99,
        workers: 1,
        ..ExperimentConfig::default()
    };
    let source = DataSource::prepare(&cfg).unwrap();
    let rows = run_cell(&cfg, &source, DesignId::Iid, 100).unwrap();
    let table = ResultTable { rows };
    let observed = table.cell("setting1", "iid", 100).unwrap().variance;
    // replicates redraw X, so the prediction is E[Var(τ̂|X)] + Var(E[τ̂|X]),
    // where E[τ̂|X] is the sample mean of τ(X_i) = μ₁(X_i) − μ₀(X_i)
    let mut rng = RandomSource::new(5, 0);
    let draws = 2000;
    let mut within = 0.0;
    let mut means = Vec::with_capacity(draws);
    let mut x = Matrix::zeros(100, 2);
    for _ in 0..draws {
        for i in 0..100 {
            Setting1.sample_into(&mut rng, x.row_mut(i));
        }
        within += conditional_variance(&Setting1, &x, &[]).unwrap() / draws as f64;
        means.push(
            x.iter_rows()
                .map(|r| Setting1.mu1(r) - Setting1.mu0(r))
                .sum::<f64>()
                / 100.0,
        );
    }
    let m = means.iter().sum::<f64>() / draws as f64;
    let between = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (draws - 1) as f64;
    let predicted = within + between;
    assert!(
        (observed / predicted - 1.0).abs() < 0.15,
        "observed {observed}, predicted {predicted}"
    );
}

/// Constant `g`, zero noise: any perfect pairing has zero design variance.
struct ConstantG;

impl OutcomeModel for ConstantG {
    fn dimension(&self) -> usize {
        1
    }
    fn mu1(&self, x: &[f64]) -> f64 {
        1.0 + x[0]
    }
    fn mu0(&self, x: &[f64]) -> f64 {
        1.0 - x[0]
    }
    fn var1(&self, _: &[f64]) -> f64 {
        0.0
    }
    fn var0(&self, _: &[f64]) -> f64 {
        0.0
    }
}

#[test]
fn perfect_pairing_on_constant_g_has_small_ratio() {
    let model = ConstantG;
    let mut rows = Vec::new();
    let mut rng = RandomSource::new(3, 0);
    for t in [20usize, 200] {
        // X is held fixed: the claim is about design variance given X
        let x = Matrix::from_vec(t, 1, (0..t).map(|_| rng.random::<f64>()).collect()).unwrap();
        let m = unit_moments(&model, &x).unwrap();
        for rep in 0..200 {
            let g: Vec<f64> = m.iter().map(|u| u.g()).collect();
            let mut coin = RandomSource::new(rep as u64, 9);
            for (design, arms) in [
                (
                    "iid",
                    (0..t)
                        .map(|_| reservoir::Arm::from_bit(coin.fair_coin()))
                        .collect::<Vec<_>>(),
                ),
                (
                    "bai",
                    reservoir::designs::bai_optimal_assign(&g, &mut coin).unwrap().0,
                ),
            ] {
                let y: Vec<f64> = arms
                    .iter()
                    .zip(&m)
                    .map(|(a, u)| if a.as_u8() == 1 { u.mu1 } else { u.mu0 })
                    .collect();
                rows.push(ResultRow {
                    dgp: "constant-g".into(),
                    design: design.into(),
                    t,
                    replicate: rep,
                    tau_hat: reservoir::ipw_estimate(&arms, &y).unwrap(),
                    n_reservoir: 0,
                    mean_pair_distance: None,
                    seed: rep as u64,
                    data_checksum: 0,
                });
            }
        }
    }
    let cmp = compare_designs(&ResultTable { rows }, BOOTSTRAP_RESAMPLES, 1).unwrap();
    for c in cmp.iter().filter(|c| c.design == "bai") {
        assert!(c.ratio < 1e-20, "T = {}: ratio {}", c.t, c.ratio);
    }
}

#[test]
fn figures_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let figs = dir.path().join("figs");
    let out = dir.path().join("r.csv");
    let code = run(&[
        "simulate",
        "--dgp",
        "setting1",
        "--design",
        "all",
        "--T",
        "100",
        "--reps",
        "20",
        "--out",
        path_str(&out),
        "--figures",
        path_str(&figs),
    ]);
    assert_eq!(code, 0);
    let fig2 = std::fs::read_to_string(figs.join("fig2.csv")).unwrap();
    assert_eq!(fig2.lines().count(), 6);
    let fig3 = std::fs::read_to_string(figs.join("fig3.csv")).unwrap();
    assert!(fig3.lines().nth(1).unwrap().contains("iid"));
    let fig1 = dir.path().join("fig1.csv");
    assert_eq!(
        run(&[
            "diagnose",
            "--dgp",
            "setting2",
            "--T",
            "500",
            "--out",
            path_str(&fig1)
        ]),
        0
    );
    let text = std::fs::read_to_string(&fig1).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 500);
}

#[test]
fn oracle_g_design_runs_on_g() {
    let cfg = ExperimentConfig {
        replicates: 3,
        sizes: vec![64],
        workers: 1,
        ..ExperimentConfig::default()
    };
    let source = DataSource::prepare(&cfg).unwrap();
    let rows = run_cell(&cfg, &source, DesignId::OracleG, 64).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.n_reservoir < 64));
}
