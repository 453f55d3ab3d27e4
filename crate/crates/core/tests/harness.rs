use adma::harness::gradcheck::{gradcheck_architectures, random_batch};
use adma::harness::{compare, emit_curves, gradcheck_model, sweep_a, train, DatasetSpec, TrainConfig};
use adma::losses::ProbabilityGrid;
use adma::optim::{OptimizerKind, OptimizerState};
use adma::{LossFunction, Rng};

fn quick() -> TrainConfig {
    let mut c = TrainConfig::blobs_default();
    c.dataset = DatasetSpec::blobs(3, 2, 40, 0.05);
    c.epochs = 10;
    c.batch_size = 16;
    c.lr = 0.1;
    c
}

#[test]
fn same_loss_twice_gives_identical_reports() {
    let mut c = quick();
    c.repetitions = 2;
    let cmp = compare(&c, &[LossFunction::cce(), LossFunction::cce()]).unwrap();
    let a = cmp.entries[0].result.as_ref().unwrap();
    let b = cmp.entries[1].result.as_ref().unwrap();
    for (x, y) in a.runs.iter().zip(&b.runs) {
        assert!(x.same_outcome(y));
        assert_eq!(serde_json::to_string(x).unwrap(), serde_json::to_string(y).unwrap());
    }
}

#[test]
fn compared_losses_share_init_and_data_order() {
    let c = quick();
    let cmp = compare(&c, &[LossFunction::cce(), LossFunction::adma(0.26).unwrap(), LossFunction::mse()]).unwrap();
    let runs: Vec<_> = cmp.entries.iter().map(|e| &e.result.as_ref().unwrap().runs[0]).collect();
    for r in &runs[1..] {
        assert_eq!(r.init_hash, runs[0].init_hash);
        assert_eq!(r.data_order_hash, runs[0].data_order_hash);
        assert_ne!(r.final_params_hash, runs[0].final_params_hash);
    }
}

#[test]
fn blobs_benchmark_adma_within_two_points_of_cce() {
    let mut c = TrainConfig::blobs_default();
    c.repetitions = 3;
    let cmp = compare(&c, &[LossFunction::adma(0.26).unwrap(), LossFunction::cce()]).unwrap();
    let adma = cmp.entries[0].result.as_ref().unwrap().final_val_acc_mean;
    let cce = cmp.entries[1].result.as_ref().unwrap().final_val_acc_mean;
    assert!((adma - cce).abs() <= 0.02, "adma {adma} cce {cce}");
}

#[test]
fn single_element_sweep_returns_it() {
    let s = sweep_a(&quick(), &[0.3]).unwrap();
    assert_eq!(s.rows.len(), 1);
    assert_eq!(s.best_a, 0.3);
    assert_eq!(Some(s.best_val_acc), s.rows[0].val_acc);
}

/// Frozen calibration: on the default separable blobs every grid value reaches
/// full validation accuracy, so the tie-break picks the lowest a.
#[test]
fn default_blobs_sweep_calibration() {
    let mut c = TrainConfig::blobs_default();
    c.repetitions = 3;
    let grid = [0.1, 0.2, 0.26, 0.3, 0.4, 0.5];
    let s = sweep_a(&c, &grid).unwrap();
    for row in &s.rows {
        assert_eq!(row.val_acc, Some(1.0), "a={}", row.a);
        assert!(!row.exceeds_recommended);
    }
    assert_eq!(s.best_a, 0.1);
}

#[test]
fn dense_cce_gradcheck_is_tight() {
    let (_, model) = gradcheck_architectures(5).unwrap().remove(0);
    let mut rng = Rng::new(5);
    let (x, y) = random_batch(&model, 16, &mut rng).unwrap();
    let errors = gradcheck_model(&model, &LossFunction::cce(), &x, &y).unwrap();
    let max = errors.iter().copied().fold(0.0, f64::max);
    assert!(max < 1e-5, "{max:e}");
}

#[test]
fn emit_curves_to_unwritable_path_fails() {
    let grid = ProbabilityGrid::new(0.01, 1.0, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"").unwrap();
    let path = blocker.join("curves.csv");
    assert!(emit_curves(&[0.26], &grid, 1e-7, &path).is_err());
}

#[test]
fn untrained_accuracy_is_chance() {
    // balanced validation set; by symmetry of the initialisation the expected
    // accuracy is 1/C, checked against the spread over seeds
    let classes = 4;
    let mut c = TrainConfig::blobs_default();
    c.dataset = DatasetSpec::blobs(classes, 3, 50, 0.1);
    c.stratified = true;
    c.epochs = 0;
    let accs: Vec<f64> = (0..60)
        .map(|seed| {
            c.seed = seed;
            train(&c).unwrap().initial_val_acc
        })
        .collect();
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let sd = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let chance = 1.0 / classes as f64;
    assert!((mean - chance).abs() < 3.0 * sd / n.sqrt() + 1e-12, "mean {mean} sd {sd}");
}

#[test]
fn zero_lr_steps_leave_gradcheck_unchanged() {
    let (_, mut model) = gradcheck_architectures(2).unwrap().remove(0);
    let loss = LossFunction::adma(0.3).unwrap();
    let mut rng = Rng::new(2);
    let (x, y) = random_batch(&model, 8, &mut rng).unwrap();
    let before = gradcheck_model(&model, &loss, &x, &y).unwrap();
    let mut opt = OptimizerState::new(OptimizerKind::adam(), 1e-3, 0.0).unwrap();
    opt.set_lr(0.0);
    for _ in 0..10 {
        let p = model.forward(&x).unwrap();
        let (_, grad) = loss.batch_value_and_grad(&p, &y).unwrap();
        model.backward(&grad).unwrap();
        opt.apply_update(&mut model.params_mut()).unwrap();
    }
    assert_eq!(opt.step_count(), 10);
    assert_eq!(gradcheck_model(&model, &loss, &x, &y).unwrap(), before);
}

#[test]
fn default_grid_brackets_reported_optima() {
    // smallest and largest tuned a across the published result tables
    let (lo, hi) = (0.2451, 0.3118);
    let grid = [0.1, 0.2, 0.26, 0.3, 0.4, 0.5];
    assert!(grid[0] < lo && hi < grid[grid.len() - 1]);
    let s = sweep_a(&quick(), &grid).unwrap();
    assert!(s.rows.iter().all(|r| !r.exceeds_recommended && r.error.is_none()));
}

#[test]
fn four_loss_comparison_table() {
    let losses = [
        LossFunction::adma(0.26).unwrap(),
        LossFunction::cce(),
        LossFunction::mse(),
        LossFunction::squared_hinge(),
    ];
    let cmp = compare(&quick(), &losses).unwrap();
    let names: Vec<String> = cmp.entries.iter().map(|e| e.loss.clone()).collect();
    assert_eq!(names, ["adma(0.26)", "cce", "mse", "squared_hinge"]);
    let table = cmp.table();
    for n in &names {
        assert!(table.contains(n.as_str()), "{table}");
    }
    assert!(cmp.entries.iter().all(|e| e.result.is_some()));
}
