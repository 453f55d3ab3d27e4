use adma::harness::gradcheck::{gradcheck_architectures, gradcheck_losses, random_batch};
use adma::harness::{gradcheck, gradcheck_model, GRADCHECK_TOLERANCE};
use adma::nn::{Activation, Layer, Model};
use adma::{LossFunction, Rng, Tensor};

#[test]
fn every_architecture_and_loss_on_three_seeds() {
    for seed in [0, 1, 2] {
        let report = gradcheck(seed, 4).unwrap();
        assert_eq!(report.entries.len(), 5 * 6);
        for e in &report.entries {
            assert!(
                e.max_rel_err <= GRADCHECK_TOLERANCE,
                "seed {seed} {} {}: {:e}",
                e.architecture,
                e.loss,
                e.max_rel_err
            );
        }
        println!("seed {seed}: max relative error {:.3e}", report.max_rel_err());
    }
}

#[test]
fn dense_adma_meets_tight_tolerance() {
    let (_, model) = gradcheck_architectures(9).unwrap().remove(0);
    let mut rng = Rng::new(9);
    let (x, y) = random_batch(&model, 16, &mut rng).unwrap();
    for a in [0.1, 0.26, 0.5, 1.0] {
        let errors = gradcheck_model(&model, &LossFunction::adma(a).unwrap(), &x, &y).unwrap();
        let max = errors.iter().copied().fold(0.0, f64::max);
        assert!(max < 1e-5, "a={a}: {max:e}");
    }
}

#[test]
fn gradcheck_covers_every_layer_kind() {
    let mut kinds = std::collections::BTreeSet::new();
    for (_, model) in gradcheck_architectures(0).unwrap() {
        for layer in model.layers() {
            kinds.insert(match layer {
                Layer::Activation(Activation::Relu) => "relu",
                Layer::Activation(Activation::Elu { .. }) => "elu",
                Layer::Activation(Activation::LeakyRelu { .. }) => "leaky_relu",
                other => other.kind_name(),
            });
        }
    }
    for k in ["dense", "conv2d", "maxpool", "flatten", "dropout", "softmax", "relu", "elu", "leaky_relu"] {
        assert!(kinds.contains(k), "missing {k}: {kinds:?}");
    }
    assert_eq!(gradcheck_losses().len(), 6);
}

#[test]
fn dropout_mask_expectation() {
    // inverted dropout keeps each unit with probability 1 - rate and scales it by 1 / (1 - rate);
    // the kept count must sit within 3 sigma of its binomial mean
    let rate = 0.3;
    let n = 20_000;
    let mut model = Model::new(
        vec![2],
        vec![Layer::Dropout { rate }, Layer::Softmax],
        11,
    )
    .unwrap();
    let x = Tensor::new(vec![n, 2], (0..2 * n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
    let out = model.forward(&x).unwrap();
    // kept rows give softmax([1/keep, 0]); dropped rows give [0.5, 0.5]
    let keep = 1.0 - rate;
    let kept_value = 1.0 / (1.0 + (-1.0 / keep).exp());
    let kept = (0..n).filter(|&r| (out.row(r)[0] - kept_value).abs() < 1e-12).count();
    let dropped = (0..n).filter(|&r| (out.row(r)[0] - 0.5).abs() < 1e-12).count();
    assert_eq!(kept + dropped, n);
    let sigma = (n as f64 * keep * rate).sqrt();
    assert!((kept as f64 - n as f64 * keep).abs() < 3.0 * sigma, "kept {kept} of {n}");
}
