use twopath::assoc::{concat_rows, robustness_predict, train_rbm, AssociativeMemory, NormStats, Rbm, RbmTrainConfig};
use twopath::checkpoint::Checkpoint;
use twopath::data::synthetic::{write_cifar10, SyntheticConfig};
use twopath::data::{load_cifar10, select_classes, Encoded, InputPipeline, LabeledImage};
use twopath::noise::{fgsm, input_gradient};
use twopath::ops::Mode;
use twopath::pathways::{evaluate_accuracy, forward_features, train_coarse, train_fine, NetworkSpec, Teacher, TrainConfig};
use twopath::Network32;

struct Fixture {
    train: Vec<LabeledImage>,
    test: Vec<LabeledImage>,
    _dir: tempfile::TempDir,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    write_cifar10(dir.path(), &SyntheticConfig { train_per_class: 60, test_per_class: 30, seed: 3 }).unwrap();
    let splits = load_cifar10(dir.path()).unwrap();
    let train = select_classes(&splits.train, &[0, 5]).unwrap().images;
    let test = select_classes(&splits.test, &[0, 5]).unwrap().images;
    Fixture { train, test, _dir: dir }
}

fn tiny(mut spec: NetworkSpec) -> NetworkSpec {
    spec.stages = spec.stages.iter().map(|&(_, k)| (4, k)).collect();
    spec.fc_width = 8;
    spec
}

fn cfg(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig { epochs, batch_size: 16, lr, lr_decay_epochs: vec![], seed: 11, ..TrainConfig::default() }
}

fn encode(pipeline: InputPipeline, f: &Fixture) -> (Encoded, Encoded) {
    let prepared = pipeline.fit(&f.train).unwrap();
    (Encoded::new(&prepared, &f.train).unwrap(), Encoded::new(&prepared, &f.test).unwrap())
}

fn trained_fine(f: &Fixture) -> (Network32, Encoded, Encoded) {
    let (train, test) = encode(InputPipeline::Raw, f);
    let mut net = Network32::build(&tiny(NetworkSpec::fine(2)), 5).unwrap();
    train_fine(&mut net, &train, None, &cfg(4, 0.05), |_| {}).unwrap();
    (net, train, test)
}

#[test]
fn fine_net_learns_from_a_cifar_archive_on_disk() {
    let f = fixture();
    let (mut net, _, test) = trained_fine(&f);
    let acc = evaluate_accuracy(&mut net, &test, 32).unwrap();
    assert!(acc > 0.75, "two-class accuracy {acc}");
}

#[test]
fn training_is_reproducible_to_the_byte() {
    let f = fixture();
    let a = trained_fine(&f).0.to_checkpoint().to_bytes().unwrap();
    let b = trained_fine(&f).0.to_checkpoint().to_bytes().unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_restores_identical_predictions() {
    let f = fixture();
    let (mut net, _, test) = trained_fine(&f);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fine.tpck");
    net.to_checkpoint().save(&path).unwrap();
    let mut back = Network32::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    let x = test.gather::<f32>(&[0, 1, 2, 3]);
    assert_eq!(net.forward(&x, Mode::Eval).unwrap().1, back.forward(&x, Mode::Eval).unwrap().1);
}

#[test]
fn imitation_pulls_coarse_features_toward_the_teacher() {
    let f = fixture();
    let (mut fine, fine_train, _) = trained_fine(&f);
    let (coarse_train, _) = encode(InputPipeline::LowPass { sigma: 2.0 }, &f);
    let (teacher_g, _) = forward_features(&mut fine, &fine_train, 32).unwrap();
    let spec = tiny(NetworkSpec::coarse(2));
    let gap = |imitate: bool, fine: &mut Network32| {
        let mut net = Network32::build(&spec, 9).unwrap();
        let teacher = imitate.then_some(Teacher { net: fine, inputs: &fine_train });
        let config = TrainConfig { alpha: 0.4, ..cfg(4, 0.01) };
        train_coarse(&mut net, &coarse_train, None, &config, teacher, |_| {}).unwrap();
        let (g, _) = forward_features(&mut net, &coarse_train, 32).unwrap();
        g.data().iter().zip(teacher_g.data()).map(|(a, b)| f64::from(a - b).powi(2)).sum::<f64>()
    };
    let plain = gap(false, &mut fine);
    let imitated = gap(true, &mut fine);
    assert!(imitated < plain, "feature distance {imitated} with imitation vs {plain} without");
}

#[test]
fn fgsm_raises_the_loss_it_attacks() {
    let f = fixture();
    let (mut net, _, _) = trained_fine(&f);
    let prepared = InputPipeline::Raw.fit(&f.train).unwrap();
    let pixels: Vec<_> = f.test.iter().map(|im| im.pixels.clone()).collect();
    let labels: Vec<usize> = f.test.iter().map(|im| im.fine_label).collect();
    let adv = fgsm(&mut net, &prepared, &pixels, &labels, 0.05, 16).unwrap();
    assert!(adv.iter().flat_map(|t| t.data()).all(|&v| (0.0..=1.0).contains(&v)));
    let loss = |net: &mut Network32, images: &[twopath::Tensor32]| {
        input_gradient(net, &prepared.batch(images).unwrap(), &labels).unwrap().0
    };
    let clean = loss(&mut net, &pixels);
    let attacked = loss(&mut net, &adv);
    assert!(attacked > clean, "loss {attacked} after attack vs {clean}");
}

#[test]
fn association_with_zero_steps_reproduces_fine_predictions() {
    let f = fixture();
    let (mut fine, fine_train, fine_test) = trained_fine(&f);
    let (coarse_train, coarse_test) = encode(InputPipeline::LowPass { sigma: 2.0 }, &f);
    let mut coarse = Network32::build(&tiny(NetworkSpec::coarse(2)), 4).unwrap();
    train_fine(&mut coarse, &coarse_train, None, &cfg(2, 0.01), |_| {}).unwrap();

    let (gf, _) = forward_features(&mut fine, &fine_train, 32).unwrap();
    let (gc, _) = forward_features(&mut coarse, &coarse_train, 32).unwrap();
    let pairs = concat_rows(&gc, &gf).unwrap();
    let stats = NormStats::fit(&pairs).unwrap();
    let mut rbm = Rbm::new(16, 32, 1);
    let rcfg = RbmTrainConfig { epochs: 20, batch_size: 16, lr_decay_epochs: vec![], ..RbmTrainConfig::default() };
    let curve = train_rbm(&mut rbm, &stats.normalize(&pairs).unwrap(), &rcfg, |_, _| {}).unwrap();
    assert!(curve.last().unwrap() < &curve[0]);
    let memory = AssociativeMemory::new(rbm, stats, None).unwrap();

    let (tf, pf) = forward_features(&mut fine, &fine_test, 32).unwrap();
    let (tc, _) = forward_features(&mut coarse, &coarse_test, 32).unwrap();
    assert_eq!(robustness_predict(&fine, &memory, &tc, &tf, 0).unwrap(), pf.argmax_rows());
    assert_eq!(robustness_predict(&fine, &memory, &tc, &tf, 5).unwrap().len(), fine_test.len());
}
