mod common;

use common::*;
use lora_mgpo::adapters::{MlpModel, TensorContainer};
use lora_mgpo::numcore::Rng;
use lora_mgpo::optimizers::{
    compute_perturbation, AdamWHyper, ApnState, Method, MgpoConfig, Optimizer,
};
use lora_mgpo::tasks::{BatchStream, Dataset};

fn all_methods(rho: f64) -> Vec<Method> {
    vec![
        Method::AdamW,
        Method::Mgpo(MgpoConfig::new(rho).unwrap()),
        Method::MgpoNoApn(MgpoConfig::new(rho).unwrap()),
        Method::Sam { rho },
        Method::Noise { rho },
    ]
}

fn optimizer(method: Method, model: &MlpModel, lr: f64, wd: f64) -> Optimizer {
    let hyper = AdamWHyper { lr, weight_decay: wd, ..AdamWHyper::default() };
    Optimizer::new(method, model, hyper, 0.9, 77).unwrap()
}

fn batches(data: &Dataset, n: usize, seed: u64) -> Vec<Dataset> {
    let mut s = BatchStream::new(data.len(), 32, seed).unwrap();
    (0..n).map(|_| s.next_batch(data).unwrap()).collect()
}

#[test]
fn zero_learning_rate_leaves_parameters_bitwise() {
    let (task, _) = lowrank_setup(0, 8);
    let mut rng = Rng::new(8);
    for method in all_methods(0.5) {
        let mut model = random_model(&mut rng, &[32, 32], 8, 8.0);
        let before = model.params();
        let mut opt = optimizer(method, &model, 0.0, 0.0);
        for b in batches(&task.train, 30, 1) {
            opt.step(&mut model, &b).unwrap();
        }
        assert!(model.params().bitwise_eq(&before), "{}", method.name());
    }
}

#[test]
fn mgpo_with_zero_rho_is_adamw() {
    let (task, init) = lowrank_setup(4, 32);
    let (mut a, mut b) = (init.clone(), init);
    let mut plain = optimizer(Method::AdamW, &a, 0.05, 0.01);
    let mut mgpo = optimizer(Method::Mgpo(MgpoConfig::new(0.0).unwrap()), &b, 0.05, 0.01);
    for batch in batches(&task.train, 100, 2) {
        let ra = plain.step(&mut a, &batch).unwrap();
        let rb = mgpo.step(&mut b, &batch).unwrap();
        assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
        assert!(!rb.perturbed);
    }
    assert!(a.params().bitwise_eq(&b.params()));
    assert!(plain.adamw().m().bitwise_eq(mgpo.adamw().m()));
    assert!(plain.adamw().v().bitwise_eq(mgpo.adamw().v()));
}

#[test]
fn vanishing_sam_radius_tracks_adamw() {
    let (task, init) = lowrank_setup(5, 16);
    let (mut a, mut b) = (init.clone(), init);
    let mut plain = optimizer(Method::AdamW, &a, 0.01, 0.0);
    let mut sam = optimizer(Method::Sam { rho: 1e-300 }, &b, 0.01, 0.0);
    for batch in batches(&task.train, 50, 3) {
        plain.step(&mut a, &batch).unwrap();
        sam.step(&mut b, &batch).unwrap();
    }
    assert!(a.params().max_abs_diff(&b.params()) < 1e-9);
}

#[test]
fn gradient_evaluations_per_step() {
    let (task, init) = lowrank_setup(6, 8);
    for (method, per_step) in all_methods(0.05).into_iter().zip([1, 1, 1, 2, 1]) {
        let mut model = init.clone();
        let mut opt = optimizer(method, &model, 0.01, 0.0);
        for batch in batches(&task.train, 20, 4) {
            let before = model.grad_evals();
            let report = opt.step(&mut model, &batch).unwrap();
            assert_eq!(report.grad_evals, per_step, "{}", method.name());
            assert_eq!(model.grad_evals() - before, per_step);
        }
    }
}

#[test]
fn noise_perturbation_has_radius_rho() {
    let (task, init) = lowrank_setup(7, 8);
    let mut model = init;
    let rho = 0.37;
    let mut opt = optimizer(Method::Noise { rho }, &model, 0.01, 0.0);
    for batch in batches(&task.train, 200, 5) {
        let r = opt.step(&mut model, &batch).unwrap();
        assert!((r.perturb_norm - rho).abs() < 1e-12 * rho);
    }
}

#[test]
fn mgpo_perturbation_follows_the_momentum() {
    let (task, init) = lowrank_setup(8, 32);
    let mut model = init;
    let rho = 0.05;
    let mut opt = optimizer(Method::Mgpo(MgpoConfig::new(rho).unwrap()), &model, 0.01, 0.0);
    let mut applied = 0;
    for batch in batches(&task.train, 200, 6) {
        let g_bar = opt.apn().g_bar;
        let r = opt.step(&mut model, &batch).unwrap();
        if r.perturbed {
            applied += 1;
            let expected = rho / g_bar.max(1e-12);
            assert!((r.perturb_norm - expected).abs() <= 1e-12 * expected);
            assert!((r.momentum_cosine.unwrap() - 1.0).abs() < 1e-12);
        }
    }
    // Step 0 has neither a moment nor a seeded normalizer.
    assert_eq!(applied, 199);
}

#[test]
fn apn_radius_responds_inversely_to_gradient_scale() {
    let m = random_model(&mut Rng::new(1), &[32, 32], 8, 8.0).params();
    let cfg = MgpoConfig::new(0.05).unwrap();
    let mut base = None;
    for scale in [1e-3, 1.0, 1e3] {
        let mut apn = ApnState::new(0.9).unwrap();
        for g in [1.0, 2.0, 0.5] {
            apn.update(g * scale).unwrap();
        }
        let p = compute_perturbation(&cfg, &m, &apn);
        let product = p.norm * scale;
        let reference = *base.get_or_insert(product);
        assert!((product - reference).abs() < 1e-12 * reference);
        let fixed = compute_perturbation(&cfg, &m, &{
            let mut f = ApnState::fixed_unit();
            f.update(scale).unwrap();
            f
        });
        assert!((fixed.norm - 0.05).abs() < 1e-15);
    }
}

#[test]
fn optimizer_state_round_trip_continues_bitwise() {
    let (task, init) = lowrank_setup(10, 8);
    let stream = batches(&task.train, 40, 7);
    for method in all_methods(0.05) {
        let mut model = init.clone();
        let mut opt = optimizer(method, &model, 0.02, 0.01);
        for b in &stream[..15] {
            opt.step(&mut model, b).unwrap();
        }
        let saved_opt = TensorContainer::from_text(&opt.to_container().unwrap().to_text()).unwrap();
        let saved_model = TensorContainer::from_text(&model.to_container().unwrap().to_text()).unwrap();
        for b in &stream[15..] {
            opt.step(&mut model, b).unwrap();
        }
        let mut model2 = MlpModel::from_container(&saved_model).unwrap();
        let mut opt2 = optimizer(method, &model2, 0.02, 0.01);
        opt2.restore(&saved_opt).unwrap();
        for b in &stream[15..] {
            opt2.step(&mut model2, b).unwrap();
        }
        assert!(model.params().bitwise_eq(&model2.params()), "{}", method.name());
        assert_eq!(opt.apn(), opt2.apn());
    }
}

#[test]
fn restore_rejects_a_different_method() {
    let (_, model) = lowrank_setup(0, 8);
    let sam = optimizer(Method::Sam { rho: 0.1 }, &model, 0.01, 0.0);
    let mut adamw = optimizer(Method::AdamW, &model, 0.01, 0.0);
    assert!(adamw.restore(&sam.to_container().unwrap()).is_err());
}

#[test]
fn training_reduces_loss_for_every_method() {
    let (task, init) = lowrank_setup(11, 8);
    for method in all_methods(0.05) {
        let mut model = init.clone();
        let start = task.eval.loss_of(&model).unwrap();
        train(&mut model, &task.train, method, 0.01, 300, 1);
        let end = task.eval.loss_of(&model).unwrap();
        assert!(end < 0.5 * start, "{}: {start} -> {end}", method.name());
    }
}
