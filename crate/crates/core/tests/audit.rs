mod common;

use std::sync::Arc;

use paud::audit::{
    audit_membership, fit_linear_svm, shadow_features, train_shadows, AuditSettings, FrequencyTable, ShadowPlan,
    SvmParams,
};
use paud::blackbox::TargetHandle;
use paud::train::train_model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn settings(d: usize) -> AuditSettings {
    AuditSettings { d, ..AuditSettings::default() }
}

#[test]
fn single_shadow_features_are_separable() {
    let (vocab, data) = common::small_corpus(4, 12, 1);
    let v = vocab.size();
    let (model, train) = common::memorizing_model(v, 2);
    let plan = ShadowPlan::random(4, 1, &model, &train, 3).unwrap();
    assert_eq!((0..4).filter(|&u| plan.is_member(0, u)).count(), 2);

    let shadows = train_shadows(&data, &plan).unwrap();
    let s = settings(10);
    let freq = FrequencyTable::from_datasets(&data);
    let rows = shadow_features(&data, &plan, &shadows, &s, &freq).unwrap();
    assert_eq!(rows.len(), plan.k() * data.len());
    for (u, r) in rows.iter().enumerate() {
        assert_eq!(r.label, plan.is_member(0, u));
        assert_eq!(r.user_id, data[u].user_id);
    }

    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.feature.values(false)).collect();
    let y: Vec<bool> = rows.iter().map(|r| r.label).collect();
    let lin = fit_linear_svm(&x, &y, &s.svm).unwrap();
    for (xi, &yi) in x.iter().zip(&y) {
        assert_eq!(lin.score(xi).unwrap() >= 0.0, yi);
    }
}

#[test]
fn pooled_rows_follow_the_plan() {
    let (vocab, data) = common::small_corpus(6, 4, 4);
    let (mut model, mut train) = common::memorizing_model(vocab.size(), 5);
    model.hidden_dim = 4;
    model.emb_dim = 4;
    train.epochs = 1;
    let plan = ShadowPlan::random(6, 3, &model, &train, 6).unwrap();
    let shadows = train_shadows(&data, &plan).unwrap();
    let rows = shadow_features(&data, &plan, &shadows, &settings(5), &FrequencyTable::from_datasets(&data)).unwrap();
    assert_eq!(rows.len(), 3 * 6);
    for (i, r) in rows.iter().enumerate() {
        let (shadow, user) = (i / 6, i % 6);
        assert_eq!(r.shadow, shadow);
        assert_eq!(r.label, plan.member_data(shadow, &data).iter().any(|m| m.user_id == data[user].user_id));
    }
}

#[test]
fn member_is_detected_and_outsider_is_not() {
    let (vocab, data) = common::small_corpus(16, 12, 7);
    let v = vocab.size();
    let (reference, rest) = data.split_at(8);
    let (model, train) = common::memorizing_model(v, 8);

    let plan = ShadowPlan::random(reference.len(), 4, &model, &train, 9).unwrap();
    let s = settings(20);
    let freq = FrequencyTable::from_datasets(reference);
    let shadows = train_shadows(reference, &plan).unwrap();
    let rows = shadow_features(reference, &plan, &shadows, &s, &freq).unwrap();
    let audit = paud::audit::fit_audit_model(&rows, &s, v, &plan).unwrap();

    let user = &rest[0];
    let with_user = train_model(&model, &train, &rest[..4]).unwrap().model;
    let without_user = train_model(&model, &train, &rest[4..]).unwrap().model;

    let handle = TargetHandle::local(Arc::new(with_user), v).unwrap();
    let d = audit_membership(&audit, &handle, user, &s, &freq).unwrap();
    assert!(d.decision, "member scored {}", d.score);

    let handle = TargetHandle::local(Arc::new(without_user), v).unwrap();
    let d = audit_membership(&audit, &handle, user, &s, &freq).unwrap();
    assert!(!d.decision, "outsider scored {}", d.score);
}

#[test]
fn score_is_the_affine_form() {
    let (vocab, data) = common::small_corpus(2, 3, 10);
    let v = vocab.size();
    let (mut model, _) = common::memorizing_model(v, 11);
    model.hidden_dim = 5;
    let target = Arc::new(paud::textgen::TextModel::new(model).unwrap());
    let handle = TargetHandle::local(target, v).unwrap();
    let s = settings(7);
    let freq = FrequencyTable::from_datasets(&data);
    let audit = paud::audit::AuditModel {
        d: 7,
        vocab_size: v,
        layout: "bins+out_of_list".into(),
        normalize: false,
        weights: (0..8).map(|i| i as f64 - 3.5).collect(),
        bias: 0.25,
        meta: paud::audit::AuditMeta {
            k_shadows: 0,
            n_ref_users: 0,
            strategy: s.strategy,
            m: None,
            output_k: None,
        },
    };
    for user in &data {
        let feature = paud::audit::user_feature(&handle, user, &s, &freq, v, None).unwrap();
        let by_hand: f64 =
            feature.values(false).iter().zip(&audit.weights).map(|(x, w)| x * w).sum::<f64>() + audit.bias;
        let d = audit_membership(&audit, &handle, user, &s, &freq).unwrap();
        assert!((d.score - by_hand).abs() < 1e-12);
        assert_eq!(d.decision, by_hand >= 0.0);
    }
}

#[test]
fn scaling_a_separable_set_keeps_training_decisions() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let params = SvmParams::default();
    for _ in 0..20 {
        let w: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut x = Vec::new();
        let mut y = Vec::new();
        while x.len() < 30 {
            let p: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let s: f64 = p.iter().zip(&w).map(|(a, b)| a * b).sum();
            if s.abs() > 0.5 {
                x.push(p);
                y.push(s > 0.0);
            }
        }
        if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
            continue;
        }
        let a = fit_linear_svm(&x, &y, &params).unwrap();
        let doubled: Vec<Vec<f64>> = x.iter().map(|p| p.iter().map(|v| v * 2.0).collect()).collect();
        let b = fit_linear_svm(&doubled, &y, &params).unwrap();
        for ((p, q), &l) in x.iter().zip(&doubled).zip(&y) {
            assert_eq!(a.score(p).unwrap() >= 0.0, l);
            assert_eq!(b.score(q).unwrap() >= 0.0, l);
        }
        assert_eq!(a, fit_linear_svm(&x, &y, &params).unwrap());
    }
}
