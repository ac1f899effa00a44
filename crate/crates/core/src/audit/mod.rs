//! User-level membership auditing: rank collection, histogram features,
//! query selection, shadow models and the linear audit classifier.

mod features;
mod queries;
mod svm;

pub use features::{collect_ranks, histogram_feature, FeatureVector, RankSet};
pub use queries::{sample_queries, FrequencyTable, QueryStrategy};
pub use svm::{fit_linear_svm, LinearModel, SvmParams};

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blackbox::TargetHandle;
use crate::corpus::{Example, UserDataset};
use crate::error::{invalid, Error, Result};
use crate::seed;
use crate::textgen::{ModelConfig, TextModel};
use crate::train::{train_model, TrainConfig};

/// Rewrites queries before they are sent, e.g. to simulate obfuscation.
pub trait QueryTransform: Sync {
    fn transform(&self, ex: &Example) -> Example;
}

/// Feature-extraction and classifier settings shared by shadow and target
/// audits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSettings {
    /// Number of histogram bins.
    pub d: usize,
    /// Queries per user; `None` sends every example.
    pub m: Option<usize>,
    pub strategy: QueryStrategy,
    /// Ranked tokens visible per position; `None` means the full vocabulary.
    pub output_k: Option<usize>,
    /// L1-normalize histograms before classification.
    pub normalize: bool,
    pub svm: SvmParams,
    /// Seeds random query sampling.
    pub seed: u64,
}

impl Default for AuditSettings {
    fn default() -> Self {
        Self {
            d: 100,
            m: None,
            strategy: QueryStrategy::Frequency,
            output_k: None,
            normalize: false,
            svm: SvmParams::default(),
            seed: 0,
        }
    }
}

impl AuditSettings {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("d must be at least 1"));
        }
        if self.m == Some(0) {
            return Err(invalid("m must be at least 1"));
        }
        if self.output_k == Some(0) {
            return Err(invalid("output_k must be at least 1"));
        }
        Ok(())
    }

    /// Output size used against a model with `vocab_size` tokens.
    pub fn output_k_for(&self, vocab_size: usize) -> usize {
        self.output_k.map_or(vocab_size, |k| k.min(vocab_size))
    }
}

/// One shadow model: which reference users it trains on and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowSpec {
    /// Indices into the reference users.
    pub members: Vec<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowPlan {
    pub n_ref_users: usize,
    pub shadows: Vec<ShadowSpec>,
}

impl ShadowPlan {
    /// `k` shadows, each taking an independent random half of the reference
    /// users as members. Model and training seeds are derived per shadow.
    pub fn random(n_ref_users: usize, k: usize, model: &ModelConfig, train: &TrainConfig, seed: u64) -> Result<Self> {
        if n_ref_users < 2 {
            return Err(invalid("shadow training needs at least two reference users"));
        }
        if k == 0 {
            return Err(invalid("need at least one shadow model"));
        }
        let shadows = (0..k)
            .map(|i| {
                let mut rng = seed::rng(seed::derive_seed(seed, 3 * i as u64));
                let mut members = index::sample(&mut rng, n_ref_users, n_ref_users / 2).into_vec();
                members.sort_unstable();
                ShadowSpec {
                    members,
                    model: ModelConfig {
                        seed: seed::derive_seed(seed, 3 * i as u64 + 1),
                        ..model.clone()
                    },
                    train: TrainConfig {
                        seed: seed::derive_seed(seed, 3 * i as u64 + 2),
                        ..train.clone()
                    },
                }
            })
            .collect();
        Ok(Self { n_ref_users, shadows })
    }

    pub fn k(&self) -> usize {
        self.shadows.len()
    }

    pub fn is_member(&self, shadow: usize, user: usize) -> bool {
        self.shadows[shadow].members.binary_search(&user).is_ok()
    }

    /// The training data of shadow `i`.
    pub fn member_data(&self, shadow: usize, ref_data: &[UserDataset]) -> Vec<UserDataset> {
        self.shadows[shadow].members.iter().map(|&u| ref_data[u].clone()).collect()
    }

    fn check(&self, ref_data: &[UserDataset]) -> Result<()> {
        if ref_data.len() != self.n_ref_users {
            return Err(invalid(format!(
                "plan covers {} reference users, got {}",
                self.n_ref_users,
                ref_data.len()
            )));
        }
        Ok(())
    }
}

/// Trains every shadow in parallel. The first failure is reported with its
/// shadow index.
pub fn train_shadows(ref_data: &[UserDataset], plan: &ShadowPlan) -> Result<Vec<Arc<TextModel>>> {
    plan.check(ref_data)?;
    (0..plan.k())
        .into_par_iter()
        .map(|i| {
            let spec = &plan.shadows[i];
            train_model(&spec.model, &spec.train, &plan.member_data(i, ref_data))
                .map(|t| Arc::new(t.model))
                .map_err(|e| Error::ShadowFailed { index: i, source: Box::new(e) })
        })
        .collect()
}

/// Histogram feature of one user's queries against `handle`.
pub fn user_feature(
    handle: &TargetHandle,
    user: &UserDataset,
    settings: &AuditSettings,
    freq: &FrequencyTable,
    vocab_size: usize,
    transform: Option<&dyn QueryTransform>,
) -> Result<FeatureVector> {
    let m = settings.m.unwrap_or(usize::MAX);
    let seed = seed::derive_seed_tagged(settings.seed, &user.user_id);
    let mut queries = sample_queries(&user.examples, m, settings.strategy, freq, seed)?;
    if let Some(t) = transform {
        queries = queries.iter().map(|q| t.transform(q)).collect();
    }
    let ranks = collect_ranks(handle, &queries)?;
    histogram_feature(&ranks, settings.d, vocab_size)
}

/// A labeled training row for the audit classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeature {
    pub user_id: String,
    pub shadow: usize,
    pub label: bool,
    pub feature: FeatureVector,
}

/// Queries every shadow with every reference user's data. Rows are ordered
/// by shadow, then by reference user.
pub fn shadow_features(
    ref_data: &[UserDataset],
    plan: &ShadowPlan,
    shadows: &[Arc<TextModel>],
    settings: &AuditSettings,
    freq: &FrequencyTable,
) -> Result<Vec<LabeledFeature>> {
    plan.check(ref_data)?;
    settings.validate()?;
    if shadows.len() != plan.k() {
        return Err(invalid("number of trained shadows does not match the plan"));
    }
    let per_shadow: Vec<Vec<LabeledFeature>> = shadows
        .par_iter()
        .enumerate()
        .map(|(i, model)| {
            let v = model.vocab_size();
            let handle = TargetHandle::local(model.clone(), settings.output_k_for(v))?;
            ref_data
                .iter()
                .enumerate()
                .map(|(u, user)| {
                    Ok(LabeledFeature {
                        user_id: user.user_id.clone(),
                        shadow: i,
                        label: plan.is_member(i, u),
                        feature: user_feature(&handle, user, settings, freq, v, None)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_shadow.into_iter().flatten().collect())
}

/// Provenance of an audit model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditMeta {
    pub k_shadows: usize,
    pub n_ref_users: usize,
    pub strategy: QueryStrategy,
    pub m: Option<usize>,
    pub output_k: Option<usize>,
}

/// The trained membership classifier over `d + 1` histogram features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditModel {
    pub d: usize,
    pub vocab_size: usize,
    /// Feature order; always `bins+out_of_list`.
    pub layout: String,
    pub normalize: bool,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub meta: AuditMeta,
}

/// Decision for one audited user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditDecision {
    pub user_id: String,
    pub decision: bool,
    /// Signed distance-like score `w.h + b`.
    pub score: f64,
}

impl AuditModel {
    pub fn score(&self, feature: &FeatureVector) -> Result<f64> {
        if feature.d() != self.d {
            return Err(Error::ShapeMismatch(format!(
                "feature has {} bins, audit model expects {}",
                feature.d(),
                self.d
            )));
        }
        LinearModel {
            weights: self.weights.clone(),
            bias: self.bias,
        }
        .score(&feature.values(self.normalize))
    }

    pub fn decide(&self, feature: &FeatureVector) -> Result<(bool, f64)> {
        let s = self.score(feature)?;
        Ok((s >= 0.0, s))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.weights.len() != m.d + 1 || !m.weights.iter().all(|w| w.is_finite()) || !m.bias.is_finite() {
            return Err(Error::Format(format!("{}: inconsistent audit model", path.display())));
        }
        Ok(m)
    }
}

/// Fits the audit classifier on labeled shadow features.
pub fn fit_audit_model(
    rows: &[LabeledFeature],
    settings: &AuditSettings,
    vocab_size: usize,
    plan: &ShadowPlan,
) -> Result<AuditModel> {
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.feature.values(settings.normalize)).collect();
    let y: Vec<bool> = rows.iter().map(|r| r.label).collect();
    let lin = fit_linear_svm(&x, &y, &settings.svm)?;
    Ok(AuditModel {
        d: settings.d,
        vocab_size,
        layout: "bins+out_of_list".into(),
        normalize: settings.normalize,
        weights: lin.weights,
        bias: lin.bias,
        meta: AuditMeta {
            k_shadows: plan.k(),
            n_ref_users: plan.n_ref_users,
            strategy: settings.strategy,
            m: settings.m,
            output_k: settings.output_k,
        },
    })
}

/// Trains shadows, extracts their labeled features and fits the classifier.
/// Also returns the pooled training rows (`k * |U_ref|` of them).
pub fn train_audit_model(
    ref_data: &[UserDataset],
    plan: &ShadowPlan,
    settings: &AuditSettings,
    freq: &FrequencyTable,
) -> Result<(AuditModel, Vec<LabeledFeature>)> {
    settings.validate()?;
    let shadows = train_shadows(ref_data, plan)?;
    let rows = shadow_features(ref_data, plan, &shadows, settings, freq)?;
    let model = fit_audit_model(&rows, settings, shadows[0].vocab_size(), plan)?;
    Ok((model, rows))
}

/// Decides whether `user`'s data was used to train the model behind `handle`.
pub fn audit_membership(
    model: &AuditModel,
    handle: &TargetHandle,
    user: &UserDataset,
    settings: &AuditSettings,
    freq: &FrequencyTable,
) -> Result<AuditDecision> {
    audit_membership_with(model, handle, user, settings, freq, None)
}

/// As [`audit_membership`], rewriting each query with `transform` first.
pub fn audit_membership_with(
    model: &AuditModel,
    handle: &TargetHandle,
    user: &UserDataset,
    settings: &AuditSettings,
    freq: &FrequencyTable,
    transform: Option<&dyn QueryTransform>,
) -> Result<AuditDecision> {
    if settings.d != model.d || settings.normalize != model.normalize {
        return Err(Error::ShapeMismatch(format!(
            "settings use d={} normalize={}, audit model has d={} normalize={}",
            settings.d, settings.normalize, model.d, model.normalize
        )));
    }
    let feature = user_feature(handle, user, settings, freq, model.vocab_size, transform)?;
    let (decision, score) = model.decide(&feature)?;
    Ok(AuditDecision {
        user_id: user.user_id.clone(),
        decision,
        score,
    })
}

/// Writes `user_id, label, bin_0..bin_{d-1}, out_of_list` rows with a header.
pub fn write_feature_tsv<W: Write>(mut out: W, rows: &[(String, bool, FeatureVector)]) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.2.d());
    let mut header = vec!["user_id".to_string(), "label".to_string()];
    header.extend((0..d).map(|i| format!("bin_{i}")));
    header.push("out_of_list".into());
    writeln!(out, "{}", header.join("\t"))?;
    for (user, label, f) in rows {
        let mut cols = vec![user.clone(), u8::from(*label).to_string()];
        cols.extend(f.bins.iter().map(u64::to_string));
        cols.push(f.out_of_list.to_string());
        writeln!(out, "{}", cols.join("\t"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::CellKind;
    use crate::textgen::Task;

    fn cfg() -> ModelConfig {
        ModelConfig {
            task: Task::NextWord,
            cell: CellKind::Lstm,
            emb_dim: 4,
            hidden_dim: 4,
            dropout_rate: 0.0,
            vocab_size: 10,
            seed: 0,
            init_scale: 0.08,
        }
    }

    #[test]
    fn plan_halves_and_varies() {
        let p = ShadowPlan::random(10, 4, &cfg(), &TrainConfig::default(), 3).unwrap();
        assert_eq!(p.k(), 4);
        assert!(p.shadows.iter().all(|s| s.members.len() == 5));
        assert_ne!(p.shadows[0].model.seed, p.shadows[1].model.seed);
        assert_ne!(p.shadows[0].members, p.shadows[1].members);
        assert_eq!(p, ShadowPlan::random(10, 4, &cfg(), &TrainConfig::default(), 3).unwrap());
        assert!(ShadowPlan::random(1, 4, &cfg(), &TrainConfig::default(), 3).is_err());
    }

    #[test]
    fn feature_tsv_layout() {
        let f = FeatureVector { bins: vec![2, 0], out_of_list: 1, bin_width: 5 };
        let mut buf = Vec::new();
        write_feature_tsv(&mut buf, &[("u1".into(), true, f)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "user_id\tlabel\tbin_0\tbin_1\tout_of_list\nu1\t1\t2\t0\t1\n");
    }

    #[test]
    fn audit_model_checks_dimension() {
        let m = AuditModel {
            d: 2,
            vocab_size: 10,
            layout: "bins+out_of_list".into(),
            normalize: false,
            weights: vec![1.0, -1.0, 0.5],
            bias: -0.5,
            meta: AuditMeta { k_shadows: 1, n_ref_users: 2, strategy: QueryStrategy::Random, m: None, output_k: None },
        };
        let f = FeatureVector { bins: vec![3, 1], out_of_list: 1, bin_width: 5 };
        assert_eq!(m.decide(&f).unwrap(), (true, 2.0));
        let g = FeatureVector { bins: vec![3], out_of_list: 1, bin_width: 10 };
        assert!(m.score(&g).is_err());
    }
}
