use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{auc, classification_metrics, AuditOutcome, ClassificationMetrics};
use crate::audit::{
    audit_membership, fit_audit_model, shadow_features, AuditModel, AuditSettings, FrequencyTable, ShadowPlan,
};
use crate::blackbox::TargetHandle;
use crate::corpus::synthetic::{self, SyntheticConfig};
use crate::corpus::{
    build_vocabulary, encode_user, group_users, noise_holdout, CorpusRecord, CorpusSplit, RawUser, UserDataset,
    Vocabulary,
};
use crate::error::{invalid, Error, Result};
use crate::nn::{CellKind, INIT_SCALE};
use crate::seed::derive_seed_tagged;
use crate::textgen::{ModelConfig, Task, TextModel};
use crate::train::{train_model, TrainConfig};

/// Architecture without the data-dependent vocabulary size and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub task: Task,
    pub cell: CellKind,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub init_scale: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            task: Task::NextWord,
            cell: CellKind::Lstm,
            emb_dim: 32,
            hidden_dim: 32,
            dropout_rate: 0.0,
            init_scale: INIT_SCALE,
        }
    }
}

impl ModelSpec {
    pub fn to_config(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            task: self.task,
            cell: self.cell,
            emb_dim: self.emb_dim,
            hidden_dim: self.hidden_dim,
            dropout_rate: self.dropout_rate,
            vocab_size,
            seed,
            init_scale: self.init_scale,
        }
    }
}

/// Everything one audit experiment needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Synthetic generator; its user count and seed are set by the
    /// experiment.
    pub corpus: SyntheticConfig,
    pub max_vocab: usize,
    /// Next-word window length in tokens.
    pub window: usize,
    pub n_train_users: usize,
    pub n_test_users: usize,
    pub n_shadow_users: usize,
    pub target_model: ModelSpec,
    pub target_train: TrainConfig,
    /// Defaults to the target's architecture.
    pub shadow_model: Option<ModelSpec>,
    /// Defaults to the target's training recipe.
    pub shadow_train: Option<TrainConfig>,
    pub k_shadows: usize,
    pub audit: AuditSettings,
    /// Fraction of each member's examples withheld from target training but
    /// still used as audit queries.
    pub noise_fraction: f64,
    /// Shadows use GRU cells, cycling hidden sizes and momentum SGD.
    pub hyperparam_mismatch: bool,
    pub mismatch_hidden: Vec<usize>,
    /// Reference users come from a separately generated corpus whose word
    /// frequencies are permuted.
    pub cross_domain: bool,
    pub reference_domain: u64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: SyntheticConfig::default(),
            max_vocab: 5000,
            window: 20,
            n_train_users: 20,
            n_test_users: 20,
            n_shadow_users: 40,
            target_model: ModelSpec::default(),
            target_train: TrainConfig::default(),
            shadow_model: None,
            shadow_train: None,
            k_shadows: 10,
            audit: AuditSettings::default(),
            noise_fraction: 0.0,
            hyperparam_mismatch: false,
            mismatch_hidden: vec![64, 96, 128],
            cross_domain: false,
            reference_domain: 1,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train_users == 0 || self.n_test_users == 0 {
            return Err(invalid("need at least one member and one non-member"));
        }
        if self.n_shadow_users < 2 {
            return Err(invalid("need at least two reference users"));
        }
        if self.k_shadows == 0 {
            return Err(invalid("need at least one shadow model"));
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return Err(invalid("noise_fraction must lie in [0, 1)"));
        }
        if self.hyperparam_mismatch && self.mismatch_hidden.is_empty() {
            return Err(invalid("mismatch_hidden must not be empty"));
        }
        self.target_train.validate()?;
        self.audit.validate()
    }

    pub fn total_users(&self) -> usize {
        self.n_train_users + self.n_test_users + self.n_shadow_users
    }

    /// The synthetic corpus this experiment draws its users from.
    pub fn corpus_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_users: self.total_users(),
            seed: derive_seed_tagged(self.seed, "corpus"),
            ..self.corpus.clone()
        }
    }

    /// The cross-domain reference corpus.
    pub fn reference_corpus_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_users: self.n_shadow_users,
            domain: self.reference_domain,
            user_offset: self.total_users(),
            seed: derive_seed_tagged(self.seed, "reference-corpus"),
            ..self.corpus.clone()
        }
    }

    pub fn target_config(&self, vocab_size: usize) -> ModelConfig {
        self.target_model.to_config(vocab_size, derive_seed_tagged(self.seed, "target-model"))
    }

    pub fn target_train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed_tagged(self.seed, "target-train"),
            ..self.target_train.clone()
        }
    }

    /// Shadow plan over `n_ref` reference users, with the mismatch recipe
    /// applied when enabled.
    pub fn shadow_plan(&self, n_ref: usize, vocab_size: usize) -> Result<ShadowPlan> {
        let spec = self.shadow_model.as_ref().unwrap_or(&self.target_model);
        let train = self.shadow_train.as_ref().unwrap_or(&self.target_train);
        let mut plan = ShadowPlan::random(
            n_ref,
            self.k_shadows,
            &spec.to_config(vocab_size, 0),
            train,
            derive_seed_tagged(self.seed, "shadows"),
        )?;
        if self.hyperparam_mismatch {
            for (i, s) in plan.shadows.iter_mut().enumerate() {
                s.model.cell = CellKind::Gru;
                s.model.hidden_dim = self.mismatch_hidden[i % self.mismatch_hidden.len()];
                s.train = TrainConfig {
                    seed: s.train.seed,
                    epochs: s.train.epochs,
                    batch_size: s.train.batch_size,
                    ..TrainConfig::momentum_sgd()
                };
            }
        }
        Ok(plan)
    }

    pub fn audit_settings(&self) -> AuditSettings {
        AuditSettings {
            seed: derive_seed_tagged(self.seed, "queries"),
            svm: crate::audit::SvmParams {
                seed: derive_seed_tagged(self.seed, "svm"),
                ..self.audit.svm.clone()
            },
            ..self.audit.clone()
        }
    }
}

/// Encoded datasets for every role.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub vocab: Vocabulary,
    pub split: CorpusSplit,
    /// Members' full data, as queried by the auditor.
    pub members: Vec<UserDataset>,
    /// What the target actually trains on (members minus noise).
    pub member_train: Vec<UserDataset>,
    pub non_members: Vec<UserDataset>,
    pub reference: Vec<UserDataset>,
}

impl PreparedData {
    /// Generates the synthetic corpus (and the cross-domain reference corpus
    /// when enabled) and prepares it.
    pub fn synthetic(cfg: &ExperimentConfig) -> Result<Self> {
        let records = synthetic::generate(&cfg.corpus_config())?;
        let reference = if cfg.cross_domain {
            Some(synthetic::generate(&cfg.reference_corpus_config())?)
        } else {
            None
        };
        Self::from_records(&records, reference.as_deref(), cfg)
    }

    /// Builds the vocabulary from `records`, splits users and encodes them.
    /// With `reference` given, reference users come from it instead of the
    /// shadow slice of `records`.
    pub fn from_records(records: &[CorpusRecord], reference: Option<&[CorpusRecord]>, cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let users = group_users(records);
        let vocab = build_vocabulary(&users, cfg.max_vocab)?;
        let ids: Vec<String> = users.iter().map(|u| u.user_id.clone()).collect();
        let n_shadow = if reference.is_some() { 0 } else { cfg.n_shadow_users };
        let split = CorpusSplit::random(
            &ids,
            cfg.n_train_users,
            cfg.n_test_users,
            n_shadow,
            derive_seed_tagged(cfg.seed, "split"),
        )?;
        let by_id: HashMap<&str, &RawUser> = users.iter().map(|u| (u.user_id.as_str(), u)).collect();
        let encode = |names: &[String], pool: &HashMap<&str, &RawUser>| -> Result<Vec<UserDataset>> {
            names
                .iter()
                .map(|n| {
                    let d = encode_user(pool[n.as_str()], &vocab, cfg.window);
                    if d.examples.is_empty() {
                        Err(invalid(format!("user {n} has no usable examples")))
                    } else {
                        Ok(d)
                    }
                })
                .collect()
        };
        let members = encode(&split.train_users, &by_id)?;
        let non_members = encode(&split.test_users, &by_id)?;
        let reference = match reference {
            None => encode(&split.shadow_users, &by_id)?,
            Some(recs) => {
                let ref_users = group_users(recs);
                if ref_users.len() < cfg.n_shadow_users {
                    return Err(invalid(format!(
                        "reference corpus has {} users, need {}",
                        ref_users.len(),
                        cfg.n_shadow_users
                    )));
                }
                let pool: HashMap<&str, &RawUser> = ref_users.iter().map(|u| (u.user_id.as_str(), u)).collect();
                let names: Vec<String> = ref_users[..cfg.n_shadow_users].iter().map(|u| u.user_id.clone()).collect();
                encode(&names, &pool)?
            }
        };
        let member_train = members
            .iter()
            .map(|u| {
                let (clean, _) = noise_holdout(u, cfg.noise_fraction, derive_seed_tagged(cfg.seed, &format!("noise/{}", u.user_id)))?;
                if clean.examples.is_empty() {
                    Err(invalid(format!("noise removed every example of {}", u.user_id)))
                } else {
                    Ok(clean)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            vocab,
            split,
            members,
            member_train,
            non_members,
            reference,
        })
    }
}

type Slot = Arc<Mutex<Option<Arc<TextModel>>>>;

/// Memoizes trained models by (model config, training config, data).
///
/// Training is deterministic, so a cached model is identical to a retrained
/// one; sweeps that vary only audit-side settings reuse their models.
#[derive(Default)]
pub struct ModelCache {
    enabled: bool,
    slots: Mutex<HashMap<String, Slot>>,
}

impl ModelCache {
    pub fn new() -> Self {
        Self {
            enabled: true,
            slots: Mutex::default(),
        }
    }

    /// A cache that always retrains.
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.slots.lock().map(|s| s.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_train(&self, model: &ModelConfig, train: &TrainConfig, data: &[UserDataset]) -> Result<Arc<TextModel>> {
        if !self.enabled {
            return Ok(Arc::new(train_model(model, train, data)?.model));
        }
        let key = serde_json::to_string(&(model, train, data))?;
        let slot = {
            let mut slots = self.slots.lock().map_err(|_| invalid("model cache poisoned"))?;
            slots.entry(key).or_default().clone()
        };
        let mut guard = slot.lock().map_err(|_| invalid("model cache poisoned"))?;
        if let Some(m) = guard.as_ref() {
            return Ok(m.clone());
        }
        let m = Arc::new(train_model(model, train, data)?.model);
        *guard = Some(m.clone());
        Ok(m)
    }
}

/// Result of one audit experiment.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub outcomes: Vec<AuditOutcome>,
    pub metrics: ClassificationMetrics,
    pub auc: f64,
    pub audit_model: AuditModel,
}

/// Trains the target on `data.member_train`.
pub fn train_target(cfg: &ExperimentConfig, data: &PreparedData, cache: &ModelCache) -> Result<Arc<TextModel>> {
    cache.get_or_train(&cfg.target_config(data.vocab.size()), &cfg.target_train_config(), &data.member_train)
}

/// Trains every shadow of `plan` through `cache`.
pub fn train_shadows_cached(plan: &ShadowPlan, reference: &[UserDataset], cache: &ModelCache) -> Result<Vec<Arc<TextModel>>> {
    (0..plan.k())
        .into_par_iter()
        .map(|i| {
            let s = &plan.shadows[i];
            cache
                .get_or_train(&s.model, &s.train, &plan.member_data(i, reference))
                .map_err(|e| Error::ShadowFailed { index: i, source: Box::new(e) })
        })
        .collect()
}

/// Audits every member and non-member against `handle`. Members come first.
pub fn audit_users(
    model: &AuditModel,
    handle: &TargetHandle,
    data: &PreparedData,
    settings: &AuditSettings,
    freq: &FrequencyTable,
) -> Result<Vec<AuditOutcome>> {
    let labeled = data.members.iter().map(|u| (u, true)).chain(data.non_members.iter().map(|u| (u, false)));
    labeled
        .map(|(u, label)| {
            let d = audit_membership(model, handle, u, settings, freq)?;
            Ok(AuditOutcome {
                user_id: d.user_id,
                label,
                decision: d.decision,
                score: d.score,
            })
        })
        .collect()
}

/// Runs the full pipeline on a synthetic corpus: target, shadows, audit
/// model, then audits of a balanced member/non-member set.
pub fn run_experiment(cfg: &ExperimentConfig, cache: &ModelCache) -> Result<ExperimentResult> {
    let data = PreparedData::synthetic(cfg)?;
    run_prepared(cfg, &data, cache)
}

/// As [`run_experiment`] on already prepared data.
pub fn run_prepared(cfg: &ExperimentConfig, data: &PreparedData, cache: &ModelCache) -> Result<ExperimentResult> {
    let v = data.vocab.size();
    let target = train_target(cfg, data, cache)?;
    let plan = cfg.shadow_plan(data.reference.len(), v)?;
    let shadows = train_shadows_cached(&plan, &data.reference, cache)?;
    let settings = cfg.audit_settings();
    let freq = FrequencyTable::from_datasets(&data.reference);
    let rows = shadow_features(&data.reference, &plan, &shadows, &settings, &freq)?;
    let audit_model = fit_audit_model(&rows, &settings, v, &plan)?;
    let handle = TargetHandle::local(target, settings.output_k_for(v))?;
    let outcomes = audit_users(&audit_model, &handle, data, &settings, &freq)?;
    Ok(ExperimentResult {
        metrics: classification_metrics(&outcomes)?,
        auc: auc(&outcomes)?,
        outcomes,
        audit_model,
    })
}
