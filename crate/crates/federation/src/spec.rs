use std::collections::BTreeMap;
use std::sync::Arc;

use privfed_ckks::{keygen, CkksContext, CkksParams, KeyPair, PackingLayout};
use privfed_core::dp::SvtConfig;
use privfed_core::learners::TrainConfig;
use privfed_core::rng::rng_for;
use privfed_core::{Exec, ModelKind};
use serde::{Deserialize, Serialize};

use crate::FedError;

/// Which privacy pipeline every client applies to its update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PrivacySpec {
    Plain,
    Dp(SvtConfig),
    He(HeSpec),
}

impl PrivacySpec {
    /// Report label: `FedAvg`, `FedAvg_DP` or `FedAvg_HE`.
    pub fn method(&self) -> &'static str {
        match self {
            PrivacySpec::Plain => "FedAvg",
            PrivacySpec::Dp(_) => "FedAvg_DP",
            PrivacySpec::He(_) => "FedAvg_HE",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeSpec {
    #[serde(default)]
    pub params: CkksParams,
    /// Every client derives the same key pair from this seed; the server
    /// never does.
    pub key_seed: u64,
    #[serde(default)]
    pub packing: PackingLayout,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `w_i = 1`: the aggregate is the plain mean of the deltas.
    #[default]
    Unit,
    /// `w_i = n_i` training rows; clients pre-scale their delta by `n_i`.
    ExampleCount,
}

/// Everything server and clients must agree on. Clients send theirs at join
/// and the server rejects any mismatch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub learner: ModelKind,
    pub rounds: usize,
    pub train: TrainConfig,
    /// Per-site batch size overrides, keyed by site name.
    #[serde(default)]
    pub site_batch_size: BTreeMap<String, usize>,
    pub privacy: PrivacySpec,
    #[serde(default)]
    pub weighting: Weighting,
    pub threshold: f64,
    pub seed: u64,
}

impl RunSpec {
    pub fn validate(&self) -> Result<(), FedError> {
        self.train.validate().map_err(|e| FedError::Config(e.to_string()))?;
        if !self.threshold.is_finite() {
            return Err(FedError::Config("threshold must be finite".into()));
        }
        if let Some((site, _)) = self.site_batch_size.iter().find(|(_, &b)| b == 0) {
            return Err(FedError::Config(format!("batch size for site `{site}` must be positive")));
        }
        match &self.privacy {
            PrivacySpec::Plain => Ok(()),
            PrivacySpec::Dp(cfg) => cfg.validate().map_err(|e| FedError::Config(e.to_string())),
            PrivacySpec::He(he) => {
                he.params.validate().map_err(|e| FedError::Config(e.to_string()))?;
                if he.params.top_level() == 0 {
                    return Err(FedError::Config(
                        "HE modulus chain needs at least three primes to allow one rescale".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// The spec as shared with the server: everything except the HE key seed,
    /// which would let the server rebuild the secret key.
    pub fn public_view(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("spec serializes");
        if let Some(privacy) = v.get_mut("privacy").and_then(|p| p.as_object_mut()) {
            privacy.remove("key_seed");
        }
        v
    }

    pub fn batch_size_for(&self, site: &str) -> usize {
        self.site_batch_size.get(site).copied().unwrap_or(self.train.batch_size)
    }
}

/// Stream tags for [`privfed_core::rng::derive_seed`] paths.
pub(crate) mod tags {
    pub const INIT: u64 = 0x494e4954;
    pub const TRAIN: u64 = 0x5452_4e;
    pub const DP: u64 = 0x4450;
    pub const ENCRYPT: u64 = 0x454e43;
    pub const KEYS: u64 = 0x4b4559;
}

/// Runtime form of the privacy pipeline.
#[derive(Clone)]
pub enum PrivacyMode {
    Plain,
    Dp(SvtConfig),
    He(Arc<HeRuntime>),
}

pub struct HeRuntime {
    pub ctx: CkksContext,
    /// Present on clients only.
    pub keys: Option<KeyPair>,
    pub packing: PackingLayout,
}

impl PrivacyMode {
    /// Server side: HE needs the context for size and shape checks but no keys.
    pub fn for_server(spec: &PrivacySpec, exec: Exec) -> Result<Self, FedError> {
        Self::build(spec, exec, false)
    }

    pub fn for_client(spec: &PrivacySpec, exec: Exec) -> Result<Self, FedError> {
        Self::build(spec, exec, true)
    }

    fn build(spec: &PrivacySpec, exec: Exec, with_keys: bool) -> Result<Self, FedError> {
        Ok(match spec {
            PrivacySpec::Plain => PrivacyMode::Plain,
            PrivacySpec::Dp(cfg) => PrivacyMode::Dp(cfg.clone()),
            PrivacySpec::He(he) => {
                let ctx = CkksContext::new(he.params.clone())?.with_exec(exec);
                let keys = with_keys.then(|| keygen(&ctx, &mut rng_for(he.key_seed, &[tags::KEYS])));
                PrivacyMode::He(Arc::new(HeRuntime { ctx, keys, packing: he.packing }))
            }
        })
    }
}
