use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CohortDataset, DataError, Record, N_FEATURES};
use crate::exec::Exec;
use crate::rng::rng_for;

/// Class counts for one client site.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteSpec {
    pub name: String,
    pub n_negative: usize,
    pub n_positive: usize,
}

impl SiteSpec {
    pub fn new(name: &str, n_negative: usize, n_positive: usize) -> Self {
        SiteSpec {
            name: name.to_string(),
            n_negative,
            n_positive,
        }
    }

    pub fn total(&self) -> usize {
        self.n_negative + self.n_positive
    }

    /// Counts multiplied by `factor`, rounded half away from zero.
    pub fn scaled(&self, factor: f64) -> SiteSpec {
        SiteSpec {
            name: self.name.clone(),
            n_negative: (self.n_negative as f64 * factor).round() as usize,
            n_positive: (self.n_positive as f64 * factor).round() as usize,
        }
    }
}

/// The four regional sites with their non-CVD / CVD counts.
pub fn default_sites() -> Vec<SiteSpec> {
    vec![
        SiteSpec::new("Ostergotland", 92_630, 6_518),
        SiteSpec::new("Sodermanland", 63_901, 4_575),
        SiteSpec::new("Stockholm", 391_954, 26_046),
        SiteSpec::new("Uppsala", 69_909, 4_894),
    ]
}

/// Ground-truth logistic coefficients, in `FEATURE_NAMES` order. Age and
/// diabetes carry the largest weights. The magnitude was fixed with the
/// `calibrate` CLI subcommand so that a pooled logistic fit lands near an AUC
/// of 0.67 (about 0.66 to 0.68 across seeds).
pub const DEFAULT_BETA: [f64; N_FEATURES] = [0.605, 0.132, 0.495, 0.242, 0.308, 0.275, 0.198, 0.110, 0.066, 0.033];
pub const DEFAULT_INTERCEPT: f64 = -3.05;

/// Feature marginals. Features are drawn independently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Marginals {
    pub age_mean: f64,
    pub age_std: f64,
    pub gender_prevalence: f64,
    /// Prevalence of diabetes, dyslipidemia, ATC A10, ATC C09, ATC C10 and the
    /// three filler comorbidity flags.
    pub indicator_prevalence: [f64; 8],
}

impl Default for Marginals {
    fn default() -> Self {
        Marginals {
            age_mean: 0.0,
            age_std: 1.0,
            gender_prevalence: 0.5,
            indicator_prevalence: [0.08, 0.15, 0.12, 0.18, 0.20, 0.10, 0.14, 0.16],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub sites: Vec<SiteSpec>,
    pub beta: [f64; N_FEATURES],
    pub intercept: f64,
    pub marginals: Marginals,
    pub seed: u64,
    pub scale_factor: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            sites: default_sites(),
            beta: DEFAULT_BETA,
            intercept: DEFAULT_INTERCEPT,
            marginals: Marginals::default(),
            seed: 20_240_101,
            scale_factor: 1.0,
        }
    }
}

const MIN_CLASS_COUNT: usize = 10;

impl GeneratorSpec {
    /// Site specs after applying `scale_factor`.
    pub fn scaled_sites(&self) -> Vec<SiteSpec> {
        self.sites.iter().map(|s| s.scaled(self.scale_factor)).collect()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.scale_factor > 0.0 && self.scale_factor <= 1.0) {
            return Err(DataError::Config(format!(
                "scale_factor must be in (0, 1], got {}",
                self.scale_factor
            )));
        }
        if self.sites.is_empty() {
            return Err(DataError::Config("no sites".into()));
        }
        for (i, s) in self.sites.iter().enumerate() {
            if self.sites[..i].iter().any(|o| o.name == s.name) {
                return Err(DataError::Config(format!("duplicate site `{}`", s.name)));
            }
        }
        for s in self.scaled_sites() {
            if s.n_negative < MIN_CLASS_COUNT || s.n_positive < MIN_CLASS_COUNT {
                return Err(DataError::Config(format!(
                    "site `{}` has {} negatives / {} positives after scaling; need at least {MIN_CLASS_COUNT} of each",
                    s.name, s.n_negative, s.n_positive
                )));
            }
        }
        let m = &self.marginals;
        let probs = std::iter::once(m.gender_prevalence).chain(m.indicator_prevalence.iter().copied());
        for p in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::Config(format!("prevalence {p} outside [0, 1]")));
            }
        }
        if !(m.age_std > 0.0) || !m.age_mean.is_finite() {
            return Err(DataError::Config("age marginal needs finite mean and positive std".into()));
        }
        if self.beta.iter().chain([&self.intercept]).any(|b| !b.is_finite()) {
            return Err(DataError::Config("non-finite coefficient".into()));
        }
        Ok(())
    }

    pub fn risk(&self, features: &[f64; N_FEATURES]) -> f64 {
        let z = self.intercept + self.beta.iter().zip(features).map(|(b, x)| b * x).sum::<f64>();
        1.0 / (1.0 + (-z).exp())
    }

    fn draw_features<R: Rng>(&self, rng: &mut R) -> [f64; N_FEATURES] {
        let m = &self.marginals;
        let mut x = [0.0; N_FEATURES];
        let z = loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 3.0 {
                break z;
            }
        };
        x[0] = m.age_mean + m.age_std * z;
        x[1] = f64::from(rng.gen_bool(m.gender_prevalence) as u8);
        for (slot, &p) in x[2..].iter_mut().zip(&m.indicator_prevalence) {
            *slot = f64::from(rng.gen_bool(p) as u8);
        }
        x
    }
}

/// Draws one site's rows: features from the marginals, a label from the
/// logistic ground truth, and the row is kept only while its class still has
/// room. Stops when both class counts are met exactly.
pub fn generate_site(spec: &GeneratorSpec, site_index: usize) -> Result<CohortDataset, DataError> {
    let site = spec
        .scaled_sites()
        .into_iter()
        .nth(site_index)
        .ok_or_else(|| DataError::Config(format!("no site at index {site_index}")))?;
    let mut rng = rng_for(spec.seed, &[site_index as u64]);
    let (mut need_neg, mut need_pos) = (site.n_negative, site.n_positive);
    let budget = 1000 * site.total() + 100_000;
    let mut rows = Vec::with_capacity(site.total());
    let mut draws = 0usize;
    while need_neg + need_pos > 0 {
        draws += 1;
        if draws > budget {
            return Err(DataError::Config(format!(
                "site `{}`: class counts not reachable under the ground-truth model ({need_neg} negatives / {need_pos} positives missing)",
                site.name
            )));
        }
        let features = spec.draw_features(&mut rng);
        let positive = rng.gen_bool(spec.risk(&features));
        let slot = if positive { &mut need_pos } else { &mut need_neg };
        if *slot > 0 {
            *slot -= 1;
            rows.push(Record {
                features,
                label: positive as u8,
            });
        }
    }
    CohortDataset::new(rows)
}

/// Generates every site. Each site draws from its own seeded stream, so a
/// single site can be regenerated in isolation (the networked client does
/// this).
pub fn generate_cohort(spec: &GeneratorSpec, exec: Exec) -> Result<Vec<(String, CohortDataset)>, DataError> {
    spec.validate()?;
    let names: Vec<String> = spec.sites.iter().map(|s| s.name.clone()).collect();
    let sets = exec.map_range(names.len(), |i| generate_site(spec, i));
    names.into_iter().zip(sets).map(|(n, d)| d.map(|d| (n, d))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorSpec {
        GeneratorSpec {
            scale_factor: 0.01,
            ..Default::default()
        }
    }

    #[test]
    fn scaled_counts_round_to_nearest() {
        let s = default_sites()[2].scaled(0.01);
        assert_eq!((s.n_negative, s.n_positive), (3_920, 260));
    }

    #[test]
    fn class_counts_match_scaled_spec() {
        let spec = small();
        let sites = generate_cohort(&spec, Exec::default()).unwrap();
        for ((name, ds), want) in sites.iter().zip(spec.scaled_sites()) {
            assert_eq!(name, &want.name);
            assert_eq!(ds.n_negative(), want.n_negative);
            assert_eq!(ds.n_positive(), want.n_positive);
        }
    }

    #[test]
    fn generation_is_deterministic_and_site_local() {
        let spec = small();
        let a = generate_cohort(&spec, Exec::Parallel).unwrap();
        let b = generate_cohort(&spec, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(generate_site(&spec, 3).unwrap(), a[3].1);
    }

    #[test]
    fn features_follow_declared_roles() {
        let ds = generate_site(&small(), 2).unwrap();
        for r in ds.rows() {
            assert!(r.features[0].abs() <= 3.0);
            assert!(r.features[1..].iter().all(|v| *v == 0.0 || *v == 1.0));
        }
    }

    #[test]
    fn rejects_infeasible_configs() {
        let too_small = GeneratorSpec {
            scale_factor: 0.0001,
            ..Default::default()
        };
        assert!(matches!(generate_cohort(&too_small, Exec::default()), Err(DataError::Config(_))));
        let bad_scale = GeneratorSpec {
            scale_factor: 1.5,
            ..Default::default()
        };
        assert!(bad_scale.validate().is_err());
        // A ground truth that never produces positives cannot fill the quota.
        let never = GeneratorSpec {
            intercept: -800.0,
            sites: vec![SiteSpec::new("a", 20, 20)],
            ..Default::default()
        };
        assert!(matches!(generate_cohort(&never, Exec::default()), Err(DataError::Config(_))));
    }
}
