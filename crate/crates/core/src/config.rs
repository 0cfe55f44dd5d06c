//! Tunable pipeline parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agreement::DEFAULT_TAU;
use crate::metrics::FprMode;
use crate::model::{Locale, ModelError, Registry};
use crate::rca::LengthBinConfig;
use crate::workflow::{PhasePolicy, QualityConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Minimum IoU for two spans to be matched.
    pub tau: f64,
    pub phases: PhasePolicy,
    pub quality: QualityConfig,
    pub fpr_mode: FprMode,
    pub length_bins: LengthBinConfig,
    /// Locale code to reporting group, on top of the built-in merges.
    pub locale_groups: BTreeMap<String, String>,
    pub annotators_per_task: usize,
    /// Number of confusion pairs kept in reports.
    pub top_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tau: DEFAULT_TAU,
            phases: PhasePolicy::default(),
            quality: QualityConfig::default(),
            fpr_mode: FprMode::Row,
            length_bins: LengthBinConfig::default(),
            locale_groups: BTreeMap::new(),
            annotators_per_task: 2,
            top_k: 10,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(format!("tau {} outside (0, 1]", self.tau));
        }
        if self.annotators_per_task < 2 {
            return Err("annotators_per_task must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.quality.threshold) {
            return Err(format!("quality threshold {} outside [0, 1]", self.quality.threshold));
        }
        self.phases.validate().map_err(|e| e.to_string())?;
        self.length_bins.validate().map_err(|e| e.to_string())
    }

    /// The built-in registry with this config's locale group overrides.
    pub fn registry(&self) -> Result<Registry, ModelError> {
        let mut reg = Registry::builtin().clone();
        for (code, group) in &self.locale_groups {
            let locale = reg.resolve_locale(code)?;
            reg.set_group(&locale, group)?;
        }
        Ok(reg)
    }

    pub fn ira_threshold(&self, phase: crate::workflow::Phase, locale: &Locale) -> f64 {
        self.phases.get(phase).ira_threshold_for(locale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn locale_groups_override() {
        let cfg = PipelineConfig {
            locale_groups: [("pt-BR".to_string(), "pt-br".to_string())].into(),
            ..PipelineConfig::default()
        };
        let reg = cfg.registry().unwrap();
        assert_eq!(reg.group_of(&Locale::parse("pt-BR").unwrap()), "pt-br");
        assert_eq!(reg.group_of(&Locale::parse("nl-BE").unwrap()), "nl");
    }

    #[test]
    fn rejects_bad_tau() {
        let cfg = PipelineConfig {
            tau: 0.0,
            ..PipelineConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
