//! Pipeline configuration file: one TOML document with `[template]`,
//! `[sampling]`, `[features]`, `[refine]` and `[experiment]` sections, all
//! optional with documented defaults. Unknown keys are rejected with
//! location diagnostics. Command-line flags override config values.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use fieldcal::error::Error;
use fieldcal::eval::DisplacementExperimentConfig;
use fieldcal::hog::HogConfig;
use fieldcal::lk::LkSettings;
use fieldcal::sampler::PoseDistribution;
use fieldcal::template::{FieldTemplate, builtin, load_template};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub template: TemplateSection,
    pub sampling: SamplingSection,
    pub features: HogConfig,
    pub refine: LkSettings,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateSection {
    pub builtin: Option<String>,
    pub path: Option<PathBuf>,
}

impl TemplateSection {
    pub fn resolve(&self) -> Result<FieldTemplate, Error> {
        match (&self.builtin, &self.path) {
            (Some(_), Some(_)) => Err(Error::Config(
                "[template] must set either 'builtin' or 'path', not both".into(),
            )),
            (Some(name), None) => builtin(name),
            (None, Some(path)) => load_template(path),
            (None, None) => builtin("soccer"),
        }
    }
}

/// `[sampling]`: the pose prior plus the database build size.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub count: usize,
    pub center_mean: [f64; 3],
    pub center_stddev: [f64; 3],
    pub pan_range_deg: [f64; 2],
    pub tilt_range_deg: [f64; 2],
    pub focal_range_px: [f64; 2],
    pub roll_range_deg: [f64; 2],
    pub base_tilt_deg: f64,
    pub image_size: [u32; 2],
    pub seed: u64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let d = PoseDistribution::default();
        SamplingSection {
            count: 10_000,
            center_mean: d.center_mean,
            center_stddev: d.center_stddev,
            pan_range_deg: d.pan_range_deg,
            tilt_range_deg: d.tilt_range_deg,
            focal_range_px: d.focal_range_px,
            roll_range_deg: d.roll_range_deg,
            base_tilt_deg: d.base_tilt_deg,
            image_size: d.image_size,
            seed: d.seed,
        }
    }
}

impl SamplingSection {
    pub fn distribution(&self) -> PoseDistribution {
        PoseDistribution {
            center_mean: self.center_mean,
            center_stddev: self.center_stddev,
            pan_range_deg: self.pan_range_deg,
            tilt_range_deg: self.tilt_range_deg,
            focal_range_px: self.focal_range_px,
            roll_range_deg: self.roll_range_deg,
            base_tilt_deg: self.base_tilt_deg,
            image_size: self.image_size,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub db_size: usize,
    pub test_size: usize,
    pub bin_width_m: f64,
    pub max_displacement_m: f64,
    /// Defaults to the sampling seed.
    pub seed: Option<u64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            db_size: 10_000,
            test_size: 1_000,
            bin_width_m: 1.0,
            max_displacement_m: 12.0,
            seed: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<PipelineConfig, Error> {
        match path {
            None => Ok(PipelineConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn experiment_config(&self) -> DisplacementExperimentConfig {
        DisplacementExperimentConfig {
            db_size: self.experiment.db_size,
            test_size: self.experiment.test_size,
            bin_width_m: self.experiment.bin_width_m,
            max_displacement_m: self.experiment.max_displacement_m,
            distribution: self.sampling.distribution(),
            seed: self.experiment.seed.unwrap_or(self.sampling.seed),
        }
    }
}
