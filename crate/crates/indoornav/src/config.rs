//! Configuration files: camera calibration, class priors and the run
//! configuration used by `simulate`. TOML or JSON, picked by extension.

use std::fs;
use std::path::{Path, PathBuf};

use indoornav_core::box3d::{ClassPrior, ClassPriors, Dimensions, OrientationRule, SizeRule};
use indoornav_core::decision::PolicyConfig;
use indoornav_core::geometry::CameraModel;
use indoornav_core::sim::{Environment, TrialConfig, World};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::reasoner::ReasonerConfig;
use crate::wire::EndpointConfig;
use crate::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses `path` as TOML or JSON depending on its extension.
pub fn load_structured<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext.to_ascii_lowercase().as_str() {
        "toml" => toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message()))),
        "json" => serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
        _ => Err(Error::Config(format!(
            "{}: unknown config format (expected .toml or .json)",
            path.display()
        ))),
    }
}

/// Camera calibration as written by the calibration tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    /// Defaults to half the frame height.
    #[serde(default)]
    pub cy: Option<f64>,
    #[serde(default)]
    pub dist: [f64; 5],
    #[serde(default)]
    pub rvec: [f64; 3],
    #[serde(default)]
    pub tvec: [f64; 3],
    pub width: u32,
    pub height: u32,
}

impl Calibration {
    pub fn camera(&self) -> Result<CameraModel> {
        let cy = self.cy.unwrap_or(self.height as f64 / 2.0);
        Ok(
            CameraModel::new(self.fx, self.fy, self.cx, cy, self.width, self.height)
                .map_err(|e| Error::Config(e.to_string()))?
                .with_distortion(self.dist)
                .with_extrinsics(self.rvec, self.tvec),
        )
    }
}

pub fn load_calibration(path: &Path) -> Result<CameraModel> {
    load_structured::<Calibration>(path)?.camera()
}

/// One class in a priors file. Either all three of `h_mm`, `w_mm`, `l_mm`
/// (fixed size) or `width_ratio` and `length_ratio` (height measured, the
/// footprint proportional to it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorEntry {
    pub class: String,
    #[serde(default)]
    pub h_mm: Option<f64>,
    #[serde(default)]
    pub w_mm: Option<f64>,
    #[serde(default)]
    pub l_mm: Option<f64>,
    #[serde(default)]
    pub width_ratio: Option<f64>,
    #[serde(default)]
    pub length_ratio: Option<f64>,
    #[serde(default)]
    pub orientation_rule: OrientationRule,
}

impl PriorEntry {
    pub fn prior(&self) -> Result<ClassPrior> {
        let size = match (
            self.h_mm,
            self.w_mm,
            self.l_mm,
            self.width_ratio,
            self.length_ratio,
        ) {
            (Some(h), Some(w), Some(l), None, None) => SizeRule::Fixed(Dimensions::from_hwl(h, w, l)),
            (None, None, None, Some(width_ratio), Some(length_ratio)) => SizeRule::Proportional {
                width_ratio,
                length_ratio,
            },
            _ => {
                return Err(Error::Config(format!(
                    "prior '{}': give either h_mm, w_mm, l_mm or width_ratio, length_ratio",
                    self.class
                )))
            }
        };
        Ok(ClassPrior {
            size,
            orientation: self.orientation_rule,
        })
    }
}

pub fn priors_from_entries(entries: &[PriorEntry]) -> Result<ClassPriors> {
    let mut priors = ClassPriors::empty();
    for e in entries {
        if priors.get(&e.class).is_some() {
            return Err(Error::Config(format!("duplicate prior for '{}'", e.class)));
        }
        priors
            .insert(&e.class, e.prior()?)
            .map_err(|err| Error::Config(err.to_string()))?;
    }
    Ok(priors)
}

/// Reads a priors list and layers it over the built-in table.
pub fn load_priors(path: &Path) -> Result<ClassPriors> {
    let entries: Vec<PriorEntry> = load_structured(path)?;
    let extra = priors_from_entries(&entries)?;
    let mut priors = ClassPriors::default();
    for (class, p) in extra.iter() {
        priors
            .insert(class, *p)
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(priors)
}

pub fn load_environment(path: &Path) -> Result<World> {
    let env: Environment = load_structured(path)?;
    env.build().map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Everything `simulate` reads from `--config`. Paths inside are relative
/// to the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub trial: TrialConfig,
    pub policy: PolicyConfig,
    pub calibration: Option<PathBuf>,
    pub priors: Option<PathBuf>,
    pub reasoner: Option<ReasonerConfig>,
    pub endpoints: EndpointConfig,
}

impl RunConfig {
    /// Loads the file, resolves the referenced calibration and priors into
    /// the trial configuration and validates the result.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = load_structured(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(c) = &cfg.calibration {
            cfg.trial.camera = load_calibration(&base.join(c))?;
        }
        if let Some(p) = &cfg.priors {
            cfg.trial.priors = load_priors(&base.join(p))?;
        }
        if let Some(r) = &mut cfg.reasoner {
            r.resolve_relative_to(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.trial
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.policy.validate().map_err(|e| Error::Config(e.into()))?;
        if let Some(r) = &self.reasoner {
            r.validate()?;
        }
        self.endpoints.resolve()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    #[test]
    fn calibration_defaults_cy_to_half_height() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "cam.json",
            r#"{"fx": 520, "fy": 520, "cx": 360.594, "width": 720, "height": 480}"#,
        );
        let cam = load_calibration(&p).unwrap();
        assert_eq!(cam, CameraModel::reference());
    }

    #[test]
    fn priors_need_one_complete_size_source() {
        let fixed = PriorEntry {
            class: "book".into(),
            h_mm: Some(230.0),
            w_mm: Some(150.0),
            l_mm: Some(40.0),
            width_ratio: None,
            length_ratio: None,
            orientation_rule: OrientationRule::Default,
        };
        assert!(fixed.prior().is_ok());
        let mixed = PriorEntry {
            width_ratio: Some(0.5),
            ..fixed.clone()
        };
        assert!(mixed.prior().is_err());
        assert!(priors_from_entries(&[fixed.clone(), fixed]).is_err());
    }

    #[test]
    fn run_config_reads_toml_and_rejects_unknown_extension() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "run.toml",
            "[trial]\nmax_time_s = 30.0\nnoise = false\n\n[policy]\ncruise_speed = 0.4\n",
        );
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.trial.max_time_s, 30.0);
        assert!(!cfg.trial.noise);
        assert_eq!(cfg.policy.cruise_speed, 0.4);
        assert_eq!(cfg.policy.deadband_mm, 150.0);

        let q = write(dir.path(), "run.yaml", "trial: {}");
        assert!(matches!(RunConfig::load(&q), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "run.json", r#"{"trial": {"control_period_s": 0.015}}"#);
        let err = RunConfig::load(&p).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }
}
