use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::decomp::Tolerances;
use crate::experiments::{InformationAxis, PanelScenario, PanelVariant, DEFAULT_TEST_POINTS};
use crate::models::{ModelSpec, TrainingRegime};
use crate::world::{build_world, World, WorldError};

/// One scenario file: the world, the model and per-command settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub world: World,
    pub model: ModelSpec,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub decompose: DecomposeSection,
    #[serde(default)]
    pub biasvar: BiasVarSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<CurveSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub panels: Vec<PanelScenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gallery: Option<GallerySection>,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub n: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection { n: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeSection {
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DecomposeSection {
    fn default() -> Self {
        DecomposeSection {
            n_train: 200,
            n_test: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasVarSection {
    pub regime: TrainingRegime,
    pub n_train: usize,
    pub replicates: usize,
    pub test_points: usize,
}

impl Default for BiasVarSection {
    fn default() -> Self {
        BiasVarSection {
            regime: TrainingRegime::TT,
            n_train: 200,
            replicates: 200,
            test_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSection {
    pub axis: InformationAxis,
    #[serde(default = "default_curve_replicates")]
    pub replicates: usize,
    #[serde(default = "default_test_points")]
    pub test_points: usize,
}

fn default_curve_replicates() -> usize {
    30
}

fn default_test_points() -> usize {
    DEFAULT_TEST_POINTS
}

/// The gallery pairs two copies of the scenario world that differ only in
/// aleatoric variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GallerySection {
    pub low_noise_variance: f64,
    pub high_noise_variance: f64,
    #[serde(default = "default_ceiling_rows")]
    pub ceiling_rows: usize,
}

fn default_ceiling_rows() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub n: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection { n: 20_000 }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config(format!("{field}: {}", reason.into()))
}

fn world_error(prefix: &str, e: WorldError) -> CliError {
    match e {
        WorldError::InvalidSpec { field, reason } => invalid(&format!("{prefix}.{field}"), reason),
        other => invalid(prefix, other.to_string()),
    }
}

impl ScenarioConfig {
    /// Parses TOML text and checks every invariant, filling world defaults.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let raw: ScenarioConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        raw.validated()
    }

    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Normalized TOML echo; parsing it again yields the same config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("validated configs serialize")
    }

    fn validated(mut self) -> Result<Self, CliError> {
        if self.world.master_seed > i64::MAX as u64 {
            return Err(invalid(
                "world.master_seed",
                "must fit in a signed 64-bit integer",
            ));
        }
        self.world = build_world(self.world).map_err(|e| world_error("world", e))?;
        self.model
            .validate()
            .map_err(|e| invalid("model", e.to_string()))?;
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(invalid(field, "must be positive"))
            } else {
                Ok(())
            }
        };
        positive("simulate.n", self.simulate.n)?;
        positive("decompose.n_train", self.decompose.n_train)?;
        positive("decompose.n_test", self.decompose.n_test)?;
        positive("biasvar.n_train", self.biasvar.n_train)?;
        positive("biasvar.test_points", self.biasvar.test_points)?;
        positive("probe.n", self.probe.n)?;
        if self.biasvar.replicates < 2 {
            return Err(invalid("biasvar.replicates", "must be at least 2"));
        }
        if self.model == ModelSpec::Oracle && self.biasvar.regime != TrainingRegime::Oracle {
            return Err(invalid(
                "model.family",
                "oracle is only valid with biasvar.regime = \"ORACLE\"",
            ));
        }
        if let Some(c) = &self.curve {
            if c.replicates < 2 {
                return Err(invalid("curve.replicates", "must be at least 2"));
            }
            positive("curve.test_points", c.test_points)?;
            c.axis
                .validate_for(&self.world)
                .map_err(|e| invalid("curve.axis", e.to_string()))?;
        }
        if !self.panels.is_empty() {
            if self.curve.is_none() {
                return Err(invalid(
                    "panels",
                    "panels need a [curve] section for the axis",
                ));
            }
            if !self
                .panels
                .iter()
                .any(|p| p.variant == PanelVariant::Baseline)
            {
                return Err(invalid(
                    "panels",
                    "at least one baseline scenario is required",
                ));
            }
            for (i, p) in self.panels.iter().enumerate() {
                p.world(&self.world)
                    .map_err(|e| invalid(&format!("panels[{i}]"), e.to_string()))?;
            }
        }
        if let Some(g) = &self.gallery {
            if self.curve.is_none() {
                return Err(invalid(
                    "gallery",
                    "the gallery needs a [curve] section for the axis",
                ));
            }
            for (field, v) in [
                ("gallery.low_noise_variance", g.low_noise_variance),
                ("gallery.high_noise_variance", g.high_noise_variance),
            ] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(invalid(field, "must be finite and >= 0"));
                }
            }
            if g.low_noise_variance >= g.high_noise_variance {
                return Err(invalid(
                    "gallery",
                    "low_noise_variance must be below high_noise_variance",
                ));
            }
            if g.ceiling_rows < 2 {
                return Err(invalid("gallery.ceiling_rows", "must be at least 2"));
            }
        }
        let t = &self.tolerances;
        if !(t.identity_rel > 0.0 && t.z > 0.0) {
            return Err(invalid("tolerances", "identity_rel and z must be positive"));
        }
        Ok(self)
    }

    /// Applies the command-line seed and replicate overrides.
    pub fn with_overrides(
        mut self,
        seed: Option<u64>,
        replicates: Option<usize>,
    ) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.world.master_seed = s;
        }
        if let Some(r) = replicates {
            self.biasvar.replicates = r;
            if let Some(c) = &mut self.curve {
                c.replicates = r;
            }
        }
        self.validated()
    }

    /// Worlds of the gallery, low noise first.
    pub fn gallery_worlds(&self, g: &GallerySection) -> (World, World) {
        let with = |v: f64| {
            let mut w = self.world.clone();
            w.aleatoric.variance = v;
            w
        };
        (with(g.low_noise_variance), with(g.high_noise_variance))
    }
}
