use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    run_learning_curve_with, ExperimentError, InformationAxis, LearningCurve, DEFAULT_TEST_POINTS,
};
use crate::decomp::{estimate_ceiling, CeilingEstimate};
use crate::models::ModelSpec;
use crate::world::{build_world, TargetNoiseSpec, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelVariant {
    Baseline,
    ReconstructedTarget,
    ReconstructedFeatures,
}

/// A curve variant of the base world. The target variant may only replace
/// the target error spec; the features variant may only replace the
/// omission mask and coarsening steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelScenario {
    pub label: String,
    pub variant: PanelVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_noise: Option<TargetNoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omission_mask: Option<Vec<bool>>,
    /// Per-feature steps; all zeros removes coarsening.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarsening: Option<Vec<f64>>,
}

impl PanelScenario {
    pub fn baseline(label: &str) -> Self {
        PanelScenario {
            label: label.to_owned(),
            variant: PanelVariant::Baseline,
            target_noise: None,
            omission_mask: None,
            coarsening: None,
        }
    }

    /// The variant world, validated.
    pub fn world(&self, base: &World) -> Result<World, ExperimentError> {
        let bad = |reason: &str| ExperimentError::InvalidScenario {
            scenario: self.label.clone(),
            reason: reason.to_owned(),
        };
        let feature_override = self.omission_mask.is_some() || self.coarsening.is_some();
        let mut w = base.clone();
        match self.variant {
            PanelVariant::Baseline => {
                if self.target_noise.is_some() || feature_override {
                    return Err(bad("baseline takes no overrides"));
                }
            }
            PanelVariant::ReconstructedTarget => {
                if feature_override {
                    return Err(bad("reconstructed_target may only override target_noise"));
                }
                w.target_noise = self
                    .target_noise
                    .clone()
                    .ok_or_else(|| bad("target_noise override missing"))?;
            }
            PanelVariant::ReconstructedFeatures => {
                if self.target_noise.is_some() {
                    return Err(bad(
                        "reconstructed_features may only override omission_mask or coarsening",
                    ));
                }
                if !feature_override {
                    return Err(bad("feature override missing"));
                }
                if let Some(m) = &self.omission_mask {
                    w.feature_noise.omission_mask = m.clone();
                }
                if let Some(c) = &self.coarsening {
                    w.feature_noise.coarsening = if c.iter().all(|&s| s == 0.0) {
                        None
                    } else {
                        Some(c.clone())
                    };
                }
            }
        }
        build_world(w).map_err(|e| bad(&e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelCurve {
    pub label: String,
    pub variant: PanelVariant,
    pub curve: LearningCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalRow {
    pub label: String,
    pub variant: PanelVariant,
    pub terminal_mse: f64,
    pub ci_half_width: f64,
    /// Mean paired difference against the first baseline, replicate by replicate.
    pub diff_vs_baseline: f64,
    pub diff_se: f64,
    /// Whether the two CIs are disjoint.
    pub separated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelResults {
    pub curves: Vec<PanelCurve>,
    pub table: Vec<TerminalRow>,
}

impl PanelResults {
    pub fn curve(&self, label: &str) -> Option<&LearningCurve> {
        self.curves
            .iter()
            .find(|c| c.label == label)
            .map(|c| &c.curve)
    }

    /// Fixed-width comparison of terminal MSEs.
    pub fn render_table(&self) -> String {
        let mut s = format!(
            "{:<24} {:<24} {:>12} {:>10} {:>12} {:>10}\n",
            "scenario", "variant", "terminal_mse", "ci_hw", "diff_vs_base", "diff_se"
        );
        for r in &self.table {
            let variant = serde_json::to_value(r.variant).expect("variant serializes");
            let _ = writeln!(
                s,
                "{:<24} {:<24} {:>12.6} {:>10.6} {:>12.6} {:>10.6}",
                r.label,
                variant.as_str().unwrap_or_default(),
                r.terminal_mse,
                r.ci_half_width,
                r.diff_vs_baseline,
                r.diff_se
            );
        }
        s
    }
}

/// Runs one learning curve per scenario on the same axis and replicate
/// labels, so any difference between curves comes from the variant alone.
pub fn run_panel_scenarios(
    base: &World,
    scenarios: &[PanelScenario],
    axis: &InformationAxis,
    spec: &ModelSpec,
    replicates: usize,
) -> Result<PanelResults, ExperimentError> {
    run_panel_scenarios_with(base, scenarios, axis, spec, replicates, DEFAULT_TEST_POINTS)
}

pub fn run_panel_scenarios_with(
    base: &World,
    scenarios: &[PanelScenario],
    axis: &InformationAxis,
    spec: &ModelSpec,
    replicates: usize,
    test_points: usize,
) -> Result<PanelResults, ExperimentError> {
    let worlds = scenarios
        .iter()
        .map(|s| s.world(base))
        .collect::<Result<Vec<_>, _>>()?;
    let Some(base_index) = scenarios
        .iter()
        .position(|s| s.variant == PanelVariant::Baseline)
    else {
        return Err(ExperimentError::InvalidScenario {
            scenario: "panels".into(),
            reason: "no baseline scenario".into(),
        });
    };
    let mut curves = Vec::with_capacity(scenarios.len());
    for (s, w) in scenarios.iter().zip(&worlds) {
        curves.push(PanelCurve {
            label: s.label.clone(),
            variant: s.variant,
            curve: run_learning_curve_with(w, spec, axis, replicates, test_points)?,
        });
    }
    let base_t = curves[base_index].curve.terminal().clone();
    let table = curves
        .iter()
        .map(|c| {
            let t = c.curve.terminal();
            let diffs: Vec<f64> = t
                .replicate_mse
                .iter()
                .zip(&base_t.replicate_mse)
                .map(|(a, b)| a - b)
                .collect();
            TerminalRow {
                label: c.label.clone(),
                variant: c.variant,
                terminal_mse: t.mean_mse,
                ci_half_width: t.ci_half_width,
                diff_vs_baseline: crate::stats::mean(&diffs),
                diff_se: crate::stats::std_error(&diffs),
                separated: (t.mean_mse - base_t.mean_mse).abs()
                    > t.ci_half_width + base_t.ci_half_width,
            }
        })
        .collect();
    Ok(PanelResults { curves, table })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryConfig {
    pub low_noise: World,
    pub high_noise: World,
    pub spec: ModelSpec,
    pub axis: InformationAxis,
    pub replicates: usize,
    #[serde(default = "default_test_points")]
    pub test_points: usize,
    #[serde(default = "default_ceiling_rows")]
    pub ceiling_rows: usize,
}

fn default_test_points() -> usize {
    DEFAULT_TEST_POINTS
}

fn default_ceiling_rows() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryEntry {
    pub label: String,
    pub curve: LearningCurve,
    pub ceiling: CeilingEstimate,
    /// First level whose mean MSE is within 10% of the ceiling MSE.
    pub attainment_level: Option<usize>,
    /// First level whose performance reaches 90% of the ceiling R².
    pub performance_attainment_level: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryResult {
    pub low_noise: GalleryEntry,
    pub high_noise: GalleryEntry,
}

/// Learning curves and ceilings for a low-noise and a high-noise world.
pub fn regime_gallery(config: &GalleryConfig) -> Result<GalleryResult, ExperimentError> {
    if config.low_noise.aleatoric.variance >= config.high_noise.aleatoric.variance {
        return Err(ExperimentError::InvalidScenario {
            scenario: "gallery".into(),
            reason: "low_noise world must have smaller aleatoric variance than high_noise".into(),
        });
    }
    let entry = |label: &str, w: &World| -> Result<GalleryEntry, ExperimentError> {
        let curve = run_learning_curve_with(
            w,
            &config.spec,
            &config.axis,
            config.replicates,
            config.test_points,
        )?;
        let ceiling = estimate_ceiling(w, config.ceiling_rows)?;
        let attainment_level = curve
            .points
            .iter()
            .find(|p| p.mean_mse <= 1.1 * ceiling.ceiling_mse)
            .map(|p| p.level_index);
        let performance_attainment_level = curve
            .points
            .iter()
            .find(|p| p.performance >= 0.9 * ceiling.ceiling_r2)
            .map(|p| p.level_index);
        Ok(GalleryEntry {
            label: label.to_owned(),
            curve,
            ceiling,
            attainment_level,
            performance_attainment_level,
        })
    };
    Ok(GalleryResult {
        low_noise: entry("low_noise", &config.low_noise)?,
        high_noise: entry("high_noise", &config.high_noise)?,
    })
}
