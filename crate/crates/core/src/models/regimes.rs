use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{fit, FitError, FittedModel, ModelSpec};
use crate::world::{SampleBundle, World};

/// Which feature/target view a model is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TrainingRegime {
    /// observed features, observed targets
    OO,
    /// true features, observed targets
    TO,
    /// true features, true targets
    TT,
    /// the true function itself
    Oracle,
}

impl TrainingRegime {
    pub const ALL: [TrainingRegime; 4] = [
        TrainingRegime::OO,
        TrainingRegime::TO,
        TrainingRegime::TT,
        TrainingRegime::Oracle,
    ];

    /// True when the regime reads `x_observed` rather than `x_true`.
    pub fn uses_observed_features(self) -> bool {
        self == TrainingRegime::OO
    }
}

impl fmt::Display for TrainingRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainingRegime::OO => "OO",
            TrainingRegime::TO => "TO",
            TrainingRegime::TT => "TT",
            TrainingRegime::Oracle => "ORACLE",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{regime} fit failed: {source}")]
pub struct RegimeFitError {
    pub regime: TrainingRegime,
    #[source]
    pub source: FitError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeModels {
    pub models: BTreeMap<TrainingRegime, FittedModel>,
    /// Bundle rows every regime was trained on.
    pub training_rows: Vec<usize>,
}

impl RegimeModels {
    pub fn get(&self, regime: TrainingRegime) -> Option<&FittedModel> {
        self.models.get(&regime)
    }

    pub fn is_complete(&self) -> bool {
        TrainingRegime::ALL
            .iter()
            .all(|r| self.models.contains_key(r))
    }

    /// Prediction of `regime` at one row, picking the feature view it was
    /// trained on.
    pub fn predict_row(
        &self,
        regime: TrainingRegime,
        x_true: &[f64],
        x_observed: &[f64],
    ) -> Option<f64> {
        let m = self.get(regime)?;
        let x = if regime.uses_observed_features() {
            x_observed
        } else {
            x_true
        };
        Some(m.predict_row(x))
    }
}

/// Fits `spec` under OO, TO and TT on the selected rows of `bundle` and adds
/// the oracle wrapper.
pub fn fit_regimes(
    world: &World,
    bundle: &SampleBundle,
    spec: &ModelSpec,
) -> Result<RegimeModels, RegimeFitError> {
    let labeled = |regime| move |source| RegimeFitError { regime, source };
    if *spec == ModelSpec::Oracle {
        return Err(RegimeFitError {
            regime: TrainingRegime::TT,
            source: FitError::OracleNotTrainable,
        });
    }
    let rows = bundle.selected_indices();
    let train = bundle.subset(&rows);
    let mut models = BTreeMap::new();
    for (regime, x, y) in [
        (TrainingRegime::OO, &train.x_observed, &train.y_observed),
        (TrainingRegime::TO, &train.x_true, &train.y_observed),
        (TrainingRegime::TT, &train.x_true, &train.y_true),
    ] {
        let mut m = fit(spec, x, y).map_err(labeled(regime))?;
        m.regime = Some(regime);
        models.insert(regime, m);
    }
    models.insert(TrainingRegime::Oracle, FittedModel::oracle(&world.f_star));
    Ok(RegimeModels {
        models,
        training_rows: rows,
    })
}
