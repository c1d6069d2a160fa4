use serde::Serialize;

use super::config::ScenarioConfig;
use super::output::{json_file, CsvTable, OutputFile};
use super::CliError;
use crate::decomp::{
    bias_variance_monte_carlo, component_means, decompose_error_with, decompose_pointwise_with,
    estimate_ceiling, relative_deviation, representativeness_probe, CeilingEstimate,
    ComponentMeans, RowView,
};
use crate::experiments::{
    regime_gallery, run_learning_curve_with, run_panel_scenarios_with, GalleryConfig,
    InformationAxis, LearningCurve,
};
use crate::models::{fit_regimes, TrainingRegime};
use crate::world::{sample, SelectionRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Simulate,
    Decompose,
    Biasvar,
    Curve,
    Panels,
    Gallery,
    Probe,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Decompose => "decompose",
            Command::Biasvar => "biasvar",
            Command::Curve => "curve",
            Command::Panels => "panels",
            Command::Gallery => "gallery",
            Command::Probe => "probe",
        }
    }

    /// Command-specific requirements, checked before any work starts.
    pub fn check(self, cfg: &ScenarioConfig) -> Result<(), CliError> {
        let missing = |what: &str| Err(CliError::Config(format!("{} needs {what}", self.name())));
        match self {
            Command::Curve if cfg.curve.is_none() => missing("a [curve] section"),
            Command::Panels if cfg.panels.is_empty() => missing("[[panels]] scenarios"),
            Command::Gallery if cfg.gallery.is_none() => missing("a [gallery] section"),
            Command::Probe if cfg.world.selection.rule == SelectionRule::None => {
                missing("a world.selection rule")
            }
            Command::Decompose | Command::Curve | Command::Panels | Command::Gallery
                if cfg.model == crate::models::ModelSpec::Oracle =>
            {
                missing("a trainable model")
            }
            _ => Ok(()),
        }
    }
}

/// Files and a terminal summary produced by one command.
pub struct CommandOutput {
    pub files: Vec<OutputFile>,
    pub summary: String,
}

pub fn execute(cmd: Command, cfg: &ScenarioConfig) -> Result<CommandOutput, CliError> {
    match cmd {
        Command::Simulate => simulate(cfg),
        Command::Decompose => decompose(cfg),
        Command::Biasvar => biasvar(cfg),
        Command::Curve => curve(cfg),
        Command::Panels => panels(cfg),
        Command::Gallery => gallery(cfg),
        Command::Probe => probe(cfg),
    }
}

fn simulate(cfg: &ScenarioConfig) -> Result<CommandOutput, CliError> {
    let w = &cfg.world;
    let b = sample(w, cfg.simulate.n, "simulate")?;
    let mut header: Vec<String> = vec!["row".into()];
    header.extend((0..w.input_dim()).map(|j| format!("x_true_{j}")));
    header.extend(
        b.observed_features
            .iter()
            .map(|j| format!("x_observed_{j}")),
    );
    header.extend(["y_true", "y_observed", "epsilon", "delta_y", "selected"].map(String::from));
    let mut t = CsvTable::new(&header);
    for i in 0..b.len() {
        let mut cells = vec![i.to_string()];
        cells.extend(b.x_true.row(i).iter().map(f64::to_string));
        cells.extend(b.x_observed.row(i).iter().map(f64::to_string));
        for v in [b.y_true[i], b.y_observed[i], b.epsilon[i], b.delta_y[i]] {
            cells.push(v.to_string());
        }
        cells.push(b.selected[i].to_string());
        t.row_strings(&cells);
    }
    #[derive(Serialize)]
    struct Summary {
        command: &'static str,
        rows: usize,
        coverage: f64,
        observed_features: Vec<usize>,
        ceiling: Option<CeilingEstimate>,
    }
    let ceiling = if cfg.simulate.n >= 2 {
        estimate_ceiling(w, cfg.simulate.n).ok()
    } else {
        None
    };
    let summary = format!("simulated {} rows, coverage {:.4}", b.len(), b.coverage);
    Ok(CommandOutput {
        files: vec![
            t.finish("samples.csv"),
            json_file(
                "simulate.json",
                &Summary {
                    command: "simulate",
                    rows: b.len(),
                    coverage: b.coverage,
                    observed_features: b.observed_features.clone(),
                    ceiling,
                },
            ),
        ],
        summary,
    })
}

fn decompose(cfg: &ScenarioConfig) -> Result<CommandOutput, CliError> {
    let w = &cfg.world;
    let train = sample(w, cfg.decompose.n_train, "decompose/train")?;
    let test = sample(w, cfg.decompose.n_test, "decompose/test")?;
    let models = fit_regimes(w, &train, &cfg.model)?;
    let tol = &cfg.tolerances;
    let mut t = CsvTable::new(&[
        "row",
        "y_true",
        "model_approx_gain",
        "meas_gain_y",
        "meas_gain_x",
        "current_prediction",
        "aleatoric",
        "err_x",
        "err_y",
        "delta_f",
        "aleatoric_term",
        "y_pred",
    ]);
    let (mut max_tel, mut max_err) = (0f64, 0f64);
    let mut err_means = [0.0; 4];
    for i in 0..test.len() {
        let row = RowView::from_bundle(&test, i);
        let p = decompose_pointwise_with(w, &models, &row, tol)?;
        let e = decompose_error_with(w, &models, &row, tol)?;
        max_tel = max_tel.max(relative_deviation(
            p.total(),
            row.y_true,
            &[
                p.model_approx_gain,
                p.meas_gain_y,
                p.meas_gain_x,
                p.current_prediction,
                p.aleatoric,
            ],
        ));
        max_err = max_err.max(relative_deviation(
            e.total(),
            e.y_pred - e.y_true,
            &[e.err_x, e.err_y, e.delta_f, e.aleatoric_term],
        ));
        for (acc, v) in err_means
            .iter_mut()
            .zip([e.err_x, e.err_y, e.delta_f, e.aleatoric_term])
        {
            *acc += v / test.len() as f64;
        }
        t.row(&[
            &i,
            &row.y_true,
            &p.model_approx_gain,
            &p.meas_gain_y,
            &p.meas_gain_x,
            &p.current_prediction,
            &p.aleatoric,
            &e.err_x,
            &e.err_y,
            &e.delta_f,
            &e.aleatoric_term,
            &e.y_pred,
        ]);
    }
    let means: ComponentMeans = component_means(w, &models, &test)?;

    #[derive(Serialize)]
    struct ErrorMeans {
        err_x: f64,
        err_y: f64,
        delta_f: f64,
        aleatoric_term: f64,
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        command: &'static str,
        training_rows: usize,
        test_rows: usize,
        component_means: &'a ComponentMeans,
        error_means: ErrorMeans,
        max_telescoping_rel: f64,
        max_error_identity_rel: f64,
        final_loss: std::collections::BTreeMap<TrainingRegime, f64>,
    }
    let final_loss = models
        .models
        .iter()
        .map(|(r, m)| (*r, m.diagnostics.final_loss))
        .collect();
    let summary = format!(
        "decomposed {} rows: |model_approx| {:.4}, |meas_y| {:.4}, |meas_x| {:.4}, mse {:.4}",
        test.len(),
        means.abs_model_approx_gain,
        means.abs_meas_gain_y,
        means.abs_meas_gain_x,
        means.mse
    );
    Ok(CommandOutput {
        files: vec![
            t.finish("decompose.csv"),
            json_file(
                "decompose.json",
                &Summary {
                    command: "decompose",
                    training_rows: models.training_rows.len(),
                    test_rows: test.len(),
                    component_means: &means,
                    error_means: ErrorMeans {
                        err_x: err_means[0],
                        err_y: err_means[1],
                        delta_f: err_means[2],
                        aleatoric_term: err_means[3],
                    },
                    max_telescoping_rel: max_tel,
                    max_error_identity_rel: max_err,
                    final_loss,
                },
            ),
            json_file("models.json", &models),
        ],
        summary,
    })
}

fn biasvar(cfg: &ScenarioConfig) -> Result<CommandOutput, CliError> {
    let s = &cfg.biasvar;
    let grid = sample(&cfg.world, s.test_points, "biasvar/grid")?;
    let r = bias_variance_monte_carlo(
        &cfg.world,
        &cfg.model,
        s.regime,
        s.n_train,
        s.replicates,
        &grid,
    )?;
    let z = cfg.tolerances.z;
    let gap_z = r.identity_gap_z();
    let check = if gap_z.abs() < z { "pass" } else { "fail" };
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut t = CsvTable::new(&[
        "regime",
        "replicates",
        "n_train",
        "test_points",
        "empirical_mse",
        "empirical_mse_se",
        "bias",
        "bias_se",
        "bias_squared",
        "bias_squared_se",
        "variance",
        "variance_se",
        "aleatoric_variance",
        "aleatoric_variance_plug_in",
        "aleatoric_variance_plug_in_se",
        "identity_gap",
        "identity_gap_se",
        "identity_gap_z",
        "identity_self_check",
    ]);
    t.row_strings(&[
        r.regime.to_string(),
        r.replicate_count.to_string(),
        r.n_train.to_string(),
        r.test_points.to_string(),
        r.empirical_mse.to_string(),
        r.empirical_mse_se.to_string(),
        r.bias.to_string(),
        r.bias_se.to_string(),
        r.bias_squared.to_string(),
        opt(r.bias_squared_se),
        r.variance.to_string(),
        opt(r.variance_se),
        r.aleatoric_variance.to_string(),
        r.aleatoric_variance_plug_in.to_string(),
        r.aleatoric_variance_plug_in_se.to_string(),
        r.identity_gap.to_string(),
        r.identity_gap_se.to_string(),
        gap_z.to_string(),
        check.to_string(),
    ]);
    #[derive(Serialize)]
    struct Summary<'a> {
        command: &'static str,
        identity_gap_z: f64,
        identity_self_check: &'a str,
        report: &'a crate::decomp::BiasVarianceReport,
    }
    let summary = format!(
        "mse {:.5} = bias^2 {:.5} + variance {:.5} + aleatoric {:.5} + gap {:.2e} (z = {:.2}, {check})",
        r.empirical_mse, r.bias_squared, r.variance, r.aleatoric_variance, r.identity_gap, gap_z
    );
    Ok(CommandOutput {
        files: vec![
            t.finish("biasvar.csv"),
            json_file(
                "biasvar.json",
                &Summary {
                    command: "biasvar",
                    identity_gap_z: gap_z,
                    identity_self_check: check,
                    report: &r,
                },
            ),
        ],
        summary,
    })
}

const CURVE_HEADER: [&str; 19] = [
    "scenario",
    "variant",
    "level",
    "n_train",
    "features",
    "target_fidelity",
    "feature_fidelity",
    "replicates",
    "mean_mse",
    "mse_sd",
    "ci_half_width",
    "performance",
    "model_approx_gain",
    "meas_gain_y",
    "meas_gain_x",
    "abs_model_approx_gain",
    "abs_meas_gain_y",
    "abs_meas_gain_x",
    "monotonicity_violation",
];

fn curve_rows(
    t: &mut CsvTable,
    reps: &mut CsvTable,
    scenario: &str,
    variant: &str,
    axis: &InformationAxis,
    c: &LearningCurve,
) {
    let violations = c.monotonicity_violations();
    for (p, l) in c.points.iter().zip(axis.levels()) {
        let features = l.features.as_ref().map_or("all".to_owned(), |f| {
            f.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
        });
        let m = &p.components;
        t.row(&[
            &scenario,
            &variant,
            &p.level_index,
            &p.n_train,
            &features,
            &l.target_fidelity,
            &l.feature_fidelity,
            &c.replicates,
            &p.mean_mse,
            &p.mse_sd,
            &p.ci_half_width,
            &p.performance,
            &m.model_approx_gain,
            &m.meas_gain_y,
            &m.meas_gain_x,
            &m.abs_model_approx_gain,
            &m.abs_meas_gain_y,
            &m.abs_meas_gain_x,
            &violations.contains(&p.level_index),
        ]);
        for (r, mse) in p.replicate_mse.iter().enumerate() {
            reps.row(&[&scenario, &variant, &p.level_index, &r, mse]);
        }
    }
}

fn replicate_table() -> CsvTable {
    CsvTable::new(&["scenario", "variant", "level", "replicate", "mse"])
}

fn curve(cfg: &ScenarioConfig) -> Result<CommandOutput, CliError> {
    let c = cfg.curve.as_ref().expect("checked before work");
    let lc = run_learning_curve_with(&cfg.world, &cfg.model, &c.axis, c.replicates, c.test_points)?;
    let mut t = CsvTable::new(&CURVE_HEADER);
    let mut reps = replicate_table();
    curve_rows(&mut t, &mut reps, "curve", "baseline", &c.axis, &lc);
    #[derive(Serialize)]
    struct Summary<'a> {
        command: &'static str,
        monotonicity_violations: Vec<usize>,
        curve: &'a LearningCurve,
    }
    let term = lc.terminal();
    let summary = format!(
        "{} levels, terminal mse {:.5} ± {:.5}, monotonicity violations: {:?}",
        lc.points.len(),
        term.mean_mse,
        term.ci_half_width,
        lc.monotonicity_violations()
    );
    Ok(CommandOutput {
        files: vec![
            t.finish("curve.csv"),
            reps.finish("curve_replicates.csv"),
            json_file(
                "curve.json",
                &Summary {
                    command: "curve",
                    monotonicity_violations: lc.monotonicity_violations(),
                    curve: &lc,
                },
            ),
        ],
        summary,
    })
}

fn variant_name(v: crate::experiments::PanelVariant) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn panels(cfg: &ScenarioConfig) -> Result<CommandOutput, CliError> {
    let c = cfg.curve.as_ref().expect("checked before work");
    let r = run_panel_scenarios_with(
        &cfg.world,
        &cfg.panels,
        &c.axis,
        &cfg.model,
        c.replicates,
        c.test_points,
    )?;
    let mut t = CsvTable::new(&CURVE_HEADER);
    let mut reps = replicate_table();
    for pc in &r.curves {
        curve_rows(
            &mut t,
            &mut reps,
            &pc.label,
            &variant_name(pc.variant),
            &c.axis,
            &pc.curve,
        );
    }
    let mut term = CsvTable::new(&[
        "scenario",
        "variant",
        "terminal_mse",
        "ci_half_width",
        "diff_vs_baseline",
        "diff_se",
        "separated",
    ]);
    for row in &r.table {
        term.row(&[
            &row.label,
            &variant_name(row.variant),
            &row.terminal_mse,
            &row.ci_half_width,
            &row.diff_vs_baseline,
            &row.diff_se,
            &row.separated,
        ]);
    }
    let mut with_command = serde_json::Map::new();
    with_command.insert("command".into(), "panels".into());
    with_command.insert(
        "results".into(),
        serde_json::to_value(&r).expect("panels serialize"),
    );
    Ok(CommandOutput {
        files: vec![
            t.finish("panels.csv"),
            reps.finish("panels_replicates.csv"),
            term.finish("panels_terminal.csv"),
            json_file("panels.json", &with_command),
        ],
        summary: r.render_table(),
    })
}

fn gallery(cfg: &ScenarioConfig) -> Result<CommandOutput, CliError> {
    let g = cfg.gallery.as_ref().expect("checked before work");
    let c = cfg.curve.as_ref().expect("validated with the gallery");
    let (low, high) = cfg.gallery_worlds(g);
    let r = regime_gallery(&GalleryConfig {
        low_noise: low,
        high_noise: high,
        spec: cfg.model.clone(),
        axis: c.axis.clone(),
        replicates: c.replicates,
        test_points: c.test_points,
        ceiling_rows: g.ceiling_rows,
    })?;
    let mut t = CsvTable::new(&CURVE_HEADER);
    let mut reps = replicate_table();
    let mut ceil = CsvTable::new(&[
        "scenario",
        "ceiling_mse",
        "sigma_eps_sq_se",
        "ceiling_r2",
        "ceiling_r2_se",
        "attainment_level",
        "performance_attainment_level",
    ]);
    for e in [&r.low_noise, &r.high_noise] {
        curve_rows(&mut t, &mut reps, &e.label, "baseline", &c.axis, &e.curve);
        let level = |l: Option<usize>| l.map_or(String::new(), |l| l.to_string());
        ceil.row(&[
            &e.label,
            &e.ceiling.ceiling_mse,
            &e.ceiling.sigma_eps_sq_se,
            &e.ceiling.ceiling_r2,
            &e.ceiling.ceiling_r2_se,
            &level(e.attainment_level),
            &level(e.performance_attainment_level),
        ]);
    }
    let summary = format!(
        "low noise: ceiling r2 {:.4}, attained at level {:?} (mse) / {:?} (r2); \
         high noise: ceiling r2 {:.4}, attained at level {:?} (mse) / {:?} (r2)",
        r.low_noise.ceiling.ceiling_r2,
        r.low_noise.attainment_level,
        r.low_noise.performance_attainment_level,
        r.high_noise.ceiling.ceiling_r2,
        r.high_noise.attainment_level,
        r.high_noise.performance_attainment_level
    );
    let mut with_command = serde_json::Map::new();
    with_command.insert("command".into(), "gallery".into());
    with_command.insert(
        "results".into(),
        serde_json::to_value(&r).expect("gallery serializes"),
    );
    Ok(CommandOutput {
        files: vec![
            t.finish("gallery.csv"),
            reps.finish("gallery_replicates.csv"),
            ceil.finish("gallery_ceilings.csv"),
            json_file("gallery.json", &with_command),
        ],
        summary,
    })
}

fn probe(cfg: &ScenarioConfig) -> Result<CommandOutput, CliError> {
    let r = representativeness_probe(&cfg.world, cfg.probe.n)?;
    let mut t = CsvTable::new(&[
        "rows",
        "coverage",
        "eps_mean_full",
        "eps_mean_selected",
        "eps_var_full",
        "eps_var_selected",
        "mean_divergence_z",
        "var_divergence_z",
    ]);
    t.row(&[
        &r.rows,
        &r.coverage,
        &r.eps_mean_full,
        &r.eps_mean_selected,
        &r.eps_var_full,
        &r.eps_var_selected,
        &r.mean_divergence_z,
        &r.var_divergence_z,
    ]);
    let summary = format!(
        "coverage {:.4}: mean z {:.2}, variance z {:.2}",
        r.coverage, r.mean_divergence_z, r.var_divergence_z
    );
    let mut with_command = serde_json::Map::new();
    with_command.insert("command".into(), "probe".into());
    with_command.insert(
        "report".into(),
        serde_json::to_value(&r).expect("probe serializes"),
    );
    Ok(CommandOutput {
        files: vec![
            t.finish("probe.csv"),
            json_file("probe.json", &with_command),
        ],
        summary,
    })
}
