//! Finite-difference verification of the analytic gradients, end to end:
//! every parameter component of the full model (embedding tables, GRU cells,
//! relation projection, attention layers, readout, loss) is checked against
//! a 64-bit central difference.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{init_parameters, instance_gradients, instance_loss_value};
use crate::model::{Ablation, LossMode, ModelConfig, Readout};
use crate::parallel::map_indices;
use crate::tensor::store::TensorStore;

/// Components whose |analytic − numeric| falls below this are accepted
/// outright: at that magnitude the difference is finite-difference noise,
/// not gradient signal, and a relative measure would be meaningless.
pub const ABSOLUTE_GATE: f64 = 1e-7;

/// Largest tolerated relative error between analytic and numeric derivative.
pub const RELATIVE_TOLERANCE: f64 = 1e-4;

/// One (session, target) probe, optionally exercising dropout with a fixed
/// mask seed so both finite-difference evaluations see the same mask.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub session: Vec<usize>,
    pub target: usize,
    pub dropout_seed: Option<u64>,
}

/// Worst single comparison in a run.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstComponent {
    pub parameter: String,
    pub component: usize,
    pub case: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of one gradient check run.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub variant: String,
    pub cases: usize,
    /// Parameter components examined (per case, every component once).
    pub components: usize,
    /// Components whose difference exceeded the absolute gate and were
    /// therefore held to the relative tolerance.
    pub compared: usize,
    pub max_rel_err: f64,
    pub worst: Option<WorstComponent>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < RELATIVE_TOLERANCE
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "variant={} cases={} components={} compared={} max_rel_err={:e} pass={}",
            self.variant,
            self.cases,
            self.components,
            self.compared,
            self.max_rel_err,
            self.passed()
        )?;
        if let Some(w) = &self.worst {
            write!(
                f,
                " worst={}[{}] case={} analytic={:e} numeric={:e}",
                w.parameter, w.component, w.case, w.analytic, w.numeric
            )?;
        }
        Ok(())
    }
}

/// Small configuration on which exhaustive finite differences stay cheap:
/// 6 items, model width 8, two heads, one encoder layer.
pub fn toy_config() -> ModelConfig {
    let mut cfg = ModelConfig::new(6);
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.ffn_inner = 16;
    cfg.max_positions = 8;
    cfg.path_cap = 4;
    cfg.dropout = 0.0;
    cfg
}

/// Probe sessions of length 3–5 over the toy vocabulary, with and without
/// revisits, plus a singleton to cover the degenerate readout.
pub fn default_cases(n_items: usize) -> Vec<GradCase> {
    let cases = vec![
        GradCase { session: vec![0, 1, 2], target: 3, dropout_seed: None },
        GradCase { session: vec![1, 4, 1, 5], target: 0, dropout_seed: None },
        GradCase { session: vec![2, 3, 2, 0, 4], target: 5, dropout_seed: None },
        GradCase { session: vec![3], target: 1, dropout_seed: None },
    ];
    for c in &cases {
        assert!(c.session.iter().all(|&v| v < n_items) && c.target < n_items);
    }
    cases
}

fn loss_at<F>(store: &TensorStore<f64>, cfg: &ModelConfig, case: &GradCase, rng_of: F) -> Result<f64>
where
    F: Fn() -> Option<ChaCha8Rng>,
{
    let mut rng = rng_of();
    instance_loss_value(store, cfg, &case.session, case.target, rng.as_mut())
}

/// Compare analytic gradients against central differences for every
/// parameter component and every case. `step` is the probe half-width.
pub fn run_gradcheck(
    cfg: &ModelConfig,
    init_seed: u64,
    step: f64,
    cases: &[GradCase],
) -> Result<GradCheckReport> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {step}")));
    }
    if cases.is_empty() {
        return Err(Error::Contract("at least one gradient-check case is required".into()));
    }
    let store = init_parameters::<f64>(cfg, init_seed)?;

    // Flat component index space: (store position, component within tensor).
    let mut flat = Vec::new();
    for (pos, entry) in store.entries().iter().enumerate() {
        for c in 0..entry.data.len() {
            flat.push((pos, c));
        }
    }

    let mut report = GradCheckReport {
        variant: String::new(),
        cases: cases.len(),
        components: flat.len() * cases.len(),
        compared: 0,
        max_rel_err: 0.0,
        worst: None,
    };

    for (case_idx, case) in cases.iter().enumerate() {
        let rng_of = || case.dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let (_, grads) = {
            let mut rng = rng_of();
            instance_gradients(&store, cfg, &case.session, case.target, rng.as_mut())?
        };

        // (analytic, numeric) per flat component, in order.
        let results: Vec<Result<(f64, f64)>> = map_indices(flat.len(), |k| {
            let (pos, comp) = flat[k];
            let mut probe = store.clone();
            probe.entry_mut(pos).data[comp] += step;
            let plus = loss_at(&probe, cfg, case, rng_of)?;
            probe.entry_mut(pos).data[comp] -= 2.0 * step;
            let minus = loss_at(&probe, cfg, case, rng_of)?;
            let numeric = (plus - minus) / (2.0 * step);
            Ok((grads[pos][comp], numeric))
        });

        for (k, r) in results.into_iter().enumerate() {
            let (analytic, numeric) = r?;
            let diff = (analytic - numeric).abs();
            if diff <= ABSOLUTE_GATE {
                continue;
            }
            report.compared += 1;
            let rel = diff / analytic.abs().max(numeric.abs());
            if rel > report.max_rel_err {
                let (pos, comp) = flat[k];
                report.max_rel_err = rel;
                report.worst = Some(WorstComponent {
                    parameter: store.entry(pos).name.clone(),
                    component: comp,
                    case: case_idx,
                    analytic,
                    numeric,
                    rel_err: rel,
                });
            }
        }
    }
    Ok(report)
}

/// Every structural variant of the model, each checked over the default
/// cases: the full model, each ablation, each readout, the alternative
/// loss, and a dropout-enabled pass with fixed masks.
pub fn full_suite(step: f64) -> Result<Vec<GradCheckReport>> {
    let base = toy_config();
    let mut variants: Vec<(String, ModelConfig, Option<u64>)> = Vec::new();

    variants.push(("full".into(), base.clone(), None));
    for ablation in [Ablation::WoPos, Ablation::WoRelPos, Ablation::WoSan] {
        let mut cfg = base.clone();
        cfg.ablation = ablation;
        variants.push((format!("ablation-{ablation}"), cfg, None));
    }
    for readout in [Readout::San, Readout::Sum, Readout::Graph] {
        let mut cfg = base.clone();
        cfg.readout = readout;
        variants.push((format!("readout-{readout}"), cfg, None));
    }
    {
        let mut cfg = base.clone();
        cfg.loss_mode = LossMode::TargetCe;
        variants.push(("loss-target-ce".into(), cfg, None));
    }
    {
        let mut cfg = base;
        cfg.dropout = 0.3;
        variants.push(("dropout".into(), cfg, Some(7)));
    }

    let mut reports = Vec::with_capacity(variants.len());
    for (name, cfg, dropout_seed) in variants {
        let mut cases = default_cases(cfg.n_items);
        if let Some(seed) = dropout_seed {
            for (i, c) in cases.iter_mut().enumerate() {
                c.dropout_seed = Some(seed + i as u64);
            }
        }
        let mut report = run_gradcheck(&cfg, 42, step, &cases)?;
        report.variant = name;
        reports.push(report);
    }
    Ok(reports)
}
