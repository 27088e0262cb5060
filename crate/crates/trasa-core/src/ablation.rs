//! The component study: train structural variants of the model under an
//! identical budget and compare their test metrics side by side.

use std::fmt;

use crate::data::pipeline::Instance;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::metrics::EvalReport;
use crate::model::{expected_parameter_names, Ablation, ModelConfig, Readout};
use crate::scalar::Scalar;
use crate::train::{train, TrainConfig};

/// One variant of the study: a name plus the two switches it flips.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteMember {
    pub name: &'static str,
    pub ablation: Ablation,
    pub readout: Readout,
}

/// The full roster: the reference model, the three structural removals,
/// and the three alternative readouts.
pub fn suite_members() -> Vec<SuiteMember> {
    use Ablation as A;
    use Readout as R;
    vec![
        SuiteMember { name: "full", ablation: A::Full, readout: R::SoftAttention },
        SuiteMember { name: "wo-pos", ablation: A::WoPos, readout: R::SoftAttention },
        SuiteMember { name: "wo-rel-pos", ablation: A::WoRelPos, readout: R::SoftAttention },
        SuiteMember { name: "wo-san", ablation: A::WoSan, readout: R::SoftAttention },
        SuiteMember { name: "readout-san", ablation: A::Full, readout: R::San },
        SuiteMember { name: "readout-sum", ablation: A::Full, readout: R::Sum },
        SuiteMember { name: "readout-graph", ablation: A::Full, readout: R::Graph },
    ]
}

/// One trained variant's results.
#[derive(Debug, Clone)]
pub struct SuiteRow {
    pub name: String,
    /// The exact trained-parameter inventory, in store order.
    pub parameter_names: Vec<String>,
    /// Test-set metrics.
    pub report: EvalReport,
    pub best_val_p20: f64,
}

/// All rows of a finished study.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub rows: Vec<SuiteRow>,
    pub ks: Vec<usize>,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(std::iter::once("variant".len()))
            .max()
            .unwrap_or(7);
        write!(f, "{:name_w$}", "variant")?;
        for &k in &self.ks {
            write!(f, "  {:>10}", format!("p@{k}"))?;
            write!(f, "  {:>10}", format!("mrr@{k}"))?;
        }
        writeln!(f, "  {:>8}", "params")?;
        for row in &self.rows {
            write!(f, "{:name_w$}", row.name)?;
            for &k in &self.ks {
                let p = row.report.precision_at(k).unwrap_or(f64::NAN);
                let m = row.report.mrr_at(k).unwrap_or(f64::NAN);
                write!(f, "  {p:>10.4}  {m:>10.4}")?;
            }
            writeln!(f, "  {:>8}", row.parameter_names.len())?;
        }
        Ok(())
    }
}

fn run_member<S: Scalar>(
    member: &SuiteMember,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[Instance],
    valid_set: &[Instance],
    test_set: &[Instance],
    ks: &[usize],
) -> Result<SuiteRow> {
    let mut cfg = base.clone();
    cfg.ablation = member.ablation;
    cfg.readout = member.readout;
    let outcome = train::<S>(&cfg, train_cfg, train_set, valid_set)?;

    let expected = expected_parameter_names(&cfg);
    let actual = outcome.store.names();
    if actual != expected {
        return Err(Error::Internal(format!(
            "trained inventory {actual:?} does not match the layout {expected:?}"
        )));
    }

    let report = evaluate(&outcome.store, &cfg, test_set, ks)?;
    Ok(SuiteRow {
        name: member.name.to_string(),
        parameter_names: expected,
        report,
        best_val_p20: outcome.best_val_p20,
    })
}

/// Train every suite member from the same seed and budget, then score each
/// on the test set. The base configuration's own ablation/readout switches
/// are ignored; each member sets its own.
pub fn run_ablation_suite<S: Scalar>(
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[Instance],
    valid_set: &[Instance],
    test_set: &[Instance],
    ks: &[usize],
) -> Result<SuiteReport> {
    if test_set.is_empty() {
        return Err(Error::Input("the study needs a non-empty test set".into()));
    }
    let mut rows = Vec::new();
    for member in suite_members() {
        let row = run_member::<S>(&member, base, train_cfg, train_set, valid_set, test_set, ks)
            .map_err(|e| {
                Error::Internal(format!("ablation member '{}' failed: {e}", member.name))
            })?;
        rows.push(row);
    }
    Ok(SuiteReport { rows, ks: ks.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_model() -> ModelConfig {
        let mut cfg = ModelConfig::new(8);
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.ffn_inner = 16;
        cfg.max_positions = 6;
        cfg.path_cap = 4;
        cfg.dropout = 0.0;
        cfg
    }

    fn splits() -> (Vec<Instance>, Vec<Instance>, Vec<Instance>) {
        let train: Vec<Instance> = (0..8)
            .map(|i| Instance { prefix: vec![i % 8, (i + 1) % 8], label: (i + 2) % 8 })
            .collect();
        let valid = vec![Instance { prefix: vec![0, 1, 2], label: 3 }];
        let test = vec![
            Instance { prefix: vec![1, 2, 3], label: 4 },
            Instance { prefix: vec![5, 6], label: 7 },
        ];
        (train, valid, test)
    }

    fn quick_budget() -> TrainConfig {
        TrainConfig { batch_size: 8, max_epochs: 2, ..TrainConfig::default() }
    }

    #[test]
    fn the_suite_produces_all_seven_rows_deterministically() {
        let (train, valid, test) = splits();
        let report =
            run_ablation_suite::<f64>(&base_model(), &quick_budget(), &train, &valid, &test, &[5, 20])
                .unwrap();
        let names: Vec<&str> = report.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(
            names,
            ["full", "wo-pos", "wo-rel-pos", "wo-san", "readout-san", "readout-sum", "readout-graph"]
        );
        for row in &report.rows {
            assert_eq!(row.report.instances, 2, "{}", row.name);
        }
        let again =
            run_ablation_suite::<f64>(&base_model(), &quick_budget(), &train, &valid, &test, &[5, 20])
                .unwrap();
        for (a, b) in report.rows.iter().zip(&again.rows) {
            assert_eq!(a.report.precision, b.report.precision, "{}", a.name);
            assert_eq!(a.report.mrr, b.report.mrr, "{}", a.name);
            assert_eq!(a.best_val_p20.to_bits(), b.best_val_p20.to_bits(), "{}", a.name);
        }
    }

    #[test]
    fn structural_switches_shape_each_inventory() {
        let (train, valid, test) = splits();
        let report =
            run_ablation_suite::<f64>(&base_model(), &quick_budget(), &train, &valid, &test, &[20])
                .unwrap();
        let row = |name: &str| {
            report.rows.iter().find(|r| r.name == name).unwrap_or_else(|| panic!("{name}"))
        };
        let has = |row: &SuiteRow, needle: &str| {
            row.parameter_names.iter().any(|n| n.contains(needle))
        };

        let full = row("full");
        assert!(has(full, "position_table"));
        assert!(has(full, "edge_type_table"));
        assert!(has(full, "gru_fwd"));
        assert!(has(full, "relation_split"));
        assert!(has(full, "attn.0."));
        assert!(has(full, "readout."));

        assert!(!has(row("wo-pos"), "position_table"));
        assert!(has(row("wo-pos"), "edge_type_table"));

        let wrp = row("wo-rel-pos");
        for needle in ["position_table", "edge_type_table", "gru_fwd", "gru_bwd", "relation_split"]
        {
            assert!(!has(wrp, needle), "wo-rel-pos must drop {needle}");
        }
        assert!(has(wrp, "attn.0."));

        let ws = row("wo-san");
        assert!(!has(ws, "attn."), "wo-san must drop the encoder stack");
        assert!(has(ws, "edge_type_table"), "wo-san keeps the relation tables");

        assert!(has(row("readout-san"), "san."));
        assert!(!has(row("readout-sum"), "readout."));
        assert!(!has(row("readout-graph"), "position_table"));
        assert!(has(row("readout-graph"), "readout.score"));
    }

    #[test]
    fn a_failing_member_is_reported_by_name() {
        let (train, valid, mut test) = splits();
        test[0].label = 40; // outside the eight-item vocabulary
        let err =
            run_ablation_suite::<f64>(&base_model(), &quick_budget(), &train, &valid, &test, &[20])
                .unwrap_err();
        match err {
            Error::Internal(msg) => {
                assert!(msg.contains("ablation member 'full'"), "{msg}");
            }
            other => panic!("expected an internal error, got {other:?}"),
        }
    }

    #[test]
    fn the_table_display_lists_every_variant() {
        let (train, valid, test) = splits();
        let report =
            run_ablation_suite::<f64>(&base_model(), &quick_budget(), &train, &valid, &test, &[20])
                .unwrap();
        let text = report.to_string();
        for name in ["full", "wo-pos", "wo-rel-pos", "wo-san", "readout-san", "readout-sum", "readout-graph"] {
            assert!(text.contains(name), "missing {name} in:\n{text}");
        }
        assert!(text.contains("p@20"));
        assert!(text.contains("mrr@20"));
    }
}
