//! Component and modality ablations trained under shared seeds.

use super::{evaluate, resolve_split, train_with, EvalTarget, Modality, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::report::{AblationReport, AblationRow};

/// Component variants plus single-modality runs.
pub const DEFAULT_VARIANTS: [&str; 9] = [
    "full",
    "no_intra_mca",
    "no_inter_mca",
    "no_intra_mca+no_inter_mca",
    "no_node_weights",
    "no_hyperedge_weights",
    "modality:eeg",
    "modality:audio",
    "modality:video",
];

/// Applies a `+`-joined list of ablation flags, `full`, and
/// `modality:<m>[,<m>…]` terms to `base`. Modalities may also be joined
/// with `/`, which survives comma-separated variant lists.
pub fn apply_variant(base: &TrainConfig, variant: &str) -> Result<TrainConfig> {
    let mut cfg = base.clone();
    for term in variant.split('+').map(str::trim) {
        if term == "full" {
            continue;
        }
        if let Some(list) = term.strip_prefix("modality:") {
            cfg.modalities = list.split([',', '/']).map(|m| m.trim().parse()).collect::<Result<Vec<Modality>>>()?;
            continue;
        }
        cfg.ablation.set(term)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Trains every variant for every seed on the same split and averages the
/// held-out metrics. The split is drawn once from `base`.
pub fn run_ablation(base: &TrainConfig, ds: &Dataset, variants: &[String], seeds: &[u64]) -> Result<AblationReport> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::Argument("ablation needs at least one variant and one seed".into()));
    }
    let configs: Vec<TrainConfig> = variants.iter().map(|v| apply_variant(base, v)).collect::<Result<_>>()?;
    let split = resolve_split(base, ds)?;
    let mut rows = Vec::with_capacity(variants.len());
    for (variant, cfg) in variants.iter().zip(&configs) {
        let (mut acc, mut f1, mut macro_f1) = (0.0, 0.0, 0.0);
        for &seed in seeds {
            let run = TrainConfig { seed, ..cfg.clone() };
            let ckpt = train_with(&run, ds, &split, |_| {})?;
            let m = evaluate(&ckpt, ds, &EvalTarget::Test)?.overall;
            acc += m.accuracy;
            f1 += m.weighted_f1;
            macro_f1 += m.macro_f1;
        }
        let k = seeds.len() as f64;
        rows.push(AblationRow { variant: variant.clone(), accuracy: acc / k, f1: f1 / k, macro_f1: macro_f1 / k });
    }
    Ok(AblationReport { dataset: ds.manifest.name.clone(), seeds: seeds.to_vec(), rows })
}

#[cfg(test)]
mod tests {
    use super::super::tests::{tiny_config, tiny_data};
    use super::super::{HyperMml, ModelShape};
    use super::*;
    use crate::autograd::ParamStore;

    #[test]
    fn variants_parse() {
        let base = TrainConfig::default();
        assert_eq!(apply_variant(&base, "full").unwrap(), base);
        let c = apply_variant(&base, "no_intra_mca+no_node_weights").unwrap();
        assert!(c.ablation.no_intra_mca && c.ablation.no_node_weights && !c.ablation.no_inter_mca);
        assert_eq!(
            apply_variant(&base, "modality:video,eeg").unwrap().active_modalities(),
            [Modality::Eeg, Modality::Video]
        );
        assert_eq!(
            apply_variant(&base, "no_inter_mca+modality:audio/eeg").unwrap().active_modalities(),
            [Modality::Eeg, Modality::Audio]
        );
        assert!(apply_variant(&base, "no_attention").is_err());
        assert!(apply_variant(&base, "modality:smell").is_err());
        for v in DEFAULT_VARIANTS {
            apply_variant(&base, v).unwrap();
        }
    }

    #[test]
    fn flags_swap_parameter_groups() {
        let ds = tiny_data(1.0);
        let names = |variant: &str| {
            let cfg = apply_variant(&tiny_config(), variant).unwrap();
            let mut store = ParamStore::new();
            HyperMml::new(&cfg, ModelShape::of(&ds), &mut store).unwrap();
            store.iter().map(|(_, n, _)| n.to_string()).collect::<Vec<_>>()
        };
        let full = names("full");
        assert!(full.iter().any(|n| n == "intra_mca/alpha/q_de"));
        let direct = names("no_intra_mca");
        assert!(direct.iter().any(|n| n == "intra_mca/alpha/direct/weight"));
        assert!(!direct.iter().any(|n| n.ends_with("q_de")));
        assert!(!names("no_inter_mca").iter().any(|n| n.starts_with("inter_mca")));
        assert!(!names("no_node_weights").iter().any(|n| n == "hypergraph/node_weights"));
        assert!(!names("no_hyperedge_weights").iter().any(|n| n.contains("edge_weights")));
        let audio = names("modality:audio");
        assert!(audio.iter().all(|n| !n.starts_with("subject_bank") && !n.starts_with("encoders/video")));
    }

    #[test]
    fn report_has_one_row_per_variant() {
        let ds = tiny_data(3.0);
        let variants: Vec<String> = ["full", "modality:audio"].map(String::from).to_vec();
        let r = run_ablation(&TrainConfig { epochs: 1, ..tiny_config() }, &ds, &variants, &[1, 2]).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.seeds, [1, 2]);
        assert!(r.rows.iter().all(|row| (0.0..=1.0).contains(&row.accuracy)));
    }
}
