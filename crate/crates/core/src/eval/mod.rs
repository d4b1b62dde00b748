//! Re-generation evaluation: TPP, aligned LCP profiles, entropy, random
//! baselines, Mann-Whitney significance and CSV export.

mod metrics;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{
    entropy, lcp_profile, mann_whitney_u, random_baseline, tpp, Entropy, MannWhitney,
};

use crate::perception::{PerceptionError, TokenSequence};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sequence lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("alphabet sizes differ: {left} vs {right}")]
    AlphabetMismatch { left: usize, right: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("label {id} outside alphabet of size {k}")]
    LabelOutOfRange { id: usize, k: usize },
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Perception(#[from] PerceptionError),
}

/// Anything that can produce a response sequence for a guide sequence.
pub trait Responder {
    fn respond(
        &self,
        guide: &TokenSequence,
        allowed: Option<&BTreeSet<usize>>,
        top_p: f64,
        seed: u64,
    ) -> Result<TokenSequence, EvalError>;
}

/// The four sequence sources scored per item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    Model,
    Random,
    ModelConstrained,
    RandomConstrained,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Model,
        Mode::Random,
        Mode::ModelConstrained,
        Mode::RandomConstrained,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Model => "model",
            Mode::Random => "random",
            Mode::ModelConstrained => "model_constrained",
            Mode::RandomConstrained => "random_constrained",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// `{segment duration}s_A{alphabet size}`, e.g. `0.25s_A16`.
pub fn config_name(segment_ms: u32, k: usize) -> String {
    format!("{}s_A{}", segment_ms as f64 / 1000.0, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigMeta {
    pub segment_ms: u32,
    pub k: usize,
    pub top_p: f64,
    pub constrained: bool,
}

impl ConfigMeta {
    pub fn name(&self) -> String {
        config_name(self.segment_ms, self.k)
    }
}

/// One test pair: the guide (stem A) and the reference response (stem B).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenItem {
    pub id: String,
    pub guide: TokenSequence,
    pub target: TokenSequence,
}

/// Generated sequences for one item, one per [`Mode`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemPredictions {
    pub id: String,
    pub target: TokenSequence,
    pub predictions: Vec<(Mode, TokenSequence)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemScores {
    pub id: String,
    pub tpp: [f64; 4],
    pub entropy: [Entropy; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LcpRow {
    pub position: usize,
    pub mean: f64,
    pub std: f64,
    pub max: usize,
    pub random_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Significance {
    /// Model mode compared against its random counterpart.
    pub mode: Mode,
    pub u: f64,
    pub p: f64,
}

/// Scores of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub meta: ConfigMeta,
    pub items: Vec<ItemScores>,
    /// Per-position LCP of the constrained model against the reference.
    pub lcp: Vec<LcpRow>,
    pub significance: Vec<Significance>,
}

impl EvalReport {
    pub fn tpp_values(&self, mode: Mode) -> Vec<f64> {
        self.items.iter().map(|i| i.tpp[mode.index()]).collect()
    }

    pub fn mean_tpp(&self, mode: Mode) -> f64 {
        let v = self.tpp_values(mode);
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    pub fn significance(&self, mode: Mode) -> Option<&Significance> {
        self.significance.iter().find(|s| s.mode == mode)
    }
}

/// Derives a per-item, per-mode seed so items are independent of evaluation order.
pub fn item_seed(base: u64, item: usize, mode: Mode) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((item as u64) << 8)
        .wrapping_add(mode.index() as u64)
}

/// Generates the four prediction sequences of every item. The constraint set
/// is the label set of the item's reference sequence.
pub fn generate_predictions<R: Responder + Sync + ?Sized>(
    responder: &R,
    items: &[RegenItem],
    top_p: f64,
    seed: u64,
) -> Result<Vec<ItemPredictions>, EvalError> {
    items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let k = item.target.k();
            let n = item.target.len();
            let labels: BTreeSet<usize> = item.target.ids().iter().copied().collect();
            let predictions = vec![
                (
                    Mode::Model,
                    responder.respond(&item.guide, None, top_p, item_seed(seed, i, Mode::Model))?,
                ),
                (
                    Mode::Random,
                    random_baseline(n, k, None, item_seed(seed, i, Mode::Random))?,
                ),
                (
                    Mode::ModelConstrained,
                    responder.respond(
                        &item.guide,
                        Some(&labels),
                        top_p,
                        item_seed(seed, i, Mode::ModelConstrained),
                    )?,
                ),
                (
                    Mode::RandomConstrained,
                    random_baseline(
                        n,
                        k,
                        Some(&labels),
                        item_seed(seed, i, Mode::RandomConstrained),
                    )?,
                ),
            ];
            Ok(ItemPredictions {
                id: item.id.clone(),
                target: item.target.clone(),
                predictions,
            })
        })
        .collect()
}

fn prediction(item: &ItemPredictions, mode: Mode) -> Result<&TokenSequence, EvalError> {
    item.predictions
        .iter()
        .find(|(m, _)| *m == mode)
        .map(|(_, s)| s)
        .ok_or(EvalError::Empty("prediction for mode"))
}

/// Scores already generated predictions.
pub fn score_predictions(
    meta: ConfigMeta,
    predictions: &[ItemPredictions],
) -> Result<EvalReport, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Empty("test set"));
    }
    let mut items = Vec::with_capacity(predictions.len());
    let mut model_lcp = Vec::new();
    let mut random_lcp = Vec::new();
    for item in predictions {
        let mut tpps = [0.0; 4];
        let mut ents = [Entropy {
            bits: 0.0,
            normalized: 0.0,
        }; 4];
        for mode in Mode::ALL {
            let pred = prediction(item, mode)?;
            tpps[mode.index()] = tpp(pred, &item.target)?;
            ents[mode.index()] = entropy(pred)?;
        }
        model_lcp.push(lcp_profile(
            prediction(item, Mode::ModelConstrained)?,
            &item.target,
        )?);
        random_lcp.push(lcp_profile(
            prediction(item, Mode::RandomConstrained)?,
            &item.target,
        )?);
        items.push(ItemScores {
            id: item.id.clone(),
            tpp: tpps,
            entropy: ents,
        });
    }
    let lcp = lcp_rows(&model_lcp, &random_lcp);
    let mut significance = Vec::new();
    for (model, random) in [
        (Mode::Model, Mode::Random),
        (Mode::ModelConstrained, Mode::RandomConstrained),
    ] {
        let a: Vec<f64> = items.iter().map(|i| i.tpp[model.index()]).collect();
        let b: Vec<f64> = items.iter().map(|i| i.tpp[random.index()]).collect();
        let mw = mann_whitney_u(&a, &b)?;
        significance.push(Significance {
            mode: model,
            u: mw.u,
            p: mw.p,
        });
    }
    Ok(EvalReport {
        meta,
        items,
        lcp,
        significance,
    })
}

fn lcp_rows(model: &[Vec<usize>], random: &[Vec<usize>]) -> Vec<LcpRow> {
    let longest = model.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .map(|x| {
            let vals: Vec<f64> = model
                .iter()
                .filter_map(|p| p.get(x))
                .map(|&v| v as f64)
                .collect();
            let rnd: Vec<f64> = random
                .iter()
                .filter_map(|p| p.get(x))
                .map(|&v| v as f64)
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let max = model
                .iter()
                .filter(|p| p.len() > x)
                .map(|p| p.len() - x)
                .max()
                .unwrap_or(0);
            LcpRow {
                position: x,
                mean,
                std,
                max,
                random_mean: rnd.iter().sum::<f64>() / rnd.len().max(1) as f64,
            }
        })
        .collect()
}

/// Full re-generation protocol for one configuration.
pub fn evaluate_regeneration<R: Responder + Sync + ?Sized>(
    responder: &R,
    items: &[RegenItem],
    meta: ConfigMeta,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let preds = generate_predictions(responder, items, meta.top_p, seed)?;
    score_predictions(meta, &preds)
}

pub const TPP_HEADER: &str = "config,item,mode,value";
pub const LCP_HEADER: &str = "config,position,mean,std,max,random_mean";
pub const ENTROPY_HEADER: &str = "config,item,mode,bits,normalized";
pub const SIGNIFICANCE_HEADER: &str = "config,mode,U,p";

/// CSV bodies keyed by file name.
pub fn report_csvs(reports: &[EvalReport]) -> Vec<(&'static str, String)> {
    let mut tpp_csv = format!("{TPP_HEADER}\n");
    let mut lcp_csv = format!("{LCP_HEADER}\n");
    let mut ent_csv = format!("{ENTROPY_HEADER}\n");
    let mut sig_csv = format!("{SIGNIFICANCE_HEADER}\n");
    for r in reports {
        let name = r.meta.name();
        for item in &r.items {
            for mode in Mode::ALL {
                let _ = writeln!(
                    tpp_csv,
                    "{name},{},{},{}",
                    item.id,
                    mode.as_str(),
                    item.tpp[mode.index()]
                );
                let e = item.entropy[mode.index()];
                let _ = writeln!(
                    ent_csv,
                    "{name},{},{},{},{}",
                    item.id,
                    mode.as_str(),
                    e.bits,
                    e.normalized
                );
            }
        }
        for row in &r.lcp {
            let _ = writeln!(
                lcp_csv,
                "{name},{},{},{},{},{}",
                row.position, row.mean, row.std, row.max, row.random_mean
            );
        }
        for s in &r.significance {
            let _ = writeln!(sig_csv, "{name},{},{},{}", s.mode.as_str(), s.u, s.p);
        }
    }
    vec![
        ("tpp.csv", tpp_csv),
        ("lcp.csv", lcp_csv),
        ("entropy.csv", ent_csv),
        ("significance.csv", sig_csv),
    ]
}

pub fn write_reports(dir: impl AsRef<Path>, reports: &[EvalReport]) -> Result<(), EvalError> {
    let dir = dir.as_ref();
    let io = |path: &Path, source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    for (name, body) in report_csvs(reports) {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| io(&path, e))?;
    }
    Ok(())
}
