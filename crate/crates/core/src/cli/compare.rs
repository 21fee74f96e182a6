use crate::dataset::RoadFrame;
use crate::error::Result;
use crate::evaluation::{evaluate_frames, metrics_table, FnrMode, MetricsReport, TABLE_FUSION};
use crate::network::{build_model, FusionStrategy, NetConfig};
use crate::training::{train, TrainConfig, TrainLog};

#[derive(Debug, Clone)]
pub struct FusionRun {
    pub strategy: FusionStrategy,
    pub report: MetricsReport,
    pub log: TrainLog,
}

impl FusionRun {
    pub fn label(&self) -> &'static str {
        match self.strategy {
            FusionStrategy::Early => "Early Fusion",
            FusionStrategy::Late => "Late Fusion",
            FusionStrategy::Siamese => "Siamese structure",
        }
    }
}

/// Trains early, late and Siamese fusion with the same seed, schedule and
/// frames, and scores each on `val`. `net` supplies the shared network
/// settings; its strategy is replaced per run.
pub fn compare_fusion(
    train_frames: &[RoadFrame],
    val_frames: &[RoadFrame],
    net: &NetConfig,
    schedule: &TrainConfig,
    fnr_mode: FnrMode,
) -> Result<Vec<FusionRun>> {
    FusionStrategy::ALL
        .into_iter()
        .map(|strategy| {
            let mut model = build_model(&NetConfig { strategy, ..*net })?;
            let log = train(&mut model, train_frames, schedule, None)?;
            let report = evaluate_frames(&model, val_frames)?.report(fnr_mode);
            Ok(FusionRun { strategy, report, log })
        })
        .collect()
}

/// MaxF / PRE / REC / Accuracy, one row per strategy.
pub fn fusion_table(runs: &[FusionRun]) -> String {
    let rows: Vec<(String, MetricsReport)> = runs.iter().map(|r| (r.label().to_owned(), r.report)).collect();
    metrics_table("Fusion Strategy", &rows, TABLE_FUSION)
}
