//! Plot-ready CSV emission for campaign results.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{categorize, mask_stats};
use crate::attack::CampaignResult;
use crate::instances::{LabeledInstance, SizeBounds};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("instance {0} is not in the dataset")]
    UnknownInstance(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PlotKind {
    Trajectories,
    MaskHeatmap,
    StatsBox,
    ProjectionMatrix,
}

impl PlotKind {
    pub fn name(self) -> &'static str {
        match self {
            PlotKind::Trajectories => "trajectories",
            PlotKind::MaskHeatmap => "mask_heatmap",
            PlotKind::StatsBox => "stats_box",
            PlotKind::ProjectionMatrix => "projection_matrix",
        }
    }

    /// `<campaign-id>.<kind>.csv`
    pub fn file_name(self, campaign_id: &str) -> String {
        format!("{campaign_id}.{}.csv", self.name())
    }
}

/// Formats `x` with 9 significant digits, shortest form.
pub fn format_float(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    rounded.to_string()
}

/// Writes one `kind` export. `instance` restricts trajectories, heatmap and
/// stats rows to a single instance.
pub fn export_plot_data(
    campaign: &CampaignResult,
    dataset: &[LabeledInstance],
    bounds: SizeBounds,
    kind: PlotKind,
    instance: Option<&str>,
    out: impl Write,
) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    let keep = |id: &str| instance.is_none_or(|i| i == id);
    match kind {
        PlotKind::Trajectories => {
            w.write_record(["instance", "run", "generation", "best_fitness"])?;
            for r in campaign.runs.iter().filter(|r| keep(&r.instance)) {
                for (g, f) in r.trajectory.iter().enumerate() {
                    w.write_record([r.instance.clone(), r.run.to_string(), g.to_string(), format_float(*f)])?;
                }
            }
        }
        PlotKind::MaskHeatmap => {
            let rows: Vec<_> = campaign.archive.journal().filter(|(i, _, _)| keep(i)).collect();
            let width = rows.iter().map(|(_, m, _)| m.len()).max().unwrap_or(0);
            let mut header = vec!["instance".to_string(), "mask_index".to_string()];
            header.extend((0..width).map(|j| format!("m{j}")));
            w.write_record(&header)?;
            let mut index: HashMap<&str, usize> = HashMap::new();
            for (id, mask, _) in rows {
                let k = index.entry(id).or_default();
                let mut rec = vec![id.to_string(), k.to_string()];
                rec.extend(mask.entries().iter().map(|e| e.to_string()));
                rec.resize(width + 2, String::new());
                w.write_record(&rec)?;
                *k += 1;
            }
        }
        PlotKind::StatsBox => {
            let items: HashMap<&str, &[u32]> = dataset.iter().map(|li| (li.id(), li.items())).collect();
            w.write_record([
                "instance",
                "mask_index",
                "fitness",
                "type",
                "sum_difference",
                "n_changes",
                "effective_changes",
                "longest_sequence",
                "longest_positive_sequence",
            ])?;
            let mut index: HashMap<&str, usize> = HashMap::new();
            for (id, mask, e) in campaign.archive.journal().filter(|(i, _, _)| keep(i)) {
                let orig = items.get(id).ok_or_else(|| ExportError::UnknownInstance(id.to_string()))?;
                let s = mask_stats(mask, orig, bounds);
                let k = index.entry(id).or_default();
                w.write_record([
                    id.to_string(),
                    k.to_string(),
                    format_float(e.fitness),
                    e.misclass_type.name().to_string(),
                    s.sum_difference.to_string(),
                    s.n_changes.to_string(),
                    s.effective_changes.to_string(),
                    s.longest_sequence.to_string(),
                    s.longest_positive_sequence.to_string(),
                ])?;
                *k += 1;
            }
        }
        PlotKind::ProjectionMatrix => {
            let table = categorize(campaign);
            let width = dataset.iter().map(|li| li.items().len()).max().unwrap_or(0);
            let mut header: Vec<String> = (0..width).map(|j| format!("x{j}")).collect();
            header.push("winner".into());
            header.push("category".into());
            w.write_record(&header)?;
            for li in dataset {
                let Some(cat) = table.category_of(li.id()) else { continue };
                let mut rec: Vec<String> = li.items().iter().map(|s| s.to_string()).collect();
                rec.resize(width, String::new());
                rec.push(li.winner.short_name().to_string());
                rec.push(cat.name().to_string());
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
