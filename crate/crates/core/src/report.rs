//! Evaluation report files: classification report JSON, confusion-matrix
//! CSVs, label-distribution CSV and SVG charts. Every number comes from the
//! metrics and corpus modules.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{distribution_of, DistributionTable};
use crate::error::{Error, Result};
use crate::io;
use crate::label::{SentimentLabel, NUM_LABELS};
use crate::metrics::{classification_report, confusion_matrix, per_language_matrices, ClassReport, ConfusionMatrix, Outcome};

/// The fields of a predictions line that evaluation needs; other fields
/// (scores, member votes) are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub sample_id: String,
    pub language: String,
    #[serde(rename = "true", default)]
    pub true_label: Option<SentimentLabel>,
    pub predicted: SentimentLabel,
}

impl Outcome for OutcomeRow {
    fn sample_id(&self) -> &str {
        &self.sample_id
    }
    fn language(&self) -> &str {
        &self.language
    }
    fn true_label(&self) -> Option<SentimentLabel> {
        self.true_label
    }
    fn predicted(&self) -> SentimentLabel {
        self.predicted
    }
}

pub fn read_predictions(path: &Path) -> Result<Vec<OutcomeRow>> {
    let rows: Vec<OutcomeRow> = io::read_jsonl(path)?;
    if rows.is_empty() {
        return Err(Error::NoRows);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub overall: ConfusionMatrix,
    pub report: ClassReport,
    pub per_language: BTreeMap<String, ConfusionMatrix>,
    pub per_language_reports: BTreeMap<String, ClassReport>,
    /// Gold-label distribution: overall first, then per language.
    pub distribution: Vec<DistributionTable>,
}

pub fn build_report<R: Outcome>(rows: &[R]) -> Result<ReportBundle> {
    let overall = confusion_matrix(rows)?;
    let report = classification_report(&overall)?;
    let per_language = per_language_matrices(rows)?;
    let per_language_reports = per_language
        .iter()
        .map(|(lang, cm)| classification_report(cm).map(|r| (lang.clone(), r)))
        .collect::<Result<_>>()?;
    let distribution = distribution_of(
        rows.iter().map(|r| (r.language(), r.true_label().expect("checked by confusion_matrix"))),
        true,
    )?;
    Ok(ReportBundle { overall, report, per_language, per_language_reports, distribution })
}

pub const REPORT_JSON: &str = "report.json";
pub const LANGUAGE_REPORTS_JSON: &str = "report-by-language.json";
pub const OVERALL_MATRIX_CSV: &str = "confusion-overall.csv";
pub const DISTRIBUTION_CSV: &str = "distribution.csv";

pub fn language_matrix_csv(language: &str) -> String {
    format!("confusion-{language}.csv")
}

/// Write every report artifact into `out_dir`; returns the paths written.
pub fn write_report(bundle: &ReportBundle, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    let path = out_dir.join(REPORT_JSON);
    io::write_json(&path, &bundle.report)?;
    written.push(path);
    let path = out_dir.join(LANGUAGE_REPORTS_JSON);
    io::write_json(&path, &bundle.per_language_reports)?;
    written.push(path);

    let mut matrices = vec![(OVERALL_MATRIX_CSV.to_string(), "overall", &bundle.overall)];
    for (lang, cm) in &bundle.per_language {
        matrices.push((language_matrix_csv(lang), lang.as_str(), cm));
    }
    for (file, scope, cm) in matrices {
        let path = out_dir.join(&file);
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        cm.write_csv(f)?;
        written.push(path);
        let svg = out_dir.join(file.replace(".csv", ".svg"));
        plot_confusion(cm, &format!("Confusion matrix ({scope})"), &svg)?;
        written.push(svg);
    }

    let path = out_dir.join(DISTRIBUTION_CSV);
    write_distribution_csv(&bundle.distribution, &path)?;
    written.push(path);
    let svg = out_dir.join("distribution.svg");
    plot_distribution(&bundle.distribution, &svg)?;
    written.push(svg);
    Ok(written)
}

fn write_distribution_csv(tables: &[DistributionTable], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["scope".to_string()];
    header.extend(SentimentLabel::ALL.iter().map(|l| l.name().to_string()));
    header.extend(SentimentLabel::ALL.iter().map(|l| format!("{}_share", l.name())));
    w.write_record(&header)?;
    for t in tables {
        let mut row = vec![t.scope.clone()];
        row.extend(t.counts.iter().map(u64::to_string));
        row.extend(t.percentages.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const LABEL_COLORS: [RGBColor; NUM_LABELS] = [RGBColor(214, 69, 65), RGBColor(160, 160, 160), RGBColor(46, 139, 87)];

fn plot_error(e: impl std::fmt::Display) -> Error {
    Error::Malformed(format!("plot: {e}"))
}

/// Stacked label shares, one bar per scope (overall first).
pub fn plot_distribution(tables: &[DistributionTable], path: &Path) -> Result<()> {
    let width = 160 + 90 * tables.len() as u32;
    let root = SVGBackend::new(path, (width, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let scopes: Vec<String> = tables.iter().map(|t| t.scope.clone()).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption("Sentiment distribution", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(30)
        .y_label_area_size(44)
        .right_y_label_area_size(90)
        .build_cartesian_2d(0f64..tables.len() as f64, 0f64..1f64)
        .map_err(plot_error)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(tables.len() * 2 + 1)
        .x_label_formatter(&|x| {
            let x = *x;
            let i = x.floor() as usize;
            if (x - i as f64 - 0.5).abs() < 1e-6 {
                scopes.get(i).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc("share")
        .draw()
        .map_err(plot_error)?;
    for label in SentimentLabel::ALL {
        let color = LABEL_COLORS[label.ordinal()];
        chart
            .draw_series(tables.iter().enumerate().map(|(i, t)| {
                let below: f64 = t.percentages[..label.ordinal()].iter().sum();
                let x0 = i as f64 + 0.15;
                let x1 = i as f64 + 0.85;
                Rectangle::new([(x0, below), (x1, below + t.percentages[label.ordinal()])], color.filled())
            }))
            .map_err(plot_error)?
            .label(label.name())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::UpperRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_error)?;
    root.present().map_err(plot_error)
}

/// Heatmap shaded by row-normalized counts, with raw counts printed.
pub fn plot_confusion(cm: &ConfusionMatrix, title: &str, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, (460, 440)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0f64..3f64, 0f64..3f64)
        .map_err(plot_error)?;
    // Tick at the centre of cell `i` names ordinal `i` on x and `2 - i` on y.
    let name_at = |v: f64, flip: bool| {
        let i = v.floor() as usize;
        if (v - i as f64 - 0.5).abs() > 1e-6 || i >= NUM_LABELS {
            return String::new();
        }
        let ordinal = if flip { NUM_LABELS - 1 - i } else { i };
        SentimentLabel::ALL[ordinal].name().to_string()
    };
    chart
        .configure_mesh()
        .disable_mesh()
        .x_labels(7)
        .y_labels(7)
        .x_label_formatter(&|x| name_at(*x, false))
        .y_label_formatter(&|y| name_at(*y, true))
        .x_desc("predicted")
        .y_desc("true")
        .draw()
        .map_err(plot_error)?;
    let rows = cm.row_sums();
    let cells: Vec<(usize, usize)> = (0..NUM_LABELS).flat_map(|t| (0..NUM_LABELS).map(move |p| (t, p))).collect();
    chart
        .draw_series(cells.iter().map(|&(t, p)| {
            let share = if rows[t] == 0 { 0.0 } else { cm.counts[t][p] as f64 / rows[t] as f64 };
            let shade = (255.0 * (1.0 - 0.85 * share)) as u8;
            let y0 = (NUM_LABELS - 1 - t) as f64;
            Rectangle::new([(p as f64, y0), (p as f64 + 1.0, y0 + 1.0)], RGBColor(shade, shade, 255).filled())
        }))
        .map_err(plot_error)?;
    chart
        .draw_series(cells.iter().map(|&(t, p)| {
            let y = (NUM_LABELS - 1 - t) as f64 + 0.5;
            Text::new(cm.counts[t][p].to_string(), (p as f64 + 0.42, y), ("sans-serif", 16))
        }))
        .map_err(plot_error)?;
    root.present().map_err(plot_error)
}
