use std::path::Path;

use plotters::prelude::*;
use sfda_core::metrics::reference::PublishedRow;
use sfda_core::metrics::EvalReport;
use sfda_core::pipeline::AblationTable;

use crate::CliError;

const PALETTE: [RGBColor; 4] = [RGBColor(66, 114, 196), RGBColor(237, 125, 49), RGBColor(112, 173, 71), RGBColor(165, 165, 165)];

fn err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("plot: {e}"))
}

/// Grouped bars: one group per category, one bar per series.
fn grouped<DB: DrawingBackend>(
    area: &DrawingArea<DB, plotters::coord::Shift>,
    title: &str,
    categories: &[String],
    series: &[(&str, Vec<f64>)],
    y_range: (f64, f64),
) -> Result<(), CliError>
where
    DB::ErrorType: 'static,
{
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(45)
        .build_cartesian_2d(0f64..categories.len() as f64, y_range.0..y_range.1)
        .map_err(err)?;
    let labels = categories.to_vec();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(categories.len() * 2 + 1)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            if (x - i as f64 - 0.5).abs() < 0.26 {
                labels.get(i).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .draw()
        .map_err(err)?;
    let width = 0.8 / series.len().max(1) as f64;
    for (k, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        chart
            .draw_series(values.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(i, &v)| {
                let x0 = i as f64 + 0.1 + k as f64 * width;
                Rectangle::new([(x0, y_range.0), (x0 + width * 0.95, v)], color.filled())
            }))
            .map_err(err)?
            .label(*name)
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(err)?;
    Ok(())
}

/// Run reports next to the published full-scale numbers (static references,
/// labelled as such).
pub fn comparison(path: &Path, reports: &[(String, EvalReport)], reference: &str, published: &[PublishedRow]) -> Result<(), CliError> {
    let root = SVGBackend::new(path, (1200, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let (left, right) = root.split_horizontally(600);
    let cats: Vec<String> = reports.iter().map(|(l, _)| l.clone()).collect();
    let dice = |c: usize| reports.iter().map(|(_, r)| r.classes.get(c).map_or(f64::NAN, |s| s.dice_mean)).collect::<Vec<_>>();
    grouped(&left, "This run (desk scale): Dice ↑", &cats, &[("disc", dice(0)), ("cup", dice(1))], (0.0, 100.0))?;
    let cats: Vec<String> = published.iter().map(|r| r.method.to_string()).collect();
    grouped(
        &right,
        &format!("Published reference, {reference} (not computed here)"),
        &cats,
        &[("disc", published.iter().map(|r| r.disc_dice).collect()), ("cup", published.iter().map(|r| r.cup_dice).collect())],
        (50.0, 100.0),
    )?;
    root.present().map_err(err)?;
    Ok(())
}

pub fn ablation(path: &Path, table: &AblationTable) -> Result<(), CliError> {
    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut cats = vec!["Source only".to_string()];
    cats.extend(table.rows.iter().map(|r| r.label.clone()));
    let mut mean = vec![table.source_only_dice];
    mean.extend(table.rows.iter().map(|r| r.mean_dice));
    let title = if table.kind == "sigma" { "Unreliable-set ratio σ: mean Dice" } else { "Components: mean Dice" };
    grouped(&root, title, &cats, &[("mean Dice", mean)], (0.0, 100.0))?;
    root.present().map_err(err)?;
    Ok(())
}
