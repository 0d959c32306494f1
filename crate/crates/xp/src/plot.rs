//! SVG line plots of the experiment CSVs.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Result, XpError};

/// Which columns to draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x: String,
    pub series: Vec<String>,
    /// `(low, high)` columns drawn as error bars on the first series.
    pub error_bars: Option<(String, String)>,
}

impl PlotSpec {
    pub fn fig_a() -> Self {
        PlotSpec {
            title: "profit vs battery capacity".into(),
            x: "v_max".into(),
            series: vec!["mean_profit".into()],
            error_bars: Some(("min_profit".into(), "max_profit".into())),
        }
    }

    pub fn fig_b() -> Self {
        PlotSpec {
            title: "rebalancing vehicles per trip".into(),
            x: "v_max".into(),
            series: vec!["rebalancers_per_trip".into()],
            error_bars: None,
        }
    }

    pub fn fig_c() -> Self {
        PlotSpec {
            title: "cost vs share charged at regular nodes".into(),
            x: "n".into(),
            series: vec!["approx_cost".into(), "exact_cost".into()],
            error_bars: None,
        }
    }

    /// Picks a preset from the CSV's header.
    pub fn for_header(header: &[String]) -> Option<Self> {
        let has = |c: &str| header.iter().any(|h| h == c);
        if has("mean_profit") {
            Some(Self::fig_a())
        } else if has("rebalancers_per_trip") {
            Some(Self::fig_b())
        } else if has("approx_cost") {
            Some(Self::fig_c())
        } else if has("gamma") && has("mean_cost") {
            Some(PlotSpec {
                title: "cost vs gamma".into(),
                x: "gamma".into(),
                series: vec!["mean_cost".into()],
                error_bars: None,
            })
        } else {
            None
        }
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn column(&self, name: &str, path: &Path) -> Result<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name).ok_or_else(|| malformed(path, format!("missing column {name}")))?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> XpError {
    XpError::MalformedCsv { path: path.display().to_string(), reason: reason.into() }
}

fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(malformed(path, "no header"));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(path, e.to_string()))?;
        let row = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| malformed(path, format!("row {}: {e}", line + 1)))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(malformed(path, "no data rows"));
    }
    Ok(Table { header, rows })
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9 * hi.abs().max(1.0));
    (lo - pad, hi + pad)
}

/// Renders `csv_path` to `svg_path`. With `spec = None` the preset is chosen
/// from the header.
pub fn emit_plot(csv_path: &Path, svg_path: &Path, spec: Option<&PlotSpec>) -> Result<PathBuf> {
    let table = read_table(csv_path)?;
    let spec = match spec {
        Some(s) => s.clone(),
        None => PlotSpec::for_header(&table.header)
            .ok_or_else(|| malformed(csv_path, "no plot preset for these columns"))?,
    };
    let xs = table.column(&spec.x, csv_path)?;
    let series = spec
        .series
        .iter()
        .map(|s| Ok((s.clone(), table.column(s, csv_path)?)))
        .collect::<Result<Vec<_>>>()?;
    let bars = match &spec.error_bars {
        Some((lo, hi)) => Some((table.column(lo, csv_path)?, table.column(hi, csv_path)?)),
        None => None,
    };

    let (x0, x1) = bounds(xs.iter().copied());
    let mut ys: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    if let Some((lo, hi)) = &bars {
        ys.extend(lo.iter().chain(hi).copied());
    }
    let (y0, y1) = bounds(ys.into_iter());

    let plot_err = |e: &dyn std::fmt::Display| XpError::Plot(e.to_string());
    {
        let root = SVGBackend::new(svg_path, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(&e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(&spec.title, ("sans-serif", 20))
            .margin(20)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(|e| plot_err(&e))?;
        chart
            .configure_mesh()
            .x_desc(spec.x.as_str())
            .draw()
            .map_err(|e| plot_err(&e))?;
        let palette = [BLUE, RED, GREEN, MAGENTA];
        for (k, (name, ys)) in series.iter().enumerate() {
            let color = palette[k % palette.len()];
            let points: Vec<(f64, f64)> =
                xs.iter().zip(ys).filter(|(_, y)| y.is_finite()).map(|(&x, &y)| (x, y)).collect();
            chart
                .draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))
                .map_err(|e| plot_err(&e))?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
            chart
                .draw_series(points.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(|e| plot_err(&e))?;
        }
        if let Some((lo, hi)) = &bars {
            let segments = xs.iter().zip(lo.iter().zip(hi)).map(|(&x, (&l, &h))| {
                PathElement::new(vec![(x, l), (x, h)], BLACK.stroke_width(1))
            });
            chart.draw_series(segments).map_err(|e| plot_err(&e))?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(&e))?;
        root.present().map_err(|e| plot_err(&e))?;
    }
    Ok(svg_path.to_path_buf())
}
