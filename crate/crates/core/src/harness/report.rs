//! Metric tables and the accuracy-versus-latent-count chart.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::evaluate::MetricsRow;
use super::HarnessError;

pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record([
        "run_id",
        "stage",
        "k_test",
        "accuracy",
        "lookup_accuracy",
        "count_accuracy",
        "samples",
        "truncated",
        "wall_clock_s",
    ])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?)
}

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line chart of accuracy against `k_test`, one series per `(run_id, stage)`,
/// with an optional dashed horizontal baseline.
pub fn render_svg(rows: &[MetricsRow], baseline: Option<f64>) -> String {
    let mut series: BTreeMap<(String, String), Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        series
            .entry((r.run_id.clone(), r.stage.clone()))
            .or_default()
            .push((r.k_test, r.accuracy));
    }
    let k_max = rows.iter().map(|r| r.k_test).max().unwrap_or(0).max(1) as f64;
    let x = |k: f64| MARGIN + k / k_max * (WIDTH - 2.0 * MARGIN);
    let y = |a: f64| HEIGHT - MARGIN - a.clamp(0.0, 1.0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, x1, y0, y1) = (x(0.0), x(k_max), y(0.0), y(1.0));
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let a = i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{a:.2}</text>"#,
            x0 - 4.0,
            y(a) + 4.0
        );
    }
    let mut ks: Vec<usize> = rows.iter().map(|r| r.k_test).collect();
    ks.sort_unstable();
    ks.dedup();
    for k in ks {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{k}</text>"#,
            x(k as f64),
            y0 + 14.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">latent slots at test time</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">accuracy</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    if let Some(b) = baseline {
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{yb}" x2="{x1}" y2="{yb}" stroke="#555" stroke-dasharray="6 4"/>"##,
            yb = y(b)
        );
    }
    for (i, ((run, stage), mut pts)) in series.into_iter().enumerate() {
        pts.sort_by_key(|p| p.0);
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(k, a)| format!("{:.1},{:.1}", x(k as f64), y(a)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for &(k, a) in &pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                x(k as f64),
                y(a)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{run} {stage}</text>"#,
            x1 - 100.0,
            y1 + 14.0 * (i as f64 + 1.0)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<name>.csv` and `<name>.svg` into `dir`.
pub fn emit_report(rows: &[MetricsRow], dir: &Path, name: &str, baseline: Option<f64>) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    write_metrics(rows, &dir.join(format!("{name}.csv")))?;
    fs::write(dir.join(format!("{name}.svg")), render_svg(rows, baseline))?;
    Ok(())
}
