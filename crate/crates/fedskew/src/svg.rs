//! Grouped bar charts: one group per partition, one bar per protocol, with
//! standard-deviation whiskers and drop-rate labels above 1%.

use std::fmt::Write as _;

use crate::experiment::{CellReport, ExperimentReport};

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#9c755f",
];
const BAR: f64 = 26.0;
const GROUP_GAP: f64 = 28.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 52.0;
const PLOT_H: f64 = 240.0;
const LEGEND_ROW: f64 = 18.0;

/// Drop rates strictly above this many percent are annotated.
pub const ANNOTATE_ABOVE: f64 = 1.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn y_of(acc: f64) -> f64 {
    TOP + PLOT_H * (1.0 - acc.clamp(0.0, 1.0))
}

/// Renders one figure as SVG 1.1. A pure function of the report.
pub fn render_figure(report: &ExperimentReport, figure: &str) -> String {
    let partitions: Vec<&str> = report
        .partitions
        .iter()
        .filter(|p| p.figure == figure)
        .map(|p| p.id.as_str())
        .collect();
    let mut protocols: Vec<&str> = Vec::new();
    for c in report.cells.iter().filter(|c| c.figure == figure) {
        if !protocols.contains(&c.protocol_id.as_str()) {
            protocols.push(&c.protocol_id);
        }
    }
    let group_w = BAR * protocols.len().max(1) as f64 + GROUP_GAP;
    let width = LEFT + RIGHT + group_w * partitions.len().max(1) as f64;
    let axis_y = TOP + PLOT_H;
    let height = axis_y + 40.0 + LEGEND_ROW * protocols.len() as f64 + 8.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{LEFT:.0}" y="20" font-size="14">{}</text>"#,
        escape(figure)
    );
    let note = match &report.reference {
        Some(_) => "bars: mean test accuracy, whiskers: std; labels: relative drop rate vs reference when above 1%",
        None => "bars: mean test accuracy, whiskers: std",
    };
    let _ = writeln!(
        s,
        r##"<text x="{LEFT:.0}" y="36" font-size="10" fill="#555">{note}</text>"##
    );

    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let y = y_of(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.0}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.0}" y="{:.2}" font-size="10" text-anchor="end">{v:.1}</text>"##,
            width - RIGHT,
            LEFT - 6.0,
            y + 3.5
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT:.0}" y1="{TOP:.0}" x2="{LEFT:.0}" y2="{axis_y:.0}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT:.0}" y1="{axis_y:.0}" x2="{:.2}" y2="{axis_y:.0}" stroke="black"/>"#,
        width - RIGHT
    );

    for (g, part) in partitions.iter().enumerate() {
        let x0 = LEFT + GROUP_GAP / 2.0 + g as f64 * group_w;
        for (b, proto) in protocols.iter().enumerate() {
            let cell = report
                .cells
                .iter()
                .find(|c| c.partition_id == *part && c.protocol_id == *proto);
            if let Some(cell) = cell {
                bar(
                    &mut s,
                    cell,
                    x0 + b as f64 * BAR,
                    PALETTE[b % PALETTE.len()],
                );
            }
        }
        let cx = x0 + BAR * protocols.len() as f64 / 2.0;
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.0}" font-size="11" text-anchor="middle">{}</text>"#,
            axis_y + 16.0,
            escape(part)
        );
    }

    for (b, proto) in protocols.iter().enumerate() {
        let y = axis_y + 32.0 + b as f64 * LEGEND_ROW;
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT:.0}" y="{y:.0}" width="12" height="12" fill="{}"/><text x="{:.0}" y="{:.0}" font-size="11">{}</text>"#,
            PALETTE[b % PALETTE.len()],
            LEFT + 18.0,
            y + 10.0,
            escape(proto)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn bar(s: &mut String, cell: &CellReport, x: f64, color: &str) {
    let Some(mean) = cell.mean_accuracy else {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="middle">n/a</text>"#,
            x + BAR / 2.0,
            TOP + PLOT_H - 4.0
        );
        return;
    };
    let top = y_of(mean);
    let _ = writeln!(
        s,
        r#"<rect class="bar" x="{:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{color}"><title>{}/{}: {mean:.4}</title></rect>"#,
        x + 2.0,
        BAR - 4.0,
        TOP + PLOT_H - top,
        escape(&cell.partition_id),
        escape(&cell.protocol_id)
    );
    let cx = x + BAR / 2.0;
    let mut label_y = top;
    if let Some(std) = cell.std_accuracy.filter(|s| *s > 0.0) {
        let (hi, lo) = (y_of(mean + std), y_of(mean - std));
        let _ = writeln!(
            s,
            r#"<path class="whisker" d="M{cx:.2} {hi:.2}V{lo:.2}M{:.2} {hi:.2}H{:.2}M{:.2} {lo:.2}H{:.2}" stroke="black" fill="none"/>"#,
            cx - 4.0,
            cx + 4.0,
            cx - 4.0,
            cx + 4.0
        );
        label_y = hi;
    }
    if let Some(d) = cell.drop_rate.filter(|d| *d > ANNOTATE_ABOVE) {
        let _ = writeln!(
            s,
            r#"<text class="drop" x="{cx:.2}" y="{:.2}" font-size="9" text-anchor="middle">{d:.1}%</text>"#,
            label_y - 4.0
        );
    }
}
