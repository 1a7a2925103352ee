//! Single-file SVG line charts of i_max and P_max versus mission time,
//! one series per horizon. Generated from the same data as the CSV; the
//! CSV remains the contract.

use std::fmt::Write as _;
use std::path::Path;

use powercap::mission::{Method, MissionRecord};
use powercap::Result;

use crate::csvout::horizon_token;

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

struct Panel {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Panel {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let px = self.x0 + (x - self.x_min) / (self.x_max - self.x_min) * self.w;
        let py = self.y0 + self.h - (y - self.y_min) / (self.y_max - self.y_min) * self.h;
        (px, py)
    }

    fn frame_and_ticks(&self, svg: &mut String, x_label: &str, y_label: &str) {
        let _ = writeln!(
            svg,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#333" stroke-width="1"/>"#,
            self.x0, self.y0, self.w, self.h
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let x = self.x_min + f * (self.x_max - self.x_min);
            let y = self.y_min + f * (self.y_max - self.y_min);
            let (px, _) = self.map(x, self.y_min);
            let (_, py) = self.map(self.x_min, y);
            let _ = writeln!(
                svg,
                r##"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="#ccc" stroke-width="0.5"/>
<text x="{px:.1}" y="{:.1}" font-size="10" text-anchor="middle" fill="#333">{x:.0}</text>"##,
                self.y0,
                self.y0 + self.h,
                self.y0 + self.h + 14.0
            );
            let _ = writeln!(
                svg,
                r##"<line x1="{:.1}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ccc" stroke-width="0.5"/>
<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end" fill="#333">{y:.1}</text>"##,
                self.x0,
                self.x0 + self.w,
                self.x0 - 6.0,
                py + 3.0
            );
        }
        let _ = writeln!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle" fill="#000">{x_label}</text>"##,
            self.x0 + self.w / 2.0,
            self.y0 + self.h + 30.0
        );
        let _ = writeln!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle" fill="#000" transform="rotate(-90 {:.1} {:.1})">{y_label}</text>"##,
            self.x0 - 42.0,
            self.y0 + self.h / 2.0,
            self.x0 - 42.0,
            self.y0 + self.h / 2.0
        );
    }

    fn polyline(&self, svg: &mut String, points: &[(f64, f64)], color: &str) {
        if points.is_empty() {
            return;
        }
        let mut d = String::new();
        for (k, &(x, y)) in points.iter().enumerate() {
            let (px, py) = self.map(x, y.clamp(self.y_min, self.y_max));
            let _ = write!(d, "{}{px:.1},{py:.1}", if k == 0 { "" } else { " " });
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{d}" fill="none" stroke="{color}" stroke-width="1.4"/>"#
        );
    }
}

/// Two stacked panels (current limit and power limit over mission time) for
/// one method's series.
pub fn write_mission_chart(
    records: &[MissionRecord],
    method: Method,
    path: &Path,
) -> Result<()> {
    let horizons: Vec<f64> = records
        .first()
        .map(|r| {
            r.searches
                .iter()
                .filter(|s| s.method == method)
                .map(|s| s.h_s)
                .collect()
        })
        .unwrap_or_default();

    let t_max = records.last().map_or(1.0, |r| r.time_s.max(1.0));
    let mut i_hi: f64 = 1.0;
    let mut p_hi: f64 = 1.0;
    for r in records {
        for s in r.searches.iter().filter(|s| s.method == method) {
            i_hi = i_hi.max(s.result.i_max);
            p_hi = p_hi.max(s.result.p_max);
        }
    }

    let width = 760.0;
    let top = Panel {
        x0: 70.0,
        y0: 30.0,
        w: width - 100.0,
        h: 200.0,
        x_min: 0.0,
        x_max: t_max,
        y_min: 0.0,
        y_max: i_hi * 1.05,
    };
    let bottom = Panel {
        x0: 70.0,
        y0: 300.0,
        w: width - 100.0,
        h: 200.0,
        x_min: 0.0,
        x_max: t_max,
        y_min: 0.0,
        y_max: p_hi * 1.05,
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="570" viewBox="0 0 {width} 570">
<rect width="100%" height="100%" fill="white"/>"#
    );
    top.frame_and_ticks(&mut svg, "mission time [s]", "i_max [A]");
    bottom.frame_and_ticks(&mut svg, "mission time [s]", "P_max [W]");

    for (k, &h) in horizons.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let series_i: Vec<(f64, f64)> = records
            .iter()
            .flat_map(|r| {
                r.searches
                    .iter()
                    .filter(|s| s.method == method && s.h_s == h)
                    .map(|s| (r.time_s, s.result.i_max))
            })
            .collect();
        let series_p: Vec<(f64, f64)> = records
            .iter()
            .flat_map(|r| {
                r.searches
                    .iter()
                    .filter(|s| s.method == method && s.h_s == h)
                    .map(|s| (r.time_s, s.result.p_max))
            })
            .collect();
        top.polyline(&mut svg, &series_i, color);
        bottom.polyline(&mut svg, &series_p, color);
        let _ = writeln!(
            svg,
            r##"<rect x="{:.1}" y="{:.1}" width="14" height="3" fill="{color}"/>
<text x="{:.1}" y="{:.1}" font-size="10" fill="#000">H = {}</text>"##,
            90.0 + 90.0 * k as f64,
            540.0,
            108.0 + 90.0 * k as f64,
            544.0,
            horizon_token(h)
        );
    }
    let _ = writeln!(svg, "</svg>");
    std::fs::write(path, svg)?;
    Ok(())
}
