//! Standalone SVG plots of curve, loss-history and sweep reports.
//!
//! Output depends only on the input data, so plots are byte-stable.

use std::fmt::Write as _;
use std::path::Path;

use twostream::fusion::RatioSweepRow;
use twostream::segment::TrainHistory;

use crate::CliError;

const W: f64 = 480.0;
const H: f64 = 360.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x_max: f64,
    y_max: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + x / self.x_max * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - y / self.y_max * (H - TOP - BOTTOM)
    }

    fn axes(&self, s: &mut String, x_label: &str, y_label: &str, x_ticks: bool) {
        let (x0, y0) = (self.px(0.0), self.py(0.0));
        let _ = writeln!(
            s,
            r#"<path d="M{x0:.2},{:.2} V{y0:.2} H{:.2}" fill="none" stroke="black"/>"#,
            self.py(self.y_max),
            self.px(self.x_max)
        );
        for i in 0..=5 {
            let f = i as f64 / 5.0;
            let y = self.py(f * self.y_max);
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                x0 - 6.0,
                y + 4.0,
                tick(f * self.y_max)
            );
            if x_ticks {
                let x = self.px(f * self.x_max);
                let _ = writeln!(
                    s,
                    r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                    y0 + 16.0,
                    tick(f * self.x_max)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (x0 + self.px(self.x_max)) / 2.0,
            H - 16.0,
            escape(x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            (TOP + H - BOTTOM) / 2.0,
            (TOP + H - BOTTOM) / 2.0,
            escape(y_label)
        );
    }

    fn polyline(&self, s: &mut String, points: &[(f64, f64)], color: &str) {
        let pts: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
    }
}

fn tick(v: f64) -> String {
    let t = format!("{v:.3}");
    let t = t.trim_end_matches('0').trim_end_matches('.');
    if t.is_empty() || t == "-" {
        "0".into()
    } else {
        t.into()
    }
}

/// Two-column numeric CSV with a header line.
pub fn read_curve_csv(path: &Path) -> Result<(String, String, Vec<(f64, f64)>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head = lines
        .next()
        .ok_or_else(|| CliError::data(format!("{}: empty curve file", path.display())))?;
    let cols: Vec<&str> = head.split(',').map(str::trim).collect();
    if cols.len() != 2 {
        return Err(CliError::data(format!("{}: expected a two-column header", path.display())));
    }
    let mut points = Vec::new();
    for (n, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::data(format!("{}: line {}: {e}", path.display(), n + 2)))?;
        if vals.len() != 2 || vals.iter().any(|v| !v.is_finite()) {
            return Err(CliError::data(format!("{}: line {}: expected two numbers", path.display(), n + 2)));
        }
        points.push((vals[0], vals[1]));
    }
    if points.is_empty() {
        return Err(CliError::data(format!("{}: curve has no points", path.display())));
    }
    Ok((cols[0].to_string(), cols[1].to_string(), points))
}

pub fn curve_svg(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)], diagonal: bool) -> String {
    let f = Frame { x_max: 1.0, y_max: 1.0 };
    let mut s = header(title);
    f.axes(&mut s, x_label, y_label, true);
    if diagonal {
        f.polyline(&mut s, &[(0.0, 0.0), (1.0, 1.0)], "#bbbbbb");
    }
    f.polyline(&mut s, points, "#1f5fa8");
    s.push_str("</svg>\n");
    s
}

pub fn loss_svg(history: &TrainHistory) -> String {
    let n = history.epoch_loss.len();
    let y_max = history.epoch_loss.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let f = Frame {
        x_max: n.max(1) as f64,
        y_max,
    };
    let mut s = header("Training loss");
    f.axes(&mut s, "epoch", "mean weighted loss", true);
    let pts: Vec<(f64, f64)> = history
        .epoch_loss
        .iter()
        .enumerate()
        .map(|(i, &l)| ((i + 1) as f64, l))
        .collect();
    f.polyline(&mut s, &pts, "#b03a2e");
    s.push_str("</svg>\n");
    s
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<RatioSweepRow>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || CliError::data(format!("{}: line {}: malformed sweep row", path.display(), n + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        rows.push(RatioSweepRow {
            hybrid_w: f[0].parse().map_err(|_| bad())?,
            kernel: f[1].parse().map_err(|_| bad())?,
            validation_accuracy: f[2].parse().map_err(|_| bad())?,
            test_accuracy: if f[3].is_empty() {
                None
            } else {
                Some(f[3].parse().map_err(|_| bad())?)
            },
        });
    }
    if rows.is_empty() {
        return Err(CliError::data(format!("{}: sweep table has no rows", path.display())));
    }
    Ok(rows)
}

/// One bar per row, height = validation accuracy, labeled by its ratio (and
/// kernel when the table mixes kernels).
pub fn sweep_svg(rows: &[RatioSweepRow]) -> String {
    let mixed = rows.iter().any(|r| r.kernel != rows[0].kernel);
    let f = Frame { x_max: 1.0, y_max: 1.0 };
    let mut s = header("Validation accuracy by hybrid ratio");
    f.axes(&mut s, "CLAHE-stream weight", "accuracy", false);
    let slot = (W - LEFT - RIGHT) / rows.len() as f64;
    for (i, r) in rows.iter().enumerate() {
        let x = LEFT + slot * i as f64 + slot * 0.15;
        let top = f.py(r.validation_accuracy.clamp(0.0, 1.0));
        let _ = writeln!(
            s,
            r##"<rect class="bar" x="{x:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="#2e8b57"/>"##,
            slot * 0.7,
            f.py(0.0) - top
        );
        let label = if mixed {
            format!("{} {}", r.hybrid_w, r.kernel.name())
        } else {
            format!("{}", r.hybrid_w)
        };
        let _ = writeln!(
            s,
            r#"<text class="label" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            f.py(0.0) + 16.0,
            escape(&label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use twostream::svm::KernelKind;

    #[test]
    fn perfect_roc_passes_through_top_left() {
        let svg = curve_svg("ROC", "fpr", "tpr", &[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)], true);
        let f = Frame { x_max: 1.0, y_max: 1.0 };
        let corner = format!("{:.2},{:.2}", f.px(0.0), f.py(1.0));
        assert!(svg.contains(&corner));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn five_rows_give_five_labeled_bars() {
        let rows: Vec<RatioSweepRow> = [0.0, 0.4, 0.5, 0.6, 1.0]
            .iter()
            .map(|&w| RatioSweepRow {
                hybrid_w: w,
                kernel: KernelKind::Polynomial,
                validation_accuracy: 0.5 + w / 4.0,
                test_accuracy: None,
            })
            .collect();
        let svg = sweep_svg(&rows);
        assert_eq!(svg.matches(r#"class="bar""#).count(), 5);
        for w in ["0", "0.4", "0.5", "0.6", "1"] {
            assert!(svg.contains(&format!(">{w}</text>")), "{w}");
        }
    }

    #[test]
    fn ticks_are_trimmed() {
        assert_eq!(tick(0.0), "0");
        assert_eq!(tick(0.4), "0.4");
        assert_eq!(tick(1.0), "1");
        assert_eq!(tick(12.5), "12.5");
    }
}
