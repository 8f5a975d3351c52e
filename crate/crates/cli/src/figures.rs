//! Figure data emission: distribution (violin-ready long form), seed-paired
//! slope data, and the energy-delay trade-off table, plus best-effort SVG
//! renderings. The CSVs are the contract; the charts are convenience.

use std::collections::BTreeSet;
use std::path::Path;

use allocsim_core::metrics::{self, RunMetrics, METRIC_NAMES};
use allocsim_core::BidderKind;

use crate::CliError;

pub fn distribution_csv(runs: &[RunMetrics]) -> String {
    let mut out = String::from("scenario,bidder,metric,seed,value\n");
    for r in runs {
        for (name, value) in METRIC_NAMES.iter().zip(r.metric_values()) {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.scenario, r.bidder, name, r.seed, value
            ));
        }
    }
    out
}

/// Per-seed (heuristic_b2, ranking) value pairs per metric.
pub fn slope_csv(runs: &[RunMetrics]) -> String {
    let mut out = String::from("scenario,metric,seed,heuristic,ranking\n");
    for scenario in scenarios_of(runs) {
        let h: Vec<&RunMetrics> = select(runs, &scenario, BidderKind::HeuristicB2.label());
        let r: Vec<&RunMetrics> = select(runs, &scenario, BidderKind::Ranking.label());
        for rh in &h {
            if let Some(rr) = r.iter().find(|x| x.seed == rh.seed) {
                let hv = rh.metric_values();
                let rv = rr.metric_values();
                for (i, name) in METRIC_NAMES.iter().enumerate() {
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        scenario, name, rh.seed, hv[i], rv[i]
                    ));
                }
            }
        }
    }
    out
}

/// Mean energy vs mean delay per (scenario, bidder).
pub fn tradeoff_csv(runs: &[RunMetrics]) -> Result<String, CliError> {
    let rows = metrics::aggregate(runs).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut out = String::from("scenario,bidder,delay_mean,energy_mean\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.scenario, r.bidder, r.delay_mean, r.energy_mean
        ));
    }
    Ok(out)
}

fn scenarios_of(runs: &[RunMetrics]) -> Vec<String> {
    let set: BTreeSet<&str> = runs.iter().map(|r| r.scenario.as_str()).collect();
    set.into_iter().map(String::from).collect()
}

fn bidders_of(runs: &[RunMetrics]) -> Vec<String> {
    let set: BTreeSet<&str> = runs.iter().map(|r| r.bidder.as_str()).collect();
    set.into_iter().map(String::from).collect()
}

fn select<'a>(runs: &'a [RunMetrics], scenario: &str, bidder: &str) -> Vec<&'a RunMetrics> {
    runs.iter()
        .filter(|r| r.scenario == scenario && r.bidder == bidder)
        .collect()
}

/// Writes the three figure CSVs and, optionally, the SVG charts. Returns the
/// file names written.
pub fn emit_figures(
    runs: &[RunMetrics],
    out_dir: &Path,
    charts: bool,
) -> Result<Vec<String>, CliError> {
    let mut files = Vec::new();
    let mut write = |name: String, contents: String| -> Result<(), CliError> {
        std::fs::write(out_dir.join(&name), contents)
            .map_err(|e| CliError::Runtime(format!("writing {name}: {e}")))?;
        files.push(name);
        Ok(())
    };

    write("distribution.csv".into(), distribution_csv(runs))?;
    write("slope.csv".into(), slope_csv(runs))?;
    write("tradeoff.csv".into(), tradeoff_csv(runs)?)?;

    if charts {
        for scenario in scenarios_of(runs) {
            write(
                format!("distribution_{scenario}.svg"),
                distribution_chart(runs, &scenario),
            )?;
            let slope = slope_chart(runs, &scenario);
            if let Some(svg) = slope {
                write(format!("slope_{scenario}.svg"), svg)?;
            }
        }
        write("tradeoff.svg".into(), tradeoff_chart(runs)?)?;
    }
    Ok(files)
}

// ---- SVG helpers ----------------------------------------------------------

struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            body: String::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64, opacity: f64) {
        self.body.push_str(&format!(
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{stroke}\" stroke-width=\"{width}\" stroke-opacity=\"{opacity}\"/>\n"
        ));
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        self.body.push_str(&format!(
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\" stroke=\"#333\" stroke-width=\"1\"/>\n"
        ));
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        self.body.push_str(&format!(
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r}\" fill=\"{fill}\"/>\n"
        ));
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        self.body.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"{size}\" font-family=\"sans-serif\" text-anchor=\"{anchor}\">{s}</text>\n"
        ));
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.width, self.height, self.width, self.height, self.body
        )
    }
}

struct Scale {
    lo: f64,
    hi: f64,
    top: f64,
    bottom: f64,
}

impl Scale {
    fn fit(values: &[f64], top: f64, bottom: f64) -> Self {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pad = ((hi - lo) * 0.08).max(1e-9);
        Self {
            lo: lo - pad,
            hi: hi + pad,
            top,
            bottom,
        }
    }

    fn y(&self, v: f64) -> f64 {
        let t = (v - self.lo) / (self.hi - self.lo);
        self.bottom - t * (self.bottom - self.top)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn short_label(bidder: &str) -> &str {
    match bidder {
        "heuristic_b0" => "b0",
        "heuristic_b1" => "b1",
        "heuristic_b2" => "b2",
        "regression" => "reg",
        "ranking" => "rank",
        other => other,
    }
}

/// Box plots of the per-seed metric distributions, one panel per metric.
fn distribution_chart(runs: &[RunMetrics], scenario: &str) -> String {
    let bidders = bidders_of(runs);
    let panel_w = 230.0;
    let panel_h = 240.0;
    let mut svg = Svg::new(panel_w * METRIC_NAMES.len() as f64, panel_h + 40.0);
    svg.text(
        10.0,
        20.0,
        14.0,
        "start",
        &format!("{scenario}: per-seed distributions"),
    );
    for (mi, metric) in METRIC_NAMES.iter().enumerate() {
        let x0 = mi as f64 * panel_w + 50.0;
        let all: Vec<f64> = runs
            .iter()
            .filter(|r| r.scenario == scenario)
            .map(|r| r.metric_values()[mi])
            .collect();
        if all.is_empty() {
            continue;
        }
        let scale = Scale::fit(&all, 50.0, panel_h);
        svg.text(x0 + 60.0, 42.0, 12.0, "middle", metric);
        svg.line(x0 - 8.0, scale.top, x0 - 8.0, scale.bottom, "#333", 1.0, 1.0);
        for (bi, bidder) in bidders.iter().enumerate() {
            let mut vals: Vec<f64> = select(runs, scenario, bidder)
                .iter()
                .map(|r| r.metric_values()[mi])
                .collect();
            if vals.is_empty() {
                continue;
            }
            vals.sort_by(|a, b| a.total_cmp(b));
            let bx = x0 + 10.0 + bi as f64 * 32.0;
            let (q1, q2, q3) = (
                quantile(&vals, 0.25),
                quantile(&vals, 0.5),
                quantile(&vals, 0.75),
            );
            svg.line(bx, scale.y(vals[0]), bx, scale.y(q1), "#555", 1.0, 1.0);
            svg.line(
                bx,
                scale.y(q3),
                bx,
                scale.y(*vals.last().unwrap()),
                "#555",
                1.0,
                1.0,
            );
            svg.rect(
                bx - 9.0,
                scale.y(q3),
                18.0,
                (scale.y(q1) - scale.y(q3)).max(0.5),
                "#9ecae1",
            );
            svg.line(bx - 9.0, scale.y(q2), bx + 9.0, scale.y(q2), "#08306b", 2.0, 1.0);
            svg.text(bx, scale.bottom + 16.0, 10.0, "middle", short_label(bidder));
        }
    }
    svg.finish()
}

/// Per-seed heuristic -> ranking transitions, gray lines with a green mean.
fn slope_chart(runs: &[RunMetrics], scenario: &str) -> Option<String> {
    let h = select(runs, scenario, BidderKind::HeuristicB2.label());
    let r = select(runs, scenario, BidderKind::Ranking.label());
    if h.is_empty() || r.is_empty() {
        return None;
    }
    let panel_w = 230.0;
    let panel_h = 240.0;
    let mut svg = Svg::new(panel_w * METRIC_NAMES.len() as f64, panel_h + 40.0);
    svg.text(
        10.0,
        20.0,
        14.0,
        "start",
        &format!("{scenario}: heuristic vs ranking, per seed"),
    );
    for (mi, metric) in METRIC_NAMES.iter().enumerate() {
        let x0 = mi as f64 * panel_w + 55.0;
        let x1 = x0 + 120.0;
        let mut all = Vec::new();
        let mut pairs = Vec::new();
        for rh in &h {
            if let Some(rr) = r.iter().find(|x| x.seed == rh.seed) {
                let a = rh.metric_values()[mi];
                let b = rr.metric_values()[mi];
                all.push(a);
                all.push(b);
                pairs.push((a, b));
            }
        }
        if pairs.is_empty() {
            continue;
        }
        let scale = Scale::fit(&all, 55.0, panel_h);
        svg.text((x0 + x1) / 2.0, 42.0, 12.0, "middle", metric);
        for &(a, b) in &pairs {
            svg.line(x0, scale.y(a), x1, scale.y(b), "#888", 1.0, 0.55);
        }
        let mean_a = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
        let mean_b = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
        svg.line(x0, scale.y(mean_a), x1, scale.y(mean_b), "#2ca02c", 3.0, 1.0);
        svg.text(x0, scale.bottom + 16.0, 10.0, "middle", "heuristic");
        svg.text(x1, scale.bottom + 16.0, 10.0, "middle", "ranking");
    }
    Some(svg.finish())
}

/// Mean energy vs mean delay, arrows from heuristic_b2 to ranking.
fn tradeoff_chart(runs: &[RunMetrics]) -> Result<String, CliError> {
    let rows = metrics::aggregate(runs).map_err(|e| CliError::Runtime(e.to_string()))?;
    let width = 460.0;
    let height = 360.0;
    let mut svg = Svg::new(width, height);
    svg.text(10.0, 20.0, 14.0, "start", "energy vs delay (means)");

    let xs: Vec<f64> = rows.iter().map(|r| r.delay_mean).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.energy_mean).collect();
    let sx = Scale::fit(&xs, 70.0, width - 30.0); // reused as horizontal scale
    let sy = Scale::fit(&ys, 40.0, height - 50.0);
    let x_of = |v: f64| -> f64 {
        let t = (v - sx.lo) / (sx.hi - sx.lo);
        70.0 + t * (width - 100.0)
    };
    svg.line(70.0, height - 50.0, width - 30.0, height - 50.0, "#333", 1.0, 1.0);
    svg.line(70.0, 40.0, 70.0, height - 50.0, "#333", 1.0, 1.0);
    svg.text(width / 2.0, height - 14.0, 11.0, "middle", "mean delay");
    svg.text(16.0, 30.0, 11.0, "start", "mean energy");

    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let scenarios: Vec<String> = {
        let s: BTreeSet<&str> = rows.iter().map(|r| r.scenario.as_str()).collect();
        s.into_iter().map(String::from).collect()
    };
    for (si, scenario) in scenarios.iter().enumerate() {
        let color = palette[si % palette.len()];
        let mut h_pt = None;
        let mut r_pt = None;
        for row in rows.iter().filter(|r| &r.scenario == scenario) {
            let (px, py) = (x_of(row.delay_mean), sy.y(row.energy_mean));
            svg.circle(px, py, 4.0, color);
            svg.text(px + 6.0, py - 5.0, 9.0, "start", short_label(&row.bidder));
            if row.bidder == BidderKind::HeuristicB2.label() {
                h_pt = Some((px, py));
            }
            if row.bidder == BidderKind::Ranking.label() {
                r_pt = Some((px, py));
            }
        }
        if let (Some((hx, hy)), Some((rx, ry))) = (h_pt, r_pt) {
            svg.line(hx, hy, rx, ry, color, 1.5, 0.9);
            // Arrowhead at the ranking end.
            let (dx, dy) = (rx - hx, ry - hy);
            let len = (dx * dx + dy * dy).sqrt().max(1e-9);
            let (ux, uy) = (dx / len, dy / len);
            svg.line(rx, ry, rx - 8.0 * ux + 4.0 * uy, ry - 8.0 * uy - 4.0 * ux, color, 1.5, 0.9);
            svg.line(rx, ry, rx - 8.0 * ux - 4.0 * uy, ry - 8.0 * uy + 4.0 * ux, color, 1.5, 0.9);
        }
        svg.text(
            width - 150.0,
            40.0 + 16.0 * si as f64,
            11.0,
            "start",
            &format!("<tspan fill=\"{color}\">●</tspan> {scenario}"),
        );
    }
    Ok(svg.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<RunMetrics> {
        let mut out = Vec::new();
        for scenario in ["a", "b"] {
            for bidder in ["heuristic_b2", "ranking"] {
                for seed in 1..=3 {
                    out.push(RunMetrics {
                        scenario: scenario.into(),
                        bidder: bidder.into(),
                        seed,
                        completed: 10 + seed as usize,
                        avg_delay: seed as f64 + if bidder == "ranking" { -0.5 } else { 0.0 },
                        misses: 2,
                        energy: 100.0 + seed as f64,
                        unfinished: 1,
                        no_completions: false,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn distribution_rows_are_runs_times_metrics() {
        let runs = rows();
        let csv = distribution_csv(&runs);
        assert_eq!(csv.lines().count(), 1 + runs.len() * 4);
    }

    #[test]
    fn slope_has_one_row_per_scenario_metric_seed() {
        let runs = rows();
        let csv = slope_csv(&runs);
        assert_eq!(csv.lines().count(), 1 + 2 * 4 * 3);
    }

    #[test]
    fn tradeoff_has_one_row_per_cell() {
        let runs = rows();
        let csv = tradeoff_csv(&runs).unwrap();
        assert_eq!(csv.lines().count(), 1 + 4);
    }

    #[test]
    fn charts_are_valid_svg_shells() {
        let runs = rows();
        let svg = distribution_chart(&runs, "a");
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(slope_chart(&runs, "a").is_some());
        let t = tradeoff_chart(&runs).unwrap();
        assert!(t.contains("energy vs delay"));
    }
}
