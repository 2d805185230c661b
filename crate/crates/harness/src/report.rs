//! CSV per repetition, JSON summaries and an SVG figure with response-time
//! boxes and loss bars.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::{quantile, Aggregates, ExperimentResult, MessageRecord};

pub const CSV_HEADER: &str = "request_id,send_ms,first_offer_ms,answered,hops_out,hops_back,responder";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: header is not `{CSV_HEADER}`")]
    Header { path: String },
    #[error("nothing to plot: {0}")]
    Empty(String),
}

#[derive(Serialize, Deserialize)]
struct Row {
    request_id: u32,
    send_ms: u64,
    first_offer_ms: Option<u64>,
    answered: bool,
    hops_out: Option<u8>,
    hops_back: Option<u8>,
    responder: Option<String>,
}

pub fn write_csv<W: io::Write>(records: &[MessageRecord], w: W) -> Result<(), ReportError> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(CSV_HEADER.split(','))?;
    for r in records {
        wr.serialize(Row {
            request_id: r.request_id,
            send_ms: r.send_ms,
            first_offer_ms: r.first_offer_ms,
            answered: r.answered,
            hops_out: r.hops_out,
            hops_back: r.hops_back,
            responder: r.responder.clone(),
        })?;
    }
    wr.flush()?;
    Ok(())
}

pub fn emit_csv(records: &[MessageRecord], path: impl AsRef<Path>) -> Result<(), ReportError> {
    write_csv(records, fs::File::create(path)?)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<MessageRecord>, ReportError> {
    let path = path.as_ref();
    let mut rd = csv::Reader::from_path(path)?;
    if rd.headers()?.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(ReportError::Header { path: path.display().to_string() });
    }
    let mut out = Vec::new();
    for row in rd.deserialize::<Row>() {
        let r = row?;
        out.push(MessageRecord {
            request_id: r.request_id,
            send_ms: r.send_ms,
            first_offer_ms: r.first_offer_ms,
            answered: r.answered,
            hops_out: r.hops_out,
            hops_back: r.hops_back,
            responder: r.responder,
        });
    }
    Ok(out)
}

pub fn csv_name(scenario: &str, experiment: u8, rep: u32) -> String {
    format!("{scenario}_exp{experiment}_rep{rep}.csv")
}

/// Inverse of [`csv_name`].
pub fn parse_csv_name(name: &str) -> Option<(String, u8, u32)> {
    let stem = name.strip_suffix(".csv")?;
    let (rest, rep) = stem.rsplit_once("_rep")?;
    let (scenario, exp) = rest.rsplit_once("_exp")?;
    Some((scenario.to_string(), exp.parse().ok()?, rep.parse().ok()?))
}

/// Writes one CSV per repetition and a `<scenario>_exp<k>_summary.json`.
pub fn write_result(result: &ExperimentResult, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, ReportError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for rep in &result.repetitions {
        let p = dir.join(csv_name(&result.scenario, result.plan.experiment, rep.repetition));
        emit_csv(&rep.records, &p)?;
        written.push(p);
    }
    let p = dir.join(format!("{}_exp{}_summary.json", result.scenario, result.plan.experiment));
    fs::write(&p, serde_json::to_string_pretty(result_summary(result).as_slice())?)?;
    written.push(p);
    Ok(written)
}

#[derive(Serialize)]
struct SummaryEntry<'a> {
    scenario: &'a str,
    experiment: u8,
    rate_per_min: u32,
    /// `None` for the pooled entry.
    repetition: Option<u32>,
    seed: Option<u64>,
    aggregates: &'a Aggregates,
}

fn result_summary(r: &ExperimentResult) -> Vec<SummaryEntry<'_>> {
    let entry = |repetition, seed, aggregates| SummaryEntry {
        scenario: &r.scenario,
        experiment: r.plan.experiment,
        rate_per_min: r.plan.rate,
        repetition,
        seed,
        aggregates,
    };
    let mut v: Vec<_> = r.repetitions.iter().map(|rep| entry(Some(rep.repetition), Some(rep.seed), &rep.aggregates)).collect();
    v.push(entry(None, None, &r.aggregates));
    v
}

/// Records found in `dir`, pooled per (scenario, experiment).
pub fn collect_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<(String, u8), Vec<MessageRecord>>, ReportError> {
    let mut paths: Vec<(String, u8, u32, PathBuf)> = Vec::new();
    for e in fs::read_dir(dir)? {
        let path = e?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some((s, k, rep)) = parse_csv_name(name) {
            paths.push((s, k, rep, path));
        }
    }
    paths.sort();
    let mut groups: BTreeMap<(String, u8), Vec<MessageRecord>> = BTreeMap::new();
    for (s, k, _, p) in paths {
        groups.entry((s, k)).or_default().extend(read_csv(&p)?);
    }
    Ok(groups)
}

pub struct PlotGroup {
    pub scenario: String,
    pub experiment: u8,
    pub records: Vec<MessageRecord>,
}

impl PlotGroup {
    pub fn from_result(r: &ExperimentResult) -> Self {
        PlotGroup { scenario: r.scenario.clone(), experiment: r.plan.experiment, records: r.records().cloned().collect() }
    }
}

const ROMAN: [&str; 4] = ["?", "I", "II", "III"];
const PALETTE: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];

/// Two panels side by side: response-time box per group (whiskers at min and
/// max) and mean loss bar per group. Groups are ordered by experiment, then
/// scenario.
pub fn render_svg(groups: &[PlotGroup]) -> Result<String, ReportError> {
    if groups.is_empty() {
        return Err(ReportError::Empty("no experiment results".into()));
    }
    if groups.iter().all(|g| g.records.is_empty()) {
        return Err(ReportError::Empty("results contain no requests".into()));
    }
    let mut order: Vec<&PlotGroup> = groups.iter().collect();
    order.sort_by(|a, b| (a.experiment, &a.scenario).cmp(&(b.experiment, &b.scenario)));
    let scenarios: Vec<&str> = {
        let mut s: Vec<&str> = order.iter().map(|g| g.scenario.as_str()).collect();
        s.sort();
        s.dedup();
        s
    };
    let color = |s: &str| PALETTE[scenarios.iter().position(|x| *x == s).unwrap_or(0) % PALETTE.len()];

    let (panel_w, panel_h, margin) = (60.0 * order.len() as f64 + 80.0, 300.0, 60.0);
    let width = 2.0 * panel_w + 3.0 * margin;
    let height = panel_h + 2.0 * margin + 20.0 * scenarios.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let responses: Vec<Vec<f64>> = order
        .iter()
        .map(|g| {
            let mut v: Vec<f64> = g.records.iter().filter_map(|r| r.response_ms()).map(|t| t as f64).collect();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    let t_max = responses.iter().flatten().copied().fold(0.0, f64::max).max(1.0);
    let t_top = nice_ceiling(t_max);

    // response time panel
    let x0 = margin;
    axes(&mut svg, x0, margin, panel_w, panel_h, t_top, "Response time (ms)");
    for (i, (g, v)) in order.iter().zip(&responses).enumerate() {
        let cx = x0 + 50.0 + 60.0 * i as f64;
        let y = |t: f64| margin + panel_h * (1.0 - t / t_top);
        label(&mut svg, cx, margin + panel_h + 14.0, ROMAN.get(g.experiment as usize).unwrap_or(&"?"));
        if v.is_empty() {
            let _ = writeln!(svg, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">n/a</text>"#, margin + panel_h - 4.0);
            continue;
        }
        let (lo, q1, med, q3, hi) = (v[0], quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75), v[v.len() - 1]);
        let c = color(&g.scenario);
        let _ = writeln!(svg, r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#, y(lo), y(hi));
        let _ = writeln!(
            svg,
            r#"<rect x="{:.1}" y="{:.1}" width="30" height="{:.1}" fill="{c}" stroke="black"/>"#,
            cx - 15.0,
            y(q3),
            (y(q1) - y(q3)).max(0.5)
        );
        let _ = writeln!(svg, r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#, cx - 15.0, y(med), cx + 15.0, y(med));
    }

    // loss panel
    let x1 = 2.0 * margin + panel_w;
    axes(&mut svg, x1, margin, panel_w, panel_h, 100.0, "Packet loss (%)");
    for (i, g) in order.iter().enumerate() {
        let cx = x1 + 50.0 + 60.0 * i as f64;
        let loss = Aggregates::from_records(&g.records).loss_pct;
        let h = panel_h * loss / 100.0;
        label(&mut svg, cx, margin + panel_h + 14.0, ROMAN.get(g.experiment as usize).unwrap_or(&"?"));
        let _ = writeln!(
            svg,
            r#"<rect x="{:.1}" y="{:.1}" width="30" height="{h:.1}" fill="{}" stroke="black"/>"#,
            cx - 15.0,
            margin + panel_h - h,
            color(&g.scenario)
        );
        label(&mut svg, cx, margin + panel_h - h - 4.0, &format!("{loss:.1}"));
    }

    for (i, s) in scenarios.iter().enumerate() {
        let y = margin + panel_h + 36.0 + 20.0 * i as f64;
        let _ = writeln!(svg, r#"<rect x="{margin}" y="{:.1}" width="12" height="12" fill="{}"/>"#, y - 10.0, color(s));
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{y:.1}">{}</text>"#, margin + 18.0, escape(s));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(groups: &[PlotGroup], path: impl AsRef<Path>) -> Result<(), ReportError> {
    let svg = render_svg(groups)?;
    fs::write(path, svg)?;
    Ok(())
}

fn axes(svg: &mut String, x: f64, y: f64, w: f64, h: f64, top: f64, title: &str) {
    let _ = writeln!(svg, r#"<line x1="{x}" y1="{y}" x2="{x}" y2="{:.1}" stroke="black"/>"#, y + h);
    let _ = writeln!(svg, r#"<line x1="{x}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#, y + h, x + w, y + h);
    for k in 0..=4 {
        let v = top * k as f64 / 4.0;
        let ty = y + h * (1.0 - k as f64 / 4.0);
        let _ = writeln!(svg, r#"<line x1="{:.1}" y1="{ty:.1}" x2="{x}" y2="{ty:.1}" stroke="black"/>"#, x - 4.0);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.0}</text>"#, x - 6.0, ty + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{title}</text>"#, x + w / 2.0, y - 20.0);
}

fn label(svg: &mut String, x: f64, y: f64, text: &str) {
    let _ = writeln!(svg, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="middle">{}</text>"#, escape(text));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_ceiling(v: f64) -> f64 {
    let step = 10f64.powf(v.log10().floor());
    (v / step).ceil() * step
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u32, offer: Option<u64>) -> MessageRecord {
        MessageRecord {
            request_id: id,
            send_ms: id as u64 * 1000,
            first_offer_ms: offer.map(|t| t + id as u64 * 1000),
            answered: offer.is_some(),
            hops_out: offer.map(|_| 3),
            hops_back: offer.map(|_| 4),
            responder: offer.map(|_| "05".to_string()),
        }
    }

    #[test]
    fn csv_header_and_round_trip() {
        let records = vec![rec(0, Some(950)), rec(1, None), rec(2, Some(1010))];
        let mut buf = Vec::new();
        write_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some(CSV_HEADER));
        assert_eq!(text.lines().nth(2), Some("1,1000,,false,,,"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, &text).unwrap();
        assert_eq!(read_csv(&p).unwrap(), records);
    }

    #[test]
    fn csv_names() {
        assert_eq!(parse_csv_name(&csv_name("smart_home", 2, 4)), Some(("smart_home".into(), 2, 4)));
        assert_eq!(parse_csv_name("smart_home_exp1_summary.json"), None);
    }

    #[test]
    fn empty_plot_refused() {
        assert!(matches!(render_svg(&[]), Err(ReportError::Empty(_))));
        let g = PlotGroup { scenario: "a".into(), experiment: 1, records: vec![] };
        assert!(matches!(render_svg(&[g]), Err(ReportError::Empty(_))));
    }

    #[test]
    fn plot_has_a_box_and_bar_per_group() {
        let mut groups = Vec::new();
        for s in ["smart_home", "smart_office"] {
            for k in 1..=3 {
                groups.push(PlotGroup { scenario: s.into(), experiment: k, records: vec![rec(0, Some(900)), rec(1, Some(1200)), rec(2, None)] });
            }
        }
        let svg = render_svg(&groups).unwrap();
        // 6 boxes + 6 bars + 2 legend swatches + background
        assert_eq!(svg.matches("<rect").count(), 15);
        assert!(svg.contains("33.3"));
    }
}
