//! Gantt-style diagrams of schedules: SVG and plain text.
//!
//! One row per device, time on the x axis. Passes are colored by kind and
//! labeled with their microbatch. Stages of the second half of a V (or the
//! second replica of a mirrored topology) are drawn light-on-dark, the rest
//! dark-on-light.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::bubble::GrowthReport;
use crate::document::{PassRecord, ScheduleDocument, Units};
use crate::error::{Error, Result};
use crate::model::{PassId, PassKind};

/// Terminal coloring, as read from `PIPEBLOCK_COLOR`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorChoice {
    #[default]
    Auto,
    Always,
    Never,
}

impl FromStr for ColorChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" | "auto" => Ok(ColorChoice::Auto),
            "always" => Ok(ColorChoice::Always),
            "never" => Ok(ColorChoice::Never),
            other => Err(Error::Unsupported(format!("PIPEBLOCK_COLOR={other} (expected auto, always or never)"))),
        }
    }
}

impl ColorChoice {
    pub const ENV: &'static str = "PIPEBLOCK_COLOR";

    pub fn from_env() -> Result<Self> {
        std::env::var(Self::ENV).map_or(Ok(ColorChoice::Auto), |v| v.parse())
    }

    pub fn enabled(self, is_terminal: bool) -> bool {
        match self {
            ColorChoice::Always => true,
            ColorChoice::Never => false,
            ColorChoice::Auto => is_terminal && std::env::var_os("NO_COLOR").is_none(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SvgStyle {
    /// Width of one cell (or of the shortest pass, for timelines).
    pub cell_width: f64,
    pub row_height: f64,
    /// Passes outlined and joined in order, e.g. a growth witness.
    pub overlay: Vec<PassId>,
}

impl Default for SvgStyle {
    fn default() -> Self {
        Self { cell_width: 22.0, row_height: 26.0, overlay: Vec::new() }
    }
}

#[derive(Debug, Clone)]
pub struct TextStyle {
    /// Columns before the grid is downsampled.
    pub max_width: usize,
    pub color: bool,
}

impl Default for TextStyle {
    fn default() -> Self {
        Self { max_width: 200, color: false }
    }
}

const MARGIN_LEFT: f64 = 36.0;
const MARGIN_TOP: f64 = 8.0;
const AXIS: f64 = 18.0;

fn fill(kind: PassKind, dark: bool) -> &'static str {
    match (kind, dark) {
        (PassKind::F, false) => "#cfe2f3",
        (PassKind::F, true) => "#1f4e79",
        (PassKind::B, false) => "#d9ead3",
        (PassKind::B, true) => "#38761d",
        (PassKind::W, false) => "#fff2cc",
        (PassKind::W, true) => "#7f6000",
        (PassKind::BW, false) => "#f4cccc",
        (PassKind::BW, true) => "#85200c",
    }
}

/// Stages after the turn of a V, or passes of the mirrored replica.
fn is_dark(doc: &ScheduleDocument, p: &PassRecord) -> bool {
    let t = &doc.topology;
    if t.num_stages > t.devices {
        return p.stage > t.num_stages / 2;
    }
    t.placement.len() > 1 && p.microbatch % t.placement.len() == 1
}

fn num(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0;
    if r.fract() == 0.0 {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

/// Time span and the duration drawn as one cell.
fn frame(doc: &ScheduleDocument) -> (f64, f64, f64) {
    let start = doc.passes.iter().map(|p| p.start).fold(f64::INFINITY, f64::min);
    let end = doc.passes.iter().map(PassRecord::end).fold(f64::NEG_INFINITY, f64::max);
    if doc.passes.is_empty() {
        return (0.0, 0.0, 1.0);
    }
    let quantum = match doc.units {
        Units::Cells => 1.0,
        Units::Time => doc
            .passes
            .iter()
            .map(|p| p.duration / p.kind.cells() as f64)
            .filter(|d| *d > 0.0)
            .fold(f64::INFINITY, f64::min),
    };
    (start, end, if quantum.is_finite() { quantum } else { 1.0 })
}

/// SVG with one row per device. Output bytes depend only on the input.
pub fn render_svg(doc: &ScheduleDocument, style: &SvgStyle) -> String {
    let (t0, t1, quantum) = frame(doc);
    let scale = style.cell_width / quantum;
    let h = style.row_height;
    let devices = doc.topology.devices;
    let width = MARGIN_LEFT + (t1 - t0) * scale + 8.0;
    let height = MARGIN_TOP + devices as f64 * h + AXIS;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="monospace" font-size="11">"#,
        num(width),
        num(height),
        num(width),
        num(height)
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for d in 1..=devices {
        let y = MARGIN_TOP + (d - 1) as f64 * h;
        let _ = writeln!(
            s,
            r#"<text x="4" y="{}" dominant-baseline="middle">D{d}</text>"#,
            num(y + h / 2.0)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#dddddd"/>"##,
            num(MARGIN_LEFT),
            num(y + h),
            num(width - 8.0),
            num(y + h)
        );
    }
    let mut centers = Vec::new();
    for p in &doc.passes {
        let dark = is_dark(doc, p);
        let x = MARGIN_LEFT + (p.start - t0) * scale;
        let y = MARGIN_TOP + (p.device - 1) as f64 * h;
        let w = p.duration * scale;
        let text = if dark { "#ffffff" } else { "#000000" };
        let _ = writeln!(
            s,
            r##"<g class="pass {kind}"><title>{kind}{stage} mb{mb} [{a}, {b})</title><rect x="{x}" y="{y}" width="{w}" height="{rh}" fill="{fill}" stroke="#444444" stroke-width="0.5"/><text x="{tx}" y="{ty}" fill="{text}" text-anchor="middle" dominant-baseline="middle">{mb}</text></g>"##,
            kind = p.kind,
            stage = p.stage,
            mb = p.microbatch,
            a = num(p.start),
            b = num(p.end()),
            x = num(x),
            y = num(y + 1.0),
            w = num(w),
            rh = num(h - 2.0),
            fill = fill(p.kind, dark),
            tx = num(x + w / 2.0),
            ty = num(y + h / 2.0),
        );
        if let Some(k) = style.overlay.iter().position(|id| *id == p.id()) {
            centers.push((k, x + w / 2.0, y + h / 2.0));
            let _ = writeln!(
                s,
                r##"<rect class="witness" x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#d00000" stroke-width="2"/>"##,
                num(x),
                num(y + 1.0),
                num(w),
                num(h - 2.0)
            );
        }
    }
    if centers.len() > 1 {
        centers.sort_by_key(|c| c.0);
        let pts: Vec<String> = centers.iter().map(|c| format!("{},{}", num(c.1), num(c.2))).collect();
        let _ = writeln!(
            s,
            r##"<polyline class="witness" points="{}" fill="none" stroke="#d00000" stroke-width="1.5"/>"##,
            pts.join(" ")
        );
    }
    let axis_y = MARGIN_TOP + devices as f64 * h + 12.0;
    let cells = ((t1 - t0) / quantum).round() as i64;
    let step = ((cells as f64 / 20.0).ceil() as i64).max(1);
    for c in (0..=cells).step_by(step as usize) {
        let t = t0 + c as f64 * quantum;
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{}" fill="#666666" text-anchor="middle" font-size="9">{}</text>"##,
            num(MARGIN_LEFT + (t - t0) * scale),
            num(axis_y),
            num(t)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn letter(kind: PassKind, dark: bool) -> char {
    let c = match kind {
        PassKind::F => 'F',
        PassKind::B => 'B',
        PassKind::W => 'W',
        PassKind::BW => 'X',
    };
    if dark {
        c.to_ascii_lowercase()
    } else {
        c
    }
}

fn ansi(kind: PassKind, dark: bool) -> &'static str {
    match (kind, dark) {
        (PassKind::F, false) => "\x1b[30;104m",
        (PassKind::F, true) => "\x1b[97;44m",
        (PassKind::B, false) => "\x1b[30;102m",
        (PassKind::B, true) => "\x1b[97;42m",
        (PassKind::W, false) => "\x1b[30;103m",
        (PassKind::W, true) => "\x1b[97;43m",
        (PassKind::BW, false) => "\x1b[30;101m",
        (PassKind::BW, true) => "\x1b[97;41m",
    }
}

/// Two text rows per device: pass kinds, then microbatch indices mod 10.
///
/// Idle cells are `.`. Lowercase letters mark dark (second-half) stages and
/// `X` a grouped backward pass. Wider grids are downsampled to
/// `max_width` columns and say so in the legend.
pub fn render_text(doc: &ScheduleDocument, style: &TextStyle) -> String {
    let (t0, t1, quantum) = frame(doc);
    let cells = ((t1 - t0) / quantum).ceil().max(0.0) as usize;
    let max_width = style.max_width.max(1);
    let factor = cells.div_ceil(max_width).max(1);
    let columns = cells.div_ceil(factor);
    let mut lanes: Vec<Vec<&PassRecord>> = vec![Vec::new(); doc.topology.devices];
    for p in &doc.passes {
        lanes[p.device - 1].push(p);
    }
    let label_width = format!("D{}", doc.topology.devices).len();
    let mut out = String::new();
    for (d, lane) in lanes.iter_mut().enumerate() {
        lane.sort_by(|a, b| a.start.total_cmp(&b.start));
        let mut kinds = String::new();
        let mut mbs = String::new();
        let mut k = 0;
        for c in 0..columns {
            let at = t0 + (c * factor) as f64 * quantum + quantum / 2.0;
            while k < lane.len() && lane[k].end() <= at {
                k += 1;
            }
            match lane.get(k).filter(|p| p.start <= at) {
                Some(p) => {
                    let dark = is_dark(doc, p);
                    let (l, m) = (letter(p.kind, dark), char::from(b'0' + (p.microbatch % 10) as u8));
                    if style.color {
                        let _ = write!(kinds, "{}{l}\x1b[0m", ansi(p.kind, dark));
                        let _ = write!(mbs, "{}{m}\x1b[0m", ansi(p.kind, dark));
                    } else {
                        kinds.push(l);
                        mbs.push(m);
                    }
                }
                None => {
                    kinds.push('.');
                    mbs.push(' ');
                }
            }
        }
        let _ = writeln!(out, "{:>label_width$} |{kinds}|", format!("D{}", d + 1));
        let _ = writeln!(out, "{:>label_width$} |{mbs}|", "");
    }
    let unit = match doc.units {
        Units::Cells => "cell".to_string(),
        Units::Time => format!("{} time", num(quantum)),
    };
    let _ = writeln!(out, "legend: F forward, B backward, W weight, X grouped backward; lowercase = second half; 1 column = {unit}");
    if factor > 1 {
        let _ = writeln!(out, "warning: downsampled {cells} cells to {columns} columns, 1 column = {factor} cells");
    }
    out
}

/// Passes of a growth witness when its chain starts at period `origin`.
pub fn witness_passes(report: &GrowthReport, origin: i64) -> Vec<PassId> {
    let per_period = report.microbatches_per_period;
    report
        .witness
        .iter()
        .filter_map(|w| {
            let instance = origin + w.instance;
            (instance >= 0).then(|| {
                PassId::new(w.stage, w.kind, instance as usize * per_period + w.slot)
            })
        })
        .collect()
}

/// An origin period that keeps the whole witness inside `microbatches`, near the middle.
pub fn witness_origin(report: &GrowthReport, microbatches: usize) -> i64 {
    let instances = microbatches / report.microbatches_per_period.max(1);
    let lo = report.witness.iter().map(|w| w.instance).min().unwrap_or(0);
    let hi = report.witness.iter().map(|w| w.instance).max().unwrap_or(0);
    let mid = (instances as i64 - (hi - lo) - 1) / 2;
    (mid - lo).max(-lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::assemble;
    use crate::bubble::growth_rate;
    use crate::gallery::{build_gallery, build_v_block, GalleryParams, VVariant};
    use crate::model::RunTimeProfile;

    fn doc(id: &str, d: usize, n: usize) -> ScheduleDocument {
        let b = build_gallery(id, d, GalleryParams::for_microbatches(n)).unwrap();
        ScheduleDocument::from_schedule(&assemble(&b, n).unwrap())
    }

    #[test]
    fn one_f_one_b_first_row() {
        let text = render_text(&doc("1f1b", 4, 8), &TextStyle::default());
        let first = text.lines().next().unwrap();
        let row: String = first[4..].chars().filter(|c| *c != '.').collect();
        assert!(row.starts_with("FFFFXXFXXFXXFXXFXX"), "{first}");
        let mbs: String = text.lines().nth(1).unwrap()[4..].chars().filter(|c| *c != ' ').collect();
        assert!(mbs.starts_with("012300411522"), "{mbs}");
    }

    #[test]
    fn svg_is_deterministic_with_one_row_per_device() {
        let d = doc("v-half", 4, 8);
        let a = render_svg(&d, &SvgStyle::default());
        assert_eq!(a, render_svg(&d, &SvgStyle::default()));
        assert_eq!(a.matches(">D").count(), 4);
        assert_eq!(a.matches("<g class=\"pass").count(), d.passes.len());
        assert!(a.contains("#1f4e79") && a.contains("#cfe2f3"));
    }

    #[test]
    fn single_device_single_microbatch() {
        let passes = [PassKind::F, PassKind::B, PassKind::W].into_iter().enumerate().map(|(k, kind)| {
            crate::model::ScheduledPass { id: PassId::new(1, kind, 0), device: 1, start: k as i64, cells: 1 }
        });
        let s = crate::model::GridSchedule::from_passes(
            crate::model::Topology::sequential(1),
            1,
            passes,
            Default::default(),
        );
        let t = render_text(&ScheduleDocument::from_schedule(&s), &TextStyle::default());
        assert!(t.starts_with("D1 |FBW|"), "{t}");
    }

    #[test]
    fn wide_grids_are_downsampled() {
        let t = render_text(&doc("1f1b", 4, 128), &TextStyle { max_width: 200, color: false });
        let row = t.lines().next().unwrap();
        assert!(row.len() <= 200 + 5);
        assert!(t.contains("warning: downsampled"));
    }

    #[test]
    fn colored_text_uses_ansi() {
        let t = render_text(&doc("1f1b", 2, 2), &TextStyle { max_width: 200, color: true });
        assert!(t.contains("\x1b[0m"));
    }

    #[test]
    fn color_choice_parses() {
        assert_eq!("always".parse::<ColorChoice>().unwrap(), ColorChoice::Always);
        assert!("sometimes".parse::<ColorChoice>().is_err());
        assert!(!ColorChoice::Never.enabled(true));
        assert!(ColorChoice::Always.enabled(false));
    }

    #[test]
    fn witness_overlay_spans_two_periods() {
        let b = build_v_block(4, VVariant::Min).unwrap();
        let r = growth_rate(&b, &RunTimeProfile::new(1.0, 1.0, 0.2).unwrap()).unwrap();
        let n = 12;
        let origin = witness_origin(&r, n);
        let ids = witness_passes(&r, origin);
        assert_eq!(ids.len(), r.witness.len());
        assert_eq!(ids.last().unwrap().microbatch, ids[0].microbatch + 1);
        let d = ScheduleDocument::from_schedule(&assemble(&b, n).unwrap());
        let svg = render_svg(&d, &SvgStyle { overlay: ids.clone(), ..SvgStyle::default() });
        assert_eq!(svg.matches("<rect class=\"witness\"").count(), ids.len());
        assert!(svg.contains("<polyline"));
    }
}
