use std::fmt::Write as _;
use std::path::Path;

use crate::env::RewardComponents;
use crate::error::{Error, Result};
use crate::sched::ScheduleWeights;

use super::run::{EvalRecord, RunLog};

pub const CSV_HEADER: &str =
    "step,mean_return,fr,hr,cc,tc,alpha,beta,gamma_w,delta_w,critic_loss,actor_loss";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

/// One row per evaluation point. Floats use the shortest representation
/// that parses back to the same value; missing losses are empty fields.
pub fn csv_string(records: &[EvalRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let c = &r.components;
        let w = &r.weights;
        writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{}",
            r.step,
            r.mean_return,
            c.fr,
            c.hr,
            c.cc,
            c.tc,
            w.alpha,
            w.beta,
            w.gamma,
            w.delta,
            opt(r.critic_loss),
            opt(r.actor_loss)
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<EvalRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::parse(1, "missing or unexpected CSV header")),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(Error::parse(lineno, format!("expected 12 fields, found {}", fields.len())));
        }
        let num = |k: usize| -> Result<f64> {
            fields[k]
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad number `{}`", fields[k])))
        };
        let optional = |k: usize| -> Result<Option<f64>> {
            if fields[k].is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        records.push(EvalRecord {
            step: fields[0]
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad step `{}`", fields[0])))?,
            mean_return: num(1)?,
            components: RewardComponents {
                fr: num(2)?,
                hr: num(3)?,
                cc: num(4)?,
                tc: num(5)?,
            },
            weights: ScheduleWeights {
                alpha: num(6)?,
                beta: num(7)?,
                gamma: num(8)?,
                delta: num(9)?,
            },
            critic_loss: optional(10)?,
            actor_loss: optional(11)?,
        });
    }
    Ok(records)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn emit_csv(log: &RunLog, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &csv_string(&log.records))
}

/// Config echo followed by the run summary, as TOML.
pub fn log_string(log: &RunLog) -> Result<String> {
    let mut out = format!("# run of `{}` with seed {}\n", log.config.name, log.seed);
    out.push_str(&log.config.to_toml()?);
    out.push_str("\n[summary]\n");
    let s = &log.summary;
    writeln!(out, "seed = {}", log.seed).unwrap();
    writeln!(out, "best_return = {:?}", s.best_return).unwrap();
    writeln!(out, "final_return = {:?}", s.final_return).unwrap();
    writeln!(out, "updates = {}", s.updates).unwrap();
    writeln!(out, "episodes = {}", s.episodes).unwrap();
    if let Some(a) = &s.aborted {
        writeln!(out, "aborted_at = {}", a.step).unwrap();
        writeln!(out, "abort_reason = {:?}", a.reason).unwrap();
    }
    Ok(out)
}

/// Writes `<stem>.csv` and `<stem>.log` into `dir`.
pub fn emit_run(log: &RunLog, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    emit_csv(log, dir.join(format!("{stem}.csv")))?;
    write(&dir.join(format!("{stem}.log")), &log_string(log)?)
}

const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of mean return against step, one polyline per series.
pub fn svg_string(series: &[(String, Vec<EvalRecord>)]) -> String {
    let (w, h) = (800.0, 480.0);
    let (left, right, top, bottom) = (70.0, 170.0, 20.0, 50.0);
    let points = || series.iter().flat_map(|(_, r)| r.iter());
    let max_step = points().map(|r| r.step).max().unwrap_or(0).max(1) as f64;
    let (mut lo, mut hi) = points()
        .map(|r| r.mean_return)
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let x = |s: f64| left + pw * s / max_step;
    let y = |v: f64| top + ph * (1.0 - (v - lo) / (hi - lo));

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<path d="M{left} {top}V{}H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    )
    .unwrap();
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (sx, vy) = (f * max_step, lo + f * (hi - lo));
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}</text>"#,
            x(sx),
            top + ph + 18.0,
            sx
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.1}</text>"#,
            left - 6.0,
            y(vy) + 4.0,
            vy
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">step</text>"#,
        left + pw / 2.0,
        h - 10.0
    )
    .unwrap();
    writeln!(
        out,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">mean return</text>"#,
        top + ph / 2.0
    )
    .unwrap();
    for (i, (label, records)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = records
            .iter()
            .filter(|r| r.mean_return.is_finite())
            .map(|r| format!("{:.1},{:.1}", x(r.step as f64), y(r.mean_return)))
            .collect();
        writeln!(
            out,
            r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        )
        .unwrap();
        let ly = top + 14.0 + 18.0 * i as f64;
        writeln!(
            out,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            left + pw + 10.0,
            left + pw + 30.0,
            left + pw + 36.0,
            ly + 4.0,
            escape(label)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

pub fn emit_svg_curves(logs: &[RunLog], path: impl AsRef<Path>) -> Result<()> {
    if logs.is_empty() {
        return Err(Error::InvalidConfig("nothing to plot".into()));
    }
    let series: Vec<(String, Vec<EvalRecord>)> = logs
        .iter()
        .map(|l| (format!("{} seed {}", l.config.name, l.seed), l.records.clone()))
        .collect();
    write(path.as_ref(), &svg_string(&series))
}
