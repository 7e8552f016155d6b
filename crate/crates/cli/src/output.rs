//! CSV tables, SVG plots, the run manifest and the markdown report.
//!
//! Every artifact is rendered to memory first and written only once the
//! whole command has succeeded.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use scoresens::sensitivity::MurphyCurve;
use scoresens::{MurphyAxis, SampleSet, Subset};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiment::{Estimate, Interaction};

/// Decimal with 10 significant digits, shortest form.
pub fn sig10(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.9e}").parse().expect("formatted float parses");
    rounded.to_string()
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Sample rows at full round-trip precision.
pub fn sample_csv(sample: &SampleSet) -> anyhow::Result<String> {
    let n = sample.dim();
    let mut header: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
    header.push("y".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = sample
        .factors
        .row_iter()
        .zip(&sample.response)
        .map(|(x, y)| x.iter().chain(std::iter::once(y)).map(|v| v.to_string()).collect());
    csv_string(&header, rows)
}

pub fn sensitivities_csv(cfg: &ExperimentConfig, est: &[Estimate]) -> anyhow::Result<String> {
    let (model, functional, score) = (cfg.model.id(), cfg.functional.to_string(), cfg.score().to_string());
    let rows = est.iter().map(|e| {
        let (lo, hi) = e
            .value
            .ci90
            .map_or((String::new(), String::new()), |(l, h)| (sig10(l), sig10(h)));
        vec![
            model.to_string(),
            functional.clone(),
            score.clone(),
            e.subset.to_string(),
            sig10(e.value.value),
            lo,
            hi,
            e.value.m.to_string(),
        ]
    });
    csv_string(
        &[
            "model",
            "functional",
            "score",
            "subset",
            "estimate",
            "ci_lo",
            "ci_hi",
            "m",
        ],
        rows,
    )
}

fn axis_name(axis: MurphyAxis) -> &'static str {
    match axis {
        MurphyAxis::Theta => "theta",
        MurphyAxis::B => "b",
    }
}

pub fn murphy_csv(curve: &MurphyCurve) -> anyhow::Result<String> {
    let axis = axis_name(curve.grid.axis);
    let mut rows = Vec::new();
    for row in &curve.rows {
        for (&p, v) in curve.grid.values().iter().zip(&row.values) {
            rows.push(vec![
                axis.to_string(),
                sig10(p),
                row.subset.to_string(),
                v.map(sig10).unwrap_or_default(),
                v.is_some().to_string(),
            ]);
        }
    }
    csv_string(&["axis", "param", "subset", "sensitivity", "defined"], rows)
}

pub fn interactions_csv(items: &[Interaction]) -> anyhow::Result<String> {
    let rows = items.iter().map(|i| {
        vec![
            i.a.to_string(),
            i.b.to_string(),
            sig10(i.joint),
            sig10(i.xi_a),
            sig10(i.xi_b),
            sig10(i.value),
        ]
    });
    csv_string(
        &["subset_a", "subset_b", "xi_joint", "xi_a", "xi_b", "interaction"],
        rows,
    )
}

pub fn loss_csv(losses: &[f64]) -> anyhow::Result<String> {
    let ma = scoresens::neural::moving_average(losses, 500);
    let rows = losses
        .iter()
        .zip(&ma)
        .enumerate()
        .map(|(k, (l, m))| vec![k.to_string(), sig10(*l), sig10(*m)]);
    csv_string(&["iteration", "loss", "moving_average_500"], rows)
}

const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

/// Line plot of every curve; undefined points break the line.
pub fn murphy_svg(curve: &MurphyCurve, title: &str) -> String {
    let (w, h, left, right, top, bottom) = (720.0, 440.0, 60.0, 150.0, 40.0, 50.0);
    let grid = curve.grid.values();
    let (x0, x1) = (grid[0], grid[grid.len() - 1]);
    let defined = curve.rows.iter().flat_map(|r| r.values.iter().flatten().copied());
    let (lo, hi) = defined.fold((0.0f64, 1.0f64), |(a, b), v| (a.min(v), b.max(v)));
    let px = |x: f64| left + (x - x0) / (x1 - x0).max(f64::MIN_POSITIVE) * (w - left - right);
    let py = |y: f64| top + (hi - y) / (hi - lo) * (h - top - bottom);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{title}</text>"#,
        (w - right + left) / 2.0
    );
    let (bx, by) = (py(lo), px(x0));
    let _ = writeln!(
        s,
        r#"<path d="M{by:.1},{top:.1} V{bx:.1} H{:.1}" fill="none" stroke="black"/>"#,
        px(x1)
    );
    for k in 0..=4 {
        let xv = x0 + (x1 - x0) * k as f64 / 4.0;
        let yv = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(xv),
            bx + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            by - 6.0,
            py(yv) + 4.0,
            tick(yv)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{by:.1}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#dddddd"/>"##,
            px(x1),
            py(yv),
            py(yv)
        );
    }
    let axis = match curve.grid.axis {
        MurphyAxis::Theta => "θ",
        MurphyAxis::B => "b",
    };
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{axis}</text>"#,
        px((x0 + x1) / 2.0),
        h - 10.0
    );
    for (k, row) in curve.rows.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut segment: Vec<String> = Vec::new();
        let flush = |seg: &mut Vec<String>, s: &mut String| {
            if seg.len() > 1 {
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    seg.join(" ")
                );
            }
            seg.clear();
        };
        for (&x, v) in grid.iter().zip(&row.values) {
            match v {
                Some(v) => segment.push(format!("{:.2},{:.2}", px(x), py(*v))),
                None => flush(&mut segment, &mut s),
            }
        }
        flush(&mut segment, &mut s);
        let ly = top + 20.0 * k as f64 + 10.0;
        let lx = w - right + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">ξ(Y; X_{})</text>"#,
            lx + 26.0,
            ly + 4.0,
            row.subset
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0;
    if r == 0.0 {
        "0".into()
    } else {
        r.to_string()
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    library_version: &'static str,
    command: &'a str,
    seed: u64,
    net_seeds: BTreeMap<String, u64>,
    config: &'a ExperimentConfig,
    outputs: Vec<String>,
}

pub fn manifest(
    cfg: &ExperimentConfig,
    command: &str,
    net_seeds: BTreeMap<String, u64>,
    outputs: &[(PathBuf, String)],
) -> anyhow::Result<String> {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        library_version: scoresens::VERSION,
        command,
        seed: cfg.seed,
        net_seeds,
        config: cfg,
        outputs: outputs
            .iter()
            .map(|(p, _)| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&m)? + "\n")
}

/// Writes every artifact, creating the directory first.
pub fn write_all(dir: &Path, files: &[(PathBuf, String)]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (path, body) in files {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Markdown summary of a finished output directory.
pub fn report(dir: &Path) -> anyhow::Result<String> {
    let sens = dir.join("sensitivities.csv");
    let mut rdr = csv::Reader::from_path(&sens).with_context(|| format!("reading {}", sens.display()))?;
    // (model, functional, score) -> subset -> (estimate, ci_lo, ci_hi, m)
    type Row = (String, String, String, String);
    let mut groups: BTreeMap<(String, String, String), Vec<(Subset, Row)>> = BTreeMap::new();
    for rec in rdr.records() {
        let r = rec?;
        anyhow::ensure!(
            r.len() == 8,
            "{}: expected 8 columns, found {}",
            sens.display(),
            r.len()
        );
        let subset: Subset = r[3].parse()?;
        groups
            .entry((r[0].to_string(), r[1].to_string(), r[2].to_string()))
            .or_default()
            .push((
                subset,
                (r[4].to_string(), r[5].to_string(), r[6].to_string(), r[7].to_string()),
            ));
    }
    let mut md = String::from("# Sensitivity report\n\n");
    for ((model, functional, score), rows) in &groups {
        let _ = writeln!(md, "## {model}: {functional} with {score}\n");
        md.push_str("| information set | estimate | 90% CI | m |\n|---|---|---|---|\n");
        for (s, (est, lo, hi, m)) in rows {
            let ci = if lo.is_empty() {
                "-".to_string()
            } else {
                format!("[{}, {}]", short(lo), short(hi))
            };
            let _ = writeln!(md, "| {s} | {} | {ci} | {m} |", short(est));
        }
        md.push('\n');
        let n = rows.iter().flat_map(|(s, _)| s.labels()).max().unwrap_or(0);
        let lookup: BTreeMap<Vec<usize>, &str> = rows.iter().map(|(s, r)| (s.labels(), r.0.as_str())).collect();
        let any_pairs = rows.iter().any(|(s, _)| s.len() == 2);
        if n >= 2 && any_pairs {
            md.push_str("Single factors on the diagonal, pairs above it:\n\n|   |");
            for j in 1..=n {
                let _ = write!(md, " X{j} |");
            }
            md.push_str("\n|---|");
            md.push_str(&"---|".repeat(n));
            md.push('\n');
            for i in 1..=n {
                let _ = write!(md, "| X{i} |");
                for j in 1..=n {
                    let key = if i == j { vec![i] } else { vec![i, j] };
                    let cell = if j < i {
                        String::new()
                    } else {
                        lookup.get(&key).map(|v| short(v)).unwrap_or_default()
                    };
                    let _ = write!(md, " {cell} |");
                }
                md.push('\n');
            }
            md.push('\n');
        }
    }
    let inter = dir.join("interactions.csv");
    if inter.is_file() {
        let mut rdr = csv::Reader::from_path(&inter)?;
        md.push_str("## Interaction information\n\n| A | B | joint | A alone | B alone | interaction |\n|---|---|---|---|---|---|\n");
        for rec in rdr.records() {
            let r = rec?;
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} |",
                &r[0],
                &r[1],
                short(&r[2]),
                short(&r[3]),
                short(&r[4]),
                short(&r[5])
            );
        }
        md.push('\n');
    }
    if dir.join("murphy.csv").is_file() {
        md.push_str("Murphy curves: `murphy.csv`");
        if dir.join("murphy.svg").is_file() {
            md.push_str(", plotted in `murphy.svg`");
        }
        md.push_str(".\n");
    }
    Ok(md)
}

/// Three decimals for tables.
fn short(v: &str) -> String {
    v.parse::<f64>()
        .map(|x| format!("{x:.3}"))
        .unwrap_or_else(|_| v.to_string())
}
