//! CSV and JSON artifacts. Every number is written with 17 significant digits
//! so repeated runs compare byte for byte.

use std::path::Path;

use serde::Serialize;
use serde_json::value::RawValue;

use crate::cae::{CaeTrajectoryStats, TrainHistory};
use crate::error::Result;
use crate::mi::MiProfile;
use crate::pca::EvCurves;
use crate::phase::RotationStats;
use crate::stats::{CorrelationHistogram, TransitionSeries, UnitCorrelationMatrix};
use crate::teleport::{MseSpace, TeleportResult};

/// `{:.16e}` for finite values; `nan`, `inf`, `-inf` otherwise.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(std::io::Error::from)?;
    for r in rows {
        w.write_record(&r).map_err(std::io::Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// `sublayer,unit,sort_rank,mean`; `order` lists units by ascending rank.
pub fn means_csv(means: &[Vec<f64>], order: &[usize]) -> Result<String> {
    let mut rank = vec![0; order.len()];
    for (r, &u) in order.iter().enumerate() {
        rank[u] = r;
    }
    let rows = means.iter().enumerate().flat_map(|(s, row)| {
        let rank = &rank;
        row.iter().enumerate().map(move |(u, &m)| {
            vec![s.to_string(), u.to_string(), rank[u].to_string(), fmt_num(m)]
        })
    });
    csv_string(&["sublayer", "unit", "sort_rank", "mean"], rows.collect::<Vec<_>>())
}

/// `unit,transition,transition_kind,r`; undefined correlations are empty.
pub fn correlations_csv(m: &UnitCorrelationMatrix) -> Result<String> {
    let rows = (0..m.units).flat_map(|u| {
        (0..m.transitions).map(move |s| {
            vec![
                u.to_string(),
                s.to_string(),
                m.kinds[s].to_string(),
                fmt_opt(m.get(u, s)),
            ]
        })
    });
    csv_string(&["unit", "transition", "transition_kind", "r"], rows.collect::<Vec<_>>())
}

/// `unit,bin,bin_lo,bin_hi,count,density`.
pub fn histogram_csv(h: &CorrelationHistogram) -> Result<String> {
    let w = h.bin_width();
    let mut rows = Vec::new();
    for (u, (counts, dens)) in h.counts.iter().zip(&h.density).enumerate() {
        for b in 0..h.n_bins {
            rows.push(vec![
                u.to_string(),
                b.to_string(),
                fmt_num(b as f64 * w),
                fmt_num(if b + 1 == h.n_bins { 1.0 } else { (b + 1) as f64 * w }),
                counts[b].to_string(),
                fmt_num(dens[b]),
            ]);
        }
    }
    csv_string(&["unit", "bin", "bin_lo", "bin_hi", "count", "density"], rows)
}

/// `transition_index,transition_kind,mean,sd`.
pub fn series_csv(t: &TransitionSeries) -> Result<String> {
    let rows = (0..t.mean.len()).map(|s| {
        vec![
            s.to_string(),
            t.kinds[s].to_string(),
            fmt_num(t.mean[s]),
            fmt_num(t.sd[s]),
        ]
    });
    csv_string(&["transition_index", "transition_kind", "mean", "sd"], rows.collect::<Vec<_>>())
}

/// `unit,transition,mi_nats,bandwidth_x,bandwidth_y,flag`.
pub fn mi_csv(p: &MiProfile) -> Result<String> {
    let mut rows = Vec::new();
    for (row, &u) in p.units.iter().enumerate() {
        for s in 0..p.transitions {
            rows.push(match &p.entries[row * p.transitions + s] {
                Ok(e) => vec![
                    u.to_string(),
                    s.to_string(),
                    fmt_num(e.value),
                    fmt_num(e.bandwidth_x),
                    fmt_num(e.bandwidth_y),
                    "ok".into(),
                ],
                Err(_) => vec![
                    u.to_string(),
                    s.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    "degenerate".into(),
                ],
            });
        }
    }
    csv_string(&["unit", "transition", "mi_nats", "bandwidth_x", "bandwidth_y", "flag"], rows)
}

/// `transition,mean_mi_nats`.
pub fn mi_mean_csv(p: &MiProfile) -> Result<String> {
    let rows = p
        .mean
        .iter()
        .enumerate()
        .map(|(s, m)| vec![s.to_string(), fmt_opt(*m)]);
    csv_string(&["transition", "mean_mi_nats"], rows.collect::<Vec<_>>())
}

/// `unit,rotations,null_mean,null_sd,z,p,skipped_segments`; units whose
/// observed trajectory is degenerate have empty fields.
pub fn rotations_csv(units: &[usize], stats: &[Result<RotationStats>]) -> Result<String> {
    let rows = units.iter().zip(stats).map(|(&u, st)| match st {
        Ok(s) => vec![
            u.to_string(),
            fmt_num(s.rotations),
            fmt_num(s.null_mean),
            fmt_num(s.null_sd),
            fmt_num(s.z_score),
            fmt_num(s.p_value),
            s.skipped_segments.to_string(),
        ],
        Err(_) => {
            let mut r = vec![u.to_string()];
            r.extend(std::iter::repeat_n(String::new(), 6));
            r
        }
    });
    csv_string(
        &["unit", "rotations", "null_mean", "null_sd", "z", "p", "skipped_segments"],
        rows.collect::<Vec<_>>(),
    )
}

/// `component,ratio,cumulative`.
pub fn pca_cumulative_csv(ratios: &[f64], curves: &EvCurves) -> Result<String> {
    let rows = ratios
        .iter()
        .zip(&curves.cumulative)
        .enumerate()
        .map(|(k, (r, c))| vec![(k + 1).to_string(), fmt_num(*r), fmt_num(*c)]);
    csv_string(&["component", "ratio", "cumulative"], rows.collect::<Vec<_>>())
}

/// `sublayer,n_components,explained_variance`.
pub fn pca_sublayer_csv(curves: &EvCurves) -> Result<String> {
    let rows = curves.per_sublayer.iter().enumerate().map(|(s, e)| {
        vec![s.to_string(), curves.n_components.to_string(), fmt_opt(*e)]
    });
    csv_string(&["sublayer", "n_components", "explained_variance"], rows.collect::<Vec<_>>())
}

/// `sample,sublayer,pc1,pc2`.
pub fn projection_csv(points: &[Vec<f64>], sublayers: usize) -> Result<String> {
    let rows = points.iter().enumerate().map(|(i, p)| {
        vec![
            (i / sublayers).to_string(),
            (i % sublayers).to_string(),
            fmt_num(p[0]),
            fmt_num(p[1]),
        ]
    });
    csv_string(&["sample", "sublayer", "pc1", "pc2"], rows.collect::<Vec<_>>())
}

/// `epoch,train_loss,val_loss`.
pub fn history_csv(h: &TrainHistory) -> Result<String> {
    let rows = h
        .train_loss
        .iter()
        .zip(&h.val_loss)
        .enumerate()
        .map(|(e, (t, v))| vec![(e + 1).to_string(), fmt_num(*t), fmt_num(*v)]);
    csv_string(&["epoch", "train_loss", "val_loss"], rows.collect::<Vec<_>>())
}

/// `sublayer,z0..,distance_to_next,explained_variance`.
pub fn cae_trajectory_csv(t: &CaeTrajectoryStats) -> Result<String> {
    let dim = t.mean_trajectory.first().map_or(0, Vec::len);
    let mut header = vec!["sublayer".to_string()];
    header.extend((0..dim).map(|k| format!("z{k}")));
    header.push("distance_to_next".into());
    header.push("explained_variance".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = t.mean_trajectory.iter().enumerate().map(|(s, z)| {
        let mut r = vec![s.to_string()];
        r.extend(z.iter().map(|&v| fmt_num(v)));
        r.push(t.distances.get(s).map(|&d| fmt_num(d)).unwrap_or_default());
        r.push(fmt_opt(t.explained_variance[s]));
        r
    });
    csv_string(&header, rows.collect::<Vec<_>>())
}

/// A JSON number with 17 significant digits; non-finite values become `null`.
pub fn json_num(x: f64) -> Box<RawValue> {
    let text = if x.is_finite() { format!("{x:.16e}") } else { "null".into() };
    RawValue::from_string(text).expect("formatted number is valid JSON")
}

fn json_pair(p: [f64; 2]) -> [Box<RawValue>; 2] {
    [json_num(p[0]), json_num(p[1])]
}

#[derive(Serialize)]
struct RunJson {
    point: [Box<RawValue>; 2],
    trajectory: Vec<[Box<RawValue>; 2]>,
    quiver: [Box<RawValue>; 2],
    mse: Box<RawValue>,
}

#[derive(Serialize)]
struct TeleportJson {
    layer: usize,
    injection_sublayer: usize,
    horizon: usize,
    mse_space: &'static str,
    grid_n: usize,
    range_x: [Box<RawValue>; 2],
    range_y: [Box<RawValue>; 2],
    grid: Vec<[Box<RawValue>; 2]>,
    control: Vec<[Box<RawValue>; 2]>,
    runs: Vec<RunJson>,
}

pub fn teleport_json(r: &TeleportResult) -> Result<String> {
    let doc = TeleportJson {
        layer: r.layer,
        injection_sublayer: r.injection_sublayer,
        horizon: r.horizon,
        mse_space: match r.mse_space {
            MseSpace::Pca2 => "pca2",
            MseSpace::Full => "full",
        },
        grid_n: r.grid.n,
        range_x: json_pair([r.grid.range_x.0, r.grid.range_x.1]),
        range_y: json_pair([r.grid.range_y.0, r.grid.range_y.1]),
        grid: r.grid.points.iter().map(|&p| json_pair(p)).collect(),
        control: r.control.iter().map(|&p| json_pair(p)).collect(),
        runs: r
            .runs
            .iter()
            .map(|run| RunJson {
                point: json_pair(run.point),
                trajectory: run.trajectory.iter().map(|&p| json_pair(p)).collect(),
                quiver: json_pair(run.quiver),
                mse: json_num(run.mse),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).map_err(std::io::Error::from)?;
    s.push('\n');
    Ok(s)
}
