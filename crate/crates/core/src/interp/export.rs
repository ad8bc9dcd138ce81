// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::Tensor;

/// One `layers × columns` matrix to export.
#[derive(Debug, Clone, Copy)]
pub struct MatrixExport<'a> {
    pub kind: &'a str,
    pub matrix: &'a Tensor,
    /// Column labels (positions or spans).
    pub labels: &'a [String],
}

fn check(m: &MatrixExport<'_>) -> Result<()> {
    if m.matrix.shape().len() != 2 || m.matrix.cols() != m.labels.len() {
        return Err(Error::Dimension {
            op: "matrix export",
            lhs: m.matrix.shape().to_vec(),
            rhs: vec![m.labels.len()],
        });
    }
    Ok(())
}

/// Long-format table: `matrix,layer,column,label,score`.
pub fn matrices_to_csv(matrices: &[MatrixExport<'_>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format {
        path: "<csv>".into(),
        msg: e.to_string(),
    };
    w.write_record(["matrix", "layer", "column", "label", "score"]).map_err(csv_err)?;
    for m in matrices {
        check(m)?;
        for l in 0..m.matrix.rows() {
            for (j, label) in m.labels.iter().enumerate() {
                w.write_record([
                    m.kind.to_string(),
                    l.to_string(),
                    j.to_string(),
                    label.clone(),
                    format!("{:e}", m.matrix.get2(l, j)),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Format {
        path: "<csv>".into(),
        msg: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv(path: &Path, matrices: &[MatrixExport<'_>]) -> Result<()> {
    write_atomic(path, matrices_to_csv(matrices)?.as_bytes())
}

const CELL: usize = 28;
const LEFT: usize = 90;
const TOP: usize = 36;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Heatmap with layers along the x axis and columns (positions or spans)
/// along the y axis. Shade is linear in the value between the matrix
/// minimum (white) and maximum (black).
pub fn heatmap_svg(title: &str, m: &MatrixExport<'_>) -> Result<String> {
    check(m)?;
    let (layers, rows) = (m.matrix.rows(), m.matrix.cols());
    let data = m.matrix.data();
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let width = LEFT + layers * CELL + 20;
    let height = TOP + rows * CELL + 30;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{LEFT}" y="16">{} ({})</text>"#, escape(title), escape(m.kind));
    for l in 0..layers {
        for (j, _) in m.labels.iter().enumerate() {
            let v = m.matrix.get2(l, j);
            let t = if span > 0.0 && span.is_finite() { (v - lo) / span } else { 0.0 };
            let g = (255.0 * (1.0 - t)).round().clamp(0.0, 255.0) as u8;
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="rgb({g},{g},{g})" stroke="#ccc"><title>layer {l}, {}: {v:.6}</title></rect>"##,
                LEFT + l * CELL,
                TOP + j * CELL,
                escape(&m.labels[j]),
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{l}</text>"#,
            LEFT + l * CELL + CELL / 2,
            TOP + rows * CELL + 14
        );
    }
    for (j, label) in m.labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 6,
            TOP + j * CELL + CELL / 2 + 4,
            escape(label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">layer</text>"#,
        LEFT + layers * CELL / 2,
        height - 2
    );
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_heatmap(path: &Path, title: &str, m: &MatrixExport<'_>) -> Result<()> {
    write_atomic(path, heatmap_svg(title, m)?.as_bytes())
}
