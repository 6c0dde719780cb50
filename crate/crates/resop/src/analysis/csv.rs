//! CSV schemas for the analysis artifacts. Floats are written with Rust's
//! shortest round-trip formatting, so `parse(write(x)) == x` bit-exactly.

use super::{Ellipse, LabelDistribution, RankCurve};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("csv parse failure at line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

type Result<T> = std::result::Result<T, AnalysisError>;

fn err(line: usize, reason: impl Into<String>) -> AnalysisError {
    AnalysisError::Csv {
        line,
        reason: reason.into(),
    }
}

fn parse_field<T: std::str::FromStr>(line_no: usize, field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| err(line_no, format!("bad {what}: {field:?}")))
}

/// Schema: `rank,mean_distance,retrieval_size`.
pub fn write_rank_curve_csv(curve: &RankCurve) -> String {
    let mut out = String::from("rank,mean_distance,retrieval_size\n");
    for (r, d) in curve.ranks.iter().zip(curve.mean_distance.iter()) {
        out.push_str(&format!("{r},{d},{}\n", curve.retrieval_size));
    }
    out
}

pub fn parse_rank_curve_csv(text: &str) -> Result<RankCurve> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty document"))?;
    if header != "rank,mean_distance,retrieval_size" {
        return Err(err(1, format!("unexpected header {header:?}")));
    }
    let mut curve = RankCurve {
        ranks: Vec::new(),
        mean_distance: Vec::new(),
        retrieval_size: 0,
    };
    for (i, line) in lines {
        let line_no = i + 1;
        let mut parts = line.split(',');
        let mut next = |what: &str| {
            parts
                .next()
                .ok_or_else(|| err(line_no, format!("missing {what}")))
        };
        curve.ranks.push(parse_field(line_no, next("rank")?, "rank")?);
        curve
            .mean_distance
            .push(parse_field(line_no, next("mean_distance")?, "mean_distance")?);
        curve.retrieval_size = parse_field(line_no, next("retrieval_size")?, "retrieval_size")?;
        if parts.next().is_some() {
            return Err(err(line_no, "trailing fields"));
        }
    }
    if curve.ranks.is_empty() {
        return Err(err(2, "no data rows"));
    }
    Ok(curve)
}

/// Schema: `set,point_index,pc1,pc2` with `set` in `{train, test}`.
pub fn write_distribution_points_csv(ld: &LabelDistribution) -> String {
    let mut out = String::from("set,point_index,pc1,pc2\n");
    for (name, points) in [("train", &ld.train_points), ("test", &ld.test_points)] {
        for (i, p) in points.iter().enumerate() {
            out.push_str(&format!("{name},{i},{},{}\n", p[0], p[1]));
        }
    }
    out
}

/// Returns the `(train, test)` projected point sets.
pub fn parse_distribution_points_csv(text: &str) -> Result<(Vec<[f64; 2]>, Vec<[f64; 2]>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty document"))?;
    if header != "set,point_index,pc1,pc2" {
        return Err(err(1, format!("unexpected header {header:?}")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(err(line_no, format!("expected 4 fields, got {}", parts.len())));
        }
        let point = [
            parse_field(line_no, parts[2], "pc1")?,
            parse_field(line_no, parts[3], "pc2")?,
        ];
        let bucket = match parts[0] {
            "train" => &mut train,
            "test" => &mut test,
            other => return Err(err(line_no, format!("unknown set {other:?}"))),
        };
        let idx: usize = parse_field(line_no, parts[1], "point_index")?;
        if idx != bucket.len() {
            return Err(err(line_no, format!("point_index {idx} out of order")));
        }
        bucket.push(point);
    }
    Ok((train, test))
}

/// Schema: `set,stat,axis,value` with stats `mean`, `std`, `min`, `max` per
/// PCA axis.
pub fn write_distribution_stats_csv(ld: &LabelDistribution) -> String {
    let mut out = String::from("set,stat,axis,value\n");
    let mut emit = |set: &str, std: &Ellipse, range: &Ellipse| {
        for axis in 0..2 {
            out.push_str(&format!("{set},mean,{},{}\n", axis + 1, std.center[axis]));
            out.push_str(&format!("{set},std,{},{}\n", axis + 1, std.radii[axis]));
            out.push_str(&format!(
                "{set},min,{},{}\n",
                axis + 1,
                range.center[axis] - range.radii[axis]
            ));
            out.push_str(&format!(
                "{set},max,{},{}\n",
                axis + 1,
                range.center[axis] + range.radii[axis]
            ));
        }
    };
    emit("train", &ld.train_std, &ld.train_range);
    emit("test", &ld.test_std, &ld.test_range);
    out
}

/// Returns `(set, stat, axis, value)` rows in file order.
pub fn parse_distribution_stats_csv(text: &str) -> Result<Vec<(String, String, usize, f64)>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty document"))?;
    if header != "set,stat,axis,value" {
        return Err(err(1, format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(err(line_no, format!("expected 4 fields, got {}", parts.len())));
        }
        rows.push((
            parts[0].to_string(),
            parts[1].to_string(),
            parse_field(line_no, parts[2], "axis")?,
            parse_field(line_no, parts[3], "value")?,
        ));
    }
    Ok(rows)
}
