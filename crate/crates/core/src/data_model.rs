//! Spatiotemporal well-sample data: ingestion, validation, response
//! transforms and the convex-hull prediction region.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One sample: a concentration measured at a well at a point in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub well_id: String,
    pub s1: f64,
    pub s2: f64,
    pub t: f64,
    pub value: f64,
}

/// Response transform applied before modelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    #[default]
    Log1p,
}

impl Transform {
    pub fn forward(self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Log1p => v.ln_1p(),
        }
    }

    pub fn inverse(self, z: f64) -> f64 {
        match self {
            Transform::Identity => z,
            Transform::Log1p => z.exp_m1(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Log1p => "log1p",
        }
    }
}

impl std::str::FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "none" => Ok(Transform::Identity),
            "log1p" => Ok(Transform::Log1p),
            other => Err(Error::Config(format!("unknown transform `{other}`"))),
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    fn of(values: impl Iterator<Item = f64>) -> Range {
        values.fold(
            Range {
                lo: f64::INFINITY,
                hi: f64::NEG_INFINITY,
            },
            |r, v| Range {
                lo: r.lo.min(v),
                hi: r.hi.max(v),
            },
        )
    }
}

/// Well-indexed observations. Immutable once built.
#[derive(Debug, Clone)]
pub struct Dataset {
    observations: Vec<Observation>,
    wells: BTreeMap<String, Vec<usize>>,
    transform: Transform,
    ranges: [Range; 3],
    time_origin: Option<NaiveDate>,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>, transform: Transform) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Data("dataset has no observations".into()));
        }
        let mut wells: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, obs) in observations.iter().enumerate() {
            let row = i + 1;
            for (name, v) in [("s1", obs.s1), ("s2", obs.s2), ("t", obs.t), ("value", obs.value)] {
                if !v.is_finite() {
                    return Err(Error::Row {
                        row,
                        reason: format!("{name} is not finite ({v})"),
                    });
                }
            }
            if transform == Transform::Log1p && obs.value < 0.0 {
                return Err(Error::Row {
                    row,
                    reason: format!("value {} is negative; log(value + 1) needs value >= 0", obs.value),
                });
            }
            wells.entry(obs.well_id.clone()).or_default().push(i);
        }
        let ranges = [
            Range::of(observations.iter().map(|o| o.s1)),
            Range::of(observations.iter().map(|o| o.s2)),
            Range::of(observations.iter().map(|o| o.t)),
        ];
        Ok(Dataset {
            observations,
            wells,
            transform,
            ranges,
            time_origin: None,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Well id → indices of its observations, in file order.
    pub fn wells(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.wells
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    /// Data ranges of (s1, s2, t).
    pub fn ranges(&self) -> [Range; 3] {
        self.ranges
    }

    /// Calendar date corresponding to `t = 0` when times were read as dates.
    pub fn time_origin(&self) -> Option<NaiveDate> {
        self.time_origin
    }

    /// Working (transformed) response vector.
    pub fn response(&self) -> Vec<f64> {
        self.observations
            .iter()
            .map(|o| self.transform.forward(o.value))
            .collect()
    }

    pub fn coordinates(&self) -> Vec<[f64; 3]> {
        self.observations.iter().map(|o| [o.s1, o.s2, o.t]).collect()
    }

    /// Keeps only the rows listed in `rows`, preserving their order.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        let obs = rows.iter().map(|&i| self.observations[i].clone()).collect();
        let mut ds = Dataset::new(obs, self.transform)?;
        ds.time_origin = self.time_origin;
        Ok(ds)
    }

    pub fn with_transform(&self, transform: Transform) -> Result<Dataset> {
        let mut ds = Dataset::new(self.observations.clone(), transform)?;
        ds.time_origin = self.time_origin;
        Ok(ds)
    }
}

/// Element-wise working response for `ds`. Fails on negative values under `log1p`.
pub fn apply_transform(ds: &Dataset) -> Result<Vec<f64>> {
    ds.observations
        .iter()
        .enumerate()
        .map(|(i, o)| {
            if ds.transform == Transform::Log1p && o.value < 0.0 {
                Err(Error::Row {
                    row: i + 1,
                    reason: format!("negative value {}", o.value),
                })
            } else {
                Ok(ds.transform.forward(o.value))
            }
        })
        .collect()
}

/// Names of the CSV columns holding each field.
#[derive(Debug, Clone)]
pub struct ColumnSpec {
    pub well_id: String,
    pub s1: String,
    pub s2: String,
    pub t: String,
    pub value: String,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            well_id: "well_id".into(),
            s1: "s1".into(),
            s2: "s2".into(),
            t: "t".into(),
            value: "value".into(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, columns: &ColumnSpec, transform: Transform) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, columns, transform)
}

pub fn read_csv<R: Read>(reader: R, columns: &ColumnSpec, transform: Transform) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let idx = [
        find(&columns.well_id)?,
        find(&columns.s1)?,
        find(&columns.s2)?,
        find(&columns.t)?,
        find(&columns.value)?,
    ];

    let mut raw = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let num = |k: usize, name: &str| -> Result<f64> {
            field(k).parse::<f64>().map_err(|_| Error::Row {
                row,
                reason: format!("{name} `{}` is not a number", field(k)),
            })
        };
        raw.push((
            field(0).to_string(),
            num(1, "s1")?,
            num(2, "s2")?,
            field(3).to_string(),
            num(4, "value")?,
        ));
    }

    let (times, origin) = parse_times(raw.iter().map(|r| r.3.as_str()))?;
    let obs = raw
        .into_iter()
        .zip(times)
        .map(|((well_id, s1, s2, _, value), t)| Observation {
            well_id,
            s1,
            s2,
            t,
            value,
        })
        .collect();
    let mut ds = Dataset::new(obs, transform)?;
    ds.time_origin = origin;
    Ok(ds)
}

/// Numeric times pass through; ISO dates become days since the earliest one.
fn parse_times<'a>(fields: impl Iterator<Item = &'a str>) -> Result<(Vec<f64>, Option<NaiveDate>)> {
    let fields: Vec<&str> = fields.collect();
    if fields.iter().all(|f| f.parse::<f64>().is_ok()) {
        return Ok((fields.iter().map(|f| f.parse().unwrap()).collect(), None));
    }
    let stamps = fields
        .iter()
        .enumerate()
        .map(|(i, f)| {
            parse_date(f).ok_or_else(|| Error::Row {
                row: i + 1,
                reason: format!("t `{f}` is neither a number nor an ISO-8601 date"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let first = stamps.iter().min().copied().expect("non-empty");
    let days = stamps
        .iter()
        .map(|s| (*s - first).num_seconds() as f64 / 86_400.0)
        .collect();
    Ok((days, Some(first.date())))
}

fn parse_date(s: &str) -> Option<NaiveDateTime> {
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return d.and_hms_opt(0, 0, 0);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    chrono::DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_utc())
}

/// Writes the canonical `well_id,s1,s2,t,value` CSV.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["well_id", "s1", "s2", "t", "value"])?;
    for o in &ds.observations {
        w.write_record([
            o.well_id.clone(),
            o.s1.to_string(),
            o.s2.to_string(),
            o.t.to_string(),
            o.value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Convex spatial polygon of the wells times the sampled time interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullRegion {
    /// Counter-clockwise vertices, no repeated closing vertex.
    pub polygon: Vec<[f64; 2]>,
    pub time: Range,
}

impl HullRegion {
    pub fn area(&self) -> f64 {
        polygon_area(&self.polygon)
    }

    /// Inside-or-on test with a small relative tolerance.
    pub fn contains_point(&self, s1: f64, s2: f64) -> bool {
        let poly = &self.polygon;
        let scale = poly
            .iter()
            .map(|p| p[0].abs().max(p[1].abs()))
            .fold(1.0_f64, f64::max);
        let eps = 1e-12 * scale * scale;
        (0..poly.len()).all(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            cross(a, b, [s1, s2]) >= -eps
        })
    }

    pub fn contains(&self, s1: f64, s2: f64, t: f64) -> bool {
        self.time.contains(t) && self.contains_point(s1, s2)
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        .abs()
}

/// Monotone-chain hull of a point set. Collinear boundary points are dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::DegenerateHull(format!(
            "{} distinct well location(s); at least 3 non-collinear are needed",
            pts.len()
        )));
    }
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    let span = pts
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(1.0);
    if lower.len() < 3 || polygon_area(&lower) <= 1e-12 * span * span {
        return Err(Error::DegenerateHull("well locations are collinear".into()));
    }
    Ok(lower)
}

/// Convex hull of the distinct well locations plus `[min t, max t]`.
pub fn convex_hull_region(ds: &Dataset) -> Result<HullRegion> {
    let pts: Vec<[f64; 2]> = ds.observations.iter().map(|o| [o.s1, o.s2]).collect();
    Ok(HullRegion {
        polygon: convex_hull(&pts)?,
        time: ds.ranges[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(w: &str, s1: f64, s2: f64, t: f64, v: f64) -> Observation {
        Observation {
            well_id: w.into(),
            s1,
            s2,
            t,
            value: v,
        }
    }

    #[test]
    fn three_rows_two_wells() {
        let csv = "well_id,s1,s2,t,value\nA,0,0,0,1\nB,1,0,0,2\nA,0,0,1,3\n";
        let ds = read_csv(csv.as_bytes(), &ColumnSpec::default(), Transform::Log1p).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.wells().len(), 2);
        assert_eq!(ds.wells()["A"], vec![0, 2]);
    }

    #[test]
    fn negative_value_under_log1p_names_the_row() {
        let csv = "well_id,s1,s2,t,value\nA,0,0,0,1\nB,1,0,0,-1\n";
        let err = read_csv(csv.as_bytes(), &ColumnSpec::default(), Transform::Log1p).unwrap_err();
        assert!(matches!(err, Error::Row { row: 2, .. }), "{err}");
        // identity accepts it
        read_csv(csv.as_bytes(), &ColumnSpec::default(), Transform::Identity).unwrap();
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "well_id,s1,s2,value\nA,0,0,1\n";
        let err = read_csv(csv.as_bytes(), &ColumnSpec::default(), Transform::Log1p).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "t"));
    }

    #[test]
    fn non_finite_value_rejected() {
        let csv = "well_id,s1,s2,t,value\nA,0,0,0,NaN\n";
        let err = read_csv(csv.as_bytes(), &ColumnSpec::default(), Transform::Identity).unwrap_err();
        assert!(matches!(err, Error::Row { row: 1, .. }));
    }

    #[test]
    fn iso_dates_become_days_since_first() {
        let csv = "well_id,s1,s2,t,value\nA,0,0,2020-01-11,1\nB,1,0,2020-01-01,2\nA,0,0,2021-01-01,3\n";
        let ds = read_csv(csv.as_bytes(), &ColumnSpec::default(), Transform::Log1p).unwrap();
        let t: Vec<f64> = ds.observations().iter().map(|o| o.t).collect();
        assert_eq!(t, vec![10.0, 0.0, 366.0]);
        assert_eq!(ds.time_origin(), NaiveDate::from_ymd_opt(2020, 1, 1));
    }

    #[test]
    fn custom_column_names() {
        let csv = "id,x,y,day,conc\nA,0,0,0,1\n";
        let cols = ColumnSpec {
            well_id: "id".into(),
            s1: "x".into(),
            s2: "y".into(),
            t: "day".into(),
            value: "conc".into(),
        };
        let ds = read_csv(csv.as_bytes(), &cols, Transform::Log1p).unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn transform_values() {
        let e = std::f64::consts::E;
        let ds = Dataset::new(
            vec![
                obs("a", 0., 0., 0., 0.0),
                obs("a", 0., 0., 1., e - 1.0),
                obs("a", 0., 0., 2., 9.0),
                obs("a", 0., 0., 3., 99.0),
            ],
            Transform::Log1p,
        )
        .unwrap();
        let y = apply_transform(&ds).unwrap();
        assert_eq!(y[0], 0.0);
        assert!((y[1] - 1.0).abs() < 1e-15);
        assert!((y[2] - 10f64.ln()).abs() < 1e-15);
        assert!((y[3] - 100f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn log1p_round_trip() {
        for v in [0.0, 1e-9, 0.5, 3.0, 1e3, 2.5e6] {
            let z = Transform::Log1p.forward(v);
            let back = Transform::Log1p.inverse(z);
            assert!((back - v).abs() <= 1e-12 * v.max(1e-300), "{v} -> {back}");
        }
    }

    #[test]
    fn duplicate_well_time_rows_are_kept() {
        let ds = Dataset::new(
            vec![obs("a", 0., 0., 1., 1.0), obs("a", 0., 0., 1., 1.2)],
            Transform::Log1p,
        )
        .unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.wells()["a"].len(), 2);
    }

    #[test]
    fn triangle_hull() {
        let ds = Dataset::new(
            vec![
                obs("a", 0., 0., 0., 1.),
                obs("b", 1., 0., 2., 1.),
                obs("c", 0., 1., 5., 1.),
            ],
            Transform::Log1p,
        )
        .unwrap();
        let h = convex_hull_region(&ds).unwrap();
        assert!((h.area() - 0.5).abs() < 1e-15);
        assert_eq!(h.time, Range { lo: 0.0, hi: 5.0 });
    }

    #[test]
    fn square_hull_drops_interior_point() {
        let pts = [[0., 0.], [1., 0.], [1., 1.], [0., 1.], [0.5, 0.5]];
        let hull = convex_hull(&pts).unwrap();
        assert_eq!(hull.len(), 4);
        assert!(!hull.contains(&[0.5, 0.5]));
        assert!((polygon_area(&hull) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_hulls() {
        assert!(matches!(
            convex_hull(&[[0., 0.], [1., 1.]]),
            Err(Error::DegenerateHull(_))
        ));
        assert!(matches!(
            convex_hull(&[[0., 0.], [1., 1.], [2., 2.], [0., 0.]]),
            Err(Error::DegenerateHull(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let ds = Dataset::new(
            vec![obs("w1", 0.25, 1.5, 0.1, 3.0), obs("w2", 1.0 / 3.0, 2.0, 0.7, 0.0)],
            Transform::Log1p,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &ColumnSpec::default(), Transform::Log1p).unwrap();
        assert_eq!(back.observations(), ds.observations());
    }
}
