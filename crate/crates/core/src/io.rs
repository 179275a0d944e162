//! File formats: `crashes.csv`, `detectors.csv`, `labels.csv`,
//! `predictions.csv` and the `samples.ndjson` interchange format.

use std::collections::HashSet;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, VfgError};
use crate::identify::{CrashLabel, LabelKind};
use crate::predictor::Prediction;
use crate::schema::{
    CrashRecord, CrashType, DetectorReading, Lighting, Minute, RoadSurface, SampleWindow, Severity, WindowSchema,
};

pub const CRASH_HEADER: [&str; 8] =
    ["crash_id", "timestamp", "route", "milepost", "type", "severity", "lighting", "surface"];
pub const DETECTOR_HEADER: [&str; 8] =
    ["detector_id", "route", "milepost", "lane", "timestamp", "flow", "occupancy", "speed"];
pub const PREDICTION_HEADER: [&str; 5] = ["sample_id", "p", "label", "time_gap_h", "dist_gap_mi"];
pub const LABEL_HEADER: [&str; 5] = ["crash_id", "label", "primary_id", "time_gap_h", "dist_gap_mi"];

#[derive(Debug, Deserialize, Serialize)]
struct CrashRow {
    crash_id: String,
    timestamp: String,
    route: String,
    milepost: f64,
    #[serde(rename = "type")]
    crash_type: u8,
    severity: u8,
    lighting: u8,
    surface: u8,
}

#[derive(Debug, Deserialize, Serialize)]
struct DetectorRow {
    detector_id: String,
    route: String,
    milepost: f64,
    lane: u32,
    timestamp: String,
    flow: f64,
    occupancy: f64,
    speed: f64,
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str], file: &str) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(VfgError::data(format!(
            "{file}: header {:?}, expected {:?}",
            header.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    Ok(())
}

pub fn read_crashes<R: Read>(input: R) -> Result<Vec<CrashRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut reader, &CRASH_HEADER, "crashes.csv")?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in reader.deserialize::<CrashRow>() {
        let row = row?;
        if !seen.insert(row.crash_id.clone()) {
            return Err(VfgError::data(format!("duplicate crash_id {}", row.crash_id)));
        }
        if !(row.milepost >= 0.0 && row.milepost.is_finite()) {
            return Err(VfgError::data(format!("crash {}: milepost {}", row.crash_id, row.milepost)));
        }
        out.push(CrashRecord {
            timestamp: Minute::parse(&row.timestamp)?,
            crash_type: CrashType::from_code(row.crash_type)?,
            severity: Severity::from_code(row.severity)?,
            lighting: Lighting::from_code(row.lighting)?,
            surface: RoadSurface::from_code(row.surface)?,
            crash_id: row.crash_id,
            route: row.route,
            milepost: row.milepost,
        });
    }
    Ok(out)
}

pub fn write_crashes<W: Write>(out: W, crashes: &[CrashRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in crashes {
        w.serialize(CrashRow {
            crash_id: c.crash_id.clone(),
            timestamp: c.timestamp.to_string(),
            route: c.route.clone(),
            milepost: c.milepost,
            crash_type: c.crash_type.code(),
            severity: c.severity.code(),
            lighting: c.lighting.code(),
            surface: c.surface.code(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_detectors<R: Read>(input: R) -> Result<Vec<DetectorReading>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut reader, &DETECTOR_HEADER, "detectors.csv")?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in reader.deserialize::<DetectorRow>() {
        let row = row?;
        let ts = Minute::parse(&row.timestamp)?;
        if !(0.0..=100.0).contains(&row.occupancy) {
            return Err(VfgError::data(format!(
                "detector {} at {}: occupancy {} outside [0, 100]",
                row.detector_id, row.timestamp, row.occupancy
            )));
        }
        if !(row.flow >= 0.0 && row.speed >= 0.0 && row.flow.is_finite() && row.speed.is_finite()) {
            return Err(VfgError::data(format!(
                "detector {} at {}: negative or non-finite flow/speed",
                row.detector_id, row.timestamp
            )));
        }
        if !seen.insert((row.detector_id.clone(), row.lane, ts)) {
            return Err(VfgError::data(format!(
                "duplicate reading for detector {} lane {} at {}",
                row.detector_id, row.lane, row.timestamp
            )));
        }
        out.push(DetectorReading {
            detector_id: row.detector_id,
            route: row.route,
            milepost: row.milepost,
            lane: row.lane,
            timestamp: ts,
            flow: row.flow,
            occupancy: row.occupancy,
            speed: row.speed,
        });
    }
    Ok(out)
}

pub fn write_detectors<W: Write>(out: W, readings: &[DetectorReading]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in readings {
        w.serialize(DetectorRow {
            detector_id: r.detector_id.clone(),
            route: r.route.clone(),
            milepost: r.milepost,
            lane: r.lane,
            timestamp: r.timestamp.to_string(),
            flow: r.flow,
            occupancy: r.occupancy,
            speed: r.speed,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Wire form of [`SampleWindow`]: static features as explicit one-hot
/// vectors and the activation flags as `data_gen_flag`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub crash_id: String,
    #[serde(rename = "static")]
    pub static_one_hot: Vec<Vec<f64>>,
    /// `t_max` rows (time steps) of `n_vars` values.
    pub dynamic: Vec<Vec<f64>>,
    pub data_gen_flag: Vec<f64>,
    pub length: usize,
    pub is_secondary: bool,
    pub time_gap_h: Option<f64>,
    pub dist_gap_mi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_static: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub generated: bool,
}

impl SampleRecord {
    pub fn from_window(s: &SampleWindow, schema: &WindowSchema) -> Self {
        let static_one_hot = schema
            .group_sizes()
            .iter()
            .zip(&s.categories)
            .map(|(&g, &c)| (0..g).map(|i| if i == c { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            id: s.id.clone(),
            crash_id: s.crash_id.clone(),
            static_one_hot,
            dynamic: s.dynamic.clone(),
            data_gen_flag: s.flags.clone(),
            length: s.length,
            is_secondary: s.is_secondary,
            time_gap_h: s.time_gap_h,
            dist_gap_mi: s.dist_gap_mi,
            pseudo_static: s.pseudo_static.as_ref().map(|p| p.iter().map(|&(a, b)| [a, b]).collect()),
            generated: s.generated,
        }
    }

    pub fn into_window(self, schema: &WindowSchema) -> Result<SampleWindow> {
        let sizes = schema.group_sizes();
        if self.static_one_hot.iter().map(Vec::len).ne(sizes.iter().copied()) {
            return Err(VfgError::data(format!("sample {}: static groups do not match widths {sizes:?}", self.id)));
        }
        let mut categories = Vec::with_capacity(self.static_one_hot.len());
        for (g, group) in self.static_one_hot.iter().enumerate() {
            let ones: Vec<usize> = group.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect();
            let zeros = group.iter().filter(|&&v| v == 0.0).count();
            if ones.len() != 1 || zeros + 1 != group.len() {
                return Err(VfgError::data(format!("sample {}: static group {g} is not one-hot", self.id)));
            }
            categories.push(ones[0]);
        }
        let window = SampleWindow {
            id: self.id,
            crash_id: self.crash_id,
            categories,
            dynamic: self.dynamic,
            flags: self.data_gen_flag,
            length: self.length,
            is_secondary: self.is_secondary,
            time_gap_h: self.time_gap_h,
            dist_gap_mi: self.dist_gap_mi,
            pseudo_static: self.pseudo_static.map(|p| p.into_iter().map(|[a, b]| (a, b)).collect()),
            generated: self.generated,
        };
        window.validate(schema)?;
        Ok(window)
    }
}

pub fn write_samples<W: Write>(mut out: W, samples: &[SampleWindow], schema: &WindowSchema) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, &SampleRecord::from_window(s, schema))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_samples<R: BufRead>(input: R, schema: &WindowSchema) -> Result<Vec<SampleWindow>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| VfgError::data(format!("samples line {}: {e}", n + 1)))?;
        out.push(rec.into_window(schema)?);
    }
    Ok(out)
}

/// Reads samples on the crash schema, taking `t_max` from the first
/// sample's flag vector (the full horizon when the input is empty).
pub fn read_samples_auto<R: BufRead>(input: R) -> Result<(Vec<SampleWindow>, WindowSchema)> {
    let mut records = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| VfgError::data(format!("samples line {}: {e}", n + 1)))?;
        records.push(rec);
    }
    let t_max = records.first().map_or(crate::schema::T_MAX, |r| r.data_gen_flag.len());
    let schema = WindowSchema::crash().with_t_max(t_max);
    let samples = records.into_iter().map(|r| r.into_window(&schema)).collect::<Result<_>>()?;
    Ok((samples, schema))
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    sample_id: String,
    p: f64,
    label: u8,
    time_gap_h: f64,
    dist_gap_mi: f64,
}

pub fn write_predictions<W: Write>(out: W, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in predictions {
        w.serialize(PredictionRow {
            sample_id: p.sample_id.clone(),
            p: p.p,
            label: u8::from(p.label),
            time_gap_h: p.time_gap_h,
            dist_gap_mi: p.dist_gap_mi,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(input: R) -> Result<Vec<Prediction>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut reader, &PREDICTION_HEADER, "predictions.csv")?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let r: PredictionRow = row?;
        if r.label > 1 || !(0.0..=1.0).contains(&r.p) {
            return Err(VfgError::data(format!(
                "predictions.csv: sample {} has label {} and p {}",
                r.sample_id, r.label, r.p
            )));
        }
        out.push(Prediction {
            sample_id: r.sample_id,
            p: r.p,
            label: r.label == 1,
            time_gap_h: r.time_gap_h,
            dist_gap_mi: r.dist_gap_mi,
        });
    }
    Ok(out)
}

pub fn write_labels<W: Write>(out: W, labels: &[CrashLabel]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for l in labels {
        w.serialize(l)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels<R: Read>(input: R) -> Result<Vec<CrashLabel>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut reader, &LABEL_HEADER, "labels.csv")?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let l: CrashLabel = row?;
        if (l.label == LabelKind::Secondary)
            != (l.primary_id.is_some() && l.time_gap_h.is_some() && l.dist_gap_mi.is_some())
        {
            return Err(VfgError::data(format!("labels.csv: crash {} has inconsistent gap fields", l.crash_id)));
        }
        out.push(l);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::T_MAX;

    #[test]
    fn crash_csv_round_trip() {
        let text = "crash_id,timestamp,route,milepost,type,severity,lighting,surface\n\
                    c1,2021-04-17T14:25,I-5,161.86,1,2,3,1\n";
        let crashes = read_crashes(text.as_bytes()).unwrap();
        assert_eq!(crashes[0].crash_type, CrashType::RearEnd);
        assert_eq!(crashes[0].lighting, Lighting::Dark);
        let mut buf = Vec::new();
        write_crashes(&mut buf, &crashes).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn crash_csv_rejects_bad_enum_and_header() {
        let bad = "crash_id,timestamp,route,milepost,type,severity,lighting,surface\n\
                   c1,2021-04-17T14:25,I-5,1.0,5,1,1,1\n";
        assert!(read_crashes(bad.as_bytes()).is_err());
        let header = "id,timestamp,route,milepost,type,severity,lighting,surface\n";
        assert!(read_crashes(header.as_bytes()).is_err());
    }

    #[test]
    fn detector_csv_validates() {
        let head = "detector_id,route,milepost,lane,timestamp,flow,occupancy,speed\n";
        let ok = format!("{head}d1,I-5,1.0,1,2021-04-17T14:25,10,12.5,60\n");
        assert_eq!(read_detectors(ok.as_bytes()).unwrap().len(), 1);
        let occ = format!("{head}d1,I-5,1.0,1,2021-04-17T14:25,10,120,60\n");
        assert!(read_detectors(occ.as_bytes()).is_err());
        let dup = format!("{head}d1,I-5,1.0,1,2021-04-17T14:25,10,12,60\nd1,I-5,1.0,1,2021-04-17T14:25,11,12,60\n");
        assert!(read_detectors(dup.as_bytes()).is_err());
    }

    #[test]
    fn ndjson_round_trip_and_one_hot_check() {
        let schema = WindowSchema::crash();
        let s = SampleWindow::from_active("s1", "c1", vec![1, 0, 2, 1], vec![vec![3.5; 15]; 7], T_MAX)
            .unwrap()
            .with_labels(true, Some((0.5, 1.25)));
        let mut buf = Vec::new();
        write_samples(&mut buf, std::slice::from_ref(&s), &schema).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"data_gen_flag\""));
        let back = read_samples(buf.as_slice(), &schema).unwrap();
        assert_eq!(back, vec![s]);

        let broken = text.replacen("[0.0,1.0,0.0,0.0]", "[0.0,1.0,1.0,0.0]", 1);
        assert!(read_samples(broken.as_bytes(), &schema).is_err());
    }

    #[test]
    fn label_csv_round_trip() {
        let labels = vec![
            CrashLabel {
                crash_id: "a".into(),
                label: LabelKind::Primary,
                primary_id: None,
                time_gap_h: None,
                dist_gap_mi: None,
            },
            CrashLabel {
                crash_id: "b".into(),
                label: LabelKind::Secondary,
                primary_id: Some("a".into()),
                time_gap_h: Some(25.0 / 60.0),
                dist_gap_mi: Some(0.66),
            },
        ];
        let mut buf = Vec::new();
        write_labels(&mut buf, &labels).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("crash_id,label,primary_id,time_gap_h,dist_gap_mi\na,primary,,,\n"));
        assert_eq!(read_labels(&buf[..]).unwrap(), labels);
        assert!(read_labels("crash_id,label,primary_id,time_gap_h,dist_gap_mi\nb,secondary,,,\n".as_bytes()).is_err());
    }
}
