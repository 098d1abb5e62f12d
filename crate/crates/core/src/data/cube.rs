use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Per-location, per-type, per-time event counts plus optional location
/// connectivity.
#[derive(Clone, Debug, PartialEq)]
pub struct EventCube {
    locations: usize,
    event_types: usize,
    time_steps: usize,
    counts: Vec<u32>,
    pub location_ids: Vec<String>,
    pub geo_adjacency: Option<Vec<f64>>,
}

/// Optional declared extents; undeclared ones are inferred from the data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CubeDims {
    pub locations: Option<usize>,
    pub event_types: Option<usize>,
    pub time_steps: Option<usize>,
}

impl EventCube {
    pub fn zeros(locations: usize, event_types: usize, time_steps: usize) -> Self {
        Self {
            locations,
            event_types,
            time_steps,
            counts: vec![0; locations * event_types * time_steps],
            location_ids: (0..locations).map(|i| format!("loc{i}")).collect(),
            geo_adjacency: None,
        }
    }

    pub fn locations(&self) -> usize {
        self.locations
    }

    pub fn event_types(&self) -> usize {
        self.event_types
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    fn index(&self, location: usize, event_type: usize, time: usize) -> usize {
        debug_assert!(location < self.locations && event_type < self.event_types && time < self.time_steps);
        (location * self.event_types + event_type) * self.time_steps + time
    }

    pub fn count(&self, location: usize, event_type: usize, time: usize) -> u32 {
        self.counts[self.index(location, event_type, time)]
    }

    pub fn set(&mut self, location: usize, event_type: usize, time: usize, value: u32) {
        let i = self.index(location, event_type, time);
        self.counts[i] = value;
    }

    /// Count series of one (location, type) pair.
    pub fn series(&self, location: usize, event_type: usize) -> &[u32] {
        let start = self.index(location, event_type, 0);
        &self.counts[start..start + self.time_steps]
    }

    pub fn set_adjacency(&mut self, adjacency: Vec<f64>) -> Result<()> {
        let m = self.locations;
        if adjacency.len() != m * m {
            return Err(Error::dim("adjacency", &[m, m], &[adjacency.len()]));
        }
        if adjacency.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::Parameter(
                "adjacency entries must be finite and nonnegative".into(),
            ));
        }
        self.geo_adjacency = Some(adjacency);
        Ok(())
    }

    /// Writes the cube as `location_id,time_index,event_type,count`, skipping
    /// zeros except one row per location at the first step, which pins the
    /// location order on reload.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["location_id", "time_index", "event_type", "count"])?;
        for t in 0..self.time_steps {
            for i in 0..self.locations {
                for e in 0..self.event_types {
                    let c = self.count(i, e, t);
                    if c > 0 || (t == 0 && e == 0) {
                        w.write_record([
                            self.location_ids[i].clone(),
                            t.to_string(),
                            e.to_string(),
                            c.to_string(),
                        ])?;
                    }
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[derive(Deserialize)]
struct Row {
    location_id: String,
    time_index: i64,
    event_type: i64,
    count: i64,
}

/// Reads an event CSV with header `location_id,time_index,event_type,count`.
///
/// Locations are ordered by first appearance; rows repeating a
/// (location, time, type) triple are summed; absent triples are zero.
pub fn load_event_csv(path: &Path, dims: CubeDims) -> Result<EventCube> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_event_csv(file, dims)
}

pub fn read_event_csv<R: Read>(reader: R, dims: CubeDims) -> Result<EventCube> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Ingestion {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if !headers.is_empty() && headers != vec!["location_id", "time_index", "event_type", "count"] {
        return Err(Error::Ingestion {
            line: 1,
            message: format!("unexpected header {headers:?}"),
        });
    }

    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut sums: HashMap<(usize, usize, usize), u64> = HashMap::new();
    let (mut max_e, mut max_t) = (0usize, 0usize);
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Ingestion {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: Row = record.deserialize(Some(&headers)).map_err(|e| Error::Ingestion {
            line,
            message: e.to_string(),
        })?;
        let fail = |message: String| Error::Ingestion { line, message };
        if row.count < 0 {
            return Err(fail(format!("negative count {}", row.count)));
        }
        if row.time_index < 0 {
            return Err(fail(format!("negative time index {}", row.time_index)));
        }
        if row.event_type < 0 {
            return Err(fail(format!("unknown event type {}", row.event_type)));
        }
        let (t, e) = (row.time_index as usize, row.event_type as usize);
        if let Some(n) = dims.event_types {
            if e >= n {
                return Err(fail(format!("unknown event type {e} (declared {n} types)")));
            }
        }
        if let Some(n) = dims.time_steps {
            if t >= n {
                return Err(fail(format!("time index {t} outside declared {n} steps")));
            }
        }
        let next = ids.len();
        let loc = *index.entry(row.location_id.clone()).or_insert_with(|| {
            ids.push(row.location_id.clone());
            next
        });
        if let Some(n) = dims.locations {
            if ids.len() > n {
                return Err(fail(format!("more than the declared {n} locations")));
            }
        }
        max_e = max_e.max(e + 1);
        max_t = max_t.max(t + 1);
        *sums.entry((loc, e, t)).or_default() += row.count as u64;
    }

    let m = dims.locations.unwrap_or(ids.len());
    let e = dims.event_types.unwrap_or(max_e);
    let t = dims.time_steps.unwrap_or(max_t);
    if m == 0 || e == 0 || t == 0 {
        return Err(Error::Config(
            "cannot infer cube extents from an empty file; declare M, E and T".into(),
        ));
    }
    let mut cube = EventCube::zeros(m, e, t);
    for (i, id) in ids.into_iter().enumerate() {
        cube.location_ids[i] = id;
    }
    for ((loc, ev, ti), c) in sums {
        let c = u32::try_from(c).map_err(|_| Error::Ingestion {
            line: 0,
            message: "aggregated count overflows u32".into(),
        })?;
        cube.set(loc, ev, ti, c);
    }
    Ok(cube)
}

/// Reads a headerless `M x M` numeric grid.
pub fn load_adjacency_csv(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut values = Vec::new();
    let mut width = None;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(Error::Ingestion {
                line: line + 1,
                message: "ragged adjacency row".into(),
            });
        }
        for field in record.iter() {
            values.push(field.parse::<f64>().map_err(|e| Error::Ingestion {
                line: line + 1,
                message: format!("`{field}`: {e}"),
            })?);
        }
    }
    let m = width.unwrap_or(0);
    if values.len() != m * m {
        return Err(Error::Ingestion {
            line: 0,
            message: format!("adjacency is not square ({} values, width {m})", values.len()),
        });
    }
    Ok(values)
}

pub fn write_adjacency_csv(path: &Path, adjacency: &[f64], m: usize) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in adjacency.chunks(m) {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
