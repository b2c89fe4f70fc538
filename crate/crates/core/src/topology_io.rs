//! CSV formats for sensor topology and cloudlet placement.
//!
//! * distances: `from,to,distance_m`
//! * positions: `sensor_id,x_m,y_m`
//! * centers: `cloudlet_id,x_m,y_m`
//! * assignment: `sensor_id,cloudlet_id`

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Point, WeightedGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRecord {
    pub from: String,
    pub to: String,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PositionRow {
    sensor_id: String,
    x_m: f64,
    y_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CenterRow {
    cloudlet_id: usize,
    x_m: f64,
    y_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AssignmentRow {
    sensor_id: String,
    cloudlet_id: usize,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    reader
        .deserialize()
        .enumerate()
        .map(|(row, r)| {
            r.map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: format!("data row {row}: {e}"),
            })
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_distances(path: &Path) -> Result<Vec<DistanceRecord>> {
    read_rows(path)
}

pub fn write_distances(path: &Path, records: &[DistanceRecord]) -> Result<()> {
    write_rows(path, records)
}

/// Positions ordered like `node_ids`; every node must be present.
pub fn read_positions(path: &Path, node_ids: &[String]) -> Result<Vec<Point>> {
    let rows: Vec<PositionRow> = read_rows(path)?;
    let by_id: BTreeMap<&str, Point> = rows.iter().map(|r| (r.sensor_id.as_str(), [r.x_m, r.y_m])).collect();
    node_ids
        .iter()
        .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| Error::UnknownNode(id.clone())))
        .collect()
}

pub fn write_positions(path: &Path, graph: &WeightedGraph) -> Result<()> {
    let positions = graph.positions().ok_or(Error::MissingPositions)?;
    write_rows(
        path,
        graph.node_ids().iter().zip(positions).map(|(id, p)| PositionRow {
            sensor_id: id.clone(),
            x_m: p[0],
            y_m: p[1],
        }),
    )
}

/// Centers indexed by cloudlet id; ids must be `0..C`.
pub fn read_centers(path: &Path) -> Result<Vec<Point>> {
    let mut rows: Vec<CenterRow> = read_rows(path)?;
    rows.sort_by_key(|r| r.cloudlet_id);
    if rows.iter().enumerate().any(|(i, r)| r.cloudlet_id != i) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "cloudlet ids must be 0..C without gaps or repeats".into(),
        });
    }
    Ok(rows.into_iter().map(|r| [r.x_m, r.y_m]).collect())
}

pub fn write_centers(path: &Path, centers: &[Point]) -> Result<()> {
    write_rows(
        path,
        centers.iter().enumerate().map(|(i, c)| CenterRow {
            cloudlet_id: i,
            x_m: c[0],
            y_m: c[1],
        }),
    )
}

/// Cloudlet id per node, ordered like `node_ids`.
pub fn read_assignment(path: &Path, node_ids: &[String]) -> Result<Vec<usize>> {
    let rows: Vec<AssignmentRow> = read_rows(path)?;
    let by_id: BTreeMap<&str, usize> = rows.iter().map(|r| (r.sensor_id.as_str(), r.cloudlet_id)).collect();
    node_ids
        .iter()
        .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| Error::UnknownNode(id.clone())))
        .collect()
}

pub fn write_assignment(path: &Path, node_ids: &[String], assignment: &[usize]) -> Result<()> {
    write_rows(
        path,
        node_ids.iter().zip(assignment).map(|(id, &c)| AssignmentRow {
            sensor_id: id.clone(),
            cloudlet_id: c,
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = vec![DistanceRecord {
            from: "a".into(),
            to: "b".into(),
            distance_m: 1500.0,
        }];
        let dp = dir.path().join("d.csv");
        write_distances(&dp, &d).unwrap();
        assert!(std::fs::read_to_string(&dp).unwrap().starts_with("from,to,distance_m\n"));
        assert_eq!(read_distances(&dp).unwrap(), d);

        let cp = dir.path().join("c.csv");
        write_centers(&cp, &[[0.0, 1.0], [5.0, 2.0]]).unwrap();
        assert_eq!(read_centers(&cp).unwrap(), vec![[0.0, 1.0], [5.0, 2.0]]);

        let ids = vec!["a".to_string(), "b".to_string()];
        let ap = dir.path().join("a.csv");
        write_assignment(&ap, &ids, &[1, 0]).unwrap();
        assert_eq!(read_assignment(&ap, &ids).unwrap(), vec![1, 0]);
        let missing = vec!["a".to_string(), "z".to_string()];
        assert!(matches!(read_assignment(&ap, &missing), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn center_ids_must_be_contiguous() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        std::fs::write(&p, "cloudlet_id,x_m,y_m\n0,0,0\n2,1,1\n").unwrap();
        assert!(matches!(read_centers(&p), Err(Error::Format { .. })));
    }
}
