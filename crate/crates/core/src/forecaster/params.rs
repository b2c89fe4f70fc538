use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifies the parameter layout; two parameter vectors may only be
/// averaged when their tags are equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShapeTag {
    pub model: String,
    pub order: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub len: usize,
}

impl fmt::Display for ShapeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} order={} lookback={} horizon={} len={}",
            self.model, self.order, self.lookback, self.horizon, self.len
        )
    }
}

impl ShapeTag {
    pub fn parse(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace();
        let model = parts.next()?.to_string();
        let mut field = |name: &str| -> Option<usize> {
            parts.next()?.strip_prefix(name)?.strip_prefix('=')?.parse().ok()
        };
        Some(Self {
            model,
            order: field("order")?,
            lookback: field("lookback")?,
            horizon: field("horizon")?,
            len: field("len")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterParams {
    pub theta: Vec<f64>,
    pub shape: ShapeTag,
}

impl ForecasterParams {
    pub fn zeros(shape: ShapeTag) -> Self {
        Self {
            theta: vec![0.0; shape.len],
            shape,
        }
    }

    pub fn from_flat(theta: Vec<f64>, shape: ShapeTag) -> Result<Self> {
        if theta.len() != shape.len {
            return Err(Error::Shape(format!(
                "{} values for shape {shape}",
                theta.len()
            )));
        }
        Ok(Self { theta, shape })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Size on the wire at checkpoint precision.
    pub fn wire_bytes(&self) -> u64 {
        self.theta.len() as u64 * 8
    }
}

/// Convex combination with renormalized weights.
pub fn average_params(models: &[&ForecasterParams], weights: &[f64]) -> Result<ForecasterParams> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidWeights("nothing to average".into()))?;
    if models.len() != weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} models, {} weights",
            models.len(),
            weights.len()
        )));
    }
    if let Some(other) = models.iter().find(|m| m.shape != first.shape) {
        return Err(Error::IncompatibleModels(
            first.shape.to_string(),
            other.shape.to_string(),
        ));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidWeights(format!("negative weight in {weights:?}")));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidWeights("weights sum to zero".into()));
    }
    let mut theta = vec![0.0; first.len()];
    for (m, &w) in models.iter().zip(weights) {
        let w = w / total;
        for (acc, &x) in theta.iter_mut().zip(&m.theta) {
            *acc += w * x;
        }
    }
    Ok(ForecasterParams {
        theta,
        shape: first.shape.clone(),
    })
}

/// Shape-tag header line followed by little-endian `f64` values.
pub fn write_checkpoint(path: &Path, params: &ForecasterParams) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + params.len() * 8);
    writeln!(buf, "{}", params.shape).expect("write to vec");
    for x in &params.theta {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ForecasterParams> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader.read_line(&mut header).map_err(|e| Error::io(path, e))?;
    let shape = ShapeTag::parse(header.trim_end()).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        reason: format!("bad shape header {header:?}"),
    })?;
    let mut body = Vec::new();
    reader.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() != shape.len * 8 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected {} bytes of values, found {}", shape.len * 8, body.len()),
        });
    }
    let theta = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ForecasterParams::from_flat(theta, shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag(len: usize) -> ShapeTag {
        ShapeTag {
            model: "cheb".into(),
            order: 3,
            lookback: 2,
            horizon: 1,
            len,
        }
    }

    fn params(v: &[f64]) -> ForecasterParams {
        ForecasterParams::from_flat(v.to_vec(), tag(v.len())).unwrap()
    }

    #[test]
    fn averaging_rules() {
        let a = params(&[1.0, 2.0, 3.0]);
        let b = params(&[3.0, 4.0, 5.0]);
        assert_eq!(average_params(&[&a, &a, &a], &[1.0, 2.0, 3.0]).unwrap().theta, a.theta);
        assert_eq!(average_params(&[&a, &b], &[1.0, 0.0]).unwrap().theta, a.theta);
        assert_eq!(average_params(&[&a, &b], &[1.0, 1.0]).unwrap().theta, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let a = params(&[1.0, 2.0]);
        let b = params(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            average_params(&[&a, &b], &[1.0, 1.0]),
            Err(Error::IncompatibleModels(..))
        ));
        assert!(matches!(average_params(&[&a], &[0.0]), Err(Error::InvalidWeights(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let p = params(&[0.1, -2.5, 1e-300]);
        write_checkpoint(&path, &p).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), p);
        let raw = std::fs::read(&path).unwrap();
        assert!(raw.starts_with(b"cheb order=3 lookback=2 horizon=1 len=3\n"));
    }
}
