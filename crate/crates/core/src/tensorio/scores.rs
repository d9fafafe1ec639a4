use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{read_json, write_json, TensorIoError};

/// Per-layer scores produced outside this tool (e.g. by finetuning runs).
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalScoreFile {
    pub model_name: String,
    pub task_name: String,
    /// Indexed by layer, contiguous from 0.
    pub scores: Vec<f64>,
}

#[derive(Deserialize)]
struct RawScores {
    model_name: String,
    task_name: String,
    scores: BTreeMap<String, Value>,
}

#[derive(Serialize)]
struct RawScoresOut<'a> {
    model_name: &'a str,
    task_name: &'a str,
    scores: BTreeMap<String, f64>,
}

fn score_value(layer: usize, v: &Value) -> Result<f64, TensorIoError> {
    let x = match v {
        Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| TensorIoError::InvalidScore(layer, n.to_string()))?,
        // NaN/Infinity cannot be JSON numbers, so exporters emit them as strings
        Value::String(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| TensorIoError::InvalidScore(layer, s.clone()))?,
        other => return Err(TensorIoError::InvalidScore(layer, other.to_string())),
    };
    if !x.is_finite() {
        return Err(TensorIoError::NonFiniteScore(layer));
    }
    Ok(x)
}

fn parse_scores(raw: BTreeMap<String, Value>) -> Result<Vec<f64>, TensorIoError> {
    let mut by_layer = BTreeMap::new();
    for (key, value) in &raw {
        let layer: usize = key
            .trim()
            .parse()
            .map_err(|_| TensorIoError::InvalidLayerKey(key.clone()))?;
        if by_layer.insert(layer, value).is_some() {
            return Err(TensorIoError::DuplicateLayer(layer));
        }
    }
    if by_layer.is_empty() {
        return Err(TensorIoError::EmptyScores);
    }
    let mut scores = Vec::with_capacity(by_layer.len());
    for (expected, (&layer, value)) in by_layer.iter().enumerate() {
        if layer != expected {
            return Err(TensorIoError::ScoreGap(expected));
        }
        scores.push(score_value(layer, value)?);
    }
    Ok(scores)
}

pub fn load_scores(path: &Path) -> Result<ExternalScoreFile, TensorIoError> {
    let raw: RawScores = read_json(path)?;
    Ok(ExternalScoreFile {
        model_name: raw.model_name,
        task_name: raw.task_name,
        scores: parse_scores(raw.scores)?,
    })
}

pub fn write_scores(path: &Path, file: &ExternalScoreFile) -> Result<(), TensorIoError> {
    let out = RawScoresOut {
        model_name: &file.model_name,
        task_name: &file.task_name,
        scores: file
            .scores
            .iter()
            .enumerate()
            .map(|(k, &v)| (k.to_string(), v))
            .collect(),
    };
    write_json(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn parse(v: Value) -> Result<Vec<f64>, TensorIoError> {
        parse_scores(serde_json::from_value(v).unwrap())
    }

    #[test]
    fn contiguous_scores() {
        assert_eq!(parse(json!({"0": 0.8, "1": 0.9})).unwrap(), vec![0.8, 0.9]);
        // numeric, not lexicographic, key order
        let many: serde_json::Map<String, Value> =
            (0..12).map(|k| (k.to_string(), json!(k as f64))).collect();
        let v = parse(Value::Object(many)).unwrap();
        assert_eq!(v[10], 10.0);
    }

    #[test]
    fn gaps_and_bad_values() {
        let err = parse(json!({"0": 0.8, "2": 0.9})).unwrap_err();
        assert_eq!(err.to_string(), "gap at layer 1");
        let err = parse(json!({"0": "NaN"})).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
        assert!(matches!(parse(json!({"1": 0.5})), Err(TensorIoError::ScoreGap(0))));
        assert!(matches!(parse(json!({})), Err(TensorIoError::EmptyScores)));
        assert!(matches!(parse(json!({"x": 1.0})), Err(TensorIoError::InvalidLayerKey(_))));
        assert!(matches!(parse(json!({"0": "high"})), Err(TensorIoError::InvalidScore(0, _))));
        assert!(matches!(parse(json!({"0": 1.0, "00": 2.0})), Err(TensorIoError::DuplicateLayer(0))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let f = ExternalScoreFile {
            model_name: "m".into(),
            task_name: "t".into(),
            scores: vec![0.1, 0.25, 0.3],
        };
        write_scores(&path, &f).unwrap();
        assert_eq!(load_scores(&path).unwrap(), f);
    }
}
