use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cumulant::SymmetricTensor;
use crate::error::{LcdError, Result};
use crate::graph::Dag;
use crate::linalg::Matrix;
use crate::model::{from_row_major, row_major, LcdModel};
use crate::recover::{Metrics, RecoveryResult};

pub fn read_model(path: &Path) -> Result<LcdModel> {
    LcdModel::from_json(&std::fs::read_to_string(path)?)
}

pub fn write_model(path: &Path, model: &LcdModel) -> Result<()> {
    std::fs::write(path, model.to_json()?)?;
    Ok(())
}

/// `{d, p, packed}` with the packed upper-simplex entries in lexicographic order.
pub fn tensor_to_json(t: &SymmetricTensor) -> Result<String> {
    Ok(serde_json::to_string(t)?)
}

pub fn tensor_from_json(s: &str) -> Result<SymmetricTensor> {
    let t: SymmetricTensor = serde_json::from_str(s)?;
    t.validated()
}

/// One tensor per context, as a JSON array.
pub fn write_tensors(path: &Path, tensors: &[SymmetricTensor]) -> Result<()> {
    std::fs::write(path, serde_json::to_string(tensors)?)?;
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<Vec<SymmetricTensor>> {
    let ts: Vec<SymmetricTensor> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    ts.into_iter().map(SymmetricTensor::validated).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsJson {
    #[serde(rename = "err_F")]
    pub err_f: f64,
    pub err_lambda: f64,
    pub dag_err: usize,
}

impl From<Metrics> for MetricsJson {
    fn from(m: Metrics) -> Self {
        MetricsJson { err_f: m.err_f, err_lambda: m.err_lambda, dag_err: m.dag_err }
    }
}

/// Recovered parameters, 1-based labels, row-major matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultJson {
    pub p: usize,
    pub q: usize,
    #[serde(rename = "F_hat")]
    pub f_hat: Vec<f64>,
    pub lambda0_hat: Vec<f64>,
    pub edges_hat: Vec<[usize; 2]>,
    /// Observational column hit by each context, 1-based.
    pub targets: Vec<usize>,
    pub residuals: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsJson>,
}

impl ResultJson {
    pub fn new(result: &RecoveryResult, targets: &[usize], metrics: Option<Metrics>) -> Self {
        ResultJson {
            p: result.f_hat.nrows(),
            q: result.f_hat.ncols(),
            f_hat: row_major(&result.f_hat),
            lambda0_hat: row_major(&result.lambda0_hat),
            edges_hat: result.dag_hat.labeled_edges(),
            targets: targets.iter().map(|t| t + 1).collect(),
            residuals: result.residuals.clone(),
            metrics: metrics.map(MetricsJson::from),
        }
    }

    pub fn f_hat(&self) -> Result<Matrix> {
        from_row_major(self.p, self.q, &self.f_hat)
    }

    pub fn lambda0_hat(&self) -> Result<Matrix> {
        from_row_major(self.q, self.q, &self.lambda0_hat)
    }

    pub fn dag_hat(&self) -> Result<Dag> {
        let pairs: Vec<(usize, usize)> = self.edges_hat.iter().map(|e| (e[0], e[1])).collect();
        Dag::from_labeled(self.q, &pairs)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: ResultJson = serde_json::from_str(s)?;
        if r.f_hat.len() != r.p * r.q || r.lambda0_hat.len() != r.q * r.q {
            return Err(LcdError::ShapeMismatch("result matrices".into()));
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InterventionKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensor_round_trip_is_lossless() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let m = LcdModel::sample(4, 3, 0.75, InterventionKind::Perfect, 3, &mut r).unwrap();
        let t = m.population_cumulant(1, 3).unwrap();
        let back = tensor_from_json(&tensor_to_json(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        assert!(tensor_from_json(r#"{"d":3,"p":2,"packed":[1.0]}"#).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let m = LcdModel::sample(4, 3, 0.75, InterventionKind::Soft, 4, &mut r).unwrap();
        let mp = dir.path().join("m.json");
        write_model(&mp, &m).unwrap();
        assert_eq!(read_model(&mp).unwrap(), m);
        let ts: Vec<_> = (0..=3).map(|k| m.population_cumulant(k, 4).unwrap()).collect();
        let tp = dir.path().join("t.json");
        write_tensors(&tp, &ts).unwrap();
        assert_eq!(read_tensors(&tp).unwrap(), ts);
    }

    #[test]
    fn result_round_trip() {
        let f = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0 + 1e-15]);
        let l = Matrix::from_row_slice(2, 2, &[0.0, 0.0, -0.7, 0.0]);
        let res = RecoveryResult {
            f_hat: f.clone(),
            lambda0_hat: l.clone(),
            dag_hat: Dag::from_labeled(2, &[(1, 2)]).unwrap(),
            residuals: vec![1e-16, 0.0],
            cycles_broken: false,
        };
        let j = ResultJson::new(&res, &[1, 0], Some(Metrics { err_f: 1e-12, err_lambda: 0.0, dag_err: 0 }));
        let text = j.to_json().unwrap();
        assert!(text.contains("\"F_hat\"") && text.contains("\"err_F\""));
        let back = ResultJson::from_json(&text).unwrap();
        assert_eq!(back, j);
        assert_eq!(back.targets, vec![2, 1]);
        assert_eq!(back.f_hat().unwrap(), f);
        assert_eq!(back.lambda0_hat().unwrap(), l);
        assert_eq!(back.dag_hat().unwrap(), res.dag_hat);
    }
}
