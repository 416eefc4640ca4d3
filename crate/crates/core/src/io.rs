//! On-disk problem format: one JSON object with fields `p`, `b`, `blocks`
//! (each `{dim, A, f, set}` with row-major matrices), and an optional
//! `oracle` solution. Loading validates every invariant; floating-point
//! values survive save/load bit for bit (writers emit shortest
//! round-trip decimals, and decimals with up to 17 significant digits map
//! to unique doubles).

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block_vec::BlockVector;
use crate::oracle::{OracleMethod, OracleSolution, ORACLE_CERT_TOL};
use crate::problem::{
    BlockFunction, BlockSpec, ConstraintSet, FunctionKind, ProblemError, ProblemSpec,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    File(#[from] std::io::Error),
    #[error("invalid document: {0}")]
    Invalid(String),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProblemFile {
    pub p: usize,
    pub b: Vec<f64>,
    pub blocks: Vec<BlockFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleFile>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BlockFile {
    pub dim: usize,
    /// Row-major `p x dim` coupling matrix.
    #[serde(rename = "A")]
    pub coupling: Vec<f64>,
    pub f: FunctionFile,
    pub set: SetFile,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionFile {
    Zero {
        dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz: Option<f64>,
    },
    Quadratic {
        /// Row-major `dim x dim` symmetric matrix.
        hessian: Vec<f64>,
        linear: Vec<f64>,
        constant: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz: Option<f64>,
    },
    WeightedL1 {
        dim: usize,
        weight: f64,
    },
    SquaredDistance {
        anchor: Vec<f64>,
        weight: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz: Option<f64>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetFile {
    Free { dim: usize },
    NonNegative { dim: usize },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OracleFile {
    pub u: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub f_star: f64,
    pub method: String,
    pub kkt_residual: f64,
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn rows_to_matrix(rows: usize, cols: usize, data: &[f64]) -> Result<DMatrix<f64>, IoError> {
    if data.len() != rows * cols {
        return Err(IoError::Invalid(format!(
            "matrix expects {rows}x{cols} = {} entries, got {}",
            rows * cols,
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

fn function_to_file(f: &BlockFunction) -> FunctionFile {
    match &f.kind {
        FunctionKind::Zero { dim } => FunctionFile::Zero {
            dim: *dim,
            lipschitz: f.lipschitz,
        },
        FunctionKind::Quadratic {
            hessian,
            linear,
            constant,
        } => FunctionFile::Quadratic {
            hessian: matrix_to_rows(hessian),
            linear: linear.iter().cloned().collect(),
            constant: *constant,
            lipschitz: f.lipschitz,
        },
        FunctionKind::WeightedL1 { dim, weight } => FunctionFile::WeightedL1 {
            dim: *dim,
            weight: *weight,
        },
        FunctionKind::SquaredDistance { anchor, weight } => FunctionFile::SquaredDistance {
            anchor: anchor.iter().cloned().collect(),
            weight: *weight,
            lipschitz: f.lipschitz,
        },
    }
}

fn function_from_file(f: &FunctionFile) -> Result<BlockFunction, IoError> {
    let built = match f {
        FunctionFile::Zero { dim, lipschitz } => {
            let mut func = BlockFunction::zero(*dim);
            if let Some(l) = lipschitz {
                func = func.with_lipschitz(*l);
            }
            func
        }
        FunctionFile::Quadratic {
            hessian,
            linear,
            constant,
            lipschitz,
        } => {
            let n = linear.len();
            let h = rows_to_matrix(n, n, hessian)?;
            let mut func =
                BlockFunction::quadratic(h, DVector::from_vec(linear.clone()), *constant);
            if let Some(l) = lipschitz {
                func = func.with_lipschitz(*l);
            }
            func
        }
        FunctionFile::WeightedL1 { dim, weight } => BlockFunction::weighted_l1(*dim, *weight),
        FunctionFile::SquaredDistance {
            anchor,
            weight,
            lipschitz,
        } => {
            let mut func =
                BlockFunction::squared_distance(DVector::from_vec(anchor.clone()), *weight);
            if let Some(l) = lipschitz {
                func = func.with_lipschitz(*l);
            }
            func
        }
    };
    Ok(built)
}

fn set_to_file(set: &ConstraintSet) -> SetFile {
    match set {
        ConstraintSet::Free { dim } => SetFile::Free { dim: *dim },
        ConstraintSet::NonNegative { dim } => SetFile::NonNegative { dim: *dim },
        ConstraintSet::Box { lower, upper } => SetFile::Box {
            lower: lower.iter().cloned().collect(),
            upper: upper.iter().cloned().collect(),
        },
        ConstraintSet::Ball { center, radius } => SetFile::Ball {
            center: center.iter().cloned().collect(),
            radius: *radius,
        },
    }
}

fn set_from_file(set: &SetFile) -> ConstraintSet {
    match set {
        SetFile::Free { dim } => ConstraintSet::Free { dim: *dim },
        SetFile::NonNegative { dim } => ConstraintSet::NonNegative { dim: *dim },
        SetFile::Box { lower, upper } => ConstraintSet::Box {
            lower: DVector::from_vec(lower.clone()),
            upper: DVector::from_vec(upper.clone()),
        },
        SetFile::Ball { center, radius } => ConstraintSet::Ball {
            center: DVector::from_vec(center.clone()),
            radius: *radius,
        },
    }
}

fn method_name(method: OracleMethod) -> &'static str {
    match method {
        OracleMethod::KktLinearSolve => "kkt_linear_solve",
        OracleMethod::ActiveSetEnumeration => "active_set_enumeration",
        OracleMethod::HighAccuracyProxGrad => "high_accuracy_prox_grad",
    }
}

fn method_from_name(name: &str) -> Result<OracleMethod, IoError> {
    match name {
        "kkt_linear_solve" => Ok(OracleMethod::KktLinearSolve),
        "active_set_enumeration" => Ok(OracleMethod::ActiveSetEnumeration),
        "high_accuracy_prox_grad" => Ok(OracleMethod::HighAccuracyProxGrad),
        other => Err(IoError::Invalid(format!("unknown oracle method {other:?}"))),
    }
}

pub fn problem_to_file(prob: &ProblemSpec, oracle: Option<&OracleSolution>) -> ProblemFile {
    ProblemFile {
        p: prob.row_dim(),
        b: prob.rhs().iter().cloned().collect(),
        blocks: prob
            .blocks()
            .iter()
            .map(|blk| BlockFile {
                dim: blk.dim,
                coupling: matrix_to_rows(&blk.coupling),
                f: function_to_file(&blk.f),
                set: set_to_file(&blk.set),
            })
            .collect(),
        oracle: oracle.map(|sol| OracleFile {
            u: sol
                .u_star
                .iter()
                .map(|part| part.iter().cloned().collect())
                .collect(),
            lambda: sol.lambda_star.iter().cloned().collect(),
            f_star: sol.f_star,
            method: method_name(sol.method).to_string(),
            kkt_residual: sol.certified_kkt_residual,
        }),
    }
}

pub fn file_to_problem(file: &ProblemFile) -> Result<(ProblemSpec, Option<OracleSolution>), IoError> {
    if file.b.len() != file.p {
        return Err(IoError::Invalid(format!(
            "rhs has {} entries but p = {}",
            file.b.len(),
            file.p
        )));
    }
    let mut blocks = Vec::with_capacity(file.blocks.len());
    for blk in &file.blocks {
        let coupling = rows_to_matrix(file.p, blk.dim, &blk.coupling)?;
        let f = function_from_file(&blk.f)?;
        let set = set_from_file(&blk.set);
        blocks.push(BlockSpec::new(coupling, f, set));
    }
    let prob = ProblemSpec::new(blocks, DVector::from_vec(file.b.clone()))?;

    let oracle = match &file.oracle {
        None => None,
        Some(entry) => {
            if entry.u.len() != prob.n_blocks() {
                return Err(IoError::Invalid(format!(
                    "oracle has {} blocks, problem has {}",
                    entry.u.len(),
                    prob.n_blocks()
                )));
            }
            let u_star = BlockVector::new(
                entry
                    .u
                    .iter()
                    .map(|part| DVector::from_vec(part.clone()))
                    .collect(),
            );
            let lambda_star = DVector::from_vec(entry.lambda.clone());
            // Re-certify on load rather than trusting the stored residual.
            let residual = crate::diagnostics::kkt_residual(&prob, &u_star, &lambda_star)?;
            if residual > ORACLE_CERT_TOL {
                return Err(IoError::Invalid(format!(
                    "stored oracle fails certification: KKT residual {residual:e}"
                )));
            }
            Some(OracleSolution {
                u_star,
                lambda_star,
                f_star: entry.f_star,
                method: method_from_name(&entry.method)?,
                certified_kkt_residual: residual,
            })
        }
    };
    Ok((prob, oracle))
}

pub fn problem_to_json(
    prob: &ProblemSpec,
    oracle: Option<&OracleSolution>,
) -> Result<String, IoError> {
    Ok(serde_json::to_string_pretty(&problem_to_file(prob, oracle))?)
}

pub fn problem_from_json(text: &str) -> Result<(ProblemSpec, Option<OracleSolution>), IoError> {
    file_to_problem(&serde_json::from_str(text)?)
}

pub fn save_problem(
    path: &Path,
    prob: &ProblemSpec,
    oracle: Option<&OracleSolution>,
) -> Result<(), IoError> {
    fs::write(path, problem_to_json(prob, oracle)? + "\n")?;
    Ok(())
}

pub fn load_problem(path: &Path) -> Result<(ProblemSpec, Option<OracleSolution>), IoError> {
    problem_from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::make_sharing_instance;
    use crate::oracle::solve_exact_qp;

    #[test]
    fn round_trip_is_bit_stable() {
        let prob = make_sharing_instance(3, 4, 5, 123).unwrap();
        let text = problem_to_json(&prob, None).unwrap();
        let (again, _) = problem_from_json(&text).unwrap();
        assert_eq!(prob, again);
        // Save of the reload reproduces the exact bytes.
        assert_eq!(text, problem_to_json(&again, None).unwrap());
    }

    #[test]
    fn seventeen_digit_decimals_survive() {
        let value = "0.12345678901234567";
        let doc = format!(
            r#"{{"p":1,"b":[{value}],"blocks":[
                {{"dim":1,"A":[{value}],"f":{{"kind":"zero","dim":1,"lipschitz":0.0}},"set":{{"kind":"free","dim":1}}}},
                {{"dim":1,"A":[1.0],"f":{{"kind":"zero","dim":1,"lipschitz":0.0}},"set":{{"kind":"free","dim":1}}}}
            ]}}"#
        );
        let (prob, _) = problem_from_json(&doc).unwrap();
        let text = problem_to_json(&prob, None).unwrap();
        let (again, _) = problem_from_json(&text).unwrap();
        assert_eq!(
            prob.block(0).coupling[(0, 0)].to_bits(),
            again.block(0).coupling[(0, 0)].to_bits()
        );
        assert_eq!(prob.rhs()[0].to_bits(), again.rhs()[0].to_bits());
    }

    #[test]
    fn oracle_round_trip_re_certifies() {
        let prob = crate::instances::make_qp_instance(2, &[2, 2], 2, 31, true).unwrap();
        let sol = solve_exact_qp(&prob).unwrap();
        let text = problem_to_json(&prob, Some(&sol)).unwrap();
        let (_, oracle) = problem_from_json(&text).unwrap();
        let oracle = oracle.expect("oracle present");
        assert_eq!(oracle.method, OracleMethod::KktLinearSolve);
        assert!((oracle.f_star - sol.f_star).abs() <= 1e-15);

        // A tampered multiplier must fail re-certification.
        let mut bad = sol.clone();
        bad.lambda_star[0] += 0.5;
        let text = problem_to_json(&prob, Some(&bad)).unwrap();
        assert!(matches!(problem_from_json(&text), Err(IoError::Invalid(_))));
    }

    #[test]
    fn rejects_malformed_documents() {
        assert!(problem_from_json("{}").is_err());
        // Box with crossed bounds fails problem validation.
        let doc = r#"{"p":1,"b":[0.0],"blocks":[
            {"dim":1,"A":[1.0],"f":{"kind":"zero","dim":1,"lipschitz":0.0},
             "set":{"kind":"box","lower":[2.0],"upper":[1.0]}},
            {"dim":1,"A":[1.0],"f":{"kind":"zero","dim":1,"lipschitz":0.0},
             "set":{"kind":"free","dim":1}}
        ]}"#;
        assert!(problem_from_json(doc).is_err());
        // Wrong matrix payload size.
        let doc = r#"{"p":2,"b":[0.0,0.0],"blocks":[
            {"dim":1,"A":[1.0],"f":{"kind":"zero","dim":1},"set":{"kind":"free","dim":1}},
            {"dim":1,"A":[1.0,2.0],"f":{"kind":"zero","dim":1},"set":{"kind":"free","dim":1}}
        ]}"#;
        assert!(problem_from_json(doc).is_err());
    }
}
