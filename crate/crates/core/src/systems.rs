//! Benchmark model builders and model file I/O.
//!
//! The 3-DOF benchmark prescribes its mass and stiffness matrices from a set
//! of mass-normalized mode shapes and target frequencies, with an Iwan
//! element between the second and third DOFs. Model files are
//! self-describing TOML with a version field: explicit dense matrices plus
//! element records, favoring auditability over compactness.

use crate::elements::{build_element, ElementSlot, ElementSpec};
use crate::hbm::{HbmError, SystemModel};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("unsupported model format version {0} (expected 1)")]
    Version(u32),
    #[error(transparent)]
    Element(#[from] crate::elements::ElementError),
    #[error(transparent)]
    Validation(#[from] HbmError),
}

/// Which mode-shape ordering the 3-DOF benchmark uses: the superharmonic-
/// resonance variant places the shape with relative motion across the
/// element second, the modified variant swaps the second and third shapes so
/// the 3.0 rad/s mode has no motion across the element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThreeDofVariant {
    SuperharmonicResonance,
    NoResonance,
}

/// Construction parameters of the 3-DOF benchmark.
#[derive(Debug, Clone)]
pub struct ThreeDofSpec {
    pub variant: ThreeDofVariant,
    pub modal_frequencies: [f64; 3],
    pub damping_factor: f64,
    pub iwan: ElementSpec,
}

impl ThreeDofSpec {
    pub fn new(variant: ThreeDofVariant) -> Self {
        Self {
            variant,
            modal_frequencies: [1.0, 3.0, 7.5],
            damping_factor: 0.01,
            iwan: ElementSpec::Iwan {
                k_t: 0.6,
                f_s: 10.0,
                chi: -0.5,
                beta: 0.0,
                n_sliders: 100,
            },
        }
    }

    /// Mode-shape matrix with shapes as columns in modal order.
    pub fn mode_shapes(&self) -> DMatrix<f64> {
        let phi_1 = [1.0, 2.0, 3.0];
        let phi_a = [2.0, 1.0, -1.0];
        let phi_b = [-2.0, 1.0, 1.0];
        let cols: [[f64; 3]; 3] = match self.variant {
            ThreeDofVariant::SuperharmonicResonance => [phi_1, phi_a, phi_b],
            ThreeDofVariant::NoResonance => [phi_1, phi_b, phi_a],
        };
        DMatrix::from_fn(3, 3, |i, j| cols[j][i])
    }
}

/// Build the 3-DOF benchmark system: `M = Phi^-T Phi^-1`,
/// `K_tuned = Phi^-T Lambda Phi^-1`, and the linear stiffness subtracts half
/// the element's stuck stiffness so the prescribed modes sit mid-way through
/// the partial-slip regime. Mass-proportional damping, forcing at DOF 1,
/// one Iwan element between DOFs 2 and 3.
pub fn build_3dof(spec: &ThreeDofSpec) -> Result<SystemModel, HbmError> {
    let phi = spec.mode_shapes();
    let phi_inv = phi.clone().try_inverse().expect("mode shapes independent");
    let lambda = DMatrix::from_diagonal(&DVector::from_iterator(
        3,
        spec.modal_frequencies.iter().map(|w| w * w),
    ));
    let mass = phi_inv.transpose() * &phi_inv;
    let k_tuned = phi_inv.transpose() * lambda * &phi_inv;

    let q_row = DVector::from_row_slice(&[0.0, 1.0, -1.0]);
    let t_col = q_row.clone();
    let element = build_element(&spec.iwan).map_err(|e| HbmError::Model(e.to_string()))?;
    let k_t = element.stuck_stiffness();
    let mut stiffness = k_tuned;
    for i in 0..3 {
        for j in 0..3 {
            stiffness[(i, j)] -= 0.5 * k_t * t_col[i] * q_row[j];
        }
    }
    let damping = &mass * spec.damping_factor;

    SystemModel::new(
        mass,
        damping,
        stiffness,
        vec![ElementSlot::new(element, q_row, t_col)],
        DVector::from_row_slice(&[1.0, 0.0, 0.0]),
        DVector::zeros(3),
        vec![],
    )
}

/// Named builtin models, selectable from run configurations.
pub fn builtin_model(name: &str) -> Option<SystemModel> {
    match name {
        "3dof-sr" => build_3dof(&ThreeDofSpec::new(ThreeDofVariant::SuperharmonicResonance)).ok(),
        "3dof-nosr" => build_3dof(&ThreeDofSpec::new(ThreeDofVariant::NoResonance)).ok(),
        _ => None,
    }
}

pub const BUILTIN_MODELS: &[&str] = &["3dof-sr", "3dof-nosr"];

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    num_dof: usize,
    labels: Vec<String>,
    /// row-major dense matrices
    mass: Vec<Vec<f64>>,
    damping: Vec<Vec<f64>>,
    stiffness: Vec<Vec<f64>>,
    f_ext: Vec<f64>,
    f_ext0: Vec<f64>,
    #[serde(default)]
    element: Vec<ElementRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ElementRecord {
    q_row: Vec<f64>,
    t_col: Vec<f64>,
    #[serde(flatten)]
    spec: ElementSpec,
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], path: &str, name: &str) -> Result<DMatrix<f64>, ModelIoError> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(ModelIoError::Parse {
            path: path.to_string(),
            message: format!("{name} must be square"),
        });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn save_model(model: &SystemModel, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
    let path = path.as_ref();
    let file = ModelFile {
        version: 1,
        num_dof: model.num_dof(),
        labels: model.labels.clone(),
        mass: matrix_to_rows(&model.mass),
        damping: matrix_to_rows(&model.damping),
        stiffness: matrix_to_rows(&model.stiffness),
        f_ext: model.f_ext.iter().copied().collect(),
        f_ext0: model.f_ext0.iter().copied().collect(),
        element: model
            .slots
            .iter()
            .map(|s| ElementRecord {
                q_row: s.q_row.iter().copied().collect(),
                t_col: s.t_col.iter().copied().collect(),
                spec: s.element.spec(),
            })
            .collect(),
    };
    let text = toml::to_string_pretty(&file).map_err(|e| ModelIoError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|source| ModelIoError::Write {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SystemModel, ModelIoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelIoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let file: ModelFile = toml::from_str(&text).map_err(|e| ModelIoError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if file.version != 1 {
        return Err(ModelIoError::Version(file.version));
    }
    let p = path.display().to_string();
    let n = file.num_dof;
    let mass = rows_to_matrix(&file.mass, &p, "mass")?;
    if mass.nrows() != n {
        return Err(ModelIoError::Parse {
            path: p,
            message: format!("mass is {}x{} but num_dof = {n}", mass.nrows(), mass.ncols()),
        });
    }
    let damping = rows_to_matrix(&file.damping, &p, "damping")?;
    let stiffness = rows_to_matrix(&file.stiffness, &p, "stiffness")?;
    let mut slots = Vec::new();
    for rec in &file.element {
        let element = build_element(&rec.spec)?;
        slots.push(ElementSlot::new(
            element,
            DVector::from_row_slice(&rec.q_row),
            DVector::from_column_slice(&rec.t_col),
        ));
    }
    Ok(SystemModel::new(
        mass,
        damping,
        stiffness,
        slots,
        DVector::from_row_slice(&file.f_ext),
        DVector::from_row_slice(&file.f_ext0),
        file.labels,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mode_shapes_are_mass_normalized() {
        for variant in [
            ThreeDofVariant::SuperharmonicResonance,
            ThreeDofVariant::NoResonance,
        ] {
            let spec = ThreeDofSpec::new(variant);
            let model = build_3dof(&spec).unwrap();
            let phi = spec.mode_shapes();
            let g = phi.transpose() * &model.mass * &phi;
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(g[(i, j)], want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn tuned_frequencies_are_prescribed() {
        let spec = ThreeDofSpec::new(ThreeDofVariant::SuperharmonicResonance);
        let model = build_3dof(&spec).unwrap();
        // tuned stiffness = K + half the element's stuck stiffness
        let mut k_tuned = model.stiffness.clone();
        let slot = &model.slots[0];
        let kt = slot.element.stuck_stiffness();
        for i in 0..3 {
            for j in 0..3 {
                k_tuned[(i, j)] += 0.5 * kt * slot.t_col[i] * slot.q_row[j];
            }
        }
        let (vals, _) = crate::linalg::generalized_eig(&k_tuned, &model.mass).unwrap();
        let freqs: Vec<f64> = vals.iter().map(|v| v.sqrt()).collect();
        assert_abs_diff_eq!(freqs[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(freqs[1], 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(freqs[2], 7.5, epsilon = 1e-10);
    }

    #[test]
    fn built_matrices_are_symmetric_and_mass_spd() {
        for variant in [
            ThreeDofVariant::SuperharmonicResonance,
            ThreeDofVariant::NoResonance,
        ] {
            let model = build_3dof(&ThreeDofSpec::new(variant)).unwrap();
            assert!((  &model.mass - model.mass.transpose()).amax() < 1e-12);
            assert!((&model.stiffness - model.stiffness.transpose()).amax() < 1e-12);
            assert!(nalgebra::Cholesky::new(model.mass.clone()).is_some());
        }
    }

    #[test]
    fn no_resonance_variant_has_node_across_element() {
        let spec = ThreeDofSpec::new(ThreeDofVariant::NoResonance);
        let model = build_3dof(&spec).unwrap();
        let phi = spec.mode_shapes();
        // the mode tuned to 3.0 rad/s has equal displacement at DOFs 2 and 3
        let q = &model.slots[0].q_row;
        let rel: f64 = (0..3).map(|d| q[d] * phi[(d, 1)]).sum();
        assert_eq!(rel, 0.0);
    }

    #[test]
    fn model_file_round_trips_bit_exactly() {
        let dir = std::env::temp_dir().join("hbtk-model-roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("3dof.toml");
        let model = build_3dof(&ThreeDofSpec::new(ThreeDofVariant::SuperharmonicResonance)).unwrap();
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model.mass, loaded.mass);
        assert_eq!(model.damping, loaded.damping);
        assert_eq!(model.stiffness, loaded.stiffness);
        assert_eq!(model.f_ext, loaded.f_ext);
        assert_eq!(model.f_ext0, loaded.f_ext0);
        assert_eq!(model.labels, loaded.labels);
        assert_eq!(model.slots.len(), loaded.slots.len());
        assert_eq!(model.slots[0].element.spec(), loaded.slots[0].element.spec());
        assert_eq!(model.slots[0].q_row, loaded.slots[0].q_row);
    }

    #[test]
    fn missing_field_is_a_named_parse_error() {
        let dir = std::env::temp_dir().join("hbtk-model-missing");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.toml");
        std::fs::write(&path, "version = 1\nnum_dof = 2\n").unwrap();
        let err = load_model(&path).unwrap_err();
        match err {
            ModelIoError::Parse { message, .. } => {
                assert!(message.contains("missing field"), "message: {message}")
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_a_validation_error() {
        let dir = std::env::temp_dir().join("hbtk-model-dims");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("dims.toml");
        let text = r#"
version = 1
num_dof = 2
labels = ["a", "b"]
mass = [[1.0, 0.0], [0.0, 1.0]]
damping = [[0.0, 0.0], [0.0, 0.0]]
stiffness = [[1.0, 0.0], [0.0, 1.0]]
f_ext = [1.0]
f_ext0 = [0.0, 0.0]
"#;
        std::fs::write(&path, text).unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(matches!(err, ModelIoError::Validation(_)), "{err:?}");
    }

    #[test]
    fn unknown_builtin_is_none() {
        assert!(builtin_model("3dof-sr").is_some());
        assert!(builtin_model("3dof-nosr").is_some());
        assert!(builtin_model("5dof").is_none());
    }
}
