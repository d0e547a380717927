use nalgebra::{UnitQuaternion, Vector3};

use crate::pose::Pose6D;

use super::TrainError;

/// `||t_pred - t_gt|| + ||(r_pred - r_gt) * 180/pi||`: meters plus degrees.
pub fn loss(pred: &Pose6D, gt: &Pose6D) -> Result<f64, TrainError> {
    if !pred.is_finite() || !gt.is_finite() {
        return Err(TrainError::NonFinite("loss input"));
    }
    let dt = Vector3::from(pred.translation) - Vector3::from(gt.translation);
    let dr = (Vector3::from(pred.rotation) - Vector3::from(gt.rotation)) * (180.0 / std::f64::consts::PI);
    Ok(dt.norm() + dr.norm())
}

pub fn position_error(pred: &Pose6D, gt: &Pose6D) -> f64 {
    (Vector3::from(pred.translation) - Vector3::from(gt.translation)).norm()
}

/// Geodesic angle between the two rotations, in degrees:
/// `2 acos(|q_pred . q_gt|)` with unit quaternions from the rotation vectors.
/// Evaluated as `2 atan2(|v|, |w|)` of the relative quaternion, which is the
/// same angle without acos's loss of precision near zero.
pub fn rotation_error(pred: &Pose6D, gt: &Pose6D) -> f64 {
    if pred.rotation == gt.rotation {
        return 0.0;
    }
    let qp = UnitQuaternion::from_scaled_axis(Vector3::from(pred.rotation));
    let qg = UnitQuaternion::from_scaled_axis(Vector3::from(gt.rotation));
    let rel = qp.inverse() * qg;
    (2.0 * rel.imag().norm().atan2(rel.w.abs())).to_degrees()
}

/// `2 acos(||r_pred - r_gt||)` in degrees, taken literally. Diagnostic only:
/// it reads 180 degrees for identical poses.
pub fn rotation_error_literal(pred: &Pose6D, gt: &Pose6D) -> f64 {
    let d = (Vector3::from(pred.rotation) - Vector3::from(gt.rotation)).norm();
    (2.0 * d.clamp(0.0, 1.0).acos()).to_degrees()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub position_errors: Vec<f64>,
    pub rotation_errors: Vec<f64>,
    pub mean_position_error_m: f64,
    pub mean_rotation_error_deg: f64,
}

impl Metrics {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a Pose6D, &'a Pose6D)>) -> Self {
        let (mut pe, mut re) = (Vec::new(), Vec::new());
        for (p, g) in pairs {
            pe.push(position_error(p, g));
            re.push(rotation_error(p, g));
        }
        Self::from_errors(pe, re)
    }

    pub fn from_errors(position_errors: Vec<f64>, rotation_errors: Vec<f64>) -> Self {
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        Self {
            mean_position_error_m: mean(&position_errors),
            mean_rotation_error_deg: mean(&rotation_errors),
            position_errors,
            rotation_errors,
        }
    }

    pub fn len(&self) -> usize {
        self.position_errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position_errors.is_empty()
    }
}
