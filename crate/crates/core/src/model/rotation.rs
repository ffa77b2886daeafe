//! Continuous rotation features.
//!
//! Planar rotations are stored as `(cos θ, sin θ)`. Spatial rotations use the
//! first two columns of the rotation matrix, concatenated column after column
//! (`[r00, r10, r20, r01, r11, r21]`); decoding re-orthonormalizes with
//! Gram–Schmidt, first column first.

use super::ModelError;

pub type Mat3 = [[f64; 3]; 3];

pub fn encode_angle(angle: f64) -> Result<[f64; 2], ModelError> {
    if !angle.is_finite() {
        return Err(ModelError::NonFinite("rotation angle".into()));
    }
    let (s, c) = angle.sin_cos();
    Ok([c, s])
}

/// Angle of a planar feature; the feature need not be exactly unit length.
pub fn decode_angle(feature: &[f64]) -> Result<f64, ModelError> {
    if feature.len() != 2 {
        return Err(ModelError::InvalidRotation(format!(
            "planar feature needs 2 entries, got {}",
            feature.len()
        )));
    }
    if !feature.iter().all(|v| v.is_finite()) {
        return Err(ModelError::NonFinite("rotation feature".into()));
    }
    if feature[0].hypot(feature[1]) < 1e-12 {
        return Err(ModelError::InvalidRotation("zero-norm planar feature".into()));
    }
    Ok(feature[1].atan2(feature[0]))
}

pub fn encode_matrix(m: &Mat3) -> Result<[f64; 6], ModelError> {
    if !m.iter().flatten().all(|v| v.is_finite()) {
        return Err(ModelError::NonFinite("rotation matrix".into()));
    }
    Ok([m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]])
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize3(a: [f64; 3]) -> Option<[f64; 3]> {
    let n = dot3(a, a).sqrt();
    (n > 1e-12).then(|| [a[0] / n, a[1] / n, a[2] / n])
}

/// Rotation matrix from a 6-feature via Gram–Schmidt.
pub fn decode_matrix(feature: &[f64]) -> Result<Mat3, ModelError> {
    if feature.len() != 6 {
        return Err(ModelError::InvalidRotation(format!(
            "spatial feature needs 6 entries, got {}",
            feature.len()
        )));
    }
    if !feature.iter().all(|v| v.is_finite()) {
        return Err(ModelError::NonFinite("rotation feature".into()));
    }
    let degenerate = || ModelError::InvalidRotation("degenerate 6D feature".into());
    let a = normalize3([feature[0], feature[1], feature[2]]).ok_or_else(degenerate)?;
    let raw_b = [feature[3], feature[4], feature[5]];
    let d = dot3(a, raw_b);
    let b = normalize3([raw_b[0] - d * a[0], raw_b[1] - d * a[1], raw_b[2] - d * a[2]])
        .ok_or_else(degenerate)?;
    let c = cross3(a, b);
    Ok([[a[0], b[0], c[0]], [a[1], b[1], c[1]], [a[2], b[2], c[2]]])
}

/// Checks that a stored feature is a valid rotation within `tol`.
pub fn validate_feature(feature: &[f64], tol: f64) -> Result<(), ModelError> {
    match feature.len() {
        2 => {
            decode_angle(feature)?;
            let n = feature[0].hypot(feature[1]);
            if (n - 1.0).abs() > tol {
                return Err(ModelError::InvalidRotation(format!("planar feature norm {n}")));
            }
        }
        6 => {
            decode_matrix(feature)?;
            let a = [feature[0], feature[1], feature[2]];
            let b = [feature[3], feature[4], feature[5]];
            let (na, nb, ab) = (dot3(a, a).sqrt(), dot3(b, b).sqrt(), dot3(a, b));
            if (na - 1.0).abs() > tol || (nb - 1.0).abs() > tol || ab.abs() > tol {
                return Err(ModelError::InvalidRotation(format!(
                    "6D columns not orthonormal (|a|={na}, |b|={nb}, a·b={ab})"
                )));
            }
        }
        n => {
            return Err(ModelError::InvalidRotation(format!("unsupported feature width {n}")));
        }
    }
    Ok(())
}

/// Yaw (rotation about +z) of a spatial rotation, from its first column.
pub fn yaw_of(m: &Mat3) -> Result<f64, ModelError> {
    let (x, y) = (m[0][0], m[1][0]);
    if x.hypot(y) < 1e-12 {
        return Err(ModelError::InvalidRotation("heading undefined for vertical x-axis".into()));
    }
    Ok(y.atan2(x))
}

pub fn mat_from_axis_angle(axis: [f64; 3], angle: f64) -> Mat3 {
    let [x, y, z] = normalize3(axis).unwrap_or([0.0, 0.0, 1.0]);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn planar_examples() {
        assert_eq!(encode_angle(0.0).unwrap(), [1.0, 0.0]);
        let q = encode_angle(FRAC_PI_2).unwrap();
        assert!(q[0].abs() < 1e-15 && (q[1] - 1.0).abs() < 1e-15);
        assert!(encode_angle(f64::NAN).is_err());
        assert!(decode_angle(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn identity_matrix_feature() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(encode_matrix(&id).unwrap(), [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(decode_matrix(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap(), id);
    }

    #[test]
    fn gram_schmidt_repairs_skewed_columns() {
        let m = decode_matrix(&[2.0, 0.0, 0.0, 0.3, 5.0, 0.0]).unwrap();
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[i][j] - id[i][j]).abs() < 1e-12);
            }
        }
        assert!(decode_matrix(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn planar_round_trip(angle in -std::f64::consts::PI + 1e-9..std::f64::consts::PI) {
            let back = decode_angle(&encode_angle(angle).unwrap()).unwrap();
            prop_assert!((back - angle).abs() < 1e-9);
        }

        #[test]
        fn spatial_round_trip(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0, angle in -3.1f64..3.1) {
            let m = mat_from_axis_angle([ax, ay, az], angle);
            let back = decode_matrix(&encode_matrix(&m).unwrap()).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((back[i][j] - m[i][j]).abs() < 1e-9);
                }
            }
        }
    }
}
