//! Rigid-body math shared by the body, scene and reconstruction modules.
//!
//! Twists are 6-vectors `(ρ, φ)`: translation part first, rotation part
//! second. `exp`/`log` are the closed-form SE(3) maps.

use nalgebra::{
    Isometry3, Matrix3, Matrix4, Matrix6, Point3, Rotation3, Translation3, UnitQuaternion,
    Vector3, Vector6,
};

pub type Twist = Vector6<f64>;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation from an axis-angle vector (radians); zero maps to identity.
pub fn rot_from_axis_angle(aa: &[f64; 3]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(Vector3::new(aa[0], aa[1], aa[2]))
}

pub fn axis_angle_of(q: &UnitQuaternion<f64>) -> [f64; 3] {
    let v = q.scaled_axis();
    [v.x, v.y, v.z]
}

/// Rotation by `deg` degrees about +Y.
pub fn yaw(deg: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::y_axis(), deg.to_radians())
}

/// `(1 - cos θ)/θ²` and `(θ - sin θ)/θ³` with series fallbacks near zero.
fn v_coeffs(theta: f64) -> (f64, f64) {
    let t2 = theta * theta;
    if theta < 1e-2 {
        (0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0)
    } else {
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    }
}

pub fn se3_exp(xi: &Twist) -> Isometry3<f64> {
    let rho = Vector3::new(xi[0], xi[1], xi[2]);
    let phi = Vector3::new(xi[3], xi[4], xi[5]);
    let theta = phi.norm();
    let k = skew(&phi);
    let (a, b) = v_coeffs(theta);
    let v = Matrix3::identity() + k * a + k * k * b;
    let rot = UnitQuaternion::from_scaled_axis(phi);
    Isometry3::from_parts(Translation3::from(v * rho), rot)
}

pub fn se3_log(iso: &Isometry3<f64>) -> Twist {
    let phi = iso.rotation.scaled_axis();
    let theta = phi.norm();
    let k = skew(&phi);
    let t2 = theta * theta;
    let c = if theta < 0.1 {
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / t2
    };
    let v_inv = Matrix3::identity() - k * 0.5 + k * k * c;
    let rho = v_inv * iso.translation.vector;
    Vector6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z)
}

/// Adjoint of `T` acting on `(ρ, φ)` twists: `T exp(ξ) T⁻¹ = exp(Ad_T ξ)`.
pub fn adjoint(iso: &Isometry3<f64>) -> Matrix6<f64> {
    let r = iso.rotation.to_rotation_matrix().into_inner();
    let t = iso.translation.vector;
    let mut ad = Matrix6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    ad.fixed_view_mut::<3, 3>(0, 3).copy_from(&(skew(&t) * r));
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    ad
}

/// Least-squares rigid transform mapping `src[i]` onto `dst[i]` (Kabsch).
/// Returns `None` for fewer than three points or a degenerate configuration.
pub fn rigid_fit(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Option<Isometry3<f64>> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - cs) * (d.coords - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    if svd.singular_values[1] < 1e-12 {
        return None;
    }
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v_t.transpose() * d * u.transpose();
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let t = cd - rot * cs;
    Some(Isometry3::from_parts(Translation3::from(t), rot))
}

pub fn iso_to_mat(iso: &Isometry3<f64>) -> Matrix4<f64> {
    iso.to_homogeneous()
}

/// Rotation angle (radians) of `a⁻¹ b`.
pub fn rotation_distance(a: &Isometry3<f64>, b: &Isometry3<f64>) -> f64 {
    (a.rotation.inverse() * b.rotation).angle()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn twist_strategy() -> impl Strategy<Value = Twist> {
        (
            prop::array::uniform3(-2.0f64..2.0),
            prop::array::uniform3(-1.0f64..1.0),
            0.0f64..3.1,
        )
            .prop_map(|(t, axis, angle)| {
                let a = Vector3::new(axis[0], axis[1], axis[2]);
                let a = if a.norm() < 1e-3 { Vector3::x() } else { a.normalize() };
                let phi = a * angle;
                Vector6::new(t[0], t[1], t[2], phi.x, phi.y, phi.z)
            })
    }

    proptest! {
        #[test]
        fn log_inverts_exp(xi in twist_strategy()) {
            let back = se3_log(&se3_exp(&xi));
            prop_assert!((back - xi).norm() < 1e-9, "{xi:?} -> {back:?}");
        }

        #[test]
        fn adjoint_conjugates(xi in twist_strategy(), eta in twist_strategy()) {
            let t = se3_exp(&xi);
            let small = eta * 0.1;
            let lhs = t * se3_exp(&small) * t.inverse();
            let rhs = se3_exp(&(adjoint(&t) * small));
            prop_assert!((lhs.to_homogeneous() - rhs.to_homogeneous()).norm() < 1e-9);
        }
    }

    #[test]
    fn small_angles_use_series() {
        let xi = Vector6::new(0.1, -0.2, 0.3, 1e-9, 0.0, -2e-9);
        assert!((se3_log(&se3_exp(&xi)) - xi).norm() < 1e-12);
    }

    #[test]
    fn kabsch_recovers_transform() {
        let t = se3_exp(&Vector6::new(0.3, -0.1, 0.7, 0.2, -0.4, 0.9));
        let src: Vec<Point3<f64>> = (0..10)
            .map(|i| {
                let f = i as f64;
                Point3::new(f.sin(), (2.0 * f).cos(), f * 0.1)
            })
            .collect();
        let dst: Vec<_> = src.iter().map(|p| t * p).collect();
        let fit = rigid_fit(&src, &dst).unwrap();
        assert!((fit.to_homogeneous() - t.to_homogeneous()).norm() < 1e-9);
    }
}
