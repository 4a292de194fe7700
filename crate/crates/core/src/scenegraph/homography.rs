//! Image-to-ground-plane projection.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MIN_DET: f64 = 1e-9;
const MIN_W: f64 = 1e-12;

/// 3×3 projective map with `h[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Builds from nine row-major entries, rescaling so the last is 1.
    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::Geometry(format!(
                "homography needs 9 entries, got {}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Geometry("homography has non-finite entries".into()));
        }
        let s = v[8];
        if s.abs() < MIN_W {
            return Err(Error::Geometry(
                "bottom-right entry is zero; cannot normalize".into(),
            ));
        }
        let mut m = [[0.0; 3]; 3];
        for (i, x) in v.iter().enumerate() {
            m[i / 3][i % 3] = x / s;
        }
        let h = Self { m };
        let det = h.matrix().determinant();
        if det.abs() <= MIN_DET {
            return Err(Error::Geometry(format!("homography is singular (det {det:e})")));
        }
        Ok(h)
    }

    fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        let v: Vec<f64> = (0..9).map(|i| m[(i / 3, i % 3)]).collect();
        Self::from_row_major(&v)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.m[i][j])
    }

    pub fn row_major(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.m[i / 3][i % 3];
        }
        out
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .matrix()
            .try_inverse()
            .ok_or_else(|| Error::Geometry("homography is not invertible".into()))?;
        Self::from_matrix(&inv)
    }

    /// Maps an image point `(u, v)` to ground-plane feet.
    pub fn project(&self, u: f64, v: f64) -> Result<(f64, f64)> {
        let m = &self.m;
        let w = m[2][0] * u + m[2][1] * v + m[2][2];
        if w.abs() < MIN_W || !w.is_finite() {
            return Err(Error::Geometry(format!("({u}, {v}) projects to infinity")));
        }
        Ok((
            (m[0][0] * u + m[0][1] * v + m[0][2]) / w,
            (m[1][0] * u + m[1][1] * v + m[1][2]) / w,
        ))
    }
}

impl TryFrom<Vec<f64>> for Homography {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_row_major(&v)
    }
}

impl From<Homography> for Vec<f64> {
    fn from(h: Homography) -> Self {
        h.row_major().to_vec()
    }
}

pub fn project_to_birdseye(h: &Homography, pixel: (f64, f64)) -> Result<(f64, f64)> {
    h.project(pixel.0, pixel.1)
}

/// Similarity moving the centroid to the origin with mean distance √2.
fn normalizer(pts: &[(f64, f64)]) -> Result<Matrix3<f64>> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mean = pts.iter().map(|p| (p.0 - cx).hypot(p.1 - cy)).sum::<f64>() / n;
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(Error::Geometry("points are coincident or non-finite".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn apply(t: &Matrix3<f64>, p: (f64, f64)) -> (f64, f64) {
    let r = t * Vector3::new(p.0, p.1, 1.0);
    (r.x / r.z, r.y / r.z)
}

fn check_no_collinear_triple(pts: &[(f64, f64)], what: &str) -> Result<()> {
    // Runs on normalized points, so one absolute tolerance fits all scales.
    let n = pts.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (a, b, c) = (pts[i], pts[j], pts[k]);
                let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
                if cross.abs() < 1e-9 {
                    return Err(Error::Geometry(format!(
                        "{what} points {i}, {j}, {k} are collinear"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Least-squares direct linear transform with Hartley normalization.
///
/// `pairs` maps image points to ground-plane points.
pub fn estimate_homography(pairs: &[((f64, f64), (f64, f64))]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::Geometry(format!(
            "need at least 4 correspondences, got {}",
            pairs.len()
        )));
    }
    let src: Vec<(f64, f64)> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<(f64, f64)> = pairs.iter().map(|p| p.1).collect();
    let ts = normalizer(&src)?;
    let td = normalizer(&dst)?;
    let ns: Vec<_> = src.iter().map(|&p| apply(&ts, p)).collect();
    let nd: Vec<_> = dst.iter().map(|&p| apply(&td, p)).collect();
    check_no_collinear_triple(&ns, "source")?;
    check_no_collinear_triple(&nd, "destination")?;

    // Pad to at least 9 rows so the SVD yields the full right null space.
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (&(x, y), &(u, v))) in ns.iter().zip(&nd).enumerate() {
        let r = 2 * i;
        let row0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let row1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(r, c)] = row0[c];
            a[(r + 1, c)] = row1[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Geometry("SVD did not converge".into()))?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nine singular values");
    let hn = Matrix3::from_fn(|i, j| v_t[(k, 3 * i + j)]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::Geometry("degenerate destination points".into()))?;
    Homography::from_matrix(&(td_inv * hn * ts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn close(a: &Homography, b: &Homography, tol: f64) -> bool {
        a.row_major()
            .iter()
            .zip(b.row_major())
            .all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn unit_square_gives_identity() {
        let sq = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let pairs: Vec<_> = sq.iter().map(|&p| (p, p)).collect();
        let h = estimate_homography(&pairs).unwrap();
        assert!(close(&h, &Homography::identity(), 1e-12), "{h:?}");
    }

    #[test]
    fn translation_pairs_give_translation() {
        let pts = [(0.0, 0.0), (4.0, 0.0), (4.0, 3.0), (0.0, 3.0), (1.0, 2.0)];
        let pairs: Vec<_> = pts.iter().map(|&(x, y)| ((x, y), (x + 5.0, y - 2.0))).collect();
        let h = estimate_homography(&pairs).unwrap();
        let want = Homography::from_row_major(&[1.0, 0.0, 5.0, 0.0, 1.0, -2.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(close(&h, &want, 1e-10), "{h:?}");
    }

    #[test]
    fn identity_and_scale_projection() {
        assert_eq!(Homography::identity().project(3.5, -2.0).unwrap(), (3.5, -2.0));
        let s = Homography::from_row_major(&[2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(project_to_birdseye(&s, (1.0, 1.0)).unwrap(), (2.0, 2.0));
    }

    #[test]
    fn random_homography_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut v: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            v[0] += 3.0;
            v[4] += 3.0;
            v[6] *= 1e-3;
            v[7] *= 1e-3;
            v[8] = 1.0;
            let truth = Homography::from_row_major(&v).unwrap();
            let src = [(10.0, 20.0), (600.0, 30.0), (620.0, 400.0), (15.0, 380.0)];
            let pairs: Vec<_> = src.iter().map(|&p| (p, truth.project(p.0, p.1).unwrap())).collect();
            let h = estimate_homography(&pairs).unwrap();
            assert!(close(&h, &truth, 1e-6), "{h:?} vs {truth:?}");
            for &(s, d) in &pairs {
                let p = h.project(s.0, s.1).unwrap();
                assert!((p.0 - d.0).abs() < 1e-6 && (p.1 - d.1).abs() < 1e-6);
            }
            let inv = h.inverse().unwrap();
            for &(u, v) in &src {
                let (x, y) = h.project(u, v).unwrap();
                let (bu, bv) = inv.project(x, y).unwrap();
                assert!((bu - u).abs() < 1e-9 * u.abs().max(1.0) && (bv - v).abs() < 1e-9 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn degenerate_inputs_are_geometry_errors() {
        let line: Vec<_> = (0..5).map(|i| ((i as f64, 2.0 * i as f64), (i as f64, i as f64))).collect();
        assert!(matches!(estimate_homography(&line), Err(Error::Geometry(_))));
        let three = [((0.0, 0.0), (0.0, 0.0)); 3];
        assert!(matches!(estimate_homography(&three), Err(Error::Geometry(_))));
        let mut pairs: Vec<_> = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
            .iter()
            .map(|&p| (p, p))
            .collect();
        pairs[2].0 = (2.0, 0.0);
        assert!(estimate_homography(&pairs).is_err());
        let h = Homography::from_row_major(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(h.project(-1.0, 5.0), Err(Error::Geometry(_))));
        assert!(Homography::from_row_major(&[1.0; 9]).is_err());
        assert!(Homography::from_row_major(&[1.0; 8]).is_err());
    }
}
