//! Projective geometry: billboard quads, homographies from 4-point
//! correspondences, bilinear warping of the billboard texture into frames,
//! and the exact adjoint that pulls frame gradients back onto texels.
//!
//! Coordinate convention used throughout: continuous, edge-origin image
//! coordinates. An `H x W` image spans `[0, W] x [0, H]`; pixel `(row r,
//! col c)` has its center at `(c + 0.5, r + 0.5)`. The billboard texture of
//! `Hb x Wb` texels occupies the rectangle `[0, Wb] x [0, Hb]` in texel
//! space, so a frame pixel is covered exactly when its center inverse-maps
//! into `[0, Wb) x [0, Hb)`.

use crate::color::Rgb;
use crate::error::{Error, Result};
use crate::real::{r, Real};
use crate::tensor::Tensor;

/// A 2D point.
pub type Point<R> = [R; 2];

/// Four frame-space corners ordered top-left, top-right, bottom-right,
/// bottom-left. Non-degenerate by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Quad<R: Real> {
    corners: [Point<R>; 4],
}

fn cross<R: Real>(o: Point<R>, a: Point<R>, b: Point<R>) -> R {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

impl<R: Real> Quad<R> {
    /// Validate and build. Rejects non-finite coordinates, non-positive
    /// signed area (y grows downward, so TL-TR-BR-BL must wind positively),
    /// and any three (nearly) collinear corners.
    pub fn new(corners: [Point<R>; 4]) -> Result<Self> {
        for p in &corners {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::Geometry("quad corner is not finite".into()));
            }
        }
        let quad = Quad { corners };
        let extent = quad.extent().max(R::one());
        let tol = r::<R>(1e-9) * extent * extent;
        if quad.area() <= tol {
            return Err(Error::Geometry(format!(
                "quad has non-positive area (corners {:?})",
                quad.to_f64()
            )));
        }
        for i in 0..4 {
            let (a, b, c) = (corners[i], corners[(i + 1) % 4], corners[(i + 2) % 4]);
            if cross(a, b, c).abs() <= tol {
                return Err(Error::Geometry(format!(
                    "three collinear corners in quad {:?}",
                    quad.to_f64()
                )));
            }
        }
        Ok(quad)
    }

    /// The texel-space rectangle covered by an `Hb x Wb` texture.
    pub fn texture_rect(hb: usize, wb: usize) -> Self {
        let (w, h) = (r::<R>(wb as f64), r::<R>(hb as f64));
        let z = R::zero();
        Quad {
            corners: [[z, z], [w, z], [w, h], [z, h]],
        }
    }

    pub fn corners(&self) -> &[Point<R>; 4] {
        &self.corners
    }

    /// Signed shoelace area (positive for valid winding).
    pub fn area(&self) -> R {
        let c = &self.corners;
        let mut s = R::zero();
        for i in 0..4 {
            let j = (i + 1) % 4;
            s += c[i][0] * c[j][1] - c[j][0] * c[i][1];
        }
        s / r::<R>(2.0)
    }

    fn extent(&self) -> R {
        self.corners
            .iter()
            .flat_map(|p| p.iter())
            .map(|v| v.abs())
            .fold(R::zero(), R::max)
    }

    pub fn centroid(&self) -> Point<R> {
        let quarter = r::<R>(0.25);
        let mut cx = R::zero();
        let mut cy = R::zero();
        for p in &self.corners {
            cx += p[0];
            cy += p[1];
        }
        [cx * quarter, cy * quarter]
    }

    /// Convex containment test (boundary counts as inside).
    pub fn contains(&self, x: R, y: R) -> bool {
        let q = [x, y];
        let tol = -r::<R>(1e-12) * self.extent().max(R::one());
        (0..4).all(|i| cross(self.corners[i], self.corners[(i + 1) % 4], q) >= tol)
    }

    /// All corners within the `[0, w] x [0, h]` image rectangle.
    pub fn within_bounds(&self, w: usize, h: usize) -> bool {
        let tol = r::<R>(1e-9);
        let (wf, hf) = (r::<R>(w as f64), r::<R>(h as f64));
        self.corners.iter().all(|p| {
            p[0] >= -tol && p[0] <= wf + tol && p[1] >= -tol && p[1] <= hf + tol
        })
    }

    pub fn to_f64(&self) -> [[f64; 2]; 4] {
        let c = &self.corners;
        [
            [c[0][0].to_f64_lossy(), c[0][1].to_f64_lossy()],
            [c[1][0].to_f64_lossy(), c[1][1].to_f64_lossy()],
            [c[2][0].to_f64_lossy(), c[2][1].to_f64_lossy()],
            [c[3][0].to_f64_lossy(), c[3][1].to_f64_lossy()],
        ]
    }

    pub fn from_f64(corners: [[f64; 2]; 4]) -> Result<Self> {
        let conv = |p: [f64; 2]| [r::<R>(p[0]), r::<R>(p[1])];
        Quad::new([conv(corners[0]), conv(corners[1]), conv(corners[2]), conv(corners[3])])
    }
}

/// 3x3 projective transform normalized so `m[2][2] == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Homography<R: Real> {
    m: [[R; 3]; 3],
}

fn det3<R: Real>(m: &[[R; 3]; 3]) -> R {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Adjugate (transposed cofactor) matrix: `adj(M) * M = det(M) * I`. Used as
/// an unscaled inverse; projective division cancels the determinant.
fn adjugate3<R: Real>(m: &[[R; 3]; 3]) -> [[R; 3]; 3] {
    [
        [
            m[1][1] * m[2][2] - m[1][2] * m[2][1],
            m[0][2] * m[2][1] - m[0][1] * m[2][2],
            m[0][1] * m[1][2] - m[0][2] * m[1][1],
        ],
        [
            m[1][2] * m[2][0] - m[1][0] * m[2][2],
            m[0][0] * m[2][2] - m[0][2] * m[2][0],
            m[0][2] * m[1][0] - m[0][0] * m[1][2],
        ],
        [
            m[1][0] * m[2][1] - m[1][1] * m[2][0],
            m[0][1] * m[2][0] - m[0][0] * m[2][1],
            m[0][0] * m[1][1] - m[0][1] * m[1][0],
        ],
    ]
}

fn mat_mul3<R: Real>(a: &[[R; 3]; 3], b: &[[R; 3]; 3]) -> [[R; 3]; 3] {
    let mut out = [[R::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, row) in b.iter().enumerate() {
                out[i][j] += a[i][k] * row[j];
            }
        }
    }
    out
}

impl<R: Real> Homography<R> {
    /// Normalize `m[2][2]` to one and check invertibility.
    pub fn from_matrix(m: [[R; 3]; 3]) -> Result<Self> {
        let scale = m[2][2];
        if scale.abs() < r::<R>(1e-12) {
            return Err(Error::Geometry(
                "homography cannot be normalized (m[2][2] ~ 0)".into(),
            ));
        }
        let mut n = m;
        for row in &mut n {
            for v in row.iter_mut() {
                *v /= scale;
            }
        }
        let d = det3(&n);
        if d.abs() <= r::<R>(1e-12) {
            return Err(Error::Geometry(format!(
                "homography is singular (det {d})"
            )));
        }
        Ok(Homography { m: n })
    }

    pub fn identity() -> Self {
        let mut m = [[R::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = R::one();
        }
        Homography { m }
    }

    pub fn matrix(&self) -> &[[R; 3]; 3] {
        &self.m
    }

    pub fn det(&self) -> R {
        det3(&self.m)
    }

    /// Apply the projective map to a point.
    pub fn project(&self, x: R, y: R) -> Point<R> {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        [
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        ]
    }

    pub fn to_f64(&self) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in self.m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out[i][j] = v.to_f64_lossy();
            }
        }
        out
    }
}

/// Hartley normalization: translate the centroid to the origin and scale the
/// mean distance to sqrt(2). Returns the transform as a matrix.
fn normalizing_transform<R: Real>(points: &[Point<R>; 4]) -> [[R; 3]; 3] {
    let quarter = r::<R>(0.25);
    let mut cx = R::zero();
    let mut cy = R::zero();
    for p in points {
        cx += p[0];
        cy += p[1];
    }
    cx *= quarter;
    cy *= quarter;
    let mut mean_dist = R::zero();
    for p in points {
        let dx = p[0] - cx;
        let dy = p[1] - cy;
        mean_dist += (dx * dx + dy * dy).sqrt();
    }
    mean_dist *= quarter;
    let s = if mean_dist > R::zero() {
        r::<R>(std::f64::consts::SQRT_2) / mean_dist
    } else {
        R::one()
    };
    [
        [s, R::zero(), -s * cx],
        [R::zero(), s, -s * cy],
        [R::zero(), R::zero(), R::one()],
    ]
}

fn apply3<R: Real>(m: &[[R; 3]; 3], p: Point<R>) -> Point<R> {
    let w = m[2][0] * p[0] + m[2][1] * p[1] + m[2][2];
    [
        (m[0][0] * p[0] + m[0][1] * p[1] + m[0][2]) / w,
        (m[1][0] * p[0] + m[1][1] * p[1] + m[1][2]) / w,
    ]
}

/// Gaussian elimination with partial pivoting on an 8x8 system (augmented
/// column 9). Exactly determined by the 4 corner correspondences.
fn solve8<R: Real>(a: &mut [[R; 9]; 8]) -> Result<[R; 8]> {
    for col in 0..8 {
        let mut pivot = col;
        for row in col + 1..8 {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < r::<R>(1e-12) {
            return Err(Error::Geometry(
                "homography system is singular (degenerate correspondences)".into(),
            ));
        }
        a.swap(col, pivot);
        let diag = a[col][col];
        for j in col..9 {
            a[col][j] /= diag;
        }
        for row in 0..8 {
            if row != col {
                let factor = a[row][col];
                if factor != R::zero() {
                    for j in col..9 {
                        let v = a[col][j];
                        a[row][j] -= factor * v;
                    }
                }
            }
        }
    }
    let mut x = [R::zero(); 8];
    for i in 0..8 {
        x[i] = a[i][8];
    }
    Ok(x)
}

/// Estimate the homography sending the four `src` corners onto the four
/// `dst` corners (direct linear transform on normalized coordinates). The
/// result reprojects every corner to within 1e-6 pixels or fails.
pub fn estimate_homography<R: Real>(src: &Quad<R>, dst: &Quad<R>) -> Result<Homography<R>> {
    let t_src = normalizing_transform(src.corners());
    let t_dst = normalizing_transform(dst.corners());

    let mut system = [[R::zero(); 9]; 8];
    for i in 0..4 {
        let [x, y] = apply3(&t_src, src.corners()[i]);
        let [u, v] = apply3(&t_dst, dst.corners()[i]);
        system[2 * i] = [x, y, R::one(), R::zero(), R::zero(), R::zero(), -u * x, -u * y, u];
        system[2 * i + 1] =
            [R::zero(), R::zero(), R::zero(), x, y, R::one(), -v * x, -v * y, v];
    }
    let h = solve8(&mut system)?;
    let normalized = [
        [h[0], h[1], h[2]],
        [h[3], h[4], h[5]],
        [h[6], h[7], R::one()],
    ];

    // Undo the normalization: H = T_dst^-1 * H_hat * T_src.
    let t_dst_adj = adjugate3(&t_dst);
    let denorm = mat_mul3(&t_dst_adj, &mat_mul3(&normalized, &t_src));
    let homography = Homography::from_matrix(denorm)?;

    let tol = r::<R>(1e-6);
    for i in 0..4 {
        let [sx, sy] = src.corners()[i];
        let p = homography.project(sx, sy);
        let [dx, dy] = dst.corners()[i];
        let err = ((p[0] - dx) * (p[0] - dx) + (p[1] - dy) * (p[1] - dy)).sqrt();
        if err >= tol {
            return Err(Error::Geometry(format!(
                "homography reprojection error {err} at corner {i} exceeds 1e-6 px"
            )));
        }
    }
    Ok(homography)
}

/// Per-channel additive color offset (`observed = printed + adj`), estimated
/// per frame from a unicolor calibration board.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorAdjustment<R: Real> {
    pub offset: Rgb<R>,
}

impl<R: Real> ColorAdjustment<R> {
    pub fn new(offset: Rgb<R>) -> Result<Self> {
        let ok = offset
            .channels()
            .iter()
            .all(|&c| c >= -R::one() && c <= R::one());
        if !ok {
            return Err(Error::Validation(format!(
                "color adjustment {:?} outside [-1,1]",
                offset.to_f64()
            )));
        }
        Ok(ColorAdjustment { offset })
    }

    pub fn zero() -> Self {
        ColorAdjustment {
            offset: Rgb::new(R::zero(), R::zero(), R::zero()),
        }
    }

    pub fn channels(&self) -> [R; 3] {
        self.offset.channels()
    }
}

/// Maps frame pixel centers into texel space and answers coverage and
/// sampling queries. All warp entry points share this.
struct TexelMapper<R: Real> {
    inv: [[R; 3]; 3],
    z_sign: R,
    hb: usize,
    wb: usize,
}

impl<R: Real> TexelMapper<R> {
    fn new(h: &Homography<R>, hb: usize, wb: usize) -> Self {
        let inv = adjugate3(h.matrix());
        // Points on the billboard side of the horizon line have a consistent
        // homogeneous z sign; sample it at the projected texture center.
        let center = h.project(r::<R>(wb as f64 / 2.0), r::<R>(hb as f64 / 2.0));
        let zc = inv[2][0] * center[0] + inv[2][1] * center[1] + inv[2][2];
        let z_sign = if zc < R::zero() { -R::one() } else { R::one() };
        TexelMapper {
            inv,
            z_sign,
            hb,
            wb,
        }
    }

    /// Texel coordinates of a frame point, if it lies on the billboard.
    fn texel_coords(&self, fx: R, fy: R) -> Option<(R, R)> {
        let m = &self.inv;
        let z = (m[2][0] * fx + m[2][1] * fy + m[2][2]) * self.z_sign;
        if z <= r::<R>(1e-12) {
            return None;
        }
        let tx = (m[0][0] * fx + m[0][1] * fy + m[0][2]) * self.z_sign / z;
        let ty = (m[1][0] * fx + m[1][1] * fy + m[1][2]) * self.z_sign / z;
        let inside = tx >= R::zero()
            && tx < r::<R>(self.wb as f64)
            && ty >= R::zero()
            && ty < r::<R>(self.hb as f64);
        inside.then_some((tx, ty))
    }
}

/// One axis of bilinear interpolation over texel centers (`k + 0.5`), edge
/// clamped. Returns ((index, weight), (index, weight)).
fn taps1d<R: Real>(coord: R, n: usize) -> ((usize, R), (usize, R)) {
    let s = coord - r::<R>(0.5);
    let floor = s.floor();
    let frac = s - floor;
    let clamp_idx = |i: isize| -> usize { i.clamp(0, n as isize - 1) as usize };
    let i0 = clamp_idx(floor.to_f64_lossy() as isize);
    let i1 = clamp_idx(floor.to_f64_lossy() as isize + 1);
    ((i0, R::one() - frac), (i1, frac))
}

/// The four (texel, weight) taps used to sample texel coords `(tx, ty)`.
fn bilinear_taps<R: Real>(tx: R, ty: R, hb: usize, wb: usize) -> [(usize, usize, R); 4] {
    let ((x0, wx0), (x1, wx1)) = taps1d(tx, wb);
    let ((y0, wy0), (y1, wy1)) = taps1d(ty, hb);
    [
        (y0, x0, wy0 * wx0),
        (y0, x1, wy0 * wx1),
        (y1, x0, wy1 * wx0),
        (y1, x1, wy1 * wx1),
    ]
}

fn check_texture_shape<R: Real>(t: &Tensor<R>) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Shape(format!("expected [3,H,W] texture, got {s:?}")));
    }
    Ok((s[1], s[2]))
}

/// Replace the billboard area of `frame` with bilinear samples of
/// `texture + adj`, clamped to `[0,1]`. Pixels outside the projected quad are
/// returned untouched, byte for byte.
pub fn warp_into_frame<R: Real>(
    texture: &Tensor<R>,
    h: &Homography<R>,
    frame: &Tensor<R>,
    adj: &ColorAdjustment<R>,
) -> Result<Tensor<R>> {
    let (hb, wb) = check_texture_shape(texture)?;
    let (hf, wf) = check_texture_shape(frame)?;
    let mapper = TexelMapper::new(h, hb, wb);
    let offsets = adj.channels();
    let mut out = frame.clone();
    let half = r::<R>(0.5);
    for row in 0..hf {
        let fy = r::<R>(row as f64) + half;
        for col in 0..wf {
            let fx = r::<R>(col as f64) + half;
            let Some((tx, ty)) = mapper.texel_coords(fx, fy) else {
                continue;
            };
            let taps = bilinear_taps(tx, ty, hb, wb);
            for (c, &offset) in offsets.iter().enumerate() {
                let mut v = R::zero();
                for &(tyi, txi, w) in &taps {
                    v += w * texture.at3(c, tyi, txi);
                }
                v += offset;
                *out.at3_mut(c, row, col) = v.max(R::zero()).min(R::one());
            }
        }
    }
    Ok(out)
}

/// The linear part of the warp: bilinear samples of `texture` inside the
/// projected quad, zero outside, no color adjustment and no clamp. This is
/// the operator whose adjoint [`reverse_project`] implements.
pub fn warp_linearized<R: Real>(
    texture: &Tensor<R>,
    h: &Homography<R>,
    frame_dims: (usize, usize),
) -> Result<Tensor<R>> {
    let (hb, wb) = check_texture_shape(texture)?;
    let (hf, wf) = frame_dims;
    let mapper = TexelMapper::new(h, hb, wb);
    let mut out = Tensor::zeros(vec![3, hf, wf]);
    let half = r::<R>(0.5);
    for row in 0..hf {
        let fy = r::<R>(row as f64) + half;
        for col in 0..wf {
            let fx = r::<R>(col as f64) + half;
            let Some((tx, ty)) = mapper.texel_coords(fx, fy) else {
                continue;
            };
            let taps = bilinear_taps(tx, ty, hb, wb);
            for c in 0..3 {
                let mut v = R::zero();
                for &(tyi, txi, w) in &taps {
                    v += w * texture.at3(c, tyi, txi);
                }
                *out.at3_mut(c, row, col) = v;
            }
        }
    }
    Ok(out)
}

/// Pull a frame-space cogradient back onto billboard texels: every covered
/// frame pixel splats its gradient onto the texels it sampled, with the same
/// bilinear weights the forward warp used. Texels no pixel sampled stay zero.
/// The additive color adjustment has zero derivative, so it does not enter;
/// the parameter is kept for interface symmetry with the forward warp.
pub fn reverse_project<R: Real>(
    frame_grad: &Tensor<R>,
    h: &Homography<R>,
    billboard_dims: (usize, usize),
    _adj: &ColorAdjustment<R>,
) -> Result<Tensor<R>> {
    let (hf, wf) = check_texture_shape(frame_grad)?;
    let (hb, wb) = billboard_dims;
    if hb == 0 || wb == 0 {
        return Err(Error::Shape("billboard dims must be positive".into()));
    }
    let mapper = TexelMapper::new(h, hb, wb);
    let mut out = Tensor::zeros(vec![3, hb, wb]);
    let half = r::<R>(0.5);
    for row in 0..hf {
        let fy = r::<R>(row as f64) + half;
        for col in 0..wf {
            let fx = r::<R>(col as f64) + half;
            let Some((tx, ty)) = mapper.texel_coords(fx, fy) else {
                continue;
            };
            let taps = bilinear_taps(tx, ty, hb, wb);
            for c in 0..3 {
                let g = frame_grad.at3(c, row, col);
                if g == R::zero() {
                    continue;
                }
                for &(tyi, txi, w) in &taps {
                    *out.at3_mut(c, tyi, txi) += w * g;
                }
            }
        }
    }
    Ok(out)
}

/// Boolean per-pixel coverage of the projected billboard in a frame
/// (row-major `hf * wf`).
pub fn coverage_mask<R: Real>(
    h: &Homography<R>,
    frame_dims: (usize, usize),
    billboard_dims: (usize, usize),
) -> Vec<bool> {
    let (hf, wf) = frame_dims;
    let (hb, wb) = billboard_dims;
    let mapper = TexelMapper::new(h, hb, wb);
    let half = r::<R>(0.5);
    let mut mask = vec![false; hf * wf];
    for row in 0..hf {
        let fy = r::<R>(row as f64) + half;
        for col in 0..wf {
            let fx = r::<R>(col as f64) + half;
            mask[row * wf + col] = mapper.texel_coords(fx, fy).is_some();
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::dot;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quad(c: [[f64; 2]; 4]) -> Quad<f64> {
        Quad::from_f64(c).unwrap()
    }

    #[test]
    fn quad_rejects_degenerate_shapes() {
        // Three collinear corners.
        assert!(Quad::<f64>::from_f64([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]]).is_err());
        // Wrong winding (negative area in y-down coordinates).
        assert!(Quad::<f64>::from_f64([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]).is_err());
        // Valid.
        assert!(Quad::<f64>::from_f64([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).is_ok());
    }

    #[test]
    fn identity_homography_from_equal_quads() {
        let q = quad([[1.0, 2.0], [11.0, 2.5], [10.5, 9.0], [0.5, 8.0]]);
        let h = estimate_homography(&q, &q).unwrap();
        let m = h.to_f64();
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-8, "H[{i}][{j}] = {v}");
            }
        }
    }

    #[test]
    fn translation_recovers_exact_matrix() {
        let src = quad([[0.0, 0.0], [4.0, 0.0], [4.0, 3.0], [0.0, 3.0]]);
        let dst = quad([[10.0, 5.0], [14.0, 5.0], [14.0, 8.0], [10.0, 8.0]]);
        let h = estimate_homography(&src, &dst).unwrap();
        let m = h.to_f64();
        let expect = [[1.0, 0.0, 10.0], [0.0, 1.0, 5.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[i][j] - expect[i][j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn random_quads_reproject_corners_to_1e6() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let src = Quad::<f64>::texture_rect(12, 20);
        for _ in 0..50 {
            // Random convex-ish quad from jittered rectangle corners.
            let jitter = |rng: &mut ChaCha8Rng| rng.random::<f64>() * 6.0 - 3.0;
            let dst = Quad::from_f64([
                [10.0 + jitter(&mut rng), 8.0 + jitter(&mut rng)],
                [52.0 + jitter(&mut rng), 9.0 + jitter(&mut rng)],
                [50.0 + jitter(&mut rng), 26.0 + jitter(&mut rng)],
                [11.0 + jitter(&mut rng), 24.0 + jitter(&mut rng)],
            ])
            .unwrap();
            let h = estimate_homography(&src, &dst).unwrap();
            for (s, d) in src.corners().iter().zip(dst.corners()) {
                let p = h.project(s[0], s[1]);
                let err = ((p[0] - d[0]).powi(2) + (p[1] - d[1]).powi(2)).sqrt();
                assert!(err < 1e-6, "reprojection error {err}");
            }
            assert!(h.det().abs() > 1e-12);
        }
    }

    fn smooth_texture(hb: usize, wb: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(vec![3, hb, wb]);
        for c in 0..3 {
            for y in 0..hb {
                for x in 0..wb {
                    let v = 0.5
                        + 0.25 * ((x as f64) * 0.35 + c as f64).sin()
                        + 0.15 * ((y as f64) * 0.4 - c as f64 * 0.5).cos();
                    *t.at3_mut(c, y, x) = v.clamp(0.0, 1.0);
                }
            }
        }
        t
    }

    #[test]
    fn identity_warp_copies_texture() {
        let tex = smooth_texture(6, 8);
        let frame = Tensor::full(vec![3, 6, 8], 0.9);
        let h = Homography::<f64>::identity();
        let out = warp_into_frame(&tex, &h, &frame, &ColorAdjustment::zero()).unwrap();
        assert!(out.max_abs_diff(&tex).unwrap() < 1e-12);
    }

    #[test]
    fn adjustment_shifts_covered_pixels() {
        let tex = Tensor::full(vec![3, 4, 4], 0.5);
        let frame = Tensor::zeros(vec![3, 4, 4]);
        let adj = ColorAdjustment::new(Rgb::new(0.2, 0.2, 0.2)).unwrap();
        let out = warp_into_frame(&tex, &Homography::identity(), &frame, &adj).unwrap();
        assert!(out.data().iter().all(|&v: &f64| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn pixels_outside_quad_are_untouched() {
        let tex = smooth_texture(5, 5);
        let mut frame = Tensor::zeros(vec![3, 20, 30]);
        for (i, v) in frame.data_mut().iter_mut().enumerate() {
            *v = (i % 7) as f64 / 10.0;
        }
        let src = Quad::<f64>::texture_rect(5, 5);
        let dst = quad([[8.0, 4.0], [20.0, 5.0], [19.0, 15.0], [7.5, 14.0]]);
        let h = estimate_homography(&src, &dst).unwrap();
        let out = warp_into_frame(&tex, &h, &frame, &ColorAdjustment::zero()).unwrap();
        let mask = coverage_mask(&h, (20, 30), (5, 5));
        let mut covered = 0;
        for row in 0..20 {
            for col in 0..30 {
                let inside = mask[row * 30 + col];
                for c in 0..3 {
                    if !inside {
                        assert_eq!(out.at3(c, row, col), frame.at3(c, row, col));
                    }
                }
                covered += inside as usize;
            }
        }
        assert!(covered > 50, "quad should cover a meaningful area");
    }

    #[test]
    fn warp_round_trip_recovers_band_limited_texture() {
        let tex = smooth_texture(8, 12);
        let frame = Tensor::zeros(vec![3, 40, 60]);
        let src = Quad::<f64>::texture_rect(8, 12);
        // Magnifying map: each texel covers ~4x4 pixels.
        let dst = quad([[5.0, 3.0], [53.0, 4.0], [52.0, 36.0], [6.0, 35.0]]);
        let h = estimate_homography(&src, &dst).unwrap();
        let warped = warp_into_frame(&tex, &h, &frame, &ColorAdjustment::zero()).unwrap();

        // Sample the warped frame back at each texel center via H.
        let mut max_err = 0.0f64;
        for y in 0..8 {
            for x in 0..12 {
                let p = h.project(x as f64 + 0.5, y as f64 + 0.5);
                // Frame-space bilinear sample at p (centers at k+0.5).
                let sx = p[0] - 0.5;
                let sy = p[1] - 0.5;
                let (x0, y0) = (sx.floor() as isize, sy.floor() as isize);
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                for c in 0..3 {
                    let mut acc = 0.0;
                    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                            let yy = (y0 + dy).clamp(0, 39) as usize;
                            let xx = (x0 + dx).clamp(0, 59) as usize;
                            acc += wy * wx * warped.at3(c, yy, xx);
                        }
                    }
                    max_err = max_err.max((acc - tex.at3(c, y, x)).abs());
                }
            }
        }
        assert!(max_err < 0.05, "round-trip error {max_err}");
    }

    #[test]
    fn reverse_project_zero_and_unit_cases() {
        let h = Homography::<f64>::identity();
        let adj = ColorAdjustment::zero();
        let zero = Tensor::zeros(vec![3, 4, 4]);
        let out = reverse_project(&zero, &h, (4, 4), &adj).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let mut unit = Tensor::zeros(vec![3, 4, 4]);
        *unit.at3_mut(1, 2, 3) = 1.0;
        let out = reverse_project(&unit, &h, (4, 4), &adj).unwrap();
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    let expect = if (c, y, x) == (1, 2, 3) { 1.0 } else { 0.0 };
                    assert_eq!(out.at3(c, y, x), expect);
                }
            }
        }
    }

    #[test]
    fn adjoint_identity_holds_for_random_homographies() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (hb, wb) = (6, 9);
        let src = Quad::<f64>::texture_rect(hb, wb);
        for _ in 0..50 {
            let jitter = |rng: &mut ChaCha8Rng| rng.random::<f64>() * 4.0 - 2.0;
            let dst = Quad::from_f64([
                [6.0 + jitter(&mut rng), 5.0 + jitter(&mut rng)],
                [26.0 + jitter(&mut rng), 6.0 + jitter(&mut rng)],
                [25.0 + jitter(&mut rng), 18.0 + jitter(&mut rng)],
                [5.0 + jitter(&mut rng), 17.0 + jitter(&mut rng)],
            ])
            .unwrap();
            let h = estimate_homography(&src, &dst).unwrap();

            let tex = Tensor::new(
                vec![3, hb, wb],
                (0..3 * hb * wb).map(|_| rng.random::<f64>()).collect(),
            )
            .unwrap();
            let cograd = Tensor::new(
                vec![3, 24, 32],
                (0..3 * 24 * 32).map(|_| rng.random::<f64>() - 0.5).collect(),
            )
            .unwrap();

            let fwd = warp_linearized(&tex, &h, (24, 32)).unwrap();
            let back = reverse_project(&cograd, &h, (hb, wb), &ColorAdjustment::zero()).unwrap();
            let lhs = dot(&fwd, &cograd).unwrap();
            let rhs = dot(&tex, &back).unwrap();
            assert!(
                (lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0),
                "adjoint mismatch: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn one_by_one_billboard_works() {
        let src = Quad::<f64>::texture_rect(1, 1);
        let dst = quad([[2.0, 2.0], [6.0, 2.0], [6.0, 6.0], [2.0, 6.0]]);
        let h = estimate_homography(&src, &dst).unwrap();
        let tex = Tensor::full(vec![3, 1, 1], 0.25);
        let frame = Tensor::full(vec![3, 8, 8], 1.0);
        let out = warp_into_frame(&tex, &h, &frame, &ColorAdjustment::zero()).unwrap();
        // All pixels whose centers lie in [2,6)^2 show the texel value.
        for row in 0..8 {
            for col in 0..8 {
                let (fx, fy) = (col as f64 + 0.5, row as f64 + 0.5);
                let inside = (2.0..6.0).contains(&fx) && (2.0..6.0).contains(&fy);
                let expect = if inside { 0.25 } else { 1.0 };
                assert_eq!(out.at3(0, row, col), expect, "pixel ({row},{col})");
            }
        }
    }

    #[test]
    fn contains_respects_convexity() {
        let q = quad([[1.0, 1.0], [5.0, 1.5], [4.5, 6.0], [0.5, 5.0]]);
        assert!(q.contains(3.0, 3.0));
        assert!(!q.contains(0.0, 0.0));
        assert!(!q.contains(6.0, 6.0));
        // Corner is on the boundary.
        assert!(q.contains(1.0, 1.0));
    }
}
