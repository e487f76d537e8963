//! Linear morphable face model.
//!
//! A face is `mean + B_id * alpha + B_exp * beta`, a flat `3N` vector of
//! interleaved `(x, y, z)` vertex coordinates. Only vertex positions are
//! modeled; there is no texture, illumination, or topology.

use candle_core::Tensor;

use crate::error::{ensure, invalid, Result};
use crate::tensor::{self, Rng};

/// Number of pose coefficients: three Euler angles then three translations.
pub const POSE_DIM: usize = 6;

#[derive(Debug, Clone)]
pub struct FaceBasis {
    /// `(3N,)`
    pub mean_shape: Tensor,
    /// `(3N, D_alpha)`
    pub basis_id: Tensor,
    /// `(3N, D_beta)`
    pub basis_exp: Tensor,
    /// Strictly increasing vertex indices of the mouth region.
    pub mouth_indices: Vec<usize>,
}

impl FaceBasis {
    pub fn new(
        mean_shape: Tensor,
        basis_id: Tensor,
        basis_exp: Tensor,
        mouth_indices: Vec<usize>,
    ) -> Result<Self> {
        let rows = mean_shape.dims1()?;
        ensure!(rows % 3 == 0 && rows > 0, "mean shape length {rows} is not 3N");
        let (id_rows, _) = basis_id.dims2()?;
        let (exp_rows, _) = basis_exp.dims2()?;
        ensure!(
            id_rows == rows && exp_rows == rows,
            "basis rows ({id_rows}, {exp_rows}) disagree with mean shape length {rows}"
        );
        let n = rows / 3;
        ensure!(!mouth_indices.is_empty(), "mouth indices must be non-empty");
        ensure!(
            mouth_indices.windows(2).all(|w| w[0] < w[1]),
            "mouth indices must be strictly increasing"
        );
        ensure!(
            mouth_indices.iter().all(|&i| i < n),
            "mouth index out of range for {n} vertices"
        );
        Ok(Self { mean_shape, basis_id, basis_exp, mouth_indices })
    }

    pub fn num_vertices(&self) -> usize {
        self.mean_shape.dims()[0] / 3
    }

    pub fn id_dim(&self) -> usize {
        self.basis_id.dims()[1]
    }

    pub fn exp_dim(&self) -> usize {
        self.basis_exp.dims()[1]
    }

    /// Flat coordinate rows `3i, 3i+1, 3i+2` of every mouth vertex.
    pub fn mouth_rows(&self) -> Vec<u32> {
        self.mouth_indices
            .iter()
            .flat_map(|&v| (0..3).map(move |a| (3 * v + a) as u32))
            .collect()
    }

    /// Length of a mouth-motion vector, `3 * |mouth|`.
    pub fn mouth_len(&self) -> usize {
        3 * self.mouth_indices.len()
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    /// `(N, 3)`
    pub vertices: Tensor,
}

/// Rotation as `(x, y, z)` Euler angles in radians and translation in mesh units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseCoeffs {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl PoseCoeffs {
    pub fn from_slice(p: &[f64]) -> Result<Self> {
        ensure!(p.len() == POSE_DIM, "pose needs {POSE_DIM} values, got {}", p.len());
        Ok(Self {
            rotation: [p[0], p[1], p[2]],
            translation: [p[3], p[4], p[5]],
        })
    }

    pub fn to_array(&self) -> [f64; POSE_DIM] {
        let [a, b, c] = self.rotation;
        let [d, e, f] = self.translation;
        [a, b, c, d, e, f]
    }

    /// `Rz(rz) * Ry(ry) * Rx(rx)`, row-major.
    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        let [rx, ry, rz] = self.rotation;
        let (sx, cx) = rx.sin_cos();
        let (sy, cy) = ry.sin_cos();
        let (sz, cz) = rz.sin_cos();
        [
            [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
            [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
            [-sy, cy * sx, cy * cx],
        ]
    }
}

/// `mean + B_id * alpha + B_exp * beta`, reshaped to `(N, 3)`.
/// `alpha` and `beta` are 1-D coefficient tensors.
pub fn reconstruct_mesh(basis: &FaceBasis, alpha: &Tensor, beta: &Tensor) -> Result<Mesh> {
    let flat = reconstruct_flat(basis, alpha, beta)?;
    Ok(Mesh { vertices: flat.reshape((basis.num_vertices(), 3))? })
}

fn reconstruct_flat(basis: &FaceBasis, alpha: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let da = alpha.dims1()?;
    let db = beta.dims1()?;
    ensure!(da == basis.id_dim(), "identity coefficients: expected {}, got {da}", basis.id_dim());
    ensure!(db == basis.exp_dim(), "expression coefficients: expected {}, got {db}", basis.exp_dim());
    let id = basis.basis_id.matmul(&alpha.unsqueeze(1)?)?.squeeze(1)?;
    let exp = basis.basis_exp.matmul(&beta.unsqueeze(1)?)?.squeeze(1)?;
    Ok(((&basis.mean_shape + id)? + exp)?)
}

/// Rotates every vertex by `R(r)` then translates by `t`.
pub fn apply_pose(mesh: &Mesh, pose: &PoseCoeffs) -> Result<Mesh> {
    ensure!(
        pose.rotation.iter().chain(&pose.translation).all(|v| v.is_finite()),
        "pose coefficients must be finite"
    );
    let r = pose.rotation_matrix();
    // v' = v R^T + t for row vectors.
    let rt: Vec<f64> = (0..3).flat_map(|i| (0..3).map(move |j| r[j][i])).collect();
    let rt = tensor::from_vec(rt, (3, 3))?;
    let t = tensor::from_vec(pose.translation.to_vec(), (1, 3))?;
    Ok(Mesh { vertices: mesh.vertices.matmul(&rt)?.broadcast_add(&t)? })
}

/// Concatenated `(x, y, z)` of the mouth vertices, in index order.
pub fn select_mouth_motion(mesh: &Mesh, basis: &FaceBasis) -> Result<Tensor> {
    let (n, _) = mesh.vertices.dims2()?;
    if let Some(&bad) = basis.mouth_indices.iter().find(|&&i| i >= n) {
        return Err(invalid!("mouth index {bad} out of range for {n} vertices"));
    }
    let idx: Vec<u32> = basis.mouth_indices.iter().map(|&i| i as u32).collect();
    let idx = Tensor::new(idx.as_slice(), &tensor::DEVICE)?;
    Ok(mesh.vertices.index_select(&idx, 0)?.flatten_all()?)
}

/// Mouth motion for a whole expression sequence at once.
///
/// `betas: (F, D_beta)` gives `(F, 3|mouth|)`; row `i` equals
/// `select_mouth_motion(reconstruct_mesh(basis, alpha, betas[i]))`.
/// Only the mouth rows of the bases are touched, and the result stays on the
/// autodiff tape with respect to `betas`.
pub fn mouth_motion_sequence(basis: &FaceBasis, alpha: &Tensor, betas: &Tensor) -> Result<Tensor> {
    let (_, db) = betas.dims2()?;
    ensure!(db == basis.exp_dim(), "expression coefficients: expected {}, got {db}", basis.exp_dim());
    let rows = Tensor::new(basis.mouth_rows().as_slice(), &tensor::DEVICE)?;
    let exp_m = basis.basis_exp.index_select(&rows, 0)?;
    let neutral = reconstruct_flat(basis, alpha, &tensor::zeros(db)?)?.index_select(&rows, 0)?;
    Ok(betas.matmul(&exp_m.t()?)?.broadcast_add(&neutral)?)
}

/// Mouth displacement from the identity's neutral face: `(F, 3|mouth|)`.
/// The identity term cancels, so this depends on `betas` only.
pub fn mouth_displacement_sequence(basis: &FaceBasis, betas: &Tensor) -> Result<Tensor> {
    let (_, db) = betas.dims2()?;
    ensure!(db == basis.exp_dim(), "expression coefficients: expected {}, got {db}", basis.exp_dim());
    let rows = Tensor::new(basis.mouth_rows().as_slice(), &tensor::DEVICE)?;
    let exp_m = basis.basis_exp.index_select(&rows, 0)?;
    Ok(betas.matmul(&exp_m.t()?)?)
}

/// Deterministic stand-in for a real morphable model.
///
/// The mean shape is a golden-spiral hemisphere of unit radius; basis entries
/// are i.i.d. `N(0, 1) / sqrt(3N)`. The mouth is the last
/// `ceil(mouth_fraction * N)` vertices.
pub fn make_synthetic_basis(
    n: usize,
    d_alpha: usize,
    d_beta: usize,
    mouth_fraction: f64,
    seed: u64,
) -> Result<FaceBasis> {
    ensure!(n >= 4, "need at least 4 vertices, got {n}");
    ensure!(d_alpha >= 1 && d_beta >= 1, "coefficient dimensions must be >= 1");
    ensure!(
        mouth_fraction > 0.0 && mouth_fraction <= 1.0,
        "mouth fraction {mouth_fraction} outside (0, 1]"
    );
    let mut rng: Rng = tensor::rng(seed);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut mean = Vec::with_capacity(3 * n);
    for i in 0..n {
        let z = 1.0 - (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let theta = golden * i as f64;
        mean.extend_from_slice(&[r * theta.cos(), r * theta.sin(), z]);
    }
    let scale = 1.0 / ((3 * n) as f64).sqrt();
    let basis_id = (tensor::randn((3 * n, d_alpha), &mut rng)? * scale)?;
    let basis_exp = (tensor::randn((3 * n, d_beta), &mut rng)? * scale)?;
    let mouth = ((mouth_fraction * n as f64).ceil() as usize).clamp(1, n);
    FaceBasis::new(tensor::from_vec(mean, 3 * n)?, basis_id, basis_exp, (n - mouth..n).collect())
}
