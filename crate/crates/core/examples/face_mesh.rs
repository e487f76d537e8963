//! Build a morphable face, deform it with expression and pose, and read back
//! the mouth region that the sync scorer consumes.

use facediff::face3d::{self, PoseCoeffs};
use facediff::tensor::{from_vec, to_vec, zeros};

fn main() -> facediff::Result<()> {
    let basis = face3d::make_synthetic_basis(64, 8, 6, 0.2, 7)?;
    println!(
        "basis: {} vertices, identity dim {}, expression dim {}, {} mouth vertices",
        basis.num_vertices(),
        basis.id_dim(),
        basis.exp_dim(),
        basis.mouth_indices.len()
    );

    let alpha = zeros(8)?;
    let neutral = face3d::reconstruct_mesh(&basis, &alpha, &zeros(6)?)?;
    let smiling = face3d::reconstruct_mesh(&basis, &alpha, &from_vec(vec![2.0, -1.0, 0.0, 0.5, 0.0, 0.0], 6)?)?;
    let shift: f64 = to_vec(&(&smiling.vertices - &neutral.vertices)?)?.iter().map(|d| d * d).sum::<f64>().sqrt();
    println!("expression moved the mesh by {shift:.4} (frobenius)");

    let pose = PoseCoeffs::from_slice(&[0.0, 0.3, 0.0, 0.1, 0.0, 0.0])?;
    let turned = face3d::apply_pose(&smiling, &pose)?;
    let first = turned.vertices.get(0)?.to_vec1::<f64>()?;
    println!("first vertex after a 0.3 rad yaw and x shift: {first:.3?}");

    let mouth = face3d::select_mouth_motion(&smiling, &basis)?;
    println!("mouth vector length {}", mouth.dims()[0]);

    let betas = from_vec((0..5 * 6).map(|i| (i as f64 * 0.3).sin()).collect(), (5, 6))?;
    let disp = face3d::mouth_displacement_sequence(&basis, &betas)?;
    println!("mouth displacement sequence shape {:?}", disp.dims());
    Ok(())
}
