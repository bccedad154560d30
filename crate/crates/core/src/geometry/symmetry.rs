use nalgebra::{Matrix3, Vector3};

use super::{canonical_cube_corners, Pose, Rotation3, Shape};

/// One of the 24 proper rotations mapping the unit cube onto itself.
///
/// Applying it to a box state `(R, t, d)` gives `(R g, t, d')` with
/// `d'[j] = d[dim_perm[j]]`; both states describe the same physical cuboid,
/// but corner `i` of the new state sits where corner `corner_map[i]` of the
/// old state was.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubeSymmetry {
    pub matrix: Matrix3<f64>,
    pub dim_perm: [usize; 3],
    pub corner_map: [usize; 8],
}

impl CubeSymmetry {
    pub fn rotation(&self) -> Rotation3 {
        Rotation3::from_matrix_unchecked(self.matrix)
    }

    pub fn is_identity(&self) -> bool {
        self.matrix == Matrix3::identity()
    }

    pub fn permute_dims(&self, dims: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            dims[self.dim_perm[0]],
            dims[self.dim_perm[1]],
            dims[self.dim_perm[2]],
        )
    }

    /// The same cuboid re-expressed with this symmetry applied to its body frame.
    pub fn apply(&self, pose: &Pose, shape: &Shape) -> (Pose, Shape) {
        let pose = Pose {
            rotation: pose.rotation * self.rotation(),
            translation: pose.translation,
        };
        let shape = Shape::from_vector(self.permute_dims(shape.dims()))
            .expect("permutation of positive dims is positive");
        (pose, shape)
    }
}

/// The rotation group of the cube: all signed permutation matrices with
/// determinant +1. The identity comes first.
pub fn cube_rotation_group() -> Vec<CubeSymmetry> {
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let corners = canonical_cube_corners().corners;
    let mut group = Vec::with_capacity(24);
    for perm in PERMS {
        for signs in 0..8u32 {
            let mut m = Matrix3::zeros();
            for (col, &row) in perm.iter().enumerate() {
                m[(row, col)] = if (signs >> col) & 1 == 1 { -1.0 } else { 1.0 };
            }
            if m.determinant() < 0.0 {
                continue;
            }
            // Column j of g has its nonzero in row perm[j], so g diag(d') = diag(d) g
            // forces d'[j] = d[perm[j]].
            let corner_map = std::array::from_fn(|i| {
                let image = m * corners[i];
                corners
                    .iter()
                    .position(|c| (c - image).norm() < 1e-12)
                    .expect("cube symmetry permutes corners")
            });
            group.push(CubeSymmetry {
                matrix: m,
                dim_perm: perm,
                corner_map,
            });
        }
    }
    group
}
