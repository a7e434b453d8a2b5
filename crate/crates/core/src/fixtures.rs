//! The two reference plants used throughout the tests and the guide.
//!
//! Both use `Σ_w = 0.5 I` and `Σ_v = I`. Example 1 is square (two inputs,
//! two outputs) and right-invertible; Example 2 has three outputs and two
//! inputs, so it cannot be.

use crate::matnum::Matrix;
use crate::model::StateSpaceModel;

/// Four states, two inputs, two outputs; right-invertible.
pub fn example1() -> StateSpaceModel {
    let a = Matrix::from_row_slice(
        4,
        4,
        &[2.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0],
    );
    let b = Matrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 1.0]);
    let c = Matrix::from_row_slice(2, 4, &[0.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    StateSpaceModel::new(a, b, c, Matrix::identity(4, 4) * 0.5, Matrix::identity(2, 2))
        .expect("example 1 is well formed")
}

/// Five states, two inputs, three outputs; not right-invertible.
pub fn example2() -> StateSpaceModel {
    #[rustfmt::skip]
    let a = Matrix::from_row_slice(5, 5, &[
        2.0, -1.0, 0.0, 0.0, 0.0,
        1.0, -3.0, 0.0, 0.0, 0.0,
        0.0, 0.0, -2.0, 0.0, 0.0,
        0.0, 0.0, 0.0, -1.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 3.0,
    ]);
    let b = Matrix::from_row_slice(5, 2, &[2.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
    #[rustfmt::skip]
    let c = Matrix::from_row_slice(3, 5, &[
        1.0, -1.0, 2.0, 0.0, 0.0,
        -1.0, 2.0, 0.0, 3.0, 0.0,
        2.0, 1.0, 0.0, 0.0, 4.0,
    ]);
    StateSpaceModel::new(a, b, c, Matrix::identity(5, 5) * 0.5, Matrix::identity(3, 3))
        .expect("example 2 is well formed")
}

/// Scalar random walk `x_{k+1} = x_k + u_k + w_k`, `y_k = x_k + v_k` with unit
/// noise; its filter covariance is the golden ratio.
pub fn scalar_random_walk() -> StateSpaceModel {
    let one = Matrix::from_element(1, 1, 1.0);
    StateSpaceModel::new(one.clone(), one.clone(), one.clone(), one.clone(), one)
        .expect("scalar model is well formed")
}
