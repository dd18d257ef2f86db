use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Passes `grad_out` where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.ensure_same_shape(input)?;
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Same as [`relu_backward`] but keyed on the forward output, which is
/// positive exactly where the input was.
pub fn relu_backward_from_output<T: Scalar>(
    grad_out: &Tensor<T>,
    output: &Tensor<T>,
) -> Result<Tensor<T>> {
    relu_backward(grad_out, output)
}

pub fn residual_add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_examples() {
        let x = Tensor::<f32>::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::full(vec![3], 5.0);
        assert_eq!(relu_backward(&g, &x).unwrap().data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn all_negative_kills_everything() {
        let x = Tensor::<f32>::from_fn(vec![2, 3], |i| -1.0 - i as f32);
        assert!(relu(&x).data().iter().all(|&v| v == 0.0));
        let g = Tensor::from_fn(vec![2, 3], |i| i as f32 + 0.5);
        assert!(relu_backward(&g, &x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_add_examples() {
        let a = Tensor::<f32>::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        assert_eq!(residual_add(&a, &b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(residual_add(&a, &Tensor::zeros(vec![2])).unwrap(), a);
        assert!(residual_add(&a, &Tensor::zeros(vec![3])).is_err());
    }
}
