//! Differentiable operations on [`Tensor`](super::Tensor).

pub mod conv;
mod elementwise;
mod matmul;
mod norm;
mod pool;
mod sample;
mod shape;
mod softmax;
