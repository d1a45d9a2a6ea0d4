use crate::tensor::{Float, Tensor};

impl<T: Float> Tensor<T> {
    /// Softmax over the last axis.
    pub fn softmax(&self) -> Tensor<T> {
        let d = self.dim(-1);
        let mut out = self.to_vec();
        for row in out.chunks_exact_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        Tensor::from_op("softmax", out, self.shape().to_vec(), vec![self.clone()], move |ctx| {
            let mut g = vec![T::zero(); ctx.grad.len()];
            for ((gr, y), o) in ctx
                .grad
                .chunks_exact(d)
                .zip(ctx.output.chunks_exact(d))
                .zip(g.chunks_exact_mut(d))
            {
                let dot: T = gr.iter().zip(y).map(|(&a, &b)| a * b).sum();
                for ((o, &gv), &yv) in o.iter_mut().zip(gr).zip(y) {
                    *o = yv * (gv - dot);
                }
            }
            vec![Some(g)]
        })
    }
}
