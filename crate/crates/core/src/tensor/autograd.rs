use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};

use super::{BackwardCtx, Float, Tensor};
use crate::error::{Error, Result};

impl<T: Float> Tensor<T> {
    /// Back-propagates from a scalar loss, accumulating into the `grad` of
    /// every tracked leaf reachable from it.
    ///
    /// Calling this twice without [`Tensor::zero_grad`] on the leaves adds
    /// the second set of gradients to the first.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.key(), vec![T::one()]);

        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.key()) else {
                continue;
            };
            let Some(f) = node.grad_fn() else {
                node.accumulate_grad(grad);
                continue;
            };
            let needs: Vec<bool> = f.parents.iter().map(Tensor::requires_grad).collect();
            let ctx = BackwardCtx {
                grad: &grad,
                output: node.data(),
                parents: &f.parents,
                needs: &needs,
            };
            let parent_grads = (f.backward)(&ctx);
            debug_assert_eq!(parent_grads.len(), f.parents.len(), "{}", f.name);
            for ((parent, need), pg) in f.parents.iter().zip(&needs).zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.len(), parent.numel(), "{} grad length", f.name);
                match pending.entry(parent.key()) {
                    Entry::Occupied(mut e) => {
                        for (a, b) in e.get_mut().iter_mut().zip(&pg) {
                            *a += *b;
                        }
                    }
                    Entry::Vacant(e) => {
                        e.insert(pg);
                    }
                }
            }
        }
        Ok(())
    }

    /// Tracked nodes reachable from `self`, each listed after all of its
    /// parents.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut visited = HashSet::new();
        let mut order = Vec::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(f) = t.grad_fn() {
                for p in f.parents.iter().rev() {
                    if p.requires_grad() && !visited.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient() {
        let x = Tensor::<f64>::new(vec![3.0], &[1]).unwrap().requires_grad_();
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::<f64>::new(vec![1.0, 2.0], &[2]).unwrap().requires_grad_();
        let loss = x.mul(&x).unwrap().sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::<f32>::ones(&[2]).requires_grad_();
        assert!(matches!(x.backward(), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shared_subexpression_sums_paths() {
        // y = x*x + x*x -> dy/dx = 4x
        let x = Tensor::<f64>::new(vec![1.5], &[1]).unwrap().requires_grad_();
        let sq = x.mul(&x).unwrap();
        let y = sq.add(&sq).unwrap().sum();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn deep_chain_drops_without_overflow() {
        let x = Tensor::<f32>::ones(&[4]).requires_grad_();
        let mut y = x.clone();
        for _ in 0..200_000 {
            y = y.scale(1.0);
        }
        let loss = y.sum();
        drop(y);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }
}
