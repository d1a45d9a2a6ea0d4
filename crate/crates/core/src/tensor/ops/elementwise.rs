use crate::error::{shape_err, Result};
use crate::tensor::{Float, Tensor};

impl<T: Float> Tensor<T> {
    fn same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ))
        }
    }

    fn map_unary<F, D>(&self, name: &'static str, f: F, df: D) -> Tensor<T>
    where
        F: Fn(T) -> T,
        D: Fn(T, T) -> T + Send + Sync + 'static,
    {
        let out: Vec<T> = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(name, out, self.shape().to_vec(), vec![self.clone()], move |ctx| {
            let x = ctx.parents[0].data();
            let g = ctx
                .grad
                .iter()
                .zip(x)
                .zip(ctx.output)
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(g)]
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.same_shape(other, "add")?;
        let out = self.data().iter().zip(other.data()).map(|(&a, &b)| a + b).collect();
        Ok(Tensor::from_op(
            "add",
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            |ctx| vec![Some(ctx.grad.to_vec()), Some(ctx.grad.to_vec())],
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.same_shape(other, "sub")?;
        let out = self.data().iter().zip(other.data()).map(|(&a, &b)| a - b).collect();
        Ok(Tensor::from_op(
            "sub",
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            |ctx| {
                let neg = ctx.needs[1].then(|| ctx.grad.iter().map(|&g| -g).collect());
                vec![Some(ctx.grad.to_vec()), neg]
            },
        ))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.same_shape(other, "mul")?;
        let out = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        Ok(Tensor::from_op(
            "mul",
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            |ctx| {
                let (a, b) = (ctx.parents[0].data(), ctx.parents[1].data());
                let ga = ctx.needs[0]
                    .then(|| ctx.grad.iter().zip(b).map(|(&g, &b)| g * b).collect());
                let gb = ctx.needs[1]
                    .then(|| ctx.grad.iter().zip(a).map(|(&g, &a)| g * a).collect());
                vec![ga, gb]
            },
        ))
    }

    pub fn neg(&self) -> Tensor<T> {
        self.map_unary("neg", |x| -x, |_, _| -T::one())
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        self.map_unary("scale", move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: T) -> Tensor<T> {
        self.map_unary("add_scalar", move |x| x + s, |_, _| T::one())
    }

    pub fn relu(&self) -> Tensor<T> {
        self.map_unary(
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.map_unary("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.map_unary(
            "sigmoid",
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor<T> {
        let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
        let a = T::lit(0.044715);
        let half = T::lit(0.5);
        let three = T::lit(3.0);
        self.map_unary(
            "gelu",
            move |x| half * x * (T::one() + (c * (x + a * x * x * x)).tanh()),
            move |x, _| {
                let t = (c * (x + a * x * x * x)).tanh();
                half * (T::one() + t)
                    + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
            },
        )
    }

    pub fn abs(&self) -> Tensor<T> {
        self.map_unary("abs", |x| x.abs(), |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn exp(&self) -> Tensor<T> {
        self.map_unary("exp", |x| x.exp(), |_, y| y)
    }

    pub fn square(&self) -> Tensor<T> {
        self.map_unary("square", |x| x * x, |x, _| x + x)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![total], vec![1], vec![self.clone()], move |ctx| {
            vec![Some(vec![ctx.grad[0]; n])]
        })
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&self) -> Tensor<T> {
        let n = T::lit(self.numel() as f64);
        self.sum().scale(T::one() / n)
    }
}
