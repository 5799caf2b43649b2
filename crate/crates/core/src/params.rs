//! Uniform traversal over named parameter tensors.
//!
//! Parameter structs and their gradient buffers share a type, so visiting
//! both in the same order lines tensors up one-to-one. The traversal order
//! is also the on-disk order of checkpoints.

pub type Shape = (usize, usize);

pub trait Params {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Shape, &'a [f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Shape, &mut [f64]));

    /// `self += alpha · other`, tensor by tensor.
    fn add_scaled(&mut self, other: &Self, alpha: f64)
    where
        Self: Sized,
    {
        zip_apply(self, other, |dst, src| crate::tensor::axpy(alpha, src, dst));
    }

    fn scale(&mut self, alpha: f64) {
        self.visit_mut("", &mut |_, _, data| data.iter_mut().for_each(|v| *v *= alpha));
    }

    fn tensor_names(&self, prefix: &str) -> Vec<(String, Shape)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |name, shape, _| out.push((name.to_string(), shape)));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Applies `f(dst, src)` to aligned tensors of two congruent parameter sets.
pub fn zip_apply<P: Params>(dst: &mut P, src: &P, mut f: impl FnMut(&mut [f64], &[f64])) {
    let mut sources: Vec<&[f64]> = Vec::new();
    src.visit("", &mut |_, _, data| sources.push(data));
    let mut i = 0;
    dst.visit_mut("", &mut |_, _, data| {
        f(data, sources[i]);
        i += 1;
    });
    debug_assert_eq!(i, sources.len());
}
