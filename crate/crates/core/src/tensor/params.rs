/// Whether a parameter receives gradients or is a statistics buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Learnable,
    Buffer,
}

pub type ParamVisitor<'a> = dyn FnMut(&str, ParamKind, &[usize], &[f64]) + 'a;
pub type ParamVisitorMut<'a> = dyn FnMut(&str, ParamKind, &[usize], &mut [f64]) + 'a;

/// Named traversal over every parameter array, in a fixed order.
///
/// Gradient sets reuse the parameter types, so a parameter set and its
/// gradients visit the same names in the same order.
pub trait Parameterized {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_>);
    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>);
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Parameterized for () {
    fn visit(&self, _: &str, _: &mut ParamVisitor<'_>) {}
    fn visit_mut(&mut self, _: &str, _: &mut ParamVisitorMut<'_>) {}
}

impl<P: Parameterized> Parameterized for Option<P> {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_>) {
        if let Some(p) = self {
            p.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        if let Some(p) = self {
            p.visit_mut(prefix, f);
        }
    }
}

impl<P: Parameterized> Parameterized for Vec<P> {
    fn visit(&self, prefix: &str, f: &mut ParamVisitor<'_>) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut ParamVisitorMut<'_>) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

/// Flattened `(name, kind, dims, values)` list.
pub fn collect_params<P: Parameterized + ?Sized>(
    p: &P,
) -> Vec<(String, ParamKind, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    p.visit("", &mut |name, kind, dims, data| {
        out.push((name.to_string(), kind, dims.to_vec(), data.to_vec()))
    });
    out
}
