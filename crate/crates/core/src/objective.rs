use std::sync::Arc;

/// Scalar cost of a domain point. Used both as the black-box oracle an agent
/// queries and as the known model of the model-based baseline.
pub trait Objective: Send + Sync {
    fn evaluate(&self, x: &[f64]) -> f64;
}

impl<F> Objective for F
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn evaluate(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

pub type SharedObjective = Arc<dyn Objective>;
