//! Predictive and interpretability metrics.

mod interpret;
mod predictive;

pub use interpret::{
    comprehensiveness, explanation_timing, faithfulness, faithfulness_with, masked_accuracy, pearson, stability,
    sufficiency, Explainer, GradientReading, InterpretabilityMetrics, Timing, DEFAULT_EPSILON,
};
pub use predictive::{
    class_prf, classification_metrics, curves, pr_curve, roc_curve, trapezoid, ClassCurves, ConfusionCounts,
    CurvePoint, MetricsReport,
};
