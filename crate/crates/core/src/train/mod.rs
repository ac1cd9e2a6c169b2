//! Losses, metrics, optimization and the toy trainer.

pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod step;
pub mod toy;

pub use gradcheck::{gradcheck, gradcheck_point, gradcheck_with_step, GradcheckPoint, GradcheckReport};
pub use loss::{
    breakdown, breakdown_grad, loss_neg_snr, loss_snr_mse, metric_si_snr, metric_snr, neg_snr_grad, LossBreakdown,
};
pub use optim::{Adam, Plateau, PlateauEvent, TrainSchedule};
pub use step::{item_step, loss_and_prelu_inputs, ItemOutput};
pub use toy::{toy_item, train_toy, write_curve_csv, CurveRow, EvalPoint, ToyConfig, TrainReport};
