//! Prints both learning-rate schedules at a few epochs.

use spikepose::numcore::{lr_at, LrSchedule};

fn main() {
    let step = LrSchedule::default_step_lr();
    let cosine = LrSchedule::default_cosine();
    println!("epoch  step_lr      cosine");
    for epoch in [0, 1, 9, 10, 25, 50, 75, 99, 100] {
        println!("{epoch:>5}  {:<11.4e}  {:.4e}", lr_at(&step, epoch), lr_at(&cosine, epoch));
    }
}
