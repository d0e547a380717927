//! Parameter counts of the six variants at full and reduced width.

use spikepose::model::{S2E2Model, Variant, PARAM_BUDGET};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("budget [{}, {}]", PARAM_BUDGET.0, PARAM_BUDGET.1);
    for v in Variant::ALL {
        let full = S2E2Model::<f32>::build(&v.config(), 0)?;
        let half = S2E2Model::<f32>::build(&v.config().reduced(2), 0)?;
        let quarter = S2E2Model::<f32>::build(&v.config().reduced(4), 0)?;
        println!(
            "{:<18} {:>8} {:>8} {:>8}",
            v.config().label(),
            full.count_params(),
            half.count_params(),
            quarter.count_params()
        );
    }
    Ok(())
}
