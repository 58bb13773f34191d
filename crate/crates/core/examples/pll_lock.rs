//! Residual interferometer phase with and without the phase lock.

use oam_qkd::detection::{pll_phase_process, ReceiverSpec};

fn main() -> oam_qkd::Result<()> {
    let rx = ReceiverSpec::default();
    for feedback in [true, false] {
        let p = rx.pll(feedback);
        let series = pll_phase_process(&p, 600.0, 7)?;
        let at = |t: f64| series.at(t);
        println!(
            "feedback {feedback:<5}  stationary rms {:>8.3}  sampled rms {:>8.3}  phase at 10/100/600 s: {:.2} {:.2} {:.2}",
            p.stationary_rms(),
            series.rms(),
            at(10.0),
            at(100.0),
            at(600.0)
        );
    }
    Ok(())
}
