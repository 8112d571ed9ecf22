mod common;

use common::gradcheck;

const POINTS: usize = 20;
const TOLERANCE: f64 = 1e-4;

fn assert_close(check: gradcheck::ComponentCheck) {
    eprintln!(
        "{}: worst relative error {:e}",
        check.component, check.worst_relative_error
    );
    assert_eq!(check.points, POINTS);
    assert!(
        check.worst_relative_error < TOLERANCE,
        "{}: relative error {:e}",
        check.component,
        check.worst_relative_error
    );
}

#[test]
fn encoder_gradients() {
    assert_close(gradcheck::encoder(POINTS));
}

#[test]
fn attention_gradients() {
    assert_close(gradcheck::attention(POINTS));
}

#[test]
fn decoder_block_gradients() {
    assert_close(gradcheck::decoder_block(POINTS));
}

#[test]
fn vocoder_conditioning_gradients() {
    assert_close(gradcheck::vocoder_conditioning(POINTS));
}
