mod support;

#[test]
fn every_trainable_gradient_matches_finite_differences() {
    println!("{}", support::check_gradients_tiny().unwrap());
}

#[test]
fn freezing_and_adapter_contracts() {
    println!("{}", support::check_freeze_and_lora().unwrap());
}

#[test]
fn int4_round_trip_bound() {
    println!("{}", support::check_quantization().unwrap());
}
