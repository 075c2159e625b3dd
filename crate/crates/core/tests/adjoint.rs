// SPDX-License-Identifier: Apache-2.0

use std::time::Instant;

use opdiff_core::adjoint::adjoint_suite;

#[test]
fn adjoint_identities_hold_on_wide_grid() {
    let t = Instant::now();
    let cases = adjoint_suite(-6.0, 6.0, 400).unwrap();
    let secs = t.elapsed().as_secs_f64();
    assert_eq!(cases.len(), 7);
    for c in &cases {
        println!("{:<14} fwd {:+.12e} adj {:+.12e} rel {:.2e}", c.primitive, c.forward, c.adjoint, c.rel_err());
        assert!(c.rel_err() <= 1e-5, "{c:?}");
        assert!(c.forward.abs() > 1e-3, "degenerate pairing for {}", c.primitive);
    }
    assert!(secs < 10.0, "{secs} s");
}
