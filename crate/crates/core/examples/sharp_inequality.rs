//! `f(<|u - v|^2>) <= min(kappa_u, kappa_v) * parallelogram` on every builder,
//! with the tight constant `kappa_min / 2` attained by colinear isotropic
//! designs.
//!
//! `cargo run --release --example sharp_inequality`

use nanbu_coupling::inequalities::{build, CoupledSampleSpec, RadialProfile, SampleKind};
use nanbu_coupling::observables::{decomposition, holder_bound, holder_constant, parallelogram, sharp_inequality};

fn main() -> nanbu_coupling::Result<()> {
    let p = RadialProfile::power(2.0);
    let kinds = [
        SampleKind::Independent,
        SampleKind::ColinearIsotropic(p),
        SampleKind::ColinearDesign(p),
        SampleKind::HeavyTail { r: 4.0 },
        SampleKind::RadialPerturbation { r_minus: 1.0, r_plus: 1.2, shell: 8 },
    ];
    println!("{:<40} {:>9} {:>9} {:>9} {:>10}", "state", "f(D)", "kappa", "par", "tight gap");
    for kind in kinds {
        let cs = build(&CoupledSampleSpec::new(kind.clone(), 512, 3, 1))?;
        let s = sharp_inequality(&cs)?;
        println!("{:<40} {:>9.5} {:>9.4} {:>9.5} {:>10.2e}", kind.to_string(), s.lhs, s.kappa_min, s.parallelogram, s.tight_gap());
    }

    let cs = build(&CoupledSampleSpec::new(SampleKind::Independent, 256, 4, 2))?;
    let dec = decomposition(&cs);
    println!(
        "decomposition: 2*{:.4} + {:.4} + 2*{:.4} = {:.6}, direct {:.6}",
        dec.pointwise,
        dec.antisymmetric,
        dec.trace_gap,
        dec.total(),
        parallelogram(&cs).value
    );
    for alpha in [0.5, 1.0, 2.0] {
        let h = holder_bound(&cs, alpha, 2.0)?;
        println!("alpha = {alpha}: k = {:.4}, f(D) = {:.4} <= {:.4}", holder_constant(alpha), h.lhs, h.rhs);
    }
    Ok(())
}
